#include "gmr/propensity.hpp"

#include <cmath>

namespace gmr {

namespace {

bool on_active_path(const Trajectory& traj, int k, int active) {
  for (int r = 1; r < k; ++r)
    if (traj.a(r) != active) return false;
  return true;
}

// Baseline-category multinomial logit via Newton on the multinomial
// log-likelihood; coefficients stacked column-wise per non-baseline code.
Mat fit_multinomial(const Mat& X, const std::vector<int>& yidx, int C,
                    const GlmOptions& opts, GlmFit& info) {
  const Eigen::Index n = X.rows(), p = X.cols();
  const int m = C - 1;
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p * m);
  double ridge = opts.ridge;
  for (int attempt = 0; attempt < 2; ++attempt) {
    beta.setZero();
    bool singular = false;
    for (int it = 0; it < opts.max_iter; ++it) {
      info.iterations = it + 1;
      Eigen::VectorXd score = Eigen::VectorXd::Zero(p * m);
      Mat H = Mat::Zero(p * m, p * m);
      for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::VectorXd eta(m);
        for (int c = 0; c < m; ++c) eta[c] = X.row(i).dot(beta.segment(c * p, p));
        double mx = std::max(0.0, eta.maxCoeff());
        Eigen::VectorXd ex = (eta.array() - mx).exp();
        double denom = std::exp(-mx) + ex.sum();
        Eigen::VectorXd prob = ex / denom;
        for (int c = 0; c < m; ++c) {
          double resid = (yidx[static_cast<std::size_t>(i)] == c + 1 ? 1.0 : 0.0) - prob[c];
          score.segment(c * p, p) += resid * X.row(i).transpose();
          for (int d = 0; d < m; ++d) {
            double wcd = prob[c] * ((c == d ? 1.0 : 0.0) - prob[d]);
            H.block(c * p, d * p, p, p) += wcd * (X.row(i).transpose() * X.row(i));
          }
        }
      }
      score /= static_cast<double>(n);
      H /= static_cast<double>(n);
      score -= ridge * beta;
      H.diagonal().array() += ridge;
      info.final_score_norm = score.lpNorm<Eigen::Infinity>();
      if (info.final_score_norm <= opts.tol) {
        info.converged = true;
        break;
      }
      Eigen::FullPivLU<Mat> lu(H);
      if (!lu.isInvertible()) {
        singular = true;
        break;
      }
      beta += lu.solve(score);
      if (beta.lpNorm<Eigen::Infinity>() > opts.separation_norm) {
        info.separation_suspected = true;
        break;
      }
    }
    if (!singular || ridge > 0.0) break;
    ridge = 1e-8;
    info.ridge_fallback_used = true;
  }
  Mat out(p, m);
  for (int c = 0; c < m; ++c) out.col(c) = beta.segment(c * p, p);
  return out;
}

}  // namespace

bool PropensityFit::all_converged() const {
  for (const auto& f : fit_info)
    if (!f.converged) return false;
  return true;
}

double PropensityFit::h_hat(int k, int a_code, const Trajectory& traj) const {
  const auto& space = codes[static_cast<std::size_t>(k) - 1];
  if (monotone && !on_active_path(traj, k, monotone_active_code))
    return a_code == monotone_active_code ? 0.0 : 1.0;
  EVec x = r[static_cast<std::size_t>(k) - 1](traj);
  const Mat& b = coef[static_cast<std::size_t>(k) - 1];
  if (space.size() == 2) {
    double p1 = link_mean(Link::logit, x.dot(b.col(0)));
    return a_code == space[1] ? p1 : 1.0 - p1;
  }
  int idx = -1;
  for (std::size_t c = 0; c < space.size(); ++c)
    if (space[c] == a_code) idx = static_cast<int>(c);
  require(idx >= 0, "h_hat: unknown treatment code");
  Eigen::VectorXd eta(b.cols());
  for (int c = 0; c < b.cols(); ++c) eta[c] = x.dot(b.col(c));
  double mx = std::max(0.0, eta.maxCoeff());
  Eigen::VectorXd ex = (eta.array() - mx).exp();
  double denom = std::exp(-mx) + ex.sum();
  return idx == 0 ? std::exp(-mx) / denom : ex[idx - 1] / denom;
}

double PropensityFit::pi_hat(const Trajectory& traj, int j, int k, bool truncated) const {
  require(j >= 1 && k <= K && k >= j - 1, "pi_hat range violation");
  double p = 1.0;
  for (int r = j; r <= k; ++r) p *= h_hat(r, traj.a(r), traj);
  return truncated ? std::max(p, eps) : p;
}

double PropensityFit::pi_hat_factor_floored(const Trajectory& traj, int j, int k) const {
  require(j >= 1 && k <= K && k >= j - 1, "pi_hat range violation");
  double p = 1.0;
  for (int r = j; r <= k; ++r) p *= std::max(h_hat(r, traj.a(r), traj), eps);
  return p;
}

PropensityFit fit_propensities(const Dataset& ds, const ProblemSpec& spec,
                               const PropensityModel& model) {
  ds.validate(spec);
  require(static_cast<int>(model.r.size()) == spec.K,
          "propensity model must declare K covariate maps");
  PropensityFit out;
  out.K = spec.K;
  out.monotone = model.monotone;
  out.monotone_active_code = model.monotone_active_code;
  out.r = model.r;
  out.codes = spec.treatment_spaces;

  const int n = ds.n();
  for (int k = 1; k <= spec.K; ++k) {
    std::vector<int> use;
    for (int i = 0; i < n; ++i) {
      if (!model.monotone ||
          on_active_path(ds.rows[static_cast<std::size_t>(i)], k, model.monotone_active_code))
        use.push_back(i);
    }
    EVec probe = model.r[static_cast<std::size_t>(k) - 1](ds.rows[0]);
    const int p = static_cast<int>(probe.size());
    if (model.monotone)
      require(static_cast<int>(use.size()) >= p + 1,
              "monotone propensity fit at k=" + std::to_string(k) + " has only " +
                  std::to_string(use.size()) + " rows; need at least " +
                  std::to_string(p + 1));
    require(!use.empty(), "no rows available for the propensity fit at k=" +
                              std::to_string(k));

    Mat X(static_cast<Eigen::Index>(use.size()), p);
    const auto& space = spec.treatment_spaces[static_cast<std::size_t>(k) - 1];
    GlmFit info;
    info.link = Link::logit;
    if (space.size() == 2) {
      EVec y(static_cast<Eigen::Index>(use.size()));
      for (std::size_t ii = 0; ii < use.size(); ++ii) {
        const Trajectory& t = ds.rows[static_cast<std::size_t>(use[ii])];
        X.row(static_cast<Eigen::Index>(ii)) =
            model.r[static_cast<std::size_t>(k) - 1](t).transpose();
        y[static_cast<Eigen::Index>(ii)] = t.a(k) == space[1] ? 1.0 : 0.0;
      }
      EVec w = EVec::Ones(X.rows()), off = EVec::Zero(X.rows());
      info = fit_glm(X, y, w, off, Link::logit, model.glm);
      Mat b(p, 1);
      b.col(0) = info.coef;
      out.coef.push_back(b);
    } else {
      std::vector<int> yidx(use.size());
      for (std::size_t ii = 0; ii < use.size(); ++ii) {
        const Trajectory& t = ds.rows[static_cast<std::size_t>(use[ii])];
        X.row(static_cast<Eigen::Index>(ii)) =
            model.r[static_cast<std::size_t>(k) - 1](t).transpose();
        int idx = -1;
        for (std::size_t c = 0; c < space.size(); ++c)
          if (space[c] == t.a(k)) idx = static_cast<int>(c);
        yidx[ii] = idx;
      }
      out.coef.push_back(
          fit_multinomial(X, yidx, static_cast<int>(space.size()), model.glm, info));
    }
    out.fit_info.push_back(info);
  }

  for (int i = 0; i < n; ++i)
    for (int k = 1; k <= spec.K; ++k)
      if (out.pi_hat(ds.rows[static_cast<std::size_t>(i)], 1, k, false) < out.eps)
        ++out.truncation_count;
  return out;
}

}  // namespace gmr
