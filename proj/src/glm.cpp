#include "gmr/glm.hpp"

#include <cmath>

namespace gmr {

double link_mean(Link link, double lp) {
  switch (link) {
    case Link::identity: return lp;
    case Link::logit: return lp >= 0 ? 1.0 / (1.0 + std::exp(-lp))
                                     : std::exp(lp) / (1.0 + std::exp(lp));
    case Link::log: return std::exp(lp);
  }
  return 0.0;
}

double link_linpred(Link link, double m) {
  switch (link) {
    case Link::identity: return m;
    case Link::logit:
      require(m > 0.0 && m < 1.0, "logit linpred requires mean in (0,1)");
      return std::log(m / (1.0 - m));
    case Link::log:
      require(m > 0.0, "log linpred requires positive mean");
      return std::log(m);
  }
  return 0.0;
}

double link_mean_deriv(Link link, double lp) {
  switch (link) {
    case Link::identity: return 1.0;
    case Link::logit: {
      double m = link_mean(Link::logit, lp);
      return m * (1.0 - m);
    }
    case Link::log: return std::exp(lp);
  }
  return 0.0;
}

bool link_range_contains(Link link, double y) {
  switch (link) {
    case Link::identity: return std::isfinite(y);
    case Link::logit: return y >= 0.0 && y <= 1.0;
    case Link::log: return y >= 0.0;
  }
  return false;
}

EVec glm_score(const Mat& X, const EVec& y, const EVec& w, const EVec& offset,
               Link link, const EVec& coef) {
  EVec lp = X * coef + offset;
  EVec score = EVec::Zero(X.cols());
  double wsum = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (w[i] == 0.0) continue;
    wsum += w[i];
    score += w[i] * (y[i] - link_mean(link, lp[i])) * X.row(i).transpose();
  }
  require(wsum > 0.0, "fit requires at least one positive weight");
  return score / wsum;
}

namespace {

// Quasi log-likelihood sum_i w_i [y_i theta_i - b(theta_i)] with canonical
// theta = lp. Concave in the coefficients for any real y, which keeps the
// step-halving search meaningful on out-of-range outcomes.
double quasi_loglik(const EVec& y, const EVec& w, const EVec& lp, Link link) {
  double ll = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (w[i] == 0.0) continue;
    double cumulant = 0.0;
    switch (link) {
      case Link::identity: cumulant = 0.5 * lp[i] * lp[i]; break;
      case Link::logit:
        cumulant = lp[i] > 30 ? lp[i] : std::log1p(std::exp(lp[i]));
        break;
      case Link::log: cumulant = std::exp(lp[i]); break;
    }
    ll += w[i] * (y[i] * lp[i] - cumulant);
  }
  return ll;
}

GlmFit fit_glm_impl(const Mat& X, const EVec& y, const EVec& w, const EVec& offset,
                    Link link, const GlmOptions& opts, double ridge, bool fallback_used) {
  const Eigen::Index n = X.rows(), p = X.cols();
  require(y.size() == n && w.size() == n && offset.size() == n,
          "fit_glm: dimension mismatch");
  double wsum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    require(w[i] >= 0.0, "fit_glm: negative weight");
    wsum += w[i];
  }
  require(wsum > 0.0, "fit requires at least one positive weight");
  if (opts.strict_range) {
    for (Eigen::Index i = 0; i < n; ++i)
      require(w[i] == 0.0 || link_range_contains(link, y[i]),
              "outcome outside the link range under the strict policy");
  }

  GlmFit fit;
  fit.link = link;
  EVec beta = opts.start ? *opts.start : EVec::Zero(p);
  require(beta.size() == p, "fit_glm: start vector dimension mismatch");

  EVec lp = X * beta + offset;
  double obj = quasi_loglik(y, w, lp, link) / wsum - 0.5 * ridge * beta.squaredNorm();
  double score_norm = 0.0;

  for (int it = 0; it < opts.max_iter; ++it) {
    fit.iterations = it + 1;
    EVec score = EVec::Zero(p);
    Mat H = Mat::Zero(p, p);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (w[i] == 0.0) continue;
      double resid = y[i] - link_mean(link, lp[i]);
      double wd = w[i] * link_mean_deriv(link, lp[i]);
      score += (w[i] * resid) * X.row(i).transpose();
      H.selfadjointView<Eigen::Lower>().rankUpdate(X.row(i).transpose(), wd);
    }
    score /= wsum;
    H = H.selfadjointView<Eigen::Lower>();
    H /= wsum;
    score -= ridge * beta;
    H.diagonal().array() += ridge;

    score_norm = score.lpNorm<Eigen::Infinity>();
    if (score_norm <= opts.tol) {
      fit.converged = true;
      break;
    }

    Eigen::FullPivLU<Mat> lu(H);
    if (!lu.isInvertible() || lu.rcond() < 1e-14) {
      if (ridge == 0.0 && opts.ridge_fallback)
        return fit_glm_impl(X, y, w, offset, link, opts, 1e-8, true);
      require(ridge > 0.0,
              "singular working design; supply a positive ridge to regularize");
      // With ridge active the system is invertible up to conditioning: solve anyway.
    }
    EVec step = lu.solve(score);
    if (!step.allFinite()) {
      if (ridge == 0.0 && opts.ridge_fallback)
        return fit_glm_impl(X, y, w, offset, link, opts, 1e-8, true);
      throw Error("singular working design; supply a positive ridge to regularize");
    }

    // Step halving on the (penalized) quasi log-likelihood.
    double t = 1.0;
    bool accepted = false;
    for (int half = 0; half < 40; ++half) {
      EVec cand = beta + t * step;
      EVec lp_cand = X * cand + offset;
      double obj_cand =
          quasi_loglik(y, w, lp_cand, link) / wsum - 0.5 * ridge * cand.squaredNorm();
      if (obj_cand >= obj - 1e-14 * (1.0 + std::abs(obj))) {
        beta = cand;
        lp = lp_cand;
        obj = obj_cand;
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) break;  // stalled; score_norm reported below
    if (beta.lpNorm<Eigen::Infinity>() > opts.separation_norm) {
      fit.separation_suspected = true;
      break;
    }
  }

  if (!fit.converged) {
    score_norm = (glm_score(X, y, w, offset, link, beta) - ridge * beta)
                     .lpNorm<Eigen::Infinity>();
    fit.converged = score_norm <= opts.tol && !fit.separation_suspected;
  }

  // Separated logistic fits satisfy the score equation in the limit, so the
  // solver can "converge" at pinned probabilities. For genuinely binary
  // outcomes a pinned linear predictor marks the fit as separated.
  if (link == Link::logit && fit.converged) {
    bool binary = true;
    for (Eigen::Index i = 0; i < n && binary; ++i)
      if (w[i] > 0.0 && y[i] != 0.0 && y[i] != 1.0) binary = false;
    if (binary) {
      double max_lp = 0.0;
      for (Eigen::Index i = 0; i < n; ++i)
        if (w[i] > 0.0) max_lp = std::max(max_lp, std::abs(lp[i]));
      if (max_lp > 20.0) {
        fit.separation_suspected = true;
        fit.converged = false;
      }
    }
  }

  fit.coef = beta;
  fit.final_score_norm = score_norm;
  fit.ridge_fallback_used = fallback_used;
  return fit;
}

}  // namespace

GlmFit fit_glm(const Mat& X, const EVec& y, const EVec& w, const EVec& offset,
               Link link, const GlmOptions& opts) {
  return fit_glm_impl(X, y, w, offset, link, opts, opts.ridge, false);
}

GlmFit fit_scalar_extension(const EVec& y, const EVec& offset, const EVec& z,
                            const EVec& w, Link link, const GlmOptions& opts) {
  Mat X(z.size(), 1);
  X.col(0) = z;
  return fit_glm(X, y, w, offset, link, opts);
}

double predict(const GlmFit& fit, const EVec& s, double offset) {
  require(s.size() == fit.coef.size(), "predict: dimension mismatch");
  return link_mean(fit.link, fit.coef.dot(s) + offset);
}

}  // namespace gmr
