#include <cmath>

#include "estimators_detail.hpp"

namespace gmr {

using detail::mean_of;
using detail::pistar_table;
using detail::record_fit;
using detail::require_converged;
using detail::run_ice_loop;

void check_nesting(const IceModelSet& models, const Dataset& ds, const ProblemSpec& spec) {
  require(models.nested,
          "this estimator requires the nested design declaration: s_k = [b_k; s_{k-1}] "
          "with a constant component (s_0 = 1)");
  int probe = std::min(ds.n(), 8);
  for (int i = 0; i < probe; ++i) {
    const Trajectory& t = ds.rows[static_cast<std::size_t>(i)];
    EVec s1 = models.s[0].map(t, t.a(1));
    require(s1.size() >= 1 && std::abs(s1[s1.size() - 1] - 1.0) <= 1e-12,
            "nested designs must end in the constant 1 (s_0 = 1 convention)");
    for (int k = 2; k <= spec.K; ++k) {
      EVec sk = models.s[static_cast<std::size_t>(k) - 1].map(t, t.a(k));
      EVec skm1 = models.s[static_cast<std::size_t>(k) - 2].map(t, t.a(k - 1));
      require(sk.size() > skm1.size(),
              "nested designs must grow with k (s_" + std::to_string(k) + ")");
      EVec tail = sk.tail(skm1.size());
      require((tail - skm1).lpNorm<Eigen::Infinity>() <= 1e-12,
              "design at k=" + std::to_string(k) +
                  " does not contain the previous design as its trailing sub-vector");
    }
  }
}

EstimateReport estimate_ipw(const Dataset& ds, const ProblemSpec& spec,
                            const PropensityFit& pf) {
  ds.validate(spec);
  EstimateReport rep;
  rep.estimator = "ipw";
  double acc = 0.0, acc_raw = 0.0;
  long compliant = 0, truncated = 0;
  for (const auto& t : ds.rows) {
    double ps = pi_star(t, spec, 1, spec.K);
    if (ps > 0.0) ++compliant;
    double y = spec.psi(t);
    if (ps != 0.0) {
      double raw = pf.pi_hat(t, 1, spec.K, false);
      double trunc = std::max(raw, pf.eps);
      if (raw < pf.eps) ++truncated;
      acc += y * ps / trunc;
      if (raw > 0.0) acc_raw += y * ps / raw;
    }
  }
  rep.estimate = acc / ds.n();
  rep.diagnostics["estimate_raw_weights"] = acc_raw / ds.n();
  rep.diagnostics["truncated_weights"] = truncated;
  rep.diagnostics["compliant_rows"] = compliant;
  if (compliant == 0) rep.diagnostics["warning"] = "no compliant paths";
  return rep;
}

EstimateReport estimate_ice(const Dataset& ds, const ProblemSpec& spec,
                            const IceModelSet& models) {
  ds.validate(spec);
  EstimateReport rep;
  rep.estimator = "ice";
  auto res = run_ice_loop(ds, spec, models, [](int, int) { return 1.0; },
                          rep.diagnostics, "ice");
  rep.estimate = mean_of(res.y1);
  return rep;
}

EstimateReport estimate_weighted_ice(const Dataset& ds, const ProblemSpec& spec,
                                     const IceModelSet& models, const WeightChoice& omega,
                                     const PropensityFit* pf) {
  ds.validate(spec);
  EstimateReport rep;
  rep.estimator = "weighted_ice";
  std::function<double(int, int)> wm;
  switch (omega.kind) {
    case WeightChoice::Kind::Ones:
      wm = [](int, int) { return 1.0; };
      break;
    case WeightChoice::Kind::InversePiHat:
      require(pf != nullptr, "weighted_ice with inverse-pi weights needs a propensity fit");
      wm = [&ds, pf](int i, int k) {
        return 1.0 / pf->pi_hat_factor_floored(ds.rows[static_cast<std::size_t>(i)], 1, k);
      };
      break;
    case WeightChoice::Kind::Custom:
      require(static_cast<bool>(omega.custom), "custom weight function not set");
      wm = [&ds, &omega](int i, int k) {
        return omega.custom(ds.rows[static_cast<std::size_t>(i)], k);
      };
      break;
  }
  auto res = run_ice_loop(ds, spec, models, wm, rep.diagnostics, "weighted_ice");
  rep.estimate = mean_of(res.y1);
  return rep;
}

EstimateReport estimate_bang(const Dataset& ds, const ProblemSpec& spec,
                             const IceModelSet& models, const PropensityFit& pf) {
  ds.validate(spec);
  EstimateReport rep;
  rep.estimator = "bang";
  const int n = ds.n(), K = spec.K;
  auto pis = pistar_table(ds, spec);
  std::vector<double> yhat(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    yhat[static_cast<std::size_t>(i)] = spec.psi(ds.rows[static_cast<std::size_t>(i)]);
  std::vector<double> lambdas;

  for (int k = K; k >= 1; --k) {
    const DesignSpec& dsg = models.s[static_cast<std::size_t>(k) - 1];
    Mat X(n, dsg.dim + 1);
    EVec y(n), w(n), off = EVec::Zero(n);
    for (int i = 0; i < n; ++i) {
      const Trajectory& t = ds.rows[static_cast<std::size_t>(i)];
      w[i] = pis[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
      X.row(i).head(dsg.dim) = dsg.map(t, t.a(k)).transpose();
      X(i, dsg.dim) = w[i] > 0.0 ? 1.0 / pf.pi_hat_factor_floored(t, 1, k) : 0.0;
      y[i] = yhat[static_cast<std::size_t>(i)];
    }
    GlmFit fit = fit_glm(X, y, w, off, models.link, models.glm);
    record_fit(rep.diagnostics, k, fit, "fits");
    require_converged(fit, k, "bang");
    lambdas.push_back(fit.coef[dsg.dim]);
    for (int i = 0; i < n; ++i) {
      const Trajectory& t = ds.rows[static_cast<std::size_t>(i)];
      if (pis[static_cast<std::size_t>(i)][static_cast<std::size_t>(k) - 1] > 0.0) {
        double base = pf.pi_hat_factor_floored(t, 1, k - 1);
        yhat[static_cast<std::size_t>(i)] = y_under_regime(
            [&](int a) {
              double pk = base * std::max(pf.h_hat(k, a, t), pf.eps);
              EVec s(dsg.dim + 1);
              s.head(dsg.dim) = dsg.map(t, a);
              s[dsg.dim] = 1.0 / pk;
              return predict(fit, s);
            },
            t, spec, k);
      } else {
        yhat[static_cast<std::size_t>(i)] = 0.0;
      }
    }
  }
  rep.estimate = mean_of(yhat);
  rep.diagnostics["lambda_trail"] = lambdas;
  return rep;
}

EstimateReport estimate_greedy(const Dataset& ds, const ProblemSpec& spec,
                               const IceModelSet& models, const PropensityFit& pf) {
  ds.validate(spec);
  EstimateReport rep;
  rep.estimator = "greedy";
  const int n = ds.n(), K = spec.K;
  auto pis = pistar_table(ds, spec);
  std::vector<double> yhat(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    yhat[static_cast<std::size_t>(i)] = spec.psi(ds.rows[static_cast<std::size_t>(i)]);
  std::vector<double> lambdas;

  for (int k = K; k >= 1; --k) {
    const DesignSpec& dsg = models.s[static_cast<std::size_t>(k) - 1];
    Mat X(n, dsg.dim);
    EVec y(n), w(n), off = EVec::Zero(n), z(n);
    for (int i = 0; i < n; ++i) {
      const Trajectory& t = ds.rows[static_cast<std::size_t>(i)];
      w[i] = pis[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
      X.row(i) = dsg.map(t, t.a(k)).transpose();
      y[i] = yhat[static_cast<std::size_t>(i)];
      z[i] = w[i] > 0.0 ? 1.0 / pf.pi_hat_factor_floored(t, 1, k) : 0.0;
    }
    GlmFit base_fit = fit_glm(X, y, w, off, models.link, models.glm);
    record_fit(rep.diagnostics, k, base_fit, "fits");
    require_converged(base_fit, k, "greedy");
    EVec base_lp = X * base_fit.coef;
    GlmFit ext = fit_scalar_extension(y, base_lp, z, w, models.link, models.glm);
    record_fit(rep.diagnostics, k, ext, "extension_fits");
    require_converged(ext, k, "greedy extension");
    lambdas.push_back(ext.coef[0]);

    for (int i = 0; i < n; ++i) {
      const Trajectory& t = ds.rows[static_cast<std::size_t>(i)];
      if (pis[static_cast<std::size_t>(i)][static_cast<std::size_t>(k) - 1] > 0.0) {
        double base = pf.pi_hat_factor_floored(t, 1, k - 1);
        yhat[static_cast<std::size_t>(i)] = y_under_regime(
            [&](int a) {
              double pk = base * std::max(pf.h_hat(k, a, t), pf.eps);
              return link_mean(models.link,
                               base_fit.coef.dot(dsg.map(t, a)) + ext.coef[0] / pk);
            },
            t, spec, k);
      } else {
        yhat[static_cast<std::size_t>(i)] = 0.0;
      }
    }
  }
  rep.estimate = mean_of(yhat);
  rep.diagnostics["lambda_trail"] = lambdas;
  return rep;
}

std::vector<std::string> estimator_catalog() {
  return {"ipw", "ice", "weighted_ice", "bang", "greedy", "mr", "dr", "reg", "mr_greedy"};
}

EstimateReport run_estimator(const std::string& id, const Dataset& ds,
                             const ProblemSpec& spec, const IceModelSet& models,
                             const PropensityFit* pf) {
  auto need_pf = [&]() -> const PropensityFit& {
    require(pf != nullptr, "estimator '" + id + "' needs a propensity fit");
    return *pf;
  };
  if (id == "ipw") return estimate_ipw(ds, spec, need_pf());
  if (id == "ice") return estimate_ice(ds, spec, models);
  if (id == "weighted_ice")
    return estimate_weighted_ice(ds, spec, models,
                                 WeightChoice{WeightChoice::Kind::InversePiHat, {}}, pf);
  if (id == "bang") return estimate_bang(ds, spec, models, need_pf());
  if (id == "greedy") return estimate_greedy(ds, spec, models, need_pf());
  if (id == "mr") return estimate_mr(ds, spec, models, need_pf());
  if (id == "dr") return estimate_dr_plugin(ds, spec, models, need_pf());
  if (id == "reg") return estimate_reg_mr(ds, spec, models, need_pf());
  if (id == "mr_greedy") return estimate_mr_greedy(ds, spec, models, need_pf());
  std::string catalog;
  for (const auto& c : estimator_catalog()) catalog += (catalog.empty() ? "" : ", ") + c;
  throw Error("unknown estimator '" + id + "'; catalog: " + catalog);
}

}  // namespace gmr
