#include <cmath>

#include "estimators_detail.hpp"

namespace gmr {

using detail::mean_of;
using detail::pistar_table;
using detail::record_fit;
using detail::require_converged;
using detail::run_ice_loop;

namespace {

NuisanceFns fitted_fns(const IceModelSet& models, const std::vector<GlmFit>& fits,
                       const PropensityFit& pf, bool raw_h) {
  NuisanceFns fns;
  fns.eta = [&models, &fits](int k, int a, const Trajectory& t) {
    return predict(fits[static_cast<std::size_t>(k) - 1],
                   models.s[static_cast<std::size_t>(k) - 1].map(t, a));
  };
  fns.h = [&pf, raw_h](int k, int a, const Trajectory& t) {
    double h = pf.h_hat(k, a, t);
    return raw_h ? h : std::max(h, pf.eps);
  };
  return fns;
}

}  // namespace

EstimateReport estimate_mr(const Dataset& ds, const ProblemSpec& spec,
                           const IceModelSet& models, const PropensityFit& pf) {
  ds.validate(spec);
  EstimateReport rep;
  rep.estimator = "mr";
  const int n = ds.n(), K = spec.K;
  auto pis = pistar_table(ds, spec);
  std::vector<double> q(static_cast<std::size_t>(n)), qraw;
  for (int i = 0; i < n; ++i)
    q[static_cast<std::size_t>(i)] = spec.psi(ds.rows[static_cast<std::size_t>(i)]);
  qraw = q;
  long floored = 0;

  for (int k = K; k >= 1; --k) {
    const DesignSpec& dsg = models.s[static_cast<std::size_t>(k) - 1];
    Mat X(n, dsg.dim);
    EVec y(n), w(n), off = EVec::Zero(n);
    for (int i = 0; i < n; ++i) {
      const Trajectory& t = ds.rows[static_cast<std::size_t>(i)];
      w[i] = pis[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
      X.row(i) = dsg.map(t, t.a(k)).transpose();
      y[i] = q[static_cast<std::size_t>(i)];
    }
    GlmFit fit;
    try {
      fit = fit_glm(X, y, w, off, models.link, models.glm);
    } catch (const Error& e) {
      throw Error(std::string(e.what()) +
                  " [multiply robust pseudo-outcomes can leave the link range; the "
                  "weighted iterated regression ('reg') or the greedy variant "
                  "('mr_greedy') avoid this]");
    }
    record_fit(rep.diagnostics, k, fit, "fits");
    require_converged(fit, k, "mr");

    for (int i = 0; i < n; ++i) {
      const Trajectory& t = ds.rows[static_cast<std::size_t>(i)];
      if (pis[static_cast<std::size_t>(i)][static_cast<std::size_t>(k) - 1] <= 0.0) {
        q[static_cast<std::size_t>(i)] = 0.0;
        qraw[static_cast<std::size_t>(i)] = 0.0;
        continue;
      }
      double yk = y_under_regime([&](int a) { return predict(fit, dsg.map(t, a)); }, t,
                                 spec, k);
      double hs = spec.regime.density(k, t.a(k), t);
      double ratio = 0.0, ratio_raw = 0.0;
      if (hs != 0.0) {
        double eta_obs = predict(fit, dsg.map(t, t.a(k)));
        double h = pf.h_hat(k, t.a(k), t);
        if (h < pf.eps) ++floored;
        ratio = (hs / std::max(h, pf.eps)) * (q[static_cast<std::size_t>(i)] - eta_obs);
        ratio_raw = h > 0.0 ? (hs / h) * (qraw[static_cast<std::size_t>(i)] - eta_obs) : 0.0;
      }
      q[static_cast<std::size_t>(i)] = ratio + yk;
      qraw[static_cast<std::size_t>(i)] = ratio_raw + yk;
    }
  }
  rep.estimate = mean_of(q);
  rep.diagnostics["estimate_raw_h"] = mean_of(qraw);
  rep.diagnostics["floored_h_factors"] = floored;
  return rep;
}

EstimateReport estimate_dr_plugin(const Dataset& ds, const ProblemSpec& spec,
                                  const IceModelSet& models, const PropensityFit& pf) {
  ds.validate(spec);
  EstimateReport rep;
  rep.estimator = "dr";
  auto res = run_ice_loop(ds, spec, models, [](int, int) { return 1.0; },
                          rep.diagnostics, "dr");
  NuisanceFns fns = fitted_fns(models, res.fits, pf, /*raw_h=*/false);
  double acc = 0.0;
  for (int i = 0; i < ds.n(); ++i)
    acc += q_backward(ds.rows[static_cast<std::size_t>(i)], spec, fns, 1);
  rep.estimate = acc / ds.n();
  rep.diagnostics["ice_estimate"] = mean_of(res.y1);
  return rep;
}

EstimateReport estimate_reg_mr(const Dataset& ds, const ProblemSpec& spec,
                               const IceModelSet& models, const PropensityFit& pf) {
  ds.validate(spec);
  check_nesting(models, ds, spec);
  EstimateReport rep;
  rep.estimator = "reg";
  auto res = run_ice_loop(
      ds, spec, models,
      [&ds, &pf](int i, int k) {
        return 1.0 / pf.pi_hat_factor_floored(ds.rows[static_cast<std::size_t>(i)], 1, k);
      },
      rep.diagnostics, "reg");
  rep.estimate = mean_of(res.y1);

  // The same fit read through the Q recursion; the weighted score equations
  // make the two routes coincide.
  NuisanceFns fns = fitted_fns(models, res.fits, pf, /*raw_h=*/false);
  double acc = 0.0;
  for (int i = 0; i < ds.n(); ++i)
    acc += q_backward(ds.rows[static_cast<std::size_t>(i)], spec, fns, 1);
  double qpath = acc / ds.n();
  rep.diagnostics["q_path_estimate"] = qpath;
  rep.diagnostics["dual_path_gap"] = std::abs(qpath - rep.estimate);
  return rep;
}

EstimateReport estimate_mr_greedy(const Dataset& ds, const ProblemSpec& spec,
                                  const IceModelSet& models, const PropensityFit& pf) {
  ds.validate(spec);
  EstimateReport rep;
  rep.estimator = "mr_greedy";
  const int n = ds.n(), K = spec.K;
  auto pis = pistar_table(ds, spec);

  auto sdim = [&](int j) {
    return j == 0 ? 1 : models.s[static_cast<std::size_t>(j) - 1].dim;
  };
  auto svec = [&](int j, const Trajectory& t) -> EVec {
    if (j == 0) return EVec::Ones(1);
    return models.s[static_cast<std::size_t>(j) - 1].map(t, t.a(j));
  };
  // Factor-floored product of fitted densities at observed treatments, r = j..k.
  auto pif = [&](const Trajectory& t, int j, int k) {
    double p = 1.0;
    for (int r = j; r <= k; ++r) p *= std::max(pf.h_hat(r, t.a(r), t), pf.eps);
    return p;
  };

  std::vector<GlmFit> tau(static_cast<std::size_t>(K));
  std::vector<std::vector<EVec>> lambda(static_cast<std::size_t>(K));
  for (int k = 1; k <= K; ++k)
    lambda[static_cast<std::size_t>(k) - 1].resize(static_cast<std::size_t>(k));

  // eta_k after the inner pass at j, evaluated at treatment a.
  auto eta_kj = [&](int k, int j, int a, const Trajectory& t) {
    const DesignSpec& dsg = models.s[static_cast<std::size_t>(k) - 1];
    double lp = tau[static_cast<std::size_t>(k) - 1].coef.dot(dsg.map(t, a));
    double hk = std::max(pf.h_hat(k, a, t), pf.eps);
    for (int u = j; u <= k - 1; ++u) {
      double pmid = 1.0;
      for (int r = u + 1; r <= k - 1; ++r) pmid *= std::max(pf.h_hat(r, t.a(r), t), pf.eps);
      lp += lambda[static_cast<std::size_t>(k) - 1][static_cast<std::size_t>(u)].dot(
                svec(u, t)) /
            (pmid * hk);
    }
    return link_mean(models.link, lp);
  };

  // ynext[j][i] holds Yhat_{k+1}^{(j)} for the current outer level.
  std::vector<std::vector<double>> ynext(static_cast<std::size_t>(K) + 1);
  for (int j = 0; j <= K; ++j) {
    ynext[static_cast<std::size_t>(j)].resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
      ynext[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] =
          spec.psi(ds.rows[static_cast<std::size_t>(i)]);
  }

  for (int k = K; k >= 1; --k) {
    const DesignSpec& dsg = models.s[static_cast<std::size_t>(k) - 1];
    EVec w(n);
    for (int i = 0; i < n; ++i)
      w[i] = pis[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];

    {
      Mat X(n, dsg.dim);
      EVec y(n), off = EVec::Zero(n);
      for (int i = 0; i < n; ++i) {
        const Trajectory& t = ds.rows[static_cast<std::size_t>(i)];
        X.row(i) = dsg.map(t, t.a(k)).transpose();
        y[i] = ynext[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)];
      }
      GlmFit fit = fit_glm(X, y, w, off, models.link, models.glm);
      record_fit(rep.diagnostics, k, fit, "fits");
      require_converged(fit, k, "mr_greedy");
      tau[static_cast<std::size_t>(k) - 1] = fit;
    }

    std::vector<std::vector<double>> ycur(static_cast<std::size_t>(k));
    for (int j = k - 1; j >= 0; --j) {
      Mat Z(n, sdim(j));
      EVec y(n), off(n);
      for (int i = 0; i < n; ++i) {
        const Trajectory& t = ds.rows[static_cast<std::size_t>(i)];
        if (w[i] > 0.0) {
          Z.row(i) = (svec(j, t) / pif(t, j + 1, k)).transpose();
          double lp = tau[static_cast<std::size_t>(k) - 1].coef.dot(dsg.map(t, t.a(k)));
          for (int u = j + 1; u <= k - 1; ++u)
            lp += lambda[static_cast<std::size_t>(k) - 1][static_cast<std::size_t>(u)].dot(
                      svec(u, t)) /
                  pif(t, u + 1, k);
          off[i] = lp;
        } else {
          Z.row(i).setZero();
          off[i] = 0.0;
        }
        y[i] = ynext[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)];
      }
      GlmFit ext = fit_glm(Z, y, w, off, models.link, models.glm);
      record_fit(rep.diagnostics, k * 100 + j, ext, "extension_fits");
      require_converged(ext, k, "mr_greedy extension (j=" + std::to_string(j) + ")");
      lambda[static_cast<std::size_t>(k) - 1][static_cast<std::size_t>(j)] = ext.coef;

      ycur[static_cast<std::size_t>(j)].assign(static_cast<std::size_t>(n), 0.0);
      for (int i = 0; i < n; ++i) {
        const Trajectory& t = ds.rows[static_cast<std::size_t>(i)];
        if (pis[static_cast<std::size_t>(i)][static_cast<std::size_t>(k) - 1] > 0.0)
          ycur[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] = y_under_regime(
              [&](int a) { return eta_kj(k, j, a, t); }, t, spec, k);
      }
    }
    for (int j = 0; j <= k - 1; ++j)
      ynext[static_cast<std::size_t>(j)] = ycur[static_cast<std::size_t>(j)];
  }

  rep.estimate = mean_of(ynext[0]);

  // Self-checks recorded for the verification suites: the fitted coefficients
  // solve the Q-form score equations, and the plug-in Q average returns the
  // same number.
  auto fns_at = [&](int j) {
    NuisanceFns fns;
    fns.eta = [&, j](int k, int a, const Trajectory& t) { return eta_kj(k, j, a, t); };
    fns.h = [&](int k, int a, const Trajectory& t) {
      return std::max(pf.h_hat(k, a, t), pf.eps);
    };
    return fns;
  };
  double max_score_resid = 0.0;
  for (int j = 1; j <= K; ++j) {
    NuisanceFns fns = fns_at(j);
    EVec resid = EVec::Zero(sdim(j));
    for (int i = 0; i < n; ++i) {
      const Trajectory& t = ds.rows[static_cast<std::size_t>(i)];
      double ps = pis[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      if (ps <= 0.0) continue;
      double qj1 = q_backward(t, spec, fns, j + 1);
      double etaj = predict(tau[static_cast<std::size_t>(j) - 1],
                            models.s[static_cast<std::size_t>(j) - 1].map(t, t.a(j)));
      resid += ps * (qj1 - etaj) * svec(j, t);
    }
    max_score_resid = std::max(max_score_resid, resid.lpNorm<Eigen::Infinity>() / n);
  }
  rep.diagnostics["q_score_residual"] = max_score_resid;

  NuisanceFns fns0 = fns_at(0);
  double q1mean = 0.0;
  for (int i = 0; i < n; ++i)
    q1mean += q_backward(ds.rows[static_cast<std::size_t>(i)], spec, fns0, 1);
  q1mean /= n;
  rep.diagnostics["q_path_estimate"] = q1mean;
  rep.diagnostics["q_path_gap"] = std::abs(q1mean - rep.estimate);
  return rep;
}

}  // namespace gmr
