#ifndef GMR_ESTIMATORS_DETAIL_HPP
#define GMR_ESTIMATORS_DETAIL_HPP

#include "gmr/estimators.hpp"

namespace gmr {
namespace detail {

// pis[i][k] = pi*^k for row i, k = 0..K.
inline std::vector<std::vector<double>> pistar_table(const Dataset& ds,
                                                     const ProblemSpec& spec) {
  std::vector<std::vector<double>> pis(static_cast<std::size_t>(ds.n()));
  for (int i = 0; i < ds.n(); ++i) {
    const Trajectory& t = ds.rows[static_cast<std::size_t>(i)];
    auto& row = pis[static_cast<std::size_t>(i)];
    row.assign(static_cast<std::size_t>(spec.K) + 1, 1.0);
    for (int k = 1; k <= spec.K; ++k)
      row[static_cast<std::size_t>(k)] =
          row[static_cast<std::size_t>(k) - 1] * spec.regime.density(k, t.a(k), t);
  }
  return pis;
}

inline void record_fit(nlohmann::json& diag, int tag, const GlmFit& fit,
                       const char* label) {
  nlohmann::json j;
  j["k"] = tag;
  j["coef"] = std::vector<double>(fit.coef.data(), fit.coef.data() + fit.coef.size());
  j["converged"] = fit.converged;
  j["iterations"] = fit.iterations;
  j["score_norm"] = fit.final_score_norm;
  if (fit.ridge_fallback_used) j["ridge_fallback"] = true;
  if (fit.separation_suspected) j["separation"] = true;
  diag[label].push_back(j);
}

inline void require_converged(const GlmFit& fit, int k, const std::string& who) {
  if (!fit.converged)
    throw Error(who + ": regression failed to converge at k=" + std::to_string(k) +
                (fit.separation_suspected ? " (separation suspected)" : ""));
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

struct IceResult {
  std::vector<GlmFit> fits;  // per k
  std::vector<double> y1;    // pseudo-outcomes after the k=1 step
};

// Backward iterated-regression loop shared by the plain, weighted and plug-in
// estimators. weight_mult(i, k) multiplies pi*^k in the fitting weights.
inline IceResult run_ice_loop(const Dataset& ds, const ProblemSpec& spec,
                              const IceModelSet& models,
                              const std::function<double(int, int)>& weight_mult,
                              nlohmann::json& diag, const std::string& who) {
  const int n = ds.n(), K = spec.K;
  auto pis = pistar_table(ds, spec);
  IceResult res;
  res.fits.resize(static_cast<std::size_t>(K));
  std::vector<double> yhat(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    yhat[static_cast<std::size_t>(i)] = spec.psi(ds.rows[static_cast<std::size_t>(i)]);

  for (int k = K; k >= 1; --k) {
    const DesignSpec& dsg = models.s[static_cast<std::size_t>(k) - 1];
    Mat X(n, dsg.dim);
    EVec y(n), w(n), off = EVec::Zero(n);
    for (int i = 0; i < n; ++i) {
      const Trajectory& t = ds.rows[static_cast<std::size_t>(i)];
      double ps = pis[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
      w[i] = ps > 0.0 ? ps * weight_mult(i, k) : 0.0;
      X.row(i) = dsg.map(t, t.a(k)).transpose();
      y[i] = yhat[static_cast<std::size_t>(i)];
    }
    GlmFit fit = fit_glm(X, y, w, off, models.link, models.glm);
    record_fit(diag, k, fit, "fits");
    require_converged(fit, k, who);
    for (int i = 0; i < n; ++i) {
      const Trajectory& t = ds.rows[static_cast<std::size_t>(i)];
      if (pis[static_cast<std::size_t>(i)][static_cast<std::size_t>(k) - 1] > 0.0) {
        yhat[static_cast<std::size_t>(i)] = y_under_regime(
            [&](int a) { return predict(fit, dsg.map(t, a)); }, t, spec, k);
      } else {
        yhat[static_cast<std::size_t>(i)] = 0.0;
      }
    }
    res.fits[static_cast<std::size_t>(k) - 1] = fit;
  }
  res.y1 = yhat;
  return res;
}

}  // namespace detail
}  // namespace gmr

#endif
