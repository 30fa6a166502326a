#include "gmr/qforms.hpp"

namespace gmr {

double y_eta(const Trajectory& traj, const ProblemSpec& spec,
             const NuisanceFns& fns, int k) {
  if (k == spec.K + 1) return spec.psi(traj);
  return y_under_regime([&](int a) { return fns.eta(k, a, traj); }, traj, spec, k);
}

double q_backward(const Trajectory& traj, const ProblemSpec& spec,
                  const NuisanceFns& fns, int j) {
  require(j >= 1 && j <= spec.K + 1, "q_backward: j out of range");
  double q = spec.psi(traj);
  for (int k = spec.K; k >= j; --k) {
    double hs = spec.regime.density(k, traj.a(k), traj);
    double ratio_term = 0.0;
    if (hs != 0.0) {
      double hk = fns.h(k, traj.a(k), traj);
      require(hk > 0.0, "nuisance density is zero on a regime-compatible path at k=" +
                            std::to_string(k));
      ratio_term = (hs / hk) * (q - fns.eta(k, traj.a(k), traj));
    }
    q = ratio_term + y_eta(traj, spec, fns, k);
  }
  return q;
}

double q_ipw_sum(const Trajectory& traj, const ProblemSpec& spec,
                 const NuisanceFns& fns, int j) {
  require(j >= 1 && j <= spec.K + 1, "q_ipw_sum: j out of range");
  if (j == spec.K + 1) return spec.psi(traj);
  // ratio[k] = pi*_j^k / pi_j^k, with the empty product 1 at k=j-1.
  std::vector<double> ratio(static_cast<std::size_t>(spec.K - j + 2), 0.0);
  ratio[0] = 1.0;
  for (int k = j; k <= spec.K; ++k) {
    double prev = ratio[static_cast<std::size_t>(k - j)];
    double hs = spec.regime.density(k, traj.a(k), traj);
    double r = 0.0;
    if (prev != 0.0 && hs != 0.0) {
      double hk = fns.h(k, traj.a(k), traj);
      require(hk > 0.0, "nuisance density is zero on a regime-compatible path at k=" +
                            std::to_string(k));
      r = prev * hs / hk;
    }
    ratio[static_cast<std::size_t>(k - j + 1)] = r;
  }
  double q = ratio[static_cast<std::size_t>(spec.K - j + 1)] * spec.psi(traj);
  for (int k = j; k <= spec.K; ++k) {
    double rk = ratio[static_cast<std::size_t>(k - j + 1)];
    double rkm1 = ratio[static_cast<std::size_t>(k - j)];
    if (rk != 0.0) q -= rk * fns.eta(k, traj.a(k), traj);
    if (rkm1 != 0.0) q += rkm1 * y_eta(traj, spec, fns, k);
  }
  return q;
}

double q_telescoped(const Trajectory& traj, const ProblemSpec& spec,
                    const NuisanceFns& fns, int j) {
  require(j >= 1 && j <= spec.K + 1, "q_telescoped: j out of range");
  if (j == spec.K + 1) return spec.psi(traj);
  double q = y_eta(traj, spec, fns, j);
  double ratio = 1.0;
  for (int k = j; k <= spec.K; ++k) {
    double hs = spec.regime.density(k, traj.a(k), traj);
    if (hs == 0.0) break;
    double hk = fns.h(k, traj.a(k), traj);
    require(hk > 0.0, "nuisance density is zero on a regime-compatible path at k=" +
                          std::to_string(k));
    ratio *= hs / hk;
    q += ratio * (y_eta(traj, spec, fns, k + 1) - fns.eta(k, traj.a(k), traj));
  }
  return q;
}

}  // namespace gmr
