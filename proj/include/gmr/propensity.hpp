#ifndef GMR_PROPENSITY_HPP
#define GMR_PROPENSITY_HPP

#include <functional>
#include <vector>

#include "gmr/glm.hpp"
#include "gmr/trajectory.hpp"

namespace gmr {

// Parametric treatment models h_{k,alpha}. Binary spaces use a logistic
// regression on r_k(l_1..l_k, a_1..a_{k-1}); larger spaces a baseline-category
// multinomial logit. The monotone flag encodes dropout structure: h_k is fit
// only on rows still at the active code, and the fitted density forces
// h_k(active | off-path history) = 0.
struct PropensityModel {
  std::vector<std::function<EVec(const Trajectory&)>> r;  // size K
  bool monotone = false;
  int monotone_active_code = 1;
  GlmOptions glm;
};

class PropensityFit {
 public:
  // Fitted density of code a at timepoint k given traj's history.
  double h_hat(int k, int a_code, const Trajectory& traj) const;
  // Product of fitted densities at the realized treatments, r = j..k.
  // Truncation floors the product at eps (raw available for identity work).
  double pi_hat(const Trajectory& traj, int j, int k, bool truncated = true) const;
  // Factor-floored variant: product of max(h_hat, eps) over r = j..k. The
  // iterated estimators use this so weight products and per-factor ratios
  // stay algebraically consistent.
  double pi_hat_factor_floored(const Trajectory& traj, int j, int k) const;

  double eps = 1e-6;
  int K = 0;
  bool monotone = false;
  int monotone_active_code = 1;
  std::vector<std::function<EVec(const Trajectory&)>> r;
  // Binary spaces: coef[k-1] is a single column; multinomial: one column per
  // non-baseline code.
  std::vector<Mat> coef;
  std::vector<std::vector<int>> codes;  // treatment space per k
  std::vector<GlmFit> fit_info;         // per k (binary); multinomial synthesizes one
  long truncation_count = 0;            // fit-time count over the fitted data

  bool all_converged() const;
};

PropensityFit fit_propensities(const Dataset& ds, const ProblemSpec& spec,
                               const PropensityModel& model);

}  // namespace gmr

#endif
