#ifndef GMR_QFORMS_HPP
#define GMR_QFORMS_HPP

#include <functional>

#include "gmr/trajectory.hpp"

namespace gmr {

// Nuisance pair evaluated on trajectories: eta_k at an overridden treatment
// code with the history taken from the trajectory, and the treatment density
// h_k at a code given the history. Backing may be fitted models or exact
// tables.
struct NuisanceFns {
  std::function<double(int k, int a_code, const Trajectory&)> eta;
  std::function<double(int k, int a_code, const Trajectory&)> h;
};

// y_{k,eta_k}(A_{k-1}, L_k) = sum_a h*_k(a|.) eta_k(a, .); y_{K+1} = psi.
double y_eta(const Trajectory& traj, const ProblemSpec& spec,
             const NuisanceFns& fns, int k);

// The augmented-IPW random variable Q_j in its three algebraic forms. All
// agree exactly; the backward form is the one estimators use, the other two
// exist so agreement can be checked.
double q_backward(const Trajectory& traj, const ProblemSpec& spec,
                  const NuisanceFns& fns, int j);
double q_ipw_sum(const Trajectory& traj, const ProblemSpec& spec,
                 const NuisanceFns& fns, int j);
double q_telescoped(const Trajectory& traj, const ProblemSpec& spec,
                    const NuisanceFns& fns, int j);

}  // namespace gmr

#endif
