#ifndef GMR_TRAJECTORY_HPP
#define GMR_TRAJECTORY_HPP

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include "gmr/common.hpp"

namespace gmr {

using Vec = Eigen::VectorXd;

class Trajectory;

// Target regime h*: per-timepoint conditional treatment densities.
// Static and dynamic regimes normalize to indicator densities; stochastic
// regimes carry an arbitrary conditional density on the treatment space.
// Timepoints are 1-based throughout, matching the longitudinal indexing
// (l_1, a_1, ..., a_K, l_{K+1}).
struct RegimeSpec {
  struct Timepoint {
    enum class Kind { Static, Dynamic, Stochastic };
    Kind kind = Kind::Static;
    int static_code = 0;
    // Dynamic: maps the history (a_1..a_{k-1}, l_1..l_k) to a treatment code.
    std::function<int(const Trajectory&, int k)> rule;
    // Stochastic: density of code a given the history.
    std::function<double(int a, const Trajectory&, int k)> density;
  };
  std::vector<Timepoint> points;  // size K

  int K() const { return static_cast<int>(points.size()); }

  // h*_k(a | a_1..a_{k-1}, l_1..l_k). Reads only the strict history of traj.
  double density(int k, int a, const Trajectory& traj) const;

  bool is_indicator(int k) const {
    return points[k - 1].kind != Timepoint::Kind::Stochastic;
  }

  static RegimeSpec all_static(int K, int code);
};

// Problem description: horizon, treatment spaces, block dimensions, the
// outcome functional psi and the target regime.
struct ProblemSpec {
  int K = 0;
  std::vector<std::vector<int>> treatment_spaces;  // size K, each a finite code set
  std::vector<int> l_dims;                         // size K+1
  std::function<double(const Trajectory&)> psi;    // reads l_1..l_{K+1}
  RegimeSpec regime;

  void validate() const;
  int treatment_index(int k, int code) const;  // position of code in space k, -1 if absent
};

// One subject's record: K+1 covariate blocks and K treatment codes.
// Immutable after construction; operations read history prefixes only.
class Trajectory {
 public:
  Trajectory() = default;
  Trajectory(std::vector<Vec> l_blocks, std::vector<int> a_values)
      : l_(std::move(l_blocks)), a_(std::move(a_values)) {}

  int K() const { return static_cast<int>(a_.size()); }
  const Vec& l(int k) const { return l_[static_cast<std::size_t>(k) - 1]; }  // 1-based
  int a(int k) const { return a_[static_cast<std::size_t>(k) - 1]; }         // 1-based
  Vec& mutable_l(int k) { return l_[static_cast<std::size_t>(k) - 1]; }
  void set_a(int k, int code) { a_[static_cast<std::size_t>(k) - 1] = code; }

  void validate(const ProblemSpec& spec) const;

 private:
  std::vector<Vec> l_;  // K+1 blocks
  std::vector<int> a_;  // K codes
};

struct Dataset {
  std::vector<Trajectory> rows;
  int n() const { return static_cast<int>(rows.size()); }
  void validate(const ProblemSpec& spec) const;
};

// pi*_j^k = prod_{r=j}^{k} h*_r(A_r | history) evaluated on traj.
// Empty products (k = j-1) are 1 by convention.
double pi_star(const Trajectory& traj, const ProblemSpec& spec, int j, int k);

// sum_a eta(a) h*_k(a | A_1..A_{k-1}, L_1..L_k): the regime average of a
// per-treatment function at timepoint k.
double y_under_regime(const std::function<double(int)>& eta_at,
                      const Trajectory& traj, const ProblemSpec& spec, int k);

// CSV loader. Header: L1_1..L1_{d1},A1,L2_1..,A2,...,A{K},L{K+1}_1..
// Empty L cells are filled with `sentinel`.
Dataset load_dataset(const std::string& path, const ProblemSpec& spec,
                     double sentinel = 0.0);
void save_dataset(const std::string& path, const Dataset& ds,
                  const ProblemSpec& spec);

}  // namespace gmr

#endif
