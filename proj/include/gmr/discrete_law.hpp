#ifndef GMR_DISCRETE_LAW_HPP
#define GMR_DISCRETE_LAW_HPP

#include <cstdint>
#include <functional>
#include <vector>

#include "gmr/qforms.hpp"
#include "gmr/trajectory.hpp"

namespace gmr {

// Exact data-generating law p = gh on finite state spaces. Tables are flat
// arrays indexed by mixed-radix history codes, least-significant digit first,
// in the order l_1, a_1, l_2, a_2, ...  All probabilities are conditional
// slices that sum to one.
struct DiscreteLaw {
  // l_supports[k-1]: the possible values of block L_k, k = 1..K+1.
  std::vector<std::vector<Vec>> l_supports;
  // g_tables[k]: g_k(l_{k+1} | l_1..l_k, a_1..a_k), k = 0..K.
  // Flat index: idx_la(k) * |L_{k+1}| + l_{k+1}.
  std::vector<std::vector<double>> g_tables;
  // h_tables[k-1]: h_k(a_k | l_1..l_k, a_1..a_{k-1}), k = 1..K.
  // Flat index: idx_lam(k) * |A_k| + a_k.
  std::vector<std::vector<double>> h_tables;
  long path_cap = 10'000'000;

  int K() const { return static_cast<int>(h_tables.size()); }
};

// A candidate nuisance pair (h-dagger, eta-dagger) as exact tables with the
// same indexing as the law.
struct NuisanceSet {
  std::vector<std::vector<double>> h_dag;    // shaped like h_tables
  std::vector<std::vector<double>> eta_dag;  // eta_dag[k-1] over idx_la(k)
};

struct EtaTables {
  std::vector<std::vector<double>> eta;  // eta[k-1]: eta_k over idx_la(k)
  std::vector<std::vector<double>> y;    // y[k-1]: y_{k,eta_k} over idx_lam(k)
  double theta = 0.0;                    // from the backward recursion
};

enum class DriftFlavor { DR, MR };
struct DriftTerm {
  int j = 0;  // treatment-model index (j == k on the diagonal)
  int k = 0;  // outcome-model index
  double value = 0.0;
};
struct DriftReport {
  DriftFlavor flavor = DriftFlavor::MR;
  std::vector<DriftTerm> terms;
  double total = 0.0;
};

// Exact evaluation engine over one (law, spec) pair. Construction validates
// the tables, checks positivity against the regime and caches psi and the
// regime densities over the whole path space.
class Oracle {
 public:
  Oracle(const DiscreteLaw& law, const ProblemSpec& spec);

  const DiscreteLaw& law() const { return law_; }
  const ProblemSpec& spec() const { return spec_; }
  int K() const { return spec_.K; }

  // ---- sizes and indexing -------------------------------------------------
  int nl(int k) const { return static_cast<int>(law_.l_supports[k - 1].size()); }
  int na(int k) const {
    return static_cast<int>(spec_.treatment_spaces[k - 1].size());
  }
  int a_code(int k, int a_idx) const { return spec_.treatment_spaces[k - 1][a_idx]; }
  int a_index(int k, int code) const;
  int l_index(int k, const Vec& value) const;

  long size_la(int k) const;   // number of (l_1..l_k, a_1..a_k) histories
  long size_lam(int k) const;  // number of (l_1..l_k, a_1..a_{k-1}) histories
  long idx_la(const std::vector<int>& li, const std::vector<int>& ai, int k) const;
  long idx_lam(const std::vector<int>& li, const std::vector<int>& ai, int k) const;

  // Enumerates all (l_1..l_k, a_1..a_k) resp. (l_1..l_k, a_1..a_{k-1}).
  using HistFn = std::function<void(const std::vector<int>& li, const std::vector<int>& ai)>;
  void for_each_la(int k, const HistFn& fn) const;
  void for_each_lam(int k, const HistFn& fn) const;

  // ---- pointwise table reads ----------------------------------------------
  double g_at(int k, const std::vector<int>& li, const std::vector<int>& ai) const;
  double h_at(int k, const std::vector<int>& li, const std::vector<int>& ai) const;
  double hstar_at(int k, const std::vector<int>& li, const std::vector<int>& ai,
                  int a_idx) const;
  double psi_at(const std::vector<int>& li, const std::vector<int>& ai) const;

  double gw_prefix(const std::vector<int>& li, const std::vector<int>& ai, int k) const;
  double hw_prefix(const std::vector<int>& li, const std::vector<int>& ai, int k) const;
  double pistar_prefix(const std::vector<int>& li, const std::vector<int>& ai,
                       int k) const;

  Trajectory make_traj(const std::vector<int>& li, const std::vector<int>& ai) const;

  // ---- exact functionals ----------------------------------------------------
  double g_formula_theta() const;     // direct path sum
  double ipw_identity_value() const;  // E_gh[psi pi*K / piK], checks positivity
  const EtaTables& eta_true() const { return eta_; }

  // d^g(eta-dagger) and the mean E[y_{1,eta_1}] it is compared against.
  double d_g(const std::vector<std::vector<double>>& eta_dag) const;
  double mean_y1(const std::vector<std::vector<double>>& eta_dag) const;

  double bias_a(const NuisanceSet& ns) const;
  double bias_b(const NuisanceSet& ns) const;
  double bias_c(const NuisanceSet& ns) const;
  // Conditional version of bias_a given (l_1..l_j, a_1..a_j).
  double conditional_bias_a_j(const NuisanceSet& ns, int j, const std::vector<int>& li,
                              const std::vector<int>& ai) const;
  // w[k-1] = E[Q_{k+1}(h-dagger, eta-dagger) | l_1..l_k, a_1..a_k].
  std::vector<std::vector<double>> w_tables(const NuisanceSet& ns) const;
  double expected_Q1(const NuisanceSet& ns) const;
  DriftReport drift_expected(const NuisanceSet& ns, DriftFlavor flavor) const;

  // ---- data ---------------------------------------------------------------
  Dataset sample(int n, std::uint64_t seed) const;
  double q_recursion(const Trajectory& traj, const NuisanceSet& ns, int j) const;
  NuisanceFns nuisance_fns(const NuisanceSet& ns) const;

 private:
  void validate_tables() const;
  void validate_positivity() const;
  void build_caches();
  EtaTables compute_eta_true() const;

  const DiscreteLaw& law_;
  const ProblemSpec& spec_;
  std::vector<std::vector<double>> hstar_;  // like h_tables, regime densities
  std::vector<double> psi_;                 // over idx_lam(K+1)
  EtaTables eta_;
};

NuisanceSet oracle_nuisance(const Oracle& oc);
// eta-dagger = eta^g + U(-0.3, 0.3) noise; h-dagger proportional to
// h * exp(U(-0.5, 0.5)), renormalized. Zero cells stay zero, so the
// dagger set inherits the law's positivity pattern.
NuisanceSet random_nuisance(const Oracle& oc, std::uint64_t seed);

// Plug-in theta with empirical conditional frequency tables on declared
// supports. Throws when a conditioning cell required on a positive-regime
// path was never observed.
double empirical_mle_theta(const Dataset& ds, const ProblemSpec& spec,
                           const std::vector<std::vector<Vec>>& l_supports);

}  // namespace gmr

#endif
