#ifndef GMR_CROSSFIT_HPP
#define GMR_CROSSFIT_HPP

#include <array>
#include <memory>

#include "gmr/discrete_law.hpp"
#include "gmr/estimators.hpp"

namespace gmr {

// Balanced uniform random partition of {0..n-1} into U splits; sizes differ
// by at most one and the plan is a pure function of the seed.
struct SplitPlan {
  int U = 0;
  std::vector<int> assign;  // per row, values 0..U-1
  std::uint64_t seed = 0;
  std::vector<int> split_rows(int u) const;
  std::vector<int> train_rows(int u) const;  // complement of split u
};
SplitPlan make_splits(int n, int U, std::uint64_t seed);

// A fitted nuisance function bound to its timepoint, carrying the rows it was
// trained on so leakage can be asserted at evaluation sites.
struct FittedFn {
  std::function<double(int a_code, const Trajectory&)> f;
  std::shared_ptr<const std::vector<int>> trained_rows;  // sorted
  int flags = 0;  // learner-specific notes (fallbacks etc.)
  bool trained_on(int row) const;
};

// Pluggable learner: conditional means of an arbitrary per-row outcome given
// the depth-k history, and conditional treatment densities.
class Learner {
 public:
  virtual ~Learner() = default;
  // outcome is indexed by global row id; only `rows` enter the fit.
  virtual FittedFn fit_conditional_mean(const Dataset& ds, const ProblemSpec& spec,
                                        const std::vector<int>& rows,
                                        const std::vector<double>& outcome,
                                        int k) const = 0;
  virtual FittedFn fit_conditional_density(const Dataset& ds, const ProblemSpec& spec,
                                           const std::vector<int>& rows, int k) const = 0;
};

// Series learner: least squares (or logistic, for densities) on a basis over
// the continuous components of the history, fully interacted with the
// treatment combination, with the basis size chosen by V-fold cross-validation
// (ties resolved toward the smaller candidate).
struct SeriesLearnerConfig {
  enum class Basis { polynomial, histogram, pwlinear };
  Basis basis = Basis::polynomial;
  std::vector<int> m_grid = {1, 2, 3};  // degree / bins / interior knots
  int V = 5;
  std::uint64_t cv_seed = 0;
  double ridge = 1e-8;  // stabilizes saturated candidates inside CV folds
};

class SeriesLearner : public Learner {
 public:
  explicit SeriesLearner(SeriesLearnerConfig cfg);
  FittedFn fit_conditional_mean(const Dataset& ds, const ProblemSpec& spec,
                                const std::vector<int>& rows,
                                const std::vector<double>& outcome,
                                int k) const override;
  FittedFn fit_conditional_density(const Dataset& ds, const ProblemSpec& spec,
                                   const std::vector<int>& rows, int k) const override;

 private:
  SeriesLearnerConfig cfg_;
};

// Test/benchmark learner that returns the exact law quantities regardless of
// the supplied rows.
class OracleLearner : public Learner {
 public:
  explicit OracleLearner(const Oracle& oc) : oc_(oc) {}
  FittedFn fit_conditional_mean(const Dataset& ds, const ProblemSpec& spec,
                                const std::vector<int>& rows,
                                const std::vector<double>& outcome,
                                int k) const override;
  FittedFn fit_conditional_density(const Dataset& ds, const ProblemSpec& spec,
                                   const std::vector<int>& rows, int k) const override;

 private:
  const Oracle& oc_;
};

// Cross-fit machine-learning estimation: per split, nuisances are trained on
// the complement, the clever-covariate and intercept refits run on the
// validation rows, and each estimate is the mean of its split estimates.
struct CrossFitResult {
  // ids: dr_cf, dr_cf_bang, dr_cf_reg, mr_cf, mr_cf_bang, mr_cf_reg
  std::array<EstimateReport, 6> reports;
  // one fitted nuisance table set per split (h then eta, MR flavor), kept so
  // drift diagnostics can be evaluated against an exact law
  std::vector<std::vector<FittedFn>> h_per_split;
  std::vector<std::vector<FittedFn>> eta_mr_per_split;
  std::vector<std::vector<FittedFn>> eta_dr_per_split;
};
CrossFitResult cross_fit_six(const Dataset& ds, const ProblemSpec& spec,
                             const Learner& eta_learner, const Learner& h_learner,
                             Link link, int U, std::uint64_t seed);

// Appendix-style nested cross-fitting: nuisances themselves are fit on
// disjoint second-layer splits (sizes U then K)...
EstimateReport two_layer(const Dataset& ds, const ProblemSpec& spec,
                         const Learner& eta_learner, const Learner& h_learner, int U,
                         std::uint64_t seed);
// ...or on a U-ary tree with per-level averaging of the deeper fits.
EstimateReport multi_layer(const Dataset& ds, const ProblemSpec& spec,
                           const Learner& eta_learner, const Learner& h_learner, int U,
                           std::uint64_t seed);

// Exact per-term drift of fitted nuisances, by tabulating them on the law and
// delegating to the oracle's drift formulas. Reports each split's table and
// the across-split average.
struct DriftDiagnostic {
  std::vector<DriftReport> per_split;
  DriftReport average;
};
NuisanceSet tabulate_nuisances(const Oracle& oc, const std::vector<FittedFn>& etas,
                               const std::vector<FittedFn>& hs);
DriftDiagnostic drift_diagnostic(const Oracle& oc,
                                 const std::vector<NuisanceSet>& fitted_per_split,
                                 DriftFlavor flavor);

}  // namespace gmr

#endif
