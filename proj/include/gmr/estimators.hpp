#ifndef GMR_ESTIMATORS_HPP
#define GMR_ESTIMATORS_HPP

#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "gmr/glm.hpp"
#include "gmr/propensity.hpp"
#include "gmr/qforms.hpp"
#include "gmr/trajectory.hpp"

namespace gmr {

// Outcome-model design at timepoint k: s_k(a_1..a_{k-1}, a_k, l_1..l_k) with
// the treatment a_k supplied explicitly so pseudo-outcomes can average over
// the regime.
struct DesignSpec {
  int dim = 0;
  std::function<EVec(const Trajectory&, int a_k_code)> map;
};

// Shared configuration of the iterated-regression estimators: one design and
// one canonical link across timepoints. `nested` declares the sub-vector
// layout s_k = [b_k; s_{k-1}] with s_0 = 1 (so the constant sits in every
// design); the inverse-probability-weighted iterated regression requires it.
struct IceModelSet {
  std::vector<DesignSpec> s;  // size K
  Link link = Link::identity;
  bool nested = false;
  GlmOptions glm;
};

// Numeric spot check of the declared nesting layout on a handful of rows.
void check_nesting(const IceModelSet& models, const Dataset& ds,
                   const ProblemSpec& spec);

struct EstimateReport {
  std::string estimator;
  double estimate = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> per_split;
  nlohmann::json diagnostics = nlohmann::json::object();
  std::uint64_t seed = 0;
};

// ---- estimators that are not 2^K-robust -----------------------------------

EstimateReport estimate_ipw(const Dataset& ds, const ProblemSpec& spec,
                            const PropensityFit& pf);

EstimateReport estimate_ice(const Dataset& ds, const ProblemSpec& spec,
                            const IceModelSet& models);

struct WeightChoice {
  enum class Kind { Ones, InversePiHat, Custom };
  Kind kind = Kind::Ones;
  // Custom per-(row, k) multiplier on top of pi*^k.
  std::function<double(const Trajectory&, int k)> custom;
};

EstimateReport estimate_weighted_ice(const Dataset& ds, const ProblemSpec& spec,
                                     const IceModelSet& models, const WeightChoice& omega,
                                     const PropensityFit* pf = nullptr);

EstimateReport estimate_bang(const Dataset& ds, const ProblemSpec& spec,
                             const IceModelSet& models, const PropensityFit& pf);

EstimateReport estimate_greedy(const Dataset& ds, const ProblemSpec& spec,
                               const IceModelSet& models, const PropensityFit& pf);

// ---- the 2^K-multiply-robust family ----------------------------------------

EstimateReport estimate_mr(const Dataset& ds, const ProblemSpec& spec,
                           const IceModelSet& models, const PropensityFit& pf);

EstimateReport estimate_dr_plugin(const Dataset& ds, const ProblemSpec& spec,
                                  const IceModelSet& models, const PropensityFit& pf);

EstimateReport estimate_reg_mr(const Dataset& ds, const ProblemSpec& spec,
                               const IceModelSet& models, const PropensityFit& pf);

EstimateReport estimate_mr_greedy(const Dataset& ds, const ProblemSpec& spec,
                                  const IceModelSet& models, const PropensityFit& pf);

// Dispatch by catalog id; pf may be null for ids that do not need it.
EstimateReport run_estimator(const std::string& id, const Dataset& ds,
                             const ProblemSpec& spec, const IceModelSet& models,
                             const PropensityFit* pf);
std::vector<std::string> estimator_catalog();

}  // namespace gmr

#endif
