#ifndef GMR_GLM_HPP
#define GMR_GLM_HPP

#include <Eigen/Dense>
#include <optional>

#include "gmr/common.hpp"

namespace gmr {

using Mat = Eigen::MatrixXd;
using EVec = Eigen::VectorXd;

// Canonical links. `mean` is the inverse-link (linear predictor -> mean),
// `linpred` its inverse, `mean_deriv` the derivative of `mean`.
enum class Link { identity, logit, log };

double link_mean(Link link, double lp);
double link_linpred(Link link, double m);
double link_mean_deriv(Link link, double lp);

// Outcome range of the mean function; used by the strict range policy.
bool link_range_contains(Link link, double y);

struct GlmOptions {
  double tol = 1e-10;        // sup-norm of the weight-normalized score
  int max_iter = 100;
  double ridge = 0.0;        // explicit ridge on the normalized score scale
  bool ridge_fallback = true;       // retry singular working designs with 1e-8
  bool strict_range = false;        // error when y leaves the link range
  double separation_norm = 1e4;     // coefficient norm flagged as separation
  std::optional<EVec> start;        // default: zero vector
};

struct GlmFit {
  EVec coef;
  Link link = Link::identity;
  bool converged = false;
  int iterations = 0;
  double final_score_norm = 0.0;
  bool ridge_fallback_used = false;
  bool separation_suspected = false;
};

// Weighted canonical-link GLM with offsets, fit by iteratively reweighted
// least squares (Newton with step halving on the quasi log-likelihood).
// Solves sum_i w_i x_i (y_i - mean(x_i'b + o_i)) / sum_i w_i = ridge * b.
// Rows with weight 0 drop out; at least one positive weight is required.
// With a bounded link and out-of-range y, the default policy solves the
// score equation anyway (quasi-likelihood); strict_range turns that into
// an error instead.
GlmFit fit_glm(const Mat& X, const EVec& y, const EVec& w, const EVec& offset,
               Link link, const GlmOptions& opts = GlmOptions());

// Single extension coefficient: solves sum_i w_i z_i (y_i - mean(o_i + b z_i)) = 0.
GlmFit fit_scalar_extension(const EVec& y, const EVec& offset, const EVec& z,
                            const EVec& w, Link link,
                            const GlmOptions& opts = GlmOptions());

double predict(const GlmFit& fit, const EVec& s, double offset = 0.0);

// Weight-normalized score sum_i w_i x_i (y_i - mean(lp_i)) / sum_i w_i,
// evaluated from scratch; tests use it to re-check fits independently of
// the solver loop.
EVec glm_score(const Mat& X, const EVec& y, const EVec& w, const EVec& offset,
               Link link, const EVec& coef);

}  // namespace gmr

#endif
