#ifndef GMR_PROJECTION_HPP
#define GMR_PROJECTION_HPP

#include "gmr/discrete_law.hpp"

namespace gmr {

// Finite-dimensional population least-squares projections under a discrete
// law: Pi^j maps (depth-j+1 measurable) variables onto the span of a declared
// basis over (a_1..a_j, l_1..l_j), with expectations taken exactly. Used to
// realize the linear-operator identities behind the cross-fit drift analysis
// deterministically.
struct ProjectionBasis {
  // basis[j-1]: functions over the depth-j history (read l_1..l_j, a_1..a_j)
  std::vector<std::vector<std::function<double(const Trajectory&)>>> basis;
};

class PopulationProjection {
 public:
  PopulationProjection(const Oracle& oc, const ProjectionBasis& basis);

  const Oracle& oracle() const { return oc_; }
  int dim(int j) const { return static_cast<int>(btab_[static_cast<std::size_t>(j) - 1].cols()); }

  // Least-squares coefficients of a variable against basis j; the overloads
  // take tables over (l_1..l_j, a_1..a_j) resp. (l_1..l_{j+1}, a_1..a_j).
  EVec coef_la(int j, const std::vector<double>& f_la) const;
  EVec coef_lam(int j, const std::vector<double>& f_lam) const;
  // Projection realized as a table over (l_1..l_j, a_1..a_j).
  std::vector<double> project_la(int j, const std::vector<double>& f_la) const;
  std::vector<double> project_lam(int j, const std::vector<double>& f_lam) const;

  // y-type average: given eta over depth-(j+1) histories, returns
  // sum_a h*_{j+1}(a) eta(a, .) over (l_1..l_{j+1}, a_1..a_j).
  std::vector<double> y_table(int j, const std::vector<double>& eta_la_j1) const;

  // E[(h*_{j+1}/h_{j+1}) f | a_1..a_j, l_1..l_{j+1}] for f over depth j+1.
  std::vector<double> dr_inner(int j, const std::vector<double>& f_la_j1) const;
  // E[nabla_{j,u} f | a_1..a_j, l_1..l_{j+1}] for f over depth u, where
  // nabla carries the dagger-weighted density contrasts between j+1 and u.
  std::vector<double> mr_nabla_inner(int j, int u,
                                     const std::vector<std::vector<double>>& h_dag,
                                     const std::vector<double>& f_la_u) const;

  // E_p[(pi*^{k-1}/pidag^{k-1})(h*_k/h_k - h*_k/hdag_k) f] for f over depth k;
  // l1 >= 0 conditions on that L_1 cell.
  double contrast_term(int k, const std::vector<std::vector<double>>& h_dag,
                       const std::vector<double>& f_la_k, int l1 = -1) const;

  // The projection-limit objects of the drift analysis, for a given dagger
  // density set: plain iterated projections (dr), their recursive plug-in
  // counterparts (dr_hat), the Q-recursion projections (mr_tilde), and the
  // decoupled limits (mr), which differ from dr only by an exactly-vanishing
  // centered projection (kept as a diagnostic).
  struct Objects {
    std::vector<std::vector<double>> eta_dr, eta_dr_hat, eta_mr_tilde, eta_mr;
    std::vector<std::vector<double>> w;  // E[Q_{k+1}(hdag, eta_mr_tilde)|depth k]
    double max_centered_coef = 0.0;      // sup over j of the centered projection
  };
  Objects build_objects(const std::vector<std::vector<double>>& h_dag) const;

 private:
  const Oracle& oc_;
  std::vector<Mat> btab_;   // per j: history x dim basis values over LA(j)
  std::vector<Mat> minv_;   // per j: inverse Gram matrix under the law
};

}  // namespace gmr

#endif
