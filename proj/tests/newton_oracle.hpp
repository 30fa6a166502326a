#ifndef GMR_TESTS_NEWTON_ORACLE_HPP
#define GMR_TESTS_NEWTON_ORACLE_HPP

// Independent dense Newton maximizer of the weighted logistic log-likelihood.
// Deliberately separate from the library IRLS path: full gradient/Hessian
// assembly, plain solve, fixed iteration budget.

#include <Eigen/Dense>
#include <cmath>

namespace testing {

inline Eigen::VectorXd newton_logistic_mle(const Eigen::MatrixXd& X,
                                           const Eigen::VectorXd& y,
                                           const Eigen::VectorXd& w,
                                           const Eigen::VectorXd& off) {
  const Eigen::Index n = X.rows(), p = X.cols();
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  for (int it = 0; it < 200; ++it) {
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(p);
    Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(p, p);
    for (Eigen::Index i = 0; i < n; ++i) {
      double lp = X.row(i).dot(beta) + off[i];
      double mu = 1.0 / (1.0 + std::exp(-lp));
      grad += w[i] * (y[i] - mu) * X.row(i).transpose();
      hess += w[i] * mu * (1.0 - mu) * X.row(i).transpose() * X.row(i);
    }
    Eigen::VectorXd step = hess.ldlt().solve(grad);
    beta += step;
    if (step.lpNorm<Eigen::Infinity>() < 1e-13) break;
  }
  return beta;
}

}  // namespace testing

#endif
