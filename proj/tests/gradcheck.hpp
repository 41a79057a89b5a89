#pragma once

#include <Eigen/Dense>
#include <functional>

namespace testing {

// ||analytic - central difference|| / max(||analytic|| + ||numeric||, 1e-12).
inline double gradient_relative_error(const std::function<double(const Eigen::VectorXd&)>& loss,
                                      const Eigen::VectorXd& analytic, const Eigen::VectorXd& theta, double h = 1e-6) {
  Eigen::VectorXd numeric(theta.size());
  Eigen::VectorXd probe = theta;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    probe(i) = theta(i) + h;
    const double up = loss(probe);
    probe(i) = theta(i) - h;
    const double down = loss(probe);
    probe(i) = theta(i);
    numeric(i) = (up - down) / (2.0 * h);
  }
  return (analytic - numeric).norm() / std::max(analytic.norm() + numeric.norm(), 1e-12);
}

}  // namespace testing
