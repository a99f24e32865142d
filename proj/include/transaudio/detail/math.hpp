#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>

namespace transaudio::detail {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

inline Eigen::MatrixXd log_softmax_rows(const Eigen::MatrixXd& x) {
  Eigen::MatrixXd out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    const double lse = m + std::log((x.row(r).array() - m).exp().sum());
    out.row(r) = x.row(r).array() - lse;
  }
  return out;
}

inline Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& x) {
  return log_softmax_rows(x).array().exp().matrix();
}

inline bool all_finite(const Eigen::MatrixXd& m) { return m.allFinite(); }

}  // namespace transaudio::detail
