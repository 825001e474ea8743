#pragma once

#include <cmath>
#include <utility>

namespace placekit::kernel {

// Scalar covariance primitives shared by the ground-truth generator and the
// GP baselines. dx, dy are coordinate differences.

inline double eq(double variance, double l1, double l2, double dx, double dy) {
  return variance *
         std::exp(-0.5 * (dx * dx / (l1 * l1) + dy * dy / (l2 * l2)));
}

inline double rq(double variance, double l1, double l2, double alpha, double dx,
                 double dy) {
  const double r2 = dx * dx / (l1 * l1) + dy * dy / (l2 * l2);
  return variance * std::pow(1.0 + r2 / (2.0 * alpha), -alpha);
}

/// Gibbs kernel with per-point length scales (l1a, l2a) at x and (l1b, l2b)
/// at x'.
inline double gibbs(double variance, double l1a, double l2a, double l1b,
                    double l2b, double dx, double dy) {
  // Fixed operand order keeps k(x, x') == k(x', x) exactly under FMA contraction.
  if (l1a > l1b || (l1a == l1b && l2a > l2b)) {
    std::swap(l1a, l1b);
    std::swap(l2a, l2b);
  }
  const double s1 = l1a * l1a + l1b * l1b;
  const double s2 = l2a * l2a + l2b * l2b;
  const double prefactor = std::sqrt((2.0 * l1a * l1b / s1) * (2.0 * l2a * l2b / s2));
  return variance * prefactor * std::exp(-(dx * dx / s1 + dy * dy / s2));
}

} // namespace placekit::kernel
