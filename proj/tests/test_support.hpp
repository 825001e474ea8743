#pragma once

#include "placekit/tasks.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <random>

namespace testing {

inline Eigen::MatrixXd random_matrix(std::mt19937_64 &rng, Eigen::Index rows,
                                     Eigen::Index cols, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i)
    m.data()[i] = n(rng);
  return m;
}

inline Eigen::VectorXd random_vector(std::mt19937_64 &rng, Eigen::Index n,
                                     double scale = 1.0) {
  return random_matrix(rng, n, 1, scale);
}

inline placekit::Locations random_locations(std::mt19937_64 &rng, Eigen::Index n,
                                            double half_width = 1.0) {
  std::uniform_real_distribution<double> u(-half_width, half_width);
  placekit::Locations x(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    x(i, 0) = u(rng);
    x(i, 1) = u(rng);
  }
  return x;
}

inline Eigen::MatrixXd random_spd(std::mt19937_64 &rng, Eigen::Index n) {
  const Eigen::MatrixXd a = random_matrix(rng, n, n);
  Eigen::MatrixXd s = a * a.transpose();
  s.diagonal().array() += 0.5;
  return s;
}

inline double rel_err(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Small environment shared by tests; built once per process.
inline const placekit::SyntheticEnvironment &small_env() {
  static const placekit::SyntheticEnvironment env = [] {
    placekit::EnvironmentConfig c;
    c.grid_size = 16;
    c.years = 1;
    c.seed = 3;
    return placekit::build_environment(c);
  }();
  return env;
}

inline const placekit::Dataset &small_data() {
  static const placekit::Dataset data(small_env());
  return data;
}

} // namespace testing
