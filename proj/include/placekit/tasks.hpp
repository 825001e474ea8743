#pragma once

#include "placekit/core_math.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <utility>
#include <vector>

namespace placekit {

/// N x 2 matrix of normalized (x1, x2) coordinates in [-1, 1]^2.
using Locations = Eigen::Matrix<double, Eigen::Dynamic, 2>;
using Location2D = Eigen::RowVector2d;

/// Regular grid over [-1, 1]^2. Node (r, c) sits at
/// x1 = -1 + 2c / (cols - 1), x2 = -1 + 2r / (rows - 1); nodes are
/// enumerated row-major.
struct GridSpec {
  int rows = 0;
  int cols = 0;

  Location2D node(int r, int c) const;
  Locations nodes() const;
  int size() const { return rows * cols; }
  friend bool operator==(const GridSpec &, const GridSpec &) = default;
};

/// One data stream: off-grid points, or a full grid when `grid` is set.
struct ContextSet {
  Locations locations;
  Eigen::MatrixXd values; // rows = points, cols = channels
  std::optional<GridSpec> grid;

  Eigen::Index size() const { return locations.rows(); }
  Eigen::Index channels() const { return values.cols(); }
  void validate() const;
};

/// A prediction problem for one date. contexts[0] holds observations of the
/// target variable, contexts[1] the auxiliary grid.
struct Task {
  int date = 0;
  std::vector<ContextSet> contexts;
  Locations target_locations;
  std::optional<Eigen::VectorXd> target_values;

  const ContextSet &observations() const { return contexts.at(0); }
  ContextSet &observations() { return contexts.at(0); }
  void validate() const;
};

/// Appends one scalar observation to the observation context set.
Task with_observation(const Task &task, const Location2D &x, double y);

struct EnvironmentConfig {
  int grid_size = 32;
  double base_variance = 1.0;
  double seasonal_amplitude = 0.6;
  double lengthscale_long = 0.4;
  double lengthscale_short = 0.09;
  double anisotropy = 0.75;       // l2(x) = anisotropy * l1(x)
  double coast_width = 0.25;      // width of the short-scale band
  double coast_offset = 0.1;      // mean x2 position of the boundary
  double coast_wave_amplitude = 0.25;
  double coast_wave_frequency = 1.5;
  int years = 2;
  double obs_noise_std = 0.0;     // optional noise on context observations
  std::uint64_t seed = 0;

  void validate() const;
};

/// Immutable ground-truth generator: a Gibbs-kernel GP over a G x G grid
/// whose variance varies with the day of year, plus static auxiliary fields.
class SyntheticEnvironment {
public:
  const EnvironmentConfig &config() const { return config_; }
  const GridSpec &grid() const { return grid_; }
  int num_dates() const { return 365 * config_.years; }

  /// Static fields over the grid, row-major (length G^2).
  const Eigen::VectorXd &mask() const { return mask_; }
  const Eigen::VectorXd &elevation() const { return elevation_; }

  /// The true length-scale fields l1(x), l2(x).
  std::pair<double, double> lengthscale(const Location2D &x) const;
  /// Weight in [0, 1] of the short-scale band around the mask boundary.
  double short_scale_weight(const Location2D &x) const;
  bool is_land(const Location2D &x) const;

  /// Variance of the field on date tau.
  double variance_on(int date) const;

  /// Unit-variance Gibbs covariance over the grid and its Cholesky factor.
  const Eigen::MatrixXd &unit_cov_factor() const { return unit_factor_; }

  friend SyntheticEnvironment build_environment(const EnvironmentConfig &);

private:
  EnvironmentConfig config_;
  GridSpec grid_;
  Eigen::VectorXd mask_;
  Eigen::VectorXd elevation_;
  Eigen::MatrixXd unit_factor_;
};

SyntheticEnvironment build_environment(const EnvironmentConfig &config);

/// Gibbs covariance between two sets of points under the environment's true
/// length-scale fields and the given variance.
Eigen::MatrixXd environment_covariance(const SyntheticEnvironment &env,
                                       const Locations &a, const Locations &b,
                                       double variance);

/// One draw of the field on `date` (length G^2, row-major).
Eigen::VectorXd realize_field(const SyntheticEnvironment &env, int date,
                              std::uint64_t seed);

/// The canonical ground truth for `date`, seeded from the environment seed.
Eigen::VectorXd truth_field(const SyntheticEnvironment &env, int date);

/// The six-channel auxiliary grid: elevation, mask, cos(doy), sin(doy), x1, x2.
ContextSet auxiliary_context(const SyntheticEnvironment &env, int date);

struct Normalizer {
  double mean = 0.0;
  double std = 1.0;
};

Normalizer fit_normalizer(const Eigen::VectorXd &values);
Eigen::VectorXd normalize(const Eigen::VectorXd &values, const Normalizer &n);
Eigen::VectorXd denormalize(const Eigen::VectorXd &values, const Normalizer &n);

struct DateSplit {
  std::vector<int> train;
  std::vector<int> validation;
  std::vector<int> test;
};

/// 60 / 20 / 20 split by date index.
DateSplit split_dates(int num_dates);

/// Truth fields for every date, normalized with statistics of the training
/// split.
class Dataset {
public:
  explicit Dataset(const SyntheticEnvironment &env);

  const SyntheticEnvironment &environment() const { return *env_; }
  const Normalizer &normalizer() const { return normalizer_; }
  const DateSplit &split() const { return split_; }
  /// Normalized field for `date` (length G^2).
  const Eigen::VectorXd &field(int date) const { return fields_.at(date); }

private:
  const SyntheticEnvironment *env_;
  Normalizer normalizer_;
  DateSplit split_;
  std::vector<Eigen::VectorXd> fields_;
};

struct TaskSamplingConfig {
  int nc_min = 3;
  int nc_max = 50;
  int nt_min = 200;
  int nt_max = 400;
};

/// Random task: N_c ~ U{nc_min..nc_max} observation cells and
/// N_t ~ U{nt_min..nt_max} target cells, each drawn without replacement.
Task sample_task(const Dataset &data, int date, std::mt19937_64 &rng,
                 const TaskSamplingConfig &cfg);

/// Task with observations at `context_cells` and targets at `target_cells`
/// (grid indices), values read from the normalized truth of `date`.
Task make_task(const Dataset &data, int date, const std::vector<int> &context_cells,
               const std::vector<int> &target_cells);

/// Grid cells with indices on a regular sub-lattice (every `stride`-th row and
/// column), optionally restricted to land.
std::vector<int> lattice_cells(const SyntheticEnvironment &env, int stride,
                               bool land_only);

/// Writes a task as CSV with columns set_id, x1, x2, c0..c{k-1}.
void write_task_csv(std::ostream &os, const Task &task);

} // namespace placekit
