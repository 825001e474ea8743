#pragma once

#include "placekit/gp.hpp"
#include "placekit/neural_process.hpp"
#include "placekit/placement.hpp"
#include "placekit/tasks.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace placekit {

struct GPSection {
  std::vector<KernelVariant> variants{KernelVariant::EQ, KernelVariant::RQ,
                                      KernelVariant::Gibbs};
  int gibbs_per_side = 10;
  double initial_lengthscale = 0.3;
  int train_tasks = 50;
  int validation_tasks = 20;
  GPFitConfig fit;
};

struct NPSection {
  NPArchitecture arch;
  TrainConfig train;
};

struct SweepSection {
  std::vector<int> nc_ladder{0, 5, 10, 20, 50};
  int num_targets = 300;
  int tasks_per_level = 20;
  std::vector<std::string> models{"EQ", "Gibbs", "convgnp"};
};

struct PlacementSection {
  std::vector<AcquisitionKind> kinds{AcquisitionKind::DeltaVar,
                                     AcquisitionKind::ContextDist,
                                     AcquisitionKind::Random};
  std::string model = "convgnp";
  int K = 5;
  int num_dates = 3;        // J
  int search_stride = 2;
  int num_stations = 12;
  int eval_dates = 24;
  int random_seeds = 5;
  int bootstrap_resamples = 5000;
  std::uint64_t station_seed = 0;
};

struct ExperimentConfig {
  EnvironmentConfig environment;
  TaskSamplingConfig sampling;
  GPSection gp;
  NPSection np;
  SweepSection sweep;
  PlacementSection placement;
  std::string output_dir; // empty: use --out or PLACEKIT_OUT
  std::string source_text;

  /// Overrides every seed derived from the environment seed.
  void apply_seed(std::uint64_t seed);
};

/// Parses an INI-style `[section]` / `key = value` file. Unknown keys,
/// missing required keys (environment.seed) and out-of-range values raise
/// InvalidConfig naming the field; syntax errors name the line.
ExperimentConfig parse_config_text(const std::string &text,
                                   const std::string &origin = "<config>");
ExperimentConfig load_config(const std::string &path);

} // namespace placekit
