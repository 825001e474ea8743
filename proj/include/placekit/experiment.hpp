#pragma once

#include "placekit/config.hpp"
#include "placekit/gp.hpp"
#include "placekit/neural_process.hpp"
#include "placekit/placement.hpp"
#include "placekit/tasks.hpp"

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace placekit {

/// `count` distinct land cells drawn with the given seed, in draw order.
std::vector<int> choose_stations(const SyntheticEnvironment &env, int count,
                                 std::uint64_t seed);

/// `count` dates spread evenly over `dates` (all of them when count >= size).
std::vector<int> spread_dates(const std::vector<int> &dates, int count);

Locations cell_locations(const SyntheticEnvironment &env, const std::vector<int> &cells);

/// Search grid = target grid: land cells of the stride lattice.
struct SearchSpace {
  std::vector<int> cells;
  Locations locations;
};
SearchSpace search_space(const SyntheticEnvironment &env, int stride);

/// One task per date: stations as observations, the search space as targets
/// (with true values), plus the truth at the search sites.
struct PlacementProblem {
  SearchSpace space;
  std::vector<int> stations;
  std::vector<Task> tasks;
  std::vector<Eigen::VectorXd> search_truth;
};
PlacementProblem placement_problem(const Dataset &data, const std::vector<int> &dates,
                                   const std::vector<int> &stations, int stride);

/// Fits one GP variant on fixed tasks drawn from the training/validation
/// splits.
GPFitResult fit_variant(const ExperimentConfig &cfg, const Dataset &data,
                        KernelVariant variant);

/// Trains the neural process from its configured initialisation.
TrainResult train_neural_process(const ExperimentConfig &cfg, const Dataset &data,
                                 const std::function<void(const EpochRecord &)> &on_epoch = {});

/// Held-out tasks for one rung of the context-size ladder.
std::vector<Task> sweep_tasks(const ExperimentConfig &cfg, const Dataset &data, int n_context);

/// Loads "convgnp" or a GP variant name from the model directories under
/// `root`. Throws IoError when the checkpoint is missing.
std::unique_ptr<Predictor> load_model(const std::string &root, const std::string &name);

/// Plan evaluation on `dates` for the given placement indices into `space`.
PlanEvaluation evaluate_indices(const Predictor &model, const Dataset &data,
                                const std::vector<int> &dates, const PlacementProblem &problem,
                                const std::vector<int> &indices);

} // namespace placekit
