#include "placekit/experiment.hpp"

#include "placekit/checkpoint.hpp"
#include "placekit/errors.hpp"
#include "placekit/parallel.hpp"
#include "placekit/random.hpp"

#include <filesystem>
#include <random>

namespace placekit {

std::vector<int> choose_stations(const SyntheticEnvironment &env, int count,
                                 std::uint64_t seed) {
  std::vector<int> land = lattice_cells(env, 1, true);
  if (count < 0 || count > static_cast<int>(land.size()))
    throw InvalidConfig("cannot place " + std::to_string(count) + " stations on " +
                        std::to_string(land.size()) + " land cells");
  std::mt19937_64 rng(seed);
  for (int i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i),
                                                    land.size() - 1);
    std::swap(land[static_cast<std::size_t>(i)], land[pick(rng)]);
  }
  land.resize(static_cast<std::size_t>(count));
  return land;
}

std::vector<int> spread_dates(const std::vector<int> &dates, int count) {
  if (dates.empty() || count < 1)
    throw InvalidConfig("need at least one date to choose from");
  if (count >= static_cast<int>(dates.size()))
    return dates;
  std::vector<int> out;
  const double step = static_cast<double>(dates.size()) / count;
  for (int i = 0; i < count; ++i)
    out.push_back(dates[static_cast<std::size_t>(std::floor(i * step))]);
  return out;
}

Locations cell_locations(const SyntheticEnvironment &env, const std::vector<int> &cells) {
  const Locations nodes = env.grid().nodes();
  Locations out(static_cast<Eigen::Index>(cells.size()), 2);
  for (std::size_t i = 0; i < cells.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = nodes.row(cells[i]);
  return out;
}

SearchSpace search_space(const SyntheticEnvironment &env, int stride) {
  SearchSpace s;
  s.cells = lattice_cells(env, stride, true);
  if (s.cells.empty())
    throw InvalidConfig("search lattice contains no land cells");
  s.locations = cell_locations(env, s.cells);
  return s;
}

PlacementProblem placement_problem(const Dataset &data, const std::vector<int> &dates,
                                   const std::vector<int> &stations, int stride) {
  PlacementProblem p;
  p.space = search_space(data.environment(), stride);
  p.stations = stations;
  for (int date : dates) {
    Task t = make_task(data, date, stations, p.space.cells);
    p.search_truth.push_back(*t.target_values);
    p.tasks.push_back(std::move(t));
  }
  return p;
}

GPFitResult fit_variant(const ExperimentConfig &cfg, const Dataset &data,
                        KernelVariant variant) {
  const auto id = static_cast<std::uint64_t>(variant);
  const std::vector<Task> train =
      fixed_tasks(data, data.split().train, cfg.gp.train_tasks,
                  derive_seed(cfg.gp.fit.seed, {id, 1}), cfg.sampling);
  std::vector<Task> validation;
  if (cfg.gp.validation_tasks > 0)
    validation = fixed_tasks(data, data.split().validation, cfg.gp.validation_tasks,
                             derive_seed(cfg.gp.fit.seed, {id, 2}), cfg.sampling);
  GPFitConfig fit = cfg.gp.fit;
  fit.seed = derive_seed(cfg.gp.fit.seed, {id, 3});
  return fit_gp(default_kernel_params(variant, cfg.gp.gibbs_per_side,
                                      cfg.gp.initial_lengthscale),
                train, validation, fit);
}

TrainResult train_neural_process(const ExperimentConfig &cfg, const Dataset &data,
                                 const std::function<void(const EpochRecord &)> &on_epoch) {
  NPModel init(cfg.np.arch, derive_seed(cfg.np.train.seed, {0x1417}));
  init.normalizer = data.normalizer();
  TrainResult r = np_train(init, data, data.split().train, data.split().validation,
                           cfg.np.train, on_epoch);
  r.model.normalizer = data.normalizer();
  return r;
}

std::vector<Task> sweep_tasks(const ExperimentConfig &cfg, const Dataset &data,
                              int n_context) {
  TaskSamplingConfig s;
  s.nc_min = s.nc_max = n_context;
  s.nt_min = s.nt_max = cfg.sweep.num_targets;
  return fixed_tasks(data, data.split().test, cfg.sweep.tasks_per_level,
                     derive_seed(cfg.environment.seed,
                                 {0x5733, static_cast<std::uint64_t>(n_context)}),
                     s);
}

std::unique_ptr<Predictor> load_model(const std::string &root, const std::string &name) {
  namespace fs = std::filesystem;
  if (name == "convgnp") {
    const fs::path path = fs::path(root) / "np" / "convgnp.npsp";
    if (!fs::exists(path))
      throw IoError("missing neural-process checkpoint " + path.string() +
                    " (run train-np first)");
    return std::make_unique<NPModel>(load_checkpoint(path.string()));
  }
  const KernelVariant v = parse_variant(name);
  const fs::path path = fs::path(root) / "gp" / (variant_name(v) + ".npsp");
  if (!fs::exists(path))
    throw IoError("missing GP checkpoint " + path.string() + " (run fit-gp first)");
  return std::make_unique<GPModel>(load_gp(path.string()));
}

PlanEvaluation evaluate_indices(const Predictor &model, const Dataset &data,
                                const std::vector<int> &dates, const PlacementProblem &problem,
                                const std::vector<int> &indices) {
  std::vector<int> placed;
  for (int i : indices)
    placed.push_back(problem.space.cells[static_cast<std::size_t>(i)]);
  return evaluate_plan(model, data, dates, problem.stations, placed, problem.space.cells,
                       data.normalizer());
}

} // namespace placekit
