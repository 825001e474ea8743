#include "placekit/tasks.hpp"

#include "placekit/csv.hpp"
#include "placekit/errors.hpp"
#include "placekit/kernels.hpp"
#include "placekit/random.hpp"

#include <cmath>
#include <numbers>
#include <ostream>
#include <string>

namespace placekit {

Location2D GridSpec::node(int r, int c) const {
  const double x1 = cols > 1 ? -1.0 + 2.0 * c / (cols - 1) : 0.0;
  const double x2 = rows > 1 ? -1.0 + 2.0 * r / (rows - 1) : 0.0;
  return Location2D(x1, x2);
}

Locations GridSpec::nodes() const {
  Locations out(size(), 2);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      out.row(r * cols + c) = node(r, c);
  return out;
}

void ContextSet::validate() const {
  if (locations.rows() != values.rows())
    throw ShapeMismatch("context set has " + std::to_string(locations.rows()) +
                        " locations but " + std::to_string(values.rows()) +
                        " value rows");
  if (grid && grid->size() != locations.rows())
    throw ShapeMismatch("grid context set size does not match its grid");
}

void Task::validate() const {
  if (contexts.empty())
    throw ShapeMismatch("task has no context sets");
  for (const auto &c : contexts)
    c.validate();
  if (target_values && target_values->size() != target_locations.rows())
    throw ShapeMismatch("target values and locations differ in length");
}

Task with_observation(const Task &task, const Location2D &x, double y) {
  Task out = task;
  ContextSet &obs = out.observations();
  const Eigen::Index n = obs.size();
  Locations locs(n + 1, 2);
  locs.topRows(n) = obs.locations;
  locs.row(n) = x;
  Eigen::MatrixXd vals(n + 1, std::max<Eigen::Index>(obs.channels(), 1));
  if (n > 0)
    vals.topRows(n) = obs.values;
  vals.row(n).setConstant(y);
  obs.locations = std::move(locs);
  obs.values = std::move(vals);
  return out;
}

void EnvironmentConfig::validate() const {
  if (grid_size < 8)
    throw InvalidConfig("grid_size must be >= 8, got " + std::to_string(grid_size));
  if (!(base_variance > 0.0) || !std::isfinite(base_variance))
    throw InvalidConfig("base_variance must be positive");
  if (!(std::abs(seasonal_amplitude) < 1.0))
    throw InvalidConfig("seasonal_amplitude must lie in (-1, 1)");
  if (!(lengthscale_long > 0.0) || !(lengthscale_short > 0.0) ||
      lengthscale_short > lengthscale_long)
    throw InvalidConfig("need 0 < lengthscale_short <= lengthscale_long");
  if (!(anisotropy > 0.0) || !(coast_width > 0.0))
    throw InvalidConfig("anisotropy and coast_width must be positive");
  if (years < 1)
    throw InvalidConfig("years must be >= 1");
  if (!(obs_noise_std >= 0.0))
    throw InvalidConfig("obs_noise_std must be non-negative");
  for (double v : {coast_offset, coast_wave_amplitude, coast_wave_frequency})
    if (!std::isfinite(v))
      throw InvalidConfig("coast parameters must be finite");
}

namespace {

double coast_distance(const EnvironmentConfig &c, const Location2D &x) {
  const double boundary =
      c.coast_offset + c.coast_wave_amplitude *
                           std::sin(std::numbers::pi * c.coast_wave_frequency * x(0));
  return x(1) - boundary;
}

} // namespace

double SyntheticEnvironment::short_scale_weight(const Location2D &x) const {
  const double d = coast_distance(config_, x);
  return std::exp(-0.5 * d * d / (config_.coast_width * config_.coast_width));
}

bool SyntheticEnvironment::is_land(const Location2D &x) const {
  return coast_distance(config_, x) < 0.0;
}

std::pair<double, double>
SyntheticEnvironment::lengthscale(const Location2D &x) const {
  const double w = short_scale_weight(x);
  const double l1 = config_.lengthscale_long -
                    (config_.lengthscale_long - config_.lengthscale_short) * w;
  return {l1, config_.anisotropy * l1};
}

double SyntheticEnvironment::variance_on(int date) const {
  return config_.base_variance *
         (1.0 + config_.seasonal_amplitude *
                    std::sin(2.0 * std::numbers::pi * date / 365.0));
}

Eigen::MatrixXd environment_covariance(const SyntheticEnvironment &env,
                                       const Locations &a, const Locations &b,
                                       double variance) {
  std::vector<std::pair<double, double>> la(a.rows()), lb(b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    la[i] = env.lengthscale(a.row(i));
  for (Eigen::Index j = 0; j < b.rows(); ++j)
    lb[j] = env.lengthscale(b.row(j));
  Eigen::MatrixXd K(a.rows(), b.rows());
  for (Eigen::Index j = 0; j < b.rows(); ++j)
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      K(i, j) = kernel::gibbs(variance, la[i].first, la[i].second, lb[j].first,
                              lb[j].second, a(i, 0) - b(j, 0), a(i, 1) - b(j, 1));
  return K;
}

SyntheticEnvironment build_environment(const EnvironmentConfig &config) {
  config.validate();
  SyntheticEnvironment env;
  env.config_ = config;
  env.grid_ = GridSpec{config.grid_size, config.grid_size};
  const Locations nodes = env.grid_.nodes();
  const Eigen::Index n = nodes.rows();

  env.mask_.resize(n);
  for (Eigen::Index i = 0; i < n; ++i)
    env.mask_(i) = env.is_land(nodes.row(i)) ? 1.0 : 0.0;

  // Elevation: a smooth random-feature field over land, zero over the ocean,
  // rescaled to [0, 1].
  std::mt19937_64 rng(derive_seed(config.seed, {0xE1E7}));
  std::normal_distribution<double> normal(0.0, 1.0 / 0.4);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  constexpr int kFeatures = 16;
  Eigen::VectorXd raw = Eigen::VectorXd::Zero(n);
  for (int k = 0; k < kFeatures; ++k) {
    const double w1 = normal(rng), w2 = normal(rng), p = phase(rng);
    for (Eigen::Index i = 0; i < n; ++i)
      raw(i) += std::cos(w1 * nodes(i, 0) + w2 * nodes(i, 1) + p);
  }
  raw /= std::sqrt(static_cast<double>(kFeatures));
  const double lo = raw.minCoeff(), hi = raw.maxCoeff();
  env.elevation_ = env.mask_.cwiseProduct(
      (0.3 + 0.7 * (raw.array() - lo) / (hi - lo + 1e-300)).matrix());
  if (env.elevation_.maxCoeff() > 0.0)
    env.elevation_ /= env.elevation_.maxCoeff();

  const Eigen::MatrixXd K = environment_covariance(env, nodes, nodes, 1.0);
  env.unit_factor_ = cholesky_psd(K);
  return env;
}

Eigen::VectorXd realize_field(const SyntheticEnvironment &env, int date,
                              std::uint64_t seed) {
  if (date < 0 || date >= env.num_dates())
    throw InvalidConfig("date " + std::to_string(date) + " outside [0, " +
                        std::to_string(env.num_dates()) + ")");
  const Eigen::MatrixXd draw = sample_mvn_factored(
      Eigen::VectorXd::Zero(env.grid().size()), env.unit_cov_factor(), seed, 1);
  return draw.row(0).transpose() * std::sqrt(env.variance_on(date));
}

Eigen::VectorXd truth_field(const SyntheticEnvironment &env, int date) {
  return realize_field(env, date,
                       derive_seed(env.config().seed, {0x7207, std::uint64_t(date)}));
}

ContextSet auxiliary_context(const SyntheticEnvironment &env, int date) {
  ContextSet aux;
  aux.grid = env.grid();
  aux.locations = env.grid().nodes();
  const Eigen::Index n = aux.locations.rows();
  const double angle = 2.0 * std::numbers::pi * ((date % 365 + 365) % 365) / 365.0;
  aux.values.resize(n, 6);
  aux.values.col(0) = env.elevation();
  aux.values.col(1) = env.mask();
  aux.values.col(2).setConstant(std::cos(angle));
  aux.values.col(3).setConstant(std::sin(angle));
  aux.values.col(4) = aux.locations.col(0);
  aux.values.col(5) = aux.locations.col(1);
  return aux;
}

Normalizer fit_normalizer(const Eigen::VectorXd &values) {
  if (values.size() == 0)
    throw InvalidConfig("cannot fit a normalizer on no values");
  Normalizer n;
  n.mean = values.mean();
  n.std = std::sqrt((values.array() - n.mean).square().mean());
  if (!(n.std > 0.0))
    throw InvalidConfig("values have zero spread");
  return n;
}

Eigen::VectorXd normalize(const Eigen::VectorXd &values, const Normalizer &n) {
  if (!(n.std > 0.0))
    throw InvalidConfig("normalizer std must be positive");
  return ((values.array() - n.mean) / n.std).matrix();
}

Eigen::VectorXd denormalize(const Eigen::VectorXd &values, const Normalizer &n) {
  if (!(n.std > 0.0))
    throw InvalidConfig("normalizer std must be positive");
  return (values.array() * n.std + n.mean).matrix();
}

DateSplit split_dates(int num_dates) {
  DateSplit s;
  const int train_end = (num_dates * 6) / 10;
  const int val_end = (num_dates * 8) / 10;
  for (int d = 0; d < num_dates; ++d) {
    if (d < train_end)
      s.train.push_back(d);
    else if (d < val_end)
      s.validation.push_back(d);
    else
      s.test.push_back(d);
  }
  return s;
}

Dataset::Dataset(const SyntheticEnvironment &env)
    : env_(&env), split_(split_dates(env.num_dates())) {
  fields_.reserve(env.num_dates());
  for (int d = 0; d < env.num_dates(); ++d)
    fields_.push_back(truth_field(env, d));
  const Eigen::Index g = env.grid().size();
  Eigen::VectorXd train(static_cast<Eigen::Index>(split_.train.size()) * g);
  for (std::size_t i = 0; i < split_.train.size(); ++i)
    train.segment(static_cast<Eigen::Index>(i) * g, g) = fields_[split_.train[i]];
  normalizer_ = fit_normalizer(train);
  for (auto &f : fields_)
    f = normalize(f, normalizer_);
}

namespace {

std::vector<int> choose_cells(std::mt19937_64 &rng, int population, int count) {
  std::vector<int> idx(population);
  for (int i = 0; i < population; ++i)
    idx[i] = i;
  for (int i = 0; i < count; ++i) {
    std::uniform_int_distribution<int> pick(i, population - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(count);
  return idx;
}

int uniform_count(std::mt19937_64 &rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

} // namespace

Task make_task(const Dataset &data, int date, const std::vector<int> &context_cells,
               const std::vector<int> &target_cells) {
  const SyntheticEnvironment &env = data.environment();
  const Locations nodes = env.grid().nodes();
  const Eigen::VectorXd &field = data.field(date);
  Task task;
  task.date = date;
  ContextSet obs;
  obs.locations.resize(static_cast<Eigen::Index>(context_cells.size()), 2);
  obs.values.resize(static_cast<Eigen::Index>(context_cells.size()), 1);
  for (std::size_t i = 0; i < context_cells.size(); ++i) {
    obs.locations.row(i) = nodes.row(context_cells[i]);
    obs.values(i, 0) = field(context_cells[i]);
  }
  task.contexts.push_back(std::move(obs));
  task.contexts.push_back(auxiliary_context(env, date));
  task.target_locations.resize(static_cast<Eigen::Index>(target_cells.size()), 2);
  Eigen::VectorXd y(static_cast<Eigen::Index>(target_cells.size()));
  for (std::size_t i = 0; i < target_cells.size(); ++i) {
    task.target_locations.row(i) = nodes.row(target_cells[i]);
    y(i) = field(target_cells[i]);
  }
  task.target_values = std::move(y);
  return task;
}

Task sample_task(const Dataset &data, int date, std::mt19937_64 &rng,
                 const TaskSamplingConfig &cfg) {
  const int population = data.environment().grid().size();
  if (cfg.nc_min < 0 || cfg.nc_min > cfg.nc_max || cfg.nt_min < 1 ||
      cfg.nt_min > cfg.nt_max)
    throw InvalidConfig("task sampling bounds are inverted or negative");
  if (cfg.nc_max > population || cfg.nt_max > population)
    throw InvalidConfig("task sampling bounds exceed the number of grid cells");
  const int nc = uniform_count(rng, cfg.nc_min, cfg.nc_max);
  const int nt = uniform_count(rng, cfg.nt_min, cfg.nt_max);
  const std::vector<int> ctx = choose_cells(rng, population, nc);
  const std::vector<int> tgt = choose_cells(rng, population, nt);
  Task task = make_task(data, date, ctx, tgt);
  const double noise = data.environment().config().obs_noise_std;
  if (noise > 0.0) {
    std::normal_distribution<double> normal(0.0, noise / data.normalizer().std);
    for (Eigen::Index i = 0; i < task.observations().values.rows(); ++i)
      task.observations().values(i, 0) += normal(rng);
  }
  return task;
}

std::vector<int> lattice_cells(const SyntheticEnvironment &env, int stride,
                               bool land_only) {
  if (stride < 1)
    throw InvalidConfig("lattice stride must be >= 1");
  const GridSpec &g = env.grid();
  std::vector<int> cells;
  for (int r = 0; r < g.rows; r += stride)
    for (int c = 0; c < g.cols; c += stride) {
      const int idx = r * g.cols + c;
      if (!land_only || env.mask()(idx) > 0.5)
        cells.push_back(idx);
    }
  return cells;
}

void write_task_csv(std::ostream &os, const Task &task) {
  Eigen::Index width = 1;
  for (const auto &c : task.contexts)
    width = std::max(width, c.channels());
  os << "set_id,x1,x2";
  for (Eigen::Index k = 0; k < width; ++k)
    os << ",c" << k;
  os << '\n';
  auto row = [&](const std::string &id, const Location2D &x, const double *v,
                 Eigen::Index nv) {
    os << id << ',' << format_double(x(0)) << ',' << format_double(x(1));
    for (Eigen::Index k = 0; k < width; ++k) {
      os << ',';
      if (k < nv)
        os << format_double(v[k]);
    }
    os << '\n';
  };
  for (std::size_t s = 0; s < task.contexts.size(); ++s) {
    const auto &c = task.contexts[s];
    for (Eigen::Index i = 0; i < c.size(); ++i) {
      const Eigen::RowVectorXd v = c.values.row(i);
      row("context" + std::to_string(s), c.locations.row(i), v.data(), v.size());
    }
  }
  for (Eigen::Index i = 0; i < task.target_locations.rows(); ++i) {
    const double v = task.target_values ? (*task.target_values)(i) : 0.0;
    row("target", task.target_locations.row(i), &v, task.target_values ? 1 : 0);
  }
}

} // namespace placekit
