#include "placekit/config.hpp"

#include "placekit/errors.hpp"
#include "placekit/random.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace placekit {

namespace pt = boost::property_tree;

namespace {

const std::map<std::string, std::set<std::string>> kKnownKeys{
    {"environment",
     {"seed", "grid_size", "years", "base_variance", "seasonal_amplitude",
      "lengthscale_long", "lengthscale_short", "anisotropy", "coast_width", "coast_offset",
      "coast_wave_amplitude", "coast_wave_frequency", "obs_noise_std"}},
    {"sampling", {"nc_min", "nc_max", "nt_min", "nt_max"}},
    {"gp",
     {"variants", "gibbs_per_side", "initial_lengthscale", "train_tasks", "validation_tasks",
      "learning_rate", "batch_size", "max_epochs", "patience"}},
    {"np",
     {"ppu", "width", "rank", "hidden", "learning_rate", "final_learning_rate", "weight_decay",
      "batch_size", "max_epochs",
      "tasks_per_epoch", "validation_tasks", "patience"}},
    {"sweep", {"nc_ladder", "num_targets", "tasks_per_level", "models"}},
    {"placement",
     {"kinds", "model", "K", "num_dates", "search_stride", "num_stations", "eval_dates",
      "random_seeds", "bootstrap_resamples"}},
    {"output", {"dir"}},
};

std::string trim(const std::string &s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos)
    return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

class Section {
public:
  Section(const pt::ptree *tree, std::string name) : tree_(tree), name_(std::move(name)) {}

  std::optional<std::string> raw(const std::string &key) const {
    if (!tree_)
      return std::nullopt;
    const auto v = tree_->get_optional<std::string>(key);
    if (!v)
      return std::nullopt;
    return trim(*v);
  }

  std::string field(const std::string &key) const { return name_ + "." + key; }

  template <class T> void read(const std::string &key, T &out) const {
    const auto v = raw(key);
    if (!v)
      return;
    out = parse<T>(key, *v);
  }

  template <class T> T parse(const std::string &key, const std::string &v) const {
    T out{};
    const char *end = v.data() + v.size();
    std::from_chars_result res{};
    if constexpr (std::is_floating_point_v<T>) {
      // from_chars for double lacks a leading '+' and locale dependence.
      res = std::from_chars(v.data(), end, out, std::chars_format::general);
    } else {
      res = std::from_chars(v.data(), end, out);
    }
    if (v.empty() || res.ec != std::errc() || res.ptr != end)
      throw InvalidConfig(field(key) + ": cannot parse '" + v + "' as " +
                          (std::is_floating_point_v<T> ? "a number" : "an integer"));
    return out;
  }

  std::vector<std::string> list(const std::string &key) const {
    std::vector<std::string> out;
    std::stringstream ss(*raw(key));
    std::string item;
    while (std::getline(ss, item, ','))
      if (!trim(item).empty())
        out.push_back(trim(item));
    if (out.empty())
      throw InvalidConfig(field(key) + ": list must not be empty");
    return out;
  }

private:
  const pt::ptree *tree_;
  std::string name_;
};

void require(bool ok, const std::string &field, const std::string &what) {
  if (!ok)
    throw InvalidConfig(field + ": " + what);
}

void derive_seeds(ExperimentConfig &c) {
  const std::uint64_t s = c.environment.seed;
  c.gp.fit.seed = derive_seed(s, {0x6770});
  c.np.train.seed = derive_seed(s, {0x6e70});
  c.placement.station_seed = derive_seed(s, {0x5354});
}

} // namespace

void ExperimentConfig::apply_seed(std::uint64_t seed) {
  environment.seed = seed;
  derive_seeds(*this);
}

ExperimentConfig parse_config_text(const std::string &text, const std::string &origin) {
  pt::ptree tree;
  std::istringstream is(text);
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error &e) {
    throw InvalidConfig(origin + " line " + std::to_string(e.line()) + ": " + e.message());
  }

  for (const auto &[section, body] : tree) {
    const auto known = kKnownKeys.find(section);
    if (known == kKnownKeys.end()) {
      if (body.empty())
        throw InvalidConfig(section + ": key outside any section");
      throw InvalidConfig(section + ": unknown section");
    }
    for (const auto &kv : body)
      if (!known->second.contains(kv.first))
        throw InvalidConfig(section + "." + kv.first + ": unknown key");
  }
  auto section = [&](const std::string &name) {
    const auto child = tree.get_child_optional(name);
    return Section(child ? &*child : nullptr, name);
  };

  ExperimentConfig c;
  c.source_text = text;

  const Section env = section("environment");
  if (!env.raw("seed"))
    throw InvalidConfig("environment.seed: required field is missing");
  auto &e = c.environment;
  env.read("seed", e.seed);
  env.read("grid_size", e.grid_size);
  env.read("years", e.years);
  env.read("base_variance", e.base_variance);
  env.read("seasonal_amplitude", e.seasonal_amplitude);
  env.read("lengthscale_long", e.lengthscale_long);
  env.read("lengthscale_short", e.lengthscale_short);
  env.read("anisotropy", e.anisotropy);
  env.read("coast_width", e.coast_width);
  env.read("coast_offset", e.coast_offset);
  env.read("coast_wave_amplitude", e.coast_wave_amplitude);
  env.read("coast_wave_frequency", e.coast_wave_frequency);
  env.read("obs_noise_std", e.obs_noise_std);
  require(e.grid_size >= 8, "environment.grid_size", "must be >= 8");
  require(e.years >= 1, "environment.years", "must be >= 1");
  require(e.base_variance > 0.0, "environment.base_variance", "must be positive");
  require(std::abs(e.seasonal_amplitude) < 1.0, "environment.seasonal_amplitude",
          "must lie in (-1, 1)");
  require(e.lengthscale_short > 0.0 && e.lengthscale_short <= e.lengthscale_long,
          "environment.lengthscale_short", "must lie in (0, lengthscale_long]");
  require(e.anisotropy > 0.0, "environment.anisotropy", "must be positive");
  require(e.coast_width > 0.0, "environment.coast_width", "must be positive");
  require(e.obs_noise_std >= 0.0, "environment.obs_noise_std", "must be non-negative");

  const Section smp = section("sampling");
  auto &s = c.sampling;
  smp.read("nc_min", s.nc_min);
  smp.read("nc_max", s.nc_max);
  smp.read("nt_min", s.nt_min);
  smp.read("nt_max", s.nt_max);
  const int cells = e.grid_size * e.grid_size;
  require(s.nc_min >= 0 && s.nc_min <= s.nc_max, "sampling.nc_max", "need 0 <= nc_min <= nc_max");
  require(s.nc_max <= cells, "sampling.nc_max", "exceeds the number of grid cells");
  require(s.nt_min >= 1 && s.nt_min <= s.nt_max, "sampling.nt_max", "need 1 <= nt_min <= nt_max");
  require(s.nt_max <= cells, "sampling.nt_max", "exceeds the number of grid cells");

  const Section gp = section("gp");
  if (gp.raw("variants")) {
    c.gp.variants.clear();
    for (const auto &name : gp.list("variants")) {
      try {
        c.gp.variants.push_back(parse_variant(name));
      } catch (const InvalidConfig &) {
        throw InvalidConfig("gp.variants: unknown kernel '" + name + "'");
      }
    }
  }
  gp.read("gibbs_per_side", c.gp.gibbs_per_side);
  gp.read("initial_lengthscale", c.gp.initial_lengthscale);
  gp.read("train_tasks", c.gp.train_tasks);
  gp.read("validation_tasks", c.gp.validation_tasks);
  gp.read("learning_rate", c.gp.fit.learning_rate);
  gp.read("batch_size", c.gp.fit.batch_size);
  gp.read("max_epochs", c.gp.fit.max_epochs);
  gp.read("patience", c.gp.fit.patience);
  require(c.gp.gibbs_per_side >= 2, "gp.gibbs_per_side", "must be >= 2");
  require(c.gp.initial_lengthscale > 0.0, "gp.initial_lengthscale", "must be positive");
  require(c.gp.train_tasks >= 1, "gp.train_tasks", "must be >= 1");
  require(c.gp.validation_tasks >= 0, "gp.validation_tasks", "must be >= 0");
  require(c.gp.fit.learning_rate >= 0.0, "gp.learning_rate", "must be non-negative");
  require(c.gp.fit.batch_size >= 1, "gp.batch_size", "must be >= 1");
  require(c.gp.fit.max_epochs >= 0, "gp.max_epochs", "must be >= 0");
  require(c.gp.fit.patience >= 1, "gp.patience", "must be >= 1");

  const Section np = section("np");
  auto &a = c.np.arch;
  auto &t = c.np.train;
  np.read("ppu", a.ppu);
  np.read("width", a.width);
  np.read("rank", a.rank);
  np.read("hidden", a.hidden);
  np.read("learning_rate", t.learning_rate);
  if (np.raw("final_learning_rate")) {
    double lo = 0.0;
    np.read("final_learning_rate", lo);
    t.final_learning_rate = lo;
  }
  np.read("weight_decay", t.weight_decay);
  np.read("batch_size", t.batch_size);
  np.read("max_epochs", t.max_epochs);
  np.read("tasks_per_epoch", t.tasks_per_epoch);
  np.read("validation_tasks", t.validation_tasks);
  np.read("patience", t.patience);
  a.auxiliary_grid_size = e.grid_size;
  require(internal_grid_size(a.ppu) >= 4, "np.ppu", "internal grid would be smaller than 4x4");
  require(a.width >= 1, "np.width", "must be >= 1");
  require(a.rank >= 1, "np.rank", "must be >= 1");
  require(a.hidden >= 1, "np.hidden", "must be >= 1");
  require(t.learning_rate >= 0.0, "np.learning_rate", "must be non-negative");
  require(!t.final_learning_rate || *t.final_learning_rate >= 0.0, "np.final_learning_rate",
          "must be non-negative");
  require(t.weight_decay >= 0.0, "np.weight_decay", "must be non-negative");
  require(t.batch_size >= 1, "np.batch_size", "must be >= 1");
  require(t.max_epochs >= 0, "np.max_epochs", "must be >= 0");
  require(t.tasks_per_epoch >= 1, "np.tasks_per_epoch", "must be >= 1");
  require(t.validation_tasks >= 1, "np.validation_tasks", "must be >= 1");
  require(t.patience >= 0, "np.patience", "must be >= 0");
  t.sampling = c.sampling;

  const Section sw = section("sweep");
  if (sw.raw("nc_ladder")) {
    c.sweep.nc_ladder.clear();
    for (const auto &v : sw.list("nc_ladder")) {
      const int n = sw.parse<int>("nc_ladder", v);
      require(n >= 0 && n <= cells, "sweep.nc_ladder", "entries must lie in [0, G^2]");
      c.sweep.nc_ladder.push_back(n);
    }
  }
  sw.read("num_targets", c.sweep.num_targets);
  sw.read("tasks_per_level", c.sweep.tasks_per_level);
  if (sw.raw("models"))
    c.sweep.models = sw.list("models");
  require(c.sweep.num_targets >= 1 && c.sweep.num_targets <= cells, "sweep.num_targets",
          "must lie in [1, G^2]");
  require(c.sweep.tasks_per_level >= 1, "sweep.tasks_per_level", "must be >= 1");
  for (const auto &m : c.sweep.models)
    if (m != "convgnp")
      try {
        parse_variant(m);
      } catch (const InvalidConfig &) {
        throw InvalidConfig("sweep.models: unknown model '" + m + "'");
      }

  const Section pl = section("placement");
  auto &p = c.placement;
  if (pl.raw("kinds")) {
    p.kinds.clear();
    for (const auto &name : pl.list("kinds")) {
      AcquisitionKind k;
      try {
        k = parse_kind(name);
      } catch (const InvalidConfig &) {
        throw InvalidConfig("placement.kinds: unknown acquisition '" + name + "'");
      }
      require(!is_oracle(k), "placement.kinds", "oracle kinds cannot drive placement");
      p.kinds.push_back(k);
    }
  }
  if (pl.raw("model"))
    p.model = *pl.raw("model");
  pl.read("K", p.K);
  pl.read("num_dates", p.num_dates);
  pl.read("search_stride", p.search_stride);
  pl.read("num_stations", p.num_stations);
  pl.read("eval_dates", p.eval_dates);
  pl.read("random_seeds", p.random_seeds);
  pl.read("bootstrap_resamples", p.bootstrap_resamples);
  if (p.model != "convgnp")
    try {
      parse_variant(p.model);
    } catch (const InvalidConfig &) {
      throw InvalidConfig("placement.model: unknown model '" + p.model + "'");
    }
  require(p.K >= 0, "placement.K", "must be >= 0");
  require(p.num_dates >= 1, "placement.num_dates", "must be >= 1");
  require(p.search_stride >= 1, "placement.search_stride", "must be >= 1");
  require(p.num_stations >= 1, "placement.num_stations", "must be >= 1");
  require(p.eval_dates >= 1, "placement.eval_dates", "must be >= 1");
  require(p.random_seeds >= 1, "placement.random_seeds", "must be >= 1");
  require(p.bootstrap_resamples >= 1, "placement.bootstrap_resamples", "must be >= 1");

  const Section out = section("output");
  if (out.raw("dir"))
    c.output_dir = *out.raw("dir");

  derive_seeds(c);
  return c;
}

ExperimentConfig load_config(const std::string &path) {
  std::ifstream is(path);
  if (!is)
    throw InvalidConfig("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str(), path);
}

} // namespace placekit
