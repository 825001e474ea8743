#include "placekit/checkpoint.hpp"

#include "placekit/csv.hpp"
#include "placekit/errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

namespace placekit {

namespace {

constexpr char kMagic[] = "NPSP1";
constexpr std::size_t kMagicSize = 5;

class Writer {
public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i)
      out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i)
      out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string &s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.append(s);
  }
  void raw(const char *p, std::size_t n) { out_.append(p, n); }
  std::string take() { return std::move(out_); }

private:
  std::string out_;
};

class Reader {
public:
  explicit Reader(const std::string &in) : in_(in) {}

  void need(std::size_t n) const {
    if (in_.size() - pos_ < n)
      throw CorruptCheckpoint("truncated container at byte " + std::to_string(pos_));
  }
  std::uint64_t uint(int bytes) {
    need(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(uint(4)); }
  std::uint64_t u64() { return uint(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return in_.size() - pos_; }

private:
  const std::string &in_;
  std::size_t pos_ = 0;
};

std::uint64_t element_count(const std::vector<std::uint64_t> &shape) {
  std::uint64_t n = 1;
  for (std::uint64_t d : shape) {
    if (d != 0 && n > std::numeric_limits<std::uint64_t>::max() / 8 / d)
      throw CorruptCheckpoint("array shape overflows");
    n *= d;
  }
  return n;
}

void require_kind(const Container &c, const std::string &kind) {
  if (c.kind != kind)
    throw CorruptCheckpoint("expected a '" + kind + "' container, found '" + c.kind + "'");
}

int meta_int(const Container &c, const std::string &key) {
  const std::string &v = c.get(key);
  try {
    std::size_t used = 0;
    const long long x = std::stoll(v, &used);
    if (used != v.size())
      throw std::invalid_argument(v);
    return static_cast<int>(x);
  } catch (const std::exception &) {
    throw CorruptCheckpoint("metadata '" + key + "' is not an integer: " + v);
  }
}

template <class M> void copy_into(const Container::Array &a, M &m) {
  if (a.shape.size() != 2 || a.shape[0] != static_cast<std::uint64_t>(m.rows()) ||
      a.shape[1] != static_cast<std::uint64_t>(m.cols()))
    throw CorruptCheckpoint("array '" + a.name + "' has an unexpected shape");
  std::copy(a.values.begin(), a.values.end(), m.data());
}

} // namespace

void Container::set(const std::string &key, const std::string &value) {
  for (auto &kv : metadata)
    if (kv.first == key) {
      kv.second = value;
      return;
    }
  metadata.emplace_back(key, value);
}

const std::string &Container::get(const std::string &key) const {
  for (const auto &kv : metadata)
    if (kv.first == key)
      return kv.second;
  throw CorruptCheckpoint("missing metadata '" + key + "'");
}

const Container::Array &Container::array(const std::string &name) const {
  for (const auto &a : arrays)
    if (a.name == name)
      return a;
  throw CorruptCheckpoint("missing array '" + name + "'");
}

void Container::add(const std::string &name, std::vector<std::uint64_t> shape,
                    const double *data) {
  Array a;
  a.name = name;
  a.shape = std::move(shape);
  a.values.assign(data, data + element_count(a.shape));
  arrays.push_back(std::move(a));
}

std::string encode_container(const Container &c) {
  Writer w;
  w.raw(kMagic, kMagicSize);
  w.u32(kContainerVersion);
  w.str(c.kind);
  w.u32(static_cast<std::uint32_t>(c.metadata.size()));
  for (const auto &[k, v] : c.metadata) {
    w.str(k);
    w.str(v);
  }
  w.u32(static_cast<std::uint32_t>(c.arrays.size()));
  for (const auto &a : c.arrays) {
    if (element_count(a.shape) != a.values.size())
      throw ShapeMismatch("array '" + a.name + "' shape disagrees with its data");
    w.str(a.name);
    w.u32(static_cast<std::uint32_t>(a.shape.size()));
    for (std::uint64_t d : a.shape)
      w.u64(d);
  }
  for (const auto &a : c.arrays)
    for (double v : a.values)
      w.f64(v);
  return w.take();
}

Container decode_container(const std::string &bytes) {
  Reader r(bytes);
  if (r.bytes(kMagicSize) != std::string(kMagic, kMagicSize))
    throw CorruptCheckpoint("bad magic");
  const std::uint32_t version = r.u32();
  if (version != kContainerVersion)
    throw CorruptCheckpoint("unsupported version " + std::to_string(version) +
                            " (expected " + std::to_string(kContainerVersion) + ")");
  Container c;
  c.kind = r.str();
  const std::uint32_t n_meta = r.u32();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = r.str();
    std::string v = r.str();
    c.metadata.emplace_back(std::move(k), std::move(v));
  }
  const std::uint32_t n_arrays = r.u32();
  std::uint64_t total = 0;
  for (std::uint32_t i = 0; i < n_arrays; ++i) {
    Container::Array a;
    a.name = r.str();
    const std::uint32_t ndim = r.u32();
    for (std::uint32_t d = 0; d < ndim; ++d)
      a.shape.push_back(r.u64());
    total += element_count(a.shape);
    c.arrays.push_back(std::move(a));
  }
  if (r.remaining() != total * 8)
    throw CorruptCheckpoint("payload holds " + std::to_string(r.remaining()) +
                            " bytes, header declares " + std::to_string(total * 8));
  for (auto &a : c.arrays) {
    a.values.resize(element_count(a.shape));
    for (double &v : a.values)
      v = r.f64();
  }
  return c;
}

void write_container(const std::string &path, const Container &c) {
  write_file_atomic(path, encode_container(c));
}

Container read_container(const std::string &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is)
    throw IoError("cannot open " + path);
  const std::string bytes((std::istreambuf_iterator<char>(is)),
                          std::istreambuf_iterator<char>());
  return decode_container(bytes);
}

// Neural process ---------------------------------------------------------------

void save_checkpoint(const NPModel &model, const std::string &path) {
  Container c;
  c.kind = "convgnp";
  const NPArchitecture &a = model.arch;
  c.set("ppu", std::to_string(a.ppu));
  c.set("width", std::to_string(a.width));
  c.set("rank", std::to_string(a.rank));
  c.set("hidden", std::to_string(a.hidden));
  c.set("observation_channels", std::to_string(a.observation_channels));
  c.set("auxiliary_channels", std::to_string(a.auxiliary_channels));
  c.set("auxiliary_grid_size", std::to_string(a.auxiliary_grid_size));
  c.set("init_seed", std::to_string(model.init_seed));
  const double scalars[3] = {model.setconv_scale, model.normalizer.mean,
                             model.normalizer.std};
  c.add("scalars", {3}, scalars);
  NPModel copy = model;
  for (const auto &p : copy.parameters())
    c.add(p.name, p.shape, p.values.data());
  write_container(path, c);
}

NPModel load_checkpoint(const std::string &path) {
  const Container c = read_container(path);
  require_kind(c, "convgnp");
  NPArchitecture a;
  a.ppu = meta_int(c, "ppu");
  a.width = meta_int(c, "width");
  a.rank = meta_int(c, "rank");
  a.hidden = meta_int(c, "hidden");
  a.observation_channels = meta_int(c, "observation_channels");
  a.auxiliary_channels = meta_int(c, "auxiliary_channels");
  a.auxiliary_grid_size = meta_int(c, "auxiliary_grid_size");
  try {
    a.validate();
  } catch (const InvalidConfig &e) {
    throw CorruptCheckpoint(std::string("bad architecture: ") + e.what());
  }
  NPModel m(a, std::stoull(c.get("init_seed")));
  const auto &scalars = c.array("scalars");
  if (scalars.values.size() != 3)
    throw CorruptCheckpoint("array 'scalars' has an unexpected shape");
  m.setconv_scale = scalars.values[0];
  m.normalizer = Normalizer{scalars.values[1], scalars.values[2]};
  for (auto &p : m.parameters()) {
    const auto &arr = c.array(p.name);
    if (arr.shape != p.shape)
      throw CorruptCheckpoint("array '" + p.name + "' shape disagrees with architecture");
    std::copy(arr.values.begin(), arr.values.end(), p.values.begin());
  }
  return m;
}

// Gaussian processes -------------------------------------------------------------

void save_gp(const KernelParams &params, const std::string &path) {
  Container c;
  c.kind = "gp";
  c.set("variant", variant_name(params.variant()));
  const double noise = params.noise_var;
  c.add("noise_var", {1}, &noise);
  std::visit(
      [&](const auto &k) {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, EQParams>) {
          const double v[3] = {k.variance, k.l1, k.l2};
          c.add("eq", {3}, v);
        } else if constexpr (std::is_same_v<K, RQParams>) {
          const double v[4] = {k.variance, k.l1, k.l2, k.alpha};
          c.add("rq", {4}, v);
        } else {
          const double v[2] = {k.variance, k.basis_scale};
          c.add("gibbs", {2}, v);
          const auto m = static_cast<std::uint64_t>(k.theta1.size());
          c.add("theta1", {m}, k.theta1.data());
          c.add("theta2", {m}, k.theta2.data());
          const Eigen::MatrixXd centers = k.centers;
          c.add("centers", {m, 2}, centers.data());
        }
      },
      params.kernel);
  write_container(path, c);
}

KernelParams load_gp(const std::string &path) {
  const Container c = read_container(path);
  require_kind(c, "gp");
  KernelParams p;
  const auto &noise = c.array("noise_var");
  if (noise.values.size() != 1)
    throw CorruptCheckpoint("array 'noise_var' has an unexpected shape");
  p.noise_var = noise.values[0];
  KernelVariant variant;
  try {
    variant = parse_variant(c.get("variant"));
  } catch (const InvalidConfig &e) {
    throw CorruptCheckpoint(e.what());
  }
  auto values = [&](const std::string &name, std::size_t n) {
    const auto &a = c.array(name);
    if (a.values.size() != n)
      throw CorruptCheckpoint("array '" + name + "' has an unexpected shape");
    return a.values;
  };
  switch (variant) {
  case KernelVariant::EQ: {
    const auto v = values("eq", 3);
    p.kernel = EQParams{v[0], v[1], v[2]};
    break;
  }
  case KernelVariant::RQ: {
    const auto v = values("rq", 4);
    p.kernel = RQParams{v[0], v[1], v[2], v[3]};
    break;
  }
  case KernelVariant::Gibbs: {
    const auto v = values("gibbs", 2);
    GibbsParams g;
    g.variance = v[0];
    g.basis_scale = v[1];
    const auto &t1 = c.array("theta1");
    const auto m = static_cast<Eigen::Index>(t1.values.size());
    g.theta1 = Eigen::Map<const Eigen::VectorXd>(t1.values.data(), m);
    const auto t2 = values("theta2", t1.values.size());
    g.theta2 = Eigen::Map<const Eigen::VectorXd>(t2.data(), m);
    Eigen::MatrixXd centers(m, 2);
    copy_into(c.array("centers"), centers);
    g.centers = centers;
    p.kernel = std::move(g);
    break;
  }
  }
  try {
    p.validate();
  } catch (const InvalidConfig &e) {
    throw CorruptCheckpoint(std::string("invalid kernel parameters: ") + e.what());
  }
  return p;
}

// Environment ------------------------------------------------------------------

void save_environment(const SyntheticEnvironment &env, const std::string &path) {
  const EnvironmentConfig &cfg = env.config();
  Container c;
  c.kind = "environment";
  c.set("grid_size", std::to_string(cfg.grid_size));
  c.set("years", std::to_string(cfg.years));
  c.set("seed", std::to_string(cfg.seed));
  const double reals[10] = {cfg.base_variance,     cfg.seasonal_amplitude,
                            cfg.lengthscale_long,  cfg.lengthscale_short,
                            cfg.anisotropy,        cfg.coast_width,
                            cfg.coast_offset,      cfg.coast_wave_amplitude,
                            cfg.coast_wave_frequency, cfg.obs_noise_std};
  c.add("config", {10}, reals);
  const auto g = static_cast<std::uint64_t>(cfg.grid_size);
  c.add("mask", {g, g}, env.mask().data());
  c.add("elevation", {g, g}, env.elevation().data());
  write_container(path, c);
}

SyntheticEnvironment load_environment(const std::string &path) {
  const Container c = read_container(path);
  require_kind(c, "environment");
  EnvironmentConfig cfg;
  cfg.grid_size = meta_int(c, "grid_size");
  cfg.years = meta_int(c, "years");
  cfg.seed = std::stoull(c.get("seed"));
  const auto &r = c.array("config").values;
  if (r.size() != 10)
    throw CorruptCheckpoint("array 'config' has an unexpected shape");
  cfg.base_variance = r[0];
  cfg.seasonal_amplitude = r[1];
  cfg.lengthscale_long = r[2];
  cfg.lengthscale_short = r[3];
  cfg.anisotropy = r[4];
  cfg.coast_width = r[5];
  cfg.coast_offset = r[6];
  cfg.coast_wave_amplitude = r[7];
  cfg.coast_wave_frequency = r[8];
  cfg.obs_noise_std = r[9];
  SyntheticEnvironment env = build_environment(cfg);
  const auto &mask = c.array("mask").values;
  const auto &elev = c.array("elevation").values;
  if (mask.size() != static_cast<std::size_t>(env.mask().size()) ||
      !std::equal(mask.begin(), mask.end(), env.mask().data()) ||
      elev.size() != static_cast<std::size_t>(env.elevation().size()) ||
      !std::equal(elev.begin(), elev.end(), env.elevation().data()))
    throw CorruptCheckpoint("stored fields disagree with the regenerated environment");
  return env;
}

} // namespace placekit
