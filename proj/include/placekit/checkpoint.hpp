#pragma once

#include "placekit/gp.hpp"
#include "placekit/neural_process.hpp"
#include "placekit/tasks.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace placekit {

inline constexpr std::uint32_t kContainerVersion = 1;

/// Self-describing binary container. Layout: "NPSP1", u32 version, kind,
/// metadata (key, value) strings, array table (name, u32 ndim, u64 dims),
/// then every array's float64 payload in table order. Integers and floats
/// are little-endian; strings are a u32 length followed by bytes.
struct Container {
  struct Array {
    std::string name;
    std::vector<std::uint64_t> shape;
    std::vector<double> values;
  };

  std::string kind;
  std::vector<std::pair<std::string, std::string>> metadata;
  std::vector<Array> arrays;

  void set(const std::string &key, const std::string &value);
  const std::string &get(const std::string &key) const; // throws CorruptCheckpoint
  const Array &array(const std::string &name) const;    // throws CorruptCheckpoint
  void add(const std::string &name, std::vector<std::uint64_t> shape, const double *data);
};

std::string encode_container(const Container &c);
/// Throws CorruptCheckpoint on bad magic, unknown version, truncation or a
/// payload length that disagrees with the header.
Container decode_container(const std::string &bytes);

void write_container(const std::string &path, const Container &c);
Container read_container(const std::string &path);

void save_checkpoint(const NPModel &model, const std::string &path);
NPModel load_checkpoint(const std::string &path);

void save_gp(const KernelParams &params, const std::string &path);
KernelParams load_gp(const std::string &path);

/// Stores the generating config plus the static fields; loading regenerates
/// the environment and checks the fields agree.
void save_environment(const SyntheticEnvironment &env, const std::string &path);
SyntheticEnvironment load_environment(const std::string &path);

} // namespace placekit
