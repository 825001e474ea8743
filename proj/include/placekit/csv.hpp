#pragma once

#include <string>

namespace placekit {

/// Shortest round-trip decimal form with '.' separator and no locale
/// (at most 17 significant digits).
std::string format_double(double v);

/// Writes `content` to `path` through a temporary file and a rename, so the
/// final path never holds a partial file. Throws IoError.
void write_file_atomic(const std::string &path, const std::string &content);

} // namespace placekit
