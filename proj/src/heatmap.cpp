#include "placekit/heatmap.hpp"

#include "placekit/csv.hpp"
#include "placekit/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace placekit {

namespace {

constexpr int kCell = 12;
constexpr std::array<double, 3> kLow{68, 1, 84};     // #440154
constexpr std::array<double, 3> kHigh{253, 231, 37}; // #fde725
constexpr const char *kMaskFill = "#d9d9d9";

std::string ramp(double t) {
  char buf[8];
  int rgb[3];
  for (int i = 0; i < 3; ++i)
    rgb[i] = static_cast<int>(std::lround(kLow[i] + t * (kHigh[i] - kLow[i])));
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", rgb[0], rgb[1], rgb[2]);
  return buf;
}

} // namespace

std::string heatmap_svg(const GridField &f, const std::string &title) {
  if (f.rows < 1 || f.cols < 1 || f.values.size() != static_cast<Eigen::Index>(f.rows) * f.cols)
    throw ShapeMismatch("heatmap field is not a rectangular grid");
  if (!f.masked.empty() && f.masked.size() != static_cast<std::size_t>(f.values.size()))
    throw ShapeMismatch("heatmap mask length differs from the field");
  auto is_masked = [&](Eigen::Index i) {
    return !f.masked.empty() && f.masked[static_cast<std::size_t>(i)];
  };

  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (Eigen::Index i = 0; i < f.values.size(); ++i)
    if (!is_masked(i) && std::isfinite(f.values(i))) {
      lo = std::min(lo, f.values(i));
      hi = std::max(hi, f.values(i));
    }

  const int header = title.empty() ? 0 : 16;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f.cols * kCell
     << "\" height=\"" << f.rows * kCell + header << "\">\n";
  os << "<style>.masked{fill:" << kMaskFill << ";stroke:#ffffff;stroke-width:0.5}</style>\n";
  if (!title.empty())
    os << "<text x=\"2\" y=\"12\" font-family=\"monospace\" font-size=\"11\">" << title
       << "</text>\n";
  if (lo <= hi)
    os << "<desc>min " << format_double(lo) << " max " << format_double(hi) << "</desc>\n";
  for (int r = 0; r < f.rows; ++r)
    for (int c = 0; c < f.cols; ++c) {
      const Eigen::Index i = static_cast<Eigen::Index>(r) * f.cols + c;
      const int x = c * kCell;
      const int y = header + (f.rows - 1 - r) * kCell;
      os << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << kCell << "\" height=\""
         << kCell << '"';
      if (is_masked(i) || !std::isfinite(f.values(i))) {
        os << " class=\"masked\"/>\n";
      } else {
        const double t = hi > lo ? (f.values(i) - lo) / (hi - lo) : 0.0;
        os << " fill=\"" << ramp(t) << "\"/>\n";
      }
    }
  os << "</svg>\n";
  return os.str();
}

void emit_heatmap(const GridField &field, const std::string &path, const std::string &title) {
  write_file_atomic(path, heatmap_svg(field, title));
}

} // namespace placekit
