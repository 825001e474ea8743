#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace placekit {

/// Row-major rows x cols field; `masked` (empty, or one flag per cell) marks
/// cells drawn in the mask style instead of the colour ramp.
struct GridField {
  int rows = 0;
  int cols = 0;
  Eigen::VectorXd values;
  std::vector<bool> masked;
};

/// One <rect> per cell; row 0 is drawn at the bottom. Colours interpolate
/// linearly between fixed endpoints over [min, max] of the unmasked cells.
std::string heatmap_svg(const GridField &field, const std::string &title = "");

/// Writes heatmap_svg atomically. Throws IoError.
void emit_heatmap(const GridField &field, const std::string &path,
                  const std::string &title = "");

} // namespace placekit
