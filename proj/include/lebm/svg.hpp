#pragma once

// Minimal standalone SVG output for 2-D scatter plots and learning curves.

#include <string>
#include <utility>
#include <vector>

#include "lebm/types.hpp"

namespace lebm {

/// One circle per row of xy (n x 2); points are colored by group.
std::string scatter_svg(const Matrix& xy, const std::vector<int>& groups, const std::string& title);

struct Series {
  std::string name;
  std::vector<double> y;  // NaN entries break the line
};

/// Polylines over a shared x axis.
std::string line_chart_svg(const std::vector<double>& x, const std::vector<Series>& series, const std::string& title);

}  // namespace lebm
