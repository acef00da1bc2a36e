#include "lebm/svg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "lebm/error.hpp"

namespace lebm {
namespace {

constexpr double kWidth = 480.0;
constexpr double kHeight = 480.0;
constexpr double kMargin = 40.0;

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void finish() {
    if (!(lo <= hi)) lo = 0.0, hi = 1.0;
    if (hi - lo < 1e-12) lo -= 0.5, hi += 0.5;
  }
  double map(double v, double a, double b) const { return a + (v - lo) / (hi - lo) * (b - a); }
};

std::string open(const std::string& title) {
  return fmt::format(
      "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\">\n"
      "<rect x=\"0\" y=\"0\" width=\"{0}\" height=\"{1}\" fill=\"white\"/>\n"
      "<text x=\"{2}\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">{3}</text>\n"
      "<path d=\"M{2} {4} H{5} V{2} H{2} Z\" fill=\"none\" stroke=\"#444\"/>\n",
      kWidth, kHeight, kMargin, escape(title), kHeight - kMargin, kWidth - kMargin);
}

std::string axis_labels(const Range& xr, const Range& yr) {
  return fmt::format(
      "<text x=\"{0}\" y=\"{1}\" font-family=\"sans-serif\" font-size=\"10\">{2:.3g}</text>\n"
      "<text x=\"{3}\" y=\"{1}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{4:.3g}</text>\n"
      "<text x=\"4\" y=\"{5}\" font-family=\"sans-serif\" font-size=\"10\">{6:.3g}</text>\n"
      "<text x=\"4\" y=\"{7}\" font-family=\"sans-serif\" font-size=\"10\">{8:.3g}</text>\n",
      kMargin, kHeight - kMargin + 14, xr.lo, kWidth - kMargin, xr.hi, kHeight - kMargin, yr.lo, kMargin + 10,
      yr.hi);
}

}  // namespace

std::string scatter_svg(const Matrix& xy, const std::vector<int>& groups, const std::string& title) {
  if (xy.cols() != 2) throw Error(ErrorCode::InvalidShape, "scatter plot needs two columns");
  if (!groups.empty() && static_cast<Eigen::Index>(groups.size()) != xy.rows())
    throw Error(ErrorCode::InvalidShape, "one group per point");
  Range xr, yr;
  for (Eigen::Index i = 0; i < xy.rows(); ++i) {
    xr.add(xy(i, 0));
    yr.add(xy(i, 1));
  }
  xr.finish();
  yr.finish();
  std::string out = open(title);
  for (Eigen::Index i = 0; i < xy.rows(); ++i) {
    if (!std::isfinite(xy(i, 0)) || !std::isfinite(xy(i, 1))) continue;
    const int g = groups.empty() ? 0 : groups[static_cast<std::size_t>(i)];
    const char* color = kPalette[static_cast<std::size_t>(std::abs(g)) % std::size(kPalette)];
    out += fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"2\" fill=\"{}\" fill-opacity=\"0.7\"/>\n",
                       xr.map(xy(i, 0), kMargin, kWidth - kMargin), yr.map(xy(i, 1), kHeight - kMargin, kMargin),
                       color);
  }
  out += axis_labels(xr, yr);
  out += "</svg>\n";
  return out;
}

std::string line_chart_svg(const std::vector<double>& x, const std::vector<Series>& series, const std::string& title) {
  Range xr, yr;
  for (double v : x) xr.add(v);
  for (const Series& s : series) {
    if (s.y.size() != x.size()) throw Error(ErrorCode::InvalidShape, "series '" + s.name + "' length differs from x");
    for (double v : s.y) yr.add(v);
  }
  xr.finish();
  yr.finish();
  std::string out = open(title);
  for (std::size_t k = 0; k < series.size(); ++k) {
    std::string d;
    bool pen_down = false;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double v = series[k].y[i];
      if (!std::isfinite(v) || !std::isfinite(x[i])) {
        pen_down = false;
        continue;
      }
      d += fmt::format("{}{:.2f} {:.2f} ", pen_down ? "L" : "M", xr.map(x[i], kMargin, kWidth - kMargin),
                       yr.map(v, kHeight - kMargin, kMargin));
      pen_down = true;
    }
    const char* color = kPalette[k % std::size(kPalette)];
    if (!d.empty()) out += fmt::format("<path d=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>\n", d, color);
    out += fmt::format("<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{}\">{}</text>\n",
                       kWidth - kMargin - 100, kMargin + 14 * (static_cast<double>(k) + 1), color,
                       escape(series[k].name));
  }
  out += axis_labels(xr, yr);
  out += "</svg>\n";
  return out;
}

}  // namespace lebm
