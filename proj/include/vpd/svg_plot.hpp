#ifndef VPD_SVG_PLOT_HPP
#define VPD_SVG_PLOT_HPP

#include <string>
#include <vector>

namespace vpd {

// Minimal deterministic SVG line chart: axes, legend, one polyline per
// series. Regenerates byte-identically from the same data.
struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

std::string render_line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                              const std::vector<PlotSeries>& series);

}  // namespace vpd

#endif
