#pragma once

#include <string>
#include <vector>

#include "faultdet/common.hpp"

namespace faultdet {

struct PlotSeries {
  std::string name;
  std::vector<double> ys;  // x is the sample index
};

// Minimal line-plot renderer (white canvas, axes, fixed palette) for loss
// curves and sweep summaries.
void render_line_plot(const std::string& path, const std::vector<PlotSeries>& series,
                      int width = 800, int height = 480);

}  // namespace faultdet
