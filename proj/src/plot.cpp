#include "faultdet/plot.hpp"

#include <algorithm>
#include <cmath>

#include "faultdet/png_io.hpp"

namespace faultdet {

namespace {

const unsigned char kPalette[6][3] = {
    {31, 119, 180}, {255, 127, 14}, {44, 160, 44}, {214, 39, 40}, {148, 103, 189}, {23, 190, 207}};

void put_pixel(ImageU8& img, int x, int y, const unsigned char* c) {
  if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
  unsigned char* p = &img.rgb[(static_cast<std::size_t>(y) * img.width + x) * 3];
  p[0] = c[0];
  p[1] = c[1];
  p[2] = c[2];
}

void draw_line(ImageU8& img, int x0, int y0, int x1, int y1, const unsigned char* c) {
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    put_pixel(img, x0, y0, c);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

}  // namespace

void render_line_plot(const std::string& path, const std::vector<PlotSeries>& series, int width,
                      int height) {
  if (width < 64 || height < 64) throw ConfigError("render_line_plot: canvas too small");
  ImageU8 img;
  img.width = width;
  img.height = height;
  img.rgb.assign(static_cast<std::size_t>(width) * height * 3, 255);

  const int ml = 48, mr = 16, mt = 16, mb = 32;
  const int x0 = ml, x1 = width - mr, y0 = mt, y1 = height - mb;
  const unsigned char axis[3] = {40, 40, 40};
  draw_line(img, x0, y1, x1, y1, axis);
  draw_line(img, x0, y0, x0, y1, axis);

  double lo = 1e308, hi = -1e308;
  std::size_t max_n = 0;
  for (const auto& s : series) {
    for (double v : s.ys) {
      if (!std::isfinite(v)) continue;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    max_n = std::max(max_n, s.ys.size());
  }
  if (max_n == 0 || lo > hi) {
    write_png_rgb8(path, img);
    return;
  }
  if (hi == lo) hi = lo + 1.0;

  // light horizontal grid
  const unsigned char grid[3] = {225, 225, 225};
  for (int g = 1; g < 5; ++g)
    draw_line(img, x0 + 1, y0 + g * (y1 - y0) / 5, x1, y0 + g * (y1 - y0) / 5, grid);

  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& ys = series[si].ys;
    if (ys.size() < 2) continue;
    const unsigned char* color = kPalette[si % 6];
    int px = 0, py = 0;
    bool first = true;
    for (std::size_t i = 0; i < ys.size(); ++i) {
      if (!std::isfinite(ys[i])) continue;
      const int x = x0 + static_cast<int>((x1 - x0) * static_cast<double>(i) / (max_n - 1));
      const int y = y1 - static_cast<int>((y1 - y0) * (ys[i] - lo) / (hi - lo));
      if (!first) draw_line(img, px, py, x, y, color);
      px = x;
      py = y;
      first = false;
    }
    // legend swatch
    const int ly = y0 + 6 + static_cast<int>(si) * 10;
    for (int dx = 0; dx < 18; ++dx) put_pixel(img, x1 - 40 + dx, ly, color);
  }
  write_png_rgb8(path, img);
}

}  // namespace faultdet
