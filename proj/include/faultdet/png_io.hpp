#pragma once

#include <string>
#include <vector>

#include "faultdet/common.hpp"

namespace faultdet {

struct ImageU8 {
  int width = 0;
  int height = 0;
  std::vector<unsigned char> rgb;  // row-major, 3 bytes per pixel
};

void write_png_rgb8(const std::string& path, const ImageU8& img);
ImageU8 read_png_rgb8(const std::string& path);

}  // namespace faultdet
