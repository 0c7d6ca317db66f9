#pragma once

#include <string>
#include <vector>

#include "dynanav/checkpoint.hpp"

namespace dynanav {

// RGB image, row-major, values in [0,1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> pixels;  // height*width*3

  Image() = default;
  Image(int h, int w) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, 0.0) {}

  double& at(int r, int c, int ch) { return pixels[(static_cast<std::size_t>(r) * width + c) * 3 + ch]; }
  double at(int r, int c, int ch) const { return pixels[(static_cast<std::size_t>(r) * width + c) * 3 + ch]; }

  void clamp01();
};

// Binary PPM (P6), 8-bit; quantization is round-to-nearest.
void write_ppm(const std::string& path, const Image& img);
Image read_ppm(const std::string& path);

// Binary PGM (P5) from grayscale values in [0,1].
void write_pgm(const std::string& path, int height, int width,
               const std::vector<double>& gray);

}  // namespace dynanav
