#include "dynanav/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace dynanav {

void Image::clamp01() {
  for (double& v : pixels) v = std::clamp(v, 0.0, 1.0);
}

namespace {

unsigned char quantize(double v) {
  double q = std::round(std::clamp(v, 0.0, 1.0) * 255.0);
  return static_cast<unsigned char>(q);
}

std::string header(const char* tag, int width, int height) {
  std::ostringstream os;
  os << tag << "\n" << width << " " << height << "\n255\n";
  return os.str();
}

}  // namespace

void write_ppm(const std::string& path, const Image& img) {
  std::string out = header("P6", img.width, img.height);
  out.reserve(out.size() + img.pixels.size());
  for (double v : img.pixels) out.push_back(static_cast<char>(quantize(v)));
  atomic_write_file(path, out);
}

Image read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("ppm: cannot open " + path);
  std::string tag;
  int w, h, maxv;
  is >> tag >> w >> h >> maxv;
  if (!is || tag != "P6" || maxv != 255) throw IoError("ppm: bad header in " + path);
  is.get();  // single whitespace after maxval
  Image img(h, w);
  std::vector<unsigned char> raw(static_cast<std::size_t>(h) * w * 3);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!is) throw IoError("ppm: truncated pixel data in " + path);
  for (std::size_t i = 0; i < raw.size(); ++i) img.pixels[i] = raw[i] / 255.0;
  return img;
}

void write_pgm(const std::string& path, int height, int width,
               const std::vector<double>& gray) {
  if (static_cast<std::size_t>(height) * width != gray.size())
    throw IoError("pgm: size mismatch");
  std::string out = header("P5", width, height);
  out.reserve(out.size() + gray.size());
  for (double v : gray) out.push_back(static_cast<char>(quantize(v)));
  atomic_write_file(path, out);
}

}  // namespace dynanav
