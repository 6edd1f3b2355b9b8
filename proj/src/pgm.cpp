#include "protolog/pgm.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace protolog {

void write_pgm(const std::string& path, const Tensor& image, size_t h, size_t w) {
  if (image.size() != h * w) throw std::runtime_error("write_pgm: size mismatch");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write image: " + path);
  f << "P5\n" << w << " " << h << "\n255\n";
  for (double v : image.data) {
    const double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    f.put(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0))));
  }
}

namespace {
int next_value(std::istream& in) {
  // Skips whitespace and # comments.
  for (;;) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
      continue;
    }
    if (std::isspace(c)) {
      in.get();
      continue;
    }
    break;
  }
  int v = 0;
  in >> v;
  return v;
}
}  // namespace

Tensor read_pgm(const std::string& path, size_t* h_out, size_t* w_out) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read image: " + path);
  std::string magic;
  f >> magic;
  if (magic != "P5" && magic != "P2")
    throw std::runtime_error("not a PGM file: " + path);
  const int w = next_value(f);
  const int h = next_value(f);
  const int maxv = next_value(f);
  if (w <= 0 || h <= 0 || maxv <= 0 || maxv > 255)
    throw std::runtime_error("unsupported PGM header in " + path);
  Tensor img = Tensor::zeros({static_cast<size_t>(h) * static_cast<size_t>(w)});
  if (magic == "P5") {
    f.get();  // single whitespace after maxval
    for (double& v : img.data) {
      const int c = f.get();
      if (c == EOF) throw std::runtime_error("truncated PGM: " + path);
      v = static_cast<double>(c) / maxv;
    }
  } else {
    for (double& v : img.data) v = static_cast<double>(next_value(f)) / maxv;
  }
  if (h_out) *h_out = static_cast<size_t>(h);
  if (w_out) *w_out = static_cast<size_t>(w);
  return img;
}

}  // namespace protolog
