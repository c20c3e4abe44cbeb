#include "counting/pgm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace counting {

namespace {

void skip_pnm_whitespace(std::istream& in) {
  while (true) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      return;
    }
  }
}

}  // namespace

Tensor load_pgm_mask(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string magic;
  in >> magic;
  if (magic != "P5") throw std::runtime_error(path + ": expected P5 magic, got \"" + magic + "\"");
  skip_pnm_whitespace(in);
  int w = 0, h = 0, maxval = 0;
  in >> w;
  skip_pnm_whitespace(in);
  in >> h;
  skip_pnm_whitespace(in);
  in >> maxval;
  if (!in || w <= 0 || h <= 0 || maxval <= 0 || maxval > 255)
    throw std::runtime_error(path + ": malformed PGM header");
  in.get();  // single whitespace after maxval
  std::vector<unsigned char> raw(static_cast<size_t>(w) * h);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) throw std::runtime_error(path + ": truncated pixel data");
  Tensor mask({h, w});
  for (size_t i = 0; i < raw.size(); ++i) mask[i] = raw[i] != 0 ? 1.0f : 0.0f;
  return mask;
}

void save_pgm(const Tensor& map, const std::string& path, float scale) {
  if (map.rank() != 2) throw std::invalid_argument("save_pgm: expected [H,W], got " + map.shape_str());
  if (scale <= 0.0f) scale = 1.0f;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "P5\n" << map.dim(1) << " " << map.dim(0) << "\n255\n";
  for (size_t i = 0; i < map.numel(); ++i) {
    const float v = std::clamp(map[i] / scale, 0.0f, 1.0f);
    out.put(static_cast<char>(std::lround(v * 255.0f)));
  }
}

Tensor load_f32_blob(const std::string& path, const std::vector<int>& shape) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  in.seekg(0, std::ios::end);
  const size_t bytes = static_cast<size_t>(in.tellg());
  const size_t expected = shape_numel(shape) * sizeof(float);
  if (bytes != expected)
    throw std::runtime_error(path + ": expected " + std::to_string(expected) + " bytes for shape " +
                             shape_to_string(shape) + ", got " + std::to_string(bytes));
  in.seekg(0);
  Tensor t(shape);
  in.read(reinterpret_cast<char*>(t.data().data()), static_cast<std::streamsize>(expected));
  if (!in) throw std::runtime_error(path + ": read failed");
  return t;
}

void save_f32_blob(const Tensor& t, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(t.data().data()),
            static_cast<std::streamsize>(t.numel() * sizeof(float)));
}

}  // namespace counting
