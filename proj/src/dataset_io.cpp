#include "counting/dataset_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace counting {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kFormatVersion = "1";

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

json spec_to_json(const SceneSpec& spec) {
  json glyphs = json::array();
  for (const auto& g : spec.glyphs) {
    glyphs.push_back({{"shape", static_cast<int>(g.shape)}, {"color", {g.color[0], g.color[1], g.color[2]}}});
  }
  return {{"num_categories", spec.num_categories},
          {"image_size", spec.image_size},
          {"max_count", spec.max_count},
          {"zero_probability", spec.zero_probability},
          {"min_separation", spec.min_separation},
          {"glyph_radius", spec.glyph_radius},
          {"seed", spec.seed},
          {"glyphs", glyphs}};
}

SceneSpec spec_from_json(const json& j) {
  SceneSpec spec;
  spec.num_categories = j.at("num_categories").get<int>();
  spec.image_size = j.at("image_size").get<int>();
  spec.max_count = j.at("max_count").get<int>();
  spec.zero_probability = j.at("zero_probability").get<float>();
  spec.min_separation = j.at("min_separation").get<int>();
  spec.glyph_radius = j.at("glyph_radius").get<int>();
  spec.seed = j.at("seed").get<uint64_t>();
  for (const auto& g : j.at("glyphs")) {
    Glyph glyph;
    glyph.shape = static_cast<GlyphShape>(g.at("shape").get<int>());
    const auto& c = g.at("color");
    glyph.color = {c.at(0).get<float>(), c.at(1).get<float>(), c.at(2).get<float>()};
    spec.glyphs.push_back(glyph);
  }
  return spec;
}

}  // namespace

void save_dataset(const Dataset& dataset, const std::string& dir) {
  fs::create_directories(dir);
  const fs::path root(dir);

  const size_t floats_per_sample =
      3 * static_cast<size_t>(dataset.spec.image_size) * dataset.spec.image_size;

  json manifest = {{"format_version", kFormatVersion},
                   {"rng_algorithm", Rng::kAlgorithm},
                   {"spec", spec_to_json(dataset.spec)},
                   {"num_samples", dataset.samples.size()},
                   {"floats_per_sample", floats_per_sample}};
  write_file(root / "manifest.json", manifest.dump(2));

  std::ofstream blob(root / "images.bin", std::ios::binary);
  if (!blob) throw std::runtime_error("cannot open images.bin for writing");
  for (const auto& s : dataset.samples) {
    blob.write(reinterpret_cast<const char*>(s.image.data().data()),
               static_cast<std::streamsize>(s.image.numel() * sizeof(float)));
  }
  blob.close();

  json ann = json::array();
  for (const auto& s : dataset.samples) {
    json points = json::array();
    for (const auto& cat : s.gt_points) {
      json cat_points = json::array();
      for (const auto& p : cat) cat_points.push_back({p.row, p.col});
      points.push_back(cat_points);
    }
    ann.push_back({{"gt_counts", s.gt_counts}, {"gt_points", points}});
  }
  write_file(root / "annotations.json", json({{"samples", ann}}).dump());
}

Dataset load_dataset(const std::string& dir) {
  const fs::path root(dir);
  json manifest;
  try {
    manifest = json::parse(read_file(root / "manifest.json"));
  } catch (const json::parse_error& e) {
    throw std::runtime_error("manifest.json is malformed: " + std::string(e.what()));
  }
  const std::string version = manifest.at("format_version").get<std::string>();
  if (version != kFormatVersion)
    throw std::runtime_error("manifest field format_version: unsupported value \"" + version + "\"");
  const std::string algo = manifest.at("rng_algorithm").get<std::string>();
  if (algo != Rng::kAlgorithm)
    throw std::runtime_error("manifest field rng_algorithm: unknown generator \"" + algo + "\"");

  Dataset ds;
  ds.spec = spec_from_json(manifest.at("spec"));
  const size_t n = manifest.at("num_samples").get<size_t>();
  const size_t floats_per_sample = manifest.at("floats_per_sample").get<size_t>();
  const size_t expected_floats =
      3 * static_cast<size_t>(ds.spec.image_size) * ds.spec.image_size;
  if (floats_per_sample != expected_floats)
    throw std::runtime_error("manifest field floats_per_sample: expected " + std::to_string(expected_floats) +
                             ", got " + std::to_string(floats_per_sample));

  std::ifstream blob(root / "images.bin", std::ios::binary);
  if (!blob) throw std::runtime_error("cannot open images.bin");
  blob.seekg(0, std::ios::end);
  const size_t actual_bytes = static_cast<size_t>(blob.tellg());
  const size_t expected_bytes = n * floats_per_sample * sizeof(float);
  if (actual_bytes != expected_bytes)
    throw std::runtime_error("images.bin: expected " + std::to_string(expected_bytes) + " bytes, got " +
                             std::to_string(actual_bytes));
  blob.seekg(0);

  json ann;
  try {
    ann = json::parse(read_file(root / "annotations.json"));
  } catch (const json::parse_error& e) {
    throw std::runtime_error("annotations.json is malformed: " + std::string(e.what()));
  }
  const auto& samples = ann.at("samples");
  if (samples.size() != n)
    throw std::runtime_error("annotations field samples: expected " + std::to_string(n) + " entries, got " +
                             std::to_string(samples.size()));

  const int s = ds.spec.image_size;
  ds.samples.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    SceneSample sample;
    sample.image = Tensor({3, s, s});
    blob.read(reinterpret_cast<char*>(sample.image.data().data()),
              static_cast<std::streamsize>(floats_per_sample * sizeof(float)));
    if (!blob) throw std::runtime_error("images.bin: truncated read at sample " + std::to_string(i));
    const auto& aj = samples.at(i);
    sample.gt_counts = aj.at("gt_counts").get<std::vector<int>>();
    if (sample.gt_counts.size() != static_cast<size_t>(ds.spec.num_categories))
      throw std::runtime_error("annotations field gt_counts: wrong category count at sample " + std::to_string(i));
    for (const auto& cat : aj.at("gt_points")) {
      std::vector<Point> pts;
      for (const auto& p : cat) pts.push_back({p.at(0).get<int>(), p.at(1).get<int>()});
      sample.gt_points.push_back(std::move(pts));
    }
    if (sample.gt_points.size() != sample.gt_counts.size())
      throw std::runtime_error("annotations field gt_points: wrong category count at sample " + std::to_string(i));
    ds.samples.push_back(std::move(sample));
  }
  return ds;
}

void export_ppm(const Dataset& dataset, const std::string& dir) {
  fs::create_directories(dir);
  const int s = dataset.spec.image_size;
  const size_t plane = static_cast<size_t>(s) * s;
  for (size_t i = 0; i < dataset.samples.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%05zu.ppm", i);
    std::ofstream out(fs::path(dir) / name, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open ppm output file");
    out << "P6\n" << s << " " << s << "\n255\n";
    const auto img = dataset.samples[i].image.data();
    for (size_t p = 0; p < plane; ++p) {
      for (int ch = 0; ch < 3; ++ch) {
        const float v = std::clamp(img[static_cast<size_t>(ch) * plane + p], 0.0f, 1.0f);
        out.put(static_cast<char>(std::lround(v * 255.0f)));
      }
    }
  }
}

}  // namespace counting
