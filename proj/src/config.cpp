#include "counting/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

#include "json.hpp"

namespace counting {

using nlohmann::json;

uint64_t fnv1a64(const void* data, size_t len) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  uint64_t h = 0xcbf29ce484222325ULL;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string fnv1a64_hex(const std::string& text) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(text.data(), text.size())));
  return buf;
}

void RunConfig::validate() const {
  if (framework != "lc" && framework != "rlc")
    throw std::invalid_argument("config framework: must be \"lc\" or \"rlc\", got \"" + framework + "\"");
  if (num_categories < 2) throw std::invalid_argument("config num_categories: must be >= 2");
  if (image_size < 32 || image_size % 4 != 0)
    throw std::invalid_argument("config image_size: must be >= 32 and divisible by 4");
  if (t_tilde < 2) throw std::invalid_argument("config t_tilde: must be >= 2");
  if (max_count < t_tilde + 2)
    throw std::invalid_argument("config max_count: must be >= t_tilde + 2 so beyond-range counts occur");
  if (zero_probability < 0.0f || zero_probability > 1.0f)
    throw std::invalid_argument("config zero_probability: must be in [0,1]");
  if (lambda < 0.0f) throw std::invalid_argument("config lambda: must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("config batch_size: must be >= 1");
  if (epochs_stage1 < 0 || epochs_stage2 < 0) throw std::invalid_argument("config epochs: must be >= 0");
  if (n_train < 1 || n_test < 1) throw std::invalid_argument("config n_train/n_test: must be >= 1");
  if (annotated_count >= 0 && annotated_count > num_categories)
    throw std::invalid_argument("config annotated_count: must be <= num_categories");
}

namespace {

json to_json(const RunConfig& c) {
  return json{{"framework", c.framework},
              {"num_categories", c.num_categories},
              {"image_size", c.image_size},
              {"max_count", c.max_count},
              {"zero_probability", c.zero_probability},
              {"min_separation", c.min_separation},
              {"glyph_radius", c.glyph_radius},
              {"n_train", c.n_train},
              {"n_test", c.n_test},
              {"t_tilde", c.t_tilde},
              {"lambda", c.lambda},
              {"annotated_count", c.annotated_count},
              {"rlc_include_s0_mse", c.rlc_include_s0_mse},
              {"rlc_two_stage", c.rlc_two_stage},
              {"lr_backbone", c.lr_backbone},
              {"lr_heads", c.lr_heads},
              {"momentum", c.momentum},
              {"weight_decay", c.weight_decay},
              {"batch_size", c.batch_size},
              {"epochs_stage1", c.epochs_stage1},
              {"epochs_stage2", c.epochs_stage2},
              {"seed", c.seed},
              {"output_dir", c.output_dir}};
}

}  // namespace

std::string RunConfig::to_json_string() const { return to_json(*this).dump(2); }

std::string RunConfig::hash() const { return fnv1a64_hex(to_json(*this).dump()); }

RunConfig RunConfig::from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config is not valid JSON: " + std::string(e.what()));
  }
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");

  static const std::set<std::string> known = {
      "framework",      "num_categories", "image_size",   "max_count",    "zero_probability",
      "min_separation", "glyph_radius",   "n_train",      "n_test",       "t_tilde",
      "lambda",         "annotated_count", "rlc_include_s0_mse", "rlc_two_stage", "lr_backbone",
      "lr_heads",       "momentum",       "weight_decay", "batch_size",   "epochs_stage1",
      "epochs_stage2",  "seed",           "output_dir"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw std::invalid_argument("unknown config key: \"" + key + "\"");
  }

  RunConfig c;
  auto get = [&](const char* key, auto& dst) {
    if (j.contains(key)) dst = j.at(key).get<std::decay_t<decltype(dst)>>();
  };
  get("framework", c.framework);
  get("num_categories", c.num_categories);
  get("image_size", c.image_size);
  get("max_count", c.max_count);
  get("zero_probability", c.zero_probability);
  get("min_separation", c.min_separation);
  get("glyph_radius", c.glyph_radius);
  get("n_train", c.n_train);
  get("n_test", c.n_test);
  get("t_tilde", c.t_tilde);
  get("lambda", c.lambda);
  get("annotated_count", c.annotated_count);
  get("rlc_include_s0_mse", c.rlc_include_s0_mse);
  get("rlc_two_stage", c.rlc_two_stage);
  get("lr_backbone", c.lr_backbone);
  get("lr_heads", c.lr_heads);
  get("momentum", c.momentum);
  get("weight_decay", c.weight_decay);
  get("batch_size", c.batch_size);
  get("epochs_stage1", c.epochs_stage1);
  get("epochs_stage2", c.epochs_stage2);
  get("seed", c.seed);
  get("output_dir", c.output_dir);
  c.validate();
  return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open config file " + path);
  return from_json_string(std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()));
}

void RunConfig::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << to_json_string() << "\n";
}

}  // namespace counting
