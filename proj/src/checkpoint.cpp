#include "counting/checkpoint.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace counting {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kFormatVersion = "1";

struct BlobWriter {
  std::ofstream out;
  size_t offset = 0;
  json entries = json::array();

  void add(const std::string& name, const std::string& kind, const std::vector<int>& shape, const float* data,
           size_t count) {
    entries.push_back(
        {{"name", name}, {"kind", kind}, {"shape", shape}, {"offset", offset}, {"count", count}});
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(float)));
    offset += count * sizeof(float);
  }
};

}  // namespace

void save_checkpoint(const std::string& dir, ModelState& state, const SgdState* optimizer,
                     const std::string& config_hash) {
  fs::create_directories(dir);
  BlobWriter w;
  w.out.open(fs::path(dir) / "params.bin", std::ios::binary);
  if (!w.out) throw std::runtime_error("cannot open params.bin for writing");

  auto params = state.named_params();
  for (auto& [name, t] : params) w.add(name, "param", t->shape(), t->data().data(), t->numel());
  for (auto& [name, buf] : state.named_buffers())
    w.add(name, "buffer", {static_cast<int>(buf->size())}, buf->data(), buf->size());
  if (optimizer != nullptr) {
    if (optimizer->slots.size() != params.size())
      throw std::logic_error("checkpoint: optimizer slot count does not match parameter count");
    for (size_t i = 0; i < params.size(); ++i) {
      const auto& slot = optimizer->slots[i];
      w.add("opt." + params[i].first, "momentum", params[i].second->shape(), slot.momentum.data(),
            slot.momentum.size());
    }
  }
  w.out.close();

  json manifest = {{"format_version", kFormatVersion},
                   {"dtype", "f32le"},
                   {"framework", state.config.framework == Framework::Lc ? "lc" : "rlc"},
                   {"num_categories", state.config.num_categories},
                   {"image_size", state.config.image_size},
                   {"feature_dim", state.config.feature_dim},
                   {"config_hash", config_hash},
                   {"has_optimizer", optimizer != nullptr},
                   {"tensors", w.entries}};
  std::ofstream mf(fs::path(dir) / "checkpoint.json", std::ios::binary);
  if (!mf) throw std::runtime_error("cannot open checkpoint.json for writing");
  mf << manifest.dump(2);
}

LoadedCheckpoint load_checkpoint(const std::string& dir) {
  std::ifstream mf(fs::path(dir) / "checkpoint.json", std::ios::binary);
  if (!mf) throw std::runtime_error("cannot open " + dir + "/checkpoint.json");
  json manifest;
  try {
    manifest = json::parse(std::string(std::istreambuf_iterator<char>(mf), std::istreambuf_iterator<char>()));
  } catch (const json::parse_error& e) {
    throw std::runtime_error("checkpoint.json is malformed: " + std::string(e.what()));
  }
  if (manifest.at("format_version").get<std::string>() != kFormatVersion)
    throw std::runtime_error("checkpoint field format_version: unsupported value");
  if (manifest.at("dtype").get<std::string>() != "f32le")
    throw std::runtime_error("checkpoint field dtype: unsupported value");

  ModelConfig config;
  config.framework = manifest.at("framework").get<std::string>() == "lc" ? Framework::Lc : Framework::Rlc;
  config.num_categories = manifest.at("num_categories").get<int>();
  config.image_size = manifest.at("image_size").get<int>();
  config.feature_dim = manifest.at("feature_dim").get<int>();

  LoadedCheckpoint out;
  out.state = ModelState::init(config, 0);
  out.config_hash = manifest.value("config_hash", "");
  out.has_optimizer = manifest.value("has_optimizer", false);

  std::ifstream blob(fs::path(dir) / "params.bin", std::ios::binary);
  if (!blob) throw std::runtime_error("cannot open " + dir + "/params.bin");
  blob.seekg(0, std::ios::end);
  const size_t blob_size = static_cast<size_t>(blob.tellg());

  auto read_at = [&](size_t offset, float* dst, size_t count, const std::string& name) {
    if (offset + count * sizeof(float) > blob_size)
      throw std::runtime_error("checkpoint tensor " + name + ": blob truncated (need " +
                               std::to_string(offset + count * sizeof(float)) + " bytes, have " +
                               std::to_string(blob_size) + ")");
    blob.seekg(static_cast<std::streamoff>(offset));
    blob.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(count * sizeof(float)));
    if (!blob) throw std::runtime_error("checkpoint tensor " + name + ": read failed");
  };

  auto params = out.state.named_params();
  auto buffers = out.state.named_buffers();
  out.momentum.resize(params.size());

  for (const auto& entry : manifest.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const std::string kind = entry.at("kind").get<std::string>();
    const auto shape = entry.at("shape").get<std::vector<int>>();
    const size_t offset = entry.at("offset").get<size_t>();
    const size_t count = entry.at("count").get<size_t>();

    if (kind == "param") {
      bool found = false;
      for (auto& [pname, t] : params) {
        if (pname != name) continue;
        if (t->shape() != shape)
          throw std::runtime_error("checkpoint parameter " + name + ": shape " + shape_to_string(shape) +
                                   " does not match model " + t->shape_str());
        read_at(offset, t->data().data(), count, name);
        found = true;
        break;
      }
      if (!found) throw std::runtime_error("checkpoint parameter " + name + ": unknown for this model");
    } else if (kind == "buffer") {
      bool found = false;
      for (auto& [bname, buf] : buffers) {
        if (bname != name) continue;
        if (buf->size() != count)
          throw std::runtime_error("checkpoint buffer " + name + ": length mismatch");
        read_at(offset, buf->data(), count, name);
        found = true;
        break;
      }
      if (!found) throw std::runtime_error("checkpoint buffer " + name + ": unknown for this model");
    } else if (kind == "momentum") {
      bool found = false;
      for (size_t i = 0; i < params.size(); ++i) {
        if ("opt." + params[i].first != name) continue;
        out.momentum[i].resize(count);
        read_at(offset, out.momentum[i].data(), count, name);
        found = true;
        break;
      }
      if (!found) throw std::runtime_error("checkpoint momentum " + name + ": unknown for this model");
    } else {
      throw std::runtime_error("checkpoint tensor " + name + ": unknown kind \"" + kind + "\"");
    }
  }
  return out;
}

}  // namespace counting
