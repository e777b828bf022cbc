#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "glowflow/errors.hpp"
#include "glowflow/gtb.hpp"
#include "glowflow/model.hpp"

// Model checkpoints and latent files: a magic string, a JSON manifest and
// the named GTB tensor blobs, concatenated in manifest order. JSON keys are
// sorted by nlohmann so the bytes are deterministic.
namespace glow {

inline constexpr const char* kCheckpointMagic = "GLOWCKPT/1\n";
inline constexpr const char* kLatentMagic = "GLOWLAT/1\n";

// Low-level container I/O (checkpoint.cpp).
void write_container(const std::string& path, const std::string& magic,
                     const nlohmann::json& manifest,
                     const std::vector<GtbBlob>& blobs);
std::pair<nlohmann::json, std::vector<GtbBlob>> read_container(
    const std::string& path, const std::string& magic);

// ---------------------------------------------------------------------------
// GlowConfig <-> JSON
// ---------------------------------------------------------------------------

nlohmann::json config_to_json(const GlowConfig& cfg);
GlowConfig config_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Model checkpoints
// ---------------------------------------------------------------------------

template <typename T>
void save_checkpoint(const std::string& path, FlowModel<T>& model,
                     std::uint64_t train_seed = 0, std::int64_t step = 0) {
  nlohmann::json manifest;
  manifest["config"] = config_to_json(model.cfg);
  manifest["dtype"] = sizeof(T) == 4 ? "f32" : "f64";
  manifest["rng"] = {{"model_seed", model.build_seed},
                     {"train_seed", train_seed}};
  manifest["step"] = step;

  std::vector<GtbBlob> blobs;
  nlohmann::json tensors = nlohmann::json::array();
  model.visit_params([&](const std::string& name, std::vector<T>& p) {
    tensors.push_back(
        {{"name", name}, {"size", p.size()}});
    blobs.push_back(
        make_blob(p, {static_cast<std::uint32_t>(p.size())}));
  });
  // Fixed permutations of the LU parameterization and actnorm init flags
  // travel in the manifest, not as trainable tensors.
  nlohmann::json extra = nlohmann::json::object();
  for (std::size_t l = 0; l < model.levels.size(); ++l) {
    for (std::size_t k = 0; k < model.levels[l].size(); ++k) {
      const std::string base =
          "level" + std::to_string(l) + ".step" + std::to_string(k) + ".";
      const FlowStep<T>& s = model.levels[l][k];
      extra[base + "actnorm.initialized"] = s.actnorm.initialized;
      if (s.mixer.kind == PermVariant::shuffle) {
        extra[base + "perm"] = s.mixer.perm.fwd;
      } else if (s.mixer.kind == PermVariant::invconv &&
                 s.mixer.conv.param == InvConvParam::lu) {
        extra[base + "invconv.P"] = s.mixer.conv.perm;
      }
    }
  }
  manifest["layer_state"] = extra;
  manifest["tensors"] = tensors;
  write_container(path, kCheckpointMagic, manifest, blobs);
}

template <typename T>
FlowModel<T> load_checkpoint(const std::string& path) {
  auto [manifest, blobs] = read_container(path, kCheckpointMagic);
  const GlowConfig cfg = config_from_json(manifest.at("config"));
  const std::uint64_t model_seed = manifest.at("rng").at("model_seed");
  FlowModel<T> model = FlowModel<T>::build(cfg, model_seed);

  const nlohmann::json& tensors = manifest.at("tensors");
  std::size_t idx = 0;
  model.visit_params([&](const std::string& name, std::vector<T>& p) {
    if (idx >= blobs.size()) {
      throw DataError("checkpoint missing tensor " + name + ": " + path);
    }
    const nlohmann::json& meta = tensors.at(idx);
    if (meta.at("name") != name || meta.at("size") != p.size()) {
      throw DataError("checkpoint tensor mismatch at " + name + ": " + path);
    }
    p = blob_values<T>(blobs[idx]);
    ++idx;
  });
  if (idx != blobs.size()) {
    throw DataError("checkpoint has extra tensors: " + path);
  }

  const nlohmann::json& extra = manifest.at("layer_state");
  for (std::size_t l = 0; l < model.levels.size(); ++l) {
    for (std::size_t k = 0; k < model.levels[l].size(); ++k) {
      const std::string base =
          "level" + std::to_string(l) + ".step" + std::to_string(k) + ".";
      FlowStep<T>& s = model.levels[l][k];
      s.actnorm.initialized = extra.at(base + "actnorm.initialized");
      if (s.mixer.kind == PermVariant::shuffle) {
        s.mixer.perm.fwd = extra.at(base + "perm").get<std::vector<int>>();
        s.mixer.perm.inv.assign(s.mixer.perm.fwd.size(), 0);
        for (std::size_t q = 0; q < s.mixer.perm.fwd.size(); ++q) {
          s.mixer.perm.inv[s.mixer.perm.fwd[q]] = static_cast<int>(q);
        }
      } else if (s.mixer.kind == PermVariant::invconv &&
                 s.mixer.conv.param == InvConvParam::lu) {
        s.mixer.conv.perm =
            extra.at(base + "invconv.P").get<std::vector<int>>();
      }
    }
  }
  return model;
}

// ---------------------------------------------------------------------------
// Latent files (encode CLI output, decode CLI input)
// ---------------------------------------------------------------------------

template <typename T>
void save_latents(const std::string& path, const LatentRecord<T>& lat) {
  nlohmann::json manifest;
  manifest["parts"] = lat.parts.size();
  std::vector<GtbBlob> blobs;
  for (const Tensor4<T>& p : lat.parts) blobs.push_back(make_blob(p));
  write_container(path, kLatentMagic, manifest, blobs);
}

template <typename T>
LatentRecord<T> load_latents(const std::string& path) {
  auto [manifest, blobs] = read_container(path, kLatentMagic);
  if (manifest.at("parts") != blobs.size()) {
    throw DataError("latent file part count mismatch: " + path);
  }
  LatentRecord<T> lat;
  for (const GtbBlob& b : blobs) lat.parts.push_back(blob_tensor4<T>(b));
  return lat;
}

}  // namespace glow
