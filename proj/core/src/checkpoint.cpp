#include "glowflow/checkpoint.hpp"

#include <fstream>
#include <sstream>

namespace glow {

void write_container(const std::string& path, const std::string& magic,
                     const nlohmann::json& manifest,
                     const std::vector<GtbBlob>& blobs) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open for writing: " + path);
  f.write(magic.data(), static_cast<std::streamsize>(magic.size()));
  const std::string m = manifest.dump();
  const std::uint64_t len = m.size();
  f.write(reinterpret_cast<const char*>(&len), 8);
  f.write(m.data(), static_cast<std::streamsize>(m.size()));
  for (const GtbBlob& b : blobs) write_gtb(f, b);
  if (!f) throw DataError("write failed: " + path);
}

std::pair<nlohmann::json, std::vector<GtbBlob>> read_container(
    const std::string& path, const std::string& magic) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open: " + path);
  std::string head(magic.size(), '\0');
  f.read(head.data(), static_cast<std::streamsize>(magic.size()));
  if (!f || head != magic) {
    throw DataError("bad magic (expected " + magic.substr(0, magic.size() - 1) +
                    "): " + path);
  }
  std::uint64_t len = 0;
  f.read(reinterpret_cast<char*>(&len), 8);
  if (!f || len > (1ull << 32)) throw DataError("corrupt manifest: " + path);
  std::string m(len, '\0');
  f.read(m.data(), static_cast<std::streamsize>(len));
  if (!f) throw DataError("truncated manifest: " + path);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(m);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest parse error in " + path + ": " + e.what());
  }
  std::vector<GtbBlob> blobs;
  while (f.peek() != std::char_traits<char>::eof()) {
    blobs.push_back(read_gtb(f, path));
  }
  return {std::move(manifest), std::move(blobs)};
}

nlohmann::json config_to_json(const GlowConfig& cfg) {
  return {{"K", cfg.K},
          {"L", cfg.L},
          {"coupling", to_string(cfg.coupling)},
          {"perm", to_string(cfg.perm)},
          {"invconv_param", to_string(cfg.invconv_param)},
          {"hidden_channels", cfg.hidden_channels},
          {"input_shape", {cfg.input.h, cfg.input.w, cfg.input.c}},
          {"n_bits", cfg.n_bits}};
}

namespace {

CouplingMode parse_coupling(const std::string& s) {
  if (s == "affine") return CouplingMode::affine;
  if (s == "additive") return CouplingMode::additive;
  throw ArgError("coupling must be 'affine' or 'additive', got '" + s + "'");
}

PermVariant parse_perm(const std::string& s) {
  if (s == "reverse") return PermVariant::reverse;
  if (s == "shuffle") return PermVariant::shuffle;
  if (s == "invconv") return PermVariant::invconv;
  throw ArgError("perm must be 'reverse', 'shuffle' or 'invconv', got '" + s +
                 "'");
}

InvConvParam parse_invconv_param(const std::string& s) {
  if (s == "dense") return InvConvParam::dense;
  if (s == "lu") return InvConvParam::lu;
  throw ArgError("invconv_param must be 'dense' or 'lu', got '" + s + "'");
}

}  // namespace

GlowConfig config_from_json(const nlohmann::json& j) {
  GlowConfig cfg;
  try {
    cfg.K = j.at("K");
    cfg.L = j.at("L");
    cfg.coupling = parse_coupling(j.at("coupling"));
    cfg.perm = parse_perm(j.at("perm"));
    if (j.contains("invconv_param")) {
      cfg.invconv_param = parse_invconv_param(j.at("invconv_param"));
    }
    if (j.contains("hidden_channels")) {
      cfg.hidden_channels = j.at("hidden_channels");
    }
    const auto& shape = j.at("input_shape");
    if (!shape.is_array() || shape.size() != 3) {
      throw ArgError("input_shape must be [h, w, c]");
    }
    cfg.input.h = shape[0];
    cfg.input.w = shape[1];
    cfg.input.c = shape[2];
    if (j.contains("n_bits")) cfg.n_bits = j.at("n_bits");
  } catch (const nlohmann::json::exception& e) {
    throw ArgError(std::string("bad model config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

}  // namespace glow
