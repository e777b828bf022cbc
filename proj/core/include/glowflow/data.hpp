#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "glowflow/errors.hpp"
#include "glowflow/gtb.hpp"
#include "glowflow/image.hpp"
#include "glowflow/rng.hpp"

// Dataset ingestion (PNG directories, GTB archives, procedural toys),
// n-bit quantization and seeded batching.
namespace glow {

// Integer pixel batch handed to dequantization.
struct IntBatch {
  int n = 0, h = 0, w = 0, c = 0;
  std::vector<std::uint8_t> pixels;  // n*h*w*c, values in [0, 2^n_bits)

  std::size_t size() const { return static_cast<std::size_t>(n) * h * w * c; }
};

struct Dataset {
  int h = 0, w = 0, c = 0;
  int n_bits = 8;
  std::size_t count = 0;
  std::vector<std::uint8_t> pixels;       // count*h*w*c
  std::vector<std::string> names;         // per item, for PNG directories

  std::size_t item_size() const {
    return static_cast<std::size_t>(h) * w * c;
  }

  const std::uint8_t* item(std::size_t i) const {
    return pixels.data() + i * item_size();
  }

  IntBatch slice(std::size_t start, std::size_t n) const {
    if (start + n > count) throw DataError("dataset slice out of range");
    IntBatch b;
    b.n = static_cast<int>(n);
    b.h = h;
    b.w = w;
    b.c = c;
    b.pixels.assign(item(start), item(start) + n * item_size());
    return b;
  }

  IntBatch gather(const std::vector<std::size_t>& idx) const {
    IntBatch b;
    b.n = static_cast<int>(idx.size());
    b.h = h;
    b.w = w;
    b.c = c;
    b.pixels.resize(idx.size() * item_size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] >= count) throw DataError("dataset index out of range");
      std::copy(item(idx[i]), item(idx[i]) + item_size(),
                b.pixels.data() + i * item_size());
    }
    return b;
  }

  void check_ranges() const {
    const int levels = 1 << n_bits;
    for (const std::uint8_t p : pixels) {
      if (p >= levels) {
        throw DataError("pixel value " + std::to_string(p) +
                        " out of range for " + std::to_string(n_bits) +
                        " bits");
      }
    }
  }

  static Dataset from_pngs(const std::string& dir, int n_bits);
  static Dataset from_gtb(const std::string& path, int n_bits);
  static Dataset load(const std::string& source, int n_bits = 8);
};

// ---------------------------------------------------------------------------
// Procedural toy datasets (desk-scale stand-ins for the image benchmarks).
// ---------------------------------------------------------------------------

enum class ToyKind { two_moons, gauss_mixture, checker8x8 };

// Fixed parameters of the 2-D Gaussian mixture toy, in [0,1) units of the
// 8-bit pixel box: two tight isotropic equal-weight components on the
// diagonal, far enough apart that an affine fit leaves well over 1 nat/dim
// on the table.
struct ToyMixtureSpec {
  double mean1[2] = {48.0 / 256.0, 48.0 / 256.0};
  double mean2[2] = {208.0 / 256.0, 208.0 / 256.0};
  double sigma = 3.0 / 256.0;

  double pdf(double x, double y) const {
    auto comp = [this](double x_, double y_, const double* m) {
      const double dx = (x_ - m[0]) / sigma;
      const double dy = (y_ - m[1]) / sigma;
      return std::exp(-0.5 * (dx * dx + dy * dy)) /
             (2.0 * 3.14159265358979323846 * sigma * sigma);
    };
    return 0.5 * comp(x, y, mean1) + 0.5 * comp(x, y, mean2);
  }

  // One continuous draw in [0,1) units.
  void sample(Rng& rng, double& x, double& y) const {
    const double* m = rng.uniform01() < 0.5 ? mean1 : mean2;
    x = m[0] + sigma * rng.normal();
    y = m[1] + sigma * rng.normal();
  }
};

inline ToyKind parse_toy_kind(const std::string& s) {
  if (s == "two_moons") return ToyKind::two_moons;
  if (s == "gauss_mixture") return ToyKind::gauss_mixture;
  if (s == "checker8x8") return ToyKind::checker8x8;
  throw ArgError("unknown toy dataset kind: " + s);
}

// Deterministic per seed. 2-D kinds become 1x1x2 8-bit images; checker8x8
// emits 8x8x1 3-bit images.
inline Dataset toy_generate(ToyKind kind, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw ArgError("toy_generate: n must be >= 1");
  Rng rng(derive_seed(seed, 0x70F0));
  Dataset ds;
  if (kind == ToyKind::gauss_mixture || kind == ToyKind::two_moons) {
    ds.h = 1;
    ds.w = 1;
    ds.c = 2;
    ds.n_bits = 8;
    ds.count = n;
    ds.pixels.resize(n * 2);
    const ToyMixtureSpec mix;
    for (std::size_t i = 0; i < n; ++i) {
      double x, y;
      if (kind == ToyKind::gauss_mixture) {
        mix.sample(rng, x, y);
      } else {
        // Two interleaved half-moons mapped into the unit box.
        const double t = rng.uniform01() * 3.14159265358979323846;
        double mx, my;
        if (rng.uniform01() < 0.5) {
          mx = std::cos(t);
          my = std::sin(t);
        } else {
          mx = 1.0 - std::cos(t);
          my = 0.5 - std::sin(t);
        }
        mx += 0.08 * rng.normal();
        my += 0.08 * rng.normal();
        x = 0.25 * mx + 0.375;   // [-1.3, 2.3] -> about [0.05, 0.95]
        y = 0.35 * my + 0.45;
      }
      auto to_pixel = [](double v) {
        int p = static_cast<int>(std::floor(v * 256.0));
        if (p < 0) p = 0;
        if (p > 255) p = 255;
        return static_cast<std::uint8_t>(p);
      };
      ds.pixels[2 * i] = to_pixel(x);
      ds.pixels[2 * i + 1] = to_pixel(y);
    }
    return ds;
  }

  // checker8x8: random cell size / phase / two tone levels plus one-step
  // pixel noise, range [0, 8).
  ds.h = 8;
  ds.w = 8;
  ds.c = 1;
  ds.n_bits = 3;
  ds.count = n;
  ds.pixels.resize(n * 64);
  for (std::size_t i = 0; i < n; ++i) {
    const int cell = 1 << rng.uniform_int(0, 2);  // 1, 2 or 4
    const int py = rng.uniform_int(0, cell - 1);
    const int px = rng.uniform_int(0, cell - 1);
    const int lo = rng.uniform_int(0, 2);
    const int hi = rng.uniform_int(5, 7);
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) {
        const int parity = ((y + py) / cell + (x + px) / cell) % 2;
        int v = parity ? hi : lo;
        const double u = rng.uniform01();
        if (u < 0.25) {
          v -= 1;
        } else if (u >= 0.75) {
          v += 1;
        }
        if (v < 0) v = 0;
        if (v > 7) v = 7;
        ds.pixels[i * 64 + y * 8 + x] = static_cast<std::uint8_t>(v);
      }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Batching: seeded permutation per epoch, last partial batch dropped.
// ---------------------------------------------------------------------------

inline std::vector<std::size_t> epoch_permutation(std::size_t count,
                                                  std::uint64_t shuffle_seed,
                                                  std::uint64_t epoch) {
  Rng rng(derive_seed(shuffle_seed, epoch));
  return rng.permutation(count);
}

class Batcher {
 public:
  Batcher(const Dataset& ds, int batch_size, std::uint64_t shuffle_seed)
      : ds_(ds), batch_(batch_size), seed_(shuffle_seed) {
    if (batch_size < 1) throw ArgError("batch size must be >= 1");
    if (ds.count < static_cast<std::size_t>(batch_size)) {
      throw DataError("dataset smaller than one batch (drop-last batching)");
    }
    order_ = epoch_permutation(ds_.count, seed_, epoch_);
  }

  // First batch of the first epoch, without consuming it (used for DDI).
  IntBatch peek_first() const {
    const std::vector<std::size_t> order =
        epoch_permutation(ds_.count, seed_, 0);
    return ds_.gather({order.begin(), order.begin() + batch_});
  }

  IntBatch next() {
    if (pos_ + static_cast<std::size_t>(batch_) > ds_.count) {
      ++epoch_;
      order_ = epoch_permutation(ds_.count, seed_, epoch_);
      pos_ = 0;
    }
    const IntBatch b = ds_.gather(
        {order_.begin() + pos_, order_.begin() + pos_ + batch_});
    pos_ += batch_;
    return b;
  }

  std::uint64_t epoch() const { return epoch_; }

 private:
  const Dataset& ds_;
  int batch_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::size_t pos_ = 0;
  std::vector<std::size_t> order_;
};

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

inline Dataset Dataset::from_pngs(const std::string& dir, int n_bits) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir);
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") {
      files.push_back(e.path().string());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no PNG files in: " + dir);

  Dataset ds;
  ds.n_bits = n_bits;
  const int shift = 8 - n_bits;
  for (const std::string& f : files) {
    const Image8 img = read_png(f);
    if (ds.count == 0) {
      ds.h = img.h;
      ds.w = img.w;
      ds.c = img.c;
    } else if (img.h != ds.h || img.w != ds.w || img.c != ds.c) {
      throw DataError("mixed image shapes in dataset: " + f);
    }
    for (const std::uint8_t p : img.pixels) {
      ds.pixels.push_back(static_cast<std::uint8_t>(p >> shift));
    }
    ds.names.push_back(fs::path(f).filename().string());
    ++ds.count;
  }
  return ds;
}

inline Dataset Dataset::from_gtb(const std::string& path, int n_bits) {
  const GtbBlob blob = read_gtb_file(path);
  if (blob.dims.size() != 4) {
    throw DataError("GTB dataset must be rank 4 (n,h,w,c): " + path);
  }
  const std::vector<double> vals = blob_values<double>(blob);
  Dataset ds;
  ds.n_bits = n_bits;
  ds.count = blob.dims[0];
  ds.h = static_cast<int>(blob.dims[1]);
  ds.w = static_cast<int>(blob.dims[2]);
  ds.c = static_cast<int>(blob.dims[3]);
  ds.pixels.resize(vals.size());
  const int levels = 1 << n_bits;
  for (std::size_t i = 0; i < vals.size(); ++i) {
    const double v = vals[i];
    if (v != std::floor(v) || v < 0 || v >= levels) {
      throw DataError("GTB dataset value " + std::to_string(v) +
                      " is not an integer pixel in [0, 2^" +
                      std::to_string(n_bits) + "): " + path);
    }
    ds.pixels[i] = static_cast<std::uint8_t>(v);
  }
  return ds;
}

// Accepts "toy:<kind>:n=<count>:seed=<seed>", a directory of PNGs, or a
// .gtb archive path.
inline Dataset Dataset::load(const std::string& source, int n_bits) {
  if (source.rfind("toy:", 0) == 0) {
    std::stringstream ss(source.substr(4));
    std::string kind_s;
    if (!std::getline(ss, kind_s, ':')) {
      throw ArgError("toy spec missing kind: " + source);
    }
    std::size_t n = 1024;
    std::uint64_t seed = 0;
    std::string part;
    while (std::getline(ss, part, ':')) {
      const std::size_t eq = part.find('=');
      if (eq == std::string::npos) {
        throw ArgError("malformed toy spec segment '" + part + "'");
      }
      const std::string key = part.substr(0, eq);
      const std::string val = part.substr(eq + 1);
      if (key == "n") {
        n = std::stoull(val);
      } else if (key == "seed") {
        seed = std::stoull(val);
      } else {
        throw ArgError("unknown toy spec key '" + key + "'");
      }
    }
    return toy_generate(parse_toy_kind(kind_s), n, seed);
  }
  namespace fs = std::filesystem;
  if (fs::is_directory(source)) return from_pngs(source, n_bits);
  if (fs::is_regular_file(source)) return from_gtb(source, n_bits);
  throw DataError("dataset source not found: " + source);
}

// Binary attribute labels: CSV lines "filename,0|1".
inline std::map<std::string, int> load_labels(const std::string& csv_path) {
  std::ifstream f(csv_path);
  if (!f) throw DataError("cannot open labels: " + csv_path);
  std::map<std::string, int> labels;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::size_t comma = line.rfind(',');
    if (comma == std::string::npos) {
      throw DataError("malformed label line " + std::to_string(lineno) +
                      " in " + csv_path);
    }
    const std::string name = line.substr(0, comma);
    const std::string val = line.substr(comma + 1);
    if (val != "0" && val != "1") {
      throw DataError("label must be 0 or 1 at line " +
                      std::to_string(lineno) + " in " + csv_path);
    }
    labels[name] = val == "1" ? 1 : 0;
  }
  if (labels.empty()) throw DataError("no labels in " + csv_path);
  return labels;
}

}  // namespace glow
