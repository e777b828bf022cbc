#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "glowflow/data.hpp"
#include "glowflow/image.hpp"

using namespace glow;

namespace {
const std::string kTmp = GLOW_TEST_TMPDIR;
}

TEST_CASE("toy datasets are deterministic per seed") {
  const Dataset a = toy_generate(ToyKind::gauss_mixture, 256, 7);
  const Dataset b = toy_generate(ToyKind::gauss_mixture, 256, 7);
  const Dataset c = toy_generate(ToyKind::gauss_mixture, 256, 8);
  CHECK(a.pixels == b.pixels);
  CHECK(a.pixels != c.pixels);
  CHECK(a.h == 1);
  CHECK(a.w == 1);
  CHECK(a.c == 2);
  CHECK(a.n_bits == 8);
}

TEST_CASE("gauss_mixture sample mean sits near the mixture mean") {
  const std::size_t n = 8192;
  const Dataset ds = toy_generate(ToyKind::gauss_mixture, n, 3);
  const ToyMixtureSpec mix;
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += ds.pixels[2 * i] / 256.0;
    my += ds.pixels[2 * i + 1] / 256.0;
  }
  mx /= n;
  my /= n;
  const double want_x = 0.5 * (mix.mean1[0] + mix.mean2[0]);
  const double want_y = 0.5 * (mix.mean1[1] + mix.mean2[1]);
  // Mixture sd per dim ~ sqrt(sep^2/4 + sigma^2) ~ 0.31; 3 sigma / sqrt(n).
  const double tol = 3.0 * 0.35 / std::sqrt(static_cast<double>(n));
  CHECK(std::abs(mx - want_x) < tol + 1.0 / 256.0);
  CHECK(std::abs(my - want_y) < tol + 1.0 / 256.0);
}

TEST_CASE("checker8x8 pixels stay inside the 3-bit range") {
  const Dataset ds = toy_generate(ToyKind::checker8x8, 128, 5);
  CHECK(ds.h == 8);
  CHECK(ds.w == 8);
  CHECK(ds.c == 1);
  CHECK(ds.n_bits == 3);
  for (const std::uint8_t p : ds.pixels) CHECK(p < 8);
  CHECK_NOTHROW(ds.check_ranges());
}

TEST_CASE("two_moons stays in the pixel box") {
  const Dataset ds = toy_generate(ToyKind::two_moons, 512, 9);
  CHECK(ds.c == 2);
  for (const std::uint8_t p : ds.pixels) CHECK(p < 255 + 1);
}

TEST_CASE("batches form a permutation of the dataset minus the remainder") {
  const Dataset ds = toy_generate(ToyKind::gauss_mixture, 100, 11);
  Batcher batcher(ds, 32, 99);
  std::multiset<std::vector<std::uint8_t>> seen;
  for (int b = 0; b < 3; ++b) {  // 3 * 32 = 96 <= 100, same epoch
    const IntBatch batch = batcher.next();
    CHECK(batch.n == 32);
    for (int i = 0; i < batch.n; ++i) {
      seen.insert({batch.pixels.begin() + i * 2,
                   batch.pixels.begin() + (i + 1) * 2});
    }
  }
  CHECK(seen.size() == 96);
  // Every seen item exists in the dataset (no duplication beyond source
  // multiplicity, no invention).
  std::multiset<std::vector<std::uint8_t>> source;
  for (std::size_t i = 0; i < ds.count; ++i) {
    source.insert({ds.item(i), ds.item(i) + 2});
  }
  for (const auto& item : seen) {
    CHECK(source.count(item) >= 1);
  }
}

TEST_CASE("same shuffle seed reproduces the order; epochs differ") {
  const Dataset ds = toy_generate(ToyKind::gauss_mixture, 64, 12);
  Batcher a(ds, 16, 5), b(ds, 16, 5);
  for (int i = 0; i < 4; ++i) {
    CHECK(a.next().pixels == b.next().pixels);
  }
  const auto e0 = epoch_permutation(64, 5, 0);
  const auto e1 = epoch_permutation(64, 5, 1);
  CHECK(e0 != e1);
  CHECK(epoch_permutation(64, 5, 0) == e0);
}

TEST_CASE("drop-last batching rejects datasets smaller than one batch") {
  const Dataset ds = toy_generate(ToyKind::gauss_mixture, 8, 13);
  CHECK_THROWS_AS(Batcher(ds, 16, 1), DataError);
}

TEST_CASE("PNG directory round trip with n-bit quantization") {
  namespace fs = std::filesystem;
  const std::string dir = kTmp + "/png_ds";
  fs::create_directories(dir);
  for (int i = 0; i < 3; ++i) {
    Image8 img;
    img.h = 4;
    img.w = 4;
    img.c = 1;
    img.pixels.resize(16);
    for (int p = 0; p < 16; ++p) {
      img.pixels[p] = static_cast<std::uint8_t>((i * 40 + p * 16) % 256);
    }
    write_png(dir + "/img" + std::to_string(i) + ".png", img);
  }

  const Dataset ds5 = Dataset::from_pngs(dir, 5);
  CHECK(ds5.count == 3);
  CHECK(ds5.h == 4);
  CHECK(ds5.c == 1);
  CHECK(ds5.names.size() == 3);
  int maxv = 0;
  for (const std::uint8_t p : ds5.pixels) maxv = std::max(maxv, int(p));
  CHECK(maxv == 31);  // 8-bit 255 >> 3

  const Dataset ds8 = Dataset::from_pngs(dir, 8);
  // floor(p / 2^(8-5)) relation between the two quantizations.
  for (std::size_t i = 0; i < ds8.pixels.size(); ++i) {
    CHECK(ds5.pixels[i] == ds8.pixels[i] >> 3);
  }
}

TEST_CASE("empty directory and mixed shapes raise DataError") {
  namespace fs = std::filesystem;
  const std::string dir = kTmp + "/png_empty";
  fs::create_directories(dir);
  CHECK_THROWS_AS(Dataset::from_pngs(dir, 8), DataError);

  const std::string mixed = kTmp + "/png_mixed";
  fs::create_directories(mixed);
  Image8 a;
  a.h = 2;
  a.w = 2;
  a.c = 1;
  a.pixels.assign(4, 10);
  write_png(mixed + "/a.png", a);
  Image8 b;
  b.h = 4;
  b.w = 4;
  b.c = 1;
  b.pixels.assign(16, 10);
  write_png(mixed + "/b.png", b);
  CHECK_THROWS_AS(Dataset::from_pngs(mixed, 8), DataError);
}

TEST_CASE("GTB archive loading validates integer range") {
  const std::string ok_path = kTmp + "/ds_ok.gtb";
  std::vector<float> vals = {0, 1, 2, 3, 4, 5, 6, 7};
  write_gtb_file(ok_path, make_blob(vals, {2, 1, 2, 2}));
  const Dataset ds = Dataset::from_gtb(ok_path, 3);
  CHECK(ds.count == 2);
  CHECK(ds.pixels[7] == 7);

  const std::string bad_path = kTmp + "/ds_bad.gtb";
  vals[3] = 8;  // out of 3-bit range
  write_gtb_file(bad_path, make_blob(vals, {2, 1, 2, 2}));
  CHECK_THROWS_AS(Dataset::from_gtb(bad_path, 3), DataError);

  vals[3] = 2.5f;  // not an integer
  write_gtb_file(bad_path, make_blob(vals, {2, 1, 2, 2}));
  CHECK_THROWS_AS(Dataset::from_gtb(bad_path, 3), DataError);
}

TEST_CASE("dataset source strings dispatch correctly") {
  const Dataset toy = Dataset::load("toy:gauss_mixture:n=128:seed=7");
  CHECK(toy.count == 128);
  const Dataset toy2 = Dataset::load("toy:checker8x8:n=32:seed=1");
  CHECK(toy2.n_bits == 3);
  CHECK_THROWS_AS(Dataset::load("toy:nope:n=1:seed=1"), ArgError);
  CHECK_THROWS_AS(Dataset::load("toy:gauss_mixture:bogus"), ArgError);
  CHECK_THROWS_AS(Dataset::load("/no/such/path"), DataError);
}

TEST_CASE("label CSV parsing") {
  const std::string path = kTmp + "/labels.csv";
  {
    std::ofstream f(path);
    f << "a.png,1\nb.png,0\nc.png,1\n";
  }
  const auto labels = load_labels(path);
  CHECK(labels.size() == 3);
  CHECK(labels.at("a.png") == 1);
  CHECK(labels.at("b.png") == 0);

  const std::string bad = kTmp + "/labels_bad.csv";
  {
    std::ofstream f(bad);
    f << "a.png,2\n";
  }
  CHECK_THROWS_AS(load_labels(bad), DataError);
}
