#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "doctest.h"
#include "dust/data.hpp"
#include "dust/synth.hpp"

using namespace dust;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("dust_test_synth_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::array<std::size_t, 4> histogram(const std::vector<std::uint8_t>& labels) {
  std::array<std::size_t, 4> h{};
  for (auto v : labels) ++h[v];
  return h;
}

FloatImage ramp(std::size_t h, std::size_t w) {
  FloatImage im{h, w, std::vector<float>(h * w)};
  for (std::size_t i = 0; i < h * w; ++i) im.values[i] = static_cast<float>(i);
  return im;
}

}  // namespace

TEST_CASE("every foreground class covers at least 1% of the canvas") {
  SynthConfig cfg;
  for (Split split : {Split::Labeled, Split::Unlabeled, Split::Test}) {
    for (std::size_t i = 0; i < 40; ++i) {
      auto s = generate_sample(cfg, split, i);
      CHECK(s.mask.labels.size() == 80 * 80);
      auto h = histogram(s.mask.labels);
      for (std::size_t c = 1; c < 4; ++c) CHECK(h[c] >= 64);
      CHECK(h[0] > 0);
      CHECK(s.difficulty >= 0);
      CHECK(s.difficulty <= 1);
    }
  }
}

TEST_CASE("zero difficulty gives a piecewise-constant image") {
  SynthConfig cfg;
  cfg.difficulty_lo = cfg.difficulty_hi = 0;
  auto s = generate_sample(cfg, Split::Labeled, 3);
  std::array<int, 4> level = {-1, -1, -1, -1};
  for (std::size_t i = 0; i < s.mask.labels.size(); ++i) {
    int& l = level[s.mask.labels[i]];
    if (l < 0) l = s.image.pixels[i];
    CHECK(l == s.image.pixels[i]);
  }
}

TEST_CASE("sample content depends only on seed and id") {
  SynthConfig a, b;
  b.labeled = 20;
  b.unlabeled = 3;
  auto x = generate_sample(a, Split::Unlabeled, 2);
  auto y = generate_sample(b, Split::Unlabeled, 2);
  CHECK(x.image.pixels == y.image.pixels);
  CHECK(x.mask.labels == y.mask.labels);
  b.seed = 2;
  CHECK(generate_sample(b, Split::Unlabeled, 2).image.pixels != x.image.pixels);
}

TEST_CASE("dataset generation is byte-identical and round-trips") {
  SynthConfig cfg;
  cfg.labeled = 2;
  cfg.unlabeled = 3;
  cfg.val = 1;
  cfg.test = 2;
  const auto d1 = scratch("a"), d2 = scratch("b");
  auto m = generate_dataset(cfg, d1);
  generate_dataset(cfg, d2);
  CHECK(m.samples.size() == 8);
  CHECK(m.count(Split::Unlabeled) == 3);
  for (const auto& r : m.samples) {
    CHECK(slurp(d1 / r.image_file) == slurp(d2 / r.image_file));
    CHECK(slurp(d1 / r.mask_file) == slurp(d2 / r.mask_file));
  }
  CHECK(slurp(d1 / "manifest.json") == slurp(d2 / "manifest.json"));

  auto back = read_manifest(d1 / "manifest.json");
  REQUIRE(back.samples.size() == m.samples.size());
  for (std::size_t i = 0; i < m.samples.size(); ++i) {
    CHECK(back.samples[i].id == m.samples[i].id);
    CHECK(back.samples[i].difficulty == m.samples[i].difficulty);
    CHECK(back.samples[i].split == m.samples[i].split);
  }
  auto s = generate_sample(cfg, Split::Test, 1);
  auto img = read_pgm16(d1 / "images/test_001.pgm");
  CHECK(img.pixels == s.image.pixels);
  CHECK(read_pgm8(d1 / "masks/test_001.pgm").labels == s.mask.labels);

  auto ds = load_dataset(d1);
  CHECK(ds.of(Split::Labeled).size() == 2);
  CHECK(ds.get("val_000").image.values.size() == 80 * 80);
  CHECK_THROWS_AS(ds.get("val_009"), std::out_of_range);
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("config validation") {
  SynthConfig cfg;
  cfg.size = 63;
  CHECK_THROWS_AS(validate(cfg), std::invalid_argument);
  cfg.size = 80;
  cfg.labeled = 0;
  CHECK_THROWS_AS(validate(cfg), std::invalid_argument);
  cfg.labeled = 1;
  cfg.difficulty_hi = 1.5;
  CHECK_THROWS_AS(validate(cfg), std::invalid_argument);
}

TEST_CASE("preprocess standardizes") {
  auto s = generate_sample(SynthConfig{}, Split::Val, 0);
  auto f = preprocess(s.image);
  double m = 0, v = 0;
  for (float x : f.values) m += x;
  m /= f.values.size();
  for (float x : f.values) v += (x - m) * (x - m);
  CHECK(std::abs(m) < 1e-5);
  CHECK(std::abs(std::sqrt(v / f.values.size()) - 1) < 1e-4);

  // a*x + b with a = 1/2 is exact on even intensities.
  Image16 scaled = s.image;
  Image16 even = s.image;
  for (auto& p : even.pixels) p &= ~1u;
  for (std::size_t i = 0; i < scaled.pixels.size(); ++i) scaled.pixels[i] = even.pixels[i] / 2 + 7;
  auto fe = preprocess(even), fs_ = preprocess(scaled);
  for (std::size_t i = 0; i < fe.values.size(); ++i) CHECK(std::abs(fe.values[i] - fs_.values[i]) < 1e-5);

  Image16 flat{4, 4, std::vector<std::uint16_t>(16, 1234)};
  for (float x : preprocess(flat).values) CHECK(x == 0.f);
}

TEST_CASE("identity augmentation is a crop") {
  auto im = ramp(6, 6);
  AugmentDraw d;
  d.crop_y = 1;
  d.crop_x = 2;
  auto out = apply_augment(im, d, 3);
  CHECK(out.values == std::vector<float>{8, 9, 10, 14, 15, 16, 20, 21, 22});
  auto c = center_crop(im, 4);
  CHECK(c.values[0] == 7.f);
}

TEST_CASE("rotation and flips") {
  auto im = ramp(2, 3);  // 0 1 2 / 3 4 5
  AugmentDraw d;
  d.rot_k = 1;  // counter-clockwise: 2 5 / 1 4 / 0 3
  CHECK(apply_augment(im, d, 2).values == std::vector<float>{2, 5, 1, 4});
  d.rot_k = 2;
  CHECK(apply_augment(im, d, 2).values == std::vector<float>{5, 4, 2, 1});
  d.rot_k = 3;  // clockwise: 3 0 / 4 1 / 5 2
  CHECK(apply_augment(im, d, 2).values == std::vector<float>{3, 0, 4, 1});
  d.rot_k = 0;
  d.flip_h = true;
  CHECK(apply_augment(im, d, 2).values == std::vector<float>{2, 1, 5, 4});
  d.flip_h = false;
  d.flip_v = true;
  CHECK(apply_augment(im, d, 2).values == std::vector<float>{3, 4, 0, 1});
}

TEST_CASE("augment keeps image and mask aligned and preserves class counts") {
  auto s = generate_sample(SynthConfig{}, Split::Labeled, 0);
  auto f = preprocess(s.image);
  const auto index = ramp(80, 80);
  std::mt19937_64 rng(3), again(3);
  for (int t = 0; t < 20; ++t) {
    const auto d = draw_augment(rng, 80, 80, 64);
    auto [img, mask] = augment(f, s.mask, 64, again);
    CHECK(img.values == apply_augment(f, d, 64).values);
    const auto src = apply_augment(index, d, 64);
    for (std::size_t i = 0; i < src.values.size(); ++i) {
      const auto j = static_cast<std::size_t>(src.values[i]);
      CHECK(img.values[i] == f.values[j]);
      CHECK(mask.labels[i] == s.mask.labels[j]);
    }
    auto full = d;
    full.crop_y = full.crop_x = 0;
    CHECK(histogram(apply_augment(s.mask, full, 80).labels) == histogram(s.mask.labels));
  }
  std::mt19937_64 r(1);
  CHECK_THROWS_AS(augment(f, s.mask, 96, r), std::invalid_argument);
}

TEST_CASE("pgm rejects truncated files") {
  const auto p = scratch("bad.pgm");
  {
    std::ofstream out(p, std::ios::binary);
    out << "P5\n4 4\n255\nabc";
  }
  CHECK_THROWS_AS(read_pgm8(p), PgmError);
  fs::remove(p);
}
