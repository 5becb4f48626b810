#include "dust/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>

#include "dust/seed.hpp"
#include "json.hpp"

namespace dust {
namespace {

using nlohmann::json;

constexpr std::array<Split, 4> kSplits = {Split::Labeled, Split::Unlabeled, Split::Val, Split::Test};

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
}

// Ellipse with a low-order angular perturbation of its boundary.
struct Blob {
  double cx = 0, cy = 0, a = 1, b = 1, theta = 0;
  std::array<double, 3> coef{}, phase{};
  double amp = 0;

  bool contains(double x, double y, double grow = 0) const {
    const double dx = x - cx, dy = y - cy;
    const double c = std::cos(theta), s = std::sin(theta);
    const double u = (dx * c + dy * s) / (a + grow);
    const double v = (-dx * s + dy * c) / (b + grow);
    const double rho = std::sqrt(u * u + v * v);
    const double phi = std::atan2(v, u);
    double j = 0;
    for (int k = 0; k < 3; ++k) j += coef[k] * std::sin((k + 2) * phi + phase[k]);
    return rho < 1.0 + amp * j;
  }

  double reach(double grow = 0) const { return (std::max(a, b) + grow) * (1.0 + amp); }
};

struct Geometry {
  Blob side;  // class 1
  Blob wall;  // class 3 core; class 2 ring is the core grown by `ring`
  double ring = 0;
  std::array<double, 4> level{};
};

Geometry draw_geometry(std::mt19937_64& rng, double size, double difficulty, double shrink) {
  const double s = size / 80.0 * shrink;
  Geometry g;
  const double jitter = 0.18 * difficulty;
  auto perturb = [&](Blob& b) {
    b.amp = jitter;
    for (int k = 0; k < 3; ++k) {
      b.coef[k] = uniform(rng, -1, 1) / (k + 1);
      b.phase[k] = uniform(rng, 0, 2 * std::numbers::pi);
    }
  };
  Blob& core = g.wall;
  core.cx = size / 2 + uniform(rng, -4, 4) * s;
  core.cy = size / 2 + uniform(rng, -4, 4) * s;
  core.a = uniform(rng, 6, 9) * s;
  core.b = uniform(rng, 6, 9) * s;
  core.theta = uniform(rng, 0, std::numbers::pi);
  perturb(core);
  g.ring = uniform(rng, 3, 5) * s;

  Blob& side = g.side;
  side.a = uniform(rng, 8, 12) * s;
  side.b = uniform(rng, 5, 8) * s;
  const double dir = uniform(rng, 0, 2 * std::numbers::pi);
  const double dist = std::max(core.a, core.b) + g.ring + 0.55 * side.b;
  side.cx = core.cx + dist * std::cos(dir);
  side.cy = core.cy + dist * std::sin(dir);
  side.theta = dir + std::numbers::pi / 2;
  perturb(side);

  const std::array<double, 4> base = {0.15, 0.6, 0.38, 0.85};
  for (std::size_t c = 0; c < 4; ++c) g.level[c] = base[c] + uniform(rng, -0.04, 0.04);
  return g;
}

bool fits(const Geometry& g, double size) {
  auto inside = [&](const Blob& b, double grow) {
    const double r = b.reach(grow);
    return b.cx - r >= 1 && b.cy - r >= 1 && b.cx + r <= size - 1 && b.cy + r <= size - 1;
  };
  return inside(g.side, 0) && inside(g.wall, g.ring);
}

Mask8 rasterize(const Geometry& g, std::size_t size) {
  Mask8 m{size, size, std::vector<std::uint8_t>(size * size, 0)};
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      std::uint8_t c = 0;
      if (g.side.contains(px, py)) c = 1;
      if (g.wall.contains(px, py, g.ring)) c = 2;
      if (g.wall.contains(px, py)) c = 3;
      m.labels[y * size + x] = c;
    }
  }
  return m;
}

bool every_class_present(const Mask8& m) {
  std::array<std::size_t, kSynthClasses> hist{};
  for (auto v : m.labels) ++hist[v];
  const auto min_px = static_cast<std::size_t>(std::ceil(0.01 * static_cast<double>(m.labels.size())));
  for (std::size_t c = 1; c < kSynthClasses; ++c) {
    if (hist[c] < min_px) return false;
  }
  return true;
}

}  // namespace

std::string to_string(Split split) {
  switch (split) {
    case Split::Labeled: return "labeled";
    case Split::Unlabeled: return "unlabeled";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Split split_from_string(const std::string& name) {
  for (Split s : kSplits) {
    if (to_string(s) == name) return s;
  }
  throw std::invalid_argument("unknown split '" + name + "'");
}

std::size_t SynthConfig::count(Split s) const {
  switch (s) {
    case Split::Labeled: return labeled;
    case Split::Unlabeled: return unlabeled;
    case Split::Val: return val;
    case Split::Test: return test;
  }
  return 0;
}

void validate(const SynthConfig& cfg) {
  if (cfg.labeled == 0 || cfg.unlabeled == 0) {
    throw std::invalid_argument("synth: labeled and unlabeled counts must be >= 1");
  }
  if (cfg.spatial_divisor == 0 || cfg.size % cfg.spatial_divisor != 0) {
    throw std::invalid_argument("synth: size " + std::to_string(cfg.size) +
                                " must be a multiple of " + std::to_string(cfg.spatial_divisor));
  }
  if (cfg.size < 32) throw std::invalid_argument("synth: size must be >= 32");
  if (!(cfg.difficulty_lo >= 0 && cfg.difficulty_lo <= cfg.difficulty_hi && cfg.difficulty_hi <= 1)) {
    throw std::invalid_argument("synth: difficulty range must satisfy 0 <= lo <= hi <= 1");
  }
}

std::string sample_id(Split split, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%03zu", to_string(split).c_str(), index);
  return buf;
}

SynthSample generate_sample(const SynthConfig& cfg, Split split, std::size_t index) {
  SynthSample out;
  out.id = sample_id(split, index);
  out.split = split;
  std::mt19937_64 rng(derive_seed(cfg.seed, out.id));
  out.difficulty = uniform(rng, cfg.difficulty_lo, cfg.difficulty_hi);
  const double size = static_cast<double>(cfg.size);

  Geometry g;
  bool ok = false;
  double shrink = 1.0;
  for (int attempt = 0; attempt < 24 && !ok; ++attempt) {
    g = draw_geometry(rng, size, out.difficulty, shrink);
    if (!fits(g, size)) {
      shrink *= 0.9;
      continue;
    }
    out.mask = rasterize(g, cfg.size);
    ok = every_class_present(out.mask);
  }
  if (!ok) throw std::runtime_error("synth: could not place structures for " + out.id);

  std::normal_distribution<double> noise(0.0, std::max(1e-12, 0.25 * out.difficulty));
  out.image = Image16{cfg.size, cfg.size, std::vector<std::uint16_t>(cfg.size * cfg.size)};
  // Harder samples also lose contrast; per-pixel noise alone is easy to average out.
  const double contrast = 1 - 0.6 * out.difficulty;
  for (std::size_t i = 0; i < out.image.pixels.size(); ++i) {
    double v = 0.5 + (g.level[out.mask.labels[i]] - 0.5) * contrast;
    if (out.difficulty > 0) v += noise(rng);
    const double q = std::round((v + 0.5) * 30000.0);
    out.image.pixels[i] = static_cast<std::uint16_t>(std::clamp(q, 0.0, 65535.0));
  }
  return out;
}

std::size_t DatasetManifest::count(Split s) const {
  return static_cast<std::size_t>(
      std::count_if(samples.begin(), samples.end(), [&](const auto& r) { return r.split == s; }));
}

std::vector<const SampleRecord*> DatasetManifest::of(Split s) const {
  std::vector<const SampleRecord*> out;
  for (const auto& r : samples) {
    if (r.split == s) out.push_back(&r);
  }
  return out;
}

const SampleRecord& DatasetManifest::find(const std::string& id) const {
  for (const auto& r : samples) {
    if (r.id == id) return r;
  }
  throw std::out_of_range("no sample '" + id + "' in manifest");
}

DatasetManifest generate_dataset(const SynthConfig& cfg, const std::filesystem::path& root) {
  validate(cfg);
  namespace fs = std::filesystem;
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  DatasetManifest man;
  man.seed = cfg.seed;
  man.image_size = cfg.size;
  man.difficulty_lo = cfg.difficulty_lo;
  man.difficulty_hi = cfg.difficulty_hi;
  for (Split split : kSplits) {
    for (std::size_t i = 0; i < cfg.count(split); ++i) {
      SynthSample s = generate_sample(cfg, split, i);
      SampleRecord r{s.id, "images/" + s.id + ".pgm", "masks/" + s.id + ".pgm", split, s.difficulty};
      write_pgm16(root / r.image_file, s.image);
      write_pgm8(root / r.mask_file, s.mask);
      man.samples.push_back(std::move(r));
    }
  }
  write_manifest(root / "manifest.json", man);
  return man;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  json j;
  j["format_version"] = DatasetManifest::kVersion;
  j["seed"] = m.seed;
  j["n_classes"] = m.n_classes;
  j["image_size"] = m.image_size;
  j["difficulty_range"] = {m.difficulty_lo, m.difficulty_hi};
  json counts = json::object();
  for (Split s : kSplits) counts[to_string(s)] = m.count(s);
  j["counts"] = counts;
  json samples = json::array();
  for (const auto& r : m.samples) {
    samples.push_back({{"id", r.id},
                       {"image", r.image_file},
                       {"mask", r.mask_file},
                       {"split", to_string(r.split)},
                       {"difficulty", r.difficulty}});
  }
  j["samples"] = samples;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  DatasetManifest m;
  try {
    const json j = json::parse(in);
    if (j.at("format_version").get<int>() != DatasetManifest::kVersion) {
      throw std::runtime_error("unsupported manifest version");
    }
    m.seed = j.at("seed").get<std::uint64_t>();
    m.n_classes = j.at("n_classes").get<std::size_t>();
    m.image_size = j.at("image_size").get<std::size_t>();
    m.difficulty_lo = j.at("difficulty_range").at(0).get<double>();
    m.difficulty_hi = j.at("difficulty_range").at(1).get<double>();
    for (const auto& s : j.at("samples")) {
      m.samples.push_back({s.at("id").get<std::string>(), s.at("image").get<std::string>(),
                           s.at("mask").get<std::string>(),
                           split_from_string(s.at("split").get<std::string>()),
                           s.at("difficulty").get<double>()});
    }
    for (Split s : kSplits) {
      if (j.at("counts").at(to_string(s)).get<std::size_t>() != m.count(s)) {
        throw std::runtime_error("split counts disagree with sample list");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed manifest " + path.string() + ": " + e.what());
  }
  return m;
}

}  // namespace dust
