#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dust/pgm.hpp"

namespace dust {

enum class Split { Labeled, Unlabeled, Val, Test };

std::string to_string(Split split);
Split split_from_string(const std::string& name);

struct SynthConfig {
  std::size_t size = 80;  // square canvas
  std::size_t labeled = 6, unlabeled = 54, val = 10, test = 20;
  std::uint64_t seed = 1;
  double difficulty_lo = 0.0, difficulty_hi = 1.0;
  std::size_t spatial_divisor = 8;  // canvas must be a multiple of this

  std::size_t count(Split s) const;
  std::size_t total() const { return labeled + unlabeled + val + test; }
};

/// Throws std::invalid_argument for empty train splits, a canvas that is not a
/// multiple of spatial_divisor or too small to hold the structures, or a
/// difficulty range outside [0,1].
void validate(const SynthConfig& cfg);

constexpr std::size_t kSynthClasses = 4;

struct SynthSample {
  std::string id;
  Split split = Split::Labeled;
  double difficulty = 0;
  Image16 image;
  Mask8 mask;
};

/// Sample ids are "<split>_<index>" with a 3-digit zero-padded index.
std::string sample_id(Split split, std::size_t index);

/// Builds one sample from an RNG stream derived from (seed, id) only.
SynthSample generate_sample(const SynthConfig& cfg, Split split, std::size_t index);

struct SampleRecord {
  std::string id;
  std::string image_file;  // relative to the dataset root
  std::string mask_file;
  Split split = Split::Labeled;
  double difficulty = 0;
};

struct DatasetManifest {
  static constexpr int kVersion = 1;
  std::uint64_t seed = 0;
  std::size_t n_classes = kSynthClasses;
  std::size_t image_size = 0;
  double difficulty_lo = 0, difficulty_hi = 1;
  std::vector<SampleRecord> samples;  // labeled, unlabeled, val, test; by index within each

  std::size_t count(Split s) const;
  std::vector<const SampleRecord*> of(Split s) const;
  const SampleRecord& find(const std::string& id) const;  // std::out_of_range if absent
};

/// Writes images/<id>.pgm, masks/<id>.pgm and manifest.json under `root`.
DatasetManifest generate_dataset(const SynthConfig& cfg, const std::filesystem::path& root);

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path);

}  // namespace dust
