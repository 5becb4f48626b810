#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dust/pgm.hpp"
#include "dust/synth.hpp"
#include "dust/tensor.hpp"

namespace dust {

struct FloatImage {
  std::size_t height = 0, width = 0;
  std::vector<float> values;
};

/// Zero mean, unit population std; a constant image maps to zeros.
FloatImage preprocess(const Image16& image);

/// One geometric augmentation: flips, then a k*90 degree counter-clockwise
/// rotation, then a crop whose top-left corner is (crop_y, crop_x).
struct AugmentDraw {
  bool flip_h = false, flip_v = false;
  int rot_k = 0;
  std::size_t crop_y = 0, crop_x = 0;
};

/// Consumes rng in a fixed order: flip_h, flip_v, rot_k, crop_y, crop_x.
/// Throws std::invalid_argument if crop exceeds either dimension.
AugmentDraw draw_augment(std::mt19937_64& rng, std::size_t height, std::size_t width,
                         std::size_t crop);

FloatImage apply_augment(const FloatImage& image, const AugmentDraw& d, std::size_t crop);
Mask8 apply_augment(const Mask8& mask, const AugmentDraw& d, std::size_t crop);

std::pair<FloatImage, Mask8> augment(const FloatImage& image, const Mask8& mask, std::size_t crop,
                                     std::mt19937_64& rng);

FloatImage center_crop(const FloatImage& image, std::size_t crop);
Mask8 center_crop(const Mask8& mask, std::size_t crop);

struct DataSample {
  std::string id;
  Split split = Split::Labeled;
  double difficulty = 0;
  FloatImage image;  // preprocessed full canvas
  Mask8 mask;
};

/// A generated dataset held in memory, samples in manifest order.
struct Dataset {
  std::filesystem::path root;
  DatasetManifest manifest;
  std::vector<DataSample> samples;

  const DataSample& get(const std::string& id) const;  // std::out_of_range if absent
  std::vector<const DataSample*> of(Split split) const;
};

/// Reads manifest.json plus every image and mask; throws on missing files or
/// masks whose labels exceed n_classes.
Dataset load_dataset(const std::filesystem::path& root);

/// [B,1,H,W] from same-sized images.
Tensor image_batch(const std::vector<const FloatImage*>& images);
LabelBatch label_batch(const std::vector<const Mask8*>& masks);

}  // namespace dust
