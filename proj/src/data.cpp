#include "dust/data.hpp"

#include <cmath>
#include <stdexcept>

namespace dust {
namespace {

// Source coordinate in the un-rotated, un-flipped grid for output (y, x) of the
// rotated grid. Rotation is applied after flips.
template <typename V>
std::vector<V> transform(const std::vector<V>& src, std::size_t h, std::size_t w,
                         const AugmentDraw& d, std::size_t crop) {
  const int k = ((d.rot_k % 4) + 4) % 4;
  const std::size_t rh = (k % 2) ? w : h, rw = (k % 2) ? h : w;
  if (crop > rh || crop > rw || d.crop_y + crop > rh || d.crop_x + crop > rw) {
    throw std::invalid_argument("augment: crop window exceeds the " + std::to_string(rh) + "x" +
                                std::to_string(rw) + " image");
  }
  std::vector<V> out(crop * crop);
  for (std::size_t oy = 0; oy < crop; ++oy) {
    for (std::size_t ox = 0; ox < crop; ++ox) {
      const std::size_t y = oy + d.crop_y, x = ox + d.crop_x;
      // Undo the counter-clockwise rotation.
      std::size_t fy = y, fx = x;
      switch (k) {
        case 1: fy = x; fx = w - 1 - y; break;
        case 2: fy = h - 1 - y; fx = w - 1 - x; break;
        case 3: fy = h - 1 - x; fx = y; break;
        default: break;
      }
      if (d.flip_v) fy = h - 1 - fy;
      if (d.flip_h) fx = w - 1 - fx;
      out[oy * crop + ox] = src[fy * w + fx];
    }
  }
  return out;
}

std::size_t below(std::mt19937_64& rng, std::size_t n) { return n ? rng() % n : 0; }

AugmentDraw centered(std::size_t h, std::size_t w, std::size_t crop) {
  if (crop > h || crop > w) {
    throw std::invalid_argument("center_crop: crop " + std::to_string(crop) + " exceeds " +
                                std::to_string(h) + "x" + std::to_string(w));
  }
  AugmentDraw d;
  d.crop_y = (h - crop) / 2;
  d.crop_x = (w - crop) / 2;
  return d;
}

}  // namespace

FloatImage preprocess(const Image16& image) {
  const std::size_t n = image.pixels.size();
  FloatImage out{image.height, image.width, std::vector<float>(n, 0.f)};
  if (n == 0) return out;
  double mean = 0;
  for (auto v : image.pixels) mean += v;
  mean /= static_cast<double>(n);
  double var = 0;
  for (auto v : image.pixels) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  if (var == 0) return out;
  const double inv = 1.0 / std::sqrt(var);
  for (std::size_t i = 0; i < n; ++i) out.values[i] = static_cast<float>((image.pixels[i] - mean) * inv);
  return out;
}

AugmentDraw draw_augment(std::mt19937_64& rng, std::size_t height, std::size_t width,
                         std::size_t crop) {
  if (crop > height || crop > width) {
    throw std::invalid_argument("augment: crop " + std::to_string(crop) + " larger than canvas " +
                                std::to_string(height) + "x" + std::to_string(width));
  }
  AugmentDraw d;
  d.flip_h = rng() >> 63;
  d.flip_v = rng() >> 63;
  d.rot_k = static_cast<int>(rng() >> 62);
  const std::size_t rh = (d.rot_k % 2) ? width : height, rw = (d.rot_k % 2) ? height : width;
  d.crop_y = below(rng, rh - crop + 1);
  d.crop_x = below(rng, rw - crop + 1);
  return d;
}

FloatImage apply_augment(const FloatImage& image, const AugmentDraw& d, std::size_t crop) {
  return {crop, crop, transform(image.values, image.height, image.width, d, crop)};
}

Mask8 apply_augment(const Mask8& mask, const AugmentDraw& d, std::size_t crop) {
  return {crop, crop, transform(mask.labels, mask.height, mask.width, d, crop)};
}

std::pair<FloatImage, Mask8> augment(const FloatImage& image, const Mask8& mask, std::size_t crop,
                                     std::mt19937_64& rng) {
  if (image.height != mask.height || image.width != mask.width) {
    throw std::invalid_argument("augment: image and mask sizes differ");
  }
  const AugmentDraw d = draw_augment(rng, image.height, image.width, crop);
  return {apply_augment(image, d, crop), apply_augment(mask, d, crop)};
}

FloatImage center_crop(const FloatImage& image, std::size_t crop) {
  return apply_augment(image, centered(image.height, image.width, crop), crop);
}

Mask8 center_crop(const Mask8& mask, std::size_t crop) {
  return apply_augment(mask, centered(mask.height, mask.width, crop), crop);
}

const DataSample& Dataset::get(const std::string& id) const {
  for (const auto& s : samples) {
    if (s.id == id) return s;
  }
  throw std::out_of_range("no sample '" + id + "' in dataset " + root.string());
}

std::vector<const DataSample*> Dataset::of(Split split) const {
  std::vector<const DataSample*> out;
  for (const auto& s : samples) {
    if (s.split == split) out.push_back(&s);
  }
  return out;
}

Dataset load_dataset(const std::filesystem::path& root) {
  Dataset ds;
  ds.root = root;
  ds.manifest = read_manifest(root / "manifest.json");
  for (const auto& r : ds.manifest.samples) {
    DataSample s;
    s.id = r.id;
    s.split = r.split;
    s.difficulty = r.difficulty;
    const Image16 raw = read_pgm16(root / r.image_file);
    s.mask = read_pgm8(root / r.mask_file);
    if (raw.height != s.mask.height || raw.width != s.mask.width) {
      throw std::runtime_error(r.id + ": image and mask sizes differ");
    }
    for (auto v : s.mask.labels) {
      if (v >= ds.manifest.n_classes) {
        throw std::runtime_error(r.id + ": mask label " + std::to_string(v) + " >= n_classes");
      }
    }
    s.image = preprocess(raw);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

Tensor image_batch(const std::vector<const FloatImage*>& images) {
  if (images.empty()) throw std::invalid_argument("image_batch: empty batch");
  const std::size_t h = images[0]->height, w = images[0]->width;
  std::vector<float> v;
  v.reserve(images.size() * h * w);
  for (const auto* im : images) {
    if (im->height != h || im->width != w) throw ShapeError("image_batch: mixed image sizes");
    v.insert(v.end(), im->values.begin(), im->values.end());
  }
  return Tensor({images.size(), 1, h, w}, std::move(v));
}

LabelBatch label_batch(const std::vector<const Mask8*>& masks) {
  if (masks.empty()) throw std::invalid_argument("label_batch: empty batch");
  const std::size_t h = masks[0]->height, w = masks[0]->width;
  LabelBatch out(masks.size(), h, w);
  for (std::size_t i = 0; i < masks.size(); ++i) {
    if (masks[i]->height != h || masks[i]->width != w) throw ShapeError("label_batch: mixed sizes");
    std::copy(masks[i]->labels.begin(), masks[i]->labels.end(), out.values.begin() + i * h * w);
  }
  return out;
}

}  // namespace dust
