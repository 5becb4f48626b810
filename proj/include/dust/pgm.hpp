#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

namespace dust {

struct Image16 {
  std::size_t height = 0, width = 0;
  std::vector<std::uint16_t> pixels;  // row-major
};

struct Mask8 {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> labels;  // row-major class indices

  std::uint8_t at(std::size_t y, std::size_t x) const { return labels[y * width + x]; }
};

class PgmError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Binary PGM (P5). 16-bit samples are big-endian as the format requires.
void write_pgm16(const std::filesystem::path& path, const Image16& image);
void write_pgm8(const std::filesystem::path& path, const Mask8& mask);
Image16 read_pgm16(const std::filesystem::path& path);
Mask8 read_pgm8(const std::filesystem::path& path);

}  // namespace dust
