#pragma once

#include <filesystem>
#include <stdexcept>

#include "dust/unet.hpp"

namespace dust {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Layout (all integers little-endian):
//   "DUSTCKPT" | u16 version | u64 count |
//   count x ( u32 name_len | name | u8 dtype | u8 rank | rank x u64 dim | f32 payload )
inline constexpr char kCheckpointMagic[8] = {'D', 'U', 'S', 'T', 'C', 'K', 'P', 'T'};
inline constexpr std::uint16_t kCheckpointVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 0;

std::string serialize_params(const ParamSet& params);
ParamSet deserialize_params(const std::string& bytes);

/// Writes to a sibling temp file, then renames over the target.
void save_checkpoint(const ModelParams& model, const std::filesystem::path& path);

/// Architecture is recovered from parameter names and shapes, then checked
/// against a freshly initialized layout (names, order, shapes).
ModelParams load_checkpoint(const std::filesystem::path& path);

UNetConfig infer_config(const ParamSet& params);

}  // namespace dust
