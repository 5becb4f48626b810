#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "dust/data.hpp"
#include "dust/unet.hpp"

namespace dust {

/// Snapshots F_1..F_K of one pre-training run, ordered by epoch; the last is the teacher.
struct CheckpointSet {
  std::vector<ModelParams> models;
  std::vector<std::size_t> epochs;

  std::size_t size() const { return models.size(); }
  const ModelParams& last() const { return models.back(); }
};

/// Mean over i < K of mean((maps[i] - maps[K-1])^2). All maps share one shape.
/// Throws std::invalid_argument when fewer than 2 maps are given.
double sample_uncertainty(const std::vector<Tensor>& maps);

/// Eval-mode main-decoder maps of every checkpoint on one [1,1,H,W] image.
double sample_uncertainty(const CheckpointSet& ckpts, const Tensor& image);

struct RankEntry {
  std::string id;
  double uncertainty = 0;
  std::size_t rank = 0;  // 1-based
  bool reliable = false;
};

struct SampleRanking {
  std::vector<RankEntry> entries;  // rank order
  double fraction = 0.5;

  std::vector<std::string> reliable_ids() const;
  std::vector<std::string> unreliable_ids() const;
};

/// Ascending sort (ties by id); the first ceil(fraction * M) entries are reliable.
SampleRanking rank_and_partition(std::vector<std::pair<std::string, double>> scores, double fraction);

/// Scores each sample on its center crop, then ranks.
SampleRanking rank_and_partition(const CheckpointSet& ckpts, const std::vector<const DataSample*>& samples,
                                 std::size_t crop, double fraction);

void write_ranking_csv(const SampleRanking& ranking, const std::filesystem::path& path);
SampleRanking read_ranking_csv(const std::filesystem::path& path);

}  // namespace dust
