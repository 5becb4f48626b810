#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "dust/data.hpp"
#include "dust/metrics.hpp"
#include "dust/unet.hpp"
#include "json.hpp"

namespace dust {

struct Evaluation {
  MetricsReport report;
  std::vector<std::pair<std::string, Mask8>> predictions;  // id order
};

/// Main-decoder argmax on center crops of every sample in `split`, scored
/// against the center-cropped ground truth over the foreground classes.
Evaluation evaluate_model(const ModelParams& model, const Dataset& data, Split split, std::size_t crop);

struct MetricsMeta {
  std::string config_digest;
  std::uint64_t seed = 0;
  std::string mode;
  std::string split;
  std::string model;  // which weights were evaluated
};

inline constexpr int kMetricsVersion = 1;

nlohmann::json metrics_json(const MetricsReport& report, const MetricsMeta& meta);

/// metrics_json plus a UTC run_timestamp.
void write_metrics_json(const std::filesystem::path& path, const MetricsReport& report, const MetricsMeta& meta);

void write_predictions(const std::filesystem::path& dir,
                       const std::vector<std::pair<std::string, Mask8>>& predictions);

}  // namespace dust
