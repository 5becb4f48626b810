#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dust/pipeline.hpp"

namespace dust {

inline constexpr AblationMode kArms[] = {AblationMode::Supervised, AblationMode::St, AblationMode::StSample,
                                         AblationMode::Full};

struct ArmRun {
  AblationMode arm = AblationMode::Full;
  std::uint64_t seed = 0;
  std::optional<std::string> error;  // set when the arm failed
  MetricsReport report;
  std::optional<SampleRanking> ranking;
};

struct ArmStats {
  AblationMode arm = AblationMode::Full;
  std::size_t seeds = 0;  // successful runs
  MeanStd dice, jaccard, hd95, asd;  // over per-seed case means
};

struct PValue {
  AblationMode other = AblationMode::Supervised;
  std::optional<TTestResult> test;  // absent when a cell is missing
};

struct AblationSummary {
  std::vector<std::uint64_t> seeds;
  std::vector<ArmRun> runs;  // seed-major, arms in kArms order
  std::vector<ArmStats> arms;
  std::vector<PValue> p_values;  // full vs each other arm, per-case Dice pooled over seeds

  const ArmRun* find(AblationMode arm, std::uint64_t seed) const;
};

/// All four arms for each seed under out/seed_<s>/<arm>. The teacher is
/// trained once per seed and shared, which is exactly what each arm would
/// have trained on its own.
AblationSummary run_ablation(const ExperimentConfig& base, const Dataset& data,
                             const std::vector<std::uint64_t>& seeds, const std::filesystem::path& out,
                             const ProgressLog& log = {});

AblationSummary summarize_ablation(std::vector<ArmRun> runs, std::vector<std::uint64_t> seeds);

std::string format_ablation_table(const AblationSummary& s);
nlohmann::json ablation_json(const AblationSummary& s);

}  // namespace dust
