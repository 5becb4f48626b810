#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>

#include "dust/config.hpp"
#include "dust/evaluate.hpp"
#include "dust/ranking.hpp"
#include "dust/training.hpp"

namespace dust {

using ProgressLog = std::function<void(const std::string&)>;

struct RunResult {
  ModelParams final_model;
  Evaluation evaluation;
  std::optional<SampleRanking> ranking;
  TeacherResult teacher;
  std::vector<StageLog> stage_logs;
};

/// Teacher pre-training for a config's seed; snapshots go to `dir` when set.
TeacherResult pretrain_for(const ExperimentConfig& cfg, const Dataset& data,
                           const std::filesystem::path& dir = {}, const ProgressLog& log = {});

/// Runs one ablation arm end to end and writes the run directory:
///   config.resolved.json, teacher/ck_XX, ranking.csv, stage1/model.ckpt,
///   stage2/model.ckpt, pseudo/<stage>/<id>.pgm, predictions/<id>.pgm, metrics.json
/// A precomputed teacher for the same config and seed may be passed to skip
/// pre-training; its snapshots are still written.
RunResult run_pipeline(const ExperimentConfig& cfg, const Dataset& data, const std::filesystem::path& out,
                       const TeacherResult* teacher = nullptr, const ProgressLog& log = {});

/// Checks the dataset against the config (image size, class count).
void check_dataset(const ExperimentConfig& cfg, const Dataset& data);

}  // namespace dust
