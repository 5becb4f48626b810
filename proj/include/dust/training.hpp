#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "dust/data.hpp"
#include "dust/losses.hpp"
#include "dust/ranking.hpp"
#include "dust/sgd.hpp"
#include "dust/unet.hpp"

namespace dust {

struct TrainPhaseConfig {
  std::size_t epochs = 40;
  std::size_t batch_size = 8;
  std::size_t labeled_per_batch = 4;
  double learning_rate = 0.01;
  std::uint64_t seed = 1;
  // 0: one pass over the larger pool at its per-batch share.
  std::size_t iterations_per_epoch = 0;
};

void validate(const TrainPhaseConfig& cfg);

enum class UnsupLoss { Rectified, Plain };

struct StageOptions {
  SgdOptions sgd;  // learning_rate comes from the phase config
  LossOptions loss;
  double unsup_weight = 1.0;
  UnsupLoss unsup = UnsupLoss::Rectified;
  std::size_t crop = 64;
  bool refresh_every_epoch = false;  // regenerate pseudo labels after each epoch
};

/// Non-finite loss during training. Whatever was saved before stays valid.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PseudoLabelSet {
  std::string producer;
  std::map<std::string, Mask8> labels;

  const Mask8& at(const std::string& id) const;
};

/// Eval-mode main-decoder argmax on center crops. Throws std::out_of_range for
/// ids not in the dataset.
PseudoLabelSet generate_pseudo_labels(const ModelParams& model, const Dataset& data,
                                      const std::vector<std::string>& ids, std::size_t crop,
                                      const std::string& producer);

void write_pseudo_labels(const PseudoLabelSet& set, const std::filesystem::path& dir);

struct StageLog {
  std::vector<double> epoch_loss;  // mean total loss per epoch
  std::size_t iterations = 0;
};

std::size_t iterations_per_epoch(const TrainPhaseConfig& cfg, std::size_t n_labeled,
                                 std::size_t n_unlabeled);

/// Evenly spaced snapshot epochs ceil(j*E/K), j = 1..K. Requires K >= 2 and E >= K.
std::vector<std::size_t> checkpoint_epochs(std::size_t epochs, std::size_t k);

using EpochHook = std::function<void(std::size_t epoch, const ModelParams& model)>;

/// Trains `student` in place. Each batch holds labeled_per_batch labeled and
/// batch_size - labeled_per_batch unlabeled samples, cycling whichever pool
/// runs out; with no unlabeled samples the whole batch is labeled and the
/// loss is supervised only. `pseudo` may be refreshed between epochs when
/// options.refresh_every_epoch is set.
StageLog train_stage(ModelParams& student, const Dataset& data, const std::vector<std::string>& labeled,
                     const std::vector<std::string>& unlabeled, PseudoLabelSet* pseudo,
                     const TrainPhaseConfig& cfg, const StageOptions& options, const EpochHook& on_epoch = {});

struct TeacherResult {
  CheckpointSet checkpoints;
  StageLog log;
};

/// Supervised training on the labeled ids with K snapshots. When `dir` is not
/// empty, snapshot j is written to dir/ck_0j as soon as it is taken.
TeacherResult pretrain_teacher(const ModelParams& init, const Dataset& data,
                               const std::vector<std::string>& labeled, const TrainPhaseConfig& cfg,
                               std::size_t k, const StageOptions& options,
                               const std::filesystem::path& dir = {});

std::string checkpoint_name(std::size_t j);  // "ck_01"

ModelParams clone(const ModelParams& m);

std::vector<std::string> ids_of(const std::vector<const DataSample*>& samples);

}  // namespace dust
