#include "dust/pipeline.hpp"

#include <cstdio>

#include "dust/checkpoint.hpp"
#include "dust/seed.hpp"

namespace dust {
namespace {

TrainPhaseConfig phase(const ExperimentConfig& cfg, std::size_t epochs, std::size_t iters, const char* tag) {
  TrainPhaseConfig p;
  p.epochs = epochs;
  p.batch_size = cfg.batch_size;
  p.labeled_per_batch = cfg.labeled_per_batch;
  p.learning_rate = cfg.learning_rate;
  p.seed = derive_seed(cfg.seed, tag);
  p.iterations_per_epoch = iters;
  return p;
}

std::string fmt_losses(const StageLog& log) {
  if (log.epoch_loss.empty()) return "";
  char buf[96];
  std::snprintf(buf, sizeof buf, "loss %.4f -> %.4f over %zu iterations", log.epoch_loss.front(),
                log.epoch_loss.back(), log.iterations);
  return buf;
}

}  // namespace

void check_dataset(const ExperimentConfig& cfg, const Dataset& data) {
  if (data.manifest.n_classes != cfg.n_classes) {
    throw std::invalid_argument("dataset has " + std::to_string(data.manifest.n_classes) +
                                " classes, config expects " + std::to_string(cfg.n_classes));
  }
  if (data.manifest.image_size != cfg.image_size) {
    throw std::invalid_argument("dataset images are " + std::to_string(data.manifest.image_size) +
                                " px, config expects " + std::to_string(cfg.image_size));
  }
  if (data.of(Split::Labeled).empty()) throw std::invalid_argument("dataset has no labeled samples");
}

TeacherResult pretrain_for(const ExperimentConfig& cfg, const Dataset& data, const std::filesystem::path& dir,
                           const ProgressLog& log) {
  validate(cfg);
  check_dataset(cfg, data);
  const ModelParams init = init_params(unet_config(cfg), derive_seed(cfg.seed, "init"));
  StageOptions opts = stage_options(cfg);
  auto t = pretrain_teacher(init, data, ids_of(data.of(Split::Labeled)),
                            phase(cfg, cfg.pretrain_epochs, cfg.pretrain_iterations_per_epoch, "pretrain"),
                            cfg.k_checkpoints, opts, dir);
  if (log) log("pretrain: " + fmt_losses(t.log));
  return t;
}

RunResult run_pipeline(const ExperimentConfig& cfg, const Dataset& data, const std::filesystem::path& out,
                       const TeacherResult* teacher, const ProgressLog& log) {
  validate(cfg);
  check_dataset(cfg, data);
  namespace fs = std::filesystem;
  fs::create_directories(out);
  write_config(cfg, out / "config.resolved.json");
  auto say = [&](const std::string& s) {
    if (log) log(s);
  };

  RunResult r;
  if (teacher) {
    r.teacher = *teacher;
    for (std::size_t j = 0; j < r.teacher.checkpoints.size(); ++j) {
      save_checkpoint(r.teacher.checkpoints.models[j], out / "teacher" / checkpoint_name(j + 1));
    }
  } else {
    r.teacher = pretrain_for(cfg, data, out / "teacher", log);
  }
  const ModelParams& teacher_model = r.teacher.checkpoints.last();
  const auto labeled = ids_of(data.of(Split::Labeled));
  const auto unlabeled = ids_of(data.of(Split::Unlabeled));
  const StageOptions opts = stage_options(cfg);
  const std::size_t iters = cfg.stage_iterations_per_epoch;

  switch (cfg.ablation_mode) {
    case AblationMode::Supervised:
      r.final_model = clone(teacher_model);
      break;
    case AblationMode::St: {
      // One stage over every unlabeled sample, as long as both stages together.
      r.final_model = clone(teacher_model);
      PseudoLabelSet pseudo = generate_pseudo_labels(teacher_model, data, unlabeled, cfg.crop_size, "teacher");
      write_pseudo_labels(pseudo, out / "pseudo" / "stage1");
      r.stage_logs.push_back(train_stage(r.final_model, data, labeled, unlabeled, &pseudo,
                                         phase(cfg, cfg.stage1_epochs + cfg.stage2_epochs, iters, "st"), opts));
      save_checkpoint(r.final_model, out / "stage1" / "model.ckpt");
      say("st: " + fmt_losses(r.stage_logs.back()));
      break;
    }
    case AblationMode::StSample:
    case AblationMode::Full: {
      r.ranking = rank_and_partition(r.teacher.checkpoints, data.of(Split::Unlabeled), cfg.crop_size,
                                     cfg.partition_fraction);
      write_ranking_csv(*r.ranking, out / "ranking.csv");
      const auto reliable = r.ranking->reliable_ids();

      r.final_model = clone(teacher_model);
      PseudoLabelSet p1 = generate_pseudo_labels(teacher_model, data, reliable, cfg.crop_size, "teacher");
      write_pseudo_labels(p1, out / "pseudo" / "stage1");
      r.stage_logs.push_back(train_stage(r.final_model, data, labeled, reliable, &p1,
                                         phase(cfg, cfg.stage1_epochs, iters, "stage1"), opts));
      save_checkpoint(r.final_model, out / "stage1" / "model.ckpt");
      say("stage1: " + fmt_losses(r.stage_logs.back()));

      PseudoLabelSet p2 = generate_pseudo_labels(r.final_model, data, unlabeled, cfg.crop_size, "stage1");
      write_pseudo_labels(p2, out / "pseudo" / "stage2");
      r.stage_logs.push_back(train_stage(r.final_model, data, labeled, unlabeled, &p2,
                                         phase(cfg, cfg.stage2_epochs, iters, "stage2"), opts));
      save_checkpoint(r.final_model, out / "stage2" / "model.ckpt");
      say("stage2: " + fmt_losses(r.stage_logs.back()));
      break;
    }
  }

  const Split split = split_from_string(cfg.eval_split);
  r.evaluation = evaluate_model(r.final_model, data, split, cfg.crop_size);
  write_predictions(out / "predictions", r.evaluation.predictions);
  MetricsMeta meta{config_digest(cfg), cfg.seed, to_string(cfg.ablation_mode), cfg.eval_split,
                   cfg.ablation_mode == AblationMode::Supervised ? "teacher/" + checkpoint_name(cfg.k_checkpoints)
                   : cfg.ablation_mode == AblationMode::St       ? "stage1/model.ckpt"
                                                                 : "stage2/model.ckpt"};
  write_metrics_json(out / "metrics.json", r.evaluation.report, meta);
  char buf[128];
  std::snprintf(buf, sizeof buf, "%s seed %llu: test dice %.4f", to_string(cfg.ablation_mode).c_str(),
                static_cast<unsigned long long>(cfg.seed), r.evaluation.report.aggregate.dice.mean);
  say(buf);
  return r;
}

}  // namespace dust
