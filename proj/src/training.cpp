#include "dust/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <random>

#include "dust/checkpoint.hpp"
#include "dust/parallel.hpp"

namespace dust {
namespace {

// Endless sampler over a pool: a fresh shuffle every time the pool is used up.
class Cycler {
 public:
  Cycler(std::size_t n, std::mt19937_64& rng) : order_(n), rng_(rng) {
    for (std::size_t i = 0; i < n; ++i) order_[i] = i;
    pos_ = n;
  }

  std::size_t next() {
    if (pos_ == order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      pos_ = 0;
    }
    return order_[pos_++];
  }

 private:
  std::vector<std::size_t> order_;
  std::mt19937_64& rng_;
  std::size_t pos_;
};

struct Batch {
  std::vector<FloatImage> images;
  std::vector<Mask8> masks;

  Tensor input() const {
    std::vector<const FloatImage*> p;
    for (const auto& im : images) p.push_back(&im);
    return image_batch(p);
  }
  LabelBatch target() const {
    std::vector<const Mask8*> p;
    for (const auto& m : masks) p.push_back(&m);
    return label_batch(p);
  }
};

}  // namespace

void validate(const TrainPhaseConfig& cfg) {
  if (cfg.epochs == 0) throw std::invalid_argument("train phase: epochs must be >= 1");
  if (cfg.batch_size == 0) throw std::invalid_argument("train phase: batch_size must be >= 1");
  if (cfg.labeled_per_batch == 0 || cfg.labeled_per_batch > cfg.batch_size) {
    throw std::invalid_argument("train phase: need 0 < labeled_per_batch <= batch_size");
  }
  if (!(cfg.learning_rate > 0) || !std::isfinite(cfg.learning_rate)) {
    throw std::invalid_argument("train phase: learning_rate must be positive");
  }
}

const Mask8& PseudoLabelSet::at(const std::string& id) const {
  auto it = labels.find(id);
  if (it == labels.end()) throw std::out_of_range("no pseudo label for '" + id + "' (" + producer + ")");
  return it->second;
}

PseudoLabelSet generate_pseudo_labels(const ModelParams& model, const Dataset& data,
                                      const std::vector<std::string>& ids, std::size_t crop,
                                      const std::string& producer) {
  std::vector<const DataSample*> samples;
  for (const auto& id : ids) samples.push_back(&data.get(id));
  std::vector<Mask8> out(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    const FloatImage im = center_crop(samples[i]->image, crop);
    const LabelBatch lb = predict_main_labels(model, image_batch({&im}));
    out[i] = Mask8{lb.height, lb.width, lb.values};
  });
  PseudoLabelSet set;
  set.producer = producer;
  for (std::size_t i = 0; i < ids.size(); ++i) set.labels[ids[i]] = std::move(out[i]);
  return set;
}

void write_pseudo_labels(const PseudoLabelSet& set, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& [id, mask] : set.labels) write_pgm8(dir / (id + ".pgm"), mask);
}

std::size_t iterations_per_epoch(const TrainPhaseConfig& cfg, std::size_t n_labeled,
                                 std::size_t n_unlabeled) {
  if (cfg.iterations_per_epoch) return cfg.iterations_per_epoch;
  auto ceil_div = [](std::size_t a, std::size_t b) { return (a + b - 1) / b; };
  if (n_unlabeled == 0) return ceil_div(n_labeled, cfg.batch_size);
  const std::size_t unl = cfg.batch_size - cfg.labeled_per_batch;
  if (unl == 0) return ceil_div(n_labeled, cfg.labeled_per_batch);
  return std::max(ceil_div(n_labeled, cfg.labeled_per_batch), ceil_div(n_unlabeled, unl));
}

std::vector<std::size_t> checkpoint_epochs(std::size_t epochs, std::size_t k) {
  if (k < 2) throw std::invalid_argument("checkpoint schedule: K must be >= 2");
  if (epochs < k) {
    throw std::invalid_argument("checkpoint schedule: " + std::to_string(epochs) +
                                " pre-training epochs cannot hold K = " + std::to_string(k) + " snapshots");
  }
  std::vector<std::size_t> out;
  for (std::size_t j = 1; j <= k; ++j) out.push_back((j * epochs + k - 1) / k);
  return out;
}

StageLog train_stage(ModelParams& student, const Dataset& data, const std::vector<std::string>& labeled,
                     const std::vector<std::string>& unlabeled, PseudoLabelSet* pseudo,
                     const TrainPhaseConfig& cfg, const StageOptions& options, const EpochHook& on_epoch) {
  validate(cfg);
  if (labeled.empty()) throw std::invalid_argument("train_stage: no labeled samples");
  if (!unlabeled.empty()) {
    if (!pseudo) throw std::invalid_argument("train_stage: unlabeled samples without pseudo labels");
    for (const auto& id : unlabeled) pseudo->at(id);
  }
  std::vector<const DataSample*> lab, unl;
  for (const auto& id : labeled) lab.push_back(&data.get(id));
  for (const auto& id : unlabeled) unl.push_back(&data.get(id));

  const bool mixed = !unl.empty() && cfg.labeled_per_batch < cfg.batch_size;
  const std::size_t n_lab = mixed ? cfg.labeled_per_batch : cfg.batch_size;
  const std::size_t n_unl = mixed ? cfg.batch_size - cfg.labeled_per_batch : 0;
  const std::size_t iters = iterations_per_epoch(cfg, lab.size(), mixed ? unl.size() : 0);

  std::mt19937_64 rng(cfg.seed);
  Cycler lab_pool(lab.size(), rng);
  std::optional<Cycler> unl_pool;
  if (mixed) unl_pool.emplace(unl.size(), rng);

  SgdOptions sgd_opts = options.sgd;
  sgd_opts.learning_rate = cfg.learning_rate;
  SgdState sgd(sgd_opts);
  StageLog log;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double epoch_sum = 0;
    for (std::size_t it = 0; it < iters; ++it) {
      std::vector<const DataSample*> lb, ub;
      for (std::size_t i = 0; i < n_lab; ++i) lb.push_back(lab[lab_pool.next()]);
      for (std::size_t i = 0; i < n_unl; ++i) ub.push_back(unl[unl_pool->next()]);
      Batch lbatch, ubatch;
      for (const auto* s : lb) {
        auto [im, m] = augment(s->image, s->mask, options.crop, rng);
        lbatch.images.push_back(std::move(im));
        lbatch.masks.push_back(std::move(m));
      }
      for (const auto* s : ub) {
        // Pseudo labels live on the center crop; augment that window.
        auto [im, m] = augment(center_crop(s->image, options.crop), pseudo->at(s->id), options.crop, rng);
        ubatch.images.push_back(std::move(im));
        ubatch.masks.push_back(std::move(m));
      }

      const auto sup_pred = predict_dual(student, lbatch.input());
      const LossValue sup = supervised_loss(sup_pred, lbatch.target(), options.loss);
      std::optional<LossValue> unsup;
      if (n_unl) {
        const auto unl_pred = predict_dual(student, ubatch.input());
        const LabelBatch target = ubatch.target();
        unsup = options.unsup == UnsupLoss::Rectified ? rectified_unsup_loss(unl_pred, target, options.loss)
                                                      : plain_unsup_loss(unl_pred, target, options.loss);
      }
      LossValue total;
      try {
        total = total_loss(sup, unsup, options.unsup_weight);
      } catch (const NonFiniteLoss& e) {
        throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) + ", iteration " +
                               std::to_string(it + 1) + ": " + e.what());
      }
      total.scalar.backward();
      sgd_step(student.params, sgd);
      epoch_sum += total.value();
      ++log.iterations;
    }
    log.epoch_loss.push_back(epoch_sum / static_cast<double>(iters));
    if (options.refresh_every_epoch && n_unl && epoch < cfg.epochs) {
      *pseudo = generate_pseudo_labels(student, data, unlabeled, options.crop,
                                       pseudo->producer + "+epoch" + std::to_string(epoch));
    }
    if (on_epoch) on_epoch(epoch, student);
  }
  return log;
}

std::string checkpoint_name(std::size_t j) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "ck_%02zu", j);
  return buf;
}

ModelParams clone(const ModelParams& m) { return ModelParams{m.config, m.params.clone_as<float>()}; }

std::vector<std::string> ids_of(const std::vector<const DataSample*>& samples) {
  std::vector<std::string> out;
  for (const auto* s : samples) out.push_back(s->id);
  return out;
}

TeacherResult pretrain_teacher(const ModelParams& init, const Dataset& data,
                               const std::vector<std::string>& labeled, const TrainPhaseConfig& cfg,
                               std::size_t k, const StageOptions& options, const std::filesystem::path& dir) {
  const auto schedule = checkpoint_epochs(cfg.epochs, k);
  TeacherResult result;
  ModelParams model = clone(init);
  std::size_t next = 0;
  result.log = train_stage(model, data, labeled, {}, nullptr, cfg, options,
                           [&](std::size_t epoch, const ModelParams& m) {
                             if (next < schedule.size() && epoch == schedule[next]) {
                               result.checkpoints.models.push_back(clone(m));
                               result.checkpoints.epochs.push_back(epoch);
                               ++next;
                               if (!dir.empty()) save_checkpoint(m, dir / checkpoint_name(next));
                             }
                           });
  return result;
}

}  // namespace dust
