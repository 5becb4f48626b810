#include "dust/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>

#include "dust/seed.hpp"

namespace dust {

using nlohmann::json;

std::string to_string(AblationMode mode) {
  switch (mode) {
    case AblationMode::Supervised: return "supervised";
    case AblationMode::St: return "st";
    case AblationMode::StSample: return "st_sample";
    case AblationMode::Full: return "full";
  }
  return "?";
}

AblationMode ablation_mode_from_string(const std::string& name) {
  for (auto m : {AblationMode::Supervised, AblationMode::St, AblationMode::StSample, AblationMode::Full}) {
    if (to_string(m) == name) return m;
  }
  throw std::invalid_argument("unknown ablation mode '" + name + "' (supervised, st, st_sample, full)");
}

void validate(const ExperimentConfig& c) {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("config: " + msg); };
  if (c.data_dir.empty()) fail("data_dir is empty");
  if (c.crop_size == 0 || c.crop_size > c.image_size) fail("crop_size must be in [1, image_size]");
  UNetConfig u = unet_config(c);
  validate(u);
  if (c.crop_size % spatial_divisor(u)) {
    fail("crop_size " + std::to_string(c.crop_size) + " is not a multiple of " +
         std::to_string(spatial_divisor(u)) + " (depth " + std::to_string(c.depth) + ")");
  }
  if (!(c.learning_rate > 0)) fail("learning_rate must be > 0");
  if (!(c.momentum >= 0 && c.momentum < 1)) fail("momentum must be in [0, 1)");
  if (!(c.weight_decay >= 0)) fail("weight_decay must be >= 0");
  if (c.batch_size == 0) fail("batch_size must be >= 1");
  if (c.labeled_per_batch == 0 || c.labeled_per_batch > c.batch_size) {
    fail("labeled_per_batch must be in [1, batch_size]");
  }
  if (c.stage1_epochs == 0 || c.stage2_epochs == 0) fail("stage epochs must be >= 1");
  if (c.k_checkpoints < 2) fail("k_checkpoints must be >= 2");
  if (c.pretrain_epochs < c.k_checkpoints) fail("pretrain_epochs must be >= k_checkpoints");
  if (!(c.partition_fraction > 0 && c.partition_fraction < 1)) fail("partition_fraction must be in (0, 1)");
  if (!(c.unsup_weight >= 0) || !std::isfinite(c.unsup_weight)) fail("unsup_weight must be finite and >= 0");
  if (c.eval_split != "test" && c.eval_split != "val") fail("eval_split must be 'test' or 'val'");
}

json to_json(const ExperimentConfig& c) {
  return json{{"data_dir", c.data_dir},
              {"image_size", c.image_size},
              {"crop_size", c.crop_size},
              {"n_classes", c.n_classes},
              {"depth", c.depth},
              {"base_channels", c.base_channels},
              {"instance_norm", c.instance_norm},
              {"learning_rate", c.learning_rate},
              {"momentum", c.momentum},
              {"weight_decay", c.weight_decay},
              {"pretrain_epochs", c.pretrain_epochs},
              {"stage1_epochs", c.stage1_epochs},
              {"stage2_epochs", c.stage2_epochs},
              {"batch_size", c.batch_size},
              {"labeled_per_batch", c.labeled_per_batch},
              {"pretrain_iterations_per_epoch", c.pretrain_iterations_per_epoch},
              {"stage_iterations_per_epoch", c.stage_iterations_per_epoch},
              {"k_checkpoints", c.k_checkpoints},
              {"partition_fraction", c.partition_fraction},
              {"unsup_weight", c.unsup_weight},
              {"refresh_every_epoch", c.refresh_every_epoch},
              {"include_background_in_dice", c.include_background_in_dice},
              {"ablation_mode", to_string(c.ablation_mode)},
              {"seed", c.seed},
              {"eval_split", c.eval_split}};
}

ExperimentConfig config_from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("config: top level must be a JSON object");
  ExperimentConfig c;
  using Setter = std::function<void(const json&)>;
  auto count = [](std::size_t& f) -> Setter {
    return [&f](const json& v) {
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
        throw std::invalid_argument("expected a non-negative integer");
      }
      f = v.get<std::size_t>();
    };
  };
  auto real = [](double& f) -> Setter {
    return [&f](const json& v) {
      if (!v.is_number()) throw std::invalid_argument("expected a number");
      f = v.get<double>();
    };
  };
  auto flag = [](bool& f) -> Setter {
    return [&f](const json& v) {
      if (!v.is_boolean()) throw std::invalid_argument("expected true or false");
      f = v.get<bool>();
    };
  };
  auto text = [](std::string& f) -> Setter {
    return [&f](const json& v) {
      if (!v.is_string()) throw std::invalid_argument("expected a string");
      f = v.get<std::string>();
    };
  };
  std::size_t seed = c.seed;
  std::string mode = to_string(c.ablation_mode);
  const std::map<std::string, Setter> fields = {
      {"data_dir", text(c.data_dir)},
      {"image_size", count(c.image_size)},
      {"crop_size", count(c.crop_size)},
      {"n_classes", count(c.n_classes)},
      {"depth", count(c.depth)},
      {"base_channels", count(c.base_channels)},
      {"instance_norm", flag(c.instance_norm)},
      {"learning_rate", real(c.learning_rate)},
      {"momentum", real(c.momentum)},
      {"weight_decay", real(c.weight_decay)},
      {"pretrain_epochs", count(c.pretrain_epochs)},
      {"stage1_epochs", count(c.stage1_epochs)},
      {"stage2_epochs", count(c.stage2_epochs)},
      {"batch_size", count(c.batch_size)},
      {"labeled_per_batch", count(c.labeled_per_batch)},
      {"pretrain_iterations_per_epoch", count(c.pretrain_iterations_per_epoch)},
      {"stage_iterations_per_epoch", count(c.stage_iterations_per_epoch)},
      {"k_checkpoints", count(c.k_checkpoints)},
      {"partition_fraction", real(c.partition_fraction)},
      {"unsup_weight", real(c.unsup_weight)},
      {"refresh_every_epoch", flag(c.refresh_every_epoch)},
      {"include_background_in_dice", flag(c.include_background_in_dice)},
      {"ablation_mode", text(mode)},
      {"seed", count(seed)},
      {"eval_split", text(c.eval_split)},
  };
  for (const auto& [key, value] : j.items()) {
    auto it = fields.find(key);
    if (it == fields.end()) throw std::invalid_argument("config: unknown key '" + key + "'");
    try {
      it->second(value);
    } catch (const std::exception& e) {
      throw std::invalid_argument("config: " + key + ": " + e.what());
    }
  }
  c.seed = seed;
  c.ablation_mode = ablation_mode_from_string(mode);
  validate(c);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

void write_config(const ExperimentConfig& cfg, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json(cfg).dump(2) << '\n';
}

std::string config_digest(const ExperimentConfig& cfg) {
  json j = to_json(cfg);
  j.erase("seed");
  j.erase("ablation_mode");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
  return buf;
}

UNetConfig unet_config(const ExperimentConfig& cfg) {
  UNetConfig u;
  u.depth = cfg.depth;
  u.base_channels = cfg.base_channels;
  u.n_classes = cfg.n_classes;
  u.instance_norm = cfg.instance_norm;
  return u;
}

StageOptions stage_options(const ExperimentConfig& cfg) {
  StageOptions o;
  o.sgd.learning_rate = cfg.learning_rate;
  o.sgd.momentum = cfg.momentum;
  o.sgd.weight_decay = cfg.weight_decay;
  o.loss.dice_include_background = cfg.include_background_in_dice;
  o.unsup_weight = cfg.unsup_weight;
  o.unsup = cfg.ablation_mode == AblationMode::Full ? UnsupLoss::Rectified : UnsupLoss::Plain;
  o.crop = cfg.crop_size;
  o.refresh_every_epoch = cfg.refresh_every_epoch;
  return o;
}

}  // namespace dust
