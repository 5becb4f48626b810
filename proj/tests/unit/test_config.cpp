#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "dust/config.hpp"

using namespace dust;
using nlohmann::json;

TEST_CASE("defaults round-trip through JSON") {
  ExperimentConfig c;
  CHECK(config_from_json(to_json(c)) == c);
  CHECK(config_from_json(json::object()) == c);
  c.seed = 17;
  c.ablation_mode = AblationMode::StSample;
  c.learning_rate = 0.005;
  CHECK(config_from_json(to_json(c)) == c);
}

TEST_CASE("resolved config written to disk is a fixed point") {
  ExperimentConfig c;
  c.base_channels = 8;
  c.stage_iterations_per_epoch = 3;
  const auto p = std::filesystem::temp_directory_path() / "dust_test_config.json";
  write_config(c, p);
  const auto once = load_config(p);
  write_config(once, p);
  CHECK(load_config(p) == once);
  CHECK(once == c);
  std::filesystem::remove(p);
}

TEST_CASE("invalid configs are rejected") {
  auto bad = [](json j) { CHECK_THROWS_AS(config_from_json(j), std::invalid_argument); };
  bad({{"learning_rat", 0.1}});
  bad({{"learning_rate", "fast"}});
  bad({{"depth", -1}});
  bad({{"depth", 2.5}});
  bad({{"crop_size", 60}});  // not a multiple of 8 at depth 4
  bad({{"crop_size", 96}});
  bad({{"labeled_per_batch", 9}});
  bad({{"ablation_mode", "everything"}});
  bad({{"partition_fraction", 1.0}});
  bad({{"k_checkpoints", 1}});
  bad({{"pretrain_epochs", 3}});
  bad({{"instance_norm", 1}});
  bad({{"eval_split", "train"}});
  bad(json::array());
}

TEST_CASE("digest ignores seed and mode only") {
  ExperimentConfig a, b;
  b.seed = 99;
  b.ablation_mode = AblationMode::Supervised;
  CHECK(config_digest(a) == config_digest(b));
  b.unsup_weight = 0.5;
  CHECK(config_digest(a) != config_digest(b));
  CHECK(config_digest(a).size() == 16);
}

TEST_CASE("mode names") {
  for (auto m : {AblationMode::Supervised, AblationMode::St, AblationMode::StSample, AblationMode::Full}) {
    CHECK(ablation_mode_from_string(to_string(m)) == m);
  }
  CHECK(stage_options(ExperimentConfig{}).unsup == UnsupLoss::Rectified);
  ExperimentConfig c;
  c.ablation_mode = AblationMode::StSample;
  CHECK(stage_options(c).unsup == UnsupLoss::Plain);
}
