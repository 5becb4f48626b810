#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>

#include "doctest.h"
#include "dust/checkpoint.hpp"
#include "dust/pipeline.hpp"
#include "dust/synth.hpp"

using namespace dust;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

bool same_params(const ModelParams& a, const ModelParams& b) {
  if (a.params.names() != b.params.names()) return false;
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    const auto x = a.params.tensors()[i].data(), y = b.params.tensors()[i].data();
    if (!std::equal(x.begin(), x.end(), y.begin(), y.end())) return false;
  }
  return true;
}

// A 32x32 dataset small enough for depth-2 networks on 16x16 crops.
const Dataset& tiny() {
  static const Dataset ds = [] {
    SynthConfig s;
    s.size = 32;
    s.labeled = 3;
    s.unlabeled = 5;
    s.val = 1;
    s.test = 3;
    s.seed = 4;
    const auto root = fs::temp_directory_path() / "dust_test_training_data";
    fs::remove_all(root);
    generate_dataset(s, root);
    return load_dataset(root);
  }();
  return ds;
}

ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.data_dir = tiny().root.string();
  c.image_size = 32;
  c.crop_size = 16;
  c.depth = 2;
  c.base_channels = 4;
  c.pretrain_epochs = 5;
  c.stage1_epochs = 2;
  c.stage2_epochs = 2;
  c.batch_size = 4;
  c.labeled_per_batch = 2;
  c.k_checkpoints = 3;
  return c;
}

StageOptions tiny_options() {
  StageOptions o;
  o.crop = 16;
  return o;
}

TrainPhaseConfig tiny_phase(std::size_t epochs) {
  TrainPhaseConfig p;
  p.epochs = epochs;
  p.batch_size = 4;
  p.labeled_per_batch = 2;
  p.seed = 11;
  return p;
}

}  // namespace

TEST_CASE("checkpoint schedule") {
  CHECK(checkpoint_epochs(40, 5) == std::vector<std::size_t>{8, 16, 24, 32, 40});
  CHECK(checkpoint_epochs(7, 5) == std::vector<std::size_t>{2, 3, 5, 6, 7});
  CHECK(checkpoint_epochs(5, 5) == std::vector<std::size_t>{1, 2, 3, 4, 5});
  CHECK_THROWS_AS(checkpoint_epochs(4, 5), std::invalid_argument);
  CHECK_THROWS_AS(checkpoint_epochs(10, 1), std::invalid_argument);
}

TEST_CASE("natural epoch length") {
  TrainPhaseConfig p;  // batch 8, 4 labeled
  CHECK(iterations_per_epoch(p, 6, 0) == 1);
  CHECK(iterations_per_epoch(p, 6, 54) == 14);
  CHECK(iterations_per_epoch(p, 6, 27) == 7);
  CHECK(iterations_per_epoch(p, 20, 3) == 5);
  p.iterations_per_epoch = 9;
  CHECK(iterations_per_epoch(p, 6, 54) == 9);
  p.labeled_per_batch = 0;
  CHECK_THROWS_AS(validate(p), std::invalid_argument);
}

TEST_CASE("checkpoint round trip is bit-identical") {
  ModelParams m = init_params(2, 4, 3, 5);
  UNetConfig nb;
  nb.depth = 3;
  nb.base_channels = 4;
  nb.n_classes = 2;
  nb.instance_norm = false;
  for (const ModelParams& model : {m, init_params(nb, 2)}) {
    const auto path = fs::temp_directory_path() / "dust_test_ckpt" / "model.ckpt";
    save_checkpoint(model, path);
    const auto back = load_checkpoint(path);
    CHECK(back.config == model.config);
    CHECK(same_params(back, model));
    CHECK(slurp(path).size() == serialize_params(model.params).size());

    std::mt19937_64 rng(8);
    std::normal_distribution<float> nd;
    std::vector<float> v(2 * 16 * 16);
    for (auto& x : v) x = nd(rng);
    const Tensor x({2, 1, 16, 16}, v);
    NoGradGuard ng;
    const auto a = predict_dual(model, x), b = predict_dual(back, x);
    CHECK(std::equal(a.main_prob.data().begin(), a.main_prob.data().end(), b.main_prob.data().begin()));
    CHECK(std::equal(a.aux_prob.data().begin(), a.aux_prob.data().end(), b.aux_prob.data().begin()));
  }
}

TEST_CASE("corrupt checkpoints are rejected") {
  const auto bytes = serialize_params(init_params(2, 4, 3, 5).params);
  CHECK(bytes.substr(0, 8) == "DUSTCKPT");
  CHECK_THROWS_AS(deserialize_params(bytes.substr(0, bytes.size() - 1)), CheckpointError);
  CHECK_THROWS_AS(deserialize_params(bytes + "x"), CheckpointError);
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(deserialize_params(bad), CheckpointError);
  bad = bytes;
  bad[8] = 2;  // version
  CHECK_THROWS_AS(deserialize_params(bad), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint(fs::temp_directory_path() / "dust_no_such.ckpt"), CheckpointError);
}

TEST_CASE("pretraining snapshots and determinism") {
  const auto& ds = tiny();
  const auto labeled = ids_of(ds.of(Split::Labeled));
  const ModelParams init = init_params(2, 4, 4, 3);
  const auto dir = fs::temp_directory_path() / "dust_test_teacher";
  fs::remove_all(dir);
  const auto a = pretrain_teacher(init, ds, labeled, tiny_phase(5), 3, tiny_options(), dir);
  const auto b = pretrain_teacher(init, ds, labeled, tiny_phase(5), 3, tiny_options());
  CHECK(a.checkpoints.epochs == std::vector<std::size_t>{2, 4, 5});
  CHECK(a.log.epoch_loss.size() == 5);
  REQUIRE(a.checkpoints.size() == 3);
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(same_params(a.checkpoints.models[j], b.checkpoints.models[j]));
    CHECK(same_params(load_checkpoint(dir / checkpoint_name(j + 1)), a.checkpoints.models[j]));
  }
  CHECK_FALSE(same_params(a.checkpoints.models[0], a.checkpoints.models[2]));
  CHECK_FALSE(same_params(init, a.checkpoints.models[0]));

  // Without unlabeled data a stage is exactly the supervised loop.
  ModelParams m = clone(init);
  const auto log = train_stage(m, ds, labeled, {}, nullptr, tiny_phase(5), tiny_options());
  CHECK(log.epoch_loss == a.log.epoch_loss);
  CHECK(same_params(m, a.checkpoints.last()));
  fs::remove_all(dir);
}

TEST_CASE("pseudo labels") {
  const auto& ds = tiny();
  const ModelParams m = init_params(2, 4, 4, 6);
  const auto ids = ids_of(ds.of(Split::Unlabeled));
  const auto a = generate_pseudo_labels(m, ds, ids, 16, "t");
  const auto b = generate_pseudo_labels(m, ds, ids, 16, "t");
  CHECK(a.labels.size() == ids.size());
  for (const auto& id : ids) {
    CHECK(a.at(id).labels == b.at(id).labels);
    CHECK(a.at(id).height == 16);
    for (auto v : a.at(id).labels) CHECK(v < 4);
  }
  CHECK_THROWS_AS(generate_pseudo_labels(m, ds, {"unlabeled_999"}, 16, "t"), std::out_of_range);
  CHECK_THROWS_AS(a.at("labeled_000"), std::out_of_range);
}

TEST_CASE("student stage uses pseudo labels and logs every epoch") {
  const auto& ds = tiny();
  const ModelParams teacher = init_params(2, 4, 4, 6);
  const auto lab = ids_of(ds.of(Split::Labeled)), unl = ids_of(ds.of(Split::Unlabeled));
  PseudoLabelSet pseudo = generate_pseudo_labels(teacher, ds, unl, 16, "teacher");
  const PseudoLabelSet before = pseudo;
  ModelParams s1 = clone(teacher), s2 = clone(teacher);
  auto cfg = tiny_phase(3);
  const auto l1 = train_stage(s1, ds, lab, unl, &pseudo, cfg, tiny_options());
  train_stage(s2, ds, lab, unl, &pseudo, cfg, tiny_options());
  CHECK(l1.epoch_loss.size() == 3);
  CHECK(l1.iterations == 3 * 3);  // max(ceil(3/2), ceil(5/2))
  CHECK(same_params(s1, s2));
  for (const auto& id : unl) CHECK(pseudo.at(id).labels == before.at(id).labels);
  CHECK_THROWS_AS(train_stage(s1, ds, lab, unl, nullptr, cfg, tiny_options()), std::invalid_argument);

  StageOptions plain = tiny_options();
  plain.unsup = UnsupLoss::Plain;
  ModelParams s3 = clone(teacher);
  train_stage(s3, ds, lab, unl, &pseudo, cfg, plain);
  CHECK_FALSE(same_params(s1, s3));
}

TEST_CASE("divergence is reported") {
  const auto& ds = tiny();
  ModelParams m = init_params(2, 4, 4, 6);
  m.params.get("main.head.bias").data_mut()[0] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(train_stage(m, ds, ids_of(ds.of(Split::Labeled)), {}, nullptr, tiny_phase(1), tiny_options()),
                  TrainingDiverged);
}

TEST_CASE("evaluation of a perfect predictor") {
  const auto& ds = tiny();
  std::vector<CaseMetrics> cases;
  for (const auto* s : ds.of(Split::Test)) {
    const auto gt = center_crop(s->mask, 16);
    cases.push_back(case_metrics(s->id, gt, gt, 4));
  }
  const auto r = summarize(cases);
  CHECK(r.cases.size() == ds.of(Split::Test).size());
  CHECK(r.aggregate.dice.mean == 1);
  CHECK(r.aggregate.jaccard.mean == 1);
  CHECK(r.aggregate.hd95.mean == 0);
  CHECK(r.aggregate.asd.mean == 0);

  const auto ev = evaluate_model(init_params(2, 4, 4, 1), ds, Split::Test, 16);
  CHECK(ev.report.cases.size() == 3);
  CHECK(ev.predictions.size() == 3);
  const auto j = metrics_json(ev.report, {"abc", 1, "full", "test", "x"});
  CHECK(j["per_case"].size() == 3);
  CHECK(j["format_version"] == kMetricsVersion);
  double mean = 0;
  for (const auto& c : j["per_case"]) mean += c["dice"].get<double>() / 3;
  CHECK(std::abs(j["aggregate"]["dice_mean"].get<double>() - mean) < 1e-9);
}

TEST_CASE("full pipeline writes its artifacts and is reproducible") {
  auto cfg = tiny_config();
  const auto& ds = tiny();
  const auto out1 = fs::temp_directory_path() / "dust_test_run1", out2 = fs::temp_directory_path() / "dust_test_run2";
  fs::remove_all(out1);
  fs::remove_all(out2);
  const auto r = run_pipeline(cfg, ds, out1);
  run_pipeline(cfg, ds, out2);
  for (const char* f : {"config.resolved.json", "teacher/ck_01", "teacher/ck_02", "teacher/ck_03", "ranking.csv",
                        "stage1/model.ckpt", "stage2/model.ckpt", "metrics.json"}) {
    INFO(f);
    REQUIRE(fs::exists(out1 / f));
    if (std::string(f) != "metrics.json") CHECK(slurp(out1 / f) == slurp(out2 / f));
  }
  CHECK(load_config(out1 / "config.resolved.json") == cfg);
  REQUIRE(r.ranking);
  CHECK(r.ranking->reliable_ids().size() == 3);  // ceil(5/2)
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(out1 / "pseudo" / "stage1")) n += e.is_regular_file();
  CHECK(n == 3);
  n = 0;
  for (const auto& e : fs::directory_iterator(out1 / "pseudo" / "stage2")) n += e.is_regular_file();
  CHECK(n == 5);

  // Stage-1 pseudo labels are the teacher's; stage 2 starts from the stage-1 model.
  const auto teacher = load_checkpoint(out1 / "teacher" / "ck_03");
  const auto p1 = generate_pseudo_labels(teacher, ds, r.ranking->reliable_ids(), 16, "teacher");
  for (const auto& [id, m] : p1.labels) CHECK(read_pgm8(out1 / "pseudo" / "stage1" / (id + ".pgm")).labels == m.labels);
  const auto stage1 = load_checkpoint(out1 / "stage1" / "model.ckpt");
  const auto p2 = generate_pseudo_labels(stage1, ds, ids_of(ds.of(Split::Unlabeled)), 16, "stage1");
  for (const auto& [id, m] : p2.labels) CHECK(read_pgm8(out1 / "pseudo" / "stage2" / (id + ".pgm")).labels == m.labels);
  CHECK(same_params(load_checkpoint(out1 / "stage2" / "model.ckpt"), r.final_model));

  // Reusing the teacher gives the same run as training it again.
  const auto out3 = fs::temp_directory_path() / "dust_test_run3";
  fs::remove_all(out3);
  run_pipeline(cfg, ds, out3, &r.teacher);
  CHECK(slurp(out1 / "stage2" / "model.ckpt") == slurp(out3 / "stage2" / "model.ckpt"));

  cfg.ablation_mode = AblationMode::Supervised;
  const auto out4 = fs::temp_directory_path() / "dust_test_run4";
  fs::remove_all(out4);
  const auto sup = run_pipeline(cfg, ds, out4, &r.teacher);
  CHECK(same_params(sup.final_model, teacher));
  CHECK_FALSE(fs::exists(out4 / "stage1"));
  for (const auto& p : {out1, out2, out3, out4}) fs::remove_all(p);
}
