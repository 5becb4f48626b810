// Command-line driver: gen-data, run, ablate, rank, evaluate, predict.
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "dust/ablation.hpp"
#include "dust/checkpoint.hpp"
#include "dust/synth.hpp"

namespace fs = std::filesystem;
using namespace dust;

namespace {

void progress(const std::string& s) { std::cerr << s << std::endl; }

bool non_empty_dir(const fs::path& p) { return fs::is_directory(p) && !fs::is_empty(p); }

// Config file plus the flags every model-using subcommand shares.
struct ConfigFlags {
  std::string path;
  std::string data;

  void add(CLI::App* app) {
    app->add_option("--config", path, "Experiment config (JSON); defaults apply when omitted");
    app->add_option("--data", data, "Dataset directory (overrides data_dir)");
  }

  ExperimentConfig resolve() const {
    ExperimentConfig cfg = path.empty() ? ExperimentConfig{} : load_config(path);
    if (!data.empty()) cfg.data_dir = data;
    validate(cfg);
    return cfg;
  }
};

CheckpointSet load_teacher_dir(const fs::path& dir) {
  std::vector<fs::path> files;
  if (!fs::is_directory(dir)) throw std::runtime_error("no checkpoint directory " + dir.string());
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.rfind("ck_", 0) == 0) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.size() < 2) throw std::runtime_error(dir.string() + ": need at least 2 ck_XX snapshots");
  CheckpointSet set;
  for (std::size_t i = 0; i < files.size(); ++i) {
    set.models.push_back(load_checkpoint(files[i]));
    set.epochs.push_back(i + 1);
  }
  return set;
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    std::size_t used = 0;
    const auto v = std::stoull(tok, &used);
    if (used != tok.size()) throw std::invalid_argument("bad seed '" + tok + "'");
    if (std::find(out.begin(), out.end(), v) != out.end()) throw std::invalid_argument("seed listed twice");
    out.push_back(v);
  }
  if (out.empty()) throw std::invalid_argument("--seeds is empty");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-uncertainty self-training for semi-supervised segmentation on synthetic data"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  SynthConfig synth;
  std::string gen_out;
  bool force = false;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--labeled", synth.labeled, "Labeled training samples")->capture_default_str();
  gen->add_option("--unlabeled", synth.unlabeled, "Unlabeled training samples")->capture_default_str();
  gen->add_option("--val", synth.val, "Validation samples")->capture_default_str();
  gen->add_option("--test", synth.test, "Test samples")->capture_default_str();
  gen->add_option("--size", synth.size, "Canvas side in pixels")->capture_default_str();
  gen->add_option("--seed", synth.seed, "Generation seed")->capture_default_str();
  gen->add_option("--difficulty-lo", synth.difficulty_lo, "Lower end of the difficulty range")->capture_default_str();
  gen->add_option("--difficulty-hi", synth.difficulty_hi, "Upper end of the difficulty range")->capture_default_str();
  gen->add_option("--divisor", synth.spatial_divisor, "Required divisor of --size (2^(depth-1))")
      ->capture_default_str();
  gen->add_flag("--force", force, "Overwrite a non-empty output directory");

  // run
  auto* run = app.add_subcommand("run", "Run one ablation arm end to end");
  ConfigFlags run_cfg;
  run_cfg.add(run);
  std::string run_mode, run_out;
  std::optional<std::uint64_t> run_seed;
  run->add_option("--mode", run_mode, "supervised | st | st_sample | full (overrides ablation_mode)");
  run->add_option("--seed", run_seed, "Run seed (overrides seed)");
  run->add_option("--out", run_out, "Run directory")->required();

  // ablate
  auto* abl = app.add_subcommand("ablate", "Run all four arms over several seeds and tabulate");
  ConfigFlags abl_cfg;
  abl_cfg.add(abl);
  std::string abl_seeds = "1,2,3", abl_out;
  abl->add_option("--seeds", abl_seeds, "Comma-separated seeds")->capture_default_str();
  abl->add_option("--out", abl_out, "Output directory")->required();

  // rank
  auto* rank = app.add_subcommand("rank", "Rank unlabeled samples with a set of teacher snapshots");
  ConfigFlags rank_cfg;
  rank_cfg.add(rank);
  std::string rank_teacher, rank_out;
  rank->add_option("--teacher", rank_teacher, "Directory holding ck_01..ck_K")->required();
  rank->add_option("--out", rank_out, "Output directory (ranking.csv)")->required();

  // evaluate / predict
  auto* eval = app.add_subcommand("evaluate", "Score a checkpoint on a split and write metrics.json");
  auto* pred = app.add_subcommand("predict", "Dump predicted masks for a split");
  ConfigFlags eval_cfg, pred_cfg;
  eval_cfg.add(eval);
  pred_cfg.add(pred);
  std::string eval_ckpt, eval_out, eval_split, pred_ckpt, pred_out, pred_split;
  eval->add_option("--checkpoint", eval_ckpt, "Model checkpoint")->required();
  eval->add_option("--out", eval_out, "Output directory")->required();
  eval->add_option("--split", eval_split, "test | val (overrides eval_split)");
  pred->add_option("--checkpoint", pred_ckpt, "Model checkpoint")->required();
  pred->add_option("--out", pred_out, "Output directory (predictions/<id>.pgm)")->required();
  pred->add_option("--split", pred_split, "test | val (overrides eval_split)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      if (non_empty_dir(gen_out) && !force) {
        throw std::runtime_error(gen_out + " is not empty (use --force to overwrite)");
      }
      validate(synth);
      if (force) fs::remove_all(gen_out);
      const auto m = generate_dataset(synth, gen_out);
      std::cout << "wrote " << m.samples.size() << " samples to " << gen_out << " (labeled "
                << m.count(Split::Labeled) << ", unlabeled " << m.count(Split::Unlabeled) << ", val "
                << m.count(Split::Val) << ", test " << m.count(Split::Test) << ", " << m.image_size << "x"
                << m.image_size << ", " << m.n_classes << " classes, seed " << m.seed << ")\n";
    } else if (*run) {
      ExperimentConfig cfg = run_cfg.resolve();
      if (!run_mode.empty()) cfg.ablation_mode = ablation_mode_from_string(run_mode);
      if (run_seed) cfg.seed = *run_seed;
      const Dataset data = load_dataset(cfg.data_dir);
      const auto r = run_pipeline(cfg, data, run_out, nullptr, progress);
      const auto& a = r.evaluation.report.aggregate;
      std::printf("%s seed %llu: dice %.4f jaccard %.4f hd95 %.3f asd %.3f (%zu cases, %zu undefined)\n",
                  to_string(cfg.ablation_mode).c_str(), static_cast<unsigned long long>(cfg.seed), a.dice.mean,
                  a.jaccard.mean, a.hd95.mean, a.asd.mean, r.evaluation.report.cases.size(),
                  r.evaluation.report.undefined_count);
    } else if (*abl) {
      const ExperimentConfig cfg = abl_cfg.resolve();
      const auto seeds = parse_seeds(abl_seeds);
      if (seeds.size() < 2) std::cerr << "note: fewer than 2 seeds; std over seeds is 0\n";
      const Dataset data = load_dataset(cfg.data_dir);
      fs::create_directories(abl_out);
      write_config(cfg, fs::path(abl_out) / "config.resolved.json");
      const auto summary = run_ablation(cfg, data, seeds, abl_out, progress);
      const std::string table = format_ablation_table(summary);
      std::ofstream(fs::path(abl_out) / "ablation_table.txt") << table;
      std::ofstream(fs::path(abl_out) / "ablation_summary.json") << ablation_json(summary).dump(2) << '\n';
      std::cout << table;
      for (const auto& r : summary.runs) {
        if (r.error) return 1;
      }
    } else if (*rank) {
      const ExperimentConfig cfg = rank_cfg.resolve();
      const Dataset data = load_dataset(cfg.data_dir);
      const auto ckpts = load_teacher_dir(rank_teacher);
      const auto r = rank_and_partition(ckpts, data.of(Split::Unlabeled), cfg.crop_size, cfg.partition_fraction);
      fs::create_directories(rank_out);
      write_ranking_csv(r, fs::path(rank_out) / "ranking.csv");
      std::cout << "ranked " << r.entries.size() << " samples (" << r.reliable_ids().size() << " reliable)\n";
    } else if (*eval || *pred) {
      const bool is_eval = eval->parsed();
      ExperimentConfig cfg = (is_eval ? eval_cfg : pred_cfg).resolve();
      const std::string& split_flag = is_eval ? eval_split : pred_split;
      if (!split_flag.empty()) cfg.eval_split = split_flag;
      validate(cfg);
      const Dataset data = load_dataset(cfg.data_dir);
      const fs::path ckpt = is_eval ? eval_ckpt : pred_ckpt;
      const ModelParams model = load_checkpoint(ckpt);
      if (model.config.n_classes != cfg.n_classes) {
        throw std::runtime_error("checkpoint predicts " + std::to_string(model.config.n_classes) +
                                 " classes, config expects " + std::to_string(cfg.n_classes));
      }
      const auto ev = evaluate_model(model, data, split_from_string(cfg.eval_split), cfg.crop_size);
      const fs::path out = is_eval ? eval_out : pred_out;
      if (is_eval) {
        write_metrics_json(out / "metrics.json", ev.report,
                           {config_digest(cfg), cfg.seed, "evaluate", cfg.eval_split, ckpt.string()});
        const auto& a = ev.report.aggregate;
        std::printf("dice %.4f jaccard %.4f hd95 %.3f asd %.3f (%zu cases)\n", a.dice.mean, a.jaccard.mean,
                    a.hd95.mean, a.asd.mean, ev.report.cases.size());
      } else {
        write_predictions(out / "predictions", ev.predictions);
        std::cout << "wrote " << ev.predictions.size() << " masks to " << (out / "predictions").string() << "\n";
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
