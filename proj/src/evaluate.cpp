#include "dust/evaluate.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>

#include "dust/parallel.hpp"

namespace dust {

using nlohmann::json;

Evaluation evaluate_model(const ModelParams& model, const Dataset& data, Split split, std::size_t crop) {
  const auto samples = data.of(split);
  if (samples.empty()) throw std::invalid_argument("evaluate: split '" + to_string(split) + "' is empty");
  std::vector<CaseMetrics> cases(samples.size());
  std::vector<Mask8> preds(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    const FloatImage im = center_crop(samples[i]->image, crop);
    const LabelBatch lb = predict_main_labels(model, image_batch({&im}));
    preds[i] = Mask8{lb.height, lb.width, lb.values};
    cases[i] = case_metrics(samples[i]->id, preds[i], center_crop(samples[i]->mask, crop),
                            model.config.n_classes);
  });
  Evaluation ev;
  ev.report = summarize(std::move(cases));
  for (std::size_t i = 0; i < samples.size(); ++i) ev.predictions.emplace_back(samples[i]->id, std::move(preds[i]));
  std::sort(ev.predictions.begin(), ev.predictions.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  return ev;
}

json metrics_json(const MetricsReport& report, const MetricsMeta& meta) {
  json j;
  j["format_version"] = kMetricsVersion;
  j["config_digest"] = meta.config_digest;
  j["seed"] = meta.seed;
  j["mode"] = meta.mode;
  j["split"] = meta.split;
  j["model"] = meta.model;
  json cases = json::array();
  for (const auto& c : report.cases) {
    json per_class = json::array();
    for (std::size_t k = 0; k < c.per_class.size(); ++k) {
      const auto& m = c.per_class[k];
      per_class.push_back({{"class", k + 1},
                           {"dice", m.dice},
                           {"jaccard", m.jaccard},
                           {"hd95", m.hd95},
                           {"asd", m.asd},
                           {"undefined", m.undefined}});
    }
    cases.push_back({{"id", c.id},
                     {"dice", c.dice},
                     {"jaccard", c.jaccard},
                     {"hd95", c.hd95},
                     {"asd", c.asd},
                     {"undefined", c.undefined},
                     {"per_class", per_class}});
  }
  j["per_case"] = cases;
  const auto& a = report.aggregate;
  j["aggregate"] = {{"dice_mean", a.dice.mean},       {"dice_std", a.dice.std},
                    {"jaccard_mean", a.jaccard.mean}, {"jaccard_std", a.jaccard.std},
                    {"hd95_mean", a.hd95.mean},       {"hd95_std", a.hd95.std},
                    {"asd_mean", a.asd.mean},         {"asd_std", a.asd.std},
                    {"n_cases", report.cases.size()}};
  j["undefined_count"] = report.undefined_count;
  return j;
}

void write_metrics_json(const std::filesystem::path& path, const MetricsReport& report, const MetricsMeta& meta) {
  json j = metrics_json(report, meta);
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  j["run_timestamp"] = buf;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void write_predictions(const std::filesystem::path& dir,
                       const std::vector<std::pair<std::string, Mask8>>& predictions) {
  std::filesystem::create_directories(dir);
  for (const auto& [id, m] : predictions) write_pgm8(dir / (id + ".pgm"), m);
}

}  // namespace dust
