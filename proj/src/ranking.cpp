#include "dust/ranking.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "dust/parallel.hpp"

namespace dust {

double sample_uncertainty(const std::vector<Tensor>& maps) {
  if (maps.size() < 2) {
    throw std::invalid_argument("sample_uncertainty: need K >= 2 checkpoints, got " +
                                std::to_string(maps.size()));
  }
  const auto& ref = maps.back();
  for (const auto& m : maps) {
    if (m.shape() != ref.shape()) {
      throw ShapeError("sample_uncertainty: map shape " + shape_str(m.shape()) + " vs " +
                       shape_str(ref.shape()));
    }
  }
  const auto last = ref.data();
  double total = 0;
  for (std::size_t i = 0; i + 1 < maps.size(); ++i) {
    const auto cur = maps[i].data();
    double s = 0;
    for (std::size_t j = 0; j < cur.size(); ++j) {
      const double d = static_cast<double>(cur[j]) - static_cast<double>(last[j]);
      s += d * d;
    }
    total += s / static_cast<double>(cur.size());
  }
  return total / static_cast<double>(maps.size() - 1);
}

double sample_uncertainty(const CheckpointSet& ckpts, const Tensor& image) {
  NoGradGuard no_grad;
  std::vector<Tensor> maps;
  for (const auto& m : ckpts.models) maps.push_back(predict_main(m, image));
  return sample_uncertainty(maps);
}

std::vector<std::string> SampleRanking::reliable_ids() const {
  std::vector<std::string> out;
  for (const auto& e : entries) {
    if (e.reliable) out.push_back(e.id);
  }
  return out;
}

std::vector<std::string> SampleRanking::unreliable_ids() const {
  std::vector<std::string> out;
  for (const auto& e : entries) {
    if (!e.reliable) out.push_back(e.id);
  }
  return out;
}

SampleRanking rank_and_partition(std::vector<std::pair<std::string, double>> scores, double fraction) {
  if (scores.empty()) throw std::invalid_argument("rank_and_partition: empty unlabeled set");
  if (!(fraction > 0 && fraction < 1)) {
    throw std::invalid_argument("rank_and_partition: fraction must be in (0, 1)");
  }
  std::set<std::string> seen;
  for (const auto& [id, u] : scores) {
    if (!seen.insert(id).second) throw std::invalid_argument("rank_and_partition: duplicate id " + id);
    if (!std::isfinite(u)) throw std::invalid_argument("rank_and_partition: non-finite score for " + id);
  }
  std::sort(scores.begin(), scores.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second < b.second : a.first < b.first;
  });
  const auto n_reliable = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(scores.size())));
  SampleRanking r;
  r.fraction = fraction;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    r.entries.push_back({scores[i].first, scores[i].second, i + 1, i < n_reliable});
  }
  return r;
}

SampleRanking rank_and_partition(const CheckpointSet& ckpts, const std::vector<const DataSample*>& samples,
                                 std::size_t crop, double fraction) {
  if (ckpts.size() < 2) {
    throw std::invalid_argument("rank_and_partition: need K >= 2 checkpoints, got " +
                                std::to_string(ckpts.size()));
  }
  std::vector<std::pair<std::string, double>> scores(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    const FloatImage im = center_crop(samples[i]->image, crop);
    scores[i] = {samples[i]->id, sample_uncertainty(ckpts, image_batch({&im}))};
  });
  return rank_and_partition(std::move(scores), fraction);
}

void write_ranking_csv(const SampleRanking& ranking, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "sample_id,uncertainty,rank,partition\n";
  char buf[64];
  for (const auto& e : ranking.entries) {
    std::snprintf(buf, sizeof buf, "%.9g", e.uncertainty);
    out << e.id << ',' << buf << ',' << e.rank << ',' << (e.reliable ? "reliable" : "unreliable") << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

SampleRanking read_ranking_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "sample_id,uncertainty,rank,partition") {
    throw std::runtime_error(path.string() + ": unexpected header '" + line + "'");
  }
  SampleRanking r;
  std::size_t reliable = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string id, u, rank, part;
    std::getline(ss, id, ',');
    std::getline(ss, u, ',');
    std::getline(ss, rank, ',');
    std::getline(ss, part);
    if (part != "reliable" && part != "unreliable") {
      throw std::runtime_error(path.string() + ": bad partition in '" + line + "'");
    }
    r.entries.push_back({id, std::stod(u), std::stoul(rank), part == "reliable"});
    reliable += part == "reliable";
  }
  if (!r.entries.empty()) r.fraction = static_cast<double>(reliable) / static_cast<double>(r.entries.size());
  return r;
}

}  // namespace dust
