#include "dust/ablation.hpp"

#include <cstdio>
#include <sstream>

namespace dust {

const ArmRun* AblationSummary::find(AblationMode arm, std::uint64_t seed) const {
  for (const auto& r : runs) {
    if (r.arm == arm && r.seed == seed) return &r;
  }
  return nullptr;
}

AblationSummary run_ablation(const ExperimentConfig& base, const Dataset& data,
                             const std::vector<std::uint64_t>& seeds, const std::filesystem::path& out,
                             const ProgressLog& log) {
  std::vector<ArmRun> runs;
  for (auto seed : seeds) {
    ExperimentConfig cfg = base;
    cfg.seed = seed;
    std::optional<TeacherResult> teacher;
    std::string teacher_error;
    try {
      teacher = pretrain_for(cfg, data, {}, log);
    } catch (const std::exception& e) {
      teacher_error = e.what();
    }
    for (auto arm : kArms) {
      ArmRun run;
      run.arm = arm;
      run.seed = seed;
      if (!teacher) {
        run.error = "pre-training failed: " + teacher_error;
      } else {
        cfg.ablation_mode = arm;
        try {
          auto r = run_pipeline(cfg, data, out / ("seed_" + std::to_string(seed)) / to_string(arm), &*teacher, log);
          run.report = std::move(r.evaluation.report);
          run.ranking = std::move(r.ranking);
        } catch (const std::exception& e) {
          run.error = e.what();
        }
      }
      if (run.error && log) log(to_string(arm) + " seed " + std::to_string(seed) + " failed: " + *run.error);
      runs.push_back(std::move(run));
    }
  }
  return summarize_ablation(std::move(runs), seeds);
}

AblationSummary summarize_ablation(std::vector<ArmRun> runs, std::vector<std::uint64_t> seeds) {
  AblationSummary s;
  s.seeds = std::move(seeds);
  s.runs = std::move(runs);
  for (auto arm : kArms) {
    ArmStats st;
    st.arm = arm;
    std::vector<double> d, j, h, a;
    for (auto seed : s.seeds) {
      const ArmRun* r = s.find(arm, seed);
      if (!r || r->error) continue;
      const auto& g = r->report.aggregate;
      d.push_back(g.dice.mean);
      j.push_back(g.jaccard.mean);
      h.push_back(g.hd95.mean);
      a.push_back(g.asd.mean);
    }
    st.seeds = d.size();
    st.dice = mean_std(d);
    st.jaccard = mean_std(j);
    st.hd95 = mean_std(h);
    st.asd = mean_std(a);
    s.arms.push_back(st);
  }
  for (auto other : kArms) {
    if (other == AblationMode::Full) continue;
    PValue pv;
    pv.other = other;
    std::vector<double> full, rest;
    bool complete = true;
    for (auto seed : s.seeds) {
      const ArmRun* f = s.find(AblationMode::Full, seed);
      const ArmRun* o = s.find(other, seed);
      if (!f || !o || f->error || o->error) {
        complete = false;
        break;
      }
      const auto fd = f->report.per_case_dice(), od = o->report.per_case_dice();
      full.insert(full.end(), fd.begin(), fd.end());
      rest.insert(rest.end(), od.begin(), od.end());
    }
    if (complete && full.size() >= 3) pv.test = paired_t_test(full, rest);
    s.p_values.push_back(pv);
  }
  return s;
}

namespace {

std::string cell(const MeanStd& m, double scale, std::size_t n) {
  if (n == 0) return "missing";
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.2f±%.2f", m.mean * scale, m.std * scale);
  return buf;
}

// printf widths count bytes; pad by code points so "±" lines up.
std::string pad(const std::string& s, std::size_t width) {
  std::size_t cps = 0;
  for (unsigned char c : s) cps += (c & 0xc0) != 0x80;
  return s + std::string(width > cps ? width - cps : 1, ' ');
}

const char* row_label(AblationMode m) {
  switch (m) {
    case AblationMode::Supervised: return "U-net (supervised)";
    case AblationMode::St: return "Self-Training (st)";
    case AblationMode::StSample: return "ST+sample-level (st_sample)";
    case AblationMode::Full: return "ST+sample-pixel-level (full)";
  }
  return "?";
}

}  // namespace

std::string format_ablation_table(const AblationSummary& s) {
  std::ostringstream out;
  char line[256];
  out << pad("Method", 31) << pad("Dice(%)", 15) << pad("Jaccard(%)", 15) << pad("95HD(px)", 15) << "ASD(px)\n";
  for (const auto& a : s.arms) {
    out << pad(row_label(a.arm), 31) << pad(cell(a.dice, 100, a.seeds), 15)
        << pad(cell(a.jaccard, 100, a.seeds), 15) << pad(cell(a.hd95, 1, a.seeds), 15)
        << cell(a.asd, 1, a.seeds) << '\n';
  }
  out << "(mean±std over " << s.seeds.size() << " seed(s))\n\n";
  out << "Paired t-test on per-case Dice, full vs:\n";
  for (const auto& p : s.p_values) {
    if (!p.test) {
      std::snprintf(line, sizeof line, "  %-12s P = missing\n", to_string(p.other).c_str());
    } else {
      std::snprintf(line, sizeof line, "  %-12s P = %.4g (t = %.3f, df = %zu%s)\n", to_string(p.other).c_str(),
                    p.test->p, p.test->t, p.test->df, p.test->degenerate ? ", degenerate" : "");
    }
    out << line;
  }
  return out.str();
}

nlohmann::json ablation_json(const AblationSummary& s) {
  using nlohmann::json;
  json j;
  j["format_version"] = 1;
  j["seeds"] = s.seeds;
  json runs = json::array();
  for (const auto& r : s.runs) {
    json e{{"arm", to_string(r.arm)}, {"seed", r.seed}};
    if (r.error) {
      e["error"] = *r.error;
    } else {
      const auto& g = r.report.aggregate;
      e["dice"] = g.dice.mean;
      e["jaccard"] = g.jaccard.mean;
      e["hd95"] = g.hd95.mean;
      e["asd"] = g.asd.mean;
      e["undefined_count"] = r.report.undefined_count;
    }
    runs.push_back(e);
  }
  j["runs"] = runs;
  json arms = json::object();
  for (const auto& a : s.arms) {
    if (a.seeds == 0) {
      arms[to_string(a.arm)] = nullptr;
      continue;
    }
    arms[to_string(a.arm)] = {{"seeds", a.seeds},
                              {"dice_mean", a.dice.mean},       {"dice_std", a.dice.std},
                              {"jaccard_mean", a.jaccard.mean}, {"jaccard_std", a.jaccard.std},
                              {"hd95_mean", a.hd95.mean},       {"hd95_std", a.hd95.std},
                              {"asd_mean", a.asd.mean},         {"asd_std", a.asd.std}};
  }
  j["arms"] = arms;
  json pv = json::object();
  for (const auto& p : s.p_values) {
    if (!p.test) {
      pv["full_vs_" + to_string(p.other)] = nullptr;
    } else {
      pv["full_vs_" + to_string(p.other)] = {
          {"p", p.test->p}, {"t", p.test->t}, {"df", p.test->df}, {"degenerate", p.test->degenerate}};
    }
  }
  j["p_values"] = pv;
  return j;
}

}  // namespace dust
