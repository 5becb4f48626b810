#include "dust/metrics.hpp"

#include <algorithm>
#include <boost/math/special_functions/beta.hpp>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace dust {
namespace {

constexpr double kFar = 1e30;

// 1-D squared distance transform of f (lower envelope of parabolas).
void dt1d(const double* f, std::size_t n, std::size_t stride, double* out, std::vector<std::size_t>& v,
          std::vector<double>& z) {
  v.assign(n, 0);
  z.assign(n + 1, 0);
  std::size_t k = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  auto fq = [&](std::size_t q) { return f[q * stride]; };
  auto meet = [&](std::size_t q, std::size_t p) {
    const double qq = static_cast<double>(q), pp = static_cast<double>(p);
    return ((fq(q) + qq * qq) - (fq(p) + pp * pp)) / (2 * qq - 2 * pp);
  };
  for (std::size_t q = 1; q < n; ++q) {
    double s = meet(q, v[k]);
    while (s <= z[k]) s = meet(q, v[--k]);  // z[0] = -inf stops the walk
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[k + 1] < static_cast<double>(q)) ++k;
    const double d = static_cast<double>(q) - static_cast<double>(v[k]);
    out[q * stride] = std::min(kFar, d * d + fq(v[k]));
  }
}

void require_same_shape(const char* op, const BinaryMask& a, const BinaryMask& b) {
  if (a.height != b.height || a.width != b.width || a.on.size() != a.height * a.width ||
      b.on.size() != b.height * b.width) {
    throw std::invalid_argument(std::string(op) + ": mask shapes differ (" +
                                std::to_string(a.height) + "x" + std::to_string(a.width) + " vs " +
                                std::to_string(b.height) + "x" + std::to_string(b.width) + ")");
  }
}

// Distances from each boundary pixel of `from` to the nearest boundary pixel of `to`.
std::vector<double> directed(const std::vector<std::uint8_t>& from, const std::vector<double>& to_dt) {
  std::vector<double> d;
  for (std::size_t i = 0; i < from.size(); ++i) {
    if (from[i]) d.push_back(std::sqrt(to_dt[i]));
  }
  return d;
}

}  // namespace

BinaryMask BinaryMask::of_class(const Mask8& labels, std::uint8_t cls) {
  BinaryMask m{labels.height, labels.width, std::vector<std::uint8_t>(labels.labels.size())};
  for (std::size_t i = 0; i < m.on.size(); ++i) m.on[i] = labels.labels[i] == cls;
  return m;
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(on.begin(), on.end(), std::uint8_t{1}));
}

std::vector<std::uint8_t> boundary(const BinaryMask& m) {
  const std::size_t H = m.height, W = m.width;
  std::vector<std::uint8_t> b(H * W, 0);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      if (!m.on[y * W + x]) continue;
      const bool edge = y == 0 || x == 0 || y + 1 == H || x + 1 == W;
      b[y * W + x] = edge || !m.on[(y - 1) * W + x] || !m.on[(y + 1) * W + x] ||
                     !m.on[y * W + x - 1] || !m.on[y * W + x + 1];
    }
  }
  return b;
}

Overlap overlap_metrics(const BinaryMask& pred, const BinaryMask& gt) {
  require_same_shape("overlap_metrics", pred, gt);
  std::size_t inter = 0, p = 0, g = 0;
  for (std::size_t i = 0; i < pred.on.size(); ++i) {
    p += pred.on[i];
    g += gt.on[i];
    inter += pred.on[i] & gt.on[i];
  }
  if (p + g == 0) return {1.0, 1.0};
  const double I = static_cast<double>(inter);
  return {2 * I / static_cast<double>(p + g), I / static_cast<double>(p + g - inter)};
}

std::vector<double> squared_distance_transform(const std::vector<std::uint8_t>& seeds,
                                               std::size_t height, std::size_t width) {
  std::vector<double> f(height * width), tmp(height * width);
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = seeds[i] ? 0.0 : kFar;
  std::vector<std::size_t> v;
  std::vector<double> z;
  for (std::size_t x = 0; x < width; ++x) dt1d(f.data() + x, height, width, tmp.data() + x, v, z);
  for (std::size_t y = 0; y < height; ++y) {
    dt1d(tmp.data() + y * width, width, 1, f.data() + y * width, v, z);
  }
  return f;
}

double percentile_nearest_rank(std::vector<double> values, int q) {
  if (values.empty()) throw std::invalid_argument("percentile of an empty set");
  if (q <= 0 || q > 100) throw std::invalid_argument("percentile must be in (0, 100]");
  const std::size_t n = values.size();
  const std::size_t rank = (static_cast<std::size_t>(q) * n + 99) / 100;  // ceil(q n / 100)
  std::nth_element(values.begin(), values.begin() + static_cast<long>(rank - 1), values.end());
  return values[rank - 1];
}

SurfaceDistances surface_distances(const BinaryMask& pred, const BinaryMask& gt) {
  require_same_shape("surface_distances", pred, gt);
  const auto bp = boundary(pred), bg = boundary(gt);
  const bool ep = std::none_of(bp.begin(), bp.end(), [](auto v) { return v; });
  const bool eg = std::none_of(bg.begin(), bg.end(), [](auto v) { return v; });
  if (ep && eg) return {0, 0, false};
  if (ep || eg) {
    const double diag = std::hypot(static_cast<double>(pred.height), static_cast<double>(pred.width));
    return {diag, diag, true};
  }
  const auto dpg = directed(bp, squared_distance_transform(bg, gt.height, gt.width));
  const auto dgp = directed(bg, squared_distance_transform(bp, pred.height, pred.width));
  double spg = 0, sgp = 0;
  for (double d : dpg) spg += d;
  for (double d : dgp) sgp += d;
  SurfaceDistances out;
  out.asd = (spg + sgp) / static_cast<double>(dpg.size() + dgp.size());
  out.hd95 = std::max(percentile_nearest_rank(dpg, 95), percentile_nearest_rank(dgp, 95));
  return out;
}

CaseMetrics case_metrics(const std::string& id, const Mask8& pred, const Mask8& gt,
                         std::size_t n_classes) {
  if (n_classes < 2) throw std::invalid_argument("case_metrics: need at least 2 classes");
  CaseMetrics c;
  c.id = id;
  for (std::size_t k = 1; k < n_classes; ++k) {
    const auto p = BinaryMask::of_class(pred, static_cast<std::uint8_t>(k));
    const auto g = BinaryMask::of_class(gt, static_cast<std::uint8_t>(k));
    const Overlap o = overlap_metrics(p, g);
    const SurfaceDistances s = surface_distances(p, g);
    c.per_class.push_back({o.dice, o.jaccard, s.hd95, s.asd, s.undefined});
    c.undefined += s.undefined;
  }
  const double n = static_cast<double>(c.per_class.size());
  for (const auto& m : c.per_class) {
    c.dice += m.dice / n;
    c.jaccard += m.jaccard / n;
    c.hd95 += m.hd95 / n;
    c.asd += m.asd / n;
  }
  return c;
}

MeanStd mean_std(const std::vector<double>& v) {
  MeanStd r;
  if (v.empty()) return r;
  for (double x : v) r.mean += x;
  r.mean /= static_cast<double>(v.size());
  if (v.size() < 2) return r;
  double ss = 0;
  for (double x : v) ss += (x - r.mean) * (x - r.mean);
  r.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  return r;
}

std::vector<double> MetricsReport::per_case_dice() const {
  std::vector<double> out;
  for (const auto& c : cases) out.push_back(c.dice);
  return out;
}

MetricsReport summarize(std::vector<CaseMetrics> cases) {
  std::sort(cases.begin(), cases.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  MetricsReport r;
  std::vector<double> d, j, h, a;
  for (const auto& c : cases) {
    d.push_back(c.dice);
    j.push_back(c.jaccard);
    h.push_back(c.hd95);
    a.push_back(c.asd);
    r.undefined_count += c.undefined;
  }
  r.aggregate = {mean_std(d), mean_std(j), mean_std(h), mean_std(a)};
  r.cases = std::move(cases);
  return r;
}

TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("paired_t_test: " + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()) + " scores");
  }
  if (a.size() < 3) throw std::invalid_argument("paired_t_test: need at least 3 pairs");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  TTestResult r;
  r.df = d.size() - 1;
  const MeanStd ms = mean_std(d);
  if (std::all_of(d.begin(), d.end(), [](double x) { return x == 0; })) return r;
  if (ms.std == 0) {
    r.t = std::copysign(std::numeric_limits<double>::infinity(), ms.mean);
    r.p = 0;
    r.degenerate = true;
    return r;
  }
  const double n = static_cast<double>(d.size());
  r.t = ms.mean / (ms.std / std::sqrt(n));
  const double nu = static_cast<double>(r.df);
  // Two-tailed p = I_{nu/(nu+t^2)}(nu/2, 1/2).
  r.p = boost::math::ibeta(nu / 2, 0.5, nu / (nu + r.t * r.t));
  return r;
}

}  // namespace dust
