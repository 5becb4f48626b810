#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dust/pgm.hpp"

namespace dust {

struct BinaryMask {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> on;  // 0/1, row-major

  static BinaryMask of_class(const Mask8& labels, std::uint8_t cls);
  std::size_t count() const;
};

/// Foreground pixels with a background 4-neighbour or lying on the image edge.
std::vector<std::uint8_t> boundary(const BinaryMask& m);

struct Overlap {
  double dice = 1, jaccard = 1;
};

/// Both empty: (1, 1).
Overlap overlap_metrics(const BinaryMask& pred, const BinaryMask& gt);

struct SurfaceDistances {
  double hd95 = 0, asd = 0;
  bool undefined = false;  // exactly one boundary empty; values hold the image diagonal
};

/// Symmetric boundary distances via an exact Euclidean distance transform.
/// hd95 uses the nearest-rank percentile with ceiling; both masks empty gives
/// (0, 0) and is not flagged.
SurfaceDistances surface_distances(const BinaryMask& pred, const BinaryMask& gt);

/// k-th smallest with k = ceil(q/100 * n), 1-based; q in (0, 100].
double percentile_nearest_rank(std::vector<double> values, int q);

/// Squared Euclidean distance from every pixel to the nearest seed pixel
/// (1e30 everywhere when there is no seed).
std::vector<double> squared_distance_transform(const std::vector<std::uint8_t>& seeds,
                                               std::size_t height, std::size_t width);

struct ClassMetrics {
  double dice = 0, jaccard = 0, hd95 = 0, asd = 0;
  bool undefined = false;
};

struct CaseMetrics {
  std::string id;
  std::vector<ClassMetrics> per_class;  // foreground classes 1..n-1
  double dice = 0, jaccard = 0, hd95 = 0, asd = 0;  // means over per_class
  std::size_t undefined = 0;
};

/// Compares two label maps class by class over the foreground classes.
CaseMetrics case_metrics(const std::string& id, const Mask8& pred, const Mask8& gt,
                         std::size_t n_classes);

struct MeanStd {
  double mean = 0, std = 0;  // sample std (N-1); 0 when N < 2
};

MeanStd mean_std(const std::vector<double>& v);

struct Aggregate {
  MeanStd dice, jaccard, hd95, asd;
};

struct MetricsReport {
  std::vector<CaseMetrics> cases;  // ordered by id
  Aggregate aggregate;
  std::size_t undefined_count = 0;

  std::vector<double> per_case_dice() const;
};

MetricsReport summarize(std::vector<CaseMetrics> cases);

struct TTestResult {
  double t = 0, p = 1;
  std::size_t df = 0;
  bool degenerate = false;  // zero spread with non-zero mean difference: p reported as 0
};

/// Two-tailed paired t-test on a - b. Throws std::invalid_argument on length
/// mismatch or fewer than 3 pairs. All differences zero gives p = 1.
TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace dust
