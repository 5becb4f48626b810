#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "dust/ranking.hpp"

using namespace dust;
namespace fs = std::filesystem;

namespace {

Tensor map_of(std::vector<float> v, Shape shape) { return Tensor(std::move(shape), std::move(v)); }

// Eq. written out as nested loops over (checkpoint, class, pixel).
double scalar_uncertainty(const std::vector<std::vector<double>>& maps) {
  const std::size_t K = maps.size(), n = maps[0].size();
  double total = 0;
  for (std::size_t i = 0; i + 1 < K; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < n; ++j) s += std::pow(maps[i][j] - maps[K - 1][j], 2);
    total += s / n;
  }
  return total / (K - 1);
}

}  // namespace

TEST_CASE("sample uncertainty examples") {
  const Shape s{1, 2, 1, 1};
  auto p1 = map_of({0.6f, 0.4f}, s), p2 = map_of({0.5f, 0.5f}, s), p3 = map_of({0.5f, 0.5f}, s);
  CHECK(std::abs(sample_uncertainty({p1, p2, p3}) - 0.005) < 1e-8);
  CHECK(sample_uncertainty({p2, p3, p2}) == 0);
  CHECK_THROWS_AS(sample_uncertainty({p1}), std::invalid_argument);
  CHECK_THROWS_AS(sample_uncertainty({}), std::invalid_argument);
  CHECK_THROWS_AS(sample_uncertainty({p1, map_of({1, 0, 0}, {1, 3, 1, 1})}), ShapeError);
}

TEST_CASE("sample uncertainty matches a scalar loop") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  for (int t = 0; t < 50; ++t) {
    const std::size_t K = 2 + rng() % 5, C = 2 + rng() % 3, H = 1 + rng() % 5, W = 1 + rng() % 5;
    std::vector<Tensor> maps;
    std::vector<std::vector<double>> ref;
    for (std::size_t k = 0; k < K; ++k) {
      std::vector<float> v(C * H * W);
      for (auto& x : v) x = u(rng);
      ref.emplace_back(v.begin(), v.end());
      maps.push_back(map_of(v, {1, C, H, W}));
    }
    CHECK(std::abs(sample_uncertainty(maps) - scalar_uncertainty(ref)) < 1e-6);
  }
}

TEST_CASE("sample uncertainty scales quadratically and ignores pixel order") {
  const Shape s{1, 2, 2, 2};
  std::vector<float> base = {0.5f, 0.5f, 0.5f, 0.5f, 0.5f, 0.5f, 0.5f, 0.5f};
  std::vector<float> d1 = {0.1f, -0.2f, 0.05f, 0.0f, -0.1f, 0.2f, -0.05f, 0.0f};
  std::vector<float> d2 = {0.0f, 0.1f, 0.1f, -0.1f, 0.0f, -0.1f, -0.1f, 0.1f};
  auto scaled = [&](double c) {
    std::vector<float> a(8), b(8);
    for (int i = 0; i < 8; ++i) {
      a[i] = static_cast<float>(base[i] + c * d1[i]);
      b[i] = static_cast<float>(base[i] + c * d2[i]);
    }
    return sample_uncertainty({map_of(a, s), map_of(b, s), map_of(base, s)});
  };
  const double u1 = scaled(0.25);  // multiples of 2^-k keep the maps exact in float
  CHECK(u1 > 0);
  CHECK(scaled(0.5) == doctest::Approx(4 * u1).epsilon(1e-6));
  CHECK(scaled(1.0) == doctest::Approx(16 * u1).epsilon(1e-6));

  // Same pixel permutation applied to every map.
  const int perm[4] = {2, 0, 3, 1};
  auto permute = [&](const std::vector<float>& v) {
    std::vector<float> out(8);
    for (int c = 0; c < 2; ++c)
      for (int p = 0; p < 4; ++p) out[c * 4 + p] = v[c * 4 + perm[p]];
    return map_of(out, s);
  };
  std::vector<float> a(8), b(8);
  for (int i = 0; i < 8; ++i) {
    a[i] = base[i] + d1[i];
    b[i] = base[i] + d2[i];
  }
  CHECK(sample_uncertainty({permute(a), permute(b), permute(base)}) ==
        doctest::Approx(sample_uncertainty({map_of(a, s), map_of(b, s), map_of(base, s)})).epsilon(1e-12));
}

TEST_CASE("rank and partition examples") {
  auto r = rank_and_partition({{"a", 0.3}, {"b", 0.1}, {"c", 0.4}, {"d", 0.2}}, 0.5);
  REQUIRE(r.entries.size() == 4);
  CHECK(r.entries[0].id == "b");
  CHECK(r.entries[1].id == "d");
  CHECK(r.entries[2].id == "a");
  CHECK(r.entries[3].id == "c");
  CHECK(r.entries[3].rank == 4);
  CHECK(r.reliable_ids() == std::vector<std::string>{"b", "d"});
  CHECK(r.unreliable_ids() == std::vector<std::string>{"a", "c"});

  r = rank_and_partition({{"z", 1}, {"x", 1}, {"y", 1}, {"w", 1}}, 0.5);
  CHECK(r.reliable_ids() == std::vector<std::string>{"w", "x"});

  r = rank_and_partition({{"a", 5}, {"b", 4}, {"c", 3}, {"d", 2}, {"e", 1}}, 0.5);
  CHECK(r.reliable_ids().size() == 3);

  CHECK_THROWS_AS(rank_and_partition({}, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(rank_and_partition({{"a", 1}, {"a", 2}}, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(rank_and_partition({{"a", 1}}, 1.0), std::invalid_argument);
}

TEST_CASE("ranking is a partition of the input ids") {
  std::mt19937_64 rng(3);
  std::vector<std::pair<std::string, double>> in;
  for (int i = 0; i < 37; ++i) in.emplace_back("s" + std::to_string(i), static_cast<double>(rng() % 7));
  const auto r = rank_and_partition(in, 0.3);
  CHECK(r.reliable_ids().size() == 12);  // ceil(11.1)
  std::vector<std::string> got;
  for (std::size_t i = 0; i < r.entries.size(); ++i) {
    got.push_back(r.entries[i].id);
    if (i) {
      CHECK(r.entries[i - 1].uncertainty <= r.entries[i].uncertainty);
      if (r.entries[i - 1].uncertainty == r.entries[i].uncertainty) CHECK(r.entries[i - 1].id < r.entries[i].id);
    }
  }
  std::sort(got.begin(), got.end());
  std::vector<std::string> want;
  for (const auto& [id, u] : in) want.push_back(id);
  std::sort(want.begin(), want.end());
  CHECK(got == want);
}

TEST_CASE("ranking csv format and round trip") {
  const auto r = rank_and_partition({{"a", 1.0 / 3}, {"b", 1e-12}, {"c", 2.5}}, 0.5);
  const auto path = fs::temp_directory_path() / "dust_test_ranking.csv";
  write_ranking_csv(r, path);
  std::ifstream in(path);
  std::string all{std::istreambuf_iterator<char>(in), {}};
  CHECK(all ==
        "sample_id,uncertainty,rank,partition\n"
        "b,1e-12,1,reliable\n"
        "a,0.333333333,2,reliable\n"
        "c,2.5,3,unreliable\n");
  const auto back = read_ranking_csv(path);
  REQUIRE(back.entries.size() == 3);
  CHECK(back.entries[1].id == "a");
  CHECK(back.entries[1].rank == 2);
  CHECK(back.entries[2].reliable == false);
  fs::remove(path);
}

TEST_CASE("checkpoint-set scoring is repeatable") {
  CheckpointSet set;
  for (std::uint64_t s = 1; s <= 3; ++s) set.models.push_back(init_params(2, 4, 3, s));
  std::mt19937_64 rng(1);
  std::normal_distribution<float> nd;
  std::vector<float> v(16 * 16);
  for (auto& x : v) x = nd(rng);
  const Tensor image({1, 1, 16, 16}, v);
  const double u = sample_uncertainty(set, image);
  CHECK(u > 0);
  CHECK(sample_uncertainty(set, image) == u);
  CheckpointSet one;
  one.models.push_back(set.models[0]);
  CHECK_THROWS_AS(sample_uncertainty(one, image), std::invalid_argument);
}
