#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "dust/gradcheck.hpp"
#include "dust/losses.hpp"
#include "dust/ops.hpp"

using namespace dust;

namespace {

// [B,n,H,W] tensor from per-pixel class vectors listed pixel-major.
Tensor64 from_pixels(std::size_t b, std::size_t n, std::size_t h, std::size_t w,
                     const std::vector<double>& pixel_major) {
  const std::size_t P = h * w;
  std::vector<double> v(b * n * P);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t p = 0; p < P; ++p)
      for (std::size_t c = 0; c < n; ++c) v[(i * n + c) * P + p] = pixel_major[(i * P + p) * n + c];
  return Tensor64({b, n, h, w}, std::move(v));
}

Tensor64 random_prob(std::mt19937_64& rng, std::size_t b, std::size_t n, std::size_t h,
                     std::size_t w) {
  std::normal_distribution<double> d(0, 1.5);
  std::vector<double> v(b * n * h * w);
  for (auto& x : v) x = d(rng);
  NoGradGuard g;
  return softmax_channels(Tensor64({b, n, h, w}, std::move(v)));
}

LabelBatch random_labels(std::mt19937_64& rng, std::size_t b, std::size_t h, std::size_t w,
                         std::size_t n) {
  LabelBatch l(b, h, w);
  for (auto& v : l.values) v = static_cast<std::uint8_t>(rng() % n);
  return l;
}

double kl_scalar(const std::vector<double>& p, const std::vector<double>& q) {
  double s = 0;
  for (std::size_t c = 0; c < p.size(); ++c) s += p[c] * (std::log(p[c] + 1e-8) - std::log(q[c] + 1e-8));
  return std::max(0.0, s);
}

}  // namespace

TEST_CASE("kl examples") {
  auto p = from_pixels(1, 2, 1, 1, {0.8, 0.2});
  auto q = from_pixels(1, 2, 1, 1, {0.5, 0.5});
  const double pq = kl_pixel_uncertainty(BasicDualPrediction<double>{p, q}).item();
  const double qp = kl_pixel_uncertainty(BasicDualPrediction<double>{q, p}).item();
  CHECK(std::abs(pq - (0.8 * std::log(1.6) + 0.2 * std::log(0.4))) < 1e-7);
  CHECK(std::abs(pq - 0.19274) < 1e-4);
  CHECK(std::abs(qp - 0.22314) < 1e-4);
  CHECK(pq != qp);
  CHECK(kl_pixel_uncertainty(BasicDualPrediction<double>{p, p}).item() == 0.0);
}

TEST_CASE("kl is non-negative and zero on identical maps") {
  std::mt19937_64 rng(11);
  auto p = random_prob(rng, 2, 4, 5, 5);
  auto q = random_prob(rng, 2, 4, 5, 5);
  const auto pq = kl_pixel_uncertainty(BasicDualPrediction<double>{p, q});
  const auto pp = kl_pixel_uncertainty(BasicDualPrediction<double>{p, p});
  for (double v : pq.data()) CHECK(v >= 0);
  for (double v : pp.data()) CHECK(v == 0);
  CHECK_THROWS_AS(kl_pixel_uncertainty(BasicDualPrediction<double>{p, random_prob(rng, 2, 3, 5, 5)}),
                  ShapeError);
}

TEST_CASE("kl matches scalar loop") {
  std::mt19937_64 rng(5);
  auto p = random_prob(rng, 2, 3, 4, 3);
  auto q = random_prob(rng, 2, 3, 4, 3);
  auto d = kl_pixel_uncertainty(BasicDualPrediction<double>{p, q});
  auto pv = p.data(), qv = q.data();
  const std::size_t P = 12;
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < P; ++i) {
      std::vector<double> a(3), c(3);
      for (std::size_t k = 0; k < 3; ++k) {
        a[k] = pv[(b * 3 + k) * P + i];
        c[k] = qv[(b * 3 + k) * P + i];
      }
      CHECK(std::abs(d.data()[b * P + i] - kl_scalar(a, c)) < 1e-12);
    }
}

TEST_CASE("cross entropy examples") {
  LabelBatch t(1, 1, 2);
  t.values = {2, 0};
  auto uniform = from_pixels(1, 4, 1, 2, std::vector<double>(8, 0.25));
  auto ce = cross_entropy(uniform, t);
  CHECK(std::abs(ce.value() - std::log(4.0)) < 1e-7);
  CHECK(std::abs(ce.value() - 1.38629) < 1e-5);
  for (double v : ce.per_pixel.data()) CHECK(std::abs(v - std::log(4.0)) < 1e-7);

  auto sure = from_pixels(1, 4, 1, 2, {0, 0, 1, 0, 1, 0, 0, 0});
  CHECK(std::abs(cross_entropy(sure, t).value()) < 1e-7);

  LabelBatch bad(1, 1, 2);
  bad.values = {4, 0};
  CHECK_THROWS_AS(cross_entropy(uniform, bad), std::invalid_argument);
  CHECK_THROWS_AS(cross_entropy(uniform, LabelBatch(1, 2, 2)), ShapeError);
}

TEST_CASE("cross entropy scalar is the mean of the per-pixel map") {
  std::mt19937_64 rng(2);
  auto p = random_prob(rng, 3, 4, 5, 6);
  auto ce = cross_entropy(p, random_labels(rng, 3, 5, 6, 4));
  auto v = ce.per_pixel.data();
  CHECK(std::abs(ce.value() - std::accumulate(v.begin(), v.end(), 0.0) / v.size()) < 1e-12);
}

TEST_CASE("dice examples") {
  LabelBatch t(1, 2, 2);
  t.values = {1, 0, 1, 0};
  auto exact = from_pixels(1, 2, 2, 2, {0, 1, 1, 0, 0, 1, 1, 0});
  CHECK(dice_loss(exact, t).value() < 1e-4);

  auto half = from_pixels(1, 2, 2, 2, std::vector<double>(8, 0.5));
  const double s = 1e-5;
  const double class1 = (2 * 1.0 + s) / (2 + 2 + s);
  CHECK(std::abs(class1 - 0.5) < 1e-5);
  CHECK(std::abs(dice_loss(half, t).value() - (1 - class1)) < 1e-12);

  LabelBatch all1(1, 2, 2);
  all1.values = {1, 1, 1, 1};
  auto wrong = from_pixels(1, 2, 2, 2, {1, 0, 1, 0, 1, 0, 1, 0});
  // class 1 has Dice s/(4+s) ~ 0; class 0 has Dice s/(4+s) too.
  CHECK(dice_loss(wrong, all1).value() > 1 - 1e-5);

  LossOptions fg;
  fg.dice_include_background = false;
  CHECK(std::abs(dice_loss(half, t, fg).value() - (1 - class1)) < 1e-12);
}

TEST_CASE("supervised loss") {
  LabelBatch t(1, 2, 2);
  t.values = {1, 0, 1, 0};
  auto exact = from_pixels(1, 2, 2, 2, {0, 1, 1, 0, 0, 1, 1, 0});
  CHECK(supervised_loss(BasicDualPrediction<double>{exact, exact}, t).value() < 1e-4);

  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    auto m = random_prob(rng, 2, 4, 6, 6);
    auto a = random_prob(rng, 2, 4, 6, 6);
    auto y = random_labels(rng, 2, 6, 6, 4);
    const double both = supervised_loss(BasicDualPrediction<double>{m, a}, y).value();
    const double single =
        (supervised_loss_single(m, y).value() + supervised_loss_single(a, y).value()) / 2;
    CHECK(std::abs(both - single) < 1e-6);
    const double by_parts = 0.5 * (dice_loss(m, y).value() + dice_loss(a, y).value()) / 2 +
                            0.5 * (cross_entropy(m, y).value() + cross_entropy(a, y).value()) / 2;
    CHECK(std::abs(both - by_parts) < 1e-12);
  }
}

TEST_CASE("supervised loss is invariant to batch order") {
  std::mt19937_64 rng(4);
  auto m = random_prob(rng, 3, 4, 4, 4);
  auto a = random_prob(rng, 3, 4, 4, 4);
  auto y = random_labels(rng, 3, 4, 4, 4);
  const std::size_t per = 4 * 16;
  const std::vector<std::size_t> perm = {2, 0, 1};
  auto permute = [&](const Tensor64& t) {
    std::vector<double> v(t.numel());
    for (std::size_t i = 0; i < 3; ++i)
      std::copy_n(t.data().begin() + perm[i] * per, per, v.begin() + i * per);
    return Tensor64(t.shape(), std::move(v));
  };
  LabelBatch yp(3, 4, 4);
  for (std::size_t i = 0; i < 3; ++i)
    std::copy_n(y.values.begin() + perm[i] * 16, 16, yp.values.begin() + i * 16);
  const double base = supervised_loss(BasicDualPrediction<double>{m, a}, y).value();
  const double moved = supervised_loss(BasicDualPrediction<double>{permute(m), permute(a)}, yp).value();
  CHECK(std::abs(base - moved) < 1e-12);
}

TEST_CASE("rectified loss reduces to cross entropy on identical maps") {
  std::mt19937_64 rng(9);
  auto p = random_prob(rng, 2, 4, 5, 5);
  auto y = random_labels(rng, 2, 5, 5, 4);
  CHECK(rectified_unsup_loss(BasicDualPrediction<double>{p, p}, y).value() ==
        cross_entropy(p, y).value());
  CHECK(plain_unsup_loss(BasicDualPrediction<double>{p, random_prob(rng, 2, 4, 5, 5)}, y).value() ==
        cross_entropy(p, y).value());
}

TEST_CASE("rectified loss at ce = 1, D = ln 2") {
  // Two classes, target 0, main p0 = e^-1. Find q0 with KL(p||q) = ln 2 by bisection.
  const double p0 = std::exp(-1.0);
  const std::vector<double> p = {p0, 1 - p0};
  double lo = 1e-6, hi = p0;  // KL decreases in q0 on (0, p0]
  for (int i = 0; i < 200; ++i) {
    const double mid = (lo + hi) / 2;
    (kl_scalar(p, {mid, 1 - mid}) > std::log(2.0) ? lo : hi) = mid;
  }
  const double q0 = (lo + hi) / 2;
  LabelBatch t(1, 1, 1);
  t.values = {0};
  auto main = from_pixels(1, 2, 1, 1, p);
  auto aux = from_pixels(1, 2, 1, 1, {q0, 1 - q0});
  const double got = rectified_unsup_loss(BasicDualPrediction<double>{main, aux}, t).value();
  CHECK(std::abs(got - 1.19315) < 1e-5);
}

TEST_CASE("rectified loss matches scalar loop") {
  std::mt19937_64 rng(12);
  auto p = random_prob(rng, 2, 3, 3, 4);
  auto q = random_prob(rng, 2, 3, 3, 4);
  auto y = random_labels(rng, 2, 3, 4, 3);
  const std::size_t P = 12;
  double total = 0;
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < P; ++i) {
      std::vector<double> a(3), c(3);
      for (std::size_t k = 0; k < 3; ++k) {
        a[k] = p.data()[(b * 3 + k) * P + i];
        c[k] = q.data()[(b * 3 + k) * P + i];
      }
      const double d = kl_scalar(a, c);
      const double ce = -std::log(a[y.values[b * P + i]] + 1e-8);
      total += std::exp(-d) * ce + d;
    }
  auto got = rectified_unsup_loss(BasicDualPrediction<double>{p, q}, y);
  CHECK(std::abs(got.value() - total / (2 * P)) < 1e-12);
}

TEST_CASE("rectification weight is in (0,1] and decreasing") {
  double prev = 2;
  for (int i = 0; i <= 100; ++i) {
    Tensor64 d({1}, std::vector<double>{0.05 * i});
    const double w = exp(affine(d, -1.0, 0.0)).item();
    CHECK(w > 0);
    CHECK(w <= 1);
    CHECK(w < prev);
    prev = w;
  }
}

TEST_CASE("total loss") {
  auto v = [](double x) { return BasicLossValue<double>{Tensor64({1}, std::vector<double>{x}), {}}; };
  using Opt = std::optional<BasicLossValue<double>>;
  CHECK(std::abs(total_loss(v(0.3), Opt(v(0.5)), 1.0).value() - 0.8) < 1e-12);
  CHECK(std::abs(total_loss(v(0.3), Opt(v(0.5)), 0.5).value() - 0.55) < 1e-12);
  CHECK(total_loss(v(0.3), Opt(v(0.5)), 0.0).value() == 0.3);
  CHECK(total_loss(v(0.3), Opt(), 1.0).value() == 0.3);
  CHECK_THROWS_AS(total_loss(v(std::nan("")), Opt(v(0.5)), 1.0), NonFiniteLoss);
  CHECK_THROWS_AS(total_loss(v(0.3), Opt(v(INFINITY)), 1.0), NonFiniteLoss);
}

TEST_CASE("loss gradients reach both decoders") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> d;
  std::vector<double> a(2 * 3 * 4), b(2 * 3 * 4);
  for (auto& x : a) x = d(rng);
  for (auto& x : b) x = d(rng);
  Tensor64 la({2, 3, 2, 2}, a), lb({2, 3, 2, 2}, b);
  la.set_requires_grad(true);
  lb.set_requires_grad(true);
  auto y = random_labels(rng, 2, 2, 2, 3);
  rectified_unsup_loss(BasicDualPrediction<double>{softmax_channels(la), softmax_channels(lb)}, y)
      .scalar.backward();
  auto nonzero = [](const Tensor64& t) {
    for (double g : t.grad()) if (g != 0) return true;
    return false;
  };
  CHECK(nonzero(la));
  CHECK(nonzero(lb));
}

TEST_CASE("network + loss gradients match central differences") {
  // Analytic in double; differences taken in long double so that the
  // reference is not limited by double roundoff on tiny coordinates.
  auto r = network_loss_grad_check(1, 2, 4, true);
  CHECK(r.coordinates == expected_param_count(UNetConfig{2, 4, 3}));
  CHECK_MESSAGE(r.max_relative_error < 1e-5, r.worst);
}
