#include "dust/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <stdexcept>

#include "dust/losses.hpp"
#include "dust/ops.hpp"
#include "dust/unet.hpp"

namespace dust {

namespace {

std::vector<double> check_weights(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> mag(0.5, 1.5);
  std::vector<double> w(n);
  for (auto& v : w) v = (rng() & 1 ? 1.0 : -1.0) * mag(rng);
  return w;
}

// Analytic gradients come from `fn` in double; the central differences are
// taken on `oracle`, which evaluates the same function in precision O.
template <typename O, typename Oracle>
GradCheckReport run_check(const GradCheckFn& fn, const Oracle& oracle, std::vector<Tensor64> inputs,
                          double step, std::uint64_t weight_seed) {
  for (auto& in : inputs) {
    in = in.detach();
    in.set_requires_grad(true);
  }
  Tensor64 out = fn(inputs);
  const auto w = check_weights(out.numel(), weight_seed);
  Tensor64 loss = sum_all(mul(out, Tensor64(out.shape(), w)));
  loss.backward();

  GradCheckReport report;
  NoGradGuard no_grad;
  std::vector<BasicTensor<O>> base;
  for (const auto& in : inputs) base.push_back(in.template cast<O>());
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto analytic = inputs[k].has_grad() ? std::vector<double>(inputs[k].grad().begin(),
                                                                     inputs[k].grad().end())
                                               : std::vector<double>(inputs[k].numel(), 0.0);
    for (std::size_t j = 0; j < inputs[k].numel(); ++j) {
      auto perturbed = [&](double delta) {
        auto xs = base;
        xs[k] = base[k].detach();
        xs[k].data_mut()[j] += static_cast<O>(delta);
        return oracle(xs);
      };
      const BasicTensor<O> up = perturbed(step);
      const BasicTensor<O> down = perturbed(-step);
      auto u = up.data();
      auto d = down.data();
      O diff = 0;
      for (std::size_t i = 0; i < w.size(); ++i) diff += static_cast<O>(w[i]) * (u[i] - d[i]);
      const double numeric = static_cast<double>(diff / static_cast<O>(2 * step));
      const double rel = std::abs(analytic[j] - numeric) / std::max(1e-8, std::abs(numeric));
      ++report.coordinates;
      if (report.worst.empty() || rel > report.max_relative_error) {
        report.max_relative_error = rel;
        report.worst = "input" + std::to_string(k) + "#" + std::to_string(j);
        report.worst_analytic = analytic[j];
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace

GradCheckReport check_gradients(const GradCheckFn& fn, std::vector<Tensor64> inputs, double step,
                                std::uint64_t weight_seed) {
  return run_check<double>(fn, fn, std::move(inputs), step, weight_seed);
}

namespace {

struct Case {
  std::vector<Tensor64> inputs;
  GradCheckFn fn;
};

Tensor64 random_tensor(std::mt19937_64& rng, Shape shape, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor64(std::move(shape), std::move(v));
}

// Values with |x| in [0.1, 1], random sign: keeps piecewise-linear ops off their kink.
Tensor64 away_from_zero(std::mt19937_64& rng, Shape shape) {
  std::uniform_real_distribution<double> mag(0.1, 1.0);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = (rng() & 1 ? 1.0 : -1.0) * mag(rng);
  return Tensor64(std::move(shape), std::move(v));
}

// Distinct values spaced 0.05 apart, shuffled, so pooling windows have no near-ties.
Tensor64 well_separated(std::mt19937_64& rng, Shape shape) {
  std::vector<double> v(shape_numel(shape));
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.05 * static_cast<double>(i);
  std::shuffle(v.begin(), v.end(), rng);
  return Tensor64(std::move(shape), std::move(v));
}

using CaseBuilder = Case (*)(std::mt19937_64&);

const std::map<std::string, CaseBuilder, std::less<>>& builders() {
  static const std::map<std::string, CaseBuilder, std::less<>> table{
      {"conv2d",
       [](std::mt19937_64& r) {
         return Case{{random_tensor(r, {1, 2, 5, 5}, -1, 1), random_tensor(r, {3, 2, 3, 3}, -1, 1),
                      random_tensor(r, {3}, -1, 1)},
                     [](const std::vector<Tensor64>& x) { return conv2d(x[0], x[1], x[2], 1); }};
       }},
      {"conv_transpose2d",
       [](std::mt19937_64& r) {
         return Case{{random_tensor(r, {2, 3, 3, 3}, -1, 1), random_tensor(r, {3, 2, 2, 2}, -1, 1),
                      random_tensor(r, {2}, -1, 1)},
                     [](const std::vector<Tensor64>& x) { return conv_transpose2d(x[0], x[1], x[2]); }};
       }},
      {"upsample_bilinear2x",
       [](std::mt19937_64& r) {
         return Case{{random_tensor(r, {2, 2, 3, 4}, -1, 1)},
                     [](const std::vector<Tensor64>& x) { return upsample_bilinear2x(x[0]); }};
       }},
      {"max_pool2x2",
       [](std::mt19937_64& r) {
         return Case{{well_separated(r, {2, 2, 4, 4})},
                     [](const std::vector<Tensor64>& x) { return max_pool2x2(x[0]); }};
       }},
      {"relu",
       [](std::mt19937_64& r) {
         return Case{{away_from_zero(r, {3, 4})},
                     [](const std::vector<Tensor64>& x) { return relu(x[0]); }};
       }},
      {"leaky_relu",
       [](std::mt19937_64& r) {
         return Case{{away_from_zero(r, {3, 4})},
                     [](const std::vector<Tensor64>& x) { return leaky_relu(x[0]); }};
       }},
      {"instance_norm",
       [](std::mt19937_64& r) {
         return Case{{random_tensor(r, {2, 3, 4, 4}, -1, 1), random_tensor(r, {3}, 0.5, 1.5),
                      random_tensor(r, {3}, -0.5, 0.5)},
                     [](const std::vector<Tensor64>& x) { return instance_norm(x[0], x[1], x[2]); }};
       }},
      {"add",
       [](std::mt19937_64& r) {
         return Case{{random_tensor(r, {2, 3, 4}, -1, 1), random_tensor(r, {2, 3, 4}, -1, 1)},
                     [](const std::vector<Tensor64>& x) { return add(x[0], x[1]); }};
       }},
      {"mul",
       [](std::mt19937_64& r) {
         return Case{{random_tensor(r, {2, 3, 4}, -1, 1), random_tensor(r, {2, 3, 4}, -1, 1)},
                     [](const std::vector<Tensor64>& x) { return mul(x[0], x[1]); }};
       }},
      {"linear_combination",
       [](std::mt19937_64& r) {
         return Case{{random_tensor(r, {2, 3, 4}, -1, 1), random_tensor(r, {2, 3, 4}, -1, 1),
                      random_tensor(r, {2, 3, 4}, -1, 1)},
                     [](const std::vector<Tensor64>& x) {
                       return linear_combination<double>(x, {0.7, -1.3, 2.0}, 0.25);
                     }};
       }},
      {"concat_channels",
       [](std::mt19937_64& r) {
         return Case{{random_tensor(r, {2, 2, 3, 3}, -1, 1), random_tensor(r, {2, 3, 3, 3}, -1, 1)},
                     [](const std::vector<Tensor64>& x) { return concat_channels<double>(x); }};
       }},
      {"softmax_channels",
       [](std::mt19937_64& r) {
         return Case{{random_tensor(r, {2, 4, 3, 3}, -2, 2)},
                     [](const std::vector<Tensor64>& x) { return softmax_channels(x[0]); }};
       }},
      {"log",
       [](std::mt19937_64& r) {
         return Case{{random_tensor(r, {3, 5}, 0.5, 2.0)},
                     [](const std::vector<Tensor64>& x) { return log(x[0]); }};
       }},
      {"exp",
       [](std::mt19937_64& r) {
         return Case{{random_tensor(r, {3, 5}, -1, 1)},
                     [](const std::vector<Tensor64>& x) { return exp(x[0]); }};
       }},
      {"sum",
       [](std::mt19937_64& r) {
         return Case{{random_tensor(r, {2, 3, 4}, -1, 1)},
                     [](const std::vector<Tensor64>& x) { return sum(x[0], {0, 2}); }};
       }},
      {"mean",
       [](std::mt19937_64& r) {
         return Case{{random_tensor(r, {2, 3, 4}, -1, 1)},
                     [](const std::vector<Tensor64>& x) { return mean(x[0], {1}); }};
       }},
      {"sum_all",
       [](std::mt19937_64& r) {
         return Case{{random_tensor(r, {2, 3, 4}, -1, 1)},
                     [](const std::vector<Tensor64>& x) { return sum_all(x[0]); }};
       }},
      {"mean_all",
       [](std::mt19937_64& r) {
         return Case{{random_tensor(r, {2, 3, 4}, -1, 1)},
                     [](const std::vector<Tensor64>& x) { return mean_all(x[0]); }};
       }},
      {"softmax_log",
       [](std::mt19937_64& r) {
         return Case{{random_tensor(r, {2, 3, 4, 4}, -2, 2)},
                     [](const std::vector<Tensor64>& x) { return log(softmax_channels(x[0])); }};
       }},
  };
  return table;
}

}  // namespace

const std::vector<std::string>& gradcheck_primitives() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& [name, _] : builders()) out.push_back(name);
    return out;
  }();
  return names;
}

double grad_check(std::string_view primitive, std::uint64_t seed) {
  const auto it = builders().find(primitive);
  if (it == builders().end()) {
    throw std::invalid_argument("grad_check: unknown primitive '" + std::string(primitive) + "'");
  }
  std::mt19937_64 rng(seed);
  Case c = it->second(rng);
  return check_gradients(c.fn, std::move(c.inputs), 1e-6, seed ^ 0x9e3779b97f4a7c15ULL)
      .max_relative_error;
}

GradCheckReport network_loss_grad_check(std::uint64_t seed, std::size_t depth,
                                        std::size_t base_channels, bool extended_oracle) {
  UNetConfig cfg;
  cfg.depth = depth;
  cfg.base_channels = base_channels;
  cfg.n_classes = 3;
  const auto init = init_params(cfg, seed).clone_as<double>();

  std::mt19937_64 rng(seed + 1);
  const std::size_t hw = 8;
  const Tensor64 labeled = random_tensor(rng, {2, 1, hw, hw}, -1.5, 1.5);
  const Tensor64 unlabeled = random_tensor(rng, {2, 1, hw, hw}, -1.5, 1.5);
  LabelBatch truth(2, hw, hw), pseudo(2, hw, hw);
  for (auto& v : truth.values) v = static_cast<std::uint8_t>(rng() % cfg.n_classes);
  for (auto& v : pseudo.values) v = static_cast<std::uint8_t>(rng() % cfg.n_classes);

  const auto names = init.params.names();
  auto loss_in = [&]<typename T>(const std::vector<BasicTensor<T>>& xs) {
    BasicModelParams<T> model{cfg, {}};
    for (std::size_t i = 0; i < names.size(); ++i) model.params.add(names[i], xs[i]);
    auto sup = supervised_loss(predict_dual(model, labeled.template cast<T>()), truth);
    auto unsup = rectified_unsup_loss(predict_dual(model, unlabeled.template cast<T>()), pseudo);
    return total_loss(sup, std::optional<BasicLossValue<T>>(unsup), 1.0).scalar;
  };
  GradCheckFn fn = [&](const std::vector<Tensor64>& xs) { return loss_in(xs); };
  const std::uint64_t wseed = seed ^ 0x9e3779b97f4a7c15ULL;
  if (!extended_oracle) return check_gradients(fn, init.params.tensors(), 1e-6, wseed);
  auto oracle = [&](const std::vector<BasicTensor<long double>>& xs) { return loss_in(xs); };
  return run_check<long double>(fn, oracle, init.params.tensors(), 1e-6, wseed);
}

}  // namespace dust
