#include "dust/unet.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "dust/ops.hpp"

namespace dust {

std::string to_string(UpsampleKind kind) {
  return kind == UpsampleKind::TransposedConv ? "transposed_conv" : "bilinear";
}

UpsampleKind upsample_kind_from_string(const std::string& name) {
  if (name == "transposed_conv") return UpsampleKind::TransposedConv;
  if (name == "bilinear") return UpsampleKind::Bilinear;
  throw std::invalid_argument("unknown upsample kind '" + name + "'");
}

void validate(const UNetConfig& cfg) {
  if (cfg.depth < 2) throw std::invalid_argument("unet: depth must be >= 2");
  if (cfg.base_channels < 4) throw std::invalid_argument("unet: base_channels must be >= 4");
  if (cfg.n_classes < 2) throw std::invalid_argument("unet: n_classes must be >= 2");
  if (cfg.main_upsample == cfg.aux_upsample) {
    throw std::invalid_argument("unet: main and aux decoders must use different upsampling (both " +
                                to_string(cfg.main_upsample) + ")");
  }
}

std::size_t spatial_divisor(const UNetConfig& cfg) { return std::size_t{1} << (cfg.depth - 1); }

namespace {

std::size_t width(const UNetConfig& cfg, std::size_t level) { return cfg.base_channels << level; }

std::size_t block_params(const UNetConfig& cfg, std::size_t in, std::size_t out) {
  const std::size_t per_conv_extra = cfg.instance_norm ? 2 * out : out;
  return 9 * in * out + 9 * out * out + 2 * per_conv_extra;
}

std::size_t upsample_params(UpsampleKind kind, std::size_t in, std::size_t out) {
  return (kind == UpsampleKind::TransposedConv ? 4 : 1) * in * out + out;
}

class Initializer {
 public:
  Initializer(ModelParams& model, std::uint64_t seed) : model_(model), rng_(seed) {}

  void kernel(const std::string& name, Shape shape, std::size_t fan_in) {
    std::normal_distribution<float> dist(0.f, static_cast<float>(std::sqrt(2.0 / fan_in)));
    std::vector<float> v(shape_numel(shape));
    for (auto& x : v) x = dist(rng_);
    model_.params.add(name, Tensor(std::move(shape), std::move(v)));
  }
  void constant(const std::string& name, std::size_t n, float value) {
    model_.params.add(name, Tensor({n}, value));
  }

  // conv3x3 -> norm -> act, twice.
  void block(const std::string& prefix, std::size_t in, std::size_t out) {
    for (int i = 0; i < 2; ++i) {
      const std::string conv = prefix + ".conv" + std::to_string(i);
      const std::size_t cin = i == 0 ? in : out;
      kernel(conv + ".weight", {out, cin, 3, 3}, 9 * cin);
      if (model_.config.instance_norm) {
        const std::string norm = prefix + ".norm" + std::to_string(i);
        constant(norm + ".gamma", out, 1.f);
        constant(norm + ".beta", out, 0.f);
      } else {
        constant(conv + ".bias", out, 0.f);
      }
    }
  }

  void decoder(const std::string& prefix, UpsampleKind kind) {
    const auto& cfg = model_.config;
    for (std::size_t l = cfg.depth - 1; l-- > 0;) {
      const std::size_t below = width(cfg, l + 1), here = width(cfg, l);
      const std::string up = prefix + ".up" + std::to_string(l);
      if (kind == UpsampleKind::TransposedConv) {
        kernel(up + ".weight", {below, here, 2, 2}, below);
      } else {
        kernel(up + ".reduce.weight", {here, below, 1, 1}, below);
      }
      constant(up + (kind == UpsampleKind::TransposedConv ? ".bias" : ".reduce.bias"), here, 0.f);
      block(prefix + ".dec" + std::to_string(l), 2 * here, here);
    }
    kernel(prefix + ".head.weight", {cfg.n_classes, width(cfg, 0), 1, 1}, width(cfg, 0));
    constant(prefix + ".head.bias", cfg.n_classes, 0.f);
  }

 private:
  ModelParams& model_;
  std::mt19937_64 rng_;
};

template <typename T>
class Forward {
 public:
  explicit Forward(const BasicModelParams<T>& model) : model_(model), cfg_(model.config) {}

  void encode(const BasicTensor<T>& x) {
    if (x.rank() != 4 || x.dim(1) != 1) {
      throw ShapeError("unet: input must be [B,1,H,W], got " + shape_str(x.shape()));
    }
    const std::size_t div = spatial_divisor(cfg_);
    if (x.dim(2) % div || x.dim(3) % div || x.dim(2) == 0 || x.dim(3) == 0) {
      throw ShapeError("unet: spatial dims " + std::to_string(x.dim(2)) + "x" +
                       std::to_string(x.dim(3)) + " must be multiples of " + std::to_string(div) +
                       " for depth " + std::to_string(cfg_.depth));
    }
    skips_.clear();
    BasicTensor<T> h = x;
    for (std::size_t l = 0; l < cfg_.depth; ++l) {
      h = block("enc" + std::to_string(l), h);
      if (l + 1 < cfg_.depth) {
        skips_.push_back(h);
        h = max_pool2x2(h);
      }
    }
    bottom_ = h;
  }

  BasicTensor<T> decode(const std::string& prefix, UpsampleKind kind) const {
    BasicTensor<T> h = bottom_;
    for (std::size_t l = cfg_.depth - 1; l-- > 0;) {
      const std::string up = prefix + ".up" + std::to_string(l);
      BasicTensor<T> u;
      if (kind == UpsampleKind::TransposedConv) {
        u = conv_transpose2d(h, p(up + ".weight"), p(up + ".bias"));
      } else {
        u = conv2d(upsample_bilinear2x(h), p(up + ".reduce.weight"), p(up + ".reduce.bias"), 0);
      }
      h = block(prefix + ".dec" + std::to_string(l), concat_channels<T>({u, skips_[l]}));
    }
    return softmax_channels(conv2d(h, p(prefix + ".head.weight"), p(prefix + ".head.bias"), 0));
  }

 private:
  const BasicTensor<T>& p(const std::string& name) const { return model_.params.get(name); }

  BasicTensor<T> block(const std::string& prefix, BasicTensor<T> h) const {
    for (int i = 0; i < 2; ++i) {
      const std::string conv = prefix + ".conv" + std::to_string(i);
      if (cfg_.instance_norm) {
        const std::string norm = prefix + ".norm" + std::to_string(i);
        h = conv2d(h, p(conv + ".weight"), BasicTensor<T>(), 1);
        h = instance_norm(h, p(norm + ".gamma"), p(norm + ".beta"));
      } else {
        h = conv2d(h, p(conv + ".weight"), p(conv + ".bias"), 1);
      }
      h = leaky_relu(h, T(0.01));
    }
    return h;
  }

  const BasicModelParams<T>& model_;
  const UNetConfig& cfg_;
  std::vector<BasicTensor<T>> skips_;
  BasicTensor<T> bottom_;
};

}  // namespace

std::size_t expected_param_count(const UNetConfig& cfg) {
  validate(cfg);
  std::size_t n = 0;
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    n += block_params(cfg, l == 0 ? 1 : width(cfg, l - 1), width(cfg, l));
  }
  for (UpsampleKind kind : {cfg.main_upsample, cfg.aux_upsample}) {
    for (std::size_t l = 0; l + 1 < cfg.depth; ++l) {
      n += upsample_params(kind, width(cfg, l + 1), width(cfg, l));
      n += block_params(cfg, 2 * width(cfg, l), width(cfg, l));
    }
    n += cfg.n_classes * cfg.base_channels + cfg.n_classes;
  }
  return n;
}

ModelParams init_params(const UNetConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  ModelParams model{cfg, {}};
  Initializer init(model, seed);
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    init.block("enc" + std::to_string(l), l == 0 ? 1 : width(cfg, l - 1), width(cfg, l));
  }
  init.decoder("main", cfg.main_upsample);
  init.decoder("aux", cfg.aux_upsample);
  return model;
}

ModelParams init_params(std::size_t depth, std::size_t base_channels, std::size_t n_classes,
                        std::uint64_t seed) {
  UNetConfig cfg;
  cfg.depth = depth;
  cfg.base_channels = base_channels;
  cfg.n_classes = n_classes;
  return init_params(cfg, seed);
}

template <typename T>
BasicDualPrediction<T> predict_dual(const BasicModelParams<T>& model, const BasicTensor<T>& batch) {
  validate(model.config);
  Forward<T> fwd(model);
  fwd.encode(batch);
  return {fwd.decode("main", model.config.main_upsample),
          fwd.decode("aux", model.config.aux_upsample)};
}

template <typename T>
BasicTensor<T> predict_main(const BasicModelParams<T>& model, const BasicTensor<T>& batch) {
  validate(model.config);
  Forward<T> fwd(model);
  fwd.encode(batch);
  return fwd.decode("main", model.config.main_upsample);
}

LabelBatch argmax_labels(const Tensor& prob) {
  if (prob.rank() != 4) throw ShapeError("argmax_labels: expected [B,n,H,W], got " + shape_str(prob.shape()));
  const std::size_t B = prob.dim(0), C = prob.dim(1), H = prob.dim(2), W = prob.dim(3), P = H * W;
  if (C > 256) throw ShapeError("argmax_labels: at most 256 classes supported");
  LabelBatch out(B, H, W);
  auto v = prob.data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t p = 0; p < P; ++p) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < C; ++c) {
        if (v[(b * C + c) * P + p] > v[(b * C + best) * P + p]) best = c;
      }
      out.values[b * P + p] = static_cast<std::uint8_t>(best);
    }
  }
  return out;
}

LabelBatch predict_main_labels(const ModelParams& model, const Tensor& batch) {
  NoGradGuard no_grad;
  return argmax_labels(predict_main(model, batch));
}

template BasicDualPrediction<float> predict_dual(const BasicModelParams<float>&, const Tensor&);
template BasicDualPrediction<double> predict_dual(const BasicModelParams<double>&, const Tensor64&);
template Tensor predict_main(const BasicModelParams<float>&, const Tensor&);
template Tensor64 predict_main(const BasicModelParams<double>&, const Tensor64&);
template BasicDualPrediction<long double> predict_dual(const BasicModelParams<long double>&,
                                                      const BasicTensor<long double>&);
template BasicTensor<long double> predict_main(const BasicModelParams<long double>&,
                                               const BasicTensor<long double>&);

}  // namespace dust
