#include "dust/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <type_traits>

#include "dust/parallel.hpp"

namespace dust {
namespace {

template <typename T>
using NodeT = detail::Node<T>;
template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<Mat<T>>;
template <typename T>
using MapCM = Eigen::Map<const Mat<T>>;
// Accumulator type: at least double.
template <typename T>
using Acc = std::conditional_t<(sizeof(T) > sizeof(double)), T, double>;

template <typename T>
NodeT<T>* raw(const BasicTensor<T>& t) {
  return t.defined() ? t.node().get() : nullptr;
}

template <typename T>
T* grad_of(NodeT<T>* p) {
  return (p && p->requires_grad) ? p->ensure_grad().data() : nullptr;
}

// Wraps a freshly computed value in a node; attaches the backward closure only
// when the graph has to be recorded.
template <typename T, typename Fn>
BasicTensor<T> finish(const char* op, Shape shape, std::vector<T> value,
                      const std::vector<const BasicTensor<T>*>& inputs, Fn&& backward) {
  auto node = std::make_shared<NodeT<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool record = false;
  if (NoGradGuard::grad_enabled()) {
    for (const auto* t : inputs) record = record || (t->defined() && t->requires_grad());
  }
  if (record) {
    node->requires_grad = true;
    node->op = op;
    for (const auto* t : inputs) {
      if (t->defined()) node->parents.push_back(t->node());
    }
    node->backward = std::forward<Fn>(backward);
  }
  return BasicTensor<T>::from_node(std::move(node));
}

[[noreturn]] void shape_fail(const char* op, const std::string& what) {
  throw ShapeError(std::string(op) + ": " + what);
}

void require_rank(const char* op, const char* operand, const Shape& s, std::size_t rank) {
  if (s.size() != rank) {
    shape_fail(op, std::string(operand) + " must have rank " + std::to_string(rank) + ", got " +
                       shape_str(s));
  }
}

void require_same(const char* op, const Shape& a, const Shape& b) {
  if (a != b) shape_fail(op, "operand shapes differ: " + shape_str(a) + " vs " + shape_str(b));
}

// Output columns [lo, hi) whose source column ox + kx - pad lies inside [0, w).
inline void valid_columns(std::size_t kx, std::size_t pad, std::size_t w, std::size_t wo,
                          std::size_t& lo, std::size_t& hi) {
  lo = pad > kx ? pad - kx : 0;
  const long end = static_cast<long>(w + pad) - static_cast<long>(kx);
  hi = static_cast<std::size_t>(std::clamp<long>(end, 0, static_cast<long>(wo)));
  if (lo > hi) lo = hi;
}

// Patch matrix [Ci*k*k, Ho*Wo] for one image of x.
template <typename T>
void im2col(const T* x, std::size_t ci, std::size_t h, std::size_t w, std::size_t k,
            std::size_t pad, std::size_t ho, std::size_t wo, T* col) {
  for (std::size_t c = 0; c < ci; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = col + ((c * k + ky) * k + kx) * ho * wo;
        std::size_t lo, hi;
        valid_columns(kx, pad, w, wo, lo, hi);
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy + ky) - static_cast<long>(pad);
          T* dst = row + oy * wo;
          if (iy < 0 || iy >= static_cast<long>(h)) {
            std::fill(dst, dst + wo, T(0));
            continue;
          }
          const T* src = x + (c * h + static_cast<std::size_t>(iy)) * w + kx - pad;
          std::fill(dst, dst + lo, T(0));
          std::copy(src + lo, src + hi, dst + lo);
          std::fill(dst + hi, dst + wo, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, std::size_t ci, std::size_t h, std::size_t w, std::size_t k,
                std::size_t pad, std::size_t ho, std::size_t wo, T* x) {
  for (std::size_t c = 0; c < ci; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* row = col + ((c * k + ky) * k + kx) * ho * wo;
        std::size_t lo, hi;
        valid_columns(kx, pad, w, wo, lo, hi);
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy + ky) - static_cast<long>(pad);
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          T* dst = x + (c * h + static_cast<std::size_t>(iy)) * w + kx - pad;
          const T* src = row + oy * wo;
          for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] += src[ox];
        }
      }
    }
  }
}

template <typename T>
void add_into(T* dst, const std::vector<std::vector<T>>& parts) {
  for (const auto& p : parts) {
    for (std::size_t i = 0; i < p.size(); ++i) dst[i] += p[i];
  }
}

struct LinearTaps {
  std::vector<std::size_t> lo, hi;
  std::vector<double> wlo, whi;
};

// Source taps for x2 upsampling along one axis, half-pixel convention.
LinearTaps bilinear_taps(std::size_t in) {
  LinearTaps t;
  const std::size_t out = 2 * in;
  t.lo.resize(out);
  t.hi.resize(out);
  t.wlo.resize(out);
  t.whi.resize(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * 0.5 - 0.5;
    if (src < 0) src = 0;
    auto i0 = static_cast<std::size_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    const double frac = src - static_cast<double>(i0);
    t.lo[o] = i0;
    t.hi[o] = i1;
    t.wlo[o] = 1.0 - frac;
    t.whi[o] = frac;
  }
  return t;
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, std::size_t padding) {
  constexpr const char* op = "conv2d";
  require_rank(op, "input", x.shape(), 4);
  require_rank(op, "weight", weight.shape(), 4);
  const std::size_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Co = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != Ci) {
    shape_fail(op, "input has " + std::to_string(Ci) + " channels but weight " +
                       shape_str(weight.shape()) + " expects " + std::to_string(weight.dim(1)));
  }
  if (weight.dim(3) != k) shape_fail(op, "kernel must be square, got " + shape_str(weight.shape()));
  if (bias.defined() && bias.shape() != Shape{Co}) {
    shape_fail(op, "bias shape " + shape_str(bias.shape()) + " does not match " +
                       std::to_string(Co) + " output channels");
  }
  if (H + 2 * padding < k || W + 2 * padding < k) {
    shape_fail(op, "kernel " + std::to_string(k) + " larger than padded input " +
                       shape_str(x.shape()));
  }
  const std::size_t Ho = H + 2 * padding - k + 1, Wo = W + 2 * padding - k + 1;
  const std::size_t P = Ho * Wo, K = Ci * k * k;
  const bool direct = (k == 1 && padding == 0);

  std::vector<T> out(B * Co * P);
  const T* xv = x.data().data();
  const T* wv = weight.data().data();
  const T* bv = bias.defined() ? bias.data().data() : nullptr;
  parallel_for(B, [&](std::size_t b) {
    const T* xb = xv + b * Ci * H * W;
    std::vector<T> col;
    const T* colp = xb;
    if (!direct) {
      col.resize(K * P);
      im2col(xb, Ci, H, W, k, padding, Ho, Wo, col.data());
      colp = col.data();
    }
    MapM<T> ob(out.data() + b * Co * P, Co, P);
    ob.noalias() = MapCM<T>(wv, Co, K) * MapCM<T>(colp, K, P);
    if (bv) {
      for (std::size_t c = 0; c < Co; ++c) ob.row(c).array() += bv[c];
    }
  });

  auto* px = raw(x);
  auto* pw = raw(weight);
  auto* pb = raw(bias);
  return finish<T>(op, {B, Co, Ho, Wo}, std::move(out), {&x, &weight, &bias},
                   [=](NodeT<T>& self) {
                     const T* g = self.grad.data();
                     T* gx = grad_of(px);
                     T* gw = grad_of(pw);
                     T* gb = grad_of(pb);
                     const T* xv = px->value.data();
                     const T* wv = pw->value.data();
                     std::vector<std::vector<T>> dw_parts(gw ? B : 0);
                     parallel_for(B, [&](std::size_t b) {
                       const T* xb = xv + b * Ci * H * W;
                       MapCM<T> gb_mat(g + b * Co * P, Co, P);
                       if (gw) {
                         std::vector<T> col;
                         const T* colp = xb;
                         if (!direct) {
                           col.resize(K * P);
                           im2col(xb, Ci, H, W, k, padding, Ho, Wo, col.data());
                           colp = col.data();
                         }
                         dw_parts[b].resize(Co * K);
                         MapM<T>(dw_parts[b].data(), Co, K).noalias() =
                             gb_mat * MapCM<T>(colp, K, P).transpose();
                       }
                       if (gx) {
                         T* gxb = gx + b * Ci * H * W;
                         if (direct) {
                           MapM<T>(gxb, Ci, P).noalias() +=
                               MapCM<T>(wv, Co, K).transpose() * gb_mat;
                         } else {
                           std::vector<T> dcol(K * P);
                           MapM<T>(dcol.data(), K, P).noalias() =
                               MapCM<T>(wv, Co, K).transpose() * gb_mat;
                           col2im_add(dcol.data(), Ci, H, W, k, padding, Ho, Wo, gxb);
                         }
                       }
                     });
                     if (gw) add_into(gw, dw_parts);
                     if (gb) {
                       for (std::size_t b = 0; b < B; ++b) {
                         for (std::size_t c = 0; c < Co; ++c) {
                           const T* row = g + (b * Co + c) * P;
                           T acc = 0;
                           for (std::size_t p = 0; p < P; ++p) acc += row[p];
                           gb[c] += acc;
                         }
                       }
                     }
                   });
}

template <typename T>
BasicTensor<T> conv_transpose2d(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                                const BasicTensor<T>& bias) {
  constexpr const char* op = "conv_transpose2d";
  require_rank(op, "input", x.shape(), 4);
  require_rank(op, "weight", weight.shape(), 4);
  const std::size_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Co = weight.dim(1);
  if (weight.dim(0) != Ci) {
    shape_fail(op, "input has " + std::to_string(Ci) + " channels but weight " +
                       shape_str(weight.shape()) + " expects " + std::to_string(weight.dim(0)));
  }
  if (weight.dim(2) != 2 || weight.dim(3) != 2) {
    shape_fail(op, "kernel must be 2x2 for stride 2, got " + shape_str(weight.shape()));
  }
  if (bias.defined() && bias.shape() != Shape{Co}) {
    shape_fail(op, "bias shape " + shape_str(bias.shape()) + " does not match " +
                       std::to_string(Co) + " output channels");
  }
  const std::size_t P = H * W, Q = Co * 4, Ho = 2 * H, Wo = 2 * W;
  std::vector<T> out(B * Co * Ho * Wo);
  const T* xv = x.data().data();
  const T* wv = weight.data().data();
  const T* bv = bias.defined() ? bias.data().data() : nullptr;
  parallel_for(B, [&](std::size_t b) {
    Mat<T> y = MapCM<T>(wv, Ci, Q).transpose() * MapCM<T>(xv + b * Ci * P, Ci, P);
    T* ob = out.data() + b * Co * Ho * Wo;
    for (std::size_t co = 0; co < Co; ++co) {
      const T bias_v = bv ? bv[co] : T(0);
      for (std::size_t a = 0; a < 2; ++a) {
        for (std::size_t c = 0; c < 2; ++c) {
          const T* yr = y.data() + (co * 4 + a * 2 + c) * P;
          for (std::size_t i = 0; i < H; ++i) {
            T* orow = ob + (co * Ho + 2 * i + a) * Wo + c;
            for (std::size_t j = 0; j < W; ++j) orow[2 * j] = yr[i * W + j] + bias_v;
          }
        }
      }
    }
  });

  auto* px = raw(x);
  auto* pw = raw(weight);
  auto* pb = raw(bias);
  return finish<T>(op, {B, Co, Ho, Wo}, std::move(out), {&x, &weight, &bias},
                   [=](NodeT<T>& self) {
                     const T* g = self.grad.data();
                     T* gx = grad_of(px);
                     T* gw = grad_of(pw);
                     T* gb = grad_of(pb);
                     const T* xv = px->value.data();
                     const T* wv = pw->value.data();
                     std::vector<std::vector<T>> dw_parts(gw ? B : 0);
                     parallel_for(B, [&](std::size_t b) {
                       Mat<T> dy(Q, P);
                       const T* gbp = g + b * Co * Ho * Wo;
                       for (std::size_t co = 0; co < Co; ++co) {
                         for (std::size_t a = 0; a < 2; ++a) {
                           for (std::size_t c = 0; c < 2; ++c) {
                             T* dr = dy.data() + (co * 4 + a * 2 + c) * P;
                             for (std::size_t i = 0; i < H; ++i) {
                               const T* grow = gbp + (co * Ho + 2 * i + a) * Wo + c;
                               for (std::size_t j = 0; j < W; ++j) dr[i * W + j] = grow[2 * j];
                             }
                           }
                         }
                       }
                       if (gx) {
                         MapM<T>(gx + b * Ci * P, Ci, P).noalias() += MapCM<T>(wv, Ci, Q) * dy;
                       }
                       if (gw) {
                         dw_parts[b].resize(Ci * Q);
                         MapM<T>(dw_parts[b].data(), Ci, Q).noalias() =
                             MapCM<T>(xv + b * Ci * P, Ci, P) * dy.transpose();
                       }
                     });
                     if (gw) add_into(gw, dw_parts);
                     if (gb) {
                       const std::size_t plane = Ho * Wo;
                       for (std::size_t b = 0; b < B; ++b) {
                         for (std::size_t co = 0; co < Co; ++co) {
                           const T* row = g + (b * Co + co) * plane;
                           T acc = 0;
                           for (std::size_t p = 0; p < plane; ++p) acc += row[p];
                           gb[co] += acc;
                         }
                       }
                     }
                   });
}

template <typename T>
BasicTensor<T> upsample_bilinear2x(const BasicTensor<T>& x) {
  constexpr const char* op = "upsample_bilinear2x";
  require_rank(op, "input", x.shape(), 4);
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H == 0 || W == 0) shape_fail(op, "empty spatial extent " + shape_str(x.shape()));
  const std::size_t Ho = 2 * H, Wo = 2 * W;
  const LinearTaps ty = bilinear_taps(H), tx = bilinear_taps(W);
  std::vector<T> out(B * C * Ho * Wo);
  const T* xv = x.data().data();
  for (std::size_t plane = 0; plane < B * C; ++plane) {
    const T* src = xv + plane * H * W;
    T* dst = out.data() + plane * Ho * Wo;
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      const T* r0 = src + ty.lo[oy] * W;
      const T* r1 = src + ty.hi[oy] * W;
      const T a0 = static_cast<T>(ty.wlo[oy]), a1 = static_cast<T>(ty.whi[oy]);
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        const T b0 = static_cast<T>(tx.wlo[ox]), b1 = static_cast<T>(tx.whi[ox]);
        dst[oy * Wo + ox] = a0 * (b0 * r0[tx.lo[ox]] + b1 * r0[tx.hi[ox]]) +
                            a1 * (b0 * r1[tx.lo[ox]] + b1 * r1[tx.hi[ox]]);
      }
    }
  }
  auto* px = raw(x);
  return finish<T>(op, {B, C, Ho, Wo}, std::move(out), {&x}, [=](NodeT<T>& self) {
    T* gx = grad_of(px);
    if (!gx) return;
    const T* g = self.grad.data();
    for (std::size_t plane = 0; plane < B * C; ++plane) {
      T* dst = gx + plane * H * W;
      const T* src = g + plane * Ho * Wo;
      for (std::size_t oy = 0; oy < Ho; ++oy) {
        T* r0 = dst + ty.lo[oy] * W;
        T* r1 = dst + ty.hi[oy] * W;
        const T a0 = static_cast<T>(ty.wlo[oy]), a1 = static_cast<T>(ty.whi[oy]);
        for (std::size_t ox = 0; ox < Wo; ++ox) {
          const T v = src[oy * Wo + ox];
          const T b0 = static_cast<T>(tx.wlo[ox]), b1 = static_cast<T>(tx.whi[ox]);
          r0[tx.lo[ox]] += a0 * b0 * v;
          r0[tx.hi[ox]] += a0 * b1 * v;
          r1[tx.lo[ox]] += a1 * b0 * v;
          r1[tx.hi[ox]] += a1 * b1 * v;
        }
      }
    }
  });
}

template <typename T>
BasicTensor<T> max_pool2x2(const BasicTensor<T>& x) {
  constexpr const char* op = "max_pool2x2";
  require_rank(op, "input", x.shape(), 4);
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % 2 || W % 2) shape_fail(op, "spatial dims must be even, got " + shape_str(x.shape()));
  const std::size_t Ho = H / 2, Wo = W / 2;
  std::vector<T> out(B * C * Ho * Wo);
  std::vector<std::size_t> argmax(out.size());
  const T* xv = x.data().data();
  for (std::size_t plane = 0; plane < B * C; ++plane) {
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        std::size_t best = (plane * H + 2 * oy) * W + 2 * ox;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (plane * H + 2 * oy + dy) * W + 2 * ox + dx;
            if (xv[idx] > xv[best]) best = idx;
          }
        }
        const std::size_t o = (plane * Ho + oy) * Wo + ox;
        out[o] = xv[best];
        argmax[o] = best;
      }
    }
  }
  auto* px = raw(x);
  return finish<T>(op, {B, C, Ho, Wo}, std::move(out), {&x},
                   [=, argmax = std::move(argmax)](NodeT<T>& self) {
                     T* gx = grad_of(px);
                     if (!gx) return;
                     for (std::size_t o = 0; o < argmax.size(); ++o) gx[argmax[o]] += self.grad[o];
                   });
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  return leaky_relu(x, T(0));
}

template <typename T>
BasicTensor<T> leaky_relu(const BasicTensor<T>& x, T slope) {
  auto xs = x.data();
  std::vector<T> out(xs.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xs[i] > T(0) ? xs[i] : slope * xs[i];
  auto* px = raw(x);
  return finish<T>(slope == T(0) ? "relu" : "leaky_relu", x.shape(), std::move(out), {&x},
                   [=](NodeT<T>& self) {
                     T* gx = grad_of(px);
                     if (!gx) return;
                     const T* xv = px->value.data();
                     for (std::size_t i = 0; i < self.grad.size(); ++i) {
                       gx[i] += xv[i] > T(0) ? self.grad[i] : slope * self.grad[i];
                     }
                   });
}

template <typename T>
BasicTensor<T> instance_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                             const BasicTensor<T>& beta, T eps) {
  constexpr const char* op = "instance_norm";
  require_rank(op, "input", x.shape(), 4);
  const std::size_t B = x.dim(0), C = x.dim(1), P = x.dim(2) * x.dim(3);
  if (gamma.shape() != Shape{C} || beta.shape() != Shape{C}) {
    shape_fail(op, "affine params " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                       " do not match " + std::to_string(C) + " channels");
  }
  using A = Acc<T>;
  std::vector<T> out(B * C * P), xhat(B * C * P), inv_std(B * C);
  const T* xv = x.data().data();
  const T* gv = gamma.data().data();
  const T* bv = beta.data().data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t base = (b * C + c) * P;
      A m = 0;
      for (std::size_t p = 0; p < P; ++p) m += xv[base + p];
      m /= static_cast<A>(P);
      A v = 0;
      for (std::size_t p = 0; p < P; ++p) {
        const A d = xv[base + p] - m;
        v += d * d;
      }
      v /= static_cast<A>(P);
      const A is = A(1) / std::sqrt(v + static_cast<A>(eps));
      inv_std[b * C + c] = static_cast<T>(is);
      for (std::size_t p = 0; p < P; ++p) {
        const T xh = static_cast<T>((xv[base + p] - m) * is);
        xhat[base + p] = xh;
        out[base + p] = gv[c] * xh + bv[c];
      }
    }
  }
  auto* px = raw(x);
  auto* pg = raw(gamma);
  auto* pb = raw(beta);
  return finish<T>(
      op, x.shape(), std::move(out), {&x, &gamma, &beta},
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](NodeT<T>& self) {
        const T* g = self.grad.data();
        T* gx = grad_of(px);
        T* gg = grad_of(pg);
        T* gb = grad_of(pb);
        const T* gam = pg->value.data();
        using A = Acc<T>;
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t base = (b * C + c) * P;
            A sum_g = 0, sum_gx = 0;
            for (std::size_t p = 0; p < P; ++p) {
              sum_g += g[base + p];
              sum_gx += static_cast<A>(g[base + p]) * xhat[base + p];
            }
            if (gg) gg[c] += static_cast<T>(sum_gx);
            if (gb) gb[c] += static_cast<T>(sum_g);
            if (gx) {
              const A m1 = gam[c] * sum_g / static_cast<A>(P);
              const A m2 = gam[c] * sum_gx / static_cast<A>(P);
              const A is = inv_std[b * C + c];
              for (std::size_t p = 0; p < P; ++p) {
                gx[base + p] +=
                    static_cast<T>(is * (gam[c] * g[base + p] - m1 - xhat[base + p] * m2));
              }
            }
          }
        }
      });
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return linear_combination<T>({a, b}, {T(1), T(1)});
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same("mul", a.shape(), b.shape());
  auto av = a.data();
  auto bv = b.data();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  auto* pa = raw(a);
  auto* pb = raw(b);
  return finish<T>("mul", a.shape(), std::move(out), {&a, &b}, [=](NodeT<T>& self) {
    T* ga = grad_of(pa);
    T* gb = grad_of(pb);
    const auto& g = self.grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (ga) ga[i] += g[i] * pb->value[i];
      if (gb) gb[i] += g[i] * pa->value[i];
    }
  });
}

template <typename T>
BasicTensor<T> concat_channels(const std::vector<BasicTensor<T>>& parts) {
  constexpr const char* op = "concat_channels";
  if (parts.empty()) shape_fail(op, "no operands");
  const Shape& first = parts.front().shape();
  if (first.size() < 2) shape_fail(op, "operands need rank >= 2, got " + shape_str(first));
  std::size_t total_c = 0;
  for (const auto& p : parts) {
    Shape a = p.shape(), b = first;
    if (a.size() != b.size()) shape_fail(op, "rank mismatch " + shape_str(a) + " vs " + shape_str(b));
    total_c += a[1];
    a[1] = b[1] = 0;
    if (a != b) {
      shape_fail(op, "non-channel dims differ: " + shape_str(p.shape()) + " vs " + shape_str(first));
    }
  }
  const std::size_t B = first[0];
  const std::size_t inner = shape_numel(first) / (first[0] * first[1]);
  Shape out_shape = first;
  out_shape[1] = total_c;
  std::vector<T> out(shape_numel(out_shape));
  std::vector<std::size_t> channels;
  std::vector<NodeT<T>*> nodes;
  for (std::size_t b = 0, off = 0; b < B; ++b) {
    for (const auto& p : parts) {
      const std::size_t block = p.dim(1) * inner;
      auto src = p.data().subspan(b * block, block);
      std::copy(src.begin(), src.end(), out.begin() + static_cast<std::ptrdiff_t>(off));
      off += block;
    }
  }
  for (const auto& p : parts) {
    channels.push_back(p.dim(1));
    nodes.push_back(raw(p));
  }
  std::vector<const BasicTensor<T>*> inputs;
  for (const auto& p : parts) inputs.push_back(&p);
  return finish<T>(op, out_shape, std::move(out), inputs, [=](NodeT<T>& self) {
    std::size_t off = 0;
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t i = 0; i < nodes.size(); ++i) {
        const std::size_t block = channels[i] * inner;
        if (T* g = grad_of(nodes[i])) {
          for (std::size_t j = 0; j < block; ++j) g[b * block + j] += self.grad[off + j];
        }
        off += block;
      }
    }
  });
}

template <typename T>
BasicTensor<T> linear_combination(const std::vector<BasicTensor<T>>& terms,
                                  const std::vector<T>& coeffs, T constant) {
  constexpr const char* op = "linear_combination";
  if (terms.empty() || terms.size() != coeffs.size()) {
    shape_fail(op, "need one coefficient per term (" + std::to_string(terms.size()) + " terms, " +
                       std::to_string(coeffs.size()) + " coefficients)");
  }
  for (const auto& t : terms) require_same(op, terms.front().shape(), t.shape());
  std::vector<T> out(terms.front().numel(), constant);
  for (std::size_t k = 0; k < terms.size(); ++k) {
    auto v = terms[k].data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += coeffs[k] * v[i];
  }
  std::vector<NodeT<T>*> nodes;
  std::vector<const BasicTensor<T>*> inputs;
  for (const auto& t : terms) {
    nodes.push_back(raw(t));
    inputs.push_back(&t);
  }
  return finish<T>(op, terms.front().shape(), std::move(out), inputs, [=](NodeT<T>& self) {
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      if (T* g = grad_of(nodes[k])) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += coeffs[k] * self.grad[i];
      }
    }
  });
}

template <typename T>
BasicTensor<T> softmax_channels(const BasicTensor<T>& x) {
  constexpr const char* op = "softmax_channels";
  const Shape& s = x.shape();
  if (s.size() < 2) shape_fail(op, "input needs rank >= 2, got " + shape_str(s));
  const std::size_t outer = s[0], C = s[1], inner = shape_numel(s) / (s[0] * s[1]);
  auto xv = x.data();
  std::vector<T> out(xv.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * C * inner + i;
      T mx = xv[base];
      for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, xv[base + c * inner]);
      T z = 0;
      for (std::size_t c = 0; c < C; ++c) {
        const T e = std::exp(xv[base + c * inner] - mx);
        out[base + c * inner] = e;
        z += e;
      }
      for (std::size_t c = 0; c < C; ++c) out[base + c * inner] /= z;
    }
  }
  auto* px = raw(x);
  auto result = finish<T>(op, s, std::move(out), {&x}, nullptr);
  if (result.requires_grad()) {
    auto* self_node = result.node().get();
    self_node->backward = [=](NodeT<T>& self) {
      T* gx = grad_of(px);
      if (!gx) return;
      const auto& y = self.value;
      const auto& g = self.grad;
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
          const std::size_t base = o * C * inner + i;
          T dot = 0;
          for (std::size_t c = 0; c < C; ++c) dot += g[base + c * inner] * y[base + c * inner];
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t idx = base + c * inner;
            gx[idx] += y[idx] * (g[idx] - dot);
          }
        }
      }
    };
  }
  return result;
}

template <typename T>
BasicTensor<T> log(const BasicTensor<T>& x) {
  auto xv = x.data();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(xv[i]);
  auto* px = raw(x);
  return finish<T>("log", x.shape(), std::move(out), {&x}, [=](NodeT<T>& self) {
    T* gx = grad_of(px);
    if (!gx) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i] / px->value[i];
  });
}

template <typename T>
BasicTensor<T> exp(const BasicTensor<T>& x) {
  auto xv = x.data();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(xv[i]);
  auto* px = raw(x);
  auto result = finish<T>("exp", x.shape(), std::move(out), {&x}, nullptr);
  if (result.requires_grad()) {
    result.node()->backward = [=](NodeT<T>& self) {
      T* gx = grad_of(px);
      if (!gx) return;
      for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i] * self.value[i];
    };
  }
  return result;
}

namespace {

// Maps each flat input index to the flat index of its reduced output cell.
// When the reduced axes are adjacent, target stays empty and the input is
// viewed as [outer, count, inner] instead.
struct ReductionPlan {
  Shape out_shape;
  std::vector<std::size_t> target;
  std::size_t count = 1;  // input elements per output cell
  std::size_t outer = 1, inner = 1;
  bool contiguous() const { return target.empty(); }
};

ReductionPlan plan_reduction(const char* op, const Shape& s, const std::vector<std::size_t>& axes) {
  std::vector<bool> reduced(s.size(), false);
  for (auto a : axes) {
    if (a >= s.size()) {
      shape_fail(op, "axis " + std::to_string(a) + " out of range for " + shape_str(s));
    }
    if (reduced[a]) shape_fail(op, "axis " + std::to_string(a) + " listed twice");
    reduced[a] = true;
  }
  ReductionPlan plan;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (reduced[i]) {
      plan.count *= s[i];
    } else {
      plan.out_shape.push_back(s[i]);
    }
  }
  if (plan.out_shape.empty()) plan.out_shape = {1};
  std::size_t first = s.size(), last = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (reduced[i]) {
      first = std::min(first, i);
      last = i;
    }
  }
  if (first == s.size() || last + 1 - first == axes.size()) {
    if (first == s.size()) last = s.size();
    for (std::size_t i = 0; i < first; ++i) plan.outer *= s[i];
    for (std::size_t i = last + 1; i < s.size(); ++i) plan.inner *= s[i];
    return plan;
  }
  // Output stride per input axis (0 on reduced axes).
  std::vector<std::size_t> ostride(s.size(), 0);
  std::size_t stride = 1;
  for (std::size_t i = s.size(); i-- > 0;) {
    if (!reduced[i]) {
      ostride[i] = stride;
      stride *= s[i];
    }
  }
  const std::size_t n = shape_numel(s);
  plan.target.resize(n);
  std::vector<std::size_t> idx(s.size(), 0);
  std::size_t cur = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    plan.target[flat] = cur;
    for (std::size_t d = s.size(); d-- > 0;) {
      ++idx[d];
      cur += ostride[d];
      if (idx[d] < s[d]) break;
      cur -= ostride[d] * idx[d];
      idx[d] = 0;
    }
  }
  return plan;
}

template <typename T>
BasicTensor<T> reduce(const char* op, const BasicTensor<T>& x, const std::vector<std::size_t>& axes,
                      bool average) {
  auto plan = std::make_shared<ReductionPlan>(plan_reduction(op, x.shape(), axes));
  const T scale = average ? T(1) / static_cast<T>(plan->count) : T(1);
  std::vector<Acc<T>> acc(shape_numel(plan->out_shape), 0.0);
  auto xv = x.data();
  if (plan->contiguous()) {
    const std::size_t M = plan->count, I = plan->inner;
    for (std::size_t o = 0; o < plan->outer; ++o) {
      Acc<T>* a = acc.data() + o * I;
      for (std::size_t m = 0; m < M; ++m) {
        const T* src = xv.data() + (o * M + m) * I;
        for (std::size_t i = 0; i < I; ++i) a[i] += src[i];
      }
    }
  } else {
    for (std::size_t i = 0; i < xv.size(); ++i) acc[plan->target[i]] += xv[i];
  }
  std::vector<T> out(acc.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(acc[i]) * scale;
  auto* px = raw(x);
  return finish<T>(op, plan->out_shape, std::move(out), {&x}, [=](NodeT<T>& self) {
    T* gx = grad_of(px);
    if (!gx) return;
    if (plan->contiguous()) {
      const std::size_t M = plan->count, I = plan->inner;
      for (std::size_t o = 0; o < plan->outer; ++o) {
        const T* g = self.grad.data() + o * I;
        for (std::size_t m = 0; m < M; ++m) {
          T* dst = gx + (o * M + m) * I;
          for (std::size_t i = 0; i < I; ++i) dst[i] += scale * g[i];
        }
      }
      return;
    }
    for (std::size_t i = 0; i < plan->target.size(); ++i) gx[i] += scale * self.grad[plan->target[i]];
  });
}

template <typename T>
BasicTensor<T> reduce_all(const char* op, const BasicTensor<T>& x, bool average) {
  auto xv = x.data();
  Acc<T> acc = 0;
  for (T v : xv) acc += v;
  const std::size_t n = xv.size();
  const T scale = average ? T(1) / static_cast<T>(n) : T(1);
  std::vector<T> out{static_cast<T>(acc) * scale};
  auto* px = raw(x);
  return finish<T>(op, {1}, std::move(out), {&x}, [=](NodeT<T>& self) {
    T* gx = grad_of(px);
    if (!gx) return;
    const T g = scale * self.grad[0];
    for (std::size_t i = 0; i < n; ++i) gx[i] += g;
  });
}

}  // namespace

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x, const std::vector<std::size_t>& axes) {
  return reduce("sum", x, axes, false);
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x, const std::vector<std::size_t>& axes) {
  return reduce("mean", x, axes, true);
}

template <typename T>
BasicTensor<T> sum_all(const BasicTensor<T>& x) {
  return reduce_all("sum_all", x, false);
}

template <typename T>
BasicTensor<T> mean_all(const BasicTensor<T>& x) {
  return reduce_all("mean_all", x, true);
}

template <typename T>
BasicTensor<T> one_hot(const LabelBatch& labels, std::size_t n_classes) {
  if (labels.values.size() != labels.pixels()) {
    throw ShapeError("one_hot: label buffer holds " + std::to_string(labels.values.size()) +
                     " values for " + std::to_string(labels.pixels()) + " pixels");
  }
  const std::size_t B = labels.batch, P = labels.height * labels.width;
  std::vector<T> out(B * n_classes * P, T(0));
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t p = 0; p < P; ++p) {
      const std::size_t c = labels.values[b * P + p];
      if (c >= n_classes) {
        throw std::invalid_argument("one_hot: label " + std::to_string(c) +
                                    " out of range for " + std::to_string(n_classes) + " classes");
      }
      out[(b * n_classes + c) * P + p] = T(1);
    }
  }
  return BasicTensor<T>({B, n_classes, labels.height, labels.width}, std::move(out));
}

#define DUST_INSTANTIATE_OPS(T)                                                                   \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&,                    \
                                 const BasicTensor<T>&, std::size_t);                             \
  template BasicTensor<T> conv_transpose2d(const BasicTensor<T>&, const BasicTensor<T>&,          \
                                           const BasicTensor<T>&);                                \
  template BasicTensor<T> upsample_bilinear2x(const BasicTensor<T>&);                             \
  template BasicTensor<T> max_pool2x2(const BasicTensor<T>&);                                     \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                            \
  template BasicTensor<T> leaky_relu(const BasicTensor<T>&, T);                                   \
  template BasicTensor<T> instance_norm(const BasicTensor<T>&, const BasicTensor<T>&,             \
                                        const BasicTensor<T>&, T);                                \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                      \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                      \
  template BasicTensor<T> concat_channels(const std::vector<BasicTensor<T>>&);                    \
  template BasicTensor<T> linear_combination(const std::vector<BasicTensor<T>>&,                  \
                                             const std::vector<T>&, T);                           \
  template BasicTensor<T> softmax_channels(const BasicTensor<T>&);                                \
  template BasicTensor<T> log(const BasicTensor<T>&);                                             \
  template BasicTensor<T> exp(const BasicTensor<T>&);                                             \
  template BasicTensor<T> sum(const BasicTensor<T>&, const std::vector<std::size_t>&);            \
  template BasicTensor<T> mean(const BasicTensor<T>&, const std::vector<std::size_t>&);           \
  template BasicTensor<T> sum_all(const BasicTensor<T>&);                                         \
  template BasicTensor<T> mean_all(const BasicTensor<T>&);                                        \
  template BasicTensor<T> one_hot<T>(const LabelBatch&, std::size_t);

DUST_INSTANTIATE_OPS(float)
DUST_INSTANTIATE_OPS(double)
DUST_INSTANTIATE_OPS(long double)

#undef DUST_INSTANTIATE_OPS

}  // namespace dust
