#include "ganimc/ops.hpp"

#ifndef EIGEN_DONT_PARALLELIZE
#define EIGEN_DONT_PARALLELIZE
#endif
#include <Eigen/Core>

#include <cmath>
#include <cstring>

#include "ganimc/error.hpp"
#include "ganimc/log.hpp"

namespace ganimc::ops {

namespace {

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using CMapM = Eigen::Map<const MatRM>;

void check_same(const TensorPtr& a, const TensorPtr& b, const char* op) {
  if (!same_shape(*a, *b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a->shape) +
                     " vs " + shape_str(b->shape));
  }
}

void check_rank(const TensorPtr& t, int rank, const char* op, const char* arg) {
  if (t->rank() != rank) {
    throw ShapeError(std::string(op) + ": " + arg + " must be rank " +
                     std::to_string(rank) + ", got " + shape_str(t->shape));
  }
}

bool any_grad(std::initializer_list<TensorPtr> ts) {
  for (const auto& t : ts) {
    if (t && t->requires_grad) return true;
  }
  return false;
}

// Elementwise op with f(a) forward and df(a, g) gradient factor.
template <class F, class DF>
TensorPtr unary_ew(const TensorPtr& x, F f, DF df) {
  auto out = make_tensor(x->shape, x->requires_grad);
  const size_t n = x->data.size();
  for (size_t i = 0; i < n; ++i) out->data[i] = f(x->data[i]);
  if (out->requires_grad) {
    out->parents = {x};
    Tensor* self = out.get();
    out->backward_fn = [self, x, df] {
      if (!self->has_grad()) return;
      x->ensure_grad();
      const size_t m = x->data.size();
      for (size_t i = 0; i < m; ++i) {
        x->grad[i] += self->grad[i] * df(x->data[i], self->data[i]);
      }
    };
  }
  return out;
}

void im2col(const float* x, int C, int H, int W, int k, int stride, int pad, int OH,
            int OW, float* col) {
  for (int c = 0; c < C; ++c) {
    const float* xc = x + static_cast<size_t>(c) * H * W;
    for (int kh = 0; kh < k; ++kh) {
      for (int kw = 0; kw < k; ++kw) {
        float* row = col + (static_cast<size_t>(c * k + kh) * k + kw) * OH * OW;
        for (int oh = 0; oh < OH; ++oh) {
          const int ih = oh * stride - pad + kh;
          float* dst = row + static_cast<size_t>(oh) * OW;
          if (ih < 0 || ih >= H) {
            std::fill(dst, dst + OW, 0.0f);
            continue;
          }
          const float* xr = xc + static_cast<size_t>(ih) * W;
          for (int ow = 0; ow < OW; ++ow) {
            const int iw = ow * stride - pad + kw;
            dst[ow] = (iw >= 0 && iw < W) ? xr[iw] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im_acc(const float* col, int C, int H, int W, int k, int stride, int pad,
                int OH, int OW, float* gx) {
  for (int c = 0; c < C; ++c) {
    float* gc = gx + static_cast<size_t>(c) * H * W;
    for (int kh = 0; kh < k; ++kh) {
      for (int kw = 0; kw < k; ++kw) {
        const float* row = col + (static_cast<size_t>(c * k + kh) * k + kw) * OH * OW;
        for (int oh = 0; oh < OH; ++oh) {
          const int ih = oh * stride - pad + kh;
          if (ih < 0 || ih >= H) continue;
          float* gr = gc + static_cast<size_t>(ih) * W;
          const float* src = row + static_cast<size_t>(oh) * OW;
          for (int ow = 0; ow < OW; ++ow) {
            const int iw = ow * stride - pad + kw;
            if (iw >= 0 && iw < W) gr[iw] += src[ow];
          }
        }
      }
    }
  }
}

// Symmetric reflection with edge repeat: -1 -> 0, -2 -> 1, n -> n-1, n+1 -> n-2.
inline int reflect_index(int i, int n) {
  if (i < 0) return -i - 1;
  if (i >= n) return 2 * n - 1 - i;
  return i;
}

}  // namespace

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
  check_same(a, b, "add");
  auto out = make_tensor(a->shape, any_grad({a, b}));
  const size_t n = a->data.size();
  for (size_t i = 0; i < n; ++i) out->data[i] = a->data[i] + b->data[i];
  if (out->requires_grad) {
    out->parents = {a, b};
    Tensor* self = out.get();
    out->backward_fn = [self, a, b] {
      if (!self->has_grad()) return;
      const size_t m = self->data.size();
      if (a->requires_grad) {
        a->ensure_grad();
        for (size_t i = 0; i < m; ++i) a->grad[i] += self->grad[i];
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (size_t i = 0; i < m; ++i) b->grad[i] += self->grad[i];
      }
    };
  }
  return out;
}

TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
  check_same(a, b, "sub");
  auto out = make_tensor(a->shape, any_grad({a, b}));
  const size_t n = a->data.size();
  for (size_t i = 0; i < n; ++i) out->data[i] = a->data[i] - b->data[i];
  if (out->requires_grad) {
    out->parents = {a, b};
    Tensor* self = out.get();
    out->backward_fn = [self, a, b] {
      if (!self->has_grad()) return;
      const size_t m = self->data.size();
      if (a->requires_grad) {
        a->ensure_grad();
        for (size_t i = 0; i < m; ++i) a->grad[i] += self->grad[i];
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (size_t i = 0; i < m; ++i) b->grad[i] -= self->grad[i];
      }
    };
  }
  return out;
}

TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
  check_same(a, b, "mul");
  auto out = make_tensor(a->shape, any_grad({a, b}));
  const size_t n = a->data.size();
  for (size_t i = 0; i < n; ++i) out->data[i] = a->data[i] * b->data[i];
  if (out->requires_grad) {
    out->parents = {a, b};
    Tensor* self = out.get();
    out->backward_fn = [self, a, b] {
      if (!self->has_grad()) return;
      const size_t m = self->data.size();
      if (a->requires_grad) {
        a->ensure_grad();
        for (size_t i = 0; i < m; ++i) a->grad[i] += self->grad[i] * b->data[i];
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (size_t i = 0; i < m; ++i) b->grad[i] += self->grad[i] * a->data[i];
      }
    };
  }
  return out;
}

TensorPtr square(const TensorPtr& x) {
  return unary_ew(
      x, [](float v) { return v * v; },
      [](float v, float) { return 2.0f * v; });
}

TensorPtr affine(const TensorPtr& x, float scale_, float shift) {
  return unary_ew(
      x, [scale_, shift](float v) { return scale_ * v + shift; },
      [scale_](float, float) { return scale_; });
}

TensorPtr scale(const TensorPtr& x, float s) { return affine(x, s, 0.0f); }

TensorPtr ln(const TensorPtr& x) {
  return unary_ew(
      x, [](float v) { return std::log(v); },
      [](float v, float) { return 1.0f / v; });
}

TensorPtr clamp(const TensorPtr& x, float lo, float hi) {
  if (!(lo <= hi)) throw ContractError("clamp: lo > hi");
  return unary_ew(
      x,
      [lo, hi](float v) { return v < lo ? lo : (v > hi ? hi : v); },
      [lo, hi](float v, float) { return (v >= lo && v <= hi) ? 1.0f : 0.0f; });
}

TensorPtr sum_all(const TensorPtr& x) {
  auto out = make_tensor({1}, x->requires_grad);
  double acc = 0.0;
  for (float v : x->data) acc += v;
  out->data[0] = static_cast<float>(acc);
  if (out->requires_grad) {
    out->parents = {x};
    Tensor* self = out.get();
    out->backward_fn = [self, x] {
      if (!self->has_grad()) return;
      x->ensure_grad();
      const float g = self->grad[0];
      for (float& gi : x->grad) gi += g;
    };
  }
  return out;
}

TensorPtr mean_all(const TensorPtr& x) {
  auto out = make_tensor({1}, x->requires_grad);
  double acc = 0.0;
  for (float v : x->data) acc += v;
  const double inv = 1.0 / static_cast<double>(x->numel());
  out->data[0] = static_cast<float>(acc * inv);
  if (out->requires_grad) {
    out->parents = {x};
    Tensor* self = out.get();
    const float invf = static_cast<float>(inv);
    out->backward_fn = [self, x, invf] {
      if (!self->has_grad()) return;
      x->ensure_grad();
      const float g = self->grad[0] * invf;
      for (float& gi : x->grad) gi += g;
    };
  }
  return out;
}

TensorPtr sum_channels(const TensorPtr& x) {
  check_rank(x, 4, "sum_channels", "input");
  const int N = x->dim(0), C = x->dim(1), H = x->dim(2), W = x->dim(3);
  const size_t hw = static_cast<size_t>(H) * W;
  auto out = make_tensor({N, 1, H, W}, x->requires_grad);
  for (int n = 0; n < N; ++n) {
    float* dst = out->data.data() + n * hw;
    for (int c = 0; c < C; ++c) {
      const float* src = x->data.data() + (static_cast<size_t>(n) * C + c) * hw;
      for (size_t i = 0; i < hw; ++i) dst[i] += src[i];
    }
  }
  if (out->requires_grad) {
    out->parents = {x};
    Tensor* self = out.get();
    out->backward_fn = [self, x, N, C, hw] {
      if (!self->has_grad()) return;
      x->ensure_grad();
      for (int n = 0; n < N; ++n) {
        const float* g = self->grad.data() + n * hw;
        for (int c = 0; c < C; ++c) {
          float* gx = x->grad.data() + (static_cast<size_t>(n) * C + c) * hw;
          for (size_t i = 0; i < hw; ++i) gx[i] += g[i];
        }
      }
    };
  }
  return out;
}

TensorPtr channel_weighted_sum(const TensorPtr& x, const std::vector<float>& w) {
  check_rank(x, 4, "channel_weighted_sum", "input");
  const int N = x->dim(0), C = x->dim(1), H = x->dim(2), W = x->dim(3);
  if (static_cast<int>(w.size()) != C) {
    throw ShapeError("channel_weighted_sum: " + std::to_string(w.size()) +
                     " weights for " + std::to_string(C) + " channels");
  }
  const size_t hw = static_cast<size_t>(H) * W;
  auto out = make_tensor({N, 1, H, W}, x->requires_grad);
  for (int n = 0; n < N; ++n) {
    float* dst = out->data.data() + n * hw;
    for (int c = 0; c < C; ++c) {
      const float wc = w[static_cast<size_t>(c)];
      const float* src = x->data.data() + (static_cast<size_t>(n) * C + c) * hw;
      for (size_t i = 0; i < hw; ++i) dst[i] += wc * src[i];
    }
  }
  if (out->requires_grad) {
    out->parents = {x};
    Tensor* self = out.get();
    out->backward_fn = [self, x, w, N, C, hw] {
      if (!self->has_grad()) return;
      x->ensure_grad();
      for (int n = 0; n < N; ++n) {
        const float* g = self->grad.data() + n * hw;
        for (int c = 0; c < C; ++c) {
          const float wc = w[static_cast<size_t>(c)];
          float* gx = x->grad.data() + (static_cast<size_t>(n) * C + c) * hw;
          for (size_t i = 0; i < hw; ++i) gx[i] += wc * g[i];
        }
      }
    };
  }
  return out;
}

TensorPtr sub_channel_mean(const TensorPtr& x, const std::vector<float>& mean) {
  check_rank(x, 4, "sub_channel_mean", "input");
  const int N = x->dim(0), C = x->dim(1), H = x->dim(2), W = x->dim(3);
  if (static_cast<int>(mean.size()) != C) {
    throw ShapeError("sub_channel_mean: " + std::to_string(mean.size()) +
                     " offsets for " + std::to_string(C) + " channels");
  }
  const size_t hw = static_cast<size_t>(H) * W;
  auto out = make_tensor(x->shape, x->requires_grad);
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const float mc = mean[static_cast<size_t>(c)];
      const size_t base = (static_cast<size_t>(n) * C + c) * hw;
      for (size_t i = 0; i < hw; ++i) out->data[base + i] = x->data[base + i] - mc;
    }
  }
  if (out->requires_grad) {
    out->parents = {x};
    Tensor* self = out.get();
    out->backward_fn = [self, x] {
      if (!self->has_grad()) return;
      x->ensure_grad();
      const size_t m = x->data.size();
      for (size_t i = 0; i < m; ++i) x->grad[i] += self->grad[i];
    };
  }
  return out;
}

TensorPtr mul_spatial(const TensorPtr& x, const TensorPtr& map) {
  check_rank(x, 4, "mul_spatial", "input");
  check_rank(map, 4, "mul_spatial", "map");
  if (map->dim(0) != x->dim(0) || map->dim(1) != 1 || map->dim(2) != x->dim(2) ||
      map->dim(3) != x->dim(3)) {
    throw ShapeError("mul_spatial: map " + shape_str(map->shape) +
                     " does not broadcast over " + shape_str(x->shape));
  }
  const int N = x->dim(0), C = x->dim(1);
  const size_t hw = static_cast<size_t>(x->dim(2)) * x->dim(3);
  auto out = make_tensor(x->shape, any_grad({x, map}));
  for (int n = 0; n < N; ++n) {
    const float* m = map->data.data() + n * hw;
    for (int c = 0; c < C; ++c) {
      const size_t base = (static_cast<size_t>(n) * C + c) * hw;
      for (size_t i = 0; i < hw; ++i) out->data[base + i] = x->data[base + i] * m[i];
    }
  }
  if (out->requires_grad) {
    out->parents = {x, map};
    Tensor* self = out.get();
    out->backward_fn = [self, x, map, N, C, hw] {
      if (!self->has_grad()) return;
      if (x->requires_grad) {
        x->ensure_grad();
        for (int n = 0; n < N; ++n) {
          const float* m = map->data.data() + n * hw;
          for (int c = 0; c < C; ++c) {
            const size_t base = (static_cast<size_t>(n) * C + c) * hw;
            for (size_t i = 0; i < hw; ++i) x->grad[base + i] += self->grad[base + i] * m[i];
          }
        }
      }
      if (map->requires_grad) {
        map->ensure_grad();
        for (int n = 0; n < N; ++n) {
          float* gm = map->grad.data() + n * hw;
          for (int c = 0; c < C; ++c) {
            const size_t base = (static_cast<size_t>(n) * C + c) * hw;
            for (size_t i = 0; i < hw; ++i) gm[i] += self->grad[base + i] * x->data[base + i];
          }
        }
      }
    };
  }
  return out;
}

TensorPtr l2_normalize_spatial(const TensorPtr& f) {
  check_rank(f, 4, "l2_normalize_spatial", "input");
  if (f->dim(1) != 1) {
    throw ShapeError("l2_normalize_spatial: expected a single-channel map, got " +
                     shape_str(f->shape));
  }
  const int N = f->dim(0);
  const size_t hw = static_cast<size_t>(f->dim(2)) * f->dim(3);
  auto out = make_tensor(f->shape, f->requires_grad);
  auto norms = std::make_shared<std::vector<float>>(static_cast<size_t>(N));
  auto degenerate = std::make_shared<std::vector<char>>(static_cast<size_t>(N), 0);
  const float uniform = 1.0f / std::sqrt(static_cast<float>(hw));
  for (int n = 0; n < N; ++n) {
    const float* src = f->data.data() + n * hw;
    double sq = 0.0;
    for (size_t i = 0; i < hw; ++i) sq += static_cast<double>(src[i]) * src[i];
    const float r = static_cast<float>(std::sqrt(sq));
    (*norms)[static_cast<size_t>(n)] = r;
    float* dst = out->data.data() + n * hw;
    if (r < 1e-12f) {
      (*degenerate)[static_cast<size_t>(n)] = 1;
      warn("l2_normalize_spatial: zero map for batch item " + std::to_string(n) +
           ", substituting a uniform map");
      std::fill(dst, dst + hw, uniform);
    } else {
      const float inv = 1.0f / r;
      for (size_t i = 0; i < hw; ++i) dst[i] = src[i] * inv;
    }
  }
  if (out->requires_grad) {
    out->parents = {f};
    Tensor* self = out.get();
    out->backward_fn = [self, f, norms, degenerate, N, hw] {
      if (!self->has_grad()) return;
      f->ensure_grad();
      for (int n = 0; n < N; ++n) {
        if ((*degenerate)[static_cast<size_t>(n)]) continue;
        const float* g = self->grad.data() + n * hw;
        const float* a = self->data.data() + n * hw;
        float* gf = f->grad.data() + n * hw;
        double dot = 0.0;
        for (size_t i = 0; i < hw; ++i) dot += static_cast<double>(g[i]) * a[i];
        const float d = static_cast<float>(dot);
        const float inv = 1.0f / (*norms)[static_cast<size_t>(n)];
        for (size_t i = 0; i < hw; ++i) gf[i] += (g[i] - a[i] * d) * inv;
      }
    };
  }
  return out;
}

TensorPtr conv2d(const TensorPtr& x, const TensorPtr& w, const TensorPtr& bias,
                 int stride, int padding) {
  check_rank(x, 4, "conv2d", "input");
  check_rank(w, 4, "conv2d", "weight");
  if (stride < 1) throw ContractError("conv2d: stride must be >= 1");
  if (padding < 0) throw ContractError("conv2d: padding must be >= 0");
  const int N = x->dim(0), C = x->dim(1), H = x->dim(2), W = x->dim(3);
  const int OC = w->dim(0), k = w->dim(2);
  if (w->dim(1) != C) {
    throw ShapeError("conv2d: weight expects " + std::to_string(w->dim(1)) +
                     " input channels, input has " + std::to_string(C));
  }
  if (w->dim(3) != k) {
    throw ShapeError("conv2d: kernel must be square, got " + shape_str(w->shape));
  }
  if (bias) {
    check_rank(bias, 1, "conv2d", "bias");
    if (bias->dim(0) != OC) {
      throw ShapeError("conv2d: bias size " + std::to_string(bias->dim(0)) +
                       " vs " + std::to_string(OC) + " output channels");
    }
  }
  const int OH = (H + 2 * padding - k) / stride + 1;
  const int OW = (W + 2 * padding - k) / stride + 1;
  if (H + 2 * padding < k || W + 2 * padding < k) {
    throw ShapeError("conv2d: kernel " + std::to_string(k) + " exceeds padded input " +
                     shape_str(x->shape) + " with padding " + std::to_string(padding));
  }
  const int ckk = C * k * k;
  const size_t ohw = static_cast<size_t>(OH) * OW;

  auto out = make_tensor({N, OC, OH, OW}, any_grad({x, w, bias}));
  std::vector<float> col(static_cast<size_t>(ckk) * ohw);
  CMapM wm(w->data.data(), OC, ckk);
  for (int n = 0; n < N; ++n) {
    im2col(x->data.data() + static_cast<size_t>(n) * C * H * W, C, H, W, k, stride,
           padding, OH, OW, col.data());
    CMapM cm(col.data(), ckk, static_cast<Eigen::Index>(ohw));
    MapM ym(out->data.data() + static_cast<size_t>(n) * OC * ohw, OC,
            static_cast<Eigen::Index>(ohw));
    ym.noalias() = wm * cm;
    if (bias) {
      for (int oc = 0; oc < OC; ++oc) ym.row(oc).array() += bias->data[static_cast<size_t>(oc)];
    }
  }

  if (out->requires_grad) {
    out->parents = bias ? std::vector<TensorPtr>{x, w, bias} : std::vector<TensorPtr>{x, w};
    Tensor* self = out.get();
    out->backward_fn = [self, x, w, bias, stride, padding, N, C, H, W, OC, k, OH, OW,
                        ckk, ohw] {
      if (!self->has_grad()) return;
      std::vector<float> col(static_cast<size_t>(ckk) * ohw);
      std::vector<float> gcol;
      if (x->requires_grad) {
        x->ensure_grad();
        gcol.resize(static_cast<size_t>(ckk) * ohw);
      }
      if (w->requires_grad) w->ensure_grad();
      if (bias && bias->requires_grad) bias->ensure_grad();
      CMapM wm(w->data.data(), OC, ckk);
      for (int n = 0; n < N; ++n) {
        CMapM gym(self->grad.data() + static_cast<size_t>(n) * OC * ohw, OC,
                  static_cast<Eigen::Index>(ohw));
        if (w->requires_grad || x->requires_grad) {
          im2col(x->data.data() + static_cast<size_t>(n) * C * H * W, C, H, W, k,
                 stride, padding, OH, OW, col.data());
        }
        if (w->requires_grad) {
          CMapM cm(col.data(), ckk, static_cast<Eigen::Index>(ohw));
          MapM gwm(w->grad.data(), OC, ckk);
          gwm.noalias() += gym * cm.transpose();
        }
        if (x->requires_grad) {
          MapM gcm(gcol.data(), ckk, static_cast<Eigen::Index>(ohw));
          gcm.noalias() = wm.transpose() * gym;
          col2im_acc(gcol.data(), C, H, W, k, stride, padding, OH, OW,
                     x->grad.data() + static_cast<size_t>(n) * C * H * W);
        }
        if (bias && bias->requires_grad) {
          // Fixed-order accumulation: a vectorized reduction would order the
          // sum by the buffer's runtime alignment, making twin seeded runs
          // drift in the last ulp.
          const float* gb = self->grad.data() + static_cast<size_t>(n) * OC * ohw;
          for (int oc = 0; oc < OC; ++oc) {
            double s = 0.0;
            const float* row = gb + static_cast<size_t>(oc) * ohw;
            for (size_t i = 0; i < static_cast<size_t>(ohw); ++i) s += row[i];
            bias->grad[static_cast<size_t>(oc)] += static_cast<float>(s);
          }
        }
      }
    };
  }
  return out;
}

TensorPtr fully_connected(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b) {
  check_rank(x, 2, "fully_connected", "input");
  check_rank(w, 2, "fully_connected", "weight");
  const int N = x->dim(0), F = x->dim(1), O = w->dim(0);
  if (w->dim(1) != F) {
    throw ShapeError("fully_connected: weight expects " + std::to_string(w->dim(1)) +
                     " features, input has " + std::to_string(F));
  }
  if (b) {
    check_rank(b, 1, "fully_connected", "bias");
    if (b->dim(0) != O) {
      throw ShapeError("fully_connected: bias size " + std::to_string(b->dim(0)) +
                       " vs " + std::to_string(O) + " outputs");
    }
  }
  auto out = make_tensor({N, O}, any_grad({x, w, b}));
  CMapM xm(x->data.data(), N, F);
  CMapM wm(w->data.data(), O, F);
  MapM ym(out->data.data(), N, O);
  ym.noalias() = xm * wm.transpose();
  if (b) {
    for (int n = 0; n < N; ++n) {
      for (int o = 0; o < O; ++o) ym(n, o) += b->data[static_cast<size_t>(o)];
    }
  }
  if (out->requires_grad) {
    out->parents = b ? std::vector<TensorPtr>{x, w, b} : std::vector<TensorPtr>{x, w};
    Tensor* self = out.get();
    out->backward_fn = [self, x, w, b, N, F, O] {
      if (!self->has_grad()) return;
      CMapM gym(self->grad.data(), N, O);
      if (x->requires_grad) {
        x->ensure_grad();
        MapM gxm(x->grad.data(), N, F);
        CMapM wm(w->data.data(), O, F);
        gxm.noalias() += gym * wm;
      }
      if (w->requires_grad) {
        w->ensure_grad();
        MapM gwm(w->grad.data(), O, F);
        CMapM xm(x->data.data(), N, F);
        gwm.noalias() += gym.transpose() * xm;
      }
      if (b && b->requires_grad) {
        b->ensure_grad();
        for (int o = 0; o < O; ++o) {
          double acc = 0.0;
          for (int n = 0; n < N; ++n) acc += gym(n, o);
          b->grad[static_cast<size_t>(o)] += static_cast<float>(acc);
        }
      }
    };
  }
  return out;
}

TensorPtr leaky_relu(const TensorPtr& x, float slope) {
  if (!(slope > 0.0f && slope < 1.0f)) {
    throw ContractError("leaky_relu: slope must lie in (0,1)");
  }
  return unary_ew(
      x, [slope](float v) { return v > 0.0f ? v : slope * v; },
      [slope](float v, float) { return v > 0.0f ? 1.0f : slope; });
}

TensorPtr relu(const TensorPtr& x) {
  return unary_ew(
      x, [](float v) { return v > 0.0f ? v : 0.0f; },
      [](float v, float) { return v > 0.0f ? 1.0f : 0.0f; });
}

TensorPtr sigmoid(const TensorPtr& x) {
  return unary_ew(
      x,
      [](float v) {
        if (v >= 0.0f) return 1.0f / (1.0f + std::exp(-v));
        const float e = std::exp(v);
        return e / (1.0f + e);
      },
      [](float, float y) { return y * (1.0f - y); });
}

TensorPtr batch_norm(const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                     const TensorPtr& running_mean, const TensorPtr& running_var,
                     bool training, float momentum, float eps, bool update_running) {
  check_rank(x, 4, "batch_norm", "input");
  const int N = x->dim(0), C = x->dim(1), H = x->dim(2), W = x->dim(3);
  auto check_param = [C](const TensorPtr& t, const char* name) {
    check_rank(t, 1, "batch_norm", name);
    if (t->dim(0) != C) {
      throw ShapeError(std::string("batch_norm: ") + name + " size " +
                       std::to_string(t->dim(0)) + " vs " + std::to_string(C) +
                       " channels");
    }
  };
  check_param(gamma, "gamma");
  check_param(beta, "beta");
  check_param(running_mean, "running_mean");
  check_param(running_var, "running_var");
  if (running_mean->requires_grad || running_var->requires_grad) {
    throw ContractError("batch_norm: running statistics must not require gradients");
  }
  const size_t hw = static_cast<size_t>(H) * W;
  const int64_t m = static_cast<int64_t>(N) * H * W;

  auto out = make_tensor(x->shape, any_grad({x, gamma, beta}));
  auto inv_std = std::make_shared<std::vector<float>>(static_cast<size_t>(C));
  auto xhat = std::make_shared<std::vector<float>>();
  if (out->requires_grad) xhat->resize(x->data.size());

  for (int c = 0; c < C; ++c) {
    float mu, var;
    if (training) {
      double s = 0.0;
      for (int n = 0; n < N; ++n) {
        const float* src = x->data.data() + (static_cast<size_t>(n) * C + c) * hw;
        for (size_t i = 0; i < hw; ++i) s += src[i];
      }
      mu = static_cast<float>(s / static_cast<double>(m));
      double sq = 0.0;
      for (int n = 0; n < N; ++n) {
        const float* src = x->data.data() + (static_cast<size_t>(n) * C + c) * hw;
        for (size_t i = 0; i < hw; ++i) {
          const double d = static_cast<double>(src[i]) - mu;
          sq += d * d;
        }
      }
      var = static_cast<float>(sq / static_cast<double>(m));
      if (update_running) {
        const float uvar =
            m > 1 ? static_cast<float>(sq / static_cast<double>(m - 1)) : var;
        running_mean->data[static_cast<size_t>(c)] =
            (1.0f - momentum) * running_mean->data[static_cast<size_t>(c)] + momentum * mu;
        running_var->data[static_cast<size_t>(c)] =
            (1.0f - momentum) * running_var->data[static_cast<size_t>(c)] + momentum * uvar;
      }
    } else {
      mu = running_mean->data[static_cast<size_t>(c)];
      var = running_var->data[static_cast<size_t>(c)];
    }
    const float is = 1.0f / std::sqrt(var + eps);
    (*inv_std)[static_cast<size_t>(c)] = is;
    const float gc = gamma->data[static_cast<size_t>(c)];
    const float bc = beta->data[static_cast<size_t>(c)];
    for (int n = 0; n < N; ++n) {
      const size_t base = (static_cast<size_t>(n) * C + c) * hw;
      for (size_t i = 0; i < hw; ++i) {
        const float xv = (x->data[base + i] - mu) * is;
        if (!xhat->empty()) (*xhat)[base + i] = xv;
        out->data[base + i] = gc * xv + bc;
      }
    }
  }

  if (out->requires_grad) {
    out->parents = {x, gamma, beta};
    Tensor* self = out.get();
    out->backward_fn = [self, x, gamma, beta, inv_std, xhat, training, N, C, hw, m] {
      if (!self->has_grad()) return;
      if (x->requires_grad) x->ensure_grad();
      if (gamma->requires_grad) gamma->ensure_grad();
      if (beta->requires_grad) beta->ensure_grad();
      const double invm = 1.0 / static_cast<double>(m);
      for (int c = 0; c < C; ++c) {
        double s1 = 0.0, s2 = 0.0;
        for (int n = 0; n < N; ++n) {
          const size_t base = (static_cast<size_t>(n) * C + c) * hw;
          for (size_t i = 0; i < hw; ++i) {
            const float g = self->grad[base + i];
            s1 += g;
            s2 += static_cast<double>(g) * (*xhat)[base + i];
          }
        }
        if (gamma->requires_grad) gamma->grad[static_cast<size_t>(c)] += static_cast<float>(s2);
        if (beta->requires_grad) beta->grad[static_cast<size_t>(c)] += static_cast<float>(s1);
        if (!x->requires_grad) continue;
        const float gc = gamma->data[static_cast<size_t>(c)];
        const float is = (*inv_std)[static_cast<size_t>(c)];
        if (training) {
          const float mg = static_cast<float>(s1 * invm);
          const float mgx = static_cast<float>(s2 * invm);
          for (int n = 0; n < N; ++n) {
            const size_t base = (static_cast<size_t>(n) * C + c) * hw;
            for (size_t i = 0; i < hw; ++i) {
              x->grad[base + i] +=
                  gc * is * (self->grad[base + i] - mg - (*xhat)[base + i] * mgx);
            }
          }
        } else {
          for (int n = 0; n < N; ++n) {
            const size_t base = (static_cast<size_t>(n) * C + c) * hw;
            for (size_t i = 0; i < hw; ++i) x->grad[base + i] += gc * is * self->grad[base + i];
          }
        }
      }
    };
  }
  return out;
}

TensorPtr maxpool2x2(const TensorPtr& x) {
  check_rank(x, 4, "maxpool2x2", "input");
  const int N = x->dim(0), C = x->dim(1), H = x->dim(2), W = x->dim(3);
  if (H % 2 || W % 2) {
    throw ShapeError("maxpool2x2: spatial extents must be even, got " +
                     shape_str(x->shape));
  }
  const int OH = H / 2, OW = W / 2;
  auto out = make_tensor({N, C, OH, OW}, x->requires_grad);
  auto argmax = std::make_shared<std::vector<int64_t>>(out->data.size());
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const size_t in_base = (static_cast<size_t>(n) * C + c) * H * W;
      const size_t out_base = (static_cast<size_t>(n) * C + c) * OH * OW;
      for (int oh = 0; oh < OH; ++oh) {
        for (int ow = 0; ow < OW; ++ow) {
          int64_t best = static_cast<int64_t>(in_base) + (2 * oh) * W + 2 * ow;
          float bv = x->data[static_cast<size_t>(best)];
          const int64_t cand[3] = {best + 1, best + W, best + W + 1};
          for (int64_t idx : cand) {
            const float v = x->data[static_cast<size_t>(idx)];
            if (v > bv) {
              bv = v;
              best = idx;
            }
          }
          out->data[out_base + static_cast<size_t>(oh) * OW + ow] = bv;
          (*argmax)[out_base + static_cast<size_t>(oh) * OW + ow] = best;
        }
      }
    }
  }
  if (out->requires_grad) {
    out->parents = {x};
    Tensor* self = out.get();
    out->backward_fn = [self, x, argmax] {
      if (!self->has_grad()) return;
      x->ensure_grad();
      const size_t n = self->data.size();
      for (size_t i = 0; i < n; ++i) {
        x->grad[static_cast<size_t>((*argmax)[i])] += self->grad[i];
      }
    };
  }
  return out;
}

TensorPtr upsample_nearest2x(const TensorPtr& x) {
  check_rank(x, 4, "upsample_nearest2x", "input");
  const int N = x->dim(0), C = x->dim(1), H = x->dim(2), W = x->dim(3);
  const int OH = 2 * H, OW = 2 * W;
  auto out = make_tensor({N, C, OH, OW}, x->requires_grad);
  const int planes = N * C;
  for (int p = 0; p < planes; ++p) {
    const float* src = x->data.data() + static_cast<size_t>(p) * H * W;
    float* dst = out->data.data() + static_cast<size_t>(p) * OH * OW;
    for (int h = 0; h < H; ++h) {
      for (int w = 0; w < W; ++w) {
        const float v = src[static_cast<size_t>(h) * W + w];
        const size_t o = (static_cast<size_t>(2 * h) * OW) + 2 * w;
        dst[o] = v;
        dst[o + 1] = v;
        dst[o + OW] = v;
        dst[o + OW + 1] = v;
      }
    }
  }
  if (out->requires_grad) {
    out->parents = {x};
    Tensor* self = out.get();
    out->backward_fn = [self, x, planes, H, W, OW] {
      if (!self->has_grad()) return;
      x->ensure_grad();
      for (int p = 0; p < planes; ++p) {
        const float* g = self->grad.data() + static_cast<size_t>(p) * (2 * H) * OW;
        float* gx = x->grad.data() + static_cast<size_t>(p) * H * W;
        for (int h = 0; h < H; ++h) {
          for (int w = 0; w < W; ++w) {
            const size_t o = (static_cast<size_t>(2 * h) * OW) + 2 * w;
            gx[static_cast<size_t>(h) * W + w] += g[o] + g[o + 1] + g[o + OW] + g[o + OW + 1];
          }
        }
      }
    };
  }
  return out;
}

TensorPtr pad_reflect(const TensorPtr& x, int p) {
  check_rank(x, 4, "pad_reflect", "input");
  if (p < 0) throw ContractError("pad_reflect: negative padding");
  const int N = x->dim(0), C = x->dim(1), H = x->dim(2), W = x->dim(3);
  if (p > H || p > W) {
    throw ShapeError("pad_reflect: padding " + std::to_string(p) +
                     " exceeds input extents " + shape_str(x->shape));
  }
  const int OH = H + 2 * p, OW = W + 2 * p;
  auto out = make_tensor({N, C, OH, OW}, x->requires_grad);
  const int planes = N * C;
  for (int pl = 0; pl < planes; ++pl) {
    const float* src = x->data.data() + static_cast<size_t>(pl) * H * W;
    float* dst = out->data.data() + static_cast<size_t>(pl) * OH * OW;
    for (int oh = 0; oh < OH; ++oh) {
      const int ih = reflect_index(oh - p, H);
      const float* sr = src + static_cast<size_t>(ih) * W;
      float* dr = dst + static_cast<size_t>(oh) * OW;
      for (int ow = 0; ow < OW; ++ow) dr[ow] = sr[reflect_index(ow - p, W)];
    }
  }
  if (out->requires_grad) {
    out->parents = {x};
    Tensor* self = out.get();
    out->backward_fn = [self, x, planes, H, W, OH, OW, p] {
      if (!self->has_grad()) return;
      x->ensure_grad();
      for (int pl = 0; pl < planes; ++pl) {
        const float* g = self->grad.data() + static_cast<size_t>(pl) * OH * OW;
        float* gx = x->grad.data() + static_cast<size_t>(pl) * H * W;
        for (int oh = 0; oh < OH; ++oh) {
          const int ih = reflect_index(oh - p, H);
          const float* gr = g + static_cast<size_t>(oh) * OW;
          float* gxr = gx + static_cast<size_t>(ih) * W;
          for (int ow = 0; ow < OW; ++ow) gxr[reflect_index(ow - p, W)] += gr[ow];
        }
      }
    };
  }
  return out;
}

TensorPtr depthwise_conv_valid(const TensorPtr& x, const std::vector<float>& kernel,
                               int ksize) {
  check_rank(x, 4, "depthwise_conv_valid", "input");
  if (ksize < 1 || static_cast<int>(kernel.size()) != ksize * ksize) {
    throw ContractError("depthwise_conv_valid: kernel size " +
                        std::to_string(kernel.size()) + " does not match k=" +
                        std::to_string(ksize));
  }
  const int N = x->dim(0), C = x->dim(1), H = x->dim(2), W = x->dim(3);
  if (H < ksize || W < ksize) {
    throw ShapeError("depthwise_conv_valid: kernel " + std::to_string(ksize) +
                     " exceeds input " + shape_str(x->shape));
  }
  const int OH = H - ksize + 1, OW = W - ksize + 1;
  auto out = make_tensor({N, C, OH, OW}, x->requires_grad);
  const int planes = N * C;
  for (int pl = 0; pl < planes; ++pl) {
    const float* src = x->data.data() + static_cast<size_t>(pl) * H * W;
    float* dst = out->data.data() + static_cast<size_t>(pl) * OH * OW;
    for (int oh = 0; oh < OH; ++oh) {
      for (int ow = 0; ow < OW; ++ow) {
        double acc = 0.0;
        for (int kh = 0; kh < ksize; ++kh) {
          const float* sr = src + static_cast<size_t>(oh + kh) * W + ow;
          const float* kr = kernel.data() + static_cast<size_t>(kh) * ksize;
          for (int kw = 0; kw < ksize; ++kw) acc += static_cast<double>(kr[kw]) * sr[kw];
        }
        dst[static_cast<size_t>(oh) * OW + ow] = static_cast<float>(acc);
      }
    }
  }
  if (out->requires_grad) {
    out->parents = {x};
    Tensor* self = out.get();
    out->backward_fn = [self, x, kernel, ksize, planes, H, W, OH, OW] {
      if (!self->has_grad()) return;
      x->ensure_grad();
      for (int pl = 0; pl < planes; ++pl) {
        const float* g = self->grad.data() + static_cast<size_t>(pl) * OH * OW;
        float* gx = x->grad.data() + static_cast<size_t>(pl) * H * W;
        for (int oh = 0; oh < OH; ++oh) {
          for (int ow = 0; ow < OW; ++ow) {
            const float gv = g[static_cast<size_t>(oh) * OW + ow];
            if (gv == 0.0f) continue;
            for (int kh = 0; kh < ksize; ++kh) {
              float* gr = gx + static_cast<size_t>(oh + kh) * W + ow;
              const float* kr = kernel.data() + static_cast<size_t>(kh) * ksize;
              for (int kw = 0; kw < ksize; ++kw) gr[kw] += kr[kw] * gv;
            }
          }
        }
      }
    };
  }
  return out;
}

TensorPtr flatten2d(const TensorPtr& x) {
  check_rank(x, 4, "flatten2d", "input");
  const int N = x->dim(0);
  const int F = x->dim(1) * x->dim(2) * x->dim(3);
  auto out = make_tensor({N, F}, x->requires_grad);
  out->data = x->data;
  if (out->requires_grad) {
    out->parents = {x};
    Tensor* self = out.get();
    out->backward_fn = [self, x] {
      if (!self->has_grad()) return;
      x->ensure_grad();
      const size_t n = x->data.size();
      for (size_t i = 0; i < n; ++i) x->grad[i] += self->grad[i];
    };
  }
  return out;
}

}  // namespace ganimc::ops
