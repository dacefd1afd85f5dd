#include "blocknas/ops.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace blocknas {

std::string format_extents(const Extents& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "x" : "") << shape[i];
  out << ']';
  return out.str();
}

}  // namespace blocknas

namespace blocknas::ops {

namespace {

void require_rank(const Extents& s, std::size_t rank, const char* what) {
  if (s.size() != rank)
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " + format_extents(s));
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": shape " + format_extents(a.shape()) + " vs " + format_extents(b.shape()));
}

struct ConvGeometry {
  std::size_t n, h, w, cin, kh, kw, cout, oh, ow;
  int stride, pad_h, pad_w;
};

template <typename T>
ConvGeometry conv_geometry(const Tensor<T>& x, const Tensor<T>& w, int stride, bool depthwise) {
  require_rank(x.shape(), 4, "conv input");
  require_rank(w.shape(), depthwise ? 3 : 4, "conv weight");
  if (stride < 1) throw ShapeError("conv stride must be >= 1");
  ConvGeometry g{};
  g.n = x.dim(0);
  g.h = x.dim(1);
  g.w = x.dim(2);
  g.cin = x.dim(3);
  g.kh = w.dim(0);
  g.kw = w.dim(1);
  if (w.dim(2) != g.cin)
    throw ShapeError("conv channel mismatch: input has " + std::to_string(g.cin) + " channels, weight expects " +
                     std::to_string(w.dim(2)));
  g.cout = depthwise ? g.cin : w.dim(3);
  g.stride = stride;
  const auto ph = same_padding(static_cast<int>(g.h), static_cast<int>(g.kh), stride);
  const auto pw = same_padding(static_cast<int>(g.w), static_cast<int>(g.kw), stride);
  g.oh = static_cast<std::size_t>(ph.out);
  g.ow = static_cast<std::size_t>(pw.out);
  g.pad_h = ph.before;
  g.pad_w = pw.before;
  return g;
}

}  // namespace

SamePadding same_padding(int in, int kernel, int stride) {
  const int out = (in + stride - 1) / stride;
  const int total = std::max((out - 1) * stride + kernel - in, 0);
  return {out, total / 2};
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, int stride) {
  const ConvGeometry g = conv_geometry(x, w, stride, false);
  Tensor<T> y({g.n, g.oh, g.ow, g.cout});
  const T* xd = x.data();
  const T* wd = w.data();
  T* yd = y.data();
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t oy = 0; oy < g.oh; ++oy) {
      for (std::size_t ox = 0; ox < g.ow; ++ox) {
        T* yrow = yd + ((n * g.oh + oy) * g.ow + ox) * g.cout;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const long iy = static_cast<long>(oy) * g.stride - g.pad_h + static_cast<long>(ky);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const long ix = static_cast<long>(ox) * g.stride - g.pad_w + static_cast<long>(kx);
            if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
            const T* xp = xd + ((n * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)) * g.cin;
            const T* wp = wd + (ky * g.kw + kx) * g.cin * g.cout;
            for (std::size_t ci = 0; ci < g.cin; ++ci) {
              const T xv = xp[ci];
              const T* wr = wp + ci * g.cout;
              for (std::size_t co = 0; co < g.cout; ++co) yrow[co] += xv * wr[co];
            }
          }
        }
      }
    }
  }
  return y;
}

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, int stride, const Tensor<T>& dy, Tensor<T>* dx,
                     Tensor<T>* dw) {
  const ConvGeometry g = conv_geometry(x, w, stride, false);
  if (dy.shape() != Extents{g.n, g.oh, g.ow, g.cout})
    throw ShapeError("conv backward: dy shape " + format_extents(dy.shape()));
  if (dx) require_same_shape(*dx, x, "conv dx");
  if (dw) require_same_shape(*dw, w, "conv dw");
  const T* xd = x.data();
  const T* wd = w.data();
  const T* dyd = dy.data();
  T* dxd = dx ? dx->data() : nullptr;
  T* dwd = dw ? dw->data() : nullptr;
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t oy = 0; oy < g.oh; ++oy) {
      for (std::size_t ox = 0; ox < g.ow; ++ox) {
        const T* dyrow = dyd + ((n * g.oh + oy) * g.ow + ox) * g.cout;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const long iy = static_cast<long>(oy) * g.stride - g.pad_h + static_cast<long>(ky);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const long ix = static_cast<long>(ox) * g.stride - g.pad_w + static_cast<long>(kx);
            if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
            const std::size_t xoff =
                ((n * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)) * g.cin;
            const std::size_t woff = (ky * g.kw + kx) * g.cin * g.cout;
            for (std::size_t ci = 0; ci < g.cin; ++ci) {
              const T* wr = wd + woff + ci * g.cout;
              if (dwd) {
                const T xv = xd[xoff + ci];
                T* dwr = dwd + woff + ci * g.cout;
                for (std::size_t co = 0; co < g.cout; ++co) dwr[co] += xv * dyrow[co];
              }
              if (dxd) {
                T acc = 0;
                for (std::size_t co = 0; co < g.cout; ++co) acc += dyrow[co] * wr[co];
                dxd[xoff + ci] += acc;
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
Tensor<T> depthwise_conv(const Tensor<T>& x, const Tensor<T>& w, int stride) {
  const ConvGeometry g = conv_geometry(x, w, stride, true);
  Tensor<T> y({g.n, g.oh, g.ow, g.cin});
  const T* xd = x.data();
  const T* wd = w.data();
  T* yd = y.data();
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t oy = 0; oy < g.oh; ++oy) {
      for (std::size_t ox = 0; ox < g.ow; ++ox) {
        T* yrow = yd + ((n * g.oh + oy) * g.ow + ox) * g.cin;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const long iy = static_cast<long>(oy) * g.stride - g.pad_h + static_cast<long>(ky);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const long ix = static_cast<long>(ox) * g.stride - g.pad_w + static_cast<long>(kx);
            if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
            const T* xp = xd + ((n * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)) * g.cin;
            const T* wp = wd + (ky * g.kw + kx) * g.cin;
            for (std::size_t c = 0; c < g.cin; ++c) yrow[c] += xp[c] * wp[c];
          }
        }
      }
    }
  }
  return y;
}

template <typename T>
void depthwise_conv_backward(const Tensor<T>& x, const Tensor<T>& w, int stride, const Tensor<T>& dy,
                             Tensor<T>* dx, Tensor<T>* dw) {
  const ConvGeometry g = conv_geometry(x, w, stride, true);
  if (dy.shape() != Extents{g.n, g.oh, g.ow, g.cin})
    throw ShapeError("depthwise backward: dy shape " + format_extents(dy.shape()));
  if (dx) require_same_shape(*dx, x, "depthwise dx");
  if (dw) require_same_shape(*dw, w, "depthwise dw");
  const T* xd = x.data();
  const T* wd = w.data();
  const T* dyd = dy.data();
  T* dxd = dx ? dx->data() : nullptr;
  T* dwd = dw ? dw->data() : nullptr;
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t oy = 0; oy < g.oh; ++oy) {
      for (std::size_t ox = 0; ox < g.ow; ++ox) {
        const T* dyrow = dyd + ((n * g.oh + oy) * g.ow + ox) * g.cin;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const long iy = static_cast<long>(oy) * g.stride - g.pad_h + static_cast<long>(ky);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const long ix = static_cast<long>(ox) * g.stride - g.pad_w + static_cast<long>(kx);
            if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
            const std::size_t xoff =
                ((n * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)) * g.cin;
            const std::size_t woff = (ky * g.kw + kx) * g.cin;
            if (dwd)
              for (std::size_t c = 0; c < g.cin; ++c) dwd[woff + c] += xd[xoff + c] * dyrow[c];
            if (dxd)
              for (std::size_t c = 0; c < g.cin; ++c) dxd[xoff + c] += wd[woff + c] * dyrow[c];
          }
        }
      }
    }
  }
}

template <typename T>
Tensor<T> batch_norm_train(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                           BatchNormCache<T>& cache, double eps) {
  require_rank(x.shape(), 4, "batch_norm input");
  const std::size_t c = x.dim(3);
  if (gamma.size() != c || beta.size() != c)
    throw ShapeError("batch_norm: gamma/beta length differs from channel count " + std::to_string(c));
  if (x.dim(0) < 2) throw ConfigError("batch_norm in train mode needs a batch of at least 2");
  const std::size_t m = x.size() / c;
  std::vector<double> sum(c, 0.0), sq(c, 0.0);
  const T* xd = x.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = 0; k < c; ++k) sum[k] += static_cast<double>(xd[i * c + k]);
  cache.mean.assign(c, T{0});
  for (std::size_t k = 0; k < c; ++k) cache.mean[k] = static_cast<T>(sum[k] / static_cast<double>(m));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = 0; k < c; ++k) {
      const double d = static_cast<double>(xd[i * c + k]) - static_cast<double>(cache.mean[k]);
      sq[k] += d * d;
    }
  cache.var.assign(c, T{0});
  cache.inv_std.assign(c, T{0});
  for (std::size_t k = 0; k < c; ++k) {
    const double var = sq[k] / static_cast<double>(m);
    cache.var[k] = static_cast<T>(var);
    cache.inv_std[k] = static_cast<T>(1.0 / std::sqrt(var + eps));
  }
  cache.xhat = Tensor<T>(x.shape());
  Tensor<T> y(x.shape());
  T* xh = cache.xhat.data();
  T* yd = y.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = 0; k < c; ++k) {
      const T v = (xd[i * c + k] - cache.mean[k]) * cache.inv_std[k];
      xh[i * c + k] = v;
      yd[i * c + k] = gamma[k] * v + beta[k];
    }
  return y;
}

template <typename T>
Tensor<T> batch_norm_eval(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                          const Tensor<T>& running_mean, const Tensor<T>& running_var, double eps) {
  require_rank(x.shape(), 4, "batch_norm input");
  const std::size_t c = x.dim(3);
  if (gamma.size() != c || beta.size() != c || running_mean.size() != c || running_var.size() != c)
    throw ShapeError("batch_norm: parameter length differs from channel count " + std::to_string(c));
  std::vector<T> scale(c), shift(c);
  for (std::size_t k = 0; k < c; ++k) {
    scale[k] = static_cast<T>(static_cast<double>(gamma[k]) / std::sqrt(static_cast<double>(running_var[k]) + eps));
    shift[k] = beta[k] - scale[k] * running_mean[k];
  }
  Tensor<T> y(x.shape());
  const std::size_t m = x.size() / c;
  const T* xd = x.data();
  T* yd = y.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = 0; k < c; ++k) yd[i * c + k] = scale[k] * xd[i * c + k] + shift[k];
  return y;
}

template <typename T>
void update_running_stats(const BatchNormCache<T>& cache, std::size_t count_per_channel, Tensor<T>& running_mean,
                          Tensor<T>& running_var, double momentum) {
  const double correction =
      count_per_channel > 1 ? static_cast<double>(count_per_channel) / static_cast<double>(count_per_channel - 1) : 1.0;
  for (std::size_t k = 0; k < cache.mean.size(); ++k) {
    running_mean[k] = static_cast<T>(momentum * running_mean[k] + (1.0 - momentum) * cache.mean[k]);
    running_var[k] = static_cast<T>(momentum * running_var[k] + (1.0 - momentum) * cache.var[k] * correction);
  }
}

template <typename T>
void batch_norm_backward(const Tensor<T>& dy, const Tensor<T>& gamma, const BatchNormCache<T>& cache,
                         Tensor<T>* dx, Tensor<T>* dgamma, Tensor<T>* dbeta) {
  require_same_shape(dy, cache.xhat, "batch_norm backward");
  const std::size_t c = dy.dim(3);
  const std::size_t m = dy.size() / c;
  std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
  const T* dyd = dy.data();
  const T* xh = cache.xhat.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = 0; k < c; ++k) {
      sum_dy[k] += static_cast<double>(dyd[i * c + k]);
      sum_dy_xhat[k] += static_cast<double>(dyd[i * c + k]) * static_cast<double>(xh[i * c + k]);
    }
  if (dgamma)
    for (std::size_t k = 0; k < c; ++k) (*dgamma)[k] += static_cast<T>(sum_dy_xhat[k]);
  if (dbeta)
    for (std::size_t k = 0; k < c; ++k) (*dbeta)[k] += static_cast<T>(sum_dy[k]);
  if (dx) {
    std::vector<T> scale(c), mean_dy(c), mean_dy_xhat(c);
    for (std::size_t k = 0; k < c; ++k) {
      scale[k] = gamma[k] * cache.inv_std[k];
      mean_dy[k] = static_cast<T>(sum_dy[k] / static_cast<double>(m));
      mean_dy_xhat[k] = static_cast<T>(sum_dy_xhat[k] / static_cast<double>(m));
    }
    T* dxd = dx->data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t k = 0; k < c; ++k)
        dxd[i * c + k] += scale[k] * (dyd[i * c + k] - mean_dy[k] - xh[i * c + k] * mean_dy_xhat[k]);
  }
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  const T* xd = x.data();
  T* yd = y.data();
  for (std::size_t i = 0; i < x.size(); ++i) yd[i] = xd[i] > T{0} ? xd[i] : T{0};
  return y;
}

template <typename T>
void relu_backward(const Tensor<T>& y, const Tensor<T>& dy, Tensor<T>& dx) {
  require_same_shape(y, dy, "relu backward");
  require_same_shape(y, dx, "relu dx");
  const T* yd = y.data();
  const T* dyd = dy.data();
  T* dxd = dx.data();
  for (std::size_t i = 0; i < y.size(); ++i)
    if (yd[i] > T{0}) dxd[i] += dyd[i];
}

template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>* const> inputs) {
  if (inputs.empty()) throw ShapeError("concat of zero tensors");
  const Tensor<T>& first = *inputs.front();
  require_rank(first.shape(), 4, "concat input");
  std::size_t total = 0;
  for (const Tensor<T>* t : inputs) {
    require_rank(t->shape(), 4, "concat input");
    if (t->dim(0) != first.dim(0) || t->dim(1) != first.dim(1) || t->dim(2) != first.dim(2))
      throw ShapeError("concat spatial mismatch: " + format_extents(first.shape()) + " vs " +
                       format_extents(t->shape()));
    total += t->dim(3);
  }
  const std::size_t positions = first.size() / first.dim(3);
  Tensor<T> y({first.dim(0), first.dim(1), first.dim(2), total});
  T* yd = y.data();
  std::size_t offset = 0;
  for (const Tensor<T>* t : inputs) {
    const std::size_t c = t->dim(3);
    const T* td = t->data();
    for (std::size_t p = 0; p < positions; ++p) std::copy_n(td + p * c, c, yd + p * total + offset);
    offset += c;
  }
  return y;
}

template <typename T>
void concat_channels_backward(const Tensor<T>& dy, std::span<Tensor<T>* const> dxs) {
  const std::size_t total = dy.dim(3);
  const std::size_t positions = dy.size() / total;
  const T* dyd = dy.data();
  std::size_t offset = 0;
  for (Tensor<T>* dx : dxs) {
    const std::size_t c = dx->dim(3);
    T* dxd = dx->data();
    for (std::size_t p = 0; p < positions; ++p)
      for (std::size_t k = 0; k < c; ++k) dxd[p * c + k] += dyd[p * total + offset + k];
    offset += c;
  }
  if (offset != total) throw ShapeError("concat backward: channel widths do not sum to " + std::to_string(total));
}

template <typename T>
Tensor<T> weighted_sum(std::span<const Tensor<T>* const> inputs, std::span<const T> weights) {
  if (inputs.empty()) throw ShapeError("sum of zero tensors");
  if (inputs.size() != weights.size()) throw ShapeError("weighted sum: weight count differs from input count");
  Tensor<T> y(inputs.front()->shape());
  T* yd = y.data();
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    require_same_shape(*inputs[i], *inputs.front(), "add");
    const T* xd = inputs[i]->data();
    const T wi = weights[i];
    for (std::size_t k = 0; k < y.size(); ++k) yd[k] += wi * xd[k];
  }
  return y;
}

template <typename T>
void weighted_sum_backward(const Tensor<T>& dy, std::span<const T> weights, std::span<Tensor<T>* const> dxs) {
  for (std::size_t i = 0; i < dxs.size(); ++i) {
    require_same_shape(*dxs[i], dy, "add backward");
    T* dxd = dxs[i]->data();
    const T* dyd = dy.data();
    const T wi = weights[i];
    for (std::size_t k = 0; k < dy.size(); ++k) dxd[k] += wi * dyd[k];
  }
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  require_rank(x.shape(), 4, "global_avg_pool input");
  const std::size_t n = x.dim(0), c = x.dim(3), hw = x.dim(1) * x.dim(2);
  Tensor<T> y({n, 1, 1, c});
  const T* xd = x.data();
  for (std::size_t b = 0; b < n; ++b) {
    std::vector<double> acc(c, 0.0);
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t k = 0; k < c; ++k) acc[k] += static_cast<double>(xd[(b * hw + p) * c + k]);
    for (std::size_t k = 0; k < c; ++k) y[b * c + k] = static_cast<T>(acc[k] / static_cast<double>(hw));
  }
  return y;
}

template <typename T>
void global_avg_pool_backward(const Tensor<T>& dy, Tensor<T>& dx) {
  const std::size_t n = dx.dim(0), c = dx.dim(3), hw = dx.dim(1) * dx.dim(2);
  if (dy.size() != n * c) throw ShapeError("global_avg_pool backward: dy shape " + format_extents(dy.shape()));
  const T scale = T{1} / static_cast<T>(hw);
  T* dxd = dx.data();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t k = 0; k < c; ++k) dxd[(b * hw + p) * c + k] += dy[b * c + k] * scale;
}

template <typename T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  require_rank(w.shape(), 2, "dense weight");
  const std::size_t n = x.dim(0), cin = w.dim(0), cout = w.dim(1);
  if (x.size() != n * cin)
    throw ShapeError("dense: input " + format_extents(x.shape()) + " does not flatten to " + std::to_string(cin));
  if (b.size() != cout) throw ShapeError("dense: bias length mismatch");
  Tensor<T> y({n, 1, 1, cout});
  for (std::size_t r = 0; r < n; ++r) {
    T* yr = y.data() + r * cout;
    for (std::size_t o = 0; o < cout; ++o) yr[o] = b[o];
    for (std::size_t i = 0; i < cin; ++i) {
      const T xv = x[r * cin + i];
      const T* wr = w.data() + i * cout;
      for (std::size_t o = 0; o < cout; ++o) yr[o] += xv * wr[o];
    }
  }
  return y;
}

template <typename T>
void dense_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, Tensor<T>* dx, Tensor<T>* dw,
                    Tensor<T>* db) {
  const std::size_t n = x.dim(0), cin = w.dim(0), cout = w.dim(1);
  if (dy.size() != n * cout) throw ShapeError("dense backward: dy shape " + format_extents(dy.shape()));
  for (std::size_t r = 0; r < n; ++r) {
    const T* dyr = dy.data() + r * cout;
    if (db)
      for (std::size_t o = 0; o < cout; ++o) (*db)[o] += dyr[o];
    for (std::size_t i = 0; i < cin; ++i) {
      const T* wr = w.data() + i * cout;
      if (dw) {
        const T xv = x[r * cin + i];
        T* dwr = dw->data() + i * cout;
        for (std::size_t o = 0; o < cout; ++o) dwr[o] += xv * dyr[o];
      }
      if (dx) {
        T acc = 0;
        for (std::size_t o = 0; o < cout; ++o) acc += wr[o] * dyr[o];
        (*dx)[r * cin + i] += acc;
      }
    }
  }
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  const std::size_t c = logits.shape().back();
  const std::size_t rows = logits.size() / c;
  Tensor<T> p(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* z = logits.data() + r * c;
    T* pr = p.data() + r * c;
    const T m = *std::max_element(z, z + c);
    T sum = 0;
    for (std::size_t k = 0; k < c; ++k) {
      pr[k] = std::exp(z[k] - m);
      sum += pr[k];
    }
    for (std::size_t k = 0; k < c; ++k) pr[k] /= sum;
  }
  return p;
}

template <typename T>
T softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels, Tensor<T>* dlogits) {
  const std::size_t c = logits.shape().back();
  const std::size_t rows = logits.size() / c;
  if (labels.size() != rows)
    throw ShapeError("cross entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(rows) + " rows");
  if (dlogits) require_same_shape(*dlogits, logits, "cross entropy gradient");
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= c)
      throw ConfigError("label " + std::to_string(y) + " outside [0, " + std::to_string(c) + ")");
    const T* z = logits.data() + r * c;
    const T m = *std::max_element(z, z + c);
    double sum = 0.0;
    for (std::size_t k = 0; k < c; ++k) sum += std::exp(static_cast<double>(z[k] - m));
    const double lse = static_cast<double>(m) + std::log(sum);
    total += lse - static_cast<double>(z[y]);
    if (dlogits) {
      T* g = dlogits->data() + r * c;
      for (std::size_t k = 0; k < c; ++k) {
        const double p = std::exp(static_cast<double>(z[k]) - lse);
        g[k] = static_cast<T>((p - (static_cast<int>(k) == y ? 1.0 : 0.0)) / static_cast<double>(rows));
      }
    }
  }
  return static_cast<T>(total / static_cast<double>(rows));
}

std::vector<double> simplex_weights(std::size_t count, Random& rng) {
  std::vector<double> w(count);
  double sum = 0.0;
  for (auto& v : w) {
    v = -std::log(rng.uniform_open0());
    sum += v;
  }
  if (sum <= 0.0) {
    std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(count));
    return w;
  }
  for (auto& v : w) v /= sum;
  return w;
}

#define BLOCKNAS_INSTANTIATE_OPS(T)                                                                                  \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, int);                                               \
  template void conv2d_backward(const Tensor<T>&, const Tensor<T>&, int, const Tensor<T>&, Tensor<T>*, Tensor<T>*); \
  template Tensor<T> depthwise_conv(const Tensor<T>&, const Tensor<T>&, int);                                       \
  template void depthwise_conv_backward(const Tensor<T>&, const Tensor<T>&, int, const Tensor<T>&, Tensor<T>*,      \
                                        Tensor<T>*);                                                                \
  template Tensor<T> batch_norm_train(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, BatchNormCache<T>&,     \
                                      double);                                                                      \
  template Tensor<T> batch_norm_eval(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,        \
                                     const Tensor<T>&, double);                                                     \
  template void update_running_stats(const BatchNormCache<T>&, std::size_t, Tensor<T>&, Tensor<T>&, double);        \
  template void batch_norm_backward(const Tensor<T>&, const Tensor<T>&, const BatchNormCache<T>&, Tensor<T>*,       \
                                    Tensor<T>*, Tensor<T>*);                                                        \
  template Tensor<T> relu(const Tensor<T>&);                                                                        \
  template void relu_backward(const Tensor<T>&, const Tensor<T>&, Tensor<T>&);                                      \
  template Tensor<T> concat_channels(std::span<const Tensor<T>* const>);                                            \
  template void concat_channels_backward(const Tensor<T>&, std::span<Tensor<T>* const>);                            \
  template Tensor<T> weighted_sum(std::span<const Tensor<T>* const>, std::span<const T>);                           \
  template void weighted_sum_backward(const Tensor<T>&, std::span<const T>, std::span<Tensor<T>* const>);           \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                                             \
  template void global_avg_pool_backward(const Tensor<T>&, Tensor<T>&);                                             \
  template Tensor<T> dense(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                                   \
  template void dense_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>*, Tensor<T>*,        \
                               Tensor<T>*);                                                                         \
  template Tensor<T> softmax(const Tensor<T>&);                                                                     \
  template T softmax_cross_entropy(const Tensor<T>&, std::span<const int>, Tensor<T>*);

BLOCKNAS_INSTANTIATE_OPS(float)
BLOCKNAS_INSTANTIATE_OPS(double)

#undef BLOCKNAS_INSTANTIATE_OPS

}  // namespace blocknas::ops
