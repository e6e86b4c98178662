#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "vlpd/array.hpp"
#include "vlpd/rng.hpp"

namespace vlpd::nn {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

// A trainable tensor and its gradient accumulator.
template <typename T>
struct Parameter {
  std::string name;
  Array<T> value;
  Array<T> grad;

  Parameter() = default;
  Parameter(std::string n, Array<T> v) : name(std::move(n)), value(std::move(v)), grad(value.dims()) {}
  void zero_grad() { grad.fill(T{0}); }
};

// Square-kernel 2D convolution over CHW arrays, lowered to a GEMM on an
// im2col buffer.
template <typename T>
class Conv2d {
 public:
  struct Cache {
    Dims input_dims;
    Array<T> columns;  // [cin*k*k, ho*wo]; empty for 1x1 stride-1 (input reused)
    Array<T> input;    // kept only for the 1x1 stride-1 shortcut
  };

  Conv2d() = default;
  Conv2d(const std::string& name, int cin, int cout, int kernel, int stride, int pad)
      : weight(name + ".weight", Array<T>({std::size_t(cout), std::size_t(cin), std::size_t(kernel),
                                            std::size_t(kernel)})),
        bias(name + ".bias", Array<T>({std::size_t(cout)})),
        cin_(cin),
        cout_(cout),
        kernel_(kernel),
        stride_(stride),
        pad_(pad) {}

  // He-normal weights, zero bias.
  void init(Rng& rng) {
    const double std_dev = std::sqrt(2.0 / (cin_ * kernel_ * kernel_));
    for (auto& w : weight.value.values()) w = static_cast<T>(rng.normal() * std_dev);
    bias.value.fill(T{0});
  }

  int in_channels() const { return cin_; }
  int out_channels() const { return cout_; }

  std::size_t out_size(std::size_t in) const {
    return (in + 2 * std::size_t(pad_) - std::size_t(kernel_)) / std::size_t(stride_) + 1;
  }

  Array<T> forward(const Array<T>& x, Cache* cache) const {
    require_rank(x, 3, "conv2d input");
    if (x.dim(0) != std::size_t(cin_)) {
      throw ShapeError(weight.name + ": expected " + std::to_string(cin_) + " input channels, got " +
                       std::to_string(x.dim(0)));
    }
    const std::size_t h = x.dim(1), w = x.dim(2);
    const std::size_t ho = out_size(h), wo = out_size(w), p = ho * wo;
    Array<T> y({std::size_t(cout_), ho, wo});
    MatrixMap<T> ym(y.data(), cout_, Eigen::Index(p));
    ConstMatrixMap<T> wm(weight.value.data(), cout_, Eigen::Index(rows()));

    if (is_pointwise()) {
      ConstMatrixMap<T> xm(x.data(), cin_, Eigen::Index(p));
      ym.noalias() = wm * xm;
      if (cache) {
        cache->input_dims = x.dims();
        cache->input = x;
      }
    } else {
      Array<T> cols({rows(), p});
      im2col(x, cols, ho, wo);
      ConstMatrixMap<T> cm(cols.data(), Eigen::Index(rows()), Eigen::Index(p));
      ym.noalias() = wm * cm;
      if (cache) {
        cache->input_dims = x.dims();
        cache->columns = std::move(cols);
      }
    }
    for (int o = 0; o < cout_; ++o) ym.row(o).array() += bias.value[std::size_t(o)];
    return y;
  }

  // Accumulates parameter gradients and returns d(loss)/d(input).
  Array<T> backward(const Cache& cache, const Array<T>& dy, bool need_input_grad = true) {
    const std::size_t h = cache.input_dims[1], w = cache.input_dims[2];
    const std::size_t ho = out_size(h), wo = out_size(w), p = ho * wo;
    require_dims(dy, {std::size_t(cout_), ho, wo}, "conv2d output gradient");
    ConstMatrixMap<T> dym(dy.data(), cout_, Eigen::Index(p));
    MatrixMap<T> dwm(weight.grad.data(), cout_, Eigen::Index(rows()));
    ConstMatrixMap<T> wm(weight.value.data(), cout_, Eigen::Index(rows()));
    for (int o = 0; o < cout_; ++o) bias.grad[std::size_t(o)] += dym.row(o).sum();

    if (is_pointwise()) {
      ConstMatrixMap<T> xm(cache.input.data(), cin_, Eigen::Index(p));
      dwm.noalias() += dym * xm.transpose();
      if (!need_input_grad) return {};
      Array<T> dx(cache.input_dims);
      MatrixMap<T> dxm(dx.data(), cin_, Eigen::Index(p));
      dxm.noalias() = wm.transpose() * dym;
      return dx;
    }
    ConstMatrixMap<T> cm(cache.columns.data(), Eigen::Index(rows()), Eigen::Index(p));
    dwm.noalias() += dym * cm.transpose();
    if (!need_input_grad) return {};
    Array<T> dcols({rows(), p});
    MatrixMap<T> dcm(dcols.data(), Eigen::Index(rows()), Eigen::Index(p));
    dcm.noalias() = wm.transpose() * dym;
    Array<T> dx(cache.input_dims);
    col2im(dcols, dx, ho, wo);
    return dx;
  }

  Parameter<T> weight;
  Parameter<T> bias;

 private:
  bool is_pointwise() const { return kernel_ == 1 && stride_ == 1 && pad_ == 0; }
  std::size_t rows() const { return std::size_t(cin_) * kernel_ * kernel_; }

  void im2col(const Array<T>& x, Array<T>& cols, std::size_t ho, std::size_t wo) const {
    const long h = long(x.dim(1)), w = long(x.dim(2));
    const T* src = x.data();
    T* dst = cols.data();
    for (int c = 0; c < cin_; ++c) {
      for (int ky = 0; ky < kernel_; ++ky) {
        for (int kx = 0; kx < kernel_; ++kx) {
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const long iy = long(oy) * stride_ + ky - pad_;
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const long ix = long(ox) * stride_ + kx - pad_;
              *dst++ = (iy >= 0 && iy < h && ix >= 0 && ix < w) ? src[(c * h + iy) * w + ix] : T{0};
            }
          }
        }
      }
    }
  }

  void col2im(const Array<T>& cols, Array<T>& dx, std::size_t ho, std::size_t wo) const {
    const long h = long(dx.dim(1)), w = long(dx.dim(2));
    const T* src = cols.data();
    T* out = dx.data();
    for (int c = 0; c < cin_; ++c) {
      for (int ky = 0; ky < kernel_; ++ky) {
        for (int kx = 0; kx < kernel_; ++kx) {
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const long iy = long(oy) * stride_ + ky - pad_;
            for (std::size_t ox = 0; ox < wo; ++ox, ++src) {
              const long ix = long(ox) * stride_ + kx - pad_;
              if (iy >= 0 && iy < h && ix >= 0 && ix < w) out[(c * h + iy) * w + ix] += *src;
            }
          }
        }
      }
    }
  }

  int cin_ = 0;
  int cout_ = 0;
  int kernel_ = 1;
  int stride_ = 1;
  int pad_ = 0;
};

template <typename T>
Array<T> relu(const Array<T>& x) {
  Array<T> y = x;
  for (auto& v : y.values()) v = v > T{0} ? v : T{0};
  return y;
}

// `y` is the forward output; the mask is y > 0.
template <typename T>
Array<T> relu_backward(const Array<T>& y, const Array<T>& dy) {
  Array<T> dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    if (!(y[i] > T{0})) dx[i] = T{0};
  }
  return dx;
}

// Half-pixel-centred bilinear resampling along one axis, clamped at the edges.
struct LinearTaps {
  std::vector<std::size_t> lo, hi;
  std::vector<double> frac;  // weight of `hi`

  LinearTaps(std::size_t in, std::size_t out) : lo(out), hi(out), frac(out) {
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
      double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in - 1));
      const auto l = static_cast<std::size_t>(std::floor(src));
      lo[o] = l;
      hi[o] = std::min(l + 1, in - 1);
      frac[o] = src - static_cast<double>(l);
    }
  }
};

// Bilinear upsampling of a [C, H, W] array to [C, out_h, out_w].
template <typename T>
Array<T> upsample_bilinear_chw(const Array<T>& x, std::size_t out_h, std::size_t out_w) {
  require_rank(x, 3, "upsample input");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const LinearTaps ty(h, out_h), tx(w, out_w);
  Array<T> y({c, out_h, out_w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T* src = x.data() + ch * h * w;
    T* dst = y.data() + ch * out_h * out_w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const T fy = T(ty.frac[oy]);
      const T* r0 = src + ty.lo[oy] * w;
      const T* r1 = src + ty.hi[oy] * w;
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const T fx = T(tx.frac[ox]);
        const T top = r0[tx.lo[ox]] + fx * (r0[tx.hi[ox]] - r0[tx.lo[ox]]);
        const T bot = r1[tx.lo[ox]] + fx * (r1[tx.hi[ox]] - r1[tx.lo[ox]]);
        dst[oy * out_w + ox] = top + fy * (bot - top);
      }
    }
  }
  return y;
}

// Adjoint of upsample_bilinear_chw.
template <typename T>
Array<T> upsample_bilinear_chw_backward(const Array<T>& dy, std::size_t in_h, std::size_t in_w) {
  const std::size_t c = dy.dim(0), out_h = dy.dim(1), out_w = dy.dim(2);
  const LinearTaps ty(in_h, out_h), tx(in_w, out_w);
  Array<T> dx({c, in_h, in_w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T* g = dy.data() + ch * out_h * out_w;
    T* d = dx.data() + ch * in_h * in_w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const T fy = T(ty.frac[oy]);
      T* r0 = d + ty.lo[oy] * in_w;
      T* r1 = d + ty.hi[oy] * in_w;
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const T fx = T(tx.frac[ox]);
        const T v = g[oy * out_w + ox];
        r0[tx.lo[ox]] += (1 - fy) * (1 - fx) * v;
        r0[tx.hi[ox]] += (1 - fy) * fx * v;
        r1[tx.lo[ox]] += fy * (1 - fx) * v;
        r1[tx.hi[ox]] += fy * fx * v;
      }
    }
  }
  return dx;
}

template <typename T>
Array<T> chw_to_hwc(const Array<T>& x) {
  require_rank(x, 3, "chw_to_hwc");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Array<T> y({h, w, c});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < h * w; ++i) y[i * c + ch] = x[ch * h * w + i];
  return y;
}

template <typename T>
Array<T> hwc_to_chw(const Array<T>& x) {
  require_rank(x, 3, "hwc_to_chw");
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  Array<T> y({c, h, w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < h * w; ++i) y[ch * h * w + i] = x[i * c + ch];
  return y;
}

}  // namespace vlpd::nn
