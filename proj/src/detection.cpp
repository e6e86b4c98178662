#include "vlpd/detection.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "vlpd/vls_loss.hpp"

namespace vlpd {
namespace {

// log(sigmoid(z)) = -softplus(-z), stable for large |z| including +-inf.
double softplus(double z) {
  if (z == INFINITY) return INFINITY;
  return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

template <typename T>
void check_head_dims(const HeadOutputs<T>& pred, const DetectionTargets<T>& tgt) {
  const Dims& d = tgt.center.dims();
  require_dims(pred.center_logits, d, "center logits");
  require_dims(pred.scale_pred, d, "scale prediction");
  require_dims(pred.offset_pred, {d[0], d[1], 2}, "offset prediction");
}

template <typename T>
DetectionLossTerms loss_impl(const HeadOutputs<T>& pred, const DetectionTargets<T>& tgt, HeadOutputs<T>* grad,
                             const DetectionLossWeights& wts) {
  check_head_dims(pred, tgt);
  const std::size_t n = tgt.center.size();
  std::size_t npos = 0;
  for (auto m : tgt.pos_mask) npos += m ? 1 : 0;
  const double norm = 1.0 / double(std::max<std::size_t>(1, npos));
  const double gamma = wts.gamma, beta = wts.beta;

  if (grad) {
    grad->center_logits = Array<T>(pred.center_logits.dims());
    grad->scale_pred = Array<T>(pred.scale_pred.dims());
    grad->offset_pred = Array<T>(pred.offset_pred.dims());
  }

  double center = 0.0, scale = 0.0, offset = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = double(pred.center_logits[i]);
    const double p = double(sigmoid(pred.center_logits[i]));
    if (tgt.pos_mask[i]) {
      const double log_p = -softplus(-z);
      const double one_m = 1.0 - p;
      center += -std::pow(one_m, gamma) * log_p;
      if (grad) {
        const double dz = std::pow(one_m, gamma) * (gamma * p * log_p - one_m);
        grad->center_logits[i] = static_cast<T>(wts.center * norm * dz);
      }
      const double ds = double(pred.scale_pred[i]) - double(tgt.scale[i]);
      scale += smooth_l1(ds);
      if (grad) grad->scale_pred[i] = static_cast<T>(wts.scale * norm * smooth_l1_grad(ds));
      for (std::size_t a = 0; a < 2; ++a) {
        const double dof = double(pred.offset_pred[2 * i + a]) - double(tgt.offset[2 * i + a]);
        offset += smooth_l1(dof);
        if (grad) grad->offset_pred[2 * i + a] = static_cast<T>(wts.offset * norm * smooth_l1_grad(dof));
      }
    } else {
      const double weight = std::pow(1.0 - double(tgt.center[i]), beta);
      if (weight == 0.0 || p == 0.0) continue;
      const double log_1mp = -softplus(z);
      center += -weight * std::pow(p, gamma) * log_1mp;
      if (grad) {
        const double dz = weight * std::pow(p, gamma) * (p - gamma * (1.0 - p) * log_1mp);
        grad->center_logits[i] = static_cast<T>(wts.center * norm * dz);
      }
    }
  }
  DetectionLossTerms terms;
  terms.center = center * norm;
  terms.scale = npos ? scale * norm : 0.0;
  terms.offset = npos ? offset * norm : 0.0;
  terms.total = wts.center * terms.center + wts.scale * terms.scale + wts.offset * terms.offset;
  return terms;
}

}  // namespace

template <typename T>
std::size_t DetectionTargets<T>::positives() const {
  return static_cast<std::size_t>(std::count(pos_mask.begin(), pos_mask.end(), std::uint8_t{1}));
}

template <typename T>
std::size_t DetectionTargets<T>::gaussian_support() const {
  std::size_t m = 0;
  for (auto v : center.values()) m += v > T{0} ? 1 : 0;
  return m;
}

template <typename T>
DetectionTargets<T> build_targets(const std::vector<BoundingBox>& boxes, std::size_t h, std::size_t w, int stride,
                                  GaussianRule rule) {
  if (stride < 1) throw InvalidArgument("stride must be positive");
  DetectionTargets<T> t{Array<T>({h, w}), Array<T>({h, w}), Array<T>({h, w, 2}),
                        std::vector<std::uint8_t>(h * w, 0)};
  const double s = stride;
  for (const auto& b : boxes) {
    if (!(b.w > 0.0 && b.h > 0.0)) throw InvalidArgument("build_targets: box with non-positive size");
    const double cx = b.center_x() / s, cy = b.center_y() / s;
    if (cx < 0.0 || cy < 0.0 || cx >= double(w) || cy >= double(h)) {
      throw InvalidArgument("build_targets: box center outside the stride grid");
    }
    const auto ix = static_cast<long>(std::floor(cx));
    const auto iy = static_cast<long>(std::floor(cy));
    const double sx = std::max(rule.min_sigma, b.w / (2.0 * s * rule.k));
    const double sy = std::max(rule.min_sigma, b.h / (2.0 * s * rule.k));
    auto clampi = [](long v, long lo, long hi) { return std::clamp(v, lo, hi); };
    const long x0 = std::min(ix, clampi(long(std::floor(b.x / s)), 0, long(w) - 1));
    const long x1 = std::max(ix, clampi(long(std::ceil((b.x + b.w) / s)) - 1, 0, long(w) - 1));
    const long y0 = std::min(iy, clampi(long(std::floor(b.y / s)), 0, long(h) - 1));
    const long y1 = std::max(iy, clampi(long(std::ceil((b.y + b.h) / s)) - 1, 0, long(h) - 1));
    for (long y = y0; y <= y1; ++y) {
      for (long x = x0; x <= x1; ++x) {
        const double dx = double(x - ix), dy = double(y - iy);
        const double g = std::exp(-(dx * dx / (2 * sx * sx) + dy * dy / (2 * sy * sy)));
        T& cell = t.center[std::size_t(y) * w + std::size_t(x)];
        cell = std::max(cell, static_cast<T>(g));
      }
    }
    const std::size_t c = std::size_t(iy) * w + std::size_t(ix);
    t.center[c] = T{1};
    t.pos_mask[c] = 1;
    t.scale[c] = static_cast<T>(std::log(b.h / s));
    t.offset[2 * c] = static_cast<T>(cx - double(ix));
    t.offset[2 * c + 1] = static_cast<T>(cy - double(iy));
  }
  return t;
}

template <typename T>
DetectionLossTerms detection_loss(const HeadOutputs<T>& pred, const DetectionTargets<T>& tgt,
                                  const DetectionLossWeights& wts) {
  return loss_impl<T>(pred, tgt, nullptr, wts);
}

template <typename T>
DetectionLossTerms detection_loss_with_grad(const HeadOutputs<T>& pred, const DetectionTargets<T>& tgt,
                                            HeadOutputs<T>& grad, const DetectionLossWeights& wts) {
  return loss_impl<T>(pred, tgt, &grad, wts);
}

template <typename T>
DetectionHead<T>::DetectionHead(int in_channels, int hidden, std::uint64_t seed)
    : conv_("head.conv", in_channels, hidden, 3, 1, 1), out_("head.out", hidden, 4, 1, 1, 0) {
  Rng rng(mix_seed(seed, 0x68656164ULL));
  conv_.init(rng);
  for (auto& v : out_.weight.value.values()) v = static_cast<T>(0.01 * rng.normal());
  out_.bias.value.fill(T{0});
  // Prior probability 0.01 on every center cell.
  out_.bias.value[0] = static_cast<T>(-std::log((1.0 - 0.01) / 0.01));
}

template <typename T>
HeadOutputs<T> DetectionHead<T>::forward(const Array<T>& features, Trace* trace) const {
  require_rank(features, 3, "detection head input");
  if (features.dim(0) != std::size_t(conv_.in_channels())) {
    throw ShapeError("detection head expects " + std::to_string(conv_.in_channels()) + " channels (D + N - 1), got " +
                     std::to_string(features.dim(0)));
  }
  const std::size_t h = features.dim(1), w = features.dim(2), hw = h * w;
  Array<T> hidden = nn::relu(conv_.forward(features, trace ? &trace->conv : nullptr));
  const Array<T> y = out_.forward(hidden, trace ? &trace->out : nullptr);
  if (trace) trace->hidden = std::move(hidden);
  HeadOutputs<T> o{Array<T>({h, w}), Array<T>({h, w}), Array<T>({h, w, 2})};
  for (std::size_t i = 0; i < hw; ++i) {
    o.center_logits[i] = y[i];
    o.scale_pred[i] = y[hw + i];
    o.offset_pred[2 * i] = y[2 * hw + i];
    o.offset_pred[2 * i + 1] = y[3 * hw + i];
  }
  return o;
}

template <typename T>
Array<T> DetectionHead<T>::backward(const Trace& trace, const HeadOutputs<T>& grad) {
  const std::size_t h = grad.center_logits.dim(0), w = grad.center_logits.dim(1), hw = h * w;
  Array<T> dy({4, h, w});
  for (std::size_t i = 0; i < hw; ++i) {
    dy[i] = grad.center_logits[i];
    dy[hw + i] = grad.scale_pred[i];
    dy[2 * hw + i] = grad.offset_pred[2 * i];
    dy[3 * hw + i] = grad.offset_pred[2 * i + 1];
  }
  const Array<T> dh = out_.backward(trace.out, dy);
  return conv_.backward(trace.conv, nn::relu_backward(trace.hidden, dh));
}

template <typename T>
std::vector<nn::Parameter<T>*> DetectionHead<T>::parameters() {
  return {&conv_.weight, &conv_.bias, &out_.weight, &out_.bias};
}

template <typename T>
std::vector<const nn::Parameter<T>*> DetectionHead<T>::parameters() const {
  return {&conv_.weight, &conv_.bias, &out_.weight, &out_.bias};
}

template <typename T>
std::vector<BoundingBox> decode_boxes(const HeadOutputs<T>& out, double threshold, int stride, double aspect_ratio) {
  const std::size_t h = out.center_logits.dim(0), w = out.center_logits.dim(1);
  std::vector<double> score(h * w);
  for (std::size_t i = 0; i < h * w; ++i) score[i] = double(sigmoid(out.center_logits[i]));
  std::vector<BoundingBox> boxes;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double s = score[y * w + x];
      if (!(s >= threshold)) continue;
      bool peak = true;
      for (long dy = -1; dy <= 1 && peak; ++dy) {
        for (long dx = -1; dx <= 1; ++dx) {
          const long ny = long(y) + dy, nx = long(x) + dx;
          if ((dy == 0 && dx == 0) || ny < 0 || nx < 0 || ny >= long(h) || nx >= long(w)) continue;
          if (score[std::size_t(ny) * w + std::size_t(nx)] > s) {
            peak = false;
            break;
          }
        }
      }
      if (!peak) continue;
      const std::size_t i = y * w + x;
      const double bh = stride * std::exp(double(out.scale_pred[i]));
      const double bw = aspect_ratio * bh;
      const double cx = (double(x) + double(out.offset_pred[2 * i])) * stride;
      const double cy = (double(y) + double(out.offset_pred[2 * i + 1])) * stride;
      BoundingBox b;
      b.x = cx - bw / 2;
      b.y = cy - bh / 2;
      b.w = bw;
      b.h = bh;
      b.score = s;
      boxes.push_back(b);
    }
  }
  return boxes;
}

std::vector<BoundingBox> nms(std::vector<BoundingBox> boxes, double iou_threshold) {
  std::stable_sort(boxes.begin(), boxes.end(), [](const BoundingBox& a, const BoundingBox& b) {
    const double sa = a.score.value_or(0.0), sb = b.score.value_or(0.0);
    if (sa != sb) return sa > sb;
    if (a.x != b.x) return a.x < b.x;
    return a.y < b.y;
  });
  std::vector<BoundingBox> kept;
  for (const auto& b : boxes) {
    bool suppressed = false;
    for (const auto& k : kept) {
      if (iou(b, k) >= iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(b);
  }
  return kept;
}

void write_detection_line(std::ostream& os, const std::string& image_id, const BoundingBox& b) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s %.6f %.6f %.6f %.6f %.6f\n", image_id.c_str(), b.x, b.y, b.w, b.h,
                b.score.value_or(0.0));
  os << buf;
}

#define VLPD_INSTANTIATE_DET(T)                                                                              \
  template struct DetectionTargets<T>;                                                                       \
  template class DetectionHead<T>;                                                                           \
  template DetectionTargets<T> build_targets(const std::vector<BoundingBox>&, std::size_t, std::size_t, int,   \
                                             GaussianRule);                                                  \
  template DetectionLossTerms detection_loss(const HeadOutputs<T>&, const DetectionTargets<T>&,               \
                                             const DetectionLossWeights&);                                   \
  template DetectionLossTerms detection_loss_with_grad(const HeadOutputs<T>&, const DetectionTargets<T>&,     \
                                                       HeadOutputs<T>&, const DetectionLossWeights&);        \
  template std::vector<BoundingBox> decode_boxes(const HeadOutputs<T>&, double, int, double);

VLPD_INSTANTIATE_DET(float)
VLPD_INSTANTIATE_DET(double)

}  // namespace vlpd
