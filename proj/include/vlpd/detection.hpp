#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "vlpd/array.hpp"
#include "vlpd/box.hpp"
#include "vlpd/nn.hpp"

namespace vlpd {

// Center/scale/offset targets on the stride grid of one image.
template <typename T>
struct DetectionTargets {
  Array<T> center;                    // [H, W] Gaussian map G, peak 1 at centers
  Array<T> scale;                     // [H, W] log(h / stride), valid where pos_mask
  Array<T> offset;                    // [H, W, 2] (dx, dy) in [0, 1), valid where pos_mask
  std::vector<std::uint8_t> pos_mask; // H * W

  std::size_t positives() const;
  // Cells with G > 0: the pedestrian query positions.
  std::size_t gaussian_support() const;
};

template <typename T>
struct HeadOutputs {
  Array<T> center_logits;  // [H, W]
  Array<T> scale_pred;     // [H, W]
  Array<T> offset_pred;    // [H, W, 2]
};

struct GaussianRule {
  double k = 2.0;           // sigma = extent / (2 * stride * k)
  double min_sigma = 0.5;   // in cells
};

template <typename T>
DetectionTargets<T> build_targets(const std::vector<BoundingBox>& boxes, std::size_t h, std::size_t w, int stride,
                                  GaussianRule rule = {});

struct DetectionLossWeights {
  double center = 0.01;
  double scale = 1.0;
  double offset = 0.1;
  double gamma = 2.0;  // focal exponent on the prediction
  double beta = 4.0;   // down-weighting of negatives near a center
};

struct DetectionLossTerms {
  double center = 0.0;
  double scale = 0.0;
  double offset = 0.0;
  double total = 0.0;
};

template <typename T>
DetectionLossTerms detection_loss(const HeadOutputs<T>& pred, const DetectionTargets<T>& tgt,
                                  const DetectionLossWeights& wts = {});

// Same value plus d(total)/d(head outputs).
template <typename T>
DetectionLossTerms detection_loss_with_grad(const HeadOutputs<T>& pred, const DetectionTargets<T>& tgt,
                                            HeadOutputs<T>& grad, const DetectionLossWeights& wts = {});

// 3x3 conv + ReLU reducing channels, then a 1x1 conv into the center, scale
// and offset branches (4 channels).
template <typename T>
class DetectionHead {
 public:
  struct Trace {
    typename nn::Conv2d<T>::Cache conv, out;
    Array<T> hidden;
  };

  DetectionHead(int in_channels, int hidden, std::uint64_t seed);

  HeadOutputs<T> forward(const Array<T>& features, Trace* trace = nullptr) const;
  // Returns d(loss)/d(features).
  Array<T> backward(const Trace& trace, const HeadOutputs<T>& grad);

  int in_channels() const { return conv_.in_channels(); }
  std::vector<nn::Parameter<T>*> parameters();
  std::vector<const nn::Parameter<T>*> parameters() const;

 private:
  nn::Conv2d<T> conv_, out_;
};

template <typename T>
T sigmoid(T z) {
  return z >= T{0} ? T{1} / (T{1} + std::exp(-z)) : std::exp(z) / (T{1} + std::exp(z));
}

// Peaks of sigmoid(center_logits) that are 3x3 local maxima with score >=
// threshold, assembled with h = stride * exp(scale), w = aspect_ratio * h.
template <typename T>
std::vector<BoundingBox> decode_boxes(const HeadOutputs<T>& out, double threshold, int stride, double aspect_ratio);

// Greedy suppression in (score desc, x asc, y asc) order.
std::vector<BoundingBox> nms(std::vector<BoundingBox> boxes, double iou_threshold = 0.5);

// "image_id x y w h score" with 6 decimals.
void write_detection_line(std::ostream& os, const std::string& image_id, const BoundingBox& box);

}  // namespace vlpd
