#pragma once

#include <map>
#include <string>
#include <vector>

#include "vlpd/config.hpp"
#include "vlpd/cross_modal.hpp"
#include "vlpd/detection.hpp"
#include "vlpd/encoders.hpp"
#include "vlpd/nn.hpp"
#include "vlpd/tensor_io.hpp"

namespace vlpd {

template <typename T>
struct ForwardResult {
  EncodedImage<T> encoded;
  ScoreMap<T> s_bar;     // predicted context scores [H', W', N]
  Array<T> e;            // detection features [D, H, W] at the head stride
  Array<T> s_dot;        // upsampled non-human scores [H, W, N-1], detached
  HeadOutputs<T> head;
};

// Trainee network: visual encoder (same architecture and initialisation as
// the frozen pseudo-labeler), per-stage 1x1 "deconvolution" + bilinear
// upsampling into the detection features E, cross-modal scores S_bar from the
// projected features, and the detection head over concat(E, detached S_dot).
template <typename T>
class VlpdNet {
 public:
  using value_type = T;

  struct Trace {
    typename VisualEncoder<T>::Trace encoder;
    typename nn::Conv2d<T>::Cache d3, d4, d5;
    Dims r3, r4, r5;  // pre-upsample dims of each deconv branch
    typename DetectionHead<T>::Trace head;
    ForwardResult<T> out;
  };

  VlpdNet(const RunConfig& cfg, LinguisticVectors vectors);

  ForwardResult<T> forward(const Array<T>& image, Trace* trace = nullptr) const;

  // Accumulates parameter gradients. Any of the incoming gradients may be
  // null. The S_dot half of the head input is detached and gets no gradient.
  void backward(const Trace& trace, const Array<T>* d_s_bar, const Array<T>* d_e, const HeadOutputs<T>* d_head);

  std::vector<nn::Parameter<T>*> parameters();
  std::vector<const nn::Parameter<T>*> parameters() const;
  void zero_grad();

  const VisualEncoder<T>& encoder() const { return encoder_; }
  const LinguisticVectors& vectors() const { return vectors_; }
  const std::vector<std::string>& class_names() const { return vectors_.class_names; }
  std::size_t feature_dim() const { return std::size_t(head_arch_.feature_dim()); }
  std::size_t context_classes() const { return vectors_.class_names.size() - 1; }
  int stride() const { return stride_; }

  // Named parameter values, for checkpoints.
  std::map<std::string, Array<T>> state() const;
  void load_state(const std::map<std::string, AnyArray>& state);

 private:
  HeadArch head_arch_;
  int stride_;
  LinguisticVectors vectors_;
  Array<T> l_;
  VisualEncoder<T> encoder_;
  nn::Conv2d<T> d3_, d4_, d5_;
  DetectionHead<T> head_;
};

}  // namespace vlpd
