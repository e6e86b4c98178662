#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vlpd/array.hpp"
#include "vlpd/config.hpp"
#include "vlpd/nn.hpp"

namespace vlpd {

inline constexpr std::size_t kInputDivisor = 32;

// Stage taps at strides 8, 16 and 16 relative to the input, CHW.
template <typename T>
struct StageFeatures {
  Array<T> s3, s4, s5;
};

// Per-pixel projected visual vectors V, laid out [H', W', D'].
template <typename T>
struct ProjectedFeatures {
  Array<T> v;
};

template <typename T>
struct EncodedImage {
  StageFeatures<T> stages;
  ProjectedFeatures<T> projected;
};

// One unit-norm row per class, [N, D'], in class-set order.
struct LinguisticVectors {
  DenseArrayF64 l;
  std::vector<std::string> class_names;

  template <typename T>
  Array<T> as() const {
    return l.cast<T>();
  }
};

struct EncoderParams {
  EncoderArch arch;
  std::uint64_t seed = 0;
};

// Toy visual encoder: five 3x3 conv+ReLU stages (strides 2,2,2,2,1) and a
// per-pixel linear projection of the last stage into the D'-wide joint space.
template <typename T>
class VisualEncoder {
 public:
  struct Trace {
    typename nn::Conv2d<T>::Cache c1, c2, c3, c4, c5, proj;
    Array<T> a1, a2;  // post-ReLU activations of the two stem stages
    EncodedImage<T> out;
    Array<T> v_chw;
  };

  VisualEncoder(const EncoderArch& arch, std::uint64_t seed);
  explicit VisualEncoder(const EncoderParams& p) : VisualEncoder(p.arch, p.seed) {}

  // Throws ShapeError unless both image dims are divisible by 32.
  EncodedImage<T> encode(const Array<T>& image, Trace* trace = nullptr) const;

  // Accumulates parameter gradients given gradients on the stage taps and on
  // V (CHW layout). Empty (rank-0) arrays mean "no gradient".
  void backward(const Trace& trace, const Array<T>* ds3, const Array<T>* ds4, const Array<T>* ds5,
                const Array<T>* dv_chw);

  std::vector<nn::Parameter<T>*> parameters();
  std::vector<const nn::Parameter<T>*> parameters() const;
  std::uint64_t parameter_hash() const;

  const EncoderArch& arch() const { return arch_; }
  std::uint64_t seed() const { return seed_; }

 private:
  EncoderArch arch_;
  std::uint64_t seed_;
  nn::Conv2d<T> c1_, c2_, c3_, c4_, c5_, proj_;
};

template <typename T>
EncodedImage<T> encode_image(const Array<T>& image, const EncoderParams& params) {
  return VisualEncoder<T>(params).encode(image);
}

// Substitutes each class name into `prompt_template` at "[CLS]" and maps the
// sentence to a deterministic unit vector (seeded hash expansion).
LinguisticVectors encode_class_prompts(const std::vector<std::string>& class_names,
                                       const std::string& prompt_template, std::uint64_t seed,
                                       int d_prime);

std::string apply_prompt_template(const std::string& prompt_template, const std::string& class_name);

// FNV-1a over parameter names and raw value bytes.
template <typename T>
std::uint64_t hash_parameters(const std::vector<const nn::Parameter<T>*>& params);

}  // namespace vlpd
