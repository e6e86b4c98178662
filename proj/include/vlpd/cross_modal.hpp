#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "vlpd/array.hpp"
#include "vlpd/class_policy.hpp"
#include "vlpd/encoders.hpp"

namespace vlpd {

// Per-pixel, per-class cosine scores [H', W', N] in [-1, 1].
template <typename T>
struct ScoreMap {
  Array<T> s;
  std::vector<std::string> classes;
  // Pixels whose projected vector had zero norm; their scores are 0.
  std::size_t zero_norm_pixels = 0;
};

// S[i, c] = <L_c, V_i> / (|L_c| |V_i|). Zero-norm vectors give cosine 0.
template <typename T>
ScoreMap<T> cosine_score_map(const ProjectedFeatures<T>& v, const Array<T>& l,
                             const std::vector<std::string>& classes);

template <typename T>
ScoreMap<T> cosine_score_map(const ProjectedFeatures<T>& v, const LinguisticVectors& l) {
  return cosine_score_map(v, l.as<T>(), l.class_names);
}

// d(loss)/dV given d(loss)/dS; `s` is the forward output. Result is [H', W', D'].
template <typename T>
Array<T> cosine_score_map_backward(const ProjectedFeatures<T>& v, const Array<T>& l,
                                   const Array<T>& s, const Array<T>& ds);

// Frozen encoder + cosine mapping. Pseudo labels are plain data: nothing
// here can carry gradient back into the encoder.
template <typename T>
class PseudoLabeler {
 public:
  PseudoLabeler(const EncoderParams& params, LinguisticVectors vectors)
      : encoder_(params), vectors_(std::move(vectors)), l_(vectors_.as<T>()), hash_(encoder_.parameter_hash()) {}

  ScoreMap<T> operator()(const Array<T>& image) const {
    return cosine_score_map(encoder_.encode(image).projected, l_, vectors_.class_names);
  }

  const VisualEncoder<T>& encoder() const { return encoder_; }
  const LinguisticVectors& vectors() const { return vectors_; }
  std::uint64_t encoder_hash() const { return hash_; }

 private:
  const VisualEncoder<T> encoder_;
  LinguisticVectors vectors_;
  Array<T> l_;
  std::uint64_t hash_;
};

template <typename T>
ScoreMap<T> generate_pseudo_labels(const Array<T>& image, const PseudoLabeler<T>& frozen) {
  return frozen(image);
}

// Cache file for an image's pseudo labels: `<cache_dir>/<image stem>.vls`.
std::filesystem::path pseudo_label_path(const std::filesystem::path& image_path,
                                        const std::filesystem::path& cache_dir);

}  // namespace vlpd
