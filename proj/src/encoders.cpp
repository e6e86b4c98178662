#include "vlpd/encoders.hpp"

#include <cstring>

#include "vlpd/error.hpp"
#include "vlpd/rng.hpp"

namespace vlpd {

template <typename T>
VisualEncoder<T>::VisualEncoder(const EncoderArch& arch, std::uint64_t seed)
    : arch_(arch),
      seed_(seed),
      c1_("encoder.c1", 3, arch.c1, 3, 2, 1),
      c2_("encoder.c2", arch.c1, arch.c2, 3, 2, 1),
      c3_("encoder.c3", arch.c2, arch.c3, 3, 2, 1),
      c4_("encoder.c4", arch.c3, arch.c4, 3, 2, 1),
      c5_("encoder.c5", arch.c4, arch.c5, 3, 1, 1),
      proj_("encoder.proj", arch.c5, arch.d_prime, 1, 1, 0) {
  Rng rng(mix_seed(seed, 0x656e636f646572ULL));
  for (auto* conv : {&c1_, &c2_, &c3_, &c4_, &c5_, &proj_}) conv->init(rng);
}

template <typename T>
EncodedImage<T> VisualEncoder<T>::encode(const Array<T>& image, Trace* trace) const {
  require_rank(image, 3, "encode_image input");
  if (image.dim(0) != 3) throw ShapeError("encode_image expects a 3-channel image");
  if (image.dim(1) % kInputDivisor != 0 || image.dim(2) % kInputDivisor != 0) {
    throw ShapeError("image dims " + dims_to_string(image.dims()) + " must be divisible by " +
                     std::to_string(kInputDivisor) + " (height and width)");
  }
  Trace local;
  Trace& t = trace ? *trace : local;
  const bool keep = trace != nullptr;
  t.a1 = nn::relu(c1_.forward(image, keep ? &t.c1 : nullptr));
  t.a2 = nn::relu(c2_.forward(t.a1, keep ? &t.c2 : nullptr));
  EncodedImage<T> out;
  out.stages.s3 = nn::relu(c3_.forward(t.a2, keep ? &t.c3 : nullptr));
  out.stages.s4 = nn::relu(c4_.forward(out.stages.s3, keep ? &t.c4 : nullptr));
  out.stages.s5 = nn::relu(c5_.forward(out.stages.s4, keep ? &t.c5 : nullptr));
  Array<T> v = proj_.forward(out.stages.s5, keep ? &t.proj : nullptr);
  out.projected.v = nn::chw_to_hwc(v);
  if (keep) {
    t.out = out;
    t.v_chw = std::move(v);
  }
  return out;
}

template <typename T>
void VisualEncoder<T>::backward(const Trace& t, const Array<T>* ds3, const Array<T>* ds4,
                                const Array<T>* ds5, const Array<T>* dv_chw) {
  const auto& st = t.out.stages;
  Array<T> g5(st.s5.dims());
  if (ds5) g5 = *ds5;
  if (dv_chw) {
    Array<T> from_proj = proj_.backward(t.proj, *dv_chw);
    for (std::size_t i = 0; i < g5.size(); ++i) g5[i] += from_proj[i];
  }
  Array<T> g4 = c5_.backward(t.c5, nn::relu_backward(st.s5, g5));
  if (ds4) {
    for (std::size_t i = 0; i < g4.size(); ++i) g4[i] += (*ds4)[i];
  }
  Array<T> g3 = c4_.backward(t.c4, nn::relu_backward(st.s4, g4));
  if (ds3) {
    for (std::size_t i = 0; i < g3.size(); ++i) g3[i] += (*ds3)[i];
  }
  Array<T> g2 = c3_.backward(t.c3, nn::relu_backward(st.s3, g3));
  Array<T> g1 = c2_.backward(t.c2, nn::relu_backward(t.a2, g2));
  c1_.backward(t.c1, nn::relu_backward(t.a1, g1), /*need_input_grad=*/false);
}

template <typename T>
std::vector<nn::Parameter<T>*> VisualEncoder<T>::parameters() {
  std::vector<nn::Parameter<T>*> out;
  for (auto* conv : {&c1_, &c2_, &c3_, &c4_, &c5_, &proj_}) {
    out.push_back(&conv->weight);
    out.push_back(&conv->bias);
  }
  return out;
}

template <typename T>
std::vector<const nn::Parameter<T>*> VisualEncoder<T>::parameters() const {
  std::vector<const nn::Parameter<T>*> out;
  for (const auto* conv : {&c1_, &c2_, &c3_, &c4_, &c5_, &proj_}) {
    out.push_back(&conv->weight);
    out.push_back(&conv->bias);
  }
  return out;
}

template <typename T>
std::uint64_t VisualEncoder<T>::parameter_hash() const {
  return hash_parameters<T>(parameters());
}

template <typename T>
std::uint64_t hash_parameters(const std::vector<const nn::Parameter<T>*>& params) {
  std::uint64_t h = fnv1a64("");
  for (const auto* p : params) {
    h = fnv1a64(p->name, h);
    const auto bytes = std::string_view(reinterpret_cast<const char*>(p->value.data()),
                                        p->value.size() * sizeof(T));
    h = fnv1a64(bytes, h);
  }
  return h;
}

std::string apply_prompt_template(const std::string& prompt_template, const std::string& class_name) {
  static const std::string kPlaceholder = "[CLS]";
  const auto pos = prompt_template.find(kPlaceholder);
  if (pos == std::string::npos) {
    throw TemplateError("prompt template '" + prompt_template + "' lacks the [CLS] placeholder");
  }
  std::string out = prompt_template;
  out.replace(pos, kPlaceholder.size(), class_name);
  return out;
}

LinguisticVectors encode_class_prompts(const std::vector<std::string>& class_names,
                                       const std::string& prompt_template, std::uint64_t seed,
                                       int d_prime) {
  if (class_names.empty()) throw InvalidArgument("encode_class_prompts needs at least one class");
  if (d_prime < 1) throw InvalidArgument("d_prime must be positive");
  const std::size_t d = static_cast<std::size_t>(d_prime);
  LinguisticVectors out{DenseArrayF64({class_names.size(), d}), class_names};
  for (std::size_t c = 0; c < class_names.size(); ++c) {
    const std::string sentence = apply_prompt_template(prompt_template, class_names[c]);
    Rng rng(mix_seed(seed, fnv1a64(sentence)));
    double norm2 = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double v = rng.normal();
      out.l(c, k) = v;
      norm2 += v * v;
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (std::size_t k = 0; k < d; ++k) out.l(c, k) *= inv;
  }
  return out;
}

template class VisualEncoder<float>;
template class VisualEncoder<double>;
template std::uint64_t hash_parameters<float>(const std::vector<const nn::Parameter<float>*>&);
template std::uint64_t hash_parameters<double>(const std::vector<const nn::Parameter<double>*>&);

}  // namespace vlpd
