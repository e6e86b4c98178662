#include "vlpd/model.hpp"

#include "vlpd/psc_loss.hpp"

namespace vlpd {
namespace {

template <typename T>
void add_into(Array<T>& dst, const Array<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

template <typename T>
VlpdNet<T>::VlpdNet(const RunConfig& cfg, LinguisticVectors vectors)
    : head_arch_(cfg.head),
      stride_(cfg.stride),
      vectors_(std::move(vectors)),
      l_(vectors_.as<T>()),
      encoder_(cfg.encoder, cfg.seed),
      d3_("deconv.s3", cfg.encoder.c3, cfg.head.deconv_s3, 1, 1, 0),
      d4_("deconv.s4", cfg.encoder.c4, cfg.head.deconv_s4, 1, 1, 0),
      d5_("deconv.s5", cfg.encoder.c5, cfg.head.deconv_s5, 1, 1, 0),
      head_(cfg.head.feature_dim() + int(vectors_.class_names.size()) - 1, cfg.head.hidden, cfg.seed) {
  if (l_.dim(1) != std::size_t(cfg.encoder.d_prime)) {
    throw ConfigError("linguistic vector width does not match encoder d_prime");
  }
  Rng rng(mix_seed(cfg.seed, 0x6465636f6e76ULL));
  for (auto* c : {&d3_, &d4_, &d5_}) c->init(rng);
}

template <typename T>
ForwardResult<T> VlpdNet<T>::forward(const Array<T>& image, Trace* trace) const {
  ForwardResult<T> r;
  r.encoded = encoder_.encode(image, trace ? &trace->encoder : nullptr);
  r.s_bar = cosine_score_map(r.encoded.projected, l_, vectors_.class_names);

  const std::size_t h = image.dim(1) / std::size_t(stride_), w = image.dim(2) / std::size_t(stride_);
  const auto& st = r.encoded.stages;
  const Array<T> b3 = d3_.forward(st.s3, trace ? &trace->d3 : nullptr);
  const Array<T> b4 = d4_.forward(st.s4, trace ? &trace->d4 : nullptr);
  const Array<T> b5 = d5_.forward(st.s5, trace ? &trace->d5 : nullptr);
  if (trace) {
    trace->r3 = b3.dims();
    trace->r4 = b4.dims();
    trace->r5 = b5.dims();
  }
  const std::size_t d = feature_dim(), hw = h * w;
  r.e = Array<T>({d, h, w});
  std::size_t off = 0;
  for (const Array<T>* b : {&b3, &b4, &b5}) {
    const Array<T> up = nn::upsample_bilinear_chw(*b, h, w);
    std::copy(up.data(), up.data() + up.size(), r.e.data() + off * hw);
    off += b->dim(0);
  }

  r.s_dot = upsample_scores(r.s_bar, h, w);
  const std::size_t k = r.s_dot.dim(2);
  Array<T> head_in({d + k, h, w});
  std::copy(r.e.data(), r.e.data() + r.e.size(), head_in.data());
  const Array<T> s_dot_chw = nn::hwc_to_chw(r.s_dot);
  std::copy(s_dot_chw.data(), s_dot_chw.data() + s_dot_chw.size(), head_in.data() + d * hw);
  r.head = head_.forward(head_in, trace ? &trace->head : nullptr);
  if (trace) trace->out = r;
  return r;
}

template <typename T>
void VlpdNet<T>::backward(const Trace& t, const Array<T>* d_s_bar, const Array<T>* d_e,
                          const HeadOutputs<T>* d_head) {
  const Dims& ed = t.out.e.dims();
  const std::size_t d = ed[0], h = ed[1], w = ed[2], hw = h * w;
  Array<T> de(ed);
  if (d_head) {
    const Array<T> d_in = head_.backward(t.head, *d_head);
    std::copy(d_in.data(), d_in.data() + d * hw, de.data());
  }
  if (d_e) add_into(de, *d_e);

  Array<T> ds3, ds4, ds5;
  std::size_t off = 0;
  for (auto [conv, cache, dims, out] : {std::tuple{&d3_, &t.d3, &t.r3, &ds3}, std::tuple{&d4_, &t.d4, &t.r4, &ds4},
                                         std::tuple{&d5_, &t.d5, &t.r5, &ds5}}) {
    const std::size_t c = (*dims)[0];
    Array<T> slice({c, h, w});
    std::copy(de.data() + off * hw, de.data() + (off + c) * hw, slice.data());
    off += c;
    const Array<T> g = nn::upsample_bilinear_chw_backward(slice, (*dims)[1], (*dims)[2]);
    *out = conv->backward(*cache, g);
  }

  Array<T> dv_chw;
  if (d_s_bar) {
    const Array<T> dv = cosine_score_map_backward(t.out.encoded.projected, l_, t.out.s_bar.s, *d_s_bar);
    dv_chw = nn::hwc_to_chw(dv);
  }
  encoder_.backward(t.encoder, &ds3, &ds4, &ds5, d_s_bar ? &dv_chw : nullptr);
}

template <typename T>
std::vector<nn::Parameter<T>*> VlpdNet<T>::parameters() {
  auto out = encoder_.parameters();
  for (auto* c : {&d3_, &d4_, &d5_}) {
    out.push_back(&c->weight);
    out.push_back(&c->bias);
  }
  for (auto* p : head_.parameters()) out.push_back(p);
  return out;
}

template <typename T>
std::vector<const nn::Parameter<T>*> VlpdNet<T>::parameters() const {
  auto out = encoder_.parameters();
  for (const auto* c : {&d3_, &d4_, &d5_}) {
    out.push_back(&c->weight);
    out.push_back(&c->bias);
  }
  for (const auto* p : head_.parameters()) out.push_back(p);
  return out;
}

template <typename T>
void VlpdNet<T>::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

template <typename T>
std::map<std::string, Array<T>> VlpdNet<T>::state() const {
  std::map<std::string, Array<T>> s;
  for (const auto* p : parameters()) s.emplace(p->name, p->value);
  return s;
}

template <typename T>
void VlpdNet<T>::load_state(const std::map<std::string, AnyArray>& state) {
  for (auto* p : parameters()) {
    const auto it = state.find(p->name);
    if (it == state.end()) throw FormatError("checkpoint", "missing parameter '" + p->name + "'");
    Array<T> v = std::visit([](const auto& a) { return a.template cast<T>(); }, it->second);
    if (v.dims() != p->value.dims()) {
      throw FormatError("checkpoint", "parameter '" + p->name + "' has dims " + dims_to_string(v.dims()) +
                                          ", expected " + dims_to_string(p->value.dims()));
    }
    p->value = std::move(v);
  }
}

template class VlpdNet<float>;
template class VlpdNet<double>;

}  // namespace vlpd
