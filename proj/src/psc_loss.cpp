#include "vlpd/psc_loss.hpp"

#include <cmath>
#include <limits>

#include "vlpd/nn.hpp"

namespace vlpd {
namespace {

using Vec = std::vector<double>;

// x / |x| into `out`; returns |x|.
double normalize_into(const double* x, std::size_t d, double* out) {
  double n2 = 0.0;
  for (std::size_t k = 0; k < d; ++k) n2 += x[k] * x[k];
  const double n = std::sqrt(n2);
  if (n > 0.0) {
    for (std::size_t k = 0; k < d; ++k) out[k] = x[k] / n;
  }
  return n;
}

// Gradient of u = x/|x| pulled back to x: (du - u (u . du)) / |x|.
void normalize_backward(const double* u, const double* du, double norm, std::size_t d, double* dx) {
  double dot = 0.0;
  for (std::size_t k = 0; k < d; ++k) dot += u[k] * du[k];
  for (std::size_t k = 0; k < d; ++k) dx[k] = (du[k] - u[k] * dot) / norm;
}

template <typename T>
void check_batch(const std::vector<PscImage<T>>& batch) {
  if (batch.empty()) throw InvalidArgument("psc: empty batch");
  const Dims& ed = batch.front().e->dims();
  for (const auto& img : batch) {
    require_rank(*img.e, 3, "psc detection features");
    if (img.e->dims() != ed) throw ShapeError("psc: detection features differ in dims across the batch");
    const std::size_t h = ed[1], w = ed[2];
    require_dims(*img.g, {h, w}, "psc gaussian map");
    if (img.s_hat) {
      require_rank(*img.s_hat, 3, "psc normalised scores");
      if (img.s_hat->dim(0) != h || img.s_hat->dim(1) != w) throw ShapeError("psc: score map spatial mismatch");
      if (img.s_hat->dim(2) != batch.front().s_hat->dim(2)) throw ShapeError("psc: class count mismatch");
    }
  }
}

// Everything derived from the bank that the query loop needs.
struct NormalizedBank {
  std::size_t b = 0, k = 0, d = 0;
  Vec pos_unit, pos_norm;  // [B, D], [B]
  Vec neg_unit, neg_norm;  // [B*K, D], [B*K]
  std::vector<std::size_t> valid_neg;  // flat indices b*K + c
  std::vector<std::uint8_t> pos_ok;
};

template <typename T>
NormalizedBank normalize_bank(const PrototypeBank<T>& bank) {
  NormalizedBank nb;
  nb.b = bank.batch();
  nb.k = bank.classes();
  nb.d = bank.positive.dim(1);
  nb.pos_unit.assign(nb.b * nb.d, 0.0);
  nb.pos_norm.assign(nb.b, 0.0);
  nb.neg_unit.assign(nb.b * nb.k * nb.d, 0.0);
  nb.neg_norm.assign(nb.b * nb.k, 0.0);
  nb.pos_ok.assign(nb.b, 0);
  Vec tmp(nb.d);
  for (std::size_t b = 0; b < nb.b; ++b) {
    for (std::size_t j = 0; j < nb.d; ++j) tmp[j] = double(bank.positive[b * nb.d + j]);
    nb.pos_norm[b] = normalize_into(tmp.data(), nb.d, nb.pos_unit.data() + b * nb.d);
    nb.pos_ok[b] = bank.pos_valid[b] && nb.pos_norm[b] >= kMinPrototypeNorm;
    for (std::size_t c = 0; c < nb.k; ++c) {
      const std::size_t f = b * nb.k + c;
      for (std::size_t j = 0; j < nb.d; ++j) tmp[j] = double(bank.negatives[f * nb.d + j]);
      nb.neg_norm[f] = normalize_into(tmp.data(), nb.d, nb.neg_unit.data() + f * nb.d);
      if (bank.neg_valid[f] && nb.neg_norm[f] >= kMinPrototypeNorm) nb.valid_neg.push_back(f);
    }
  }
  return nb;
}

// Shared query loop. When `grads` is set, writes d/dE from the query path
// into grad_e and d/d(unit prototypes) into d_pos_unit / d_neg_unit.
template <typename T>
PscResult<T> query_loop(const std::vector<PscImage<T>>& batch, const NormalizedBank& nb, double tau,
                        bool grads, Vec* d_pos_unit, Vec* d_neg_unit) {
  PscResult<T> res;
  res.valid_negatives = nb.valid_neg.size();
  const std::size_t d = nb.d;
  const std::size_t h = batch.front().e->dim(1), w = batch.front().e->dim(2), hw = h * w;
  if (grads) {
    for (const auto& img : batch) res.grad_e.emplace_back(img.e->dims());
  }

  // First pass counts queries so per-query gradients can be scaled directly.
  std::size_t m_total = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    if (!nb.pos_ok[b]) continue;
    const auto& e = *batch[b].e;
    for (std::size_t j = 0; j < hw; ++j) {
      if (!((*batch[b].g)[j] > T{0})) continue;
      double n2 = 0.0;
      for (std::size_t k = 0; k < d; ++k) n2 += double(e[k * hw + j]) * double(e[k * hw + j]);
      if (std::sqrt(n2) >= kMinPrototypeNorm) ++m_total;
    }
  }
  res.queries = m_total;
  if (m_total == 0) {
    res.no_positives = true;
    return res;
  }

  const std::size_t kt = nb.valid_neg.size();
  Vec q_raw(d), q(d), logits(kt + 1), dq(d), dx(d);
  const double inv_m = 1.0 / double(m_total);
  double total = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    if (!nb.pos_ok[b]) continue;
    const auto& e = *batch[b].e;
    const double* pos = nb.pos_unit.data() + b * d;
    for (std::size_t j = 0; j < hw; ++j) {
      if (!((*batch[b].g)[j] > T{0})) continue;
      for (std::size_t k = 0; k < d; ++k) q_raw[k] = double(e[k * hw + j]);
      const double qn = normalize_into(q_raw.data(), d, q.data());
      if (qn < kMinPrototypeNorm) continue;

      double z0 = 0.0;
      for (std::size_t k = 0; k < d; ++k) z0 += q[k] * pos[k];
      logits[0] = z0 / tau;
      double zmax = logits[0];
      for (std::size_t t = 0; t < kt; ++t) {
        const double* n = nb.neg_unit.data() + nb.valid_neg[t] * d;
        double z = 0.0;
        for (std::size_t k = 0; k < d; ++k) z += q[k] * n[k];
        logits[t + 1] = z / tau;
        zmax = std::max(zmax, logits[t + 1]);
      }
      double denom = 0.0;
      for (std::size_t t = 0; t <= kt; ++t) denom += std::exp(logits[t] - zmax);
      const double lse = zmax + std::log(denom);
      total += lse - logits[0];
      if (!grads) continue;

      // d loss_j / d logit_t = softmax_t - [t == 0], scaled by 1/M.
      std::fill(dq.begin(), dq.end(), 0.0);
      for (std::size_t t = 0; t <= kt; ++t) {
        const double p = std::exp(logits[t] - lse);
        const double dz = (p - (t == 0 ? 1.0 : 0.0)) * inv_m / tau;
        if (dz == 0.0) continue;
        const double* proto = t == 0 ? pos : nb.neg_unit.data() + nb.valid_neg[t - 1] * d;
        double* dproto = t == 0 ? d_pos_unit->data() + b * d : d_neg_unit->data() + nb.valid_neg[t - 1] * d;
        for (std::size_t k = 0; k < d; ++k) {
          dq[k] += dz * proto[k];
          dproto[k] += dz * q[k];
        }
      }
      normalize_backward(q.data(), dq.data(), qn, d, dx.data());
      auto& ge = res.grad_e[b];
      for (std::size_t k = 0; k < d; ++k) ge[k * hw + j] += static_cast<T>(dx[k]);
    }
  }
  res.value = total * inv_m;
  return res;
}

}  // namespace

template <typename T>
std::size_t PrototypeBank<T>::valid_negatives() const {
  std::size_t n = 0;
  for (auto v : neg_valid) n += v ? 1 : 0;
  return n;
}

template <typename T>
Array<T> upsample_scores(const ScoreMap<T>& s_bar, std::size_t h, std::size_t w) {
  require_rank(s_bar.s, 3, "upsample_scores input");
  const std::size_t hs = s_bar.s.dim(0), ws = s_bar.s.dim(1), n = s_bar.s.dim(2);
  if (h < hs || w < ws) throw ShapeError("upsample_scores: target smaller than source");
  if (s_bar.classes.size() != n) throw ShapeError("upsample_scores: class names do not match channels");
  std::size_t human = n;
  for (std::size_t c = 0; c < n; ++c) {
    if (s_bar.classes[c] == kHumanClass) human = c;
  }
  if (human == n) throw ConfigError("class set has no 'human' class to exclude from context scores");
  if (n < 2) throw ConfigError("context scores need at least one non-human class");

  Array<T> ctx({n - 1, hs, ws});
  for (std::size_t c = 0, o = 0; c < n; ++c) {
    if (c == human) continue;
    for (std::size_t i = 0; i < hs * ws; ++i) ctx[o * hs * ws + i] = s_bar.s[i * n + c];
    ++o;
  }
  return nn::chw_to_hwc(nn::upsample_bilinear_chw(ctx, h, w));
}

template <typename T>
Array<T> temperature_softmax(const Array<T>& s_dot, double tau_prime) {
  require_rank(s_dot, 3, "temperature_softmax input");
  if (!(tau_prime > 0.0)) throw InvalidArgument("tau_prime must be > 0");
  const std::size_t k = s_dot.dim(2), px = s_dot.dim(0) * s_dot.dim(1);
  Array<T> out(s_dot.dims());
  std::vector<double> ex(k);
  for (std::size_t i = 0; i < px; ++i) {
    const T* row = s_dot.data() + i * k;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) mx = std::max(mx, double(row[c]) / tau_prime);
    double sum = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      ex[c] = std::exp(double(row[c]) / tau_prime - mx);
      sum += ex[c];
    }
    for (std::size_t c = 0; c < k; ++c) out[i * k + c] = static_cast<T>(ex[c] / sum);
  }
  return out;
}

template <typename T>
Array<T> aggregate_prototypes(const Array<T>& e, const Array<T>& weights) {
  require_rank(e, 3, "aggregate_prototypes features");
  require_rank(weights, 3, "aggregate_prototypes weights");
  const std::size_t d = e.dim(0), h = e.dim(1), w = e.dim(2), k = weights.dim(2);
  if (weights.dim(0) != h || weights.dim(1) != w) {
    throw ShapeError("aggregate_prototypes: features " + dims_to_string(e.dims()) + " vs weights " +
                     dims_to_string(weights.dims()));
  }
  // [K, D] = weights^T [K, HW] x E^T [HW, D]
  Array<T> out({k, d});
  nn::ConstMatrixMap<T> em(e.data(), Eigen::Index(d), Eigen::Index(h * w));
  nn::ConstMatrixMap<T> wm(weights.data(), Eigen::Index(h * w), Eigen::Index(k));
  nn::MatrixMap<T> om(out.data(), Eigen::Index(k), Eigen::Index(d));
  om.noalias() = wm.transpose() * em.transpose();
  return out;
}

template <typename T>
Array<T> aggregate_prototypes_backward(const Array<T>& weights, const Array<T>& d_prototypes, std::size_t d,
                                       std::size_t h, std::size_t w) {
  const std::size_t k = weights.dim(2);
  require_dims(d_prototypes, {k, d}, "prototype gradient");
  Array<T> de({d, h, w});
  nn::ConstMatrixMap<T> wm(weights.data(), Eigen::Index(h * w), Eigen::Index(k));
  nn::ConstMatrixMap<T> gm(d_prototypes.data(), Eigen::Index(k), Eigen::Index(d));
  nn::MatrixMap<T> dm(de.data(), Eigen::Index(d), Eigen::Index(h * w));
  dm.noalias() = gm.transpose() * wm.transpose();
  return de;
}

template <typename T>
PrototypeBank<T> build_prototype_bank(const std::vector<PscImage<T>>& batch) {
  check_batch(batch);
  const std::size_t b_n = batch.size();
  const std::size_t d = batch.front().e->dim(0), h = batch.front().e->dim(1), w = batch.front().e->dim(2);
  const std::size_t k = batch.front().s_hat->dim(2);
  PrototypeBank<T> bank{Array<T>({b_n, k, d}), Array<T>({b_n, d}), std::vector<std::uint8_t>(b_n * k, 0),
                        std::vector<std::uint8_t>(b_n, 0)};
  for (std::size_t b = 0; b < b_n; ++b) {
    const Array<T> neg = aggregate_prototypes(*batch[b].e, *batch[b].s_hat);
    const Array<T> pos = aggregate_prototypes(*batch[b].e, batch[b].g->reshaped({h, w, 1}));
    std::copy(neg.data(), neg.data() + k * d, bank.negatives.data() + b * k * d);
    std::copy(pos.data(), pos.data() + d, bank.positive.data() + b * d);
    auto norm = [&](const T* p) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += double(p[j]) * double(p[j]);
      return std::sqrt(s);
    };
    bank.pos_valid[b] = norm(pos.data()) >= kMinPrototypeNorm;
    for (std::size_t c = 0; c < k; ++c) bank.neg_valid[b * k + c] = norm(neg.data() + c * d) >= kMinPrototypeNorm;
  }
  return bank;
}

template <typename T>
PscResult<T> psc_loss(const std::vector<PscImage<T>>& batch, const PrototypeBank<T>& bank, double tau) {
  if (!(tau > 0.0)) throw InvalidArgument("tau must be > 0");
  if (batch.empty()) throw InvalidArgument("psc: empty batch");
  if (bank.batch() != batch.size()) throw ShapeError("psc: bank batch size differs from query batch");
  if (bank.positive.dim(1) != batch.front().e->dim(0)) throw ShapeError("psc: prototype width != feature width");
  for (const auto& img : batch) {
    require_dims(*img.g, {img.e->dim(1), img.e->dim(2)}, "psc gaussian map");
  }
  return query_loop(batch, normalize_bank(bank), tau, false, nullptr, nullptr);
}

template <typename T>
PscResult<T> psc_loss_with_grad(const std::vector<PscImage<T>>& batch, double tau) {
  if (!(tau > 0.0)) throw InvalidArgument("tau must be > 0");
  const PrototypeBank<T> bank = build_prototype_bank(batch);
  const NormalizedBank nb = normalize_bank(bank);
  Vec d_pos(nb.b * nb.d, 0.0), d_neg(nb.b * nb.k * nb.d, 0.0);
  PscResult<T> res = query_loop(batch, nb, tau, true, &d_pos, &d_neg);
  if (res.no_positives) return res;

  const std::size_t d = nb.d, h = batch.front().e->dim(1), w = batch.front().e->dim(2);
  Vec dx(d);
  for (std::size_t b = 0; b < nb.b; ++b) {
    // Unit-vector gradients -> raw prototype gradients.
    Array<T> d_pos_raw({1, d});
    if (nb.pos_ok[b]) {
      normalize_backward(nb.pos_unit.data() + b * d, d_pos.data() + b * d, nb.pos_norm[b], d, dx.data());
      for (std::size_t j = 0; j < d; ++j) d_pos_raw[j] = static_cast<T>(dx[j]);
    }
    Array<T> d_neg_raw({nb.k, d});
    for (std::size_t c = 0; c < nb.k; ++c) {
      const std::size_t f = b * nb.k + c;
      if (!bank.neg_valid[f] || nb.neg_norm[f] < kMinPrototypeNorm) continue;
      normalize_backward(nb.neg_unit.data() + f * d, d_neg.data() + f * d, nb.neg_norm[f], d, dx.data());
      for (std::size_t j = 0; j < d; ++j) d_neg_raw[c * d + j] = static_cast<T>(dx[j]);
    }
    auto& ge = res.grad_e[b];
    const Array<T> from_pos = aggregate_prototypes_backward(batch[b].g->reshaped({h, w, 1}), d_pos_raw, d, h, w);
    const Array<T> from_neg = aggregate_prototypes_backward(*batch[b].s_hat, d_neg_raw, d, h, w);
    for (std::size_t i = 0; i < ge.size(); ++i) ge[i] += from_pos[i] + from_neg[i];
  }
  return res;
}

#define VLPD_INSTANTIATE_PSC(T)                                                                          \
  template struct PrototypeBank<T>;                                                                      \
  template Array<T> upsample_scores(const ScoreMap<T>&, std::size_t, std::size_t);                       \
  template Array<T> temperature_softmax(const Array<T>&, double);                                        \
  template Array<T> aggregate_prototypes(const Array<T>&, const Array<T>&);                              \
  template Array<T> aggregate_prototypes_backward(const Array<T>&, const Array<T>&, std::size_t,          \
                                                  std::size_t, std::size_t);                             \
  template PrototypeBank<T> build_prototype_bank(const std::vector<PscImage<T>>&);                       \
  template PscResult<T> psc_loss(const std::vector<PscImage<T>>&, const PrototypeBank<T>&, double);      \
  template PscResult<T> psc_loss_with_grad(const std::vector<PscImage<T>>&, double);

VLPD_INSTANTIATE_PSC(float)
VLPD_INSTANTIATE_PSC(double)

}  // namespace vlpd
