#pragma once

// Scalar-loop reference implementations used to cross-check the library.
// Nothing here calls into the code under test except plain data types.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "vlpd/array.hpp"
#include "vlpd/box.hpp"
#include "vlpd/rng.hpp"

namespace oracle {

using vlpd::Array;
using vlpd::BoundingBox;

inline Array<double> random_array(vlpd::Rng& rng, vlpd::Dims dims, double lo = -1.0, double hi = 1.0) {
  Array<double> a(std::move(dims));
  for (auto& v : a.values()) v = rng.uniform(lo, hi);
  return a;
}

// v [H, W, D], l [N, D] -> [H, W, N]
inline Array<double> cosine(const Array<double>& v, const Array<double>& l) {
  const std::size_t h = v.dim(0), w = v.dim(1), d = v.dim(2), n = l.dim(0);
  Array<double> s({h, w, n});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < n; ++c) {
        double dot = 0, nv = 0, nl = 0;
        for (std::size_t k = 0; k < d; ++k) {
          dot += v(y, x, k) * l(c, k);
          nv += v(y, x, k) * v(y, x, k);
          nl += l(c, k) * l(c, k);
        }
        s(y, x, c) = (nv == 0 || nl == 0) ? 0.0 : dot / (std::sqrt(nv) * std::sqrt(nl));
      }
  return s;
}

inline double smooth_l1(double x) { return std::abs(x) < 1 ? 0.5 * x * x : std::abs(x) - 0.5; }

inline double vls(const Array<double>& pred, const Array<double>& tgt) {
  double sum = 0;
  for (std::size_t i = 0; i < pred.dim(0); ++i)
    for (std::size_t j = 0; j < pred.dim(1); ++j)
      for (std::size_t c = 0; c < pred.dim(2); ++c) sum += smooth_l1(pred(i, j, c) - tgt(i, j, c));
  return sum / double(pred.size());
}

inline std::vector<double> softmax(const std::vector<double>& s, double tau) {
  double m = *std::max_element(s.begin(), s.end());
  std::vector<double> out(s.size());
  double z = 0;
  for (std::size_t i = 0; i < s.size(); ++i) z += out[i] = std::exp((s[i] - m) / tau);
  for (auto& v : out) v /= z;
  return out;
}

// e [D, H, W], weights [H, W, K] -> [K, D]
inline Array<double> aggregate(const Array<double>& e, const Array<double>& wts) {
  const std::size_t d = e.dim(0), h = e.dim(1), w = e.dim(2), k = wts.dim(2);
  Array<double> p({k, d});
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t ch = 0; ch < d; ++ch) {
      double acc = 0;
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) acc += e(ch, y, x) * wts(y, x, c);
      p(c, ch) = acc;
    }
  return p;
}

struct PscCase {
  std::vector<Array<double>> e;      // [D, H, W]
  std::vector<Array<double>> g;      // [H, W]
  std::vector<Array<double>> s_hat;  // [H, W, K]
};

inline std::vector<double> unit(std::vector<double> v, bool* ok) {
  double n = 0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  *ok = n >= 1e-8;
  if (*ok)
    for (auto& x : v) x /= n;
  return v;
}

// Mean over queries (E_j with G_j > 0) of the contrastive loss against the
// inner-image positive and every valid negative of the batch.
inline double psc(const PscCase& c, double tau, std::size_t* queries = nullptr) {
  const std::size_t b_n = c.e.size();
  const std::size_t d = c.e[0].dim(0), h = c.e[0].dim(1), w = c.e[0].dim(2), k = c.s_hat[0].dim(2);
  std::vector<std::vector<double>> negs;
  std::vector<std::vector<double>> pos(b_n);
  std::vector<bool> pos_ok(b_n);
  for (std::size_t b = 0; b < b_n; ++b) {
    for (std::size_t cls = 0; cls < k; ++cls) {
      std::vector<double> p(d, 0.0);
      for (std::size_t ch = 0; ch < d; ++ch)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x) p[ch] += c.e[b](ch, y, x) * c.s_hat[b](y, x, cls);
      bool ok;
      p = unit(p, &ok);
      if (ok) negs.push_back(p);
    }
    std::vector<double> p(d, 0.0);
    for (std::size_t ch = 0; ch < d; ++ch)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) p[ch] += c.e[b](ch, y, x) * c.g[b](y, x);
    bool ok;
    pos[b] = unit(p, &ok);
    pos_ok[b] = ok;
  }
  double total = 0;
  std::size_t m = 0;
  for (std::size_t b = 0; b < b_n; ++b)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        if (c.g[b](y, x) <= 0) continue;
        std::vector<double> q(d);
        for (std::size_t ch = 0; ch < d; ++ch) q[ch] = c.e[b](ch, y, x);
        bool ok;
        q = unit(q, &ok);
        auto dot = [&](const std::vector<double>& a) {
          double s = 0;
          for (std::size_t i = 0; i < d; ++i) s += a[i] * q[i];
          return s;
        };
        const double lp = pos_ok[b] ? dot(pos[b]) / tau : 0.0;
        double denom = std::exp(lp);
        for (const auto& n : negs) denom += std::exp(dot(n) / tau);
        total += -(lp - std::log(denom));
        ++m;
      }
  if (queries) *queries = m;
  return m == 0 ? 0.0 : total / double(m);
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

struct DetTerms {
  double center = 0, scale = 0, offset = 0, total = 0;
};

// center/scale [H, W], offset [H, W, 2]; pos marks positive cells.
inline DetTerms detection(const Array<double>& logit, const Array<double>& scale, const Array<double>& offset,
                          const Array<double>& g, const Array<double>& s_t, const Array<double>& o_t,
                          const std::vector<std::uint8_t>& pos) {
  const std::size_t h = logit.dim(0), w = logit.dim(1);
  double lc = 0, ls = 0, lo = 0;
  std::size_t npos = 0;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double p = sigmoid(logit(y, x));
      if (pos[y * w + x]) {
        ++npos;
        lc += -std::pow(1 - p, 2) * std::log(p);
        ls += smooth_l1(scale(y, x) - s_t(y, x));
        lo += smooth_l1(offset(y, x, 0) - o_t(y, x, 0)) + smooth_l1(offset(y, x, 1) - o_t(y, x, 1));
      } else {
        lc += -std::pow(1 - g(y, x), 4) * std::pow(p, 2) * std::log(1 - p);
      }
    }
  DetTerms t;
  t.center = lc / std::max<double>(1, double(npos));
  t.scale = npos ? ls / double(npos) : 0;
  t.offset = npos ? lo / double(npos) : 0;
  t.total = 0.01 * t.center + 1.0 * t.scale + 0.1 * t.offset;
  return t;
}

inline double iou(const BoundingBox& a, const BoundingBox& b) {
  const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const double inter = ix * iy;
  return inter / (a.w * a.h + b.w * b.h - inter);
}

// Greedy NMS as a fixed point: box i (in priority order) is kept iff no
// earlier kept box overlaps it at >= thr. Found by checking every subset.
inline std::vector<std::size_t> nms_exhaustive(const std::vector<BoundingBox>& boxes, double thr) {
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (*boxes[a].score != *boxes[b].score) return *boxes[a].score > *boxes[b].score;
    if (boxes[a].x != boxes[b].x) return boxes[a].x < boxes[b].x;
    return boxes[a].y < boxes[b].y;
  });
  const std::size_t n = boxes.size();
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    bool ok = true;
    for (std::size_t r = 0; r < n && ok; ++r) {
      bool suppressed = false;
      for (std::size_t q = 0; q < r; ++q)
        if ((mask >> q & 1) && oracle::iou(boxes[order[q]], boxes[order[r]]) >= thr) suppressed = true;
      ok = bool(mask >> r & 1) == !suppressed;
    }
    if (ok) {
      std::vector<std::size_t> kept;
      for (std::size_t r = 0; r < n; ++r)
        if (mask >> r & 1) kept.push_back(order[r]);
      return kept;
    }
  }
  return {};
}

enum Label { kTp = 0, kIgnored = 1, kFp = 2 };

// Exhaustive search over assignments of detections (in descending score
// order) to {gt index, ignore, none}; the greedy rule picks the
// lexicographically best valid assignment where a detection prefers the gt
// of highest iou, then an ignore region, then nothing.
inline std::vector<int> match_exhaustive(const std::vector<BoundingBox>& dets, const std::vector<BoundingBox>& gts,
                                         const std::vector<BoundingBox>& ignores, double thr) {
  const std::size_t n = dets.size(), m = gts.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return *dets[a].score > *dets[b].score; });
  // Choice per detection: 0..m-1 gt, m ignore, m+1 none.
  std::vector<int> choice(n, 0), best;
  auto rank = [&](std::size_t det, int ch) -> double {
    if (ch < int(m)) return 2.0 + oracle::iou(dets[det], gts[std::size_t(ch)]);
    return ch == int(m) ? 1.0 : 0.0;
  };
  std::function<void(std::size_t, std::vector<bool>&)> rec = [&](std::size_t i, std::vector<bool>& used) {
    if (i == n) {
      bool better = best.empty();
      for (std::size_t r = 0; r < n && !better; ++r) {
        const double a = rank(order[r], choice[r]), b = rank(order[r], best[r]);
        if (a != b) {
          better = a > b;
          break;
        }
      }
      if (better) best = choice;
      return;
    }
    const auto& d = dets[order[i]];
    for (int ch = 0; ch <= int(m) + 1; ++ch) {
      if (ch < int(m)) {
        if (used[std::size_t(ch)] || oracle::iou(d, gts[std::size_t(ch)]) < thr) continue;
        used[std::size_t(ch)] = true;
        choice[i] = ch;
        rec(i + 1, used);
        used[std::size_t(ch)] = false;
      } else if (ch == int(m)) {
        bool any = false;
        for (const auto& g : ignores) any = any || oracle::iou(d, g) >= thr;
        if (!any) continue;
        choice[i] = ch;
        rec(i + 1, used);
      } else {
        choice[i] = ch;
        rec(i + 1, used);
      }
    }
  };
  std::vector<bool> used(m, false);
  rec(0, used);
  std::vector<int> labels(n);
  for (std::size_t r = 0; r < n; ++r) {
    labels[order[r]] = best[r] < int(m) ? kTp : (best[r] == int(m) ? kIgnored : kFp);
  }
  return labels;
}

// Log-average miss rate by re-thresholding: for every distinct score t, keep
// detections with score >= t and count TP/FP from scratch.
inline double mr2(const std::map<std::string, std::vector<BoundingBox>>& dets,
                  const std::map<std::string, std::vector<BoundingBox>>& gts, double h_min, double v_min,
                  double v_max, double h_max = std::numeric_limits<double>::infinity()) {
  std::vector<double> thresholds;
  for (const auto& [id, ds] : dets)
    for (const auto& d : ds) thresholds.push_back(*d.score);
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  std::size_t n_gt = 0;
  auto in_subset = [&](const BoundingBox& g) {
    return !g.ignore && g.h >= h_min && g.h <= h_max && *g.visible_ratio >= v_min && *g.visible_ratio <= v_max;
  };
  for (const auto& [id, gs] : gts)
    for (const auto& g : gs) n_gt += in_subset(g);
  std::vector<std::pair<double, double>> curve;  // (fppi, mr)
  for (double t : thresholds) {
    std::size_t tp = 0, fp = 0;
    for (const auto& [id, gs] : gts) {
      std::vector<BoundingBox> ev, ig, ds;
      for (const auto& g : gs) (in_subset(g) ? ev : ig).push_back(g);
      auto it = dets.find(id);
      if (it != dets.end())
        for (const auto& d : it->second)
          if (*d.score >= t) ds.push_back(d);
      const auto labels = match_exhaustive(ds, ev, ig, 0.5);
      for (int l : labels) {
        tp += l == kTp;
        fp += l == kFp;
      }
    }
    curve.emplace_back(double(fp) / double(gts.size()), 1.0 - double(tp) / double(n_gt));
  }
  double acc = 0;
  for (int i = 0; i < 9; ++i) {
    const double ref = std::pow(10.0, -2.0 + 2.0 * i / 8.0);
    double best_f = -1, mr = 1.0;
    for (const auto& [f, r] : curve) {
      if (f > ref * (1 + 1e-12)) continue;
      if (f > best_f || (f == best_f && r < mr)) {
        best_f = f;
        mr = r;
      }
    }
    acc += std::log(std::max(mr, 1e-10));
  }
  return std::exp(acc / 9.0);
}

// Max over coordinates of |a - n| / max(|a|, |n|, floor).
inline double max_rel_err(const std::vector<double>& analytic, const std::vector<double>& numeric,
                          double floor = 1e-8) {
  double worst = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double den = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / den);
  }
  return worst;
}

// Central differences of f with respect to every entry of x.
inline std::vector<double> numeric_grad(Array<double>& x, const std::function<double()>& f, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f();
    x[i] = keep - h;
    const double down = f();
    x[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

}  // namespace oracle
