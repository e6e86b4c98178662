#include "vlpd/cross_modal.hpp"

#include <cmath>

namespace vlpd {

template <typename T>
ScoreMap<T> cosine_score_map(const ProjectedFeatures<T>& v, const Array<T>& l,
                             const std::vector<std::string>& classes) {
  require_rank(v.v, 3, "projected features");
  require_rank(l, 2, "linguistic vectors");
  const std::size_t h = v.v.dim(0), w = v.v.dim(1), d = v.v.dim(2), n = l.dim(0);
  if (l.dim(1) != d) {
    throw ShapeError("projected width " + std::to_string(d) + " != linguistic width " +
                     std::to_string(l.dim(1)));
  }
  if (classes.size() != n) throw ShapeError("class name count does not match linguistic rows");

  std::vector<double> l_norm(n);
  for (std::size_t c = 0; c < n; ++c) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += double(l(c, k)) * double(l(c, k));
    l_norm[c] = std::sqrt(s);
  }

  ScoreMap<T> out{Array<T>({h, w, n}), classes, 0};
  for (std::size_t i = 0; i < h * w; ++i) {
    const T* vi = v.v.data() + i * d;
    double vn = 0.0;
    for (std::size_t k = 0; k < d; ++k) vn += double(vi[k]) * double(vi[k]);
    vn = std::sqrt(vn);
    if (vn == 0.0) ++out.zero_norm_pixels;
    for (std::size_t c = 0; c < n; ++c) {
      if (vn == 0.0 || l_norm[c] == 0.0) {
        out.s[i * n + c] = T{0};
        continue;
      }
      double dot = 0.0;
      const T* lc = l.data() + c * d;
      for (std::size_t k = 0; k < d; ++k) dot += double(vi[k]) * double(lc[k]);
      out.s[i * n + c] = static_cast<T>(std::clamp(dot / (vn * l_norm[c]), -1.0, 1.0));
    }
  }
  return out;
}

template <typename T>
Array<T> cosine_score_map_backward(const ProjectedFeatures<T>& v, const Array<T>& l, const Array<T>& s,
                                   const Array<T>& ds) {
  const std::size_t h = v.v.dim(0), w = v.v.dim(1), d = v.v.dim(2), n = l.dim(0);
  require_dims(ds, {h, w, n}, "score map gradient");
  std::vector<double> l_norm(n);
  for (std::size_t c = 0; c < n; ++c) {
    double acc = 0.0;
    for (std::size_t k = 0; k < d; ++k) acc += double(l(c, k)) * double(l(c, k));
    l_norm[c] = std::sqrt(acc);
  }
  Array<T> dv({h, w, d});
  std::vector<double> g(d);
  for (std::size_t i = 0; i < h * w; ++i) {
    const T* vi = v.v.data() + i * d;
    double vn2 = 0.0;
    for (std::size_t k = 0; k < d; ++k) vn2 += double(vi[k]) * double(vi[k]);
    if (vn2 == 0.0) continue;
    const double vn = std::sqrt(vn2);
    std::fill(g.begin(), g.end(), 0.0);
    // dS_c/dV = L_c / (|L_c||V|) - S_c V / |V|^2
    double radial = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      if (l_norm[c] == 0.0) continue;
      const double gc = double(ds[i * n + c]);
      if (gc == 0.0) continue;
      const double a = gc / (l_norm[c] * vn);
      const T* lc = l.data() + c * d;
      for (std::size_t k = 0; k < d; ++k) g[k] += a * double(lc[k]);
      radial += gc * double(s[i * n + c]);
    }
    for (std::size_t k = 0; k < d; ++k) {
      dv[i * d + k] = static_cast<T>(g[k] - radial * double(vi[k]) / vn2);
    }
  }
  return dv;
}

std::filesystem::path pseudo_label_path(const std::filesystem::path& image_path,
                                        const std::filesystem::path& cache_dir) {
  return cache_dir / (image_path.stem().string() + ".vls");
}

template ScoreMap<float> cosine_score_map(const ProjectedFeatures<float>&, const Array<float>&,
                                          const std::vector<std::string>&);
template ScoreMap<double> cosine_score_map(const ProjectedFeatures<double>&, const Array<double>&,
                                           const std::vector<std::string>&);
template Array<float> cosine_score_map_backward(const ProjectedFeatures<float>&, const Array<float>&,
                                                const Array<float>&, const Array<float>&);
template Array<double> cosine_score_map_backward(const ProjectedFeatures<double>&, const Array<double>&,
                                                 const Array<double>&, const Array<double>&);

}  // namespace vlpd
