#include <doctest.h>

#include "oracles.hpp"
#include "vlpd/model.hpp"
#include "vlpd/nn.hpp"

using namespace vlpd;

namespace {

std::vector<double> flat(const Array<double>& a) { return {a.values().begin(), a.values().end()}; }

double dot(const Array<double>& a, const Array<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Direct 6-loop convolution.
Array<double> conv_loops(const nn::Conv2d<double>& c, const Array<double>& x, int k, int stride, int pad) {
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2), cout = std::size_t(c.out_channels());
  const std::size_t ho = (h + 2 * pad - k) / stride + 1, wo = (w + 2 * pad - k) / stride + 1;
  Array<double> y({cout, ho, wo});
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        double s = c.bias.value[o];
        for (std::size_t i = 0; i < cin; ++i)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const long iy = long(oy) * stride + ky - pad, ix = long(ox) * stride + kx - pad;
              if (iy < 0 || ix < 0 || iy >= long(h) || ix >= long(w)) continue;
              s += c.weight.value[((o * cin + i) * k + ky) * k + kx] * x(i, std::size_t(iy), std::size_t(ix));
            }
        y(o, oy, ox) = s;
      }
  return y;
}

}  // namespace

TEST_CASE("conv2d forward matches direct loops and backward matches finite differences") {
  Rng rng(51);
  for (auto [k, stride, pad] : {std::tuple{3, 2, 1}, std::tuple{3, 1, 1}, std::tuple{1, 1, 0}}) {
    nn::Conv2d<double> conv("c", 3, 4, k, stride, pad);
    conv.init(rng);
    for (auto& b : conv.bias.value.values()) b = rng.uniform(-0.1, 0.1);
    auto x = oracle::random_array(rng, {3, 6, 7});
    typename nn::Conv2d<double>::Cache cache;
    const auto y = conv.forward(x, &cache);
    CHECK(max_abs_diff(y, conv_loops(conv, x, k, stride, pad)) <= 1e-12);
    const auto r = oracle::random_array(rng, y.dims());
    auto f = [&] { return dot(conv.forward(x, nullptr), r); };
    conv.weight.zero_grad();
    conv.bias.zero_grad();
    const auto dx = conv.backward(cache, r);
    CHECK(oracle::max_rel_err(flat(dx), oracle::numeric_grad(x, f)) <= 1e-6);
    CHECK(oracle::max_rel_err(flat(conv.weight.grad), oracle::numeric_grad(conv.weight.value, f)) <= 1e-6);
    CHECK(oracle::max_rel_err(flat(conv.bias.grad), oracle::numeric_grad(conv.bias.value, f)) <= 1e-6);
  }
}

TEST_CASE("bilinear upsampling backward is the adjoint of the forward") {
  Rng rng(52);
  const auto x = oracle::random_array(rng, {2, 3, 4});
  const auto up = nn::upsample_bilinear_chw(x, 12, 16);
  const auto r = oracle::random_array(rng, up.dims());
  const auto back = nn::upsample_bilinear_chw_backward(r, 3, 4);
  CHECK(dot(up, r) == doctest::Approx(dot(x, back)).epsilon(1e-12));
  const auto same = nn::upsample_bilinear_chw(x, 3, 4);
  CHECK(max_abs_diff(same, x) <= 1e-15);
}

TEST_CASE("network backward matches finite differences") {
  RunConfig cfg;
  cfg.encoder = EncoderArch{4, 4, 6, 6, 6, 8};
  cfg.head = HeadArch{4, 3, 3, 5};
  const auto names = compact_classes(cfg.class_policy).names;
  VlpdNet<double> net(cfg, encode_class_prompts(names, cfg.prompt_template, cfg.seed, 8));
  Rng rng(53);
  auto params = net.parameters();
  for (auto* p : params)
    if (p->name.find("bias") != std::string::npos)
      for (auto& v : p->value.values()) v = rng.uniform(-0.05, 0.05);
  const auto img = oracle::random_array(rng, {3, 32, 64});
  const auto ref = net.forward(img);
  const auto a = oracle::random_array(rng, ref.s_bar.s.dims());
  const auto b = oracle::random_array(rng, ref.e.dims());
  const HeadOutputs<double> c{oracle::random_array(rng, ref.head.center_logits.dims()),
                              oracle::random_array(rng, ref.head.scale_pred.dims()),
                              oracle::random_array(rng, ref.head.offset_pred.dims())};

  auto objective = [&](bool with_head) {
    const auto r = net.forward(img);
    double s = dot(r.s_bar.s, a) + dot(r.e, b);
    if (with_head) {
      s += dot(r.head.center_logits, c.center_logits) + dot(r.head.scale_pred, c.scale_pred) +
           dot(r.head.offset_pred, c.offset_pred);
    }
    return s;
  };

  // Encoder parameters: S_dot is detached, so probe them without the head term.
  for (bool with_head : {false, true}) {
    typename VlpdNet<double>::Trace tr;
    net.forward(img, &tr);
    net.zero_grad();
    net.backward(tr, &a, &b, with_head ? &c : nullptr);
    for (auto* p : params) {
      if (with_head && p->name.rfind("encoder.", 0) == 0) continue;
      std::vector<double> analytic, numeric;
      for (int probe = 0; probe < 6; ++probe) {
        const std::size_t i = std::size_t(rng.integer(0, long(p->value.size()) - 1));
        const double keep = p->value[i];
        p->value[i] = keep + 1e-5;
        const double up = objective(with_head);
        p->value[i] = keep - 1e-5;
        const double down = objective(with_head);
        p->value[i] = keep;
        analytic.push_back(p->grad[i]);
        numeric.push_back((up - down) / 2e-5);
      }
      INFO(p->name);
      CHECK(oracle::max_rel_err(analytic, numeric, 1e-6) <= 1e-4);
    }
  }
}
