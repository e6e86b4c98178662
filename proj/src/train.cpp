#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "vlpd/pipeline.hpp"
#include "vlpd/psc_loss.hpp"
#include "vlpd/rng.hpp"
#include "vlpd/tensor_io.hpp"
#include "vlpd/vls_loss.hpp"

namespace vlpd {

namespace fs = std::filesystem;

double combined_loss(double l_det, double l_vls, double l_psc, const RunConfig& cfg) {
  const std::pair<const char*, double> terms[] = {{"l_det", l_det}, {"l_vls", l_vls}, {"l_psc", l_psc}};
  for (const auto& [name, v] : terms) {
    if (!std::isfinite(v)) throw DivergenceError(std::string("non-finite loss term ") + name);
    if (v < 0.0) throw InvalidArgument(std::string("negative loss term ") + name);
  }
  return l_det + cfg.lambda1 * l_vls + cfg.lambda2 * l_psc;
}

std::string loss_log_header() {
  return "iteration,l_det,l_vls,l_psc,combined,det_center,det_scale,det_offset,psc_queries";
}

std::string format_loss_record(const LossRecord& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%ld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%zu", r.iteration, r.l_det, r.l_vls,
                r.l_psc, r.combined, r.det_center, r.det_scale, r.det_offset, r.psc_queries);
  return buf;
}

std::vector<LossRecord> read_loss_log(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open loss log '" + path.string() + "'");
  std::string line;
  std::getline(in, line);
  if (line != loss_log_header()) throw FormatError("loss log", "unexpected header");
  std::vector<LossRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    LossRecord r;
    if (std::sscanf(line.c_str(), "%ld,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%zu", &r.iteration, &r.l_det, &r.l_vls, &r.l_psc,
                    &r.combined, &r.det_center, &r.det_scale, &r.det_offset, &r.psc_queries) != 9) {
      throw FormatError("loss log", "malformed record '" + line + "'");
    }
    out.push_back(r);
  }
  return out;
}

bool deterministic_mode_from_env() {
  const char* v = std::getenv("VLPD_DETERMINISTIC");
  return v != nullptr && std::string(v) == "1";
}

LinguisticVectors class_vectors_for(const RunConfig& cfg) {
  const ClassSet classes = compact_classes(cfg.class_policy);
  if (!classes.index_of(kHumanClass)) {
    throw ConfigError("class policy must keep a 'human' class (it is excluded from context prototypes)");
  }
  if (classes.size() < 2) throw ConfigError("class policy needs at least one non-human class");
  return encode_class_prompts(classes.names, cfg.prompt_template, cfg.seed, cfg.encoder.d_prime);
}

namespace {

nlohmann::json pseudo_label_manifest(const RunConfig& cfg, const std::vector<std::string>& classes) {
  return {{"encoder_seed", cfg.seed},
          {"encoder",
           {cfg.encoder.c1, cfg.encoder.c2, cfg.encoder.c3, cfg.encoder.c4, cfg.encoder.c5, cfg.encoder.d_prime}},
          {"prompt_template", cfg.prompt_template},
          {"classes", classes}};
}

template <typename T>
struct Sample {
  std::string id;
  Array<T> image;
  DetectionTargets<T> targets;
  ScoreMap<T> pseudo;
};

template <typename T>
std::vector<Sample<T>> prepare_samples(const RunConfig& cfg, const Dataset& ds, const PseudoLabeler<T>& frozen) {
  if (ds.records.empty()) throw InvalidArgument("training dataset is empty");
  std::vector<Sample<T>> out;
  for (const auto& r : ds.records) {
    const RgbImage img = read_ppm(r.image_path);
    if (img.height % kInputDivisor || img.width % kInputDivisor) {
      throw ShapeError("training image '" + r.image_id + "' dims must be divisible by 32");
    }
    Sample<T> s;
    s.id = r.image_id;
    s.image = standardize<T>(img, cfg.image_mean, cfg.image_std);
    const std::size_t gh = img.height / std::size_t(cfg.stride), gw = img.width / std::size_t(cfg.stride);
    s.targets = build_targets<T>(r.boxes, gh, gw, cfg.stride);
    if (r.pseudo_label_path) {
      s.pseudo.s = load_tensor_as<T>(*r.pseudo_label_path);
      s.pseudo.classes = frozen.vectors().class_names;
      require_dims(s.pseudo.s, {img.height / 16, img.width / 16, s.pseudo.classes.size()}, "cached pseudo labels");
    } else {
      s.pseudo = generate_pseudo_labels(s.image, frozen);
    }
    out.push_back(std::move(s));
  }
  return out;
}

struct BatchLoss {
  double l_det = 0.0;
  double l_vls = 0.0;
  double l_psc = 0.0;
  DetectionLossTerms det;
  std::size_t psc_queries = 0;
};

// Forward (and optionally backward) over one mini-batch. Gradients are those
// of mean(l_det) + lambda1 * mean(l_vls) + lambda2 * l_psc.
template <typename T>
BatchLoss run_batch(VlpdNet<T>& net, const std::vector<Sample<T>>& samples, const std::vector<std::size_t>& idx,
                    const RunConfig& cfg, bool with_grad) {
  const std::size_t b_n = idx.size();
  std::vector<typename VlpdNet<T>::Trace> traces(b_n);
  std::vector<ForwardResult<T>> fwd(b_n);
  std::vector<Array<T>> s_hat(b_n);
  for (std::size_t b = 0; b < b_n; ++b) {
    fwd[b] = net.forward(samples[idx[b]].image, with_grad ? &traces[b] : nullptr);
    s_hat[b] = temperature_softmax(fwd[b].s_dot, cfg.tau_prime);
  }

  BatchLoss out;
  const double inv_b = 1.0 / double(b_n);
  std::vector<HeadOutputs<T>> d_head(b_n);
  std::vector<Array<T>> d_sbar(b_n);
  for (std::size_t b = 0; b < b_n; ++b) {
    const auto& s = samples[idx[b]];
    const DetectionLossTerms det = with_grad ? detection_loss_with_grad(fwd[b].head, s.targets, d_head[b])
                                             : detection_loss(fwd[b].head, s.targets);
    out.l_det += det.total * inv_b;
    out.det.center += det.center * inv_b;
    out.det.scale += det.scale * inv_b;
    out.det.offset += det.offset * inv_b;
    out.l_vls += double(vls_loss(fwd[b].s_bar.s, s.pseudo.s)) * inv_b;
    if (with_grad) {
      for (auto* a : {&d_head[b].center_logits, &d_head[b].scale_pred, &d_head[b].offset_pred}) {
        for (auto& v : a->values()) v = static_cast<T>(v * inv_b);
      }
      if (cfg.lambda1 != 0.0) {
        d_sbar[b] = vls_loss_grad(fwd[b].s_bar.s, s.pseudo.s);
        const T scale = static_cast<T>(cfg.lambda1 * inv_b);
        for (auto& v : d_sbar[b].values()) v *= scale;
      }
    }
  }

  std::vector<PscImage<T>> psc_batch;
  for (std::size_t b = 0; b < b_n; ++b) {
    psc_batch.push_back({&fwd[b].e, &samples[idx[b]].targets.center, &s_hat[b]});
  }
  PscResult<T> psc = (with_grad && cfg.lambda2 != 0.0)
                         ? psc_loss_with_grad(psc_batch, cfg.tau)
                         : psc_loss(psc_batch, build_prototype_bank(psc_batch), cfg.tau);
  out.l_psc = psc.value;
  out.psc_queries = psc.queries;

  if (with_grad) {
    for (std::size_t b = 0; b < b_n; ++b) {
      Array<T>* d_e = nullptr;
      if (!psc.grad_e.empty()) {
        const T scale = static_cast<T>(cfg.lambda2);
        for (auto& v : psc.grad_e[b].values()) v *= scale;
        d_e = &psc.grad_e[b];
      }
      net.backward(traces[b], cfg.lambda1 != 0.0 ? &d_sbar[b] : nullptr, d_e, &d_head[b]);
    }
  }
  return out;
}

template <typename T>
ObjectiveValue evaluate_objective(VlpdNet<T>& net, const std::vector<Sample<T>>& samples, const RunConfig& cfg) {
  ObjectiveValue v;
  std::size_t batches = 0;
  const std::size_t bs = std::size_t(cfg.batch_size);
  for (std::size_t start = 0; start < samples.size(); start += bs) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(samples.size(), start + bs); ++i) idx.push_back(i);
    const BatchLoss l = run_batch(net, samples, idx, cfg, false);
    v.l_det += l.l_det;
    v.l_vls += l.l_vls;
    v.l_psc += l.l_psc;
    ++batches;
  }
  v.l_det /= double(batches);
  v.l_vls /= double(batches);
  v.l_psc /= double(batches);
  v.combined = combined_loss(v.l_det, v.l_vls, v.l_psc, cfg);
  return v;
}

template <typename T>
class Adam {
 public:
  Adam(std::vector<nn::Parameter<T>*> params, double lr) : params_(std::move(params)), lr_(lr) {
    for (auto* p : params_) {
      m_.emplace_back(p->value.dims());
      v_.emplace_back(p->value.dims());
    }
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, double(t_));
    const double c2 = 1.0 - std::pow(kBeta2, double(t_));
    const double step = lr_ * std::sqrt(c2) / c1;
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = *params_[k];
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = double(p.grad[i]);
        const double mi = kBeta1 * double(m[i]) + (1.0 - kBeta1) * g;
        const double vi = kBeta2 * double(v[i]) + (1.0 - kBeta2) * g * g;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        p.value[i] = static_cast<T>(double(p.value[i]) - step * mi / (std::sqrt(vi) + kEps * std::sqrt(c2)));
      }
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  std::vector<nn::Parameter<T>*> params_;
  std::vector<Array<T>> m_, v_;
  double lr_;
  long t_ = 0;
};

// Endless stream of seeded permutations of [0, n).
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::uint64_t seed) : n_(n), seed_(seed) {}

  std::vector<std::size_t> next(std::size_t batch) {
    std::vector<std::size_t> out;
    while (out.size() < std::min(batch, n_)) {
      if (pos_ == order_.size()) reshuffle();
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  void reshuffle() {
    order_.resize(n_);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    Rng rng(mix_seed(seed_, epoch_++));
    for (std::size_t i = n_; i > 1; --i) std::swap(order_[i - 1], order_[std::size_t(rng.integer(0, long(i) - 1))]);
    pos_ = 0;
  }

  std::size_t n_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

void check_cached_labels(const Dataset& ds, const RunConfig& cfg, const std::vector<std::string>& classes) {
  bool any = false;
  for (const auto& r : ds.records) any = any || r.pseudo_label_path.has_value();
  if (!any) return;
  const fs::path manifest = ds.records.front().pseudo_label_path->parent_path() / "manifest.json";
  std::ifstream in(manifest);
  if (!in) throw IoError("pseudo-label cache has no manifest '" + manifest.string() + "'");
  nlohmann::json got;
  try {
    got = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("pseudo-label manifest", e.what());
  }
  if (got != pseudo_label_manifest(cfg, classes)) {
    throw ConfigError("cached pseudo labels were produced with a different encoder seed, architecture or class set");
  }
}

template <typename T>
TrainSummary train_impl(const RunConfig& cfg, const Dataset& ds, const TrainOptions& opt) {
  cfg.validate();
  const LinguisticVectors vectors = class_vectors_for(cfg);
  check_cached_labels(ds, cfg, vectors.class_names);
  const PseudoLabeler<T> frozen(EncoderParams{cfg.encoder, cfg.seed}, vectors);

  TrainSummary summary;
  summary.frozen_hash_before = frozen.encoder_hash();
  VlpdNet<T> net(cfg, vectors);
  summary.trainee_encoder_hash_at_init = net.encoder().parameter_hash();
  if (summary.trainee_encoder_hash_at_init != summary.frozen_hash_before) {
    throw Error(ErrorKind::kConfig, "trainee encoder does not start from the frozen encoder's parameters");
  }

  const auto samples = prepare_samples(cfg, ds, frozen);
  summary.initial = evaluate_objective(net, samples, cfg);

  std::ofstream log;
  if (opt.write_outputs) {
    if (cfg.output_dir.empty()) throw ConfigError("output_dir is required to write training outputs");
    fs::create_directories(cfg.output_dir);
    log.open(fs::path(cfg.output_dir) / "loss_log.csv", std::ios::trunc);
    if (!log) throw IoError("cannot write loss log in '" + cfg.output_dir + "'");
    log << loss_log_header() << '\n';
  }

  Adam<T> adam(net.parameters(), cfg.learning_rate);
  BatchSampler sampler(samples.size(), mix_seed(cfg.seed, 0x6261746368ULL));
  for (long it = 0; it < cfg.iterations; ++it) {
    net.zero_grad();
    const auto idx = sampler.next(std::size_t(cfg.batch_size));
    const BatchLoss l = run_batch(net, samples, idx, cfg, true);
    LossRecord rec{it, l.l_det, l.l_vls, l.l_psc, 0.0, l.det.center, l.det.scale, l.det.offset, l.psc_queries};
    try {
      rec.combined = combined_loss(l.l_det, l.l_vls, l.l_psc, cfg);
    } catch (const DivergenceError& e) {
      throw DivergenceError("iteration " + std::to_string(it) + ": " + e.what() + " (l_det=" +
                            std::to_string(l.l_det) + ", l_vls=" + std::to_string(l.l_vls) +
                            ", l_psc=" + std::to_string(l.l_psc) + ")");
    }
    summary.log.push_back(rec);
    if (log) log << format_loss_record(rec) << '\n' << std::flush;
    if (opt.on_record) opt.on_record(rec);
    adam.step();
  }

  summary.final = evaluate_objective(net, samples, cfg);
  summary.frozen_hash_after = frozen.encoder().parameter_hash();
  if (summary.frozen_hash_after != summary.frozen_hash_before) {
    throw Error(ErrorKind::kConfig, "frozen encoder parameters changed during training");
  }

  if (opt.write_outputs) {
    summary.checkpoint_dir = fs::path(cfg.output_dir) / "checkpoint";
    save_checkpoint(summary.checkpoint_dir, cfg, net, cfg.iterations, summary.frozen_hash_before);
  }
  return summary;
}

}  // namespace

TrainSummary train(const RunConfig& cfg, const Dataset& dataset, const TrainOptions& options) {
  // Training runs on the calling thread only, so determinism mode needs no
  // extra switches; the flag is kept for callers that fan out data loading.
  (void)options.deterministic;
  if (cfg.precision == Precision::kF64) return train_impl<double>(cfg, dataset, options);
  return train_impl<float>(cfg, dataset, options);
}

void cache_pseudo_labels(const Dataset& dataset, const RunConfig& cfg, const fs::path& out) {
  const LinguisticVectors vectors = class_vectors_for(cfg);
  const PseudoLabeler<float> frozen(EncoderParams{cfg.encoder, cfg.seed}, vectors);
  fs::create_directories(out);
  for (const auto& r : dataset.records) {
    const RgbImage img = read_ppm(r.image_path);
    const auto image = standardize<float>(img, cfg.image_mean, cfg.image_std);
    const ScoreMap<float> s = generate_pseudo_labels(image, frozen);
    save_tensor_container(s.s, pseudo_label_path(r.image_path, out));
  }
  std::ofstream m(out / "manifest.json");
  if (!m) throw IoError("cannot write pseudo-label manifest in '" + out.string() + "'");
  m << pseudo_label_manifest(cfg, vectors.class_names).dump(2) << '\n';
}

}  // namespace vlpd
