#pragma once

#include <cstdint>
#include <vector>

#include "vlpd/array.hpp"
#include "vlpd/cross_modal.hpp"

namespace vlpd {

// Prototypes with pre-normalisation magnitude below this are masked out.
inline constexpr double kMinPrototypeNorm = 1e-8;

// Per-image prototypes for one mini-batch. Stored before normalisation.
template <typename T>
struct PrototypeBank {
  Array<T> negatives;                   // [B, K, D], K = N - 1 context classes
  Array<T> positive;                    // [B, D]
  std::vector<std::uint8_t> neg_valid;  // B * K
  std::vector<std::uint8_t> pos_valid;  // B

  std::size_t batch() const { return positive.dim(0); }
  std::size_t classes() const { return negatives.dim(1); }
  std::size_t valid_negatives() const;
};

// One image's inputs to the contrastive term: detection features E [D, H, W],
// pedestrian Gaussian G [H, W] and normalised context scores S_hat [H, W, K].
template <typename T>
struct PscImage {
  const Array<T>* e = nullptr;
  const Array<T>* g = nullptr;
  const Array<T>* s_hat = nullptr;
};

template <typename T>
struct PscResult {
  double value = 0.0;
  std::size_t queries = 0;
  std::size_t valid_negatives = 0;
  bool no_positives = false;       // M = 0 over the batch; value is 0
  std::vector<Array<T>> grad_e;    // per image, [D, H, W]; filled by psc_loss_with_grad
};

// Bilinearly upsamples S_bar [H', W', N] to [h, w, N-1], dropping the human
// channel. Throws ConfigError if the class set has no "human".
template <typename T>
Array<T> upsample_scores(const ScoreMap<T>& s_bar, std::size_t h, std::size_t w);

// Softmax over the class axis of [H, W, K] with temperature tau_prime.
template <typename T>
Array<T> temperature_softmax(const Array<T>& s_dot, double tau_prime);

// Row k = sum_i E_i * weights[i, k]. e is [D, H, W], weights [H, W, K];
// result [K, D].
template <typename T>
Array<T> aggregate_prototypes(const Array<T>& e, const Array<T>& weights);

template <typename T>
Array<T> aggregate_prototypes_backward(const Array<T>& weights, const Array<T>& d_prototypes,
                                       std::size_t d, std::size_t h, std::size_t w);

template <typename T>
PrototypeBank<T> build_prototype_bank(const std::vector<PscImage<T>>& batch);

// Contrastive loss of every pedestrian query (E_j at G_j > 0) against its own
// image's positive prototype and every valid negative prototype of the batch.
// Averaged over all queries of the batch.
template <typename T>
PscResult<T> psc_loss(const std::vector<PscImage<T>>& batch, const PrototypeBank<T>& bank, double tau);

// Builds the bank from `batch` and differentiates through queries and
// prototypes with G and S_hat held constant.
template <typename T>
PscResult<T> psc_loss_with_grad(const std::vector<PscImage<T>>& batch, double tau);

}  // namespace vlpd
