// SPDX-License-Identifier: Apache-2.0
//
// Contrastive objectives over critic logits, plus the predictive baseline.
#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "cmc/critic.hpp"
#include "cmc/error.hpp"
#include "cmc/tensor.hpp"

namespace cmc {

/// Row i of `positive` is the congruent partner of row i of `anchor`;
/// `negatives[i]` holds k incongruent candidates for that row.
struct ContrastBatch {
  Tensor anchor;     // [n x d]
  Tensor positive;   // [n x d]
  Tensor negatives;  // [n x k x d]
  Temperature tau;
};

/// (k+1)-way softmax cross-entropy with the positive at index 0, averaged over rows.
inline Tensor contrast_loss(const ContrastBatch& batch) {
  const Tensor& a = batch.anchor;
  if (a.rank() != 2 || batch.positive.shape() != a.shape()) {
    throw DimensionError("contrast_loss: anchor " + format_shape(a.shape()) + " and positive " +
                         format_shape(batch.positive.shape()) + " must both be [n x d]");
  }
  if (batch.negatives.rank() != 3 || batch.negatives.dim(0) != a.rows() || batch.negatives.dim(2) != a.cols()) {
    throw DimensionError("contrast_loss: negatives " + format_shape(batch.negatives.shape()) + " do not fit anchors " +
                         format_shape(a.shape()));
  }
  double inv_tau = 1.0 / batch.tau.value();
  Tensor pos = row_dot(a, batch.positive);
  Tensor neg = batched_row_dot(a, batch.negatives);
  Tensor logits = scale(concat_cols({pos, neg}), inv_tau);
  return log_softmax_nll(logits, std::vector<std::size_t>(a.rows(), 0));
}

/// For each row, every other row of z in original order: [n x (n-1) x d].
inline Tensor within_batch_negatives(const Tensor& z) {
  if (z.rank() != 2 || z.rows() < 2) {
    throw ParameterError("within_batch_negatives: need at least two rows, got " + format_shape(z.shape()));
  }
  std::size_t n = z.rows();
  std::vector<std::size_t> idx;
  idx.reserve(n * (n - 1));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) idx.push_back(j);
  return gather_rows(z, n, n - 1, std::move(idx));
}

/// L(V1,V2) = L^{V1,V2} + L^{V2,V1}. `negatives_from_2` are view-2 candidates
/// for view-1 anchors; `negatives_from_1` the mirror.
inline Tensor symmetric_two_view_loss(const Tensor& z1, const Tensor& z2, const Tensor& negatives_from_2,
                                      const Tensor& negatives_from_1, Temperature tau) {
  Tensor forward_term = contrast_loss({z1, z2, negatives_from_2, tau});
  Tensor backward_term = contrast_loss({z2, z1, negatives_from_1, tau});
  return add(forward_term, backward_term);
}

/// Symmetric loss using the other rows of the batch as negatives.
inline Tensor symmetric_two_view_loss(const Tensor& z1, const Tensor& z2, Temperature tau) {
  return symmetric_two_view_loss(z1, z2, within_batch_negatives(z2), within_batch_negatives(z1), tau);
}

struct NceConfig {
  std::size_t m = 4096;
  /// Normalization constant; unset until calibrated.
  std::optional<double> z0;
  bool set_z0_from_first_batch = true;
};

/// Z0 = N * mean(h) over every data and noise score of the batch.
inline double estimate_z0(const Tensor& data_logits, const Tensor& noise_logits, std::size_t pool_size) {
  double total = 0.0;
  for (double s : data_logits.data()) total += std::exp(s);
  for (double s : noise_logits.data()) total += std::exp(s);
  double mean_h = total / static_cast<double>(data_logits.size() + noise_logits.size());
  return static_cast<double>(pool_size) * mean_h;
}

/// Binary data-vs-noise objective with uniform noise p_n = 1/pool_size and
/// the unnormalized model h/Z0 in place of the data density. Per anchor:
///   -log P(D=1 | data) - sum_j log P(D=0 | noise_j),
/// with P(D=1 | v) = (h/Z0) / (h/Z0 + m p_n). Averaged over anchors.
/// Calibrates cfg.z0 from this batch when it is unset and calibration is on.
inline Tensor nce_loss(const Tensor& anchor, const Tensor& data, const Tensor& noise, NceConfig& cfg, Temperature tau,
                       std::size_t pool_size) {
  if (anchor.rank() != 2 || data.shape() != anchor.shape()) {
    throw DimensionError("nce_loss: anchor " + format_shape(anchor.shape()) + " and data " +
                         format_shape(data.shape()) + " must both be [n x d]");
  }
  if (noise.rank() != 3 || noise.dim(0) != anchor.rows() || noise.dim(2) != anchor.cols()) {
    throw DimensionError("nce_loss: noise " + format_shape(noise.shape()) + " does not fit anchors " +
                         format_shape(anchor.shape()));
  }
  std::size_t m = noise.dim(1);
  if (m != cfg.m) throw ParameterError("nce_loss: got " + std::to_string(m) + " noise samples, configured m=" + std::to_string(cfg.m));
  if (pool_size == 0) throw ParameterError("nce_loss: noise pool must be non-empty");
  double inv_tau = 1.0 / tau.value();
  Tensor data_logits = scale(row_dot(anchor, data), inv_tau);         // [n x 1]
  Tensor noise_logits = scale(batched_row_dot(anchor, noise), inv_tau);  // [n x m]
  if (!cfg.z0) {
    if (!cfg.set_z0_from_first_batch) throw ConfigError("nce_loss: Z0 is unset and first-batch estimation is disabled");
    cfg.z0 = estimate_z0(data_logits, noise_logits, pool_size);
  }
  if (!(*cfg.z0 > 0.0)) throw ConfigError("nce_loss: Z0 must be positive");
  // log(m * p_n) + log Z0, so that a - b = log(h/Z0) - log(m p_n).
  double offset = std::log(static_cast<double>(m) / static_cast<double>(pool_size)) + std::log(*cfg.z0);
  Tensor data_term = softplus(scale(add_scalar(data_logits, -offset), -1.0));
  Tensor noise_term = softplus(add_scalar(noise_logits, -offset));
  double n = static_cast<double>(anchor.rows());
  return scale(add(sum(data_term), sum(noise_term)), 1.0 / n);
}

/// Global embeddings of one view against local features of the other: for each
/// position p, an n-way softmax over every sample's local feature at p with the
/// sample's own feature as the target. Averaged over positions.
inline Tensor subpatch_contrast_loss(const Tensor& global_embed, const Tensor& local_features, Temperature tau) {
  if (global_embed.rank() != 2) throw DimensionError("subpatch_contrast_loss: global embeddings must be [n x d]");
  if (local_features.rank() != 3 || local_features.dim(0) != global_embed.rows() ||
      local_features.dim(2) != global_embed.cols()) {
    throw DimensionError("subpatch_contrast_loss: local features " + format_shape(local_features.shape()) +
                         " do not fit global " + format_shape(global_embed.shape()));
  }
  std::size_t n = global_embed.rows(), g = local_features.dim(1);
  std::vector<std::size_t> targets(n);
  for (std::size_t i = 0; i < n; ++i) targets[i] = i;
  Tensor total;
  for (std::size_t p = 0; p < g; ++p) {
    Tensor logits = score(global_embed, take_middle(local_features, p), tau);
    Tensor term = log_softmax_nll(logits, targets);
    total = total.defined() ? add(total, term) : term;
  }
  return scale(total, 1.0 / static_cast<double>(g));
}

enum class PredictiveNorm { l1, l2 };

/// Mean per-element L1 or squared error between a prediction and its target.
inline Tensor reconstruction_loss(const Tensor& prediction, const Tensor& target, PredictiveNorm norm) {
  if (prediction.shape() != target.shape()) {
    throw DimensionError("predictive loss: prediction " + format_shape(prediction.shape()) + " vs target " +
                         format_shape(target.shape()));
  }
  Tensor diff = sub(prediction, target);
  return mean(norm == PredictiveNorm::l1 ? abs(diff) : square(diff));
}

/// Encoder-decoder regression from v1 to v2.
inline Tensor predictive_loss(const Tensor& v1, const Tensor& v2, const EncoderParams& encoder, const Mlp& decoder,
                              PredictiveNorm norm) {
  return reconstruction_loss(forward(decoder, encode(encoder, v1)), v2, norm);
}

}  // namespace cmc
