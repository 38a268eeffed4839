// SPDX-License-Identifier: Apache-2.0
//
// Training loops for the contrastive objectives and the predictive baseline.
#pragma once

#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cmc/critic.hpp"
#include "cmc/error.hpp"
#include "cmc/losses.hpp"
#include "cmc/memory_bank.hpp"
#include "cmc/multiview.hpp"
#include "cmc/optim.hpp"
#include "cmc/rng.hpp"
#include "cmc/tensor.hpp"
#include "cmc/views.hpp"

namespace cmc {

enum class LossKind { softmax, nce, subpatch };

inline std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::softmax: return "softmax";
    case LossKind::nce: return "nce";
    case LossKind::subpatch: return "subpatch";
  }
  return "?";
}

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 128;
  double lr = 0.03;
  LrSchedule schedule;
  double sgd_momentum = 0.9;
  double weight_decay = 1e-4;
  double tau = 0.07;
  /// Negatives per anchor drawn from the memory bank.
  std::size_t negatives = 4096;
  LossKind loss_kind = LossKind::softmax;
  double bank_momentum = 0.5;
  /// Use the other rows of the batch instead of the bank.
  bool in_batch_negatives = false;
  std::uint64_t seed = 0;
  /// Log mean cosine between bank rows and fresh embeddings at epoch end.
  bool track_bank_alignment = false;
};

inline void validate(const TrainConfig& cfg) {
  if (cfg.batch_size < 2) throw ConfigError("batch_size must be at least 2");
  if (!(cfg.lr >= 0.0)) throw ConfigError("lr must be non-negative");
  if (!(cfg.tau > 0.0)) throw ConfigError("tau must be positive");
  if (cfg.negatives == 0 && !cfg.in_batch_negatives && cfg.loss_kind != LossKind::subpatch) {
    throw ConfigError("negatives must be positive");
  }
  for (std::size_t i = 1; i < cfg.schedule.milestones.size(); ++i) {
    if (cfg.schedule.milestones[i] <= cfg.schedule.milestones[i - 1]) throw ConfigError("lr milestones must be increasing");
  }
}

/// Encoders for each view, plus local (sub-patch) encoders when the sub-patch
/// objective is used.
struct Model {
  std::map<std::string, EncoderParams> encoders;
  std::map<std::string, EncoderParams> local_encoders;
  /// Number of equal chunks a view is cut into for local features.
  std::size_t chunks = 0;

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (const auto& [_, e] : encoders)
      for (auto& p : e.parameters()) out.push_back(p);
    for (const auto& [_, e] : local_encoders)
      for (auto& p : e.parameters()) out.push_back(p);
    return out;
  }

  std::size_t embed_dim() const { return encoders.begin()->second.embed_dim(); }
};

/// One encoder per view with layers [input, hidden..., embed_dim]. With
/// chunks > 0 each view also gets a local encoder over flat_size / chunks inputs.
inline Model make_model(const Dataset& data, const std::vector<std::string>& views, const std::vector<std::size_t>& hidden,
                        std::size_t embed_dim, std::uint64_t seed, std::size_t chunks = 0) {
  Rng rng(seed);
  Model model;
  model.chunks = chunks;
  for (const auto& v : views) {
    std::vector<std::size_t> sizes{data.view(v).flat_size()};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(embed_dim);
    model.encoders.emplace(v, make_encoder(v, sizes, rng));
  }
  if (chunks > 0) {
    for (const auto& v : views) {
      std::size_t flat = data.view(v).flat_size();
      if (flat % chunks != 0) {
        throw ConfigError("view '" + v + "' of size " + std::to_string(flat) + " does not split into " +
                          std::to_string(chunks) + " chunks");
      }
      std::vector<std::size_t> sizes{flat / chunks};
      sizes.insert(sizes.end(), hidden.begin(), hidden.end());
      sizes.push_back(embed_dim);
      model.local_encoders.emplace(v, make_encoder(v, sizes, rng));
    }
  }
  return model;
}

/// Unit local features [n x chunks x d] from equal contiguous chunks of each row.
inline Tensor local_features(const Model& model, const std::string& view, const Tensor& batch) {
  const auto& enc = model.local_encoders.at(view);
  std::size_t n = batch.rows(), g = model.chunks, w = batch.cols() / g;
  Tensor z = encode(enc, reshape(batch, {n * g, w}));
  return reshape(z, {n, g, enc.embed_dim()});
}

/// I(z_i; z_j) >= ln(k) - loss.
inline double mi_lower_bound(double loss_value, std::size_t k) { return std::log(static_cast<double>(k)) - loss_value; }

struct PairRecord {
  std::string pair;
  double loss = 0.0;         // symmetric pair loss, epoch mean
  double loss_stderr = 0.0;  // standard error of the per-direction loss
  double mi_lb = 0.0;        // ln(k) - per-direction loss
};

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double loss_stderr = 0.0;
  std::vector<PairRecord> pairs;
  std::map<std::string, double> param_norms;
  std::map<std::string, double> bank_alignment;
};

struct TrainingLog {
  std::size_t negatives = 0;
  std::vector<EpochRecord> epochs;
};

namespace detail {

struct RunningStat {
  std::vector<double> values;
  void add(double v) { values.push_back(v); }
  double mean() const {
    return values.empty() ? 0.0 : std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  }
  double stderr_of_mean() const {
    if (values.size() < 2) return 0.0;
    double mu = mean(), ss = 0.0;
    for (double v : values) ss += (v - mu) * (v - mu);
    double var = ss / static_cast<double>(values.size() - 1);
    return std::sqrt(var / static_cast<double>(values.size()));
  }
};

inline std::vector<std::size_t> shuffled_order(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

inline std::string batch_dump(std::size_t epoch, std::size_t batch, std::span<const std::size_t> ids,
                              const std::map<std::string, Tensor>& embeds) {
  std::ostringstream os;
  os << "epoch " << epoch << " batch " << batch << " ids [";
  for (std::size_t i = 0; i < ids.size() && i < 16; ++i) os << (i ? "," : "") << ids[i];
  if (ids.size() > 16) os << ",...";
  os << "]";
  for (const auto& [v, z] : embeds) {
    if (!z.defined()) continue;
    double lo = INFINITY, hi = -INFINITY;
    for (double x : z.data()) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
    os << " " << v << "=[" << lo << "," << hi << "]";
  }
  return os.str();
}

inline double mean_bank_alignment(const Model& model, const Dataset& data, const MemoryBank& bank, const std::string& v) {
  Tensor z = encode(model.encoders.at(v), data.all(v));
  const auto& rows = bank.rows(v);
  double total = 0.0;
  std::size_t d = z.cols();
  for (std::size_t i = 0; i < z.rows(); ++i)
    for (std::size_t j = 0; j < d; ++j) total += z.at(i, j) * rows[i * d + j];
  return total / static_cast<double>(z.rows());
}

}  // namespace detail

/// Train every encoder of `model` on the pairs of `graph`. The bank (sized to
/// the dataset) supplies negatives unless cfg.in_batch_negatives is set.
inline TrainingLog train(Model& model, const Dataset& data, const ViewGraph& graph, MemoryBank& bank, const TrainConfig& cfg) {
  validate(cfg);
  for (const auto& v : graph.view_names) {
    if (!data.has_view(v)) throw ConfigError("graph view '" + v + "' is not in the dataset");
    if (!model.encoders.count(v)) throw ConfigError("model has no encoder for view '" + v + "'");
    if (cfg.loss_kind == LossKind::subpatch && !model.local_encoders.count(v)) {
      throw ConfigError("sub-patch loss needs a local encoder for view '" + v + "'");
    }
  }
  bool use_bank = !cfg.in_batch_negatives && cfg.loss_kind != LossKind::subpatch;
  if (use_bank) {
    if (bank.size() != data.size()) throw ConfigError("memory bank rows do not match dataset size");
    if (bank.dim() != model.embed_dim()) throw ConfigError("memory bank dimension does not match embedding size");
    if (cfg.negatives > data.size() - 1) {
      throw ConfigError("negatives k=" + std::to_string(cfg.negatives) + " exceeds dataset size - 1 = " +
                        std::to_string(data.size() - 1));
    }
  }
  if (cfg.loss_kind == LossKind::nce && !use_bank) throw ConfigError("nce loss draws noise from the memory bank");

  Temperature tau(cfg.tau);
  Sgd opt(model.parameters(), cfg.sgd_momentum, cfg.weight_decay);
  Rng order_rng(Rng::mix(cfg.seed ^ 0x0dd5ULL));
  Rng negative_rng(Rng::mix(cfg.seed ^ 0x4e67ULL));
  BankNegatives bank_source(bank, cfg.negatives, negative_rng);
  InBatchNegatives batch_source;
  NegativeSource& source = use_bank ? static_cast<NegativeSource&>(bank_source) : batch_source;
  std::map<std::string, NceConfig> nce;
  for (const auto& v : graph.view_names) nce[v] = NceConfig{cfg.negatives, std::nullopt, true};

  TrainingLog log;
  log.negatives = use_bank ? cfg.negatives : std::min(cfg.batch_size, data.size()) - 1;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr = cfg.schedule.rate(cfg.lr, epoch, cfg.epochs);
    auto order = detail::shuffled_order(data.size(), order_rng);
    detail::RunningStat total_stat;
    std::vector<detail::RunningStat> pair_stat(graph.pairs.size());
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start + 2 <= data.size(); start += cfg.batch_size, ++batch_index) {
      std::size_t end = std::min(start + cfg.batch_size, data.size());
      std::span<const std::size_t> ids(order.data() + start, end - start);
      if (ids.size() < 2) break;
      std::map<std::string, Tensor> embeds;
      Tensor loss;
      std::vector<double> pair_values;
      try {
        for (const auto& v : graph.view_names) embeds[v] = encode(model.encoders.at(v), data.batch(v, ids));
        if (cfg.loss_kind == LossKind::softmax) {
          auto mv = multiview_loss(graph, embeds, ids, source, tau);
          loss = mv.total;
          for (auto& p : mv.pair_losses) pair_values.push_back(p.item());
        } else if (cfg.loss_kind == LossKind::nce) {
          for (const auto& [a, b] : graph.pairs) {
            Tensor ab = nce_loss(embeds[a], embeds[b], bank.sample_negatives(b, ids, cfg.negatives, negative_rng), nce[b],
                                 tau, bank.size());
            Tensor ba = nce_loss(embeds[b], embeds[a], bank.sample_negatives(a, ids, cfg.negatives, negative_rng), nce[a],
                                 tau, bank.size());
            Tensor pair = add(ab, ba);
            pair_values.push_back(pair.item());
            loss = loss.defined() ? add(loss, pair) : pair;
          }
        } else {
          std::map<std::string, Tensor> locals;
          for (const auto& v : graph.view_names) locals[v] = local_features(model, v, data.batch(v, ids));
          for (const auto& [a, b] : graph.pairs) {
            Tensor pair = add(subpatch_contrast_loss(embeds[a], locals[b], tau), subpatch_contrast_loss(embeds[b], locals[a], tau));
            pair_values.push_back(pair.item());
            loss = loss.defined() ? add(loss, pair) : pair;
          }
        }
        if (!std::isfinite(loss.item())) throw NumericError("loss is not finite");
        backward(loss);
        opt.step(lr);
      } catch (const NumericError& e) {
        throw NumericError(std::string("training diverged (") + e.what() + "): " +
                           detail::batch_dump(epoch, batch_index, ids, embeds));
      }
      opt.zero_grad();
      if (use_bank) {
        for (const auto& v : graph.view_names) bank.update(v, ids, embeds[v].detach(), cfg.bank_momentum);
      }
      total_stat.add(loss.item());
      for (std::size_t p = 0; p < pair_values.size(); ++p) pair_stat[p].add(pair_values[p] / 2.0);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.loss = total_stat.mean();
    rec.loss_stderr = total_stat.stderr_of_mean();
    for (std::size_t p = 0; p < graph.pairs.size(); ++p) {
      PairRecord pr;
      pr.pair = graph.pairs[p].first + "-" + graph.pairs[p].second;
      double per_direction = pair_stat[p].mean();
      pr.loss = 2.0 * per_direction;
      pr.loss_stderr = pair_stat[p].stderr_of_mean();
      pr.mi_lb = cfg.loss_kind == LossKind::softmax ? mi_lower_bound(per_direction, log.negatives) : NAN;
      rec.pairs.push_back(pr);
    }
    for (const auto& [v, enc] : model.encoders) rec.param_norms[v] = parameter_norm(enc);
    if (use_bank && cfg.track_bank_alignment) {
      for (const auto& v : graph.view_names) rec.bank_alignment[v] = detail::mean_bank_alignment(model, data, bank, v);
    }
    log.epochs.push_back(std::move(rec));
  }
  return log;
}

/// One view contrasted with local features of its own chunks: the
/// single-view sub-patch objective. Uses in-batch negatives.
inline TrainingLog train_single_view(Model& model, const Dataset& data, const std::string& view, const TrainConfig& cfg) {
  validate(cfg);
  if (!model.encoders.count(view) || !model.local_encoders.count(view)) {
    throw ConfigError("single-view training needs global and local encoders for '" + view + "'");
  }
  Temperature tau(cfg.tau);
  std::vector<Tensor> params = model.encoders.at(view).parameters();
  for (auto& p : model.local_encoders.at(view).parameters()) params.push_back(p);
  Sgd opt(params, cfg.sgd_momentum, cfg.weight_decay);
  Rng order_rng(Rng::mix(cfg.seed ^ 0x0dd5ULL));
  TrainingLog log;
  log.negatives = std::min(cfg.batch_size, data.size()) - 1;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr = cfg.schedule.rate(cfg.lr, epoch, cfg.epochs);
    auto order = detail::shuffled_order(data.size(), order_rng);
    detail::RunningStat stat;
    for (std::size_t start = 0; start + 2 <= data.size(); start += cfg.batch_size) {
      std::size_t end = std::min(start + cfg.batch_size, data.size());
      std::span<const std::size_t> ids(order.data() + start, end - start);
      Tensor batch = data.batch(view, ids);
      Tensor global = encode(model.encoders.at(view), batch);
      Tensor loss = subpatch_contrast_loss(global, local_features(model, view, batch), tau);
      backward(loss);
      opt.step(lr);
      opt.zero_grad();
      stat.add(loss.item());
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.loss = stat.mean();
    rec.loss_stderr = stat.stderr_of_mean();
    rec.pairs.push_back({view + "-" + view, rec.loss, rec.loss_stderr, NAN});
    rec.param_norms[view] = parameter_norm(model.encoders.at(view));
    log.epochs.push_back(std::move(rec));
  }
  return log;
}

/// Encoder on `source` plus a linear decoder regressing `target`.
inline TrainingLog train_predictive(EncoderParams& encoder, Mlp& decoder, const Dataset& data, const std::string& source,
                                    const std::string& target, PredictiveNorm norm, const TrainConfig& cfg) {
  validate(cfg);
  std::vector<Tensor> params = encoder.parameters();
  for (auto& p : decoder.parameters()) params.push_back(p);
  Sgd opt(params, cfg.sgd_momentum, cfg.weight_decay);
  Rng order_rng(Rng::mix(cfg.seed ^ 0x0dd5ULL));
  TrainingLog log;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr = cfg.schedule.rate(cfg.lr, epoch, cfg.epochs);
    auto order = detail::shuffled_order(data.size(), order_rng);
    detail::RunningStat stat;
    for (std::size_t start = 0; start < data.size(); start += cfg.batch_size) {
      std::size_t end = std::min(start + cfg.batch_size, data.size());
      std::span<const std::size_t> ids(order.data() + start, end - start);
      Tensor loss = predictive_loss(data.batch(source, ids), data.batch(target, ids), encoder, decoder, norm);
      backward(loss);
      opt.step(lr);
      opt.zero_grad();
      stat.add(loss.item());
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.loss = stat.mean();
    rec.loss_stderr = stat.stderr_of_mean();
    rec.pairs.push_back({source + "->" + target, rec.loss, rec.loss_stderr, NAN});
    rec.param_norms[source] = parameter_norm(encoder);
    log.epochs.push_back(std::move(rec));
  }
  return log;
}

/// Embeddings of every sample of one view, detached.
inline Tensor embed_all(const Model& model, const Dataset& data, const std::string& view) {
  return encode(model.encoders.at(view), data.all(view)).detach();
}

}  // namespace cmc
