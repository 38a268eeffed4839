// SPDX-License-Identifier: Apache-2.0
//
// Core-view and full-graph objectives as sums of pairwise symmetric losses,
// and the information-diagram weight each topology assigns.
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cmc/critic.hpp"
#include "cmc/error.hpp"
#include "cmc/losses.hpp"
#include "cmc/memory_bank.hpp"
#include "cmc/rng.hpp"
#include "cmc/tensor.hpp"

namespace cmc {

enum class GraphMode { core_view, full_graph };

struct ViewPair {
  std::string first;
  std::string second;
  bool operator==(const ViewPair&) const = default;
};

struct ViewGraph {
  std::vector<std::string> view_names;  // sorted
  GraphMode mode = GraphMode::full_graph;
  std::string core;                     // set for core_view
  std::vector<ViewPair> pairs;
  std::vector<double> pair_weights;     // one per pair, 1 by default

  std::size_t view_count() const { return view_names.size(); }
  std::string describe() const { return mode == GraphMode::full_graph ? "full" : "core:" + core; }
};

/// Core view: (core, v) for every other v. Full graph: every unordered pair.
/// Pairs come out in lexicographic order.
inline ViewGraph build_graph(std::vector<std::string> names, GraphMode mode, const std::string& core = {}) {
  if (names.size() < 2) throw ConfigError("view graph needs at least two views, got " + std::to_string(names.size()));
  std::sort(names.begin(), names.end());
  if (std::adjacent_find(names.begin(), names.end()) != names.end()) {
    throw ConfigError("view graph: duplicate view name '" + *std::adjacent_find(names.begin(), names.end()) + "'");
  }
  ViewGraph g;
  g.view_names = names;
  g.mode = mode;
  if (mode == GraphMode::core_view) {
    if (std::find(names.begin(), names.end(), core) == names.end()) {
      throw ConfigError("view graph: core view '" + core + "' is not among the views");
    }
    g.core = core;
    for (const auto& v : names)
      if (v != core) g.pairs.push_back({core, v});
  } else {
    for (std::size_t i = 0; i < names.size(); ++i)
      for (std::size_t j = i + 1; j < names.size(); ++j) g.pairs.push_back({names[i], names[j]});
  }
  g.pair_weights.assign(g.pairs.size(), 1.0);
  return g;
}

/// Parse "full" or "core:<name>".
inline ViewGraph build_graph(std::vector<std::string> names, const std::string& mode) {
  if (mode == "full") return build_graph(std::move(names), GraphMode::full_graph);
  if (mode.rfind("core:", 0) == 0) return build_graph(std::move(names), GraphMode::core_view, mode.substr(5));
  throw ConfigError("graph mode must be 'full' or 'core:<view>', got '" + mode + "'");
}

/// Where a pairwise loss gets its incongruent candidates.
class NegativeSource {
 public:
  virtual ~NegativeSource() = default;
  /// Candidates from `view` for anchors with the given sample ids.
  /// `fresh` holds this batch's embeddings of `view`, row-aligned with `ids`.
  virtual Tensor draw(const std::string& view, const Tensor& fresh, std::span<const std::size_t> ids) = 0;
  /// Number of negatives per anchor for a batch of the given size.
  virtual std::size_t count(std::size_t batch_size) const = 0;
};

/// Other rows of the same batch. Gradients flow into the negatives.
class InBatchNegatives : public NegativeSource {
 public:
  Tensor draw(const std::string&, const Tensor& fresh, std::span<const std::size_t>) override {
    return within_batch_negatives(fresh);
  }
  std::size_t count(std::size_t batch_size) const override { return batch_size - 1; }
};

/// Stored rows from a memory bank; constants with respect to the parameters.
class BankNegatives : public NegativeSource {
 public:
  BankNegatives(const MemoryBank& bank, std::size_t m, Rng& rng) : bank_(bank), m_(m), rng_(rng) {}
  Tensor draw(const std::string& view, const Tensor&, std::span<const std::size_t> ids) override {
    return bank_.sample_negatives(view, ids, m_, rng_);
  }
  std::size_t count(std::size_t) const override { return m_; }

 private:
  const MemoryBank& bank_;
  std::size_t m_;
  Rng& rng_;
};

struct MultiviewLoss {
  Tensor total;
  /// Symmetric loss of each graph pair; undefined when a pair had no usable rows.
  std::vector<Tensor> pair_losses;
};

/// Per-view presence flags, row-aligned with the batch. Absent entries mean present.
using ViewPresence = std::map<std::string, std::vector<bool>>;

/// Weighted sum over graph pairs of symmetric two-view losses. A sample
/// missing a view drops out of every pair touching that view.
inline MultiviewLoss multiview_loss(const ViewGraph& graph, const std::map<std::string, Tensor>& embeds,
                                    std::span<const std::size_t> ids, NegativeSource& negatives, Temperature tau,
                                    const ViewPresence* presence = nullptr) {
  for (const auto& v : graph.view_names) {
    if (!embeds.count(v)) throw ConfigError("multiview loss: no embeddings for view '" + v + "'");
  }
  MultiviewLoss out;
  for (std::size_t p = 0; p < graph.pairs.size(); ++p) {
    const auto& [a, b] = graph.pairs[p];
    Tensor za = embeds.at(a), zb = embeds.at(b);
    if (za.rows() != ids.size() || zb.rows() != ids.size()) {
      throw DimensionError("multiview loss: embeddings and ids disagree on batch size");
    }
    std::vector<std::size_t> pair_ids(ids.begin(), ids.end());
    if (presence) {
      std::vector<std::size_t> keep;
      for (std::size_t r = 0; r < ids.size(); ++r) {
        bool has_a = !presence->count(a) || presence->at(a).at(r);
        bool has_b = !presence->count(b) || presence->at(b).at(r);
        if (has_a && has_b) keep.push_back(r);
      }
      if (keep.size() < ids.size()) {
        if (keep.empty()) {
          out.pair_losses.emplace_back();
          continue;
        }
        pair_ids.clear();
        for (std::size_t r : keep) pair_ids.push_back(ids[r]);
        za = select_rows(za, keep);
        zb = select_rows(zb, keep);
      }
    }
    Tensor neg_b = negatives.draw(b, zb, pair_ids);
    Tensor neg_a = negatives.draw(a, za, pair_ids);
    Tensor loss = symmetric_two_view_loss(za, zb, neg_b, neg_a, tau);
    out.pair_losses.push_back(loss);
    Tensor weighted = graph.pair_weights[p] == 1.0 ? loss : scale(loss, graph.pair_weights[p]);
    out.total = out.total.defined() ? add(out.total, weighted) : weighted;
  }
  if (!out.total.defined()) throw ParameterError("multiview loss: no pair had any usable rows");
  return out;
}

/// Weight of each information-diagram region: the number of graph pairs
/// whose two views both share that region. Regions are bitmasks over
/// graph.view_names (bit i = view i).
struct PartitionWeights {
  std::vector<std::string> view_names;
  std::map<unsigned, int> by_mask;

  unsigned mask_of(const std::vector<std::string>& region) const {
    unsigned mask = 0;
    for (const auto& v : region) {
      auto it = std::find(view_names.begin(), view_names.end(), v);
      if (it == view_names.end()) throw ConfigError("partition weights: unknown view '" + v + "'");
      mask |= 1u << static_cast<unsigned>(it - view_names.begin());
    }
    return mask;
  }
  int weight(const std::vector<std::string>& region) const { return by_mask.at(mask_of(region)); }
};

inline constexpr std::size_t kMaxPartitionViews = 6;

inline PartitionWeights partition_weights(const ViewGraph& graph) {
  std::size_t m = graph.view_count();
  if (m > kMaxPartitionViews) {
    throw ParameterError("partition weights enumerate 2^M - 1 regions; M=" + std::to_string(m) + " exceeds the cap of " +
                         std::to_string(kMaxPartitionViews));
  }
  PartitionWeights w;
  w.view_names = graph.view_names;
  std::vector<unsigned> pair_masks;
  for (const auto& p : graph.pairs) pair_masks.push_back(w.mask_of({p.first, p.second}));
  for (unsigned region = 1; region < (1u << m); ++region) {
    int count = 0;
    for (unsigned pm : pair_masks)
      if ((pm & region) == pm) ++count;
    w.by_mask[region] = count;
  }
  return w;
}

}  // namespace cmc
