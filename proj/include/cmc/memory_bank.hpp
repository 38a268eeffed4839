// SPDX-License-Identifier: Apache-2.0
//
// Per-sample, per-view store of unit embeddings used as a negative pool.
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "cmc/error.hpp"
#include "cmc/rng.hpp"
#include "cmc/tensor.hpp"

namespace cmc {

enum class Sampling { with_replacement, without_replacement };

class MemoryBank {
 public:
  MemoryBank(std::vector<std::string> views, std::size_t n, std::size_t dim, double momentum, std::uint64_t seed)
      : views_(std::move(views)), n_(n), dim_(dim), momentum_(momentum) {
    if (n == 0 || dim == 0) throw ParameterError("memory bank: N and d must be positive");
    check_momentum(momentum);
    Rng rng(seed);
    for (const auto& v : views_) {
      std::vector<double> rows(n * dim);
      for (std::size_t i = 0; i < n; ++i) {
        double ss = 0.0;
        do {
          ss = 0.0;
          for (std::size_t j = 0; j < dim; ++j) {
            rows[i * dim + j] = rng.normal();
            ss += rows[i * dim + j] * rows[i * dim + j];
          }
        } while (ss == 0.0);
        double norm = std::sqrt(ss);
        for (std::size_t j = 0; j < dim; ++j) rows[i * dim + j] /= norm;
      }
      store_.emplace(v, std::move(rows));
    }
  }

  std::size_t size() const { return n_; }
  std::size_t dim() const { return dim_; }
  double momentum() const { return momentum_; }
  const std::vector<std::string>& views() const { return views_; }

  std::span<const double> row(const std::string& view, std::size_t i) const {
    if (i >= n_) throw IndexError("memory bank: row " + std::to_string(i) + " out of " + std::to_string(n_));
    return std::span<const double>(rows(view)).subspan(i * dim_, dim_);
  }

  const std::vector<double>& rows(const std::string& view) const {
    auto it = store_.find(view);
    if (it == store_.end()) throw ConfigError("memory bank has no view '" + view + "'");
    return it->second;
  }
  std::vector<double>& mutable_rows(const std::string& view) {
    auto it = store_.find(view);
    if (it == store_.end()) throw ConfigError("memory bank has no view '" + view + "'");
    return it->second;
  }

  /// All rows of a view as a constant [N x d] tensor.
  Tensor matrix(const std::string& view) const { return Tensor({n_, dim_}, rows(view)); }

  /// row <- normalize(momentum * row + (1 - momentum) * embed) for each id.
  void update(const std::string& view, std::span<const std::size_t> ids, const Tensor& embeds, double momentum) {
    check_momentum(momentum);
    if (embeds.rank() != 2 || embeds.rows() != ids.size() || embeds.cols() != dim_) {
      throw DimensionError("memory bank update: embeddings " + format_shape(embeds.shape()) + " for " +
                           std::to_string(ids.size()) + " ids of dim " + std::to_string(dim_));
    }
    std::vector<std::size_t> sorted(ids.begin(), ids.end());
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw ParameterError("memory bank update: sample ids must be unique within a call");
    }
    if (!sorted.empty() && sorted.back() >= n_) {
      throw IndexError("memory bank update: id " + std::to_string(sorted.back()) + " out of " + std::to_string(n_));
    }
    if (momentum == 1.0) return;
    auto& data = mutable_rows(view);
    auto e = embeds.data();
    for (std::size_t r = 0; r < ids.size(); ++r) {
      double* dst = data.data() + ids[r] * dim_;
      double ss = 0.0;
      for (std::size_t j = 0; j < dim_; ++j) {
        dst[j] = momentum * dst[j] + (1.0 - momentum) * e[r * dim_ + j];
        ss += dst[j] * dst[j];
      }
      double norm = std::sqrt(ss);
      if (norm <= kNormEpsilon) throw DegenerateError("memory bank update: blended row " + std::to_string(ids[r]) + " vanished");
      for (std::size_t j = 0; j < dim_; ++j) dst[j] /= norm;
    }
  }

  void update(const std::string& view, std::span<const std::size_t> ids, const Tensor& embeds) {
    update(view, ids, embeds, momentum_);
  }

  /// m row indices drawn uniformly from every index except exclude_id.
  /// Without replacement m may be at most N - 1.
  std::vector<std::size_t> sample_indices(std::size_t m, std::size_t exclude_id, Rng& rng,
                                          Sampling mode = Sampling::with_replacement) const {
    if (n_ < 2) throw ParameterError("memory bank: need at least two rows to draw negatives");
    if (mode == Sampling::without_replacement && m > n_ - 1) {
      throw ParameterError("memory bank: cannot draw " + std::to_string(m) + " distinct negatives from " +
                           std::to_string(n_) + " rows excluding one");
    }
    std::vector<std::size_t> out(m);
    if (mode == Sampling::with_replacement) {
      for (auto& idx : out) {
        std::size_t r = rng.below(n_ - 1);
        idx = r >= exclude_id ? r + 1 : r;
      }
    } else {
      std::vector<std::size_t> pool(n_ - 1);
      for (std::size_t i = 0, j = 0; i < n_; ++i)
        if (i != exclude_id) pool[j++] = i;
      for (std::size_t i = 0; i < m; ++i) {
        std::size_t pick = i + rng.below(pool.size() - i);
        std::swap(pool[i], pool[pick]);
        out[i] = pool[i];
      }
    }
    return out;
  }

  /// [m x d] stored rows for one anchor.
  Tensor sample_negatives(const std::string& view, std::size_t m, std::size_t exclude_id, Rng& rng,
                          Sampling mode = Sampling::with_replacement) const {
    auto idx = sample_indices(m, exclude_id, rng, mode);
    const auto& data = rows(view);
    std::vector<double> out(m * dim_);
    for (std::size_t r = 0; r < m; ++r) std::copy_n(data.begin() + idx[r] * dim_, dim_, out.begin() + r * dim_);
    return Tensor({m, dim_}, std::move(out));
  }

  /// [n x m x d] stored rows, m per anchor, each excluding the anchor's own id.
  Tensor sample_negatives(const std::string& view, std::span<const std::size_t> anchor_ids, std::size_t m, Rng& rng,
                          Sampling mode = Sampling::with_replacement) const {
    const auto& data = rows(view);
    std::vector<double> out;
    out.reserve(anchor_ids.size() * m * dim_);
    for (std::size_t a = 0; a < anchor_ids.size(); ++a) {
      for (std::size_t i : sample_indices(m, anchor_ids[a], rng, mode)) {
        out.insert(out.end(), data.begin() + i * dim_, data.begin() + (i + 1) * dim_);
      }
    }
    return Tensor({anchor_ids.size(), m, dim_}, std::move(out));
  }

  bool operator==(const MemoryBank& other) const {
    return views_ == other.views_ && n_ == other.n_ && dim_ == other.dim_ && momentum_ == other.momentum_ &&
           store_ == other.store_;
  }

 private:
  static void check_momentum(double m) {
    if (!(m >= 0.0 && m <= 1.0)) throw ParameterError("memory bank momentum must lie in [0, 1], got " + std::to_string(m));
  }

  std::vector<std::string> views_;
  std::size_t n_;
  std::size_t dim_;
  double momentum_;
  std::map<std::string, std::vector<double>> store_;
};

/// Random unit rows, one matrix per view.
inline MemoryBank init_bank(std::vector<std::string> views, std::size_t n, std::size_t dim, std::uint64_t seed,
                            double momentum = 0.5) {
  return MemoryBank(std::move(views), n, dim, momentum, seed);
}

}  // namespace cmc
