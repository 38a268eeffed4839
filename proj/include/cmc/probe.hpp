// SPDX-License-Identifier: Apache-2.0
//
// Linear evaluation of frozen features: multinomial logistic regression fit
// by deterministic full-batch gradient descent.
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "cmc/error.hpp"
#include "cmc/rng.hpp"
#include "cmc/tensor.hpp"

namespace cmc {

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Seeded shuffle of 0..n-1; the first test_fraction goes to test.
inline Split make_split(std::size_t n, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ParameterError("test fraction must lie in (0, 1)");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  auto n_test = static_cast<std::size_t>(std::round(test_fraction * static_cast<double>(n)));
  n_test = std::clamp<std::size_t>(n_test, 1, n - 1);
  Split s;
  s.test.assign(order.begin(), order.begin() + n_test);
  s.train.assign(order.begin() + n_test, order.end());
  std::sort(s.test.begin(), s.test.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

struct ProbeConfig {
  std::size_t max_iters = 1000;
  double grad_tol = 1e-5;
  double l2 = 1e-4;
};

struct ProbeResult {
  std::string tag;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::vector<double> per_class_accuracy;  // on the test split
  std::size_t iterations = 0;
  double final_grad_norm = 0.0;
};

namespace detail {

/// Standardized features with a trailing constant column.
inline std::vector<double> design_matrix(std::span<const double> x, std::size_t n_features,
                                         std::span<const std::size_t> rows, const std::vector<double>& mu,
                                         const std::vector<double>& sd) {
  std::size_t f1 = n_features + 1;
  std::vector<double> out(rows.size() * f1);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t j = 0; j < n_features; ++j) out[r * f1 + j] = (x[rows[r] * n_features + j] - mu[j]) / sd[j];
    out[r * f1 + n_features] = 1.0;
  }
  return out;
}

inline std::vector<int> predict(const std::vector<double>& design, std::size_t f1, const std::vector<double>& w,
                                std::size_t c) {
  std::size_t n = design.size() / f1;
  std::vector<int> out(n);
  std::vector<double> logits(c);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(logits.begin(), logits.end(), 0.0);
    for (std::size_t j = 0; j < f1; ++j) {
      double x = design[i * f1 + j];
      for (std::size_t k = 0; k < c; ++k) logits[k] += x * w[j * c + k];
    }
    out[i] = static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  }
  return out;
}

}  // namespace detail

/// Fit on split.train, report accuracy on both halves. Features are
/// standardized with train statistics. Nesterov-accelerated full-batch
/// gradient descent with step 1/L, L from a power-iteration bound on the
/// Hessian; stops when the gradient norm falls below grad_tol.
inline ProbeResult linear_probe(const Tensor& features, std::span<const int> labels, const Split& split,
                                const ProbeConfig& cfg = {}, std::string tag = {}) {
  if (features.rank() != 2) throw DimensionError("linear_probe: features must be [N x F]");
  std::size_t N = features.rows(), F = features.cols(), f1 = F + 1;
  if (labels.size() != N) throw DimensionError("linear_probe: label count does not match feature rows");
  if (split.train.empty() || split.test.empty()) throw ParameterError("linear_probe: empty train or test split");
  int max_label = *std::max_element(labels.begin(), labels.end());
  if (*std::min_element(labels.begin(), labels.end()) < 0) throw ParameterError("linear_probe: negative label");
  std::size_t C = static_cast<std::size_t>(max_label) + 1;
  std::vector<int> train_labels;
  for (std::size_t i : split.train) train_labels.push_back(labels[i]);
  if (std::all_of(train_labels.begin(), train_labels.end(), [&](int l) { return l == train_labels[0]; })) {
    throw ParameterError("linear_probe: training labels contain a single class");
  }

  auto x = features.data();
  std::vector<double> mu(F, 0.0), sd(F, 0.0);
  for (std::size_t i : split.train)
    for (std::size_t j = 0; j < F; ++j) mu[j] += x[i * F + j];
  for (auto& m : mu) m /= static_cast<double>(split.train.size());
  for (std::size_t i : split.train)
    for (std::size_t j = 0; j < F; ++j) sd[j] += (x[i * F + j] - mu[j]) * (x[i * F + j] - mu[j]);
  for (auto& s : sd) {
    s = std::sqrt(s / static_cast<double>(split.train.size()));
    if (s < 1e-12) s = 1.0;
  }
  auto xtr = detail::design_matrix(x, F, split.train, mu, sd);
  auto xte = detail::design_matrix(x, F, split.test, mu, sd);
  std::size_t n = split.train.size();
  double inv_n = 1.0 / static_cast<double>(n);

  // Largest eigenvalue of X^T X / n by power iteration.
  std::vector<double> v(f1, 1.0), xv(n), tmp(f1);
  double lambda = 1.0;
  for (int it = 0; it < 100; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < f1; ++j) acc += xtr[i * f1 + j] * v[j];
      xv[i] = acc;
    }
    std::fill(tmp.begin(), tmp.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < f1; ++j) tmp[j] += xtr[i * f1 + j] * xv[i] * inv_n;
    double norm = std::sqrt(std::inner_product(tmp.begin(), tmp.end(), tmp.begin(), 0.0));
    if (norm == 0.0) break;
    lambda = norm;
    for (std::size_t j = 0; j < f1; ++j) v[j] = tmp[j] / norm;
  }
  double step = 1.0 / (0.5 * lambda * 1.01 + cfg.l2);

  std::vector<double> w(f1 * C, 0.0), w_prev = w, y = w, grad(f1 * C), logits(C);
  auto gradient = [&](const std::vector<double>& at) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double* xi = xtr.data() + i * f1;
      std::fill(logits.begin(), logits.end(), 0.0);
      for (std::size_t j = 0; j < f1; ++j)
        for (std::size_t k = 0; k < C; ++k) logits[k] += xi[j] * at[j * C + k];
      double mx = *std::max_element(logits.begin(), logits.end());
      double z = 0.0;
      for (auto& l : logits) z += (l = std::exp(l - mx));
      for (auto& l : logits) l /= z;
      logits[static_cast<std::size_t>(train_labels[i])] -= 1.0;
      for (std::size_t j = 0; j < f1; ++j)
        for (std::size_t k = 0; k < C; ++k) grad[j * C + k] += xi[j] * logits[k] * inv_n;
    }
    for (std::size_t j = 0; j < F; ++j)
      for (std::size_t k = 0; k < C; ++k) grad[j * C + k] += cfg.l2 * at[j * C + k];
    return std::sqrt(std::inner_product(grad.begin(), grad.end(), grad.begin(), 0.0));
  };

  ProbeResult res;
  res.tag = std::move(tag);
  double t = 1.0;
  for (res.iterations = 0; res.iterations < cfg.max_iters; ++res.iterations) {
    if (res.iterations % 10 == 0) {
      res.final_grad_norm = gradient(w);
      if (res.final_grad_norm < cfg.grad_tol) break;
    }
    gradient(y);
    w_prev = w;
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = y[i] - step * grad[i];
    double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    double beta = (t - 1.0) / t_next;
    t = t_next;
    for (std::size_t i = 0; i < w.size(); ++i) y[i] = w[i] + beta * (w[i] - w_prev[i]);
  }

  auto train_pred = detail::predict(xtr, f1, w, C);
  auto test_pred = detail::predict(xte, f1, w, C);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) correct += train_pred[i] == train_labels[i];
  res.train_accuracy = static_cast<double>(correct) * inv_n;
  correct = 0;
  std::vector<std::size_t> class_total(C, 0), class_correct(C, 0);
  for (std::size_t i = 0; i < split.test.size(); ++i) {
    int truth = labels[split.test[i]];
    class_total[truth]++;
    if (test_pred[i] == truth) {
      ++correct;
      class_correct[truth]++;
    }
  }
  res.test_accuracy = static_cast<double>(correct) / static_cast<double>(split.test.size());
  for (std::size_t k = 0; k < C; ++k) {
    res.per_class_accuracy.push_back(class_total[k] ? static_cast<double>(class_correct[k]) / class_total[k] : 0.0);
  }
  return res;
}

}  // namespace cmc
