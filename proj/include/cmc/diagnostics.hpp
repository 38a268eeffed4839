// SPDX-License-Identifier: Apache-2.0
//
// Checks of a trained critic against closed-form Gaussian quantities.
#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "cmc/critic.hpp"
#include "cmc/error.hpp"
#include "cmc/views.hpp"

namespace cmc {

inline double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw ParameterError("pearson: need two equal-length samples of size >= 2");
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(a.size());
  mb /= static_cast<double>(b.size());
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

struct DensityRatioResult {
  double pearson_r = 0.0;
  std::size_t n_pairs = 0;
  std::vector<double> log_h;
  std::vector<double> log_ratio;
};

/// Pearson correlation between log h(x, y) = cos(f(x), g(y)) / tau and the
/// analytic log p(x,y)/(p(x)p(y)) over held-out pairs: n_eval drawn from the
/// joint and n_eval from the product of marginals (y re-paired by a random
/// cyclic shift), so both sides of the ratio's range are covered.
inline DensityRatioResult density_ratio_diagnostic(const EncoderParams& fx, const EncoderParams& fy, Temperature tau,
                                                   SyntheticGaussianSpec spec, std::size_t n_eval) {
  if (n_eval < 2) throw ParameterError("density ratio diagnostic: n_eval must be >= 2");
  spec.n_samples = n_eval;
  Dataset joint = gen_gaussian_views(spec);
  Rng rng(Rng::mix(spec.seed ^ 0xd1a9ULL));
  std::size_t shift = 1 + rng.below(n_eval - 1);

  Tensor x = joint.all("x");
  Tensor y = joint.all("y");
  std::vector<std::size_t> shifted(n_eval);
  for (std::size_t i = 0; i < n_eval; ++i) shifted[i] = (i + shift) % n_eval;
  Tensor y_marg = select_rows(y, shifted);

  Tensor zx = encode(fx, x);
  Tensor s_joint = row_dot(zx, encode(fy, y));
  Tensor s_marg = row_dot(zx, encode(fy, y_marg));

  DensityRatioResult res;
  res.n_pairs = 2 * n_eval;
  std::size_t dim = spec.dim;
  for (std::size_t i = 0; i < n_eval; ++i) {
    res.log_h.push_back(s_joint[i] / tau.value());
    res.log_ratio.push_back(gaussian_log_density_ratio(x.data().subspan(i * dim, dim), y.data().subspan(i * dim, dim), spec.rho));
  }
  for (std::size_t i = 0; i < n_eval; ++i) {
    res.log_h.push_back(s_marg[i] / tau.value());
    res.log_ratio.push_back(
        gaussian_log_density_ratio(x.data().subspan(i * dim, dim), y_marg.data().subspan(i * dim, dim), spec.rho));
  }
  res.pearson_r = pearson(res.log_h, res.log_ratio);
  return res;
}

}  // namespace cmc
