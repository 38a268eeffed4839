// SPDX-License-Identifier: Apache-2.0
//
// Multiview datasets and the generators that build them.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cmc/error.hpp"
#include "cmc/rng.hpp"
#include "cmc/tensor.hpp"

namespace cmc {

/// One sample decomposed into named views.
struct ViewSet {
  std::int64_t sample_id = 0;
  std::map<std::string, Tensor> views;
  std::optional<int> label;
};

struct ViewSpec {
  std::string name;
  Shape shape;
  std::size_t flat_size() const { return shape_size(shape); }
};

/// Column-oriented multiview dataset. Sample i has sample_id i; each view is
/// stored as one contiguous [N x flat_size] block so batches are cheap to cut.
class Dataset {
 public:
  Dataset() = default;

  Dataset(std::vector<ViewSpec> views, std::size_t n_samples) : specs_(std::move(views)), n_(n_samples) {
    if (specs_.empty()) throw ParameterError("dataset needs at least one view");
    if (n_ == 0) throw ParameterError("dataset needs at least one sample");
    for (std::size_t i = 0; i < specs_.size(); ++i) {
      for (std::size_t j = 0; j < i; ++j) {
        if (specs_[i].name == specs_[j].name) throw ParameterError("duplicate view name '" + specs_[i].name + "'");
      }
      if (specs_[i].shape.empty() || specs_[i].flat_size() == 0) {
        throw ParameterError("view '" + specs_[i].name + "' has an empty shape");
      }
      data_.emplace_back(n_ * specs_[i].flat_size(), 0.0);
    }
  }

  /// Validates that every ViewSet carries the same view names and shapes and
  /// that sample ids are exactly 0..N-1.
  static Dataset from_viewsets(const std::vector<ViewSet>& samples) {
    if (samples.empty()) throw ParameterError("dataset needs at least one sample");
    std::vector<ViewSpec> specs;
    for (const auto& [name, t] : samples.front().views) specs.push_back({name, t.shape()});
    Dataset ds(specs, samples.size());
    bool labelled = samples.front().label.has_value();
    if (labelled) ds.labels_.assign(samples.size(), 0);
    std::vector<bool> seen(samples.size(), false);
    for (const auto& s : samples) {
      if (s.sample_id < 0 || static_cast<std::size_t>(s.sample_id) >= samples.size() || seen[s.sample_id]) {
        throw ParameterError("sample ids must be unique and cover 0..N-1, got " + std::to_string(s.sample_id));
      }
      seen[s.sample_id] = true;
      if (s.views.size() != specs.size()) throw ParameterError("sample " + std::to_string(s.sample_id) + " has a different view set");
      std::size_t v = 0;
      for (const auto& [name, t] : s.views) {
        if (name != specs[v].name || t.shape() != specs[v].shape) {
          throw ParameterError("sample " + std::to_string(s.sample_id) + ": view '" + name + "' " +
                               format_shape(t.shape()) + " does not match dataset view '" + specs[v].name + "' " +
                               format_shape(specs[v].shape));
        }
        auto dst = ds.row(v, static_cast<std::size_t>(s.sample_id));
        std::copy(t.data().begin(), t.data().end(), dst.begin());
        ++v;
      }
      if (s.label.has_value() != labelled) throw ParameterError("labels present on some samples only");
      if (labelled) ds.labels_[s.sample_id] = *s.label;
    }
    return ds;
  }

  std::size_t size() const { return n_; }
  std::size_t view_count() const { return specs_.size(); }
  const std::vector<ViewSpec>& views() const { return specs_; }

  std::vector<std::string> view_names() const {
    std::vector<std::string> names;
    for (const auto& s : specs_) names.push_back(s.name);
    return names;
  }

  std::size_t view_index(const std::string& name) const {
    for (std::size_t i = 0; i < specs_.size(); ++i) {
      if (specs_[i].name == name) return i;
    }
    throw ConfigError("dataset has no view named '" + name + "'");
  }
  bool has_view(const std::string& name) const {
    return std::any_of(specs_.begin(), specs_.end(), [&](const ViewSpec& s) { return s.name == name; });
  }
  const ViewSpec& view(const std::string& name) const { return specs_[view_index(name)]; }

  std::span<double> row(std::size_t view, std::size_t sample) {
    std::size_t w = specs_[view].flat_size();
    return std::span<double>(data_[view]).subspan(sample * w, w);
  }
  std::span<const double> row(std::size_t view, std::size_t sample) const {
    std::size_t w = specs_[view].flat_size();
    return std::span<const double>(data_[view]).subspan(sample * w, w);
  }
  std::span<const double> view_data(std::size_t view) const { return data_[view]; }

  /// Flattened rows of one view for the given sample ids, [ids.size() x flat].
  Tensor batch(const std::string& name, std::span<const std::size_t> ids) const {
    std::size_t v = view_index(name);
    std::size_t w = specs_[v].flat_size();
    std::vector<double> out(ids.size() * w);
    for (std::size_t r = 0; r < ids.size(); ++r) {
      if (ids[r] >= n_) throw IndexError("sample id " + std::to_string(ids[r]) + " out of range");
      auto src = row(v, ids[r]);
      std::copy(src.begin(), src.end(), out.begin() + r * w);
    }
    return Tensor({ids.size(), w}, std::move(out));
  }

  Tensor all(const std::string& name) const {
    std::size_t v = view_index(name);
    return Tensor({n_, specs_[v].flat_size()}, data_[v]);
  }

  ViewSet sample(std::size_t i) const {
    ViewSet s;
    s.sample_id = static_cast<std::int64_t>(i);
    for (std::size_t v = 0; v < specs_.size(); ++v) {
      auto r = row(v, i);
      s.views.emplace(specs_[v].name, Tensor(specs_[v].shape, std::vector<double>(r.begin(), r.end())));
    }
    if (has_labels()) s.label = labels_[i];
    return s;
  }

  bool has_labels() const { return !labels_.empty(); }
  const std::vector<int>& labels() const { return labels_; }
  void set_labels(std::vector<int> labels) {
    if (labels.size() != n_) throw ParameterError("label count does not match sample count");
    labels_ = std::move(labels);
  }

  /// Same samples, restricted to the named views (in the given order).
  Dataset subset_views(const std::vector<std::string>& names) const {
    std::vector<ViewSpec> specs;
    for (const auto& n : names) specs.push_back(view(n));
    Dataset out(specs, n_);
    for (std::size_t v = 0; v < names.size(); ++v) out.data_[v] = data_[view_index(names[v])];
    out.labels_ = labels_;
    return out;
  }

  /// The given samples, renumbered 0..ids.size()-1 in the given order.
  Dataset subset_samples(std::span<const std::size_t> ids) const {
    Dataset out(specs_, ids.size());
    for (std::size_t v = 0; v < specs_.size(); ++v)
      for (std::size_t r = 0; r < ids.size(); ++r) {
        auto src = row(v, ids[r]);
        std::copy(src.begin(), src.end(), out.row(v, r).begin());
      }
    if (has_labels()) {
      for (std::size_t i : ids) out.labels_.push_back(labels_.at(i));
    }
    return out;
  }

  bool operator==(const Dataset& other) const {
    if (n_ != other.n_ || labels_ != other.labels_ || data_ != other.data_) return false;
    if (specs_.size() != other.specs_.size()) return false;
    for (std::size_t i = 0; i < specs_.size(); ++i) {
      if (specs_[i].name != other.specs_[i].name || specs_[i].shape != other.specs_[i].shape) return false;
    }
    return true;
  }

 private:
  std::vector<ViewSpec> specs_;
  std::vector<std::vector<double>> data_;
  std::vector<int> labels_;
  std::size_t n_ = 0;
};

// ---------------------------------------------------------------------------
// Colorspaces

namespace colorspace {

// sRGB primaries, D65. The reference white is the image of RGB (1,1,1) under
// this matrix so that white lands exactly on the achromatic axis.
inline constexpr std::array<std::array<double, 3>, 3> kRgbToXyz{{
    {0.4124564, 0.3575761, 0.1804375},
    {0.2126729, 0.7151522, 0.0721750},
    {0.0193339, 0.1191920, 0.9503041},
}};
inline constexpr std::array<double, 3> kWhite{
    kRgbToXyz[0][0] + kRgbToXyz[0][1] + kRgbToXyz[0][2],
    kRgbToXyz[1][0] + kRgbToXyz[1][1] + kRgbToXyz[1][2],
    kRgbToXyz[2][0] + kRgbToXyz[2][1] + kRgbToXyz[2][2],
};

inline double srgb_to_linear(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

inline double lab_f(double t) {
  constexpr double delta = 6.0 / 29.0;
  return t > delta * delta * delta ? std::cbrt(t) : t / (3.0 * delta * delta) + 4.0 / 29.0;
}

inline std::array<double, 3> pixel_to_lab(double r, double g, double b) {
  std::array<double, 3> lin{srgb_to_linear(r), srgb_to_linear(g), srgb_to_linear(b)};
  std::array<double, 3> xyz{};
  for (int i = 0; i < 3; ++i) {
    xyz[i] = kRgbToXyz[i][0] * lin[0] + kRgbToXyz[i][1] * lin[1] + kRgbToXyz[i][2] * lin[2];
  }
  double fx = lab_f(xyz[0] / kWhite[0]);
  double fy = lab_f(xyz[1] / kWhite[1]);
  double fz = lab_f(xyz[2] / kWhite[2]);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

/// Y = 0.299R + 0.587G + 0.114B, Db = -0.450R - 0.883G + 1.333B,
/// Dr = -1.333R + 1.116G + 0.217B, written in channel differences so that
/// gray inputs land exactly on Db = Dr = 0 and Y = gray level.
inline std::array<double, 3> pixel_to_ydbdr(double r, double g, double b) {
  return {g + 0.299 * (r - g) + 0.114 * (b - g),
          -0.450 * (r - b) - 0.883 * (g - b),
          -1.333 * (r - b) + 1.116 * (g - b)};
}

}  // namespace colorspace

namespace detail {

inline void require_rgb_image(const Tensor& rgb, const char* op) {
  if (rgb.rank() != 3 || rgb.dim(2) != 3) {
    throw DimensionError(std::string(op) + ": expected [h x w x 3], got " + format_shape(rgb.shape()));
  }
  for (double v : rgb.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw RangeError(std::string(op) + ": channel value " + std::to_string(v) + " outside [0,1]");
  }
}

template <typename PixelFn>
std::pair<Tensor, Tensor> split_luma_chroma(const Tensor& rgb, PixelFn fn) {
  std::size_t h = rgb.dim(0), w = rgb.dim(1);
  std::vector<double> luma(h * w), chroma(h * w * 2);
  auto d = rgb.data();
  for (std::size_t i = 0; i < h * w; ++i) {
    auto px = fn(d[i * 3], d[i * 3 + 1], d[i * 3 + 2]);
    luma[i] = px[0];
    chroma[i * 2] = px[1];
    chroma[i * 2 + 1] = px[2];
  }
  return {Tensor({h, w, 1}, std::move(luma)), Tensor({h, w, 2}, std::move(chroma))};
}

}  // namespace detail

/// CIE L*a*b* (D65, sRGB companding), split into the L and ab views.
inline std::pair<Tensor, Tensor> rgb_to_lab(const Tensor& rgb) {
  detail::require_rgb_image(rgb, "rgb_to_lab");
  return detail::split_luma_chroma(rgb, colorspace::pixel_to_lab);
}

/// YDbDr (SECAM), split into the Y and DbDr views.
inline std::pair<Tensor, Tensor> rgb_to_ydbdr(const Tensor& rgb) {
  detail::require_rgb_image(rgb, "rgb_to_ydbdr");
  return detail::split_luma_chroma(rgb, colorspace::pixel_to_ydbdr);
}

// ---------------------------------------------------------------------------
// Patch pairs

struct PatchPair {
  Tensor first;
  Tensor second;
  std::size_t x = 0;
  std::size_t y = 0;
};

/// Two p x p patches at (x, y) and (x + d, y + d), with (x, y) uniform over
/// every placement where both fit.
inline PatchPair extract_patch_pair(const Tensor& image, std::size_t patch, std::size_t distance, Rng& rng) {
  if (image.rank() != 3) throw DimensionError("extract_patch_pair: expected [h x w x c], got " + format_shape(image.shape()));
  std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  if (patch == 0) throw GeometryError("extract_patch_pair: patch size must be positive");
  if (distance < patch) {
    throw GeometryError("extract_patch_pair: distance " + std::to_string(distance) + " < patch " +
                        std::to_string(patch) + " would overlap");
  }
  if (distance + patch > w || distance + patch > h) {
    throw GeometryError("extract_patch_pair: image " + format_shape(image.shape()) + " too small for patch " +
                        std::to_string(patch) + " at distance " + std::to_string(distance));
  }
  std::size_t x = rng.below(w - distance - patch + 1);
  std::size_t y = rng.below(h - distance - patch + 1);
  auto crop = [&](std::size_t x0, std::size_t y0) {
    std::vector<double> out(patch * patch * c);
    auto d = image.data();
    for (std::size_t r = 0; r < patch; ++r)
      for (std::size_t col = 0; col < patch; ++col)
        for (std::size_t ch = 0; ch < c; ++ch)
          out[(r * patch + col) * c + ch] = d[((y0 + r) * w + (x0 + col)) * c + ch];
    return Tensor({patch, patch, c}, std::move(out));
  };
  return {crop(x, y), crop(x + distance, y + distance), x, y};
}

// ---------------------------------------------------------------------------
// Procedural images

/// Synthetic RGB image whose dominant hue and shape encode `label` (0..n_classes-1),
/// overlaid with a random background gradient and soft blobs.
inline Tensor procedural_image(std::size_t size, int label, int n_classes, Rng& rng) {
  std::vector<double> px(size * size * 3);
  double hue = (static_cast<double>(label) + 0.5) / n_classes;
  auto hue_rgb = [](double hh) {
    std::array<double, 3> c{};
    for (int k = 0; k < 3; ++k) {
      double t = std::fmod(hh + k / 3.0, 1.0);
      c[k] = 0.5 + 0.5 * std::cos(2.0 * std::numbers::pi * t);
    }
    return c;
  };
  auto fg = hue_rgb(hue);
  std::array<double, 3> bg0{rng.uniform(), rng.uniform(), rng.uniform()};
  std::array<double, 3> bg1{rng.uniform(), rng.uniform(), rng.uniform()};
  double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  double cx = rng.uniform(0.3, 0.7) * size, cy = rng.uniform(0.3, 0.7) * size;
  double radius = rng.uniform(0.2, 0.35) * size;
  int shape_kind = label % 3;
  struct Blob { double x, y, s, amp; std::array<double, 3> col; };
  std::vector<Blob> blobs;
  for (int b = 0; b < 3; ++b) {
    blobs.push_back({rng.uniform() * size, rng.uniform() * size, rng.uniform(2.0, 6.0), rng.uniform(0.1, 0.3),
                     {rng.uniform(), rng.uniform(), rng.uniform()}});
  }
  double ca = std::cos(angle), sa = std::sin(angle);
  for (std::size_t r = 0; r < size; ++r) {
    for (std::size_t c = 0; c < size; ++c) {
      double u = (ca * (c - size / 2.0) + sa * (r - size / 2.0)) / size + 0.5;
      u = std::clamp(u, 0.0, 1.0);
      std::array<double, 3> col{};
      for (int k = 0; k < 3; ++k) col[k] = bg0[k] * (1.0 - u) + bg1[k] * u;
      double dx = c - cx, dy = r - cy;
      bool inside = false;
      if (shape_kind == 0) inside = dx * dx + dy * dy < radius * radius;
      else if (shape_kind == 1) inside = std::abs(dx) < radius && std::abs(dy) < radius;
      else inside = std::abs(dx) + std::abs(dy) < radius;
      if (inside) col = fg;
      for (const auto& b : blobs) {
        double e = b.amp * std::exp(-((c - b.x) * (c - b.x) + (r - b.y) * (r - b.y)) / (2.0 * b.s * b.s));
        for (int k = 0; k < 3; ++k) col[k] = col[k] * (1.0 - e) + b.col[k] * e;
      }
      for (int k = 0; k < 3; ++k) px[(r * size + c) * 3 + k] = std::clamp(col[k], 0.0, 1.0);
    }
  }
  return Tensor({size, size, 3}, std::move(px));
}

/// Colorspace-split dataset of procedural images: views "L" and "ab" (or "Y"
/// and "DbDr"), labelled by the image class.
inline Dataset gen_color_views(std::size_t n, std::size_t size, int n_classes, bool ydbdr, std::uint64_t seed) {
  if (n == 0 || size == 0 || n_classes < 2) throw ParameterError("gen_color_views: bad parameters");
  Rng rng(seed);
  std::string luma = ydbdr ? "Y" : "L", chroma = ydbdr ? "DbDr" : "ab";
  Dataset ds({{luma, {size, size, 1}}, {chroma, {size, size, 2}}}, n);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = static_cast<int>(rng.below(n_classes));
    Tensor img = procedural_image(size, labels[i], n_classes, rng);
    auto [a, b] = ydbdr ? rgb_to_ydbdr(img) : rgb_to_lab(img);
    std::copy(a.data().begin(), a.data().end(), ds.row(0, i).begin());
    std::copy(b.data().begin(), b.data().end(), ds.row(1, i).begin());
  }
  ds.set_labels(std::move(labels));
  return ds;
}

/// Patch pairs at fixed offset (d, d) from procedural images: views "p1", "p2".
inline Dataset gen_patch_views(std::size_t n, std::size_t image_size, std::size_t patch, std::size_t distance,
                               int n_classes, std::uint64_t seed) {
  Rng rng(seed);
  Dataset ds({{"p1", {patch, patch, 3}}, {"p2", {patch, patch, 3}}}, n);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = static_cast<int>(rng.below(n_classes));
    Tensor img = procedural_image(image_size, labels[i], n_classes, rng);
    auto pair = extract_patch_pair(img, patch, distance, rng);
    std::copy(pair.first.data().begin(), pair.first.data().end(), ds.row(0, i).begin());
    std::copy(pair.second.data().begin(), pair.second.data().end(), ds.row(1, i).begin());
  }
  ds.set_labels(std::move(labels));
  return ds;
}

// ---------------------------------------------------------------------------
// Gaussian views with known mutual information

struct SyntheticGaussianSpec {
  std::size_t dim = 1;
  double rho = 0.9;
  std::size_t n_samples = 10000;
  std::uint64_t seed = 0;
};

inline void validate(const SyntheticGaussianSpec& spec) {
  if (!(std::abs(spec.rho) < 1.0)) throw ParameterError("gaussian views: |rho| must be < 1, got " + std::to_string(spec.rho));
  if (spec.dim == 0 || spec.n_samples == 0) throw ParameterError("gaussian views: dim and n_samples must be positive");
}

/// Closed-form I(x; y) in nats for unit-variance jointly Gaussian coordinates.
inline double analytic_gaussian_mi(const SyntheticGaussianSpec& spec) {
  if (!(std::abs(spec.rho) < 1.0)) throw ParameterError("analytic_gaussian_mi: |rho| must be < 1");
  return static_cast<double>(spec.dim) * (-0.5 * std::log1p(-spec.rho * spec.rho));
}

/// log p(x,y) / (p(x) p(y)) for independent coordinates with correlation rho.
inline double gaussian_log_density_ratio(std::span<const double> x, std::span<const double> y, double rho) {
  double r2 = rho * rho;
  double total = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    total += -0.5 * std::log1p(-r2) - (r2 * x[j] * x[j] - 2.0 * rho * x[j] * y[j] + r2 * y[j] * y[j]) / (2.0 * (1.0 - r2));
  }
  return total;
}

/// Views "x" and "y": per coordinate zero-mean, unit-variance, correlation rho.
inline Dataset gen_gaussian_views(const SyntheticGaussianSpec& spec) {
  validate(spec);
  Rng rng(spec.seed);
  Dataset ds({{"x", {spec.dim}}, {"y", {spec.dim}}}, spec.n_samples);
  double c = std::sqrt(1.0 - spec.rho * spec.rho);
  for (std::size_t i = 0; i < spec.n_samples; ++i) {
    auto x = ds.row(0, i);
    auto y = ds.row(1, i);
    for (std::size_t j = 0; j < spec.dim; ++j) {
      x[j] = rng.normal();
      y[j] = spec.rho * x[j] + c * rng.normal();
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Shared-factor views

struct SharedFactorSpec {
  std::size_t latent_dim = 2;
  std::size_t n_views = 2;
  std::size_t view_dim = 16;
  /// One entry per view, or a single entry applied to every view.
  std::vector<double> noise_sigma{0.0};
  int n_classes = 4;
  std::size_t n_samples = 2000;
  std::uint64_t seed = 0;

  double sigma(std::size_t view) const { return noise_sigma.size() == 1 ? noise_sigma[0] : noise_sigma.at(view); }
};

inline void validate(const SharedFactorSpec& spec) {
  if (spec.n_views < 1) throw ParameterError("shared factor: n_views must be >= 1");
  if (spec.latent_dim < 1 || spec.n_samples < 1) throw ParameterError("shared factor: latent_dim and n_samples must be positive");
  if (spec.view_dim < spec.latent_dim) throw ParameterError("shared factor: view_dim must be >= latent_dim");
  if (spec.noise_sigma.size() != 1 && spec.noise_sigma.size() != spec.n_views) {
    throw ParameterError("shared factor: noise_sigma needs 1 or n_views entries");
  }
  for (double s : spec.noise_sigma) {
    if (!(s >= 0.0)) throw ParameterError("shared factor: noise_sigma must be >= 0");
  }
  if (spec.latent_dim == 1 ? spec.n_classes != 2 : spec.n_classes < 2) {
    throw ParameterError("shared factor: n_classes must be 2 for a 1-D latent and >= 2 otherwise");
  }
}

/// Class of a latent: sign for 1-D latents, otherwise the angular sector of
/// (z0, z1) with n_classes equal sectors starting at the positive z0 axis.
inline int shared_factor_label(std::span<const double> z, int n_classes) {
  if (z.size() == 1) return z[0] > 0.0 ? 1 : 0;
  double a = std::atan2(z[1], z[0]);
  if (a < 0.0) a += 2.0 * std::numbers::pi;
  int k = static_cast<int>(a / (2.0 * std::numbers::pi / n_classes));
  return std::min(k, n_classes - 1);
}

namespace detail {

/// Random [rows x cols] row-major matrix with orthonormal columns scaled by
/// `scale`.
inline std::vector<double> orthonormal_map(Rng& rng, std::size_t rows, std::size_t cols, double scale) {
  std::vector<double> a(rows * cols);
  for (auto& x : a) x = rng.normal();
  // Gram-Schmidt over columns.
  for (std::size_t c = 0; c < cols; ++c) {
    for (std::size_t p = 0; p < c; ++p) {
      double dot = 0.0;
      for (std::size_t r = 0; r < rows; ++r) dot += a[r * cols + c] * a[r * cols + p];
      for (std::size_t r = 0; r < rows; ++r) a[r * cols + c] -= dot * a[r * cols + p];
    }
    double norm = 0.0;
    for (std::size_t r = 0; r < rows; ++r) norm += a[r * cols + c] * a[r * cols + c];
    norm = std::sqrt(norm);
    for (std::size_t r = 0; r < rows; ++r) a[r * cols + c] /= norm;
  }
  for (auto& x : a) x *= scale;
  return a;
}

}  // namespace detail

/// Per-view projection matrices [view_dim x latent_dim], row-major. Columns are
/// orthonormal scaled by sqrt(view_dim / latent_dim), so every view carries the
/// latent at unit per-coordinate variance.
inline std::vector<std::vector<double>> shared_factor_projections(const SharedFactorSpec& spec) {
  validate(spec);
  Rng rng(Rng::mix(spec.seed ^ 0x5eedULL));
  double s = std::sqrt(static_cast<double>(spec.view_dim) / static_cast<double>(spec.latent_dim));
  std::vector<std::vector<double>> maps;
  for (std::size_t v = 0; v < spec.n_views; ++v) maps.push_back(detail::orthonormal_map(rng, spec.view_dim, spec.latent_dim, s));
  return maps;
}

/// Views "v1".."vM": each a fixed random linear map of a shared Gaussian latent
/// plus independent per-view noise. Labels depend on the latent only.
inline Dataset gen_shared_factor(const SharedFactorSpec& spec, std::vector<double>* latents_out = nullptr) {
  validate(spec);
  auto maps = shared_factor_projections(spec);
  std::vector<ViewSpec> specs;
  for (std::size_t v = 0; v < spec.n_views; ++v) specs.push_back({"v" + std::to_string(v + 1), {spec.view_dim}});
  Dataset ds(specs, spec.n_samples);
  Rng rng(spec.seed);
  std::size_t D = spec.view_dim, L = spec.latent_dim;
  std::vector<int> labels(spec.n_samples);
  std::vector<double> z(L);
  if (latents_out) latents_out->assign(spec.n_samples * L, 0.0);
  for (std::size_t i = 0; i < spec.n_samples; ++i) {
    for (auto& x : z) x = rng.normal();
    labels[i] = shared_factor_label(z, spec.n_classes);
    if (latents_out) std::copy(z.begin(), z.end(), latents_out->begin() + i * L);
    for (std::size_t v = 0; v < spec.n_views; ++v) {
      auto out = ds.row(v, i);
      const auto& a = maps[v];
      for (std::size_t r = 0; r < D; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < L; ++c) acc += a[r * L + c] * z[c];
        out[r] = acc + spec.sigma(v) * rng.normal();
      }
    }
  }
  ds.set_labels(std::move(labels));
  return ds;
}

/// Two views with a tunable amount of shared content. Each view carries a
/// semantic latent (which defines the label) and a wider nuisance latent.
/// `sharing` in [0, 1] moves through three regimes: at 0 the
/// views are independent and carry nothing about the label, at 0.5 the
/// semantic latent is fully shared and the nuisance private, at 1 both are
/// fully shared. Per-view observation noise is always independent.
struct PartialSharingSpec {
  double sharing = 0.5;
  std::size_t semantic_dim = 2;
  std::size_t nuisance_dim = 8;
  double nuisance_scale = 1.0;
  std::size_t view_dim = 64;
  double noise_sigma = 1.0;
  int n_classes = 4;
  std::size_t n_samples = 2000;
  std::uint64_t seed = 0;

  /// Correlation between a view's semantic coordinates and the label latent.
  double semantic_rho() const { return std::min(1.0, 2.0 * sharing); }
  /// Correlation between a view's nuisance coordinates and the common one.
  double nuisance_rho() const { return std::max(0.0, 2.0 * sharing - 1.0); }
};

inline void validate(const PartialSharingSpec& spec) {
  if (!(spec.sharing >= 0.0 && spec.sharing <= 1.0)) throw ParameterError("partial sharing: sharing must lie in [0, 1]");
  if (spec.semantic_dim < 1 || spec.n_samples < 1) {
    throw ParameterError("partial sharing: semantic_dim and n_samples must be positive");
  }
  if (spec.view_dim < spec.semantic_dim + spec.nuisance_dim) {
    throw ParameterError("partial sharing: view_dim must be >= semantic_dim + nuisance_dim");
  }
  if (!(spec.noise_sigma >= 0.0) || !(spec.nuisance_scale > 0.0)) {
    throw ParameterError("partial sharing: noise_sigma must be >= 0 and nuisance_scale > 0");
  }
  if (spec.semantic_dim == 1 ? spec.n_classes != 2 : spec.n_classes < 2) {
    throw ParameterError("partial sharing: n_classes must be 2 for a 1-D latent and >= 2 otherwise");
  }
}

/// I(v1; v2) in nats. The views are jointly Gaussian and each projection has
/// orthonormal columns, so the MI reduces to a sum over latent coordinates of
/// -0.5 ln(1 - r^2), r being the correlation of the projected statistics.
/// Infinite when a coordinate is shared without noise.
inline double partial_sharing_mi(const PartialSharingSpec& spec) {
  validate(spec);
  std::size_t L = spec.semantic_dim + spec.nuisance_dim;
  double noise_var = spec.noise_sigma * spec.noise_sigma * static_cast<double>(L) / static_cast<double>(spec.view_dim);
  auto term = [&](double rho, double loading, std::size_t count) {
    if (rho == 0.0 || count == 0) return 0.0;
    double var = loading * loading;
    double r = rho * rho * var / (var + noise_var);
    if (r >= 1.0) return std::numeric_limits<double>::infinity();
    return -0.5 * static_cast<double>(count) * std::log1p(-r * r);
  };
  return term(spec.semantic_rho(), 1.0, spec.semantic_dim) +
         term(spec.nuisance_rho(), spec.nuisance_scale, spec.nuisance_dim);
}

/// Views "v1" and "v2" with labels from the common semantic latent.
inline Dataset gen_partial_sharing(const PartialSharingSpec& spec) {
  validate(spec);
  std::size_t S = spec.semantic_dim, U = spec.nuisance_dim, L = S + U, D = spec.view_dim;
  Rng map_rng(Rng::mix(spec.seed ^ 0x5eedULL));
  double scale = std::sqrt(static_cast<double>(D) / static_cast<double>(L));
  std::vector<std::vector<double>> maps;
  for (int v = 0; v < 2; ++v) maps.push_back(detail::orthonormal_map(map_rng, D, L, scale));

  Dataset ds({{"v1", {D}}, {"v2", {D}}}, spec.n_samples);
  Rng rng(spec.seed);
  double rc = spec.semantic_rho(), ru = spec.nuisance_rho();
  double pc = std::sqrt(1.0 - rc * rc), pu = std::sqrt(1.0 - ru * ru);
  std::vector<int> labels(spec.n_samples);
  std::vector<double> c(S), u(U), z(L);
  for (std::size_t i = 0; i < spec.n_samples; ++i) {
    for (auto& x : c) x = rng.normal();
    for (auto& x : u) x = rng.normal();
    labels[i] = shared_factor_label(c, spec.n_classes);
    for (std::size_t v = 0; v < 2; ++v) {
      for (std::size_t j = 0; j < S; ++j) z[j] = rc * c[j] + pc * rng.normal();
      for (std::size_t j = 0; j < U; ++j) z[S + j] = spec.nuisance_scale * (ru * u[j] + pu * rng.normal());
      auto out = ds.row(v, i);
      const auto& a = maps[v];
      for (std::size_t r = 0; r < D; ++r) {
        double acc = 0.0;
        for (std::size_t k = 0; k < L; ++k) acc += a[r * L + k] * z[k];
        out[r] = acc + spec.noise_sigma * rng.normal();
      }
    }
  }
  ds.set_labels(std::move(labels));
  return ds;
}

}  // namespace cmc
