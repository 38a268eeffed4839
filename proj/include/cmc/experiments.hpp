// SPDX-License-Identifier: Apache-2.0
//
// Desk-scale experiments: view-count ablation, contrastive vs predictive,
// shared-information sweeps, negative-count sweeps, Gaussian bound runs.
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "cmc/diagnostics.hpp"
#include "cmc/error.hpp"
#include "cmc/probe.hpp"
#include "cmc/train.hpp"
#include "cmc/views.hpp"

namespace cmc {

/// Shared knobs. Contrastive training uses the first train_samples generated
/// samples without labels; the probe uses the next probe_samples, split into
/// probe-train and probe-test halves.
struct ExperimentSetup {
  std::size_t train_samples = 400;
  std::size_t probe_samples = 4000;
  double probe_test_fraction = 0.5;
  std::vector<std::size_t> hidden{64};
  std::size_t embed_dim = 16;
  TrainConfig train;
  ProbeConfig probe;
};

inline void validate(const ExperimentSetup& setup) {
  if (setup.train_samples < 2) throw ConfigError("train_samples must be at least 2");
  if (setup.probe_samples < 2) throw ConfigError("probe_samples must be at least 2");
  if (setup.embed_dim < 1) throw ConfigError("embed_dim must be positive");
  validate(setup.train);
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw ParameterError("median of an empty sample");
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

namespace detail {

struct Pools {
  Dataset train;
  Dataset probe;
};

inline Pools split_pools(const Dataset& full, std::size_t n_train) {
  std::vector<std::size_t> a(n_train), b(full.size() - n_train);
  std::iota(a.begin(), a.end(), 0);
  std::iota(b.begin(), b.end(), n_train);
  return {full.subset_samples(a), full.subset_samples(b)};
}

inline std::uint64_t model_seed(const TrainConfig& cfg) { return Rng::mix(cfg.seed ^ 0x30deULL); }

inline std::vector<std::string> view_prefix(std::size_t m) {
  std::vector<std::string> out;
  for (std::size_t v = 1; v <= m; ++v) out.push_back("v" + std::to_string(v));
  return out;
}

inline ProbeResult probe_view(const Model& model, const Pools& pools, const std::string& view,
                              const ExperimentSetup& setup, std::string tag) {
  Split split = make_split(pools.probe.size(), setup.probe_test_fraction, setup.train.seed);
  return linear_probe(embed_all(model, pools.probe, view), pools.probe.labels(), split, setup.probe, std::move(tag));
}

/// Contrastive training over `names` with a bank sized to the training pool.
inline TrainingLog train_contrastive(Model& model, const Dataset& data, const ViewGraph& graph,
                                     const ExperimentSetup& setup) {
  MemoryBank bank = init_bank(graph.view_names, data.size(), setup.embed_dim, Rng::mix(setup.train.seed ^ 0xba4cULL),
                              setup.train.bank_momentum);
  return train(model, data, graph, bank, setup.train);
}

}  // namespace detail

struct ViewCountRow {
  std::size_t views = 0;
  ProbeResult probe;
  double final_loss = 0.0;
};

/// Probe accuracy of the core view "v1" after training with 1..n_views views.
/// One view uses the sub-patch self-contrast over `chunks` slices of v1.
/// spec.n_samples is replaced by train_samples + probe_samples.
inline std::vector<ViewCountRow> experiment_view_ablation(SharedFactorSpec spec, GraphMode mode,
                                                          const ExperimentSetup& setup, std::size_t chunks = 4) {
  validate(setup);
  spec.n_samples = setup.train_samples + setup.probe_samples;
  auto pools = detail::split_pools(gen_shared_factor(spec), setup.train_samples);
  std::vector<ViewCountRow> rows;
  for (std::size_t m = 1; m <= spec.n_views; ++m) {
    auto names = detail::view_prefix(m);
    ViewCountRow row;
    row.views = m;
    if (m == 1) {
      Model model = make_model(pools.train, names, setup.hidden, setup.embed_dim, detail::model_seed(setup.train), chunks);
      TrainConfig cfg = setup.train;
      cfg.loss_kind = LossKind::subpatch;
      auto log = train_single_view(model, pools.train, "v1", cfg);
      row.final_loss = log.epochs.back().loss;
      row.probe = detail::probe_view(model, pools, "v1", setup, "views=1");
    } else {
      Model model = make_model(pools.train, names, setup.hidden, setup.embed_dim, detail::model_seed(setup.train));
      auto graph = build_graph(names, mode, "v1");
      auto log = detail::train_contrastive(model, pools.train, graph, setup);
      row.final_loss = log.epochs.back().loss;
      row.probe = detail::probe_view(model, pools, "v1", setup, "views=" + std::to_string(m));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

struct PredVsContrastResult {
  ProbeResult contrastive;
  ProbeResult predictive;
  ProbeResult random_frozen;
  double predictive_final_loss = 0.0;
};

/// The same v1 encoder architecture and initialization trained once with the
/// symmetric two-view contrastive loss and once as v1 -> v2 regression through
/// a linear decoder; an untrained copy gives the random baseline. Uses views
/// v1 and v2 of the shared-factor generator.
inline PredVsContrastResult experiment_pred_vs_contrast(SharedFactorSpec spec, const ExperimentSetup& setup,
                                                        PredictiveNorm norm = PredictiveNorm::l2) {
  validate(setup);
  spec.n_views = 2;
  spec.n_samples = setup.train_samples + setup.probe_samples;
  auto pools = detail::split_pools(gen_shared_factor(spec), setup.train_samples);
  std::vector<std::string> names{"v1", "v2"};
  std::uint64_t seed = detail::model_seed(setup.train);
  PredVsContrastResult res;

  Model random_model = make_model(pools.train, names, setup.hidden, setup.embed_dim, seed);
  res.random_frozen = detail::probe_view(random_model, pools, "v1", setup, "random");

  Model contrast_model = make_model(pools.train, names, setup.hidden, setup.embed_dim, seed);
  detail::train_contrastive(contrast_model, pools.train, build_graph(names, GraphMode::core_view, "v1"), setup);
  res.contrastive = detail::probe_view(contrast_model, pools, "v1", setup, "contrastive");

  Model pred_model = make_model(pools.train, names, setup.hidden, setup.embed_dim, seed);
  Rng dec_rng(Rng::mix(setup.train.seed ^ 0xdec0ULL));
  Mlp decoder = make_mlp({setup.embed_dim, spec.view_dim}, dec_rng);
  auto log = train_predictive(pred_model.encoders.at("v1"), decoder, pools.train, "v1", "v2", norm, setup.train);
  res.predictive_final_loss = log.epochs.back().loss;
  res.predictive = detail::probe_view(pred_model, pools, "v1", setup, "predictive");
  return res;
}

struct SharingRow {
  double sharing = 0.0;
  double mi_nats = 0.0;  // analytic I(v1; v2)
  double mi_lower_bound = 0.0;
  double final_loss = 0.0;
  ProbeResult probe;
  ProbeResult raw_probe;
};

/// Sweep of the partial-sharing family; spec.sharing and spec.n_samples are
/// replaced per grid point.
inline std::vector<SharingRow> experiment_mi_sweep(PartialSharingSpec spec, const std::vector<double>& sharing_grid,
                                                   const ExperimentSetup& setup) {
  validate(setup);
  std::vector<SharingRow> rows;
  std::vector<std::string> names{"v1", "v2"};
  spec.n_samples = setup.train_samples + setup.probe_samples;
  for (double s : sharing_grid) {
    spec.sharing = s;
    auto pools = detail::split_pools(gen_partial_sharing(spec), setup.train_samples);
    Model model = make_model(pools.train, names, setup.hidden, setup.embed_dim, detail::model_seed(setup.train));
    auto log = detail::train_contrastive(model, pools.train, build_graph(names, GraphMode::core_view, "v1"), setup);
    SharingRow row;
    row.sharing = s;
    row.mi_nats = partial_sharing_mi(spec);
    row.final_loss = log.epochs.back().loss;
    row.mi_lower_bound = log.epochs.back().pairs.front().mi_lb;
    row.probe = detail::probe_view(model, pools, "v1", setup, "sharing=" + std::to_string(s));
    Split split = make_split(pools.probe.size(), setup.probe_test_fraction, setup.train.seed);
    row.raw_probe = linear_probe(pools.probe.all("v1"), pools.probe.labels(), split, setup.probe, "raw");
    rows.push_back(std::move(row));
  }
  return rows;
}

struct PatchSweepSpec {
  std::size_t image_size = 64;
  std::size_t patch = 8;
  int n_classes = 4;
  std::uint64_t seed = 0;
};

struct PatchDistanceRow {
  std::size_t distance = 0;
  double mi_lower_bound = 0.0;  // estimated MI proxy: ln(k) - per-direction loss
  ProbeResult probe;
};

/// Patch pairs at growing offsets; no closed-form MI, so the contrastive
/// bound serves as the estimate.
inline std::vector<PatchDistanceRow> experiment_patch_sweep(const PatchSweepSpec& spec,
                                                            const std::vector<std::size_t>& distances,
                                                            const ExperimentSetup& setup) {
  validate(setup);
  std::vector<PatchDistanceRow> rows;
  std::vector<std::string> names{"p1", "p2"};
  for (std::size_t d : distances) {
    Dataset full = gen_patch_views(setup.train_samples + setup.probe_samples, spec.image_size, spec.patch, d,
                                   spec.n_classes, spec.seed);
    auto pools = detail::split_pools(full, setup.train_samples);
    Model model = make_model(pools.train, names, setup.hidden, setup.embed_dim, detail::model_seed(setup.train));
    auto log = detail::train_contrastive(model, pools.train, build_graph(names, GraphMode::core_view, "p1"), setup);
    PatchDistanceRow row;
    row.distance = d;
    row.mi_lower_bound = log.epochs.back().pairs.front().mi_lb;
    row.probe = detail::probe_view(model, pools, "p1", setup, "distance=" + std::to_string(d));
    rows.push_back(std::move(row));
  }
  return rows;
}

struct NegativesRow {
  std::size_t k = 0;
  double mi_lower_bound = 0.0;
  ProbeResult probe;
};

/// Identical two-view runs differing only in the number of negatives.
inline std::vector<NegativesRow> experiment_negatives_sweep(SharedFactorSpec spec, const std::vector<std::size_t>& ks,
                                                            const ExperimentSetup& setup) {
  validate(setup);
  for (std::size_t k : ks) {
    if (k == 0 || k > setup.train_samples - 1) {
      throw ConfigError("negatives k=" + std::to_string(k) + " must lie in [1, train_samples-1=" +
                        std::to_string(setup.train_samples - 1) + "]");
    }
  }
  spec.n_views = 2;
  spec.n_samples = setup.train_samples + setup.probe_samples;
  auto pools = detail::split_pools(gen_shared_factor(spec), setup.train_samples);
  std::vector<std::string> names{"v1", "v2"};
  std::vector<NegativesRow> rows;
  for (std::size_t k : ks) {
    ExperimentSetup s = setup;
    s.train.negatives = k;
    Model model = make_model(pools.train, names, s.hidden, s.embed_dim, detail::model_seed(s.train));
    auto log = detail::train_contrastive(model, pools.train, build_graph(names, GraphMode::core_view, "v1"), s);
    NegativesRow row;
    row.k = k;
    row.mi_lower_bound = log.epochs.back().pairs.front().mi_lb;
    row.probe = detail::probe_view(model, pools, "v1", s, "k=" + std::to_string(k));
    rows.push_back(std::move(row));
  }
  return rows;
}

struct GaussianRun {
  Model model;
  TrainingLog log;
  double analytic_mi = 0.0;
};

/// Two-view contrastive training on correlated Gaussian views "x" and "y",
/// using all spec.n_samples samples.
inline GaussianRun run_gaussian(const SyntheticGaussianSpec& spec, const ExperimentSetup& setup) {
  validate(setup);
  Dataset data = gen_gaussian_views(spec);
  std::vector<std::string> names{"x", "y"};
  GaussianRun run{make_model(data, names, setup.hidden, setup.embed_dim, detail::model_seed(setup.train)), {},
                  analytic_gaussian_mi(spec)};
  run.log = detail::train_contrastive(run.model, data, build_graph(names, GraphMode::core_view, "x"), setup);
  return run;
}

}  // namespace cmc
