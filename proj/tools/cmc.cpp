// SPDX-License-Identifier: Apache-2.0
//
// cmc: dataset generation, training, probing, sweeps and diagnostics.
//
// Exit codes: 0 success, 1 internal error, 2 configuration error.

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "cmc/cmc.hpp"

namespace fs = std::filesystem;

namespace {

struct GenOptions {
  bool gaussian = false;
  bool shared = false;
  std::optional<double> sharing;
  std::string color;
  bool patches = false;
  double rho = 0.9;
  std::size_t dim = 1;
  std::size_t n = 2000;
  std::uint64_t seed = 0;
  std::size_t views = 2;
  double noise = 0.0;
  std::size_t latent_dim = 2;
  std::size_t view_dim = 16;
  int classes = 4;
  std::size_t size = 32;
  std::size_t patch = 8;
  std::size_t distance = 8;
  std::string out = "dataset.cmcv";
};

struct CommonOptions {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::string> data;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
};

std::string fixed4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) { cmc::io::write_file(path.string(), text); }

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw cmc::ConfigError("cannot create output directory '" + dir + "': " + ec.message());
}

cmc::ExperimentConfig resolve_config(const CommonOptions& o) {
  cmc::ExperimentConfig cfg = o.config.empty() ? cmc::ExperimentConfig{} : cmc::load_config(o.config);
  for (const auto& kv : o.overrides) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) throw cmc::ConfigError("--set expects section.key=value, got '" + kv + "'");
    cmc::apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.data) cfg.data_path = *o.data;
  if (o.out) cfg.output_dir = *o.out;
  if (o.seed) cfg.seed = *o.seed;
  cfg.train.seed = cfg.seed;
  return cfg;
}

cmc::Dataset load_data(const cmc::ExperimentConfig& cfg) {
  if (cfg.data_path.empty()) throw cmc::ConfigError("data.path is not set");
  try {
    return cmc::load_dataset(cfg.data_path);
  } catch (const cmc::FormatError& e) {
    throw cmc::ConfigError(e.what());
  }
}

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

/// "full" or "core:<view>", where the core view matches a dataset view name
/// exactly or, failing that, case-insensitively.
cmc::ViewGraph graph_for(const std::string& mode, const std::vector<std::string>& names) {
  const std::string prefix = "core:";
  if (mode.rfind(prefix, 0) == 0) {
    std::string core = mode.substr(prefix.size());
    if (std::find(names.begin(), names.end(), core) == names.end()) {
      for (const auto& n : names) {
        if (lower(n) == lower(core)) core = n;
      }
    }
    return cmc::build_graph(names, cmc::GraphMode::core_view, core);
  }
  return cmc::build_graph(names, mode);
}

// ---------------------------------------------------------------- gen

int cmd_gen(const GenOptions& g) {
  int kinds = g.gaussian + g.shared + g.sharing.has_value() + !g.color.empty() + g.patches;
  if (kinds != 1) throw cmc::ConfigError("gen needs exactly one of --gaussian, --shared, --sharing, --color, --patches");
  cmc::Report report;
  cmc::Dataset ds;
  std::optional<double> analytic_mi;
  if (g.gaussian) {
    cmc::SyntheticGaussianSpec spec{g.dim, g.rho, g.n, g.seed};
    try {
      ds = cmc::gen_gaussian_views(spec);
    } catch (const cmc::ParameterError& e) {
      throw cmc::ConfigError(e.what());
    }
    report.set("kind", "gaussian");
    analytic_mi = cmc::analytic_gaussian_mi(spec);
  } else if (g.shared) {
    cmc::SharedFactorSpec spec;
    spec.latent_dim = g.latent_dim;
    spec.n_views = g.views;
    spec.view_dim = g.view_dim;
    spec.noise_sigma = {g.noise};
    spec.n_classes = g.classes;
    spec.n_samples = g.n;
    spec.seed = g.seed;
    try {
      ds = cmc::gen_shared_factor(spec);
    } catch (const cmc::ParameterError& e) {
      throw cmc::ConfigError(e.what());
    }
    report.set("kind", "shared");
  } else if (g.sharing) {
    cmc::PartialSharingSpec spec;
    spec.sharing = *g.sharing;
    spec.view_dim = g.view_dim;
    spec.noise_sigma = g.noise;
    spec.n_classes = g.classes;
    spec.n_samples = g.n;
    spec.seed = g.seed;
    try {
      ds = cmc::gen_partial_sharing(spec);
    } catch (const cmc::ParameterError& e) {
      throw cmc::ConfigError(e.what());
    }
    report.set("kind", "sharing");
    analytic_mi = cmc::partial_sharing_mi(spec);
  } else if (!g.color.empty()) {
    if (g.color != "lab" && g.color != "ydbdr") throw cmc::ConfigError("--color must be lab or ydbdr");
    ds = cmc::gen_color_views(g.n, g.size, g.classes, g.color == "ydbdr", g.seed);
    report.set("kind", "color-" + g.color);
  } else {
    try {
      ds = cmc::gen_patch_views(g.n, g.size, g.patch, g.distance, g.classes, g.seed);
    } catch (const cmc::GeometryError& e) {
      throw cmc::ConfigError(e.what());
    }
    report.set("kind", "patches");
  }
  cmc::save_dataset(ds, g.out);
  report.set("file", g.out);
  report.set("n", ds.size());
  report.set("views", ds.view_count());
  for (const auto& v : ds.views()) report.set("shape." + v.name, cmc::format_shape(v.shape));
  if (analytic_mi) report.set("analytic_mi_nats", fixed4(*analytic_mi));
  std::cout << report.str();
  return 0;
}

// ---------------------------------------------------------------- train

int cmd_train(const CommonOptions& o, const std::optional<std::string>& mode, const std::optional<std::size_t>& epochs) {
  cmc::ExperimentConfig cfg = resolve_config(o);
  if (mode) cfg.graph_mode = *mode;
  if (epochs) cfg.train.epochs = *epochs;
  cmc::Dataset data = load_data(cfg);
  ensure_dir(cfg.output_dir);
  fs::path dir(cfg.output_dir);

  auto names = data.view_names();
  cmc::Model model;
  cmc::TrainingLog log;
  std::string graph_desc;
  std::optional<cmc::MemoryBank> bank;
  std::uint64_t model_seed = cmc::Rng::mix(cfg.seed ^ 0x30deULL);
  if (cfg.train.loss_kind == cmc::LossKind::subpatch) {
    if (cfg.model.chunks < 2) throw cmc::ConfigError("subpatch loss needs model.chunks >= 2");
    std::string view = cfg.probe.view.empty() ? names.front() : cfg.probe.view;
    model = cmc::make_model(data, {view}, cfg.model.hidden, cfg.model.embed_dim, model_seed, cfg.model.chunks);
    log = cmc::train_single_view(model, data, view, cfg.train);
    graph_desc = "single:" + view;
  } else {
    cmc::ViewGraph graph = graph_for(cfg.graph_mode, names);
    graph_desc = graph.describe();
    model = cmc::make_model(data, graph.view_names, cfg.model.hidden, cfg.model.embed_dim, model_seed);
    bank.emplace(cmc::init_bank(graph.view_names, data.size(), cfg.model.embed_dim, cmc::Rng::mix(cfg.seed ^ 0xba4cULL),
                                cfg.train.bank_momentum));
    log = cmc::train(model, data, graph, *bank, cfg.train);
  }

  write_text(dir / "metrics.csv", cmc::metrics_csv(log));
  write_text(dir / "pair_loss.csv", cmc::pair_loss_csv(log));
  write_text(dir / "config.ini", cmc::to_ini(cfg));
  cmc::save_model(model, (dir / "model.cmck").string());
  if (bank) cmc::save_bank(*bank, (dir / "bank.cmcb").string());

  cmc::Report report;
  const auto& last = log.epochs.back();
  report.set("graph", graph_desc);
  report.set("pairs", last.pairs.size());
  report.set("epochs", log.epochs.size());
  report.set("negatives", log.negatives);
  report.set("final_loss", last.loss);
  report.set("final_loss_stderr", last.loss_stderr);
  for (const auto& p : last.pairs) report.set("mi_lb." + p.pair, p.mi_lb);
  for (const auto& [v, norm] : last.param_norms) report.set("param_norm." + v, norm);
  write_text(dir / "summary.txt", report.str());
  std::cout << report.str();
  return 0;
}

// ---------------------------------------------------------------- probe

int cmd_probe(const CommonOptions& o, const std::optional<std::string>& checkpoint, const std::optional<std::string>& view,
              bool raw) {
  cmc::ExperimentConfig cfg = resolve_config(o);
  if (checkpoint) cfg.probe.checkpoint = *checkpoint;
  if (view) cfg.probe.view = *view;
  cmc::Dataset data = load_data(cfg);
  if (!data.has_labels()) throw cmc::ConfigError("dataset '" + cfg.data_path + "' has no labels to probe");
  std::string probe_view = cfg.probe.view.empty() ? data.view_names().front() : cfg.probe.view;
  if (!data.has_view(probe_view)) throw cmc::ConfigError("dataset has no view named '" + probe_view + "'");

  cmc::Tensor features;
  std::string tag;
  if (raw) {
    features = data.all(probe_view);
    tag = "raw:" + probe_view;
  } else {
    std::string path = cfg.probe.checkpoint.empty() ? (fs::path(cfg.output_dir) / "model.cmck").string() : cfg.probe.checkpoint;
    cmc::Model model;
    try {
      model = cmc::load_model(path);
    } catch (const cmc::FormatError& e) {
      throw cmc::ConfigError(e.what());
    }
    if (!model.encoders.count(probe_view)) throw cmc::ConfigError("checkpoint has no encoder for view '" + probe_view + "'");
    if (model.encoders.at(probe_view).net.layer_sizes.front() != data.view(probe_view).flat_size()) {
      throw cmc::ConfigError("checkpoint encoder input size does not match view '" + probe_view + "'");
    }
    features = cmc::embed_all(model, data, probe_view);
    tag = "embed:" + probe_view;
  }
  cmc::Split split = cmc::make_split(data.size(), cfg.probe.test_fraction, cfg.seed);
  cmc::ProbeResult res = cmc::linear_probe(features, data.labels(), split, cfg.probe.cfg, tag);

  cmc::Report report;
  report.set("tag", res.tag);
  report.set("train_accuracy", res.train_accuracy);
  report.set("test_accuracy", res.test_accuracy);
  for (std::size_t k = 0; k < res.per_class_accuracy.size(); ++k)
    report.set("class_accuracy." + std::to_string(k), res.per_class_accuracy[k]);
  report.set("iterations", res.iterations);
  report.set("final_grad_norm", res.final_grad_norm);
  ensure_dir(cfg.output_dir);
  write_text(fs::path(cfg.output_dir) / "probe.txt", report.str());
  std::cout << report.str();
  return 0;
}

// ---------------------------------------------------------------- sweep

std::size_t worker_count() {
  const char* env = std::getenv("CMC_THREADS");
  if (!env || !*env) return 1;
  std::string s(env);
  if (s.find_first_not_of("0123456789") != std::string::npos || s.size() > 4 || std::stoul(s) == 0) {
    throw cmc::ConfigError("CMC_THREADS must be a positive integer, got '" + s + "'");
  }
  return std::stoul(s);
}

struct SweepRow {
  std::uint64_t seed;
  std::string point;
  double mi_nats;
  double mi_lb;
  double train_accuracy;
  double test_accuracy;
};

std::string csv_value(double v) { return std::isnan(v) ? "" : cmc::format_double(v); }

std::vector<SweepRow> sweep_one(const cmc::ExperimentConfig& cfg, std::uint64_t seed) {
  const auto& s = cfg.sweep;
  cmc::ExperimentSetup setup;
  setup.train_samples = s.train_samples;
  setup.probe_samples = s.probe_samples;
  setup.probe_test_fraction = cfg.probe.test_fraction;
  setup.hidden = cfg.model.hidden;
  setup.embed_dim = cfg.model.embed_dim;
  setup.train = cfg.train;
  setup.train.seed = seed;
  setup.probe = cfg.probe.cfg;

  cmc::SharedFactorSpec shared;
  shared.latent_dim = s.latent_dim;
  shared.n_views = s.n_views;
  shared.view_dim = s.view_dim;
  shared.noise_sigma = {s.noise_sigma};
  shared.n_classes = s.n_classes;
  shared.seed = seed;

  std::vector<SweepRow> rows;
  if (s.kind == "views") {
    cmc::GraphMode mode = cfg.graph_mode == "full" ? cmc::GraphMode::full_graph : cmc::GraphMode::core_view;
    std::size_t chunks = cfg.model.chunks ? cfg.model.chunks : 4;
    for (const auto& r : cmc::experiment_view_ablation(shared, mode, setup, chunks)) {
      rows.push_back({seed, std::to_string(r.views), NAN, NAN, r.probe.train_accuracy, r.probe.test_accuracy});
    }
  } else if (s.kind == "negatives") {
    std::vector<std::size_t> ks;
    for (double k : s.grid) {
      if (!(k >= 1.0) || k != std::floor(k)) throw cmc::ConfigError("negatives grid must hold positive integers");
      ks.push_back(static_cast<std::size_t>(k));
    }
    for (const auto& r : cmc::experiment_negatives_sweep(shared, ks, setup)) {
      rows.push_back({seed, std::to_string(r.k), NAN, r.mi_lower_bound, r.probe.train_accuracy, r.probe.test_accuracy});
    }
  } else if (s.kind == "sharing") {
    cmc::PartialSharingSpec spec;
    spec.semantic_dim = s.semantic_dim;
    spec.nuisance_dim = s.nuisance_dim;
    spec.nuisance_scale = s.nuisance_scale;
    spec.view_dim = s.view_dim;
    spec.noise_sigma = s.noise_sigma;
    spec.n_classes = s.n_classes;
    spec.seed = seed;
    for (const auto& r : cmc::experiment_mi_sweep(spec, s.grid, setup)) {
      rows.push_back({seed, cmc::format_double(r.sharing), r.mi_nats, r.mi_lower_bound, r.probe.train_accuracy,
                      r.probe.test_accuracy});
    }
  } else if (s.kind == "patch") {
    cmc::PatchSweepSpec spec{s.image_size, s.patch, s.n_classes, seed};
    std::vector<std::size_t> ds;
    for (double d : s.grid) {
      if (!(d >= 1.0) || d != std::floor(d)) throw cmc::ConfigError("patch grid must hold positive integers");
      ds.push_back(static_cast<std::size_t>(d));
    }
    for (const auto& r : cmc::experiment_patch_sweep(spec, ds, setup)) {
      rows.push_back({seed, std::to_string(r.distance), NAN, r.mi_lower_bound, r.probe.train_accuracy,
                      r.probe.test_accuracy});
    }
  } else {
    throw cmc::ConfigError("sweep.kind must be views, negatives, sharing or patch, got '" + s.kind + "'");
  }
  return rows;
}

int cmd_sweep(const CommonOptions& o, const std::optional<std::string>& kind) {
  cmc::ExperimentConfig cfg = resolve_config(o);
  if (kind) cfg.sweep.kind = *kind;
  if (cfg.sweep.seeds.empty()) throw cmc::ConfigError("sweep.seeds is empty");
  if (cfg.sweep.kind != "views" && cfg.sweep.grid.empty()) throw cmc::ConfigError("sweep.grid is empty");
  std::size_t workers = std::min(worker_count(), cfg.sweep.seeds.size());
  ensure_dir(cfg.output_dir);

  // Each seed is an independent run; results are collected per seed and
  // written in seed order, so the worker count never changes the output.
  std::vector<std::vector<SweepRow>> results(cfg.sweep.seeds.size());
  std::vector<std::exception_ptr> errors(cfg.sweep.seeds.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < cfg.sweep.seeds.size(); i = next++) {
      try {
        results[i] = sweep_one(cfg, cfg.sweep.seeds[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::string csv = "kind,seed,point,mi_nats,mi_lb,train_accuracy,test_accuracy\n";
  for (const auto& rows : results) {
    for (const auto& r : rows) {
      csv += cfg.sweep.kind + "," + std::to_string(r.seed) + "," + r.point + "," + csv_value(r.mi_nats) + "," +
             csv_value(r.mi_lb) + "," + cmc::format_double(r.train_accuracy) + "," + cmc::format_double(r.test_accuracy) + "\n";
    }
  }
  write_text(fs::path(cfg.output_dir) / "sweep.csv", csv);
  std::cout << csv;
  return 0;
}

// ---------------------------------------------------------------- diag

int cmd_diag(const CommonOptions& o, const std::optional<std::string>& checkpoint, const std::optional<double>& rho,
             const std::optional<std::size_t>& n_eval) {
  cmc::ExperimentConfig cfg = resolve_config(o);
  if (checkpoint) cfg.diag.checkpoint = *checkpoint;
  if (rho) cfg.diag.rho = *rho;
  if (n_eval) cfg.diag.n_eval = *n_eval;
  std::string path = cfg.diag.checkpoint.empty() ? (fs::path(cfg.output_dir) / "model.cmck").string() : cfg.diag.checkpoint;
  cmc::Model model;
  try {
    model = cmc::load_model(path);
  } catch (const cmc::FormatError& e) {
    throw cmc::ConfigError(e.what());
  }
  if (!model.encoders.count("x") || !model.encoders.count("y")) {
    throw cmc::ConfigError("diag needs a checkpoint with encoders for views 'x' and 'y'");
  }
  cmc::SyntheticGaussianSpec spec{cfg.diag.dim, cfg.diag.rho, cfg.diag.n_eval, cfg.diag.data_seed};
  try {
    cmc::validate(spec);
  } catch (const cmc::ParameterError& e) {
    throw cmc::ConfigError(e.what());
  }
  if (model.encoders.at("x").net.layer_sizes.front() != spec.dim) {
    throw cmc::ConfigError("checkpoint encoder input size does not match diag.dim");
  }
  auto res = cmc::density_ratio_diagnostic(model.encoders.at("x"), model.encoders.at("y"), cmc::Temperature(cfg.train.tau),
                                           spec, cfg.diag.n_eval);
  cmc::Report report;
  report.set("rho", spec.rho);
  report.set("n_pairs", res.n_pairs);
  report.set("analytic_mi_nats", cmc::analytic_gaussian_mi(spec));
  report.set("pearson_r", res.pearson_r);
  ensure_dir(cfg.output_dir);
  write_text(fs::path(cfg.output_dir) / "diag.txt", report.str());
  std::cout << report.str();
  return 0;
}

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("config", o.config, "INI config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", o.overrides, "Override a config key: section.key=value");
  cmd->add_option("--data", o.data, "Dataset file (data.path)");
  cmd->add_option("--out", o.out, "Output directory (run.output_dir)");
  cmd->add_option("--seed", o.seed, "Seed (run.seed)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrastive multiview coding toolkit"};
  app.require_subcommand(1);

  GenOptions g;
  auto* gen = app.add_subcommand("gen", "Generate a dataset file");
  gen->add_flag("--gaussian", g.gaussian, "Correlated Gaussian views x, y");
  gen->add_flag("--shared", g.shared, "Shared-factor views v1..vM with labels");
  gen->add_option("--sharing", g.sharing, "Partial-sharing pair with this sharing level in [0, 1]");
  gen->add_option("--color", g.color, "Colour-split procedural images: lab or ydbdr");
  gen->add_flag("--patches", g.patches, "Patch pairs from procedural images");
  gen->add_option("--rho", g.rho, "Gaussian correlation");
  gen->add_option("--dim", g.dim, "Gaussian dimension");
  gen->add_option("--n", g.n, "Number of samples");
  gen->add_option("--seed", g.seed, "Seed");
  gen->add_option("--views", g.views, "Number of shared-factor views");
  gen->add_option("--noise", g.noise, "Per-view noise sigma");
  gen->add_option("--latent-dim", g.latent_dim, "Shared latent dimension");
  gen->add_option("--view-dim", g.view_dim, "Per-view dimension");
  gen->add_option("--classes", g.classes, "Number of classes");
  gen->add_option("--size", g.size, "Image size");
  gen->add_option("--patch", g.patch, "Patch size");
  gen->add_option("--distance", g.distance, "Patch offset");
  gen->add_option("--out", g.out, "Output file");

  CommonOptions train_o;
  std::optional<std::string> mode;
  std::optional<std::size_t> epochs;
  auto* train = app.add_subcommand("train", "Train encoders; writes metrics.csv, model.cmck, bank.cmcb");
  add_common(train, train_o);
  train->add_option("--mode", mode, "View graph: full or core:<view>");
  train->add_option("--epochs", epochs, "Epochs (train.epochs)");

  CommonOptions probe_o;
  std::optional<std::string> probe_ckpt, probe_view;
  bool raw = false;
  auto* probe = app.add_subcommand("probe", "Linear probe on frozen embeddings or raw features");
  add_common(probe, probe_o);
  probe->add_option("--checkpoint", probe_ckpt, "Encoder checkpoint");
  probe->add_option("--view", probe_view, "View to probe");
  probe->add_flag("--raw", raw, "Probe the raw view instead of embeddings");

  CommonOptions sweep_o;
  std::optional<std::string> kind;
  auto* sweep = app.add_subcommand("sweep", "Run an experiment grid over seeds; writes sweep.csv");
  add_common(sweep, sweep_o);
  sweep->add_option("--kind", kind, "views, negatives, sharing or patch");

  CommonOptions diag_o;
  std::optional<std::string> diag_ckpt;
  std::optional<double> rho;
  std::optional<std::size_t> n_eval;
  auto* diag = app.add_subcommand("diag", "Density-ratio diagnostic of a Gaussian-view checkpoint");
  add_common(diag, diag_o);
  diag->add_option("--checkpoint", diag_ckpt, "Encoder checkpoint with views x and y");
  diag->add_option("--rho", rho, "Correlation of the evaluation data");
  diag->add_option("--n-eval", n_eval, "Held-out joint pairs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) return cmd_gen(g);
    if (*train) return cmd_train(train_o, mode, epochs);
    if (*probe) return cmd_probe(probe_o, probe_ckpt, probe_view, raw);
    if (*sweep) return cmd_sweep(sweep_o, kind);
    if (*diag) return cmd_diag(diag_o, diag_ckpt, rho, n_eval);
  } catch (const cmc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
