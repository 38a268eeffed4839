// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration as flat INI sections with typed keys.
//
//   [run]    seed, output_dir
//   [data]   path
//   [model]  hidden (comma list), embed_dim, chunks
//   [graph]  mode ("full" or "core:<view>")
//   [train]  epochs, batch_size, lr, schedule (cosine|step), milestones,
//            lr_factor, sgd_momentum, weight_decay, tau, negatives,
//            loss (softmax|nce|subpatch), bank_momentum, in_batch_negatives,
//            track_bank_alignment
//   [probe]  view, checkpoint, test_fraction, max_iters, grad_tol, l2
//   [sweep]  kind (views|negatives|sharing|patch), grid, seeds,
//            train_samples, probe_samples, n_views, latent_dim, view_dim,
//            noise_sigma, n_classes, semantic_dim, nuisance_dim,
//            nuisance_scale, image_size, patch
//   [diag]   rho, dim, n_eval, data_seed, checkpoint
//
// Every key is optional; unknown sections or keys are rejected. Writing a
// config and reading it back gives an identical config.
#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "cmc/error.hpp"
#include "cmc/io.hpp"
#include "cmc/probe.hpp"
#include "cmc/train.hpp"

namespace cmc {

struct ModelSection {
  std::vector<std::size_t> hidden{64};
  std::size_t embed_dim = 64;
  std::size_t chunks = 0;
};

struct ProbeSection {
  std::string view;
  std::string checkpoint;
  double test_fraction = 0.5;
  ProbeConfig cfg;
};

struct SweepSection {
  std::string kind = "views";
  std::vector<double> grid;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::size_t train_samples = 400;
  std::size_t probe_samples = 4000;
  std::size_t n_views = 4;
  std::size_t latent_dim = 2;
  std::size_t view_dim = 64;
  double noise_sigma = 2.0;
  int n_classes = 4;
  std::size_t semantic_dim = 2;
  std::size_t nuisance_dim = 8;
  double nuisance_scale = 1.0;
  std::size_t image_size = 64;
  std::size_t patch = 8;
};

struct DiagSection {
  double rho = 0.9;
  std::size_t dim = 1;
  std::size_t n_eval = 5000;
  std::uint64_t data_seed = 1000;
  std::string checkpoint;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  std::string data_path;
  ModelSection model;
  std::string graph_mode = "full";
  TrainConfig train;
  ProbeSection probe;
  SweepSection sweep;
  DiagSection diag;
};

namespace config_detail {

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  std::istringstream in(text);
  T v{};
  in >> v;
  if (in.fail() || !(in >> std::ws).eof()) throw ConfigError("key '" + key + "': cannot parse '" + text + "'");
  if constexpr (std::is_unsigned_v<T>) {
    if (text.find('-') != std::string::npos) throw ConfigError("key '" + key + "': must be non-negative");
  }
  return v;
}

inline double parse_double(const std::string& key, const std::string& text) {
  char* end = nullptr;
  double v = std::strtod(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size()) throw ConfigError("key '" + key + "': cannot parse '" + text + "'");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("key '" + key + "': expected true or false, got '" + text + "'");
}

inline std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    auto b = item.find_first_not_of(" \t");
    auto e = item.find_last_not_of(" \t");
    out.push_back(b == std::string::npos ? "" : item.substr(b, e - b + 1));
  }
  return out;
}

template <class T, class F>
std::string join(const std::vector<T>& v, F fmt) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + fmt(v[i]);
  return out;
}

struct Key {
  std::string section;
  std::string name;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::string full() const { return section + "." + name; }
};

#define CMC_SIZE_KEY(sec, nm, expr)                                                                      \
  Key {                                                                                                  \
    sec, nm, [](const ExperimentConfig& c) { return std::to_string(c.expr); },                           \
        [](ExperimentConfig& c, const std::string& t) { c.expr = parse_number<decltype(c.expr)>(sec "." nm, t); } \
  }
#define CMC_DOUBLE_KEY(sec, nm, expr)                                                              \
  Key {                                                                                            \
    sec, nm, [](const ExperimentConfig& c) { return format_double(c.expr); },                      \
        [](ExperimentConfig& c, const std::string& t) { c.expr = parse_double(sec "." nm, t); }    \
  }
#define CMC_STRING_KEY(sec, nm, expr) \
  Key { sec, nm, [](const ExperimentConfig& c) { return c.expr; }, [](ExperimentConfig& c, const std::string& t) { c.expr = t; } }
#define CMC_BOOL_KEY(sec, nm, expr)                                                              \
  Key {                                                                                          \
    sec, nm, [](const ExperimentConfig& c) { return std::string(c.expr ? "true" : "false"); },   \
        [](ExperimentConfig& c, const std::string& t) { c.expr = parse_bool(sec "." nm, t); }    \
  }

inline const std::vector<Key>& keys() {
  static const std::vector<Key> k = {
      CMC_SIZE_KEY("run", "seed", seed),
      CMC_STRING_KEY("run", "output_dir", output_dir),
      CMC_STRING_KEY("data", "path", data_path),
      Key{"model", "hidden",
          [](const ExperimentConfig& c) { return join(c.model.hidden, [](std::size_t v) { return std::to_string(v); }); },
          [](ExperimentConfig& c, const std::string& t) {
            c.model.hidden.clear();
            if (t.empty()) return;
            for (const auto& s : split_list(t)) c.model.hidden.push_back(parse_number<std::size_t>("model.hidden", s));
          }},
      CMC_SIZE_KEY("model", "embed_dim", model.embed_dim),
      CMC_SIZE_KEY("model", "chunks", model.chunks),
      CMC_STRING_KEY("graph", "mode", graph_mode),
      CMC_SIZE_KEY("train", "epochs", train.epochs),
      CMC_SIZE_KEY("train", "batch_size", train.batch_size),
      CMC_DOUBLE_KEY("train", "lr", train.lr),
      Key{"train", "schedule",
          [](const ExperimentConfig& c) {
            return std::string(c.train.schedule.kind == ScheduleKind::cosine ? "cosine" : "step");
          },
          [](ExperimentConfig& c, const std::string& t) {
            if (t == "cosine") {
              c.train.schedule.kind = ScheduleKind::cosine;
            } else if (t == "step") {
              c.train.schedule.kind = ScheduleKind::step;
            } else {
              throw ConfigError("train.schedule: expected cosine or step, got '" + t + "'");
            }
          }},
      Key{"train", "milestones",
          [](const ExperimentConfig& c) {
            return join(c.train.schedule.milestones, [](std::size_t v) { return std::to_string(v); });
          },
          [](ExperimentConfig& c, const std::string& t) {
            c.train.schedule.milestones.clear();
            if (t.empty()) return;
            for (const auto& s : split_list(t))
              c.train.schedule.milestones.push_back(parse_number<std::size_t>("train.milestones", s));
          }},
      CMC_DOUBLE_KEY("train", "lr_factor", train.schedule.factor),
      CMC_DOUBLE_KEY("train", "sgd_momentum", train.sgd_momentum),
      CMC_DOUBLE_KEY("train", "weight_decay", train.weight_decay),
      CMC_DOUBLE_KEY("train", "tau", train.tau),
      CMC_SIZE_KEY("train", "negatives", train.negatives),
      Key{"train", "loss", [](const ExperimentConfig& c) { return to_string(c.train.loss_kind); },
          [](ExperimentConfig& c, const std::string& t) {
            if (t == "softmax") {
              c.train.loss_kind = LossKind::softmax;
            } else if (t == "nce") {
              c.train.loss_kind = LossKind::nce;
            } else if (t == "subpatch") {
              c.train.loss_kind = LossKind::subpatch;
            } else {
              throw ConfigError("train.loss: expected softmax, nce or subpatch, got '" + t + "'");
            }
          }},
      CMC_DOUBLE_KEY("train", "bank_momentum", train.bank_momentum),
      CMC_BOOL_KEY("train", "in_batch_negatives", train.in_batch_negatives),
      CMC_BOOL_KEY("train", "track_bank_alignment", train.track_bank_alignment),
      CMC_STRING_KEY("probe", "view", probe.view),
      CMC_STRING_KEY("probe", "checkpoint", probe.checkpoint),
      CMC_DOUBLE_KEY("probe", "test_fraction", probe.test_fraction),
      CMC_SIZE_KEY("probe", "max_iters", probe.cfg.max_iters),
      CMC_DOUBLE_KEY("probe", "grad_tol", probe.cfg.grad_tol),
      CMC_DOUBLE_KEY("probe", "l2", probe.cfg.l2),
      CMC_STRING_KEY("sweep", "kind", sweep.kind),
      Key{"sweep", "grid", [](const ExperimentConfig& c) { return join(c.sweep.grid, format_double); },
          [](ExperimentConfig& c, const std::string& t) {
            c.sweep.grid.clear();
            if (t.empty()) return;
            for (const auto& s : split_list(t)) c.sweep.grid.push_back(parse_double("sweep.grid", s));
          }},
      Key{"sweep", "seeds",
          [](const ExperimentConfig& c) { return join(c.sweep.seeds, [](std::uint64_t v) { return std::to_string(v); }); },
          [](ExperimentConfig& c, const std::string& t) {
            c.sweep.seeds.clear();
            if (t.empty()) return;
            for (const auto& s : split_list(t)) c.sweep.seeds.push_back(parse_number<std::uint64_t>("sweep.seeds", s));
          }},
      CMC_SIZE_KEY("sweep", "train_samples", sweep.train_samples),
      CMC_SIZE_KEY("sweep", "probe_samples", sweep.probe_samples),
      CMC_SIZE_KEY("sweep", "n_views", sweep.n_views),
      CMC_SIZE_KEY("sweep", "latent_dim", sweep.latent_dim),
      CMC_SIZE_KEY("sweep", "view_dim", sweep.view_dim),
      CMC_DOUBLE_KEY("sweep", "noise_sigma", sweep.noise_sigma),
      Key{"sweep", "n_classes", [](const ExperimentConfig& c) { return std::to_string(c.sweep.n_classes); },
          [](ExperimentConfig& c, const std::string& t) { c.sweep.n_classes = parse_number<int>("sweep.n_classes", t); }},
      CMC_SIZE_KEY("sweep", "semantic_dim", sweep.semantic_dim),
      CMC_SIZE_KEY("sweep", "nuisance_dim", sweep.nuisance_dim),
      CMC_DOUBLE_KEY("sweep", "nuisance_scale", sweep.nuisance_scale),
      CMC_SIZE_KEY("sweep", "image_size", sweep.image_size),
      CMC_SIZE_KEY("sweep", "patch", sweep.patch),
      CMC_DOUBLE_KEY("diag", "rho", diag.rho),
      CMC_SIZE_KEY("diag", "dim", diag.dim),
      CMC_SIZE_KEY("diag", "n_eval", diag.n_eval),
      CMC_SIZE_KEY("diag", "data_seed", diag.data_seed),
      CMC_STRING_KEY("diag", "checkpoint", diag.checkpoint),
  };
  return k;
}

#undef CMC_SIZE_KEY
#undef CMC_DOUBLE_KEY
#undef CMC_STRING_KEY
#undef CMC_BOOL_KEY

inline const Key& find_key(const std::string& section, const std::string& name) {
  for (const auto& k : keys()) {
    if (k.section == section && k.name == name) return k;
  }
  throw ConfigError("unknown config key '" + section + "." + name + "'");
}

}  // namespace config_detail

/// Sets one "section.key" to a textual value, as a command-line override.
inline void apply_override(ExperimentConfig& cfg, const std::string& dotted, const std::string& value) {
  auto dot = dotted.find('.');
  if (dot == std::string::npos) throw ConfigError("override '" + dotted + "' must be section.key");
  config_detail::find_key(dotted.substr(0, dot), dotted.substr(dot + 1)).set(cfg, value);
}

/// Applies every key of an INI document on top of `cfg`.
inline void apply_ini(ExperimentConfig& cfg, const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.message() + " at line " + std::to_string(e.line()));
  }
  for (const auto& [section, body] : tree) {
    if (!body.data().empty()) throw ConfigError("config: key '" + section + "' must sit inside a section");
    for (const auto& [name, value] : body) config_detail::find_key(section, name).set(cfg, value.data());
  }
}

inline ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  apply_ini(cfg, text);
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::string text;
  try {
    text = io::read_file(path);
  } catch (const FormatError& e) {
    throw ConfigError(e.what());
  }
  return parse_config(text);
}

/// Every key, grouped by section in a fixed order.
inline std::string to_ini(const ExperimentConfig& cfg) {
  std::string out, section;
  for (const auto& k : config_detail::keys()) {
    if (k.section != section) {
      out += (section.empty() ? "" : "\n") + std::string("[") + k.section + "]\n";
      section = k.section;
    }
    out += k.name + " = " + k.get(cfg) + "\n";
  }
  return out;
}

inline bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) { return to_ini(a) == to_ini(b); }

}  // namespace cmc
