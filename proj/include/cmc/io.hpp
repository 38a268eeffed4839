// SPDX-License-Identifier: Apache-2.0
//
// Binary containers for datasets, encoders and memory banks, PPM images,
// metrics CSV and key=value reports.
//
// All containers are little-endian. Strings are a u32 byte length followed
// by UTF-8 bytes.
//
//   dataset  "CMCV" u32 version u32 n_samples u32 n_views
//            per view: string name, u32 rank, u32 dims[rank]
//            u32 has_labels
//            per view, per sample: f64 values
//            if has_labels: i32 label per sample
//   encoders "CMCK" u32 version u32 chunks u32 n_encoders
//            per encoder: u8 local, string view, u32 n_sizes, u32 sizes[],
//            per layer: f64 weights [in x out] row-major, f64 biases [out]
//   bank     "CMCB" u32 version u32 n_views u32 n u32 dim f64 momentum
//            per view: string name, f64 rows [n x dim]
#pragma once

#include <bit>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cmc/error.hpp"
#include "cmc/memory_bank.hpp"
#include "cmc/train.hpp"
#include "cmc/views.hpp"

namespace cmc {

inline constexpr std::uint32_t kContainerVersion = 1;

namespace io {

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f64s(std::span<const double> v) {
    for (double x : v) f64(x);
  }
  void magic(const char (&m)[5]) { buf_.append(m, 4); }
  void str(const std::string& s) {
    u32(checked_u32(s.size()));
    buf_ += s;
  }

  static std::uint32_t checked_u32(std::size_t v) {
    if (v > 0xffffffffu) throw FormatError("value " + std::to_string(v) + " does not fit the u32 field");
    return static_cast<std::uint32_t>(v);
  }

  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string bytes, std::string what) : buf_(std::move(bytes)), what_(std::move(what)) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint32_t u32() {
    const char* p = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  std::uint64_t u64() {
    const char* p = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  void f64s(std::span<double> out) {
    for (double& x : out) x = f64();
  }
  std::string str() {
    std::uint32_t n = u32();
    return std::string(take(n), n);
  }
  void expect_magic(const char (&m)[5]) {
    std::string got(take(4), 4);
    if (got != std::string(m, 4)) throw FormatError(what_ + ": bad magic '" + got + "', expected '" + m + "'");
  }
  void expect_version() {
    std::uint32_t v = u32();
    if (v != kContainerVersion) throw FormatError(what_ + ": unsupported version " + std::to_string(v));
  }
  void expect_end() const {
    if (pos_ != buf_.size()) throw FormatError(what_ + ": " + std::to_string(buf_.size() - pos_) + " trailing bytes");
  }

 private:
  const char* take(std::size_t n) {
    if (buf_.size() - pos_ < n) throw FormatError(what_ + ": truncated at byte " + std::to_string(pos_));
    const char* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }

  std::string buf_;
  std::size_t pos_ = 0;
  std::string what_;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write to '" + path + "' failed");
}

}  // namespace io

inline std::string encode_dataset(const Dataset& ds) {
  io::Writer w;
  w.magic("CMCV");
  w.u32(kContainerVersion);
  w.u32(io::Writer::checked_u32(ds.size()));
  w.u32(io::Writer::checked_u32(ds.view_count()));
  for (const auto& spec : ds.views()) {
    w.str(spec.name);
    w.u32(io::Writer::checked_u32(spec.shape.size()));
    for (std::size_t d : spec.shape) w.u32(io::Writer::checked_u32(d));
  }
  w.u32(ds.has_labels() ? 1u : 0u);
  for (std::size_t v = 0; v < ds.view_count(); ++v) w.f64s(ds.view_data(v));
  for (int label : ds.labels()) w.i32(label);
  return w.bytes();
}

inline Dataset decode_dataset(std::string bytes) {
  io::Reader r(std::move(bytes), "dataset");
  r.expect_magic("CMCV");
  r.expect_version();
  std::size_t n = r.u32(), n_views = r.u32();
  std::vector<ViewSpec> specs;
  for (std::size_t v = 0; v < n_views; ++v) {
    ViewSpec spec;
    spec.name = r.str();
    std::size_t rank = r.u32();
    for (std::size_t d = 0; d < rank; ++d) spec.shape.push_back(r.u32());
    specs.push_back(std::move(spec));
  }
  std::uint32_t has_labels = r.u32();
  if (has_labels > 1) throw FormatError("dataset: has_labels must be 0 or 1");
  Dataset ds(std::move(specs), n);
  for (std::size_t v = 0; v < n_views; ++v)
    for (std::size_t i = 0; i < n; ++i) r.f64s(ds.row(v, i));
  if (has_labels) {
    std::vector<int> labels(n);
    for (auto& l : labels) l = r.i32();
    ds.set_labels(std::move(labels));
  }
  r.expect_end();
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::string& path) { io::write_file(path, encode_dataset(ds)); }
inline Dataset load_dataset(const std::string& path) { return decode_dataset(io::read_file(path)); }

namespace detail {

inline void write_encoder(io::Writer& w, const EncoderParams& e, bool local) {
  w.u8(local ? 1 : 0);
  w.str(e.view_name);
  const auto& sizes = e.net.layer_sizes;
  w.u32(io::Writer::checked_u32(sizes.size()));
  for (std::size_t s : sizes) w.u32(io::Writer::checked_u32(s));
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    w.f64s(e.net.weights[l].data());
    w.f64s(e.net.biases[l].data());
  }
}

}  // namespace detail

inline std::string encode_model(const Model& model) {
  io::Writer w;
  w.magic("CMCK");
  w.u32(kContainerVersion);
  w.u32(io::Writer::checked_u32(model.chunks));
  w.u32(io::Writer::checked_u32(model.encoders.size() + model.local_encoders.size()));
  for (const auto& [_, e] : model.encoders) detail::write_encoder(w, e, false);
  for (const auto& [_, e] : model.local_encoders) detail::write_encoder(w, e, true);
  return w.bytes();
}

inline Model decode_model(std::string bytes) {
  io::Reader r(std::move(bytes), "checkpoint");
  r.expect_magic("CMCK");
  r.expect_version();
  Model model;
  model.chunks = r.u32();
  std::size_t count = r.u32();
  for (std::size_t c = 0; c < count; ++c) {
    bool local = r.u8() != 0;
    EncoderParams e;
    e.view_name = r.str();
    std::size_t n_sizes = r.u32();
    if (n_sizes < 2) throw FormatError("checkpoint: encoder '" + e.view_name + "' needs at least two layer sizes");
    for (std::size_t i = 0; i < n_sizes; ++i) e.net.layer_sizes.push_back(r.u32());
    for (std::size_t l = 0; l + 1 < n_sizes; ++l) {
      std::size_t in = e.net.layer_sizes[l], out = e.net.layer_sizes[l + 1];
      std::vector<double> w(in * out), b(out);
      r.f64s(w);
      r.f64s(b);
      e.net.weights.emplace_back(Shape{in, out}, std::move(w));
      e.net.biases.emplace_back(Shape{out}, std::move(b));
    }
    auto& target = local ? model.local_encoders : model.encoders;
    std::string name = e.view_name;
    if (!target.emplace(name, std::move(e)).second) throw FormatError("checkpoint: duplicate encoder '" + name + "'");
  }
  r.expect_end();
  if (model.encoders.empty()) throw FormatError("checkpoint: no encoders");
  return model;
}

inline void save_model(const Model& model, const std::string& path) { io::write_file(path, encode_model(model)); }
inline Model load_model(const std::string& path) { return decode_model(io::read_file(path)); }

inline std::string encode_bank(const MemoryBank& bank) {
  io::Writer w;
  w.magic("CMCB");
  w.u32(kContainerVersion);
  w.u32(io::Writer::checked_u32(bank.views().size()));
  w.u32(io::Writer::checked_u32(bank.size()));
  w.u32(io::Writer::checked_u32(bank.dim()));
  w.f64(bank.momentum());
  for (const auto& v : bank.views()) {
    w.str(v);
    w.f64s(bank.rows(v));
  }
  return w.bytes();
}

inline MemoryBank decode_bank(std::string bytes) {
  io::Reader r(std::move(bytes), "bank");
  r.expect_magic("CMCB");
  r.expect_version();
  std::size_t n_views = r.u32(), n = r.u32(), dim = r.u32();
  double momentum = r.f64();
  std::vector<std::string> names;
  std::vector<std::vector<double>> rows;
  for (std::size_t v = 0; v < n_views; ++v) {
    names.push_back(r.str());
    rows.emplace_back(n * dim);
    r.f64s(rows.back());
  }
  r.expect_end();
  MemoryBank bank(names, n, dim, momentum, 0);
  for (std::size_t v = 0; v < n_views; ++v) {
    auto& dst = bank.mutable_rows(names[v]);
    std::copy(rows[v].begin(), rows[v].end(), dst.begin());
  }
  return bank;
}

inline void save_bank(const MemoryBank& bank, const std::string& path) { io::write_file(path, encode_bank(bank)); }
inline MemoryBank load_bank(const std::string& path) { return decode_bank(io::read_file(path)); }

/// Binary PPM (P6, maxval 255) as [h x w x 3] with values in [0, 1].
inline Tensor read_ppm(const std::string& path) {
  std::string bytes = io::read_file(path);
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size()) {
      if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
    std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) throw FormatError("ppm '" + path + "': truncated header");
    return bytes.substr(start, pos - start);
  };
  auto number = [&]() {
    std::string t = token();
    if (t.find_first_not_of("0123456789") != std::string::npos || t.size() > 9) {
      throw FormatError("ppm '" + path + "': bad header field '" + t + "'");
    }
    return static_cast<std::size_t>(std::stoul(t));
  };
  if (token() != "P6") throw FormatError("ppm '" + path + "': only binary P6 is supported");
  std::size_t w = number(), h = number(), maxval = number();
  if (maxval != 255) throw FormatError("ppm '" + path + "': maxval must be 255");
  if (w == 0 || h == 0) throw FormatError("ppm '" + path + "': empty image");
  ++pos;  // single whitespace after maxval
  if (bytes.size() < pos || bytes.size() - pos != w * h * 3) {
    throw FormatError("ppm '" + path + "': expected " + std::to_string(w * h * 3) + " pixel bytes");
  }
  std::vector<double> data(w * h * 3);
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<unsigned char>(bytes[pos + i]) / 255.0;
  return Tensor({h, w, 3}, std::move(data));
}

/// Rounds to the nearest of 256 levels.
inline void write_ppm(const Tensor& image, const std::string& path) {
  if (image.rank() != 3 || image.dim(2) != 3) throw DimensionError("write_ppm: image must be [h x w x 3]");
  std::string out = "P6\n" + std::to_string(image.dim(1)) + " " + std::to_string(image.dim(0)) + "\n255\n";
  for (double v : image.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw RangeError("write_ppm: values must lie in [0, 1]");
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
  }
  io::write_file(path, out);
}

/// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

/// One row per epoch and pair: epoch,pair,loss,mi_lb,lr.
inline std::string metrics_csv(const TrainingLog& log) {
  std::string out = "epoch,pair,loss,mi_lb,lr\n";
  for (const auto& e : log.epochs) {
    for (const auto& p : e.pairs) {
      out += std::to_string(e.epoch) + "," + p.pair + "," + format_double(p.loss) + "," + format_double(p.mi_lb) + "," +
             format_double(e.lr) + "\n";
    }
  }
  return out;
}

/// One row per epoch, one loss column per pair.
inline std::string pair_loss_csv(const TrainingLog& log) {
  std::string out = "epoch";
  if (!log.epochs.empty())
    for (const auto& p : log.epochs.front().pairs) out += "," + p.pair;
  out += "\n";
  for (const auto& e : log.epochs) {
    out += std::to_string(e.epoch);
    for (const auto& p : e.pairs) out += "," + format_double(p.loss);
    out += "\n";
  }
  return out;
}

/// Ordered key=value lines.
class Report {
 public:
  Report& set(const std::string& key, const std::string& value) {
    for (auto& [k, v] : entries_) {
      if (k == key) {
        v = value;
        return *this;
      }
    }
    entries_.emplace_back(key, value);
    return *this;
  }
  Report& set(const std::string& key, double value) { return set(key, format_double(value)); }
  Report& set(const std::string& key, std::size_t value) { return set(key, std::to_string(value)); }
  Report& set(const std::string& key, int value) { return set(key, std::to_string(value)); }

  std::string str() const {
    std::string out;
    for (const auto& [k, v] : entries_) out += k + "=" + v + "\n";
    return out;
  }

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

}  // namespace cmc
