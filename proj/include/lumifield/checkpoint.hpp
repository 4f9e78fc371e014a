#pragma once

// Self-describing binary container: versioned magic, text key/value header,
// then named tensors as little-endian IEEE-754 (column-major payload).

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lumifield/field.hpp"

namespace lumifield {

inline constexpr char kCheckpointMagic[8] = {'L', 'U', 'M', 'I', 'F', 'L', 'D', '1'};

struct Checkpoint {
  std::map<std::string, std::string> header;
  std::vector<std::pair<std::string, Mat<double>>> tensors;

  bool has(const std::string& name) const {
    for (const auto& [n, m] : tensors)
      if (n == name) return true;
    return false;
  }

  const Mat<double>& tensor(const std::string& name) const {
    for (const auto& [n, m] : tensors)
      if (n == name) return m;
    throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
  }

  const std::string& field(const std::string& key) const {
    auto it = header.find(key);
    if (it == header.end()) throw std::runtime_error("checkpoint: missing header key '" + key + "'");
    return it->second;
  }
};

class CheckpointWriter {
 public:
  void set(const std::string& key, const std::string& value) { header_[key] = value; }
  void set(const std::string& key, long long value) { header_[key] = std::to_string(value); }

  void add(const std::string& name, const Mat<float>& m) { add_payload(name, 1, m.rows(), m.cols(), m.data()); }
  void add(const std::string& name, const Mat<double>& m) { add_payload(name, 2, m.rows(), m.cols(), m.data()); }

  void write(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    f.write(kCheckpointMagic, sizeof(kCheckpointMagic));

    std::string header_text;
    for (const auto& [k, v] : header_) header_text += k + "=" + v + "\n";
    write_u32(f, static_cast<std::uint32_t>(header_text.size()));
    f.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));

    write_u32(f, static_cast<std::uint32_t>(tensors_.size()));
    for (const auto& t : tensors_) {
      write_u32(f, static_cast<std::uint32_t>(t.name.size()));
      f.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
      f.put(static_cast<char>(t.dtype));
      write_u64(f, static_cast<std::uint64_t>(t.rows));
      write_u64(f, static_cast<std::uint64_t>(t.cols));
      f.write(reinterpret_cast<const char*>(t.bytes.data()),
              static_cast<std::streamsize>(t.bytes.size()));
    }
    if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
  }

 private:
  struct NamedTensor {
    std::string name;
    int dtype;  // 1 = f32, 2 = f64
    Eigen::Index rows, cols;
    std::vector<std::uint8_t> bytes;
  };

  static void write_u32(std::ofstream& f, std::uint32_t v) {
    std::uint8_t b[4] = {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8),
                         static_cast<std::uint8_t>(v >> 16), static_cast<std::uint8_t>(v >> 24)};
    f.write(reinterpret_cast<const char*>(b), 4);
  }
  static void write_u64(std::ofstream& f, std::uint64_t v) {
    std::uint8_t b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
    f.write(reinterpret_cast<const char*>(b), 8);
  }

  template <typename T>
  void add_payload(const std::string& name, int dtype, Eigen::Index rows, Eigen::Index cols,
                   const T* data) {
    NamedTensor t;
    t.name = name;
    t.dtype = dtype;
    t.rows = rows;
    t.cols = cols;
    t.bytes.resize(static_cast<std::size_t>(rows) * cols * sizeof(T));
    std::memcpy(t.bytes.data(), data, t.bytes.size());
    tensors_.push_back(std::move(t));
  }

  std::map<std::string, std::string> header_;
  std::vector<NamedTensor> tensors_;
};

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);

  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw std::runtime_error("checkpoint: " + path + " has an unknown format (bad magic)");

  auto read_u32 = [&f]() {
    std::uint8_t b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  };
  auto read_u64 = [&f]() {
    std::uint8_t b[8];
    f.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  };

  Checkpoint ckpt;
  const std::uint32_t header_len = read_u32();
  std::string header_text(header_len, '\0');
  f.read(header_text.data(), header_len);
  std::size_t pos = 0;
  while (pos < header_text.size()) {
    const std::size_t eol = header_text.find('\n', pos);
    const std::string line = header_text.substr(pos, eol - pos);
    pos = eol == std::string::npos ? header_text.size() : eol + 1;
    const std::size_t eq = line.find('=');
    if (eq != std::string::npos) ckpt.header[line.substr(0, eq)] = line.substr(eq + 1);
  }

  const std::uint32_t count = read_u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = read_u32();
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    const int dtype = f.get();
    const std::uint64_t rows = read_u64();
    const std::uint64_t cols = read_u64();
    if (!f) throw std::runtime_error("checkpoint: truncated tensor table in " + path);
    Mat<double> m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    const std::size_t n = static_cast<std::size_t>(rows) * cols;
    if (dtype == 1) {
      std::vector<float> tmp(n);
      f.read(reinterpret_cast<char*>(tmp.data()), static_cast<std::streamsize>(n * sizeof(float)));
      for (std::size_t j = 0; j < n; ++j) m.data()[j] = tmp[j];
    } else if (dtype == 2) {
      f.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(n * sizeof(double)));
    } else {
      throw std::runtime_error("checkpoint: unknown tensor dtype in " + path);
    }
    if (!f) throw std::runtime_error("checkpoint: truncated tensor payload in " + path);
    ckpt.tensors.emplace_back(std::move(name), std::move(m));
  }
  return ckpt;
}

// ---------------------------------------------------------------------------
// field model <-> checkpoint
// ---------------------------------------------------------------------------

template <typename S>
void add_field_model(CheckpointWriter& w, const FieldModel<S>& model) {
  const FieldConfig& c = model.config;
  w.set("kind", "field_model");
  w.set("mode", to_string(c.mode));
  w.set("latent_channels", static_cast<long long>(c.latent_channels));
  w.set("heads", static_cast<long long>(c.heads));
  w.set("layers", static_cast<long long>(c.layers));
  w.set("hidden", static_cast<long long>(c.hidden));
  w.set("pe_frequencies", static_cast<long long>(c.pe_frequencies));
  w.set("output_activation", to_string(c.output_activation));
  w.set("standard_ffn_residual", c.standard_ffn_residual ? "1" : "0");
  model.for_each_parameter([&w](const std::string& name, const Mat<S>& m) {
    w.add("field." + name, m);
  });
}

template <typename S>
FieldModel<S> load_field_model(const Checkpoint& ckpt) {
  FieldConfig cfg;
  cfg.mode = parse_equivariance_mode(ckpt.field("mode"));
  cfg.latent_channels = std::stoi(ckpt.field("latent_channels"));
  cfg.heads = std::stoi(ckpt.field("heads"));
  cfg.layers = std::stoi(ckpt.field("layers"));
  cfg.hidden = std::stoi(ckpt.field("hidden"));
  cfg.pe_frequencies = std::stoi(ckpt.field("pe_frequencies"));
  cfg.output_activation = parse_output_activation(ckpt.field("output_activation"));
  cfg.standard_ffn_residual = ckpt.field("standard_ffn_residual") == "1";
  FieldModel<S> model = FieldModel<S>::random_init(cfg, 0);
  model.for_each_parameter([&ckpt](const std::string& name, Mat<S>& m) {
    const Mat<double>& src = ckpt.tensor("field." + name);
    if (src.rows() != m.rows() || src.cols() != m.cols())
      throw std::runtime_error("checkpoint: tensor 'field." + name + "' has unexpected shape");
    m = src.cast<S>();
  });
  return model;
}

}  // namespace lumifield
