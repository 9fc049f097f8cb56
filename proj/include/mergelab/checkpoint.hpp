#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "mergelab/common.hpp"
#include "mergelab/recmodel.hpp"

namespace mergelab::ckpt {

// Checkpoint container: a line-oriented text manifest (format version, role,
// domain, seed, per-layer shapes) followed by little-endian float32 arrays in
// manifest order. Round-trips bit-exactly.
//
//   mergelab-checkpoint v1
//   role finetuned
//   domain d0
//   seed 42
//   layers 3
//   layer 0 32 64
//   ...
//   data
//   <weights row-major, then bias, per layer, float32 LE>

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

inline void write_f32(std::ostream& out, double v) {
  float f = static_cast<float>(v);
  out.write(reinterpret_cast<const char*>(&f), 4);
}

inline double read_f32(std::istream& in) {
  float f = 0.0f;
  in.read(reinterpret_cast<char*>(&f), 4);
  if (!in) throw ParseError("checkpoint: truncated data section");
  return static_cast<double>(f);
}

inline void save(const rec::ParamSet& p, std::ostream& out) {
  out << "mergelab-checkpoint v1\n";
  out << "role " << rec::role_name(p.role) << "\n";
  out << "domain " << (p.domain_id.empty() ? "-" : p.domain_id) << "\n";
  out << "seed " << p.seed << "\n";
  out << "layers " << p.layers.size() << "\n";
  for (std::size_t l = 0; l < p.layers.size(); ++l)
    out << "layer " << l << " " << p.layers[l].weight.rows << " " << p.layers[l].weight.cols
        << "\n";
  out << "data\n";
  for (const auto& layer : p.layers) {
    for (double w : layer.weight.data) write_f32(out, w);
    for (double b : layer.bias) write_f32(out, b);
  }
}

inline void save_file(const rec::ParamSet& p, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write checkpoint: " + path);
  save(p, out);
}

inline rec::ParamSet load(std::istream& in) {
  std::string line;
  auto next_line = [&](const char* what) {
    if (!std::getline(in, line)) throw ParseError(std::string("checkpoint: missing ") + what);
    return line;
  };
  if (next_line("magic") != "mergelab-checkpoint v1")
    throw ParseError("checkpoint: bad magic line '" + line + "'");

  rec::ParamSet p;
  std::size_t num_layers = 0;
  auto field = [&](const char* key) {
    next_line(key);
    std::istringstream ss(line);
    std::string k;
    ss >> k;
    if (k != key) throw ParseError(std::string("checkpoint: expected '") + key + "', got '" + k + "'");
    std::string rest;
    std::getline(ss, rest);
    return rest.empty() ? rest : rest.substr(1);
  };
  p.role = rec::role_from_name(field("role"));
  std::string dom = field("domain");
  p.domain_id = (dom == "-") ? "" : dom;
  p.seed = std::stoull(field("seed"));
  num_layers = std::stoull(field("layers"));

  std::vector<std::pair<std::size_t, std::size_t>> shapes;
  for (std::size_t l = 0; l < num_layers; ++l) {
    next_line("layer shape");
    std::istringstream ss(line);
    std::string k;
    std::size_t idx, rows, cols;
    ss >> k >> idx >> rows >> cols;
    if (!ss || k != "layer" || idx != l)
      throw ParseError("checkpoint: bad layer line '" + line + "'");
    shapes.push_back({rows, cols});
  }
  if (next_line("data marker") != "data") throw ParseError("checkpoint: missing data marker");

  for (auto [rows, cols] : shapes) {
    rec::Layer layer;
    layer.weight = Matrix(rows, cols);
    for (auto& w : layer.weight.data) w = read_f32(in);
    layer.bias = Vec(rows, 0.0);
    for (auto& b : layer.bias) b = read_f32(in);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

inline rec::ParamSet load_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint: " + path);
  try {
    return load(in);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

}  // namespace mergelab::ckpt
