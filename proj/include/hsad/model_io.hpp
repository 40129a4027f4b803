#pragma once

// HSM1 detector model files. Parameters are stored as float32; a model read
// back from disk is therefore the float-rounded version of the trained one.

#include <istream>
#include <ostream>
#include <string>

#include "hsad/binary_io.hpp"
#include "hsad/detector.hpp"

namespace hsad {

namespace detail {

inline void write_params(std::ostream& os, const double* data, Eigen::Index n) {
  io::write_f32(os, std::span<const double>(data, static_cast<std::size_t>(n)));
}

inline void read_params(io::Reader& in, double* data, Eigen::Index n, const std::string& ctx) {
  const auto values = in.f32(static_cast<std::size_t>(n), ctx);
  std::copy(values.begin(), values.end(), data);
}

}  // namespace detail

inline std::size_t write_model(const DetectorModel& m, std::ostream& os) {
  const Json header{{"input_dim", m.input_dim},       {"hidden_sizes", m.hidden_sizes},
                    {"dropout_rate", m.dropout_rate}, {"bn_eps", m.bn_eps},
                    {"bn_momentum", m.bn_momentum},   {"seed", m.seed},
                    {"train_config", m.train_config}};
  const auto start = os.tellp();
  io::write_preamble(os, "HSM1", header);
  for (const auto& l : m.layers) {
    detail::write_params(os, l.weight.data(), l.weight.size());
    detail::write_params(os, l.bias.data(), l.bias.size());
    detail::write_params(os, l.gamma.data(), l.gamma.size());
    detail::write_params(os, l.beta.data(), l.beta.size());
    detail::write_params(os, l.running_mean.data(), l.running_mean.size());
    detail::write_params(os, l.running_var.data(), l.running_var.size());
  }
  detail::write_params(os, m.head_weight.data(), m.head_weight.size());
  detail::write_params(os, &m.head_bias, 1);
  if (!os) throw DataError("write failed");
  return static_cast<std::size_t>(os.tellp() - start);
}

inline DetectorModel read_model(std::istream& is) {
  io::Reader in(is);
  const Json h = in.preamble("HSM1");
  DetectorModel m;
  m.input_dim = io::field<int>(h, "input_dim", "header");
  m.hidden_sizes = io::field<std::vector<int>>(h, "hidden_sizes", "header");
  m.dropout_rate = io::field<double>(h, "dropout_rate", "header");
  m.bn_eps = io::field<double>(h, "bn_eps", "header");
  m.bn_momentum = io::field<double>(h, "bn_momentum", "header");
  m.seed = io::field<std::uint64_t>(h, "seed", "header");
  if (h.contains("train_config")) m.train_config = h.at("train_config");
  if (m.input_dim < 1) throw FormatError("input_dim must be positive");
  try {
    validate_hidden_sizes(m.hidden_sizes, true);
  } catch (const ConfigError& e) {
    throw FormatError(e.what());
  }
  if (!(m.bn_eps > 0.0)) throw FormatError("bn_eps must be positive");

  int fan_in = m.input_dim;
  for (std::size_t li = 0; li < m.hidden_sizes.size(); ++li) {
    const int width = m.hidden_sizes[li];
    const std::string ctx = "layer " + std::to_string(li);
    HiddenLayer l;
    l.weight.resize(width, fan_in);
    l.bias.resize(width);
    l.gamma.resize(width);
    l.beta.resize(width);
    l.running_mean.resize(width);
    l.running_var.resize(width);
    detail::read_params(in, l.weight.data(), l.weight.size(), ctx + " weight");
    detail::read_params(in, l.bias.data(), width, ctx + " bias");
    detail::read_params(in, l.gamma.data(), width, ctx + " gamma");
    detail::read_params(in, l.beta.data(), width, ctx + " beta");
    detail::read_params(in, l.running_mean.data(), width, ctx + " running mean");
    detail::read_params(in, l.running_var.data(), width, ctx + " running variance");
    if ((l.running_var.array() <= 0.0).any()) throw DataError(ctx + " has a non-positive running variance");
    m.layers.push_back(std::move(l));
    fan_in = width;
  }
  m.head_weight.resize(fan_in);
  detail::read_params(in, m.head_weight.data(), fan_in, "head weight");
  detail::read_params(in, &m.head_bias, 1, "head bias");
  if (!in.at_eof()) throw CorruptionError("trailing bytes after model parameters");
  return m;
}

}  // namespace hsad
