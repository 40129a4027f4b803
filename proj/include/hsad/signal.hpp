#pragma once

// Cross-layer temporal signal construction. Row n of the signal matrix is the
// n-th sample along network depth: ascending layers, and within each layer the
// selected nodes in computation order ah -> rh -> mh -> h. Column i is the
// temporal signal of hidden dimension i.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hsad/error.hpp"
#include "hsad/trace.hpp"

namespace hsad {

struct LayerSelection {
  enum class Kind { all, explicit_list, random };

  Kind kind = Kind::all;
  std::vector<int> layers;  // explicit_list: 1-based, strictly increasing
  int sample_size = 0;      // random
  std::uint64_t seed = 0;   // random

  static LayerSelection all() { return {}; }
  static LayerSelection list(std::vector<int> layers) {
    return {Kind::explicit_list, std::move(layers), 0, 0};
  }
  static LayerSelection random(int k, std::uint64_t seed) { return {Kind::random, {}, k, seed}; }

  std::string to_string() const {
    switch (kind) {
      case Kind::all:
        return "all";
      case Kind::random:
        return "random:" + std::to_string(sample_size) + ":seed=" + std::to_string(seed);
      case Kind::explicit_list: {
        std::string s;
        for (std::size_t i = 0; i < layers.size(); ++i) {
          if (i) s += ',';
          s += std::to_string(layers[i]);
        }
        return s;
      }
    }
    return {};
  }
};

namespace detail {

template <typename T>
T parse_number(std::string_view s, const char* what) {
  T value{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw ConfigError(std::string("cannot parse ") + what + " from \"" + std::string(s) + "\"");
  }
  return value;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    parts.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

}  // namespace detail

// Accepts "all", "random:K[:seed=S]", or a comma separated list of 1-based
// layer indices ("3" or "1,4,9").
inline LayerSelection parse_layer_selection(std::string_view text) {
  if (text == "all") return LayerSelection::all();
  if (text.starts_with("random:")) {
    const auto parts = detail::split(text.substr(7), ':');
    if (parts.empty() || parts.size() > 2) throw ConfigError("expected random:K[:seed=S]");
    const int k = detail::parse_number<int>(parts[0], "sample size");
    std::uint64_t seed = 0;
    if (parts.size() == 2) {
      if (!parts[1].starts_with("seed=")) throw ConfigError("expected seed=S in layer selection");
      seed = detail::parse_number<std::uint64_t>(parts[1].substr(5), "layer seed");
    }
    return LayerSelection::random(k, seed);
  }
  std::vector<int> layers;
  for (auto part : detail::split(text, ',')) layers.push_back(detail::parse_number<int>(part, "layer"));
  return LayerSelection::list(std::move(layers));
}

inline std::vector<Node> parse_node_list(std::string_view text) {
  if (text == "all") return {kAllNodes.begin(), kAllNodes.end()};
  std::vector<Node> nodes;
  for (auto part : detail::split(text, ',')) nodes.push_back(parse_node(part));
  return nodes;
}

struct SelectionSpec {
  LayerSelection layers;
  std::vector<Node> nodes{kAllNodes.begin(), kAllNodes.end()};
};

// k distinct layers from [1, l], uniform without replacement, sorted.
inline std::vector<int> resolve_random_layers(int num_layers, int k, std::uint64_t seed) {
  if (num_layers < 1) throw SelectionError("layer count must be positive");
  if (k < 1 || k > num_layers) {
    throw SelectionError("cannot sample " + std::to_string(k) + " of " + std::to_string(num_layers) +
                         " layers");
  }
  std::vector<int> all(static_cast<std::size_t>(num_layers));
  std::iota(all.begin(), all.end(), 1);
  std::vector<int> picked;
  picked.reserve(static_cast<std::size_t>(k));
  std::mt19937_64 rng(seed);
  std::sample(all.begin(), all.end(), std::back_inserter(picked), k, rng);
  std::sort(picked.begin(), picked.end());
  return picked;
}

inline std::vector<int> resolve_layers(const LayerSelection& sel, int num_layers) {
  switch (sel.kind) {
    case LayerSelection::Kind::all: {
      std::vector<int> all(static_cast<std::size_t>(num_layers));
      std::iota(all.begin(), all.end(), 1);
      return all;
    }
    case LayerSelection::Kind::random:
      return resolve_random_layers(num_layers, sel.sample_size, sel.seed);
    case LayerSelection::Kind::explicit_list:
      break;
  }
  if (sel.layers.empty()) throw SelectionError("empty layer list");
  for (std::size_t i = 0; i < sel.layers.size(); ++i) {
    const int layer = sel.layers[i];
    if (layer < 1 || layer > num_layers) {
      throw SelectionError("layer " + std::to_string(layer) + " outside [1, " +
                           std::to_string(num_layers) + "]");
    }
    if (i > 0 && layer <= sel.layers[i - 1]) throw SelectionError("layer list must be strictly increasing");
  }
  return sel.layers;
}

// Selected nodes in computation order; rejects empty and duplicate sets.
inline std::vector<Node> canonical_nodes(std::vector<Node> nodes) {
  if (nodes.empty()) throw SelectionError("empty node selection");
  std::sort(nodes.begin(), nodes.end());
  if (std::adjacent_find(nodes.begin(), nodes.end()) != nodes.end()) {
    throw SelectionError("duplicate node in selection");
  }
  return nodes;
}

class SignalMatrix {
 public:
  SignalMatrix(std::size_t rows, std::size_t cols, std::vector<int> layer_ids, std::vector<Node> node_tags)
      : rows_(rows), cols_(cols), data_(rows * cols), layer_ids_(std::move(layer_ids)),
        node_tags_(std::move(node_tags)) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  double& operator()(std::size_t n, std::size_t i) { return data_[n * cols_ + i]; }
  double operator()(std::size_t n, std::size_t i) const { return data_[n * cols_ + i]; }

  std::vector<double> column(std::size_t i) const {
    std::vector<double> out(rows_);
    for (std::size_t n = 0; n < rows_; ++n) out[n] = (*this)(n, i);
    return out;
  }

  std::span<const double> row(std::size_t n) const { return {data_.data() + n * cols_, cols_}; }

  const std::vector<int>& layer_ids() const { return layer_ids_; }
  const std::vector<Node>& node_tags() const { return node_tags_; }

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<double> data_;  // row-major [N][d]
  std::vector<int> layer_ids_;
  std::vector<Node> node_tags_;
};

inline SignalMatrix build_signal_matrix(const TraceRecord& record, const TraceHeader& header,
                                        const SelectionSpec& select) {
  if (record.values.size() != header.values_per_record()) {
    throw ShapeError("record " + record.id + " does not match the header shape");
  }
  const std::vector<int> layers = resolve_layers(select.layers, header.num_layers);
  const std::vector<Node> nodes = canonical_nodes(select.nodes);
  std::vector<int> node_pos;
  for (Node n : nodes) {
    const int pos = header.node_index(n);
    if (pos < 0) throw SelectionError("node " + std::string(to_string(n)) + " is absent from the capture");
    node_pos.push_back(pos);
  }

  const auto dim = static_cast<std::size_t>(header.hidden_dim);
  SignalMatrix t(layers.size() * nodes.size(), dim, layers, nodes);
  std::size_t row = 0;
  for (int layer : layers) {
    for (int pos : node_pos) {
      for (std::size_t i = 0; i < dim; ++i) {
        t(row, i) = record.at(header, layer - 1, pos, static_cast<int>(i));
      }
      ++row;
    }
  }
  return t;
}

}  // namespace hsad
