#pragma once

// Trace data model, the HST1 container and a seeded synthetic trace generator.
//
// A trace record holds one generation's hidden-state capture at a single token
// position: for every layer, the vectors at the attention output (ah), the
// post-attention residual (rh), the MLP output (mh) and the layer output (h).
// Values are laid out layer-major, then node (header order), then dimension.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <numbers>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "hsad/binary_io.hpp"
#include "hsad/error.hpp"

namespace hsad {

enum class Node { ah = 0, rh = 1, mh = 2, h = 3 };

inline constexpr std::array<Node, 4> kAllNodes{Node::ah, Node::rh, Node::mh, Node::h};

// Position in the per-layer computation order ah -> rh -> mh -> h.
constexpr int node_rank(Node n) { return static_cast<int>(n); }

inline std::string_view to_string(Node n) {
  constexpr std::array<std::string_view, 4> names{"ah", "rh", "mh", "h"};
  return names[static_cast<std::size_t>(n)];
}

inline Node parse_node(std::string_view s) {
  for (Node n : kAllNodes) {
    if (to_string(n) == s) return n;
  }
  throw ConfigError("unknown node tag \"" + std::string(s) + "\"");
}

enum class ObsPoint { q_start, q_mid, q_end, a_start, a_mid, a_end };

inline constexpr std::array<ObsPoint, 6> kAllObsPoints{ObsPoint::q_start, ObsPoint::q_mid,
                                                       ObsPoint::q_end,   ObsPoint::a_start,
                                                       ObsPoint::a_mid,   ObsPoint::a_end};

inline std::string_view to_string(ObsPoint p) {
  constexpr std::array<std::string_view, 6> names{"Q_start", "Q_mid", "Q_end",
                                                  "A_start", "A_mid", "A_end"};
  return names[static_cast<std::size_t>(p)];
}

inline ObsPoint parse_obs_point(std::string_view s) {
  for (ObsPoint p : kAllObsPoints) {
    if (to_string(p) == s) return p;
  }
  throw ConfigError("unknown observation point \"" + std::string(s) + "\"");
}

inline bool is_answer_side(ObsPoint p) { return p >= ObsPoint::a_start; }

struct TraceHeader {
  std::string model_name;
  int num_layers = 0;
  int hidden_dim = 0;
  std::vector<Node> node_order;
  std::size_t record_count = 0;
  std::string dataset_name;

  std::size_t values_per_record() const {
    return static_cast<std::size_t>(num_layers) * node_order.size() *
           static_cast<std::size_t>(hidden_dim);
  }

  // Position of `n` within node_order, or -1 when the capture lacks it.
  int node_index(Node n) const {
    const auto it = std::find(node_order.begin(), node_order.end(), n);
    return it == node_order.end() ? -1 : static_cast<int>(it - node_order.begin());
  }

  void validate() const {
    if (num_layers < 1) throw FormatError("num_layers must be >= 1");
    if (hidden_dim < 1) throw FormatError("hidden_dim must be >= 1");
    if (node_order.empty() || node_order.size() > 4) throw FormatError("node_order must list 1-4 nodes");
    const std::set<Node> unique(node_order.begin(), node_order.end());
    if (unique.size() != node_order.size()) throw FormatError("node_order has duplicates");
  }

  bool operator==(const TraceHeader&) const = default;
};

struct TraceRecord {
  std::string id;
  ObsPoint observation_point = ObsPoint::a_end;
  std::vector<float> values;  // [layer][node][dim]
  std::optional<double> sim_score;
  std::optional<int> label;
  std::optional<std::string> question;
  std::optional<std::string> answer;

  // `layer` and `node_pos` are zero-based (node_pos indexes header node_order).
  float at(const TraceHeader& h, int layer, int node_pos, int dim) const {
    const auto nodes = h.node_order.size();
    return values[(static_cast<std::size_t>(layer) * nodes + static_cast<std::size_t>(node_pos)) *
                      static_cast<std::size_t>(h.hidden_dim) +
                  static_cast<std::size_t>(dim)];
  }

  bool operator==(const TraceRecord&) const = default;
};

struct TraceFile {
  TraceHeader header;
  std::vector<TraceRecord> records;
};

namespace detail {

inline Json header_json(const TraceHeader& h) {
  Json nodes = Json::array();
  for (Node n : h.node_order) nodes.push_back(std::string(to_string(n)));
  return Json{{"model", h.model_name}, {"layers", h.num_layers},
              {"dim", h.hidden_dim},   {"nodes", nodes},
              {"count", h.record_count}, {"dataset", h.dataset_name}};
}

inline Json record_meta_json(const TraceRecord& r) {
  Json meta{{"id", r.id},
            {"obs_point", std::string(to_string(r.observation_point))},
            {"sim", r.sim_score ? Json(*r.sim_score) : Json(nullptr)},
            {"label", r.label ? Json(*r.label) : Json(nullptr)}};
  if (r.question) meta["question"] = *r.question;
  if (r.answer) meta["answer"] = *r.answer;
  return meta;
}

inline std::optional<int> parse_label(const Json& j, const std::string& context) {
  if (!j.contains("label") || j.at("label").is_null()) return std::nullopt;
  const Json& v = j.at("label");
  if (!v.is_number_integer() || (v.get<int>() != 0 && v.get<int>() != 1)) {
    throw FormatError(context + " label must be 0, 1 or null");
  }
  return v.get<int>();
}

}  // namespace detail

inline void validate_record(const TraceHeader& h, const TraceRecord& r, std::size_t index) {
  const std::string ctx = "record " + std::to_string(index) + " (" + r.id + ")";
  if (r.values.size() != h.values_per_record()) {
    throw FormatError(ctx + " has " + std::to_string(r.values.size()) + " values, header implies " +
                      std::to_string(h.values_per_record()));
  }
  if (r.label && *r.label != 0 && *r.label != 1) throw FormatError(ctx + " label must be 0 or 1");
  if (r.sim_score && !std::isfinite(*r.sim_score)) throw DataError(ctx + " has a non-finite sim score");
  for (std::size_t i = 0; i < r.values.size(); ++i) {
    if (!std::isfinite(r.values[i])) {
      throw DataError(ctx + " has a non-finite value at index " + std::to_string(i));
    }
  }
}

// Serializes an HST1 file. Returns the number of bytes written.
inline std::size_t write_traces(const TraceHeader& header, const std::vector<TraceRecord>& records,
                                std::ostream& os) {
  header.validate();
  if (header.record_count != records.size()) {
    throw FormatError("header count " + std::to_string(header.record_count) + " but " +
                      std::to_string(records.size()) + " records supplied");
  }
  for (std::size_t i = 0; i < records.size(); ++i) validate_record(header, records[i], i);

  const auto start = os.tellp();
  io::write_preamble(os, "HST1", detail::header_json(header));
  for (const auto& r : records) {
    io::write_json_block(os, detail::record_meta_json(r));
    io::write_f32(os, std::span<const float>(r.values));
  }
  if (!os) throw DataError("write failed");
  return static_cast<std::size_t>(os.tellp() - start);
}

inline TraceFile read_traces(std::istream& is) {
  io::Reader in(is);
  const Json hj = in.preamble("HST1");
  TraceFile out;
  TraceHeader& h = out.header;
  h.model_name = io::field<std::string>(hj, "model", "header");
  h.num_layers = io::field<int>(hj, "layers", "header");
  h.hidden_dim = io::field<int>(hj, "dim", "header");
  for (const auto& s : io::field<std::vector<std::string>>(hj, "nodes", "header")) {
    try {
      h.node_order.push_back(parse_node(s));
    } catch (const ConfigError&) {
      throw FormatError("header lists unknown node \"" + s + "\"");
    }
  }
  h.record_count = io::field<std::size_t>(hj, "count", "header");
  h.dataset_name = io::field<std::string>(hj, "dataset", "header");
  h.validate();

  out.records.reserve(h.record_count);
  for (std::size_t i = 0; i < h.record_count; ++i) {
    const std::string ctx = "record " + std::to_string(i);
    const Json meta = in.json_block(ctx + " metadata");
    TraceRecord r;
    r.id = io::field<std::string>(meta, "id", ctx);
    try {
      r.observation_point = parse_obs_point(io::field<std::string>(meta, "obs_point", ctx));
    } catch (const ConfigError& e) {
      throw FormatError(ctx + ": " + e.what());
    }
    if (meta.contains("sim") && !meta.at("sim").is_null()) {
      if (!meta.at("sim").is_number()) throw FormatError(ctx + " sim must be a number or null");
      r.sim_score = meta.at("sim").get<double>();
    }
    r.label = detail::parse_label(meta, ctx);
    if (meta.contains("question")) r.question = io::field<std::string>(meta, "question", ctx);
    if (meta.contains("answer")) r.answer = io::field<std::string>(meta, "answer", ctx);
    r.values = in.f32(h.values_per_record(), ctx + " tensor");
    out.records.push_back(std::move(r));
  }
  if (!in.at_eof()) throw CorruptionError("trailing bytes after record " + std::to_string(h.record_count));
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic traces with a known spectral ground truth.

struct SyntheticSpec {
  int num_layers = 8;
  int hidden_dim = 64;
  std::size_t record_count = 2000;
  std::vector<int> anomaly_dims;
  int anomaly_bin = 5;
  double anomaly_amplitude = 10.0;
  double positive_fraction = 0.5;
  std::uint64_t seed = 0;
  // Each (record, dimension) column receives a constant drawn from
  // uniform[-offset_range, offset_range]. Zero disables offsets.
  double offset_range = 0.0;
  // One record per point per item; the anomaly is only injected at
  // answer-side points.
  std::vector<ObsPoint> obs_points{ObsPoint::a_end};

  int signal_length() const { return 4 * num_layers; }

  void validate() const {
    if (num_layers < 1 || hidden_dim < 1 || record_count < 1) {
      throw ConfigError("layers, dim and count must be positive");
    }
    if (anomaly_bin < 2 || 2 * anomaly_bin >= signal_length()) {
      throw ConfigError("anomaly bin must satisfy 2 <= bin < " + std::to_string(signal_length()) +
                        "/2");
    }
    for (int d : anomaly_dims) {
      if (d < 0 || d >= hidden_dim) throw ConfigError("anomaly dim " + std::to_string(d) + " out of range");
    }
    if (!(anomaly_amplitude >= 0.0) || !std::isfinite(anomaly_amplitude)) {
      throw ConfigError("anomaly amplitude must be finite and non-negative");
    }
    if (!(positive_fraction > 0.0 && positive_fraction < 1.0)) {
      throw ConfigError("positive fraction must lie in (0, 1)");
    }
    if (!(offset_range >= 0.0) || !std::isfinite(offset_range)) {
      throw ConfigError("offset range must be finite and non-negative");
    }
    if (obs_points.empty()) throw ConfigError("at least one observation point is required");
  }
};

// Every column is a Gaussian random walk over the 4*layers time axis; label-1
// items add amplitude*cos(2*pi*bin*n/N) on each anomaly dimension.
inline TraceFile generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);

  const auto positives =
      static_cast<std::size_t>(std::floor(static_cast<double>(spec.record_count) * spec.positive_fraction));
  std::vector<int> labels(spec.record_count, 0);
  std::fill_n(labels.begin(), positives, 1);
  std::shuffle(labels.begin(), labels.end(), rng);

  const int n_len = spec.signal_length();
  std::vector<double> carrier(static_cast<std::size_t>(n_len));
  for (int n = 0; n < n_len; ++n) {
    carrier[static_cast<std::size_t>(n)] =
        spec.anomaly_amplitude * std::cos(2.0 * std::numbers::pi * spec.anomaly_bin * n / n_len);
  }
  std::vector<bool> is_anomaly_dim(static_cast<std::size_t>(spec.hidden_dim), false);
  for (int d : spec.anomaly_dims) is_anomaly_dim[static_cast<std::size_t>(d)] = true;

  TraceFile out;
  out.header = TraceHeader{"synthetic",
                           spec.num_layers,
                           spec.hidden_dim,
                           {kAllNodes.begin(), kAllNodes.end()},
                           spec.record_count * spec.obs_points.size(),
                           "synthetic-seed" + std::to_string(spec.seed)};
  out.records.reserve(out.header.record_count);

  std::normal_distribution<double> step(0.0, 1.0);
  std::uniform_real_distribution<double> offset(-spec.offset_range, spec.offset_range);
  const auto dim = static_cast<std::size_t>(spec.hidden_dim);
  std::vector<double> column(static_cast<std::size_t>(n_len));

  for (std::size_t item = 0; item < spec.record_count; ++item) {
    std::ostringstream id;
    id << "syn-" << std::setw(6) << std::setfill('0') << item;
    for (ObsPoint point : spec.obs_points) {
      TraceRecord r;
      r.id = id.str();
      r.observation_point = point;
      r.label = labels[item];
      r.values.resize(static_cast<std::size_t>(n_len) * dim);
      const bool inject = labels[item] == 1 && is_answer_side(point);
      for (std::size_t d = 0; d < dim; ++d) {
        double walk = 0.0;
        for (auto& x : column) {
          walk += step(rng);
          x = walk;
        }
        const double shift = spec.offset_range > 0.0 ? offset(rng) : 0.0;
        for (std::size_t n = 0; n < column.size(); ++n) {
          double v = column[n] + shift;
          if (inject && is_anomaly_dim[d]) v += carrier[n];
          // time index n = layer*4 + node rank, which is exactly the row-major
          // [layer][node] position for the full node order
          r.values[n * dim + d] = static_cast<float>(v);
        }
      }
      out.records.push_back(std::move(r));
    }
  }
  return out;
}

}  // namespace hsad
