#pragma once

// HSF1 feature files and trace featurization.

#include <algorithm>
#include <cstdint>
#include <exception>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "hsad/binary_io.hpp"
#include "hsad/evaluation.hpp"
#include "hsad/signal.hpp"
#include "hsad/spectral.hpp"
#include "hsad/trace.hpp"

namespace hsad {

struct FeatureHeader {
  int dim = 0;
  std::size_t count = 0;
  FeatureMode mode = FeatureMode::fft_max;
  bool absolute = false;  // time-max over |x|
  std::vector<Node> nodes;
  std::vector<int> layers;
  std::size_t signal_length = 0;
  std::string source_digest;
  std::string obs_point;
  std::optional<double> tau;  // set when labels were derived from sim scores

  bool operator==(const FeatureHeader&) const = default;
};

struct FeatureRecord {
  std::string id;
  std::optional<int> label;
  std::vector<float> values;

  bool operator==(const FeatureRecord&) const = default;
};

struct FeatureSet {
  FeatureHeader header;
  std::vector<FeatureRecord> records;
};

namespace detail {

inline Json feature_header_json(const FeatureHeader& h) {
  Json nodes = Json::array();
  for (Node n : h.nodes) nodes.push_back(std::string(to_string(n)));
  Json j{{"dim", h.dim},
         {"count", h.count},
         {"mode", std::string(to_string(h.mode))},
         {"nodes", nodes},
         {"layers", h.layers},
         {"N", h.signal_length},
         {"source_digest", h.source_digest},
         {"obs_point", h.obs_point},
         {"tau", h.tau ? Json(*h.tau) : Json(nullptr)}};
  if (h.absolute) j["abs"] = true;
  return j;
}

}  // namespace detail

inline std::size_t write_features(const FeatureSet& set, std::ostream& os) {
  const auto& h = set.header;
  if (h.dim < 1) throw FormatError("feature dim must be positive");
  if (h.count != set.records.size()) throw FormatError("feature header count does not match records");
  for (std::size_t i = 0; i < set.records.size(); ++i) {
    const auto& r = set.records[i];
    if (r.values.size() != static_cast<std::size_t>(h.dim)) {
      throw FormatError("feature record " + std::to_string(i) + " has the wrong dimension");
    }
    if (r.label && *r.label != 0 && *r.label != 1) throw FormatError("label must be 0 or 1");
    for (float v : r.values) {
      if (!std::isfinite(v)) throw DataError("feature record " + std::to_string(i) + " is non-finite");
    }
  }
  const auto start = os.tellp();
  io::write_preamble(os, "HSF1", detail::feature_header_json(h));
  for (const auto& r : set.records) {
    io::write_json_block(os, Json{{"id", r.id}, {"label", r.label ? Json(*r.label) : Json(nullptr)}});
    io::write_f32(os, std::span<const float>(r.values));
  }
  if (!os) throw DataError("write failed");
  return static_cast<std::size_t>(os.tellp() - start);
}

inline FeatureSet read_features(std::istream& is) {
  io::Reader in(is);
  const Json hj = in.preamble("HSF1");
  FeatureSet set;
  auto& h = set.header;
  h.dim = io::field<int>(hj, "dim", "header");
  if (h.dim < 1) throw FormatError("feature dim must be positive");
  h.count = io::field<std::size_t>(hj, "count", "header");
  try {
    h.mode = parse_feature_mode(io::field<std::string>(hj, "mode", "header"));
    for (const auto& s : io::field<std::vector<std::string>>(hj, "nodes", "header")) h.nodes.push_back(parse_node(s));
  } catch (const ConfigError& e) {
    throw FormatError(std::string("header: ") + e.what());
  }
  h.layers = io::field<std::vector<int>>(hj, "layers", "header");
  h.signal_length = io::field<std::size_t>(hj, "N", "header");
  h.source_digest = io::field<std::string>(hj, "source_digest", "header");
  if (hj.contains("obs_point")) h.obs_point = io::field<std::string>(hj, "obs_point", "header");
  if (hj.contains("tau") && !hj.at("tau").is_null()) h.tau = io::field<double>(hj, "tau", "header");
  if (hj.contains("abs")) h.absolute = io::field<bool>(hj, "abs", "header");

  set.records.reserve(h.count);
  for (std::size_t i = 0; i < h.count; ++i) {
    const std::string ctx = "feature record " + std::to_string(i);
    const Json meta = in.json_block(ctx + " metadata");
    FeatureRecord r;
    r.id = io::field<std::string>(meta, "id", ctx);
    r.label = detail::parse_label(meta, ctx);
    r.values = in.f32(static_cast<std::size_t>(h.dim), ctx + " values");
    set.records.push_back(std::move(r));
  }
  if (!in.at_eof()) throw CorruptionError("trailing bytes after feature record " + std::to_string(h.count));
  return set;
}

struct FeaturizeOptions {
  SelectionSpec selection;
  FeatureMode mode = FeatureMode::fft_max;
  bool absolute = false;
  // Only records captured at this point are featurized.
  ObsPoint obs_point = ObsPoint::a_end;
  // When set, labels are (re)derived from sim scores with this threshold.
  std::optional<double> tau;
  unsigned threads = 1;
};

inline SpectralFeature featurize_record(const TraceRecord& record, const TraceHeader& header,
                                        const SelectionSpec& resolved, FeatureMode mode, bool absolute) {
  const SignalMatrix t = build_signal_matrix(record, header, resolved);
  return mode == FeatureMode::fft_max ? spectral_feature(t) : time_max_feature(t, absolute);
}

// Featurizes every record at the requested observation point. Random layer
// selections are resolved once, so every record shares the same layer list,
// which is echoed in the header.
inline FeatureSet featurize(const TraceFile& traces, const FeaturizeOptions& opt,
                            const std::string& source_digest = {}) {
  const TraceHeader& th = traces.header;
  SelectionSpec resolved{LayerSelection::list(resolve_layers(opt.selection.layers, th.num_layers)),
                         canonical_nodes(opt.selection.nodes)};
  for (Node n : resolved.nodes) {
    if (th.node_index(n) < 0) throw SelectionError("node " + std::string(to_string(n)) + " is absent from the capture");
  }
  const std::size_t n_len = resolved.layers.layers.size() * resolved.nodes.size();
  if (opt.mode == FeatureMode::fft_max && n_len < 2) {
    throw DomainError("fft-max needs a signal of length >= 2; selection yields " + std::to_string(n_len));
  }

  std::vector<TraceRecord> selected;
  for (const auto& r : traces.records) {
    if (r.observation_point == opt.obs_point) selected.push_back(r);
  }
  if (opt.tau) apply_labels(selected, LabelRule{*opt.tau});

  FeatureSet set;
  set.header = FeatureHeader{th.hidden_dim, selected.size(), opt.mode,
                             opt.mode == FeatureMode::time_max && opt.absolute,
                             resolved.nodes, resolved.layers.layers, n_len, source_digest,
                             std::string(to_string(opt.obs_point)), opt.tau};
  set.records.resize(selected.size());

  const unsigned workers = std::max(1u, std::min<unsigned>(opt.threads, static_cast<unsigned>(selected.size())));
  std::vector<std::exception_ptr> failures(workers);
  auto work = [&](unsigned w) {
    const std::size_t begin = selected.size() * w / workers;
    const std::size_t end = selected.size() * (w + 1) / workers;
    for (std::size_t i = begin; i < end; ++i) {
      try {
        const auto f = featurize_record(selected[i], th, resolved, opt.mode, opt.absolute);
        set.records[i] = FeatureRecord{selected[i].id, selected[i].label,
                                       std::vector<float>(f.values.begin(), f.values.end())};
      } catch (const Error& e) {
        failures[w] = std::make_exception_ptr(
            DataError("record " + std::to_string(i) + " (" + selected[i].id + "): " + e.what()));
        return;
      }
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work, w);
  }
  for (const auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }
  return set;
}

}  // namespace hsad
