#pragma once

// In-memory featurize -> split -> train -> evaluate runs and the ablation
// suites built on them.

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "hsad/detector.hpp"
#include "hsad/evaluation.hpp"
#include "hsad/features.hpp"

namespace hsad {

// Stacks feature records into a matrix; every record must carry a label.
inline LabeledMatrix to_labeled_matrix(const FeatureSet& set) {
  LabeledMatrix out;
  out.features.resize(static_cast<Eigen::Index>(set.records.size()), set.header.dim);
  out.labels.reserve(set.records.size());
  for (std::size_t i = 0; i < set.records.size(); ++i) {
    const auto& r = set.records[i];
    if (!r.label) throw DataError("feature record " + std::to_string(i) + " (" + r.id + ") is unlabeled");
    for (int j = 0; j < set.header.dim; ++j) {
      out.features(static_cast<Eigen::Index>(i), j) = r.values[static_cast<std::size_t>(j)];
    }
    out.labels.push_back(*r.label);
  }
  return out;
}

inline FeatureSet subset(const FeatureSet& set, const std::vector<std::size_t>& indices) {
  FeatureSet out{set.header, {}};
  for (auto i : indices) out.records.push_back(set.records[i]);
  out.header.count = out.records.size();
  return out;
}

inline EvalReport evaluate_model(const DetectorModel& model, const FeatureSet& test) {
  if (test.header.dim != model.input_dim) {
    throw ShapeError("model expects dim " + std::to_string(model.input_dim) + ", features have dim " +
                     std::to_string(test.header.dim));
  }
  const LabeledMatrix data = to_labeled_matrix(test);
  const Prediction pred = predict(model, data.features);
  EvalReport report = evaluate(pred.probabilities, pred.bits, data.labels);
  report.tau = test.header.tau;
  report.mode = std::string(to_string(test.header.mode));
  for (Node n : test.header.nodes) report.nodes.emplace_back(to_string(n));
  report.layers = test.header.layers;
  report.obs_point = test.header.obs_point;
  report.seed = model.seed;
  return report;
}

struct PipelineConfig {
  TrainConfig train;
  double test_fraction = 0.3;
  std::uint64_t split_seed = 0;
};

struct PipelineResult {
  EvalReport report;
  std::vector<double> epoch_loss;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
};

inline PipelineResult run_pipeline(const FeatureSet& features, const PipelineConfig& cfg) {
  const auto idx = split_indices(features.records.size(), cfg.test_fraction, cfg.split_seed);
  const FeatureSet train_set = subset(features, idx.train);
  const FeatureSet test_set = subset(features, idx.test);
  TrainResult trained = train(to_labeled_matrix(train_set), cfg.train);
  PipelineResult out;
  out.report = evaluate_model(trained.model, test_set);
  out.report.seed = cfg.train.seed;
  out.epoch_loss = std::move(trained.epoch_loss);
  out.n_train = train_set.records.size();
  out.n_test = test_set.records.size();
  return out;
}

// ---------------------------------------------------------------------------
// Ablation suites

enum class AblationSuite { time_vs_freq, layers, nodes, obs_points };

inline AblationSuite parse_ablation_suite(std::string_view s) {
  if (s == "time-vs-freq") return AblationSuite::time_vs_freq;
  if (s == "layers") return AblationSuite::layers;
  if (s == "nodes") return AblationSuite::nodes;
  if (s == "obs-points") return AblationSuite::obs_points;
  throw ConfigError("unknown ablation suite \"" + std::string(s) + "\"");
}

struct AblationCondition {
  std::string name;
  FeaturizeOptions featurize;
};

struct AblationRow {
  std::string condition;
  std::uint64_t seed = 0;
  PipelineResult result;

  Json to_json() const {
    Json j{{"condition", condition}, {"seed", seed}, {"auroc", result.report.auroc},
           {"acc", result.report.acc}, {"n_train", result.n_train}, {"n_test", result.n_test}};
    j["mode"] = result.report.mode;
    j["nodes"] = result.report.nodes;
    j["layers"] = result.report.layers;
    j["obs_point"] = result.report.obs_point;
    return j;
  }
};

// Conditions for one suite; `base` supplies everything a condition does not
// vary. Seeds for random layer draws are seed + condition index.
inline std::vector<AblationCondition> ablation_conditions(AblationSuite suite, const TraceFile& traces,
                                                          const FeaturizeOptions& base, std::uint64_t seed) {
  std::vector<AblationCondition> out;
  switch (suite) {
    case AblationSuite::time_vs_freq: {
      auto fft = base;
      fft.mode = FeatureMode::fft_max;
      auto time = base;
      time.mode = FeatureMode::time_max;
      out.push_back({"fft-max", fft});
      out.push_back({time.absolute ? "time-max-abs" : "time-max", time});
      break;
    }
    case AblationSuite::layers: {
      const int l = traces.header.num_layers;
      for (int k = 1; k < l; k *= 2) {
        auto c = base;
        c.selection.layers = LayerSelection::random(k, seed + out.size());
        out.push_back({"random:" + std::to_string(k), c});
      }
      auto all = base;
      all.selection.layers = LayerSelection::all();
      out.push_back({"all", all});
      break;
    }
    case AblationSuite::nodes: {
      for (Node n : kAllNodes) {
        auto c = base;
        c.selection.nodes = {n};
        out.push_back({std::string(to_string(n)), c});
      }
      auto all = base;
      all.selection.nodes = {kAllNodes.begin(), kAllNodes.end()};
      out.push_back({"all", all});
      break;
    }
    case AblationSuite::obs_points: {
      std::set<ObsPoint> present;
      for (const auto& r : traces.records) present.insert(r.observation_point);
      std::string missing;
      for (ObsPoint p : kAllObsPoints) {
        if (!present.count(p)) missing += (missing.empty() ? "" : ", ") + std::string(to_string(p));
      }
      if (!missing.empty()) throw DataError("traces lack observation points: " + missing);
      for (ObsPoint p : kAllObsPoints) {
        auto c = base;
        c.obs_point = p;
        out.push_back({std::string(to_string(p)), c});
      }
      break;
    }
  }
  return out;
}

// Runs every condition with the shared pipeline config; condition i uses
// seed + i for its split and training.
inline std::vector<AblationRow> run_ablation(AblationSuite suite, const TraceFile& traces,
                                             const FeaturizeOptions& base, const PipelineConfig& cfg,
                                             std::uint64_t seed, const std::string& source_digest = {}) {
  std::vector<AblationRow> rows;
  const auto conditions = ablation_conditions(suite, traces, base, seed);
  for (std::size_t i = 0; i < conditions.size(); ++i) {
    const std::uint64_t s = seed + i;
    PipelineConfig run = cfg;
    run.split_seed = s;
    run.train.seed = s;
    const FeatureSet features = featurize(traces, conditions[i].featurize, source_digest);
    rows.push_back({conditions[i].name, s, run_pipeline(features, run)});
  }
  return rows;
}

}  // namespace hsad
