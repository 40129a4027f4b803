#pragma once

// Hallucination labeling, train/test splitting and the ACC / AUROC metrics.
// Label 1 (hallucination) is the positive class throughout.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hsad/binary_io.hpp"
#include "hsad/error.hpp"
#include "hsad/trace.hpp"

namespace hsad {

struct LabelRule {
  double tau = 0.5;
};

// label = 1 iff sim <= tau. Returns how many existing labels were overwritten.
inline std::size_t apply_labels(std::vector<TraceRecord>& records, const LabelRule& rule) {
  if (!std::isfinite(rule.tau)) throw ConfigError("tau must be finite");
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!records[i].sim_score) {
      throw DataError("record " + std::to_string(i) + " (" + records[i].id + ") has no sim score");
    }
  }
  std::size_t overwritten = 0;
  for (auto& r : records) {
    if (r.label) ++overwritten;
    r.label = *r.sim_score <= rule.tau ? 1 : 0;
  }
  return overwritten;
}

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Seeded shuffle of [0, n), then the first round(n * test_fraction) indices
// form the test set.
inline SplitIndices split_indices(std::size_t n, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("test fraction must lie in (0, 1)");
  if (n < 2) throw DataError("need at least 2 records to split");
  const auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(n) * test_fraction));
  if (n_test == 0 || n_test == n) throw DataError("split leaves an empty partition");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  SplitIndices out;
  out.test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  out.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  return out;
}

template <typename T>
std::pair<std::vector<T>, std::vector<T>> split(const std::vector<T>& records, double test_fraction,
                                                std::uint64_t seed) {
  const auto idx = split_indices(records.size(), test_fraction, seed);
  std::pair<std::vector<T>, std::vector<T>> out;
  for (auto i : idx.train) out.first.push_back(records[i]);
  for (auto i : idx.test) out.second.push_back(records[i]);
  return out;
}

struct Confusion {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::size_t total() const { return tp + fp + fn + tn; }
  double accuracy() const { return static_cast<double>(tp + tn) / static_cast<double>(total()); }
};

inline Confusion confusion(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) throw MetricError("prediction/label length mismatch");
  if (predictions.empty()) throw MetricError("empty prediction vector");
  Confusion c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool p = predictions[i] != 0;
    const bool y = labels[i] != 0;
    if (p && y) ++c.tp;
    else if (p && !y) ++c.fp;
    else if (!p && y) ++c.fn;
    else ++c.tn;
  }
  return c;
}

inline double acc(std::span<const int> predictions, std::span<const int> labels) {
  return confusion(predictions, labels).accuracy();
}

// Mann-Whitney form of AUROC: (pairs with pos > neg + 0.5 * ties) / (M * N),
// via midranks. Ranks are kept doubled so the arithmetic stays integral.
inline double auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw MetricError("score/label length mismatch");
  std::uint64_t m_pos = 0;
  for (int y : labels) m_pos += y != 0 ? 1 : 0;
  const std::uint64_t n_neg = labels.size() - m_pos;
  if (m_pos == 0 || n_neg == 0) throw MetricError("AUROC needs both positive and negative samples");
  for (double s : scores) {
    if (std::isnan(s)) throw MetricError("NaN score");
  }

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // sum over positives of 2 * midrank (1-based)
  std::uint64_t doubled_rank_sum = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const std::uint64_t doubled_midrank = (i + 1) + (j + 1);
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]] != 0) doubled_rank_sum += doubled_midrank;
    }
    i = j + 1;
  }
  // 2U = 2 * R_pos - M(M+1)
  const std::uint64_t doubled_u = doubled_rank_sum - m_pos * (m_pos + 1);
  return static_cast<double>(doubled_u) / (2.0 * static_cast<double>(m_pos) * static_cast<double>(n_neg));
}

struct EvalReport {
  double acc = 0.0;
  double auroc = 0.0;
  Confusion counts;
  std::size_t m_pos = 0;
  std::size_t n_neg = 0;
  std::optional<double> tau;
  std::string mode;
  std::vector<std::string> nodes;
  std::vector<int> layers;
  std::string obs_point;
  std::uint64_t seed = 0;

  Json to_json() const {
    return Json{{"acc", acc},
                {"auroc", auroc},
                {"tp", counts.tp},
                {"fp", counts.fp},
                {"fn", counts.fn},
                {"tn", counts.tn},
                {"m_pos", m_pos},
                {"n_neg", n_neg},
                {"tau", tau ? Json(*tau) : Json(nullptr)},
                {"mode", mode},
                {"nodes", nodes},
                {"layers", layers},
                {"obs_point", obs_point},
                {"seed", seed}};
  }
};

// Metrics only; the caller fills the configuration echo.
inline EvalReport evaluate(std::span<const double> probabilities, std::span<const int> bits,
                           std::span<const int> labels) {
  EvalReport r;
  r.counts = confusion(bits, labels);
  r.acc = r.counts.accuracy();
  r.auroc = auroc(probabilities, labels);
  r.m_pos = r.counts.tp + r.counts.fn;
  r.n_neg = r.counts.fp + r.counts.tn;
  return r;
}

}  // namespace hsad
