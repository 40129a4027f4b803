#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "hsad/features.hpp"
#include "test_util.hpp"

namespace hsad {
namespace {

std::string serialize(const FeatureSet& s) {
  std::ostringstream os;
  write_features(s, os);
  return os.str();
}

FeatureSet parse(const std::string& bytes) {
  std::istringstream is(bytes);
  return read_features(is);
}

TEST(FeatureFormat, RoundTrip) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const auto s = testing::random_feature_set(rng);
    const auto bytes = serialize(s);
    const auto back = parse(bytes);
    EXPECT_EQ(back.header, s.header);
    EXPECT_EQ(back.records, s.records);
    EXPECT_EQ(serialize(back), bytes);
  }
}

TEST(FeatureFormat, Errors) {
  std::mt19937_64 rng(1);
  auto s = testing::random_feature_set(rng);
  s.header.count = s.records.size() + 1;
  std::ostringstream os;
  EXPECT_THROW(write_features(s, os), FormatError);

  FeatureSet one;
  one.header.dim = 2;
  one.header.count = 1;
  one.records.push_back({"a", 1, {1.0f, 2.0f}});
  const auto bytes = serialize(one);
  EXPECT_THROW(parse(bytes.substr(0, bytes.size() - 1)), CorruptionError);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(parse(bad), UnsupportedFormatError);
  EXPECT_THROW(parse(testing::serialize(generate_synthetic(testing::acceptance_spec()))), UnsupportedFormatError);
}

TEST(Featurize, CountConservation) {
  const auto traces = generate_synthetic(testing::acceptance_spec());
  const auto set = featurize(traces, {});
  EXPECT_EQ(set.records.size(), 2000u);
  EXPECT_EQ(set.header.dim, 64);
  EXPECT_EQ(set.header.signal_length, 32u);
  EXPECT_EQ(set.header.layers, (std::vector<int>{1, 2, 3, 4, 5, 6, 7, 8}));
  EXPECT_EQ(set.header.obs_point, "A_end");
  for (std::size_t i = 0; i < set.records.size(); ++i) {
    EXPECT_EQ(set.records[i].id, traces.records[i].id);
    EXPECT_EQ(set.records[i].label, traces.records[i].label);
    for (float v : set.records[i].values) EXPECT_GE(v, 0.0f);
  }
}

TEST(Featurize, MatchesPerRecordComputation) {
  auto spec = testing::acceptance_spec();
  spec.record_count = 5;
  const auto traces = generate_synthetic(spec);
  const auto set = featurize(traces, {});
  for (std::size_t i = 0; i < 5; ++i) {
    const auto f = spectral_feature(build_signal_matrix(traces.records[i], traces.header, {}));
    for (std::size_t d = 0; d < 64; ++d) EXPECT_EQ(set.records[i].values[d], static_cast<float>(f.values[d]));
  }
}

TEST(Featurize, SingleSampleFftSelectionFails) {
  const auto traces = generate_synthetic(testing::acceptance_spec());
  FeaturizeOptions opt;
  opt.selection = {LayerSelection::list({1}), {Node::h}};
  EXPECT_THROW(featurize(traces, opt), DomainError);
  opt.mode = FeatureMode::time_max;
  EXPECT_EQ(featurize(traces, opt).header.signal_length, 1u);
}

TEST(Featurize, DeterministicAndThreadIndependent) {
  auto spec = testing::acceptance_spec();
  spec.record_count = 300;
  const auto traces = generate_synthetic(spec);
  FeaturizeOptions opt;
  const auto a = serialize(featurize(traces, opt, "digest"));
  EXPECT_EQ(a, serialize(featurize(traces, opt, "digest")));
  opt.threads = 4;
  EXPECT_EQ(a, serialize(featurize(traces, opt, "digest")));
}

TEST(Featurize, ResolvedRandomLayersInHeader) {
  auto spec = testing::acceptance_spec();
  spec.num_layers = 16;
  spec.record_count = 10;
  const auto traces = generate_synthetic(spec);
  FeaturizeOptions opt;
  opt.selection = {LayerSelection::random(8, 3), {Node::ah}};
  const auto set = featurize(traces, opt);
  EXPECT_EQ(set.header.layers, resolve_random_layers(16, 8, 3));
  EXPECT_EQ(set.header.nodes, (std::vector<Node>{Node::ah}));
  EXPECT_EQ(set.header.signal_length, 8u);
}

TEST(Featurize, ObservationPointFilterAndRelabel) {
  auto spec = testing::acceptance_spec();
  spec.record_count = 20;
  spec.obs_points = {ObsPoint::q_end, ObsPoint::a_end};
  auto traces = generate_synthetic(spec);
  FeaturizeOptions opt;
  opt.obs_point = ObsPoint::q_end;
  const auto q = featurize(traces, opt);
  EXPECT_EQ(q.records.size(), 20u);
  EXPECT_EQ(q.header.obs_point, "Q_end");

  // labels from similarity scores
  for (std::size_t i = 0; i < traces.records.size(); ++i) {
    traces.records[i].sim_score = static_cast<double>(i % 4) * 0.25;  // 0, .25, .5, .75
  }
  opt.obs_point = ObsPoint::a_end;
  opt.tau = 0.5;
  const auto labeled = featurize(traces, opt);
  ASSERT_EQ(labeled.header.tau, 0.5);
  for (std::size_t i = 0; i < labeled.records.size(); ++i) {
    const double sim = static_cast<double>((2 * i + 1) % 4) * 0.25;
    EXPECT_EQ(*labeled.records[i].label, sim <= 0.5 ? 1 : 0);
  }
  traces.records[1].sim_score.reset();
  EXPECT_THROW(featurize(traces, opt), DataError);
}

}  // namespace
}  // namespace hsad
