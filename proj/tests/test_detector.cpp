#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "gradient_check.hpp"
#include "hsad/detector.hpp"
#include "hsad/model_io.hpp"
#include "hsad/pipeline.hpp"
#include "test_util.hpp"

namespace hsad {
namespace {

Matrix random_matrix(std::mt19937_64& rng, int rows, int cols, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
  return m;
}

std::string serialize(const DetectorModel& m) {
  std::ostringstream os;
  write_model(m, os);
  return os.str();
}

DetectorModel parse(const std::string& bytes) {
  std::istringstream is(bytes);
  return read_model(is);
}

bool same_parameters(const DetectorModel& a, const DetectorModel& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    const auto& x = a.layers[i];
    const auto& y = b.layers[i];
    if (x.weight != y.weight || x.bias != y.bias || x.gamma != y.gamma || x.beta != y.beta ||
        x.running_mean != y.running_mean || x.running_var != y.running_var) {
      return false;
    }
  }
  return a.head_weight == b.head_weight && a.head_bias == b.head_bias;
}

TEST(InitModel, ParameterCount) {
  // affine 64*256 + 256, BN 4*256, head 256 + 1
  const auto m = init_model(64, {256}, 0.1, 1);
  EXPECT_EQ(m.parameter_count(), 64u * 256 + 256 + 4 * 256 + 256 + 1);
  EXPECT_EQ(m.parameter_count(), 17921u);
}

TEST(InitModel, DeterministicAndBounded) {
  const auto a = init_model(32, {64, 256}, 0.1, 9);
  const auto b = init_model(32, {64, 256}, 0.1, 9);
  EXPECT_TRUE(same_parameters(a, b));
  EXPECT_FALSE(same_parameters(a, init_model(32, {64, 256}, 0.1, 10)));
  EXPECT_LE(a.layers[0].weight.cwiseAbs().maxCoeff(), std::sqrt(1.0 / 32));
  EXPECT_LE(a.layers[1].weight.cwiseAbs().maxCoeff(), std::sqrt(1.0 / 64));
  EXPECT_EQ(a.layers[1].gamma, Vector::Ones(256));
  EXPECT_EQ(a.layers[1].running_var, Vector::Ones(256));
  EXPECT_EQ(a.layers[1].running_mean, Vector::Zero(256));
}

TEST(InitModel, DefaultGeometry) {
  const auto m = init_model(4096, {1024, 512, 256}, 0.1, 0);
  EXPECT_EQ(m.layers[0].weight.rows(), 1024);
  EXPECT_EQ(m.layers[0].weight.cols(), 4096);
  EXPECT_EQ(m.head_weight.size(), 256);
}

TEST(InitModel, ConfigErrors) {
  EXPECT_THROW(init_model(8, {128}, 0.1, 0), ConfigError);
  EXPECT_NO_THROW(init_model(8, {128}, 0.1, 0, true));
  EXPECT_THROW(init_model(0, {256}, 0.1, 0), ConfigError);
  EXPECT_THROW(init_model(8, {}, 0.1, 0), ConfigError);
  EXPECT_THROW(init_model(8, {256}, 1.0, 0), ConfigError);
}

TEST(Forward, EvalOutputsAreProbabilities) {
  std::mt19937_64 rng(2);
  auto m = init_model(8, {32, 256}, 0.1, 3);
  const auto p = forward_eval(m, random_matrix(rng, 50, 8, 100.0));
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    EXPECT_GT(p[i], 0.0);
    EXPECT_LT(p[i], 1.0);
  }
}

TEST(Forward, ZeroHeadGivesOneHalf) {
  std::mt19937_64 rng(2);
  auto m = init_model(8, {256}, 0.1, 3);
  m.head_weight.setZero();
  m.head_bias = 0.0;
  Rng r(0);
  const auto p = forward(m, random_matrix(rng, 10, 8), Mode::train, r);
  for (Eigen::Index i = 0; i < p.size(); ++i) EXPECT_EQ(p[i], 0.5);
}

TEST(Forward, EvalIsPure) {
  std::mt19937_64 rng(5);
  auto m = init_model(16, {64, 256}, 0.2, 3);
  Rng r(1);
  forward(m, random_matrix(rng, 20, 16), Mode::train, r);  // non-trivial running stats
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix x = random_matrix(rng, 1 + trial % 7, 16);
    const Vector a = forward_eval(m, x);
    const Vector b = forward(m, x, Mode::eval, r);
    const Vector c = forward_eval(m, x);
    EXPECT_EQ(a, b);
    EXPECT_EQ(a, c);
  }
}

TEST(Forward, TrainModeUpdatesRunningStatistics) {
  std::mt19937_64 rng(5);
  auto m = init_model(4, {256}, 0.0, 3);
  const Matrix x = random_matrix(rng, 8, 4);
  Rng r(1);
  ForwardCache cache;
  forward(m, x, Mode::train, r, &cache);
  Matrix z = x * init_model(4, {256}, 0.0, 3).layers[0].weight.transpose();
  z.rowwise() += m.layers[0].bias.transpose();
  const Vector mean = z.colwise().mean().transpose();
  EXPECT_LT((m.layers[0].running_mean - 0.1 * mean).cwiseAbs().maxCoeff(), 1e-12);
  const Vector centered_sq = (z.rowwise() - mean.transpose()).array().square().colwise().sum().transpose();
  const Vector expected_var = (0.9 * Vector::Ones(256).array() + 0.1 * centered_sq.array() / 7.0).matrix();
  EXPECT_LT((m.layers[0].running_var - expected_var).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Forward, ShapeAndBatchErrors) {
  std::mt19937_64 rng(5);
  auto m = init_model(4, {256}, 0.1, 3);
  Rng r(1);
  EXPECT_THROW(forward(m, random_matrix(rng, 3, 5), Mode::eval, r), ShapeError);
  EXPECT_THROW(forward(m, random_matrix(rng, 1, 4), Mode::train, r), DataError);
  EXPECT_NO_THROW(forward(m, random_matrix(rng, 1, 4), Mode::eval, r));
}

// Averaging train-mode outputs over dropout draws recovers the eval output
// when batch statistics coincide with the running statistics.
TEST(Forward, DropoutExpectation) {
  std::mt19937_64 rng(7);
  auto m = init_model(8, {256}, 0.1, 4);
  const Matrix x = random_matrix(rng, 8, 8);
  Matrix z = x * m.layers[0].weight.transpose();
  z.rowwise() += m.layers[0].bias.transpose();
  m.layers[0].running_mean = z.colwise().mean().transpose();
  m.layers[0].running_var = (z.rowwise() - m.layers[0].running_mean.transpose()).array().square().colwise().mean().transpose();
  const Vector eval = forward_eval(m, x);

  Vector sum = Vector::Zero(8);
  Rng r(11);
  const int draws = 20000;
  for (int i = 0; i < draws; ++i) {
    DetectorModel copy = m;
    sum += forward(copy, x, Mode::train, r);
  }
  const Vector mean = sum / draws;
  for (Eigen::Index i = 0; i < 8; ++i) EXPECT_NEAR(mean[i], eval[i], 0.02 * eval[i]) << i;
}

TEST(Loss, Examples) {
  auto m = init_model(4, {256}, 0.1, 3);
  const std::vector<int> y{1, 0, 1};
  const double l1 = m.layers[0].weight.cwiseAbs().sum();

  const std::vector<double> perfect{1.0, 0.0, 1.0};
  EXPECT_NEAR(bce(perfect, y), 1e-12, 1e-15);
  EXPECT_NEAR(loss(perfect, y, m, 1e-5), 1e-12 + 1e-5 * l1, 1e-14);

  const std::vector<double> half{0.5, 0.5, 0.5};
  EXPECT_NEAR(bce(half, y), std::numbers::ln2, 1e-15);

  // direct summation of |W1|
  double direct = 0.0;
  for (Eigen::Index r = 0; r < m.layers[0].weight.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.layers[0].weight.cols(); ++c) direct += std::abs(m.layers[0].weight(r, c));
  }
  const std::vector<double> p{0.7, 0.2, 0.6};
  EXPECT_NEAR(loss(p, y, m, 1e-5) - loss(p, y, m, 0.0), 1e-5 * direct, 1e-15);
  EXPECT_THROW(bce(std::vector<double>{0.5}, y), ShapeError);
}

TEST(Gradients, MatchFiniteDifferences) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    EXPECT_LT(testing::check_gradients(seed, 8, {256}, 16, 1e-5).worst_relative_error, 1e-4);
  }
  // deeper stack exercises backprop between BN blocks
  EXPECT_LT(testing::check_gradients(4, 6, {32, 16}, 12, 1e-3).worst_relative_error, 1e-4);
}

TEST(Schedule, CosineDecay) {
  TrainConfig cfg;
  EXPECT_DOUBLE_EQ(learning_rate(cfg, 0), 5e-4);
  EXPECT_NEAR(learning_rate(cfg, 25), 2.5e-4, 1e-18);
  for (int t = 1; t < cfg.epochs; ++t) EXPECT_LE(learning_rate(cfg, t), learning_rate(cfg, t - 1));
  EXPECT_GT(learning_rate(cfg, 49), 0.0);
}

TEST(Training, Defaults) {
  const TrainConfig cfg;
  EXPECT_EQ(cfg.epochs, 50);
  EXPECT_EQ(cfg.initial_lr, 5e-4);
  EXPECT_EQ(cfg.batch_size, 128);
  EXPECT_EQ(cfg.weight_decay, 1e-4);
  EXPECT_EQ(cfg.hidden_sizes, (std::vector<int>{1024, 512, 256}));
}

TEST(Training, BatchBoundaries) {
  EXPECT_EQ(batch_boundaries(256, 128), (std::vector<std::size_t>{0, 128, 256}));
  EXPECT_EQ(batch_boundaries(300, 128), (std::vector<std::size_t>{0, 128, 256, 300}));
  EXPECT_EQ(batch_boundaries(257, 128), (std::vector<std::size_t>{0, 128, 257}));
  EXPECT_EQ(batch_boundaries(5, 128), (std::vector<std::size_t>{0, 5}));
}

LabeledMatrix synthetic_features(std::size_t count, std::uint64_t seed, double amplitude = 10.0) {
  auto spec = testing::acceptance_spec();
  spec.record_count = count;
  spec.seed = seed;
  spec.anomaly_amplitude = amplitude;
  return to_labeled_matrix(featurize(generate_synthetic(spec), {}));
}

TEST(Training, LossDecreasesOnSeparableData) {
  const auto data = synthetic_features(600, 3);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.hidden_sizes = {256};
  const auto result = train(data, cfg);
  ASSERT_EQ(result.epoch_loss.size(), 5u);
  for (std::size_t t = 1; t < 5; ++t) EXPECT_LT(result.epoch_loss[t], result.epoch_loss[t - 1]);
}

TEST(Training, Deterministic) {
  const auto data = synthetic_features(300, 4);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.hidden_sizes = {64, 256};
  cfg.seed = 17;
  const auto a = train(data, cfg);
  const auto b = train(data, cfg);
  EXPECT_TRUE(same_parameters(a.model, b.model));
  EXPECT_EQ(a.epoch_loss, b.epoch_loss);
  EXPECT_EQ(serialize(a.model), serialize(b.model));
}

TEST(Training, L1ShrinksFirstLayer) {
  std::mt19937_64 rng(6);
  LabeledMatrix noise{random_matrix(rng, 256, 16), {}};
  for (int i = 0; i < 256; ++i) noise.labels.push_back(i % 2);
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.hidden_sizes = {256};
  cfg.l1_lambda = 0.0;
  const double plain = train(noise, cfg).model.layers[0].weight.cwiseAbs().mean();
  cfg.l1_lambda = 1e-2;
  const double sparse = train(noise, cfg).model.layers[0].weight.cwiseAbs().mean();
  EXPECT_LT(sparse, plain);
}

TEST(Training, DataErrors) {
  std::mt19937_64 rng(6);
  LabeledMatrix one_class{random_matrix(rng, 10, 4), std::vector<int>(10, 1)};
  EXPECT_THROW(train(one_class, TrainConfig{}), DataError);
  LabeledMatrix mismatch{random_matrix(rng, 10, 4), std::vector<int>(9, 1)};
  EXPECT_THROW(train(mismatch, TrainConfig{}), ShapeError);
  TrainConfig bad;
  bad.epochs = 0;
  LabeledMatrix ok{random_matrix(rng, 4, 4), {0, 1, 0, 1}};
  EXPECT_THROW(train(ok, bad), ConfigError);

  FeatureSet unlabeled;
  unlabeled.header.dim = 2;
  unlabeled.records.push_back({"a", {}, {1.0f, 2.0f}});
  EXPECT_THROW(to_labeled_matrix(unlabeled), DataError);
}

TEST(Predict, StrictThreshold) {
  auto m = init_model(1, {256}, 0.0, 0);
  m.head_weight.setZero();
  m.head_bias = 0.0;
  const Matrix x = Matrix::Constant(3, 1, 2.0);
  const auto half = predict(m, x);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(half.probabilities[i], 0.5);
    EXPECT_EQ(half.bits[i], 0);
  }

  // h_0 = ReLU(x / sqrt(1 + eps)); logit = c * h_0 + logit(0.1)
  m.layers[0].weight.setZero();
  m.layers[0].bias.setZero();
  m.layers[0].weight(0, 0) = 1.0;
  const double base = std::log(0.1 / 0.9);
  m.head_bias = base;
  m.head_weight[0] = (std::log(0.9 / 0.1) - base) * std::sqrt(1.0 + m.bn_eps);
  Matrix two(2, 1);
  two << 1.0, 0.0;
  const auto p = predict(m, two);
  EXPECT_NEAR(p.probabilities[0], 0.9, 1e-12);
  EXPECT_NEAR(p.probabilities[1], 0.1, 1e-12);
  EXPECT_EQ(p.bits, (std::vector<int>{1, 0}));
}

TEST(Predict, BitsConsistentWithProbabilities) {
  const auto train_data = synthetic_features(300, 8);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.hidden_sizes = {256};
  const auto model = train(train_data, cfg).model;
  const auto held_out = synthetic_features(200, 9);
  const auto pred = predict(model, held_out.features);
  for (std::size_t i = 0; i < pred.bits.size(); ++i) EXPECT_EQ(pred.bits[i], pred.probabilities[i] > 0.5 ? 1 : 0);
}

TEST(ModelFormat, RoundTrip) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const int d = 1 + static_cast<int>(rng() % 20);
    auto m = init_model(d, {1 + static_cast<int>(rng() % 40), 256}, 0.1, rng());
    Rng r(trial);
    forward(m, random_matrix(rng, 5, d), Mode::train, r);
    m.train_config = TrainConfig{}.to_json();
    const auto bytes = serialize(m);
    const auto back = parse(bytes);
    EXPECT_EQ(serialize(back), bytes);
    EXPECT_EQ(back.hidden_sizes, m.hidden_sizes);
    EXPECT_EQ(back.train_config, m.train_config);
    EXPECT_NEAR(back.layers[0].weight(0, 0), m.layers[0].weight(0, 0), 1e-6);
  }
}

TEST(ModelFormat, Errors) {
  const auto m = init_model(3, {256}, 0.1, 0);
  const auto bytes = serialize(m);
  EXPECT_THROW(parse(bytes.substr(0, bytes.size() - 3)), CorruptionError);
  auto bad = bytes;
  bad.replace(0, 4, "HSF1");
  EXPECT_THROW(parse(bad), UnsupportedFormatError);
  auto zero_var = m;
  zero_var.layers[0].running_var[7] = 0.0;
  EXPECT_THROW(parse(serialize(zero_var)), DataError);
}

}  // namespace
}  // namespace hsad
