#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "newscast/error.hpp"
#include "newscast/models.hpp"
#include "testing/oracles.hpp"
#include "testing/synthetic.hpp"

using namespace newscast;
using newscast::testing::TempDir;

namespace {

ModelSpec small_spec(Arch arch) {
  ModelSpec s;
  s.arch = arch;
  s.input_dim = 2;
  s.window = 3;
  s.hidden_dim = 4;
  s.num_hidden_layers = 2;
  s.num_states = 2;
  s.kernel_size = 2;
  s.num_blocks = 2;
  s.dropout = 0.0;
  s.seed = 11;
  return s;
}

SequenceBatch random_batch(const ModelSpec& s, Eigen::Index rows, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  SequenceBatch b;
  for (std::size_t t = 0; t < s.window; ++t) {
    Eigen::MatrixXd m(rows, static_cast<Eigen::Index>(s.input_dim));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    b.push_back(m);
  }
  return b;
}

double max_relative_error(const Gradients& a, const Gradients& b) {
  double worst = 0.0;
  for (std::size_t t = 0; t < a.size(); ++t) {
    for (Eigen::Index i = 0; i < a[t].size(); ++i) {
      const double x = a[t].data()[i], y = b[t].data()[i];
      const double denom = std::max({std::abs(x), std::abs(y), 1e-6});
      worst = std::max(worst, std::abs(x - y) / denom);
    }
  }
  return worst;
}

void check_gradients(const ModelSpec& spec, Mode mode) {
  ParameterSet params = init_params(spec);
  // Non-zero biases so every path carries gradient.
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (auto& v : params.values) {
    for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] += u(rng);
  }
  const SequenceBatch batch = random_batch(spec, 5, 17);
  Eigen::MatrixXd targets(5, 1);
  targets << 0.3, -0.2, 0.5, 0.1, -0.4;
  const auto analytic = loss_and_grad(spec, params, batch, targets, mode, 99);
  const auto numeric = newscast::testing::finite_difference_gradient(
      params, [&](const ParameterSet& p) { return loss_and_grad(spec, p, batch, targets, mode, 99).loss; });
  EXPECT_LT(max_relative_error(analytic.grads, numeric), 1e-4) << to_string(spec.arch);
}

class ArchTest : public ::testing::TestWithParam<Arch> {};

}  // namespace

TEST_P(ArchTest, GradientMatchesFiniteDifferences) { check_gradients(small_spec(GetParam()), Mode::Inference); }

TEST_P(ArchTest, GradientMatchesFiniteDifferencesWithFixedDropoutMask) {
  ModelSpec s = small_spec(GetParam());
  s.dropout = 0.3;
  check_gradients(s, Mode::Training);
}

TEST_P(ArchTest, ParameterCountMatchesLayout) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 25; ++i) {
    ModelSpec s;
    s.arch = GetParam();
    s.input_dim = 1 + rng() % 7;
    s.window = 1 + rng() % 6;
    s.hidden_dim = 1 + rng() % 9;
    s.num_hidden_layers = 1 + rng() % 3;
    s.output_dim = 1 + rng() % 2;
    s.kernel_size = 1 + rng() % 4;
    s.num_blocks = 1 + rng() % 3;
    s.num_states = 1 + rng() % 4;
    EXPECT_EQ(parameter_count(s), init_params(s).scalar_count());
  }
}

TEST_P(ArchTest, XavierBoundsAndZeroBiases) {
  ModelSpec s = small_spec(GetParam());
  s.hidden_dim = 16;
  const ParameterSet p = init_params(s);
  for (std::size_t i = 0; i < p.values.size(); ++i) {
    const auto& m = p.values[i];
    const std::string& name = p.names[i];
    const bool is_bias = name.ends_with(".b") || name.ends_with(".bx") || name.ends_with(".bh") || name == "mix.logits";
    if (is_bias) {
      EXPECT_TRUE(m.isZero(0.0)) << name;
    } else {
      const double bound = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
      EXPECT_LE(m.cwiseAbs().maxCoeff(), bound) << name;
    }
  }
}

TEST_P(ArchTest, BatchCompositionDoesNotChangePredictions) {
  const ModelSpec s = small_spec(GetParam());
  const ParameterSet p = init_params(s);
  const SequenceBatch full = random_batch(s, 7, 4);
  const Eigen::MatrixXd all = forward(s, p, full);
  for (Eigen::Index r = 0; r < 7; ++r) {
    SequenceBatch one;
    for (const auto& m : full) one.push_back(m.row(r));
    EXPECT_EQ(forward(s, p, one)(0, 0), all(r, 0));
  }
}

TEST_P(ArchTest, TrainingIsDeterministicPerSeed) {
  const auto v = newscast::testing::random_variant(60, 3, 2, 8);
  ModelSpec s = small_spec(GetParam());
  s.epochs = 3;
  s.batch_size = 16;
  s.dropout = 0.2;
  const auto a = train(s, v);
  const auto b = train(s, v);
  ASSERT_EQ(a.params.values.size(), b.params.values.size());
  for (std::size_t i = 0; i < a.params.values.size(); ++i) EXPECT_EQ(a.params.values[i], b.params.values[i]);
  EXPECT_EQ(a.history.train_loss, b.history.train_loss);
  s.seed = 12;
  const auto c = train(s, v);
  EXPECT_NE(a.history.train_loss, c.history.train_loss);
}

TEST_P(ArchTest, SaveLoadRoundTrip) {
  TempDir dir;
  const auto v = newscast::testing::random_variant(40, 3, 2, 9);
  ModelSpec s = small_spec(GetParam());
  s.epochs = 2;
  s.batch_size = 8;
  const auto m = train(s, v);
  save_model(m, dir / "model");
  const auto back = load_model(dir / "model");
  EXPECT_EQ(back.spec, m.spec);
  EXPECT_EQ(back.params.names, m.params.names);
  EXPECT_EQ(back.params.step, m.params.step);
  EXPECT_EQ(back.history.train_loss, m.history.train_loss);
  EXPECT_EQ(predict_rows(back, v, v.test), predict_rows(m, v, v.test));
}

INSTANTIATE_TEST_SUITE_P(AllArchitectures, ArchTest, ::testing::ValuesIn(kAllArchs),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(ModelSpec, ParameterCountTable) {
  // H = 32, F = 10, L = 5, one hidden layer, scalar output.
  const auto count = [](Arch a) {
    ModelSpec s;
    s.arch = a;
    s.input_dim = 10;
    return parameter_count(s);
  };
  EXPECT_EQ(count(Arch::FFNN), 32u * 50 + 32 + 32 * 32 + 32 + 33);
  EXPECT_EQ(count(Arch::LSTM), 32u * 10 + 32 + 4 * (2 * 32 * 32 + 32) + 33);
  EXPECT_EQ(count(Arch::GRU), 32u * 10 + 32 + 6 * 32 * 32 + 4 * 32 + 33);
  EXPECT_EQ(count(Arch::TCN), 32u * 10 + 32 + 3 * 2 * (3 * 32 * 32 + 32) + 33);
  EXPECT_EQ(count(Arch::NN_HMM), 32u * 10 + 32 + 4 * (32 * 32 + 32 + 33) + 4);
}

TEST(ModelSpec, ValidationRejectsBadValues) {
  ModelSpec s;
  s.hidden_dim = 0;
  EXPECT_THROW(s.validate(), ParameterError);
  s = ModelSpec{};
  s.dropout = 1.0;
  EXPECT_THROW(s.validate(), ParameterError);
  s = ModelSpec{};
  s.learning_rate = 0.0;
  EXPECT_THROW(s.validate(), ParameterError);
  s = ModelSpec{};
  s.arch = Arch::NN_HMM;
  s.num_states = 0;
  EXPECT_THROW(s.validate(), ParameterError);
}

TEST(ModelSpec, JsonRoundTrip) {
  ModelSpec s = small_spec(Arch::TCN);
  s.learning_rate = 0.00123456789;
  s.dropout = 0.1234;
  EXPECT_EQ(model_spec_from_json(to_json(s)), s);
  EXPECT_EQ(parse_arch("NN_HMM"), Arch::NN_HMM);
  EXPECT_THROW(parse_arch("RNN"), ConfigError);
}

TEST(Xavier, EmpiricalVarianceMatchesUniform) {
  ModelSpec s;
  s.arch = Arch::FFNN;
  s.input_dim = 200;
  s.window = 1;
  s.hidden_dim = 100;
  const ParameterSet p = init_params(s);
  const auto& w = p["in.W"];
  const double bound = std::sqrt(6.0 / 300.0);
  const double var = w.array().square().mean();
  EXPECT_NEAR(var, bound * bound / 3.0, 0.03 * bound * bound / 3.0);
  EXPECT_NEAR(w.mean(), 0.0, 0.01);
}

TEST(NnHmm, SingleStateEqualsItsEmitter) {
  ModelSpec s = small_spec(Arch::NN_HMM);
  s.num_states = 1;
  ParameterSet p = init_params(s);
  p["mix.logits"](0, 0) = 3.7;
  const auto batch = random_batch(s, 6, 1);
  const auto parts = nnhmm_parts(s, p, batch);
  EXPECT_DOUBLE_EQ(parts.weights(0), 1.0);
  const Eigen::MatrixXd out = forward(s, p, batch);
  for (Eigen::Index r = 0; r < 6; ++r) EXPECT_NEAR(out(r, 0), parts.emissions(r, 0), 1e-15);
}

TEST(NnHmm, EqualLogitsAverageEmitters) {
  ModelSpec s = small_spec(Arch::NN_HMM);
  s.num_states = 3;
  ParameterSet p = init_params(s);
  p["mix.logits"].setConstant(0.42);
  const auto batch = random_batch(s, 6, 2);
  const auto parts = nnhmm_parts(s, p, batch);
  for (Eigen::Index k = 0; k < 3; ++k) EXPECT_NEAR(parts.weights(k), 1.0 / 3.0, 1e-15);
  const Eigen::MatrixXd out = forward(s, p, batch);
  for (Eigen::Index r = 0; r < 6; ++r) EXPECT_NEAR(out(r, 0), parts.emissions.row(r).mean(), 1e-12);
}

TEST(NnHmm, MixtureWeightsFollowSoftmax) {
  ModelSpec s = small_spec(Arch::NN_HMM);
  ParameterSet p = init_params(s);
  p["mix.logits"] << 1.0, -0.5;
  const auto parts = nnhmm_parts(s, p, random_batch(s, 2, 3));
  const double z = std::exp(1.0) + std::exp(-0.5);
  EXPECT_NEAR(parts.weights(0), std::exp(1.0) / z, 1e-15);
  EXPECT_NEAR(parts.weights(1), std::exp(-0.5) / z, 1e-15);
}

TEST(Tcn, ReceptiveFieldIsCausalAndBounded) {
  ModelSpec s;
  s.arch = Arch::TCN;
  s.input_dim = 1;
  s.window = 40;
  s.hidden_dim = 6;
  s.kernel_size = 3;
  s.num_blocks = 3;
  s.dilation_base = 2;
  s.dropout = 0.0;
  s.seed = 4;
  // 1 + 2 convs * (k - 1) * (1 + 2 + 4)
  const std::size_t receptive = 1 + 2 * 2 * 7;
  ParameterSet p = init_params(s);
  for (std::size_t i = 0; i < p.values.size(); ++i) {
    if (p.names[i].ends_with(".b")) p.values[i].setConstant(0.05);
  }
  const auto base = random_batch(s, 1, 6);
  const double y0 = forward(s, p, base)(0, 0);
  for (std::size_t t = 0; t < s.window; ++t) {
    auto probe = base;
    probe[t](0, 0) += 1.0;
    const double y = forward(s, p, probe)(0, 0);
    if (t + receptive <= s.window - 1) {
      EXPECT_EQ(y, y0) << "timestep " << t << " is outside the receptive field";
    } else {
      EXPECT_NE(y, y0) << "timestep " << t << " is inside the receptive field";
    }
  }
}

TEST(Dropout, TrainingModeMatchesInferenceInExpectation) {
  ModelSpec s = small_spec(Arch::FFNN);
  s.num_hidden_layers = 1;
  s.hidden_dim = 16;
  s.dropout = 0.3;
  ParameterSet p = init_params(s);
  for (std::size_t i = 0; i < p.values.size(); ++i) {
    if (p.names[i].ends_with(".b")) p.values[i].setConstant(0.1);
  }
  const auto batch = random_batch(s, 1, 21);
  const double expected = forward(s, p, batch, Mode::Inference)(0, 0);
  double sum = 0.0;
  constexpr int kDraws = 10000;
  for (int i = 0; i < kDraws; ++i) sum += forward(s, p, batch, Mode::Training, static_cast<std::uint64_t>(i))(0, 0);
  EXPECT_NEAR(sum / kDraws, expected, 0.02 * std::abs(expected));
  EXPECT_NE(forward(s, p, batch, Mode::Training, 1)(0, 0), forward(s, p, batch, Mode::Training, 2)(0, 0));
}

TEST(Forward, RejectsShapeMismatch) {
  const ModelSpec s = small_spec(Arch::GRU);
  const ParameterSet p = init_params(s);
  auto batch = random_batch(s, 2, 1);
  batch.pop_back();
  EXPECT_THROW(forward(s, p, batch), ParameterError);
}

TEST(Train, LearnsLinearMap) {
  const auto problem = newscast::testing::linear_variant(400, 100, 3, 0.01, 7);
  ModelSpec s = spec_for(Arch::FFNN, problem.variant);
  s.epochs = 60;
  s.dropout = 0.0;
  s.learning_rate = 5e-3;
  s.seed = 1;
  const auto m = train(s, problem.variant);
  EXPECT_LT(m.history.train_loss.back(), 0.1 * m.history.train_loss.front());
}

TEST(Train, BatchLargerThanTrainingSetIsRejected) {
  const auto v = newscast::testing::random_variant(20, 2, 2, 1);
  ModelSpec s = spec_for(Arch::FFNN, v);
  s.batch_size = 64;
  EXPECT_THROW(train(s, v), ParameterError);
}

TEST(Train, DivergenceReportsEpoch) {
  auto v = newscast::testing::random_variant(40, 2, 2, 1);
  for (auto& y : v.y) y = 1e300;
  ModelSpec s = spec_for(Arch::FFNN, v);
  s.batch_size = 8;
  s.epochs = 3;
  try {
    train(s, v);
    FAIL() << "expected divergence";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 0"), std::string::npos) << e.what();
  }
}

TEST(Train, SequenceOrderKeptForTimeDependentVariant) {
  // Without shuffling, every epoch visits rows in the same order, so training
  // on a permuted copy of the train list gives a different trajectory.
  auto v = newscast::testing::random_variant(50, 2, 2, 3, TransformKind::TimeDependent);
  ASSERT_FALSE(v.shuffle_train);
  ModelSpec s = spec_for(Arch::LSTM, v);
  s.hidden_dim = 4;
  s.epochs = 2;
  s.batch_size = 10;
  const auto a = train(s, v);
  auto reversed = v;
  std::reverse(reversed.train.begin(), reversed.train.end());
  const auto b = train(s, reversed);
  EXPECT_NE(a.history.train_loss, b.history.train_loss);
}

TEST(Train, ShuffledVariantReducesLoss) {
  auto v = newscast::testing::random_variant(80, 2, 2, 3, TransformKind::LogReturn);
  ASSERT_TRUE(v.shuffle_train);
  ModelSpec s = spec_for(Arch::FFNN, v);
  s.hidden_dim = 8;
  s.epochs = 20;
  s.batch_size = 16;
  s.dropout = 0.0;
  const auto a = train(s, v);
  EXPECT_LT(a.history.train_loss.back(), a.history.train_loss.front());
}

TEST(Search, PicksLowestScoringTrialDeterministically) {
  const auto problem = newscast::testing::linear_variant(120, 30, 2, 0.01, 2);
  ModelSpec base = spec_for(Arch::FFNN, problem.variant);
  base.epochs = 5;
  SearchSpace space;
  space.hidden_dims = {4, 8};
  space.batch_sizes = {8, 16};
  const auto r = hyperparameter_search(base, space, 4, problem.variant, 77, 3);
  ASSERT_EQ(r.trials.size(), 4u);
  for (const auto& t : r.trials) {
    EXPECT_GE(t.score, r.best_score);
    EXPECT_TRUE(t.spec.hidden_dim == 4 || t.spec.hidden_dim == 8);
    EXPECT_GE(t.spec.learning_rate, space.lr_min);
    EXPECT_LE(t.spec.learning_rate, space.lr_max);
    EXPECT_GE(t.spec.dropout, 0.0);
    EXPECT_LE(t.spec.dropout, 0.5);
  }
  const auto again = hyperparameter_search(base, space, 4, problem.variant, 77, 3);
  EXPECT_EQ(again.best, r.best);
  EXPECT_EQ(again.best_score, r.best_score);
}

TEST(Search, AllDivergedTrialsRaise) {
  auto v = newscast::testing::random_variant(60, 2, 2, 3);
  for (auto& y : v.y) y = 1e300;
  ModelSpec base = spec_for(Arch::FFNN, v);
  base.epochs = 2;
  SearchSpace space;
  space.batch_sizes = {8};
  space.hidden_dims = {4};
  EXPECT_THROW(hyperparameter_search(base, space, 2, v, 1, 3), NumericError);
}
