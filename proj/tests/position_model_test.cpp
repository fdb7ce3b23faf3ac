#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include <gtest/gtest.h>

#include "cohere/errors.hpp"
#include "cohere/position_model.hpp"
#include "test_util.hpp"

namespace cohere {
namespace {

using testing::random_input;
using testing::small_config;

// Straight-loop reference network over the documented parameter layout.
class ReferenceNet {
 public:
  explicit ReferenceNet(const PositionModel& m) : m_(m) {}

  std::vector<double> forward(const EncodedSentence& xs) const {
    const auto& cfg = m_.config();
    const std::size_t T = xs.length();
    std::vector<std::vector<double>> seq(T);
    for (std::size_t t = 0; t < T; ++t) {
      for (int c = 0; c < cfg.input_dim; ++c) seq[t].push_back(xs.features(static_cast<Eigen::Index>(t), c));
    }
    std::vector<double> readout;
    for (std::size_t l = 0; l < cfg.layer_widths.size(); ++l) {
      const auto H = static_cast<std::size_t>(cfg.layer_widths[l]);
      const auto prefix = "layer" + std::to_string(l);
      const auto fwd = run(seq, prefix + ".forward", H, false);
      const auto bwd = run(seq, prefix + ".backward", H, true);
      std::vector<std::vector<double>> next(T);
      for (std::size_t t = 0; t < T; ++t) {
        next[t] = fwd[t];
        next[t].insert(next[t].end(), bwd[t].begin(), bwd[t].end());
      }
      readout = fwd[T - 1];
      readout.insert(readout.end(), bwd[0].begin(), bwd[0].end());
      seq = std::move(next);
    }
    const auto& W = m_.block("output.weights");
    const auto& b = m_.block("output.bias");
    std::vector<double> logits(static_cast<std::size_t>(cfg.q));
    for (std::size_t c = 0; c < logits.size(); ++c) {
      double z = at(b, 0, c);
      for (std::size_t r = 0; r < readout.size(); ++r) z += readout[r] * at(W, r, c);
      logits[c] = z;
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0;
    for (auto& z : logits) sum += (z = std::exp(z - mx));
    for (auto& z : logits) z /= sum;
    return logits;
  }

 private:
  double at(const ParameterBlock& b, std::size_t r, std::size_t c) const {
    return m_.parameters()[b.offset + r + c * b.rows];
  }

  static double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

  std::vector<std::vector<double>> run(const std::vector<std::vector<double>>& xs, const std::string& cell,
                                       std::size_t H, bool reverse) const {
    const auto& Wx = m_.block(cell + ".input");
    const auto& Wh = m_.block(cell + ".recurrent");
    const auto& b = m_.block(cell + ".bias");
    const std::size_t T = xs.size();
    std::vector<std::vector<double>> out(T);
    std::vector<double> h(H, 0.0), c(H, 0.0);
    for (std::size_t step = 0; step < T; ++step) {
      const std::size_t t = reverse ? T - 1 - step : step;
      std::vector<double> z(4 * H);
      for (std::size_t j = 0; j < 4 * H; ++j) {
        double s = at(b, 0, j);
        for (std::size_t r = 0; r < xs[t].size(); ++r) s += xs[t][r] * at(Wx, r, j);
        for (std::size_t r = 0; r < H; ++r) s += h[r] * at(Wh, r, j);
        z[j] = s;
      }
      for (std::size_t k = 0; k < H; ++k) {
        const double i = sigmoid(z[k]);
        const double f = sigmoid(z[H + k]);
        const double g = std::tanh(z[2 * H + k]);
        const double o = sigmoid(z[3 * H + k]);
        c[k] = f * c[k] + i * g;
        h[k] = o * std::tanh(c[k]);
      }
      out[t] = h;
    }
    return out;
  }

  const PositionModel& m_;
};

TEST(InitModel, DeterministicInSeed) {
  const auto cfg = small_config();
  const auto a = init_model(cfg);
  const auto b = init_model(cfg);
  EXPECT_TRUE(std::equal(a.parameters().begin(), a.parameters().end(), b.parameters().begin()));
  auto other = cfg;
  other.seed = 2;
  const auto c = init_model(other);
  EXPECT_FALSE(std::equal(a.parameters().begin(), a.parameters().end(), c.parameters().begin()));
}

TEST(InitModel, PaperScaleShapes) {
  ModelConfig cfg;
  cfg.q = 15;
  cfg.layer_widths = {256, 256};
  cfg.layer_dropouts = {0.5, 0.25};
  cfg.input_dim = 900;
  const PositionModel m(cfg);
  const auto& w = m.block("layer0.forward.input");
  EXPECT_EQ(w.rows, 900u);
  EXPECT_EQ(w.cols, 1024u);
  EXPECT_EQ(m.block("layer1.backward.input").rows, 512u);
  EXPECT_EQ(m.block("layer1.backward.recurrent").rows, 256u);
  EXPECT_EQ(m.block("output.weights").rows, 512u);
  EXPECT_EQ(m.block("output.weights").cols, 15u);
  std::size_t total = 0;
  for (const auto& b : m.blocks()) {
    EXPECT_EQ(b.offset, total) << b.name;
    total += b.size();
  }
  EXPECT_EQ(total, m.parameter_count());
}

TEST(InitModel, ForgetBiasOnesOtherBiasesZero) {
  const auto m = init_model(small_config());
  for (const auto& b : m.blocks()) {
    if (b.name.find(".bias") == std::string::npos || b.name == "output.bias") continue;
    const std::size_t H = b.cols / 4;
    for (std::size_t j = 0; j < b.cols; ++j) {
      const double v = m.parameters()[b.offset + j];
      EXPECT_EQ(v, (j >= H && j < 2 * H) ? 1.0 : 0.0) << b.name << " " << j;
    }
  }
}

TEST(InitModel, InputWeightsWithinGlorotBound) {
  const auto m = init_model(small_config());
  const auto& b = m.block("layer0.forward.input");
  const double bound = std::sqrt(6.0 / static_cast<double>(b.rows + b.cols));
  for (std::size_t k = 0; k < b.size(); ++k) EXPECT_LE(std::abs(m.parameters()[b.offset + k]), bound);
}

TEST(InitModel, RecurrentWeightsHaveOrthonormalRows) {
  const auto m = init_model(small_config());
  const auto& b = m.block("layer1.forward.recurrent");
  const auto at = [&](std::size_t r, std::size_t c) { return m.parameters()[b.offset + r + c * b.rows]; };
  for (std::size_t a = 0; a < b.rows; ++a) {
    for (std::size_t c = 0; c < b.rows; ++c) {
      double dot = 0;
      for (std::size_t j = 0; j < b.cols; ++j) dot += at(a, j) * at(c, j);
      EXPECT_NEAR(dot, a == c ? 1.0 : 0.0, 1e-6);
    }
  }
}

TEST(ModelConfig, ValidateRejectsBadShapes) {
  auto cfg = small_config();
  cfg.q = 1;
  EXPECT_THROW(cfg.validate(), InvalidConfig);
  cfg = small_config();
  cfg.layer_dropouts = {0.1};
  EXPECT_THROW(cfg.validate(), InvalidConfig);
  cfg = small_config();
  cfg.layer_dropouts = {0.0, 1.0};
  EXPECT_THROW(cfg.validate(), InvalidConfig);
  cfg = small_config();
  cfg.layer_widths.clear();
  cfg.layer_dropouts.clear();
  EXPECT_THROW(cfg.validate(), InvalidConfig);
  EXPECT_EQ(ModelConfig::from_json(small_config().to_json()), small_config());
}

TEST(Forward, MatchesReferenceNetwork) {
  const auto cfg = small_config(4, 6, 7);
  const auto m = init_model(cfg);
  std::mt19937_64 rng(3);
  for (std::size_t len = 1; len <= 7; ++len) {
    const auto xs = random_input(cfg, len, rng);
    const auto got = forward(m, xs).probs;
    const auto want = ReferenceNet(m).forward(xs);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t k = 0; k < got.size(); ++k) EXPECT_NEAR(got[k], want[k], 1e-12) << "len " << len;
  }
}

TEST(Forward, OnSimplexAndRepeatable) {
  const auto cfg = small_config(5, 9, 6);
  const auto m = init_model(cfg);
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const auto xs = random_input(cfg, 1 + static_cast<std::size_t>(trial % 6), rng);
    const auto p = forward(m, xs);
    EXPECT_TRUE(p.on_simplex(1e-6));
    EXPECT_EQ(p, forward(m, xs));
  }
}

TEST(Forward, SingleTokenSentence) {
  const auto cfg = small_config(3, 5, 4);
  const auto m = init_model(cfg);
  std::mt19937_64 rng(5);
  const auto xs = random_input(cfg, 1, rng);
  const auto p = forward(m, xs);
  EXPECT_TRUE(p.on_simplex(1e-6));
  const auto want = ReferenceNet(m).forward(xs);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(p.probs[k], want[k], 1e-12);
}

TEST(Forward, PaddingIsIgnored) {
  const auto cfg = small_config(3, 5, 6);
  const auto m = init_model(cfg);
  std::mt19937_64 rng(6);
  auto xs = random_input(cfg, 3, rng);
  const auto p = forward(m, xs);
  // Garbage in padded rows must not matter once masked out.
  xs.features.row(4).setConstant(7.0f);
  EXPECT_EQ(forward(m, xs), p);
}

TEST(Forward, EmptyMaskThrows) {
  const auto cfg = small_config();
  const auto m = init_model(cfg);
  std::mt19937_64 rng(1);
  EXPECT_THROW(forward(m, random_input(cfg, 0, rng)), DegenerateInput);
}

TEST(Forward, BatchMatchesSingle) {
  const auto cfg = small_config(3, 5, 6);
  const auto m = init_model(cfg);
  std::mt19937_64 rng(7);
  std::vector<EncodedSentence> inputs;
  for (std::size_t k = 0; k < 9; ++k) inputs.push_back(random_input(cfg, 1 + k % 6, rng));
  std::vector<const EncodedSentence*> ptrs;
  for (const auto& x : inputs) ptrs.push_back(&x);
  const auto batch = forward_batch(m, ptrs);
  ASSERT_EQ(batch.size(), inputs.size());
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto single = forward(m, inputs[k]);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(batch[k].probs[c], single.probs[c], 1e-12);
  }
}

TEST(CrossEntropy, ClosedForms) {
  EXPECT_EQ(cross_entropy_loss(Ppd{{0, 1, 0}}, 1), 0.0);
  EXPECT_NEAR(cross_entropy_loss(Ppd::uniform(10), 3), 2.302585, 1e-6);
  EXPECT_NEAR(cross_entropy_loss(Ppd{{0.25, 0.75}}, 0), 1.386294, 1e-6);
  EXPECT_NEAR(cross_entropy_loss(Ppd{{0.0, 1.0}}, 0), -std::log(1e-12), 1e-9);
}

TEST(CrossEntropy, BadLabelThrows) {
  EXPECT_THROW(cross_entropy_loss(Ppd::uniform(3), 3), InvalidLabel);
  EXPECT_THROW(cross_entropy_loss(Ppd::uniform(3), -1), InvalidLabel);
}

TEST(Adamax, MatchesHandComputedSteps) {
  AdamaxParams p;
  AdamaxOptimizer opt(2, p);
  std::vector<double> x{1.0, -2.0};
  // Step 1: m = 0.1 g, u = |g|, update = lr / (1 - 0.9) * m / (u + eps).
  opt.step(x, std::vector<double>{0.5, -4.0});
  EXPECT_NEAR(x[0], 1.0 - 0.002 * 0.5 / (0.5 + 1e-7), 1e-15);
  EXPECT_NEAR(x[1], -2.0 + 0.002 * 4.0 / (4.0 + 1e-7), 1e-15);
  // Step 2 with a smaller gradient keeps u from step 1 (decayed).
  const double m0 = 0.9 * 0.05 + 0.1 * 0.1;
  const double u0 = std::max(0.999 * 0.5, 0.1);
  const double expected = x[0] - 0.002 / (1 - 0.81) * m0 / (u0 + 1e-7);
  opt.step(x, std::vector<double>{0.1, 0.0});
  EXPECT_NEAR(x[0], expected, 1e-15);
  EXPECT_EQ(opt.steps(), 2u);
}

std::vector<TrainingSample> random_dataset(const ModelConfig& cfg, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<TrainingSample> data;
  for (std::size_t k = 0; k < n; ++k) {
    data.push_back({random_input(cfg, 1 + k % static_cast<std::size_t>(cfg.l_max), rng),
                    static_cast<int>(k % static_cast<std::size_t>(cfg.q))});
  }
  return data;
}

TEST(Train, StepsPerEpoch) {
  const auto cfg = small_config();
  const auto data = random_dataset(cfg, 64, 1);
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 32;
  EXPECT_EQ(train(init_model(cfg), data, tc).history.optimizer_steps, 2u);
  tc.batch_size = 30;
  EXPECT_EQ(train(init_model(cfg), data, tc).history.optimizer_steps, 3u);
}

TEST(Train, MemorizesTenSamples) {
  const auto cfg = small_config(3, 15, 5);
  const auto data = random_dataset(cfg, 10, 2);
  TrainConfig tc;
  tc.epochs = 20;
  tc.batch_size = 5;
  tc.optimizer.learning_rate = 0.02;
  const auto r = train(init_model(cfg), data, tc);
  ASSERT_EQ(r.history.epochs.size(), 20u);
  const double first = r.history.epochs.front().train_loss;
  const double last = r.history.epochs.back().train_loss;
  EXPECT_LE(last, 0.5 * first) << "first " << first << " last " << last;
}

TEST(Train, DeterministicGivenSeeds) {
  auto cfg = small_config();
  cfg.layer_dropouts = {0.3, 0.2};
  const auto data = random_dataset(cfg, 40, 3);
  const auto val = random_dataset(cfg, 12, 4);
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 8;
  tc.shuffle_seed = 17;
  const auto a = train(init_model(cfg), data, tc, val);
  const auto b = train(init_model(cfg), data, tc, val);
  EXPECT_EQ(a.history, b.history);
  EXPECT_TRUE(std::equal(a.model.parameters().begin(), a.model.parameters().end(), b.model.parameters().begin()));
  ASSERT_TRUE(a.history.epochs[0].validation_loss.has_value());
  tc.shuffle_seed = 18;
  EXPECT_FALSE(train(init_model(cfg), data, tc, val).history == a.history);
}

TEST(Train, EpochCallbackAndValidation) {
  const auto cfg = small_config();
  const auto data = random_dataset(cfg, 20, 5);
  TrainConfig tc;
  tc.epochs = 3;
  std::vector<int> seen;
  tc.on_epoch = [&](int e, const EpochStats&) { seen.push_back(e); };
  const auto r = train(init_model(cfg), data, tc);
  EXPECT_EQ(seen, (std::vector<int>{0, 1, 2}));
  EXPECT_FALSE(r.history.epochs[0].validation_loss.has_value());
  EXPECT_TRUE(r.model.all_finite());
}

TEST(Train, NonFiniteLossAborts) {
  const auto cfg = small_config();
  auto data = random_dataset(cfg, 8, 6);
  data[3].input.features(0, 0) = std::numeric_limits<float>::quiet_NaN();
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 4;
  EXPECT_THROW(train(init_model(cfg), data, tc), NonFiniteLoss);
}

TEST(Train, ParametersStayFloatRepresentable) {
  const auto cfg = small_config();
  const auto data = random_dataset(cfg, 16, 7);
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 4;
  const auto r = train(init_model(cfg), data, tc);
  for (double v : r.model.parameters()) EXPECT_EQ(static_cast<double>(static_cast<float>(v)), v);
}

TEST(Evaluate, AccuracyAndLossAgreeWithForward) {
  const auto cfg = small_config();
  const auto m = init_model(cfg);
  const auto data = random_dataset(cfg, 30, 8);
  double loss = 0;
  std::size_t correct = 0;
  for (const auto& s : data) {
    const auto p = forward(m, s.input);
    loss += cross_entropy_loss(p, s.label);
    const auto arg = std::max_element(p.probs.begin(), p.probs.end()) - p.probs.begin();
    correct += arg == s.label;
  }
  const auto e = evaluate(m, data, 7);
  EXPECT_NEAR(e.loss, loss / 30, 1e-12);
  EXPECT_DOUBLE_EQ(e.accuracy, static_cast<double>(correct) / 30);
}

TEST(GradientCheck, SmallModelBelowTolerance) {
  const auto cfg = small_config(3, 15, 5);
  const auto m = init_model(cfg);
  std::mt19937_64 rng(9);
  for (std::size_t len : {1u, 3u, 5u}) {
    const TrainingSample s{random_input(cfg, len, rng), static_cast<int>(len % 3)};
    EXPECT_LT(gradient_check(m, s), 1e-3) << "len " << len;
  }
}

TEST(GradientCheck, DoubledGradientGivesOneThird) {
  const auto cfg = small_config(3, 15, 5);
  const auto m = init_model(cfg);
  std::mt19937_64 rng(10);
  const TrainingSample s{random_input(cfg, 4, rng), 1};
  auto grad = loss_gradient(m, s);
  for (auto& g : grad) g *= 2;
  const auto idx = gradient_check_indices(m, 200, 0);
  const ParameterLossFn loss = [&](std::span<const double> p) {
    PositionModel copy = m;
    std::copy(p.begin(), p.end(), copy.parameters().begin());
    return sample_loss(copy, s);
  };
  const std::vector<double> params(m.parameters().begin(), m.parameters().end());
  EXPECT_NEAR(compare_gradients(loss, params, grad, idx, 1e-4), 1.0 / 3.0, 1e-3);
}

TEST(GradientCheck, SubsampleSizeAndCoverage) {
  const auto m = init_model(small_config());
  const auto idx = gradient_check_indices(m, 200, 3);
  EXPECT_EQ(idx.size(), 200u);
  std::set<std::size_t> unique(idx.begin(), idx.end());
  EXPECT_EQ(unique.size(), idx.size());
  for (const auto& b : m.blocks()) {
    EXPECT_TRUE(std::any_of(idx.begin(), idx.end(), [&](std::size_t i) { return i >= b.offset && i < b.offset + b.size(); }))
        << b.name;
  }
  ModelConfig tiny = small_config(2, 1, 2);
  tiny.layer_widths = {1};
  tiny.layer_dropouts = {0.0};
  const auto t = init_model(tiny);
  EXPECT_EQ(gradient_check_indices(t, 200, 0).size(), t.parameter_count());
}

}  // namespace
}  // namespace cohere
