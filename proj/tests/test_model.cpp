#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "tcnaa/checkpoint.hpp"
#include "tcnaa/gradcheck.hpp"
#include "tcnaa/model.hpp"

using namespace tcnaa;
namespace fs = std::filesystem;

namespace {

Tensor random_tensor(Shape s, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(std::move(s));
  for (double& v : t.values()) v = rng.uniform(-1.0, 1.0);
  return t;
}

ModelConfig small_config() {
  ModelConfig c;
  c.input_features = 5;
  c.filters = {6, 6, 4};
  c.kernel = 3;
  return c;
}

// Input steps whose perturbation moves the last-layer activation at the final step.
std::size_t probe_receptive_field(const ModelConfig& cfg, std::size_t steps) {
  const ModelParams params = init_params(cfg, 3);
  const Tensor x = random_tensor({1, steps, cfg.input_features}, 4);
  ForwardTrace base;
  predict(params, cfg, x, &base);
  std::size_t count = 0;
  for (std::size_t t = 0; t < steps; ++t) {
    Tensor xp = x;
    for (std::size_t f = 0; f < cfg.input_features; ++f) xp.at(0, t, f) += 0.5;
    ForwardTrace tr;
    predict(params, cfg, xp, &tr);
    const Tensor& a = base.pairs[0].back();
    const Tensor& b = tr.pairs[0].back();
    const std::size_t w = a.dim(1);
    for (std::size_t c = 0; c < w; ++c)
      if (a.at(steps - 1, c) != b.at(steps - 1, c)) {
        ++count;
        break;
      }
  }
  return count;
}

}  // namespace

TEST(ParameterCount, DefaultConfigByHand) {
  // attention 2*30*30 + 30*30; block 0: 50*30*15 + 50 + projection 50*30 + 50;
  // blocks 1, 2: 50*50*15 + 50; head 12*50 + 12.
  const std::size_t hand = (2 * 900 + 900) + (22500 + 50 + 1500 + 50) + 2 * (37500 + 50) + (600 + 12);
  EXPECT_EQ(hand, 102512u);
  EXPECT_EQ(parameter_count(ModelConfig{}), hand);
  EXPECT_EQ(init_params(ModelConfig{}, 1).scalar_count(), hand);
}

TEST(ParameterCount, MatchesMaterializedParametersAcrossConfigs) {
  for (auto placement : {AttentionPlacement::PreTcnOnly, AttentionPlacement::PostTcn,
                         AttentionPlacement::EveryLayer, AttentionPlacement::None})
    for (bool residual : {true, false}) {
      ModelConfig c = small_config();
      c.attention = placement;
      c.residual = residual;
      c.d_k = placement == AttentionPlacement::EveryLayer ? 0 : 3;
      EXPECT_EQ(init_params(c, 2).scalar_count(), parameter_count(c));
    }
}

TEST(ParameterCount, ZeroLayersIsHeadOnly) {
  ModelConfig c;
  c.filters = {};
  c.dilations = {};
  c.attention = AttentionPlacement::None;
  EXPECT_EQ(parameter_count(c), 12u * 30 + 12);
}

TEST(ParameterCount, DoublingFiltersGrowsByConfigArithmetic) {
  ModelConfig a;
  a.attention = AttentionPlacement::None;
  ModelConfig b = a;
  b.filters = {100, 100, 100};
  EXPECT_EQ(parameter_count(b) - parameter_count(a),
            (100 * 30 * 15 + 100 + 100 * 30 + 100 + 2 * (100 * 100 * 15 + 100) + 12 * 100) -
                (50 * 30 * 15 + 50 + 50 * 30 + 50 + 2 * (50 * 50 * 15 + 50) + 12 * 50));
}

TEST(ReceptiveField, Formula) {
  EXPECT_EQ(receptive_field(ModelConfig{}), 99u);
  ModelConfig c;
  c.kernel = 2;
  c.filters = {50};
  c.dilations = {1};
  EXPECT_EQ(receptive_field(c), 2u);
  c.filters = {50, 50, 50};
  c.dilations = {1, 2, 4};
  EXPECT_EQ(receptive_field(c), 8u);
}

TEST(ReceptiveField, BruteForceProbeMatchesFormulaForKernelTwo) {
  ModelConfig c = small_config();
  c.kernel = 2;
  c.attention = AttentionPlacement::None;
  EXPECT_EQ(probe_receptive_field(c, 24), 8u);
  c.filters = {6};
  c.dilations = {1};
  EXPECT_EQ(probe_receptive_field(c, 24), 2u);
}

TEST(Config, ValidationRules) {
  ModelConfig c;
  c.dilations = {1, 2, 3};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = ModelConfig{};
  c.filters = {50, 50};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = ModelConfig{};
  c.dropout = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_NO_THROW(ModelConfig{}.validate());
}

TEST(Attention, SingleStepReducesToValueProjection) {
  Tape tape;
  const Tensor h = random_tensor({1, 4}, 5);
  const AttentionParams p{random_tensor({3, 4}, 6), random_tensor({3, 4}, 7), random_tensor({4, 4}, 8)};
  const AttentionVars av{tape.constant(p.w_q), tape.constant(p.w_k), tape.constant(p.w_v)};
  const Tensor out = attention_forward(tape.constant(h), av, MaskMode::NegInf).value();
  for (std::size_t f = 0; f < 4; ++f) {
    double v = 0;
    for (std::size_t g = 0; g < 4; ++g) v += h[g] * p.w_v.at(f, g);
    EXPECT_NEAR(out[f], h[f] * v, 1e-15);
  }
}

TEST(Attention, ZeroQueryKeyGivesRunningMeanOfValues) {
  const std::size_t T = 7, F = 3;
  Tape tape;
  const Tensor h = random_tensor({T, F}, 9), wv = random_tensor({F, F}, 10);
  const AttentionVars av{tape.constant(Tensor(Shape{2, F})), tape.constant(Tensor(Shape{2, F})),
                         tape.constant(wv)};
  const Tensor out = attention_forward(tape.constant(h), av, MaskMode::NegInf).value();
  std::vector<double> running(F, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t f = 0; f < F; ++f) {
      double v = 0;
      for (std::size_t g = 0; g < F; ++g) v += h.at(t, g) * wv.at(f, g);
      running[f] += v;
    }
    for (std::size_t f = 0; f < F; ++f)
      EXPECT_NEAR(out.at(t, f), h.at(t, f) * running[f] / double(t + 1), 1e-14);
  }
}

TEST(Attention, ZeroLiteralMaskLeaksTheFuture) {
  const std::size_t T = 5, F = 3;
  const Tensor h = random_tensor({T, F}, 11);
  const AttentionParams p{random_tensor({F, F}, 12), random_tensor({F, F}, 13), random_tensor({F, F}, 14)};
  auto run = [&](const Tensor& x, MaskMode m) {
    Tape tape;
    return attention_forward(tape.constant(x), {tape.constant(p.w_q), tape.constant(p.w_k), tape.constant(p.w_v)}, m)
        .value();
  };
  Tensor hp = h;
  hp.at(T - 1, 0) += 1.0;
  EXPECT_EQ(run(h, MaskMode::NegInf).at(0, 0), run(hp, MaskMode::NegInf).at(0, 0));
  EXPECT_NE(run(h, MaskMode::ZeroLiteral).at(0, 0), run(hp, MaskMode::ZeroLiteral).at(0, 0));
}

TEST(Attention, GradientOfPastOutputsWithRespectToFutureInputsIsZero) {
  const std::size_t T = 6, F = 3;
  const Tensor h = random_tensor({T, F}, 15);
  const AttentionParams p{random_tensor({2, F}, 16), random_tensor({2, F}, 17), random_tensor({F, F}, 18)};
  for (std::size_t t = 0; t < T; ++t) {
    Tape tape;
    const Var x = tape.parameter(h);
    const Var out = attention_forward(x, {tape.constant(p.w_q), tape.constant(p.w_k), tape.constant(p.w_v)},
                                      MaskMode::NegInf);
    Tensor pick(Shape{T, F});
    for (std::size_t f = 0; f < F; ++f) pick.at(t, f) = 1.0 + double(f);
    tape.backward(sum(mul(out, tape.constant(pick))));
    for (std::size_t tp = t + 1; tp < T; ++tp)
      for (std::size_t f = 0; f < F; ++f) EXPECT_EQ(x.grad().at(tp, f), 0.0);
  }
}

TEST(TcnBlock, Examples) {
  Tape tape;
  const Tensor x = random_tensor({4, 10}, 19);
  TcnBlockVars zero{tape.constant(Tensor(Shape{4, 4, 3})), tape.constant(Tensor(Shape{4})), {}, {}};
  Rng rng(1);
  for (double v : tcn_block_forward(tape.constant(x), zero, 1, 0.0, false, &rng, false).value().values())
    EXPECT_EQ(v, 0.0);
  EXPECT_EQ(tcn_block_forward(tape.constant(x), zero, 2, 0.0, false, &rng, true).value(), x);
  for (std::size_t d : {1u, 2u, 4u}) {
    TcnBlockVars w{tape.constant(random_tensor({5, 4, 15}, 20)), tape.constant(random_tensor({5}, 21)),
                   tape.constant(random_tensor({5, 4}, 22)), tape.constant(random_tensor({5}, 23))};
    EXPECT_EQ(tcn_block_forward(tape.constant(x), w, d, 0.5, true, &rng, true).shape(), (Shape{5, 10}));
  }
}

TEST(TcnBlock, IdentityResidualNeedsMatchingWidths) {
  Tape tape;
  TcnBlockVars w{tape.constant(random_tensor({5, 4, 3}, 24)), tape.constant(Tensor(Shape{5})), {}, {}};
  EXPECT_THROW(tcn_block_forward(tape.constant(random_tensor({4, 6}, 25)), w, 1, 0.0, false, nullptr, true),
               ShapeError);
}

TEST(Model, FullSizeInputGivesTwelveClassDistribution) {
  const ModelConfig cfg;
  const Tensor out = predict(init_params(cfg, 1), cfg, random_tensor({6, 375, 30}, 26));
  ASSERT_EQ(out.shape(), (Shape{12}));
  double s = 0;
  for (double v : out.values()) {
    EXPECT_GE(v, 0.0);
    s += v;
  }
  EXPECT_NEAR(s, 1.0, 1e-9);
}

TEST(Model, IdenticalPairsEqualSinglePairAndPairOrderIsIrrelevant) {
  const ModelConfig cfg = small_config();
  const ModelParams params = init_params(cfg, 2);
  const Tensor one = random_tensor({1, 12, 5}, 27);
  Tensor six(Shape{6, 12, 5});
  for (std::size_t p = 0; p < 6; ++p)
    std::copy(one.values().begin(), one.values().end(), six.values().begin() + static_cast<long>(p * 60));
  const Tensor a = predict(params, cfg, one), b = predict(params, cfg, six);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-15);

  const Tensor x = random_tensor({6, 12, 5}, 28);
  Tensor perm(x.shape());
  const std::size_t order[6] = {3, 0, 5, 1, 4, 2};
  for (std::size_t p = 0; p < 6; ++p)
    std::copy_n(x.values().begin() + static_cast<long>(order[p] * 60), 60,
                perm.values().begin() + static_cast<long>(p * 60));
  const Tensor ya = predict(params, cfg, x), yb = predict(params, cfg, perm);
  for (std::size_t i = 0; i < ya.size(); ++i) EXPECT_NEAR(ya[i], yb[i], 1e-15);
}

TEST(Model, EvaluationIsDeterministicTrainingUsesDropout) {
  const ModelConfig cfg = small_config();
  const ModelParams params = init_params(cfg, 3);
  const Tensor x = random_tensor({2, 10, 5}, 29);
  EXPECT_EQ(predict(params, cfg, x), predict(params, cfg, x));
  Tape tape;
  Rng rng(5);
  const ParamVars pv = bind_params(tape, params, false);
  const Tensor train_out = model_forward(tape.constant(x), pv, cfg, {true, &rng}).value();
  EXPECT_NE(train_out, predict(params, cfg, x));
}

TEST(Model, EveryPlacementRunsAndIsCausal) {
  for (auto placement : {AttentionPlacement::PreTcnOnly, AttentionPlacement::PostTcn,
                         AttentionPlacement::EveryLayer, AttentionPlacement::None}) {
    ModelConfig cfg = small_config();
    cfg.attention = placement;
    const ModelParams params = init_params(cfg, 4);
    const std::size_t T = 12;
    const Tensor x = random_tensor({1, T, 5}, 30);
    ForwardTrace base;
    predict(params, cfg, x, &base);
    for (std::size_t tp = 0; tp < T; ++tp) {
      Tensor xp = x;
      xp.at(0, tp, 2) += 1.0;
      ForwardTrace tr;
      predict(params, cfg, xp, &tr);
      for (std::size_t layer = 0; layer < base.pairs[0].size(); ++layer) {
        const Tensor& a = base.pairs[0][layer];
        const Tensor& b = tr.pairs[0][layer];
        for (std::size_t t = 0; t < tp; ++t)
          for (std::size_t c = 0; c < a.dim(1); ++c) ASSERT_EQ(a.at(t, c), b.at(t, c));
      }
    }
  }
}

TEST(Model, InitializationIsSeededGlorotUniform) {
  const ModelConfig cfg;
  EXPECT_EQ(init_params(cfg, 9), init_params(cfg, 9));
  EXPECT_NE(init_params(cfg, 9), init_params(cfg, 10));
  const ModelParams p = init_params(cfg, 9);
  const double limit = std::sqrt(6.0 / (30.0 * 15 + 50.0 * 15));
  for (double v : p.blocks[0].weight.values()) EXPECT_LE(std::abs(v), limit);
  for (double v : p.blocks[0].bias.values()) EXPECT_EQ(v, 0.0);
}

TEST(Model, FullGradientCheckOnTinyConfig) {
  const GradCheckReport r = model_grad_check(tiny_model_config());
  EXPECT_LT(r.max_error, kModelTolerance);
}

TEST(Checkpoint, RoundTripIsBitwise) {
  const ModelConfig cfg = small_config();
  const ModelParams p = init_params(cfg, 6);
  const auto bytes = encode_checkpoint(p, cfg);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "TCNK");
  EXPECT_EQ(decode_checkpoint(bytes, cfg), p);
  const fs::path path = fs::path(::testing::TempDir()) / "tcnaa_model.tcnk";
  save_checkpoint(path, p, cfg);
  EXPECT_EQ(load_checkpoint(path, cfg), p);
  EXPECT_EQ(peek_checkpoint_config(path), cfg);
}

TEST(Checkpoint, RejectsConfigMismatchAndCorruption) {
  const ModelConfig cfg = small_config();
  const auto bytes = encode_checkpoint(init_params(cfg, 6), cfg);
  ModelConfig other = cfg;
  other.kernel = 5;
  EXPECT_THROW(decode_checkpoint(bytes, other), FormatError);
  other = cfg;
  other.mask = MaskMode::ZeroLiteral;
  EXPECT_THROW(decode_checkpoint(bytes, other), FormatError);
  auto cut = bytes;
  cut.resize(cut.size() - 8);
  EXPECT_THROW(decode_checkpoint(cut, cfg), FormatError);
  auto extra = bytes;
  extra.push_back(0);
  EXPECT_THROW(decode_checkpoint(extra, cfg), FormatError);
}
