#include "ust/losses.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace ust;

namespace {

// Exhaustive CTC oracle: enumerate every frame-level path, collapse repeats
// then blanks, and sum the probabilities of paths matching the target.
double ctc_brute_force(const Tensor& logits, const std::vector<int64_t>& targets,
                       int64_t blank) {
  const int64_t T = logits.dim(0), vocab = logits.dim(1);
  Tensor logp = log_softmax(logits, 1);
  std::vector<int64_t> path(static_cast<size_t>(T), 0);
  double total = 0.0;
  while (true) {
    std::vector<int64_t> collapsed;
    for (int64_t t = 0; t < T; ++t) {
      int64_t s = path[static_cast<size_t>(t)];
      if (t > 0 && s == path[static_cast<size_t>(t - 1)]) continue;
      if (s != blank) collapsed.push_back(s);
    }
    if (collapsed == targets) {
      double lp = 0.0;
      for (int64_t t = 0; t < T; ++t) lp += logp.at(t, path[static_cast<size_t>(t)]);
      total += std::exp(lp);
    }
    int64_t pos = T - 1;
    while (pos >= 0 && path[static_cast<size_t>(pos)] == vocab - 1) {
      path[static_cast<size_t>(pos)] = 0;
      --pos;
    }
    if (pos < 0) break;
    ++path[static_cast<size_t>(pos)];
  }
  return -std::log(total);
}

Tensor random_logits(int64_t rows, int64_t cols, Rng& rng) {
  Tensor t({rows, cols});
  for (int64_t i = 0; i < t.size(); ++i) t.at(i) = rng.uniform(-2.0, 2.0);
  return t;
}

}  // namespace

TEST(MlmLoss, PerfectLogitsApproachZero) {
  Tensor logits({3, 4});
  std::vector<int64_t> z{1, 2, 0};
  for (int64_t i = 0; i < 3; ++i) logits.at(i, z[static_cast<size_t>(i)]) = 20.0;
  MaskSet m;
  m.total_length = 3;
  m.timesteps = {0, 1, 2};
  EXPECT_LT(mlm_loss(logits, z, m).item(), 1e-8);
}

TEST(MlmLoss, UniformLogitsGiveLogC) {
  Tensor logits({5, 7});
  std::vector<int64_t> z{0, 1, 2, 3, 4};
  MaskSet m;
  m.total_length = 5;
  m.timesteps = {1, 3};
  EXPECT_NEAR(mlm_loss(logits, z, m).item(), std::log(7.0), 1e-12);
}

TEST(MlmLoss, UnmaskedStepsGetNoGradient) {
  Rng rng(1);
  Tensor logits = random_logits(4, 5, rng);
  logits.set_requires_grad(true);
  std::vector<int64_t> z{0, 1, 2, 3};
  MaskSet m;
  m.total_length = 4;
  m.timesteps = {1, 2};
  backward(mlm_loss(logits, z, m));
  const auto& g = logits.grad();
  for (int64_t j = 0; j < 5; ++j) {
    EXPECT_EQ(g[static_cast<size_t>(0 * 5 + j)], 0.0);
    EXPECT_EQ(g[static_cast<size_t>(3 * 5 + j)], 0.0);
    EXPECT_NE(g[static_cast<size_t>(1 * 5 + j)], 0.0);
  }
}

TEST(MlmLoss, EmptyMaskRejected) {
  Tensor logits({2, 3});
  MaskSet m;
  m.total_length = 2;
  EXPECT_THROW(mlm_loss(logits, {0, 1}, m), ContractError);
}

TEST(ReconL1, ZeroForIdenticalInputs) {
  Rng rng(2);
  Tensor x = random_logits(4, 3, rng);
  EXPECT_DOUBLE_EQ(recon_l1(x, x).item(), 0.0);
}

TEST(ReconL1, HandComputedSingleFrame) {
  Tensor y({1, 2}, {0.5, -0.5});
  Tensor x({1, 2}, {0.0, 0.0});
  EXPECT_DOUBLE_EQ(recon_l1(y, x).item(), 1.0);
}

TEST(ReconL1, MatchesElementwiseLoopOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor y = random_logits(6, 5, rng);
    Tensor x = random_logits(6, 5, rng);
    double expect = 0.0;
    for (int64_t i = 0; i < y.size(); ++i) expect += std::fabs(y.at(i) - x.at(i));
    expect /= 6.0;
    EXPECT_NEAR(recon_l1(y, x).item(), expect, 1e-12);
  }
}

TEST(StopBce, StronglyCorrectLogitsNearZero) {
  Tensor logits({4}, {-20, -20, -20, 20});
  EXPECT_LT(stop_bce(logits, 3).item(), 1e-6);
}

TEST(StopBce, AllZeroLogitsUnitWeightIsLn2) {
  Tensor logits({2}, {0.0, 0.0});
  EXPECT_NEAR(stop_bce(logits, 1, 1.0).item(), std::log(2.0), 1e-12);
}

TEST(StopBce, GradientMatchesFiniteDifferences) {
  Rng rng(4);
  Tensor logits({5});
  for (int64_t i = 0; i < 5; ++i) logits.at(i) = rng.uniform(-2, 2);
  double err = grad_check([&](const Tensor& x) { return stop_bce(x, 4, 5.0); }, logits);
  EXPECT_LT(err, 1e-4);
}

TEST(StopBce, BadFinalIndexRejected) {
  Tensor logits({3});
  EXPECT_THROW(stop_bce(logits, 3), ContractError);
  EXPECT_THROW(stop_bce(logits, -1), ContractError);
}

TEST(TextMle, UniformLogitsGiveLogVocab) {
  Tensor logits({4, 9});
  EXPECT_NEAR(text_mle(logits, {0, 1, 2, 3}).item(), std::log(9.0), 1e-12);
}

TEST(TextMle, PerfectLogitsApproachZero) {
  Tensor logits({3, 5});
  std::vector<int64_t> t{2, 0, 4};
  for (int64_t i = 0; i < 3; ++i) logits.at(i, t[static_cast<size_t>(i)]) = 25.0;
  EXPECT_LT(text_mle(logits, t).item(), 1e-9);
}

TEST(TextMle, MatchesLoopOracle) {
  Rng rng(5);
  Tensor logits = random_logits(6, 4, rng);
  std::vector<int64_t> t{0, 3, 1, 2, 2, 0};
  Tensor lsm = log_softmax(logits, 1);
  double expect = 0.0;
  for (int64_t i = 0; i < 6; ++i) expect -= lsm.at(i, t[static_cast<size_t>(i)]);
  expect /= 6.0;
  EXPECT_NEAR(text_mle(logits, t).item(), expect, 1e-12);
}

TEST(CtcLoss, SingleFrameSingleToken) {
  Rng rng(6);
  Tensor logits = random_logits(1, 3, rng);
  Tensor lsm = log_softmax(logits, 1);
  EXPECT_NEAR(ctc_loss(logits, {2}).item(), -lsm.at(0, 2), 1e-12);
}

TEST(CtcLoss, ThreeFrameTwoLabelEnumeration) {
  Rng rng(7);
  Tensor logits = random_logits(3, 3, rng);
  std::vector<int64_t> target{1, 2};
  EXPECT_NEAR(ctc_loss(logits, target).item(), ctc_brute_force(logits, target, 0), 1e-9);
}

TEST(CtcLoss, MatchesEnumerationOverFullGrid) {
  // All T <= 6, vocab <= 4 (blank + up to 3 labels), |target| <= 3.
  Rng rng(8);
  int checked = 0;
  for (int64_t T = 1; T <= 6; ++T)
    for (int64_t vocab = 2; vocab <= 4; ++vocab)
      for (int64_t len = 0; len <= 3; ++len) {
        std::vector<int64_t> target(static_cast<size_t>(len), 1);
        while (true) {
          if (ctc_min_frames(target) <= T) {
            Tensor logits = random_logits(T, vocab, rng);
            EXPECT_NEAR(ctc_loss(logits, target).item(),
                        ctc_brute_force(logits, target, 0), 1e-9)
                << "T=" << T << " vocab=" << vocab << " len=" << len;
            ++checked;
          } else {
            Tensor logits = random_logits(T, vocab, rng);
            EXPECT_THROW(ctc_loss(logits, target), NumericError);
          }
          int64_t pos = len - 1;
          while (pos >= 0 && target[static_cast<size_t>(pos)] == vocab - 1) {
            target[static_cast<size_t>(pos)] = 1;
            --pos;
          }
          if (pos < 0) break;
          ++target[static_cast<size_t>(pos)];
        }
      }
  EXPECT_GT(checked, 100);
}

TEST(CtcLoss, GradientMatchesFiniteDifferences) {
  Rng rng(9);
  Tensor logits = random_logits(4, 4, rng);
  std::vector<int64_t> target{1, 3};
  double err = grad_check([&](const Tensor& x) { return ctc_loss(x, target); }, logits);
  EXPECT_LT(err, 1e-4);
}

TEST(CtcLoss, RepeatedLabelNeedsSeparatorFrame) {
  Rng rng(10);
  Tensor logits = random_logits(2, 3, rng);
  EXPECT_THROW(ctc_loss(logits, {1, 1}), NumericError);
  Tensor logits3 = random_logits(3, 3, rng);
  EXPECT_NEAR(ctc_loss(logits3, {1, 1}).item(), ctc_brute_force(logits3, {1, 1}, 0), 1e-9);
}

TEST(CtcLoss, BlankInTargetRejected) {
  Tensor logits({3, 3});
  EXPECT_THROW(ctc_loss(logits, {0, 1}), ContractError);
}

TEST(PretrainTotal, AllZeroPartsGiveZero) {
  PretrainParts parts;
  parts.mlm = Tensor::scalar(0.0);
  parts.l1 = Tensor::scalar(0.0);
  parts.bce = Tensor::scalar(0.0);
  parts.mle = Tensor::scalar(0.0);
  parts.diversity = Tensor::scalar(0.0);
  EXPECT_DOUBLE_EQ(pretrain_total(parts, 0.7).item(), 0.0);
}

TEST(PretrainTotal, HandArithmetic) {
  PretrainParts parts;
  parts.mlm = Tensor::scalar(1.0);
  parts.l1 = Tensor::scalar(1.0);
  parts.bce = Tensor::scalar(1.0);
  parts.mle = Tensor::scalar(1.0);
  parts.diversity = Tensor::scalar(-0.3);
  EXPECT_NEAR(pretrain_total(parts, 0.1).item(), 3.97, 1e-12);
}

TEST(PretrainTotal, GradientIsSumOfPartGradients) {
  Rng rng(11);
  Tensor x({4});
  for (int64_t i = 0; i < 4; ++i) x.at(i) = rng.uniform(0.5, 2.0);
  x.set_requires_grad(true);
  PretrainParts parts;
  parts.mlm = mean(mul(x, x));
  parts.l1 = sum(x);
  parts.diversity = mul_scalar(sum(x), -0.5);
  backward(pretrain_total(parts, 0.1));
  std::vector<double> combined = x.grad();
  Tensor y = x.detach();
  y.set_requires_grad(true);
  backward(mean(mul(y, y)));
  backward(sum(y));
  backward(mul_scalar(mul_scalar(sum(y), -0.5), 0.1));
  for (int64_t i = 0; i < 4; ++i)
    EXPECT_NEAR(combined[static_cast<size_t>(i)], y.grad()[static_cast<size_t>(i)], 1e-12);
}

TEST(PretrainTotal, SkipsUndefinedParts) {
  PretrainParts parts;
  parts.mle = Tensor::scalar(2.5);
  EXPECT_DOUBLE_EQ(pretrain_total(parts, 0.1).item(), 2.5);
  PretrainParts none;
  EXPECT_THROW(pretrain_total(none, 0.1), ContractError);
}

TEST(JointDecodeScore, PureDecoderAtAlphaOne) {
  DecodeConfig cfg;
  cfg.alpha = 1.0;
  cfg.beta = 0.0;
  EXPECT_DOUBLE_EQ(joint_decode_score(-1.25, -99.0, -7.0, cfg), -1.25);
}

TEST(JointDecodeScore, HandArithmetic) {
  DecodeConfig cfg;
  cfg.alpha = 0.5;
  cfg.beta = 1.0;
  EXPECT_DOUBLE_EQ(joint_decode_score(-1.0, -3.0, -2.0, cfg), -4.0);
}

TEST(DecodeConfig, Validation) {
  DecodeConfig cfg;
  cfg.alpha = 1.5;
  EXPECT_THROW(cfg.validate(), ConfigError);
  DecodeConfig cfg2;
  cfg2.beam = 0;
  EXPECT_THROW(cfg2.validate(), ConfigError);
}

TEST(GuidedAttention, DiagonalBeatsAntiDiagonal) {
  const int64_t T = 8;
  Tensor diag({T, T});
  Tensor anti({T, T});
  for (int64_t t = 0; t < T; ++t) {
    diag.at(t, t) = 1.0;
    anti.at(t, T - 1 - t) = 1.0;
  }
  double d = guided_attention_loss({diag}).item();
  double a = guided_attention_loss({anti}).item();
  EXPECT_LT(d, a);
  EXPECT_GE(d, 0.0);
}

TEST(GuidedAttention, GradientMatchesFiniteDifferences) {
  Rng rng(12);
  Tensor logits = random_logits(5, 6, rng);
  double err = grad_check(
      [&](const Tensor& x) { return guided_attention_loss({softmax(x, 1)}); }, logits);
  EXPECT_LT(err, 1e-5);
}

TEST(Losses, MeanVsSumModes) {
  Rng rng(13);
  Tensor y = random_logits(4, 3, rng);
  Tensor x = random_logits(4, 3, rng);
  EXPECT_NEAR(recon_l1(y, x, false).item(), recon_l1(y, x, true).item() * 4.0, 1e-12);
  Tensor logits = random_logits(5, 4, rng);
  std::vector<int64_t> t{1, 2, 0, 3, 1};
  EXPECT_NEAR(text_mle(logits, t, false).item(), text_mle(logits, t, true).item() * 5.0,
              1e-12);
}
