#include "ust/quantizer.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace ust;

namespace {

struct Fixture {
  ParamRegistry reg;
  Codebook cb;
  explicit Fixture(int64_t groups = 2, int64_t entries = 4, int64_t dim = 8,
                   uint64_t seed = 1)
      : cb([&] {
          QuantizerConfig cfg;
          cfg.groups = groups;
          cfg.entries = entries;
          Rng rng(seed);
          return Codebook::create(reg, cfg, dim, rng);
        }()) {}
};

// Exhaustive nearest-neighbor oracle over one group.
int64_t brute_force_nn(const Tensor& u, int64_t row, int64_t g, const Codebook& cb) {
  double best = 1e300;
  int64_t best_j = 0;
  for (int64_t j = 0; j < cb.entries; ++j) {
    double d = 0.0;
    for (int64_t c = 0; c < cb.subdim; ++c) {
      double diff = u.at(row, g * cb.subdim + c) - cb.tables[static_cast<size_t>(g)].at(j, c);
      d += diff * diff;
    }
    if (d < best) {
      best = d;
      best_j = j;
    }
  }
  return best_j;
}

}  // namespace

TEST(Quantize, ExactCodebookRowIsChosenAndCopied) {
  Fixture f;
  Tensor u({1, 8});
  for (int64_t c = 0; c < 4; ++c) {
    u.at(0, c) = f.cb.tables[0].at(2, c);
    u.at(0, 4 + c) = f.cb.tables[1].at(1, c);
  }
  QuantizerOutput q = quantize(u, f.cb);
  EXPECT_EQ(q.indices[0][0], 2);
  EXPECT_EQ(q.indices[0][1], 1);
  for (int64_t c = 0; c < 8; ++c) EXPECT_DOUBLE_EQ(q.quantized.at(0, c), u.at(0, c));
}

TEST(Quantize, EquidistantTieTakesLowerIndex) {
  ParamRegistry reg;
  QuantizerConfig cfg;
  cfg.groups = 1;
  cfg.entries = 3;
  Rng rng(1);
  Codebook cb = Codebook::create(reg, cfg, 2, rng);
  cb.tables[0].at(0, 0) = 1.0;
  cb.tables[0].at(0, 1) = 0.0;
  cb.tables[0].at(1, 0) = -1.0;
  cb.tables[0].at(1, 1) = 0.0;
  cb.tables[0].at(2, 0) = 5.0;
  cb.tables[0].at(2, 1) = 5.0;
  Tensor u({1, 2}, {0.0, 0.0});
  QuantizerOutput q = quantize(u, cb);
  EXPECT_EQ(q.indices[0][0], 0);
}

TEST(Quantize, MatchesBruteForceOracleOnRandomRows) {
  Fixture f(2, 7, 12, 3);
  Rng data(9);
  Tensor u = Tensor::randn({1000, 12}, data);
  QuantizerOutput q = quantize(u, f.cb);
  for (int64_t i = 0; i < 1000; ++i)
    for (int64_t g = 0; g < 2; ++g)
      EXPECT_EQ(q.indices[static_cast<size_t>(i)][static_cast<size_t>(g)],
                brute_force_nn(u, i, g, f.cb))
          << "row " << i << " group " << g;
}

TEST(Quantize, QuantizedRowsAreExactTableRows) {
  Fixture f;
  Rng data(4);
  Tensor u = Tensor::randn({20, 8}, data);
  QuantizerOutput q = quantize(u, f.cb);
  for (int64_t i = 0; i < 20; ++i)
    for (int64_t g = 0; g < 2; ++g) {
      int64_t j = q.indices[static_cast<size_t>(i)][static_cast<size_t>(g)];
      for (int64_t c = 0; c < 4; ++c)
        EXPECT_EQ(q.quantized.at(i, g * 4 + c), f.cb.tables[static_cast<size_t>(g)].at(j, c));
    }
}

TEST(Quantize, SoftProbRowsSumToOne) {
  Fixture f;
  Rng data(5);
  Tensor u = Tensor::randn({15, 8}, data);
  QuantizerOutput q = quantize(u, f.cb);
  for (const Tensor& p : q.soft_probs) {
    double s = 0.0;
    for (int64_t i = 0; i < p.size(); ++i) s += p.at(i);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Quantize, RejectsDimMismatch) {
  Fixture f;
  Tensor u({3, 9});
  EXPECT_THROW(quantize(u, f.cb), DimensionError);
}

TEST(Mixup, ZeroRatioIsIdentity) {
  Fixture f;
  Rng data(6), mix(7);
  Tensor u = Tensor::randn({10, 8}, data);
  QuantizerOutput q = quantize(u, f.cb);
  MixupResult m = mixup(u, q, 0.0, mix);
  EXPECT_TRUE(m.positions.empty());
  for (int64_t i = 0; i < u.size(); ++i) EXPECT_DOUBLE_EQ(m.mixed.at(i), u.at(i));
}

TEST(Mixup, FullRatioReplacesEveryRow) {
  Fixture f;
  Rng data(6), mix(7);
  Tensor u = Tensor::randn({10, 8}, data);
  QuantizerOutput q = quantize(u, f.cb);
  MixupResult m = mixup(u, q, 1.0, mix);
  EXPECT_EQ(m.positions.size(), 10u);
  for (int64_t i = 0; i < u.size(); ++i) EXPECT_DOUBLE_EQ(m.mixed.at(i), q.quantized.at(i));
}

TEST(Mixup, TenPercentOfTwentyReplacesExactlyTwoCodebookRows) {
  Fixture f;
  Rng data(8), mix(9);
  Tensor u = Tensor::randn({20, 8}, data);
  QuantizerOutput q = quantize(u, f.cb);
  MixupResult m = mixup(u, q, 0.1, mix);
  ASSERT_EQ(m.positions.size(), 2u);
  EXPECT_NE(m.positions[0], m.positions[1]);
  for (int64_t r : m.positions)
    for (int64_t g = 0; g < 2; ++g) {
      int64_t j = q.indices[static_cast<size_t>(r)][static_cast<size_t>(g)];
      for (int64_t c = 0; c < 4; ++c)
        EXPECT_EQ(m.mixed.at(r, g * 4 + c), f.cb.tables[static_cast<size_t>(g)].at(j, c));
    }
  // Untouched rows stay bit-identical.
  for (int64_t i = 0; i < 20; ++i) {
    if (i == m.positions[0] || i == m.positions[1]) continue;
    for (int64_t c = 0; c < 8; ++c) EXPECT_EQ(m.mixed.at(i, c), u.at(i, c));
  }
}

TEST(Mixup, StraightThroughGradientAtReplacedSteps) {
  Fixture f;
  Rng data(10), mix(11);
  Tensor u = Tensor::randn({6, 8}, data);
  u.set_requires_grad(true);
  QuantizerOutput q = quantize(u, f.cb);
  MixupResult m = mixup(u, q, 0.5, mix);
  Rng wr(12);
  Tensor w = Tensor::randn({6, 8}, wr);
  backward(sum(mul(m.mixed, w)));
  // d(loss)/d(u) equals d(loss)/d(mixed) everywhere, replaced steps included.
  for (int64_t i = 0; i < u.size(); ++i) EXPECT_DOUBLE_EQ(u.grad()[i], w.at(i));
}

TEST(Mixup, StraightThroughMatchesFiniteDifferencesWithFrozenPositions) {
  Fixture f;
  Rng data(13);
  Tensor u = Tensor::randn({8, 8}, data);
  std::vector<int64_t> frozen{1, 4};
  Rng wr(14);
  Tensor w = Tensor::randn({8, 8}, wr);
  // With positions and codebook rows frozen, the mixed tensor is piecewise
  // constant in u at replaced steps, so the FD derivative there is 0 while
  // the straight-through estimator reports the pass-through gradient. Verify
  // FD agreement away from replaced rows and pass-through at them.
  QuantizerOutput q0 = quantize(u, f.cb);
  Tensor probe = u.detach();
  probe.set_requires_grad(true);
  backward(sum(mul(mixup_rows(probe, q0.quantized, frozen), w)));
  for (int64_t i = 0; i < 8; ++i)
    for (int64_t c = 0; c < 8; ++c) {
      double analytic = probe.grad()[static_cast<size_t>(i * 8 + c)];
      if (i == 1 || i == 4) {
        EXPECT_DOUBLE_EQ(analytic, w.at(i, c));  // pass-through by contract
      } else {
        double eps = 1e-5;
        Tensor up = u.detach();
        up.at(i, c) += eps;
        double fp = sum(mul(mixup_rows(up, q0.quantized, frozen), w)).item();
        Tensor um = u.detach();
        um.at(i, c) -= eps;
        double fm = sum(mul(mixup_rows(um, q0.quantized, frozen), w)).item();
        EXPECT_NEAR(analytic, (fp - fm) / (2 * eps), 1e-6);
      }
    }
}

TEST(DiversityLoss, UniformHitsClosedForm) {
  Tensor p({4}, {0.25, 0.25, 0.25, 0.25});
  double loss = diversity_loss({p}).item();
  EXPECT_NEAR(loss, std::log(0.25) / 4.0, 1e-12);
  EXPECT_NEAR(loss, -std::log(4.0) / 4.0, 1e-12);
}

TEST(DiversityLoss, OneHotIsZero) {
  Tensor p({4}, {0.0, 1.0, 0.0, 0.0});
  EXPECT_DOUBLE_EQ(diversity_loss({p}).item(), 0.0);
}

TEST(DiversityLoss, BoundsOnRandomSimplexPoints) {
  Rng rng(15);
  const int64_t V = 6;
  const double lo = -std::log(static_cast<double>(V)) / static_cast<double>(V);
  for (int trial = 0; trial < 1000; ++trial) {
    Tensor p({V});
    double s = 0.0;
    for (int64_t i = 0; i < V; ++i) {
      p.at(i) = -std::log(1.0 - rng.uniform());
      s += p.at(i);
    }
    for (int64_t i = 0; i < V; ++i) p.at(i) /= s;
    double loss = diversity_loss({p}).item();
    EXPECT_GE(loss, lo - 1e-12);
    EXPECT_LE(loss, 0.0 + 1e-12);
  }
}

TEST(DiversityLoss, UniformIsTheMinimum) {
  Rng rng(16);
  const int64_t V = 5;
  Tensor uniform({V}, std::vector<double>(V, 1.0 / V));
  double at_uniform = diversity_loss({uniform}).item();
  for (int trial = 0; trial < 200; ++trial) {
    // Random perturbation on the simplex.
    Tensor p = uniform.detach();
    double shift = rng.uniform(0.0, 0.15);
    int64_t a = rng.randint(V), b = rng.randint(V);
    if (a == b) continue;
    shift = std::min(shift, p.at(a));
    p.at(a) -= shift;
    p.at(b) += shift;
    EXPECT_GE(diversity_loss({p}).item(), at_uniform - 1e-12);
  }
}

TEST(DiversityLoss, AveragesAcrossGroups) {
  Tensor p1({4}, {0.25, 0.25, 0.25, 0.25});
  Tensor p2({4}, {1.0, 0.0, 0.0, 0.0});
  double loss = diversity_loss({p1, p2}).item();
  EXPECT_NEAR(loss, 0.5 * std::log(0.25) / 4.0, 1e-12);
}

TEST(DiversityLoss, NegativeProbabilityRejected) {
  Tensor p({2}, {1.2, -0.2});
  EXPECT_THROW(diversity_loss({p}), ContractError);
}

TEST(DiversityLoss, GradientFlowsToEncoderAndCodebook) {
  Fixture f;
  Rng data(17);
  Tensor u = Tensor::randn({10, 8}, data);
  u.set_requires_grad(true);
  QuantizerOutput q = quantize(u, f.cb);
  backward(diversity_loss(q.soft_probs));
  double unorm = 0.0, cnorm = 0.0;
  for (double g : u.grad()) unorm += g * g;
  for (double g : f.cb.tables[0].grad()) cnorm += g * g;
  EXPECT_GT(unorm, 0.0);
  EXPECT_GT(cnorm, 0.0);
}

TEST(DiversityLoss, JointModeMatchesOuterProduct) {
  Fixture f;
  Rng data(18);
  Tensor u = Tensor::randn({12, 8}, data);
  QuantizerOutput q = quantize(u, f.cb);
  double joint = diversity_loss_joint(q.frame_probs).item();
  // Oracle: explicit batch mean of the outer product.
  const Tensor& p1 = q.frame_probs[0];
  const Tensor& p2 = q.frame_probs[1];
  double acc = 0.0;
  for (int64_t a = 0; a < 4; ++a)
    for (int64_t b = 0; b < 4; ++b) {
      double pj = 0.0;
      for (int64_t i = 0; i < 12; ++i) pj += p1.at(i, a) * p2.at(i, b);
      pj /= 12.0;
      acc += pj * std::log(pj);
    }
  EXPECT_NEAR(joint, acc / 16.0, 1e-12);
}

TEST(Attraction, PullsOnlyCodebook) {
  Fixture f;
  Rng data(19);
  Tensor u = Tensor::randn({9, 8}, data);
  u.set_requires_grad(true);
  QuantizerOutput q = quantize(u, f.cb);
  Tensor loss = codebook_attraction(u, q, f.cb);
  EXPECT_GT(loss.item(), 0.0);
  backward(loss);
  double unorm = 0.0, cnorm = 0.0;
  for (double g : u.grad()) unorm += std::fabs(g);
  for (double g : f.cb.tables[0].grad()) cnorm += std::fabs(g);
  EXPECT_EQ(unorm, 0.0);
  EXPECT_GT(cnorm, 0.0);
}

TEST(Attraction, GradientMatchesFiniteDifferencesOnCodebook) {
  Fixture f(1, 3, 4, 21);
  Rng data(22);
  Tensor u = Tensor::randn({5, 4}, data);
  QuantizerOutput q = quantize(u, f.cb);
  // Freeze assignments; perturb the table.
  double err = grad_check(
      [&](const Tensor& t) {
        std::vector<int64_t> ids;
        for (int64_t i = 0; i < 5; ++i) ids.push_back(q.indices[static_cast<size_t>(i)][0]);
        Tensor rows = embedding_lookup(t, ids);
        Tensor diff = sub(rows, slice(u, 1, 0, 4));
        return mul_scalar(sum(mul(diff, diff)), 1.0 / 5.0);
      },
      f.cb.tables[0]);
  EXPECT_LT(err, 1e-6);
}
