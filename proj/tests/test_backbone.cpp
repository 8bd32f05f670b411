#include "ust/backbone.hpp"

#include <gtest/gtest.h>

using namespace ust;

namespace {

BackboneConfig tiny_cfg() {
  BackboneConfig cfg;
  cfg.enc_layers = 2;
  cfg.dec_layers = 2;
  cfg.dim = 16;
  cfg.ffn_dim = 32;
  cfg.heads = 2;
  cfg.rel_buckets = 16;
  cfg.rel_max_distance = 32;
  return cfg;
}

struct Fixture {
  ParamRegistry reg;
  Backbone bb;
  explicit Fixture(uint64_t seed = 1, BackboneConfig cfg = tiny_cfg())
      : bb([&] {
          Rng rng(seed);
          return Backbone::create(reg, cfg, rng);
        }()) {}
};

}  // namespace

TEST(RelPosBucket, ZeroOffsetIsBucketZero) {
  EXPECT_EQ(relpos_bucket(0, 32, 64), 0);
}

TEST(RelPosBucket, DirectionSensitive) {
  for (int64_t k = 1; k < 40; ++k)
    EXPECT_NE(relpos_bucket(k, 32, 64), relpos_bucket(-k, 32, 64)) << k;
}

TEST(RelPosBucket, MonotoneOverNonNegativeOffsets) {
  const int64_t buckets = 32, maxd = 64;
  for (int64_t o = 0; o < 2 * maxd; ++o)
    EXPECT_LE(relpos_bucket(o, buckets, maxd), relpos_bucket(o + 1, buckets, maxd)) << o;
  for (int64_t o = 0; o < 2 * maxd; ++o)
    EXPECT_LE(relpos_bucket(-o, buckets, maxd), relpos_bucket(-(o + 1), buckets, maxd)) << o;
}

TEST(RelPosBucket, StaysInTable) {
  for (int64_t o = -500; o <= 500; ++o) {
    int64_t b = relpos_bucket(o, 32, 64);
    EXPECT_GE(b, 0);
    EXPECT_LT(b, 32);
  }
}

TEST(RelPosBias, TranslationInvariantBitExact) {
  Fixture f;
  std::vector<int64_t> q0{0, 1, 2, 3};
  std::vector<int64_t> k0{0, 1, 2, 3, 4};
  for (int64_t shift : {1, 7, 100}) {
    std::vector<int64_t> qs, ks;
    for (int64_t v : q0) qs.push_back(v + shift);
    for (int64_t v : k0) ks.push_back(v + shift);
    for (int64_t h = 0; h < f.bb.cfg.heads; ++h) {
      Tensor a = f.bb.relpos.matrix(q0, k0, h);
      Tensor b = f.bb.relpos.matrix(qs, ks, h);
      EXPECT_EQ(a.values(), b.values());
    }
  }
}

TEST(Encode, SingleFrame) {
  Fixture f;
  Rng data(2);
  Tensor x = Tensor::randn({1, 16}, data);
  Tensor u = f.bb.encode(x);
  EXPECT_EQ(u.shape(), (Shape{1, 16}));
}

TEST(Encode, AllPaddedRejected) {
  Fixture f;
  Rng data(2);
  Tensor x = Tensor::randn({3, 16}, data);
  EXPECT_THROW(f.bb.encode(x, PadMask{1, 1, 1}), ContractError);
}

TEST(Encode, PadTailDoesNotAffectValidOutputs) {
  Fixture f;
  Rng data(3);
  Tensor valid = Tensor::randn({4, 16}, data);
  Tensor tail_a = Tensor::randn({2, 16}, data);
  Tensor tail_b = Tensor::randn({2, 16}, data);
  PadMask pad{0, 0, 0, 0, 1, 1};
  Tensor ua = f.bb.encode(concat(valid, tail_a, 0), pad);
  Tensor ub = f.bb.encode(concat(valid, tail_b, 0), pad);
  for (int64_t i = 0; i < 4; ++i)
    for (int64_t j = 0; j < 16; ++j) EXPECT_NEAR(ua.at(i, j), ub.at(i, j), 1e-12);
}

TEST(Encode, AttentionRowsSumToOneUnderMask) {
  Fixture f;
  Rng data(4);
  Tensor x = Tensor::randn({5, 16}, data);
  PadMask pad{0, 0, 0, 1, 1};
  AttnTrace trace;
  f.bb.encode(x, pad, &trace);
  ASSERT_FALSE(trace.enc_self.empty());
  for (const Tensor& attn : trace.enc_self) {
    for (int64_t i = 0; i < attn.dim(0); ++i) {
      double s = 0.0;
      for (int64_t j = 0; j < attn.dim(1); ++j) s += attn.at(i, j);
      EXPECT_NEAR(s, 1.0, 1e-12);
      // Masked keys receive exactly zero attention.
      EXPECT_EQ(attn.at(i, 3), 0.0);
      EXPECT_EQ(attn.at(i, 4), 0.0);
    }
  }
}

TEST(Encode, PermutationEquivariantWithoutRelPos) {
  BackboneConfig cfg = tiny_cfg();
  cfg.use_rel_pos = false;
  Fixture f(1, cfg);
  Rng data(5);
  Tensor x = Tensor::randn({5, 16}, data);
  Tensor u = f.bb.encode(x);
  // Swap rows 1 and 3 of the input; outputs must swap identically.
  Tensor xp = x.detach();
  for (int64_t j = 0; j < 16; ++j) std::swap(xp.at(1, j), xp.at(3, j));
  Tensor up = f.bb.encode(xp);
  for (int64_t j = 0; j < 16; ++j) {
    EXPECT_NEAR(up.at(1, j), u.at(3, j), 1e-9);
    EXPECT_NEAR(up.at(3, j), u.at(1, j), 1e-9);
    EXPECT_NEAR(up.at(0, j), u.at(0, j), 1e-9);
  }
}

TEST(Encode, RelPosBreaksPermutationEquivariance) {
  Fixture f;
  Rng data(5);
  Tensor x = Tensor::randn({5, 16}, data);
  Tensor u = f.bb.encode(x);
  Tensor xp = x.detach();
  for (int64_t j = 0; j < 16; ++j) std::swap(xp.at(1, j), xp.at(3, j));
  Tensor up = f.bb.encode(xp);
  double diff = 0.0;
  for (int64_t j = 0; j < 16; ++j) diff += std::fabs(up.at(1, j) - u.at(3, j));
  EXPECT_GT(diff, 1e-6);
}

TEST(Decode, CausalityExhaustive) {
  Fixture f;
  Rng data(6);
  Tensor memory = Tensor::randn({3, 16}, data);
  for (int64_t T = 1; T <= 8; ++T) {
    Tensor tgt = Tensor::randn({T, 16}, data);
    Tensor base = f.bb.decode(tgt, memory);
    for (int64_t t = 0; t < T; ++t) {
      Tensor bumped = tgt.detach();
      for (int64_t j = 0; j < 16; ++j) bumped.at(t, j) += 0.5;
      Tensor out = f.bb.decode(bumped, memory);
      for (int64_t i = 0; i < T; ++i) {
        double diff = 0.0;
        for (int64_t j = 0; j < 16; ++j) diff += std::fabs(out.at(i, j) - base.at(i, j));
        if (i < t)
          EXPECT_EQ(diff, 0.0) << "T=" << T << " bump=" << t << " row=" << i;
        else if (i == t)
          EXPECT_GT(diff, 0.0);
      }
    }
  }
}

TEST(Decode, SingleStepShape) {
  Fixture f;
  Rng data(7);
  Tensor memory = Tensor::randn({4, 16}, data);
  Tensor tgt = Tensor::randn({1, 16}, data);
  EXPECT_EQ(f.bb.decode(tgt, memory).shape(), (Shape{1, 16}));
}

TEST(Decode, EmptyMemoryRejected) {
  Fixture f;
  Rng data(7);
  Tensor tgt = Tensor::randn({2, 16}, data);
  Tensor memory({0, 16});
  EXPECT_THROW(f.bb.decode(tgt, memory), ContractError);
}

TEST(Backbone, EncodeGradientMatchesFiniteDifferences) {
  Fixture f;
  Rng data(8);
  Tensor x = Tensor::randn({3, 16}, data);
  double err = grad_check(
      [&](const Tensor& in) {
        Tensor u = f.bb.encode(in);
        return mean(mul(u, u));
      },
      x, 1e-3);
  EXPECT_LT(err, 1e-4);
}

TEST(Backbone, EncodeDecodeCompositeGradient) {
  Fixture f;
  Rng data(9);
  Tensor x = Tensor::randn({3, 16}, data);
  Tensor tgt = Tensor::randn({2, 16}, data);
  double err = grad_check(
      [&](const Tensor& in) {
        Tensor u = f.bb.encode(in);
        Tensor s = f.bb.decode(tgt, u);
        return mean(mul(s, s));
      },
      x, 1e-3);
  EXPECT_LT(err, 1e-4);
}

TEST(Backbone, ConfigValidation) {
  BackboneConfig cfg = tiny_cfg();
  cfg.dim = 15;
  EXPECT_THROW(cfg.validate(), ConfigError);
  BackboneConfig cfg2 = tiny_cfg();
  cfg2.rel_buckets = 7;
  EXPECT_THROW(cfg2.validate(), ConfigError);
}
