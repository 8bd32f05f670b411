#include "ust/eval.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "ust/rng.hpp"

using namespace ust;

namespace {

// O(3^n) recursive edit-distance enumeration.
int64_t edit_enum(const std::vector<std::string>& a, size_t i, const std::vector<std::string>& b,
                  size_t j) {
  if (i == a.size()) return static_cast<int64_t>(b.size() - j);
  if (j == b.size()) return static_cast<int64_t>(a.size() - i);
  int64_t sub = edit_enum(a, i + 1, b, j + 1) + (a[i] == b[j] ? 0 : 1);
  int64_t del = edit_enum(a, i + 1, b, j) + 1;
  int64_t ins = edit_enum(a, i, b, j + 1) + 1;
  return std::min({sub, del, ins});
}

std::vector<std::string> random_words(Rng& rng, int64_t n, int64_t vocab) {
  std::vector<std::string> out;
  for (int64_t i = 0; i < n; ++i) out.push_back("w" + std::to_string(rng.randint(vocab)));
  return out;
}

}  // namespace

TEST(Wer, IdenticalIsZero) {
  std::vector<std::string> s{"a", "b", "c"};
  EXPECT_DOUBLE_EQ(wer(s, s), 0.0);
}

TEST(Wer, SingleSubstitution) {
  EXPECT_NEAR(wer({"a", "x", "c"}, {"a", "b", "c"}), 1.0 / 3.0, 1e-15);
}

TEST(Wer, EmptyReferenceRejected) {
  EXPECT_THROW(wer({"a"}, {}), ContractError);
}

TEST(Wer, MatchesExhaustiveEnumeration) {
  Rng rng(3);
  for (int trial = 0; trial < 60; ++trial) {
    auto hyp = random_words(rng, rng.randint(7), 3);
    auto ref = random_words(rng, 1 + rng.randint(6), 3);
    double expect = static_cast<double>(edit_enum(hyp, 0, ref, 0)) /
                    static_cast<double>(ref.size());
    EXPECT_DOUBLE_EQ(wer(hyp, ref), expect);
  }
}

TEST(Wer, InvariantUnderJointRelabeling) {
  Rng rng(4);
  for (int trial = 0; trial < 40; ++trial) {
    auto hyp = random_words(rng, 1 + rng.randint(6), 4);
    auto ref = random_words(rng, 1 + rng.randint(6), 4);
    auto relabel = [](std::vector<std::string> v) {
      for (auto& w : v) w = "relabeled_" + w;
      return v;
    };
    EXPECT_DOUBLE_EQ(wer(hyp, ref), wer(relabel(hyp), relabel(ref)));
  }
}

TEST(SplitWords, Basic) {
  auto words = split_words("ab  cd e");
  ASSERT_EQ(words.size(), 3u);
  EXPECT_EQ(words[0], "ab");
  EXPECT_EQ(words[2], "e");
}

TEST(Cer, SingleCharEdit) {
  EXPECT_NEAR(cer("abcd", "abed"), 0.25, 1e-15);
}

TEST(McdDtw, IdenticalIsZero) {
  Rng rng(5);
  Tensor x = Tensor::randn({7, 8}, rng);
  EXPECT_DOUBLE_EQ(mcd_dtw(x, x), 0.0);
}

TEST(McdDtw, UnitCepstralDifferenceClosedForm) {
  // Build two single-frame inputs whose cepstral difference has norm 1.
  Tensor a({1, 8});
  Tensor b({1, 8});
  for (int64_t j = 0; j < 8; ++j) {
    a.at(0, j) = 0.0;
    b.at(0, j) = std::cos(M_PI * 1.0 * (j + 0.5) / 8.0);
  }
  // Cepstra of b: c_k = sum_j b_j cos(pi k (j+0.5)/8); c_1 = 4 (norm of the
  // cosine row squared), others 0 by orthogonality. Scale to make ||dc|| = 1.
  Tensor c = mel_cepstra(b, 13);
  double norm = 0.0;
  for (int64_t k = 0; k < c.dim(1); ++k) norm += c.at(0, k) * c.at(0, k);
  norm = std::sqrt(norm);
  for (int64_t j = 0; j < 8; ++j) b.at(0, j) /= norm;
  double expect = 10.0 * std::sqrt(2.0) / std::log(10.0);
  EXPECT_NEAR(mcd_dtw(a, b), expect, 1e-9);
  EXPECT_NEAR(expect, 6.1418, 1e-3);
}

TEST(McdDtw, DtwNeverExceedsRandomMonotonePaths) {
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    int64_t n = 2 + rng.randint(6), m = 2 + rng.randint(6);
    Tensor a = Tensor::randn({n, 5}, rng);
    Tensor b = Tensor::randn({m, 5}, rng);
    Tensor ca = mel_cepstra(a, 13);
    Tensor cb = mel_cepstra(b, 13);
    DtwResult res = dtw(ca, cb);
    // Random monotone path from (0,0) to (n-1,m-1).
    int64_t i = 0, j = 0;
    double path_cost = 0.0;
    auto cost = [&](int64_t r, int64_t c) {
      double d = 0.0;
      for (int64_t k = 0; k < ca.dim(1); ++k) {
        double diff = ca.at(r, k) - cb.at(c, k);
        d += diff * diff;
      }
      return std::sqrt(d);
    };
    path_cost += cost(0, 0);
    while (i < n - 1 || j < m - 1) {
      int64_t move = rng.randint(3);
      if (i == n - 1)
        ++j;
      else if (j == m - 1)
        ++i;
      else if (move == 0) {
        ++i;
        ++j;
      } else if (move == 1)
        ++i;
      else
        ++j;
      path_cost += cost(i, j);
    }
    EXPECT_LE(res.total_cost, path_cost + 1e-9);
  }
}

TEST(McdDtw, DtwCostNoWorseThanDiagonalWhenSameLength) {
  Rng rng(7);
  Tensor a = Tensor::randn({6, 4}, rng);
  Tensor b = Tensor::randn({6, 4}, rng);
  Tensor ca = mel_cepstra(a, 13);
  Tensor cb = mel_cepstra(b, 13);
  double diag = 0.0;
  for (int64_t i = 0; i < 6; ++i) {
    double d = 0.0;
    for (int64_t k = 0; k < ca.dim(1); ++k) {
      double diff = ca.at(i, k) - cb.at(i, k);
      d += diff * diff;
    }
    diag += std::sqrt(d);
  }
  EXPECT_LE(dtw(ca, cb).total_cost, diag + 1e-12);
}

TEST(McdDtw, EmptyInputRejected) {
  Tensor a({0, 4});
  Tensor b({3, 4});
  EXPECT_THROW(mcd_dtw(a, b), ContractError);
}

TEST(Accuracy, Basic) {
  EXPECT_DOUBLE_EQ(accuracy({1, 2, 3}, {1, 2, 3}), 1.0);
  EXPECT_DOUBLE_EQ(accuracy({0, 0, 0}, {1, 2, 3}), 0.0);
  EXPECT_DOUBLE_EQ(accuracy({1, 2}, {1, 3}), 0.5);
  EXPECT_THROW(accuracy({}, {}), ContractError);
}

TEST(MetricReport, AggregateMatchesBreakdown) {
  MetricReport r;
  r.name = "wer";
  r.add("u0", 0.5, 2.0);
  r.add("u1", 0.0, 4.0);
  r.add("u2", 1.0, 2.0);
  EXPECT_EQ(r.count, 3);
  EXPECT_NEAR(r.value, (0.5 * 2 + 0 * 4 + 1 * 2) / 8.0, 1e-12);
  EXPECT_NEAR(r.value, r.recompute(), 1e-15);
}
