#include "ust/data.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

using namespace ust;

namespace {

CorpusConfig small_cfg() {
  CorpusConfig cfg;
  cfg.seed = 11;
  cfg.n_speakers = 2;
  cfg.min_chars = 4;
  cfg.max_chars = 8;
  return cfg;
}

}  // namespace

TEST(Vocab, RoundTripAndLayout) {
  CharVocab v = CharVocab::standard();
  EXPECT_EQ(v.size(), 32);
  std::string text = "ab cd";
  EXPECT_EQ(v.decode(v.encode(text)), text);
  EXPECT_THROW(v.char_id('!'), LookupError);
}

TEST(Corpus, SameSeedIsBitIdentical) {
  Corpus a = gen_corpus(small_cfg(), 6, 4);
  Corpus b = gen_corpus(small_cfg(), 6, 4);
  ASSERT_EQ(a.utterances.size(), b.utterances.size());
  for (size_t i = 0; i < a.utterances.size(); ++i) {
    EXPECT_EQ(a.utterances[i].text, b.utterances[i].text);
    EXPECT_EQ(a.utterances[i].wave, b.utterances[i].wave);
    EXPECT_EQ(*a.utterances[i].noisy, *b.utterances[i].noisy);
  }
  EXPECT_EQ(a.sentences, b.sentences);
}

TEST(Corpus, WaveLengthIsCharsTimesSamplesPerChar) {
  Corpus c = gen_corpus(small_cfg(), 5, 0);
  for (const auto& u : c.utterances)
    EXPECT_EQ(u.wave.size(), u.text.size() * 160u);
}

TEST(Corpus, SpeakersDifferOnSameText) {
  CorpusConfig cfg = small_cfg();
  Rng r0(1), r1(1);
  auto w0 = synth_wave(cfg, "abcd", 0, r0);
  auto w1 = synth_wave(cfg, "abcd", 1, r1);
  ASSERT_EQ(w0.size(), w1.size());
  EXPECT_NE(w0, w1);
}

TEST(Corpus, TranslationIsDeterministicSubstitution) {
  CharVocab v = CharVocab::standard();
  std::string t1 = translate_text("abc de", v);
  std::string t2 = translate_text("abc de", v);
  EXPECT_EQ(t1, t2);
  EXPECT_EQ(t1.size(), 6u);
  EXPECT_EQ(t1[3], ' ');
  EXPECT_NE(t1.substr(0, 3), "abc");
}

TEST(Corpus, EmptyVocabRejected) {
  CorpusConfig cfg = small_cfg();
  cfg.chars.clear();
  EXPECT_THROW(gen_corpus(cfg, 1, 0), ConfigError);
}

TEST(LogMel, SilenceHitsLogFloor) {
  std::vector<double> wave(256, 0.0);
  Tensor f = logmel(wave, 64, 32, 8, 1600);
  EXPECT_EQ(f.dim(0), 7);
  for (int64_t i = 0; i < f.size(); ++i)
    EXPECT_NEAR(f.at(i), std::log(1e-10), 1e-6);
}

TEST(LogMel, PureToneConcentratesConsistently) {
  // A pure sinusoid keeps the same argmax mel bin across frames.
  const int64_t sr = 1600;
  std::vector<double> wave(640);
  for (size_t i = 0; i < wave.size(); ++i)
    wave[i] = std::sin(2.0 * M_PI * 300.0 * static_cast<double>(i) / sr);
  Tensor f = logmel(wave, 64, 32, 8, sr);
  int64_t ref_bin = 0;
  double best = -1e30;
  for (int64_t m = 0; m < 8; ++m)
    if (f.at(0, m) > best) {
      best = f.at(0, m);
      ref_bin = m;
    }
  // 300 Hz lies in the lower half of the 0..800 Hz range but above bin 0.
  EXPECT_GT(ref_bin, 0);
  EXPECT_LT(ref_bin, 6);
  for (int64_t i = 1; i < f.dim(0); ++i) {
    int64_t bin = 0;
    double b = -1e30;
    for (int64_t m = 0; m < 8; ++m)
      if (f.at(i, m) > b) {
        b = f.at(i, m);
        bin = m;
      }
    EXPECT_EQ(bin, ref_bin) << "frame " << i;
  }
}

TEST(LogMel, FrameCountMatchesLoopOracle) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    int64_t len = 64 + rng.randint(2000);
    int64_t frame_len = 16 + rng.randint(49);
    int64_t hop = 8 + rng.randint(static_cast<int64_t>(frame_len));
    if (len < frame_len) continue;
    int64_t count = 0;
    for (int64_t start = 0; start + frame_len <= len; start += hop) ++count;
    EXPECT_EQ(logmel_n_frames(len, frame_len, hop), count);
    std::vector<double> wave(static_cast<size_t>(len), 0.1);
    EXPECT_EQ(logmel(wave, frame_len, hop, 4, 1600).dim(0), count);
  }
}

TEST(LogMel, TooShortWaveRejected) {
  std::vector<double> wave(10, 0.0);
  EXPECT_THROW(logmel(wave, 64, 32, 8, 1600), DimensionError);
}

TEST(KMeans, SingleClusterIsMean) {
  std::vector<std::vector<double>> frames{{1.0, 2.0}, {3.0, 4.0}, {5.0, 6.0}};
  UnitLabeler lab = fit_units(frames, 1, 5, 1);
  EXPECT_NEAR(lab.centroids.at(0, 0), 3.0, 1e-12);
  EXPECT_NEAR(lab.centroids.at(0, 1), 4.0, 1e-12);
  Tensor f({3, 2}, {1, 2, 3, 4, 5, 6});
  auto z = label(lab, f);
  for (int64_t id : z) EXPECT_EQ(id, 0);
}

TEST(KMeans, SeparatedBlobsPerfectlyPartition) {
  Rng rng(9);
  std::vector<std::vector<double>> frames;
  for (int i = 0; i < 500; ++i) frames.push_back({rng.normal(0.0, 1.0), rng.normal(0.0, 1.0)});
  for (int i = 0; i < 500; ++i) frames.push_back({rng.normal(20.0, 1.0), rng.normal(20.0, 1.0)});
  UnitLabeler lab = fit_units(frames, 2, 20, 3);
  Tensor f({1000, 2});
  for (int64_t i = 0; i < 1000; ++i) {
    f.at(i, 0) = frames[static_cast<size_t>(i)][0];
    f.at(i, 1) = frames[static_cast<size_t>(i)][1];
  }
  auto z = label(lab, f);
  // All of the first blob shares one id, all of the second the other.
  for (int64_t i = 1; i < 500; ++i) EXPECT_EQ(z[static_cast<size_t>(i)], z[0]);
  for (int64_t i = 501; i < 1000; ++i) EXPECT_EQ(z[static_cast<size_t>(i)], z[500]);
  EXPECT_NE(z[0], z[500]);
}

TEST(KMeans, LabelingIdempotentAfterConvergence) {
  Rng rng(4);
  std::vector<std::vector<double>> frames;
  for (int i = 0; i < 200; ++i)
    frames.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
  UnitLabeler lab = fit_units(frames, 4, 100, 7);
  Tensor f({200, 3});
  for (int64_t i = 0; i < 200; ++i)
    for (int64_t j = 0; j < 3; ++j) f.at(i, j) = frames[static_cast<size_t>(i)][static_cast<size_t>(j)];
  auto z1 = label(lab, f);
  // One more Lloyd sweep from converged centroids must not move labels.
  UnitLabeler lab2 = fit_units(frames, 4, 101, 7);
  auto z2 = label(lab2, f);
  EXPECT_EQ(z1, z2);
}

TEST(KMeans, TooManyClustersRejected) {
  std::vector<std::vector<double>> frames{{0.0}, {1.0}};
  EXPECT_THROW(fit_units(frames, 3, 5, 1), ConfigError);
}

TEST(Labels, ResampleNearest) {
  std::vector<int64_t> z{0, 1, 2, 3};
  auto r = resample_labels(z, 8);
  EXPECT_EQ(r.size(), 8u);
  EXPECT_EQ(r.front(), 0);
  EXPECT_EQ(r.back(), 3);
  auto r1 = resample_labels(z, 1);
  EXPECT_EQ(r1, std::vector<int64_t>{0});
}

TEST(Files, WaveRoundTripBitExact) {
  Corpus c = gen_corpus(small_cfg(), 2, 0);
  std::string path = std::filesystem::temp_directory_path() / "ust_wave_test.ust";
  save_wave(c.utterances[0].wave, path);
  auto loaded = load_wave(path);
  EXPECT_EQ(loaded, c.utterances[0].wave);
  std::remove(path.c_str());
}

TEST(Files, FeatureRoundTripBitExact) {
  Corpus c = gen_corpus(small_cfg(), 1, 0);
  Tensor f = logmel(c.utterances[0].wave, 64, 32, 8, 1600);
  std::string path = std::filesystem::temp_directory_path() / "ust_feat_test.ust";
  save_features(f, path);
  Tensor g = load_features(path);
  EXPECT_EQ(g.shape(), f.shape());
  EXPECT_EQ(g.values(), f.values());
  std::remove(path.c_str());
}

TEST(Files, CorruptHeaderRejected) {
  std::string path = std::filesystem::temp_directory_path() / "ust_bad_test.ust";
  {
    std::ofstream os(path, std::ios::binary);
    os << "JUNKJUNKJUNK";
  }
  EXPECT_THROW(load_wave(path), DataError);
  EXPECT_THROW(load_features(path), DataError);
  std::remove(path.c_str());
}

TEST(Files, CorpusDirectoryRoundTrip) {
  Corpus c = gen_corpus(small_cfg(), 4, 3);
  std::string dir = std::filesystem::temp_directory_path() / "ust_corpus_test";
  std::filesystem::remove_all(dir);
  save_corpus(c, dir);
  Corpus d = load_corpus(dir);
  ASSERT_EQ(d.utterances.size(), c.utterances.size());
  for (size_t i = 0; i < c.utterances.size(); ++i) {
    EXPECT_EQ(d.utterances[i].text, c.utterances[i].text);
    EXPECT_EQ(d.utterances[i].speaker, c.utterances[i].speaker);
    EXPECT_EQ(d.utterances[i].wave, c.utterances[i].wave);
    ASSERT_TRUE(d.utterances[i].noisy.has_value());
    EXPECT_EQ(*d.utterances[i].noisy, *c.utterances[i].noisy);
    EXPECT_EQ(d.utterances[i].translation, c.utterances[i].translation);
  }
  EXPECT_EQ(d.sentences, c.sentences);
  EXPECT_EQ(d.feat_mean, c.feat_mean);
  EXPECT_EQ(d.feat_std, c.feat_std);
  EXPECT_EQ(d.cfg.chars, c.cfg.chars);
  std::filesystem::remove_all(dir);
}

TEST(Files, MissingCorpusRejected) {
  EXPECT_THROW(load_corpus("/nonexistent/ust_corpus"), DataError);
}
