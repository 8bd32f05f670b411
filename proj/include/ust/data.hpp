#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ust/errors.hpp"
#include "ust/rng.hpp"
#include "ust/tensor.hpp"

namespace ust {

// ---------------------------------------------------------------------------
// Character vocabulary
// ---------------------------------------------------------------------------
// Fixed id layout: 0 blank/pad (CTC blank), 1 <s>, 2 </s>, 3 <mask>,
// 4..9 T5 sentinels, then the characters.
struct CharVocab {
  static constexpr int64_t kBlank = 0;
  static constexpr int64_t kBos = 1;
  static constexpr int64_t kEos = 2;
  static constexpr int64_t kMask = 3;
  static constexpr int64_t kSentinelBase = 4;
  static constexpr int64_t kNumSentinels = 6;
  static constexpr int64_t kCharBase = kSentinelBase + kNumSentinels;

  std::string chars;  // charset in id order

  static CharVocab standard() { return CharVocab{"abcdefghijklmnopqrstu "}; }

  int64_t size() const { return kCharBase + static_cast<int64_t>(chars.size()); }

  int64_t char_id(char c) const {
    auto pos = chars.find(c);
    if (pos == std::string::npos)
      throw LookupError(std::string("vocab: unknown character '") + c + "'");
    return kCharBase + static_cast<int64_t>(pos);
  }

  std::vector<int64_t> encode(const std::string& text) const {
    std::vector<int64_t> ids;
    ids.reserve(text.size());
    for (char c : text) ids.push_back(char_id(c));
    return ids;
  }

  std::string decode(const std::vector<int64_t>& ids) const {
    std::string out;
    for (int64_t id : ids) {
      if (id >= kCharBase && id < size())
        out.push_back(chars[static_cast<size_t>(id - kCharBase)]);
      else if (id == kMask)
        out += "<mask>";
      else if (id >= kSentinelBase && id < kCharBase)
        out += "<x" + std::to_string(id - kSentinelBase) + ">";
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Corpus
// ---------------------------------------------------------------------------

struct CorpusConfig {
  uint64_t seed = 1;
  int64_t sample_rate = 1600;
  int64_t samples_per_char = 160;
  int64_t n_speakers = 4;
  int64_t min_chars = 4;
  int64_t max_chars = 10;
  int64_t min_sentence_chars = 10;
  int64_t max_sentence_chars = 28;
  double noise_level = 0.02;    // additive texture on clean templates
  double snr_db = 5.0;          // enhancement variant
  int64_t frame_len = 64;
  int64_t hop = 32;
  int64_t mel_bins = 8;
  std::string chars = CharVocab::standard().chars;

  CharVocab vocab() const { return CharVocab{chars}; }
};

struct Utterance {
  int64_t id = 0;
  std::string text;
  int64_t speaker = 0;
  std::vector<double> wave;                 // float32-quantized values
  std::optional<std::vector<double>> noisy; // enhancement input
  std::string translation;                  // substitution-cipher text
};

struct Corpus {
  CorpusConfig cfg;
  std::vector<Utterance> utterances;
  std::vector<std::string> sentences;  // text-only pool
  // Per-mel-bin statistics over all clean features, for normalization.
  std::vector<double> feat_mean;
  std::vector<double> feat_std;
};

namespace detail {

inline double quantize_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

inline void quantize_f32(std::vector<double>& v) {
  for (double& x : v) x = quantize_f32(x);
}

}  // namespace detail

// Character-substitution "translation": letters shift cyclically, space stays.
inline std::string translate_text(const std::string& text, const CharVocab& vocab,
                                  int64_t shift = 3) {
  std::string out;
  int64_t n = static_cast<int64_t>(vocab.chars.size());
  for (char c : text) {
    if (c == ' ') {
      out.push_back(' ');
      continue;
    }
    int64_t idx = vocab.char_id(c) - CharVocab::kCharBase;
    int64_t shifted = (idx + shift) % n;
    char sc = vocab.chars[static_cast<size_t>(shifted)];
    out.push_back(sc == ' ' ? vocab.chars[static_cast<size_t>((shifted + 1) % n)] : sc);
  }
  return out;
}

// Each character renders as a fixed-duration sinusoid at a character-specific
// frequency; speakers apply an affine timbre (gain + frequency offset).
inline std::vector<double> synth_wave(const CorpusConfig& cfg, const std::string& text,
                                      int64_t speaker, Rng& rng) {
  const CharVocab vocab = cfg.vocab();
  const double sr = static_cast<double>(cfg.sample_rate);
  const double gain = 0.5 + 0.12 * static_cast<double>(speaker);
  const double spk_offset = 8.0 * static_cast<double>(speaker);
  std::vector<double> wave;
  wave.reserve(text.size() * static_cast<size_t>(cfg.samples_per_char));
  for (char c : text) {
    int64_t idx = vocab.char_id(c) - CharVocab::kCharBase;
    bool silent = c == ' ';
    double freq = 60.0 + 24.0 * static_cast<double>(idx) + spk_offset;
    for (int64_t i = 0; i < cfg.samples_per_char; ++i) {
      double t = static_cast<double>(i) / sr;
      double s = silent ? 0.0 : gain * std::sin(2.0 * M_PI * freq * t);
      wave.push_back(s + cfg.noise_level * rng.normal());
    }
  }
  detail::quantize_f32(wave);
  return wave;
}

inline std::vector<double> add_noise_at_snr(const std::vector<double>& clean, double snr_db,
                                            Rng& rng) {
  double power = 0.0;
  for (double v : clean) power += v * v;
  power /= static_cast<double>(clean.size());
  double noise_power = power / std::pow(10.0, snr_db / 10.0);
  double sigma = std::sqrt(noise_power);
  std::vector<double> noisy(clean);
  for (double& v : noisy) v += sigma * rng.normal();
  detail::quantize_f32(noisy);
  return noisy;
}

inline std::string random_text(const CorpusConfig& cfg, int64_t min_chars, int64_t max_chars,
                               Rng& rng) {
  std::string letters;
  for (char c : cfg.chars)
    if (c != ' ') letters.push_back(c);
  int64_t len = min_chars + rng.randint(max_chars - min_chars + 1);
  std::string text;
  int64_t word = 2 + rng.randint(4);
  while (static_cast<int64_t>(text.size()) < len) {
    if (word == 0 && static_cast<int64_t>(text.size()) + 2 < len) {
      text.push_back(' ');
      word = 2 + rng.randint(4);
    } else {
      text.push_back(letters[static_cast<size_t>(rng.randint(
          static_cast<int64_t>(letters.size())))]);
      if (word > 0) --word;
    }
  }
  return text;
}

// ---------------------------------------------------------------------------
// Log-Mel features
// ---------------------------------------------------------------------------

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Magnitude spectrum per frame via plain DFT, triangular mel filterbank,
// natural log with floor 1e-10. Frames: N = 1 + floor((len - frame_len)/hop).
inline Tensor logmel(const std::vector<double>& wave, int64_t frame_len, int64_t hop,
                     int64_t mel_bins, int64_t sample_rate) {
  const int64_t len = static_cast<int64_t>(wave.size());
  if (len < frame_len)
    throw DimensionError("logmel: waveform of " + std::to_string(len) +
                         " samples shorter than frame length " + std::to_string(frame_len));
  const int64_t n_frames = 1 + (len - frame_len) / hop;
  const int64_t n_bins = frame_len / 2 + 1;

  // Triangular filters on mel-spaced centers over [0, nyquist].
  const double nyquist = static_cast<double>(sample_rate) / 2.0;
  std::vector<double> centers(static_cast<size_t>(mel_bins + 2));
  double mel_max = hz_to_mel(nyquist);
  for (int64_t m = 0; m < mel_bins + 2; ++m)
    centers[static_cast<size_t>(m)] =
        mel_to_hz(mel_max * static_cast<double>(m) / static_cast<double>(mel_bins + 1));

  Tensor feats({n_frames, mel_bins});
  std::vector<double> mag(static_cast<size_t>(n_bins));
  for (int64_t f = 0; f < n_frames; ++f) {
    const double* frame = wave.data() + f * hop;
    for (int64_t k = 0; k < n_bins; ++k) {
      double re = 0.0, im = 0.0;
      for (int64_t i = 0; i < frame_len; ++i) {
        double ang = -2.0 * M_PI * static_cast<double>(k * i) / static_cast<double>(frame_len);
        re += frame[i] * std::cos(ang);
        im += frame[i] * std::sin(ang);
      }
      mag[static_cast<size_t>(k)] = std::sqrt(re * re + im * im);
    }
    for (int64_t m = 0; m < mel_bins; ++m) {
      double lo = centers[static_cast<size_t>(m)];
      double mid = centers[static_cast<size_t>(m + 1)];
      double hi = centers[static_cast<size_t>(m + 2)];
      double energy = 0.0;
      for (int64_t k = 0; k < n_bins; ++k) {
        double hz = nyquist * static_cast<double>(k) / static_cast<double>(n_bins - 1);
        double w = 0.0;
        if (hz >= lo && hz <= mid && mid > lo)
          w = (hz - lo) / (mid - lo);
        else if (hz > mid && hz <= hi && hi > mid)
          w = (hi - hz) / (hi - mid);
        energy += w * mag[static_cast<size_t>(k)];
      }
      feats.at(f, m) = std::log(std::max(energy, 1e-10));
    }
  }
  for (int64_t i = 0; i < feats.size(); ++i) feats.at(i) = detail::quantize_f32(feats.at(i));
  return feats;
}

inline int64_t logmel_n_frames(int64_t len, int64_t frame_len, int64_t hop) {
  return len < frame_len ? 0 : 1 + (len - frame_len) / hop;
}

// ---------------------------------------------------------------------------
// Acoustic unit labeler (k-means on log-Mel frames)
// ---------------------------------------------------------------------------

struct UnitLabeler {
  Tensor centroids;  // [k, dim]
  int64_t k() const { return centroids.dim(0); }
};

// Lloyd's algorithm with k-means++ seeding and a fixed iteration budget.
inline UnitLabeler fit_units(const std::vector<std::vector<double>>& frames, int64_t k,
                             int64_t iters, uint64_t seed) {
  const int64_t n = static_cast<int64_t>(frames.size());
  if (k < 1 || k > n)
    throw ConfigError("fit_units: k=" + std::to_string(k) + " with only " +
                      std::to_string(n) + " frames");
  const int64_t dim = static_cast<int64_t>(frames[0].size());
  Rng rng(seed);

  auto dist2 = [&](const std::vector<double>& a, const double* b) {
    double d = 0.0;
    for (int64_t j = 0; j < dim; ++j) {
      double diff = a[static_cast<size_t>(j)] - b[j];
      d += diff * diff;
    }
    return d;
  };

  // k-means++ seeding.
  Tensor centroids({k, dim});
  std::vector<double> best(static_cast<size_t>(n), std::numeric_limits<double>::max());
  int64_t first = rng.randint(n);
  std::copy_n(frames[static_cast<size_t>(first)].data(), dim, centroids.data());
  for (int64_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      double d = dist2(frames[static_cast<size_t>(i)], centroids.data() + (c - 1) * dim);
      best[static_cast<size_t>(i)] = std::min(best[static_cast<size_t>(i)], d);
      total += best[static_cast<size_t>(i)];
    }
    double pickv = rng.uniform() * total;
    int64_t chosen = n - 1;
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      acc += best[static_cast<size_t>(i)];
      if (acc >= pickv) {
        chosen = i;
        break;
      }
    }
    std::copy_n(frames[static_cast<size_t>(chosen)].data(), dim, centroids.data() + c * dim);
  }

  std::vector<int64_t> assign(static_cast<size_t>(n), 0);
  for (int64_t it = 0; it < iters; ++it) {
    for (int64_t i = 0; i < n; ++i) {
      double bd = std::numeric_limits<double>::max();
      int64_t bc = 0;
      for (int64_t c = 0; c < k; ++c) {
        double d = dist2(frames[static_cast<size_t>(i)], centroids.data() + c * dim);
        if (d < bd) {
          bd = d;
          bc = c;
        }
      }
      assign[static_cast<size_t>(i)] = bc;
    }
    Tensor sums({k, dim});
    std::vector<int64_t> counts(static_cast<size_t>(k), 0);
    for (int64_t i = 0; i < n; ++i) {
      int64_t c = assign[static_cast<size_t>(i)];
      ++counts[static_cast<size_t>(c)];
      for (int64_t j = 0; j < dim; ++j)
        sums.at(c, j) += frames[static_cast<size_t>(i)][static_cast<size_t>(j)];
    }
    for (int64_t c = 0; c < k; ++c) {
      if (counts[static_cast<size_t>(c)] == 0) continue;  // keep empty centroids in place
      for (int64_t j = 0; j < dim; ++j)
        centroids.at(c, j) = sums.at(c, j) / static_cast<double>(counts[static_cast<size_t>(c)]);
    }
  }
  return UnitLabeler{centroids};
}

inline std::vector<int64_t> label(const UnitLabeler& labeler, const Tensor& feats) {
  const int64_t n = feats.dim(0), dim = feats.dim(1);
  if (dim != labeler.centroids.dim(1))
    throw DimensionError("label: feature dim " + std::to_string(dim) +
                         " does not match centroids " + shape_str(labeler.centroids.shape()));
  std::vector<int64_t> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    double bd = std::numeric_limits<double>::max();
    int64_t bc = 0;
    for (int64_t c = 0; c < labeler.k(); ++c) {
      double d = 0.0;
      for (int64_t j = 0; j < dim; ++j) {
        double diff = feats.at(i, j) - labeler.centroids.at(c, j);
        d += diff * diff;
      }
      if (d < bd) {
        bd = d;
        bc = c;
      }
    }
    out[static_cast<size_t>(i)] = bc;
  }
  return out;
}

// Nearest-frame resampling of per-frame labels onto a different frame rate.
inline std::vector<int64_t> resample_labels(const std::vector<int64_t>& z, int64_t target_len) {
  if (z.empty()) throw ContractError("resample_labels: empty label sequence");
  std::vector<int64_t> out(static_cast<size_t>(target_len));
  const int64_t n = static_cast<int64_t>(z.size());
  for (int64_t i = 0; i < target_len; ++i) {
    int64_t src = target_len == 1
                      ? 0
                      : static_cast<int64_t>(std::llround(static_cast<double>(i) *
                                                          static_cast<double>(n - 1) /
                                                          static_cast<double>(target_len - 1)));
    out[static_cast<size_t>(i)] = z[static_cast<size_t>(src)];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Corpus generation
// ---------------------------------------------------------------------------

inline Corpus gen_corpus(const CorpusConfig& cfg, int64_t n_utterances, int64_t n_sentences) {
  if (cfg.chars.empty()) throw ConfigError("gen_corpus: empty character vocabulary");
  if (cfg.n_speakers < 1) throw ConfigError("gen_corpus: need at least one speaker");
  Corpus corpus;
  corpus.cfg = cfg;
  const CharVocab vocab = cfg.vocab();
  for (int64_t i = 0; i < n_utterances; ++i) {
    Rng rng = Rng::derive(cfg.seed, static_cast<uint64_t>(i));
    Utterance u;
    u.id = i;
    u.text = random_text(cfg, cfg.min_chars, cfg.max_chars, rng);
    u.speaker = rng.randint(cfg.n_speakers);
    u.wave = synth_wave(cfg, u.text, u.speaker, rng);
    u.noisy = add_noise_at_snr(u.wave, cfg.snr_db, rng);
    u.translation = translate_text(u.text, vocab);
    corpus.utterances.push_back(std::move(u));
  }
  for (int64_t i = 0; i < n_sentences; ++i) {
    Rng rng = Rng::derive(cfg.seed ^ 0x5eed5eedULL, static_cast<uint64_t>(i));
    corpus.sentences.push_back(
        random_text(cfg, cfg.min_sentence_chars, cfg.max_sentence_chars, rng));
  }
  // Normalization statistics over all clean features.
  corpus.feat_mean.assign(static_cast<size_t>(cfg.mel_bins), 0.0);
  corpus.feat_std.assign(static_cast<size_t>(cfg.mel_bins), 1.0);
  if (!corpus.utterances.empty()) {
    std::vector<double> sum(static_cast<size_t>(cfg.mel_bins), 0.0);
    std::vector<double> sumsq(static_cast<size_t>(cfg.mel_bins), 0.0);
    int64_t count = 0;
    for (const auto& u : corpus.utterances) {
      Tensor f = logmel(u.wave, cfg.frame_len, cfg.hop, cfg.mel_bins, cfg.sample_rate);
      for (int64_t i = 0; i < f.dim(0); ++i, ++count)
        for (int64_t m = 0; m < cfg.mel_bins; ++m) {
          sum[static_cast<size_t>(m)] += f.at(i, m);
          sumsq[static_cast<size_t>(m)] += f.at(i, m) * f.at(i, m);
        }
    }
    for (int64_t m = 0; m < cfg.mel_bins; ++m) {
      double mu = sum[static_cast<size_t>(m)] / static_cast<double>(count);
      double var = sumsq[static_cast<size_t>(m)] / static_cast<double>(count) - mu * mu;
      corpus.feat_mean[static_cast<size_t>(m)] = mu;
      corpus.feat_std[static_cast<size_t>(m)] = std::sqrt(std::max(var, 1e-8));
    }
  }
  return corpus;
}

inline Tensor normalize_features(const Tensor& feats, const Corpus& corpus) {
  Tensor out = feats.detach();
  for (int64_t i = 0; i < out.dim(0); ++i)
    for (int64_t m = 0; m < out.dim(1); ++m)
      out.at(i, m) = (out.at(i, m) - corpus.feat_mean[static_cast<size_t>(m)]) /
                     corpus.feat_std[static_cast<size_t>(m)];
  return out;
}

inline Tensor denormalize_features(const Tensor& feats, const Corpus& corpus) {
  Tensor out = feats.detach();
  for (int64_t i = 0; i < out.dim(0); ++i)
    for (int64_t m = 0; m < out.dim(1); ++m)
      out.at(i, m) = out.at(i, m) * corpus.feat_std[static_cast<size_t>(m)] +
                     corpus.feat_mean[static_cast<size_t>(m)];
  return out;
}

// ---------------------------------------------------------------------------
// On-disk formats
// ---------------------------------------------------------------------------
// Waveforms: 8-byte header ("USTA" + u32 version), then little-endian f32.
// Features: 8-byte header ("USTF" + u32 version), u32 rows, u32 cols, f32 data.
// meta.jsonl: one JSON object per utterance. corpus.json: corpus-level fields.

namespace detail {

inline void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw DataError("unexpected end of file reading u32");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline void write_f32(std::ostream& os, const std::vector<double>& data) {
  for (double v : data) {
    float f = static_cast<float>(v);
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    write_u32(os, bits);
  }
}

inline std::vector<double> read_f32(std::istream& is, size_t count) {
  std::vector<double> out(count);
  for (size_t i = 0; i < count; ++i) {
    uint32_t bits = read_u32(is);
    float f;
    std::memcpy(&f, &bits, 4);
    out[i] = static_cast<double>(f);
  }
  return out;
}

}  // namespace detail

inline void save_wave(const std::vector<double>& wave, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path + " for writing");
  os.write("USTA", 4);
  detail::write_u32(os, 1);
  detail::write_f32(os, wave);
}

inline std::vector<double> load_wave(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "USTA", 4) != 0)
    throw DataError(path + ": bad waveform magic");
  uint32_t version = detail::read_u32(is);
  if (version != 1) throw DataError(path + ": unsupported waveform version");
  is.seekg(0, std::ios::end);
  auto bytes = static_cast<int64_t>(is.tellg()) - 8;
  if (bytes < 0 || bytes % 4 != 0) throw DataError(path + ": truncated waveform payload");
  is.seekg(8);
  return detail::read_f32(is, static_cast<size_t>(bytes / 4));
}

inline void save_features(const Tensor& feats, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path + " for writing");
  os.write("USTF", 4);
  detail::write_u32(os, 1);
  detail::write_u32(os, static_cast<uint32_t>(feats.dim(0)));
  detail::write_u32(os, static_cast<uint32_t>(feats.dim(1)));
  detail::write_f32(os, feats.values());
}

inline Tensor load_features(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "USTF", 4) != 0)
    throw DataError(path + ": bad feature magic");
  uint32_t version = detail::read_u32(is);
  if (version != 1) throw DataError(path + ": unsupported feature version");
  int64_t rows = detail::read_u32(is);
  int64_t cols = detail::read_u32(is);
  return Tensor({rows, cols}, detail::read_f32(is, static_cast<size_t>(rows * cols)));
}

void save_corpus(const Corpus& corpus, const std::string& dir);
Corpus load_corpus(const std::string& dir);

}  // namespace ust

#include "json.hpp"

namespace ust {

inline void save_corpus(const Corpus& corpus, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  fs::create_directories(dir + "/audio");
  fs::create_directories(dir + "/feats");

  nlohmann::json root;
  const CorpusConfig& c = corpus.cfg;
  root["seed"] = c.seed;
  root["sample_rate"] = c.sample_rate;
  root["samples_per_char"] = c.samples_per_char;
  root["n_speakers"] = c.n_speakers;
  root["min_chars"] = c.min_chars;
  root["max_chars"] = c.max_chars;
  root["min_sentence_chars"] = c.min_sentence_chars;
  root["max_sentence_chars"] = c.max_sentence_chars;
  root["noise_level"] = c.noise_level;
  root["snr_db"] = c.snr_db;
  root["frame_len"] = c.frame_len;
  root["hop"] = c.hop;
  root["mel_bins"] = c.mel_bins;
  root["chars"] = c.chars;
  root["feat_mean"] = corpus.feat_mean;
  root["feat_std"] = corpus.feat_std;
  {
    std::ofstream os(dir + "/corpus.json");
    os << root.dump(2) << "\n";
  }
  {
    std::ofstream meta(dir + "/meta.jsonl");
    for (const auto& u : corpus.utterances) {
      std::string stem = "utt" + std::to_string(u.id);
      save_wave(u.wave, dir + "/audio/" + stem + ".wav.ust");
      Tensor feats = logmel(u.wave, c.frame_len, c.hop, c.mel_bins, c.sample_rate);
      save_features(feats, dir + "/feats/" + stem + ".mel.ust");
      nlohmann::json rec;
      rec["id"] = u.id;
      rec["text"] = u.text;
      rec["speaker"] = u.speaker;
      rec["audio"] = "audio/" + stem + ".wav.ust";
      rec["feats"] = "feats/" + stem + ".mel.ust";
      rec["translation"] = u.translation;
      if (u.noisy) {
        save_wave(*u.noisy, dir + "/audio/" + stem + ".noisy.ust");
        rec["noisy"] = "audio/" + stem + ".noisy.ust";
      }
      meta << rec.dump() << "\n";
    }
  }
  {
    std::ofstream st(dir + "/sentences.txt");
    for (const auto& s : corpus.sentences) st << s << "\n";
  }
}

inline Corpus load_corpus(const std::string& dir) {
  std::ifstream cf(dir + "/corpus.json");
  if (!cf) throw DataError("missing corpus description at " + dir + "/corpus.json");
  nlohmann::json root;
  try {
    cf >> root;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(dir + "/corpus.json: " + e.what());
  }
  Corpus corpus;
  CorpusConfig& c = corpus.cfg;
  c.seed = root.at("seed").get<uint64_t>();
  c.sample_rate = root.at("sample_rate").get<int64_t>();
  c.samples_per_char = root.at("samples_per_char").get<int64_t>();
  c.n_speakers = root.at("n_speakers").get<int64_t>();
  c.min_chars = root.at("min_chars").get<int64_t>();
  c.max_chars = root.at("max_chars").get<int64_t>();
  c.min_sentence_chars = root.at("min_sentence_chars").get<int64_t>();
  c.max_sentence_chars = root.at("max_sentence_chars").get<int64_t>();
  c.noise_level = root.at("noise_level").get<double>();
  c.snr_db = root.at("snr_db").get<double>();
  c.frame_len = root.at("frame_len").get<int64_t>();
  c.hop = root.at("hop").get<int64_t>();
  c.mel_bins = root.at("mel_bins").get<int64_t>();
  c.chars = root.at("chars").get<std::string>();
  corpus.feat_mean = root.at("feat_mean").get<std::vector<double>>();
  corpus.feat_std = root.at("feat_std").get<std::vector<double>>();

  std::ifstream meta(dir + "/meta.jsonl");
  if (!meta) throw DataError("missing " + dir + "/meta.jsonl");
  std::string line;
  while (std::getline(meta, line)) {
    if (line.empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(dir + "/meta.jsonl: " + e.what());
    }
    Utterance u;
    u.id = rec.at("id").get<int64_t>();
    u.text = rec.at("text").get<std::string>();
    u.speaker = rec.at("speaker").get<int64_t>();
    u.wave = load_wave(dir + "/" + rec.at("audio").get<std::string>());
    u.translation = rec.value("translation", std::string());
    if (rec.contains("noisy")) u.noisy = load_wave(dir + "/" + rec.at("noisy").get<std::string>());
    corpus.utterances.push_back(std::move(u));
  }
  std::ifstream st(dir + "/sentences.txt");
  while (std::getline(st, line))
    if (!line.empty()) corpus.sentences.push_back(line);
  return corpus;
}

}  // namespace ust
