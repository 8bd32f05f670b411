#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "ust/errors.hpp"
#include "ust/tensor.hpp"

namespace ust {

// Levenshtein distance (unit costs) over reference length.
inline double wer(const std::vector<std::string>& hyp, const std::vector<std::string>& ref) {
  if (ref.empty()) throw ContractError("wer: empty reference");
  const size_t h = hyp.size(), r = ref.size();
  std::vector<std::vector<int64_t>> d(h + 1, std::vector<int64_t>(r + 1, 0));
  for (size_t i = 0; i <= h; ++i) d[i][0] = static_cast<int64_t>(i);
  for (size_t j = 0; j <= r; ++j) d[0][j] = static_cast<int64_t>(j);
  for (size_t i = 1; i <= h; ++i)
    for (size_t j = 1; j <= r; ++j) {
      int64_t sub = d[i - 1][j - 1] + (hyp[i - 1] == ref[j - 1] ? 0 : 1);
      d[i][j] = std::min({sub, d[i - 1][j] + 1, d[i][j - 1] + 1});
    }
  return static_cast<double>(d[h][r]) / static_cast<double>(r);
}

inline std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::istringstream is(text);
  std::string w;
  while (is >> w) words.push_back(w);
  return words;
}

// Character error rate via the same edit distance over characters.
inline double cer(const std::string& hyp, const std::string& ref) {
  if (ref.empty()) throw ContractError("cer: empty reference");
  std::vector<std::string> h, r;
  for (char c : hyp) h.emplace_back(1, c);
  for (char c : ref) r.emplace_back(1, c);
  return wer(h, r);
}

// Mel-cepstra: plain DCT-II of each log-Mel frame, coefficients 1..order
// (c0 excluded). Order clips to the available bins.
inline Tensor mel_cepstra(const Tensor& logmel_frames, int64_t order = 13) {
  const int64_t n = logmel_frames.dim(0), m = logmel_frames.dim(1);
  const int64_t k_max = std::min(order, m - 1);
  Tensor out({n, k_max});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t k = 1; k <= k_max; ++k) {
      double acc = 0.0;
      for (int64_t j = 0; j < m; ++j)
        acc += logmel_frames.at(i, j) *
               std::cos(M_PI * static_cast<double>(k) * (static_cast<double>(j) + 0.5) /
                        static_cast<double>(m));
      out.at(i, k - 1) = acc;
    }
  return out;
}

struct DtwResult {
  double total_cost = 0.0;
  std::vector<std::pair<int64_t, int64_t>> path;
};

// Symmetric DTW (match/insert/delete) with Euclidean local cost.
inline DtwResult dtw(const Tensor& a, const Tensor& b) {
  const int64_t n = a.dim(0), m = b.dim(0), dim = a.dim(1);
  if (b.dim(1) != dim) throw DimensionError("dtw: dimension mismatch");
  auto cost = [&](int64_t i, int64_t j) {
    double d = 0.0;
    for (int64_t c = 0; c < dim; ++c) {
      double diff = a.at(i, c) - b.at(j, c);
      d += diff * diff;
    }
    return std::sqrt(d);
  };
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> acc(static_cast<size_t>(n),
                                       std::vector<double>(static_cast<size_t>(m), inf));
  std::vector<std::vector<int8_t>> from(static_cast<size_t>(n),
                                        std::vector<int8_t>(static_cast<size_t>(m), 0));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < m; ++j) {
      double c = cost(i, j);
      if (i == 0 && j == 0) {
        acc[0][0] = c;
        continue;
      }
      double best = inf;
      int8_t dir = 0;
      if (i > 0 && j > 0 && acc[static_cast<size_t>(i - 1)][static_cast<size_t>(j - 1)] < best) {
        best = acc[static_cast<size_t>(i - 1)][static_cast<size_t>(j - 1)];
        dir = 1;  // diagonal
      }
      if (i > 0 && acc[static_cast<size_t>(i - 1)][static_cast<size_t>(j)] < best) {
        best = acc[static_cast<size_t>(i - 1)][static_cast<size_t>(j)];
        dir = 2;  // deletion
      }
      if (j > 0 && acc[static_cast<size_t>(i)][static_cast<size_t>(j - 1)] < best) {
        best = acc[static_cast<size_t>(i)][static_cast<size_t>(j - 1)];
        dir = 3;  // insertion
      }
      acc[static_cast<size_t>(i)][static_cast<size_t>(j)] = best + c;
      from[static_cast<size_t>(i)][static_cast<size_t>(j)] = dir;
    }
  DtwResult res;
  res.total_cost = acc[static_cast<size_t>(n - 1)][static_cast<size_t>(m - 1)];
  int64_t i = n - 1, j = m - 1;
  while (true) {
    res.path.emplace_back(i, j);
    int8_t dir = from[static_cast<size_t>(i)][static_cast<size_t>(j)];
    if (i == 0 && j == 0) break;
    if (dir == 1) {
      --i;
      --j;
    } else if (dir == 2) {
      --i;
    } else {
      --j;
    }
  }
  std::reverse(res.path.begin(), res.path.end());
  return res;
}

// Mel-cepstral distortion in dB along the DTW alignment of the two cepstra.
inline double mcd_dtw(const Tensor& generated, const Tensor& reference, int64_t order = 13) {
  if (generated.dim(0) < 1 || reference.dim(0) < 1)
    throw ContractError("mcd_dtw: empty input");
  Tensor cg = mel_cepstra(generated, order);
  Tensor cr = mel_cepstra(reference, order);
  DtwResult res = dtw(cg, cr);
  double mean_cost = res.total_cost / static_cast<double>(res.path.size());
  constexpr double k = 10.0 * M_SQRT2 / M_LN10;
  return k * mean_cost;
}

inline double accuracy(const std::vector<int64_t>& preds, const std::vector<int64_t>& labels) {
  if (preds.size() != labels.size() || labels.empty())
    throw ContractError("accuracy: size mismatch or empty inputs");
  int64_t correct = 0;
  for (size_t i = 0; i < preds.size(); ++i) correct += preds[i] == labels[i];
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

// Aggregate metric plus its per-utterance breakdown. The aggregate is the
// weighted mean of the breakdown and must reproduce from it exactly.
struct MetricReport {
  std::string name;
  double value = 0.0;
  int64_t count = 0;
  struct Entry {
    std::string id;
    double value;
    double weight;
  };
  std::vector<Entry> breakdown;

  void add(const std::string& id, double v, double weight = 1.0) {
    breakdown.push_back({id, v, weight});
    ++count;
    value = recompute();
  }

  double recompute() const {
    double num = 0.0, den = 0.0;
    for (const auto& e : breakdown) {
      num += e.value * e.weight;
      den += e.weight;
    }
    return den == 0.0 ? 0.0 : num / den;
  }
};

// One record per line; a machine-readable summary goes beside it.
inline void write_report(const std::vector<MetricReport>& reports, const std::string& path_prefix) {
  std::ofstream lines(path_prefix + ".jsonl");
  if (!lines) throw DataError("cannot open " + path_prefix + ".jsonl");
  for (const auto& r : reports)
    for (const auto& e : r.breakdown)
      lines << "{\"metric\":\"" << r.name << "\",\"id\":\"" << e.id << "\",\"value\":" << e.value
            << ",\"weight\":" << e.weight << "}\n";
  std::ofstream summary(path_prefix + ".summary.json");
  summary << "{\n";
  for (size_t i = 0; i < reports.size(); ++i)
    summary << "  \"" << reports[i].name << "\": {\"value\": " << reports[i].value
            << ", \"count\": " << reports[i].count << "}" << (i + 1 < reports.size() ? "," : "")
            << "\n";
  summary << "}\n";
}

}  // namespace ust
