#pragma once

#include <algorithm>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "ust/errors.hpp"
#include "ust/rng.hpp"

namespace ust {

// Masked frame indices for one utterance.
struct MaskSet {
  std::set<int64_t> timesteps;
  int64_t total_length = 0;

  bool empty() const { return timesteps.empty(); }
  std::vector<int64_t> sorted() const {
    return std::vector<int64_t>(timesteps.begin(), timesteps.end());
  }
};

// A corrupted token sequence plus everything needed to rebuild the original.
struct TextCorruption {
  std::vector<int64_t> corrupted;
  std::vector<int64_t> original;
  // (start, length) of each replaced span, in original coordinates, sorted.
  std::vector<std::pair<int64_t, int64_t>> span_map;
};

// T5 variant: per-span sentinels, target is the sentinel-delimited removal.
struct T5Corruption {
  std::vector<int64_t> corrupted;
  std::vector<int64_t> original;
  std::vector<int64_t> target;
  std::vector<std::pair<int64_t, int64_t>> span_map;
};

// Independent start indices with probability p_start, each masking `span`
// following steps; spans truncate at the end and overlaps merge.
inline MaskSet speech_span_mask(int64_t n_frames, double p_start, int64_t span, Rng& rng) {
  if (n_frames < 1) throw ContractError("speech_span_mask: n_frames must be >= 1");
  if (p_start < 0.0 || p_start > 1.0)
    throw ContractError("speech_span_mask: p_start must lie in [0,1]");
  MaskSet m;
  m.total_length = n_frames;
  for (int64_t t = 0; t < n_frames; ++t) {
    if (rng.uniform() < p_start) {
      int64_t end = std::min(n_frames, t + span);
      for (int64_t u = t; u < end; ++u) m.timesteps.insert(u);
    }
  }
  return m;
}

namespace detail {

struct Gap {
  int64_t start;
  int64_t length;
};

inline std::vector<Gap> free_gaps(int64_t n,
                                  const std::vector<std::pair<int64_t, int64_t>>& spans) {
  std::vector<Gap> gaps;
  int64_t cursor = 0;
  for (const auto& [s, len] : spans) {
    if (s > cursor) gaps.push_back({cursor, s - cursor});
    cursor = s + len;
  }
  if (cursor < n) gaps.push_back({cursor, n - cursor});
  return gaps;
}

// Draw non-overlapping spans until `mask_ratio * n` tokens are covered (or no
// room remains). Lengths are Poisson(lambda) with zero-draws redrawn and long
// draws clipped to the widest remaining gap.
inline std::vector<std::pair<int64_t, int64_t>> sample_spans(int64_t n, double mask_ratio,
                                                             double lambda, Rng& rng) {
  std::vector<std::pair<int64_t, int64_t>> spans;
  const int64_t target = static_cast<int64_t>(mask_ratio * static_cast<double>(n));
  int64_t covered = 0;
  while (covered < target) {
    auto gaps = free_gaps(n, spans);
    if (gaps.empty()) break;
    int64_t max_gap = 0;
    for (const auto& g : gaps) max_gap = std::max(max_gap, g.length);
    int64_t len = 0;
    while (len == 0) len = rng.poisson(lambda);
    len = std::min(len, max_gap);
    int64_t n_starts = 0;
    for (const auto& g : gaps)
      if (g.length >= len) n_starts += g.length - len + 1;
    int64_t choice = rng.randint(n_starts);
    int64_t start = 0;
    for (const auto& g : gaps) {
      if (g.length < len) continue;
      int64_t here = g.length - len + 1;
      if (choice < here) {
        start = g.start + choice;
        break;
      }
      choice -= here;
    }
    spans.emplace_back(start, len);
    std::sort(spans.begin(), spans.end());
    covered += len;
  }
  return spans;
}

}  // namespace detail

// Collapse each span to a single mask token. Spans must be sorted and
// non-overlapping; exposed so tests can force exact spans.
inline TextCorruption apply_infill_spans(const std::vector<int64_t>& tokens,
                                         std::vector<std::pair<int64_t, int64_t>> spans,
                                         int64_t mask_token) {
  TextCorruption out;
  out.original = tokens;
  out.span_map = std::move(spans);
  size_t next = 0;
  const int64_t n = static_cast<int64_t>(tokens.size());
  for (int64_t i = 0; i < n;) {
    if (next < out.span_map.size() && out.span_map[next].first == i) {
      out.corrupted.push_back(mask_token);
      i += out.span_map[next].second;
      ++next;
    } else {
      out.corrupted.push_back(tokens[static_cast<size_t>(i)]);
      ++i;
    }
  }
  return out;
}

// Span k becomes sentinel_base + k; target lists sentinel then span contents.
inline T5Corruption apply_t5_spans(const std::vector<int64_t>& tokens,
                                   std::vector<std::pair<int64_t, int64_t>> spans,
                                   int64_t sentinel_base) {
  T5Corruption out;
  out.original = tokens;
  out.span_map = std::move(spans);
  size_t next = 0;
  const int64_t n = static_cast<int64_t>(tokens.size());
  for (int64_t i = 0; i < n;) {
    if (next < out.span_map.size() && out.span_map[next].first == i) {
      out.corrupted.push_back(sentinel_base + static_cast<int64_t>(next));
      i += out.span_map[next].second;
      ++next;
    } else {
      out.corrupted.push_back(tokens[static_cast<size_t>(i)]);
      ++i;
    }
  }
  for (size_t k = 0; k < out.span_map.size(); ++k) {
    out.target.push_back(sentinel_base + static_cast<int64_t>(k));
    const auto& [s, len] = out.span_map[k];
    for (int64_t i = s; i < s + len; ++i)
      out.target.push_back(tokens[static_cast<size_t>(i)]);
  }
  return out;
}

// BART-style infilling: sample spans until mask_ratio of the tokens is
// covered, then collapse each span to one mask token.
inline TextCorruption text_infill(const std::vector<int64_t>& tokens, double mask_ratio,
                                  double lambda, int64_t mask_token, Rng& rng) {
  if (tokens.empty()) throw ContractError("text_infill: empty token sequence");
  if (mask_ratio < 0.0 || mask_ratio >= 1.0)
    throw ContractError("text_infill: mask_ratio must lie in [0,1)");
  const int64_t n = static_cast<int64_t>(tokens.size());
  if (n < 2 || mask_ratio == 0.0)
    return apply_infill_spans(tokens, {}, mask_token);
  return apply_infill_spans(tokens, detail::sample_spans(n, mask_ratio, lambda, rng),
                            mask_token);
}

inline T5Corruption t5_span_mask(const std::vector<int64_t>& tokens, double mask_ratio,
                                 double mean_span, int64_t sentinel_base,
                                 int64_t n_sentinels, Rng& rng) {
  if (tokens.empty()) throw ContractError("t5_span_mask: empty token sequence");
  if (mask_ratio < 0.0 || mask_ratio >= 1.0)
    throw ContractError("t5_span_mask: mask_ratio must lie in [0,1)");
  const int64_t n = static_cast<int64_t>(tokens.size());
  if (n < 2 || mask_ratio == 0.0) return apply_t5_spans(tokens, {}, sentinel_base);
  auto spans = detail::sample_spans(n, mask_ratio, mean_span, rng);
  if (static_cast<int64_t>(spans.size()) > n_sentinels)
    spans.resize(static_cast<size_t>(n_sentinels));
  return apply_t5_spans(tokens, std::move(spans), sentinel_base);
}

// Rebuild the original from the corruption and its span map.
inline std::vector<int64_t> reconstruct_text(const TextCorruption& c) {
  std::vector<int64_t> rebuilt;
  size_t next = 0;
  int64_t orig_pos = 0;
  for (int64_t tok : c.corrupted) {
    if (next < c.span_map.size() && c.span_map[next].first == orig_pos) {
      const auto& [s, len] = c.span_map[next];
      for (int64_t i = s; i < s + len; ++i)
        rebuilt.push_back(c.original[static_cast<size_t>(i)]);
      orig_pos += len;
      ++next;
    } else {
      rebuilt.push_back(tok);
      ++orig_pos;
    }
  }
  return rebuilt;
}

}  // namespace ust
