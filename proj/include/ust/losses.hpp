#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ust/errors.hpp"
#include "ust/masking.hpp"
#include "ust/tensor.hpp"

namespace ust {

struct LossWeights {
  double gamma = 0.1;             // diversity weight in the total
  double ctc_weight = 0.5;        // ASR fine-tuning mix
  double stop_pos_weight = 5.0;   // positive-class weight of the stop BCE
  double attraction_weight = 0.25;
  double guided_attn_weight = 0.2;
  double guided_attn_sigma = 0.4;

  void validate() const {
    if (gamma < 0 || ctc_weight < 0 || stop_pos_weight < 0 || attraction_weight < 0 ||
        guided_attn_weight < 0)
      throw ConfigError("LossWeights: weights must be non-negative");
  }
};

struct DecodeConfig {
  double alpha = 0.5;      // decoder/CTC interpolation
  double beta = 0.0;       // external LM weight
  int64_t beam = 4;
  int64_t max_steps = 64;
  double stop_threshold = 0.5;

  void validate() const {
    if (alpha < 0.0 || alpha > 1.0) throw ConfigError("DecodeConfig: alpha must lie in [0,1]");
    if (beam < 1) throw ConfigError("DecodeConfig: beam size must be >= 1");
    if (max_steps < 1) throw ConfigError("DecodeConfig: max_steps must be >= 1");
  }
};

// Cross-entropy over masked timesteps only (mean by default).
inline Tensor mlm_loss(const Tensor& logits, const std::vector<int64_t>& targets,
                       const MaskSet& mask, bool mean_normalize = true) {
  if (mask.empty()) throw ContractError("mlm_loss: empty mask set");
  if (logits.dim(0) != static_cast<int64_t>(targets.size()))
    throw DimensionError("mlm_loss: logits rows " + std::to_string(logits.dim(0)) +
                         " vs targets " + std::to_string(targets.size()));
  std::vector<int64_t> rows = mask.sorted();
  std::vector<int64_t> cols;
  cols.reserve(rows.size());
  for (int64_t r : rows) {
    if (r < 0 || r >= logits.dim(0))
      throw ContractError("mlm_loss: masked step " + std::to_string(r) + " out of range");
    cols.push_back(targets[static_cast<size_t>(r)]);
  }
  Tensor picked = take_rc(log_softmax(logits, 1), rows, cols);
  return neg(mean_normalize ? mean(picked) : sum(picked));
}

// Frame reconstruction: sum of per-frame L1 distances, divided by the frame
// count in mean mode.
inline Tensor recon_l1(const Tensor& predicted, const Tensor& target,
                       bool mean_normalize = true) {
  detail::check_same_shape("recon_l1", predicted, target);
  Tensor total = sum(ust::abs(sub(predicted, target)));
  return mean_normalize ? mul_scalar(total, 1.0 / static_cast<double>(predicted.dim(0)))
                        : total;
}

// Weighted BCE against a one-hot-at-final-frame stop target.
inline Tensor stop_bce(const Tensor& stop_logits, int64_t final_index,
                       double pos_weight = 5.0, bool mean_normalize = true) {
  if (stop_logits.rank() != 1) throw DimensionError("stop_bce: logits must be rank 1");
  const int64_t n = stop_logits.dim(0);
  if (final_index < 0 || final_index >= n)
    throw ContractError("stop_bce: final index " + std::to_string(final_index) +
                        " outside [0," + std::to_string(n) + ")");
  // z*w*softplus(-x) + (1-z)*softplus(x), z one-hot at final_index.
  Tensor pos_mask({n});
  Tensor neg_mask({n}, 1.0);
  pos_mask.at(final_index) = pos_weight;
  neg_mask.at(final_index) = 0.0;
  Tensor loss_vec = add(mul(pos_mask, softplus(neg(stop_logits))),
                        mul(neg_mask, softplus(stop_logits)));
  Tensor total = sum(loss_vec);
  return mean_normalize ? mul_scalar(total, 1.0 / static_cast<double>(n)) : total;
}

// Token-level NLL with teacher forcing (logits row n scores target n).
inline Tensor text_mle(const Tensor& logits, const std::vector<int64_t>& targets,
                       bool mean_normalize = true) {
  if (logits.dim(0) != static_cast<int64_t>(targets.size()))
    throw DimensionError("text_mle: logits rows " + std::to_string(logits.dim(0)) +
                         " vs targets " + std::to_string(targets.size()));
  if (targets.empty()) throw ContractError("text_mle: empty target sequence");
  std::vector<int64_t> rows(targets.size());
  for (size_t i = 0; i < targets.size(); ++i) rows[i] = static_cast<int64_t>(i);
  Tensor picked = take_rc(log_softmax(logits, 1), rows, targets);
  return neg(mean_normalize ? mean(picked) : sum(picked));
}

// Minimum frame count that can align a blank-augmented label sequence.
inline int64_t ctc_min_frames(const std::vector<int64_t>& targets) {
  int64_t need = static_cast<int64_t>(targets.size());
  for (size_t i = 1; i < targets.size(); ++i)
    if (targets[i] == targets[i - 1]) ++need;
  return need;
}

// CTC forward algorithm in log space over the blank-augmented label sequence;
// returns -log of the total alignment probability. Differentiable: the DP is
// built from tape primitives.
inline Tensor ctc_loss(const Tensor& logits, const std::vector<int64_t>& targets,
                       int64_t blank = 0) {
  if (logits.rank() != 2) throw DimensionError("ctc_loss: logits must be [T, vocab]");
  const int64_t T = logits.dim(0);
  const int64_t vocab = logits.dim(1);
  for (int64_t t : targets)
    if (t < 0 || t >= vocab || t == blank)
      throw ContractError("ctc_loss: target id " + std::to_string(t) +
                          " invalid for vocab of " + std::to_string(vocab));
  if (T < ctc_min_frames(targets))
    throw NumericError("ctc_loss: target of " + std::to_string(targets.size()) +
                       " labels unalignable within " + std::to_string(T) + " frames");

  Tensor logp = log_softmax(logits, 1);
  const int64_t L = static_cast<int64_t>(targets.size());
  const int64_t S = 2 * L + 1;
  auto ext_label = [&](int64_t s) {
    return s % 2 == 0 ? blank : targets[static_cast<size_t>(s / 2)];
  };

  // alpha[s] holds log prob of prefix alignments ending in state s; absent
  // entries are unreachable (-inf).
  std::vector<std::optional<Tensor>> alpha(static_cast<size_t>(S));
  alpha[0] = pick(logp, 0 * vocab + ext_label(0));
  if (S > 1) alpha[1] = pick(logp, 0 * vocab + ext_label(1));
  for (int64_t t = 1; t < T; ++t) {
    std::vector<std::optional<Tensor>> next(static_cast<size_t>(S));
    for (int64_t s = 0; s < S; ++s) {
      // Reachability pruning from both ends.
      if (s > 2 * t + 1) continue;
      if (s < S - 2 * (T - t)) continue;
      std::optional<Tensor> acc = alpha[static_cast<size_t>(s)];
      if (s >= 1 && alpha[static_cast<size_t>(s - 1)])
        acc = acc ? logaddexp(*acc, *alpha[static_cast<size_t>(s - 1)])
                  : alpha[static_cast<size_t>(s - 1)];
      if (s >= 2 && ext_label(s) != blank && ext_label(s) != ext_label(s - 2) &&
          alpha[static_cast<size_t>(s - 2)])
        acc = acc ? logaddexp(*acc, *alpha[static_cast<size_t>(s - 2)])
                  : alpha[static_cast<size_t>(s - 2)];
      if (!acc) continue;
      next[static_cast<size_t>(s)] = add(*acc, pick(logp, t * vocab + ext_label(s)));
    }
    alpha = std::move(next);
  }
  std::optional<Tensor> total = alpha[static_cast<size_t>(S - 1)];
  if (S > 1 && alpha[static_cast<size_t>(S - 2)])
    total = total ? logaddexp(*total, *alpha[static_cast<size_t>(S - 2)])
                  : alpha[static_cast<size_t>(S - 2)];
  if (!total) throw NumericError("ctc_loss: no feasible alignment");
  return neg(*total);
}

// Component losses of one pre-training update; undefined members are skipped.
struct PretrainParts {
  Tensor mlm;
  Tensor l1;
  Tensor bce;
  Tensor mle;
  Tensor diversity;
  Tensor attraction;  // reported separately, not part of the headline total
};

// Total = mlm + l1 + bce + mle + gamma * diversity.
inline Tensor pretrain_total(const PretrainParts& parts, double gamma) {
  Tensor total;
  auto accumulate = [&](const Tensor& t) {
    if (t.defined()) total = total.defined() ? add(total, t) : t;
  };
  accumulate(parts.mlm);
  accumulate(parts.l1);
  accumulate(parts.bce);
  accumulate(parts.mle);
  if (parts.diversity.defined()) accumulate(mul_scalar(parts.diversity, gamma));
  if (!total.defined()) throw ContractError("pretrain_total: no loss components");
  return total;
}

// alpha*logP_dec + (1-alpha)*logP_ctc + beta*logP_lm
inline double joint_decode_score(double log_p_dec, double log_p_ctc, double log_p_lm,
                                 const DecodeConfig& cfg) {
  return cfg.alpha * log_p_dec + (1.0 - cfg.alpha) * log_p_ctc + cfg.beta * log_p_lm;
}

// Near-diagonal penalty on cross-attention maps: mean over heads and cells of
// A[t,n] * (1 - exp(-(n/N - t/T)^2 / (2 sigma^2))).
inline Tensor guided_attention_loss(const std::vector<Tensor>& cross_attention,
                                    double sigma = 0.4) {
  if (cross_attention.empty())
    throw ContractError("guided_attention_loss: no attention maps");
  Tensor total;
  for (const Tensor& attn : cross_attention) {
    const int64_t T = attn.dim(0), N = attn.dim(1);
    Tensor w({T, N});
    for (int64_t t = 0; t < T; ++t)
      for (int64_t n = 0; n < N; ++n) {
        double dt = static_cast<double>(n) / static_cast<double>(N) -
                    static_cast<double>(t) / static_cast<double>(T);
        w.at(t, n) = 1.0 - std::exp(-dt * dt / (2.0 * sigma * sigma));
      }
    Tensor term = mean(mul(attn, w));
    total = total.defined() ? add(total, term) : term;
  }
  return mul_scalar(total, 1.0 / static_cast<double>(cross_attention.size()));
}

}  // namespace ust
