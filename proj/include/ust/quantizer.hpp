#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "ust/errors.hpp"
#include "ust/params.hpp"
#include "ust/rng.hpp"
#include "ust/tensor.hpp"

namespace ust {

struct QuantizerConfig {
  int64_t groups = 2;        // full scale: 2 codebooks
  int64_t entries = 16;      // full scale: 100 per codebook
  double temperature = 1.0;  // soft-assignment temperature
  bool joint_diversity = false;  // false: per-group V in the diversity loss

  void validate(int64_t dim) const {
    if (groups < 1 || entries < 1) throw ConfigError("QuantizerConfig: groups/entries >= 1");
    if (dim % groups != 0)
      throw ConfigError("QuantizerConfig: groups must divide model dim " + std::to_string(dim));
  }
};

// Product codebook: `groups` independent tables over contiguous sub-vectors.
// Effective code count is entries^groups.
struct Codebook {
  int64_t groups = 0;
  int64_t entries = 0;
  int64_t subdim = 0;
  std::vector<Tensor> tables;  // per group: [entries, subdim]

  static Codebook create(ParamRegistry& reg, const QuantizerConfig& cfg, int64_t dim,
                         Rng& rng) {
    cfg.validate(dim);
    Codebook cb;
    cb.groups = cfg.groups;
    cb.entries = cfg.entries;
    cb.subdim = dim / cfg.groups;
    for (int64_t g = 0; g < cfg.groups; ++g)
      cb.tables.push_back(reg.add("codebook.g" + std::to_string(g),
                                  Tensor::randn({cfg.entries, cb.subdim}, rng, 0.5)));
    return cb;
  }
};

struct QuantizerOutput {
  std::vector<std::vector<int64_t>> indices;  // [N][groups]
  Tensor quantized;                           // [N, dim], codebook values, detached
  std::vector<Tensor> soft_probs;             // per group [entries], differentiable
  std::vector<Tensor> frame_probs;            // per group [N, entries], differentiable
};

// Hard nearest-neighbor assignment per group (ties break to the lowest
// index), plus the batch-averaged soft assignment used by the diversity loss.
inline QuantizerOutput quantize(const Tensor& u, const Codebook& cb,
                                double temperature = 1.0) {
  if (u.rank() != 2 || u.dim(1) != cb.groups * cb.subdim)
    throw DimensionError("quantize: input " + shape_str(u.shape()) +
                         " does not match codebook of " + std::to_string(cb.groups) + "x" +
                         std::to_string(cb.subdim));
  const int64_t n = u.dim(0);
  QuantizerOutput out;
  out.indices.assign(static_cast<size_t>(n), std::vector<int64_t>(cb.groups, 0));
  out.quantized = Tensor({n, u.dim(1)});

  for (int64_t g = 0; g < cb.groups; ++g) {
    const Tensor& table = cb.tables[static_cast<size_t>(g)];
    // Hard assignment on exact per-element distances.
    for (int64_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::max();
      int64_t best_j = 0;
      for (int64_t j = 0; j < cb.entries; ++j) {
        double d = 0.0;
        for (int64_t c = 0; c < cb.subdim; ++c) {
          double diff = u.at(i, g * cb.subdim + c) - table.at(j, c);
          d += diff * diff;
        }
        if (d < best) {
          best = d;
          best_j = j;
        }
      }
      out.indices[static_cast<size_t>(i)][static_cast<size_t>(g)] = best_j;
      for (int64_t c = 0; c < cb.subdim; ++c)
        out.quantized.at(i, g * cb.subdim + c) = table.at(best_j, c);
    }
    // Differentiable soft assignment: softmax(-||u - c||^2 / tau), batch mean.
    Tensor ug = slice(u, 1, g * cb.subdim, cb.subdim);
    Tensor cross = matmul(ug, transpose(table));                      // [N, V]
    Tensor u2 = sum_axis(mul(ug, ug), 1);                             // [N]
    Tensor c2 = sum_axis(mul(table, table), 1);                       // [V]
    Tensor d2 = add_colvec(add_rowvec(mul_scalar(cross, -2.0), c2), u2);
    Tensor probs = softmax(mul_scalar(d2, -1.0 / temperature), 1);
    out.frame_probs.push_back(probs);
    out.soft_probs.push_back(mean_axis(probs, 0));
  }
  return out;
}

struct MixupResult {
  Tensor mixed;                    // [N, dim]
  std::vector<int64_t> positions;  // replaced timesteps, sorted
};

// Replace exactly round(ratio*N) distinct timesteps with their quantized
// vectors. Forward uses the codebook values; backward passes gradients
// straight through to `u` at replaced steps.
inline MixupResult mixup(const Tensor& u, const QuantizerOutput& q, double ratio, Rng& rng) {
  if (ratio < 0.0 || ratio > 1.0) throw ContractError("mixup: ratio must lie in [0,1]");
  const int64_t n = u.dim(0);
  int64_t count = static_cast<int64_t>(std::llround(ratio * static_cast<double>(n)));
  std::vector<int64_t> order(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  for (int64_t i = 0; i < count; ++i) {
    int64_t j = i + rng.randint(n - i);
    std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
  }
  MixupResult out;
  out.positions.assign(order.begin(), order.begin() + count);
  std::sort(out.positions.begin(), out.positions.end());
  out.mixed = out.positions.empty() ? u : mixup_rows(u, q.quantized, out.positions);
  return out;
}

// Mean over groups of (1/V) * sum_k p_k ln p_k; minimized at uniform usage.
// Accepts any per-group probability vectors (each summing to 1).
inline Tensor diversity_loss(const std::vector<Tensor>& soft_probs) {
  if (soft_probs.empty()) throw ContractError("diversity_loss: no probability vectors");
  Tensor total;
  for (const Tensor& p : soft_probs) {
    for (int64_t i = 0; i < p.size(); ++i)
      if (p.at(i) < 0.0) throw ContractError("diversity_loss: negative probability");
    Tensor term = mul_scalar(sum(xlogx(p)), 1.0 / static_cast<double>(p.size()));
    total = total.defined() ? add(total, term) : term;
  }
  return mul_scalar(total, 1.0 / static_cast<double>(soft_probs.size()));
}

// Joint variant over the product code space: p is the batch mean of the
// outer product of the two groups' frame distributions, K = V^2.
inline Tensor diversity_loss_joint(const std::vector<Tensor>& frame_probs) {
  if (frame_probs.size() != 2)
    throw ConfigError("diversity_loss_joint: needs exactly two groups");
  const Tensor& p1 = frame_probs[0];
  const Tensor& p2 = frame_probs[1];
  double inv_n = 1.0 / static_cast<double>(p1.dim(0));
  Tensor joint = mul_scalar(matmul(transpose(p1), p2), inv_n);  // [V, V]
  return mul_scalar(sum(xlogx(joint)), 1.0 / static_cast<double>(joint.size()));
}

// VQ-VAE-style codebook attraction: mean_n ||stop_grad(u_n) - c(idx_n)||^2.
// Only the codebook receives gradient.
inline Tensor codebook_attraction(const Tensor& u, const QuantizerOutput& q,
                                  const Codebook& cb) {
  const int64_t n = u.dim(0);
  Tensor total;
  for (int64_t g = 0; g < cb.groups; ++g) {
    std::vector<int64_t> ids(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i)
      ids[static_cast<size_t>(i)] = q.indices[static_cast<size_t>(i)][static_cast<size_t>(g)];
    Tensor rows = embedding_lookup(cb.tables[static_cast<size_t>(g)], ids);  // [N, subdim]
    Tensor ug_const = slice(u, 1, g * cb.subdim, cb.subdim).detach();
    Tensor diff = sub(rows, ug_const);
    Tensor term = mul_scalar(sum(mul(diff, diff)), 1.0 / static_cast<double>(n));
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

}  // namespace ust
