#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ust/errors.hpp"
#include "ust/params.hpp"
#include "ust/tensor.hpp"

namespace ust {

struct BackboneConfig {
  int64_t enc_layers = 2;          // full scale: 12
  int64_t dec_layers = 2;          // full scale: 6
  int64_t dim = 64;                // full scale: 768
  int64_t ffn_dim = 256;           // full scale: 3072
  int64_t heads = 4;               // full scale: 12
  int64_t rel_buckets = 32;        // full scale: 320
  int64_t rel_max_distance = 64;   // full scale: 800
  bool use_rel_pos = true;
  double ln_eps = 1e-5;

  void validate() const {
    if (dim % heads != 0) throw ConfigError("BackboneConfig: dim must be divisible by heads");
    if (rel_buckets < 4 || rel_buckets % 2 != 0)
      throw ConfigError("BackboneConfig: rel_buckets must be even and >= 4");
    if (rel_max_distance < rel_buckets / 4)
      throw ConfigError("BackboneConfig: rel_max_distance must cover the exact buckets");
  }
};

// Symmetric log-spaced bucketing of key-minus-query offsets: exact buckets up
// to buckets/4, logarithmic beyond, clamped at max_distance; positive offsets
// take the upper half of the table.
inline int64_t relpos_bucket(int64_t offset, int64_t buckets, int64_t max_distance) {
  const int64_t half = buckets / 2;
  int64_t ret = offset > 0 ? half : 0;
  int64_t n = offset > 0 ? offset : -offset;
  const int64_t max_exact = half / 2;
  if (n < max_exact) return ret + n;
  double frac = std::log(static_cast<double>(n) / static_cast<double>(max_exact)) /
                std::log(static_cast<double>(max_distance) / static_cast<double>(max_exact));
  int64_t bucket = max_exact + static_cast<int64_t>(frac * static_cast<double>(half - max_exact));
  return ret + std::min(bucket, half - 1);
}

// Learned [buckets x heads] scalar bias table shared across layers; bias
// depends only on (key position - query position).
struct RelPosBias {
  Tensor table;
  int64_t buckets = 0;
  int64_t max_distance = 0;

  static RelPosBias create(ParamRegistry& reg, const BackboneConfig& cfg, Rng& rng) {
    RelPosBias b;
    b.buckets = cfg.rel_buckets;
    b.max_distance = cfg.rel_max_distance;
    b.table = reg.add("backbone.relpos", Tensor::randn({cfg.rel_buckets, cfg.heads}, rng, 0.1));
    return b;
  }

  // [Tq, Tk] bias for one head given absolute positions.
  Tensor matrix(const std::vector<int64_t>& qpos, const std::vector<int64_t>& kpos,
                int64_t head) const {
    std::vector<int64_t> rows;
    std::vector<int64_t> cols;
    rows.reserve(qpos.size() * kpos.size());
    cols.reserve(qpos.size() * kpos.size());
    for (int64_t q : qpos)
      for (int64_t k : kpos) {
        rows.push_back(relpos_bucket(k - q, buckets, max_distance));
        cols.push_back(head);
      }
    return reshape(take_rc(table, rows, cols),
                   {static_cast<int64_t>(qpos.size()), static_cast<int64_t>(kpos.size())});
  }
};

using PadMask = std::vector<char>;  // 1 = padded; empty = no padding

// Attention probability rows captured during a forward pass, for the guided
// attention penalty and for tests.
struct AttnTrace {
  std::vector<Tensor> enc_self;
  std::vector<Tensor> dec_self;
  std::vector<Tensor> dec_cross;
};

namespace detail {

// Additive mask: 0 where attendable, -1e30 where excluded.
inline Tensor attention_mask(int64_t tq, int64_t tk, const PadMask& key_pad, bool causal) {
  Tensor m({tq, tk});
  for (int64_t i = 0; i < tq; ++i)
    for (int64_t j = 0; j < tk; ++j) {
      bool blocked = causal && j > i;
      if (!key_pad.empty() && key_pad[static_cast<size_t>(j)]) blocked = true;
      if (blocked) m.at(i, j) = -1e30;
    }
  return m;
}

}  // namespace detail

struct MultiHeadAttention {
  Linear q, k, v, o;
  int64_t heads = 0;

  static MultiHeadAttention create(ParamRegistry& reg, const std::string& name, int64_t dim,
                                   int64_t heads, Rng& rng) {
    MultiHeadAttention a;
    a.heads = heads;
    a.q = Linear::create(reg, name + ".q", dim, dim, rng);
    a.k = Linear::create(reg, name + ".k", dim, dim, rng);
    a.v = Linear::create(reg, name + ".v", dim, dim, rng);
    a.o = Linear::create(reg, name + ".o", dim, dim, rng);
    return a;
  }

  // bias: optional per-head provider; mask: optional additive [Tq, Tk].
  Tensor forward(const Tensor& query_in, const Tensor& kv_in, const RelPosBias* bias,
                 const Tensor* mask, std::vector<Tensor>* probs_out = nullptr) const {
    const int64_t dim = q.w.dim(1);
    const int64_t dh = dim / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Tensor Q = q.forward(query_in);
    Tensor K = k.forward(kv_in);
    Tensor V = v.forward(kv_in);
    std::vector<int64_t> qpos(static_cast<size_t>(query_in.dim(0)));
    std::vector<int64_t> kpos(static_cast<size_t>(kv_in.dim(0)));
    for (size_t i = 0; i < qpos.size(); ++i) qpos[i] = static_cast<int64_t>(i);
    for (size_t i = 0; i < kpos.size(); ++i) kpos[i] = static_cast<int64_t>(i);

    Tensor ctx;
    for (int64_t h = 0; h < heads; ++h) {
      Tensor qh = slice(Q, 1, h * dh, dh);
      Tensor kh = slice(K, 1, h * dh, dh);
      Tensor vh = slice(V, 1, h * dh, dh);
      Tensor logits = mul_scalar(matmul(qh, transpose(kh)), scale);
      if (bias) logits = add(logits, bias->matrix(qpos, kpos, h));
      if (mask) logits = add(logits, *mask);
      Tensor attn = softmax(logits, 1);
      if (probs_out) probs_out->push_back(attn);
      Tensor ch = matmul(attn, vh);
      ctx = h == 0 ? ch : concat(ctx, ch, 1);
    }
    return o.forward(ctx);
  }
};

struct EncoderLayer {
  LayerNormParams ln1, ln2;
  MultiHeadAttention attn;
  Linear ff1, ff2;

  static EncoderLayer create(ParamRegistry& reg, const std::string& name,
                             const BackboneConfig& cfg, Rng& rng) {
    EncoderLayer l;
    l.ln1 = LayerNormParams::create(reg, name + ".ln1", cfg.dim);
    l.ln2 = LayerNormParams::create(reg, name + ".ln2", cfg.dim);
    l.attn = MultiHeadAttention::create(reg, name + ".attn", cfg.dim, cfg.heads, rng);
    l.ff1 = Linear::create(reg, name + ".ff1", cfg.dim, cfg.ffn_dim, rng);
    l.ff2 = Linear::create(reg, name + ".ff2", cfg.ffn_dim, cfg.dim, rng);
    return l;
  }
};

struct DecoderLayer {
  LayerNormParams ln1, ln2, ln3;
  MultiHeadAttention self_attn, cross_attn;
  Linear ff1, ff2;

  static DecoderLayer create(ParamRegistry& reg, const std::string& name,
                             const BackboneConfig& cfg, Rng& rng) {
    DecoderLayer l;
    l.ln1 = LayerNormParams::create(reg, name + ".ln1", cfg.dim);
    l.ln2 = LayerNormParams::create(reg, name + ".ln2", cfg.dim);
    l.ln3 = LayerNormParams::create(reg, name + ".ln3", cfg.dim);
    l.self_attn = MultiHeadAttention::create(reg, name + ".self", cfg.dim, cfg.heads, rng);
    l.cross_attn = MultiHeadAttention::create(reg, name + ".cross", cfg.dim, cfg.heads, rng);
    l.ff1 = Linear::create(reg, name + ".ff1", cfg.dim, cfg.ffn_dim, rng);
    l.ff2 = Linear::create(reg, name + ".ff2", cfg.ffn_dim, cfg.dim, rng);
    return l;
  }
};

// Pre-norm Transformer encoder-decoder. Relative position bias applies to
// self-attention only; cross-attention carries no positional term.
struct Backbone {
  BackboneConfig cfg;
  std::vector<EncoderLayer> enc;
  std::vector<DecoderLayer> dec;
  LayerNormParams enc_final, dec_final;
  RelPosBias relpos;

  static Backbone create(ParamRegistry& reg, const BackboneConfig& cfg, Rng& rng) {
    cfg.validate();
    Backbone b;
    b.cfg = cfg;
    b.relpos = RelPosBias::create(reg, cfg, rng);
    for (int64_t i = 0; i < cfg.enc_layers; ++i)
      b.enc.push_back(EncoderLayer::create(reg, "enc" + std::to_string(i), cfg, rng));
    for (int64_t i = 0; i < cfg.dec_layers; ++i)
      b.dec.push_back(DecoderLayer::create(reg, "dec" + std::to_string(i), cfg, rng));
    b.enc_final = LayerNormParams::create(reg, "enc_final_ln", cfg.dim);
    b.dec_final = LayerNormParams::create(reg, "dec_final_ln", cfg.dim);
    return b;
  }

  Tensor encode(const Tensor& embedded, const PadMask& pad = {},
                AttnTrace* trace = nullptr) const {
    if (embedded.rank() != 2 || embedded.dim(0) < 1)
      throw ContractError("encode: input must be [N, d], non-empty");
    if (!pad.empty()) {
      if (static_cast<int64_t>(pad.size()) != embedded.dim(0))
        throw DimensionError("encode: pad mask length mismatch");
      bool all_pad = true;
      for (char c : pad) all_pad = all_pad && c;
      if (all_pad) throw ContractError("encode: all positions padded");
    }
    const int64_t n = embedded.dim(0);
    Tensor mask;
    bool has_mask = !pad.empty();
    if (has_mask) mask = detail::attention_mask(n, n, pad, false);
    const RelPosBias* bias = cfg.use_rel_pos ? &relpos : nullptr;
    Tensor x = embedded;
    for (const auto& layer : enc) {
      Tensor pre = layer.ln1.forward(x, cfg.ln_eps);
      Tensor h = layer.attn.forward(pre, pre, bias, has_mask ? &mask : nullptr,
                                    trace ? &trace->enc_self : nullptr);
      x = add(x, h);
      Tensor f = layer.ff2.forward(gelu(layer.ff1.forward(layer.ln2.forward(x, cfg.ln_eps))));
      x = add(x, f);
    }
    return enc_final.forward(x, cfg.ln_eps);
  }

  Tensor decode(const Tensor& target_in, const Tensor& memory, const PadMask& mem_pad = {},
                AttnTrace* trace = nullptr) const {
    if (memory.rank() != 2 || memory.dim(0) < 1)
      throw ContractError("decode: memory must be [N, d], non-empty");
    if (target_in.rank() != 2 || target_in.dim(0) < 1)
      throw ContractError("decode: target must be [T, d], non-empty");
    const int64_t t = target_in.dim(0);
    const int64_t n = memory.dim(0);
    Tensor causal = detail::attention_mask(t, t, {}, true);
    Tensor cross_mask;
    bool has_cross_mask = !mem_pad.empty();
    if (has_cross_mask) {
      if (static_cast<int64_t>(mem_pad.size()) != n)
        throw DimensionError("decode: memory pad mask length mismatch");
      cross_mask = detail::attention_mask(t, n, mem_pad, false);
    }
    const RelPosBias* bias = cfg.use_rel_pos ? &relpos : nullptr;
    Tensor x = target_in;
    for (const auto& layer : dec) {
      Tensor pre = layer.ln1.forward(x, cfg.ln_eps);
      Tensor h = layer.self_attn.forward(pre, pre, bias, &causal,
                                         trace ? &trace->dec_self : nullptr);
      x = add(x, h);
      Tensor c = layer.cross_attn.forward(layer.ln2.forward(x, cfg.ln_eps), memory, nullptr,
                                          has_cross_mask ? &cross_mask : nullptr,
                                          trace ? &trace->dec_cross : nullptr);
      x = add(x, c);
      Tensor f = layer.ff2.forward(gelu(layer.ff1.forward(layer.ln3.forward(x, cfg.ln_eps))));
      x = add(x, f);
    }
    return dec_final.forward(x, cfg.ln_eps);
  }
};

}  // namespace ust
