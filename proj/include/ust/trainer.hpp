#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "ust/errors.hpp"
#include "ust/params.hpp"
#include "ust/rng.hpp"
#include "ust/tasks.hpp"

namespace ust {

struct OptimConfig {
  double peak_lr = 2e-4;
  double warmup_fraction = 0.08;
  int64_t total_steps = 1000;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double clip_norm = 5.0;  // 0 disables clipping
  int64_t accum_steps = 1;

  void validate() const {
    if (warmup_fraction <= 0.0 || warmup_fraction >= 1.0)
      throw ConfigError("OptimConfig: warmup_fraction must lie in (0,1)");
    if (total_steps < 1) throw ConfigError("OptimConfig: total_steps must be >= 1");
    if (accum_steps < 1) throw ConfigError("OptimConfig: accum_steps must be >= 1");
  }
};

// Linear 0 -> peak over the warmup steps, then linear peak -> 0.
inline double lr_at(int64_t step, const OptimConfig& cfg) {
  cfg.validate();
  const double warmup = std::round(cfg.warmup_fraction * static_cast<double>(cfg.total_steps));
  const double s = static_cast<double>(std::min(step, cfg.total_steps));
  if (s <= warmup) return cfg.peak_lr * s / warmup;
  return cfg.peak_lr * (static_cast<double>(cfg.total_steps) - s) /
         (static_cast<double>(cfg.total_steps) - warmup);
}

// Bias-corrected Adam moments, one slot per registered parameter.
struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  int64_t t = 0;

  static AdamState create(const ParamRegistry& params) {
    AdamState s;
    for (const auto& [name, tensor] : params.items()) {
      s.m.emplace_back(static_cast<size_t>(tensor.size()), 0.0);
      s.v.emplace_back(static_cast<size_t>(tensor.size()), 0.0);
    }
    return s;
  }
};

// Global-norm clip followed by one Adam update over every parameter.
// Gradients are consumed (zeroed) by the call.
inline void adam_step(ParamRegistry& params, AdamState& state, double lr,
                      const OptimConfig& cfg) {
  const auto& items = params.items();
  if (state.m.size() != items.size())
    throw ContractError("adam_step: optimizer state does not match registry");

  double sq_norm = 0.0;
  for (const auto& [name, tensor] : items) {
    for (double g : tensor.grad()) {
      if (!std::isfinite(g))
        throw NumericError("adam_step: non-finite gradient in parameter " + name);
      sq_norm += g * g;
    }
  }
  double scale = 1.0;
  if (cfg.clip_norm > 0.0) {
    double norm = std::sqrt(sq_norm);
    if (norm > cfg.clip_norm) scale = cfg.clip_norm / norm;
  }

  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (size_t p = 0; p < items.size(); ++p) {
    Tensor tensor = items[p].second;
    const auto& grad = tensor.grad();
    auto& m = state.m[p];
    auto& v = state.v[p];
    for (int64_t i = 0; i < tensor.size(); ++i) {
      double g = grad[static_cast<size_t>(i)] * scale;
      m[static_cast<size_t>(i)] = cfg.beta1 * m[static_cast<size_t>(i)] + (1.0 - cfg.beta1) * g;
      v[static_cast<size_t>(i)] =
          cfg.beta2 * v[static_cast<size_t>(i)] + (1.0 - cfg.beta2) * g * g;
      double mhat = m[static_cast<size_t>(i)] / bc1;
      double vhat = v[static_cast<size_t>(i)] / bc2;
      tensor.at(i) -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
    tensor.zero_grad();
  }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------
// Layout: "USTC" magic, u32 version, u64 config fingerprint, u64 step,
// u64 adam_t, 4x u64 rng state, length-prefixed config text, then
// length-prefixed named blocks of little-endian doubles (value, m, v).

struct TrainState {
  Model model;
  AdamState opt;
  int64_t step = 0;
  Rng rng{1};
  uint64_t fingerprint = 0;
  std::string config_text;
};

namespace detail {

inline void write_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw DataError("checkpoint: unexpected end of file");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

inline void write_doubles(std::ostream& os, const std::vector<double>& data) {
  for (double d : data) {
    uint64_t bits;
    std::memcpy(&bits, &d, 8);
    write_u64(os, bits);
  }
}

inline std::vector<double> read_doubles(std::istream& is, size_t n) {
  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) {
    uint64_t bits = read_u64(is);
    std::memcpy(&out[i], &bits, 8);
  }
  return out;
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is) {
  uint64_t n = read_u64(is);
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw DataError("checkpoint: unexpected end of file in string");
  return s;
}

}  // namespace detail

inline void save_checkpoint(const TrainState& state, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path + " for writing");
  os.write("USTC", 4);
  detail::write_u64(os, 1);  // version
  detail::write_u64(os, state.fingerprint);
  detail::write_u64(os, static_cast<uint64_t>(state.step));
  detail::write_u64(os, static_cast<uint64_t>(state.opt.t));
  for (uint64_t w : state.rng.state()) detail::write_u64(os, w);
  detail::write_string(os, state.config_text);
  const auto& items = state.model.params.items();
  detail::write_u64(os, items.size());
  for (size_t p = 0; p < items.size(); ++p) {
    const auto& [name, tensor] = items[p];
    detail::write_string(os, name);
    detail::write_u64(os, tensor.shape().size());
    for (int64_t d : tensor.shape()) detail::write_u64(os, static_cast<uint64_t>(d));
    detail::write_doubles(os, tensor.values());
    detail::write_doubles(os, state.opt.m[p]);
    detail::write_doubles(os, state.opt.v[p]);
  }
  if (!os) throw DataError("checkpoint: write failed for " + path);
}

struct CheckpointData {
  uint64_t fingerprint = 0;
  int64_t step = 0;
  int64_t adam_t = 0;
  std::array<uint64_t, 4> rng_state{};
  std::string config_text;
  struct Block {
    std::string name;
    Shape shape;
    std::vector<double> value;
    std::vector<double> m;
    std::vector<double> v;
  };
  std::vector<Block> blocks;

  const Block* find(const std::string& name) const {
    for (const auto& b : blocks)
      if (b.name == name) return &b;
    return nullptr;
  }
};

inline CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "USTC", 4) != 0)
    throw DataError(path + ": bad checkpoint magic");
  if (detail::read_u64(is) != 1) throw DataError(path + ": unsupported checkpoint version");
  CheckpointData data;
  data.fingerprint = detail::read_u64(is);
  data.step = static_cast<int64_t>(detail::read_u64(is));
  data.adam_t = static_cast<int64_t>(detail::read_u64(is));
  for (auto& w : data.rng_state) w = detail::read_u64(is);
  data.config_text = detail::read_string(is);
  uint64_t n = detail::read_u64(is);
  for (uint64_t p = 0; p < n; ++p) {
    CheckpointData::Block b;
    b.name = detail::read_string(is);
    uint64_t rank = detail::read_u64(is);
    for (uint64_t r = 0; r < rank; ++r)
      b.shape.push_back(static_cast<int64_t>(detail::read_u64(is)));
    size_t count = static_cast<size_t>(numel(b.shape));
    b.value = detail::read_doubles(is, count);
    b.m = detail::read_doubles(is, count);
    b.v = detail::read_doubles(is, count);
    data.blocks.push_back(std::move(b));
  }
  return data;
}

// Restore a full training state (resume): every block must match exactly.
inline void restore_train_state(TrainState& state, const CheckpointData& data) {
  if (data.fingerprint != state.fingerprint)
    throw ConfigError("checkpoint fingerprint mismatch: saved " +
                      std::to_string(data.fingerprint) + ", configured " +
                      std::to_string(state.fingerprint));
  const auto& items = state.model.params.items();
  if (items.size() != data.blocks.size())
    throw DataError("checkpoint: parameter count mismatch");
  for (size_t p = 0; p < items.size(); ++p) {
    const auto& [name, tensor] = items[p];
    const auto& block = data.blocks[p];
    if (block.name != name || block.shape != tensor.shape())
      throw DataError("checkpoint: block " + block.name + " does not match parameter " + name);
    Tensor t = tensor;
    std::copy(block.value.begin(), block.value.end(), t.data());
    state.opt.m[p] = block.m;
    state.opt.v[p] = block.v;
  }
  state.step = data.step;
  state.opt.t = data.adam_t;
  state.rng.set_state(data.rng_state);
}

// One pre-training update: sample batches with the state rng, run the
// combined forward/backward (honoring gradient accumulation), apply Adam at
// the scheduled learning rate.
inline StepLosses pretrain_update(TrainState& st, const std::vector<Example>& speech_pool,
                                  const std::vector<Example>& text_pool,
                                  const PretrainOptions& opts, const OptimConfig& ocfg,
                                  int64_t speech_batch, int64_t text_batch) {
  if (speech_pool.empty() || text_pool.empty())
    throw ContractError("pretrain_update: empty example pool");
  st.model.params.zero_grad();
  StepLosses avg;
  for (int64_t a = 0; a < ocfg.accum_steps; ++a) {
    std::vector<Example> sb, tb;
    for (int64_t i = 0; i < speech_batch; ++i)
      sb.push_back(speech_pool[static_cast<size_t>(
          st.rng.randint(static_cast<int64_t>(speech_pool.size())))]);
    for (int64_t i = 0; i < text_batch; ++i)
      tb.push_back(text_pool[static_cast<size_t>(
          st.rng.randint(static_cast<int64_t>(text_pool.size())))]);
    StepLosses l = pretrain_step(st.model, sb, tb, opts, st.rng);
    double w = 1.0 / static_cast<double>(ocfg.accum_steps);
    avg.mlm += w * l.mlm;
    avg.l1 += w * l.l1;
    avg.bce += w * l.bce;
    avg.mle += w * l.mle;
    avg.diversity += w * l.diversity;
    avg.attraction += w * l.attraction;
    avg.total += w * l.total;
    avg.objective += w * l.objective;
  }
  adam_step(st.model.params, st.opt, lr_at(st.step + 1, ocfg), ocfg);
  ++st.step;
  return avg;
}

// One fine-tuning update over batches sampled from the pool.
inline FinetuneLosses finetune_update(TrainState& st, const TaskSpec& task,
                                      const std::vector<Example>& pool,
                                      const FinetuneOptions& opts, const OptimConfig& ocfg,
                                      int64_t batch_size) {
  if (pool.empty()) throw ContractError("finetune_update: empty example pool");
  st.model.params.zero_grad();
  std::vector<Example> batch;
  for (int64_t i = 0; i < batch_size; ++i)
    batch.push_back(
        pool[static_cast<size_t>(st.rng.randint(static_cast<int64_t>(pool.size())))]);
  FinetuneLosses l = finetune_step(st.model, task, batch, opts);
  adam_step(st.model.params, st.opt, lr_at(st.step + 1, ocfg), ocfg);
  ++st.step;
  return l;
}

// Initialize a (possibly different-task) model from a checkpoint: shared
// names load, everything else keeps its fresh initialization. Returns the
// names that were loaded.
inline std::vector<std::string> transfer_params(Model& model, const CheckpointData& data,
                                                uint64_t expected_fingerprint) {
  if (data.fingerprint != expected_fingerprint)
    throw ConfigError("checkpoint fingerprint mismatch: saved " +
                      std::to_string(data.fingerprint) + ", configured " +
                      std::to_string(expected_fingerprint));
  std::vector<std::string> loaded;
  for (const auto& [name, tensor] : model.params.items()) {
    const CheckpointData::Block* block = data.find(name);
    if (!block) continue;
    if (block->shape != tensor.shape())
      throw DataError("checkpoint: shape mismatch for " + name);
    Tensor t = tensor;
    std::copy(block->value.begin(), block->value.end(), t.data());
    loaded.push_back(name);
  }
  return loaded;
}

}  // namespace ust
