#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "ust/data.hpp"
#include "ust/errors.hpp"
#include "ust/losses.hpp"
#include "ust/tasks.hpp"
#include "ust/trainer.hpp"

namespace ust {

inline uint64_t fnv1a64(const std::string& text) {
  uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

namespace detail {

// Strict reader: every key must be consumed, unknown keys are rejected.
class JsonReader {
 public:
  JsonReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  bool has(const char* key) const { return j_.contains(key); }

  const nlohmann::json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key()))
        throw ConfigError(path_ + ": unknown key \"" + it.key() + "\"");
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

// The canonical run configuration: model architecture, data recipe, masking
// and quantizer behavior, loss weights, schedule, and decoding parameters.
struct RunConfig {
  uint64_t seed = 1;
  ModelConfig model;
  CorpusConfig data;
  int64_t kmeans_iters = 25;
  PretrainOptions pretrain;
  FinetuneOptions finetune;
  OptimConfig optim;
  DecodeConfig decode;
  int64_t speech_batch = 4;
  int64_t text_batch = 8;
  int64_t batch_size = 4;   // fine-tuning
  int64_t ckpt_every = 100;

  static RunConfig from_json(const nlohmann::json& root);
  static RunConfig from_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open config " + path);
    nlohmann::json j;
    try {
      is >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path + ": " + e.what());
    }
    return from_json(j);
  }

  nlohmann::json to_json() const;

  // Architecture compatibility hash over the canonical model section.
  uint64_t fingerprint() const { return fnv1a64(to_json().at("model").dump()); }

  void validate() const {
    model.validate();
    optim.validate();
    decode.validate();
    pretrain.weights.validate();
  }
};

inline RunConfig RunConfig::from_json(const nlohmann::json& root) {
  RunConfig cfg;
  detail::JsonReader r(root, "config");
  r.get("seed", cfg.seed);

  if (const auto* j = r.child("model")) {
    detail::JsonReader m(*j, "model");
    m.get("dim", cfg.model.net.dim);
    m.get("mel_bins", cfg.model.net.mel_bins);
    m.get("conv_channels", cfg.model.net.conv_channels);
    m.get("conv_strides", cfg.model.net.conv_strides);
    m.get("conv_kernels", cfg.model.net.conv_kernels);
    m.get("dec_prenet_hidden", cfg.model.net.dec_prenet_hidden);
    m.get("postnet_layers", cfg.model.net.postnet_layers);
    m.get("postnet_channels", cfg.model.net.postnet_channels);
    m.get("postnet_kernel", cfg.model.net.postnet_kernel);
    m.get("vocab_size", cfg.model.net.vocab_size);
    m.get("n_speakers", cfg.model.net.n_speakers);
    m.get("speaker_dim", cfg.model.net.speaker_dim);
    m.get("n_units", cfg.model.net.n_units);
    m.get("enc_layers", cfg.model.backbone.enc_layers);
    m.get("dec_layers", cfg.model.backbone.dec_layers);
    m.get("ffn_dim", cfg.model.backbone.ffn_dim);
    m.get("heads", cfg.model.backbone.heads);
    m.get("rel_buckets", cfg.model.backbone.rel_buckets);
    m.get("rel_max_distance", cfg.model.backbone.rel_max_distance);
    m.get("use_rel_pos", cfg.model.backbone.use_rel_pos);
    m.get("quant_groups", cfg.model.quantizer.groups);
    m.get("quant_entries", cfg.model.quantizer.entries);
    m.finish();
    cfg.model.backbone.dim = cfg.model.net.dim;
  }

  if (const auto* j = r.child("data")) {
    detail::JsonReader d(*j, "data");
    d.get("seed", cfg.data.seed);
    d.get("sample_rate", cfg.data.sample_rate);
    d.get("samples_per_char", cfg.data.samples_per_char);
    d.get("n_speakers", cfg.data.n_speakers);
    d.get("min_chars", cfg.data.min_chars);
    d.get("max_chars", cfg.data.max_chars);
    d.get("min_sentence_chars", cfg.data.min_sentence_chars);
    d.get("max_sentence_chars", cfg.data.max_sentence_chars);
    d.get("noise_level", cfg.data.noise_level);
    d.get("snr_db", cfg.data.snr_db);
    d.get("frame_len", cfg.data.frame_len);
    d.get("hop", cfg.data.hop);
    d.get("mel_bins", cfg.data.mel_bins);
    d.get("chars", cfg.data.chars);
    d.get("kmeans_iters", cfg.kmeans_iters);
    d.finish();
  }

  if (const auto* j = r.child("pretrain")) {
    detail::JsonReader p(*j, "pretrain");
    p.get("p_start", cfg.pretrain.p_start);
    p.get("span", cfg.pretrain.span);
    p.get("text_mask_ratio", cfg.pretrain.text_mask_ratio);
    p.get("poisson_lambda", cfg.pretrain.poisson_lambda);
    std::string mode = cfg.pretrain.text_mask_mode == TextMaskMode::BART ? "bart" : "t5";
    p.get("text_mask_mode", mode);
    if (mode == "bart")
      cfg.pretrain.text_mask_mode = TextMaskMode::BART;
    else if (mode == "t5")
      cfg.pretrain.text_mask_mode = TextMaskMode::T5;
    else
      throw ConfigError("pretrain.text_mask_mode: expected \"bart\" or \"t5\"");
    p.get("mixup_ratio", cfg.pretrain.mixup_ratio);
    p.get("quant_temperature", cfg.pretrain.quant_temperature);
    p.get("speech_pt", cfg.pretrain.speech_pt);
    p.get("text_pt", cfg.pretrain.text_pt);
    p.get("joint_pt", cfg.pretrain.joint_pt);
    p.get("mlm", cfg.pretrain.mlm);
    p.get("joint_diversity", cfg.pretrain.joint_diversity);
    p.get("speech_batch", cfg.speech_batch);
    p.get("text_batch", cfg.text_batch);
    p.finish();
  }

  if (const auto* j = r.child("loss")) {
    detail::JsonReader l(*j, "loss");
    LossWeights& w = cfg.pretrain.weights;
    l.get("gamma", w.gamma);
    l.get("ctc_weight", w.ctc_weight);
    l.get("stop_pos_weight", w.stop_pos_weight);
    l.get("attraction_weight", w.attraction_weight);
    l.get("guided_attn_weight", w.guided_attn_weight);
    l.get("guided_attn_sigma", w.guided_attn_sigma);
    l.get("mean_normalize", cfg.pretrain.mean_normalize);
    l.finish();
    cfg.finetune.weights = w;
    cfg.finetune.mean_normalize = cfg.pretrain.mean_normalize;
  }

  if (const auto* j = r.child("optim")) {
    detail::JsonReader o(*j, "optim");
    o.get("peak_lr", cfg.optim.peak_lr);
    o.get("warmup_fraction", cfg.optim.warmup_fraction);
    o.get("total_steps", cfg.optim.total_steps);
    o.get("beta1", cfg.optim.beta1);
    o.get("beta2", cfg.optim.beta2);
    o.get("eps", cfg.optim.eps);
    o.get("clip_norm", cfg.optim.clip_norm);
    o.get("accum_steps", cfg.optim.accum_steps);
    o.finish();
  }

  if (const auto* j = r.child("decode")) {
    detail::JsonReader d(*j, "decode");
    d.get("alpha", cfg.decode.alpha);
    d.get("beta", cfg.decode.beta);
    d.get("beam", cfg.decode.beam);
    d.get("max_steps", cfg.decode.max_steps);
    d.get("stop_threshold", cfg.decode.stop_threshold);
    d.finish();
  }

  if (const auto* j = r.child("train")) {
    detail::JsonReader t(*j, "train");
    t.get("batch_size", cfg.batch_size);
    t.get("ckpt_every", cfg.ckpt_every);
    t.finish();
  }

  r.finish();
  cfg.validate();
  return cfg;
}

inline nlohmann::json RunConfig::to_json() const {
  nlohmann::json root;
  root["seed"] = seed;
  nlohmann::json& m = root["model"];
  m["dim"] = model.net.dim;
  m["mel_bins"] = model.net.mel_bins;
  m["conv_channels"] = model.net.conv_channels;
  m["conv_strides"] = model.net.conv_strides;
  m["conv_kernels"] = model.net.conv_kernels;
  m["dec_prenet_hidden"] = model.net.dec_prenet_hidden;
  m["postnet_layers"] = model.net.postnet_layers;
  m["postnet_channels"] = model.net.postnet_channels;
  m["postnet_kernel"] = model.net.postnet_kernel;
  m["vocab_size"] = model.net.vocab_size;
  m["n_speakers"] = model.net.n_speakers;
  m["speaker_dim"] = model.net.speaker_dim;
  m["n_units"] = model.net.n_units;
  m["enc_layers"] = model.backbone.enc_layers;
  m["dec_layers"] = model.backbone.dec_layers;
  m["ffn_dim"] = model.backbone.ffn_dim;
  m["heads"] = model.backbone.heads;
  m["rel_buckets"] = model.backbone.rel_buckets;
  m["rel_max_distance"] = model.backbone.rel_max_distance;
  m["use_rel_pos"] = model.backbone.use_rel_pos;
  m["quant_groups"] = model.quantizer.groups;
  m["quant_entries"] = model.quantizer.entries;
  nlohmann::json& d = root["data"];
  d["seed"] = data.seed;
  d["sample_rate"] = data.sample_rate;
  d["samples_per_char"] = data.samples_per_char;
  d["n_speakers"] = data.n_speakers;
  d["min_chars"] = data.min_chars;
  d["max_chars"] = data.max_chars;
  d["min_sentence_chars"] = data.min_sentence_chars;
  d["max_sentence_chars"] = data.max_sentence_chars;
  d["noise_level"] = data.noise_level;
  d["snr_db"] = data.snr_db;
  d["frame_len"] = data.frame_len;
  d["hop"] = data.hop;
  d["mel_bins"] = data.mel_bins;
  d["chars"] = data.chars;
  d["kmeans_iters"] = kmeans_iters;
  nlohmann::json& p = root["pretrain"];
  p["p_start"] = pretrain.p_start;
  p["span"] = pretrain.span;
  p["text_mask_ratio"] = pretrain.text_mask_ratio;
  p["poisson_lambda"] = pretrain.poisson_lambda;
  p["text_mask_mode"] = pretrain.text_mask_mode == TextMaskMode::BART ? "bart" : "t5";
  p["mixup_ratio"] = pretrain.mixup_ratio;
  p["quant_temperature"] = pretrain.quant_temperature;
  p["speech_pt"] = pretrain.speech_pt;
  p["text_pt"] = pretrain.text_pt;
  p["joint_pt"] = pretrain.joint_pt;
  p["mlm"] = pretrain.mlm;
  p["joint_diversity"] = pretrain.joint_diversity;
  p["speech_batch"] = speech_batch;
  p["text_batch"] = text_batch;
  nlohmann::json& l = root["loss"];
  l["gamma"] = pretrain.weights.gamma;
  l["ctc_weight"] = pretrain.weights.ctc_weight;
  l["stop_pos_weight"] = pretrain.weights.stop_pos_weight;
  l["attraction_weight"] = pretrain.weights.attraction_weight;
  l["guided_attn_weight"] = pretrain.weights.guided_attn_weight;
  l["guided_attn_sigma"] = pretrain.weights.guided_attn_sigma;
  l["mean_normalize"] = pretrain.mean_normalize;
  nlohmann::json& o = root["optim"];
  o["peak_lr"] = optim.peak_lr;
  o["warmup_fraction"] = optim.warmup_fraction;
  o["total_steps"] = optim.total_steps;
  o["beta1"] = optim.beta1;
  o["beta2"] = optim.beta2;
  o["eps"] = optim.eps;
  o["clip_norm"] = optim.clip_norm;
  o["accum_steps"] = optim.accum_steps;
  nlohmann::json& dc = root["decode"];
  dc["alpha"] = decode.alpha;
  dc["beta"] = decode.beta;
  dc["beam"] = decode.beam;
  dc["max_steps"] = decode.max_steps;
  dc["stop_threshold"] = decode.stop_threshold;
  nlohmann::json& t = root["train"];
  t["batch_size"] = batch_size;
  t["ckpt_every"] = ckpt_every;
  return root;
}

}  // namespace ust
