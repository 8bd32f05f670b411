#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "ust/backbone.hpp"
#include "ust/data.hpp"
#include "ust/losses.hpp"
#include "ust/masking.hpp"
#include "ust/nets.hpp"
#include "ust/quantizer.hpp"

namespace ust {

// ---------------------------------------------------------------------------
// Task routing
// ---------------------------------------------------------------------------

enum class TaskKind { PRETRAIN, ASR, TTS, VC, SE, ST, SID };

enum class Modality { SPEECH, TEXT, CLASS, MIXED };

enum class DecodeMode { TEXT_AUTOREGRESSIVE, SPECTROGRAM_AUTOREGRESSIVE, SINGLE_STEP_CLASS };

// Declarative routing: which modalities flow through which nets and which
// losses apply. Exactly one encoder pre-net and one decoder pre/post-net pair
// is active per task.
struct TaskSpec {
  TaskKind kind = TaskKind::PRETRAIN;
  Modality input = Modality::SPEECH;
  Modality output = Modality::TEXT;
  DecodeMode decode_mode = DecodeMode::TEXT_AUTOREGRESSIVE;
  bool uses_ctc = false;
  bool uses_guided_attention = false;

  static TaskSpec for_task(TaskKind kind) {
    TaskSpec s;
    s.kind = kind;
    switch (kind) {
      case TaskKind::PRETRAIN:
        s.input = Modality::MIXED;
        s.output = Modality::MIXED;
        s.decode_mode = DecodeMode::SPECTROGRAM_AUTOREGRESSIVE;
        break;
      case TaskKind::ASR:
        s.input = Modality::SPEECH;
        s.output = Modality::TEXT;
        s.decode_mode = DecodeMode::TEXT_AUTOREGRESSIVE;
        s.uses_ctc = true;
        break;
      case TaskKind::ST:
        s.input = Modality::SPEECH;
        s.output = Modality::TEXT;
        s.decode_mode = DecodeMode::TEXT_AUTOREGRESSIVE;
        break;
      case TaskKind::TTS:
        s.input = Modality::TEXT;
        s.output = Modality::SPEECH;
        s.decode_mode = DecodeMode::SPECTROGRAM_AUTOREGRESSIVE;
        s.uses_guided_attention = true;
        break;
      case TaskKind::VC:
      case TaskKind::SE:
        s.input = Modality::SPEECH;
        s.output = Modality::SPEECH;
        s.decode_mode = DecodeMode::SPECTROGRAM_AUTOREGRESSIVE;
        s.uses_guided_attention = true;
        break;
      case TaskKind::SID:
        s.input = Modality::SPEECH;
        s.output = Modality::CLASS;
        s.decode_mode = DecodeMode::SINGLE_STEP_CLASS;
        break;
    }
    return s;
  }

  static TaskKind parse(const std::string& name) {
    if (name == "pretrain") return TaskKind::PRETRAIN;
    if (name == "asr") return TaskKind::ASR;
    if (name == "tts") return TaskKind::TTS;
    if (name == "vc") return TaskKind::VC;
    if (name == "se") return TaskKind::SE;
    if (name == "st") return TaskKind::ST;
    if (name == "sid") return TaskKind::SID;
    throw ConfigError("unknown task: " + name);
  }

  static std::string name(TaskKind kind) {
    switch (kind) {
      case TaskKind::PRETRAIN: return "pretrain";
      case TaskKind::ASR: return "asr";
      case TaskKind::TTS: return "tts";
      case TaskKind::VC: return "vc";
      case TaskKind::SE: return "se";
      case TaskKind::ST: return "st";
      case TaskKind::SID: return "sid";
    }
    return "?";
  }
};

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

struct ModelConfig {
  NetConfig net;
  BackboneConfig backbone;
  QuantizerConfig quantizer;

  void validate() const {
    net.validate();
    backbone.validate();
    quantizer.validate(net.dim);
    if (net.dim != backbone.dim)
      throw ConfigError("ModelConfig: net dim " + std::to_string(net.dim) +
                        " != backbone dim " + std::to_string(backbone.dim));
  }
};

// All six pre/post-nets, the shared backbone, the codebook, and the
// task-specific heads that exist for the given task.
struct Model {
  ModelConfig cfg;
  TaskKind task = TaskKind::PRETRAIN;
  ParamRegistry params;
  SpeechEncoderPrenet enc_prenet;
  SpeechDecoderPrenet dec_prenet;
  SpeechDecoderPostnet postnet;
  TextEmbedding text;
  Backbone backbone;
  Codebook codebook;
  std::optional<Linear> mlm_head;   // pre-training only
  std::optional<Linear> ctc_head;   // ASR only
  std::optional<SpeakerTable> sid_table;  // SID only
  Tensor sid_query;                 // SID only, learned first decoder input

  static Model create(const ModelConfig& cfg, uint64_t seed, TaskKind task) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    m.task = task;
    Rng rng(seed);
    m.enc_prenet = SpeechEncoderPrenet::create(m.params, cfg.net, rng);
    m.dec_prenet = SpeechDecoderPrenet::create(m.params, cfg.net, rng);
    m.postnet = SpeechDecoderPostnet::create(m.params, cfg.net, rng);
    m.text = TextEmbedding::create(m.params, cfg.net, rng);
    m.backbone = Backbone::create(m.params, cfg.backbone, rng);
    m.codebook = Codebook::create(m.params, cfg.quantizer, cfg.net.dim, rng);
    // Task heads last so the shared draw sequence is task-independent.
    if (task == TaskKind::PRETRAIN)
      m.mlm_head = Linear::create(m.params, "mlm_head", cfg.net.dim, cfg.net.n_units, rng);
    if (task == TaskKind::ASR)
      m.ctc_head = Linear::create(m.params, "ctc_head", cfg.net.dim, cfg.net.vocab_size, rng);
    if (task == TaskKind::SID) {
      m.sid_table = SpeakerTable::create(m.params, "sid.table", cfg.net.n_speakers,
                                         cfg.net.dim, rng);
      m.sid_query = m.params.add("sid.query", Tensor::randn({1, cfg.net.dim}, rng, 0.5));
    }
    return m;
  }
};

// Redraw decoder-side backbone parameters (the "without initializing the
// decoder" transfer variant).
inline void reinit_decoder(Model& m, uint64_t seed) {
  Rng rng(seed);
  for (const auto& [name, t] : m.params.items()) {
    bool dec_layer = name.rfind("dec", 0) == 0 && name.rfind("dec_prenet", 0) != 0;
    bool dec_final = name.rfind("dec_final_ln", 0) == 0;
    if (!dec_layer && !dec_final) continue;
    Tensor tensor = t;
    bool is_ln_gain = name.size() >= 2 && name.rfind(".g") == name.size() - 2;
    bool is_bias = name.size() >= 2 && name.rfind(".b") == name.size() - 2;
    for (int64_t i = 0; i < tensor.size(); ++i) {
      if (is_ln_gain)
        tensor.at(i) = 1.0;
      else if (is_bias)
        tensor.at(i) = 0.0;
      else
        tensor.at(i) = rng.normal(0.0, 1.0 / std::sqrt(static_cast<double>(m.cfg.net.dim)));
    }
  }
}

// ---------------------------------------------------------------------------
// Training examples
// ---------------------------------------------------------------------------

// One prepared training example; unused fields stay empty per task.
struct Example {
  std::string id;
  std::vector<double> wave;        // encoder input samples
  Tensor frames;                   // normalized target log-Mel [Nf, mel]
  std::vector<int64_t> units;      // acoustic-unit targets at encoder rate
  std::vector<int64_t> text;       // target token ids (characters)
  int64_t speaker = 0;
};

inline Tensor target_frames(const Corpus& corpus, const std::vector<double>& wave) {
  const CorpusConfig& c = corpus.cfg;
  return normalize_features(logmel(wave, c.frame_len, c.hop, c.mel_bins, c.sample_rate),
                            corpus);
}

// Fit the acoustic-unit labeler on every clean frame of the corpus.
inline UnitLabeler fit_corpus_units(const Corpus& corpus, int64_t k, int64_t iters,
                                    uint64_t seed) {
  std::vector<std::vector<double>> frames;
  const CorpusConfig& c = corpus.cfg;
  for (const auto& u : corpus.utterances) {
    Tensor f = logmel(u.wave, c.frame_len, c.hop, c.mel_bins, c.sample_rate);
    for (int64_t i = 0; i < f.dim(0); ++i) {
      std::vector<double> row(static_cast<size_t>(c.mel_bins));
      for (int64_t m = 0; m < c.mel_bins; ++m) row[static_cast<size_t>(m)] = f.at(i, m);
      frames.push_back(std::move(row));
    }
  }
  return fit_units(frames, k, iters, seed);
}

inline Example make_speech_example(const Corpus& corpus, const Utterance& u, const Model& model,
                                   const UnitLabeler* labeler) {
  Example ex;
  ex.id = "utt" + std::to_string(u.id);
  ex.wave = u.wave;
  ex.frames = target_frames(corpus, u.wave);
  ex.speaker = u.speaker;
  ex.text = corpus.cfg.vocab().encode(u.text);
  if (labeler) {
    const CorpusConfig& c = corpus.cfg;
    Tensor feats = logmel(u.wave, c.frame_len, c.hop, c.mel_bins, c.sample_rate);
    std::vector<int64_t> z = label(*labeler, feats);
    int64_t nh = model.enc_prenet.out_len(static_cast<int64_t>(u.wave.size()));
    ex.units = resample_labels(z, nh);
  }
  return ex;
}

// Task-specific example assembly from a corpus utterance.
inline Example make_task_example(const Corpus& corpus, const Utterance& u, TaskKind task,
                                 const Model& model) {
  const CharVocab vocab = corpus.cfg.vocab();
  Example ex;
  ex.id = "utt" + std::to_string(u.id);
  ex.speaker = u.speaker;
  switch (task) {
    case TaskKind::ASR:
      ex.wave = u.wave;
      ex.text = vocab.encode(u.text);
      break;
    case TaskKind::ST:
      ex.wave = u.wave;
      ex.text = vocab.encode(u.translation);
      break;
    case TaskKind::TTS:
      ex.text = vocab.encode(u.text);
      ex.frames = target_frames(corpus, u.wave);
      break;
    case TaskKind::SE: {
      if (!u.noisy) throw RoutingError("se: utterance " + ex.id + " has no noisy variant");
      ex.wave = *u.noisy;
      ex.frames = target_frames(corpus, u.wave);
      break;
    }
    case TaskKind::SID:
      ex.wave = u.wave;
      break;
    case TaskKind::VC:
      throw RoutingError("vc: use make_vc_example with a target speaker");
    case TaskKind::PRETRAIN:
      throw RoutingError("pretrain: use make_speech_example");
  }
  return ex;
}

// Voice conversion pair: source speaker's waveform in, target speaker's
// rendition of the same text as the output side.
inline Example make_vc_example(const Corpus& corpus, const Utterance& u,
                               int64_t target_speaker) {
  Example ex;
  ex.id = "utt" + std::to_string(u.id) + "_to" + std::to_string(target_speaker);
  ex.wave = u.wave;
  Rng rng = Rng::derive(corpus.cfg.seed ^ 0xc0117e57ULL,
                        static_cast<uint64_t>(u.id * corpus.cfg.n_speakers + target_speaker));
  std::vector<double> target_wave = synth_wave(corpus.cfg, u.text, target_speaker, rng);
  ex.frames = target_frames(corpus, target_wave);
  ex.speaker = target_speaker;
  return ex;
}

// Teacher-forcing input: a zero go-frame followed by the gold frames shifted
// right by one.
inline Tensor shift_frames(const Tensor& frames) {
  Tensor shifted({frames.dim(0), frames.dim(1)});
  for (int64_t i = 1; i < frames.dim(0); ++i)
    for (int64_t j = 0; j < frames.dim(1); ++j) shifted.at(i, j) = frames.at(i - 1, j);
  return shifted;
}

// ---------------------------------------------------------------------------
// Pre-training step
// ---------------------------------------------------------------------------

enum class TextMaskMode { BART, T5 };

struct PretrainOptions {
  double p_start = 0.08;
  int64_t span = 10;
  double text_mask_ratio = 0.30;
  double poisson_lambda = 3.5;
  TextMaskMode text_mask_mode = TextMaskMode::BART;
  double mixup_ratio = 0.10;
  double quant_temperature = 1.0;
  LossWeights weights;
  bool speech_pt = true;
  bool text_pt = true;
  bool joint_pt = true;
  bool mlm = true;
  bool joint_diversity = false;
  bool mean_normalize = true;
};

struct StepLosses {
  double mlm = 0.0;
  double l1 = 0.0;
  double bce = 0.0;
  double mle = 0.0;
  double diversity = 0.0;
  double attraction = 0.0;
  double total = 0.0;      // the headline sum incl. gamma * diversity
  double objective = 0.0;  // total + attraction term actually optimized
};

namespace detail {

inline Tensor average(const std::vector<Tensor>& terms) {
  Tensor acc;
  for (const Tensor& t : terms) acc = acc.defined() ? add(acc, t) : t;
  return mul_scalar(acc, 1.0 / static_cast<double>(terms.size()));
}

}  // namespace detail

// Forward + backward of one combined speech/text pre-training update.
// Gradients are accumulated into the model parameters; no update happens.
inline StepLosses pretrain_step(Model& model, const std::vector<Example>& speech_batch,
                                const std::vector<Example>& text_batch,
                                const PretrainOptions& opts, Rng& rng) {
  if (model.task != TaskKind::PRETRAIN)
    throw RoutingError("pretrain_step: model was built for task " + TaskSpec::name(model.task));
  if ((opts.speech_pt && speech_batch.empty()) || (opts.text_pt && text_batch.empty()))
    throw ContractError("pretrain_step: empty batch");

  std::vector<Tensor> mlm_terms, l1_terms, bce_terms, mle_terms, attraction_terms;
  std::vector<std::vector<Tensor>> group_frame_probs(
      static_cast<size_t>(model.codebook.groups));

  auto run_quantizer = [&](const Tensor& u) -> Tensor {
    QuantizerOutput q = quantize(u, model.codebook, opts.quant_temperature);
    for (int64_t g = 0; g < model.codebook.groups; ++g)
      group_frame_probs[static_cast<size_t>(g)].push_back(
          q.frame_probs[static_cast<size_t>(g)]);
    attraction_terms.push_back(codebook_attraction(u, q, model.codebook));
    return mixup(u, q, opts.mixup_ratio, rng).mixed;
  };

  if (opts.speech_pt) {
    for (const Example& ex : speech_batch) {
      if (ex.units.empty()) throw DataError("pretrain_step: speech example lacks unit targets");
      Tensor h = model.enc_prenet.forward(ex.wave);
      MaskSet mask = speech_span_mask(h.dim(0), opts.p_start, opts.span, rng);
      Tensor hm = model.enc_prenet.apply_mask(h, mask.sorted());
      Tensor u = model.backbone.encode(hm);
      if (opts.mlm && !mask.empty())
        mlm_terms.push_back(mlm_loss(model.mlm_head->forward(u), ex.units, mask,
                                     opts.mean_normalize));
      Tensor memory = opts.joint_pt ? run_quantizer(u) : u;
      Tensor dec_in = model.dec_prenet.forward(shift_frames(ex.frames), ex.speaker);
      Tensor states = model.backbone.decode(dec_in, memory);
      PostnetOutput out = model.postnet.forward(states);
      // Both sides of the refinement stack regress onto the target; the
      // pre-refinement frames are what autoregressive decoding feeds back.
      l1_terms.push_back(add(recon_l1(out.y_refined, ex.frames, opts.mean_normalize),
                             recon_l1(out.y_before, ex.frames, opts.mean_normalize)));
      bce_terms.push_back(stop_bce(out.stop_logits, ex.frames.dim(0) - 1,
                                   opts.weights.stop_pos_weight, opts.mean_normalize));
    }
  }

  if (opts.text_pt) {
    for (const Example& ex : text_batch) {
      std::vector<int64_t> enc_tokens;
      std::vector<int64_t> dec_target;
      if (opts.text_mask_mode == TextMaskMode::BART) {
        TextCorruption c = text_infill(ex.text, opts.text_mask_ratio, opts.poisson_lambda,
                                       CharVocab::kMask, rng);
        enc_tokens = c.corrupted;
        dec_target = c.original;
      } else {
        T5Corruption c = t5_span_mask(ex.text, opts.text_mask_ratio, opts.poisson_lambda,
                                      CharVocab::kSentinelBase, CharVocab::kNumSentinels, rng);
        enc_tokens = c.corrupted;
        dec_target = c.target.empty() ? c.original : c.target;
      }
      Tensor u = model.backbone.encode(model.text.embed(enc_tokens));
      Tensor memory = opts.joint_pt ? run_quantizer(u) : u;
      std::vector<int64_t> dec_in{CharVocab::kBos};
      dec_in.insert(dec_in.end(), dec_target.begin(), dec_target.end());
      std::vector<int64_t> targets = dec_target;
      targets.push_back(CharVocab::kEos);
      Tensor states = model.backbone.decode(model.text.embed(dec_in), memory);
      mle_terms.push_back(
          text_mle(model.text.project(states), targets, opts.mean_normalize));
    }
  }

  PretrainParts parts;
  if (!mlm_terms.empty()) parts.mlm = detail::average(mlm_terms);
  if (!l1_terms.empty()) parts.l1 = detail::average(l1_terms);
  if (!bce_terms.empty()) parts.bce = detail::average(bce_terms);
  if (!mle_terms.empty()) parts.mle = detail::average(mle_terms);
  if (opts.joint_pt && !group_frame_probs[0].empty()) {
    // Pool frame distributions across the whole batch, both modalities.
    std::vector<Tensor> pooled_means;
    std::vector<Tensor> pooled_frames;
    for (auto& list : group_frame_probs) {
      Tensor all = list[0];
      for (size_t i = 1; i < list.size(); ++i) all = concat(all, list[i], 0);
      pooled_frames.push_back(all);
      pooled_means.push_back(mean_axis(all, 0));
    }
    parts.diversity = opts.joint_diversity ? diversity_loss_joint(pooled_frames)
                                           : diversity_loss(pooled_means);
    parts.attraction = detail::average(attraction_terms);
  }

  Tensor total = pretrain_total(parts, opts.weights.gamma);
  Tensor objective = parts.attraction.defined()
                         ? add(total, mul_scalar(parts.attraction, opts.weights.attraction_weight))
                         : total;
  backward(objective);

  StepLosses out;
  out.mlm = parts.mlm.defined() ? parts.mlm.item() : 0.0;
  out.l1 = parts.l1.defined() ? parts.l1.item() : 0.0;
  out.bce = parts.bce.defined() ? parts.bce.item() : 0.0;
  out.mle = parts.mle.defined() ? parts.mle.item() : 0.0;
  out.diversity = parts.diversity.defined() ? parts.diversity.item() : 0.0;
  out.attraction = parts.attraction.defined() ? parts.attraction.item() : 0.0;
  out.total = total.item();
  out.objective = objective.item();
  return out;
}

// ---------------------------------------------------------------------------
// Fine-tuning step
// ---------------------------------------------------------------------------

struct FinetuneOptions {
  LossWeights weights;
  bool mean_normalize = true;
};

struct FinetuneLosses {
  double total = 0.0;
  double mle = 0.0;
  double ctc = 0.0;
  double l1 = 0.0;
  double bce = 0.0;
  double guided_attention = 0.0;
};

namespace detail {

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw RoutingError(msg);
}

}  // namespace detail

inline FinetuneLosses finetune_step(Model& model, const TaskSpec& task,
                                    const std::vector<Example>& batch,
                                    const FinetuneOptions& opts) {
  if (batch.empty()) throw ContractError("finetune_step: empty batch");
  if (model.task != task.kind)
    throw RoutingError("finetune_step: model built for " + TaskSpec::name(model.task) +
                       ", batch routed for " + TaskSpec::name(task.kind));

  std::vector<Tensor> mle_terms, ctc_terms, l1_terms, bce_terms, gattn_terms;

  for (const Example& ex : batch) {
    switch (task.kind) {
      case TaskKind::ASR:
      case TaskKind::ST: {
        detail::require(!ex.wave.empty() && !ex.text.empty(),
                        TaskSpec::name(task.kind) + ": needs waveform input and text target");
        Tensor h = model.enc_prenet.forward(ex.wave);
        Tensor u = model.backbone.encode(h);
        std::vector<int64_t> dec_in{CharVocab::kBos};
        dec_in.insert(dec_in.end(), ex.text.begin(), ex.text.end());
        std::vector<int64_t> targets = ex.text;
        targets.push_back(CharVocab::kEos);
        Tensor states = model.backbone.decode(model.text.embed(dec_in), u);
        mle_terms.push_back(
            text_mle(model.text.project(states), targets, opts.mean_normalize));
        if (task.uses_ctc) {
          if (!model.ctc_head) throw RoutingError("asr: model lacks a ctc head");
          ctc_terms.push_back(ctc_loss(model.ctc_head->forward(u), ex.text));
        }
        break;
      }
      case TaskKind::TTS:
      case TaskKind::VC:
      case TaskKind::SE: {
        bool text_input = task.kind == TaskKind::TTS;
        detail::require(text_input ? !ex.text.empty() : !ex.wave.empty(),
                        TaskSpec::name(task.kind) + ": missing input modality");
        detail::require(ex.frames.defined() && ex.frames.dim(0) >= 1,
                        TaskSpec::name(task.kind) + ": missing target frames");
        Tensor u = text_input
                       ? model.backbone.encode(model.text.embed(ex.text))
                       : model.backbone.encode(model.enc_prenet.forward(ex.wave));
        Tensor dec_in = model.dec_prenet.forward(shift_frames(ex.frames), ex.speaker);
        AttnTrace trace;
        Tensor states = model.backbone.decode(dec_in, u, {}, &trace);
        PostnetOutput out = model.postnet.forward(states);
        l1_terms.push_back(add(recon_l1(out.y_refined, ex.frames, opts.mean_normalize),
                               recon_l1(out.y_before, ex.frames, opts.mean_normalize)));
        bce_terms.push_back(stop_bce(out.stop_logits, ex.frames.dim(0) - 1,
                                     opts.weights.stop_pos_weight, opts.mean_normalize));
        if (task.uses_guided_attention)
          gattn_terms.push_back(
              guided_attention_loss(trace.dec_cross, opts.weights.guided_attn_sigma));
        break;
      }
      case TaskKind::SID: {
        detail::require(!ex.wave.empty(), "sid: needs waveform input");
        if (!model.sid_table || model.sid_table->count() < 2)
          throw ContractError("sid: needs a speaker table with at least 2 speakers");
        Tensor h = model.enc_prenet.forward(ex.wave);
        Tensor u = model.backbone.encode(h);
        Tensor states = model.backbone.decode(model.sid_query, u);
        Tensor logits = matmul(states, transpose(model.sid_table->table));
        mle_terms.push_back(text_mle(logits, {ex.speaker}, opts.mean_normalize));
        break;
      }
      default:
        throw RoutingError("finetune_step: unsupported task " + TaskSpec::name(task.kind));
    }
  }

  FinetuneLosses out;
  Tensor total;
  auto weighted = [&](std::vector<Tensor>& terms, double w, double* report) {
    if (terms.empty()) return;
    Tensor avg = detail::average(terms);
    *report = avg.item();
    Tensor contrib = mul_scalar(avg, w);
    total = total.defined() ? add(total, contrib) : contrib;
  };
  const double ctc_w = task.uses_ctc ? opts.weights.ctc_weight : 0.0;
  const double mle_w = task.uses_ctc ? 1.0 - opts.weights.ctc_weight : 1.0;
  weighted(mle_terms, mle_w, &out.mle);
  weighted(ctc_terms, ctc_w, &out.ctc);
  weighted(l1_terms, 1.0, &out.l1);
  weighted(bce_terms, 1.0, &out.bce);
  weighted(gattn_terms, opts.weights.guided_attn_weight, &out.guided_attention);
  if (!total.defined()) throw ContractError("finetune_step: no loss terms produced");
  backward(total);
  out.total = total.item();
  return out;
}

// ---------------------------------------------------------------------------
// CTC prefix scoring (for joint decoding)
// ---------------------------------------------------------------------------

// Log probability that the CTC output starts with a given prefix, maintained
// incrementally per hypothesis.
class CtcPrefixScorer {
 public:
  CtcPrefixScorer(Tensor log_probs, int64_t blank)
      : logp_(std::move(log_probs)), blank_(blank), T_(logp_.dim(0)) {}

  struct State {
    std::vector<double> r_nb;  // prefix emitted, last frame non-blank
    std::vector<double> r_b;   // prefix emitted, last frame blank
  };

  State initial() const {
    State s;
    s.r_nb.assign(static_cast<size_t>(T_), -kInf);
    s.r_b.resize(static_cast<size_t>(T_));
    double acc = 0.0;
    for (int64_t t = 0; t < T_; ++t) {
      acc += logp_.at(t, blank_);
      s.r_b[static_cast<size_t>(t)] = acc;
    }
    return s;
  }

  // Extend a prefix (last symbol `last`, -1 if empty) with `c`; returns the
  // new state and writes the prefix score into `psi`.
  State extend(const State& prev, int64_t last, int64_t c, double* psi) const {
    State next;
    next.r_nb.assign(static_cast<size_t>(T_), -kInf);
    next.r_b.assign(static_cast<size_t>(T_), -kInf);
    double score = -kInf;
    for (int64_t t = 0; t < T_; ++t) {
      double phi_prev;  // phi at t-1
      if (t == 0) {
        phi_prev = last < 0 ? 0.0 : -kInf;  // empty prefix "ends blank" before t=0
      } else {
        double a = prev.r_b[static_cast<size_t>(t - 1)];
        double b = last == c ? -kInf : prev.r_nb[static_cast<size_t>(t - 1)];
        phi_prev = logsum(a, b);
      }
      double stay = t == 0 ? -kInf : next.r_nb[static_cast<size_t>(t - 1)];
      next.r_nb[static_cast<size_t>(t)] = logsum(stay, phi_prev) + logp_.at(t, c);
      double blank_in = t == 0 ? -kInf
                               : logsum(next.r_b[static_cast<size_t>(t - 1)],
                                        next.r_nb[static_cast<size_t>(t - 1)]);
      next.r_b[static_cast<size_t>(t)] = blank_in + logp_.at(t, blank_);
      score = logsum(score, phi_prev + logp_.at(t, c));
    }
    *psi = score;
    return next;
  }

  // Log probability that the output equals exactly the prefix.
  double eos_score(const State& s) const {
    return logsum(s.r_nb[static_cast<size_t>(T_ - 1)], s.r_b[static_cast<size_t>(T_ - 1)]);
  }

  int64_t frames() const { return T_; }

 private:
  static constexpr double kInf = std::numeric_limits<double>::infinity();

  static double logsum(double a, double b) {
    double m = std::max(a, b);
    if (std::isinf(m) && m < 0) return m;
    return m + std::log(std::exp(a - m) + std::exp(b - m));
  }

  Tensor logp_;
  int64_t blank_;
  int64_t T_;
};

// ---------------------------------------------------------------------------
// Decoding
// ---------------------------------------------------------------------------

// External language model interface: log P(next | prefix). Unset means 0.
using LmScorer = std::function<double(const std::vector<int64_t>&, int64_t)>;

// Beam search over decoder steps ranking candidates by the joint score.
inline std::vector<int64_t> decode_text(const Model& model, const TaskSpec& task,
                                        const std::vector<double>& wave,
                                        const DecodeConfig& cfg, const CharVocab& vocab,
                                        const LmScorer& lm = nullptr) {
  cfg.validate();
  if (task.decode_mode != DecodeMode::TEXT_AUTOREGRESSIVE)
    throw RoutingError("decode_text: task " + TaskSpec::name(task.kind) +
                       " does not decode text");
  if (wave.empty()) throw ContractError("decode_text: empty input");

  Tensor u = model.backbone.encode(model.enc_prenet.forward(wave));
  const bool use_ctc = cfg.alpha < 1.0 && model.ctc_head.has_value();
  std::optional<CtcPrefixScorer> scorer;
  if (use_ctc)
    scorer.emplace(log_softmax(model.ctc_head->forward(u), 1).detach(), CharVocab::kBlank);

  // Finished hypotheses stay in the beam (scored with the exact-sequence CTC
  // mass); open ones carry the prefix mass. Hypotheses at the token cap may
  // only take the end-of-sequence extension.
  struct Hyp {
    std::vector<int64_t> tokens;
    double dec_logp = 0.0;
    double lm_logp = 0.0;
    CtcPrefixScorer::State ctc;
    double score = 0.0;
    bool done = false;
  };
  Hyp init;
  if (use_ctc) init.ctc = scorer->initial();
  std::vector<Hyp> beam_hyps{init};

  std::vector<int64_t> chars;
  for (int64_t c = CharVocab::kCharBase; c < vocab.size(); ++c) chars.push_back(c);

  auto any_open = [&] {
    for (const Hyp& h : beam_hyps)
      if (!h.done) return true;
    return false;
  };

  while (any_open()) {
    std::vector<Hyp> expanded;
    for (const Hyp& hyp : beam_hyps) {
      if (hyp.done) {
        expanded.push_back(hyp);
        continue;
      }
      std::vector<int64_t> dec_in{CharVocab::kBos};
      dec_in.insert(dec_in.end(), hyp.tokens.begin(), hyp.tokens.end());
      Tensor states = model.backbone.decode(model.text.embed(dec_in), u);
      Tensor logits = model.text.project(states);
      Tensor lp = log_softmax(slice(logits, 0, logits.dim(0) - 1, 1), 1);
      int64_t last = hyp.tokens.empty() ? -1 : hyp.tokens.back();

      Hyp done = hyp;
      done.done = true;
      done.dec_logp = hyp.dec_logp + lp.at(0, CharVocab::kEos);
      done.lm_logp = hyp.lm_logp + (lm ? lm(hyp.tokens, CharVocab::kEos) : 0.0);
      double eos_ctc = use_ctc ? scorer->eos_score(hyp.ctc) : 0.0;
      done.score = joint_decode_score(done.dec_logp, eos_ctc, done.lm_logp, cfg);
      expanded.push_back(std::move(done));

      if (static_cast<int64_t>(hyp.tokens.size()) >= cfg.max_steps) continue;
      for (int64_t c : chars) {
        Hyp next = hyp;
        next.tokens.push_back(c);
        next.dec_logp = hyp.dec_logp + lp.at(0, c);
        next.lm_logp = hyp.lm_logp + (lm ? lm(hyp.tokens, c) : 0.0);
        double ctc_lp = 0.0;
        if (use_ctc) next.ctc = scorer->extend(hyp.ctc, last, c, &ctc_lp);
        next.score = joint_decode_score(next.dec_logp, ctc_lp, next.lm_logp, cfg);
        expanded.push_back(std::move(next));
      }
    }
    std::sort(expanded.begin(), expanded.end(),
              [](const Hyp& a, const Hyp& b) { return a.score > b.score; });
    if (static_cast<int64_t>(expanded.size()) > cfg.beam)
      expanded.resize(static_cast<size_t>(cfg.beam));
    beam_hyps = std::move(expanded);
  }
  return beam_hyps.front().tokens;
}

// Autoregressive spectrogram loop; halts on the stop token or the frame cap.
inline Tensor decode_spectrogram(const Model& model, const TaskSpec& task,
                                 const Example& input, int64_t max_frames,
                                 double stop_threshold = 0.5) {
  if (max_frames < 1) throw ConfigError("decode_spectrogram: max_frames must be >= 1");
  if (task.decode_mode != DecodeMode::SPECTROGRAM_AUTOREGRESSIVE)
    throw RoutingError("decode_spectrogram: task " + TaskSpec::name(task.kind) +
                       " does not decode spectrograms");
  Tensor memory;
  if (task.kind == TaskKind::TTS) {
    if (input.text.empty()) throw ContractError("decode_spectrogram: empty text input");
    memory = model.backbone.encode(model.text.embed(input.text));
  } else {
    if (input.wave.empty()) throw ContractError("decode_spectrogram: empty waveform input");
    memory = model.backbone.encode(model.enc_prenet.forward(input.wave));
  }
  const int64_t mel = model.cfg.net.mel_bins;
  // The loop feeds back pre-refinement frames (the refinement convs look
  // across time); the residual stack then refines the finished spectrogram.
  Tensor history({1, mel});  // zero go-frame
  std::vector<double> emitted;
  int64_t frames = 0;
  while (frames < max_frames) {
    Tensor dec_in = model.dec_prenet.forward(history, input.speaker);
    Tensor states = model.backbone.decode(dec_in, memory);
    Tensor y_before = model.postnet.project_frames(states);
    Tensor stop_logits = model.postnet.stop_logit_row(states);
    int64_t t = history.dim(0) - 1;
    std::vector<double> frame(static_cast<size_t>(mel));
    for (int64_t j = 0; j < mel; ++j) frame[static_cast<size_t>(j)] = y_before.at(t, j);
    emitted.insert(emitted.end(), frame.begin(), frame.end());
    ++frames;
    double stop = 1.0 / (1.0 + std::exp(-stop_logits.at(t)));
    if (stop > stop_threshold) break;
    Tensor next({1, mel}, frame);
    history = concat(history.detach(), next, 0);
  }
  Tensor before({frames, mel}, std::move(emitted));
  return model.postnet.refine(before).detach();
}

// Single-step speaker classification.
inline int64_t classify_speaker(const Model& model, const std::vector<double>& wave) {
  if (!model.sid_table) throw RoutingError("classify_speaker: model lacks a speaker table");
  Tensor u = model.backbone.encode(model.enc_prenet.forward(wave));
  Tensor states = model.backbone.decode(model.sid_query, u);
  Tensor logits = matmul(states, transpose(model.sid_table->table));
  int64_t best = 0;
  for (int64_t s = 1; s < logits.dim(1); ++s)
    if (logits.at(0, s) > logits.at(0, best)) best = s;
  return best;
}

}  // namespace ust
