#pragma once

// Shared tiny fixtures for the integration-level suites.

#include "ust/config.hpp"
#include "ust/tasks.hpp"
#include "ust/trainer.hpp"

namespace ust::testing {

// A model small enough that full forward/backward passes take microseconds.
inline ModelConfig tiny_model_cfg() {
  ModelConfig cfg;
  cfg.net.dim = 16;
  cfg.net.mel_bins = 4;
  cfg.net.conv_channels = {8, 8};
  cfg.net.conv_strides = {2, 2};
  cfg.net.conv_kernels = {4, 2};
  cfg.net.dec_prenet_hidden = 8;
  cfg.net.postnet_layers = 3;
  cfg.net.postnet_channels = 4;
  cfg.net.postnet_kernel = 3;
  cfg.net.vocab_size = CharVocab::standard().size();
  cfg.net.n_speakers = 2;
  cfg.net.speaker_dim = 4;
  cfg.net.n_units = 4;
  cfg.backbone.enc_layers = 1;
  cfg.backbone.dec_layers = 1;
  cfg.backbone.dim = 16;
  cfg.backbone.ffn_dim = 32;
  cfg.backbone.heads = 2;
  cfg.backbone.rel_buckets = 8;
  cfg.backbone.rel_max_distance = 16;
  cfg.quantizer.groups = 2;
  cfg.quantizer.entries = 4;
  return cfg;
}

inline CorpusConfig tiny_corpus_cfg() {
  CorpusConfig cfg;
  cfg.seed = 5;
  cfg.sample_rate = 400;
  cfg.samples_per_char = 16;
  cfg.n_speakers = 2;
  cfg.min_chars = 3;
  cfg.max_chars = 5;
  cfg.min_sentence_chars = 6;
  cfg.max_sentence_chars = 12;
  cfg.frame_len = 16;
  cfg.hop = 8;
  cfg.mel_bins = 4;
  return cfg;
}

struct TinyWorld {
  Corpus corpus;
  Model model;
  UnitLabeler labeler;

  explicit TinyWorld(TaskKind task = TaskKind::PRETRAIN, int64_t n_utts = 6,
                     uint64_t model_seed = 1)
      : corpus(gen_corpus(tiny_corpus_cfg(), n_utts, 6)),
        model(Model::create(tiny_model_cfg(), model_seed, task)),
        labeler(fit_corpus_units(corpus, tiny_model_cfg().net.n_units, 10, 3)) {}

  std::vector<Example> speech_examples() const {
    std::vector<Example> out;
    for (const auto& u : corpus.utterances)
      out.push_back(make_speech_example(corpus, u, model, &labeler));
    return out;
  }

  std::vector<Example> text_examples() const {
    std::vector<Example> out;
    const CharVocab vocab = corpus.cfg.vocab();
    for (size_t i = 0; i < corpus.sentences.size(); ++i) {
      Example ex;
      ex.id = "sent" + std::to_string(i);
      ex.text = vocab.encode(corpus.sentences[i]);
      out.push_back(std::move(ex));
    }
    return out;
  }

  std::vector<Example> task_examples(TaskKind task) const {
    std::vector<Example> out;
    for (const auto& u : corpus.utterances) {
      if (task == TaskKind::VC)
        out.push_back(make_vc_example(corpus, u, (u.speaker + 1) % corpus.cfg.n_speakers));
      else
        out.push_back(make_task_example(corpus, u, task, model));
    }
    return out;
  }
};

}  // namespace ust::testing
