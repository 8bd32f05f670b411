#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ust/tasks.hpp"
#include "ust/trainer.hpp"

namespace ust {

// In-place central-difference check of d(loss)/d(param) for a parameter used
// inside an arbitrary deterministic forward closure.
inline double fd_check_param(ParamRegistry& params, Tensor param,
                             const std::function<Tensor()>& forward, double eps = 1e-4) {
  params.zero_grad();
  backward(forward());
  std::vector<double> analytic = param.grad();
  double worst = 0.0;
  for (int64_t i = 0; i < param.size(); ++i) {
    double orig = param.at(i);
    param.at(i) = orig + eps;
    double fp = forward().item();
    param.at(i) = orig - eps;
    double fm = forward().item();
    param.at(i) = orig;
    double numeric = (fp - fm) / (2.0 * eps);
    double a = analytic[static_cast<size_t>(i)];
    double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-12});
    worst = std::max(worst, std::fabs(a - numeric) / denom);
  }
  return worst;
}

struct AuditCase {
  std::string name;
  // Returns the max relative error between analytic and central differences.
  std::function<double(uint64_t seed)> run;
};

struct AuditResult {
  std::string name;
  double error = 0.0;
  bool pass = false;
};

namespace detail {

inline ModelConfig audit_model_cfg() {
  ModelConfig cfg;
  cfg.net.dim = 12;
  cfg.net.mel_bins = 4;
  cfg.net.conv_channels = {6, 6};
  cfg.net.conv_strides = {2, 2};
  cfg.net.conv_kernels = {4, 2};
  cfg.net.dec_prenet_hidden = 6;
  cfg.net.postnet_layers = 3;
  cfg.net.postnet_channels = 4;
  cfg.net.postnet_kernel = 3;
  cfg.net.vocab_size = 14;
  cfg.net.n_speakers = 2;
  cfg.net.speaker_dim = 4;
  cfg.net.n_units = 4;
  cfg.backbone.enc_layers = 1;
  cfg.backbone.dec_layers = 1;
  cfg.backbone.dim = 12;
  cfg.backbone.ffn_dim = 24;
  cfg.backbone.heads = 2;
  cfg.backbone.rel_buckets = 8;
  cfg.backbone.rel_max_distance = 16;
  cfg.quantizer.groups = 2;
  cfg.quantizer.entries = 4;
  return cfg;
}

inline Tensor rand_tensor(Shape shape, Rng& rng, double lo = -1.5, double hi = 1.5) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t.at(i) = rng.uniform(lo, hi);
  return t;
}

}  // namespace detail

// Every differentiable subgraph with a finite-difference witness: the six
// pre/post-nets, the backbone, the quantizer paths, each loss, and the full
// pre-training objective on a toy batch.
inline std::vector<AuditCase> audit_registry() {
  std::vector<AuditCase> cases;

  cases.push_back({"speech_encoder_prenet", [](uint64_t seed) {
    ParamRegistry reg;
    Rng rng(seed);
    auto net = SpeechEncoderPrenet::create(reg, detail::audit_model_cfg().net, rng);
    Rng data(seed + 1);
    Tensor wave = detail::rand_tensor({20}, data);
    return grad_check(
        [&](const Tensor& x) {
          Tensor y = reshape(x, {20, 1});
          for (size_t i = 0; i < net.conv_w.size(); ++i) {
            y = add_rowvec(conv1d(y, net.conv_w[i], net.cfg.conv_strides[i]), net.conv_b[i]);
            y = gelu(net.conv_ln[i].forward(y));
          }
          y = net.proj.forward(y);
          return mean(mul(y, y));
        },
        wave, 1e-4);
  }});

  cases.push_back({"speech_decoder_prenet", [](uint64_t seed) {
    ParamRegistry reg;
    Rng rng(seed);
    auto net = SpeechDecoderPrenet::create(reg, detail::audit_model_cfg().net, rng);
    Rng data(seed + 1);
    Tensor frames = detail::rand_tensor({3, 4}, data);
    return grad_check(
        [&](const Tensor& x) {
          Tensor y = net.forward(x, 1);
          return mean(mul(y, y));
        },
        frames, 1e-4);
  }});

  cases.push_back({"speech_decoder_postnet", [](uint64_t seed) {
    ParamRegistry reg;
    Rng rng(seed);
    auto net = SpeechDecoderPostnet::create(reg, detail::audit_model_cfg().net, rng);
    Rng bump(seed + 2);
    for (int64_t i = 0; i < net.conv_w.back().size(); ++i)
      net.conv_w.back().at(i) = bump.normal(0.0, 0.05);
    Rng data(seed + 1);
    Tensor states = detail::rand_tensor({4, 12}, data);
    Tensor target = detail::rand_tensor({4, 4}, data);
    return grad_check(
        [&](const Tensor& x) {
          PostnetOutput out = net.forward(x);
          return add(recon_l1(out.y_refined, target), stop_bce(out.stop_logits, 3));
        },
        states, 1e-4);
  }});

  cases.push_back({"text_embedding_tied", [](uint64_t seed) {
    ParamRegistry reg;
    Rng rng(seed);
    auto emb = TextEmbedding::create(reg, detail::audit_model_cfg().net, rng);
    return fd_check_param(reg, emb.table, [&] {
      Tensor enc = emb.embed({1, 3, 5});
      Tensor logits = emb.project(enc);
      return text_mle(logits, {2, 4, 6});
    });
  }});

  cases.push_back({"backbone_encoder", [](uint64_t seed) {
    ParamRegistry reg;
    Rng rng(seed);
    auto bb = Backbone::create(reg, detail::audit_model_cfg().backbone, rng);
    Rng data(seed + 1);
    Tensor x = detail::rand_tensor({4, 12}, data);
    return grad_check(
        [&](const Tensor& in) {
          Tensor u = bb.encode(in);
          return mean(mul(u, u));
        },
        x, 1e-3);
  }});

  cases.push_back({"backbone_encode_decode", [](uint64_t seed) {
    ParamRegistry reg;
    Rng rng(seed);
    auto bb = Backbone::create(reg, detail::audit_model_cfg().backbone, rng);
    Rng data(seed + 1);
    Tensor x = detail::rand_tensor({3, 12}, data);
    Tensor tgt = detail::rand_tensor({2, 12}, data);
    return grad_check(
        [&](const Tensor& in) {
          Tensor s = bb.decode(tgt, bb.encode(in));
          return mean(mul(s, s));
        },
        x, 1e-3);
  }});

  cases.push_back({"quantizer_soft_probs", [](uint64_t seed) {
    ParamRegistry reg;
    QuantizerConfig qcfg = detail::audit_model_cfg().quantizer;
    Rng rng(seed);
    Codebook cb = Codebook::create(reg, qcfg, 12, rng);
    Rng data(seed + 1);
    Tensor u = detail::rand_tensor({5, 12}, data);
    return grad_check(
        [&](const Tensor& x) {
          QuantizerOutput q = quantize(x, cb);
          return diversity_loss(q.soft_probs);
        },
        u, 1e-4);
  }});

  cases.push_back({"quantizer_codebook_attraction", [](uint64_t seed) {
    ParamRegistry reg;
    QuantizerConfig qcfg = detail::audit_model_cfg().quantizer;
    Rng rng(seed);
    Codebook cb = Codebook::create(reg, qcfg, 12, rng);
    Rng data(seed + 1);
    Tensor u = detail::rand_tensor({5, 12}, data);
    QuantizerOutput frozen = quantize(u, cb);
    // Frozen assignments; the attraction term is smooth in the codebook.
    return fd_check_param(reg, cb.tables[0], [&] {
      Tensor total;
      for (int64_t g = 0; g < cb.groups; ++g) {
        std::vector<int64_t> ids;
        for (int64_t i = 0; i < 5; ++i)
          ids.push_back(frozen.indices[static_cast<size_t>(i)][static_cast<size_t>(g)]);
        Tensor rows = embedding_lookup(cb.tables[static_cast<size_t>(g)], ids);
        Tensor diff = sub(rows, slice(u, 1, g * cb.subdim, cb.subdim).detach());
        Tensor term = mul_scalar(sum(mul(diff, diff)), 0.2);
        total = total.defined() ? add(total, term) : term;
      }
      return total;
    });
  }});

  cases.push_back({"quantizer_straight_through", [](uint64_t seed) {
    // Pass-through contract at replaced rows plus FD agreement elsewhere,
    // with replacement positions frozen.
    ParamRegistry reg;
    QuantizerConfig qcfg = detail::audit_model_cfg().quantizer;
    Rng rng(seed);
    Codebook cb = Codebook::create(reg, qcfg, 12, rng);
    Rng data(seed + 1);
    Tensor u = detail::rand_tensor({6, 12}, data);
    Tensor w = detail::rand_tensor({6, 12}, data);
    QuantizerOutput q = quantize(u, cb);
    std::vector<int64_t> rows{1, 4};
    Tensor probe = u.detach();
    probe.set_requires_grad(true);
    backward(sum(mul(mixup_rows(probe, q.quantized, rows), w)));
    double worst = 0.0;
    for (int64_t i = 0; i < 6; ++i)
      for (int64_t c = 0; c < 12; ++c) {
        double analytic = probe.grad()[static_cast<size_t>(i * 12 + c)];
        double reference;
        if (i == 1 || i == 4) {
          reference = w.at(i, c);  // d(loss)/d(mixed) at the replaced step
        } else {
          const double eps = 1e-5;
          Tensor up = u.detach();
          up.at(i, c) += eps;
          double fp = sum(mul(mixup_rows(up, q.quantized, rows), w)).item();
          Tensor um = u.detach();
          um.at(i, c) -= eps;
          double fm = sum(mul(mixup_rows(um, q.quantized, rows), w)).item();
          reference = (fp - fm) / (2.0 * eps);
        }
        double denom = std::max({std::fabs(analytic), std::fabs(reference), 1e-12});
        worst = std::max(worst, std::fabs(analytic - reference) / denom);
      }
    return worst;
  }});

  cases.push_back({"loss_mlm", [](uint64_t seed) {
    Rng data(seed + 1);
    Tensor logits = detail::rand_tensor({5, 6}, data);
    MaskSet m;
    m.total_length = 5;
    m.timesteps = {0, 2, 4};
    std::vector<int64_t> z{1, 2, 3, 4, 5};
    return grad_check([&](const Tensor& x) { return mlm_loss(x, z, m); }, logits, 1e-4);
  }});

  cases.push_back({"loss_recon_l1", [](uint64_t seed) {
    Rng data(seed + 1);
    Tensor y = detail::rand_tensor({4, 4}, data);
    Tensor x = detail::rand_tensor({4, 4}, data);
    return grad_check([&](const Tensor& t) { return recon_l1(t, x); }, y, 1e-4);
  }});

  cases.push_back({"loss_stop_bce", [](uint64_t seed) {
    Rng data(seed + 1);
    Tensor logits = detail::rand_tensor({6}, data);
    return grad_check([&](const Tensor& x) { return stop_bce(x, 5); }, logits, 1e-4);
  }});

  cases.push_back({"loss_text_mle", [](uint64_t seed) {
    Rng data(seed + 1);
    Tensor logits = detail::rand_tensor({4, 8}, data);
    std::vector<int64_t> t{1, 0, 7, 3};
    return grad_check([&](const Tensor& x) { return text_mle(x, t); }, logits, 1e-4);
  }});

  cases.push_back({"loss_ctc", [](uint64_t seed) {
    Rng data(seed + 1);
    Tensor logits = detail::rand_tensor({5, 5}, data);
    std::vector<int64_t> t{1, 3, 1};
    return grad_check([&](const Tensor& x) { return ctc_loss(x, t); }, logits, 1e-4);
  }});

  cases.push_back({"loss_diversity", [](uint64_t seed) {
    Rng data(seed + 1);
    Tensor p({6});
    double s = 0.0;
    for (int64_t i = 0; i < 6; ++i) {
      p.at(i) = 0.05 + data.uniform();
      s += p.at(i);
    }
    for (int64_t i = 0; i < 6; ++i) p.at(i) /= s;
    return grad_check([&](const Tensor& x) { return diversity_loss({x}); }, p, 1e-5);
  }});

  cases.push_back({"loss_guided_attention", [](uint64_t seed) {
    Rng data(seed + 1);
    Tensor logits = detail::rand_tensor({4, 5}, data);
    return grad_check(
        [&](const Tensor& x) { return guided_attention_loss({softmax(x, 1)}); }, logits,
        1e-4);
  }});

  cases.push_back({"full_pretrain_loss", [](uint64_t seed) {
    // Whole objective on a 2-example toy batch, checked against central
    // differences through the masked-frame embedding (it feeds the encoder,
    // the quantizer, and both decoder branches).
    CorpusConfig ccfg;
    ccfg.seed = seed;
    ccfg.sample_rate = 400;
    ccfg.samples_per_char = 16;
    ccfg.n_speakers = 2;
    ccfg.min_chars = 3;
    ccfg.max_chars = 4;
    ccfg.frame_len = 16;
    ccfg.hop = 8;
    ccfg.mel_bins = 4;
    Corpus corpus = gen_corpus(ccfg, 2, 2);
    ModelConfig mcfg = detail::audit_model_cfg();
    mcfg.net.vocab_size = CharVocab::standard().size();
    Model model = Model::create(mcfg, seed, TaskKind::PRETRAIN);
    UnitLabeler labeler = fit_corpus_units(corpus, mcfg.net.n_units, 8, seed);
    std::vector<Example> speech;
    for (const auto& u : corpus.utterances)
      speech.push_back(make_speech_example(corpus, u, model, &labeler));
    std::vector<Example> text;
    for (size_t i = 0; i < corpus.sentences.size(); ++i) {
      Example ex;
      ex.id = "s" + std::to_string(i);
      ex.text = corpus.cfg.vocab().encode(corpus.sentences[i]);
      text.push_back(std::move(ex));
    }
    PretrainOptions opts;
    opts.p_start = 0.2;  // make masked steps likely on short sequences
    // Row replacement is straight-through (its gradient intentionally differs
    // from the true piecewise-constant derivative); the dedicated
    // quantizer_straight_through case owns that contract, so the composite
    // check runs with replacement off while keeping every other term.
    opts.mixup_ratio = 0.0;
    auto forward = [&]() {
      Rng step_rng(seed + 7);  // identical draws on every invocation
      std::vector<Tensor> mlm_terms, l1_terms, bce_terms, mle_terms;
      std::vector<Tensor> probs[2];
      for (const Example& ex : speech) {
        Tensor h = model.enc_prenet.forward(ex.wave);
        MaskSet mask = speech_span_mask(h.dim(0), opts.p_start, opts.span, step_rng);
        Tensor hm = model.enc_prenet.apply_mask(h, mask.sorted());
        Tensor u = model.backbone.encode(hm);
        if (!mask.empty())
          mlm_terms.push_back(mlm_loss(model.mlm_head->forward(u), ex.units, mask));
        QuantizerOutput q = quantize(u, model.codebook);
        for (int64_t g = 0; g < 2; ++g)
          probs[g].push_back(q.frame_probs[static_cast<size_t>(g)]);
        Tensor memory = mixup(u, q, opts.mixup_ratio, step_rng).mixed;
        Tensor dec_in = model.dec_prenet.forward(shift_frames(ex.frames), ex.speaker);
        PostnetOutput out = model.postnet.forward(model.backbone.decode(dec_in, memory));
        l1_terms.push_back(recon_l1(out.y_refined, ex.frames));
        bce_terms.push_back(stop_bce(out.stop_logits, ex.frames.dim(0) - 1));
      }
      for (const Example& ex : text) {
        TextCorruption c =
            text_infill(ex.text, opts.text_mask_ratio, opts.poisson_lambda,
                        CharVocab::kMask, step_rng);
        Tensor u = model.backbone.encode(model.text.embed(c.corrupted));
        QuantizerOutput q = quantize(u, model.codebook);
        for (int64_t g = 0; g < 2; ++g)
          probs[g].push_back(q.frame_probs[static_cast<size_t>(g)]);
        Tensor memory = mixup(u, q, opts.mixup_ratio, step_rng).mixed;
        std::vector<int64_t> dec_in{CharVocab::kBos};
        dec_in.insert(dec_in.end(), c.original.begin(), c.original.end());
        std::vector<int64_t> targets = c.original;
        targets.push_back(CharVocab::kEos);
        Tensor states = model.backbone.decode(model.text.embed(dec_in), memory);
        mle_terms.push_back(text_mle(model.text.project(states), targets));
      }
      PretrainParts parts;
      if (!mlm_terms.empty()) parts.mlm = detail::average(mlm_terms);
      parts.l1 = detail::average(l1_terms);
      parts.bce = detail::average(bce_terms);
      parts.mle = detail::average(mle_terms);
      std::vector<Tensor> pooled;
      for (int64_t g = 0; g < 2; ++g) {
        Tensor all = probs[g][0];
        for (size_t i = 1; i < probs[g].size(); ++i) all = concat(all, probs[g][i], 0);
        pooled.push_back(mean_axis(all, 0));
      }
      parts.diversity = diversity_loss(pooled);
      // The attraction auxiliary stop-grads the encoder side, so like the
      // straight-through path it has its own dedicated case; the headline
      // total is smooth end to end.
      return pretrain_total(parts, opts.weights.gamma);
    };
    return fd_check_param(model.params, model.enc_prenet.mask_emb, forward, 1e-4);
  }});

  return cases;
}

// Run the registered cases (optionally filtered by substring); every case
// must come in under `tol`.
inline std::vector<AuditResult> run_grad_audit(const std::string& module_filter,
                                               uint64_t seed, double tol) {
  std::vector<AuditResult> results;
  bool matched = false;
  for (const AuditCase& c : audit_registry()) {
    if (!module_filter.empty() && module_filter != "all" &&
        c.name.find(module_filter) == std::string::npos)
      continue;
    matched = true;
    AuditResult r;
    r.name = c.name;
    r.error = c.run(seed);
    r.pass = r.error < tol;
    results.push_back(std::move(r));
  }
  if (!matched) throw ConfigError("grad-audit: no case matches module \"" + module_filter + "\"");
  return results;
}

}  // namespace ust
