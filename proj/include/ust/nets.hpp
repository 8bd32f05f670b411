#pragma once

#include <string>
#include <vector>

#include "ust/errors.hpp"
#include "ust/params.hpp"
#include "ust/tensor.hpp"

namespace ust {

// Shapes of all modal pre/post-nets. Full-scale values stay expressible;
// defaults are the desk-scale configuration.
struct NetConfig {
  int64_t dim = 64;                          // model dimension d
  int64_t mel_bins = 8;                      // log-Mel bins
  std::vector<int64_t> conv_channels{32, 32};
  std::vector<int64_t> conv_strides{2, 2};
  std::vector<int64_t> conv_kernels{2, 2};
  int64_t dec_prenet_hidden = 256;           // three FC layers of this width
  int64_t postnet_layers = 5;
  int64_t postnet_channels = 32;
  int64_t postnet_kernel = 5;                // odd, for same-length padding
  int64_t vocab_size = 32;
  int64_t n_speakers = 4;
  int64_t speaker_dim = 16;
  int64_t n_units = 16;                      // acoustic unit classes (MLM targets)
  double ln_eps = 1e-5;

  void validate() const {
    if (conv_strides.size() != conv_kernels.size() ||
        conv_channels.size() != conv_kernels.size())
      throw ConfigError("NetConfig: conv channels/strides/kernels must align");
    if (conv_channels.empty()) throw ConfigError("NetConfig: need at least one conv block");
    if (postnet_kernel % 2 == 0) throw ConfigError("NetConfig: postnet kernel must be odd");
    if (n_speakers < 1) throw ConfigError("NetConfig: need at least one speaker");
  }
};

// Learned per-speaker vectors; also carries the SID output table.
struct SpeakerTable {
  Tensor table;  // [n_speakers, dim]

  static SpeakerTable create(ParamRegistry& reg, const std::string& name, int64_t speakers,
                             int64_t dim, Rng& rng) {
    return SpeakerTable{reg.add(name, Tensor::randn({speakers, dim}, rng, 0.5))};
  }

  int64_t count() const { return table.dim(0); }

  Tensor row(int64_t speaker) const {
    if (speaker < 0 || speaker >= count())
      throw LookupError("speaker id " + std::to_string(speaker) + " outside table of " +
                        std::to_string(count()) + " speakers");
    return reshape(embedding_lookup(table, {speaker}), {table.dim(1)});
  }
};

// Temporal conv stack downsampling raw waveform into frame vectors, plus the
// learned embedding that overwrites masked frames.
struct SpeechEncoderPrenet {
  NetConfig cfg;
  std::vector<Tensor> conv_w;  // [C_out, C_in, K]
  std::vector<Tensor> conv_b;
  std::vector<LayerNormParams> conv_ln;
  Linear proj;
  Tensor mask_emb;  // [dim]

  static SpeechEncoderPrenet create(ParamRegistry& reg, const NetConfig& cfg, Rng& rng) {
    SpeechEncoderPrenet net;
    net.cfg = cfg;
    int64_t cin = 1;
    for (size_t i = 0; i < cfg.conv_channels.size(); ++i) {
      int64_t cout = cfg.conv_channels[i];
      int64_t k = cfg.conv_kernels[i];
      double scale = 1.0 / std::sqrt(static_cast<double>(cin * k));
      std::string name = "enc_prenet.conv" + std::to_string(i);
      net.conv_w.push_back(reg.add(name + ".w", Tensor::randn({cout, cin, k}, rng, scale)));
      net.conv_b.push_back(reg.add(name + ".b", Tensor({cout})));
      net.conv_ln.push_back(LayerNormParams::create(reg, name + ".ln", cout));
      cin = cout;
    }
    net.proj = Linear::create(reg, "enc_prenet.proj", cin, cfg.dim, rng);
    net.mask_emb = reg.add("enc_prenet.mask_emb", Tensor::randn({cfg.dim}, rng, 0.5));
    return net;
  }

  int64_t out_len(int64_t in_len) const {
    int64_t len = in_len;
    for (size_t i = 0; i < cfg.conv_kernels.size(); ++i) {
      if (len < cfg.conv_kernels[i]) return 0;
      len = (len - cfg.conv_kernels[i]) / cfg.conv_strides[i] + 1;
    }
    return len;
  }

  int64_t min_input_len() const {
    int64_t need = 1;
    for (size_t i = cfg.conv_kernels.size(); i-- > 0;)
      need = (need - 1) * cfg.conv_strides[i] + cfg.conv_kernels[i];
    return need;
  }

  Tensor forward(const std::vector<double>& wave) const {
    int64_t len = static_cast<int64_t>(wave.size());
    if (out_len(len) < 1)
      throw DimensionError("speech_encoder_prenet: waveform of " + std::to_string(len) +
                           " samples is below the minimum of " +
                           std::to_string(min_input_len()));
    Tensor x({len, 1}, std::vector<double>(wave));
    for (size_t i = 0; i < conv_w.size(); ++i) {
      x = add_rowvec(conv1d(x, conv_w[i], cfg.conv_strides[i]), conv_b[i]);
      x = gelu(conv_ln[i].forward(x, cfg.ln_eps));
    }
    return proj.forward(x);
  }

  // Overwrite masked frames with the learned mask embedding.
  Tensor apply_mask(const Tensor& h, const std::vector<int64_t>& masked) const {
    return masked.empty() ? h : replace_rows(h, mask_emb, masked);
  }
};

// Three ReLU FC layers over log-Mel frames, speaker vector concatenated per
// frame, then a linear into model space.
struct SpeechDecoderPrenet {
  NetConfig cfg;
  Linear fc1, fc2, fc3;
  SpeakerTable speakers;
  Linear out;

  static SpeechDecoderPrenet create(ParamRegistry& reg, const NetConfig& cfg, Rng& rng) {
    SpeechDecoderPrenet net;
    net.cfg = cfg;
    int64_t h = cfg.dec_prenet_hidden;
    net.fc1 = Linear::create(reg, "dec_prenet.fc1", cfg.mel_bins, h, rng);
    net.fc2 = Linear::create(reg, "dec_prenet.fc2", h, h, rng);
    net.fc3 = Linear::create(reg, "dec_prenet.fc3", h, h, rng);
    net.speakers = SpeakerTable::create(reg, "dec_prenet.spk", cfg.n_speakers,
                                        cfg.speaker_dim, rng);
    net.out = Linear::create(reg, "dec_prenet.out", h + cfg.speaker_dim, cfg.dim, rng);
    return net;
  }

  Tensor forward(const Tensor& frames, int64_t speaker) const {
    if (frames.rank() != 2 || frames.dim(0) < 1)
      throw ContractError("speech_decoder_prenet: frames must be [N, mel], non-empty");
    Tensor h = relu(fc1.forward(frames));
    h = relu(fc2.forward(h));
    h = relu(fc3.forward(h));
    Tensor spk = speakers.row(speaker);
    // Broadcast the speaker vector onto every frame.
    Tensor ones({frames.dim(0), 1}, std::vector<double>(static_cast<size_t>(frames.dim(0)), 1.0));
    Tensor spk_rows = matmul(ones, reshape(spk, {1, cfg.speaker_dim}));
    return out.forward(concat(h, spk_rows, 1));
  }
};

struct PostnetOutput {
  Tensor y_before;    // [N, mel]
  Tensor y_refined;   // [N, mel]
  Tensor stop_logits; // [N]
};

// Linear frame head plus a same-length conv residual stack and a stop head.
// The final conv starts at zero so refinement is the identity at init.
struct SpeechDecoderPostnet {
  NetConfig cfg;
  Linear frame_head;
  std::vector<Tensor> conv_w;
  std::vector<Tensor> conv_b;
  std::vector<LayerNormParams> conv_ln;  // all but the last conv
  Linear stop_head;

  static SpeechDecoderPostnet create(ParamRegistry& reg, const NetConfig& cfg, Rng& rng) {
    SpeechDecoderPostnet net;
    net.cfg = cfg;
    net.frame_head = Linear::create(reg, "postnet.frame", cfg.dim, cfg.mel_bins, rng);
    int64_t cin = cfg.mel_bins;
    for (int64_t i = 0; i < cfg.postnet_layers; ++i) {
      bool last = i + 1 == cfg.postnet_layers;
      int64_t cout = last ? cfg.mel_bins : cfg.postnet_channels;
      int64_t k = cfg.postnet_kernel;
      std::string name = "postnet.conv" + std::to_string(i);
      Tensor w = last ? Tensor({cout, cin, k})
                      : Tensor::randn({cout, cin, k}, rng,
                                      1.0 / std::sqrt(static_cast<double>(cin * k)));
      net.conv_w.push_back(reg.add(name + ".w", w));
      net.conv_b.push_back(reg.add(name + ".b", Tensor({cout})));
      if (!last) net.conv_ln.push_back(LayerNormParams::create(reg, name + ".ln", cout));
      cin = cout;
    }
    net.stop_head = Linear::create(reg, "postnet.stop", cfg.dim, 1, rng);
    return net;
  }

  Tensor project_frames(const Tensor& states) const { return frame_head.forward(states); }

  // Whole-sequence residual refinement; the conv stack looks across time, so
  // it applies to a completed spectrogram, never frame by frame.
  Tensor refine(const Tensor& y_before) const {
    Tensor r = y_before;
    int64_t pad = (cfg.postnet_kernel - 1) / 2;
    for (size_t i = 0; i < conv_w.size(); ++i) {
      r = add_rowvec(conv1d(r, conv_w[i], 1, pad), conv_b[i]);
      if (i + 1 < conv_w.size()) r = gelu(conv_ln[i].forward(r, cfg.ln_eps));
    }
    return add(y_before, r);
  }

  Tensor stop_logit_row(const Tensor& states) const {
    return reshape(stop_head.forward(states), {states.dim(0)});
  }

  PostnetOutput forward(const Tensor& states) const {
    if (states.rank() != 2 || states.dim(0) < 1)
      throw ContractError("speech_decoder_postnet: states must be [N, d], non-empty");
    PostnetOutput out;
    out.y_before = project_frames(states);
    out.y_refined = refine(out.y_before);
    out.stop_logits = stop_logit_row(states);
    return out;
  }
};

// One embedding matrix serving encoder pre-net, decoder pre-net, and
// (transposed) the decoder post-net projection.
struct TextEmbedding {
  Tensor table;  // [vocab, dim]

  static TextEmbedding create(ParamRegistry& reg, const NetConfig& cfg, Rng& rng) {
    return TextEmbedding{reg.add("text.embed", Tensor::randn({cfg.vocab_size, cfg.dim}, rng, 0.3))};
  }

  Tensor embed(const std::vector<int64_t>& tokens) const {
    return embedding_lookup(table, tokens);
  }

  Tensor project(const Tensor& states) const { return matmul(states, transpose(table)); }
};

}  // namespace ust
