// Command-line front end: corpus generation, pre-training, fine-tuning,
// evaluation, and finite-difference gradient auditing.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ust/config.hpp"
#include "ust/eval.hpp"
#include "ust/gradaudit.hpp"
#include "ust/tasks.hpp"
#include "ust/trainer.hpp"

namespace {

using namespace ust;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;    // contract/config errors
constexpr int kExitNumeric = 2;  // NaN, failed audits

void dump_resolved_config(const RunConfig& cfg, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::ofstream os(out_dir + "/config.resolved.json");
  os << cfg.to_json().dump(2) << "\n";
}

RunConfig load_config(const std::string& path) {
  return path.empty() ? RunConfig{} : RunConfig::from_file(path);
}

Corpus load_corpus_checked(const std::string& dir) {
  if (dir.empty() || !std::filesystem::exists(dir + "/corpus.json"))
    throw DataError("corpus not found at \"" + dir + "\" (run gen-data first)");
  return load_corpus(dir);
}

std::vector<Example> text_pool(const Corpus& corpus) {
  std::vector<Example> pool;
  const CharVocab vocab = corpus.cfg.vocab();
  for (size_t i = 0; i < corpus.sentences.size(); ++i) {
    Example ex;
    ex.id = "sent" + std::to_string(i);
    ex.text = vocab.encode(corpus.sentences[i]);
    pool.push_back(std::move(ex));
  }
  // Fall back to utterance transcripts when no sentence pool was generated.
  if (pool.empty()) {
    for (const auto& u : corpus.utterances) {
      Example ex;
      ex.id = "utt" + std::to_string(u.id) + "_text";
      ex.text = vocab.encode(u.text);
      pool.push_back(std::move(ex));
    }
  }
  return pool;
}

std::vector<Example> task_pool(const Corpus& corpus, TaskKind task, const Model& model) {
  std::vector<Example> pool;
  for (const auto& u : corpus.utterances) {
    if (task == TaskKind::VC)
      pool.push_back(make_vc_example(corpus, u, (u.speaker + 1) % corpus.cfg.n_speakers));
    else
      pool.push_back(make_task_example(corpus, u, task, model));
  }
  return pool;
}

std::vector<const Utterance*> select_split(const Corpus& corpus, const std::string& split) {
  std::vector<const Utterance*> out;
  const size_t n = corpus.utterances.size();
  const size_t dev_start = n - n / 4;
  for (size_t i = 0; i < n; ++i) {
    bool in_dev = i >= dev_start;
    if (split == "all" || (split == "dev" && in_dev) || (split == "train" && !in_dev))
      out.push_back(&corpus.utterances[i]);
  }
  if (out.empty()) throw ConfigError("split \"" + split + "\" selects no utterances");
  return out;
}

struct MetricsCsv {
  std::ofstream os;

  MetricsCsv(const std::string& out_dir, bool append) {
    std::filesystem::create_directories(out_dir);
    std::string path = out_dir + "/metrics.csv";
    bool fresh = !append || !std::filesystem::exists(path);
    os.open(path, fresh ? std::ios::out : std::ios::app);
    if (fresh) os << "step,L_mlm,L_1,L_bce,L_mle,L_d,total,lr\n";
  }

  void row(int64_t step, const StepLosses& l, double lr) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%lld,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                  static_cast<long long>(step), l.mlm, l.l1, l.bce, l.mle, l.diversity,
                  l.total, lr);
    os << buf;
  }
};

int cmd_gen_data(uint64_t seed, int64_t n, int64_t speakers, int64_t sentences,
                 const std::string& config_path, const std::string& out) {
  RunConfig cfg = load_config(config_path);
  cfg.data.seed = seed;
  cfg.data.n_speakers = speakers;
  dump_resolved_config(cfg, out);
  if (n == 0) std::cerr << "warning: generating an empty corpus\n";
  Corpus corpus = gen_corpus(cfg.data, n, sentences);
  save_corpus(corpus, out);
  std::cout << "corpus written to " << out << ": " << corpus.utterances.size()
            << " utterances, " << corpus.sentences.size() << " sentences, "
            << cfg.data.n_speakers << " speakers\n";
  return kExitOk;
}

TrainState make_train_state(const RunConfig& cfg, TaskKind task) {
  TrainState st;
  st.model = Model::create(cfg.model, cfg.seed, task);
  st.opt = AdamState::create(st.model.params);
  st.rng = Rng(cfg.seed ^ 0x7261696eULL);
  st.fingerprint = cfg.fingerprint();
  st.config_text = cfg.to_json().dump();
  return st;
}

int cmd_pretrain(const std::string& config_path, const std::string& data_dir,
                 const std::string& out, int64_t steps, const std::string& resume,
                 bool no_speech_pt, bool no_text_pt, bool no_joint, bool no_mlm) {
  RunConfig cfg = load_config(config_path);
  if (steps > 0) cfg.optim.total_steps = steps;
  if (no_speech_pt) cfg.pretrain.speech_pt = false;
  if (no_text_pt) cfg.pretrain.text_pt = false;
  if (no_joint) cfg.pretrain.joint_pt = false;
  if (no_mlm) cfg.pretrain.mlm = false;
  cfg.validate();
  dump_resolved_config(cfg, out);

  Corpus corpus = load_corpus_checked(data_dir);
  TrainState st = make_train_state(cfg, TaskKind::PRETRAIN);
  if (!resume.empty()) {
    CheckpointData data = load_checkpoint(resume);
    restore_train_state(st, data);
    std::cout << "resumed from " << resume << " at step " << st.step << "\n";
  }

  UnitLabeler labeler =
      fit_corpus_units(corpus, cfg.model.net.n_units, cfg.kmeans_iters, cfg.seed);
  std::vector<Example> speech;
  for (const auto& u : corpus.utterances)
    speech.push_back(make_speech_example(corpus, u, st.model, &labeler));
  std::vector<Example> text = text_pool(corpus);

  MetricsCsv csv(out, !resume.empty());
  while (st.step < cfg.optim.total_steps) {
    double lr = lr_at(st.step + 1, cfg.optim);
    StepLosses l = pretrain_update(st, speech, text, cfg.pretrain, cfg.optim,
                                   cfg.speech_batch, cfg.text_batch);
    csv.row(st.step, l, lr);
    if (st.step % 50 == 0 || st.step == cfg.optim.total_steps)
      std::cout << "step " << st.step << " total " << l.total << " (mlm " << l.mlm << " l1 "
                << l.l1 << " bce " << l.bce << " mle " << l.mle << " div " << l.diversity
                << " attr " << l.attraction << ")\n";
    if (st.step % cfg.ckpt_every == 0 || st.step == cfg.optim.total_steps)
      save_checkpoint(st, out + "/checkpoint.bin");
  }
  save_checkpoint(st, out + "/checkpoint.bin");
  std::cout << "checkpoint written to " << out << "/checkpoint.bin\n";
  return kExitOk;
}

int cmd_finetune(const std::string& task_name, const std::string& config_path,
                 const std::string& data_dir, const std::string& out,
                 const std::string& init, bool no_init, bool reinit_dec, int64_t steps) {
  TaskKind kind = TaskSpec::parse(task_name);
  if (kind == TaskKind::PRETRAIN)
    throw ConfigError("finetune: use the pretrain command for pre-training");
  RunConfig cfg = load_config(config_path);
  if (steps > 0) cfg.optim.total_steps = steps;
  cfg.validate();
  dump_resolved_config(cfg, out);

  Corpus corpus = load_corpus_checked(data_dir);
  TrainState st = make_train_state(cfg, kind);
  if (!no_init) {
    if (init.empty())
      throw ConfigError("finetune: provide --init <checkpoint> or pass --no-init");
    CheckpointData data = load_checkpoint(init);
    auto loaded = transfer_params(st.model, data, st.fingerprint);
    std::cout << "initialized " << loaded.size() << " parameter blocks from " << init << "\n";
    if (reinit_dec) {
      reinit_decoder(st.model, cfg.seed ^ 0xdecULL);
      std::cout << "decoder parameters reinitialized\n";
    }
  }

  TaskSpec spec = TaskSpec::for_task(kind);
  std::vector<Example> pool = task_pool(corpus, kind, st.model);
  std::filesystem::create_directories(out);
  std::ofstream csv(out + "/metrics.csv");
  csv << "step,total,mle,ctc,l1,bce,guided_attn,lr\n";
  while (st.step < cfg.optim.total_steps) {
    double lr = lr_at(st.step + 1, cfg.optim);
    FinetuneLosses l = finetune_update(st, spec, pool, cfg.finetune, cfg.optim,
                                       cfg.batch_size);
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%lld,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                  static_cast<long long>(st.step), l.total, l.mle, l.ctc, l.l1, l.bce,
                  l.guided_attention, lr);
    csv << buf;
    if (st.step % 100 == 0 || st.step == cfg.optim.total_steps)
      std::cout << "step " << st.step << " " << task_name << " loss " << l.total << "\n";
    if (st.step % cfg.ckpt_every == 0 || st.step == cfg.optim.total_steps)
      save_checkpoint(st, out + "/checkpoint.bin");
  }
  save_checkpoint(st, out + "/checkpoint.bin");
  std::cout << "checkpoint written to " << out << "/checkpoint.bin\n";
  return kExitOk;
}

int cmd_evaluate(const std::string& task_name, const std::string& ckpt_path,
                 const std::string& data_dir, const std::string& split, double alpha,
                 int64_t beam, const std::string& out) {
  TaskKind kind = TaskSpec::parse(task_name);
  CheckpointData data = load_checkpoint(ckpt_path);
  RunConfig cfg = RunConfig::from_json(nlohmann::json::parse(data.config_text));
  if (alpha >= 0.0) cfg.decode.alpha = alpha;
  if (beam > 0) cfg.decode.beam = beam;
  cfg.decode.validate();
  dump_resolved_config(cfg, out);

  Corpus corpus = load_corpus_checked(data_dir);
  Model model = Model::create(cfg.model, cfg.seed, kind);
  transfer_params(model, data, cfg.fingerprint());
  TaskSpec spec = TaskSpec::for_task(kind);
  const CharVocab vocab = corpus.cfg.vocab();
  auto utts = select_split(corpus, split);

  std::vector<MetricReport> reports;
  if (kind == TaskKind::ASR || kind == TaskKind::ST) {
    MetricReport rep_wer{"wer"};
    MetricReport rep_cer{"cer"};
    for (const Utterance* u : utts) {
      std::string ref = kind == TaskKind::ST ? u->translation : u->text;
      std::vector<int64_t> tokens = decode_text(model, spec, u->wave, cfg.decode, vocab);
      std::string hyp = vocab.decode(tokens);
      rep_wer.add("utt" + std::to_string(u->id), wer(split_words(hyp), split_words(ref)),
                  static_cast<double>(split_words(ref).size()));
      rep_cer.add("utt" + std::to_string(u->id), cer(hyp, ref),
                  static_cast<double>(ref.size()));
    }
    reports = {rep_wer, rep_cer};
  } else if (kind == TaskKind::TTS || kind == TaskKind::VC || kind == TaskKind::SE) {
    MetricReport rep{"mcd"};
    for (const Utterance* u : utts) {
      Example ex = kind == TaskKind::VC
                       ? make_vc_example(corpus, *u, (u->speaker + 1) % corpus.cfg.n_speakers)
                       : make_task_example(corpus, *u, kind, model);
      int64_t cap = std::max<int64_t>(2 * ex.frames.dim(0), 8);
      Tensor gen = decode_spectrogram(model, spec, ex, cap, cfg.decode.stop_threshold);
      Tensor gen_raw = denormalize_features(gen, corpus);
      Tensor ref_raw = denormalize_features(ex.frames, corpus);
      rep.add(ex.id, mcd_dtw(gen_raw, ref_raw));
    }
    reports = {rep};
  } else if (kind == TaskKind::SID) {
    MetricReport rep{"accuracy"};
    for (const Utterance* u : utts) {
      int64_t pred = classify_speaker(model, u->wave);
      rep.add("utt" + std::to_string(u->id), pred == u->speaker ? 1.0 : 0.0);
    }
    reports = {rep};
  } else {
    throw ConfigError("evaluate: unsupported task " + task_name);
  }

  write_report(reports, out + "/report");
  for (const auto& r : reports)
    std::cout << r.name << " = " << r.value << " over " << r.count << " utterances\n";
  return kExitOk;
}

int cmd_grad_audit(const std::string& module, uint64_t seed, double tol) {
  auto results = run_grad_audit(module, seed, tol);
  double worst = 0.0;
  std::string worst_name;
  bool all_pass = true;
  for (const auto& r : results) {
    std::printf("%-32s max_rel_err %.3e  %s\n", r.name.c_str(), r.error,
                r.pass ? "pass" : "FAIL");
    all_pass = all_pass && r.pass;
    if (r.error > worst) {
      worst = r.error;
      worst_name = r.name;
    }
  }
  std::printf("worst: %s (%.3e), tolerance %.1e\n", worst_name.c_str(), worst, tol);
  return all_pass ? kExitOk : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unified speech/text encoder-decoder: training and evaluation tools"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic paired corpus");
  uint64_t gd_seed = 1;
  int64_t gd_n = 64, gd_speakers = 4, gd_sentences = -1;
  std::string gd_config, gd_out;
  gen->add_option("--seed", gd_seed, "Corpus seed");
  gen->add_option("--n", gd_n, "Number of utterances");
  gen->add_option("--speakers", gd_speakers, "Number of speakers");
  gen->add_option("--sentences", gd_sentences, "Text-only sentences (default 4*n)");
  gen->add_option("--config", gd_config, "Run config (data section is used)");
  gen->add_option("--out", gd_out, "Output corpus directory")->required();

  auto* pre = app.add_subcommand("pretrain", "Joint speech/text pre-training");
  std::string pt_config, pt_data, pt_out = "run_pretrain", pt_resume;
  int64_t pt_steps = 0;
  bool pt_no_speech = false, pt_no_text = false, pt_no_joint = false, pt_no_mlm = false;
  pre->add_option("--config", pt_config, "Run config JSON");
  pre->add_option("--data", pt_data, "Corpus directory")->required();
  pre->add_option("--out", pt_out, "Output directory");
  pre->add_option("--steps", pt_steps, "Override total training steps");
  pre->add_option("--resume", pt_resume, "Checkpoint to resume from");
  pre->add_flag("--no-speech-pt", pt_no_speech, "Disable the speech branch");
  pre->add_flag("--no-text-pt", pt_no_text, "Disable the text branch");
  pre->add_flag("--no-joint", pt_no_joint, "Disable quantizer mix-up and diversity");
  pre->add_flag("--no-mlm", pt_no_mlm, "Disable masked unit prediction");

  auto* fin = app.add_subcommand("finetune", "Fine-tune on a downstream task");
  std::string ft_task, ft_config, ft_data, ft_out = "run_finetune", ft_init;
  bool ft_no_init = false, ft_reinit_dec = false;
  int64_t ft_steps = 0;
  fin->add_option("--task", ft_task, "asr|tts|vc|se|st|sid")->required();
  fin->add_option("--config", ft_config, "Run config JSON");
  fin->add_option("--data", ft_data, "Corpus directory")->required();
  fin->add_option("--out", ft_out, "Output directory");
  fin->add_option("--init", ft_init, "Pre-training checkpoint to initialize from");
  fin->add_flag("--no-init", ft_no_init, "Train from scratch");
  fin->add_flag("--reinit-decoder", ft_reinit_dec, "Fresh decoder after init");
  fin->add_option("--steps", ft_steps, "Override total training steps");

  auto* ev = app.add_subcommand("evaluate", "Decode and score a checkpoint");
  std::string ev_task, ev_ckpt, ev_data, ev_split = "all", ev_out = "run_eval";
  double ev_alpha = -1.0;
  int64_t ev_beam = 0;
  ev->add_option("--task", ev_task, "asr|tts|vc|se|st|sid")->required();
  ev->add_option("--ckpt", ev_ckpt, "Checkpoint path")->required();
  ev->add_option("--data", ev_data, "Corpus directory")->required();
  ev->add_option("--split", ev_split, "all|train|dev");
  ev->add_option("--alpha", ev_alpha, "Decoder/CTC interpolation override");
  ev->add_option("--beam", ev_beam, "Beam size override");
  ev->add_option("--out", ev_out, "Output directory");

  auto* ga = app.add_subcommand("grad-audit", "Finite-difference gradient audit");
  std::string ga_module = "all";
  uint64_t ga_seed = 1;
  double ga_tol = 1e-4;
  ga->add_option("--module", ga_module, "Case filter substring or \"all\"");
  ga->add_option("--seed", ga_seed, "Audit seed");
  ga->add_option("--tol", ga_tol, "Max relative error tolerance");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen)
      return cmd_gen_data(gd_seed, gd_n, gd_speakers,
                          gd_sentences < 0 ? 4 * gd_n : gd_sentences, gd_config, gd_out);
    if (*pre)
      return cmd_pretrain(pt_config, pt_data, pt_out, pt_steps, pt_resume, pt_no_speech,
                          pt_no_text, pt_no_joint, pt_no_mlm);
    if (*fin)
      return cmd_finetune(ft_task, ft_config, ft_data, ft_out, ft_init, ft_no_init,
                          ft_reinit_dec, ft_steps);
    if (*ev)
      return cmd_evaluate(ev_task, ev_ckpt, ev_data, ev_split, ev_alpha, ev_beam, ev_out);
    if (*ga) return cmd_grad_audit(ga_module, ga_seed, ga_tol);
  } catch (const ust::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ust::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
