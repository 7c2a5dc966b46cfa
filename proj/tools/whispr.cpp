// whispr command-line front end.
//
//   whispr <subcommand> [--config FILE] [--set key=value ...] [options]
//
// Exit status: 0 success, 2 usage or configuration error, 1 runtime failure.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "whispr/whispr.hpp"

namespace fs = std::filesystem;
using namespace whispr;

namespace {

// Seed streams derived from the single --seed flag.
enum SeedStream : std::uint64_t { kInit = 1, kTrain = 2, kMix = 3, kVc = 4, kLm = 5, kProbe = 6, kAug = 7 };

struct Common {
  std::string config_file;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
};

void add_common(CLI::App* cmd, Common& c, bool stochastic) {
  cmd->add_option("--config", c.config_file, "experiment config file (key = value lines)");
  cmd->add_option("--set", c.overrides, "override a config key, key=value (repeatable)");
  cmd->add_option("--threads", c.threads, "worker threads")->capture_default_str();
  if (stochastic) cmd->add_option("--seed", c.seed, "random seed (required)")->required();
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg;
  if (!c.config_file.empty()) cfg.load_file(c.config_file);
  for (const auto& kv : c.overrides) cfg.set_assignment(kv);
  return cfg;
}

std::uint64_t seed_of(const Common& c, SeedStream s) { return mix_seed(c.seed.value_or(0), s); }

void artifact(const fs::path& p) { std::cout << "artifact: " << p.string() << '\n'; }

void write_resolved(const fs::path& dir, const ExperimentConfig& cfg, const Common& c) {
  const fs::path p = dir / "resolved.cfg";
  auto out = io::open_out(p);
  if (c.seed) out << "# seed = " << *c.seed << '\n';
  cfg.write(out);
  artifact(p);
}

/// `style` is empty (keep all) or a comma-separated list such as "normal,pseudo_whisper".
Manifest filter(const Manifest& m, const std::string& style, std::size_t limit) {
  std::vector<std::string> keep;
  for (std::size_t b = 0; b < style.size();) {
    const auto e = std::min(style.find(',', b), style.size());
    keep.push_back(to_string(parse_style(style.substr(b, e - b))));
    b = e + 1;
  }
  Manifest out;
  for (const auto& r : m.records) {
    if (!keep.empty() && std::find(keep.begin(), keep.end(), to_string(r.style)) == keep.end()) continue;
    if (limit && out.size() == limit) break;
    out.records.push_back(r);
  }
  return out;
}

Vocabulary load_vocab(const ExperimentConfig& cfg, const std::string& flag_value) {
  const std::string path = flag_value.empty() ? cfg.str("vocab") : flag_value;
  if (path.empty()) throw ConfigError("no vocabulary: pass --vocab or set vocab=...");
  return Vocabulary::load(path);
}

Encoder load_encoder(const ExperimentConfig& cfg, const Vocabulary& vocab, const fs::path& ckpt) {
  return Encoder(encoder_config(cfg, vocab.size(), 0), load_checkpoint(ckpt));
}

std::vector<std::string> tokenize(const std::string& text, const std::string& tokenizer) {
  std::vector<std::string> out;
  if (tokenizer == "char") {
    for (std::size_t i = 0; i < text.size();) {
      std::size_t n = 1;
      while (i + n < text.size() && (static_cast<unsigned char>(text[i + n]) & 0xC0) == 0x80) ++n;
      if (text[i] != ' ' && text[i] != '\t') out.push_back(text.substr(i, n));
      i += n;
    }
    return out;
  }
  if (tokenizer != "space") throw ConfigError("unknown tokenizer: " + tokenizer);
  std::istringstream ss(text);
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

/// "id<TAB>text" lines, file order preserved.
std::vector<std::pair<std::string, std::string>> read_transcripts(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw RuntimeError("cannot open " + path.string());
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      out.emplace_back(line, "");
    } else {
      out.emplace_back(line.substr(0, tab), line.substr(tab + 1));
    }
  }
  return out;
}

void print_train_summary(const TrainResult& r) {
  if (r.skipped) std::cerr << "warning: " << r.skipped << " infeasible utterances skipped\n";
  if (!r.log.empty()) {
    const auto& last = r.log.back();
    std::cout << "final step " << last.step << " mean loss " << last.mean_loss;
    if (last.dev_cer >= 0) std::cout << " dev CER " << last.dev_cer << '%';
    std::cout << '\n';
  }
}

// ---------------------------------------------------------------------------

int cmd_synth(const Common& c, const std::string& out_dir) {
  const auto cfg = resolve(c);
  ToyCorpusOptions opt;
  opt.sample_rate_hz = cfg.integer("feat.sample_rate_hz");
  opt.min_symbols = cfg.integer("synth.min_symbols");
  opt.max_symbols = cfg.integer("synth.max_symbols");
  const auto vocab = default_toy_vocab();
  const auto corpus = synth_toy_corpus(cfg.count("synth.sentences"), vocab, *c.seed, out_dir, opt);
  write_toy_corpus(corpus, vocab, out_dir);
  artifact(fs::path(out_dir) / "manifest.jsonl");
  artifact(fs::path(out_dir) / "vocab.txt");
  write_resolved(out_dir, cfg, c);
  return 0;
}

int cmd_featurize(const Common& c, const std::string& manifest, const std::string& out_dir) {
  const auto cfg = resolve(c);
  const auto feat = feature_config(cfg);
  Manifest m = load_manifest(manifest);
  parallel_for(m.size(), c.threads, [&](std::size_t i) {
    auto& r = m.records[i];
    const fs::path p = absolute_normal(fs::path(out_dir) / "feats" / (r.id + ".wfe"));
    write_features(p, load_record_features(r, feat));
    r.source = p.string();
  });
  save_manifest(fs::path(out_dir) / "manifest.jsonl", m);
  std::cout << "featurized " << m.size() << " records\n";
  artifact(fs::path(out_dir) / "manifest.jsonl");
  write_resolved(out_dir, cfg, c);
  return 0;
}

int cmd_partition(const Common& c, const std::string& manifest, const std::string& out_dir) {
  const auto cfg = resolve(c);
  SplitSpec s{cfg.count("split.train"), cfg.count("split.dev"), cfg.count("split.test"), *c.seed};
  const auto p = partition_by_sentence(load_manifest(manifest), s);
  for (auto [name, m] : {std::pair{"train", &p.train}, {"dev", &p.dev}, {"test", &p.test}}) {
    const auto path = fs::path(out_dir) / (std::string(name) + ".jsonl");
    save_manifest(path, *m);
    std::cout << name << ": " << m->size() << " records\n";
    artifact(path);
  }
  write_resolved(out_dir, cfg, c);
  return 0;
}

int cmd_augment_stats(const Common& c, std::size_t samples, const std::string& out_dir) {
  const auto cfg = resolve(c);
  ExperimentConfig enabled = cfg;
  enabled.set("aug.enabled", "true");
  const auto policy = mask_policy(enabled);
  const auto nu = static_cast<std::size_t>(cfg.integer("feat.n_mels"));
  Rng rng(seed_of(c, kAug));
  std::vector<std::size_t> hist(nu, 0);
  std::size_t empty = 0;
  for (std::size_t n = 0; n < samples; ++n) {
    const Mask m = sample_freq_mask(*policy, nu, rng);
    if (m.width == 0) {
      ++empty;
      continue;
    }
    ++hist[m.start];
  }
  // Expected origin marginal: average over widths of the normalized weights.
  std::vector<double> expected(nu, 0.0);
  const int widths = policy->F2 - policy->F1 + 1;
  for (int df = policy->F1; df <= policy->F2; ++df) {
    if (df == 0) continue;
    const auto support = nu - static_cast<std::size_t>(df);
    auto w = origin_weights(policy->origin_dist, support, policy->geo_rho);
    double s = 0.0;
    for (double v : w) s += v;
    for (std::size_t f = 0; f < support; ++f) expected[f] += w[f] / s / widths;
  }
  const fs::path p = fs::path(out_dir) / "origin_hist.csv";
  auto out = io::open_out(p);
  out << "f0,count,expected_fraction\n";
  for (std::size_t f = 0; f < nu; ++f) out << f << ',' << hist[f] << ',' << expected[f] << '\n';
  std::cout << samples << " draws, " << empty << " zero-width\n";
  artifact(p);
  write_resolved(out_dir, cfg, c);
  return 0;
}

void setup_train_options(TrainOptions& o, const ExperimentConfig& cfg, const Common& c, const fs::path& out_dir,
                         std::ostream* log) {
  o.log_every = cfg.count("train.log_every");
  o.eval_every = cfg.count("train.eval_every");
  o.checkpoint_every = cfg.count("train.checkpoint_every");
  o.checkpoint_dir = out_dir / "checkpoints";
  o.threads = c.threads;
  o.log_csv = log;
  o.warn = &std::cerr;
}

int cmd_train(const Common& c, const std::vector<std::string>& train_paths, const std::string& dev_path,
              const std::string& vocab_path, const std::string& style, const std::string& out_dir) {
  const auto cfg = resolve(c);
  const auto feat = feature_config(cfg);
  const auto vocab = load_vocab(cfg, vocab_path);
  std::vector<Manifest> sources;
  for (const auto& p : train_paths) sources.push_back(filter(load_manifest(p), style, 0));
  auto mix = build_training_mix(parse_mix_strategy(cfg.str("train.mix")), sources, seed_of(c, kMix));
  for (const auto& w : mix.warnings) std::cerr << "warning: " << w << '\n';
  const auto train = load_utterances(mix.manifest, vocab, feat);
  std::vector<Utterance> dev;
  if (!dev_path.empty()) dev = load_utterances(filter(load_manifest(dev_path), style, 0), vocab, feat);

  TrainOptions o;
  o.opt = optimizer_config(cfg, "opt", seed_of(c, kTrain));
  const fs::path log_path = fs::path(out_dir) / "train_log.csv";
  auto log = io::open_out(log_path);
  setup_train_options(o, cfg, c, out_dir, &log);
  TrainResult res;
  const Encoder model = pretrain(train, encoder_config(cfg, vocab.size(), seed_of(c, kInit)), mask_policy(cfg), o,
                                 dev.empty() ? nullptr : &dev, &res);
  const fs::path ckpt = fs::path(out_dir) / "model.wck";
  save_checkpoint(ckpt, model.params());
  print_train_summary(res);
  artifact(ckpt);
  artifact(log_path);
  for (const auto& p : res.checkpoints) artifact(p);
  write_resolved(out_dir, cfg, c);
  return 0;
}

int cmd_finetune(const Common& c, const std::string& init, const std::string& train_path, const std::string& dev_path,
                 const std::string& vocab_path, const std::string& style, std::size_t limit,
                 std::optional<std::size_t> bottom_k, const std::string& out_dir) {
  auto cfg = resolve(c);
  if (bottom_k) cfg.set("plan.bottom_k", std::to_string(*bottom_k));
  const auto vocab = load_vocab(cfg, vocab_path);
  const auto plan = transfer_plan(cfg);
  const Encoder pre = load_encoder(cfg, vocab, init);
  const fs::path ckpt = fs::path(out_dir) / "model.wck";
  if (plan.finetune_bottom_k == 0) {
    fs::create_directories(out_dir);
    fs::copy_file(init, ckpt, fs::copy_options::overwrite_existing);
    std::cout << "bottom-k 0: no-op, checkpoint copied unchanged\n";
    artifact(ckpt);
    write_resolved(out_dir, cfg, c);
    return 0;
  }
  const auto feat = feature_config(cfg);
  const auto train = load_utterances(filter(load_manifest(train_path), style, limit), vocab, feat);
  std::vector<Utterance> dev;
  if (!dev_path.empty()) dev = load_utterances(filter(load_manifest(dev_path), style, 0), vocab, feat);
  TrainOptions o;
  o.opt = optimizer_config(cfg, "ft", seed_of(c, kTrain));
  const fs::path log_path = fs::path(out_dir) / "train_log.csv";
  auto log = io::open_out(log_path);
  setup_train_options(o, cfg, c, out_dir, &log);
  o.augment = mask_policy(cfg);
  TrainResult res;
  const Encoder tuned = finetune_layerwise(plan, pre, train, o, dev.empty() ? nullptr : &dev, &res);
  save_checkpoint(ckpt, tuned.params());
  print_train_summary(res);
  artifact(ckpt);
  artifact(log_path);
  write_resolved(out_dir, cfg, c);
  return 0;
}

int cmd_probe(const Common& c, const std::string& model_path, const std::string& data_path,
              const std::string& vocab_path, const std::string& style, const std::string& out_dir) {
  const auto cfg = resolve(c);
  const auto vocab = load_vocab(cfg, vocab_path);
  Encoder model = load_encoder(cfg, vocab, model_path);
  model.params().set_all_frozen(true);
  const auto data = load_utterances(filter(load_manifest(data_path), style, 0), vocab, feature_config(cfg));
  const auto res = fit_frequency_weights(model, data, probe_config(cfg, seed_of(c, kProbe)), c.threads);
  const fs::path p = fs::path(out_dir) / "weights.csv";
  auto out = io::open_out(p);
  write_weights_csv(out, res.w_hat);
  if (!res.step_loss.empty()) {
    std::cout << "loss " << res.step_loss.front() << " -> " << res.step_loss.back() << '\n';
  }
  artifact(p);
  write_resolved(out_dir, cfg, c);
  return 0;
}

int cmd_vc_train(const Common& c, const std::string& manifest, const std::string& out_dir) {
  const auto cfg = resolve(c);
  const auto vc = vc_config(cfg, seed_of(c, kInit));
  std::size_t n_pairs = 0;
  const auto data = build_parallel_dataset(load_manifest(manifest), feature_config(cfg), vc, &n_pairs);
  VcTrainResult res;
  const VcNet net = vc_train(data, vc, optimizer_config(cfg, "vc", seed_of(c, kVc)), &res);
  const fs::path p = fs::path(out_dir) / "vc.wck";
  save_checkpoint(p, net.params());
  std::cout << n_pairs << " parallel utterances, " << data.inputs.rows() << " frame pairs";
  if (!res.step_loss.empty()) std::cout << ", batch mse " << res.step_loss.front() << " -> " << res.step_loss.back();
  std::cout << '\n';
  artifact(p);
  write_resolved(out_dir, cfg, c);
  return 0;
}

int cmd_vc_apply(const Common& c, const std::string& model_path, const std::string& in, const std::string& out) {
  const auto cfg = resolve(c);
  const auto feat = feature_config(cfg);
  const VcNet net = VcNet::from_params(load_checkpoint(model_path), cfg.count("vc.context"));
  UtteranceRecord r;
  r.source = in;
  write_features(out, pseudo_features(net, load_record_features(r, feat), feat.delta_window));
  artifact(out);
  return 0;
}

int cmd_gen_pseudo(const Common& c, const std::string& model_path, const std::string& manifest,
                   const std::string& style, const std::string& out_dir) {
  const auto cfg = resolve(c);
  const VcNet net = VcNet::from_params(load_checkpoint(model_path), cfg.count("vc.context"));
  const auto src = filter(load_manifest(manifest), style, 0);
  const auto m = generate_pseudo_corpus(net, src, out_dir, feature_config(cfg), &std::cerr, c.threads);
  const fs::path p = fs::path(out_dir) / "manifest.jsonl";
  save_manifest(p, m);
  std::cout << m.size() << " pseudo-whisper records\n";
  artifact(p);
  write_resolved(out_dir, cfg, c);
  return 0;
}

int cmd_lm_train(const Common& c, const std::string& manifest, const std::string& text, const std::string& vocab_path,
                 const std::string& out_dir) {
  const auto cfg = resolve(c);
  const auto vocab = load_vocab(cfg, vocab_path);
  std::vector<LabelSequence> corpus;
  if (!manifest.empty()) {
    for (const auto& r : load_manifest(manifest).records) corpus.push_back(vocab.encode(r.transcript));
  }
  if (!text.empty()) {
    std::ifstream in(text);
    if (!in) throw RuntimeError("cannot open " + text);
    std::string line;
    while (std::getline(in, line)) {
      const auto toks = tokenize(line, vocab.tokenizer);
      if (!toks.empty()) corpus.push_back(vocab.encode(toks));
    }
  }
  if (corpus.empty()) throw ConfigError("lm-train: pass --manifest or --text with at least one sentence");
  CharLm lm(lm_config(cfg, vocab.size() - 1, seed_of(c, kInit)));
  const auto res = lm_train(lm, corpus, optimizer_config(cfg, "lm", seed_of(c, kLm)));
  const fs::path p = fs::path(out_dir) / "lm.wck";
  save_checkpoint(p, lm.params());
  std::cout << "training perplexity " << lm.perplexity(corpus) << '\n';
  artifact(p);
  write_resolved(out_dir, cfg, c);
  return 0;
}

int cmd_decode(const Common& c, const std::string& model_path, const std::string& manifest,
               const std::string& vocab_path, const std::string& lm_path, const std::string& style,
               const std::string& out_dir) {
  const auto cfg = resolve(c);
  const auto vocab = load_vocab(cfg, vocab_path);
  const Encoder model = load_encoder(cfg, vocab, model_path);
  const auto m = filter(load_manifest(manifest), style, 0);
  const auto data = load_utterances(m, vocab, feature_config(cfg));
  std::string mode = cfg.str("decode.lm_mode");
  if (mode != "none" && mode != "rescore" && mode != "fusion") throw ConfigError("decode.lm_mode: " + mode);
  std::optional<CharLm> lm;
  if (mode != "none" && lm_path.empty()) {
    std::cerr << "note: no --lm given, decoding without a language model\n";
    mode = "none";
  }
  if (mode != "none") {
    lm = CharLm::from_params(load_checkpoint(lm_path));
    if (lm->config().n_symbols + 1 != vocab.size()) throw RuntimeError("LM vocabulary size differs from the model's");
  }
  const std::size_t width = cfg.count("decode.beam_width");
  const double beta = cfg.real("decode.lm_weight"), gamma = cfg.real("decode.length_bonus");

  std::vector<std::vector<Hypothesis>> nbest(data.size());
  parallel_for(data.size(), c.threads, [&](std::size_t i) {
    const Matrix lp = model.forward(data[i].features).log_probs;
    if (mode == "none" && width == 1) {
      Hypothesis h;
      h.labels = greedy_decode(lp);
      nbest[i] = {h};
      return;
    }
    BeamOptions bo;
    bo.beam_width = width;
    bo.gamma = mode == "none" ? gamma : 0.0;
    if (mode == "fusion") {
      bo.lm = &*lm;
      bo.beta = beta;
      bo.gamma = gamma;
    }
    nbest[i] = beam_decode(lp, bo);
    if (mode == "rescore") nbest[i] = rescore_nbest(nbest[i], &*lm, beta, gamma);
  });

  const fs::path hyp_p = fs::path(out_dir) / "hyp.txt", ref_p = fs::path(out_dir) / "ref.txt",
                 nb_p = fs::path(out_dir) / "nbest.tsv";
  auto hyp = io::open_out(hyp_p);
  auto ref = io::open_out(ref_p);
  auto nb = io::open_out(nb_p);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto sep = vocab.tokenizer == "char" ? std::string() : std::string(" ");
    hyp << data[i].id << '\t' << join(vocab.decode(nbest[i].front().labels), sep) << '\n';
    ref << data[i].id << '\t' << join(m.records[i].transcript, sep) << '\n';
    write_nbest_tsv(nb, data[i].id, nbest[i], vocab);
  }
  artifact(hyp_p);
  artifact(ref_p);
  artifact(nb_p);
  write_resolved(out_dir, cfg, c);
  return 0;
}

int cmd_score(const std::string& ref_path, const std::string& hyp_path, const std::string& tokenizer,
              const std::string& csv_path, const std::string& metric, const std::string& model,
              const std::string& dataset) {
  const auto refs = read_transcripts(ref_path);
  std::map<std::string, std::string> hyps;
  for (auto& [id, text] : read_transcripts(hyp_path)) {
    if (!hyps.emplace(id, text).second) throw RuntimeError("duplicate hypothesis id " + id);
  }
  ScoreReport rep;
  rep.metric = metric;
  rep.model = model;
  rep.dataset = dataset;
  for (const auto& [id, text] : refs) {
    auto it = hyps.find(id);
    if (it == hyps.end()) std::cerr << "warning: no hypothesis for " << id << ", scored as empty\n";
    const auto r = tokenize(text, tokenizer);
    const auto h = it == hyps.end() ? std::vector<std::string>{} : tokenize(it->second, tokenizer);
    rep.rows.push_back({id, r.size(), edit_distance(r, h)});
  }
  write_report_table(std::cout, rep);
  if (!csv_path.empty()) {
    auto out = io::open_out(csv_path);
    write_report_csv(out, rep);
    artifact(csv_path);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"whispr: whispered-speech recognition toolkit"};
  app.require_subcommand(1);
  {
    std::ostringstream keys;
    keys << "\nConfig keys (set with --config FILE or --set key=value):\n";
    ExperimentConfig{}.write_help(keys);
    app.footer(keys.str());
  }
  Common com;
  std::string out, manifest, vocab, style, dev, init, model, lm, text, ref, hyp, csv, in;
  std::vector<std::string> train_paths;
  std::size_t samples = 100000, limit = 0;
  std::optional<std::size_t> bottom_k;
  std::string tokenizer = "space", metric = "CER", model_label, dataset_label;

  auto* synth = app.add_subcommand("synth-data", "render the synthetic vowel corpus (normal + whispered)");
  add_common(synth, com, true);
  synth->add_option("--out", out, "output directory")->required();

  auto* featurize = app.add_subcommand("featurize", "extract log-Mel (+delta) features for a manifest");
  add_common(featurize, com, false);
  featurize->add_option("--manifest", manifest, "input manifest")->required();
  featurize->add_option("--out", out, "output directory")->required();

  auto* partition = app.add_subcommand("partition", "split a manifest into train/dev/test by sentence");
  add_common(partition, com, true);
  partition->add_option("--manifest", manifest, "input manifest")->required();
  partition->add_option("--out", out, "output directory")->required();

  auto* aug = app.add_subcommand("augment-stats", "histogram of sampled frequency-mask origins");
  add_common(aug, com, true);
  aug->add_option("--samples", samples, "mask draws")->capture_default_str();
  aug->add_option("--out", out, "output directory")->required();

  auto* train = app.add_subcommand("train", "pre-train an encoder with CTC");
  add_common(train, com, true);
  train->add_option("--train", train_paths, "training manifest (repeatable; combined by train.mix)")->required();
  train->add_option("--dev", dev, "development manifest");
  train->add_option("--vocab", vocab, "vocabulary file (overrides the vocab key)");
  train->add_option("--style", style, "keep only records of these styles (comma-separated)");
  train->add_option("--out", out, "output directory")->required();

  auto* ft = app.add_subcommand("finetune", "layer-wise transfer fine-tuning");
  add_common(ft, com, true);
  ft->add_option("--init", init, "pre-trained checkpoint")->required();
  ft->add_option("--train", manifest, "fine-tuning manifest")->required();
  ft->add_option("--dev", dev, "development manifest");
  ft->add_option("--vocab", vocab, "vocabulary file (overrides the vocab key)");
  ft->add_option("--style", style, "keep only records of these styles (comma-separated)");
  ft->add_option("--limit", limit, "use at most this many records (0: all)")->capture_default_str();
  ft->add_option("--bottom-k", bottom_k, "layer groups to unfreeze (overrides plan.bottom_k)");
  ft->add_option("--out", out, "output directory")->required();

  auto* probe = app.add_subcommand("probe", "learn per-bin frequency importance of a frozen model");
  add_common(probe, com, true);
  probe->add_option("--model", model, "encoder checkpoint")->required();
  probe->add_option("--data", manifest, "manifest of labelled utterances")->required();
  probe->add_option("--vocab", vocab, "vocabulary file (overrides the vocab key)");
  probe->add_option("--style", style, "keep only records of these styles (comma-separated)");
  probe->add_option("--out", out, "output directory")->required();

  auto* vct = app.add_subcommand("vc-train", "train the normal-to-whisper feature mapping");
  add_common(vct, com, true);
  vct->add_option("--manifest", manifest, "manifest with parallel normal/whisper records")->required();
  vct->add_option("--out", out, "output directory")->required();

  auto* vca = app.add_subcommand("vc-apply", "convert one utterance's features");
  add_common(vca, com, false);
  vca->add_option("--model", model, "VC checkpoint")->required();
  vca->add_option("--in", in, "input WAV or WFE1 file")->required();
  vca->add_option("--out", out, "output WFE1 file")->required();

  auto* gp = app.add_subcommand("gen-pseudo", "convert a normal-speech manifest to pseudo whisper");
  add_common(gp, com, false);
  gp->add_option("--model", model, "VC checkpoint")->required();
  gp->add_option("--manifest", manifest, "source manifest")->required();
  gp->add_option("--style", style, "keep only records of these styles (comma-separated)")->default_str("normal");
  gp->add_option("--out", out, "output directory")->required();

  auto* lmt = app.add_subcommand("lm-train", "train the character LM");
  add_common(lmt, com, true);
  lmt->add_option("--manifest", manifest, "take transcripts from a manifest");
  lmt->add_option("--text", text, "text corpus, one transcript per line");
  lmt->add_option("--vocab", vocab, "vocabulary file (overrides the vocab key)");
  lmt->add_option("--out", out, "output directory")->required();

  auto* dec = app.add_subcommand("decode", "decode a manifest (greedy, beam, LM rescoring or fusion)");
  add_common(dec, com, false);
  dec->add_option("--model", model, "encoder checkpoint")->required();
  dec->add_option("--manifest", manifest, "manifest to decode")->required();
  dec->add_option("--vocab", vocab, "vocabulary file (overrides the vocab key)");
  dec->add_option("--lm", lm, "LM checkpoint for decode.lm_mode rescore|fusion");
  dec->add_option("--style", style, "keep only records of these styles (comma-separated)");
  dec->add_option("--out", out, "output directory")->required();

  auto* score = app.add_subcommand("score", "error rate of hypotheses against references");
  score->add_option("--ref", ref, "reference file, id<TAB>text per line")->required();
  score->add_option("--hyp", hyp, "hypothesis file, id<TAB>text per line")->required();
  score->add_option("--tokenizer", tokenizer, "space | char")->capture_default_str();
  score->add_option("--metric", metric, "label for the report")->capture_default_str();
  score->add_option("--csv", csv, "also write the per-utterance CSV here");
  score->add_option("--model-name", model_label, "report metadata");
  score->add_option("--dataset-name", dataset_label, "report metadata");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  if (gp->parsed() && style.empty()) style = "normal";

  try {
    if (synth->parsed()) return cmd_synth(com, out);
    if (featurize->parsed()) return cmd_featurize(com, manifest, out);
    if (partition->parsed()) return cmd_partition(com, manifest, out);
    if (aug->parsed()) return cmd_augment_stats(com, samples, out);
    if (train->parsed()) return cmd_train(com, train_paths, dev, vocab, style, out);
    if (ft->parsed()) return cmd_finetune(com, init, manifest, dev, vocab, style, limit, bottom_k, out);
    if (probe->parsed()) return cmd_probe(com, model, manifest, vocab, style, out);
    if (vct->parsed()) return cmd_vc_train(com, manifest, out);
    if (vca->parsed()) return cmd_vc_apply(com, model, in, out);
    if (gp->parsed()) return cmd_gen_pseudo(com, model, manifest, style, out);
    if (lmt->parsed()) return cmd_lm_train(com, manifest, text, vocab, out);
    if (dec->parsed()) return cmd_decode(com, model, manifest, vocab, lm, style, out);
    if (score->parsed()) return cmd_score(ref, hyp, tokenizer, csv, metric, model_label, dataset_label);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
