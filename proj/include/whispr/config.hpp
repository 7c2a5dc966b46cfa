// whispr/config.hpp
//
// Flat key=value experiment configuration. Every key has a default and a help
// string; files and overrides may only set known keys. Typed views convert the
// registry into the per-module configuration structs, which validate
// themselves.

#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "whispr/augment.hpp"
#include "whispr/charlm.hpp"
#include "whispr/encoder.hpp"
#include "whispr/features.hpp"
#include "whispr/optim.hpp"
#include "whispr/probe.hpp"
#include "whispr/pseudo.hpp"
#include "whispr/trainer.hpp"

namespace whispr {

class ExperimentConfig {
 public:
  struct Entry {
    std::string value;
    std::string default_value;
    std::string help;
  };

  ExperimentConfig() { define_defaults(); }

  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  const std::map<std::string, Entry>& entries() const { return entries_; }

  void set(const std::string& key, const std::string& value) {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw ConfigError("unknown config key: " + key);
    it->second.value = value;
  }

  /// "key=value" (whitespace around either side is ignored).
  void set_assignment(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + kv + "'");
    set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }

  /// Reads a config file: one assignment per line, '#' starts a comment.
  void load_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
      line = trim(line);
      if (line.empty()) continue;
      try {
        set_assignment(line);
      } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
  }

  const std::string& str(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw ConfigError("unknown config key: " + key);
    return it->second.value;
  }

  double real(const std::string& key) const {
    const auto& s = str(key);
    try {
      std::size_t pos = 0;
      const double v = std::stod(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config key " + key + ": expected a number, got '" + s + "'");
    }
  }

  std::size_t count(const std::string& key) const {
    const auto& s = str(key);
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
      throw ConfigError("config key " + key + ": expected a non-negative integer, got '" + s + "'");
    }
    return v;
  }

  int integer(const std::string& key) const {
    const auto& s = str(key);
    int v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
      throw ConfigError("config key " + key + ": expected an integer, got '" + s + "'");
    }
    return v;
  }

  bool flag(const std::string& key) const {
    const auto& s = str(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ConfigError("config key " + key + ": expected true/false, got '" + s + "'");
  }

  ChannelPair pair(const std::string& key) const {
    const auto& s = str(key);
    const auto comma = s.find(',');
    try {
      if (comma == std::string::npos) throw std::invalid_argument(s);
      return {std::stoul(s.substr(0, comma)), std::stoul(s.substr(comma + 1))};
    } catch (const std::exception&) {
      throw ConfigError("config key " + key + ": expected 'a,b', got '" + s + "'");
    }
  }

  /// Every key with its resolved value, sorted, in the same syntax load_file reads.
  void write(std::ostream& os) const {
    for (const auto& [k, e] : entries_) os << k << " = " << e.value << '\n';
  }

  void write_help(std::ostream& os) const {
    for (const auto& [k, e] : entries_) os << "  " << k << " (default " << e.default_value << "): " << e.help << '\n';
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  void def(const std::string& key, const std::string& value, const std::string& help) {
    entries_[key] = {value, value, help};
  }

  void define_defaults() {
    def("vocab", "", "vocabulary file, one symbol per line");

    def("feat.sample_rate_hz", "16000", "expected WAV sample rate");
    def("feat.n_fft", "512", "FFT size");
    def("feat.win_ms", "25", "analysis window length");
    def("feat.hop_ms", "10", "frame shift");
    def("feat.n_mels", "80", "Mel bins");
    def("feat.fmin_hz", "0", "lowest filter edge");
    def("feat.fmax_hz", "8000", "highest filter edge");
    def("feat.add_delta", "true", "append delta coefficients");
    def("feat.delta_window", "2", "regression half-width for deltas");

    def("aug.enabled", "false", "apply masking during training");
    def("aug.F1", "0", "minimum frequency-mask width");
    def("aug.F2", "27", "maximum frequency-mask width");
    def("aug.n_freq_masks", "2", "frequency masks per utterance");
    def("aug.origin", "uni", "mask origin distribution: uni | lin | geo");
    def("aug.geo_rho", "0.95", "ratio of the geometric origin distribution");
    def("aug.time_mask_T", "40", "maximum time-mask width");
    def("aug.n_time_masks", "1", "time masks per utterance");

    def("enc.extractor", "standard", "standard | freq_divided");
    def("enc.channels", "64,128", "channels of the two conv blocks");
    def("enc.low_channels", "0,0", "freq_divided low-branch channels (0,0 derives c/2)");
    def("enc.high_channels", "0,0", "freq_divided high-branch channels (0,0 derives 3c/2)");
    def("enc.recurrent", "lstm", "lstm | gru");
    def("enc.layers", "4", "bidirectional recurrent layers");
    def("enc.units", "512", "units per direction");

    def("opt.kind", "adam", "pre-training optimizer: sgd | sgd_momentum | adam");
    def("opt.lr", "0.001", "pre-training learning rate");
    def("opt.momentum", "0.9", "momentum for sgd_momentum");
    def("opt.clip", "5", "global gradient-norm clip (<= 0 disables)");
    def("opt.batch", "8", "utterances per batch");
    def("opt.steps", "1000", "optimizer steps");

    def("ft.kind", "sgd", "fine-tuning optimizer");
    def("ft.lr", "0.01", "fine-tuning learning rate (fixed)");
    def("ft.momentum", "0.9", "momentum for sgd_momentum");
    def("ft.clip", "5", "global gradient-norm clip (<= 0 disables)");
    def("ft.batch", "8", "utterances per batch");
    def("ft.steps", "500", "optimizer steps");

    def("plan.bottom_k", "3", "layer groups unfrozen from the extractor upward");
    def("plan.include_extractor", "true", "fine-tune the extractor when it falls in bottom-k");
    def("plan.include_output_layer", "false", "also fine-tune the output projection");

    def("train.log_every", "50", "steps between log rows");
    def("train.eval_every", "0", "steps between dev evaluations (0: end only)");
    def("train.checkpoint_every", "0", "steps between intermediate checkpoints (0: none)");
    def("train.mix", "mix_random", "mix_random | oversample_whisper | whisper_only | normal_only");

    def("vc.context", "4", "context frames on each side");
    def("vc.hidden_units", "256", "units per hidden layer");
    def("vc.radius", "10", "FastDTW radius for pairing");
    def("vc.kind", "adam", "optimizer");
    def("vc.lr", "0.001", "learning rate");
    def("vc.batch", "64", "frames per batch");
    def("vc.steps", "2000", "optimizer steps");

    def("probe.r", "1", "suppression scaling factor");
    def("probe.lr", "0.1", "ascent learning rate");
    def("probe.steps", "200", "ascent steps");
    def("probe.batch", "8", "utterances per step");

    def("lm.units", "64", "GRU units");
    def("lm.layers", "1", "GRU layers");
    def("lm.kind", "adam", "optimizer");
    def("lm.lr", "0.01", "learning rate");
    def("lm.batch", "8", "sentences per batch");
    def("lm.steps", "500", "optimizer steps");

    def("decode.beam_width", "8", "prefix beam width (1 with lm_mode none means greedy)");
    def("decode.lm_mode", "rescore", "none | rescore | fusion (rescore/fusion without --lm decode plainly)");
    def("decode.lm_weight", "0.3", "LM weight beta");
    def("decode.length_bonus", "0", "per-label bonus gamma");

    def("split.train", "400", "training sentences");
    def("split.dev", "25", "development sentences");
    def("split.test", "25", "test sentences");

    def("synth.sentences", "240", "toy sentences (each rendered normal and whispered)");
    def("synth.min_symbols", "3", "shortest toy sentence");
    def("synth.max_symbols", "8", "longest toy sentence");
  }

  std::map<std::string, Entry> entries_;
};

// ---------------------------------------------------------------------------
// Typed views

inline FeatureConfig feature_config(const ExperimentConfig& c) {
  FeatureConfig f;
  f.sample_rate_hz = c.integer("feat.sample_rate_hz");
  f.n_fft = c.integer("feat.n_fft");
  f.win_ms = c.real("feat.win_ms");
  f.hop_ms = c.real("feat.hop_ms");
  f.n_mels = c.integer("feat.n_mels");
  f.fmin_hz = c.real("feat.fmin_hz");
  f.fmax_hz = c.real("feat.fmax_hz");
  f.add_delta = c.flag("feat.add_delta");
  f.delta_window = c.integer("feat.delta_window");
  f.validate();
  return f;
}

inline std::optional<MaskPolicy> mask_policy(const ExperimentConfig& c) {
  if (!c.flag("aug.enabled")) return std::nullopt;
  MaskPolicy p;
  p.F1 = c.integer("aug.F1");
  p.F2 = c.integer("aug.F2");
  p.n_freq_masks = c.integer("aug.n_freq_masks");
  p.origin_dist = parse_origin_dist(c.str("aug.origin"));
  p.geo_rho = c.real("aug.geo_rho");
  p.time_mask_T = c.integer("aug.time_mask_T");
  p.n_time_masks = c.integer("aug.n_time_masks");
  p.validate(static_cast<std::size_t>(c.integer("feat.n_mels")));
  return p;
}

inline EncoderConfig encoder_config(const ExperimentConfig& c, std::size_t vocab_size, std::uint64_t seed) {
  EncoderConfig e;
  e.extractor = parse_extractor(c.str("enc.extractor"));
  e.n_mels = static_cast<std::size_t>(c.integer("feat.n_mels"));
  e.in_channels = c.flag("feat.add_delta") ? 2 : 1;
  e.conv_channels = c.pair("enc.channels");
  e.low_channels = c.pair("enc.low_channels");
  e.high_channels = c.pair("enc.high_channels");
  e.recurrent = parse_recurrent(c.str("enc.recurrent"));
  e.n_layers = c.count("enc.layers");
  e.units = c.count("enc.units");
  e.vocab_size = vocab_size;
  e.seed = seed;
  e.validate();
  return e;
}

/// Optimizer settings under `prefix` ("opt", "ft", "vc" or "lm").
inline OptimizerConfig optimizer_config(const ExperimentConfig& c, const std::string& prefix, std::uint64_t seed) {
  OptimizerConfig o;
  o.kind = parse_optimizer(c.str(prefix + ".kind"));
  o.learning_rate = c.real(prefix + ".lr");
  if (c.has(prefix + ".momentum")) o.momentum = c.real(prefix + ".momentum");
  if (c.has(prefix + ".clip")) o.grad_clip_norm = c.real(prefix + ".clip");
  o.batch_size = c.count(prefix + ".batch");
  o.max_steps = c.count(prefix + ".steps");
  o.seed = seed;
  o.validate();
  return o;
}

inline TransferPlan transfer_plan(const ExperimentConfig& c) {
  TransferPlan p;
  p.finetune_bottom_k = c.count("plan.bottom_k");
  p.include_extractor = c.flag("plan.include_extractor");
  p.include_output_layer = c.flag("plan.include_output_layer");
  return p;
}

inline VcConfig vc_config(const ExperimentConfig& c, std::uint64_t seed) {
  VcConfig v;
  v.context_frames = c.count("vc.context");
  v.hidden_units = c.count("vc.hidden_units");
  v.radius = c.count("vc.radius");
  v.seed = seed;
  v.validate();
  return v;
}

inline ProbeConfig probe_config(const ExperimentConfig& c, std::uint64_t seed) {
  ProbeConfig p;
  p.r = c.real("probe.r");
  p.learning_rate = c.real("probe.lr");
  p.n_steps = c.count("probe.steps");
  p.batch_size = c.count("probe.batch");
  p.seed = seed;
  p.validate();
  return p;
}

inline LmConfig lm_config(const ExperimentConfig& c, std::size_t n_symbols, std::uint64_t seed) {
  LmConfig l;
  l.n_symbols = n_symbols;
  l.units = c.count("lm.units");
  l.layers = c.count("lm.layers");
  l.seed = seed;
  return l;
}

}  // namespace whispr
