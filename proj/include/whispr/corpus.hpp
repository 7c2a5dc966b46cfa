// whispr/corpus.hpp
//
// Utterance manifests (JSONL), sentence-level partitioning, training-mix
// construction and the synthetic parallel normal/whisper toy corpus.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "whispr/common.hpp"
#include "whispr/features.hpp"

namespace whispr {

enum class Style { normal, whisper, pseudo_whisper };

inline std::string to_string(Style s) {
  switch (s) {
    case Style::normal: return "normal";
    case Style::whisper: return "whisper";
    case Style::pseudo_whisper: return "pseudo_whisper";
  }
  return "normal";
}

inline Style parse_style(const std::string& s) {
  if (s == "normal") return Style::normal;
  if (s == "whisper") return Style::whisper;
  if (s == "pseudo_whisper") return Style::pseudo_whisper;
  throw ConfigError("unknown style tag: " + s);
}

struct UtteranceRecord {
  std::string id;
  std::string source;  // WAV or WFE1 path
  std::vector<std::string> transcript;
  std::string speaker;
  Style style = Style::normal;
  std::string sentence_id;

  bool operator==(const UtteranceRecord&) const = default;
};

struct Manifest {
  std::vector<UtteranceRecord> records;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }

  void validate() const {
    std::unordered_set<std::string> seen;
    for (const auto& r : records) {
      if (!seen.insert(r.id).second) throw RuntimeError("manifest: duplicate id " + r.id);
      if (r.transcript.empty()) throw RuntimeError("manifest: empty transcript for " + r.id);
    }
  }
};

inline Manifest concat(const std::vector<Manifest>& parts) {
  Manifest out;
  for (const auto& m : parts) out.records.insert(out.records.end(), m.records.begin(), m.records.end());
  return out;
}

// ---------------------------------------------------------------------------
// JSONL manifest files. Sources are stored relative to the manifest's folder.

inline std::filesystem::path absolute_normal(const std::filesystem::path& p) {
  return std::filesystem::absolute(p).lexically_normal();
}

inline void save_manifest(const std::filesystem::path& path, const Manifest& m) {
  m.validate();
  const auto dir = absolute_normal(path).parent_path();
  auto out = io::open_out(path);
  for (const auto& r : m.records) {
    const auto rel = absolute_normal(r.source).lexically_relative(dir);
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["source"] = rel.generic_string();
    j["transcript"] = r.transcript;
    j["speaker"] = r.speaker;
    j["style"] = to_string(r.style);
    j["sentence_id"] = r.sentence_id;
    out << j.dump() << '\n';
  }
}

inline Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw RuntimeError("cannot open manifest: " + path.string());
  const auto dir = absolute_normal(path).parent_path();
  Manifest m;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      UtteranceRecord r;
      r.id = j.at("id").get<std::string>();
      std::filesystem::path src = j.at("source").get<std::string>();
      r.source = (src.is_absolute() ? src : (dir / src)).lexically_normal().string();
      r.transcript = j.at("transcript").get<std::vector<std::string>>();
      r.speaker = j.value("speaker", "");
      r.style = parse_style(j.at("style").get<std::string>());
      r.sentence_id = j.at("sentence_id").get<std::string>();
      m.records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw RuntimeError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  m.validate();
  return m;
}

/// Features for a record: WAV sources run through the front-end, others are WFE1.
inline FeatureMatrix load_record_features(const UtteranceRecord& r, const FeatureConfig& cfg) {
  const std::filesystem::path p(r.source);
  if (p.extension() == ".wav") return extract_features(read_wav(p, cfg.sample_rate_hz), cfg);
  return read_features(p);
}

// ---------------------------------------------------------------------------
// Partitioning

struct SplitSpec {
  std::size_t n_train = 400;
  std::size_t n_dev = 25;
  std::size_t n_test = 25;
  std::uint64_t seed = 0;
};

struct Partition {
  Manifest train, dev, test;
};

/// Whole sentences (all renditions) go to exactly one split.
inline Partition partition_by_sentence(const Manifest& m, const SplitSpec& s) {
  std::set<std::string> distinct;
  for (const auto& r : m.records) distinct.insert(r.sentence_id);
  const std::size_t want = s.n_train + s.n_dev + s.n_test;
  if (distinct.size() != want) {
    throw ConfigError("partition: manifest has " + std::to_string(distinct.size()) +
                      " distinct sentence ids, split asks for " + std::to_string(want));
  }
  std::vector<std::string> ids(distinct.begin(), distinct.end());
  Rng rng(s.seed);
  rng.shuffle(ids);
  std::map<std::string, int> split_of;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    split_of[ids[i]] = i < s.n_train ? 0 : (i < s.n_train + s.n_dev ? 1 : 2);
  }
  Partition p;
  for (const auto& r : m.records) {
    switch (split_of[r.sentence_id]) {
      case 0: p.train.records.push_back(r); break;
      case 1: p.dev.records.push_back(r); break;
      default: p.test.records.push_back(r); break;
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// Training mixes

enum class MixStrategy { mix_random, oversample_whisper, whisper_only, normal_only };

inline MixStrategy parse_mix_strategy(const std::string& s) {
  if (s == "mix_random") return MixStrategy::mix_random;
  if (s == "oversample_whisper") return MixStrategy::oversample_whisper;
  if (s == "whisper_only") return MixStrategy::whisper_only;
  if (s == "normal_only") return MixStrategy::normal_only;
  throw ConfigError("unknown mix strategy: " + s);
}

struct MixResult {
  Manifest manifest;
  std::vector<std::string> warnings;
};

inline MixResult build_training_mix(MixStrategy strategy, const std::vector<Manifest>& sources, std::uint64_t seed) {
  if (sources.empty()) throw ConfigError("build_training_mix: no source manifests");
  const Manifest all = concat(sources);
  MixResult res;
  Rng rng(seed);
  switch (strategy) {
    case MixStrategy::mix_random:
      res.manifest = all;
      rng.shuffle(res.manifest.records);
      break;
    case MixStrategy::oversample_whisper: {
      std::vector<UtteranceRecord> whisper, other;
      for (const auto& r : all.records) (r.style == Style::whisper ? whisper : other).push_back(r);
      if (whisper.empty()) throw RuntimeError("oversample_whisper: no whispered records to oversample");
      const std::size_t reps = std::max<std::size_t>(1, (other.size() + whisper.size() - 1) / whisper.size());
      res.manifest.records = other;
      for (std::size_t k = 0; k < reps; ++k) {
        for (auto r : whisper) {
          if (k > 0) r.id += "-rep" + std::to_string(k);
          res.manifest.records.push_back(std::move(r));
        }
      }
      rng.shuffle(res.manifest.records);
      break;
    }
    case MixStrategy::whisper_only:
    case MixStrategy::normal_only: {
      const Style keep = strategy == MixStrategy::whisper_only ? Style::whisper : Style::normal;
      for (const auto& r : all.records) {
        if (r.style == keep) res.manifest.records.push_back(r);
      }
      if (res.manifest.empty()) res.warnings.push_back("no records with style " + to_string(keep));
      break;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Synthetic toy corpus

/// Symbol rendered as a three-formant vowel.
struct FormantTemplate {
  std::string symbol;
  std::array<double, 3> formants_hz;
  std::array<double, 3> bandwidths_hz;
};

inline std::vector<FormantTemplate> default_toy_vocab() {
  return {
      {"a", {730, 1090, 2440}, {90, 110, 160}},
      {"e", {530, 1840, 2480}, {90, 110, 160}},
      {"i", {270, 2290, 3010}, {90, 110, 160}},
      {"o", {570, 840, 2410}, {90, 110, 160}},
      {"u", {300, 870, 2240}, {90, 110, 160}},
  };
}

struct ToySpeaker {
  std::string name;
  double pitch_hz;
  double formant_scale;
};

inline const std::vector<ToySpeaker>& toy_speakers() {
  static const std::vector<ToySpeaker> speakers = {
      {"spk0", 100.0, 0.97}, {"spk1", 114.0, 1.00}, {"spk2", 128.0, 1.03}, {"spk3", 145.0, 0.99}};
  return speakers;
}

struct ToyCorpusOptions {
  int sample_rate_hz = 16000;
  double symbol_ms = 120.0;
  double crossfade_ms = 20.0;
  int min_symbols = 3;
  int max_symbols = 8;
  double whisper_formant_shift = 1.10;
  double whisper_gain_db = -12.0;
  double normal_rms = 0.1;
};

struct ToyCorpus {
  Manifest manifest;
  std::vector<AudioClip> clips;  // parallel to manifest.records
};

namespace detail {

/// Cascade of second-order digital resonators (unity DC gain each).
inline std::vector<double> formant_filter(std::span<const double> x, std::span<const double> formants,
                                          std::span<const double> bandwidths, double fs) {
  std::vector<double> y(x.begin(), x.end());
  for (std::size_t k = 0; k < formants.size(); ++k) {
    const double c = -std::exp(-2.0 * M_PI * bandwidths[k] / fs);
    const double b = 2.0 * std::exp(-M_PI * bandwidths[k] / fs) * std::cos(2.0 * M_PI * formants[k] / fs);
    const double a = 1.0 - b - c;
    double y1 = 0.0, y2 = 0.0;
    for (double& v : y) {
      const double out = a * v + b * y1 + c * y2;
      y2 = y1;
      y1 = out;
      v = out;
    }
  }
  return y;
}

inline void scale_to_rms(std::vector<double>& x, double rms) {
  double e = 0.0;
  for (double v : x) e += v * v;
  const double cur = std::sqrt(e / std::max<std::size_t>(1, x.size()));
  if (cur <= 0.0) return;
  for (double& v : x) v = std::clamp(v * rms / cur, -1.0, 1.0);
}

}  // namespace detail

/// Renders one symbol sequence; `whisper` switches to noise excitation,
/// raised formants and reduced level.
inline AudioClip render_toy_utterance(const std::vector<std::size_t>& symbols,
                                      const std::vector<FormantTemplate>& vocab, const ToySpeaker& speaker,
                                      bool whisper, Rng& rng, const ToyCorpusOptions& opt = {}) {
  const double fs = opt.sample_rate_hz;
  const auto seg = static_cast<std::size_t>(std::lround(opt.symbol_ms * fs / 1000.0));
  const auto fade = static_cast<std::size_t>(std::lround(opt.crossfade_ms * fs / 1000.0));
  const std::size_t total = symbols.size() * seg + fade;

  std::vector<double> excitation(total, 0.0);
  if (whisper) {
    for (double& e : excitation) e = rng.normal();
  } else {
    const auto period = static_cast<std::size_t>(std::lround(fs / speaker.pitch_hz));
    for (std::size_t n = 0; n < total; n += period) excitation[n] = 1.0;
  }

  std::vector<double> out(total, 0.0);
  const double shift = whisper ? opt.whisper_formant_shift : 1.0;
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    const auto& tpl = vocab.at(symbols[i]);
    std::array<double, 3> f{};
    for (std::size_t k = 0; k < 3; ++k) f[k] = std::min(tpl.formants_hz[k] * speaker.formant_scale * shift, 0.45 * fs);
    const std::size_t start = i * seg;
    const std::size_t len = seg + fade;
    const auto y = detail::formant_filter(std::span<const double>(excitation).subspan(start, len), f,
                                          tpl.bandwidths_hz, fs);
    for (std::size_t n = 0; n < len; ++n) {
      double env = 1.0;
      if (n < fade) env = static_cast<double>(n) / fade;
      if (n >= seg) env = static_cast<double>(len - n) / fade;
      out[start + n] += env * y[n];
    }
  }
  const double gain = whisper ? std::pow(10.0, opt.whisper_gain_db / 20.0) : 1.0;
  detail::scale_to_rms(out, opt.normal_rms * gain);
  return AudioClip{std::move(out), opt.sample_rate_hz};
}

/// Parallel normal/whisper renditions of `n_sentences` random sentences.
/// Record sources point at `<out_dir>/wav/<id>.wav`; nothing is written here.
inline ToyCorpus synth_toy_corpus(std::size_t n_sentences, const std::vector<FormantTemplate>& vocab,
                                  std::uint64_t seed, const std::filesystem::path& out_dir,
                                  const ToyCorpusOptions& opt = {}) {
  if (vocab.empty()) throw ConfigError("synth_toy_corpus: empty vocabulary");
  {
    std::set<std::string> names;
    for (const auto& v : vocab) {
      if (!names.insert(v.symbol).second) throw ConfigError("synth_toy_corpus: duplicate symbol " + v.symbol);
    }
  }
  Rng rng(seed);
  ToyCorpus corpus;
  const auto& speakers = toy_speakers();
  for (std::size_t s = 0; s < n_sentences; ++s) {
    const auto len = static_cast<std::size_t>(rng.uniform_int(opt.min_symbols, opt.max_symbols));
    std::vector<std::size_t> syms;
    while (syms.size() < len) {
      const auto k = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(vocab.size()) - 1));
      // Adjacent repeats would need a silent gap to be separable; the toy
      // sentences avoid them.
      if (vocab.size() > 1 && !syms.empty() && syms.back() == k) continue;
      syms.push_back(k);
    }
    const auto& spk = speakers[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(speakers.size()) - 1))];
    std::ostringstream sid;
    sid << "sent" << std::setw(4) << std::setfill('0') << s;
    std::vector<std::string> transcript;
    for (auto k : syms) transcript.push_back(vocab[k].symbol);

    for (bool whisper : {false, true}) {
      UtteranceRecord r;
      r.sentence_id = sid.str();
      r.id = sid.str() + (whisper ? "-w" : "-n");
      r.source = absolute_normal(out_dir / "wav" / (r.id + ".wav")).string();
      r.transcript = transcript;
      r.speaker = spk.name;
      r.style = whisper ? Style::whisper : Style::normal;
      corpus.clips.push_back(render_toy_utterance(syms, vocab, spk, whisper, rng, opt));
      corpus.manifest.records.push_back(std::move(r));
    }
  }
  return corpus;
}

inline void write_vocab_file(const std::filesystem::path& path, const std::vector<std::string>& symbols) {
  auto out = io::open_out(path);
  for (const auto& s : symbols) out << s << '\n';
}

/// Writes WAVs, `manifest.jsonl` and `vocab.txt` under out_dir.
inline void write_toy_corpus(const ToyCorpus& corpus, const std::vector<FormantTemplate>& vocab,
                             const std::filesystem::path& out_dir) {
  for (std::size_t i = 0; i < corpus.clips.size(); ++i) write_wav(corpus.manifest.records[i].source, corpus.clips[i]);
  save_manifest(out_dir / "manifest.jsonl", corpus.manifest);
  std::vector<std::string> symbols;
  for (const auto& v : vocab) symbols.push_back(v.symbol);
  write_vocab_file(out_dir / "vocab.txt", symbols);
}

}  // namespace whispr
