// whispr/ctc.hpp
//
// Connectionist temporal classification: log-space forward-backward loss and
// gradient, best-path decoding, prefix beam search with optional shallow
// fusion, and N-best rescoring with an external language model.

#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "whispr/common.hpp"

namespace whispr {

/// Raised when the label sequence cannot be aligned to the available frames.
class InfeasibleAlignment : public RuntimeError {
 public:
  using RuntimeError::RuntimeError;
};

/// Non-blank symbol indices (blank is index 0 and never appears here).
using LabelSequence = std::vector<std::size_t>;

inline constexpr std::size_t kBlank = 0;

class Vocabulary {
 public:
  Vocabulary() : symbols_{"<blank>"} {}

  explicit Vocabulary(const std::vector<std::string>& symbols) : Vocabulary() {
    for (const auto& s : symbols) {
      if (s.empty() || s == "<blank>") throw ConfigError("vocabulary: invalid symbol '" + s + "'");
      if (!lookup_.emplace(s, symbols_.size()).second) throw ConfigError("vocabulary: duplicate symbol " + s);
      symbols_.push_back(s);
    }
  }

  /// One symbol per line; "#tokenizer=char|space" selects how text is split
  /// for scoring.
  static Vocabulary load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw RuntimeError("cannot open vocabulary: " + path.string());
    std::vector<std::string> syms;
    std::string tokenizer = "space";
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      if (line.rfind("#tokenizer=", 0) == 0) {
        tokenizer = line.substr(11);
        continue;
      }
      syms.push_back(line);
    }
    Vocabulary v(syms);
    v.tokenizer = tokenizer;
    return v;
  }

  std::size_t size() const { return symbols_.size(); }
  const std::string& symbol(std::size_t i) const { return symbols_.at(i); }
  const std::vector<std::string>& symbols() const { return symbols_; }

  std::size_t index(const std::string& s) const {
    auto it = lookup_.find(s);
    if (it == lookup_.end()) throw RuntimeError("symbol not in vocabulary: '" + s + "'");
    return it->second;
  }

  LabelSequence encode(const std::vector<std::string>& syms) const {
    LabelSequence out;
    for (const auto& s : syms) out.push_back(index(s));
    return out;
  }

  std::vector<std::string> decode(const LabelSequence& l) const {
    std::vector<std::string> out;
    for (auto i : l) out.push_back(symbol(i));
    return out;
  }

  std::string tokenizer = "space";

 private:
  std::vector<std::string> symbols_;
  std::map<std::string, std::size_t> lookup_;
};

inline std::string join(const std::vector<std::string>& parts, const std::string& sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

/// Frames needed to emit `l`: one per label plus a blank between repeats.
inline std::size_t min_frames_for(const LabelSequence& l) {
  std::size_t repeats = 0;
  for (std::size_t i = 1; i < l.size(); ++i) repeats += l[i] == l[i - 1];
  return l.size() + repeats;
}

struct CtcResult {
  double loss = 0.0;
  Matrix grad;  // dloss / dlog_probs, T' x V
};

/// Negative log-likelihood of `labels` under per-frame log-probabilities.
inline CtcResult ctc_loss(const Matrix& log_probs, const LabelSequence& labels) {
  const std::size_t T = log_probs.rows(), V = log_probs.cols();
  for (auto k : labels) {
    if (k == kBlank || k >= V) throw RuntimeError("ctc_loss: label index out of range or blank");
  }
  if (T == 0 || T < min_frames_for(labels)) {
    throw InfeasibleAlignment("infeasible alignment: " + std::to_string(labels.size()) + " labels need " +
                              std::to_string(min_frames_for(labels)) + " frames, have " + std::to_string(T));
  }
  const std::size_t S = 2 * labels.size() + 1;
  std::vector<std::size_t> ext(S, kBlank);
  for (std::size_t i = 0; i < labels.size(); ++i) ext[2 * i + 1] = labels[i];
  auto can_skip = [&](std::size_t s) { return s >= 2 && ext[s] != kBlank && ext[s] != ext[s - 2]; };

  Matrix alpha(T, S, kNegInf), beta(T, S, kNegInf);
  alpha(0, 0) = log_probs(0, ext[0]);
  if (S > 1) alpha(0, 1) = log_probs(0, ext[1]);
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      double a = alpha(t - 1, s);
      if (s >= 1) a = log_add(a, alpha(t - 1, s - 1));
      if (can_skip(s)) a = log_add(a, alpha(t - 1, s - 2));
      alpha(t, s) = a == kNegInf ? kNegInf : a + log_probs(t, ext[s]);
    }
  }
  beta(T - 1, S - 1) = 0.0;
  if (S > 1) beta(T - 1, S - 2) = 0.0;
  for (std::size_t t = T - 1; t-- > 0;) {
    for (std::size_t s = 0; s < S; ++s) {
      double b = beta(t + 1, s) + log_probs(t + 1, ext[s]);
      if (s + 1 < S) b = log_add(b, beta(t + 1, s + 1) + log_probs(t + 1, ext[s + 1]));
      if (s + 2 < S && can_skip(s + 2)) b = log_add(b, beta(t + 1, s + 2) + log_probs(t + 1, ext[s + 2]));
      beta(t, s) = b;
    }
  }
  double log_z = alpha(T - 1, S - 1);
  if (S > 1) log_z = log_add(log_z, alpha(T - 1, S - 2));

  CtcResult res;
  res.loss = -log_z;
  res.grad = Matrix(T, V);
  if (log_z == kNegInf) return res;
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      const double lg = alpha(t, s) + beta(t, s);
      if (lg != kNegInf) res.grad(t, ext[s]) -= std::exp(lg - log_z);
    }
  }
  return res;
}

/// Removes repeats, then blanks.
inline LabelSequence collapse(const std::vector<std::size_t>& path) {
  LabelSequence out;
  std::size_t prev = kBlank;
  for (auto k : path) {
    if (k != prev && k != kBlank) out.push_back(k);
    prev = k;
  }
  return out;
}

/// Best path: per-frame argmax (ties to the lowest index), then collapse.
inline LabelSequence greedy_decode(const Matrix& log_probs) {
  std::vector<std::size_t> path(log_probs.rows());
  for (std::size_t t = 0; t < log_probs.rows(); ++t) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < log_probs.cols(); ++k) {
      if (log_probs(t, k) > log_probs(t, best)) best = k;
    }
    path[t] = best;
  }
  return collapse(path);
}

// ---------------------------------------------------------------------------
// Language-model hooks

using LmState = std::vector<double>;

/// Scores acoustic-vocabulary labels (indices >= 1) left to right.
class LmScorer {
 public:
  virtual ~LmScorer() = default;
  virtual LmState initial_state() const = 0;
  /// log P(label | history in `state`); writes the continuation state.
  virtual double score(const LmState& state, std::size_t label, LmState& next) const = 0;
  /// log P(end of sentence | state).
  virtual double final_score(const LmState& state) const = 0;

  double sequence_score(const LabelSequence& labels) const {
    LmState s = initial_state(), n;
    double total = 0.0;
    for (auto k : labels) {
      total += score(s, k, n);
      s = std::move(n);
    }
    return total + final_score(s);
  }
};

struct Hypothesis {
  LabelSequence labels;
  double score = 0.0;      // fused
  double ctc_score = 0.0;  // log P_ctc(labels | x)
  double lm_score = 0.0;   // log P_lm(labels)
};

struct BeamOptions {
  std::size_t beam_width = 8;
  const LmScorer* lm = nullptr;  // in-beam shallow fusion when set
  double beta = 0.0;             // LM weight
  double gamma = 0.0;            // length bonus per label
};

inline double fused_score(double ctc, double lm, std::size_t len, double beta, double gamma) {
  return ctc + beta * lm + gamma * static_cast<double>(len);
}

/// CTC prefix beam search. Returns up to beam_width hypotheses, best first.
inline std::vector<Hypothesis> beam_decode(const Matrix& log_probs, const BeamOptions& opt) {
  if (opt.beam_width < 1) throw ConfigError("beam_decode: beam_width must be >= 1");
  struct Entry {
    double pb = kNegInf, pnb = kNegInf;
    double lm = 0.0;
    LmState state;
  };
  const bool use_lm = opt.lm != nullptr && opt.beta != 0.0;
  auto total = [](const Entry& e) { return log_add(e.pb, e.pnb); };
  auto fused = [&](const LabelSequence& p, const Entry& e) {
    return fused_score(total(e), e.lm, p.size(), opt.beta, opt.gamma);
  };

  std::vector<std::pair<LabelSequence, Entry>> beam;
  {
    Entry root;
    root.pb = 0.0;
    if (use_lm) root.state = opt.lm->initial_state();
    beam.emplace_back(LabelSequence{}, std::move(root));
  }
  const std::size_t V = log_probs.cols();
  for (std::size_t t = 0; t < log_probs.rows(); ++t) {
    std::map<LabelSequence, Entry> next;
    for (const auto& [prefix, e] : beam) {
      const double tot = total(e);
      auto [self_it, self_new] = next.try_emplace(prefix);
      Entry& self = self_it->second;
      if (self_new) {
        self.lm = e.lm;
        self.state = e.state;
      }
      self.pb = log_add(self.pb, tot + log_probs(t, kBlank));
      if (!prefix.empty()) {
        const std::size_t last = prefix.back();
        self.pnb = log_add(self.pnb, e.pnb + log_probs(t, last));
      }
      for (std::size_t k = 1; k < V; ++k) {
        LabelSequence np = prefix;
        np.push_back(k);
        auto [it, created] = next.try_emplace(std::move(np));
        Entry& child = it->second;
        if (created) {
          if (use_lm) {
            child.lm = e.lm + opt.lm->score(e.state, k, child.state);
          }
        }
        const double src = (!prefix.empty() && prefix.back() == k) ? e.pb : tot;
        child.pnb = log_add(child.pnb, src + log_probs(t, k));
      }
    }
    beam.clear();
    for (auto& kv : next) {
      if (total(kv.second) == kNegInf) continue;
      beam.emplace_back(kv.first, std::move(kv.second));
    }
    std::stable_sort(beam.begin(), beam.end(),
                     [&](const auto& a, const auto& b) { return fused(a.first, a.second) > fused(b.first, b.second); });
    if (beam.size() > opt.beam_width) beam.resize(opt.beam_width);
  }

  std::vector<Hypothesis> out;
  for (const auto& [prefix, e] : beam) {
    Hypothesis h;
    h.labels = prefix;
    h.ctc_score = total(e);
    h.lm_score = use_lm ? e.lm + opt.lm->final_score(e.state) : 0.0;
    h.score = fused_score(h.ctc_score, h.lm_score, prefix.size(), opt.beta, opt.gamma);
    out.push_back(std::move(h));
  }
  std::stable_sort(out.begin(), out.end(), [](const Hypothesis& a, const Hypothesis& b) { return a.score > b.score; });
  return out;
}

/// Re-ranks an N-best list (from beam_decode with beta = 0) by
/// ctc + beta * lm + gamma * length. The input list is not modified.
inline std::vector<Hypothesis> rescore_nbest(const std::vector<Hypothesis>& nbest, const LmScorer* lm, double beta,
                                             double gamma) {
  std::vector<Hypothesis> out = nbest;
  for (auto& h : out) {
    h.lm_score = (lm != nullptr) ? lm->sequence_score(h.labels) : 0.0;
    h.score = fused_score(h.ctc_score, h.lm_score, h.labels.size(), beta, gamma);
  }
  std::stable_sort(out.begin(), out.end(), [](const Hypothesis& a, const Hypothesis& b) { return a.score > b.score; });
  return out;
}

/// N-best TSV: id, rank, fused score, CTC score, LM score, hypothesis text.
inline void write_nbest_tsv(std::ostream& os, const std::string& utt_id, const std::vector<Hypothesis>& nbest,
                            const Vocabulary& vocab) {
  for (std::size_t r = 0; r < nbest.size(); ++r) {
    const auto& h = nbest[r];
    os << utt_id << '\t' << (r + 1) << '\t' << std::fixed << std::setprecision(6) << h.score << '\t' << h.ctc_score
       << '\t' << h.lm_score << '\t' << join(vocab.decode(h.labels)) << '\n';
  }
  os.unsetf(std::ios::floatfield);
}

}  // namespace whispr
