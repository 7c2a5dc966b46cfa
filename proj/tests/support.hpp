// Shared helpers for the test binaries: random fixtures, a central
// finite-difference checker and scratch directories.
#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <boost/math/distributions/chi_squared.hpp>

#include "whispr/whispr.hpp"

namespace wt {

using namespace whispr;

inline Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (auto& v : m.data()) v = scale * (2.0 * rng.uniform() - 1.0);
  return m;
}

/// Rows are log-softmax of random logits.
inline Matrix random_log_probs(std::size_t T, std::size_t V, Rng& rng, double spread = 2.0) {
  Matrix m = random_matrix(T, V, rng, spread);
  for (std::size_t t = 0; t < T; ++t) log_softmax_inplace(m.row(t));
  return m;
}

inline FeatureMatrix random_features(std::size_t T, std::size_t nu, bool delta, Rng& rng) {
  FeatureMatrix fm;
  fm.n_mels = nu;
  fm.data = random_matrix(T, delta ? 2 * nu : nu, rng);
  return fm;
}

inline LabelSequence random_labels(std::size_t L, std::size_t V, Rng& rng) {
  LabelSequence l(L);
  for (auto& k : l) k = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(V) - 1));
  return l;
}

struct GradReport {
  std::size_t checked = 0;
  std::size_t failed = 0;
  double worst_rel = 0.0;
  std::string worst;

  bool ok() const { return checked > 0 && failed == 0; }
  std::string summary() const {
    std::ostringstream os;
    os << checked << " checked, " << failed << " failed, worst rel " << worst_rel << " at " << worst;
    return os.str();
  }
};

/// Compares one analytic derivative with a numeric one: relative 1e-3 when
/// the analytic value exceeds 1e-6 in magnitude, absolute 1e-6 otherwise.
inline void compare(GradReport& rep, double analytic, double numeric, const std::string& where, double rel_tol = 1e-3) {
  ++rep.checked;
  double err;
  bool bad;
  if (std::abs(analytic) > 1e-6) {
    err = std::abs(analytic - numeric) / std::max(std::abs(analytic), std::abs(numeric));
    bad = err > rel_tol;
  } else {
    err = std::abs(analytic - numeric);
    bad = err > 1e-6;
  }
  if (err > rep.worst_rel) {
    rep.worst_rel = err;
    rep.worst = where;
  }
  if (bad) ++rep.failed;
}

/// Central differences over every value of every non-frozen entry.
inline GradReport check_params(ParamStore& ps, const GradBuffer& analytic, const std::function<double()>& loss,
                               double h = 1e-5) {
  GradReport rep;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto& e = ps[i];
    if (e.frozen) continue;
    for (std::size_t k = 0; k < e.value.size(); ++k) {
      const double keep = e.value[k];
      e.value[k] = keep + h;
      const double up = loss();
      e.value[k] = keep - h;
      const double dn = loss();
      e.value[k] = keep;
      compare(rep, analytic[i][k], (up - dn) / (2.0 * h), e.name + "[" + std::to_string(k) + "]");
    }
  }
  return rep;
}

/// Central differences over a plain vector of inputs.
inline GradReport check_vector(std::vector<double>& x, const std::vector<double>& analytic,
                               const std::function<double()>& loss, const std::string& name, double h = 1e-5) {
  GradReport rep;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double keep = x[k];
    x[k] = keep + h;
    const double up = loss();
    x[k] = keep - h;
    const double dn = loss();
    x[k] = keep;
    compare(rep, analytic[k], (up - dn) / (2.0 * h), name + "[" + std::to_string(k) + "]");
  }
  return rep;
}

/// Upper-tail p-value of Pearson's chi-square statistic for observed counts
/// against expected probabilities (which must sum to 1).
inline double chi_square_p(const std::vector<std::size_t>& counts, const std::vector<double>& probs) {
  std::size_t n = 0;
  for (auto c : counts) n += c;
  double stat = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const double e = probs[i] * static_cast<double>(n);
    stat += (static_cast<double>(counts[i]) - e) * (static_cast<double>(counts[i]) - e) / e;
  }
  boost::math::chi_squared dist(static_cast<double>(counts.size() - 1));
  return boost::math::cdf(boost::math::complement(dist, stat));
}

/// Every frame path over V symbols of length T, as index vectors.
inline std::vector<std::vector<std::size_t>> all_paths(std::size_t T, std::size_t V) {
  std::vector<std::vector<std::size_t>> out;
  std::vector<std::size_t> p(T, 0);
  while (true) {
    out.push_back(p);
    std::size_t i = 0;
    while (i < T && ++p[i] == V) p[i++] = 0;
    if (i == T) break;
  }
  return out;
}

/// Probability of each labeling, summed over all frame paths that collapse
/// to it.
inline std::map<LabelSequence, double> labeling_probs(const Matrix& log_probs) {
  std::map<LabelSequence, double> probs;
  for (const auto& path : all_paths(log_probs.rows(), log_probs.cols())) {
    double lp = 0.0;
    for (std::size_t t = 0; t < path.size(); ++t) lp += log_probs(t, path[t]);
    probs[collapse(path)] += std::exp(lp);
  }
  return probs;
}

/// -ln P(labels | x) by explicit path enumeration.
inline double brute_force_ctc(const Matrix& log_probs, const LabelSequence& labels) {
  const auto probs = labeling_probs(log_probs);
  const auto it = probs.find(labels);
  return it == probs.end() ? std::numeric_limits<double>::infinity() : -std::log(it->second);
}

/// Fresh directory under the system temp dir, removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() / ("whispr_test_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// A small encoder config for tests: nu Mel bins, deltas, tiny channels.
inline EncoderConfig tiny_encoder(ExtractorKind ex, RecurrentKind rk, std::size_t nu = 8, std::size_t vocab = 4,
                                  std::size_t layers = 2, std::size_t units = 3, ChannelPair channels = {2, 4}) {
  EncoderConfig c;
  c.extractor = ex;
  c.n_mels = nu;
  c.in_channels = 2;
  c.conv_channels = channels;
  c.recurrent = rk;
  c.n_layers = layers;
  c.units = units;
  c.vocab_size = vocab;
  c.seed = 7;
  return c;
}

/// Randomizes every parameter (including biases) so that no gradient is
/// trivially zero.
inline void scramble(ParamStore& ps, std::uint64_t seed, double scale = 0.5) {
  Rng rng(seed);
  for (auto& e : ps.entries()) {
    for (auto& v : e.value) v = scale * (2.0 * rng.uniform() - 1.0);
  }
}

/// Utterances whose labels are written only into the upper half of the Mel
/// bins: symbol k lights bin nu/2 + (k-1) over its segment. The lower half
/// is label-independent Gaussian noise. Static features only.
inline std::vector<Utterance> high_band_task(std::size_t n, std::size_t nu, std::size_t vocab, std::uint64_t seed,
                                             double amplitude = 3.0) {
  Rng rng(seed);
  std::vector<Utterance> out;
  const std::size_t seg = 6, len = 3;
  for (std::size_t i = 0; i < n; ++i) {
    Utterance u;
    u.id = "hb" + std::to_string(i);
    u.labels = random_labels(len, vocab, rng);
    for (std::size_t j = 1; j < len; ++j) {
      while (u.labels[j] == u.labels[j - 1]) u.labels[j] = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(vocab) - 1));
    }
    u.features.n_mels = nu;
    u.features.data = Matrix(seg * len + 4, nu);
    for (std::size_t t = 0; t < u.features.frames(); ++t) {
      for (std::size_t f = 0; f < nu / 2; ++f) u.features.data(t, f) = rng.normal();
      for (std::size_t f = nu / 2; f < nu; ++f) u.features.data(t, f) = 0.1 * rng.normal();
    }
    for (std::size_t j = 0; j < len; ++j) {
      for (std::size_t t = 2 + j * seg + 1; t < 2 + (j + 1) * seg - 1; ++t) u.features.data(t, nu / 2 + u.labels[j] - 1) += amplitude;
    }
    out.push_back(std::move(u));
  }
  return out;
}

/// Toy-corpus utterances featurized in memory, split by style.
struct ToyUtterances {
  std::vector<Utterance> normal, whisper;
};

inline ToyUtterances toy_utterances(std::size_t n_sentences, std::size_t n_mels, std::uint64_t seed) {
  const auto vocab_t = default_toy_vocab();
  std::vector<std::string> names;
  for (const auto& v : vocab_t) names.push_back(v.symbol);
  const Vocabulary vocab(names);
  const auto corpus = synth_toy_corpus(n_sentences, vocab_t, seed, "/nonexistent");
  FeatureConfig fc;
  fc.n_mels = static_cast<int>(n_mels);
  ToyUtterances out;
  for (std::size_t i = 0; i < corpus.clips.size(); ++i) {
    const auto& r = corpus.manifest.records[i];
    Utterance u{r.id, extract_features(corpus.clips[i], fc), vocab.encode(r.transcript)};
    (r.style == Style::whisper ? out.whisper : out.normal).push_back(std::move(u));
  }
  return out;
}

}  // namespace wt
