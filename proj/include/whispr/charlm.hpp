// whispr/charlm.hpp
//
// Character-level GRU language model used for N-best rescoring and shallow
// fusion. Label ids coincide with the acoustic vocabulary: input id 0 is the
// begin-of-sentence marker, output id 0 is end-of-sentence.

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "whispr/ctc.hpp"
#include "whispr/layers.hpp"
#include "whispr/optim.hpp"
#include "whispr/params.hpp"

namespace whispr {

struct LmConfig {
  std::size_t n_symbols = 0;  // acoustic vocabulary size without blank
  std::size_t units = 64;
  std::size_t layers = 1;
  std::uint64_t seed = 0;
};

class CharLm : public LmScorer {
 public:
  explicit CharLm(const LmConfig& cfg) : cfg_(cfg) {
    if (cfg_.n_symbols < 1) throw ConfigError("char LM: empty symbol set");
    if (cfg_.units < 1 || cfg_.layers < 1) throw ConfigError("char LM: units and layers must be >= 1");
    Rng rng(cfg_.seed);
    std::size_t in = io_size();
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      cells_.push_back(add_cell(params_, "lm.l" + std::to_string(l), RecurrentKind::gru, in, cfg_.units,
                                static_cast<std::uint32_t>(l), rng));
      in = cfg_.units;
    }
    out_ = add_dense(params_, "lm.out", cfg_.units, io_size(), static_cast<std::uint32_t>(cfg_.layers), rng);
  }

  /// Rebuilds a model from checkpointed parameters, inferring its shape.
  static CharLm from_params(const ParamStore& ps) {
    LmConfig cfg;
    std::size_t layers = 0;
    while (ps.contains("lm.l" + std::to_string(layers) + ".wx")) ++layers;
    if (layers == 0 || !ps.contains("lm.out.w")) throw RuntimeError("checkpoint does not hold a character LM");
    cfg.layers = layers;
    cfg.units = ps[ps.index_of("lm.l0.wh")].shape[1];
    cfg.n_symbols = ps[ps.index_of("lm.out.w")].shape[0] - 1;
    CharLm lm(cfg);
    lm.params_.copy_values_from(ps);
    return lm;
  }

  const LmConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  std::size_t io_size() const { return cfg_.n_symbols + 1; }

  LmState initial_state() const override {
    LmState zero(cfg_.layers * cfg_.units, 0.0);
    return advance(zero, 0);
  }

  double score(const LmState& state, std::size_t label, LmState& next) const override {
    check_label(label);
    const double lp = next_log_probs(state)[label];
    next = advance(state, label);
    return lp;
  }

  double final_score(const LmState& state) const override { return next_log_probs(state)[0]; }

  /// log P(. | state) over output ids (0 = end of sentence).
  std::vector<double> next_log_probs(const LmState& state) const {
    Matrix h(1, cfg_.units);
    const std::size_t off = (cfg_.layers - 1) * cfg_.units;
    for (std::size_t u = 0; u < cfg_.units; ++u) h(0, u) = state[off + u];
    Matrix z = dense_forward(params_, out_, h);
    log_softmax_inplace(z.row(0));
    return z.data();
  }

  /// Summed -log P over the sentence and its end marker; returns the number
  /// of predicted tokens via `n_tokens`.
  double sentence_nll(const LabelSequence& s, GradBuffer* grads, std::size_t* n_tokens = nullptr) const {
    for (auto k : s) check_label(k);
    const std::size_t T = s.size() + 1;
    Matrix x(T, io_size());
    for (std::size_t t = 0; t < T; ++t) x(t, t == 0 ? 0 : s[t - 1]) = 1.0;
    std::vector<Matrix> inputs{x};
    std::vector<CellCache> caches;
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      caches.push_back(cell_forward(params_, cells_[l], inputs.back(), false));
      inputs.push_back(caches.back().h);
    }
    Matrix z = dense_forward(params_, out_, inputs.back());
    double nll = 0.0;
    Matrix dz(T, io_size());
    for (std::size_t t = 0; t < T; ++t) {
      log_softmax_inplace(z.row(t));
      const std::size_t target = t < s.size() ? s[t] : 0;
      nll -= z(t, target);
      for (std::size_t k = 0; k < io_size(); ++k) dz(t, k) = std::exp(z(t, k)) - (k == target ? 1.0 : 0.0);
    }
    if (n_tokens) *n_tokens = T;
    if (grads) {
      Matrix dh;
      dense_backward(params_, out_, inputs.back(), dz, *grads, &dh);
      for (std::size_t l = cfg_.layers; l-- > 0;) {
        Matrix dx(inputs[l].rows(), inputs[l].cols());
        cell_backward(params_, cells_[l], inputs[l], false, caches[l], dh, *grads, l > 0 ? &dx : nullptr);
        dh = std::move(dx);
      }
    }
    return nll;
  }

  /// exp(mean per-token cross-entropy), end markers included.
  double perplexity(const std::vector<LabelSequence>& corpus) const {
    double nll = 0.0;
    std::size_t n = 0;
    for (const auto& s : corpus) {
      std::size_t k = 0;
      nll += sentence_nll(s, nullptr, &k);
      n += k;
    }
    return std::exp(nll / static_cast<double>(std::max<std::size_t>(n, 1)));
  }

 private:
  void check_label(std::size_t label) const {
    if (label < 1 || label > cfg_.n_symbols) {
      throw RuntimeError("char LM: symbol id " + std::to_string(label) + " not in the LM vocabulary");
    }
  }

  LmState advance(const LmState& state, std::size_t input_id) const {
    LmState next(state.size());
    Matrix x(1, io_size());
    x(0, input_id) = 1.0;
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      std::vector<double> h0(state.begin() + l * cfg_.units, state.begin() + (l + 1) * cfg_.units);
      auto cc = cell_forward(params_, cells_[l], x, false, &h0);
      for (std::size_t u = 0; u < cfg_.units; ++u) next[l * cfg_.units + u] = cc.h(0, u);
      x = cc.h;
    }
    return next;
  }

  LmConfig cfg_;
  ParamStore params_;
  std::vector<CellHandle> cells_;
  DenseHandle out_;
};

struct LmTrainResult {
  std::vector<double> step_loss;  // mean per-token NLL of each batch
};

/// Minimizes per-token cross-entropy with the shared optimizer machinery.
inline LmTrainResult lm_train(CharLm& lm, const std::vector<LabelSequence>& corpus, const OptimizerConfig& opt_cfg) {
  if (corpus.empty()) throw RuntimeError("lm_train: empty training corpus");
  Optimizer opt(opt_cfg, lm.params());
  Rng rng(opt_cfg.seed);
  std::vector<std::size_t> order(corpus.size());
  std::size_t cursor = order.size();
  LmTrainResult res;
  for (std::size_t step = 0; step < opt_cfg.max_steps; ++step) {
    GradBuffer g = make_grad_buffer(lm.params());
    double nll = 0.0;
    std::size_t tokens = 0;
    for (std::size_t b = 0; b < opt_cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng.shuffle(order);
        cursor = 0;
      }
      std::size_t n = 0;
      nll += lm.sentence_nll(corpus[order[cursor++]], &g, &n);
      tokens += n;
    }
    load_grads(lm.params(), g, 1.0 / static_cast<double>(tokens));
    opt.step(lm.params());
    res.step_loss.push_back(nll / static_cast<double>(tokens));
  }
  return res;
}

}  // namespace whispr
