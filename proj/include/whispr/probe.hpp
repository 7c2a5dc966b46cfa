// whispr/probe.hpp
//
// Frequency-importance probe. A per-bin weight vector w is pushed through a
// softmax to give w_hat; each Mel bin f of the input is scaled by
// exp(-w_hat[f] / r) and w is moved uphill on the CTC loss of a frozen model.
// Bins the model depends on end up with the most mass.

#pragma once

#include <cmath>
#include <ostream>
#include <vector>

#include "whispr/ctc.hpp"
#include "whispr/encoder.hpp"
#include "whispr/trainer.hpp"

namespace whispr {

/// Scales static bin f, and its delta bin when present, by exp(-w_hat[f]/r).
inline FeatureMatrix suppress(const FeatureMatrix& fm, const std::vector<double>& w_hat, double r) {
  if (!(r > 0.0)) throw ConfigError("suppress: scaling factor r must be positive");
  if (w_hat.size() != fm.n_mels) {
    throw ConfigError("suppress: weight length " + std::to_string(w_hat.size()) + " != " + std::to_string(fm.n_mels) +
                      " Mel bins");
  }
  double sum = 0.0;
  for (double w : w_hat) {
    if (w < 0.0) throw ConfigError("suppress: weights must be non-negative");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw ConfigError("suppress: weights must sum to 1");
  FeatureMatrix out = fm;
  const std::size_t blocks = fm.dims() / fm.n_mels;
  for (std::size_t f = 0; f < fm.n_mels; ++f) {
    const double s = std::exp(-w_hat[f] / r);
    for (std::size_t b = 0; b < blocks; ++b) {
      for (std::size_t t = 0; t < fm.frames(); ++t) out.data(t, b * fm.n_mels + f) *= s;
    }
  }
  return out;
}

struct ProbeConfig {
  double r = 1.0;
  double learning_rate = 0.1;
  std::size_t n_steps = 200;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(r > 0.0)) throw ConfigError("probe: r must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("probe: learning_rate must be positive");
    if (batch_size < 1) throw ConfigError("probe: batch_size must be >= 1");
  }
};

struct ProbeObjective {
  double loss = 0.0;          // mean CTC loss over the utterances
  std::vector<double> grad;   // d loss / d w (pre-softmax)
};

/// Mean CTC loss of the frozen model on suppressed inputs and its gradient
/// with respect to the pre-softmax weights w.
inline ProbeObjective probe_objective(const Encoder& model, const std::vector<const Utterance*>& batch,
                                      const std::vector<double>& w, double r, std::size_t threads = 1) {
  const std::size_t nu = w.size();
  const std::vector<double> w_hat = softmax(w);
  std::vector<double> scale(nu);
  for (std::size_t f = 0; f < nu; ++f) scale[f] = std::exp(-w_hat[f] / r);

  std::vector<double> losses(batch.size());
  std::vector<std::vector<double>> g_hat(batch.size(), std::vector<double>(nu, 0.0));
  parallel_for(batch.size(), threads, [&](std::size_t k) {
    const auto& u = *batch[k];
    const FeatureMatrix x = suppress(u.features, w_hat, r);
    Encoder::Tape tape;
    const auto y = model.forward(x, &tape);
    const auto ctc = ctc_loss(y.log_probs, u.labels);
    GradBuffer scratch = make_grad_buffer(model.params());
    Matrix dx;
    model.backward(tape, ctc.grad, scratch, &dx);
    losses[k] = ctc.loss;
    const std::size_t blocks = u.features.dims() / nu;
    for (std::size_t f = 0; f < nu; ++f) {
      double acc = 0.0;
      for (std::size_t b = 0; b < blocks; ++b) {
        for (std::size_t t = 0; t < x.frames(); ++t) acc += dx(t, b * nu + f) * u.features.data(t, b * nu + f);
      }
      g_hat[k][f] = acc * (-scale[f] / r);
    }
  });

  ProbeObjective out;
  std::vector<double> g(nu, 0.0);
  for (std::size_t k = 0; k < batch.size(); ++k) {
    out.loss += losses[k];
    for (std::size_t f = 0; f < nu; ++f) g[f] += g_hat[k][f];
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  out.loss *= inv;
  double dot = 0.0;
  for (std::size_t f = 0; f < nu; ++f) {
    g[f] *= inv;
    dot += w_hat[f] * g[f];
  }
  out.grad.resize(nu);
  for (std::size_t f = 0; f < nu; ++f) out.grad[f] = w_hat[f] * (g[f] - dot);
  return out;
}

struct ProbeResult {
  std::vector<double> w_hat;
  std::vector<double> step_loss;  // batch loss before each update
};

/// Stochastic gradient ascent on w; the model must be entirely frozen.
inline ProbeResult fit_frequency_weights(const Encoder& model, const std::vector<Utterance>& data,
                                         const ProbeConfig& cfg, std::size_t threads = 1) {
  cfg.validate();
  if (!model.params().all_frozen()) throw ConfigError("probe: every model parameter must be frozen");
  if (data.empty()) throw RuntimeError("probe: no utterances");
  const std::size_t nu = model.config().n_mels;
  for (const auto& u : data) {
    if (u.features.n_mels != nu) throw RuntimeError("probe: utterance " + u.id + " has a different Mel bin count");
  }
  std::vector<double> w(nu, 0.0);
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::size_t cursor = order.size();
  ProbeResult res;
  for (std::size_t step = 0; step < cfg.n_steps; ++step) {
    std::vector<const Utterance*> batch;
    for (std::size_t b = 0; b < std::min(cfg.batch_size, data.size()); ++b) {
      if (cursor == order.size()) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng.shuffle(order);
        cursor = 0;
      }
      batch.push_back(&data[order[cursor++]]);
    }
    const auto obj = probe_objective(model, batch, w, cfg.r, threads);
    res.step_loss.push_back(obj.loss);
    for (std::size_t f = 0; f < nu; ++f) w[f] += cfg.learning_rate * obj.grad[f];
  }
  res.w_hat = softmax(w);
  return res;
}

inline void write_weights_csv(std::ostream& os, const std::vector<double>& w_hat) {
  os << "bin_index,weight\n";
  os.precision(17);
  for (std::size_t f = 0; f < w_hat.size(); ++f) os << f << ',' << w_hat[f] << '\n';
}

}  // namespace whispr
