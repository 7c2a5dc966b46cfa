// whispr/optim.hpp
//
// First-order optimizers over a ParamStore: SGD, SGD with momentum and Adam,
// with optional global-norm gradient clipping. Frozen entries are never
// touched.

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "whispr/common.hpp"
#include "whispr/params.hpp"

namespace whispr {

enum class OptimizerKind { sgd, sgd_momentum, adam };

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "sgd_momentum") return OptimizerKind::sgd_momentum;
  if (s == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer: " + s);
}

inline std::string to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::sgd_momentum: return "sgd_momentum";
    case OptimizerKind::adam: return "adam";
  }
  return "sgd";
}

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double grad_clip_norm = 5.0;  // <= 0 disables clipping
  std::size_t batch_size = 8;
  std::size_t max_steps = 1000;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("optimizer: learning_rate must be positive");
    if (batch_size < 1) throw ConfigError("optimizer: batch_size must be >= 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("optimizer: betas in [0, 1)");
  }
};

struct StepReport {
  double grad_norm = 0.0;
  double clip_scale = 1.0;
};

class Optimizer {
 public:
  Optimizer(OptimizerConfig cfg, const ParamStore& ps) : cfg_(cfg) {
    cfg_.validate();
    m_.resize(ps.size());
    v_.resize(ps.size());
    for (std::size_t i = 0; i < ps.size(); ++i) {
      m_[i].assign(ps[i].size(), 0.0);
      if (cfg_.kind == OptimizerKind::adam) v_[i].assign(ps[i].size(), 0.0);
    }
  }

  const OptimizerConfig& config() const { return cfg_; }
  std::size_t steps_taken() const { return t_; }

  /// Applies one update from the gradients stored in `ps`.
  StepReport step(ParamStore& ps) {
    StepReport rep;
    double sq = 0.0;
    for (const auto& e : ps.entries()) {
      if (e.frozen) continue;
      for (std::size_t k = 0; k < e.grad.size(); ++k) {
        if (!std::isfinite(e.grad[k])) {
          throw RuntimeError("non-finite gradient in parameter '" + e.name + "' at element " + std::to_string(k));
        }
        sq += e.grad[k] * e.grad[k];
      }
    }
    rep.grad_norm = std::sqrt(sq);
    if (cfg_.grad_clip_norm > 0.0 && rep.grad_norm > cfg_.grad_clip_norm) {
      rep.clip_scale = cfg_.grad_clip_norm / rep.grad_norm;
    }
    ++t_;
    const double lr = cfg_.learning_rate;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < ps.size(); ++i) {
      auto& e = ps[i];
      if (e.frozen) continue;
      for (std::size_t k = 0; k < e.value.size(); ++k) {
        const double g = e.grad[k] * rep.clip_scale;
        switch (cfg_.kind) {
          case OptimizerKind::sgd:
            e.value[k] -= lr * g;
            break;
          case OptimizerKind::sgd_momentum:
            m_[i][k] = cfg_.momentum * m_[i][k] + g;
            e.value[k] -= lr * m_[i][k];
            break;
          case OptimizerKind::adam: {
            m_[i][k] = cfg_.beta1 * m_[i][k] + (1.0 - cfg_.beta1) * g;
            v_[i][k] = cfg_.beta2 * v_[i][k] + (1.0 - cfg_.beta2) * g * g;
            const double mh = m_[i][k] / bc1;
            const double vh = v_[i][k] / bc2;
            e.value[k] -= lr * mh / (std::sqrt(vh) + cfg_.epsilon);
            break;
          }
        }
      }
    }
    return rep;
  }

 private:
  OptimizerConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

/// Copies a reduced gradient buffer into the store's gradient slots.
inline void load_grads(ParamStore& ps, const GradBuffer& g, double scale = 1.0) {
  for (std::size_t i = 0; i < ps.size(); ++i) {
    for (std::size_t k = 0; k < g[i].size(); ++k) ps[i].grad[k] = scale * g[i][k];
  }
}

}  // namespace whispr
