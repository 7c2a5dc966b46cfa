// whispr/pseudo.hpp
//
// Pseudo-whisper generation: exact and multiresolution DTW alignment of
// parallel feature pairs, a frame-regression voice-conversion network and bulk
// conversion of a normal-speech manifest.

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "whispr/corpus.hpp"
#include "whispr/features.hpp"
#include "whispr/layers.hpp"
#include "whispr/optim.hpp"
#include "whispr/params.hpp"
#include "whispr/trainer.hpp"

namespace whispr {

struct AlignmentPath {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  double cost = 0.0;
};

/// Inclusive column range [lo, hi] allowed in each row of the cost matrix.
struct DtwWindow {
  std::vector<std::size_t> lo, hi;

  static DtwWindow full(std::size_t n, std::size_t m) {
    return {std::vector<std::size_t>(n, 0), std::vector<std::size_t>(n, m - 1)};
  }
};

inline double frame_distance(const Matrix& a, std::size_t i, const Matrix& b, std::size_t j) {
  double s = 0.0;
  for (std::size_t d = 0; d < a.cols(); ++d) {
    const double e = a(i, d) - b(j, d);
    s += e * e;
  }
  return std::sqrt(s);
}

namespace detail {

inline void check_pair(const Matrix& a, const Matrix& b) {
  if (a.rows() == 0 || b.rows() == 0) throw RuntimeError("dtw: empty input sequence");
  if (a.cols() != b.cols()) throw RuntimeError("dtw: frame widths differ");
}

}  // namespace detail

/// DTW restricted to `win`. Steps (1,0), (0,1), (1,1); backtrace ties prefer
/// the diagonal, then (1,0).
inline AlignmentPath dtw_windowed(const Matrix& a, const Matrix& b, const DtwWindow& win) {
  detail::check_pair(a, b);
  const std::size_t n = a.rows(), m = b.rows();
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> D(n);
  for (std::size_t i = 0; i < n; ++i) D[i].assign(win.hi[i] - win.lo[i] + 1, inf);
  auto at = [&](std::size_t i, std::size_t j) -> double {
    if (j < win.lo[i] || j > win.hi[i]) return inf;
    return D[i][j - win.lo[i]];
  };
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = win.lo[i]; j <= win.hi[i]; ++j) {
      const double c = frame_distance(a, i, b, j);
      double best;
      if (i == 0 && j == 0) {
        best = 0.0;
      } else {
        best = inf;
        if (i > 0 && j > 0) best = std::min(best, at(i - 1, j - 1));
        if (i > 0) best = std::min(best, at(i - 1, j));
        if (j > 0) best = std::min(best, at(i, j - 1));
      }
      D[i][j - win.lo[i]] = best + c;
    }
  }
  AlignmentPath p;
  p.cost = at(n - 1, m - 1);
  if (!std::isfinite(p.cost)) throw RuntimeError("dtw: window does not connect the corners");
  std::size_t i = n - 1, j = m - 1;
  p.pairs.emplace_back(i, j);
  while (i > 0 || j > 0) {
    const double dg = (i > 0 && j > 0) ? at(i - 1, j - 1) : inf;
    const double up = i > 0 ? at(i - 1, j) : inf;
    const double lf = j > 0 ? at(i, j - 1) : inf;
    if (dg <= up && dg <= lf) {
      --i;
      --j;
    } else if (up <= lf) {
      --i;
    } else {
      --j;
    }
    p.pairs.emplace_back(i, j);
  }
  std::reverse(p.pairs.begin(), p.pairs.end());
  return p;
}

inline AlignmentPath dtw_align(const Matrix& a, const Matrix& b) {
  detail::check_pair(a, b);
  return dtw_windowed(a, b, DtwWindow::full(a.rows(), b.rows()));
}

inline AlignmentPath dtw_align(const FeatureMatrix& a, const FeatureMatrix& b) { return dtw_align(a.data, b.data); }

inline constexpr std::size_t kFastDtwMinSize = 16;

namespace detail {

/// Averages consecutive frame pairs; an odd last frame is kept.
inline Matrix halve(const Matrix& x) {
  Matrix out((x.rows() + 1) / 2, x.cols());
  for (std::size_t i = 0; i < out.rows(); ++i) {
    const std::size_t a = 2 * i, b = std::min(2 * i + 1, x.rows() - 1);
    for (std::size_t d = 0; d < x.cols(); ++d) out(i, d) = 0.5 * (x(a, d) + x(b, d));
  }
  return out;
}

/// Projects a coarse path to full resolution and widens it by `radius`.
inline DtwWindow expand_window(const AlignmentPath& coarse, std::size_t n, std::size_t m, std::size_t radius) {
  DtwWindow w;
  w.lo.assign(n, m);
  w.hi.assign(n, 0);
  auto mark = [&](std::size_t I, std::size_t J) {
    const std::size_t r0 = I >= radius ? I - radius : 0, r1 = std::min(n - 1, I + radius);
    const std::size_t c0 = J >= radius ? J - radius : 0, c1 = std::min(m - 1, J + radius);
    for (std::size_t r = r0; r <= r1; ++r) {
      w.lo[r] = std::min(w.lo[r], c0);
      w.hi[r] = std::max(w.hi[r], c1);
    }
  };
  for (auto [i, j] : coarse.pairs) {
    for (std::size_t di = 0; di < 2; ++di) {
      for (std::size_t dj = 0; dj < 2; ++dj) {
        const std::size_t I = 2 * i + di, J = 2 * j + dj;
        if (I < n && J < m) mark(I, J);
      }
    }
  }
  return w;
}

}  // namespace detail

/// Multiresolution approximation: coarsen by 2, align recursively, refine
/// inside the projected path widened by `radius`.
inline AlignmentPath fastdtw_align(const Matrix& a, const Matrix& b, std::size_t radius) {
  detail::check_pair(a, b);
  const std::size_t min_size = std::max(kFastDtwMinSize, radius + 2);
  if (a.rows() <= min_size || b.rows() <= min_size) return dtw_align(a, b);
  const auto coarse = fastdtw_align(detail::halve(a), detail::halve(b), radius);
  return dtw_windowed(a, b, detail::expand_window(coarse, a.rows(), b.rows(), radius));
}

inline AlignmentPath fastdtw_align(const FeatureMatrix& a, const FeatureMatrix& b, std::size_t radius) {
  return fastdtw_align(a.data, b.data, radius);
}

/// Boundary, monotonicity and unit-step continuity.
inline bool is_valid_path(const AlignmentPath& p, std::size_t n, std::size_t m) {
  if (p.pairs.empty() || p.pairs.front() != std::pair<std::size_t, std::size_t>{0, 0}) return false;
  if (p.pairs.back() != std::pair<std::size_t, std::size_t>{n - 1, m - 1}) return false;
  for (std::size_t k = 1; k < p.pairs.size(); ++k) {
    const auto di = p.pairs[k].first - p.pairs[k - 1].first;
    const auto dj = p.pairs[k].second - p.pairs[k - 1].second;
    if (p.pairs[k].first < p.pairs[k - 1].first || p.pairs[k].second < p.pairs[k - 1].second) return false;
    if (di > 1 || dj > 1 || (di == 0 && dj == 0)) return false;
  }
  return true;
}

inline double path_cost(const Matrix& a, const Matrix& b, const AlignmentPath& p) {
  double c = 0.0;
  for (auto [i, j] : p.pairs) c += frame_distance(a, i, b, j);
  return c;
}

// ---------------------------------------------------------------------------
// Voice conversion network

struct VcConfig {
  std::size_t context_frames = 4;
  std::size_t hidden_layers = 4;
  std::size_t hidden_units = 256;
  std::size_t radius = 10;  // FastDTW radius used when pairing utterances
  std::uint64_t seed = 0;

  void validate() const {
    if (hidden_layers != 4) throw ConfigError("vc: hidden_layers must be 4");
    if (hidden_units < 1) throw ConfigError("vc: hidden_units must be >= 1");
  }
};

/// Rows of (2c+1)*D stacked context, frame t-c..t+c with replicate padding.
inline Matrix stack_context(const Matrix& x, std::size_t c) {
  const std::size_t T = x.rows(), D = x.cols(), W = 2 * c + 1;
  Matrix out(T, W * D);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t k = 0; k < W; ++k) {
      const auto src = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(t + k) - static_cast<std::ptrdiff_t>(c),
                                                  0, static_cast<std::ptrdiff_t>(T) - 1);
      for (std::size_t d = 0; d < D; ++d) out(t, k * D + d) = x(static_cast<std::size_t>(src), d);
    }
  }
  return out;
}

class VcNet {
 public:
  VcNet(const VcConfig& cfg, std::size_t dims) : cfg_(cfg), dims_(dims) {
    cfg_.validate();
    if (dims_ < 1) throw ConfigError("vc: feature width must be >= 1");
    Rng rng(cfg_.seed);
    std::size_t in = input_width();
    for (std::size_t l = 0; l < cfg_.hidden_layers; ++l) {
      layers_.push_back(add_dense(ps_, "vc.h" + std::to_string(l), in, cfg_.hidden_units, static_cast<std::uint32_t>(l), rng));
      in = cfg_.hidden_units;
    }
    layers_.push_back(add_dense(ps_, "vc.out", in, dims_, static_cast<std::uint32_t>(cfg_.hidden_layers), rng));
  }

  static VcNet from_params(const ParamStore& ps, std::size_t context_frames) {
    if (!ps.contains("vc.h0.w") || !ps.contains("vc.out.w")) throw RuntimeError("checkpoint does not hold a VC model");
    VcConfig cfg;
    cfg.context_frames = context_frames;
    cfg.hidden_units = ps[ps.index_of("vc.h0.w")].shape[0];
    const std::size_t dims = ps[ps.index_of("vc.out.w")].shape[0];
    if (ps[ps.index_of("vc.h0.w")].shape[1] != (2 * context_frames + 1) * dims) {
      throw RuntimeError("VC checkpoint input width does not match context " + std::to_string(context_frames));
    }
    VcNet net(cfg, dims);
    net.ps_.copy_values_from(ps);
    return net;
  }

  const VcConfig& config() const { return cfg_; }
  std::size_t dims() const { return dims_; }
  std::size_t input_width() const { return (2 * cfg_.context_frames + 1) * dims_; }
  ParamStore& params() { return ps_; }
  const ParamStore& params() const { return ps_; }

  /// Activations of every layer; acts[0] is the input.
  std::vector<Matrix> forward_all(const Matrix& x) const {
    if (x.cols() != input_width()) {
      throw RuntimeError("vc: input width " + std::to_string(x.cols()) + " != " + std::to_string(input_width()));
    }
    std::vector<Matrix> acts{x};
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      Matrix y = dense_forward(ps_, layers_[l], acts.back());
      if (l + 1 < layers_.size()) {
        for (auto& v : y.data()) v = std::max(v, 0.0);
      }
      acts.push_back(std::move(y));
    }
    return acts;
  }

  Matrix forward(const Matrix& x) const { return forward_all(x).back(); }

  /// Mean squared error over all elements; adds d(mse)/dparams to `grads`.
  double mse(const Matrix& x, const Matrix& target, GradBuffer* grads) const {
    auto acts = forward_all(x);
    const Matrix& y = acts.back();
    if (y.rows() != target.rows() || y.cols() != target.cols()) throw RuntimeError("vc: target shape mismatch");
    const double n = static_cast<double>(y.rows() * y.cols());
    double loss = 0.0;
    Matrix dy(y.rows(), y.cols());
    for (std::size_t k = 0; k < y.data().size(); ++k) {
      const double e = y.data()[k] - target.data()[k];
      loss += e * e;
      dy.data()[k] = 2.0 * e / n;
    }
    if (grads) {
      for (std::size_t l = layers_.size(); l-- > 0;) {
        Matrix dx;
        dense_backward(ps_, layers_[l], acts[l], dy, *grads, l > 0 ? &dx : nullptr);
        if (l > 0) {
          for (std::size_t k = 0; k < dx.data().size(); ++k) {
            if (acts[l].data()[k] <= 0.0) dx.data()[k] = 0.0;
          }
        }
        dy = std::move(dx);
      }
    }
    return loss / n;
  }

 private:
  VcConfig cfg_;
  std::size_t dims_;
  ParamStore ps_;
  std::vector<DenseHandle> layers_;
};

/// Frame-level regression examples.
struct VcDataset {
  Matrix inputs;   // N x (2c+1)D
  Matrix targets;  // N x D
};

/// One example per path pair: context around source frame i -> target frame j.
inline VcDataset make_vc_pairs(const Matrix& src, const Matrix& tgt, const AlignmentPath& path, std::size_t context) {
  const Matrix ctx = stack_context(src, context);
  VcDataset ds{Matrix(path.pairs.size(), ctx.cols()), Matrix(path.pairs.size(), tgt.cols())};
  for (std::size_t k = 0; k < path.pairs.size(); ++k) {
    const auto [i, j] = path.pairs[k];
    for (std::size_t d = 0; d < ctx.cols(); ++d) ds.inputs(k, d) = ctx(i, d);
    for (std::size_t d = 0; d < tgt.cols(); ++d) ds.targets(k, d) = tgt(j, d);
  }
  return ds;
}

inline VcDataset concat_datasets(const std::vector<VcDataset>& parts) {
  std::size_t n = 0;
  for (const auto& p : parts) n += p.inputs.rows();
  if (parts.empty()) return {};
  VcDataset out{Matrix(n, parts[0].inputs.cols()), Matrix(n, parts[0].targets.cols())};
  std::size_t r = 0;
  for (const auto& p : parts) {
    for (std::size_t k = 0; k < p.inputs.rows(); ++k, ++r) {
      std::copy(p.inputs.row(k).begin(), p.inputs.row(k).end(), out.inputs.row(r).begin());
      std::copy(p.targets.row(k).begin(), p.targets.row(k).end(), out.targets.row(r).begin());
    }
  }
  return out;
}

/// Pairs normal and whispered records of the same sentence and speaker, then
/// aligns their static blocks with FastDTW.
inline VcDataset build_parallel_dataset(const Manifest& m, const FeatureConfig& feat, const VcConfig& cfg,
                                        std::size_t* n_pairs = nullptr) {
  std::map<std::pair<std::string, std::string>, const UtteranceRecord*> whisper;
  for (const auto& r : m.records) {
    if (r.style == Style::whisper) whisper.emplace(std::pair{r.sentence_id, r.speaker}, &r);
  }
  std::vector<VcDataset> parts;
  for (const auto& r : m.records) {
    if (r.style != Style::normal) continue;
    auto it = whisper.find({r.sentence_id, r.speaker});
    if (it == whisper.end()) continue;
    const Matrix src = static_block(load_record_features(r, feat)).data;
    const Matrix tgt = static_block(load_record_features(*it->second, feat)).data;
    parts.push_back(make_vc_pairs(src, tgt, fastdtw_align(src, tgt, cfg.radius), cfg.context_frames));
  }
  if (n_pairs) *n_pairs = parts.size();
  if (parts.empty()) throw RuntimeError("vc: manifest holds no parallel normal/whisper pairs");
  return concat_datasets(parts);
}

struct VcTrainResult {
  std::vector<double> step_loss;
};

inline VcNet vc_train(const VcDataset& data, const VcConfig& cfg, const OptimizerConfig& opt_cfg,
                      VcTrainResult* result = nullptr) {
  const std::size_t N = data.inputs.rows();
  if (N == 0) throw RuntimeError("vc_train: empty pair set");
  const std::size_t c = cfg.context_frames;
  if (data.inputs.cols() % (2 * c + 1) != 0) throw RuntimeError("vc_train: input width does not match context");
  VcNet net(cfg, data.inputs.cols() / (2 * c + 1));
  if (data.targets.cols() != net.dims()) throw RuntimeError("vc_train: target width mismatch");
  Optimizer opt(opt_cfg, net.params());
  Rng rng(opt_cfg.seed);
  std::vector<std::size_t> order(N);
  std::size_t cursor = N;
  const std::size_t B = std::min(opt_cfg.batch_size, N);
  for (std::size_t step = 0; step < opt_cfg.max_steps; ++step) {
    Matrix x(B, data.inputs.cols()), y(B, data.targets.cols());
    for (std::size_t b = 0; b < B; ++b) {
      if (cursor == N) {
        for (std::size_t i = 0; i < N; ++i) order[i] = i;
        rng.shuffle(order);
        cursor = 0;
      }
      const std::size_t k = order[cursor++];
      std::copy(data.inputs.row(k).begin(), data.inputs.row(k).end(), x.row(b).begin());
      std::copy(data.targets.row(k).begin(), data.targets.row(k).end(), y.row(b).begin());
    }
    GradBuffer g = make_grad_buffer(net.params());
    const double loss = net.mse(x, y, &g);
    load_grads(net.params(), g);
    opt.step(net.params());
    if (result) result->step_loss.push_back(loss);
  }
  return net;
}

/// Converts every frame; output has the input's frame count and width.
inline Matrix vc_apply(const VcNet& net, const Matrix& x) {
  if (x.cols() != net.dims()) {
    throw RuntimeError("vc_apply: feature width " + std::to_string(x.cols()) + " != model width " +
                       std::to_string(net.dims()));
  }
  if (x.rows() == 0) return Matrix(0, x.cols());
  return net.forward(stack_context(x, net.config().context_frames));
}

inline FeatureMatrix vc_apply(const VcNet& net, const FeatureMatrix& fm) {
  FeatureMatrix out = fm;
  out.data = vc_apply(net, fm.data);
  return out;
}

/// Converted static block followed by deltas and normalization, as for real
/// features.
inline FeatureMatrix pseudo_features(const VcNet& net, const FeatureMatrix& normal, int delta_window = 2) {
  FeatureMatrix conv = vc_apply(net, static_block(normal));
  return normalize(add_delta(conv, delta_window));
}

/// One `<id>-pw` record per readable input; features go to out_dir/feats.
inline Manifest generate_pseudo_corpus(const VcNet& net, const Manifest& normal, const std::filesystem::path& out_dir,
                                       const FeatureConfig& feat, std::ostream* warn = nullptr,
                                       std::size_t threads = 1) {
  std::vector<std::optional<UtteranceRecord>> made(normal.size());
  std::vector<std::string> errors(normal.size());
  parallel_for(normal.size(), threads, [&](std::size_t i) {
    const auto& r = normal.records[i];
    FeatureMatrix fm;
    try {
      fm = load_record_features(r, feat);
    } catch (const std::exception& e) {
      errors[i] = e.what();
      return;
    }
    UtteranceRecord out = r;
    out.id = r.id + "-pw";
    out.style = Style::pseudo_whisper;
    out.source = absolute_normal(out_dir / "feats" / (out.id + ".wfe")).string();
    write_features(out.source, pseudo_features(net, fm, feat.delta_window));
    made[i] = std::move(out);
  });
  Manifest m;
  for (std::size_t i = 0; i < made.size(); ++i) {
    if (made[i]) {
      m.records.push_back(std::move(*made[i]));
    } else if (warn) {
      *warn << "warning: skipping unreadable record " << normal.records[i].id << ": " << errors[i] << '\n';
    }
  }
  if (m.empty()) throw RuntimeError("gen-pseudo: every input record was skipped");
  m.validate();
  return m;
}

}  // namespace whispr
