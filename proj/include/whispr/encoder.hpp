// whispr/encoder.hpp
//
// CTC acoustic encoder: a VGG-style CNN extractor (standard, or split into
// low/high frequency halves), a stack of bidirectional LSTM/GRU layers and a
// log-softmax output projection, with exact analytic gradients.

#pragma once

#include <array>
#include <string>
#include <vector>

#include "whispr/common.hpp"
#include "whispr/features.hpp"
#include "whispr/layers.hpp"
#include "whispr/params.hpp"

namespace whispr {

enum class ExtractorKind { standard, freq_divided };

inline ExtractorKind parse_extractor(const std::string& s) {
  if (s == "standard") return ExtractorKind::standard;
  if (s == "freq_divided") return ExtractorKind::freq_divided;
  throw ConfigError("unknown extractor kind: " + s);
}
inline std::string to_string(ExtractorKind k) { return k == ExtractorKind::standard ? "standard" : "freq_divided"; }

inline RecurrentKind parse_recurrent(const std::string& s) {
  if (s == "lstm") return RecurrentKind::lstm;
  if (s == "gru") return RecurrentKind::gru;
  throw ConfigError("unknown recurrent kind: " + s);
}
inline std::string to_string(RecurrentKind k) { return k == RecurrentKind::lstm ? "lstm" : "gru"; }

/// ceil(ceil(n / 2) / 2): size after the two 2x pooling stages.
inline std::size_t pooled_size(std::size_t n) { return ((n + 1) / 2 + 1) / 2; }

using ChannelPair = std::array<std::size_t, 2>;

struct EncoderConfig {
  ExtractorKind extractor = ExtractorKind::standard;
  std::size_t n_mels = 80;
  std::size_t in_channels = 2;  // 2 when deltas are present
  ChannelPair conv_channels{64, 128};
  // Frequency-divided branch channels per block; {0, 0} derives c/2 and 3c/2.
  ChannelPair low_channels{0, 0};
  ChannelPair high_channels{0, 0};
  RecurrentKind recurrent = RecurrentKind::lstm;
  std::size_t n_layers = 4;
  std::size_t units = 512;
  std::size_t vocab_size = 2;  // including blank
  std::uint64_t seed = 0;

  ChannelPair resolved_low() const {
    if (low_channels[0] != 0) return low_channels;
    return {conv_channels[0] / 2, conv_channels[1] / 2};
  }
  ChannelPair resolved_high() const {
    if (high_channels[0] != 0) return high_channels;
    return {conv_channels[0] * 3 / 2, conv_channels[1] * 3 / 2};
  }

  std::size_t standard_output_width() const { return conv_channels[1] * pooled_size(n_mels); }

  std::size_t extractor_output_width() const {
    if (extractor == ExtractorKind::standard) return standard_output_width();
    const std::size_t half = n_mels / 2;
    return resolved_low()[1] * pooled_size(half) + resolved_high()[1] * pooled_size(n_mels - half);
  }

  std::size_t n_groups() const { return n_layers + 2; }

  void validate() const {
    if (n_mels < 2) throw ConfigError("encoder: n_mels must be >= 2");
    if (in_channels != 1 && in_channels != 2) throw ConfigError("encoder: in_channels must be 1 or 2");
    if (conv_channels[0] == 0 || conv_channels[1] == 0) throw ConfigError("encoder: conv channels must be positive");
    if (n_layers < 1) throw ConfigError("encoder: n_layers must be >= 1");
    if (units < 1) throw ConfigError("encoder: units must be >= 1");
    if (vocab_size < 2) throw ConfigError("encoder: vocab_size must include blank and one symbol");
    if (extractor == ExtractorKind::freq_divided) {
      if (n_mels % 2 != 0) throw ConfigError("freq_divided extractor needs an even number of Mel bins");
      const auto lo = resolved_low(), hi = resolved_high();
      if (lo[0] == 0 || lo[1] == 0) throw ConfigError("freq_divided: low branch needs at least one channel");
      if (!(lo[0] < hi[0] && lo[1] < hi[1])) {
        throw ConfigError("freq_divided: low-frequency branch must have fewer filters than the high branch");
      }
      if (extractor_output_width() != standard_output_width()) {
        throw ConfigError("freq_divided: output width " + std::to_string(extractor_output_width()) +
                          " differs from the standard extractor's " + std::to_string(standard_output_width()) +
                          " (parameter budget violated)");
      }
    }
  }
};

/// Channel presets shipped with the toolkit.
struct ChannelPreset {
  const char* name;
  ChannelPair channels;
};
inline constexpr std::array<ChannelPreset, 3> kChannelPresets{{{"tiny", {4, 8}}, {"toy", {8, 16}}, {"standard", {64, 128}}}};

struct Posteriorgram {
  Matrix log_probs;                   // T' x V
  std::size_t downsample_factor = 4;  // T' = ceil(ceil(T/2)/2)
};

class Encoder {
 public:
  struct BranchHandles {
    std::array<DenseHandle, 4> conv;
    std::size_t bin_begin = 0, bin_end = 0;
  };

  struct BranchTape {
    Volume x0, r1, r2, r3, r4;
    PoolResult p1, p2;
  };

  struct LayerTape {
    Matrix input;
    CellCache fw, bw;
  };

  struct Tape {
    std::size_t frames = 0;
    std::vector<BranchTape> branches;
    std::vector<LayerTape> layers;
    Matrix hidden;  // top recurrent output
    Matrix log_probs;
  };

  explicit Encoder(EncoderConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    build();
  }

  /// Adopts trained values; names and shapes must match the configuration.
  Encoder(EncoderConfig cfg, const ParamStore& trained) : Encoder(std::move(cfg)) { params_.copy_values_from(trained); }

  const EncoderConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  std::size_t output_frames(std::size_t T) const { return pooled_size(T); }

  /// CNN extractor: T x D features -> T' x D' hidden matrix.
  Matrix extract(const FeatureMatrix& fm, Tape* tape = nullptr) const {
    check_input(fm);
    const std::size_t T = fm.frames();
    const std::size_t Tp = pooled_size(T);
    Matrix out(Tp, cfg_.extractor_output_width());
    std::size_t col = 0;
    if (tape) tape->branches.assign(branches_.size(), {});
    for (std::size_t b = 0; b < branches_.size(); ++b) {
      BranchTape local;
      BranchTape& bt = tape ? tape->branches[b] : local;
      const auto& br = branches_[b];
      const std::size_t F = br.bin_end - br.bin_begin;
      bt.x0 = Volume(cfg_.in_channels, T, F);
      for (std::size_t c = 0; c < cfg_.in_channels; ++c) {
        for (std::size_t t = 0; t < T; ++t) {
          for (std::size_t f = 0; f < F; ++f) bt.x0.at(c, t, f) = fm.data(t, c * cfg_.n_mels + br.bin_begin + f);
        }
      }
      bt.r1 = conv3x3_forward(params_, br.conv[0], bt.x0);
      relu_inplace(bt.r1);
      bt.r2 = conv3x3_forward(params_, br.conv[1], bt.r1);
      relu_inplace(bt.r2);
      bt.p1 = maxpool2_forward(bt.r2);
      bt.r3 = conv3x3_forward(params_, br.conv[2], bt.p1.out);
      relu_inplace(bt.r3);
      bt.r4 = conv3x3_forward(params_, br.conv[3], bt.r3);
      relu_inplace(bt.r4);
      bt.p2 = maxpool2_forward(bt.r4);
      const Volume& y = bt.p2.out;
      for (std::size_t t = 0; t < Tp; ++t) {
        for (std::size_t c = 0; c < y.c; ++c) {
          for (std::size_t f = 0; f < y.f; ++f) out(t, col + c * y.f + f) = y.at(c, t, f);
        }
      }
      col += y.c * y.f;
    }
    return out;
  }

  /// Bidirectional recurrent stack: T' x D' -> T' x 2U.
  Matrix recurrent(const Matrix& h, Tape* tape = nullptr) const {
    Matrix x = h;
    if (tape) tape->layers.assign(layers_.size(), {});
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      auto fw = cell_forward(params_, layers_[l][0], x, false);
      auto bw = cell_forward(params_, layers_[l][1], x, true);
      const std::size_t U = cfg_.units;
      Matrix y(x.rows(), 2 * U);
      for (std::size_t t = 0; t < x.rows(); ++t) {
        for (std::size_t u = 0; u < U; ++u) {
          y(t, u) = fw.h(t, u);
          y(t, U + u) = bw.h(t, u);
        }
      }
      if (tape) tape->layers[l] = LayerTape{std::move(x), std::move(fw), std::move(bw)};
      x = std::move(y);
    }
    return x;
  }

  /// Affine map plus per-frame log-softmax.
  Posteriorgram project(const Matrix& h) const {
    Posteriorgram y;
    y.log_probs = dense_forward(params_, proj_, h);
    for (std::size_t t = 0; t < y.log_probs.rows(); ++t) log_softmax_inplace(y.log_probs.row(t));
    return y;
  }

  Posteriorgram forward(const FeatureMatrix& fm, Tape* tape = nullptr) const {
    Matrix h = extract(fm, tape);
    Matrix r = recurrent(h, tape);
    Posteriorgram y = project(r);
    if (tape) {
      tape->frames = fm.frames();
      tape->hidden = std::move(r);
      tape->log_probs = y.log_probs;
    }
    return y;
  }

  /// Backpropagates dLoss/dlog_probs. Parameter gradients go to `grads`;
  /// `dinput`, when given, receives dLoss/dfeatures (T x D).
  void backward(const Tape& tape, const Matrix& dlogp, GradBuffer& grads, Matrix* dinput = nullptr) const {
    const std::uint32_t lowest = dinput ? 0 : lowest_trainable_group();
    // log-softmax: dz = g - softmax * sum(g)
    Matrix dz(dlogp.rows(), dlogp.cols());
    for (std::size_t t = 0; t < dz.rows(); ++t) {
      double s = 0.0;
      for (std::size_t k = 0; k < dz.cols(); ++k) s += dlogp(t, k);
      for (std::size_t k = 0; k < dz.cols(); ++k) dz(t, k) = dlogp(t, k) - std::exp(tape.log_probs(t, k)) * s;
    }
    const std::uint32_t top = static_cast<std::uint32_t>(cfg_.n_layers + 1);
    if (lowest > top) return;
    Matrix dh;
    dense_backward(params_, proj_, tape.hidden, dz, grads, lowest < top ? &dh : nullptr);
    const std::size_t U = cfg_.units;
    for (std::size_t l = layers_.size(); l-- > 0;) {
      if (lowest > l + 1) return;
      const auto& lt = tape.layers[l];
      Matrix dfw(dh.rows(), U), dbw(dh.rows(), U);
      for (std::size_t t = 0; t < dh.rows(); ++t) {
        for (std::size_t u = 0; u < U; ++u) {
          dfw(t, u) = dh(t, u);
          dbw(t, u) = dh(t, U + u);
        }
      }
      const bool need_dx = lowest < l + 1;
      Matrix dx(lt.input.rows(), lt.input.cols());
      cell_backward(params_, layers_[l][0], lt.input, false, lt.fw, dfw, grads, need_dx ? &dx : nullptr);
      cell_backward(params_, layers_[l][1], lt.input, true, lt.bw, dbw, grads, need_dx ? &dx : nullptr);
      dh = std::move(dx);
    }
    if (lowest > 0) return;
    backward_extractor(tape, dh, grads, dinput);
  }

  /// Lowest layer group that has a trainable entry (n_groups() if none).
  std::uint32_t lowest_trainable_group() const {
    auto lowest = static_cast<std::uint32_t>(cfg_.n_groups());
    for (const auto& e : params_.entries()) {
      if (!e.frozen) lowest = std::min(lowest, e.layer_index);
    }
    return lowest;
  }

 private:
  void check_input(const FeatureMatrix& fm) const {
    if (fm.n_mels != cfg_.n_mels || fm.dims() != cfg_.in_channels * cfg_.n_mels) {
      throw RuntimeError("encoder: expected " + std::to_string(cfg_.in_channels * cfg_.n_mels) +
                         "-dimensional features with " + std::to_string(cfg_.n_mels) + " Mel bins, got " +
                         std::to_string(fm.dims()) + " / " + std::to_string(fm.n_mels));
    }
    if (fm.frames() < 4) throw RuntimeError("utterance too short after downsampling (need at least 4 frames)");
  }

  void build() {
    Rng rng(cfg_.seed);
    auto add_branch = [&](const std::string& name, ChannelPair ch, std::size_t begin, std::size_t end) {
      BranchHandles b;
      b.bin_begin = begin;
      b.bin_end = end;
      const std::array<std::size_t, 4> cin{cfg_.in_channels, ch[0], ch[0], ch[1]};
      const std::array<std::size_t, 4> cout{ch[0], ch[0], ch[1], ch[1]};
      for (std::size_t k = 0; k < 4; ++k) {
        const std::string p = "ext." + name + ".conv" + std::to_string(k + 1);
        b.conv[k].w = params_.add(p + ".w", {cout[k], cin[k], 3, 3}, 0);
        b.conv[k].b = params_.add(p + ".b", {cout[k]}, 0);
        init_uniform(params_[b.conv[k].w], cin[k] * 9, rng);
      }
      branches_.push_back(b);
    };
    if (cfg_.extractor == ExtractorKind::standard) {
      add_branch("std", cfg_.conv_channels, 0, cfg_.n_mels);
    } else {
      const std::size_t half = cfg_.n_mels / 2;
      add_branch("low", cfg_.resolved_low(), 0, half);
      add_branch("high", cfg_.resolved_high(), half, cfg_.n_mels);
    }
    std::size_t in = cfg_.extractor_output_width();
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
      const auto group = static_cast<std::uint32_t>(l + 1);
      const std::string p = "rnn.l" + std::to_string(l);
      layers_.push_back({add_cell(params_, p + ".fw", cfg_.recurrent, in, cfg_.units, group, rng),
                         add_cell(params_, p + ".bw", cfg_.recurrent, in, cfg_.units, group, rng)});
      in = 2 * cfg_.units;
    }
    proj_ = add_dense(params_, "out", in, cfg_.vocab_size, static_cast<std::uint32_t>(cfg_.n_layers + 1), rng);
  }

  void backward_extractor(const Tape& tape, const Matrix& dh, GradBuffer& grads, Matrix* dinput) const {
    if (dinput) *dinput = Matrix(tape.frames, cfg_.in_channels * cfg_.n_mels);
    std::size_t col = 0;
    for (std::size_t b = 0; b < branches_.size(); ++b) {
      const auto& br = branches_[b];
      const auto& bt = tape.branches[b];
      const Volume& y = bt.p2.out;
      Volume dy(y.c, y.t, y.f);
      for (std::size_t t = 0; t < y.t; ++t) {
        for (std::size_t c = 0; c < y.c; ++c) {
          for (std::size_t f = 0; f < y.f; ++f) dy.at(c, t, f) = dh(t, col + c * y.f + f);
        }
      }
      col += y.c * y.f;
      Volume d4 = maxpool2_backward(bt.p2, bt.r4, dy);
      relu_backward_inplace(bt.r4, d4);
      Volume d3;
      conv3x3_backward(params_, br.conv[3], bt.r3, d4, grads, &d3);
      relu_backward_inplace(bt.r3, d3);
      Volume dp1;
      conv3x3_backward(params_, br.conv[2], bt.p1.out, d3, grads, &dp1);
      Volume d2 = maxpool2_backward(bt.p1, bt.r2, dp1);
      relu_backward_inplace(bt.r2, d2);
      Volume d1;
      conv3x3_backward(params_, br.conv[1], bt.r1, d2, grads, &d1);
      relu_backward_inplace(bt.r1, d1);
      Volume dx0;
      conv3x3_backward(params_, br.conv[0], bt.x0, d1, grads, dinput ? &dx0 : nullptr);
      if (dinput) {
        const std::size_t F = br.bin_end - br.bin_begin;
        for (std::size_t c = 0; c < cfg_.in_channels; ++c) {
          for (std::size_t t = 0; t < tape.frames; ++t) {
            for (std::size_t f = 0; f < F; ++f) (*dinput)(t, c * cfg_.n_mels + br.bin_begin + f) += dx0.at(c, t, f);
          }
        }
      }
    }
  }

  EncoderConfig cfg_;
  ParamStore params_;
  std::vector<BranchHandles> branches_;
  std::vector<std::array<CellHandle, 2>> layers_;
  DenseHandle proj_;
};

}  // namespace whispr
