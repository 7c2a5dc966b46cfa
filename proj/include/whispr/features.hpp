// whispr/features.hpp
//
// Acoustic front-end: WAV ingestion, STFT magnitudes, log-Mel filterbank,
// regression deltas and per-utterance mean/variance normalization.

#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "whispr/binary_io.hpp"
#include "whispr/common.hpp"

namespace whispr {

struct AudioClip {
  std::vector<double> samples;  // amplitudes in [-1, 1]
  int sample_rate_hz = 16000;
};

struct FeatureConfig {
  int sample_rate_hz = 16000;
  int n_fft = 512;
  double win_ms = 25.0;
  double hop_ms = 10.0;
  int n_mels = 80;
  double fmin_hz = 0.0;
  double fmax_hz = 8000.0;
  bool add_delta = true;
  int delta_window = 2;
  double log_floor = 1e-10;

  int win_samples() const { return static_cast<int>(std::lround(win_ms * sample_rate_hz / 1000.0)); }
  int hop_samples() const { return static_cast<int>(std::lround(hop_ms * sample_rate_hz / 1000.0)); }
  int n_bins() const { return n_fft / 2 + 1; }

  void validate() const {
    if (sample_rate_hz <= 0) throw ConfigError("feature config: sample_rate_hz must be positive");
    if (n_fft < 2 || (n_fft & (n_fft - 1)) != 0) throw ConfigError("feature config: n_fft must be a power of two");
    if (n_mels < 2) throw ConfigError("feature config: n_mels must be >= 2");
    if (hop_ms <= 0.0 || win_ms < hop_ms) throw ConfigError("feature config: require win_ms >= hop_ms > 0");
    if (win_samples() > n_fft) throw ConfigError("feature config: window longer than n_fft");
    if (!(fmin_hz >= 0.0 && fmin_hz < fmax_hz && fmax_hz <= sample_rate_hz / 2.0)) {
      throw ConfigError("feature config: require 0 <= fmin_hz < fmax_hz <= sample_rate/2");
    }
    if (!(log_floor > 0.0)) throw ConfigError("feature config: log_floor must be positive");
    if (delta_window < 1) throw ConfigError("feature config: delta_window must be >= 1");
  }
};

/// T x D features; D is n_mels (static) or 2 * n_mels (static | delta).
struct FeatureMatrix {
  Matrix data;
  std::size_t n_mels = 0;
  std::uint32_t frame_hop_ms = 10;

  std::size_t frames() const { return data.rows(); }
  std::size_t dims() const { return data.cols(); }
  bool has_delta() const { return data.cols() == 2 * n_mels; }

  bool operator==(const FeatureMatrix&) const = default;
};

// ---------------------------------------------------------------------------
// WAV (RIFF, PCM16 little-endian, mono)

inline AudioClip read_wav(const std::filesystem::path& path, int expected_rate_hz = 16000) {
  auto in = io::open_in(path);
  io::expect_magic(in, "RIFF", path.string());
  io::read_le<std::uint32_t>(in);
  io::expect_magic(in, "WAVE", path.string());
  std::uint16_t fmt_tag = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  while (true) {
    char id[4];
    in.read(id, 4);
    if (!in) throw RuntimeError(path.string() + ": no data chunk");
    const auto size = io::read_le<std::uint32_t>(in);
    const std::string chunk(id, 4);
    if (chunk == "fmt ") {
      fmt_tag = io::read_le<std::uint16_t>(in);
      channels = io::read_le<std::uint16_t>(in);
      rate = io::read_le<std::uint32_t>(in);
      io::read_le<std::uint32_t>(in);  // byte rate
      io::read_le<std::uint16_t>(in);  // block align
      bits = io::read_le<std::uint16_t>(in);
      in.ignore(static_cast<std::streamsize>(size) - 16 + (size & 1));
      have_fmt = true;
    } else if (chunk == "data") {
      if (!have_fmt) throw RuntimeError(path.string() + ": data chunk before fmt chunk");
      if (fmt_tag != 1 || bits != 16 || channels != 1) {
        throw RuntimeError(path.string() + ": only mono PCM16 WAV is supported");
      }
      if (static_cast<int>(rate) != expected_rate_hz) {
        throw RuntimeError(path.string() + ": sample rate " + std::to_string(rate) + " Hz, expected " +
                           std::to_string(expected_rate_hz));
      }
      AudioClip clip;
      clip.sample_rate_hz = static_cast<int>(rate);
      clip.samples.resize(size / 2);
      for (auto& s : clip.samples) s = io::read_le<std::int16_t>(in) / 32768.0;
      return clip;
    } else {
      in.ignore(static_cast<std::streamsize>(size) + (size & 1));
    }
  }
}

inline void write_wav(const std::filesystem::path& path, const AudioClip& clip) {
  auto out = io::open_out(path);
  const auto data_bytes = static_cast<std::uint32_t>(clip.samples.size() * 2);
  io::write_magic(out, "RIFF");
  io::write_le<std::uint32_t>(out, 36 + data_bytes);
  io::write_magic(out, "WAVE");
  io::write_magic(out, "fmt ");
  io::write_le<std::uint32_t>(out, 16);
  io::write_le<std::uint16_t>(out, 1);
  io::write_le<std::uint16_t>(out, 1);
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(clip.sample_rate_hz));
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(clip.sample_rate_hz) * 2);
  io::write_le<std::uint16_t>(out, 2);
  io::write_le<std::uint16_t>(out, 16);
  io::write_magic(out, "data");
  io::write_le<std::uint32_t>(out, data_bytes);
  for (double s : clip.samples) {
    const double c = std::clamp(s, -1.0, 32767.0 / 32768.0);
    io::write_le<std::int16_t>(out, static_cast<std::int16_t>(std::lround(c * 32768.0)));
  }
}

// ---------------------------------------------------------------------------
// Spectral analysis

namespace detail {

/// In-place iterative radix-2 FFT; size must be a power of two.
inline void fft(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * M_PI / static_cast<double>(len);
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> w(std::cos(ang * k), std::sin(ang * k));
        const auto u = a[i + k];
        const auto v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
      }
    }
  }
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

}  // namespace detail

/// Periodic Hann window of the configured length.
inline std::vector<double> analysis_window(const FeatureConfig& cfg) {
  const int n = cfg.win_samples();
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / n);
  return w;
}

inline std::size_t frame_count(std::size_t n_samples, const FeatureConfig& cfg) {
  const auto win = static_cast<std::size_t>(cfg.win_samples());
  if (n_samples < win) return 0;
  return 1 + (n_samples - win) / static_cast<std::size_t>(cfg.hop_samples());
}

/// |STFT| with a Hann window; the trailing partial window is dropped.
inline Matrix stft_magnitude(const AudioClip& clip, const FeatureConfig& cfg) {
  cfg.validate();
  if (clip.samples.empty()) throw RuntimeError("utterance too short: empty clip");
  const std::size_t frames = frame_count(clip.samples.size(), cfg);
  if (frames == 0) throw RuntimeError("utterance too short: shorter than one analysis window");
  const auto window = analysis_window(cfg);
  const auto hop = static_cast<std::size_t>(cfg.hop_samples());
  Matrix mag(frames, static_cast<std::size_t>(cfg.n_bins()));
  std::vector<std::complex<double>> buf(static_cast<std::size_t>(cfg.n_fft));
  for (std::size_t t = 0; t < frames; ++t) {
    std::fill(buf.begin(), buf.end(), std::complex<double>{});
    for (std::size_t i = 0; i < window.size(); ++i) buf[i] = clip.samples[t * hop + i] * window[i];
    detail::fft(buf);
    for (std::size_t k = 0; k < mag.cols(); ++k) mag(t, k) = std::abs(buf[k]);
  }
  return mag;
}

/// n_mels x n_bins triangular filters, equally spaced on the HTK Mel scale.
inline Matrix mel_filterbank(const FeatureConfig& cfg) {
  cfg.validate();
  const double mlo = detail::hz_to_mel(cfg.fmin_hz);
  const double mhi = detail::hz_to_mel(cfg.fmax_hz);
  std::vector<double> edges(static_cast<std::size_t>(cfg.n_mels) + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = detail::mel_to_hz(mlo + (mhi - mlo) * static_cast<double>(i) / (cfg.n_mels + 1));
  }
  Matrix fb(static_cast<std::size_t>(cfg.n_mels), static_cast<std::size_t>(cfg.n_bins()));
  for (std::size_t m = 0; m < fb.rows(); ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    for (std::size_t k = 0; k < fb.cols(); ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate_hz / cfg.n_fft;
      double w = 0.0;
      if (f > left && f <= center) {
        w = (f - left) / (center - left);
      } else if (f > center && f < right) {
        w = (right - f) / (right - center);
      }
      fb(m, k) = w;
    }
  }
  return fb;
}

/// ln(max(filterbank . |X|^2, log_floor)); static features only.
inline FeatureMatrix log_mel(const Matrix& mag, const FeatureConfig& cfg) {
  if (mag.cols() != static_cast<std::size_t>(cfg.n_bins())) {
    throw ConfigError("log_mel: magnitude width does not match n_fft/2+1");
  }
  const Matrix fb = mel_filterbank(cfg);
  FeatureMatrix fm;
  fm.n_mels = static_cast<std::size_t>(cfg.n_mels);
  fm.frame_hop_ms = static_cast<std::uint32_t>(std::lround(cfg.hop_ms));
  fm.data = Matrix(mag.rows(), fm.n_mels);
  for (std::size_t t = 0; t < mag.rows(); ++t) {
    for (std::size_t m = 0; m < fm.n_mels; ++m) {
      double e = 0.0;
      for (std::size_t k = 0; k < mag.cols(); ++k) e += fb(m, k) * mag(t, k) * mag(t, k);
      fm.data(t, m) = std::log(std::max(e, cfg.log_floor));
    }
  }
  return fm;
}

/// Appends regression deltas over +/- window_n frames with replicate padding.
inline FeatureMatrix add_delta(const FeatureMatrix& fm, int window_n = 2) {
  if (window_n < 1) throw ConfigError("add_delta: window_n must be >= 1");
  if (fm.dims() != fm.n_mels) throw ConfigError("add_delta: input already has deltas");
  const auto T = static_cast<long>(fm.frames());
  const std::size_t nu = fm.n_mels;
  double denom = 0.0;
  for (int n = 1; n <= window_n; ++n) denom += n * n;
  denom *= 2.0;
  FeatureMatrix out;
  out.n_mels = nu;
  out.frame_hop_ms = fm.frame_hop_ms;
  out.data = Matrix(fm.frames(), 2 * nu);
  auto clamp_t = [T](long t) { return static_cast<std::size_t>(std::clamp(t, 0L, T - 1)); };
  for (long t = 0; t < T; ++t) {
    for (std::size_t f = 0; f < nu; ++f) {
      out.data(t, f) = fm.data(t, f);
      double acc = 0.0;
      for (int n = 1; n <= window_n; ++n) {
        acc += n * (fm.data(clamp_t(t + n), f) - fm.data(clamp_t(t - n), f));
      }
      out.data(t, nu + f) = acc / denom;
    }
  }
  return out;
}

inline constexpr double kNormVarianceEpsilon = 1e-8;

/// Per-utterance, per-dimension zero mean and unit variance (population variance).
inline FeatureMatrix normalize(const FeatureMatrix& fm) {
  if (fm.frames() == 0) throw RuntimeError("normalize: empty feature matrix");
  FeatureMatrix out = fm;
  const std::size_t T = fm.frames();
  for (std::size_t d = 0; d < fm.dims(); ++d) {
    double mean = 0.0;
    for (std::size_t t = 0; t < T; ++t) mean += fm.data(t, d);
    mean /= static_cast<double>(T);
    double var = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      const double c = fm.data(t, d) - mean;
      var += c * c;
    }
    var /= static_cast<double>(T);
    const double sd = std::sqrt(std::max(var, kNormVarianceEpsilon));
    for (std::size_t t = 0; t < T; ++t) out.data(t, d) = (fm.data(t, d) - mean) / sd;
  }
  return out;
}

/// Full front-end: log-Mel, optional deltas, normalization.
inline FeatureMatrix extract_features(const AudioClip& clip, const FeatureConfig& cfg) {
  if (clip.sample_rate_hz != cfg.sample_rate_hz) {
    throw RuntimeError("sample rate " + std::to_string(clip.sample_rate_hz) + " Hz does not match config " +
                       std::to_string(cfg.sample_rate_hz));
  }
  FeatureMatrix fm = log_mel(stft_magnitude(clip, cfg), cfg);
  if (cfg.add_delta) fm = add_delta(fm, cfg.delta_window);
  return normalize(fm);
}

/// Static (first n_mels) columns of a feature matrix.
inline FeatureMatrix static_block(const FeatureMatrix& fm) {
  FeatureMatrix out;
  out.n_mels = fm.n_mels;
  out.frame_hop_ms = fm.frame_hop_ms;
  out.data = Matrix(fm.frames(), fm.n_mels);
  for (std::size_t t = 0; t < fm.frames(); ++t) {
    for (std::size_t f = 0; f < fm.n_mels; ++f) out.data(t, f) = fm.data(t, f);
  }
  return out;
}

// ---------------------------------------------------------------------------
// WFE1 feature files: "WFE1", u32 T, u32 D, u32 n_mels, u32 hop_ms, T*D f32.

inline void write_features(const std::filesystem::path& path, const FeatureMatrix& fm) {
  auto out = io::open_out(path);
  io::write_magic(out, "WFE1");
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(fm.frames()));
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(fm.dims()));
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(fm.n_mels));
  io::write_le<std::uint32_t>(out, fm.frame_hop_ms);
  for (double v : fm.data.data()) io::write_le<float>(out, static_cast<float>(v));
  if (!out) throw RuntimeError("failed writing " + path.string());
}

inline FeatureMatrix read_features(const std::filesystem::path& path) {
  auto in = io::open_in(path);
  io::expect_magic(in, "WFE1", path.string());
  const auto T = io::read_le<std::uint32_t>(in);
  const auto D = io::read_le<std::uint32_t>(in);
  FeatureMatrix fm;
  fm.n_mels = io::read_le<std::uint32_t>(in);
  fm.frame_hop_ms = io::read_le<std::uint32_t>(in);
  if (T == 0 || (D != fm.n_mels && D != 2 * fm.n_mels)) {
    throw RuntimeError(path.string() + ": inconsistent WFE1 header");
  }
  fm.data = Matrix(T, D);
  for (double& v : fm.data.data()) v = io::read_le<float>(in);
  return fm;
}

}  // namespace whispr
