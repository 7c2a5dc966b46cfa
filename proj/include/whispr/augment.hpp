// whispr/augment.hpp
//
// SpecAugment-style masking. Frequency-mask origins can be drawn uniformly
// (UNI) or from linearly (LIN) / geometrically (GEO) decreasing distributions
// that mask low Mel bins more often.

#pragma once

#include <string>
#include <vector>

#include "whispr/common.hpp"
#include "whispr/features.hpp"

namespace whispr {

enum class OriginDist { uni, lin, geo };

inline OriginDist parse_origin_dist(const std::string& s) {
  if (s == "uni" || s == "UNI") return OriginDist::uni;
  if (s == "lin" || s == "LIN") return OriginDist::lin;
  if (s == "geo" || s == "GEO") return OriginDist::geo;
  throw ConfigError("unknown mask origin distribution: " + s);
}

inline std::string to_string(OriginDist d) {
  switch (d) {
    case OriginDist::uni: return "uni";
    case OriginDist::lin: return "lin";
    case OriginDist::geo: return "geo";
  }
  return "uni";
}

struct MaskPolicy {
  int F1 = 0;
  int F2 = 27;
  int n_freq_masks = 2;
  OriginDist origin_dist = OriginDist::uni;
  double geo_rho = 0.95;
  int time_mask_T = 40;
  int n_time_masks = 1;

  void validate(std::size_t nu) const {
    if (F1 < 0 || F1 > F2) throw ConfigError("mask policy: require 0 <= F1 <= F2");
    if (static_cast<std::size_t>(F2) >= nu) throw ConfigError("mask policy: require F2 < number of Mel bins");
    if (!(geo_rho > 0.0 && geo_rho < 1.0)) throw ConfigError("mask policy: geo_rho must lie in (0, 1)");
    if (n_freq_masks < 0 || n_time_masks < 0 || time_mask_T < 0) {
      throw ConfigError("mask policy: counts and widths must be non-negative");
    }
  }
};

/// A band [start, start + width) along frequency or time; width 0 is a no-op.
struct Mask {
  std::size_t start = 0;
  std::size_t width = 0;
  bool operator==(const Mask&) const = default;
};

/// Unnormalized origin weights over f0 = 0 .. support-1.
inline std::vector<double> origin_weights(OriginDist dist, std::size_t support, double geo_rho) {
  std::vector<double> w(support);
  double g = 1.0;
  for (std::size_t f0 = 0; f0 < support; ++f0) {
    switch (dist) {
      case OriginDist::uni: w[f0] = 1.0; break;
      case OriginDist::lin: w[f0] = static_cast<double>(support - f0); break;
      case OriginDist::geo: w[f0] = g; g *= geo_rho; break;
    }
  }
  return w;
}

inline Mask sample_freq_mask(const MaskPolicy& policy, std::size_t nu, Rng& rng) {
  const auto width = static_cast<std::size_t>(rng.uniform_int(policy.F1, policy.F2));
  if (width >= nu) return {};
  const std::size_t support = nu - width;
  const auto w = origin_weights(policy.origin_dist, support, policy.geo_rho);
  return {rng.categorical(w), width};
}

inline Mask sample_time_mask(const MaskPolicy& policy, std::size_t frames, Rng& rng) {
  if (policy.time_mask_T <= 0) return {};
  const auto width = static_cast<std::size_t>(rng.uniform_int(0, policy.time_mask_T));
  if (width >= frames) return {};
  return {static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(frames - width) - 1)), width};
}

/// Sets the masked Mel bins to `value`; with deltas, the matching delta
/// columns are masked too.
inline FeatureMatrix apply_mask(const FeatureMatrix& fm, const std::vector<Mask>& masks, double value = 0.0) {
  FeatureMatrix out = fm;
  const std::size_t nu = fm.n_mels;
  for (const auto& m : masks) {
    if (m.width == 0) continue;
    if (m.start >= nu || m.start + m.width > nu) throw ConfigError("apply_mask: frequency mask out of range");
  }
  const std::size_t blocks = fm.dims() / nu;
  for (const auto& m : masks) {
    for (std::size_t t = 0; t < fm.frames(); ++t) {
      for (std::size_t b = 0; b < blocks; ++b) {
        for (std::size_t f = m.start; f < m.start + m.width; ++f) out.data(t, b * nu + f) = value;
      }
    }
  }
  return out;
}

inline FeatureMatrix apply_time_mask(const FeatureMatrix& fm, const std::vector<Mask>& masks, double value = 0.0) {
  FeatureMatrix out = fm;
  for (const auto& m : masks) {
    if (m.width == 0) continue;
    if (m.start + m.width > fm.frames()) throw ConfigError("apply_time_mask: time mask out of range");
    for (std::size_t t = m.start; t < m.start + m.width; ++t) {
      for (auto& v : out.data.row(t)) v = value;
    }
  }
  return out;
}

/// One augmentation draw: policy.n_freq_masks frequency masks, then time masks.
inline FeatureMatrix augment(const FeatureMatrix& fm, const MaskPolicy& policy, Rng& rng) {
  std::vector<Mask> fmasks, tmasks;
  for (int i = 0; i < policy.n_freq_masks; ++i) fmasks.push_back(sample_freq_mask(policy, fm.n_mels, rng));
  for (int i = 0; i < policy.n_time_masks; ++i) tmasks.push_back(sample_time_mask(policy, fm.frames(), rng));
  return apply_time_mask(apply_mask(fm, fmasks), tmasks);
}

}  // namespace whispr
