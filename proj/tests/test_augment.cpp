#include <gtest/gtest.h>

#include "support.hpp"

using namespace whispr;

namespace {

std::vector<double> normalized(std::vector<double> w) {
  double s = 0.0;
  for (double v : w) s += v;
  for (double& v : w) v /= s;
  return w;
}

// Draws n origins with a fixed mask width by pinning F1 = F2.
std::vector<std::size_t> origin_histogram(OriginDist dist, double rho, std::size_t nu, int width, std::size_t n,
                                          std::uint64_t seed) {
  MaskPolicy p;
  p.F1 = p.F2 = width;
  p.origin_dist = dist;
  p.geo_rho = rho;
  Rng rng(seed);
  std::vector<std::size_t> counts(nu - width, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const Mask m = sample_freq_mask(p, nu, rng);
    EXPECT_EQ(m.width, static_cast<std::size_t>(width));
    counts.at(m.start)++;
  }
  return counts;
}

}  // namespace

TEST(OriginWeights, LinearSupportThree) {
  const auto p = normalized(origin_weights(OriginDist::lin, 3, 0.5));
  EXPECT_NEAR(p[0], 3.0 / 6, 1e-15);
  EXPECT_NEAR(p[1], 2.0 / 6, 1e-15);
  EXPECT_NEAR(p[2], 1.0 / 6, 1e-15);
}

TEST(OriginWeights, GeometricSupportThree) {
  const auto p = normalized(origin_weights(OriginDist::geo, 3, 0.5));
  EXPECT_NEAR(p[0], 4.0 / 7, 1e-15);
  EXPECT_NEAR(p[1], 2.0 / 7, 1e-15);
  EXPECT_NEAR(p[2], 1.0 / 7, 1e-15);
}

TEST(OriginWeights, EmpiricalLinearMatchesExact) {
  const auto counts = origin_histogram(OriginDist::lin, 0.5, 8, 5, 30000, 2);
  EXPECT_GT(wt::chi_square_p(counts, {3.0 / 6, 2.0 / 6, 1.0 / 6}), 0.01);
}

TEST(FreqMask, ZeroWidthPolicyIsNoOp) {
  MaskPolicy p;
  p.F1 = p.F2 = 0;
  Rng rng(1);
  Rng r2(2);
  const auto fm = wt::random_features(5, 6, true, r2);
  for (int i = 0; i < 50; ++i) {
    const Mask m = sample_freq_mask(p, 6, rng);
    EXPECT_EQ(m.width, 0u);
    EXPECT_EQ(apply_mask(fm, {m}), fm);
  }
}

TEST(FreqMask, UniformOriginPassesChiSquare) {
  const auto counts = origin_histogram(OriginDist::uni, 0.5, 80, 10, 100000, 3);
  EXPECT_GT(wt::chi_square_p(counts, std::vector<double>(70, 1.0 / 70)), 0.01);
}

TEST(FreqMask, BandStaysInsideSpectrum) {
  MaskPolicy p;
  p.F1 = 0;
  p.F2 = 27;
  for (auto d : {OriginDist::uni, OriginDist::lin, OriginDist::geo}) {
    p.origin_dist = d;
    Rng rng(4);
    for (int i = 0; i < 2000; ++i) {
      const Mask m = sample_freq_mask(p, 80, rng);
      EXPECT_LE(m.start + m.width, 80u);
    }
  }
}

TEST(ApplyMask, MasksStaticAndDeltaColumns) {
  Rng rng(5);
  const auto fm = wt::random_features(4, 8, true, rng);
  const auto out = apply_mask(fm, {{3, 2}}, -1.5);
  for (std::size_t t = 0; t < 4; ++t) {
    for (std::size_t c = 0; c < 16; ++c) {
      const bool masked = c == 3 || c == 4 || c == 11 || c == 12;
      EXPECT_EQ(out.data(t, c), masked ? -1.5 : fm.data(t, c)) << t << "," << c;
    }
  }
}

TEST(ApplyMask, EmptyListIsIdentity) {
  Rng rng(6);
  const auto fm = wt::random_features(4, 8, true, rng);
  EXPECT_EQ(apply_mask(fm, {}), fm);
}

TEST(ApplyMask, OverlapIsUnionAndIdempotent) {
  Rng rng(7);
  const auto fm = wt::random_features(3, 10, false, rng);
  const std::vector<Mask> masks = {{1, 4}, {3, 4}};
  const auto once = apply_mask(fm, masks);
  for (std::size_t t = 0; t < 3; ++t) {
    for (std::size_t c = 0; c < 10; ++c) EXPECT_EQ(once.data(t, c), (c >= 1 && c < 7) ? 0.0 : fm.data(t, c));
  }
  EXPECT_EQ(apply_mask(once, masks), once);
}

TEST(ApplyMask, OutOfRangeRejected) {
  Rng rng(8);
  const auto fm = wt::random_features(3, 10, false, rng);
  EXPECT_THROW(apply_mask(fm, {{8, 3}}), ConfigError);
}

TEST(TimeMask, ZeroLimitIsNoOp) {
  MaskPolicy p;
  p.time_mask_T = 0;
  Rng rng(9);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(sample_time_mask(p, 50, rng).width, 0u);
}

TEST(TimeMask, StaysInsideUtterance) {
  MaskPolicy p;
  p.time_mask_T = 10;
  Rng rng(10);
  for (int i = 0; i < 10000; ++i) {
    const Mask m = sample_time_mask(p, 100, rng);
    EXPECT_LE(m.start + m.width, 100u);
  }
}

TEST(TimeMask, UniformOriginPassesChiSquare) {
  MaskPolicy p;
  p.time_mask_T = 5;
  Rng rng(11);
  // Condition on width 5 so the support is fixed at 95 origins.
  std::vector<std::size_t> counts(95, 0);
  std::size_t kept = 0;
  while (kept < 60000) {
    const Mask m = sample_time_mask(p, 100, rng);
    if (m.width != 5) continue;
    counts.at(m.start)++;
    ++kept;
  }
  EXPECT_GT(wt::chi_square_p(counts, std::vector<double>(95, 1.0 / 95)), 0.01);
}

TEST(TimeMask, ApplyZeroesWholeFrames) {
  Rng rng(12);
  const auto fm = wt::random_features(6, 3, true, rng);
  const auto out = apply_time_mask(fm, {{2, 2}});
  for (std::size_t t = 0; t < 6; ++t) {
    for (std::size_t c = 0; c < 6; ++c) EXPECT_EQ(out.data(t, c), (t == 2 || t == 3) ? 0.0 : fm.data(t, c));
  }
}

TEST(MaskPolicy, Validation) {
  MaskPolicy p;
  EXPECT_NO_THROW(p.validate(80));
  p.F2 = 80;
  EXPECT_THROW(p.validate(80), ConfigError);
  p = {};
  p.F1 = 5;
  p.F2 = 3;
  EXPECT_THROW(p.validate(80), ConfigError);
  p = {};
  p.geo_rho = 1.0;
  EXPECT_THROW(p.validate(80), ConfigError);
  EXPECT_THROW(parse_origin_dist("exp"), ConfigError);
}

TEST(Augment, SameSeedSameOutput) {
  Rng r0(13);
  const auto fm = wt::random_features(60, 20, true, r0);
  MaskPolicy p;
  p.F2 = 8;
  Rng a(99), b(99);
  EXPECT_EQ(augment(fm, p, a), augment(fm, p, b));
}
