#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "oracles.hpp"
#include "upam/dsp/frontend.hpp"

using namespace upam::dsp;
using upam::EmptyResultError;

namespace {

AudioClip clip_of(std::size_t n, double fs = 250.0) {
  AudioClip c;
  c.id = "c";
  c.sample_rate = fs;
  c.samples.assign(n, 0.0);
  return c;
}

// Count windows by sliding until the next one would run past the end.
std::size_t enumerate_windows(std::size_t s, std::size_t h) {
  std::size_t n = 0;
  while (n * h + 2 * h <= s) ++n;
  return n;
}

}  // namespace

TEST(Segment, CanonicalCounts) {
  EXPECT_EQ(segment(clip_of(16384 * 5), 16384, 8192).size(), 9u);
  const auto one = segment(clip_of(16384), 16384, 8192);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].start_sample, 0u);
  EXPECT_EQ(one[0].samples.size(), 16384u);
}

TEST(Segment, ShortClipIsEmptyResultNotMalformed) {
  EXPECT_THROW(segment(clip_of(16383), 16384, 8192), EmptyResultError);
  try {
    segment(clip_of(20000), 16000, 8192);
    FAIL();
  } catch (const EmptyResultError&) {
    FAIL() << "malformed input reported as empty result";
  } catch (const upam::DataError&) {
  }
  EXPECT_THROW(segment(clip_of(0), 16384, 8192), upam::DataError);
}

TEST(Segment, WindowCountMatchesEnumeration) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::size_t> hop(1, 300), extra(0, 5000);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t h = hop(rng);
    const std::size_t s = 2 * h + extra(rng);
    const auto segs = segment(clip_of(s), 2 * h, h);
    ASSERT_EQ(segs.size(), enumerate_windows(s, h));
    ASSERT_EQ(segs.size(), (s - h) / h);
    for (std::size_t i = 0; i < segs.size(); ++i) ASSERT_EQ(segs[i].start_sample, i * h);
  }
}

TEST(Segment, ShortAnnotationsAreFullyContainedSomewhere) {
  std::mt19937_64 rng(11);
  const double fs = 250.0;
  const std::size_t h = 1024, w = 2048, s = 40000;
  const auto segs = segment(clip_of(s, fs), w, h);
  const double covered = static_cast<double>((segs.size() + 1) * h) / fs;
  std::uniform_real_distribution<double> dur(0.05, h / fs);
  for (int trial = 0; trial < 500; ++trial) {
    const double d = dur(rng);
    const double t0 = std::uniform_real_distribution<double>(0.0, covered - d)(rng);
    bool inside = false;
    for (const auto& seg : segs) {
      const double a = seg.start_sample / fs, b = a + w / fs;
      inside |= (t0 >= a && t0 + d <= b);
    }
    ASSERT_TRUE(inside) << "annotation at " << t0 << " of " << d << " s not contained";
  }
}

TEST(LabelWindow, Policy) {
  WindowSegment seg;
  seg.start_sample = 250;  // [1 s, 9 s) at 250 Hz
  seg.samples.assign(2000, 0.0);
  const double fs = 250.0;
  std::vector<Annotation> inside{{3.0, 5.0, "dcall"}};
  std::vector<Annotation> disjoint{{10.0, 12.0, "dcall"}};
  // 4 s call, 1.6 s (40%) inside the window.
  std::vector<Annotation> partial{{7.4, 11.4, "dcall"}};
  std::vector<Annotation> majority{{7.0, 10.0, "dcall"}};
  EXPECT_EQ(label_window(seg, inside, fs), 1);
  EXPECT_EQ(label_window(seg, disjoint, fs), 0);
  EXPECT_EQ(label_window(seg, partial, fs, {0.5, ""}), 0);
  EXPECT_EQ(label_window(seg, majority, fs, {0.5, ""}), 1);
  EXPECT_EQ(label_window(seg, inside, fs, {0.5, "other"}), 0);
}

TEST(Stft, DcConcentratesInBinZero) {
  const std::vector<double> ones(1024, 1.0);
  const auto g = stft(ones, 256, 64, Taper::rectangular);
  // frames 0..12 lie fully inside the signal
  for (std::size_t i = 0; i + 4 <= 16; ++i) {
    EXPECT_NEAR(std::abs(g.at(i, 0)), 256.0, 1e-9);
    for (std::size_t f = 1; f < 256; ++f) EXPECT_LT(std::abs(g.at(i, f)), 1e-9);
  }
}

TEST(Stft, SinusoidPeakAndSidelobes) {
  const double fs = 250.0, f0 = 62.5;
  std::vector<double> x(1024);
  for (std::size_t n = 0; n < x.size(); ++n) x[n] = std::sin(2.0 * std::numbers::pi * f0 * n / fs);
  const auto g = stft(x, 256, 64, Taper::hann);
  const auto window = make_taper(Taper::hann, 256);
  std::vector<double> frame(256);
  for (std::size_t k = 0; k < 256; ++k) frame[k] = x[k] * window[k];
  const auto ref = upam::testing::naive_dft(frame);

  std::size_t peak = 0;
  for (std::size_t f = 0; f < 128; ++f)
    if (std::abs(g.at(0, f)) > std::abs(g.at(0, peak))) peak = f;
  EXPECT_EQ(peak, 64u);
  const double peak_db = 20 * std::log10(std::abs(g.at(0, 64)));
  for (std::size_t f = 0; f < 128; ++f) {
    EXPECT_NEAR(std::abs(g.at(0, f) - ref[f]), 0.0, 1e-9 * std::abs(ref[64]));
    if (f + 2 <= 64 || f >= 66) EXPECT_LE(20 * std::log10(std::abs(g.at(0, f)) + 1e-300), peak_db - 20.0) << f;
  }
}

TEST(Stft, FftMatchesNaiveDft) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  for (std::size_t L : {8u, 64u, 256u, 512u}) {
    std::vector<double> x(L);
    for (auto& v : x) v = nd(rng);
    const auto g = stft(x, L, L, Taper::rectangular);
    const auto ref = upam::testing::naive_dft(x);
    double scale = 0;
    for (const auto& r : ref) scale = std::max(scale, std::abs(r));
    for (std::size_t f = 0; f < L; ++f) EXPECT_LE(std::abs(g.at(0, f) - ref[f]), 1e-9 * scale);
  }
}

TEST(Stft, ParsevalRectangular) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd;
  std::vector<double> x(2048);
  for (auto& v : x) v = nd(rng);
  const std::size_t L = 256, b = 64;
  const auto g = stft(x, L, b, Taper::rectangular);
  for (std::size_t i = 0; i + L / b <= g.frames; ++i) {
    double lhs = 0, rhs = 0;
    for (std::size_t f = 0; f < L; ++f) lhs += std::norm(g.at(i, f));
    for (std::size_t k = 0; k < L; ++k) rhs += x[i * b + k] * x[i * b + k];
    EXPECT_NEAR(lhs, L * rhs, 1e-6 * L * rhs);
  }
}

TEST(Stft, CanonicalGeometry) {
  WindowSegment seg;
  seg.samples.assign(16384, 0.1);
  const auto g = stft(seg, 256, 64);
  EXPECT_EQ(g.frames, 256u);
  const auto s = log_power_normalize(g);
  EXPECT_EQ(s.bins, 128u);
  EXPECT_EQ(s.frames, 256u);
  EXPECT_THROW(stft(std::vector<double>(100, 0.0), 256, 64), upam::DataError);
  EXPECT_THROW(stft(std::vector<double>(1000, 0.0), 200, 64), upam::DataError);
}

TEST(LogPower, WorkedExample) {
  ComplexGrid g;
  g.frames = 1;
  g.bins = 6;
  g.data = {std::sqrt(0.001), std::sqrt(0.1), std::sqrt(10.0), 99.0, 99.0, 99.0};
  const auto s = log_power_normalize(g, 1e-12);
  ASSERT_EQ(s.bins, 3u);
  EXPECT_NEAR(s.values[0], 0.0, 1e-6);
  EXPECT_NEAR(s.values[1], 0.5, 1e-6);
  EXPECT_NEAR(s.values[2], 1.0, 1e-6);
  EXPECT_FALSE(s.degenerate);
}

TEST(LogPower, ConstantGridIsZeroAndFlagged) {
  ComplexGrid g;
  g.frames = 4;
  g.bins = 8;
  g.data.assign(32, {2.0, 0.0});
  const auto s = log_power_normalize(g);
  EXPECT_TRUE(s.degenerate);
  for (float v : s.values) EXPECT_EQ(v, 0.0f);
}

TEST(LogPower, MinMaxIdempotentOnUnitExtremes) {
  std::vector<double> v{0.0, 1.0};
  EXPECT_TRUE(minmax_normalize(v));
  EXPECT_EQ(v[0], 0.0);
  EXPECT_EQ(v[1], 1.0);
}

TEST(LogPower, RangeAndShapeProperty) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 20; ++trial) {
    WindowSegment seg;
    seg.samples.resize(512 + 64 * (trial % 5));
    for (auto& v : seg.samples) v = nd(rng) * (trial + 1);
    const auto s = log_power_normalize(stft(seg, 64, 32));
    EXPECT_EQ(s.bins, 32u);
    EXPECT_EQ(s.frames, seg.samples.size() / 32);
    float mn = 1, mx = 0;
    for (float v : s.values) {
      ASSERT_GE(v, 0.0f);
      ASSERT_LE(v, 1.0f);
      mn = std::min(mn, v);
      mx = std::max(mx, v);
    }
    EXPECT_EQ(mn, 0.0f);
    EXPECT_EQ(mx, 1.0f);
  }
}

TEST(ReceptiveField, Examples) {
  EXPECT_EQ(receptive_field(5, 256, 64), 512u);
  EXPECT_EQ(receptive_field(1, 256, 64), 256u);
  EXPECT_EQ(receptive_field(3, 256, 64), 384u);
}

TEST(Frontend, ClipToSpectrogramsRejectsRateMismatch) {
  auto c = clip_of(5000, 200.0);
  EXPECT_THROW(clip_to_spectrograms(c, FrontendConfig::desk()), upam::DataError);
  c.sample_rate = 250.0;
  c.annotations.push_back({1.0, 3.0, "dcall"});
  const auto specs = clip_to_spectrograms(c, FrontendConfig::desk());
  ASSERT_EQ(specs.size(), 3u);
  EXPECT_EQ(specs[0].label, 1);
  EXPECT_EQ(specs[2].label, 0);
  EXPECT_EQ(specs[0].bins, 32u);
  EXPECT_EQ(specs[0].frames, 64u);
  EXPECT_DOUBLE_EQ(specs[0].freq_resolution, 250.0 / 64.0);
}
