#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <filesystem>
#include <map>
#include <numbers>

#include "oracles.hpp"
#include "upam/dsp/frontend.hpp"
#include "upam/pipeline/dataset.hpp"
#include "upam/synth/corpus.hpp"

using namespace upam::synth;
namespace fs = std::filesystem;

namespace {

// Averaged periodogram over Hann frames of length L, hop L/2.
std::vector<double> welch_psd(const std::vector<double>& x, std::size_t L) {
  const auto g = upam::dsp::stft(std::vector<double>(x.begin(), x.begin() + (x.size() / L) * L), L, L / 2);
  std::vector<double> psd(L / 2 + 1, 0.0);
  const std::size_t frames = g.frames - 1;  // last frame is zero-padded
  for (std::size_t i = 0; i < frames; ++i)
    for (std::size_t k = 0; k <= L / 2; ++k) psd[k] += std::norm(g.at(i, k));
  for (auto& v : psd) v /= static_cast<double>(frames);
  return psd;
}

// Keep only DFT bins within [lo, hi] Hz.
std::vector<double> band_pass(const std::vector<double>& x, double fs, double lo, double hi) {
  std::size_t L = 1;
  while (L < x.size()) L <<= 1;
  std::vector<std::complex<double>> b(L);
  for (std::size_t i = 0; i < x.size(); ++i) b[i] = x[i];
  upam::dsp::fft_inplace(b, false);
  for (std::size_t k = 0; k < L; ++k) {
    const double f = static_cast<double>(std::min(k, L - k)) * fs / static_cast<double>(L);
    if (f < lo || f > hi) b[k] = 0;
  }
  upam::dsp::fft_inplace(b, true);
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = b[i].real() / static_cast<double>(L);
  return y;
}

double mean_square(const std::vector<double>& x, std::size_t a, std::size_t b) {
  double s = 0;
  for (std::size_t i = a; i < b; ++i) s += x[i] * x[i];
  return s / static_cast<double>(b - a);
}

}  // namespace

TEST(Dcall, LengthPeakAndMidpointRidge) {
  const auto c = synth_dcall({90, 35, 4.0, 1.0}, 250.0);
  ASSERT_EQ(c.samples.size(), 1000u);
  double peak = 0;
  for (double v : c.samples) peak = std::max(peak, std::abs(v));
  EXPECT_NEAR(peak, 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(c.t_end - c.t_start, 4.0);

  // frame centred on the midpoint
  const std::size_t L = 256;
  std::vector<double> seg(c.samples.begin() + 500 - L / 2, c.samples.begin() + 500 + L / 2);
  const auto g = upam::dsp::stft(seg, L, L, upam::dsp::Taper::hann);
  std::size_t best = 1;
  for (std::size_t f = 1; f < L / 2; ++f)
    if (std::abs(g.at(0, f)) > std::abs(g.at(0, best))) best = f;
  EXPECT_NEAR(static_cast<double>(best) * 250.0 / L, 62.5, 1.0);
}

TEST(Dcall, DegenerateAndInvalid) {
  const auto silent = synth_dcall({90, 35, 2.0, 0.0}, 250.0);
  for (double v : silent.samples) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(synth_dcall({35, 90, 2.0, 1.0}, 250.0), upam::DataError);
  EXPECT_THROW(synth_dcall({200, 35, 2.0, 1.0}, 250.0), upam::DataError);
}

TEST(Ambient, WhiteIsFlat) {
  SiteProfile p{"A", 2015, 0.0};
  const auto x = synth_ambient(p, 600.0, 250.0, {1, 0});
  const auto psd = welch_psd(x, 256);
  std::vector<double> band;
  for (std::size_t k = 0; k < psd.size(); ++k) {
    const double f = static_cast<double>(k) * 250.0 / 256.0;
    if (f >= 5 && f <= 120) band.push_back(10 * std::log10(psd[k]));
  }
  double mu = 0;
  for (double v : band) mu += v;
  mu /= static_cast<double>(band.size());
  for (double v : band) EXPECT_NEAR(v, mu, 3.0);
}

TEST(Ambient, SlopeRegression) {
  for (double target : {-6.0, -3.0, 3.0}) {
    SiteProfile p{"A", 2015, target};
    const auto x = synth_ambient(p, 600.0, 250.0, {2, 0});
    const auto psd = welch_psd(x, 256);
    double sx = 0, sy = 0, sxx = 0, sxy = 0, n = 0;
    for (std::size_t k = 0; k < psd.size(); ++k) {
      const double f = static_cast<double>(k) * 250.0 / 256.0;
      if (f < 5 || f > 120) continue;
      const double X = std::log2(f), Y = 10 * std::log10(psd[k]);
      sx += X, sy += Y, sxx += X * X, sxy += X * Y, n += 1;
    }
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    EXPECT_NEAR(slope, target, 1.5) << target;
  }
}

TEST(Ambient, DeterministicUnderSeed) {
  SiteProfile p{"A", 2015, -3.0};
  p.interference = {Interference::tonal_hum, Interference::impulsive_pulse, Interference::fm_confounder};
  EXPECT_EQ(synth_ambient(p, 60, 250, {5, 1}), synth_ambient(p, 60, 250, {5, 1}));
  EXPECT_NE(synth_ambient(p, 60, 250, {5, 1}), synth_ambient(p, 60, 250, {5, 2}));
}

TEST(Corpus, SnrWithinTwoDb) {
  SiteProfile p{"A", 2015, -3.0, 0.0, 0.0};
  p.calls_per_block = 60;
  CorpusConfig cfg;
  cfg.clips_per_block = 6;
  cfg.clip_seconds = 200;
  cfg.seed = 17;
  for (double target : {0.0, 6.0}) {
    p.snr_db = target;
    const upam::RandomState block{upam::derive_seed(cfg.seed, "block:A_2015", p.seed), 0};
    double sum = 0;
    std::size_t calls = 0;
    for (std::size_t c = 0; c < cfg.clips_per_block; ++c) {
      const upam::RandomState rs{block.seed, 1000 + c};
      const auto clip = synth_clip(p, cfg, 10, clip_id(p, c), rs);
      const auto ambient = synth_ambient(p, cfg.clip_seconds, 250.0, rs.child(10));
      const auto noise_band = band_pass(ambient, 250.0, 35.0, 90.0);
      for (const auto& a : clip.annotations) {
        const auto s = static_cast<std::size_t>(std::llround(a.t_start * 250.0));
        const auto e = static_cast<std::size_t>(std::llround(a.t_end * 250.0));
        std::vector<double> call(clip.samples.begin() + s, clip.samples.begin() + e);
        for (std::size_t i = 0; i < call.size(); ++i) call[i] -= ambient[s + i];
        sum += 10 * std::log10(mean_square(call, 0, call.size()) / mean_square(noise_band, s, e));
        ++calls;
      }
    }
    ASSERT_GE(calls, 50u);
    EXPECT_NEAR(sum / static_cast<double>(calls), target, 2.0);
  }
}

TEST(Corpus, SupportPatternAndZeroRate) {
  std::vector<SiteProfile> ps{{"Kerguelen", 2015}, {"Casey", 2017}, {"Balleny", 2015}, {"Quiet", 2016}};
  ps[0].calls_per_block = 118;
  ps[1].calls_per_block = 55;
  ps[2].calls_per_block = 5;
  ps[3].call_rate = 0;
  CorpusConfig cfg;
  cfg.clips_per_block = 10;
  cfg.clip_seconds = 150;
  const auto clips = generate_clips(ps, cfg);
  std::map<std::string, std::size_t> counts;
  for (const auto& c : clips) counts[c.site] += c.annotations.size();
  EXPECT_EQ(counts["Kerguelen"], 118u);
  EXPECT_EQ(counts["Casey"], 55u);
  EXPECT_EQ(counts["Balleny"], 5u);
  EXPECT_EQ(counts["Quiet"], 0u);
  EXPECT_THROW(generate_clips({ps[0]}, cfg), upam::DataError);
  EXPECT_THROW(generate_clips({ps[0], ps[0]}, cfg), upam::DataError);
}

TEST(Corpus, EveryAnnotationYieldsAPositiveWindow) {
  std::vector<SiteProfile> ps{{"A", 2015, -3.0}, {"B", 2016, 0.0}};
  ps[0].calls_per_block = 30;
  ps[1].calls_per_block = 30;
  CorpusConfig cfg;
  cfg.clips_per_block = 3;
  cfg.clip_seconds = 150;
  const auto fc = upam::dsp::FrontendConfig::desk();
  for (const auto& clip : generate_clips(ps, cfg)) {
    const auto segs = upam::dsp::segment(clip, fc.window, fc.hop);
    for (const auto& a : clip.annotations) {
      bool hit = false;
      for (const auto& s : segs) {
        const upam::dsp::Annotation one[] = {a};
        hit |= upam::dsp::label_window(s, one, clip.sample_rate, fc.policy) == 1;
      }
      EXPECT_TRUE(hit) << clip.id << " [" << a.t_start << ", " << a.t_end << "]";
    }
  }
}

TEST(Corpus, ManifestRoundTripAndCache) {
  const auto dir = fs::temp_directory_path() / "upam_synth_test";
  fs::remove_all(dir);
  std::vector<SiteProfile> ps{{"A", 2015, -3.0}, {"B", 2016, 0.0}};
  ps[0].calls_per_block = 6;
  ps[1].calls_per_block = 2;
  CorpusConfig cfg;
  cfg.clips_per_block = 2;
  cfg.clip_seconds = 60;
  const auto clips = generate_clips(ps, cfg);
  const auto manifest = write_corpus(clips, dir);
  const auto recs = read_manifest(manifest);
  ASSERT_EQ(recs.size(), 4u);
  for (const auto& r : recs) {
    EXPECT_TRUE(fs::exists(dir / r.path));
    EXPECT_DOUBLE_EQ(r.duration_s, 60.0);
    for (const auto& a : r.annotations) {
      EXPECT_GE(a.t_start, 0.0);
      EXPECT_LE(a.t_end, r.duration_s);
    }
  }
  EXPECT_EQ(recs[0].annotations.size(), clips[0].annotations.size());

  const auto fc = upam::dsp::FrontendConfig::desk();
  const auto d1 = upam::pipeline::load_dataset(manifest, fc, dir / "cache");
  const auto d2 = upam::pipeline::load_dataset(manifest, fc, dir / "cache");
  ASSERT_EQ(d1.windows.size(), d2.windows.size());
  ASSERT_EQ(d1.windows.size(), 4u * 13u);
  for (std::size_t i = 0; i < d1.windows.size(); ++i) {
    EXPECT_EQ(d1.windows[i].values, d2.windows[i].values);
    EXPECT_EQ(d1.windows[i].label, d2.windows[i].label);
  }
  EXPECT_EQ(d1.clips[0].annotations, 3u);
  fs::remove_all(dir);
  EXPECT_THROW(read_manifest(dir / "manifest.jsonl"), upam::IoError);
}

TEST(Corpus, RegenerationIsBitExact) {
  std::vector<SiteProfile> ps{{"A", 2015, -3.0}, {"B", 2016, 0.0}};
  ps[1].interference = {Interference::fm_confounder};
  CorpusConfig cfg;
  cfg.clips_per_block = 2;
  cfg.clip_seconds = 60;
  cfg.seed = 99;
  const auto a = generate_clips(ps, cfg), b = generate_clips(ps, cfg);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].samples, b[i].samples);
}

TEST(Corpus, NoiseSlopeShiftsSpectrogramPopulation) {
  std::vector<SiteProfile> ps{{"A", 2015, -6.0}, {"B", 2015, 3.0}};
  ps[0].calls_per_block = ps[1].calls_per_block = 0;
  CorpusConfig cfg;
  cfg.clips_per_block = 4;
  cfg.clip_seconds = 120;
  const auto d = upam::pipeline::build_dataset(generate_clips(ps, cfg), upam::dsp::FrontendConfig::desk());
  auto population_mean = [&](const std::string& site, int half) {
    std::vector<double> m(d.windows.front().values.size(), 0.0);
    double n = 0;
    std::size_t i = 0;
    for (const auto& w : d.windows) {
      if (w.clip_id.rfind(site, 0) != 0) continue;
      if (half >= 0 && static_cast<int>(i++ % 2) != half) continue;
      for (std::size_t k = 0; k < m.size(); ++k) m[k] += w.values[k];
      n += 1;
    }
    for (auto& v : m) v /= n;
    return m;
  };
  auto l2 = [](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
    return std::sqrt(s);
  };
  const double between = l2(population_mean("A", -1), population_mean("B", -1));
  const double within = std::max(l2(population_mean("A", 0), population_mean("A", 1)),
                                 l2(population_mean("B", 0), population_mean("B", 1)));
  EXPECT_GT(between, within);
}
