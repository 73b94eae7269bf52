#include <gtest/gtest.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "rstan/core/errors.hpp"
#include "rstan/core/random.hpp"
#include "rstan/data/dataset.hpp"
#include "rstan/data/sampling.hpp"
#include "rstan/data/tensor_io.hpp"
#include "rstan/metrics/metrics.hpp"

using namespace rstan;
using namespace rstan::data;
namespace fs = std::filesystem;

namespace {

double sample_std(const std::vector<double>& v) {
  double m = 0;
  for (double x : v) m += x;
  m /= double(v.size());
  double ss = 0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / double(v.size() - 1));
}

fs::path temp_path(const std::string& name) { return fs::temp_directory_path() / ("rstan_test_" + name); }

GeneratorConfig small_config() {
  GeneratorConfig c;
  c.subjects = 4;
  c.clips_per_subject = 5;
  c.frames = 40;
  c.size = 16;
  return c;
}

metrics::PeakOptions beat_options(double hr, double rate) {
  // Half the mean interval keeps jittered beats apart without merging them.
  return {.min_distance = std::size_t(0.5 * 60.0 / hr * rate), .min_prominence = {}};
}

}  // namespace

TEST(Pulse, PeriodicWithoutJitter) {
  for (double hr : {48.0, 60.0, 75.0, 110.0}) {
    const double rate = 25.0;
    const Pulse p = generate_pulse(30.0, hr, 0.0, rate, 3);
    const auto s = metrics::detect_peaks(p.samples, rate, beat_options(hr, rate));
    ASSERT_GT(s.intervals.size(), 10u);
    for (double ibi : s.intervals) EXPECT_NEAR(ibi, 60.0 / hr, 1.0 / rate + 1e-12);
  }
}

TEST(Pulse, BeatCountAndNormalisation) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Pulse p = generate_pulse(10.0, 60.0, 0.0, 25.0, seed);
    EXPECT_EQ(p.samples.size(), 250u);
    const auto s = metrics::detect_peaks(p.samples, 25.0, beat_options(60.0, 25.0));
    EXPECT_NEAR(double(s.peak_indices.size()), 10.0, 1.0);
    double m = 0, ss = 0;
    for (double v : p.samples) m += v;
    m /= 250.0;
    for (double v : p.samples) ss += (v - m) * (v - m);
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(ss / 250.0, 1.0, 1e-12);
  }
}

TEST(Pulse, DeterministicInSeed) {
  const Pulse a = generate_pulse(8.0, 70.0, 0.1, 25.0, 42);
  const Pulse b = generate_pulse(8.0, 70.0, 0.1, 25.0, 42);
  const Pulse c = generate_pulse(8.0, 70.0, 0.1, 25.0, 43);
  EXPECT_EQ(a.samples, b.samples);
  EXPECT_NE(a.samples, c.samples);
}

TEST(Pulse, JitterRecoveredFromPeaks) {
  for (double sigma : {0.05, 0.1, 0.15}) {
    const double rate = 25.0, hr = 60.0;
    const Pulse p = generate_pulse(600.0, hr, sigma, rate, 5);
    const auto s = metrics::detect_peaks(p.samples, rate, beat_options(hr, rate));
    ASSERT_GT(s.intervals.size(), 400u);
    EXPECT_NEAR(sample_std(s.intervals), sigma, 0.25 * sigma);
  }
}

TEST(Pulse, IntervalsArePositiveAndPeaksInsideWindow) {
  // Jitter comparable to the mean forces many redraws.
  const Pulse p = generate_pulse(20.0, 100.0, 0.5, 25.0, 6);
  for (std::size_t i = 1; i < p.peak_times.size(); ++i) EXPECT_GT(p.peak_times[i], p.peak_times[i - 1]);
  for (double t : p.peak_times) {
    EXPECT_GE(t, 0.0);
    EXPECT_LE(t, 20.0);
  }
  EXPECT_THROW(generate_pulse(5.0, 0.0, 0.0, 25.0, 1), ContractError);
  EXPECT_THROW(generate_pulse(5.0, 60.0, -0.1, 25.0, 1), ContractError);
}

TEST(Subject, FieldsHaveFrameShapeAndRange) {
  const GeneratorConfig cfg;
  for (int id = 0; id < 10; ++id) {
    const SyntheticSubject s = make_subject(id, cfg, 100 + id);
    EXPECT_EQ(s.roi_mask.shape(), (Shape{28, 28}));
    EXPECT_EQ(s.expression_pattern.shape(), (Shape{28, 28}));
    EXPECT_GE(s.baseline_hr, 45.0);
    EXPECT_LE(s.baseline_hr, 120.0);
    for (std::size_t i = 0; i < s.roi_mask.size(); ++i) {
      EXPECT_GE(s.roi_mask[i], 0.0);
      EXPECT_LE(s.roi_mask[i], 1.0);
      // Pulse regions and expression regions never overlap.
      EXPECT_TRUE(s.roi_mask[i] == 0.0 || s.expression_pattern[i] == 0.0);
    }
  }
}

TEST(Render, StaticCase) {
  SyntheticSubject s = make_subject(0, GeneratorConfig{}, 1);
  s.pulse_amplitude = 0.0;
  s.noise_std = 0.0;
  const std::vector<double> pulse(12, 0.7);
  const VideoSample v = render_video(s, pulse, 0, 12, 0.25, 2);
  const std::size_t hw = 28 * 28;
  for (std::size_t t = 0; t < 12; ++t)
    for (std::size_t i = 0; i < hw; ++i) EXPECT_EQ(v.frames[t * hw + i], s.base_face[i]);
}

TEST(Render, RoiMeanTracksPulse) {
  const GeneratorConfig cfg;
  SyntheticSubject s = make_subject(1, cfg, 3);
  s.expressiveness = 0.0;
  s.noise_std = cfg.noise_min;
  const Pulse p = generate_pulse(128 / 25.0, 70.0, 0.02, 25.0, 4);
  const VideoSample v = render_video(s, p.samples, 2, 128, 0.25, 5);
  EXPECT_GT(metrics::pearson(roi_mean_series(v, s.roi_mask), p.samples), 0.99);
}

TEST(Render, ExpressionDifferenceLocalised) {
  SyntheticSubject s = make_subject(2, GeneratorConfig{}, 6);
  s.expressiveness = 1.0;
  const Pulse p = generate_pulse(64 / 25.0, 70.0, 0.0, 25.0, 7);
  const VideoSample a = render_video(s, p.samples, 0, 64, 0.25, 8);
  const VideoSample b = render_video(s, p.samples, 4, 64, 0.25, 8);
  const std::size_t hw = 28 * 28;
  double max_diff = 0.0;
  for (std::size_t t = 0; t < 64; ++t)
    for (std::size_t i = 0; i < hw; ++i) {
      const double d = std::abs(a.frames[t * hw + i] - b.frames[t * hw + i]);
      if (s.expression_pattern[i] == 0.0) {
        EXPECT_EQ(d, 0.0);
      }
      max_diff = std::max(max_diff, d);
    }
  EXPECT_GT(max_diff, 0.1);
}

TEST(Render, EnvelopeLiesInLatterHalf) {
  const auto e = expression_envelope(100, 0.55);
  for (std::size_t i = 0; i <= 55; ++i) EXPECT_EQ(e[i], 0.0);
  EXPECT_EQ(*std::max_element(e.begin(), e.end()), 1.0);
  for (double v : e) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  GeneratorConfig cfg;
  SyntheticSubject s = make_subject(0, cfg, 1);
  EXPECT_EQ(expression_amplitude(s, 0, 0.25), 0.0);
  for (int l = 1; l < kNumPainLevels; ++l)
    EXPECT_GE(expression_amplitude(s, l, 0.25), expression_amplitude(s, l - 1, 0.25));
}

TEST(Sampler, DownsampledEveryOtherFrame) {
  const auto clips = sample_indices(138, {SamplerMode::kDownsampled, 64, 10, 0}, 1);
  ASSERT_EQ(clips.size(), 1u);
  for (std::size_t i = 0; i < 64; ++i) EXPECT_EQ(clips[0][i], 10 + 2 * i);
  EXPECT_EQ(clips[0].back(), 136u);
}

TEST(Sampler, DownsampledVerbatimWhenExact) {
  const auto clips = sample_indices(74, {SamplerMode::kDownsampled, 64, 10, 0}, 1);
  for (std::size_t i = 0; i < 64; ++i) EXPECT_EQ(clips[0][i], 10 + i);
}

TEST(Sampler, MultisegmentStride) {
  const auto clips = sample_indices(138, {SamplerMode::kMultisegment, 64, 10, 0}, 1);
  ASSERT_GE(clips.size(), 2u);
  EXPECT_EQ(clips[0].front(), 10u);
  EXPECT_EQ(clips[1].front(), 42u);
  for (const auto& c : clips) {
    EXPECT_EQ(c.size(), 64u);
    EXPECT_LE(c.back(), 137u);
  }
  EXPECT_EQ(sample_indices(128, {SamplerMode::kMultisegment, 64, 10, 0}, 1).size(), 2u);
}

TEST(Sampler, RandomWindowIsSeeded) {
  const SamplerConfig cfg{SamplerMode::kRandom, 64, 10, 0};
  std::set<std::size_t> starts;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const auto a = sample_indices(128, cfg, seed);
    EXPECT_EQ(a, sample_indices(128, cfg, seed));
    EXPECT_GE(a[0].front(), 10u);
    EXPECT_LE(a[0].back(), 127u);
    for (std::size_t i = 1; i < 64; ++i) EXPECT_EQ(a[0][i], a[0][i - 1] + 1);
    starts.insert(a[0].front());
  }
  EXPECT_GT(starts.size(), 5u);
}

TEST(Sampler, InsufficientFramesNamesCounts) {
  try {
    sample_indices(60, {SamplerMode::kDownsampled, 64, 10, 0}, 1);
    FAIL();
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("60"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("64"), std::string::npos);
  }
}

TEST(Sampler, GatherFrames) {
  Tensor v({5, 2, 2});
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = double(i);
  const std::vector<std::size_t> idx{4, 1};
  const Tensor g = gather_frames(v, idx);
  EXPECT_EQ(g.shape(), (Shape{2, 2, 2}));
  EXPECT_EQ(g[0], 16.0);
  EXPECT_EQ(g[4], 4.0);
}

TEST(Splits, LosoOneSubjectPerFold) {
  const std::vector<int> subj{0, 0, 1, 1, 2, 3, 4, 4};
  const auto folds = split_loso(subj);
  ASSERT_EQ(folds.size(), 5u);
  for (const Fold& f : folds) {
    EXPECT_EQ(f.test_subjects.size(), 1u);
    EXPECT_EQ(f.train.size() + f.test.size(), subj.size());
    for (std::size_t i : f.test) EXPECT_EQ(subj[i], f.test_subjects[0]);
    for (std::size_t i : f.train) EXPECT_NE(subj[i], f.test_subjects[0]);
  }
}

TEST(Splits, KfoldPartitionsSubjects) {
  std::vector<int> subj;
  for (int s = 0; s < 10; ++s)
    for (int c = 0; c < 3; ++c) subj.push_back(s);
  const auto folds = split_kfold(subj, 5, 9);
  ASSERT_EQ(folds.size(), 5u);
  std::set<int> seen;
  for (const Fold& f : folds) {
    EXPECT_EQ(f.test_subjects.size(), 2u);
    for (int s : f.test_subjects) EXPECT_TRUE(seen.insert(s).second);
    EXPECT_EQ(f.test.size(), 6u);
  }
  EXPECT_EQ(seen.size(), 10u);
  const auto again = split_kfold(subj, 5, 9);
  for (std::size_t k = 0; k < 5; ++k) EXPECT_EQ(again[k].test_subjects, folds[k].test_subjects);
  EXPECT_THROW(split_kfold(std::vector<int>{0, 1, 2}, 5, 1), ContractError);
}

TEST(TensorIo, RoundTripBitExact) {
  Rng rng(11);
  const fs::path p = temp_path("tensor.rtn");
  for (const Shape& s : {Shape{}, Shape{7}, Shape{2, 3, 4}, Shape{0, 3}}) {
    Tensor t = rng.normal_tensor(s, 0, 1e3);
    if (t.size()) t[0] = -0.0;
    write_tensor(p, t);
    const Tensor r = read_tensor(p);
    EXPECT_EQ(r.shape(), t.shape());
    for (std::size_t i = 0; i < t.size(); ++i)
      EXPECT_EQ(std::bit_cast<std::uint64_t>(r[i]), std::bit_cast<std::uint64_t>(t[i]));
  }
  fs::remove(p);
}

TEST(TensorIo, TruncationAndBadMagic) {
  const fs::path p = temp_path("trunc.rtn");
  write_tensor(p, Tensor({4, 4}, 1.5));
  const auto full = fs::file_size(p);
  fs::resize_file(p, full - 3);
  try {
    read_tensor(p);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("byte"), std::string::npos);
  }
  {
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    os << "NOTATENSORFILE..";
  }
  EXPECT_THROW(read_tensor(p), FormatError);
  fs::resize_file(p, 3);
  EXPECT_THROW(read_tensor(p), FormatError);
  fs::remove(p);
}

TEST(Dataset, BalancedAndDeterministic) {
  GeneratorConfig cfg = small_config();
  cfg.clips_per_subject = 7;  // 28 samples: not a multiple of 5
  const Dataset a = Dataset::synthetic(cfg), b = Dataset::synthetic(cfg);
  int counts[kNumPainLevels] = {};
  for (const SampleRecord& r : a.records()) ++counts[r.label];
  for (int c : counts) EXPECT_NEAR(double(c), 28.0 / 5.0, 1.0);
  for (std::size_t i : {0u, 13u, 27u}) {
    const VideoSample x = a.load(i), y = b.load(i);
    EXPECT_EQ(x.frames.values(), y.frames.values());
    EXPECT_EQ(x.pulse, y.pulse);
  }
}

TEST(Dataset, EverySampleCarriesRecoverablePulse) {
  GeneratorConfig cfg = small_config();
  cfg.frames = 128;
  cfg.size = 28;
  const Dataset d = Dataset::synthetic(cfg);
  const auto subjects = generate_subjects(cfg);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const VideoSample v = d.load(i);
    EXPECT_LE(v.clipped_fraction, 0.01);
    for (double x : v.frames.values()) {
      EXPECT_GE(x, 0.0);
      EXPECT_LE(x, 1.0);
    }
    EXPECT_GT(metrics::pearson(roi_mean_series(v, subjects[std::size_t(v.subject_id)].roi_mask), v.pulse), 0.9);
  }
}

TEST(Dataset, ManifestRoundTrip) {
  const fs::path dir = temp_path("dataset");
  fs::remove_all(dir);
  const Dataset d = Dataset::synthetic(small_config());
  d.save(dir);
  const Dataset r = Dataset::open(dir / "manifest.json");
  ASSERT_EQ(r.size(), d.size());
  ASSERT_TRUE(r.generator().has_value());
  EXPECT_EQ(r.generator()->seed, d.generator()->seed);
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_EQ(r.records()[i].label, d.records()[i].label);
    EXPECT_EQ(r.load(i).frames.values(), d.load(i).frames.values());
  }
  fs::remove_all(dir);
}
