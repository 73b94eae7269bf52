#include "rstan/data/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <spdlog/spdlog.h>

#include "rstan/core/errors.hpp"
#include "rstan/core/random.hpp"

namespace rstan::data {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kFall = 0.7;  // fraction of each beat spent after the peak

double beat_shape(double u) {
  if (u < kFall) return 0.5 * (1.0 + std::cos(kPi * u / kFall));
  return 0.5 * (1.0 - std::cos(kPi * (u - kFall) / (1.0 - kFall)));
}

double draw_interval(Rng& rng, double mean, double stddev) {
  for (;;) {
    const double v = rng.normal(mean, stddev);
    if (v > 0.0) return v;
  }
}

// Compact raised-cosine bump centred at (cy, cx) with radii (ry, rx), in
// frame-relative coordinates.
double blob(double y, double x, double cy, double cx, double ry, double rx) {
  const double d = std::hypot((y - cy) / ry, (x - cx) / rx);
  return d < 1.0 ? 0.5 * (1.0 + std::cos(kPi * d)) : 0.0;
}

}  // namespace

Pulse generate_pulse(double duration_s, double hr, double ibi_jitter_std, double sample_rate, std::uint64_t seed) {
  if (!(hr > 0)) throw ContractError("generate_pulse: heart rate must be positive");
  if (!(ibi_jitter_std >= 0)) throw ContractError("generate_pulse: jitter must be non-negative");
  if (!(sample_rate > 0) || !(duration_s > 0)) throw ContractError("generate_pulse: duration and rate must be positive");
  const auto n = static_cast<std::size_t>(std::llround(duration_s * sample_rate));
  if (n < 2) throw ContractError("generate_pulse: fewer than 2 samples");

  Rng rng(seed);
  const double mean_ibi = 60.0 / hr;
  std::vector<double> peaks{-rng.uniform() * mean_ibi};
  const double end = double(n - 1) / sample_rate;
  while (peaks.back() <= end) peaks.push_back(peaks.back() + draw_interval(rng, mean_ibi, ibi_jitter_std));

  Pulse p;
  p.samples.resize(n);
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = double(i) / sample_rate;
    while (peaks[k + 1] <= t) ++k;
    p.samples[i] = beat_shape((t - peaks[k]) / (peaks[k + 1] - peaks[k]));
  }
  for (double t : peaks)
    if (t >= 0.0 && t <= end) p.peak_times.push_back(t);

  const double mean = std::accumulate(p.samples.begin(), p.samples.end(), 0.0) / double(n);
  double ss = 0.0;
  for (double v : p.samples) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / double(n));
  if (!(sd > 0)) throw DegenerateSignalError("generate_pulse: window shorter than one beat phase");
  for (double& v : p.samples) v = (v - mean) / sd;
  return p;
}

GeneratorConfig GeneratorConfig::from_profile(const std::string& name) {
  GeneratorConfig c;
  if (name == "A") return c;
  if (name == "B") {
    c.profile = "B";
    c.hr_min = 65.0;
    c.hr_max = 110.0;
    c.noise_min = 0.02;
    c.noise_max = 0.035;
    c.brightness = 0.12;
    c.layout_shift = 0.04;
    return c;
  }
  throw ConfigError("unknown generator profile '" + name + "' (expected A or B)");
}

void GeneratorConfig::validate() const {
  if (subjects == 0 || clips_per_subject == 0) throw ConfigError("generator needs at least one subject and clip");
  if (size < 8) throw ConfigError("frame size must be at least 8, got " + std::to_string(size));
  if (frames < 2) throw ConfigError("frames must be at least 2");
  if (!(fps > 0)) throw ConfigError("fps must be positive");
  if (hr_min < 45.0 || hr_max > 120.0 || hr_min > hr_max)
    throw ConfigError("baseline heart rate range must lie within [45, 120]");
  if (hr_max + label_hr_boost(kNumPainLevels - 1) > 200.0) throw ConfigError("heart rate range too high");
  if (noise_min < 0 || noise_min > noise_max) throw ConfigError("invalid noise range");
  if (pulse_amplitude_min < 0 || pulse_amplitude_min > pulse_amplitude_max)
    throw ConfigError("invalid pulse amplitude range");
  if (expressiveness_min < 0 || expressiveness_min > expressiveness_max)
    throw ConfigError("invalid expressiveness range");
}

double label_hr_boost(int label) { return label >= 3 ? 6.0 * (label - 2) : 0.0; }

double label_ibi_jitter(int label) { return 0.01 + 0.03 * label; }

double expression_amplitude(const SyntheticSubject& s, int label, double max_expression) {
  return s.expressiveness * max_expression * double(label) / double(kNumPainLevels - 1);
}

SyntheticSubject make_subject(int id, const GeneratorConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t n = cfg.size;
  SyntheticSubject s;
  s.id = id;
  s.baseline_hr = rng.uniform(cfg.hr_min, cfg.hr_max);
  s.pulse_amplitude = rng.uniform(cfg.pulse_amplitude_min, cfg.pulse_amplitude_max);
  s.noise_std = rng.uniform(cfg.noise_min, cfg.noise_max);
  s.expressiveness = rng.uniform(cfg.expressiveness_min, cfg.expressiveness_max);

  const double dy = cfg.layout_shift + rng.uniform(-0.015, 0.015);
  const double dx = rng.uniform(-0.015, 0.015);
  double fx[3], fy[3], ph[3];
  for (int k = 0; k < 3; ++k) {
    fx[k] = rng.uniform(0.5, 2.0);
    fy[k] = rng.uniform(0.5, 2.0);
    ph[k] = rng.uniform(0.0, 2 * kPi);
  }
  const double tone = rng.uniform(0.38, 0.5) + cfg.brightness;

  s.base_face = Tensor({n, n});
  s.roi_mask = Tensor({n, n});
  s.expression_pattern = Tensor({n, n});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      const double y = (double(r) + 0.5) / double(n) - dy, x = (double(c) + 0.5) / double(n) - dx;
      double face = tone + 0.12 * blob(y, x, 0.5, 0.5, 0.55, 0.42);
      for (int k = 0; k < 3; ++k) face += 0.02 * std::cos(2 * kPi * (fx[k] * x + fy[k] * y) + ph[k]);
      s.base_face[r * n + c] = face;
      // Forehead and both cheeks; brows and mouth stay outside their support.
      s.roi_mask[r * n + c] = std::max({blob(y, x, 0.2, 0.5, 0.09, 0.26), blob(y, x, 0.6, 0.27, 0.09, 0.12),
                                        blob(y, x, 0.6, 0.73, 0.09, 0.12)});
      s.expression_pattern[r * n + c] = -blob(y, x, 0.38, 0.34, 0.06, 0.12) - blob(y, x, 0.38, 0.66, 0.06, 0.12) +
                                        blob(y, x, 0.84, 0.5, 0.07, 0.22);
    }
  }
  return s;
}

std::vector<double> expression_envelope(std::size_t frames, double onset_fraction) {
  std::vector<double> e(frames, 0.0);
  const double t = double(frames);
  const double on = onset_fraction * t, rise = 0.15 * t, hold = 0.1 * t, fall = 0.15 * t;
  for (std::size_t i = 0; i < frames; ++i) {
    const double u = double(i) - on;
    if (u <= 0.0) continue;
    if (u < rise)
      e[i] = 0.5 * (1.0 - std::cos(kPi * u / rise));
    else if (u < rise + hold)
      e[i] = 1.0;
    else if (u < rise + hold + fall)
      e[i] = 0.5 * (1.0 + std::cos(kPi * (u - rise - hold) / fall));
  }
  return e;
}

VideoSample render_video(const SyntheticSubject& subject, const std::vector<double>& pulse, int label,
                         std::size_t frames, double max_expression, std::uint64_t seed) {
  if (pulse.size() != frames)
    throw ContractError("render_video: pulse has " + std::to_string(pulse.size()) + " samples for " +
                        std::to_string(frames) + " frames");
  if (label < 0 || label >= kNumPainLevels) throw ContractError("render_video: label out of range");
  const std::size_t h = subject.base_face.dim(0), w = subject.base_face.dim(1), hw = h * w;
  Rng rng(seed);
  const double amp = expression_amplitude(subject, label, max_expression);
  const std::vector<double> env = expression_envelope(frames, rng.uniform(0.5, 0.6));

  VideoSample v;
  v.label = label;
  v.subject_id = subject.id;
  v.pulse = pulse;
  v.frames = Tensor({frames, h, w});
  std::size_t clipped = 0;
  for (std::size_t t = 0; t < frames; ++t) {
    const double a = subject.pulse_amplitude * pulse[t], b = amp * env[t];
    for (std::size_t i = 0; i < hw; ++i) {
      double x = subject.base_face[i] + a * subject.roi_mask[i] + b * subject.expression_pattern[i];
      if (subject.noise_std > 0) x += rng.normal(0.0, subject.noise_std);
      if (x < 0.0 || x > 1.0) {
        ++clipped;
        x = std::clamp(x, 0.0, 1.0);
      }
      v.frames[t * hw + i] = x;
    }
  }
  v.clipped_fraction = double(clipped) / double(frames * hw);
  if (v.clipped_fraction > 0.01)
    spdlog::warn("render_video: subject {} label {} clipped {:.2f}% of pixels", subject.id, label,
                 100.0 * v.clipped_fraction);
  return v;
}

std::vector<double> roi_mean_series(const VideoSample& video, const Tensor& roi_mask) {
  const std::size_t frames = video.frames.dim(0), hw = roi_mask.size();
  std::vector<std::size_t> roi;
  for (std::size_t i = 0; i < hw; ++i)
    if (roi_mask[i] > 0.5) roi.push_back(i);
  if (roi.empty()) throw ContractError("roi_mean_series: empty ROI");
  std::vector<double> out(frames);
  for (std::size_t t = 0; t < frames; ++t) {
    double total = 0.0;
    for (std::size_t i : roi) total += video.frames[t * hw + i];
    out[t] = total / double(roi.size());
  }
  return out;
}

}  // namespace rstan::data
