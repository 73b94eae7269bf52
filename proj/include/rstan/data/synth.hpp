#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "rstan/core/tensor.hpp"

namespace rstan::data {

inline constexpr int kNumPainLevels = 5;  // T0..T4

struct Pulse {
  std::vector<double> samples;     // zero mean, unit variance
  std::vector<double> peak_times;  // seconds, every systolic peak inside the window
};

// Quasi-periodic blood volume pulse. Successive peak intervals are drawn
// i.i.d. from Normal(60/hr, jitter_std), redrawn while non-positive. Each beat
// falls for 70% of its interval and rises for the remaining 30%.
Pulse generate_pulse(double duration_s, double hr, double ibi_jitter_std, double sample_rate, std::uint64_t seed);

struct SyntheticSubject {
  int id = 0;
  double baseline_hr = 70.0;
  Tensor base_face;           // (H, W)
  Tensor roi_mask;            // (H, W) in [0, 1]; forehead and cheeks
  Tensor expression_pattern;  // (H, W) in [-1, 1]; brows and mouth
  double pulse_amplitude = 0.02;
  double noise_std = 0.02;
  double expressiveness = 1.0;  // scales every expression of this subject
};

// Generator knobs. Profile "A" is the default synthetic set; "B" shifts
// brightness, noise, heart rate and face layout for cross-distribution runs.
struct GeneratorConfig {
  std::string profile = "A";
  std::size_t subjects = 20;
  std::size_t clips_per_subject = 25;
  std::size_t frames = 128;
  std::size_t size = 28;
  double fps = 25.0;
  std::uint64_t seed = 7;

  double hr_min = 55.0, hr_max = 95.0;
  double pulse_amplitude_min = 0.02, pulse_amplitude_max = 0.04;
  double noise_min = 0.01, noise_max = 0.025;
  double expressiveness_min = 0.0, expressiveness_max = 1.0;
  double max_expression = 0.25;  // intensity change at T4 for expressiveness 1
  double brightness = 0.0;
  double layout_shift = 0.0;  // vertical face offset, fraction of the frame

  static GeneratorConfig from_profile(const std::string& name);
  void validate() const;
};

// Per-label pulse statistics: T3 and T4 raise the heart rate, jitter grows
// with the label and is smallest at T0.
double label_hr_boost(int label);
double label_ibi_jitter(int label);
double expression_amplitude(const SyntheticSubject& s, int label, double max_expression);

SyntheticSubject make_subject(int id, const GeneratorConfig& cfg, std::uint64_t seed);

struct VideoSample {
  Tensor frames;  // (T, H, W) in [0, 1]
  int label = 0;
  int subject_id = 0;
  std::vector<double> pulse;  // length T
  double clipped_fraction = 0.0;
};

// Onset-apex-offset bump in [0, 1] over frames, starting in the latter half.
std::vector<double> expression_envelope(std::size_t frames, double onset_fraction);

// frame_t = base + amplitude * pulse[t] * roi + expr(label) * envelope(t) *
// pattern + noise, clipped to [0, 1].
VideoSample render_video(const SyntheticSubject& subject, const std::vector<double>& pulse, int label,
                         std::size_t frames, double max_expression, std::uint64_t seed);

// Mean intensity over roi_mask > 0.5, one value per frame.
std::vector<double> roi_mean_series(const VideoSample& video, const Tensor& roi_mask);

}  // namespace rstan::data
