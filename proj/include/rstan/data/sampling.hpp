#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rstan/core/tensor.hpp"

namespace rstan::data {

enum class SamplerMode { kDownsampled, kRandom, kMultisegment };

std::string to_string(SamplerMode mode);
SamplerMode parse_sampler_mode(const std::string& name);

struct SamplerConfig {
  SamplerMode mode = SamplerMode::kDownsampled;
  std::size_t clip_length = 64;
  std::size_t omit_first = 10;
  // Multisegment stride; 0 means clip_length / 2.
  std::size_t segment_stride = 0;
};

// Frame indices of every clip drawn from a video of `frames` frames.
// downsampled: one clip, index omit + floor(i * available / L).
// random: one contiguous window at a seed-determined start.
// multisegment: contiguous windows from omit_first at the segment stride.
std::vector<std::vector<std::size_t>> sample_indices(std::size_t frames, const SamplerConfig& cfg,
                                                     std::uint64_t seed);

// Gathers frames along the leading axis of a (T, ...) tensor.
Tensor gather_frames(const Tensor& video, std::span<const std::size_t> indices);
std::vector<double> gather_samples(std::span<const double> signal, std::span<const std::size_t> indices);

std::vector<Tensor> sample_frames(const Tensor& video, const SamplerConfig& cfg, std::uint64_t seed);

struct Fold {
  std::vector<int> test_subjects;
  std::vector<std::size_t> train;  // sample indices
  std::vector<std::size_t> test;
};

// subject_of[i] is the subject of sample i. Folds are subject-disjoint.
std::vector<Fold> split_loso(std::span<const int> subject_of);
std::vector<Fold> split_kfold(std::span<const int> subject_of, std::size_t k, std::uint64_t seed);
// The given subjects form the test set; the rest train.
Fold split_holdout(std::span<const int> subject_of, std::span<const int> test_subjects);

}  // namespace rstan::data
