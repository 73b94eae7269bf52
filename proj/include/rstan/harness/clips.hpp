#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "rstan/core/tensor.hpp"
#include "rstan/data/dataset.hpp"
#include "rstan/data/sampling.hpp"
#include "rstan/harness/config.hpp"

namespace rstan::harness {

// Label used by a task, or -1 when the sample is not part of it.
int task_label(int pain_level, Task task);

// Dataset indices of the samples a task uses.
std::vector<std::size_t> task_samples(const data::Dataset& data, Task task);

struct Clip {
  std::size_t sample = 0;
  int subject = 0;
  int label = 0;           // task label
  Tensor frames;           // (L, H, W)
  std::vector<double> pulse;  // (L)
};

struct ClipSet {
  std::vector<Clip> clips;
  std::size_t length = 0, height = 0, width = 0;
};

// Samples every listed video with the sampler; every clip inherits its
// video's label. Clip draws are seeded per sample index.
ClipSet build_clips(const data::Dataset& data, std::span<const std::size_t> samples, Task task,
                    const data::SamplerConfig& sampler, std::uint64_t seed);

struct Batch {
  Tensor video;   // (B, 1, L, H, W)
  Tensor signal;  // (B, L): standardized ground-truth pulse
  std::vector<int> labels;
};

Batch make_batch(const ClipSet& set, std::span<const std::size_t> indices);

// Fisher-Yates with the project RNG.
std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed);

}  // namespace rstan::harness
