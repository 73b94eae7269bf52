#include "rstan/harness/clips.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rstan/core/errors.hpp"
#include "rstan/core/random.hpp"

namespace rstan::harness {

int task_label(int pain_level, Task task) {
  if (task == Task::kFiveClass) return pain_level;
  if (pain_level == 0) return 0;
  if (pain_level == data::kNumPainLevels - 1) return 1;
  return -1;
}

std::vector<std::size_t> task_samples(const data::Dataset& data, Task task) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (task_label(data.records()[i].label, task) >= 0) out.push_back(i);
  return out;
}

ClipSet build_clips(const data::Dataset& data, std::span<const std::size_t> samples, Task task,
                    const data::SamplerConfig& sampler, std::uint64_t seed) {
  ClipSet set;
  for (std::size_t i : samples) {
    const int label = task_label(data.records().at(i).label, task);
    if (label < 0) continue;
    const data::VideoSample v = data.load(i);
    for (const auto& idx : data::sample_indices(v.frames.dim(0), sampler, derive_seed(seed, data.records()[i].index))) {
      Clip c;
      c.sample = i;
      c.subject = v.subject_id;
      c.label = label;
      c.frames = data::gather_frames(v.frames, idx);
      c.pulse = data::gather_samples(v.pulse, idx);
      set.clips.push_back(std::move(c));
    }
  }
  if (set.clips.empty()) throw ContractError("no clips for the requested task and samples");
  set.length = set.clips[0].frames.dim(0);
  set.height = set.clips[0].frames.dim(1);
  set.width = set.clips[0].frames.dim(2);
  return set;
}

Batch make_batch(const ClipSet& set, std::span<const std::size_t> indices) {
  const std::size_t B = indices.size(), L = set.length, hw = set.height * set.width;
  Batch b;
  b.video = Tensor({B, 1, L, set.height, set.width});
  b.signal = Tensor({B, L});
  for (std::size_t k = 0; k < B; ++k) {
    const Clip& c = set.clips.at(indices[k]);
    std::copy_n(c.frames.raw(), L * hw, b.video.raw() + k * L * hw);
    const double mean = std::accumulate(c.pulse.begin(), c.pulse.end(), 0.0) / double(L);
    double ss = 0.0;
    for (double v : c.pulse) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / double(L));
    for (std::size_t t = 0; t < L; ++t) b.signal[k * L + t] = sd > 0 ? (c.pulse[t] - mean) / sd : 0.0;
    b.labels.push_back(c.label);
  }
  return b;
}

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(v[i - 1], v[rng.index(i)]);
  return v;
}

}  // namespace rstan::harness
