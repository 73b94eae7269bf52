#include "rstan/data/sampling.hpp"

#include <algorithm>
#include <set>

#include "rstan/core/errors.hpp"
#include "rstan/core/random.hpp"

namespace rstan::data {

std::string to_string(SamplerMode mode) {
  switch (mode) {
    case SamplerMode::kDownsampled: return "downsampled";
    case SamplerMode::kRandom: return "random64";
    case SamplerMode::kMultisegment: return "multisegment";
  }
  return "?";
}

SamplerMode parse_sampler_mode(const std::string& name) {
  if (name == "downsampled") return SamplerMode::kDownsampled;
  if (name == "random64" || name == "random") return SamplerMode::kRandom;
  if (name == "multisegment") return SamplerMode::kMultisegment;
  throw ConfigError("unknown sampler mode '" + name + "' (expected downsampled, random64 or multisegment)");
}

std::vector<std::vector<std::size_t>> sample_indices(std::size_t frames, const SamplerConfig& cfg,
                                                     std::uint64_t seed) {
  const std::size_t L = cfg.clip_length;
  if (L == 0) throw ConfigError("clip length must be positive");
  const std::size_t available = frames > cfg.omit_first ? frames - cfg.omit_first : 0;
  if (available < L)
    throw ContractError("sampler needs " + std::to_string(L) + " frames after omitting " +
                        std::to_string(cfg.omit_first) + ", video has " + std::to_string(frames));
  std::vector<std::vector<std::size_t>> clips;
  auto window = [&](std::size_t start) {
    std::vector<std::size_t> idx(L);
    for (std::size_t i = 0; i < L; ++i) idx[i] = start + i;
    clips.push_back(std::move(idx));
  };
  switch (cfg.mode) {
    case SamplerMode::kDownsampled: {
      std::vector<std::size_t> idx(L);
      for (std::size_t i = 0; i < L; ++i) idx[i] = cfg.omit_first + i * available / L;
      clips.push_back(std::move(idx));
      break;
    }
    case SamplerMode::kRandom: {
      Rng rng(seed);
      window(cfg.omit_first + rng.index(available - L + 1));
      break;
    }
    case SamplerMode::kMultisegment: {
      const std::size_t stride = cfg.segment_stride ? cfg.segment_stride : std::max<std::size_t>(1, L / 2);
      for (std::size_t s = cfg.omit_first; s + L <= frames; s += stride) window(s);
      break;
    }
  }
  return clips;
}

Tensor gather_frames(const Tensor& video, std::span<const std::size_t> indices) {
  if (video.rank() == 0) throw DimensionError("gather_frames needs a (T, ...) tensor");
  Shape s = video.shape();
  const std::size_t frames = s[0], stride = video.size() / std::max<std::size_t>(1, frames);
  s[0] = indices.size();
  Tensor out(s);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= frames) throw ContractError("gather_frames: index out of range");
    std::copy_n(video.raw() + indices[i] * stride, stride, out.raw() + i * stride);
  }
  return out;
}

std::vector<double> gather_samples(std::span<const double> signal, std::span<const std::size_t> indices) {
  std::vector<double> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= signal.size()) throw ContractError("gather_samples: index out of range");
    out[i] = signal[indices[i]];
  }
  return out;
}

std::vector<Tensor> sample_frames(const Tensor& video, const SamplerConfig& cfg, std::uint64_t seed) {
  std::vector<Tensor> clips;
  for (const auto& idx : sample_indices(video.dim(0), cfg, seed)) clips.push_back(gather_frames(video, idx));
  return clips;
}

namespace {

std::vector<int> distinct_subjects(std::span<const int> subject_of) {
  std::set<int> s(subject_of.begin(), subject_of.end());
  return {s.begin(), s.end()};
}

Fold make_fold(std::span<const int> subject_of, std::vector<int> test_subjects) {
  std::sort(test_subjects.begin(), test_subjects.end());
  Fold f;
  for (std::size_t i = 0; i < subject_of.size(); ++i) {
    if (std::binary_search(test_subjects.begin(), test_subjects.end(), subject_of[i]))
      f.test.push_back(i);
    else
      f.train.push_back(i);
  }
  f.test_subjects = std::move(test_subjects);
  return f;
}

}  // namespace

std::vector<Fold> split_loso(std::span<const int> subject_of) {
  const std::vector<int> subjects = distinct_subjects(subject_of);
  if (subjects.size() < 2) throw ContractError("leave-one-subject-out needs at least 2 subjects");
  std::vector<Fold> folds;
  for (int s : subjects) folds.push_back(make_fold(subject_of, {s}));
  return folds;
}

std::vector<Fold> split_kfold(std::span<const int> subject_of, std::size_t k, std::uint64_t seed) {
  std::vector<int> subjects = distinct_subjects(subject_of);
  if (k < 2) throw ContractError("k-fold needs k >= 2, got " + std::to_string(k));
  if (subjects.size() < k)
    throw ContractError("k-fold with k=" + std::to_string(k) + " needs at least " + std::to_string(k) +
                        " subjects, found " + std::to_string(subjects.size()));
  Rng rng(seed);
  for (std::size_t i = subjects.size(); i > 1; --i) std::swap(subjects[i - 1], subjects[rng.index(i)]);
  std::vector<Fold> folds;
  const std::size_t n = subjects.size();
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t lo = f * n / k, hi = (f + 1) * n / k;
    folds.push_back(make_fold(subject_of, std::vector<int>(subjects.begin() + long(lo), subjects.begin() + long(hi))));
  }
  return folds;
}

Fold split_holdout(std::span<const int> subject_of, std::span<const int> test_subjects) {
  Fold f = make_fold(subject_of, {test_subjects.begin(), test_subjects.end()});
  if (f.test.empty() || f.train.empty()) throw ContractError("holdout split leaves an empty side");
  return f;
}

}  // namespace rstan::data
