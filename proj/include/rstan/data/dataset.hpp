#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rstan/data/synth.hpp"

namespace rstan::data {

struct SampleRecord {
  std::size_t index = 0;
  int subject_id = 0;
  int label = 0;
  std::string video_path;  // relative to the manifest; empty for in-memory sets
  std::string pulse_path;
};

// A labelled collection of videos, either rendered on demand from a
// generator config or read from tensor files listed in a manifest.
class Dataset {
 public:
  static Dataset synthetic(const GeneratorConfig& cfg);
  static Dataset open(const std::filesystem::path& manifest);

  const std::vector<SampleRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  VideoSample load(std::size_t i) const;
  std::vector<int> subject_of() const;
  const std::optional<GeneratorConfig>& generator() const { return generator_; }
  double fps() const { return fps_; }

  // Writes videos/, pulses/ and manifest.json under dir.
  void save(const std::filesystem::path& dir) const;

 private:
  std::vector<SampleRecord> records_;
  std::optional<GeneratorConfig> generator_;
  std::vector<SyntheticSubject> subjects_;
  std::filesystem::path root_;
  double fps_ = 25.0;
};

// Deterministic render of sample i of a generated set.
VideoSample generate_sample(const GeneratorConfig& cfg, const SyntheticSubject& subject, std::size_t index,
                            int label);
std::vector<SyntheticSubject> generate_subjects(const GeneratorConfig& cfg);
int sample_label(std::size_t index);

void to_json(nlohmann::json& j, const GeneratorConfig& c);
void from_json(const nlohmann::json& j, GeneratorConfig& c);

inline constexpr int kManifestVersion = 1;

}  // namespace rstan::data
