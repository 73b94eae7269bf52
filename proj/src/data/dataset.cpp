#include "rstan/data/dataset.hpp"

#include <cstdio>
#include <fstream>

#include "rstan/core/errors.hpp"
#include "rstan/core/random.hpp"
#include "rstan/data/tensor_io.hpp"

namespace rstan::data {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kSubjectStream = 1;
constexpr std::uint64_t kSampleStream = 2;

std::string numbered(const char* dir, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s/%05zu.rtn", dir, i);
  return buf;
}

}  // namespace

void to_json(json& j, const GeneratorConfig& c) {
  j = json{{"profile", c.profile},
           {"subjects", c.subjects},
           {"clips_per_subject", c.clips_per_subject},
           {"frames", c.frames},
           {"size", c.size},
           {"fps", c.fps},
           {"seed", c.seed},
           {"hr_min", c.hr_min},
           {"hr_max", c.hr_max},
           {"pulse_amplitude_min", c.pulse_amplitude_min},
           {"pulse_amplitude_max", c.pulse_amplitude_max},
           {"noise_min", c.noise_min},
           {"noise_max", c.noise_max},
           {"expressiveness_min", c.expressiveness_min},
           {"expressiveness_max", c.expressiveness_max},
           {"max_expression", c.max_expression},
           {"brightness", c.brightness},
           {"layout_shift", c.layout_shift}};
}

void from_json(const json& j, GeneratorConfig& c) {
  c = GeneratorConfig::from_profile(j.value("profile", std::string("A")));
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("subjects", c.subjects);
  get("clips_per_subject", c.clips_per_subject);
  get("frames", c.frames);
  get("size", c.size);
  get("fps", c.fps);
  get("seed", c.seed);
  get("hr_min", c.hr_min);
  get("hr_max", c.hr_max);
  get("pulse_amplitude_min", c.pulse_amplitude_min);
  get("pulse_amplitude_max", c.pulse_amplitude_max);
  get("noise_min", c.noise_min);
  get("noise_max", c.noise_max);
  get("expressiveness_min", c.expressiveness_min);
  get("expressiveness_max", c.expressiveness_max);
  get("max_expression", c.max_expression);
  get("brightness", c.brightness);
  get("layout_shift", c.layout_shift);
}

int sample_label(std::size_t index) { return int(index % kNumPainLevels); }

std::vector<SyntheticSubject> generate_subjects(const GeneratorConfig& cfg) {
  cfg.validate();
  const std::uint64_t base = derive_seed(cfg.seed, kSubjectStream);
  std::vector<SyntheticSubject> out;
  for (std::size_t s = 0; s < cfg.subjects; ++s) out.push_back(make_subject(int(s), cfg, derive_seed(base, s)));
  return out;
}

VideoSample generate_sample(const GeneratorConfig& cfg, const SyntheticSubject& subject, std::size_t index,
                            int label) {
  const std::uint64_t seed = derive_seed(derive_seed(cfg.seed, kSampleStream), index);
  const double hr = subject.baseline_hr + label_hr_boost(label);
  const Pulse pulse =
      generate_pulse(double(cfg.frames) / cfg.fps, hr, label_ibi_jitter(label), cfg.fps, derive_seed(seed, 0));
  return render_video(subject, pulse.samples, label, cfg.frames, cfg.max_expression, derive_seed(seed, 1));
}

Dataset Dataset::synthetic(const GeneratorConfig& cfg) {
  Dataset d;
  d.generator_ = cfg;
  d.subjects_ = generate_subjects(cfg);
  d.fps_ = cfg.fps;
  for (std::size_t s = 0; s < cfg.subjects; ++s)
    for (std::size_t c = 0; c < cfg.clips_per_subject; ++c) {
      const std::size_t i = s * cfg.clips_per_subject + c;
      d.records_.push_back({i, int(s), sample_label(i), "", ""});
    }
  return d;
}

Dataset Dataset::open(const fs::path& manifest) {
  std::ifstream is(manifest);
  if (!is) throw ContractError("cannot open manifest " + manifest.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw FormatError(manifest.string() + ": " + e.what());
  }
  const int version = j.value("format_version", 0);
  if (version != kManifestVersion)
    throw FormatError(manifest.string() + ": unsupported manifest version " + std::to_string(version));
  Dataset d;
  d.root_ = manifest.parent_path();
  d.fps_ = j.value("fps", 25.0);
  if (j.contains("generator")) d.generator_ = j.at("generator").get<GeneratorConfig>();
  try {
    for (const json& s : j.at("samples"))
      d.records_.push_back({s.at("index").get<std::size_t>(), s.at("subject").get<int>(), s.at("label").get<int>(),
                            s.at("video").get<std::string>(), s.at("pulse").get<std::string>()});
  } catch (const json::exception& e) {
    throw FormatError(manifest.string() + ": " + e.what());
  }
  for (const SampleRecord& r : d.records_)
    if (r.label < 0 || r.label >= kNumPainLevels)
      throw FormatError(manifest.string() + ": label " + std::to_string(r.label) + " out of range");
  return d;
}

VideoSample Dataset::load(std::size_t i) const {
  const SampleRecord& r = records_.at(i);
  if (r.video_path.empty()) return generate_sample(*generator_, subjects_.at(std::size_t(r.subject_id)), r.index, r.label);
  VideoSample v;
  v.frames = read_tensor(root_ / r.video_path);
  const Tensor pulse = read_tensor(root_ / r.pulse_path);
  v.pulse = pulse.values();
  v.label = r.label;
  v.subject_id = r.subject_id;
  if (v.frames.rank() != 3 || v.pulse.size() != v.frames.dim(0))
    throw FormatError("sample " + std::to_string(r.index) + ": video " + to_string(v.frames.shape()) +
                      " does not match pulse length " + std::to_string(v.pulse.size()));
  return v;
}

std::vector<int> Dataset::subject_of() const {
  std::vector<int> out;
  for (const SampleRecord& r : records_) out.push_back(r.subject_id);
  return out;
}

void Dataset::save(const fs::path& dir) const {
  fs::create_directories(dir / "videos");
  fs::create_directories(dir / "pulses");
  json samples = json::array();
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const VideoSample v = load(i);
    const std::string video = numbered("videos", i), pulse = numbered("pulses", i);
    write_tensor(dir / video, v.frames);
    write_tensor(dir / pulse, Tensor(Shape{v.pulse.size()}, v.pulse));
    samples.push_back(
        {{"index", records_[i].index}, {"subject", v.subject_id}, {"label", v.label}, {"video", video}, {"pulse", pulse}});
  }
  json j{{"format_version", kManifestVersion}, {"fps", fps_}, {"samples", samples}};
  if (generator_) j["generator"] = *generator_;
  std::ofstream os(dir / "manifest.json");
  os << j.dump(2) << '\n';
  if (!os) throw ContractError("failed to write " + (dir / "manifest.json").string());
}

}  // namespace rstan::data
