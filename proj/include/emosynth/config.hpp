#ifndef EMOSYNTH_CONFIG_HPP
#define EMOSYNTH_CONFIG_HPP

// Experiment configuration: flat `key = value` lines grouped under
// `[world]`, `[model]`, `[train]`, `[sample]` and `[eval]` headers, with a
// top-level `seed`. Unknown sections and keys are rejected; missing keys keep
// their defaults.

#include "emosynth/diffusion.hpp"
#include "emosynth/eval.hpp"
#include "emosynth/schedule.hpp"
#include "emosynth/stylegen.hpp"
#include "emosynth/synthworld.hpp"
#include "emosynth/training.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace emosynth {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SampleConfig {
  Index steps = 100;
  bool stochastic = true;
  GuidanceMode mode = GuidanceMode::ClassifierFree;
  double gamma = 1.25;
  /// -1 selects the first unseen speaker.
  Index speaker = -1;
  Index emotion = 1;
  Index count = 10;
  Index length = 8;
  Index reference_len = 16;
  bool trace = false;
};

struct EvalConfig {
  std::vector<double> gammas{0.0, 0.5, 1.0, 1.5, 2.0};
  GuidanceMode mode = GuidanceMode::ClassifierFree;
  SpeakerGroup group = SpeakerGroup::Seen;
  Index samples_per_seed = 200;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  Index scripts = 10;
  Index script_len = 8;
  Index reference_len = 16;
  Index sampler_steps = 100;
  bool stochastic = true;
  /// Style vectors per emotion for the post-hoc probe.
  Index probe_per_emotion = 100;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  WorldConfig world{.speakers = 40};
  Index n_seen = 32;
  ModelDims model;
  NoiseSchedule schedule;
  TrainConfig train;
  SampleConfig sample;
  EvalConfig eval;

  /// Model dimensions with dim, vocab and emotions taken from the world.
  [[nodiscard]] ModelDims dims() const;
  /// Training settings with the global seed.
  [[nodiscard]] TrainConfig train_config() const;
  /// Sweep options for the eval section.
  [[nodiscard]] SweepOptions sweep_options() const;
};

/// Defaults used when no config file is given.
ExperimentConfig default_config();

/// Parses config text. `origin` names the source in diagnostics
/// ("<origin>:<line>: ...").
ExperimentConfig parse_config(std::string_view text, std::string_view origin = "config");

/// Applies one `section.key=value` override (`seed=value` for the top level).
void apply_override(ExperimentConfig& config, std::string_view assignment);

/// Canonical text of every field; parsing it yields the same config.
std::string resolved_config(const ExperimentConfig& config);

/// Cross-field checks (world vs model dims, lengths, split size).
void validate(const ExperimentConfig& config);

}  // namespace emosynth

#endif  // EMOSYNTH_CONFIG_HPP
