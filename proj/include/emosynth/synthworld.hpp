#ifndef EMOSYNTH_SYNTHWORLD_HPP
#define EMOSYNTH_SYNTHWORLD_HPP

// Synthetic "speakers x emotions" world. Frame l of an utterance is
//   N(speaker_base[s] + emotion_offset[e] + token_effect[x_l], tau^2 I),
// independently over frames. Because the forward diffusion maps Gaussians to
// Gaussians, scores and emotion posteriors of the noised data are closed form.

#include "emosynth/schedule.hpp"
#include "emosynth/tensor.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace emosynth {

inline constexpr Index kNeutral = 0;

struct WorldConfig {
  Index dim = 8;
  Index vocab = 10;
  Index speakers = 10;
  Index emotions = 4;
  double tau = 0.3;
  Index max_len = 16;
  /// Per-coordinate standard deviations used to draw the tables.
  double speaker_scale = 1.0;
  double emotion_scale = 0.5;
  double token_scale = 1.0;

  void validate() const;
};

struct World {
  WorldConfig config;
  std::uint64_t seed = 0;
  Tensor speaker_base;    // speakers x dim
  Tensor emotion_offset;  // emotions x dim, row 0 (Neutral) is zero
  Tensor token_effect;    // vocab x dim

  [[nodiscard]] Index dim() const { return config.dim; }
  [[nodiscard]] Index emotions() const { return config.emotions; }
  [[nodiscard]] Index speakers() const { return config.speakers; }
  [[nodiscard]] double tau() const { return config.tau; }

  /// L x D matrix of noiseless frame means.
  [[nodiscard]] FrameMatrix frame_means(Index speaker, Index emotion, std::span<const Index> tokens) const;

  void check_speaker(Index speaker) const;
  void check_emotion(Index emotion) const;
  void check_tokens(std::span<const Index> tokens) const;

  /// Fingerprint of the serialized world.
  [[nodiscard]] std::uint64_t hash() const;
};

struct Utterance {
  Index speaker = 0;
  Index emotion = 0;
  std::vector<Index> tokens;
  FrameMatrix frames;
};

struct SpeakerSplit {
  std::vector<Index> seen;
  std::vector<Index> unseen;
};

/// Smallest Euclidean distance between distinct rows.
double min_pairwise_distance(const Tensor& rows);

/// Deterministic world; speaker and emotion tables are redrawn until every
/// pair of rows is at least 4 tau apart.
World make_world(const WorldConfig& config, std::uint64_t seed);

Utterance sample_utterance(const World& world, Index speaker, Index emotion, std::vector<Index> tokens,
                           std::uint64_t seed);

/// Uniformly random token sequence of the given length.
std::vector<Index> random_tokens(const World& world, Index length, Rng& rng);

SpeakerSplit split_speakers(const World& world, Index n_seen, std::uint64_t seed);

void write_world(std::ostream& os, const World& world);
World read_world(std::istream& is);

/// Mixture prior over utterance-level components (speaker, emotion), uniform
/// weights. Frames are independent within a component.
struct ComponentPrior {
  std::vector<Index> speakers;
  /// Fixed emotion, or every emotion when empty.
  std::optional<Index> emotion;
};

/// Everything the closed-form oracles need besides Y_t.
struct OracleQuery {
  ComponentPrior prior;
  std::vector<Index> tokens;
  FrameMatrix mu;  // diffusion prior mean, L x D
  double t = 0.0;
};

/// log p_t(Y_t) of the noised mixture (natural log, full normalization).
double analytic_log_density(const World& world, const OracleQuery& query, const FrameMatrix& y_t,
                            const NoiseSchedule& schedule);

/// Score grad_{Y_t} log p_t(Y_t) of the noised mixture.
FrameMatrix analytic_score(const World& world, const OracleQuery& query, const FrameMatrix& y_t,
                           const NoiseSchedule& schedule);

/// p(e | Y_t) under a uniform emotion prior for a known speaker; frames
/// contribute through the sum of their log-likelihoods.
Eigen::VectorXd analytic_emotion_posterior(const World& world, Index speaker, std::span<const Index> tokens,
                                           const FrameMatrix& mu, const FrameMatrix& y_t, double t,
                                           const NoiseSchedule& schedule);

/// grad_{Y_t} log p(target | Y_t), computed from the posterior directly.
FrameMatrix analytic_log_posterior_grad(const World& world, Index speaker, Index target,
                                        std::span<const Index> tokens, const FrameMatrix& mu,
                                        const FrameMatrix& y_t, double t, const NoiseSchedule& schedule);

}  // namespace emosynth

#endif  // EMOSYNTH_SYNTHWORLD_HPP
