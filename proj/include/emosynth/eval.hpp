#ifndef EMOSYNTH_EVAL_HPP
#define EMOSYNTH_EVAL_HPP

// Metrics on generated frames, scored against the world's ground truth:
// emotion accuracy of the exact Bayes classifier, speaker similarity, content
// error, post-hoc probing of style vectors and guidance-scale sweeps.

#include "emosynth/checkpoint.hpp"
#include "emosynth/diffusion.hpp"
#include "emosynth/synthworld.hpp"
#include "emosynth/training.hpp"

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace emosynth {

/// What a generated sample was asked to be.
struct EvalCondition {
  Index speaker = 0;
  Index emotion = 0;
  std::vector<Index> tokens;
};

/// argmax_e p(e | Y) of the noiseless world for a known speaker and tokens.
Index bayes_emotion(const World& world, Index speaker, std::span<const Index> tokens, const FrameMatrix& frames);

/// The world's exact p(e | Y_t) for a known speaker and tokens.
class AnalyticPosterior final : public NoisyPosterior {
 public:
  AnalyticPosterior(const World& world, Index speaker, std::vector<Index> tokens, NoiseSchedule schedule)
      : world_(world), speaker_(speaker), tokens_(std::move(tokens)), schedule_(schedule) {}

  [[nodiscard]] Eigen::VectorXd probabilities(const FrameMatrix& y_t, double t, const FrameMatrix& mu) const override {
    return analytic_emotion_posterior(world_, speaker_, tokens_, mu, y_t, t, schedule_);
  }
  [[nodiscard]] FrameMatrix log_prob_grad(const FrameMatrix& y_t, double t, const FrameMatrix& mu,
                                          Index target) const override {
    return analytic_log_posterior_grad(world_, speaker_, target, tokens_, mu, y_t, t, schedule_);
  }

 private:
  const World& world_;
  Index speaker_;
  std::vector<Index> tokens_;
  NoiseSchedule schedule_;
};

/// Percentage of samples whose Bayes emotion equals the target.
double eca_oracle(const World& world, std::span<const FrameMatrix> samples, std::span<const EvalCondition> conditions);

/// Cosine similarity; throws for a zero vector or mismatched sizes.
template <typename A, typename B>
double secs_analog(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("secs_analog: size mismatch");
  const double na = a.norm();
  const double nb = b.norm();
  if (!(na > 0.0) || !(nb > 0.0)) throw std::invalid_argument("secs_analog: zero vector");
  const double c = a.reshaped().dot(b.reshaped()) / (na * nb);
  return std::clamp(c, -1.0, 1.0);
}

/// mean_l (y_l - token_effect[x_l]) - emotion_offset[emotion].
RowVector<double> mean_frame_embedding(const World& world, const FrameMatrix& frames, std::span<const Index> tokens,
                                       Index emotion);

struct ContentError {
  double mean = 0.0;
  std::vector<double> per_sample;
};

/// Squared distance of each row to the analytic frame mean, averaged over
/// rows and samples.
ContentError content_error(const World& world, std::span<const FrameMatrix> samples,
                           std::span<const EvalCondition> conditions);

/// Speaker of the nearest (speaker, emotion) component mean to the
/// token-corrected frame average.
Index nearest_speaker(const World& world, const FrameMatrix& frames, std::span<const Index> tokens);

struct ProbeOptions {
  Index iterations = 500;
  double learning_rate = 0.5;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
};

/// Held-out accuracy (percent) of a softmax-regression probe trained on
/// standardized vectors. Throws if a class has fewer than 10 vectors.
double probe_disentanglement(const Tensor& vectors, std::span<const Index> labels, Index classes,
                             const ProbeOptions& options = {});

struct StyleSet {
  Tensor vectors;
  std::vector<Index> speakers;
  std::vector<Index> emotions;
};

/// Style vectors of `per_emotion` fresh utterances per emotion, cycling over
/// `speakers`.
StyleSet collect_styles(const World& world, std::span<const Index> speakers, const StyleEncoder& encoder,
                        Index per_emotion, Index length, std::uint64_t seed);

/// Rows "speaker<TAB>emotion<TAB>s_0<TAB>...", with a header.
std::string styles_tsv(const StyleSet& set);

/// Spearman rank correlation (average ranks for ties). NaN for a constant input.
double spearman(std::span<const double> x, std::span<const double> y);

/// Energy distance between two samples of equal-length flattened rows.
double energy_distance(const Tensor& a, const Tensor& b);

struct PermutationTest {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// Permutation two-sample test on the energy distance.
PermutationTest energy_permutation_test(const Tensor& a, const Tensor& b, Index permutations, std::uint64_t seed);

/// Neutral reference utterance. Unseen speakers may only be referenced through
/// Neutral speech; asking for anything else throws.
Utterance reference_utterance(const World& world, const SpeakerSplit& split, Index speaker, Index emotion,
                              std::vector<Index> tokens, std::uint64_t seed);

enum class SpeakerGroup { Seen, Unseen };
std::string_view speaker_group_name(SpeakerGroup g);
SpeakerGroup parse_speaker_group(std::string_view name);

struct SweepOptions {
  std::vector<double> gammas{0.0};
  GuidanceMode mode = GuidanceMode::ClassifierFree;
  SpeakerGroup group = SpeakerGroup::Seen;
  Index samples_per_seed = 200;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  Index scripts = 10;
  Index script_len = 8;
  Index reference_len = 8;
  Index sampler_steps = 100;
  bool stochastic = true;
};

struct SweepRow {
  double gamma = 0.0;
  GuidanceMode mode = GuidanceMode::ClassifierFree;
  double eca = 0.0;
  double content_error = 0.0;
  double secs_mean_frame = 0.0;
  double secs_style = 0.0;
  double speaker_accuracy = 0.0;
  Index n = 0;
};

/// One row per gamma. Every cell reuses the same targets, references and
/// sampler seeds, so rows differ only through gamma.
std::vector<SweepRow> guidance_sweep(const Checkpoint& ckpt, const World& world, const SpeakerSplit& split,
                                     const SweepOptions& options);

/// CSV with header gamma,mode,eca,content_error,secs_mean_frame,secs_style,n.
std::string sweep_csv(std::span<const SweepRow> rows);

struct Fingerprint {
  std::uint64_t world_hash = 0;
  std::uint64_t checkpoint_hash = 0;
  double gamma = 0.0;
  std::string mode;
  std::uint64_t seed = 0;
};

struct EvalReport {
  std::string metric;
  double value = 0.0;
  Index n = 0;
  Fingerprint fingerprint;
};

/// One JSON object per line.
std::string to_json_line(const EvalReport& r);

}  // namespace emosynth

#endif  // EMOSYNTH_EVAL_HPP
