#ifndef EMOSYNTH_DIFFUSION_HPP
#define EMOSYNTH_DIFFUSION_HPP

// Mean-reverting diffusion around a prior mean mu:
//   forward  Y_t = mu + (Y_0 - mu) rho(t) + sqrt(var(t)) z,
//   reverse  dY = (0.5 (mu - Y) - score(Y, t)) beta(t) dt,
// integrated backward from Y_T ~ N(mu, I) with an Euler step, optionally with
// the reverse-SDE noise sqrt(beta h) z. Guidance enters only through the score.

#include "emosynth/autodiff.hpp"
#include "emosynth/nn.hpp"
#include "emosynth/schedule.hpp"
#include "emosynth/stylegen.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace emosynth {

/// (t, sin 2 pi t, cos 2 pi t, sin 4 pi t, cos 4 pi t)
RowVector<double> time_embedding(double t);
inline constexpr Index kTimeEmbedding = 5;

struct Perturbed {
  FrameMatrix y_t;
  FrameMatrix target_score;  // -z / sqrt(var(t)) = grad log p(Y_t | Y_0)
};

/// Forward kernel with explicit noise z.
Perturbed perturb_with_noise(const FrameMatrix& y0, const FrameMatrix& mu, double t, const NoiseSchedule& schedule,
                             const FrameMatrix& z);
/// Forward kernel with z drawn from `noise_seed`. Throws for t <= 0.
Perturbed perturb(const FrameMatrix& y0, const FrameMatrix& mu, double t, const NoiseSchedule& schedule,
                  std::uint64_t noise_seed);

/// Per-row score estimator eps(Y_t, t, mu, s, e):
///   (1 + g(t)) (mu - Y_t) / (c^2 rho^2 + var) + MLP(...) / sqrt(var).
/// With g = 0 the first term is the exact score when Y_0 - mu ~ N(0, c^2 I);
/// g is a small time-only network ("score.gain", zero at init) and the MLP a
/// correction at unit scale. c = kResidualScale.
class ScoreNet {
 public:
  static constexpr double kResidualScale = 0.5;

  ScoreNet(const ModelDims& dims, const NoiseSchedule& schedule, std::uint64_t seed);

  [[nodiscard]] FrameMatrix estimate(const FrameMatrix& y_t, double t, const FrameMatrix& mu, const StyleVector& style,
                                     const RowVector<double>& emotion) const;

  /// Score rows for stacked utterances. `times` has one entry per segment;
  /// `style` and `emotion` have one row per segment.
  ad::Node build(ad::Graph& graph, ad::Node y_t, std::span<const double> times, ad::Node mu, ad::Node style,
                 ad::Node emotion, const Segments& segments);

  [[nodiscard]] const NoiseSchedule& schedule() const { return schedule_; }
  [[nodiscard]] Index dim() const { return dim_; }
  /// 1 / (c^2 rho(t)^2 + var(t)).
  [[nodiscard]] double skip_gain(double t) const;

  ad::ParamStore params;

 private:
  NoiseSchedule schedule_;
  Index dim_;
  Mlp net_;
  Mlp gain_net_;
};

/// Mean over entries of var(t) * (score - target)^2; var has one entry per row.
double denoising_loss(const FrameMatrix& score, const FrameMatrix& target, const Eigen::VectorXd& row_variance);

/// Noise shared by the graph form of the denoising objective.
struct DsmNoise {
  std::vector<double> times;  // one per segment
  FrameMatrix z;              // rows x D
};

/// t ~ U[kMinTime, terminal] per segment, z ~ N(0, I) per row.
DsmNoise draw_dsm_noise(const Segments& segments, Index dim, double terminal, Rng& rng);

/// Graph form of the denoising objective. Y_t is built from the `mu` node, so
/// gradients reach whatever produced mu unless it is wrapped in stop_gradient.
ad::Node build_dsm_loss(ad::Graph& graph, ScoreNet& net, ad::Node y0, ad::Node mu, ad::Node style, ad::Node emotion,
                        const Segments& segments, const DsmNoise& noise);

struct DsmExample {
  FrameMatrix y0;
  FrameMatrix mu;
  StyleVector style;
  RowVector<double> emotion;
};

/// Denoising score-matching loss on a batch with t ~ U[kMinTime, T]; adds the
/// parameter gradients to net.params and returns the loss.
double dsm_loss(ScoreNet& net, std::span<const DsmExample> batch, std::uint64_t seed);

// ------------------------------------------------------------------ sampling

enum class GuidanceMode { None, Classifier, ClassifierFree };

struct GuidanceConfig {
  GuidanceMode mode = GuidanceMode::None;
  double gamma = 0.0;
  bool stochastic = true;
};

std::string_view guidance_mode_name(GuidanceMode mode);
GuidanceMode parse_guidance_mode(std::string_view name);

/// One integrator step, for optional trajectory dumps.
struct TraceRecord {
  Index step = 0;
  double t = 0.0;
  double score_norm = 0.0;
  double guidance_norm = 0.0;
  FrameMatrix y;
};

using TraceSink = std::function<void(const TraceRecord&)>;

struct SamplerOptions {
  Index steps = 100;
  bool stochastic = true;
  std::uint64_t seed = 0;
  TraceSink trace;
};

/// Score at (Y, t); may report the norm of a guidance term through the last
/// argument.
using ScoreFn = std::function<FrameMatrix(const FrameMatrix& y, double t, double& guidance_norm)>;

/// Euler integration of the reverse process on the uniform grid h = T / N
/// (score evaluated at t_k = T - k h, clamped to kMinTime).
FrameMatrix integrate_reverse(const FrameMatrix& mu, const NoiseSchedule& schedule, const SamplerOptions& options,
                              const ScoreFn& score);

/// Plain sampler with the score estimate eps(Y, t, mu, s, e).
FrameMatrix sample_reverse(const ScoreNet& net, const FrameMatrix& mu, const StyleVector& style,
                           const RowVector<double>& emotion, const SamplerOptions& options);

/// Emotion posterior of noised frames, differentiable in Y_t.
class NoisyPosterior {
 public:
  virtual ~NoisyPosterior() = default;
  [[nodiscard]] virtual Eigen::VectorXd probabilities(const FrameMatrix& y_t, double t, const FrameMatrix& mu) const = 0;
  [[nodiscard]] virtual FrameMatrix log_prob_grad(const FrameMatrix& y_t, double t, const FrameMatrix& mu,
                                                  Index target) const = 0;
};

/// score_uncond + gamma * grad log p(target | Y_t). gamma = 0 returns
/// score_uncond unchanged. Throws if the posterior is not a distribution.
FrameMatrix guided_score_cg(const FrameMatrix& score_uncond, const NoisyPosterior& posterior, const FrameMatrix& y_t,
                            double t, const FrameMatrix& mu, Index target, double gamma,
                            double* guidance_norm = nullptr);

/// eps_c + gamma (eps_c - eps_u); gamma = 0 returns eps_c unchanged.
FrameMatrix combine_cfg(const FrameMatrix& eps_cond, const FrameMatrix& eps_uncond, double gamma);

/// Views of the trained parts used by the guided samplers.
struct DiffusionModel {
  const Generator& generator;
  const EmotionTable& emotions;
  const ScoreNet& score;
  bool null_row_trained = true;
};

struct SampleResult {
  FrameMatrix frames;
  FrameMatrix mu;
  std::vector<std::string> warnings;
};

/// Classifier-free guidance: mu = f(x, s, e) and mu_null = f(x, s, null); the
/// drift uses mu and eps_c + gamma (eps_c - eps_u).
SampleResult sample_cfg(const DiffusionModel& model, std::span<const Index> tokens, const StyleVector& style,
                        Index emotion, double gamma, const SamplerOptions& options);

/// Classifier guidance around an arbitrary unconditional score.
FrameMatrix sample_classifier_guided(const FrameMatrix& mu, const NoiseSchedule& schedule,
                                     const std::function<FrameMatrix(const FrameMatrix&, double)>& score_uncond,
                                     const NoisyPosterior& posterior, Index target, double gamma,
                                     const SamplerOptions& options);

/// Classifier guidance on the null path: mu_null drives the prior and drift,
/// emotion enters only through the classifier.
SampleResult sample_cg(const DiffusionModel& model, const NoisyPosterior& classifier, std::span<const Index> tokens,
                       const StyleVector& style, Index emotion, double gamma, const SamplerOptions& options);

}  // namespace emosynth

#endif  // EMOSYNTH_DIFFUSION_HPP
