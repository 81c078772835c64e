#ifndef EMOSYNTH_TRAINING_HPP
#define EMOSYNTH_TRAINING_HPP

#include "emosynth/autodiff.hpp"
#include "emosynth/diffusion.hpp"
#include "emosynth/nn.hpp"
#include "emosynth/stylegen.hpp"
#include "emosynth/synthworld.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace emosynth {

/// Emotion classifier on the style vector only.
class ProbeHead {
 public:
  ProbeHead(const ModelDims& dims, std::uint64_t seed);

  ad::Node build(ad::Graph& graph, ad::Node style);
  [[nodiscard]] Eigen::VectorXd probabilities(const StyleVector& style) const;

  ad::ParamStore params;

 private:
  Mlp net_;
};

/// Emotion classifier on noised frames: an MLP on the frame-pooled residual
/// mean(Y_t - mu) and the time embedding.
class NoisyClassifier final : public NoisyPosterior {
 public:
  NoisyClassifier(const ModelDims& dims, std::uint64_t seed);

  /// Logits (segments x K) for stacked residual rows Y_t - mu.
  ad::Node build(ad::Graph& graph, ad::Node residual, std::span<const double> times, const Segments& segments);

  [[nodiscard]] Eigen::VectorXd probabilities(const FrameMatrix& y_t, double t, const FrameMatrix& mu) const override;
  [[nodiscard]] FrameMatrix log_prob_grad(const FrameMatrix& y_t, double t, const FrameMatrix& mu,
                                          Index target) const override;

  ad::ParamStore params;

 private:
  Mlp net_;
};

/// Every trainable part. Parameter stores are seeded from one model seed.
struct Model {
  Model(const ModelDims& dims, const NoiseSchedule& schedule, std::uint64_t seed);

  ModelDims dims;
  NoiseSchedule schedule;
  std::uint64_t seed;
  StyleEncoder style;
  EmotionTable emotion;
  Generator generator;
  ScoreNet score;
  ProbeHead probe;
  NoisyClassifier classifier;

  /// (name, store) pairs in serialization order.
  std::vector<std::pair<std::string, ad::ParamStore*>> named_stores();
  [[nodiscard]] std::vector<std::pair<std::string, const ad::ParamStore*>> named_stores() const;

  [[nodiscard]] DiffusionModel diffusion(bool null_row_trained = true) const {
    return DiffusionModel{generator, emotion, score, null_row_trained};
  }
};

struct TrainConfig {
  double alpha = 1.0;
  double p_null = 0.1;
  double lr = 1e-2;
  /// Main learning rate decays linearly to lr * lr_final_scale over the run.
  double lr_final_scale = 0.05;
  double clip_norm = 5.0;
  Index steps = 20000;
  Index batch_size = 16;
  double w_recon = 1.0;
  double w_dsm = 1.0;
  double w_dat = 0.5;
  /// Learning rate of the adversarial probe head; 0 means `lr`.
  double probe_lr = 0.5;
  Index min_len = 4;
  Index max_len = 12;
  /// Let the denoising loss reach the generator and style encoder through mu, s
  /// and e.
  bool dsm_through_condition = true;
  Index log_every = 100;
  std::uint64_t seed = 0;

  // Noisy classifier, trained afterwards on the frozen model.
  Index clf_steps = 3000;
  Index clf_batch = 32;
  double clf_lr = 5e-2;
  Index clf_examples = 2000;
  /// Frames in the Neutral reference behind each example's mu.
  Index clf_reference_len = 16;

  void validate() const;
};

struct LossRecord {
  Index step = 0;
  double total = 0.0;
  double recon = 0.0;
  double dsm = 0.0;
  double dat = 0.0;
  double grad_norm = 0.0;
  double style_grad_norm = 0.0;
  double probe_grad_norm = 0.0;
  double null_grad_norm = 0.0;
};

std::string to_json_line(const LossRecord& r);

struct Checkpoint {
  Model model;
  TrainConfig config;
  std::uint64_t world_hash = 0;
  Index step = 0;
  bool null_row_trained = false;
  bool classifier_trained = false;

  [[nodiscard]] DiffusionModel diffusion() const { return model.diffusion(null_row_trained); }
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LossRecord> trace;
};

/// Batch of utterances stacked row-wise.
struct UtteranceBatch {
  std::vector<Utterance> utterances;
  Segments segments;
  FrameMatrix frames;
  std::vector<Index> tokens;
  std::vector<Index> emotions;
};

UtteranceBatch stack_batch(std::vector<Utterance> utterances);

/// Random training batch from the given speakers.
UtteranceBatch draw_batch(const World& world, std::span<const Index> speakers, Index batch_size, Index min_len,
                          Index max_len, Rng& rng);

struct DatGradients {
  double loss = 0.0;
  double style_grad_norm = 0.0;
  double probe_grad_norm = 0.0;
};

/// Emotion loss L_e = -log p(e | s) through grad_reverse(s, alpha) (or without
/// the reversal when `reverse` is false). Gradients are left in the style and
/// probe stores, which are zeroed first.
DatGradients dat_gradients(Model& model, const UtteranceBatch& batch, double alpha, bool reverse = true);

/// dat_gradients followed by an SGD update of the style encoder and probe.
DatGradients dat_step(Model& model, const UtteranceBatch& batch, double alpha, double lr);

using ProgressFn = std::function<void(const LossRecord&)>;

/// Joint reconstruction + denoising + adversarial training on seen speakers.
TrainResult train_model(const World& world, const SpeakerSplit& split, const TrainConfig& config,
                        const ModelDims& dims, const NoiseSchedule& schedule, const ProgressFn& progress = {});

/// Default model dimensions for a world.
ModelDims dims_for(const World& world);

struct LabeledExample {
  FrameMatrix y0;
  FrameMatrix mu;
  Index label = 0;
};

/// Trains `classifier` by cross-entropy on (perturb(Y0, mu, t), label) with
/// t ~ U[kMinTime, T]. Throws if the data holds a single class.
std::vector<double> train_noisy_classifier(NoisyClassifier& classifier, std::span<const LabeledExample> data,
                                           const NoiseSchedule& schedule, Index steps, Index batch_size, double lr,
                                           std::uint64_t seed);

/// Labeled examples from seen speakers; mu is the null-path prior mean built
/// from a Neutral reference of the same speaker.
std::vector<LabeledExample> classifier_dataset(const World& world, const SpeakerSplit& split, const Model& model,
                                               Index count, Index reference_len, std::uint64_t seed);

/// classifier_dataset + train_noisy_classifier with the checkpoint's clf_*
/// settings and seed; sets classifier_trained. Returns the loss per step.
std::vector<double> fit_classifier(Checkpoint& ckpt, const World& world, const SpeakerSplit& split);

/// Accuracy of the classifier on freshly perturbed data at a fixed t.
double classifier_accuracy(const NoisyClassifier& classifier, std::span<const LabeledExample> data,
                           const NoiseSchedule& schedule, double t, std::uint64_t seed);

}  // namespace emosynth

#endif  // EMOSYNTH_TRAINING_HPP
