#include "emosynth/diffusion.hpp"

#include <cmath>
#include <numbers>

namespace emosynth {

RowVector<double> time_embedding(double t) {
  const double w = 2.0 * std::numbers::pi * t;
  RowVector<double> e(kTimeEmbedding);
  e << t, std::sin(w), std::cos(w), std::sin(2.0 * w), std::cos(2.0 * w);
  return e;
}

Perturbed perturb_with_noise(const FrameMatrix& y0, const FrameMatrix& mu, double t, const NoiseSchedule& schedule,
                             const FrameMatrix& z) {
  schedule.validate();
  if (!(t > 0.0 && t <= schedule.terminal)) throw std::invalid_argument("perturb requires t in (0, T]");
  if (y0.rows() != mu.rows() || y0.cols() != mu.cols() || z.rows() != y0.rows() || z.cols() != y0.cols()) {
    throw std::invalid_argument("perturb shape mismatch");
  }
  const double rho = schedule.rho(t);
  const double sd = std::sqrt(schedule.variance(t));
  return Perturbed{mu + (y0 - mu) * rho + sd * z, -z / sd};
}

Perturbed perturb(const FrameMatrix& y0, const FrameMatrix& mu, double t, const NoiseSchedule& schedule,
                  std::uint64_t noise_seed) {
  Rng rng(noise_seed);
  return perturb_with_noise(y0, mu, t, schedule, standard_normal(y0.rows(), y0.cols(), rng));
}

// ------------------------------------------------------------------ ScoreNet

ScoreNet::ScoreNet(const ModelDims& dims, const NoiseSchedule& schedule, std::uint64_t seed)
    : params(derive_seed(seed, "score")),
      schedule_(schedule),
      dim_(dims.dim),
      net_("score.mlp", MlpShape{.in = 2 * dims.dim + kTimeEmbedding + dims.style + dims.emotion_embed,
                                 .hidden = dims.hidden,
                                 .hidden_layers = dims.hidden_layers,
                                 .out = dims.dim}),
      gain_net_("score.gain", MlpShape{.in = kTimeEmbedding, .hidden = 16, .hidden_layers = 1, .out = 1}) {
  schedule_.validate();
  net_.init(params);
  gain_net_.init(params);
  params.value("score.gain.W1").setZero();
}

FrameMatrix ScoreNet::estimate(const FrameMatrix& y_t, double t, const FrameMatrix& mu, const StyleVector& style,
                               const RowVector<double>& emotion) const {
  if (y_t.rows() != mu.rows() || y_t.cols() != dim_ || mu.cols() != dim_) {
    throw std::invalid_argument("score estimate shape mismatch: Y_t " + shape_string(y_t) + ", mu " + shape_string(mu));
  }
  if (!(t > 0.0 && t <= schedule_.terminal)) throw std::invalid_argument("score estimate requires t in (0, T]");
  const RowVector<double> temb = time_embedding(t);
  Tensor x(y_t.rows(), net_.shape().in);
  for (Index l = 0; l < y_t.rows(); ++l) x.row(l) << y_t.row(l), temb, mu.row(l), style, emotion;
  Tensor out = net_.apply(params, x);
  const double inv = 1.0 / std::sqrt(schedule_.variance(t));
  const Tensor delta = affine_rows(gain_net_.apply(params, Tensor(temb.replicate(y_t.rows(), 1))),
                                   Tensor::Ones(1, dim_), Tensor::Zero(1, dim_));
  const Tensor skip = (mu - y_t).cwiseProduct(Tensor::Constant(out.rows(), out.cols(), skip_gain(t)));
  return out.cwiseProduct(Tensor::Constant(out.rows(), out.cols(), inv)) + skip + skip.cwiseProduct(delta);
}

double ScoreNet::skip_gain(double t) const {
  const double r = schedule_.rho(t);
  return 1.0 / (kResidualScale * kResidualScale * r * r + schedule_.variance(t));
}

ad::Node ScoreNet::build(ad::Graph& graph, ad::Node y_t, std::span<const double> times, ad::Node mu, ad::Node style,
                         ad::Node emotion, const Segments& segments) {
  if (static_cast<Index>(times.size()) != segments.count()) throw std::invalid_argument("one time per segment required");
  Tensor temb(segments.rows(), kTimeEmbedding);
  Tensor inv(segments.rows(), dim_);
  Tensor gain(segments.rows(), dim_);
  for (Index s = 0; s < segments.count(); ++s) {
    const double t = times[static_cast<std::size_t>(s)];
    if (!(t > 0.0 && t <= schedule_.terminal)) throw std::invalid_argument("score times must lie in (0, T]");
    temb.middleRows(segments.begin(s), segments.length(s)).rowwise() = time_embedding(t);
    inv.middleRows(segments.begin(s), segments.length(s)).setConstant(1.0 / std::sqrt(schedule_.variance(t)));
    gain.middleRows(segments.begin(s), segments.length(s)).setConstant(skip_gain(t));
  }
  const ad::Node time = graph.constant(std::move(temb), "time_embedding");
  const ad::Node parts[] = {
      y_t,
      time,
      mu,
      graph.segment_broadcast(style, segments),
      graph.segment_broadcast(emotion, segments),
  };
  const ad::Node out = net_.build(graph, params, graph.concat_cols(parts));
  const ad::Node delta = graph.affine(gain_net_.build(graph, params, time), graph.constant(Tensor::Ones(1, dim_), "ones"),
                                      graph.constant(Tensor::Zero(1, dim_), "zero_bias"));
  const ad::Node skip = graph.mul(graph.sub(mu, y_t), graph.constant(std::move(gain), "skip_gain"));
  return graph.add(graph.add(graph.mul(out, graph.constant(std::move(inv), "inv_sqrt_var")), skip),
                   graph.mul(skip, delta));
}

// ------------------------------------------------------------------ DSM

double denoising_loss(const FrameMatrix& score, const FrameMatrix& target, const Eigen::VectorXd& row_variance) {
  if (score.rows() != target.rows() || score.cols() != target.cols() || row_variance.size() != score.rows()) {
    throw std::invalid_argument("denoising_loss shape mismatch");
  }
  if (score.size() == 0) throw std::invalid_argument("denoising_loss of an empty batch");
  double acc = 0.0;
  for (Index i = 0; i < score.rows(); ++i) acc += row_variance(i) * (score.row(i) - target.row(i)).squaredNorm();
  return acc / static_cast<double>(score.size());
}

DsmNoise draw_dsm_noise(const Segments& segments, Index dim, double terminal, Rng& rng) {
  DsmNoise n;
  std::uniform_real_distribution<double> time(kMinTime, terminal);
  for (Index s = 0; s < segments.count(); ++s) n.times.push_back(time(rng));
  n.z = standard_normal(segments.rows(), dim, rng);
  return n;
}

ad::Node build_dsm_loss(ad::Graph& graph, ScoreNet& net, ad::Node y0, ad::Node mu, ad::Node style, ad::Node emotion,
                        const Segments& segments, const DsmNoise& noise) {
  const NoiseSchedule& sch = net.schedule();
  const Index rows = segments.rows();
  const Index dim = net.dim();
  if (noise.z.rows() != rows || noise.z.cols() != dim) throw std::invalid_argument("DSM noise shape mismatch");
  Tensor rho(rows, dim), keep_mu(rows, dim), var(rows, dim), sd(rows, dim);
  for (Index s = 0; s < segments.count(); ++s) {
    const double t = noise.times[static_cast<std::size_t>(s)];
    const double r = sch.rho(t);
    const double v = sch.variance(t);
    rho.middleRows(segments.begin(s), segments.length(s)).setConstant(r);
    keep_mu.middleRows(segments.begin(s), segments.length(s)).setConstant(1.0 - r);
    var.middleRows(segments.begin(s), segments.length(s)).setConstant(v);
    sd.middleRows(segments.begin(s), segments.length(s)).setConstant(std::sqrt(v));
  }
  const Tensor noise_term = sd.cwiseProduct(noise.z);
  const Tensor target = -noise.z.cwiseQuotient(sd);
  const ad::Node y_t = graph.add(graph.add(graph.mul(graph.constant(rho, "rho"), y0), graph.mul(graph.constant(keep_mu, "1-rho"), mu)),
                                 graph.constant(noise_term, "noise"));
  const ad::Node eps = net.build(graph, y_t, noise.times, mu, style, emotion, segments);
  const ad::Node diff = graph.sub(eps, graph.constant(target, "target_score"));
  return graph.mean(graph.mul(graph.constant(var, "var"), graph.mul(diff, diff)));
}

double dsm_loss(ScoreNet& net, std::span<const DsmExample> batch, std::uint64_t seed) {
  if (batch.empty()) throw std::invalid_argument("dsm_loss of an empty batch");
  std::vector<Index> lengths;
  for (const auto& ex : batch) lengths.push_back(ex.y0.rows());
  const Segments seg = Segments::from_lengths(lengths);
  const Index dim = net.dim();
  Tensor y0(seg.rows(), dim), mu(seg.rows(), dim);
  Tensor style(seg.count(), batch.front().style.size()), emotion(seg.count(), batch.front().emotion.size());
  for (Index s = 0; s < seg.count(); ++s) {
    const auto& ex = batch[static_cast<std::size_t>(s)];
    if (ex.mu.rows() != ex.y0.rows()) throw std::invalid_argument("dsm_loss: mu and Y0 lengths differ");
    y0.middleRows(seg.begin(s), seg.length(s)) = ex.y0;
    mu.middleRows(seg.begin(s), seg.length(s)) = ex.mu;
    style.row(s) = ex.style;
    emotion.row(s) = ex.emotion;
  }
  Rng rng(seed);
  const DsmNoise noise = draw_dsm_noise(seg, dim, net.schedule().terminal, rng);
  ad::Graph g;
  const ad::Node loss = build_dsm_loss(g, net, g.constant(y0, "Y0"), g.constant(mu, "mu"), g.constant(style, "s"),
                                       g.constant(emotion, "e"), seg, noise);
  g.forward();
  g.backward(loss);
  return g.value(loss)(0, 0);
}

// ------------------------------------------------------------------ sampling

std::string_view guidance_mode_name(GuidanceMode mode) {
  switch (mode) {
    case GuidanceMode::None: return "none";
    case GuidanceMode::Classifier: return "cg";
    case GuidanceMode::ClassifierFree: return "cfg";
  }
  return "?";
}

GuidanceMode parse_guidance_mode(std::string_view name) {
  if (name == "none") return GuidanceMode::None;
  if (name == "cg" || name == "classifier") return GuidanceMode::Classifier;
  if (name == "cfg" || name == "classifier_free") return GuidanceMode::ClassifierFree;
  throw std::invalid_argument("unknown guidance mode '" + std::string(name) + "' (none, cg, cfg)");
}

FrameMatrix integrate_reverse(const FrameMatrix& mu, const NoiseSchedule& schedule, const SamplerOptions& options,
                              const ScoreFn& score) {
  schedule.validate();
  if (options.steps < 1) throw std::invalid_argument("sampler needs at least one step");
  Rng rng(options.seed);
  FrameMatrix y = mu + standard_normal(mu.rows(), mu.cols(), rng);
  const double h = schedule.terminal / static_cast<double>(options.steps);
  for (Index k = 0; k < options.steps; ++k) {
    const double t = std::max(schedule.terminal - static_cast<double>(k) * h, kMinTime);
    const double b = schedule.beta(t);
    double guidance_norm = 0.0;
    const FrameMatrix s = score(y, t, guidance_norm);
    y -= (h * b) * (0.5 * (mu - y) - s);
    if (options.stochastic) y += std::sqrt(b * h) * standard_normal(y.rows(), y.cols(), rng);
    if (!all_finite(y)) throw std::runtime_error("reverse integration diverged at step " + std::to_string(k));
    if (options.trace) options.trace(TraceRecord{k, t, s.norm(), guidance_norm, y});
  }
  return y;
}

FrameMatrix sample_reverse(const ScoreNet& net, const FrameMatrix& mu, const StyleVector& style,
                           const RowVector<double>& emotion, const SamplerOptions& options) {
  return integrate_reverse(mu, net.schedule(), options, [&](const FrameMatrix& y, double t, double&) {
    return net.estimate(y, t, mu, style, emotion);
  });
}

FrameMatrix guided_score_cg(const FrameMatrix& score_uncond, const NoisyPosterior& posterior, const FrameMatrix& y_t,
                            double t, const FrameMatrix& mu, Index target, double gamma, double* guidance_norm) {
  if (!(gamma >= 0.0)) throw std::invalid_argument("guidance scale must be non-negative");
  const Eigen::VectorXd p = posterior.probabilities(y_t, t, mu);
  if (p.size() < 2 || !p.allFinite() || p.minCoeff() < -1e-12 || std::abs(p.sum() - 1.0) > 1e-9) {
    throw std::runtime_error("classifier output is not a probability distribution");
  }
  if (target < 0 || target >= p.size()) throw std::out_of_range("invalid guidance target " + std::to_string(target));
  if (gamma == 0.0) {
    if (guidance_norm) *guidance_norm = 0.0;
    return score_uncond;
  }
  const FrameMatrix g = gamma * posterior.log_prob_grad(y_t, t, mu, target);
  if (g.rows() != score_uncond.rows() || g.cols() != score_uncond.cols()) {
    throw std::invalid_argument("classifier gradient shape mismatch");
  }
  if (guidance_norm) *guidance_norm = g.norm();
  return score_uncond + g;
}

FrameMatrix combine_cfg(const FrameMatrix& eps_cond, const FrameMatrix& eps_uncond, double gamma) {
  if (eps_cond.rows() != eps_uncond.rows() || eps_cond.cols() != eps_uncond.cols()) {
    throw std::invalid_argument("combine_cfg shape mismatch: " + shape_string(eps_cond) + " vs " + shape_string(eps_uncond));
  }
  if (gamma == 0.0) return eps_cond;
  return eps_cond + gamma * (eps_cond - eps_uncond);
}

SampleResult sample_cfg(const DiffusionModel& model, std::span<const Index> tokens, const StyleVector& style,
                        Index emotion, double gamma, const SamplerOptions& options) {
  if (!(gamma >= 0.0)) throw std::invalid_argument("guidance scale must be non-negative");
  SampleResult out;
  if (!model.null_row_trained && gamma != 0.0) {
    out.warnings.emplace_back("null emotion embedding was never trained; the unconditional path is untrained");
  }
  const RowVector<double> e = model.emotions.embed(emotion);
  const RowVector<double> e_null = model.emotions.embed(kNullEmotion);
  out.mu = model.generator.generate(tokens, style, e);
  const FrameMatrix mu_null = model.generator.generate(tokens, style, e_null);
  out.frames = integrate_reverse(out.mu, model.score.schedule(), options,
                                 [&](const FrameMatrix& y, double t, double& gn) -> FrameMatrix {
                                   FrameMatrix eps_c = model.score.estimate(y, t, out.mu, style, e);
                                   if (gamma == 0.0) return eps_c;
                                   const FrameMatrix eps_u = model.score.estimate(y, t, mu_null, style, e_null);
                                   gn = gamma * (eps_c - eps_u).norm();
                                   return combine_cfg(eps_c, eps_u, gamma);
                                 });
  return out;
}

FrameMatrix sample_classifier_guided(const FrameMatrix& mu, const NoiseSchedule& schedule,
                                     const std::function<FrameMatrix(const FrameMatrix&, double)>& score_uncond,
                                     const NoisyPosterior& posterior, Index target, double gamma,
                                     const SamplerOptions& options) {
  return integrate_reverse(mu, schedule, options, [&](const FrameMatrix& y, double t, double& gn) {
    return guided_score_cg(score_uncond(y, t), posterior, y, t, mu, target, gamma, &gn);
  });
}

SampleResult sample_cg(const DiffusionModel& model, const NoisyPosterior& classifier, std::span<const Index> tokens,
                       const StyleVector& style, Index emotion, double gamma, const SamplerOptions& options) {
  SampleResult out;
  const RowVector<double> e_null = model.emotions.embed(kNullEmotion);
  out.mu = model.generator.generate(tokens, style, e_null);
  out.frames = sample_classifier_guided(
      out.mu, model.score.schedule(),
      [&](const FrameMatrix& y, double t) { return model.score.estimate(y, t, out.mu, style, e_null); }, classifier,
      emotion, gamma, options);
  return out;
}

}  // namespace emosynth
