#include "emosynth/training.hpp"

#include <json.hpp>

#include <cmath>
#include <set>

namespace emosynth {

// ------------------------------------------------------------------ heads

ProbeHead::ProbeHead(const ModelDims& dims, std::uint64_t seed)
    : params(derive_seed(seed, "probe")),
      net_("probe.mlp", MlpShape{.in = dims.style, .hidden = dims.hidden, .hidden_layers = 1, .out = dims.emotions}) {
  net_.init(params);
}

ad::Node ProbeHead::build(ad::Graph& graph, ad::Node style) { return net_.build(graph, params, style); }

Eigen::VectorXd ProbeHead::probabilities(const StyleVector& style) const {
  return softmax_rows(net_.apply(params, style)).row(0).transpose();
}

NoisyClassifier::NoisyClassifier(const ModelDims& dims, std::uint64_t seed)
    : params(derive_seed(seed, "classifier")),
      net_("classifier.mlp", MlpShape{.in = dims.dim + kTimeEmbedding,
                                      .hidden = dims.hidden,
                                      .hidden_layers = dims.hidden_layers,
                                      .out = dims.emotions}) {
  net_.init(params);
}

ad::Node NoisyClassifier::build(ad::Graph& graph, ad::Node residual, std::span<const double> times,
                                const Segments& segments) {
  if (static_cast<Index>(times.size()) != segments.count()) throw std::invalid_argument("one time per segment required");
  Tensor temb(segments.count(), kTimeEmbedding);
  for (Index s = 0; s < segments.count(); ++s) temb.row(s) = time_embedding(times[static_cast<std::size_t>(s)]);
  const ad::Node parts[] = {graph.segment_mean(residual, segments), graph.constant(std::move(temb), "time_embedding")};
  return net_.build(graph, params, graph.concat_cols(parts));
}

Eigen::VectorXd NoisyClassifier::probabilities(const FrameMatrix& y_t, double t, const FrameMatrix& mu) const {
  if (y_t.rows() != mu.rows() || y_t.cols() != mu.cols() || y_t.rows() == 0) {
    throw std::invalid_argument("classifier input shape mismatch");
  }
  Tensor x(1, net_.shape().in);
  x << (y_t - mu).colwise().mean(), time_embedding(t);
  return softmax_rows(net_.apply(params, x)).row(0).transpose();
}

FrameMatrix NoisyClassifier::log_prob_grad(const FrameMatrix& y_t, double t, const FrameMatrix& mu,
                                           Index target) const {
  if (y_t.rows() != mu.rows() || y_t.cols() != mu.cols() || y_t.rows() == 0) {
    throw std::invalid_argument("classifier input shape mismatch");
  }
  if (target < 0 || target >= net_.shape().out) throw std::out_of_range("invalid classifier target");
  // The graph only reads parameters, so a private copy keeps this method const.
  ad::ParamStore store = params;
  ad::Graph g;
  const ad::Node y = g.input("y", y_t.cols(), y_t.rows());
  const ad::Node residual = g.sub(y, g.constant(mu, "mu"));
  const ad::Node parts[] = {g.segment_mean(residual, Segments::single(y_t.rows())),
                            g.constant(time_embedding(t), "time_embedding")};
  const ad::Node logits = net_.build(g, store, g.concat_cols(parts));
  const ad::Node nll = g.softmax_cross_entropy(logits, {target});
  g.forward({{"y", y_t}});
  g.backward(nll);
  return -g.input_grad("y");
}

// ------------------------------------------------------------------ model

Model::Model(const ModelDims& d, const NoiseSchedule& sch, std::uint64_t s)
    : dims(d),
      schedule(sch),
      seed(s),
      style(d, s),
      emotion(d, s),
      generator(d, s),
      score(d, sch, s),
      probe(d, s),
      classifier(d, s) {}

std::vector<std::pair<std::string, ad::ParamStore*>> Model::named_stores() {
  return {{"style", &style.params},         {"emotion", &emotion.params}, {"generator", &generator.params},
          {"score", &score.params},         {"probe", &probe.params},     {"classifier", &classifier.params}};
}

std::vector<std::pair<std::string, const ad::ParamStore*>> Model::named_stores() const {
  return {{"style", &style.params},         {"emotion", &emotion.params}, {"generator", &generator.params},
          {"score", &score.params},         {"probe", &probe.params},     {"classifier", &classifier.params}};
}

ModelDims dims_for(const World& world) {
  ModelDims d;
  d.dim = world.dim();
  d.vocab = world.config.vocab;
  d.emotions = world.emotions();
  return d;
}

// ------------------------------------------------------------------ config

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("train config: " + what); };
  if (steps < 0) fail("steps must be >= 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(lr > 0.0)) fail("lr must be > 0");
  if (!(probe_lr >= 0.0)) fail("probe_lr must be >= 0");
  if (!(lr_final_scale > 0.0 && lr_final_scale <= 1.0)) fail("lr_final_scale must be in (0, 1]");
  if (!(clip_norm > 0.0)) fail("clip_norm must be > 0");
  if (!(p_null >= 0.0 && p_null <= 1.0)) fail("p_null must lie in [0, 1]");
  if (!(alpha > 0.0)) fail("alpha must be > 0");
  if (!(w_recon >= 0.0 && w_dsm >= 0.0 && w_dat >= 0.0)) fail("loss weights must be >= 0");
  if (min_len < 1 || max_len < min_len) fail("need 1 <= min_len <= max_len");
  if (log_every < 1) fail("log_every must be >= 1");
  if (clf_steps < 0 || clf_batch < 1 || !(clf_lr > 0.0) || clf_examples < 1 || clf_reference_len < 1) fail("invalid classifier settings");
}

std::string to_json_line(const LossRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["total"] = r.total;
  j["recon"] = r.recon;
  j["dsm"] = r.dsm;
  j["dat"] = r.dat;
  j["grad_norm"] = r.grad_norm;
  j["style_grad_norm"] = r.style_grad_norm;
  j["probe_grad_norm"] = r.probe_grad_norm;
  j["null_grad_norm"] = r.null_grad_norm;
  return j.dump();
}

// ------------------------------------------------------------------ batches

UtteranceBatch stack_batch(std::vector<Utterance> utterances) {
  if (utterances.empty()) throw std::invalid_argument("empty batch");
  UtteranceBatch b;
  std::vector<Index> lengths;
  for (const auto& u : utterances) lengths.push_back(u.frames.rows());
  b.segments = Segments::from_lengths(lengths);
  b.frames.resize(b.segments.rows(), utterances.front().frames.cols());
  for (std::size_t i = 0; i < utterances.size(); ++i) {
    const auto& u = utterances[i];
    b.frames.middleRows(b.segments.begin(static_cast<Index>(i)), u.frames.rows()) = u.frames;
    b.tokens.insert(b.tokens.end(), u.tokens.begin(), u.tokens.end());
    b.emotions.push_back(u.emotion);
  }
  b.utterances = std::move(utterances);
  return b;
}

UtteranceBatch draw_batch(const World& world, std::span<const Index> speakers, Index batch_size, Index min_len,
                          Index max_len, Rng& rng) {
  if (speakers.empty()) throw std::invalid_argument("no speakers to draw from");
  std::uniform_int_distribution<std::size_t> pick(0, speakers.size() - 1);
  std::uniform_int_distribution<Index> emo(0, world.emotions() - 1);
  std::uniform_int_distribution<Index> len(min_len, max_len);
  std::vector<Utterance> us;
  us.reserve(static_cast<std::size_t>(batch_size));
  for (Index i = 0; i < batch_size; ++i) {
    const Index s = speakers[pick(rng)];
    const Index e = emo(rng);
    auto tokens = random_tokens(world, len(rng), rng);
    us.push_back(sample_utterance(world, s, e, std::move(tokens), rng()));
  }
  return stack_batch(std::move(us));
}

// ------------------------------------------------------------------ DAT

DatGradients dat_gradients(Model& model, const UtteranceBatch& batch, double alpha, bool reverse) {
  model.style.params.zero_grad();
  model.probe.params.zero_grad();
  ad::Graph g;
  ad::Node s = model.style.build(g, g.constant(batch.frames, "frames"), batch.segments);
  if (reverse) s = g.grad_reverse(s, alpha);
  const ad::Node le = g.softmax_cross_entropy(model.probe.build(g, s), batch.emotions);
  g.forward();
  g.backward(le);
  return DatGradients{g.value(le)(0, 0), std::sqrt(model.style.params.grad_squared_norm()),
                      std::sqrt(model.probe.params.grad_squared_norm())};
}

DatGradients dat_step(Model& model, const UtteranceBatch& batch, double alpha, double lr) {
  DatGradients r = dat_gradients(model, batch, alpha, true);
  ad::ParamStore* stores[] = {&model.style.params, &model.probe.params};
  ad::sgd_step(stores, lr, 5.0);
  return r;
}

// ------------------------------------------------------------------ joint training

TrainResult train_model(const World& world, const SpeakerSplit& split, const TrainConfig& config,
                        const ModelDims& dims, const NoiseSchedule& schedule, const ProgressFn& progress) {
  config.validate();
  if (dims.dim != world.dim() || dims.vocab != world.config.vocab || dims.emotions != world.emotions()) {
    throw std::invalid_argument("model dimensions do not match the world");
  }
  if (config.max_len > world.config.max_len) throw std::invalid_argument("train max_len exceeds the world max_len");
  if (split.seen.empty()) throw std::invalid_argument("no seen speakers to train on");

  TrainResult result{Checkpoint{Model(dims, schedule, derive_seed(config.seed, "model")), config, world.hash()}, {}};
  Model& m = result.checkpoint.model;
  Rng rng(derive_seed(config.seed, "train"));
  std::bernoulli_distribution drop(config.p_null);
  ad::ParamStore* stores[] = {&m.style.params, &m.emotion.params, &m.generator.params, &m.score.params,
                              &m.probe.params};
  ad::ParamStore* main_stores[] = {&m.style.params, &m.emotion.params, &m.generator.params, &m.score.params};
  ad::ParamStore* probe_store[] = {&m.probe.params};
  const double probe_lr = config.probe_lr > 0.0 ? config.probe_lr : config.lr;
  const bool use_dat = config.w_dat > 0.0;
  double null_total = 0.0;

  for (Index step = 0; step < config.steps; ++step) {
    const UtteranceBatch batch = draw_batch(world, split.seen, config.batch_size, config.min_len, config.max_len, rng);
    std::vector<Index> labels = batch.emotions;
    for (Index& l : labels) {
      if (drop(rng)) l = kNullEmotion;
    }
    const DsmNoise noise = draw_dsm_noise(batch.segments, world.dim(), schedule.terminal, rng);

    ad::Graph g;
    const ad::Node frames = g.constant(batch.frames, "frames");
    const ad::Node s = m.style.build(g, frames, batch.segments);
    const ad::Node e = m.emotion.build(g, labels);
    const ad::Node mu = m.generator.build(g, batch.tokens, s, e, batch.segments);
    const ad::Node recon = g.squared_error(mu, frames);
    const bool through = config.dsm_through_condition;
    const ad::Node dsm = build_dsm_loss(g, m.score, frames, through ? mu : g.stop_gradient(mu),
                                        through ? s : g.stop_gradient(s), through ? e : g.stop_gradient(e),
                                        batch.segments, noise);
    ad::Node total = g.add(g.scale(recon, config.w_recon), g.scale(dsm, config.w_dsm));
    ad::Node dat;
    if (use_dat) {
      dat = g.softmax_cross_entropy(m.probe.build(g, g.grad_reverse(s, config.alpha)), batch.emotions);
      total = g.add(total, g.scale(dat, config.w_dat));
    }

    for (ad::ParamStore* p : stores) p->zero_grad();
    try {
      g.forward();
      g.backward(total);
    } catch (const ad::GraphError& err) {
      throw std::runtime_error("training diverged at step " + std::to_string(step) + ": " + err.what());
    }

    LossRecord rec;
    rec.step = step;
    rec.total = g.value(total)(0, 0);
    rec.recon = g.value(recon)(0, 0);
    rec.dsm = g.value(dsm)(0, 0);
    rec.dat = use_dat ? g.value(dat)(0, 0) : 0.0;
    rec.style_grad_norm = std::sqrt(m.style.params.grad_squared_norm());
    rec.probe_grad_norm = std::sqrt(m.probe.params.grad_squared_norm());
    rec.null_grad_norm = m.emotion.params.grad("emotion.null").norm();
    null_total += rec.null_grad_norm;
    rec.grad_norm = std::sqrt(rec.style_grad_norm * rec.style_grad_norm + rec.probe_grad_norm * rec.probe_grad_norm +
                              m.emotion.params.grad_squared_norm() + m.generator.params.grad_squared_norm() +
                              m.score.params.grad_squared_norm());
    const double done = static_cast<double>(step) / static_cast<double>(std::max<Index>(1, config.steps - 1));
    ad::sgd_step(main_stores, config.lr * (1.0 - (1.0 - config.lr_final_scale) * done), config.clip_norm);
    if (use_dat) ad::sgd_step(probe_store, probe_lr, config.clip_norm);
    if (!std::isfinite(rec.total) || !std::isfinite(rec.grad_norm)) {
      throw std::runtime_error("training diverged at step " + std::to_string(step) + ": non-finite loss");
    }
    if (step % config.log_every == 0 || step + 1 == config.steps) {
      result.trace.push_back(rec);
      if (progress) progress(rec);
    }
  }
  for (ad::ParamStore* p : stores) p->zero_grad();
  result.checkpoint.step = config.steps;
  result.checkpoint.null_row_trained = null_total > 0.0;
  return result;
}

// ------------------------------------------------------------------ noisy classifier

std::vector<double> train_noisy_classifier(NoisyClassifier& classifier, std::span<const LabeledExample> data,
                                           const NoiseSchedule& schedule, Index steps, Index batch_size, double lr,
                                           std::uint64_t seed) {
  schedule.validate();
  if (data.empty()) throw std::invalid_argument("classifier training data is empty");
  if (batch_size < 1 || steps < 0) throw std::invalid_argument("invalid classifier training settings");
  std::set<Index> classes;
  for (const auto& ex : data) {
    if (ex.y0.rows() == 0 || ex.y0.rows() != ex.mu.rows() || ex.y0.cols() != ex.mu.cols()) {
      throw std::invalid_argument("classifier example shape mismatch");
    }
    classes.insert(ex.label);
  }
  if (classes.size() < 2) throw std::invalid_argument("classifier training data holds a single class");

  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  std::uniform_real_distribution<double> time(kMinTime, schedule.terminal);
  ad::ParamStore* stores[] = {&classifier.params};
  std::vector<double> losses;
  losses.reserve(static_cast<std::size_t>(steps));
  for (Index step = 0; step < steps; ++step) {
    std::vector<const LabeledExample*> chosen;
    std::vector<Index> lengths, labels;
    std::vector<double> times;
    for (Index i = 0; i < batch_size; ++i) {
      chosen.push_back(&data[pick(rng)]);
      lengths.push_back(chosen.back()->y0.rows());
      labels.push_back(chosen.back()->label);
      times.push_back(time(rng));
    }
    const Segments seg = Segments::from_lengths(lengths);
    Tensor residual(seg.rows(), data.front().y0.cols());
    for (Index i = 0; i < batch_size; ++i) {
      const auto& ex = *chosen[static_cast<std::size_t>(i)];
      const Perturbed p = perturb(ex.y0, ex.mu, times[static_cast<std::size_t>(i)], schedule, rng());
      residual.middleRows(seg.begin(i), seg.length(i)) = p.y_t - ex.mu;
    }
    ad::Graph g;
    const ad::Node loss =
        g.softmax_cross_entropy(classifier.build(g, g.constant(std::move(residual), "residual"), times, seg), labels);
    classifier.params.zero_grad();
    g.forward();
    g.backward(loss);
    ad::sgd_step(stores, lr, 5.0);
    losses.push_back(g.value(loss)(0, 0));
  }
  classifier.params.zero_grad();
  return losses;
}

std::vector<LabeledExample> classifier_dataset(const World& world, const SpeakerSplit& split, const Model& model,
                                               Index count, Index reference_len, std::uint64_t seed) {
  if (split.seen.empty()) throw std::invalid_argument("no seen speakers");
  if (reference_len < 1) throw std::invalid_argument("reference length must be positive");
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, split.seen.size() - 1);
  std::uniform_int_distribution<Index> len(4, std::min<Index>(12, world.config.max_len));
  const RowVector<double> e_null = model.emotion.embed(kNullEmotion);
  std::vector<LabeledExample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (Index i = 0; i < count; ++i) {
    const Index spk = split.seen[pick(rng)];
    const Index emo = i % world.emotions();
    auto tokens = random_tokens(world, len(rng), rng);
    const Utterance target = sample_utterance(world, spk, emo, tokens, rng());
    const Utterance ref =
        sample_utterance(world, spk, kNeutral, random_tokens(world, reference_len, rng), rng());
    const StyleVector s = model.style.encode(ref.frames);
    out.push_back(LabeledExample{target.frames, model.generator.generate(tokens, s, e_null), emo});
  }
  return out;
}

double classifier_accuracy(const NoisyClassifier& classifier, std::span<const LabeledExample> data,
                           const NoiseSchedule& schedule, double t, std::uint64_t seed) {
  if (data.empty()) throw std::invalid_argument("no examples");
  Rng rng(seed);
  Index hits = 0;
  for (const auto& ex : data) {
    const Perturbed p = perturb(ex.y0, ex.mu, t, schedule, rng());
    Index arg = 0;
    classifier.probabilities(p.y_t, t, ex.mu).maxCoeff(&arg);
    hits += arg == ex.label ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

std::vector<double> fit_classifier(Checkpoint& ckpt, const World& world, const SpeakerSplit& split) {
  if (ckpt.world_hash != world.hash()) throw std::invalid_argument("checkpoint was trained on a different world");
  const TrainConfig& c = ckpt.config;
  const auto data = classifier_dataset(world, split, ckpt.model, c.clf_examples, c.clf_reference_len,
                                       derive_seed(c.seed, "clf_data"));
  auto losses = train_noisy_classifier(ckpt.model.classifier, data, ckpt.model.schedule, c.clf_steps, c.clf_batch,
                                       c.clf_lr, derive_seed(c.seed, "clf_train"));
  ckpt.classifier_trained = true;
  return losses;
}

}  // namespace emosynth
