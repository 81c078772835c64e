#include "emosynth/eval.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <numeric>

namespace emosynth {

namespace {

void check_pairs(std::span<const FrameMatrix> samples, std::span<const EvalCondition> conditions) {
  if (samples.empty()) throw std::invalid_argument("no samples to evaluate");
  if (samples.size() != conditions.size()) throw std::invalid_argument("samples and conditions differ in count");
}

std::string fmt(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

std::vector<double> ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

Index bayes_emotion(const World& world, Index speaker, std::span<const Index> tokens, const FrameMatrix& frames) {
  const FrameMatrix zero = FrameMatrix::Zero(frames.rows(), frames.cols());
  const Eigen::VectorXd p = analytic_emotion_posterior(world, speaker, tokens, zero, frames, 0.0, NoiseSchedule{});
  Index arg = 0;
  p.maxCoeff(&arg);
  return arg;
}

double eca_oracle(const World& world, std::span<const FrameMatrix> samples, std::span<const EvalCondition> conditions) {
  check_pairs(samples, conditions);
  Index hits = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& c = conditions[i];
    world.check_emotion(c.emotion);
    hits += bayes_emotion(world, c.speaker, c.tokens, samples[i]) == c.emotion ? 1 : 0;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(samples.size());
}

RowVector<double> mean_frame_embedding(const World& world, const FrameMatrix& frames, std::span<const Index> tokens,
                                       Index emotion) {
  world.check_emotion(emotion);
  world.check_tokens(tokens);
  if (frames.rows() != static_cast<Index>(tokens.size()) || frames.cols() != world.dim()) {
    throw std::invalid_argument("frame/token length mismatch");
  }
  RowVector<double> acc = RowVector<double>::Zero(world.dim());
  for (Index l = 0; l < frames.rows(); ++l) acc += frames.row(l) - world.token_effect.row(tokens[static_cast<std::size_t>(l)]);
  return acc / static_cast<double>(frames.rows()) - world.emotion_offset.row(emotion);
}

ContentError content_error(const World& world, std::span<const FrameMatrix> samples,
                           std::span<const EvalCondition> conditions) {
  check_pairs(samples, conditions);
  ContentError out;
  double total = 0.0;
  Index rows = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& c = conditions[i];
    const FrameMatrix m = world.frame_means(c.speaker, c.emotion, c.tokens);
    if (m.rows() != samples[i].rows() || m.cols() != samples[i].cols()) {
      throw std::invalid_argument("content_error: sample " + std::to_string(i) + " has shape " +
                                  shape_string(samples[i]) + ", expected " + shape_string(m));
    }
    const double sq = (samples[i] - m).squaredNorm();
    out.per_sample.push_back(sq / static_cast<double>(m.rows()));
    total += sq;
    rows += m.rows();
  }
  out.mean = total / static_cast<double>(rows);
  return out;
}

Index nearest_speaker(const World& world, const FrameMatrix& frames, std::span<const Index> tokens) {
  const RowVector<double> m = mean_frame_embedding(world, frames, tokens, kNeutral);
  Index best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Index s = 0; s < world.speakers(); ++s) {
    for (Index e = 0; e < world.emotions(); ++e) {
      const double d = (m - world.speaker_base.row(s) - world.emotion_offset.row(e)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = s;
      }
    }
  }
  return best;
}

double probe_disentanglement(const Tensor& vectors, std::span<const Index> labels, Index classes,
                             const ProbeOptions& options) {
  const auto n = static_cast<Index>(labels.size());
  if (vectors.rows() != n) throw std::invalid_argument("probe: vector and label counts differ");
  if (classes < 2) throw std::invalid_argument("probe needs at least two classes");
  if (!(options.train_fraction > 0.0 && options.train_fraction < 1.0)) {
    throw std::invalid_argument("probe train_fraction must lie in (0, 1)");
  }
  std::vector<Index> per_class(static_cast<std::size_t>(classes), 0);
  for (Index l : labels) {
    if (l < 0 || l >= classes) throw std::out_of_range("probe label out of range");
    ++per_class[static_cast<std::size_t>(l)];
  }
  for (Index c = 0; c < classes; ++c) {
    if (per_class[static_cast<std::size_t>(c)] < 10) {
      throw std::invalid_argument("probe: class " + std::to_string(c) + " has fewer than 10 vectors");
    }
  }

  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(options.seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<Index>(std::floor(options.train_fraction * static_cast<double>(n)));
  if (n_train < 1 || n_train >= n) throw std::invalid_argument("probe split leaves an empty side");

  Tensor train(n_train, vectors.cols()), test(n - n_train, vectors.cols());
  std::vector<Index> train_labels, test_labels;
  for (Index i = 0; i < n; ++i) {
    const Index src = order[static_cast<std::size_t>(i)];
    if (i < n_train) {
      train.row(i) = vectors.row(src);
      train_labels.push_back(labels[static_cast<std::size_t>(src)]);
    } else {
      test.row(i - n_train) = vectors.row(src);
      test_labels.push_back(labels[static_cast<std::size_t>(src)]);
    }
  }
  const RowVector<double> mean = train.colwise().mean();
  RowVector<double> sd = (train.rowwise() - mean).colwise().norm() / std::sqrt(static_cast<double>(n_train));
  for (Index c = 0; c < sd.size(); ++c) sd(c) = sd(c) > 1e-12 ? sd(c) : 1.0;
  auto standardize = [&](Tensor& x) {
    x.rowwise() -= mean;
    x.array().rowwise() /= sd.array();
  };
  standardize(train);
  standardize(test);

  ad::ParamStore store(derive_seed(options.seed, "probe"));
  store.add_zeros("W", vectors.cols(), classes);
  store.add_zeros("b", 1, classes);
  ad::Graph g;
  const ad::Node logits = g.affine(g.constant(train, "x"), g.param(store, "W"), g.param(store, "b"));
  const ad::Node loss = g.softmax_cross_entropy(logits, train_labels);
  for (Index it = 0; it < options.iterations; ++it) {
    store.zero_grad();
    g.forward();
    g.backward(loss);
    for (auto& e : store.entries()) e.value -= options.learning_rate * e.grad;
  }
  const Tensor scores = affine_rows(test, store.value("W"), store.value("b"));
  Index hits = 0;
  for (Index i = 0; i < scores.rows(); ++i) {
    Index arg = 0;
    scores.row(i).maxCoeff(&arg);
    hits += arg == test_labels[static_cast<std::size_t>(i)] ? 1 : 0;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(scores.rows());
}

StyleSet collect_styles(const World& world, std::span<const Index> speakers, const StyleEncoder& encoder,
                        Index per_emotion, Index length, std::uint64_t seed) {
  if (speakers.empty()) throw std::invalid_argument("collect_styles: no speakers");
  if (per_emotion < 1) throw std::invalid_argument("collect_styles: per_emotion must be >= 1");
  const Index k = world.emotions();
  StyleSet set;
  Rng rng(seed);
  for (Index i = 0; i < per_emotion * k; ++i) {
    const Index emotion = i % k;
    const Index speaker = speakers[static_cast<std::size_t>((i / k) % static_cast<Index>(speakers.size()))];
    const Utterance u = sample_utterance(world, speaker, emotion, random_tokens(world, length, rng), rng());
    const StyleVector s = encoder.encode(u.frames);
    if (set.vectors.size() == 0) set.vectors.resize(per_emotion * k, s.size());
    set.vectors.row(i) = s;
    set.speakers.push_back(speaker);
    set.emotions.push_back(emotion);
  }
  return set;
}

std::string styles_tsv(const StyleSet& set) {
  std::string out = "speaker\temotion";
  for (Index c = 0; c < set.vectors.cols(); ++c) out += "\ts" + std::to_string(c);
  out += "\n";
  for (Index i = 0; i < set.vectors.rows(); ++i) {
    out += std::to_string(set.speakers[static_cast<std::size_t>(i)]) + "\t" +
           std::to_string(set.emotions[static_cast<std::size_t>(i)]);
    for (Index c = 0; c < set.vectors.cols(); ++c) out += "\t" + fmt(set.vectors(i, c));
    out += "\n";
  }
  return out;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("spearman needs two equal-length series");
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  const Eigen::Map<const Eigen::VectorXd> a(rx.data(), static_cast<Index>(rx.size()));
  const Eigen::Map<const Eigen::VectorXd> b(ry.data(), static_cast<Index>(ry.size()));
  const Eigen::VectorXd ca = a.array() - a.mean();
  const Eigen::VectorXd cb = b.array() - b.mean();
  const double den = ca.norm() * cb.norm();
  if (den == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return ca.dot(cb) / den;
}

namespace {

// Pairwise Euclidean distances of the pooled rows, stored in single precision.
Eigen::MatrixXf pooled_distances(const Tensor& a, const Tensor& b) {
  const Index n = a.rows() + b.rows();
  Tensor pooled(n, a.cols());
  pooled << a, b;
  Eigen::MatrixXf d(n, n);
  for (Index i = 0; i < n; ++i) {
    d(i, i) = 0.0F;
    for (Index j = i + 1; j < n; ++j) {
      d(i, j) = d(j, i) = static_cast<float>((pooled.row(i) - pooled.row(j)).norm());
    }
  }
  return d;
}

double energy_from(const Eigen::MatrixXf& d, std::span<const Index> group, Index n_a) {
  const auto n = static_cast<Index>(group.size());
  const Index n_b = n - n_a;
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (Index i = 0; i < n; ++i) {
    const bool gi = group[static_cast<std::size_t>(i)] == 0;
    for (Index j = i + 1; j < n; ++j) {
      const bool gj = group[static_cast<std::size_t>(j)] == 0;
      const double v = d(i, j);
      if (gi && gj) {
        aa += v;
      } else if (!gi && !gj) {
        bb += v;
      } else {
        ab += v;
      }
    }
  }
  const auto fa = static_cast<double>(n_a);
  const auto fb = static_cast<double>(n_b);
  return 2.0 * ab / (fa * fb) - 2.0 * aa / (fa * fa) - 2.0 * bb / (fb * fb);
}

void check_two_sample(const Tensor& a, const Tensor& b) {
  if (a.rows() < 2 || b.rows() < 2 || a.cols() != b.cols()) throw std::invalid_argument("energy distance needs two samples of equal width");
}

}  // namespace

double energy_distance(const Tensor& a, const Tensor& b) {
  check_two_sample(a, b);
  std::vector<Index> group(static_cast<std::size_t>(a.rows() + b.rows()), 1);
  std::fill(group.begin(), group.begin() + a.rows(), 0);
  return energy_from(pooled_distances(a, b), group, a.rows());
}

PermutationTest energy_permutation_test(const Tensor& a, const Tensor& b, Index permutations, std::uint64_t seed) {
  check_two_sample(a, b);
  if (permutations < 1) throw std::invalid_argument("need at least one permutation");
  const Eigen::MatrixXf d = pooled_distances(a, b);
  std::vector<Index> group(static_cast<std::size_t>(a.rows() + b.rows()), 1);
  std::fill(group.begin(), group.begin() + a.rows(), 0);
  PermutationTest out;
  out.statistic = energy_from(d, group, a.rows());
  Rng rng(seed);
  Index at_least = 0;
  for (Index p = 0; p < permutations; ++p) {
    std::shuffle(group.begin(), group.end(), rng);
    at_least += energy_from(d, group, a.rows()) >= out.statistic ? 1 : 0;
  }
  out.p_value = static_cast<double>(at_least + 1) / static_cast<double>(permutations + 1);
  return out;
}

Utterance reference_utterance(const World& world, const SpeakerSplit& split, Index speaker, Index emotion,
                              std::vector<Index> tokens, std::uint64_t seed) {
  const bool unseen = std::find(split.unseen.begin(), split.unseen.end(), speaker) != split.unseen.end();
  if (unseen && emotion != kNeutral) {
    throw std::invalid_argument("unseen speaker " + std::to_string(speaker) +
                                " may only be referenced through Neutral speech");
  }
  return sample_utterance(world, speaker, emotion, std::move(tokens), seed);
}

std::string_view speaker_group_name(SpeakerGroup g) { return g == SpeakerGroup::Seen ? "seen" : "unseen"; }

SpeakerGroup parse_speaker_group(std::string_view name) {
  if (name == "seen") return SpeakerGroup::Seen;
  if (name == "unseen") return SpeakerGroup::Unseen;
  throw std::invalid_argument("unknown speaker group '" + std::string(name) + "' (seen, unseen)");
}

std::vector<SweepRow> guidance_sweep(const Checkpoint& ckpt, const World& world, const SpeakerSplit& split,
                                     const SweepOptions& options) {
  if (options.gammas.empty()) throw std::invalid_argument("sweep needs at least one gamma");
  if (!std::is_sorted(options.gammas.begin(), options.gammas.end())) {
    throw std::invalid_argument("sweep gammas must be ascending");
  }
  if (options.seeds.empty() || options.samples_per_seed < 1 || options.scripts < 1) {
    throw std::invalid_argument("sweep needs seeds, samples and scripts");
  }
  if (options.mode == GuidanceMode::None) throw std::invalid_argument("sweep mode must be cg or cfg");
  if (options.mode == GuidanceMode::Classifier && !ckpt.classifier_trained) {
    throw std::invalid_argument("classifier guidance requested but the checkpoint has no trained classifier");
  }
  if (ckpt.world_hash != world.hash()) throw std::invalid_argument("checkpoint was trained on a different world");
  const std::vector<Index>& speakers = options.group == SpeakerGroup::Seen ? split.seen : split.unseen;
  if (speakers.empty()) throw std::invalid_argument("speaker group is empty");
  if (world.emotions() < 2) throw std::invalid_argument("sweep needs a non-Neutral emotion");

  std::vector<std::vector<Index>> scripts;
  Rng script_rng(derive_seed(world.seed, "scripts"));
  for (Index k = 0; k < options.scripts; ++k) scripts.push_back(random_tokens(world, options.script_len, script_rng));

  struct Job {
    EvalCondition cond;
    Utterance reference;
    StyleVector style;
    std::uint64_t sampler_seed;
  };
  std::vector<Job> jobs;
  const auto n_spk = static_cast<Index>(speakers.size());
  const Index n_emo = world.emotions() - 1;
  for (std::uint64_t seed : options.seeds) {
    for (Index i = 0; i < options.samples_per_seed; ++i) {
      Rng rng(derive_seed(derive_seed(seed, "sweep"), static_cast<std::uint64_t>(i)));
      Job j;
      j.cond.speaker = speakers[static_cast<std::size_t>(i % n_spk)];
      j.cond.emotion = 1 + (i / n_spk) % n_emo;
      std::uniform_int_distribution<Index> pick(0, options.scripts - 1);
      j.cond.tokens = scripts[static_cast<std::size_t>(pick(rng))];
      j.reference = reference_utterance(world, split, j.cond.speaker, kNeutral,
                                        random_tokens(world, options.reference_len, rng), rng());
      j.style = ckpt.model.style.encode(j.reference.frames);
      j.sampler_seed = rng();
      jobs.push_back(std::move(j));
    }
  }

  const DiffusionModel dm = ckpt.diffusion();
  std::vector<SweepRow> rows;
  for (double gamma : options.gammas) {
    std::vector<FrameMatrix> samples;
    std::vector<EvalCondition> conds;
    double secs_frame = 0.0, secs_style = 0.0;
    Index speaker_hits = 0;
    for (const Job& j : jobs) {
      SamplerOptions so;
      so.steps = options.sampler_steps;
      so.stochastic = options.stochastic;
      so.seed = j.sampler_seed;
      FrameMatrix y = options.mode == GuidanceMode::ClassifierFree
                          ? sample_cfg(dm, j.cond.tokens, j.style, j.cond.emotion, gamma, so).frames
                          : sample_cg(dm, ckpt.model.classifier, j.cond.tokens, j.style, j.cond.emotion, gamma, so).frames;
      const Index predicted = bayes_emotion(world, j.cond.speaker, j.cond.tokens, y);
      secs_frame += secs_analog(mean_frame_embedding(world, y, j.cond.tokens, predicted),
                                mean_frame_embedding(world, j.reference.frames, j.reference.tokens, kNeutral));
      secs_style += secs_analog(ckpt.model.style.encode(y), j.style);
      speaker_hits += nearest_speaker(world, y, j.cond.tokens) == j.cond.speaker ? 1 : 0;
      samples.push_back(std::move(y));
      conds.push_back(j.cond);
    }
    SweepRow row;
    row.gamma = gamma;
    row.mode = options.mode;
    row.n = static_cast<Index>(jobs.size());
    row.eca = eca_oracle(world, samples, conds);
    row.content_error = content_error(world, samples, conds).mean;
    row.secs_mean_frame = secs_frame / static_cast<double>(row.n);
    row.secs_style = secs_style / static_cast<double>(row.n);
    row.speaker_accuracy = 100.0 * static_cast<double>(speaker_hits) / static_cast<double>(row.n);
    rows.push_back(row);
  }
  return rows;
}

std::string sweep_csv(std::span<const SweepRow> rows) {
  std::string out = "gamma,mode,eca,content_error,secs_mean_frame,secs_style,n\n";
  for (const auto& r : rows) {
    out += fmt(r.gamma) + "," + std::string(guidance_mode_name(r.mode)) + "," + fmt(r.eca) + "," +
           fmt(r.content_error) + "," + fmt(r.secs_mean_frame) + "," + fmt(r.secs_style) + "," + std::to_string(r.n) +
           "\n";
  }
  return out;
}

std::string to_json_line(const EvalReport& r) {
  if (r.metric.empty()) throw std::invalid_argument("report without a metric name");
  nlohmann::ordered_json j;
  j["metric"] = r.metric;
  j["value"] = r.value;
  j["n"] = r.n;
  j["fingerprint"] = {{"world_hash", hex64(r.fingerprint.world_hash)},
                      {"checkpoint_hash", hex64(r.fingerprint.checkpoint_hash)},
                      {"gamma", r.fingerprint.gamma},
                      {"mode", r.fingerprint.mode},
                      {"seed", r.fingerprint.seed}};
  return j.dump();
}

}  // namespace emosynth
