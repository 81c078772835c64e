#include "emosynth/synthworld.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>

namespace emosynth {

void WorldConfig::validate() const {
  if (speakers < 4) throw std::invalid_argument("world needs at least 4 speakers");
  if (emotions < 2) throw std::invalid_argument("world needs at least 2 emotions");
  if (dim < 2) throw std::invalid_argument("frame dimension must be at least 2");
  if (vocab < 1) throw std::invalid_argument("vocabulary must be nonempty");
  if (max_len < 1) throw std::invalid_argument("max_len must be positive");
  if (!(tau > 0.0)) throw std::invalid_argument("tau must be positive");
  if (!(speaker_scale > 0.0 && emotion_scale > 0.0 && token_scale >= 0.0)) {
    throw std::invalid_argument("table scales must be positive");
  }
}

FrameMatrix World::frame_means(Index speaker, Index emotion, std::span<const Index> tokens) const {
  check_speaker(speaker);
  check_emotion(emotion);
  check_tokens(tokens);
  FrameMatrix m(static_cast<Index>(tokens.size()), dim());
  for (Index l = 0; l < m.rows(); ++l) {
    m.row(l) = speaker_base.row(speaker) + emotion_offset.row(emotion) +
               token_effect.row(tokens[static_cast<std::size_t>(l)]);
  }
  return m;
}

void World::check_speaker(Index speaker) const {
  if (speaker < 0 || speaker >= speakers()) throw std::out_of_range("invalid speaker id " + std::to_string(speaker));
}

void World::check_emotion(Index emotion) const {
  if (emotion < 0 || emotion >= emotions()) throw std::out_of_range("invalid emotion id " + std::to_string(emotion));
}

void World::check_tokens(std::span<const Index> tokens) const {
  if (tokens.empty()) throw std::invalid_argument("token sequence is empty");
  if (static_cast<Index>(tokens.size()) > config.max_len) {
    throw std::invalid_argument("token sequence longer than max_len " + std::to_string(config.max_len));
  }
  for (Index x : tokens) {
    if (x < 0 || x >= config.vocab) throw std::out_of_range("invalid token id " + std::to_string(x));
  }
}

std::uint64_t World::hash() const {
  std::ostringstream os;
  write_world(os, *this);
  return fnv1a(os.str());
}

double min_pairwise_distance(const Tensor& rows) {
  double best = std::numeric_limits<double>::infinity();
  for (Index i = 0; i < rows.rows(); ++i) {
    for (Index j = i + 1; j < rows.rows(); ++j) best = std::min(best, (rows.row(i) - rows.row(j)).norm());
  }
  return best;
}

World make_world(const WorldConfig& config, std::uint64_t seed) {
  config.validate();
  World w;
  w.config = config;
  w.seed = seed;
  const double min_sep = 4.0 * config.tau;

  Rng rng(derive_seed(seed, "world"));
  constexpr int kMaxAttempts = 1000;
  bool ok = false;
  for (int attempt = 0; attempt < kMaxAttempts && !ok; ++attempt) {
    w.speaker_base = config.speaker_scale * standard_normal(config.speakers, config.dim, rng);
    w.emotion_offset = config.emotion_scale * standard_normal(config.emotions, config.dim, rng);
    w.emotion_offset.row(kNeutral).setZero();
    ok = min_pairwise_distance(w.speaker_base) >= min_sep && min_pairwise_distance(w.emotion_offset) >= min_sep;
  }
  if (!ok) {
    throw std::runtime_error("could not separate speaker/emotion tables by 4*tau in 1000 draws; "
                             "use a larger frame dimension, larger table scales or a smaller tau");
  }
  w.token_effect = config.token_scale * standard_normal(config.vocab, config.dim, rng);
  return w;
}

Utterance sample_utterance(const World& world, Index speaker, Index emotion, std::vector<Index> tokens,
                           std::uint64_t seed) {
  Utterance u;
  u.speaker = speaker;
  u.emotion = emotion;
  u.frames = world.frame_means(speaker, emotion, tokens);
  Rng rng(seed);
  u.frames += world.tau() * standard_normal(u.frames.rows(), u.frames.cols(), rng);
  u.tokens = std::move(tokens);
  return u;
}

std::vector<Index> random_tokens(const World& world, Index length, Rng& rng) {
  std::uniform_int_distribution<Index> pick(0, world.config.vocab - 1);
  std::vector<Index> out(static_cast<std::size_t>(length));
  for (auto& x : out) x = pick(rng);
  return out;
}

SpeakerSplit split_speakers(const World& world, Index n_seen, std::uint64_t seed) {
  if (n_seen < 1 || n_seen >= world.speakers()) {
    throw std::invalid_argument("n_seen must lie in [1, " + std::to_string(world.speakers() - 1) + "]");
  }
  std::vector<Index> ids(static_cast<std::size_t>(world.speakers()));
  std::iota(ids.begin(), ids.end(), Index{0});
  Rng rng(derive_seed(seed, "split"));
  for (std::size_t i = ids.size() - 1; i > 0; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i);
    std::swap(ids[i], ids[pick(rng)]);
  }
  SpeakerSplit split;
  split.seen.assign(ids.begin(), ids.begin() + n_seen);
  split.unseen.assign(ids.begin() + n_seen, ids.end());
  std::sort(split.seen.begin(), split.seen.end());
  std::sort(split.unseen.begin(), split.unseen.end());
  return split;
}

// ------------------------------------------------------------ serialization

namespace {

constexpr int kWorldFormatVersion = 1;

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_matrix(std::ostream& os, const char* name, const Tensor& m) {
  os << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) os << (j ? " " : "") << fmt17(m(i, j));
    os << '\n';
  }
}

class Reader {
 public:
  explicit Reader(std::istream& is) : is_(is) {}

  std::string word() {
    std::string w;
    if (!(is_ >> w)) throw std::runtime_error("world file: unexpected end of input");
    return w;
  }

  void expect(const std::string& key) {
    const std::string w = word();
    if (w != key) throw std::runtime_error("world file: expected '" + key + "', found '" + w + "'");
  }

  double number() {
    const std::string w = word();
    char* end = nullptr;
    const double v = std::strtod(w.c_str(), &end);
    if (end == w.c_str() || *end != '\0') throw std::runtime_error("world file: bad number '" + w + "'");
    return v;
  }

  Index integer() {
    const double v = number();
    if (v != std::floor(v)) throw std::runtime_error("world file: expected an integer");
    return static_cast<Index>(v);
  }

  Tensor matrix(const std::string& name, Index rows, Index cols) {
    expect(name);
    if (integer() != rows || integer() != cols) throw std::runtime_error("world file: bad shape for " + name);
    Tensor m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = number();
    return m;
  }

 private:
  std::istream& is_;
};

}  // namespace

void write_world(std::ostream& os, const World& w) {
  const auto& c = w.config;
  os << "emosynth-world " << kWorldFormatVersion << '\n'
     << "seed " << w.seed << '\n'
     << "dim " << c.dim << '\n'
     << "vocab " << c.vocab << '\n'
     << "speakers " << c.speakers << '\n'
     << "emotions " << c.emotions << '\n'
     << "tau " << fmt17(c.tau) << '\n'
     << "max_len " << c.max_len << '\n'
     << "speaker_scale " << fmt17(c.speaker_scale) << '\n'
     << "emotion_scale " << fmt17(c.emotion_scale) << '\n'
     << "token_scale " << fmt17(c.token_scale) << '\n';
  write_matrix(os, "speaker_base", w.speaker_base);
  write_matrix(os, "emotion_offset", w.emotion_offset);
  write_matrix(os, "token_effect", w.token_effect);
}

World read_world(std::istream& is) {
  Reader r(is);
  r.expect("emosynth-world");
  if (r.integer() != kWorldFormatVersion) throw std::runtime_error("world file: unsupported version");
  World w;
  r.expect("seed");
  const std::string seed = r.word();
  w.seed = std::stoull(seed);
  auto& c = w.config;
  r.expect("dim");
  c.dim = r.integer();
  r.expect("vocab");
  c.vocab = r.integer();
  r.expect("speakers");
  c.speakers = r.integer();
  r.expect("emotions");
  c.emotions = r.integer();
  r.expect("tau");
  c.tau = r.number();
  r.expect("max_len");
  c.max_len = r.integer();
  r.expect("speaker_scale");
  c.speaker_scale = r.number();
  r.expect("emotion_scale");
  c.emotion_scale = r.number();
  r.expect("token_scale");
  c.token_scale = r.number();
  c.validate();
  w.speaker_base = r.matrix("speaker_base", c.speakers, c.dim);
  w.emotion_offset = r.matrix("emotion_offset", c.emotions, c.dim);
  w.token_effect = r.matrix("token_effect", c.vocab, c.dim);
  return w;
}

// ------------------------------------------------------------ oracles

namespace {

struct NoisedComponents {
  std::vector<FrameMatrix> means;  // per component, noised means m_t
  Eigen::VectorXd log_lik;         // per component log N(Y_t; m_t, v I)
  double variance = 0.0;
};

double noised_variance(const World& world, double t, const NoiseSchedule& schedule) {
  schedule.validate();
  if (!(t >= 0.0 && t <= schedule.terminal)) throw std::invalid_argument("t must lie in [0, T]");
  const double rho = schedule.rho(t);
  const double v = world.tau() * world.tau() * rho * rho + schedule.variance(t);
  if (!(v > 0.0)) throw std::domain_error("degenerate density: t = 0 with tau = 0");
  return v;
}

void check_frames(const World& world, std::span<const Index> tokens, const FrameMatrix& mu, const FrameMatrix& y) {
  world.check_tokens(tokens);
  const auto L = static_cast<Index>(tokens.size());
  if (mu.rows() != L || mu.cols() != world.dim() || y.rows() != L || y.cols() != world.dim()) {
    throw std::invalid_argument("oracle shape mismatch: tokens " + std::to_string(L) + ", mu " + shape_string(mu) +
                                ", Y_t " + shape_string(y));
  }
}

NoisedComponents noised_components(const World& world, std::span<const std::pair<Index, Index>> components,
                                   std::span<const Index> tokens, const FrameMatrix& mu, const FrameMatrix& y,
                                   double t, const NoiseSchedule& schedule) {
  check_frames(world, tokens, mu, y);
  NoisedComponents out;
  out.variance = noised_variance(world, t, schedule);
  const double rho = schedule.rho(t);
  const double log_norm = -0.5 * static_cast<double>(y.size()) * std::log(2.0 * std::numbers::pi * out.variance);
  out.log_lik.resize(static_cast<Index>(components.size()));
  for (std::size_t c = 0; c < components.size(); ++c) {
    const auto [spk, emo] = components[c];
    FrameMatrix m = mu + (world.frame_means(spk, emo, tokens) - mu) * rho;
    out.log_lik(static_cast<Index>(c)) = log_norm - 0.5 * (y - m).squaredNorm() / out.variance;
    out.means.push_back(std::move(m));
  }
  return out;
}

std::vector<std::pair<Index, Index>> expand(const World& world, const ComponentPrior& prior) {
  if (prior.speakers.empty()) throw std::invalid_argument("component prior has no speakers");
  std::vector<std::pair<Index, Index>> out;
  for (Index s : prior.speakers) {
    world.check_speaker(s);
    if (prior.emotion) {
      world.check_emotion(*prior.emotion);
      out.emplace_back(s, *prior.emotion);
    } else {
      for (Index e = 0; e < world.emotions(); ++e) out.emplace_back(s, e);
    }
  }
  return out;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const double m = logits.maxCoeff();
  Eigen::VectorXd p = (logits.array() - m).exp().matrix();
  return p / p.sum();
}

double log_sum_exp(const Eigen::VectorXd& v) {
  const double m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().sum());
}

std::vector<std::pair<Index, Index>> emotions_of(const World& world, Index speaker) {
  std::vector<std::pair<Index, Index>> out;
  for (Index e = 0; e < world.emotions(); ++e) out.emplace_back(speaker, e);
  return out;
}

}  // namespace

double analytic_log_density(const World& world, const OracleQuery& q, const FrameMatrix& y_t,
                            const NoiseSchedule& schedule) {
  const auto comps = expand(world, q.prior);
  const auto nc = noised_components(world, comps, q.tokens, q.mu, y_t, q.t, schedule);
  return log_sum_exp(nc.log_lik) - std::log(static_cast<double>(comps.size()));
}

FrameMatrix analytic_score(const World& world, const OracleQuery& q, const FrameMatrix& y_t,
                           const NoiseSchedule& schedule) {
  const auto comps = expand(world, q.prior);
  const auto nc = noised_components(world, comps, q.tokens, q.mu, y_t, q.t, schedule);
  const Eigen::VectorXd w = softmax(nc.log_lik);
  FrameMatrix score = FrameMatrix::Zero(y_t.rows(), y_t.cols());
  for (std::size_t c = 0; c < comps.size(); ++c) {
    score += w(static_cast<Index>(c)) * (nc.means[c] - y_t) / nc.variance;
  }
  return score;
}

Eigen::VectorXd analytic_emotion_posterior(const World& world, Index speaker, std::span<const Index> tokens,
                                           const FrameMatrix& mu, const FrameMatrix& y_t, double t,
                                           const NoiseSchedule& schedule) {
  const auto comps = emotions_of(world, speaker);
  world.check_speaker(speaker);
  return softmax(noised_components(world, comps, tokens, mu, y_t, t, schedule).log_lik);
}

FrameMatrix analytic_log_posterior_grad(const World& world, Index speaker, Index target,
                                        std::span<const Index> tokens, const FrameMatrix& mu,
                                        const FrameMatrix& y_t, double t, const NoiseSchedule& schedule) {
  world.check_speaker(speaker);
  world.check_emotion(target);
  const auto comps = emotions_of(world, speaker);
  const auto nc = noised_components(world, comps, tokens, mu, y_t, t, schedule);
  const Eigen::VectorXd p = softmax(nc.log_lik);
  // d/dY [l_target - logsumexp(l)] with dl_k/dY = (m_k - Y) / v; the Y terms cancel.
  FrameMatrix expected = FrameMatrix::Zero(y_t.rows(), y_t.cols());
  for (Index k = 0; k < p.size(); ++k) expected += p(k) * nc.means[static_cast<std::size_t>(k)];
  return (nc.means[static_cast<std::size_t>(target)] - expected) / nc.variance;
}

}  // namespace emosynth
