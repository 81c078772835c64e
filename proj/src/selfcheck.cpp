#include "emosynth/selfcheck.hpp"

#include "emosynth/nn.hpp"

#include <json.hpp>

#include <algorithm>
#include <functional>

namespace emosynth {

namespace {

using ad::Graph;
using ad::Node;
using ad::ParamStore;

/// Values bounded away from zero, for ops with a kink or pole there.
Tensor away_from_zero(Index rows, Index cols, Rng& rng) {
  Tensor u = standard_normal(rows, cols, rng);
  return u.unaryExpr([](double v) { return v < 0.0 ? v - 0.1 : v + 0.1; });
}

Index draw(Rng& rng, Index lo, Index hi) { return std::uniform_int_distribution<Index>(lo, hi)(rng); }

struct Instance {
  Graph graph;
  ParamStore store{0};
  std::map<std::string, Tensor> inputs;
  std::vector<std::string> checked;
  Node out;

  Node input(const std::string& name, Tensor value) {
    const Node n = graph.input(name, value.cols());
    inputs[name] = std::move(value);
    checked.push_back(name);
    return n;
  }
};

using Builder = std::function<void(Instance&, Rng&)>;

std::vector<std::pair<std::string, Builder>> op_cases() {
  std::vector<std::pair<std::string, Builder>> cases;
  auto unary = [](Node (Graph::*op)(Node), bool away) {
    return [op, away](Instance& in, Rng& rng) {
      const Index r = draw(rng, 1, 4), c = draw(rng, 1, 5);
      const Node x = in.input("x", away ? away_from_zero(r, c, rng) : standard_normal(r, c, rng));
      in.out = (in.graph.*op)(x);
    };
  };
  auto binary = [](Node (Graph::*op)(Node, Node)) {
    return [op](Instance& in, Rng& rng) {
      const Index r = draw(rng, 1, 4), c = draw(rng, 1, 5);
      const Node a = in.input("a", standard_normal(r, c, rng));
      const Node b = in.input("b", standard_normal(r, c, rng));
      in.out = (in.graph.*op)(a, b);
    };
  };

  cases.emplace_back("affine", [](Instance& in, Rng& rng) {
    const Index r = draw(rng, 1, 4), a = draw(rng, 1, 5), b = draw(rng, 1, 5);
    in.store.add("W", standard_normal(a, b, rng));
    in.store.add("b", standard_normal(1, b, rng));
    const Node x = in.input("x", standard_normal(r, a, rng));
    in.out = in.graph.affine(x, in.graph.param(in.store, "W"), in.graph.param(in.store, "b"));
  });
  cases.emplace_back("tanh", unary(&Graph::tanh, false));
  cases.emplace_back("relu", unary(&Graph::relu, true));
  cases.emplace_back("add", binary(&Graph::add));
  cases.emplace_back("sub", binary(&Graph::sub));
  cases.emplace_back("mul", binary(&Graph::mul));
  cases.emplace_back("scale", [](Instance& in, Rng& rng) {
    const Node x = in.input("x", standard_normal(draw(rng, 1, 4), draw(rng, 1, 5), rng));
    in.out = in.graph.scale(x, std::normal_distribution<double>(0.0, 2.0)(rng));
  });
  cases.emplace_back("concat_cols", [](Instance& in, Rng& rng) {
    const Index r = draw(rng, 1, 4);
    const Node parts[] = {in.input("a", standard_normal(r, draw(rng, 1, 3), rng)),
                          in.input("b", standard_normal(r, draw(rng, 1, 3), rng))};
    in.out = in.graph.concat_cols(parts);
  });
  cases.emplace_back("concat_rows", [](Instance& in, Rng& rng) {
    const Index c = draw(rng, 1, 4);
    const Node parts[] = {in.input("a", standard_normal(draw(rng, 1, 3), c, rng)),
                          in.input("b", standard_normal(draw(rng, 1, 3), c, rng))};
    in.out = in.graph.concat_rows(parts);
  });
  cases.emplace_back("sum", unary(&Graph::sum, false));
  cases.emplace_back("mean", unary(&Graph::mean, false));
  cases.emplace_back("segment_mean", [](Instance& in, Rng& rng) {
    std::vector<Index> lengths(static_cast<std::size_t>(draw(rng, 1, 3)));
    for (auto& l : lengths) l = draw(rng, 1, 4);
    const Segments seg = Segments::from_lengths(lengths);
    const Node x = in.input("x", standard_normal(seg.rows(), draw(rng, 1, 4), rng));
    in.out = in.graph.segment_mean(x, seg);
  });
  cases.emplace_back("segment_broadcast", [](Instance& in, Rng& rng) {
    std::vector<Index> lengths(static_cast<std::size_t>(draw(rng, 1, 3)));
    for (auto& l : lengths) l = draw(rng, 1, 4);
    const Segments seg = Segments::from_lengths(lengths);
    const Node x = in.input("x", standard_normal(seg.count(), draw(rng, 1, 4), rng));
    in.out = in.graph.segment_broadcast(x, seg);
  });
  cases.emplace_back("gather", [](Instance& in, Rng& rng) {
    const Index rows = draw(rng, 2, 5);
    in.store.add("table", standard_normal(rows, draw(rng, 1, 4), rng));
    std::vector<Index> idx(static_cast<std::size_t>(draw(rng, 1, 6)));
    for (auto& i : idx) i = draw(rng, 0, rows - 1);
    in.out = in.graph.gather(in.graph.param(in.store, "table"), idx);
  });
  cases.emplace_back("squared_error", binary(&Graph::squared_error));
  cases.emplace_back("softmax", unary(&Graph::softmax, false));
  cases.emplace_back("log", [](Instance& in, Rng& rng) {
    Tensor x = standard_normal(draw(rng, 1, 4), draw(rng, 1, 5), rng).cwiseAbs().array() + 0.5;
    in.out = in.graph.log(in.input("x", std::move(x)));
  });
  cases.emplace_back("softmax_cross_entropy", [](Instance& in, Rng& rng) {
    const Index r = draw(rng, 1, 4), k = draw(rng, 2, 5);
    std::vector<Index> labels(static_cast<std::size_t>(r));
    for (auto& l : labels) l = draw(rng, 0, k - 1);
    in.out = in.graph.softmax_cross_entropy(in.input("x", standard_normal(r, k, rng)), labels);
  });

  auto mlp = [](Activation act, bool skip) {
    return [act, skip](Instance& in, Rng& rng) {
      const Index a = draw(rng, 1, 5), b = draw(rng, 1, 4);
      const Mlp net("net", MlpShape{.in = a, .hidden = 8, .hidden_layers = 2, .out = b, .activation = act,
                                    .linear_skip = skip});
      net.init(in.store);
      for (auto& e : in.store.entries()) e.value = 0.5 * standard_normal(e.value.rows(), e.value.cols(), rng);
      in.out = net.build(in.graph, in.store, in.input("x", standard_normal(draw(rng, 1, 4), a, rng)));
    };
  };
  cases.emplace_back("mlp_tanh", mlp(Activation::Tanh, false));
  cases.emplace_back("mlp_relu", mlp(Activation::Relu, false));
  cases.emplace_back("mlp_tanh_skip", mlp(Activation::Tanh, true));
  return cases;
}

}  // namespace

std::vector<CheckResult> gradcheck_suite(std::uint64_t seed, Index instances, double epsilon, double tolerance) {
  std::vector<CheckResult> results;
  for (const auto& [name, build] : op_cases()) {
    CheckResult res{.name = "gradcheck:" + name, .tolerance = tolerance};
    Rng rng(derive_seed(seed, name));
    for (Index k = 0; k < instances; ++k) {
      Instance in;
      build(in, rng);
      // Project the output on random weights so every output entry matters.
      in.graph.forward(in.inputs);
      const Tensor& y = in.graph.value(in.out);
      const Node w = in.graph.constant(standard_normal(y.rows(), y.cols(), rng), "projection");
      const Node loss = in.graph.sum(in.graph.mul(in.out, w));
      ParamStore* stores[] = {&in.store};
      const auto report = ad::gradcheck(in.graph, loss, stores, in.inputs, epsilon, in.checked);
      res.value = std::max(res.value, report.max_relative_error);
      ++res.cases;
    }
    res.passed = res.value < tolerance;
    results.push_back(std::move(res));
  }
  return results;
}

namespace {

/// Query over several speakers and every emotion, plus a random Y_t near the
/// noised marginal.
struct OracleCase {
  OracleQuery query;
  FrameMatrix y;
};

OracleCase random_case(const World& world, const NoiseSchedule& schedule, double t, Rng& rng) {
  OracleCase c;
  const Index length = draw(rng, 1, 3);
  c.query.tokens = random_tokens(world, length, rng);
  std::vector<Index> speakers{draw(rng, 0, world.speakers() - 1), draw(rng, 0, world.speakers() - 1)};
  std::sort(speakers.begin(), speakers.end());
  speakers.erase(std::unique(speakers.begin(), speakers.end()), speakers.end());
  c.query.prior.speakers = speakers;
  c.query.mu = standard_normal(length, world.dim(), rng);
  c.query.t = t;
  const Index spk = speakers.front();
  const Index emo = draw(rng, 0, world.emotions() - 1);
  const FrameMatrix m = world.frame_means(spk, emo, c.query.tokens);
  const double rho = schedule.rho(t);
  const double var = world.tau() * world.tau() * rho * rho + schedule.variance(t);
  c.y = c.query.mu + (m - c.query.mu) * rho + std::sqrt(var) * standard_normal(length, world.dim(), rng);
  return c;
}

}  // namespace

CheckResult score_oracle_check(const World& world, const NoiseSchedule& schedule, std::uint64_t seed, Index times,
                               Index points, double tolerance) {
  CheckResult res{.name = "oracle:score_vs_numeric", .tolerance = tolerance};
  Rng rng(derive_seed(seed, "score_oracle"));
  const double h = 1e-4;
  for (Index i = 0; i < times; ++i) {
    const double t = schedule.terminal * static_cast<double>(i + 1) / static_cast<double>(times);
    for (Index p = 0; p < points; ++p) {
      OracleCase c = random_case(world, schedule, t, rng);
      const FrameMatrix analytic = analytic_score(world, c.query, c.y, schedule);
      FrameMatrix numeric(c.y.rows(), c.y.cols());
      for (Index k = 0; k < c.y.size(); ++k) {
        FrameMatrix yp = c.y, ym = c.y;
        yp.data()[k] += h;
        ym.data()[k] -= h;
        numeric.data()[k] = (analytic_log_density(world, c.query, yp, schedule) -
                             analytic_log_density(world, c.query, ym, schedule)) /
                            (2.0 * h);
      }
      const double err = (analytic - numeric).norm() / std::max(numeric.norm(), 1e-12);
      res.value = std::max(res.value, err);
      ++res.cases;
    }
  }
  res.passed = res.value < tolerance;
  return res;
}

CheckResult bayes_identity_check(const World& world, const NoiseSchedule& schedule, std::uint64_t seed, Index cases,
                                 double tolerance) {
  CheckResult res{.name = "oracle:bayes_identity", .tolerance = tolerance};
  Rng rng(derive_seed(seed, "bayes_identity"));
  std::uniform_real_distribution<double> time(0.05, schedule.terminal);
  for (Index i = 0; i < cases; ++i) {
    OracleCase c = random_case(world, schedule, time(rng), rng);
    const Index speaker = c.query.prior.speakers.front();
    const Index target = draw(rng, 0, world.emotions() - 1);
    c.query.prior.speakers = {speaker};
    c.query.prior.emotion.reset();
    const FrameMatrix marginal = analytic_score(world, c.query, c.y, schedule);
    c.query.prior.emotion = target;
    const FrameMatrix conditional = analytic_score(world, c.query, c.y, schedule);
    const FrameMatrix posterior = analytic_log_posterior_grad(world, speaker, target, c.query.tokens, c.query.mu, c.y,
                                                              c.query.t, schedule);
    res.value = std::max(res.value, (conditional - marginal - posterior).cwiseAbs().maxCoeff());
    ++res.cases;
  }
  res.passed = res.value < tolerance;
  return res;
}

std::vector<CheckResult> run_oracle_checks(const World& world, const NoiseSchedule& schedule, std::uint64_t seed) {
  std::vector<CheckResult> out{score_oracle_check(world, schedule, seed), bayes_identity_check(world, schedule, seed)};
  for (auto& r : gradcheck_suite(seed)) out.push_back(std::move(r));
  return out;
}

std::string to_json_line(const CheckResult& r) {
  nlohmann::ordered_json j;
  j["check"] = r.name;
  j["passed"] = r.passed;
  j["max_error"] = r.value;
  j["tolerance"] = r.tolerance;
  j["cases"] = r.cases;
  return j.dump();
}

}  // namespace emosynth
