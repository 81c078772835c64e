#include "emosynth/diffusion.hpp"
#include "emosynth/eval.hpp"
#include "emosynth/synthworld.hpp"
#include "emosynth/training.hpp"

#include <gtest/gtest.h>

using namespace emosynth;

namespace {

Tensor row(std::initializer_list<double> v) {
  Tensor t(1, static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) t(0, i++) = x;
  return t;
}

class UniformPosterior final : public NoisyPosterior {
 public:
  [[nodiscard]] Eigen::VectorXd probabilities(const FrameMatrix&, double, const FrameMatrix&) const override {
    return Eigen::VectorXd::Constant(4, 0.25);
  }
  [[nodiscard]] FrameMatrix log_prob_grad(const FrameMatrix& y, double, const FrameMatrix&, Index) const override {
    return FrameMatrix::Zero(y.rows(), y.cols());
  }
};

class BrokenPosterior final : public NoisyPosterior {
 public:
  [[nodiscard]] Eigen::VectorXd probabilities(const FrameMatrix&, double, const FrameMatrix&) const override {
    return Eigen::VectorXd::Constant(4, 0.5);
  }
  [[nodiscard]] FrameMatrix log_prob_grad(const FrameMatrix& y, double, const FrameMatrix&, Index) const override {
    return FrameMatrix::Zero(y.rows(), y.cols());
  }
};

}  // namespace

TEST(Perturb, FixedPointWithZeroNoise) {
  Rng rng(1);
  const FrameMatrix mu = standard_normal(3, 4, rng);
  const NoiseSchedule sch;
  for (double t : {0.01, 0.5, 1.0}) {
    const Perturbed p = perturb_with_noise(mu, mu, t, sch, FrameMatrix::Zero(3, 4));
    EXPECT_TRUE(p.y_t.isApprox(mu, 1e-15));
  }
}

TEST(Perturb, TerminalDrawsMatchPrior) {
  const NoiseSchedule sch;
  EXPECT_LT(sch.rho(1.0), 0.01);
  Rng rng(2);
  const FrameMatrix mu = standard_normal(1, 8, rng);
  const FrameMatrix y0 = mu + standard_normal(1, 8, rng);
  RowVector<double> sum = RowVector<double>::Zero(8), sum_sq = RowVector<double>::Zero(8);
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const FrameMatrix d = perturb(y0, mu, 1.0, sch, static_cast<std::uint64_t>(i)).y_t - mu;
    sum += d;
    sum_sq += d.cwiseProduct(d);
  }
  const RowVector<double> mean = sum / n;
  const RowVector<double> var = sum_sq / n - mean.cwiseProduct(mean);
  EXPECT_LT(mean.cwiseAbs().maxCoeff(), 0.05);
  EXPECT_LT((var.array() - 1.0).abs().maxCoeff(), 0.05);
}

TEST(Perturb, RejectsZeroTime) {
  const FrameMatrix mu = FrameMatrix::Zero(1, 2);
  EXPECT_THROW(perturb(mu, mu, 0.0, NoiseSchedule{}, 0), std::invalid_argument);
}

TEST(Perturb, TargetScoreIsConditionalScore) {
  Rng rng(3);
  const FrameMatrix mu = standard_normal(2, 3, rng), y0 = standard_normal(2, 3, rng), z = standard_normal(2, 3, rng);
  const NoiseSchedule sch;
  const double t = 0.4;
  const Perturbed p = perturb_with_noise(y0, mu, t, sch, z);
  const FrameMatrix mean = mu + (y0 - mu) * sch.rho(t);
  EXPECT_LT((p.target_score + (p.y_t - mean) / sch.variance(t)).cwiseAbs().maxCoeff(), 1e-10);
}

class ScoreNetTest : public ::testing::Test {
 protected:
  ModelDims dims;
  NoiseSchedule schedule;
  ScoreNet net{dims, schedule, 4};
  StyleVector style = StyleVector::Constant(16, 0.1);
  RowVector<double> emb = RowVector<double>::Constant(8, -0.2);
};

TEST_F(ScoreNetTest, RowsMapIndependently) {
  Rng rng(1);
  FrameMatrix y = standard_normal(3, 8, rng);
  FrameMatrix mu = standard_normal(3, 8, rng);
  y.row(2) = y.row(0);
  mu.row(2) = mu.row(0);
  const FrameMatrix s = net.estimate(y, 0.3, mu, style, emb);
  EXPECT_TRUE(bitwise_equal(s.row(0), s.row(2)));
  EXPECT_TRUE(bitwise_equal(s, net.estimate(y, 0.3, mu, style, emb)));
}

TEST_F(ScoreNetTest, ShapeMismatchThrows) {
  EXPECT_THROW(net.estimate(FrameMatrix::Zero(2, 8), 0.3, FrameMatrix::Zero(3, 8), style, emb), std::invalid_argument);
  EXPECT_THROW(net.estimate(FrameMatrix::Zero(2, 8), 0.0, FrameMatrix::Zero(2, 8), style, emb), std::invalid_argument);
}

TEST_F(ScoreNetTest, GraphMatchesDirectEvaluation) {
  Rng rng(2);
  const FrameMatrix y = standard_normal(4, 8, rng), mu = standard_normal(4, 8, rng);
  ad::Graph g;
  const double times[] = {0.7};
  const ad::Node s = net.build(g, g.constant(y), times, g.constant(mu), g.constant(style), g.constant(emb),
                               Segments::single(4));
  g.forward();
  EXPECT_LT((g.value(s) - net.estimate(y, 0.7, mu, style, emb)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(DenoisingLoss, PerfectEstimatorHasZeroLoss) {
  Rng rng(4);
  const FrameMatrix target = standard_normal(5, 3, rng);
  EXPECT_EQ(denoising_loss(target, target, Eigen::VectorXd::Constant(5, 0.3)), 0.0);
  EXPECT_THROW(denoising_loss(FrameMatrix(0, 3), FrameMatrix(0, 3), Eigen::VectorXd()), std::invalid_argument);
}

TEST(DsmLoss, NonNegativeAndRejectsEmptyBatch) {
  const World w = make_world(WorldConfig{}, 0);
  ScoreNet net(dims_for(w), NoiseSchedule{}, 1);
  const StyleVector s = StyleVector::Zero(16);
  const RowVector<double> e = RowVector<double>::Zero(8);
  Rng rng(5);
  for (int b = 0; b < 100; ++b) {
    std::vector<DsmExample> batch;
    for (int i = 0; i < 3; ++i) {
      const auto tokens = random_tokens(w, 4, rng);
      batch.push_back({sample_utterance(w, 0, 1, tokens, rng()).frames, w.frame_means(0, 0, tokens), s, e});
    }
    net.params.zero_grad();
    EXPECT_GE(dsm_loss(net, batch, rng()), 0.0);
  }
  EXPECT_THROW(dsm_loss(net, {}, 0), std::invalid_argument);
}

TEST(DsmLoss, GradcheckOnTinyInstance) {
  const ModelDims tiny{.dim = 2, .vocab = 3, .emotions = 2, .style = 2, .emotion_embed = 2, .hidden = 8, .hidden_layers = 1};
  ScoreNet net(tiny, NoiseSchedule{}, 2);
  for (auto& entry : net.params.entries()) {
    Rng rng(derive_seed(7, entry.name));
    entry.value = 0.3 * standard_normal(entry.value.rows(), entry.value.cols(), rng);
  }
  Rng rng(8);
  const Segments seg = Segments::single(1);
  const DsmNoise noise = draw_dsm_noise(seg, 2, 1.0, rng);
  ad::Graph g;
  const ad::Node loss = build_dsm_loss(g, net, g.input("y0", 2), g.input("mu", 2), g.input("s", 2), g.input("e", 2), seg,
                                       noise);
  const std::map<std::string, Tensor> inputs{{"y0", standard_normal(1, 2, rng)},
                                             {"mu", standard_normal(1, 2, rng)},
                                             {"s", standard_normal(1, 2, rng)},
                                             {"e", standard_normal(1, 2, rng)}};
  ad::ParamStore* stores[] = {&net.params};
  const std::string check[] = {"y0", "mu", "s", "e"};
  const auto report = ad::gradcheck(g, loss, stores, inputs, 1e-5, check);
  EXPECT_TRUE(report.passed(1e-4)) << report.max_relative_error;
}

TEST(Sampler, AnalyticScoreReproducesDataDistribution) {
  // Data N(m, I) around prior mean mu: every marginal has unit variance.
  const NoiseSchedule sch;
  Rng rng(9);
  const FrameMatrix mu = standard_normal(1, 4, rng);
  const FrameMatrix m = mu + standard_normal(1, 4, rng);
  auto score = [&](const FrameMatrix& y, double t, double&) -> FrameMatrix { return -(y - (mu + (m - mu) * sch.rho(t))); };
  const int n = 5000;
  RowVector<double> sum = RowVector<double>::Zero(4), sum_sq = RowVector<double>::Zero(4);
  for (int i = 0; i < n; ++i) {
    const FrameMatrix y = integrate_reverse(mu, sch, SamplerOptions{.steps = 200, .seed = static_cast<std::uint64_t>(i)}, score);
    sum += y - m;
    sum_sq += (y - m).cwiseProduct(y - m);
  }
  const RowVector<double> mean = sum / n;
  const RowVector<double> var = sum_sq / n - mean.cwiseProduct(mean);
  EXPECT_LT(mean.cwiseAbs().maxCoeff(), 0.05 * std::max(1.0, m.cwiseAbs().maxCoeff()));
  EXPECT_LT((var.array() - 1.0).abs().maxCoeff(), 0.05);
}

TEST(Sampler, ZeroScoreFollowsReverseDriftExactly) {
  // With score 0 each backward Euler step maps Y - mu to (1 + h beta / 2)(Y - mu).
  const NoiseSchedule sch;
  Rng mu_rng(1);
  const FrameMatrix mu = standard_normal(2, 3, mu_rng);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const SamplerOptions opt{.steps = 100, .stochastic = false, .seed = seed};
    Rng rng(seed);
    const FrameMatrix y_terminal = mu + standard_normal(2, 3, rng);
    const FrameMatrix y0 = integrate_reverse(mu, sch, opt, [](const FrameMatrix& y, double, double&) {
      return FrameMatrix::Zero(y.rows(), y.cols());
    });
    double factor = 1.0;
    for (int k = 0; k < 100; ++k) factor *= 1.0 + 0.5 * 0.01 * sch.beta(std::max(1.0 - 0.01 * k, kMinTime));
    EXPECT_LT(((y0 - mu) - factor * (y_terminal - mu)).norm(), 1e-9 * factor * (y_terminal - mu).norm());
  }
}

TEST(Sampler, DeterministicAndRejectsZeroSteps) {
  const ScoreNet net(ModelDims{}, NoiseSchedule{}, 3);
  const FrameMatrix mu = FrameMatrix::Constant(2, 8, 0.5);
  const StyleVector s = StyleVector::Zero(16);
  const RowVector<double> e = RowVector<double>::Zero(8);
  const SamplerOptions opt{.steps = 20, .seed = 4};
  EXPECT_TRUE(bitwise_equal(sample_reverse(net, mu, s, e, opt), sample_reverse(net, mu, s, e, opt)));
  EXPECT_THROW(sample_reverse(net, mu, s, e, SamplerOptions{.steps = 0}), std::invalid_argument);
}

TEST(GuidedScoreCg, ZeroGammaReturnsUnconditionalScore) {
  Rng rng(1);
  const FrameMatrix s = standard_normal(2, 3, rng);
  const UniformPosterior uniform;
  EXPECT_TRUE(bitwise_equal(guided_score_cg(s, uniform, s, 0.5, s, 1, 0.0), s));
}

TEST(GuidedScoreCg, ConstantClassifierAddsNothing) {
  NoisyClassifier clf(ModelDims{}, 2);
  for (auto& entry : clf.params.entries()) entry.value.setZero();
  Rng rng(2);
  const FrameMatrix s = standard_normal(3, 8, rng), y = standard_normal(3, 8, rng), mu = standard_normal(3, 8, rng);
  EXPECT_TRUE(guided_score_cg(s, clf, y, 0.5, mu, 2, 3.0).isApprox(s, 1e-15));
}

TEST(GuidedScoreCg, AnalyticPiecesGiveConditionalScore) {
  const World w = make_world(WorldConfig{}, 3);
  const NoiseSchedule sch;
  const std::vector<Index> tokens{1, 5};
  const FrameMatrix mu = w.frame_means(2, kNeutral, tokens);
  const AnalyticPosterior posterior(w, 2, tokens, sch);
  Rng rng(3);
  for (double t : {0.05, 0.3, 0.8}) {
    const FrameMatrix y = mu + standard_normal(2, 8, rng);
    const FrameMatrix uncond = analytic_score(w, OracleQuery{{{2}, std::nullopt}, tokens, mu, t}, y, sch);
    const FrameMatrix cond = analytic_score(w, OracleQuery{{{2}, 3}, tokens, mu, t}, y, sch);
    EXPECT_LT((guided_score_cg(uncond, posterior, y, t, mu, 3, 1.0) - cond).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(GuidedScoreCg, InvalidDistributionThrows) {
  const FrameMatrix s = FrameMatrix::Zero(1, 2);
  EXPECT_THROW(guided_score_cg(s, BrokenPosterior{}, s, 0.5, s, 0, 1.0), std::runtime_error);
}

TEST(CombineCfg, Examples) {
  const Tensor c = row({1, 1}), u = row({0, 0});
  EXPECT_TRUE(bitwise_equal(combine_cfg(c, u, 0.0), c));
  EXPECT_TRUE(bitwise_equal(combine_cfg(c, u, 1.0), row({2, 2})));
  EXPECT_TRUE(bitwise_equal(combine_cfg(c, c, 1.7), c));
  EXPECT_THROW(combine_cfg(c, row({1, 2, 3}), 1.0), std::invalid_argument);
}

class GuidedSamplerTest : public ::testing::Test {
 protected:
  Model model{ModelDims{}, NoiseSchedule{}, 5};
  std::vector<Index> tokens{2, 4, 6};
  StyleVector style = StyleVector::Constant(16, 0.2);
  SamplerOptions options{.steps = 30, .stochastic = true, .seed = 12};
};

TEST_F(GuidedSamplerTest, CfgAtZeroIsConditionalSampler) {
  const DiffusionModel dm = model.diffusion();
  const RowVector<double> e = model.emotion.embed(2);
  const FrameMatrix mu = model.generator.generate(tokens, style, e);
  EXPECT_TRUE(bitwise_equal(sample_cfg(dm, tokens, style, 2, 0.0, options).frames,
                            sample_reverse(model.score, mu, style, e, options)));
  EXPECT_TRUE(bitwise_equal(sample_cfg(dm, tokens, style, 2, 1.25, options).frames,
                            sample_cfg(dm, tokens, style, 2, 1.25, options).frames));
}

TEST_F(GuidedSamplerTest, CgAtZeroIsUnconditionalSampler) {
  const DiffusionModel dm = model.diffusion();
  const RowVector<double> e_null = model.emotion.embed(kNullEmotion);
  const FrameMatrix mu_null = model.generator.generate(tokens, style, e_null);
  EXPECT_TRUE(bitwise_equal(sample_cg(dm, model.classifier, tokens, style, 1, 0.0, options).frames,
                            sample_reverse(model.score, mu_null, style, e_null, options)));
}

TEST_F(GuidedSamplerTest, UntrainedNullRowWarns) {
  const DiffusionModel dm = model.diffusion(false);
  EXPECT_FALSE(sample_cfg(dm, tokens, style, 1, 1.0, options).warnings.empty());
  EXPECT_TRUE(sample_cfg(model.diffusion(true), tokens, style, 1, 1.0, options).warnings.empty());
}

TEST(GuidanceMode, ParseNames) {
  EXPECT_EQ(parse_guidance_mode("cfg"), GuidanceMode::ClassifierFree);
  EXPECT_EQ(parse_guidance_mode("cg"), GuidanceMode::Classifier);
  EXPECT_EQ(parse_guidance_mode(guidance_mode_name(GuidanceMode::None)), GuidanceMode::None);
  EXPECT_THROW(parse_guidance_mode("nope"), std::invalid_argument);
}
