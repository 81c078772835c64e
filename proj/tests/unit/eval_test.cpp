#include "emosynth/eval.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace emosynth;

namespace {

struct Drawn {
  std::vector<FrameMatrix> samples;
  std::vector<EvalCondition> conditions;
};

Drawn draw(const World& w, Index n, Index actual_emotion, Index target_emotion, std::uint64_t seed) {
  Drawn d;
  Rng rng(seed);
  for (Index i = 0; i < n; ++i) {
    const Index spk = i % w.speakers();
    auto tokens = random_tokens(w, 8, rng);
    d.samples.push_back(sample_utterance(w, spk, actual_emotion, tokens, rng()).frames);
    d.conditions.push_back({spk, target_emotion, tokens});
  }
  return d;
}

double standard_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

}  // namespace

class EvalTest : public ::testing::Test {
 protected:
  World world = make_world(WorldConfig{}, 2);
};

TEST_F(EvalTest, EcaOnMatchingEmotionBeatsNinetyFive) {
  const Drawn d = draw(world, 2000, 2, 2, 1);
  const double eca = eca_oracle(world, d.samples, d.conditions);
  EXPECT_GT(eca, 95.0);
  // Union bound over the three rivals with pairwise error Phi(-d sqrt(L) / (2 tau)).
  const double d_min = min_pairwise_distance(world.emotion_offset);
  const double bound = 3.0 * standard_normal_cdf(-d_min * std::sqrt(8.0) / (2.0 * world.tau()));
  EXPECT_GE(eca, 100.0 * (1.0 - bound) - 1.0);
}

TEST_F(EvalTest, EcaOnWrongEmotionBelowFive) {
  const Drawn d = draw(world, 2000, kNeutral, 1, 2);
  EXPECT_LT(eca_oracle(world, d.samples, d.conditions), 5.0);
}

TEST_F(EvalTest, EcaAtExactMean) {
  const std::vector<Index> tokens{1, 2, 3};
  const std::vector<FrameMatrix> s{world.frame_means(4, 1, tokens)};
  const std::vector<EvalCondition> c{{4, 1, tokens}};
  EXPECT_EQ(eca_oracle(world, s, c), 100.0);
  EXPECT_THROW(eca_oracle(world, {}, {}), std::invalid_argument);
}

TEST(SecsAnalog, Examples) {
  const Eigen::RowVector3d a(1.0, 2.0, -0.5);
  EXPECT_NEAR(secs_analog(a, a), 1.0, 1e-15);
  EXPECT_NEAR(secs_analog(a, -a), -1.0, 1e-15);
  EXPECT_EQ(secs_analog(Eigen::RowVector3d::UnitX(), Eigen::RowVector3d::UnitY()), 0.0);
  EXPECT_THROW(secs_analog(a, Eigen::RowVector3d::Zero()), std::invalid_argument);
  EXPECT_THROW(secs_analog(RowVector<double>(a), RowVector<double>::Ones(2)), std::invalid_argument);
}

TEST_F(EvalTest, ContentErrorExamples) {
  const std::vector<Index> tokens{0, 5};
  const FrameMatrix m = world.frame_means(1, 2, tokens);
  const std::vector<EvalCondition> c{{1, 2, tokens}};
  EXPECT_EQ(content_error(world, std::vector<FrameMatrix>{m}, c).mean, 0.0);
  const double expected = m.rowwise().squaredNorm().mean();
  EXPECT_NEAR(content_error(world, std::vector<FrameMatrix>{FrameMatrix::Zero(2, 8)}, c).mean, expected, 1e-12);
  EXPECT_THROW(content_error(world, std::vector<FrameMatrix>{FrameMatrix::Zero(3, 8)}, c), std::invalid_argument);
}

TEST_F(EvalTest, ContentErrorOfTrueSamplesIsDTauSquared) {
  const Drawn d = draw(world, 1250, 3, 3, 3);
  EXPECT_NEAR(content_error(world, d.samples, d.conditions).mean, 0.72, 0.72 * 0.05);
}

TEST_F(EvalTest, NearestSpeakerRecoversTrueSpeaker) {
  Rng rng(4);
  Index hits = 0;
  for (Index i = 0; i < 200; ++i) {
    const Index spk = i % world.speakers();
    auto tokens = random_tokens(world, 8, rng);
    hits += nearest_speaker(world, sample_utterance(world, spk, i % 4, tokens, rng()).frames, tokens) == spk ? 1 : 0;
  }
  EXPECT_GE(hits, 196);
}

TEST(Probe, OneHotIsSeparableAndShuffledIsChance) {
  const Index n = 800;
  Tensor onehot = Tensor::Zero(n, 4);
  std::vector<Index> labels(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    labels[static_cast<std::size_t>(i)] = i % 4;
    onehot(i, i % 4) = 1.0;
  }
  EXPECT_EQ(probe_disentanglement(onehot, labels, 4), 100.0);

  Rng rng(5);
  std::vector<Index> shuffled = labels;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  EXPECT_NEAR(probe_disentanglement(onehot, shuffled, 4), 25.0, 5.0);
}

TEST(Probe, RejectsSmallClasses) {
  Rng rng(6);
  const Tensor v = standard_normal(30, 3, rng);
  std::vector<Index> labels(30, 0);
  for (int i = 0; i < 5; ++i) labels[static_cast<std::size_t>(i)] = 1;
  EXPECT_THROW(probe_disentanglement(v, labels, 2), std::invalid_argument);
}

TEST(Spearman, KnownValues) {
  const std::vector<double> x{0, 0.5, 1, 1.5, 2};
  EXPECT_DOUBLE_EQ(spearman(x, std::vector<double>{1, 2, 3, 4, 5}), 1.0);
  EXPECT_DOUBLE_EQ(spearman(x, std::vector<double>{5, 4, 3, 2, 1}), -1.0);
  EXPECT_NEAR(spearman(x, std::vector<double>{1, 1, 2, 2, 3}), 0.9486832980505138, 1e-12);
  EXPECT_TRUE(std::isnan(spearman(x, std::vector<double>(5, 2.0))));
}

TEST(EnergyTest, DetectsShiftAndAcceptsSameDistribution) {
  Rng rng(7);
  const Tensor a = standard_normal(300, 2, rng);
  const Tensor b = standard_normal(300, 2, rng);
  Tensor shifted = standard_normal(300, 2, rng);
  shifted.col(0).array() += 0.5;
  EXPECT_GT(energy_permutation_test(a, b, 200, 1).p_value, 0.05);
  EXPECT_LT(energy_permutation_test(a, shifted, 200, 1).p_value, 0.05);
  EXPECT_NEAR(energy_distance(a, a), 0.0, 1e-12);
}

TEST_F(EvalTest, UnseenSpeakersOnlyThroughNeutral) {
  const SpeakerSplit split = split_speakers(world, 6, 0);
  const Index unseen = split.unseen.front();
  const std::vector<Index> tokens{1, 2};
  EXPECT_NO_THROW(reference_utterance(world, split, unseen, kNeutral, tokens, 1));
  EXPECT_THROW(reference_utterance(world, split, unseen, 2, tokens, 1), std::invalid_argument);
  EXPECT_NO_THROW(reference_utterance(world, split, split.seen.front(), 2, tokens, 1));
}

TEST_F(EvalTest, OracleAgreesWithTrainedClassifierNearZeroTime) {
  // The Bayes rule uses the true speaker; a learned classifier cannot beat it.
  const SpeakerSplit split = split_speakers(world, 6, 0);
  Rng rng(8);
  std::vector<LabeledExample> data;
  for (Index i = 0; i < 800; ++i) {
    const Index spk = split.seen[static_cast<std::size_t>(i) % split.seen.size()];
    auto tokens = random_tokens(world, 6, rng);
    data.push_back({sample_utterance(world, spk, i % 4, tokens, rng()).frames, world.frame_means(spk, kNeutral, tokens), i % 4});
  }
  NoisyClassifier clf(dims_for(world), 1);
  train_noisy_classifier(clf, data, NoiseSchedule{}, 1000, 32, 5e-2, 2);
  const double clf_acc = 100.0 * classifier_accuracy(clf, data, NoiseSchedule{}, kMinTime, 3);
  Index hits = 0;
  Rng eval_rng(9);
  for (Index i = 0; i < 800; ++i) {
    const Index spk = split.seen[static_cast<std::size_t>(i) % split.seen.size()];
    auto tokens = random_tokens(world, 6, eval_rng);
    hits += bayes_emotion(world, spk, tokens, sample_utterance(world, spk, i % 4, tokens, eval_rng()).frames) == i % 4;
  }
  const double bayes_acc = 100.0 * static_cast<double>(hits) / 800.0;
  EXPECT_LE(clf_acc, bayes_acc + 2.0);
}

TEST(SweepCsv, HeaderAndRows) {
  std::vector<SweepRow> rows(3);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i].gamma = 0.5 * static_cast<double>(i);
  const std::string csv = sweep_csv(rows);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "gamma,mode,eca,content_error,secs_mean_frame,secs_style,n");
}

TEST(SpeakerGroup, ParseNames) {
  EXPECT_EQ(parse_speaker_group("unseen"), SpeakerGroup::Unseen);
  EXPECT_EQ(speaker_group_name(SpeakerGroup::Seen), "seen");
  EXPECT_THROW(parse_speaker_group("all"), std::invalid_argument);
}
