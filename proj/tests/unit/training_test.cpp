#include "emosynth/checkpoint.hpp"
#include "emosynth/config.hpp"
#include "emosynth/training.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace emosynth;

namespace {

World small_world() { return make_world(WorldConfig{}, 0); }

TrainConfig short_run(Index steps) {
  TrainConfig c;
  c.steps = steps;
  c.log_every = 10;
  c.seed = 3;
  return c;
}

UtteranceBatch fixed_batch(const World& w, std::uint64_t seed) {
  Rng rng(seed);
  const Index speakers[] = {0, 1, 2};
  return draw_batch(w, speakers, 8, 4, 8, rng);
}

double probe_loss(Model& m, const UtteranceBatch& b) { return dat_gradients(m, b, 1.0, false).loss; }

}  // namespace

TEST(Dat, EncoderGradientScalesWithAlpha) {
  const World w = small_world();
  const UtteranceBatch b = fixed_batch(w, 1);
  Model m(dims_for(w), NoiseSchedule{}, 2);
  const double at_one = dat_gradients(m, b, 1.0).style_grad_norm;
  const double tiny = dat_gradients(m, b, 1e-9).style_grad_norm;
  EXPECT_GT(at_one, 0.0);
  EXPECT_LT(tiny, 1e-6 * at_one);
}

TEST(Dat, ReversedEncoderGradientIsMinusAlphaTimesPlain) {
  const World w = small_world();
  const UtteranceBatch b = fixed_batch(w, 2);
  Model m(dims_for(w), NoiseSchedule{}, 3);
  dat_gradients(m, b, 1.0, false);
  const ad::ParamStore plain_style = m.style.params;
  const ad::ParamStore plain_probe = m.probe.params;
  for (double alpha : {0.25, 1.0, 4.0}) {
    dat_gradients(m, b, alpha, true);
    for (std::size_t i = 0; i < m.style.params.size(); ++i) {
      const Tensor expected = -alpha * plain_style.entry(i).grad;
      EXPECT_TRUE(bitwise_equal(m.style.params.entry(i).grad, expected)) << m.style.params.entry(i).name;
    }
    for (std::size_t i = 0; i < m.probe.params.size(); ++i) {
      EXPECT_TRUE(bitwise_equal(m.probe.params.entry(i).grad, plain_probe.entry(i).grad));
    }
  }
}

TEST(Dat, ProbeDescendsWhileEncoderAscends) {
  const World w = small_world();
  const UtteranceBatch b = fixed_batch(w, 3);
  Model m(dims_for(w), NoiseSchedule{}, 4);
  const double before = probe_loss(m, b);

  Model probe_only = m;
  dat_gradients(probe_only, b, 1.0, true);
  ad::ParamStore* probe_store[] = {&probe_only.probe.params};
  ad::sgd_step(probe_store, 1e-3, 1e9);
  EXPECT_LT(probe_loss(probe_only, b), before);

  Model encoder_only = m;
  dat_gradients(encoder_only, b, 1.0, true);
  ad::ParamStore* style_store[] = {&encoder_only.style.params};
  ad::sgd_step(style_store, 1e-3, 1e9);
  EXPECT_GT(probe_loss(encoder_only, b), before);
}

TEST(Train, ZeroStepsKeepsInitialization) {
  const World w = small_world();
  const SpeakerSplit split = split_speakers(w, 6, 0);
  const TrainConfig c = short_run(0);
  const TrainResult r = train_model(w, split, c, dims_for(w), NoiseSchedule{});
  const Model init(dims_for(w), NoiseSchedule{}, derive_seed(c.seed, "model"));
  const auto trained = r.checkpoint.model.named_stores();
  const auto fresh = init.named_stores();
  ASSERT_EQ(trained.size(), fresh.size());
  for (std::size_t i = 0; i < fresh.size(); ++i) EXPECT_TRUE(trained[i].second->same_values(*fresh[i].second));
}

TEST(Train, SameSeedGivesIdenticalCheckpoints) {
  const World w = small_world();
  const SpeakerSplit split = split_speakers(w, 6, 0);
  const TrainConfig c = short_run(30);
  const auto a = train_model(w, split, c, dims_for(w), NoiseSchedule{});
  const auto b = train_model(w, split, c, dims_for(w), NoiseSchedule{});
  EXPECT_EQ(serialize_checkpoint(a.checkpoint), serialize_checkpoint(b.checkpoint));
}

TEST(Train, NullRowTrainedOnlyWithDropout) {
  const World w = small_world();
  const SpeakerSplit split = split_speakers(w, 6, 0);
  TrainConfig c = short_run(30);
  const auto with = train_model(w, split, c, dims_for(w), NoiseSchedule{});
  EXPECT_TRUE(with.checkpoint.null_row_trained);
  double null_sum = 0.0;
  for (const auto& rec : with.trace) null_sum += rec.null_grad_norm;
  EXPECT_GT(null_sum, 0.0);

  c.p_null = 0.0;
  const auto without = train_model(w, split, c, dims_for(w), NoiseSchedule{});
  EXPECT_FALSE(without.checkpoint.null_row_trained);
  for (const auto& rec : without.trace) EXPECT_EQ(rec.null_grad_norm, 0.0);
}

TEST(Train, DivergenceReportsStep) {
  const World w = small_world();
  const SpeakerSplit split = split_speakers(w, 6, 0);
  TrainConfig c = short_run(200);
  c.lr = 1e3;
  c.clip_norm = 1e300;
  try {
    train_model(w, split, c, dims_for(w), NoiseSchedule{});
    FAIL() << "expected divergence";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("diverged at step"), std::string::npos) << e.what();
  }
}

TEST(Train, RejectsMismatchedDims) {
  const World w = small_world();
  const SpeakerSplit split = split_speakers(w, 6, 0);
  ModelDims d = dims_for(w);
  d.dim = 3;
  EXPECT_THROW(train_model(w, split, short_run(1), d, NoiseSchedule{}), std::invalid_argument);
  TrainConfig bad = short_run(1);
  bad.batch_size = 0;
  EXPECT_THROW(train_model(w, split, bad, dims_for(w), NoiseSchedule{}), std::invalid_argument);
}

class DefaultRun : public ::testing::Test {
 protected:
  static const TrainResult& result() {
    static const TrainResult r = [] {
      const ExperimentConfig cfg = default_config();
      const World w = make_world(cfg.world, cfg.seed);
      const SpeakerSplit split = split_speakers(w, cfg.n_seen, cfg.seed);
      TrainConfig c = cfg.train_config();
      c.steps = 5001;
      return train_model(w, split, c, cfg.dims(), cfg.schedule);
    }();
    return r;
  }

  // Mean over logged windows keeps single-batch noise out of the comparison.
  template <typename F>
  static double window_mean(Index from, Index to, F value) {
    double sum = 0.0;
    int n = 0;
    for (const auto& rec : result().trace) {
      if (rec.step >= from && rec.step <= to) {
        sum += value(rec);
        ++n;
      }
    }
    return sum / n;
  }
};

TEST_F(DefaultRun, HalvesTotalLoss) {
  const auto total = [](const LossRecord& r) { return r.total; };
  EXPECT_LT(result().trace.back().total, 0.5 * result().trace[1].total);
  EXPECT_LT(window_mean(4500, 5000, total), 0.5 * window_mean(100, 100, total));
}

TEST_F(DefaultRun, HalvesReconstructionPlusDenoisingLoss) {
  const auto fit = [](const LossRecord& r) { return r.recon + r.dsm; };
  EXPECT_LT(window_mean(4500, 5000, fit), 0.5 * window_mean(100, 100, fit));
}

class NoisyClassifierTest : public ::testing::Test {
 protected:
  void SetUp() override {
    Rng rng(4);
    for (Index i = 0; i < 800; ++i) {
      const Index spk = i % 3;
      const Index emo = i % world.emotions();
      auto tokens = random_tokens(world, 6, rng);
      const Utterance u = sample_utterance(world, spk, emo, tokens, rng());
      data.push_back({u.frames, world.frame_means(spk, kNeutral, tokens), emo});
    }
  }
  World world = small_world();
  NoiseSchedule schedule;
  std::vector<LabeledExample> data;
};

TEST_F(NoisyClassifierTest, AccurateNearZeroAndChanceAtTerminal) {
  NoisyClassifier clf(dims_for(world), 5);
  train_noisy_classifier(clf, data, schedule, 1500, 32, 5e-2, 6);
  EXPECT_GT(classifier_accuracy(clf, data, schedule, 0.05, 7), 0.9);
  EXPECT_NEAR(classifier_accuracy(clf, data, schedule, 1.0, 8), 0.25, 0.05);
  Rng rng(9);
  const auto& ex = data.front();
  const Eigen::VectorXd p = clf.probabilities(ex.mu + standard_normal(ex.mu.rows(), 8, rng), 0.3, ex.mu);
  EXPECT_NEAR(p.sum(), 1.0, 1e-12);
}

TEST_F(NoisyClassifierTest, SingleClassDataThrows) {
  std::vector<LabeledExample> one;
  for (const auto& ex : data) {
    if (ex.label == 2) one.push_back(ex);
  }
  NoisyClassifier clf(dims_for(world), 5);
  EXPECT_THROW(train_noisy_classifier(clf, one, schedule, 10, 4, 1e-2, 0), std::invalid_argument);
}

TEST(Checkpoint, RoundTripIsByteIdentical) {
  const World w = small_world();
  const SpeakerSplit split = split_speakers(w, 6, 0);
  const auto r = train_model(w, split, short_run(5), dims_for(w), NoiseSchedule{});
  const std::string bytes = serialize_checkpoint(r.checkpoint);
  const Checkpoint back = deserialize_checkpoint(bytes);
  EXPECT_EQ(serialize_checkpoint(back), bytes);
  EXPECT_EQ(back.world_hash, w.hash());
  EXPECT_EQ(back.step, 5);

  const auto path = std::filesystem::temp_directory_path() / "emosynth_unit_ckpt.bin";
  save_checkpoint(r.checkpoint, path);
  EXPECT_EQ(serialize_checkpoint(load_checkpoint(path)), bytes);
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsCorruptInput) {
  const World w = small_world();
  const SpeakerSplit split = split_speakers(w, 6, 0);
  const std::string bytes = serialize_checkpoint(train_model(w, split, short_run(0), dims_for(w), NoiseSchedule{}).checkpoint);
  EXPECT_THROW(deserialize_checkpoint("not a checkpoint"), CheckpointError);
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() / 2)), CheckpointError);
  EXPECT_THROW(deserialize_checkpoint(bytes + "x"), CheckpointError);
  EXPECT_THROW(load_checkpoint("/nonexistent/ckpt.bin"), CheckpointError);
}
