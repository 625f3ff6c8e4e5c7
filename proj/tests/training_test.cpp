#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "caml/training.hpp"
#include "test_data.hpp"

using namespace caml;

TEST(Config, DefaultsPerModel) {
  const auto caml_cfg = TrainConfig::defaults_for(ModelChoice::Caml);
  EXPECT_EQ(caml_cfg.filters, 50u);
  EXPECT_EQ(caml_cfg.kernel, 10u);
  EXPECT_EQ(caml_cfg.eta, 1e-4);
  EXPECT_EQ(caml_cfg.dropout, 0.2);
  const auto cnn = TrainConfig::defaults_for(ModelChoice::Cnn);
  EXPECT_EQ(cnn.filters, 500u);
  EXPECT_EQ(cnn.kernel, 4u);
  EXPECT_EQ(cnn.eta, 3e-3);
  EXPECT_EQ(cnn.dropout, 0.2);
  EXPECT_EQ(cnn.rho, 0.0);
}

TEST(Config, ValidationRejectsBadValues) {
  auto expect_bad = [](auto mutate) {
    TrainConfig c;
    mutate(c);
    EXPECT_THROW(c.validate(), UsageError);
  };
  expect_bad([](TrainConfig& c) { c.dropout = 1.0; });
  expect_bad([](TrainConfig& c) { c.dropout = -0.1; });
  expect_bad([](TrainConfig& c) { c.eta = 0.0; });
  expect_bad([](TrainConfig& c) { c.lambda = -1.0; });
  expect_bad([](TrainConfig& c) { c.batch_size = 0; });
  expect_bad([](TrainConfig& c) { c.kernel = 0; });
  expect_bad([](TrainConfig& c) {
    c.model = ModelChoice::Cnn;
    c.lambda = 0.1;
  });
  EXPECT_NO_THROW(TrainConfig{}.validate());
}

TEST(Config, JsonRoundTripAndUnknownKeys) {
  TrainConfig c = TrainConfig::defaults_for(ModelChoice::Cnn);
  c.seed = 99;
  c.lambda = 0.0;
  c.lr.l2 = 0.25;
  const TrainConfig back = config_from_json(nlohmann::json::parse(to_json(c).dump()));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_THROW(config_from_json({{"learning_rate", 0.1}}), UsageError);
  EXPECT_THROW(config_from_json({{"eta", "fast"}}), UsageError);
  EXPECT_THROW(config_from_json({{"model", "svm"}}), UsageError);
}

TEST(Config, ModelKeyPicksFamilyDefaultsThenOverrides) {
  const TrainConfig c = config_from_json({{"model", "cnn"}, {"kernel", 6}});
  EXPECT_EQ(c.filters, 500u);
  EXPECT_EQ(c.kernel, 6u);
}

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  const CamlParams p0 = init_params(ModelKind::Caml, {12, 4, 3, 3, 5}, false, 1);
  CamlParams p = p0;
  AdamState s = AdamState::for_params(p);
  const CamlParams g = p.zeros_like();
  for (int i = 0; i < 5; ++i) adam_step(p, g, s, 0.1);
  std::vector<const Matrix*> before;
  p0.for_each_tensor([&](std::string_view, const Matrix& m, bool) { before.push_back(&m); });
  std::size_t k = 0;
  p.for_each_tensor([&](std::string_view, const Matrix& m, bool) { EXPECT_EQ(m, *before[k++]); });
}

TEST(Adam, ConstantGradientStepsByEtaTimesSign) {
  CamlParams p = init_params(ModelKind::Caml, {12, 4, 3, 3, 5}, false, 1);
  AdamState s = AdamState::for_params(p);
  CamlParams g = p.zeros_like();
  Rng rng(4);
  g.for_each_tensor([&](std::string_view, Matrix& m, bool) {
    for (double& x : m.values()) x = rng.bernoulli(0.5) ? rng.uniform(0.5, 3.0) : -rng.uniform(0.5, 3.0);
  });
  const double eta = 0.01;
  for (int step = 0; step < 50; ++step) {
    CamlParams before = p;
    adam_step(p, g, s, eta);
    std::vector<Matrix*> prev;
    before.for_each_tensor([&](std::string_view, Matrix& m, bool) { prev.push_back(&m); });
    std::vector<Matrix*> grads;
    g.for_each_tensor([&](std::string_view, Matrix& m, bool) { grads.push_back(&m); });
    std::size_t k = 0;
    p.for_each_tensor([&](std::string_view, Matrix& m, bool) {
      for (std::size_t i = 0; i < m.size(); ++i) {
        const double delta = m.values()[i] - prev[k]->values()[i];
        const double expected = -eta * (grads[k]->values()[i] > 0 ? 1.0 : -1.0);
        EXPECT_NEAR(delta, expected, 1e-7);
      }
      ++k;
    });
  }
  EXPECT_EQ(s.t, 50u);
}

TEST(Adam, ShapeMismatchThrows) {
  CamlParams p = init_params(ModelKind::Caml, {12, 4, 3, 3, 5}, false, 1);
  AdamState s = AdamState::for_params(p);
  CamlParams g = init_params(ModelKind::Caml, {12, 4, 3, 3, 6}, false, 1);
  EXPECT_THROW(adam_step(p, g, s, 0.1), DataError);
}

TEST(EarlyStopping, PicksBestEpoch) {
  const std::vector<double> seq{0.3, 0.5, 0.4, 0.45, 0.2, 0.1, 0.49};
  std::vector<std::size_t> bests;
  const auto r = run_early_stopping(
      seq.size(), 3, [&](std::size_t e) { return seq[e - 1]; }, [&](std::size_t e, double) { bests.push_back(e); });
  EXPECT_EQ(r.best_epoch, 2u);
  EXPECT_EQ(r.best_score, 0.5);
  EXPECT_EQ(r.epochs_run, 5u);
  EXPECT_EQ(bests, (std::vector<std::size_t>{1, 2}));
}

TEST(EarlyStopping, PatienceZeroRunsOneEpoch) {
  const auto r = run_early_stopping(
      10, 0, [](std::size_t e) { return static_cast<double>(e); }, [](std::size_t, double) {});
  EXPECT_EQ(r.epochs_run, 1u);
  EXPECT_EQ(r.best_epoch, 1u);
}

TEST(EarlyStopping, TiesKeepEarlierEpoch) {
  const auto r = run_early_stopping(
      4, 5, [](std::size_t) { return 0.7; }, [](std::size_t, double) {});
  EXPECT_EQ(r.best_epoch, 1u);
  EXPECT_EQ(r.epochs_run, 4u);
}

TEST(EarlyStopping, BestScoreIsMaximumSeen) {
  Rng rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> seq(1 + rng.below(30));
    for (double& x : seq) x = std::floor(rng.uniform() * 5.0) / 5.0;
    const std::size_t patience = rng.below(6);
    const auto r = run_early_stopping(
        seq.size(), patience, [&](std::size_t e) { return seq[e - 1]; }, [](std::size_t, double) {});
    ASSERT_LE(r.epochs_run, seq.size());
    const double best_seen = *std::max_element(seq.begin(), seq.begin() + static_cast<long>(r.epochs_run));
    EXPECT_EQ(r.best_score, best_seen);
    const auto first = std::find(seq.begin(), seq.end(), best_seen) - seq.begin() + 1;
    EXPECT_EQ(r.best_epoch, static_cast<std::size_t>(first));
    if (r.epochs_run < seq.size()) {
      EXPECT_EQ(r.epochs_run - r.best_epoch, patience);
    }
  }
}

TEST(Training, FullBatchLossDecreasesOverTwentyAdamSteps) {
  const Dataset data = testdata::small_dataset();
  const auto descs = label_descriptions(data.space);
  int successes = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    CamlParams p = init_params(ModelKind::Caml, {data.vocab.size(), 8, 6, 3, data.space.size()}, true, seed);
    AdamState s = AdamState::for_params(p);
    const LossConfig cfg{0.1, 0.001};
    auto full_loss = [&](CamlParams* grads) {
      double total = 0.0;
      const double scale = 1.0 / static_cast<double>(data.train.size());
      for (const auto& d : data.train) {
        const ForwardTrace tr = forward(p, d.token_ids, 0.0, nullptr);
        total += scale * (bce(tr.yhat, d.label_vector) + cfg.lambda * description_penalty(p, d.label_vector, descs));
        if (grads) backward(tr, p, d.label_vector, cfg, *grads, scale, descs);
      }
      total += cfg.rho * l2_penalty(p);
      if (grads) add_l2_gradient(p, cfg.rho, *grads);
      return total;
    };
    const double start = full_loss(nullptr);
    for (int step = 0; step < 20; ++step) {
      CamlParams g = p.zeros_like();
      full_loss(&g);
      adam_step(p, g, s, 0.01);
    }
    successes += full_loss(nullptr) < start;
  }
  EXPECT_GE(successes, 1);
}

TEST(Training, SameSeedGivesIdenticalHistories) {
  const Dataset data = testdata::small_dataset();
  auto cfg = testdata::tiny_config();
  cfg.dropout = 0.3;
  const auto a = train(data, cfg);
  const auto b = train(data, cfg);
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_EQ(a.history[i].batch_losses, b.history[i].batch_losses);
    EXPECT_EQ(a.history[i].validation_score, b.history[i].validation_score);
  }
  cfg.seed = 4;
  const auto c = train(data, cfg);
  EXPECT_NE(c.history[0].batch_losses, a.history[0].batch_losses);
}

TEST(Training, CheckpointIsBestEpoch) {
  const Dataset data = testdata::small_dataset();
  auto cfg = testdata::tiny_config();
  cfg.max_epochs = 6;
  std::size_t callbacks = 0;
  const auto r = train(data, cfg, [&](const EpochLog&) { ++callbacks; });
  EXPECT_EQ(callbacks, r.history.size());
  ASSERT_TRUE(r.best.neural.has_value());
  EXPECT_EQ(r.best.epoch, r.stopping.best_epoch);
  EXPECT_EQ(r.best.best_validation_score, r.history[r.best.epoch - 1].validation_score);
  const auto pm = score_documents(r.best, data.validation, data.space.size());
  EXPECT_EQ(precision_at_n(pm, effective_precision_n(8, data.space.size())), r.best.best_validation_score);
  EXPECT_EQ(r.best.vocab_hash, data.vocab.hash());
  EXPECT_EQ(r.best.label_hash, data.space.hash());
}

TEST(Training, PrecisionNIsCappedByLabelCount) {
  EXPECT_EQ(effective_precision_n(8, 5), 5u);
  EXPECT_EQ(effective_precision_n(8, 50), 8u);
}

TEST(Training, CnnAndLrDispatch) {
  const Dataset data = testdata::small_dataset();
  const auto cnn = train(data, testdata::tiny_config(ModelChoice::Cnn));
  ASSERT_TRUE(cnn.best.neural.has_value());
  EXPECT_EQ(cnn.best.neural->kind, ModelKind::MaxPoolCnn);
  const auto lr = train(data, testdata::tiny_config(ModelChoice::Lr));
  EXPECT_TRUE(lr.best.lr.has_value());
  EXPECT_FALSE(lr.best.neural.has_value());
}

TEST(Training, NonFiniteLossReportsEpochAndBatch) {
  Dataset data = testdata::small_dataset();
  EmbeddingTable t{Matrix(data.vocab.size(), 8)};
  t.matrix.fill(std::numeric_limits<double>::quiet_NaN());
  data.embeddings = t;
  try {
    train(data, testdata::tiny_config());
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("batch 0"), std::string::npos);
  }
}

TEST(Training, EmbeddingDimensionMismatchIsDataError) {
  Dataset data = testdata::small_dataset();
  data.embeddings = EmbeddingTable{Matrix(data.vocab.size(), 5)};
  EXPECT_THROW(train(data, testdata::tiny_config()), DataError);
}

TEST(Training, MissingDescriptionWithLambdaIsDataError) {
  Dataset data = testdata::small_dataset();
  data.space.descriptions.clear();
  auto cfg = testdata::tiny_config();
  cfg.lambda = 0.5;
  EXPECT_THROW(train(data, cfg), DataError);
}
