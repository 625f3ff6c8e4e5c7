#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "caml/model.hpp"

using namespace caml;

namespace {

struct Tiny {
  CamlParams params;
  std::vector<TokenId> tokens;
  std::vector<std::uint8_t> y;
  LabelDescriptions descriptions;
};

Tiny random_tiny(std::uint64_t seed, ModelKind kind, bool with_desc, std::size_t kernel = 3, std::size_t n = 10) {
  Rng rng(seed);
  ModelDims dims{20, 5, 4, kernel, 6};
  Tiny t;
  t.params = init_params(kind, dims, with_desc, seed);
  for (std::size_t i = 1; i < dims.vocab; ++i)
    for (double& x : t.params.embeddings.row(i)) x = rng.uniform(-1.0, 1.0);
  for (double& x : t.params.conv_bias.values()) x = rng.uniform(-0.5, 0.5);
  for (double& x : t.params.out_bias.values()) x = rng.uniform(-0.5, 0.5);
  if (t.params.desc)
    for (double& x : t.params.desc->conv_bias.values()) x = rng.uniform(-0.5, 0.5);
  for (std::size_t i = 0; i < n; ++i) t.tokens.push_back(static_cast<TokenId>(1 + rng.below(dims.vocab - 1)));
  t.y.assign(dims.labels, 0);
  for (auto& v : t.y) v = rng.bernoulli(0.4);
  t.y[seed % dims.labels] = 1;
  t.descriptions.resize(dims.labels);
  for (auto& d : t.descriptions)
    for (std::size_t i = 0, len = 1 + rng.below(4); i < len; ++i)
      d.push_back(static_cast<TokenId>(1 + rng.below(dims.vocab - 1)));
  return t;
}

GradCheckReport check(Tiny& t, const LossConfig& cfg, double dropout = 0.0) {
  const Rng mask_rng(99);
  auto run_forward = [&] {
    Rng r = mask_rng;
    return forward(t.params, t.tokens, dropout, dropout > 0.0 ? &r : nullptr);
  };
  const ForwardTrace tr = run_forward();
  const CamlParams grads = example_gradients(tr, t.params, t.y, cfg, t.descriptions);
  std::vector<const Matrix*> g;
  grads.for_each_tensor([&](std::string_view, const Matrix& m, bool) { g.push_back(&m); });
  std::vector<TensorGradient> tensors;
  std::size_t i = 0;
  t.params.for_each_tensor([&](std::string_view name, Matrix& m, bool) {
    if (!m.empty()) tensors.push_back({std::string(name), m.values(), g[i]->values()});
    ++i;
  });
  auto objective = [&] {
    const ForwardTrace f = run_forward();
    return example_loss(t.params, f.yhat, t.y, cfg, t.descriptions);
  };
  return finite_diff_check(objective, std::span<const TensorGradient>(tensors));
}

Matrix column_matrix(std::initializer_list<std::initializer_list<double>> rows) {
  std::vector<std::vector<double>> r;
  for (auto row : rows) r.emplace_back(row);
  return Matrix::from_rows(r);
}

}  // namespace

TEST(Conv, ZeroWeightsGiveZeroHidden) {
  Rng rng(1);
  Matrix input(7, 3);
  for (double& x : input.values()) x = rng.uniform(-2, 2);
  const Matrix h = conv_tanh_forward(input, Matrix(4, 9), Matrix(1, 4), 3);
  EXPECT_EQ(h.rows(), 4u);
  EXPECT_EQ(h.cols(), 7u);
  for (double x : h.values()) EXPECT_EQ(x, 0.0);
}

TEST(Conv, SinglePositionWithZeroPads) {
  const Matrix input = column_matrix({{2.0}});
  const Matrix w = column_matrix({{1.0, 1.0, 1.0}});
  const Matrix h = conv_tanh_forward(input, w, Matrix(1, 1), 3);
  ASSERT_EQ(h.cols(), 1u);
  EXPECT_DOUBLE_EQ(h(0, 0), std::tanh(2.0));
}

TEST(Conv, EvenKernelPadsOneMoreOnTheRight) {
  // k = 4: left pad 1, right pad 2. Offsets t = 0..3 read positions n-1..n+2.
  const Matrix input = column_matrix({{1.0}, {10.0}, {100.0}});
  const Matrix w = column_matrix({{0.001, 0.002, 0.003, 0.004}});
  const Matrix h = conv_tanh_forward(input, w, Matrix(1, 1), 4);
  EXPECT_DOUBLE_EQ(h(0, 0), std::tanh(0.002 * 1 + 0.003 * 10 + 0.004 * 100));
  EXPECT_DOUBLE_EQ(h(0, 1), std::tanh(0.001 * 1 + 0.002 * 10 + 0.003 * 100));
  EXPECT_DOUBLE_EQ(h(0, 2), std::tanh(0.001 * 10 + 0.002 * 100));
  EXPECT_EQ(left_padding(4), 1u);
  EXPECT_EQ(left_padding(10), 4u);
  EXPECT_EQ(left_padding(1), 0u);
}

TEST(Conv, OutputIsFiltersByLength) {
  Rng rng(2);
  const CamlParams p = init_params(ModelKind::Caml, {20, 5, 4, 3, 6}, false, 3);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 1 + rng.below(50);
    std::vector<TokenId> ids(n);
    for (auto& id : ids) id = static_cast<TokenId>(rng.below(20));
    const Matrix h = conv_forward(ids, p);
    EXPECT_EQ(h.rows(), 4u);
    EXPECT_EQ(h.cols(), n);
  }
}

TEST(Attention, ZeroQueryIsUniform) {
  Rng rng(3);
  Matrix h(3, 5);
  for (double& x : h.values()) x = rng.uniform(-1, 1);
  const auto out = attention_forward(h, Matrix(2, 3));
  for (std::size_t l = 0; l < 2; ++l) {
    for (std::size_t n = 0; n < 5; ++n) EXPECT_NEAR(out.alpha(l, n), 0.2, 1e-15);
    for (std::size_t j = 0; j < 3; ++j) {
      double mean = 0.0;
      for (std::size_t n = 0; n < 5; ++n) mean += h(j, n) / 5.0;
      EXPECT_NEAR(out.values(l, j), mean, 1e-15);
    }
  }
}

TEST(Attention, SinglePosition) {
  const Matrix h = column_matrix({{0.3}, {-0.7}});
  const Matrix u = column_matrix({{5, 1}, {-2, 0.5}, {0, 0}});
  const auto out = attention_forward(h, u);
  for (std::size_t l = 0; l < 3; ++l) {
    EXPECT_EQ(out.alpha(l, 0), 1.0);
    EXPECT_EQ(out.values(l, 0), 0.3);
    EXPECT_EQ(out.values(l, 1), -0.7);
  }
}

TEST(Attention, HandSoftmax) {
  const Matrix h = column_matrix({{1, 0}, {0, 1}});
  const Matrix u = column_matrix({{10, 0}});
  const auto out = attention_forward(h, u);
  const double e10 = std::exp(10.0);
  EXPECT_NEAR(out.alpha(0, 0), e10 / (e10 + 1), 1e-15);
  EXPECT_NEAR(out.alpha(0, 1), 1 / (e10 + 1), 1e-15);
  EXPECT_NEAR(out.values(0, 0), 1.0, 1e-4);
  EXPECT_NEAR(out.values(0, 1), 0.0, 1e-4);
}

TEST(MaxPool, Examples) {
  auto a = maxpool_forward(column_matrix({{1, 3, 2}}));
  EXPECT_EQ(a.values[0], 3.0);
  EXPECT_EQ(a.argmax[0], 1u);
  auto b = maxpool_forward(column_matrix({{0.25}, {-4}}));
  EXPECT_EQ(b.values, (std::vector<double>{0.25, -4}));
  auto c = maxpool_forward(column_matrix({{2, 2}}));
  EXPECT_EQ(c.argmax[0], 0u);
}

TEST(MaxPool, DominatesEveryPosition) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    Matrix h(1 + rng.below(5), 1 + rng.below(12));
    for (double& x : h.values()) x = static_cast<double>(rng.below(5));  // plenty of ties
    const auto p = maxpool_forward(h);
    for (std::size_t j = 0; j < h.rows(); ++j) {
      for (std::size_t n = 0; n < h.cols(); ++n) EXPECT_GE(p.values[j], h(j, n));
      EXPECT_EQ(p.values[j], h(j, p.argmax[j]));
      for (std::size_t n = 0; n < p.argmax[j]; ++n) EXPECT_LT(h(j, n), p.values[j]);
    }
  }
}

TEST(Classify, Examples) {
  const Matrix v = column_matrix({{0.5, -1}, {2, 3}});
  const auto zero = classify(v, Matrix(2, 2), Matrix(1, 2));
  EXPECT_EQ(zero.probs, (std::vector<double>{0.5, 0.5}));

  const Matrix beta = column_matrix({{1, 0}, {0, 0}});
  Matrix b(1, 2);
  b(0, 0) = std::log(3.0) - 0.5;
  EXPECT_NEAR(classify(v, beta, b).probs[0], 0.75, 1e-15);

  double prev = 0.0;
  for (double bias = -3; bias <= 3; bias += 0.5) {
    b(0, 1) = bias;
    const double p = classify(v, beta, b).probs[1];
    EXPECT_GT(p, prev);
    prev = p;
  }
  const std::vector<double> shared{1.0, 2.0};
  EXPECT_NEAR(classify(shared, column_matrix({{1, 1}, {0, 0}}), Matrix(1, 2)).logits[0], 3.0, 1e-15);
}

TEST(DescEmbed, ZeroWeightsGiveZero) {
  const Matrix emb = column_matrix({{0, 0}, {1, 2}, {3, 4}});
  const DescEmbedderParams d{Matrix(3, 4), Matrix(1, 3)};
  const std::vector<TokenId> desc{1, 2, 1};
  const auto e = desc_embed(desc, d, emb, 2);
  ASSERT_EQ(e.z().size(), 3u);
  for (double z : e.z()) EXPECT_EQ(z, 0.0);
}

TEST(DescEmbed, SingleTokenIdentityConv) {
  const Matrix emb = column_matrix({{0}, {0.8}});
  const DescEmbedderParams d{column_matrix({{1.5}}), Matrix(1, 1)};
  const std::vector<TokenId> desc{1};
  EXPECT_DOUBLE_EQ(desc_embed(desc, d, emb, 1).z()[0], std::tanh(1.5 * 0.8));
}

TEST(DescEmbed, OutputLengthIsFilters) {
  const CamlParams p = init_params(ModelKind::Caml, {20, 5, 7, 3, 6}, true, 1);
  for (std::size_t len = 1; len < 10; ++len) {
    std::vector<TokenId> desc(len, 3);
    EXPECT_EQ(desc_embed(desc, *p.desc, p.embeddings, p.kernel).z().size(), 7u);
  }
  EXPECT_THROW(desc_embed({}, *p.desc, p.embeddings, p.kernel), DataError);
}

TEST(Loss, BceValues) {
  const std::vector<double> half{0.5};
  const std::vector<std::uint8_t> one{1};
  EXPECT_NEAR(bce(half, one), std::log(2.0), 1e-15);
  const std::vector<double> exact{1.0, 0.0};
  const std::vector<std::uint8_t> y{1, 0};
  EXPECT_LT(bce(exact, y), 1e-11);
  const std::vector<double> wrong{0.0, 1.0};
  EXPECT_TRUE(std::isfinite(bce(wrong, y)));
  EXPECT_NEAR(bce(wrong, y), -2.0 * std::log(kProbClamp), 1e-4);
}

TEST(Loss, TermIsolation) {
  Tiny t = random_tiny(5, ModelKind::Caml, true);
  const auto yhat = predict(t.params, t.tokens);
  EXPECT_EQ(example_loss(t.params, yhat, t.y, {0.0, 0.0}, t.descriptions), bce(yhat, t.y));
  EXPECT_NEAR(example_loss(t.params, yhat, t.y, {0.0, 0.3}, t.descriptions),
              bce(yhat, t.y) + 0.3 * l2_penalty(t.params), 1e-12);
  EXPECT_NEAR(example_loss(t.params, yhat, t.y, {2.0, 0.0}, t.descriptions),
              bce(yhat, t.y) + 2.0 * description_penalty(t.params, t.y, t.descriptions), 1e-12);
}

TEST(Loss, L2SkipsBiases) {
  CamlParams p = init_params(ModelKind::Caml, {4, 2, 2, 1, 2}, false, 1);
  for (auto* m : {&p.embeddings, &p.conv_weight, &p.attention, &p.out_weight}) m->fill(0.0);
  p.conv_bias.fill(5.0);
  p.out_bias.fill(5.0);
  EXPECT_EQ(l2_penalty(p), 0.0);
  p.out_weight(1, 1) = 3.0;
  EXPECT_EQ(l2_penalty(p), 9.0);
}

TEST(Loss, DescriptionPenaltyZeroWhenBetaMatchesZ) {
  Tiny t = random_tiny(6, ModelKind::Caml, true);
  for (std::size_t l = 0; l < t.y.size(); ++l) {
    const auto z = desc_embed(t.descriptions[l], *t.params.desc, t.params.embeddings, t.params.kernel).z();
    std::copy(z.begin(), z.end(), t.params.out_weight.row(l).begin());
  }
  EXPECT_EQ(description_penalty(t.params, t.y, t.descriptions), 0.0);
  std::vector<std::uint8_t> none(t.y.size(), 0);
  t.params.out_weight.fill(1.0);
  EXPECT_EQ(description_penalty(t.params, none, t.descriptions), 0.0);
}

TEST(Loss, MissingDescriptionIsAnError) {
  Tiny t = random_tiny(7, ModelKind::Caml, true);
  const std::size_t l = 7 % t.y.size();
  t.descriptions[l].clear();
  EXPECT_THROW(description_penalty(t.params, t.y, t.descriptions), DataError);
}

TEST(Backward, OutputBiasGradientIsResidual) {
  Tiny t = random_tiny(8, ModelKind::Caml, false);
  const auto tr = forward(t.params, t.tokens);
  const auto g = example_gradients(tr, t.params, t.y, {});
  for (std::size_t l = 0; l < t.y.size(); ++l) EXPECT_NEAR(g.out_bias(0, l), tr.yhat[l] - t.y[l], 1e-15);
}

TEST(Backward, PerfectPredictionsGiveZeroGradient) {
  Tiny t = random_tiny(9, ModelKind::Caml, false);
  ForwardTrace tr = forward(t.params, t.tokens);
  for (std::size_t l = 0; l < t.y.size(); ++l) tr.yhat[l] = t.y[l];
  const auto g = example_gradients(tr, t.params, t.y, {});
  g.for_each_tensor([](std::string_view name, const Matrix& m, bool) {
    for (double x : m.values()) EXPECT_EQ(x, 0.0) << name;
  });
}

TEST(Backward, PadRowGetsNoGradient) {
  Tiny t = random_tiny(10, ModelKind::Caml, false);
  t.tokens[2] = Vocabulary::kPad;
  const auto g = example_gradients(forward(t.params, t.tokens), t.params, t.y, {0.0, 0.1});
  for (double x : g.embeddings.row(Vocabulary::kPad)) EXPECT_EQ(x, 0.0);
}

TEST(GradientCheck, TinyCamlWithAllTerms) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Tiny t = random_tiny(seed, ModelKind::Caml, true);
    const auto report = check(t, {0.1, 0.01});
    EXPECT_TRUE(report.passed()) << "seed " << seed << " max " << report.max_rel_error();
    EXPECT_EQ(report.tensors.size(), 8u);
  }
}

TEST(GradientCheck, PlainBceAndEvenKernel) {
  for (std::size_t kernel : {1u, 2u, 4u, 5u}) {
    Tiny t = random_tiny(20 + kernel, ModelKind::Caml, false, kernel, 7);
    EXPECT_TRUE(check(t, {}).passed()) << "k=" << kernel;
  }
}

TEST(GradientCheck, MaxPoolBaseline) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    Tiny t = random_tiny(seed, ModelKind::MaxPoolCnn, false);
    EXPECT_TRUE(check(t, {0.0, 0.05}).passed()) << seed;
  }
}

TEST(GradientCheck, WithDropoutMask) {
  Tiny t = random_tiny(31, ModelKind::Caml, true);
  EXPECT_TRUE(check(t, {0.5, 0.01}, 0.3).passed());
}

TEST(GradientCheck, LargeLambdaRegime) {
  Tiny t = random_tiny(41, ModelKind::Caml, true, 3, 12);
  EXPECT_TRUE(check(t, {10.0, 0.0}).passed());
}

TEST(Invariants, AttentionRowsAreDistributionsAndValuesInEnvelope) {
  Rng rng(50);
  for (int trial = 0; trial < 200; ++trial) {
    Tiny t = random_tiny(100 + trial, ModelKind::Caml, false, 1 + rng.below(5), 1 + rng.below(30));
    for (double& x : t.params.attention.values()) x *= 10.0;
    const auto tr = forward(t.params, t.tokens);
    const auto& a = tr.attention;
    for (std::size_t l = 0; l < a.alpha.rows(); ++l) {
      const auto row = a.alpha.row(l);
      EXPECT_NEAR(std::accumulate(row.begin(), row.end(), 0.0), 1.0, 1e-9);
      for (std::size_t j = 0; j < tr.hidden.rows(); ++j) {
        double lo = tr.hidden(j, 0), hi = lo;
        for (std::size_t n = 1; n < tr.hidden.cols(); ++n) {
          lo = std::min(lo, tr.hidden(j, n));
          hi = std::max(hi, tr.hidden(j, n));
        }
        EXPECT_GE(a.values(l, j), lo - 1e-9);
        EXPECT_LE(a.values(l, j), hi + 1e-9);
      }
    }
    for (double p : tr.yhat) {
      EXPECT_GT(p, 0.0);
      EXPECT_LT(p, 1.0);
    }
  }
}

TEST(Invariants, SinglePositionCamlMatchesMaxPool) {
  Tiny t = random_tiny(60, ModelKind::Caml, false, 3, 1);
  const auto caml = forward(t.params, t.tokens);
  CamlParams cnn = t.params;
  cnn.kind = ModelKind::MaxPoolCnn;
  const auto pooled = forward(cnn, t.tokens);
  for (std::size_t l = 0; l < t.y.size(); ++l)
    for (std::size_t j = 0; j < cnn.filters(); ++j) EXPECT_EQ(caml.attention.values(l, j), pooled.pooled.values[j]);
}

TEST(Invariants, PermutingLabelsPermutesOutputs) {
  Tiny t = random_tiny(70, ModelKind::Caml, false);
  const std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
  CamlParams q = t.params;
  for (std::size_t l = 0; l < perm.size(); ++l) {
    std::copy(t.params.attention.row(perm[l]).begin(), t.params.attention.row(perm[l]).end(), q.attention.row(l).begin());
    std::copy(t.params.out_weight.row(perm[l]).begin(), t.params.out_weight.row(perm[l]).end(), q.out_weight.row(l).begin());
    q.out_bias(0, l) = t.params.out_bias(0, perm[l]);
  }
  const auto a = forward(t.params, t.tokens), b = forward(q, t.tokens);
  for (std::size_t l = 0; l < perm.size(); ++l) {
    EXPECT_EQ(b.yhat[l], a.yhat[perm[l]]);
    for (std::size_t n = 0; n < t.tokens.size(); ++n) EXPECT_EQ(b.attention.alpha(l, n), a.attention.alpha(perm[l], n));
  }
}

TEST(Dropout, MaskIsInvertedAndSeeded) {
  Rng a(3), b(3);
  const Matrix m1 = make_dropout_mask(50, 20, 0.25, a), m2 = make_dropout_mask(50, 20, 0.25, b);
  EXPECT_EQ(m1, m2);
  std::size_t zeros = 0;
  for (double x : m1.values()) {
    EXPECT_TRUE(x == 0.0 || x == 1.0 / 0.75);
    zeros += x == 0.0;
  }
  EXPECT_NEAR(static_cast<double>(zeros) / 1000.0, 0.25, 0.05);
}

TEST(Init, ShapesAndPadRow) {
  const CamlParams p = init_params(ModelKind::Caml, {30, 8, 6, 4, 5}, true, 2);
  EXPECT_NO_THROW(p.validate());
  EXPECT_EQ(p.conv_weight.cols(), 32u);
  EXPECT_EQ(p.attention.rows(), 5u);
  for (double x : p.embeddings.row(Vocabulary::kPad)) EXPECT_EQ(x, 0.0);
  const CamlParams c = init_params(ModelKind::MaxPoolCnn, {30, 8, 6, 4, 5}, false, 2);
  EXPECT_EQ(c.attention.rows(), 0u);
  EXPECT_FALSE(c.desc.has_value());
  EXPECT_EQ(init_params(ModelKind::Caml, {30, 8, 6, 4, 5}, true, 2).out_weight, p.out_weight);
  EXPECT_THROW(init_params(ModelKind::Caml, {30, 8, 0, 4, 5}, false, 2), UsageError);
}
