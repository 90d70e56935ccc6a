#include <gtest/gtest.h>

#include <cmath>

#include "model_checks.hpp"

using namespace relmetric;
using namespace relmetric::testing;

TEST(MetricTables, IdentityMetricGivesDotProducts) {
  std::mt19937_64 rng(1);
  const Tensor h = random_tensor({4, 3}, rng);
  Tensor eye({1, 3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye.at(0, i, i) = 1;
  Tape tape;
  const Tensor g = tape.value(metric_tables(tape.constant(h), tape.constant(eye)));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      double dot = 0;
      for (std::size_t k = 0; k < 3; ++k) dot += h.at(i, k) * h.at(j, k);
      EXPECT_NEAR(g.at(i, j, 0), dot, 1e-14);
    }
}

TEST(MetricTables, LinearInEachRow) {
  std::mt19937_64 rng(2);
  Tensor h = random_tensor({3, 4}, rng);
  const Tensor r = random_tensor({2, 4, 4}, rng);
  Tape tape;
  const Tensor g = tape.value(metric_tables(tape.constant(h), tape.constant(r)));
  for (std::size_t k = 0; k < 4; ++k) h.at(1, k) *= 2.5;
  const Tensor g2 = tape.value(metric_tables(tape.constant(h), tape.constant(r)));
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t c = 0; c < 2; ++c) {
      EXPECT_NEAR(g2.at(1, j, c), (j == 1 ? 2.5 * 2.5 : 2.5) * g.at(1, j, c), 1e-12);
      if (j != 1) EXPECT_NEAR(g2.at(j, 1, c), 2.5 * g.at(j, 1, c), 1e-12);
    }
  const Tensor big = tape.value(metric_tables(tape.constant(random_tensor({7, 5}, rng)),
                                              tape.constant(random_tensor({15, 5, 5}, rng))));
  EXPECT_EQ(big.shape(), (Shape{7, 7, 15}));
}

TEST(MetricTables, WidthMismatchIsShapeError) {
  Tape tape;
  EXPECT_THROW(metric_tables(tape.constant(Tensor({3, 4})), tape.constant(Tensor({2, 5, 5}))), ShapeError);
}

TEST(DependencyTable, NoEdgesMeansNullEverywhere) {
  std::mt19937_64 rng(3);
  const Tensor f = random_tensor({4, 3}, rng), phi = random_tensor({3}, rng);
  Tape tape;
  const Tensor d = tape.value(dependency_table(tape.constant(f), tape.constant(phi), {}, 5));
  for (std::size_t c = 0; c < 25; ++c)
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(d[c * 3 + k], phi[k]);
}

TEST(DependencyTable, EdgeFillsBothCellsAndIsSymmetric) {
  std::mt19937_64 rng(4);
  const Tensor f = random_tensor({4, 3}, rng), phi = random_tensor({3}, rng);
  const std::size_t nsubj = 2;
  Tape tape;
  const Tensor d =
      tape.value(dependency_table(tape.constant(f), tape.constant(phi), {{2, 5, nsubj}, {0, 3, 1}, {6, 1, 3}}, 7));
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(d.at(2, 5, k), f.at(nsubj, k));
    EXPECT_EQ(d.at(5, 2, k), f.at(nsubj, k));
    EXPECT_EQ(d.at(4, 4, k), phi[k]);
  }
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 7; ++j)
      for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(d.at(i, j, k), d.at(j, i, k));
}

TEST(DependencyTable, OutOfRangeEdgeIsContractError) {
  Tape tape;
  EXPECT_THROW(dependency_table(tape.constant(Tensor({2, 2})), tape.constant(Tensor({2})), {{0, 3, 0}}, 3),
               ContractError);
}

TEST(PositionTable, SignedOffsets) {
  std::mt19937_64 rng(5);
  const std::size_t n_max = 6;
  const Tensor f = random_tensor({2 * n_max + 1, 2}, rng);
  auto row = [&](long offset, std::size_t k) { return f.at(static_cast<std::size_t>(offset + long(n_max)), k); };
  Tape tape;
  const Tensor p = tape.value(position_table(tape.constant(f), 7));
  for (std::size_t k = 0; k < 2; ++k) {
    for (std::size_t i = 0; i < 7; ++i) EXPECT_EQ(p.at(i, i, k), row(0, k));
    EXPECT_EQ(p.at(1, 4, k), row(-3, k));
    EXPECT_EQ(p.at(4, 1, k), row(3, k));
  }
}

TEST(PositionTable, LongSentencesClampToExtremeRows) {
  std::mt19937_64 rng(6);
  const Tensor f = random_tensor({5, 2}, rng);  // offsets -2..2
  Tape tape;
  const Tensor p = tape.value(position_table(tape.constant(f), 6));
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_EQ(p.at(0, 5, k), f.at(0, k));
    EXPECT_EQ(p.at(5, 0, k), f.at(4, k));
  }
}

TEST(PoolStack, ChannelArithmetic) {
  std::mt19937_64 rng(7);
  NetDims d;
  d.context = 4;
  d.channels = 5;
  d.layers = 3;
  d.dep_dim = 2;
  d.position_dim = 3;
  d.tags = 22;
  const NetParams net(d, rng, 0.1);
  ASSERT_EQ(net.layers(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(net.convs[i].filters.value.dim(2), 5u + 2 + 3);
    EXPECT_EQ(net.convs[i].filters.value.dim(3), i == 2 ? 22u : 5u);
  }
  EXPECT_EQ(net.layer_norms.size(), 2u);
  EXPECT_TRUE(net.metric_norm.has_value());
  d.layers = 1;
  EXPECT_THROW(NetParams(d, rng, 0.1), ConfigError);
}

TEST(PoolStack, OutputIsDistributionWithExpectedShape) {
  TrainConfig c = tiny_config();
  c.layers = 3;
  RelationMetricModel model = make_model(c);
  const SentenceExample ex = instantiate("q", "{P} said {Q} works for {O} now", {{"{P}", "Tom"}, {"{Q}", "Mia"}, {"{O}", "Acme"}},
                                         {"Per", "Per", "Org"}, {{1, 2, "Works_For"}});
  ASSERT_EQ(ex.size(), 7u);
  Tape tape;
  std::mt19937_64 rng(1);
  const auto out = model.forward(tape, model.encode(ex), ops::Mode::train, rng);
  const Tensor& q = tape.value(out.pool.probs);
  EXPECT_EQ(q.shape(), (Shape{7, 7, model.labels().size()}));
  for (std::size_t c2 = 0; c2 < 49; ++c2) {
    double s = 0;
    for (std::size_t k = 0; k < q.dim(2); ++k) {
      EXPECT_GE(q[c2 * q.dim(2) + k], 0);
      s += q[c2 * q.dim(2) + k];
    }
    EXPECT_NEAR(s, 1, 1e-9);
  }
  EXPECT_EQ(out.pool.layers.size(), 3u);
}

TEST(PoolStack, ShapeWithConllLabelSpace) {
  TrainConfig c = tiny_config();
  std::mt19937_64 rng(2);
  LabelSpace conll({"Loc", "Org", "Peop", "Other"}, {"Located_In", "Work_For", "OrgBased_In", "Live_In", "Kill"});
  RelationMetricModel model(build_schema(c, conll, synthetic_corpus(6)), rng);
  SentenceExample ex = synthetic_corpus(6)[2];
  ex.entities.clear();
  ex.relations.clear();
  Tape tape;
  const auto out = model.forward(tape, model.encode(ex), ops::Mode::train, rng);
  EXPECT_EQ(tape.value(out.pool.probs).shape(), (Shape{ex.size(), ex.size(), 22}));
}

TEST(PoolStack, InferenceBeforeStatisticsIsContractError) {
  RelationMetricModel model = make_model(tiny_config());
  EXPECT_THROW(model.predict(synthetic_corpus(1)[0]), ContractError);
  Tape tape;
  std::mt19937_64 rng(1);
  model.forward(tape, model.encode(synthetic_corpus(1)[0]), ops::Mode::train, rng);
  EXPECT_NO_THROW(model.predict(synthetic_corpus(1)[0]));
}

TEST(PoolStack, ReceptiveFieldFromFirstLayerOutput) {
  for (std::size_t lambda : {2, 3, 4}) {
    std::mt19937_64 rng(lambda);
    const auto r = receptive_field_probe(lambda, 2, lambda - 1, rng);
    EXPECT_LE(r.outside_change, 1e-12) << lambda;
    EXPECT_GT(r.boundary_change, 0) << lambda;
  }
}

// Measured from G itself every layer adds one cell of reach.
TEST(PoolStack, ReceptiveFieldFromMetricTable) {
  for (std::size_t lambda : {2, 3}) {
    std::mt19937_64 rng(10 + lambda);
    const auto r = receptive_field_probe(lambda, 1, lambda, rng);
    EXPECT_LE(r.outside_change, 1e-12) << lambda;
    EXPECT_GT(r.boundary_change, 0) << lambda;
  }
}

// Relabelling the metric channels together with the matching first-layer
// filter inputs leaves Q unchanged.
TEST(PoolStack, ChannelRelabelingSymmetry) {
  RelationMetricModel model = make_model(tiny_config());
  RelationMetricModel permuted = model;
  const std::vector<std::size_t> perm = {2, 0, 1};
  const std::size_t rho = model.config().context_size;
  const Tensor& r = model.net.metrics.value;
  const Tensor& w = model.net.convs[0].filters.value;
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t a = 0; a < rho; ++a)
      for (std::size_t b = 0; b < rho; ++b) permuted.net.metrics.value.at(perm[k], a, b) = r.at(k, a, b);
    for (std::size_t u = 0; u < 3; ++u)
      for (std::size_t v = 0; v < 3; ++v)
        for (std::size_t o = 0; o < w.dim(3); ++o) {
          auto flat = [&](std::size_t in) { return ((u * 3 + v) * w.dim(2) + in) * w.dim(3) + o; };
          permuted.net.convs[0].filters.value[flat(perm[k])] = w[flat(k)];
        }
  }
  const SentenceExample ex = synthetic_corpus(3)[2];
  auto probs = [&](RelationMetricModel& m) {
    Tape tape;
    std::mt19937_64 rng(4);
    return tape.value(m.forward(tape, m.encode(ex), ops::Mode::train, rng).pool.probs);
  };
  EXPECT_LT(relative_error(probs(model), probs(permuted)), 1e-12);
}

TEST(TableLoss, PerfectPredictionIsZero) {
  Tensor y({3, 3, 4});
  for (std::size_t c = 0; c < 9; ++c) y[c * 4 + c % 4] = 1;
  Tape tape;
  EXPECT_EQ(tape.value(table_loss(tape.constant(y), y))[0], 0);
}

TEST(TableLoss, UniformIsNLogZ) {
  for (std::size_t n : {1, 5, 20}) {
    Tensor q({n, n, 22}, Real{1.0 / 22});
    Tensor y({n, n, 22});
    for (std::size_t c = 0; c < n * n; ++c) y[c * 22 + (c * 7) % 22] = 1;
    Tape tape;
    EXPECT_NEAR(tape.value(table_loss(tape.constant(q), y))[0], n * std::log(22.0), 1e-9 * n);
  }
}

TEST(TableLoss, MatchesDoubleLoopOracle) {
  std::mt19937_64 rng(8);
  Tensor q = random_tensor({3, 3, 4}, rng, 0.05, 1.0);
  Tensor y({3, 3, 4});
  for (std::size_t c = 0; c < 9; ++c) y[c * 4 + rng() % 4] = 1;
  double oracle = 0;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 4; ++k) oracle -= y.at(i, j, k) * std::log(q.at(i, j, k));
  oracle /= 3;
  Tape tape;
  EXPECT_NEAR(tape.value(table_loss(tape.constant(q), y))[0], oracle, 1e-10);
}

TEST(TableLoss, ZeroProbabilityIsClampedNotNan) {
  Tensor q({1, 1, 2});
  q[1] = 1;
  Tensor y({1, 1, 2});
  y[0] = 1;
  Tape tape;
  const double l = tape.value(table_loss(tape.constant(q), y))[0];
  EXPECT_TRUE(std::isfinite(l));
  EXPECT_NEAR(l, -std::log(1e-12), 1e-9);
}

TEST(EndToEnd, GradientMatchesFiniteDifferences) {
  TrainConfig c = tiny_config();
  c.layers = 3;
  RelationMetricModel model = make_model(c);
  const SentenceExample ex = four_token_sentence();
  ASSERT_EQ(ex.size(), 4u);
  std::mt19937_64 rng(9);
  const auto errors = end_to_end_gradient_errors(model, ex, rng);
  for (const std::string group : {"encoder.word_embeddings", "encoder.char_filters", "encoder.lstm_fwd.recurrent",
                                  "net.metrics", "net.dep_tags", "net.dep_null", "net.positions", "net.conv1.filters"})
    EXPECT_TRUE(errors.count(group)) << group;
  for (const auto& [name, err] : errors) EXPECT_LT(err, 1e-3) << name;
}

// At a coarse step most probes stay inside one linear piece of every relu and
// max. Those still carry O(h^2) truncation error, which batch norm over a tiny
// table can push to a few 1e-3, so the tight bound lives in the fine-step test.
TEST(EndToEnd, CoarseStepAgreesAwayFromKinks) {
  TrainConfig c = tiny_config();
  RelationMetricModel model = make_model(c, 21);
  std::mt19937_64 rng(4);
  const GradientCheck g = end_to_end_gradient_check(model, four_token_sentence(), rng, 1e-3);
  EXPECT_GT(g.coords, 0u);
  EXPECT_LT(g.kinked * 10, g.coords);
  for (const auto& [name, err] : g.errors) EXPECT_LT(err, 1e-2) << name;
}

TEST(ActivationSignature, SeesReluCutoffsAndMaxWinners) {
  Tape tape;
  Var x = tape.constant(Tensor({3, 2}, {1, -2, 4, 0.5, -1, 3}));
  ops::max_rows(ops::relu(x));
  const auto sig = activation_signature(tape);
  // x: no zeros; relu: entries 1 and 4 cut; max over relu rows: winners 1 and 2
  const std::vector<std::size_t> expected = {0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 1, 0, 0, 0, 1, 2};
  EXPECT_EQ(sig, expected);
}

