#include <gtest/gtest.h>

#include <cmath>

#include "gradient_cases.hpp"
#include "support.hpp"

using namespace relmetric;
using relmetric::testing::random_tensor;

namespace {

std::mt19937_64& rng() {
  static std::mt19937_64 r(20240611);
  return r;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

// Backprop vs. central differences for every primitive, a few instances each.
class GradientCheck : public ::testing::TestWithParam<std::size_t> {};

TEST_P(GradientCheck, MatchesFiniteDifferences) {
  const auto cases = relmetric::testing::gradient_cases();
  const auto& c = cases.at(GetParam());
  std::mt19937_64 r(1000 + GetParam());
  for (int trial = 0; trial < 5; ++trial) {
    auto inst = c.make(r);
    const double err = relmetric::testing::check_gradients(inst.build, inst.inputs, r);
    EXPECT_LE(err, 1e-4) << c.name << " trial " << trial;
  }
}

INSTANTIATE_TEST_SUITE_P(Primitives, GradientCheck,
                         ::testing::Range<std::size_t>(0, relmetric::testing::gradient_cases().size()),
                         [](const auto& info) { return relmetric::testing::gradient_cases()[info.param].name; });

TEST(Matmul, MatchesNaiveProduct) {
  Tensor a = random_tensor({3, 4}, rng()), b = random_tensor({4, 2}, rng());
  Tape tape;
  const Tensor& c = tape.value(ops::matmul(tape.constant(a), tape.constant(b)));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 4; ++k) s += a.at(i, k) * b.at(k, j);
      EXPECT_NEAR(c.at(i, j), s, 1e-14);
    }
}

TEST(Matmul, InnerDimensionMismatchThrows) {
  Tape tape;
  EXPECT_THROW(ops::matmul(tape.constant(Tensor({2, 3})), tape.constant(Tensor({2, 3}))), ShapeError);
}

TEST(Conv2d, MatchesDirectSumWithZeroPadding) {
  const std::size_t n = 4, u = 2, v = 3;
  Tensor x = random_tensor({n, n, u}, rng()), w = random_tensor({3, 3, u, v}, rng()), b = random_tensor({v}, rng());
  Tape tape;
  const Tensor& out = tape.value(ops::conv2d_padded(tape.constant(x), tape.constant(w), tape.constant(b)));
  for (long i = 0; i < 4; ++i)
    for (long j = 0; j < 4; ++j)
      for (std::size_t o = 0; o < v; ++o) {
        double s = b[o];
        for (long a = 0; a < 3; ++a)
          for (long c = 0; c < 3; ++c) {
            const long ii = i + a - 1, jj = j + c - 1;
            if (ii < 0 || jj < 0 || ii >= 4 || jj >= 4) continue;
            for (std::size_t k = 0; k < u; ++k)
              s += x.at(ii, jj, k) * w[((a * 3 + c) * u + k) * v + o];
          }
        EXPECT_NEAR(out.at(i, j, o), s, 1e-13);
      }
}

TEST(Conv2d, OneByOneTableSeesOnlyCentreTap) {
  Tensor x({1, 1, 1}, Real{2}), w({3, 3, 1, 1}, Real{1}), b({1}, Real{0.5});
  w[4] = 3;  // centre
  Tape tape;
  EXPECT_DOUBLE_EQ(tape.value(ops::conv2d_padded(tape.constant(x), tape.constant(w), tape.constant(b)))[0], 6.5);
}

TEST(Conv2d, ShapeErrors) {
  Tape tape;
  EXPECT_THROW(ops::conv2d_padded(tape.constant(Tensor({2, 3, 1})), tape.constant(Tensor({3, 3, 1, 1})),
                                  tape.constant(Tensor({1}))),
               ShapeError);
  EXPECT_THROW(ops::conv2d_padded(tape.constant(Tensor({2, 2, 2})), tape.constant(Tensor({3, 3, 1, 1})),
                                  tape.constant(Tensor({1}))),
               ShapeError);
  EXPECT_THROW(ops::conv2d_padded(tape.constant(Tensor({0, 0, 1})), tape.constant(Tensor({3, 3, 1, 1})),
                                  tape.constant(Tensor({1}))),
               ContractError);
}

TEST(Bilinear, MatchesExplicitQuadraticForm) {
  const std::size_t n = 3, rho = 4, kappa = 2;
  Tensor h = random_tensor({n, rho}, rng()), r = random_tensor({kappa, rho, rho}, rng());
  Tape tape;
  const Tensor& g = tape.value(ops::bilinear_tables(tape.constant(h), tape.constant(r)));
  ASSERT_EQ(g.shape(), (Shape{n, n, kappa}));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < kappa; ++k) {
        double s = 0;
        for (std::size_t a = 0; a < rho; ++a)
          for (std::size_t b = 0; b < rho; ++b) s += h.at(i, a) * r.at(k, a, b) * h.at(j, b);
        EXPECT_NEAR(g.at(i, j, k), s, 1e-13);
      }
}

TEST(Bilinear, SymmetricMetricGivesSymmetricTable) {
  const std::size_t n = 4, rho = 3;
  Tensor h = random_tensor({n, rho}, rng()), r = random_tensor({1, rho, rho}, rng());
  for (std::size_t a = 0; a < rho; ++a)
    for (std::size_t b = 0; b < a; ++b) r.at(0, a, b) = r.at(0, b, a);
  Tape tape;
  const Tensor& g = tape.value(ops::bilinear_tables(tape.constant(h), tape.constant(r)));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) EXPECT_NEAR(g.at(i, j, 0), g.at(j, i, 0), 1e-13);
}

TEST(Bilinear, WidthMismatchThrows) {
  Tape tape;
  EXPECT_THROW(ops::bilinear_tables(tape.constant(Tensor({2, 3})), tape.constant(Tensor({1, 4, 4}))), ShapeError);
}

// Straightforward per-step LSTM written from the cell equations.
TEST(Lstm, MatchesReferenceCell) {
  const std::size_t n = 4, in = 3, h = 2;
  Tensor x = random_tensor({n, in}, rng()), w = random_tensor({in, 4 * h}, rng()), u = random_tensor({h, 4 * h}, rng()),
         b = random_tensor({4 * h}, rng());
  for (bool reverse : {false, true}) {
    Tape tape;
    const Tensor& out =
        tape.value(ops::lstm(tape.constant(x), tape.constant(w), tape.constant(u), tape.constant(b), reverse));
    std::vector<double> hs(h, 0), cs(h, 0);
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t t = reverse ? n - 1 - s : s;
      std::vector<double> z(4 * h);
      for (std::size_t q = 0; q < 4 * h; ++q) {
        z[q] = b[q];
        for (std::size_t a = 0; a < in; ++a) z[q] += x.at(t, a) * w.at(a, q);
        for (std::size_t a = 0; a < h; ++a) z[q] += hs[a] * u.at(a, q);
      }
      for (std::size_t j = 0; j < h; ++j) {
        const double ig = sigmoid(z[j]), fg = sigmoid(z[h + j]), cg = std::tanh(z[2 * h + j]),
                     og = sigmoid(z[3 * h + j]);
        cs[j] = fg * cs[j] + ig * cg;
        hs[j] = og * std::tanh(cs[j]);
        EXPECT_NEAR(out.at(t, j), hs[j], 1e-14) << "reverse=" << reverse;
      }
    }
  }
}

TEST(Lstm, ReverseDirectionLastRowSeesOnlyItself) {
  Tensor x = random_tensor({3, 2}, rng()), w = random_tensor({2, 4}, rng()), u = random_tensor({1, 4}, rng()),
         b = random_tensor({4}, rng());
  Tape t1, t2;
  const Tensor& full = t1.value(ops::lstm(t1.constant(x), t1.constant(w), t1.constant(u), t1.constant(b), true));
  Tensor last({1, 2});
  last[0] = x.at(2, 0), last[1] = x.at(2, 1);
  const Tensor& single = t2.value(ops::lstm(t2.constant(last), t2.constant(w), t2.constant(u), t2.constant(b), true));
  EXPECT_DOUBLE_EQ(full.at(2, 0), single[0]);
}

TEST(DependencyTable, UndirectedWithNullElsewhere) {
  Tensor f({3, 2}, std::vector<Real>{1, 1, 2, 2, 3, 3});
  Tensor phi({2}, std::vector<Real>{-1, -1});
  Tape tape;
  const Tensor& d = tape.value(ops::dependency_table(tape.constant(f), tape.constant(phi), {{0, 2, 1}, {1, 1, 2}}, 3));
  EXPECT_EQ(d.at(0, 2, 0), 2);
  EXPECT_EQ(d.at(2, 0, 1), 2);
  EXPECT_EQ(d.at(1, 1, 0), 3);
  EXPECT_EQ(d.at(0, 1, 0), -1);
  EXPECT_EQ(d.at(2, 2, 1), -1);
}

TEST(DependencyTable, NoEdgesIsAllNull) {
  Tensor f({2, 3}), phi = random_tensor({3}, rng());
  Tape tape;
  const Tensor& d = tape.value(ops::dependency_table(tape.constant(f), tape.constant(phi), {}, 4));
  for (std::size_t c = 0; c < 16; ++c)
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(d[c * 3 + k], phi[k]);
}

TEST(DependencyTable, OutOfRangeEdgeThrows) {
  Tape tape;
  EXPECT_THROW(ops::dependency_table(tape.constant(Tensor({2, 1})), tape.constant(Tensor({1})), {{0, 3, 0}}, 3),
               ContractError);
}

TEST(PositionTable, OffsetIndexing) {
  // rows cover offsets -2..2; row r holds value r
  Tensor f({5, 1}, std::vector<Real>{0, 1, 2, 3, 4});
  Tape tape;
  const Tensor& p = tape.value(ops::position_table(tape.constant(f), 3));
  for (long i = 0; i < 3; ++i)
    for (long j = 0; j < 3; ++j) EXPECT_EQ(p.at(i, j, 0), static_cast<Real>(i - j + 2));
}

TEST(PositionTable, ClampsBeyondRange) {
  Tensor f({3, 1}, std::vector<Real>{10, 20, 30});  // offsets -1..1
  Tape tape;
  const Tensor& p = tape.value(ops::position_table(tape.constant(f), 4));
  EXPECT_EQ(p.at(3, 0, 0), 30);
  EXPECT_EQ(p.at(0, 3, 0), 10);
}

TEST(BatchNorm, TrainModeStandardizesEachChannel) {
  Tensor x = random_tensor({3, 3, 2}, rng(), -5, 5);
  Tensor gamma({2}, Real{1}), beta({2});
  Tape tape;
  ops::BatchNormStats stats;
  const Tensor& y = tape.value(ops::batch_norm_train(tape.constant(x), tape.constant(gamma), tape.constant(beta), &stats));
  for (std::size_t k = 0; k < 2; ++k) {
    double m = 0, v = 0, mx = 0;
    for (std::size_t c = 0; c < 9; ++c) m += y[c * 2 + k], mx += x[c * 2 + k];
    m /= 9, mx /= 9;
    for (std::size_t c = 0; c < 9; ++c) v += (y[c * 2 + k] - m) * (y[c * 2 + k] - m);
    v /= 9;
    EXPECT_NEAR(m, 0, 1e-12);
    EXPECT_NEAR(v, 1, 1e-3);  // eps shrinks it slightly
    EXPECT_NEAR(stats.mean[k], mx, 1e-12);
  }
}

TEST(BatchNorm, InferUsesRunningStatistics) {
  Tensor x({1, 1, 1}, Real{3}), gamma({1}, Real{2}), beta({1}, Real{1});
  Tensor mean({1}, Real{1}), var({1}, Real{4});
  Tape tape;
  const Real y = tape.value(ops::batch_norm_infer(tape.constant(x), tape.constant(gamma), tape.constant(beta), mean, var))[0];
  EXPECT_NEAR(y, 2 * (3 - 1) / std::sqrt(4 + ops::kBatchNormEps) + 1, 1e-15);
}

TEST(Softmax, RowsSumToOneAndStableForLargeInputs) {
  Tensor x({1, 2, 3}, std::vector<Real>{1000, 1001, 1002, -5, 0, 5});
  Tape tape;
  const Tensor& p = tape.value(ops::softmax_last(tape.constant(x)));
  for (std::size_t c = 0; c < 2; ++c) {
    double s = 0;
    for (std::size_t k = 0; k < 3; ++k) {
      EXPECT_TRUE(std::isfinite(p[c * 3 + k]));
      s += p[c * 3 + k];
    }
    EXPECT_NEAR(s, 1, 1e-15);
  }
  EXPECT_NEAR(p[2], 1 / (1 + std::exp(-1.0) + std::exp(-2.0)), 1e-15);
}

TEST(CrossEntropy, UniformQGivesNLogZ) {
  for (std::size_t n : {1u, 5u, 20u}) {
    const std::size_t z = 22;
    Tensor q({n, n, z}, Real{1} / static_cast<Real>(z));
    Tensor y({n, n, z});
    for (std::size_t c = 0; c < n * n; ++c) y[c * z + c % z] = 1;
    Tape tape;
    const double loss = tape.value(ops::table_cross_entropy(tape.constant(q), y))[0];
    EXPECT_NEAR(loss, static_cast<double>(n) * std::log(22.0), 1e-9);
  }
}

TEST(CrossEntropy, ZeroProbabilityIsClampedNotInfinite) {
  Tensor q({1, 1, 2}, std::vector<Real>{1, 0}), y({1, 1, 2}, std::vector<Real>{0, 1});
  Tape tape;
  Var qv = tape.variable(q);
  Var loss = ops::table_cross_entropy(qv, y);
  EXPECT_NEAR(tape.value(loss)[0], -std::log(1e-12), 1e-9);
  tape.backward(loss);
  for (Real g : tape.grad(qv)->values()) EXPECT_TRUE(std::isfinite(g));
}

TEST(Dropout, InferIsIdentityAndTrainScalesSurvivors) {
  Tensor x({50}, Real{1});
  std::mt19937_64 r(3);
  Tape tape;
  Var in = tape.constant(x);
  EXPECT_EQ(ops::dropout(in, 0.5, ops::Mode::infer, r).id, in.id);
  const Tensor& y = tape.value(ops::dropout(in, 0.5, ops::Mode::train, r));
  std::size_t zeros = 0;
  for (Real v : y.values()) {
    EXPECT_TRUE(v == 0 || v == 2);
    zeros += v == 0;
  }
  EXPECT_GT(zeros, 0u);
  EXPECT_LT(zeros, 50u);
  EXPECT_THROW(ops::dropout(in, 1.0, ops::Mode::train, r), ContractError);
}

TEST(MaxRows, TiesGoToFirstRow) {
  Tape tape;
  Var x = tape.variable(Tensor({3, 1}, std::vector<Real>{2, 2, 1}));
  tape.backward(ops::sum(ops::max_rows(x)));
  EXPECT_EQ((*tape.grad(x))[0], 1);
  EXPECT_EQ((*tape.grad(x))[1], 0);
}

TEST(GatherRows, GradientTouchesOnlyGatheredRows) {
  Tape tape;
  Var t = tape.variable(Tensor({4, 2}, Real{1}));
  tape.backward(ops::sum(ops::gather_rows(t, {1, 1, 3})));
  const Tensor& g = *tape.grad(t);
  EXPECT_EQ(g.at(0, 0), 0);
  EXPECT_EQ(g.at(1, 0), 2);
  EXPECT_EQ(g.at(2, 1), 0);
  EXPECT_EQ(g.at(3, 1), 1);
  EXPECT_THROW(ops::gather_rows(t, {4}), ContractError);
}
