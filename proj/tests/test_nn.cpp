#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "slotalign/optim.hpp"
#include "slotalign/transformer.hpp"

using namespace slotalign;
using namespace slotalign::nn;

namespace {

using Build = std::function<Var(Tape<double>&, ParameterSet<double>&)>;

void randomize(ParameterSet<double>& ps, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  for (auto& p : ps)
    for (auto& v : p.value.flat()) v = scale * rng.normal();
}

double eval(const Build& f, ParameterSet<double>& ps) {
  Tape<double> t(false);
  return t.value(f(t, ps))(0, 0);
}

// Max relative error between the tape gradient and central differences.
double grad_check(const Build& f, ParameterSet<double>& ps, double h = 1e-6) {
  ps.zero_grad();
  {
    Tape<double> t;
    t.backward(f(t, ps));
  }
  double worst = 0.0;
  for (auto& p : ps) {
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      double& x = p.value.flat()[i];
      const double x0 = x;
      x = x0 + h;
      const double up = eval(f, ps);
      x = x0 - h;
      const double dn = eval(f, ps);
      x = x0;
      const double num = (up - dn) / (2 * h);
      const double ana = p.grad.flat()[i];
      worst = std::max(worst, std::abs(num - ana) / std::max(1e-3, std::abs(num) + std::abs(ana)));
    }
  }
  return worst;
}

// Scalar probe: sum_i c_i * (Y w)_i with fixed, non-uniform weights.
Var probe(Tape<double>& t, Var y) {
  const auto& Y = t.value(y);
  Matrix<double> w(Y.cols(), 1);
  for (std::size_t i = 0; i < w.rows(); ++i) w(i, 0) = std::sin(1.0 + static_cast<double>(i));
  Var s = linear(t, y, t.constant(w), t.constant(Matrix<double>(1, 1)));
  Matrix<double> c(Y.rows(), 1);
  for (std::size_t i = 0; i < Y.rows(); ++i) c(i, 0) = std::cos(0.5 * static_cast<double>(i));
  double acc = 0;
  for (std::size_t i = 0; i < Y.rows(); ++i) acc += t.value(s)(i, 0) * c(i, 0);
  return t.push(Matrix<double>(1, 1, acc), [s, c](Tape<double>& tp, Var self) {
    const double g = tp.grad(self)(0, 0);
    auto& ds = tp.grad(s);
    for (std::size_t i = 0; i < c.rows(); ++i) ds(i, 0) += g * c(i, 0);
  });
}

constexpr double kTol = 1e-6;

}  // namespace

TEST(NnGrad, Linear) {
  ParameterSet<double> ps;
  ps.add("x", 4, 3);
  ps.add("w", 3, 5);
  ps.add("b", 1, 5);
  randomize(ps, 1);
  const Build f = [](Tape<double>& t, ParameterSet<double>& p) {
    return probe(t, linear(t, t.param(p.at("x")), t.param(p.at("w")), t.param(p.at("b"))));
  };
  EXPECT_LT(grad_check(f, ps), kTol);
}

TEST(NnGrad, LayerNormAndGelu) {
  ParameterSet<double> ps;
  ps.add("x", 3, 6);
  ps.add("g", 1, 6);
  ps.add("b", 1, 6);
  randomize(ps, 2);
  const Build f = [](Tape<double>& t, ParameterSet<double>& p) {
    Var y = layer_norm(t, t.param(p.at("x")), t.param(p.at("g")), t.param(p.at("b")));
    return probe(t, gelu(t, y));
  };
  EXPECT_LT(grad_check(f, ps), kTol);
}

TEST(NnGrad, EmbeddingStackSlice) {
  ParameterSet<double> ps;
  ps.add("table", 5, 4);
  ps.add("a", 2, 4);
  ps.add("pos", 8, 4);
  randomize(ps, 3);
  const Build f = [](Tape<double>& t, ParameterSet<double>& p) {
    Var e = embedding(t, t.param(p.at("table")), {1, 3, 1});
    Var s = vstack(t, t.param(p.at("a")), e);
    s = add(t, s, leading_rows(t, t.param(p.at("pos")), 5));
    return probe(t, slice_rows(t, s, 1, 3));
  };
  EXPECT_LT(grad_check(f, ps), kTol);
}

TEST(NnGrad, AttentionCausalWithSlopes) {
  for (bool causal : {true, false}) {
    ParameterSet<double> ps;
    ps.add("qkv", 5, 12);
    randomize(ps, 4);
    const Build f = [causal](Tape<double>& t, ParameterSet<double>& p) {
      return probe(t, attention(t, t.param(p.at("qkv")), 2, causal, std::vector<double>{0.7, 0.0}));
    };
    EXPECT_LT(grad_check(f, ps), kTol) << "causal=" << causal;
  }
}

TEST(NnGrad, CrossEntropyAndLogSoftmax) {
  ParameterSet<double> ps;
  ps.add("z", 4, 6);
  randomize(ps, 5);
  const Build ce = [](Tape<double>& t, ParameterSet<double>& p) {
    return masked_cross_entropy(t, t.param(p.at("z")), {2, -1, 5, 0});
  };
  EXPECT_LT(grad_check(ce, ps), kTol);
  const Build ls = [](Tape<double>& t, ParameterSet<double>& p) {
    return probe(t, log_softmax(t, t.param(p.at("z"))));
  };
  EXPECT_LT(grad_check(ls, ps), kTol);
}

TEST(NnGrad, TransformerBlock) {
  ParameterSet<double> ps;
  Rng rng(6);
  ps.add("x", 6, 8);
  const auto b = add_block(ps, "blk", BlockShape{8, 2, 2}, rng);
  randomize(ps, 7, 0.5);
  const Build f = [&b](Tape<double>& t, ParameterSet<double>& p) {
    return probe(t, block_forward(t, t.param(p.at("x")), b, 2, true, std::vector<double>{1.0, 0.0}));
  };
  EXPECT_LT(grad_check(f, ps), 1e-5);
}

TEST(Nn, CrossEntropyValueAndIgnoredRows) {
  Tape<double> t;
  Matrix<double> z(2, 3);
  z(0, 0) = 1.0;
  Var logits = t.constant(z);
  Var loss = masked_cross_entropy(t, logits, {0, -1});
  const double want = -(1.0 - std::log(std::exp(1.0) + 2.0));
  EXPECT_NEAR(t.value(loss)(0, 0), want, 1e-12);
  t.backward(loss);
  for (double g : t.grad(logits).row(1)) EXPECT_EQ(g, 0.0);
  Tape<double> t2;
  try {
    masked_cross_entropy(t2, t2.constant(z), {-1, -1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kEmptyLoss);
  }
}

TEST(Nn, CausalAttentionIgnoresTheFuture) {
  Rng rng(9);
  Matrix<float> qkv(7, 24);
  for (auto& v : qkv.flat()) v = static_cast<float>(rng.normal());
  auto run = [](const Matrix<float>& m) {
    Tape<float> t(false);
    return t.value(attention(t, t.constant(m), 4, true, std::vector<float>{1, 0.5f, 0, 0}));
  };
  const auto base = run(qkv);
  for (std::size_t j = 0; j < 7; ++j) {
    auto pert = qkv;
    for (std::size_t c = 0; c < 24; ++c) pert(j, c) += 3.0f;
    const auto out = run(pert);
    for (std::size_t i = 0; i < j; ++i)
      for (std::size_t c = 0; c < 8; ++c) ASSERT_EQ(out(i, c), base(i, c)) << i << " " << j;
  }
}

TEST(Optim, WarmupSchedule) {
  const WarmupSchedule s{3e-4, 1000};
  EXPECT_DOUBLE_EQ(s.lr(0), 0.0);
  EXPECT_DOUBLE_EQ(s.lr(500), 1.5e-4);
  EXPECT_DOUBLE_EQ(s.lr(1000), 3e-4);
  EXPECT_DOUBLE_EQ(s.lr(5000), 3e-4);
  EXPECT_DOUBLE_EQ((WarmupSchedule{1e-3, 0}).lr(0), 1e-3);
}

TEST(Optim, AdamFirstStepMovesByLr) {
  ParameterSet<double> ps;
  auto& p = ps.add("w", 1, 2);
  p.value(0, 0) = 1.0;
  p.grad(0, 0) = 0.5;
  p.grad(0, 1) = -2.0;
  Adam<double> opt(ps, {0.1, 0});
  opt.step();
  // bias-corrected first step is lr * sign(g)
  EXPECT_NEAR(p.value(0, 0), 0.9, 1e-6);
  EXPECT_NEAR(p.value(0, 1), 0.1, 1e-6);
}

TEST(Optim, AdamRejectsNonFiniteGradients) {
  ParameterSet<double> ps;
  auto& p = ps.add("w", 1, 1);
  p.grad(0, 0) = std::nan("");
  Adam<double> opt(ps, {0.1, 0});
  EXPECT_THROW(opt.step(), Error);
}

TEST(Optim, MinimisesQuadratic) {
  ParameterSet<double> ps;
  auto& p = ps.add("w", 1, 3);
  p.value.fill(4.0);
  Adam<double> opt(ps, {0.05, 10});
  for (int i = 0; i < 2000; ++i) {
    for (std::size_t k = 0; k < 3; ++k) p.grad(0, k) = 2.0 * (p.value(0, k) - static_cast<double>(k));
    opt.step();
  }
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(p.value(0, k), static_cast<double>(k), 1e-2);
}
