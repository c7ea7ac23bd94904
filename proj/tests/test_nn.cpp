#include <gtest/gtest.h>

#include "mtaim/nn.hpp"

#include <cmath>
#include <functional>
#include <random>

using namespace mtaim::nn;

namespace {

Mat random_mat(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double s = 1.0) {
  std::normal_distribution<double> n(0.0, s);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// Builds a scalar loss from the parameters; compares analytic and central-difference gradients.
void check_gradients(ParamSet& ps, const std::function<Var(Tape&)>& build, double tol = 1e-6) {
  ps.zero_grad();
  {
    Tape t(&ps);
    t.backward(build(t));
  }
  constexpr double h = 1e-6;
  for (auto& p : ps) {
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      const double orig = p.value.data()[i];
      p.value.data()[i] = orig + h;
      double up;
      {
        Tape t(&ps);
        up = build(t).scalar();
      }
      p.value.data()[i] = orig - h;
      double down;
      {
        Tape t(&ps);
        down = build(t).scalar();
      }
      p.value.data()[i] = orig;
      const double numeric = (up - down) / (2 * h);
      const double analytic = p.grad.data()[i];
      EXPECT_NEAR(analytic, numeric, tol * std::max(1.0, std::abs(numeric))) << p.name << "[" << i << "]";
    }
  }
}

}  // namespace

TEST(Autodiff, ElementwiseAndAlgebra) {
  std::mt19937_64 rng(1);
  ParamSet ps;
  const int a = ps.add("a", random_mat(3, 4, rng));
  const int b = ps.add("b", random_mat(4, 2, rng));
  const int c = ps.add("c", random_mat(3, 2, rng));
  const int bias = ps.add("bias", random_mat(1, 2, rng));
  check_gradients(ps, [&](Tape& t) {
    Var m = matmul(t.param(a), t.param(b));
    Var x = add_bias(add(m, mul(t.param(c), tanh(m))), t.param(bias));
    Var y = sub(sigmoid(x), scale(exp(scale(x, 0.1)), 0.5));
    return add(mean(square(y)), sum(softplus(x)));
  });
}

TEST(Autodiff, ReluAwayFromKink) {
  ParamSet ps;
  Mat v(2, 3);
  v << 0.5, -0.7, 1.2, -0.3, 0.9, -1.5;
  const int a = ps.add("a", v);
  check_gradients(ps, [&](Tape& t) { return sum(square(relu(t.param(a)))); });
}

TEST(Autodiff, Losses) {
  std::mt19937_64 rng(2);
  ParamSet ps;
  const int z = ps.add("z", random_mat(5, 4, rng));
  const int mu = ps.add("mu", random_mat(5, 3, rng));
  const int lv = ps.add("lv", random_mat(5, 3, rng, 0.3));
  const Mat target = random_mat(5, 4, rng);
  check_gradients(ps, [&](Tape& t) {
    Var ce = cross_entropy(t.param(z), {0, 3, 1, 1, 2});
    return add(add(ce, mse(t.param(z), target)), kl_standard_normal(t.param(mu), t.param(lv)));
  });
}

TEST(Autodiff, ShapeOps) {
  std::mt19937_64 rng(3);
  ParamSet ps;
  const int a = ps.add("a", random_mat(6, 4, rng));  // 2 blocks of 3
  const int w = ps.add("w", random_mat(4, 2, rng));
  check_gradients(ps, [&](Tape& t) {
    Var x = t.param(a);
    Var f = flatten_blocks(x, 3);                    // 2 x 12
    Var u = unflatten_blocks(tanh(f), 3);            // 6 x 4
    Var pooled = avg_pool_rows(u, 3);                // 2 x 4
    Var rep = repeat_blocks(pooled, 3);              // 6 x 4
    Var s = select_rows(add(u, rep), {5, 0, 0, 2});  // 4 x 4
    Var cc = concat_cols({slice_cols(s, 1, 2), slice_cols(s, 0, 1)});
    Var mb = mean_blocks(matmul(x, t.param(w)), 3);
    Var col = im2col_blocks(x, 3, 3);
    return add(add(sum(square(cc)), sum(square(mb))), sum(tanh(col)));
  });
}

TEST(Autodiff, LayerNormAndAttention) {
  std::mt19937_64 rng(4);
  ParamSet ps;
  const int x = ps.add("x", random_mat(6, 4, rng));
  const int g = ps.add("g", random_mat(1, 4, rng));
  const int b = ps.add("b", random_mat(1, 4, rng));
  const int wq = ps.add("wq", random_mat(4, 4, rng, 0.5));
  const int wk = ps.add("wk", random_mat(4, 4, rng, 0.5));
  const int wv = ps.add("wv", random_mat(4, 3, rng, 0.5));
  const Mat target = random_mat(6, 3, rng);
  check_gradients(ps, [&](Tape& t) {
    Var h = layer_norm(t.param(x), t.param(g), t.param(b));
    Var att = attention_blocks(matmul(h, t.param(wq)), matmul(h, t.param(wk)), matmul(h, t.param(wv)), 3);
    return mse(att, target);
  });
}

TEST(Autodiff, Lstm) {
  std::mt19937_64 rng(5);
  ParamSet ps;
  const int x = ps.add("x", random_mat(8, 3, rng));  // 2 sequences of 4 steps
  LstmLayer l1(ps, "l1", 3, 5, rng);
  LstmLayer l2(ps, "l2", 5, 2, rng);
  const Mat target = random_mat(8, 2, rng);
  check_gradients(ps, [&](Tape& t) { return mse(l2(t, l1(t, t.param(x), 4), 4), target); });
}

TEST(Autodiff, ModulesEndToEnd) {
  std::mt19937_64 rng(6);
  ParamSet ps;
  const int x = ps.add("x", random_mat(10, 3, rng));
  Conv1d conv(ps, "conv", 3, 4, 3, rng);
  AttentionEncoderLayer enc(ps, "enc", 4, rng);
  Linear head(ps, "head", 4, 3, rng);
  check_gradients(ps, [&](Tape& t) {
    Var h = enc(t, relu(conv(t, t.param(x), 5)), 5);
    return cross_entropy(head(t, mean_blocks(h, 5)), {2, 0});
  }, 1e-5);
}

TEST(Autodiff, SharedParameterAccumulates) {
  ParamSet ps;
  const int a = ps.add("a", Mat::Constant(1, 1, 3.0));
  Tape t(&ps);
  Var p = t.param(a);
  t.backward(add(mul(p, p), scale(p, 2.0)));  // d/da (a^2 + 2a) = 2a + 2
  EXPECT_DOUBLE_EQ(ps[a].grad(0, 0), 8.0);
}

TEST(Autodiff, ConstantsCarryNoGradient) {
  ParamSet ps;
  const int a = ps.add("a", Mat::Ones(2, 2));
  Tape t(&ps);
  Var c = t.constant(Mat::Ones(2, 2));
  t.backward(sum(mul(c, t.param(a))));
  EXPECT_TRUE(ps[a].grad.isApprox(Mat::Ones(2, 2)));
  EXPECT_EQ(t.grad(c.id).size(), 0);
}

TEST(Adam, ConvergesOnQuadratic) {
  ParamSet ps;
  const int a = ps.add("a", Mat::Constant(1, 3, 5.0));
  Adam opt;
  opt.lr = 0.1;
  for (int i = 0; i < 500; ++i) {
    ps.zero_grad();
    Tape t(&ps);
    t.backward(sum(square(t.param(a))));
    opt.step(ps);
  }
  EXPECT_LT(ps[a].value.cwiseAbs().maxCoeff(), 1e-2);
}

TEST(ParamSetJson, RoundTripsExactly) {
  std::mt19937_64 rng(7);
  ParamSet ps;
  ps.add("w", random_mat(3, 2, rng));
  ps.add("b", random_mat(1, 2, rng));
  const auto j = nlohmann::json::parse(ps.to_json().dump());
  ParamSet other;
  other.add("w", Mat::Zero(3, 2));
  other.add("b", Mat::Zero(1, 2));
  other.load_json(j);
  EXPECT_EQ(other[0].value, ps[0].value);
  EXPECT_EQ(other[1].value, ps[1].value);
  ParamSet wrong;
  wrong.add("w", Mat::Zero(2, 2));
  EXPECT_ANY_THROW(wrong.load_json(j));
}

TEST(TemporalBasis, ReproducesItsOwnSpan) {
  TemporalBasis basis(300, 24);
  std::mt19937_64 rng(8);
  const Mat coefs = random_mat(6, 24, rng);
  const Mat series = basis.reconstruct(coefs);
  EXPECT_LT((basis.project(series) - coefs).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(TemporalBasis, MovementBumpFitsClosely) {
  // raised-cosine bump over the middle 70% of the window
  TemporalBasis basis(300, 24);
  Mat s = Mat::Zero(1, 300);
  for (int t = 45; t <= 255; ++t) s(0, t) = 0.5 * (1 - std::cos(2 * M_PI * (t - 45) / 210.0));
  EXPECT_LT((basis.reconstruct(basis.project(s)) - s).cwiseAbs().maxCoeff(), 1e-2);
}

TEST(PatchFactor, TokenBudget) {
  EXPECT_EQ(patch_factor(300, 30), 10);
  EXPECT_EQ(patch_factor(16, 30), 1);
  EXPECT_EQ(patch_factor(64, 30), 4);
}
