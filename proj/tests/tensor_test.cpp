#include <gtest/gtest.h>

#include "drop/autograd.hpp"
#include "drop/rng.hpp"
#include "drop/tensor.hpp"

using drop::Rng;
using drop::Tensor;
using drop::Var;

TEST(Tensor, ShapeAndIndexing) {
  Tensor t({2, 3, 4, 5});
  EXPECT_EQ(t.ndim(), 4);
  EXPECT_EQ(t.numel(), 2 * 3 * 4 * 5);
  t.at(1, 2, 3, 4) = 7.5;
  EXPECT_DOUBLE_EQ(t.at(1, 2, 3, 4), 7.5);
  EXPECT_DOUBLE_EQ(t[t.numel() - 1], 7.5);
  Tensor f = Tensor::full({2, 2}, 3.0);
  EXPECT_DOUBLE_EQ(f.sum(), 12.0);
  EXPECT_DOUBLE_EQ(Tensor::scalar(-2.0)[0], -2.0);
  EXPECT_DOUBLE_EQ(Tensor::scalar(-2.0).max_abs(), 2.0);
}

TEST(Tensor, EqualityAndValidation) {
  Tensor a = Tensor::full({2, 2}, 1.0);
  Tensor b = Tensor::full({2, 2}, 1.0);
  EXPECT_TRUE(a == b);
  b.at(1, 1) += 1e-15;
  EXPECT_FALSE(a == b);
  EXPECT_THROW(Tensor({2, 0}), drop::ConfigError);
  EXPECT_THROW(Tensor({-1}), drop::ConfigError);
  Tensor c = Tensor::full({1}, std::numeric_limits<double>::quiet_NaN());
  EXPECT_FALSE(c.all_finite());
}

TEST(Rng, DeterminismAndSplitting) {
  Rng a(drop::split_seed(42, 1)), b(drop::split_seed(42, 1));
  EXPECT_EQ(a(), b());
  Rng c(drop::split_seed(42, 2));
  Rng d(drop::split_seed(43, 1));
  EXPECT_NE(a(), c());  // different tags decorrelate
  EXPECT_NE(b(), d());  // different seeds decorrelate

  Rng e(7);
  Tensor t1 = drop::randn({3, 4}, e);
  Rng f(7);
  Tensor t2 = drop::randn({3, 4}, f);
  EXPECT_TRUE(t1 == t2);
}

TEST(Rng, StateStringRoundTrip) {
  Rng g(123);
  for (int i = 0; i < 57; ++i) g();  // advance to a mid-stream state
  std::string s = drop::rng_to_string(g);
  Rng h = drop::rng_from_string(s);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(g(), h());
  EXPECT_EQ(drop::rng_to_string(g), drop::rng_to_string(h));
}

TEST(Autograd, AddScaleReluBackward) {
  Var x = Var::leaf(Tensor::full({3}, 2.0));
  Var y = Var::leaf(Tensor::full({3}, -1.0));
  // f = sum(relu(3*x + y)) = sum(relu(5)) = 15
  Var f = drop::sum_all(drop::relu(drop::add(drop::scale(x, 3.0), y)));
  drop::backward(f);
  EXPECT_DOUBLE_EQ(f.value()[0], 15.0);
  for (int i = 0; i < 3; ++i) {
    EXPECT_DOUBLE_EQ(x.grad()[i], 3.0);
    EXPECT_DOUBLE_EQ(y.grad()[i], 1.0);
  }

  // relu gate: negative pre-activation passes no gradient
  Var z = Var::leaf(Tensor::full({2}, -4.0));
  Var g = drop::sum_all(drop::relu(z));
  drop::backward(g);
  EXPECT_DOUBLE_EQ(z.grad()[0], 0.0);
}

TEST(Autograd, BroadcastAdd) {
  Tensor base({2, 3});
  for (int i = 0; i < 6; ++i) base[i] = i;
  Var a = Var::leaf(base);
  Var row = Var::leaf(Tensor::full({3}, 10.0));   // rank B-1: per-batch broadcast
  Var row1 = Var::leaf(Tensor::full({1, 3}, 1.0));  // leading dim 1 broadcast
  Var out = drop::sum_all(drop::add(drop::add(a, row), row1));
  drop::backward(out);
  EXPECT_DOUBLE_EQ(out.value()[0], 15.0 + 60.0 + 6.0);
  for (int i = 0; i < 3; ++i) {
    EXPECT_DOUBLE_EQ(row.grad()[i], 2.0);   // summed over batch of 2
    EXPECT_DOUBLE_EQ(row1.grad()[i], 2.0);
  }
  for (int i = 0; i < 6; ++i) EXPECT_DOUBLE_EQ(a.grad()[i], 1.0);
}

TEST(Autograd, DiamondGraphAccumulates) {
  Var x = Var::leaf(Tensor::full({1}, 3.0));
  Var left = drop::scale(x, 2.0);
  Var right = drop::scale(x, 5.0);
  Var f = drop::sum_all(drop::add(left, right));
  drop::backward(f);
  EXPECT_DOUBLE_EQ(f.value()[0], 21.0);
  EXPECT_DOUBLE_EQ(x.grad()[0], 7.0);
}

TEST(Autograd, ScalarCombination) {
  Var a = Var::leaf(Tensor::scalar(2.0));
  Var b = Var::leaf(Tensor::scalar(3.0));
  Var c = Var::leaf(Tensor::scalar(4.0));
  Var total = drop::add_scalars({a, b, c}, {1.0, 1.0, 0.4});
  drop::backward(total);
  EXPECT_NEAR(total.value()[0], 2.0 + 3.0 + 1.6, 1e-12);
  EXPECT_DOUBLE_EQ(a.grad()[0], 1.0);
  EXPECT_DOUBLE_EQ(c.grad()[0], 0.4);
}

TEST(Autograd, BackwardRequiresScalar) {
  Var x = Var::leaf(Tensor::full({2}, 1.0));
  EXPECT_THROW(drop::backward(x), drop::NumericalError);
}
