#include <gtest/gtest.h>

#include <cmath>

#include "bimamba/errors.hpp"
#include "bimamba/gradcheck.hpp"
#include "bimamba/ops.hpp"
#include "bimamba/tensor.hpp"

using namespace bimamba;

namespace {

Tensor iota(Shape shape, double start = 0.0, double step = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = start + step * static_cast<double>(i);
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace

TEST(Tensor, ConstructionChecksSize) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
  Tensor t = iota({2, 3});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_DOUBLE_EQ(t.at({1, 2}), 5.0);
  EXPECT_THROW(t.at({2, 0}), IndexError);
}

TEST(Autograd, ChainRuleThroughSharedNode) {
  // f(x) = sum(x * x + x), df/dx = 2x + 1
  Tensor x = iota({4}, -1.0);
  x.set_requires_grad(true);
  Tensor y = ops::add(ops::mul(x, x), x);
  backward(ops::sum(y));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2.0 * x.data()[i] + 1.0);
}

TEST(Autograd, GradientsAccumulateUntilZeroed) {
  Tensor x = Tensor::full({3}, 2.0, true);
  backward(ops::sum(ops::scale(x, 3.0)));
  backward(ops::sum(ops::scale(x, 3.0)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
  x.zero_grad();
  EXPECT_FALSE(x.has_grad() && x.grad()[0] != 0.0);
}

TEST(Autograd, NonScalarLossIsAContractError) {
  Tensor x = Tensor::ones({3}, true);
  EXPECT_THROW(backward(ops::scale(x, 2.0)), ContractError);
}

TEST(Autograd, RetainAllowsSecondBackward) {
  Tensor x = Tensor::full({2}, 1.5, true);
  Tensor loss = ops::sum(ops::mul(x, x));
  backward(loss, GraphMode::kRetain);
  backward(loss, GraphMode::kRetain);
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Autograd, NoGradGuardRecordsNothing) {
  Tensor x = Tensor::ones({2}, true);
  {
    NoGradGuard g;
    EXPECT_FALSE(grad_enabled());
    Tensor y = ops::scale(x, 2.0);
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_TRUE(grad_enabled());
}

TEST(Autograd, TapeOrdersParentsFirst) {
  Tensor a = Tensor::ones({2}, true);
  Tensor b = ops::exp(a);
  Tensor c = ops::mul(b, a);
  Tensor d = ops::sum(c);
  const auto tape = Tape::record(d);
  const auto& nodes = tape.nodes();
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    for (const auto& p : nodes[i]->parents) {
      const auto it = std::find(nodes.begin(), nodes.end(), p);
      ASSERT_NE(it, nodes.end());
      EXPECT_LT(static_cast<std::size_t>(it - nodes.begin()), i);
    }
  }
}

TEST(Autograd, NonFiniteFromFiniteInputsThrows) {
  Tensor x = Tensor::full({1}, 800.0);
  EXPECT_THROW(ops::exp(x), NumericError);
}

TEST(Ops, BroadcastAddMatchesLoop) {
  Tensor a = iota({2, 3, 4});
  Tensor b = iota({3, 1}, 10.0, 10.0);
  Tensor c = ops::add(a, b);
  ASSERT_EQ(c.shape(), (Shape{2, 3, 4}));
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 4; ++k) EXPECT_DOUBLE_EQ(c.at({i, j, k}), a.at({i, j, k}) + b.at({j, 0}));
  EXPECT_THROW(ops::add(a, iota({5})), DimensionError);
}

TEST(Ops, MatmulMatchesNaiveLoop) {
  Rng rng(3);
  Tensor a = Tensor::randn({2, 3, 5}, rng);
  Tensor b = Tensor::randn({5, 4}, rng);
  Tensor c = ops::matmul(a, b);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 4; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < 5; ++k) acc += a.at({n, i, k}) * b.at({k, j});
        EXPECT_NEAR(c.at({n, i, j}), acc, 1e-12);
      }
}

TEST(Ops, Conv1dMatchesHandLoop) {
  Rng rng(4);
  const std::size_t B = 2, C = 3, L = 13, O = 4, K = 5, stride = 2, pad = 2;
  Tensor x = Tensor::randn({B, C, L}, rng);
  Tensor w = Tensor::randn({O, C, K}, rng);
  Tensor bias = Tensor::randn({O}, rng);
  Tensor y = ops::conv1d(x, w, bias, stride, pad);
  const std::size_t Lo = (L + 2 * pad - K) / stride + 1;
  ASSERT_EQ(y.shape(), (Shape{B, O, Lo}));
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t t = 0; t < Lo; ++t) {
        double acc = bias.at({o});
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t k = 0; k < K; ++k) {
            const long pos = static_cast<long>(t * stride + k) - static_cast<long>(pad);
            if (pos >= 0 && pos < static_cast<long>(L)) acc += w.at({o, c, k}) * x.at({n, c, static_cast<std::size_t>(pos)});
          }
        EXPECT_NEAR(y.at({n, o, t}), acc, 1e-12);
      }
}

TEST(Ops, Conv1dShapeErrorsNameTheAxis) {
  Tensor x = Tensor::zeros({1, 3, 10});
  Tensor w = Tensor::zeros({2, 4, 3});
  try {
    ops::conv1d(x, w, {}, 1, 0);
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("channel"), std::string::npos);
  }
}

TEST(Ops, DepthwiseCausalConvIsCausal) {
  Rng rng(5);
  Tensor x = Tensor::randn({1, 8, 2}, rng);
  Tensor w = Tensor::randn({2, 4}, rng);
  Tensor b = Tensor::zeros({2});
  Tensor y0 = ops::depthwise_causal_conv(x, w, b);
  Tensor x2 = x.detach();
  x2.mutable_data()[7 * 2 + 0] += 5.0;  // perturb the last step only
  Tensor y1 = ops::depthwise_causal_conv(x2, w, b);
  for (std::size_t t = 0; t < 7; ++t) EXPECT_DOUBLE_EQ(y0.at({0, t, 0}), y1.at({0, t, 0}));
}

TEST(Ops, ReverseRespectsLengths) {
  Tensor x = iota({2, 4, 1});
  const std::vector<std::size_t> lengths = {4, 2};
  Tensor y = ops::reverse(x, 1, lengths);
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), (std::vector<double>{3, 2, 1, 0, 5, 4, 6, 7}));
}

TEST(Ops, DropoutIsIdentityInEval) {
  Rng rng(1);
  Tensor x = iota({10});
  Tensor y = ops::dropout(x, 0.5, false, rng);
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()),
            std::vector<double>(x.data().begin(), x.data().end()));
  Tensor z = ops::dropout(x, 0.5, true, rng);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_TRUE(z.data()[i] == 0.0 || z.data()[i] == 2.0 * x.data()[i]);
}

TEST(Ops, SoftmaxCrossEntropyOracle) {
  Tensor logits({2, 3}, {1.0, 2.0, 3.0, 0.0, 0.0, 0.0});
  const std::vector<int> labels = {2, 1};
  const double l0 = -std::log(std::exp(3.0) / (std::exp(1.0) + std::exp(2.0) + std::exp(3.0)));
  const double l1 = std::log(3.0);
  EXPECT_NEAR(ops::softmax_cross_entropy(logits, labels).item(), (l0 + l1) / 2.0, 1e-14);
  const std::vector<int> bad = {0, 3};
  EXPECT_THROW(ops::softmax_cross_entropy(logits, bad), IndexError);
}

TEST(Ops, StableActivationsAtExtremes) {
  Tensor x({2}, {-700.0, 700.0});
  Tensor s = ops::sigmoid(x);
  EXPECT_NEAR(s.data()[0], 0.0, 1e-300);
  EXPECT_DOUBLE_EQ(s.data()[1], 1.0);
  Tensor sp = ops::softplus(x);
  EXPECT_DOUBLE_EQ(sp.data()[1], 700.0);
}

TEST(Ops, MeanOfEmptyAxisIsADomainError) {
  Tensor x = Tensor::zeros({2, 0});
  EXPECT_THROW(ops::mean(x, 1), DomainError);
}

TEST(GradCheck, EveryPrimitiveWithinTolerance) {
  for (const auto& r : run_gradcheck_suite(11)) {
    EXPECT_TRUE(r.passed()) << r.name << " error " << r.error;
  }
}

TEST(GradCheck, RejectsStepOutsideRange) {
  Tensor x = Tensor::ones({2});
  EXPECT_THROW(grad_check([](const Tensor& t) { return ops::sum(t); }, x, 1e-2), ContractError);
}

TEST(GradCheck, DetectsAWrongGradient) {
  // An op whose recorded backward is off by a factor of two.
  auto bad = [](const Tensor& x) {
    std::vector<double> v(x.data().begin(), x.data().end());
    for (auto& e : v) e = e * e;
    return make_result(x.shape(), v, "bad_square", {x}, [](detail::Node& self) {
      auto& p = *self.parents[0];
      auto& g = p.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * 4.0 * p.data[i];
    });
  };
  EXPECT_GT(grad_check(bad, Tensor::full({3}, 1.3)), 0.1);
}
