#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "context_tracker/gradcheck.hpp"
#include "context_tracker/nn.hpp"

using namespace context_tracker;
using DT = BasicTensor<double>;

namespace {

// Direct-loop convolution used as an oracle.
DT conv_oracle(const DT& x, const DT& k, const DT& b, std::size_t stride, std::size_t dil, std::size_t pad) {
  const std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t cout = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const std::size_t oh = (h + 2 * pad - dil * (kh - 1) - 1) / stride + 1;
  const std::size_t ow = (w + 2 * pad - dil * (kw - 1) - 1) / stride + 1;
  DT out({n, cout, oh, ow});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          double s = b[o];
          for (std::size_t c = 0; c < cin; ++c)
            for (std::size_t u = 0; u < kh; ++u)
              for (std::size_t v = 0; v < kw; ++v) {
                const long iy = static_cast<long>(y * stride + u * dil) - static_cast<long>(pad);
                const long ix = static_cast<long>(xx * stride + v * dil) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
                s += k.at(o, c, u, v) * x.at(i, c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
              }
          out.at(i, o, y, xx) = s;
        }
  return out;
}

DT randn(Shape s, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  DT t(std::move(s));
  for (double& v : t.data()) v = d(rng);
  return t;
}

}  // namespace

TEST(Conv2d, IdentityKernel) {
  const Tensor out = nn::conv2d(Tensor({1, 1, 1, 1}, {5.0f}), Tensor({1, 1, 1, 1}, {1.0f}), Tensor({1}), 1, 1, 0);
  EXPECT_EQ(out.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_FLOAT_EQ(out[0], 5.0f);
}

TEST(Conv2d, AllOnesKernelSums) {
  const Tensor x({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  const Tensor out = nn::conv2d(x, Tensor({1, 1, 3, 3}, 1.0f), Tensor({1}), 1, 1, 0);
  EXPECT_FLOAT_EQ(out[0], 45.0f);
}

TEST(Conv2d, DilationTwoSamplesAtSpacingTwo) {
  std::mt19937_64 rng(3);
  const DT x = randn({1, 1, 5, 5}, rng), k = randn({1, 1, 3, 3}, rng);
  const DT out = nn::conv2d(x, k, DT({1}), 1, 2, 0);
  ASSERT_EQ(out.shape(), (Shape{1, 1, 1, 1}));
  double expect = 0.0;
  for (std::size_t u = 0; u < 3; ++u)
    for (std::size_t v = 0; v < 3; ++v) expect += k.at(0, 0, u, v) * x.at(0, 0, 2 * u, 2 * v);
  EXPECT_NEAR(out[0], expect, 1e-12);
}

TEST(Conv2d, MatchesLoopOracle) {
  std::mt19937_64 rng(11);
  for (std::size_t stride : {1u, 2u})
    for (std::size_t dil : {1u, 3u})
      for (std::size_t pad : {0u, 1u}) {
        const DT x = randn({2, 3, 11, 10}, rng), k = randn({4, 3, 3, 3}, rng), b = randn({4}, rng);
        const DT got = nn::conv2d(x, k, b, stride, dil, pad);
        const DT want = conv_oracle(x, k, b, stride, dil, pad);
        ASSERT_EQ(got.shape(), want.shape());
        EXPECT_LT(nn::relative_error(got, want), 1e-12);
      }
}

TEST(Conv2d, ShapeErrorsNameTheDimension) {
  try {
    nn::conv2d(Tensor({1, 2, 5, 5}), Tensor({1, 3, 3, 3}), Tensor({1}), 1, 1, 0);
    FAIL();
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("Cin"), std::string::npos);
  }
  EXPECT_THROW(nn::conv2d(Tensor({1, 1, 2, 2}), Tensor({1, 1, 3, 3}), Tensor({1}), 1, 1, 0), ContractError);
  EXPECT_THROW(nn::conv2d(Tensor({1, 1, 5, 5}), Tensor({2, 1, 3, 3}), Tensor({1}), 1, 1, 0), ContractError);
}

TEST(Relu, ForwardAndBackward) {
  const Tensor y = nn::relu(Tensor({3}, {-1.0f, 0.0f, 2.0f}));
  EXPECT_EQ(y, Tensor({3}, std::vector<float>{0.0f, 0.0f, 2.0f}));
  const Tensor g = nn::relu_backward(Tensor({2}, {-1.0f, 2.0f}), Tensor({2}, 1.0f));
  EXPECT_EQ(g, Tensor({2}, std::vector<float>{0.0f, 1.0f}));
  const Tensor pos({4}, {0.5f, 1.0f, 2.0f, 3.0f});
  EXPECT_EQ(nn::relu(pos), pos);
}

TEST(Lrn, DegenerateIsIdentity) {
  std::mt19937_64 rng(2);
  const DT x = randn({1, 1, 3, 3}, rng);
  const DT y = nn::lrn(x, 5, 1.0, 0.0, 0.75);
  EXPECT_LT(nn::relative_error(x, y), 1e-15);
}

TEST(Lrn, ScalarEvaluation) {
  const DT y = nn::lrn(DT({1, 1, 1, 1}, std::vector<double>{2.0}), 1, 2.0, 1.0, 1.0);
  EXPECT_NEAR(y[0], 2.0 / 6.0, 1e-12);
}

TEST(Lrn, RejectsNonPositiveSize) { EXPECT_THROW(nn::lrn(Tensor({1, 1, 1, 1}), 0, 2.0, 1e-4, 0.75), ContractError); }

TEST(MaxPool, SingleWindow) {
  const auto r = nn::maxpool2d(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}), 2, 2);
  EXPECT_EQ(r.output.size(), 1u);
  EXPECT_FLOAT_EQ(r.output[0], 4.0f);
}

TEST(MaxPool, ConstantMapStaysConstant) {
  const auto r = nn::maxpool2d(Tensor({1, 2, 5, 5}, 3.5f), 3, 2);
  for (float v : r.output.data()) EXPECT_FLOAT_EQ(v, 3.5f);
}

TEST(MaxPool, TieRoutesToFirstOccurrence) {
  const Tensor x({1, 1, 2, 2}, {4, 4, 1, 2});
  const auto r = nn::maxpool2d(x, 2, 2);
  const Tensor g = nn::maxpool2d_backward(x.shape(), r.argmax, Tensor({1, 1, 1, 1}, 1.0f));
  EXPECT_EQ(g, Tensor({1, 1, 2, 2}, std::vector<float>{1, 0, 0, 0}));
}

TEST(MaxPool, KernelLargerThanExtentThrows) {
  EXPECT_THROW(nn::maxpool2d(Tensor({1, 1, 2, 2}), 3, 1), ContractError);
}

TEST(Softmax2, KnownValues) {
  const Tensor p = nn::softmax2(Tensor({3, 2}, {0, 0, 1000, 0, 1, -1}));
  EXPECT_FLOAT_EQ(p[0], 0.5f);
  EXPECT_FLOAT_EQ(p[1], 0.5f);
  EXPECT_NEAR(p[2], 1.0, 1e-12);
  EXPECT_NEAR(p[3], 0.0, 1e-12);
  EXPECT_NEAR(p[4], 0.880797, 1e-6);
  EXPECT_NEAR(p[5], 0.119203, 1e-6);
}

TEST(Softmax2, SumsToOneInUnitInterval) {
  std::mt19937_64 rng(4);
  const DT z = randn({200, 2}, rng);
  const DT p = nn::softmax2(DT(z.shape(), [&] {
    std::vector<double> v(z.data().begin(), z.data().end());
    for (double& x : v) x *= 30.0;
    return v;
  }()));
  for (std::size_t i = 0; i < 200; ++i) {
    EXPECT_GT(p[2 * i], 0.0);
    EXPECT_LT(p[2 * i], 1.0 + 1e-15);
    EXPECT_NEAR(p[2 * i] + p[2 * i + 1], 1.0, 1e-6);
  }
  EXPECT_THROW(nn::softmax2(Tensor({2, 3})), ContractError);
}

TEST(GlobalAvgPool, Means) {
  const Tensor m = nn::global_avg_pool(Tensor({2, 2, 2}, {0.1f, 0.2f, 0.3f, 0.4f, 7, 7, 7, 7}));
  EXPECT_NEAR(m[0], 0.25, 1e-7);
  EXPECT_FLOAT_EQ(m[1], 7.0f);
}

TEST(Sgd, OneStepArithmetic) {
  Tensor p({1}, {1.0f}), v;
  nn::sgd_step(p, Tensor({1}, {0.5f}), v, nn::SgdConfig{0.1, 0.0, 0.0});
  EXPECT_FLOAT_EQ(p[0], 0.95f);
}

TEST(Sgd, ZeroGradientZeroDecayIsNoop) {
  Tensor p({3}, {1, 2, 3}), v;
  const Tensor before = p;
  nn::sgd_step(p, Tensor({3}), v, nn::SgdConfig{0.1, 0.9, 0.0});
  EXPECT_EQ(p, before);
}

TEST(Sgd, MomentumAccumulates) {
  Tensor p({1}, {0.0f}), v;
  const nn::SgdConfig cfg{1.0, 0.5, 0.0};
  nn::sgd_step(p, Tensor({1}, {1.0f}), v, cfg);  // v = 1, p = -1
  nn::sgd_step(p, Tensor({1}, {1.0f}), v, cfg);  // v = 1.5, p = -2.5
  EXPECT_FLOAT_EQ(p[0], -2.5f);
  EXPECT_THROW(nn::sgd_step(p, Tensor({2}), v, cfg), ContractError);
}

TEST(NumericGrad, SumGivesOnes) {
  std::mt19937_64 rng(5);
  const DT x = randn({4, 3}, rng);
  const DT g = nn::numeric_grad<double>(
      [](const DT& v) {
        double s = 0;
        for (double e : v.data()) s += e;
        return s;
      },
      x, 1e-3);
  for (double e : g.data()) EXPECT_NEAR(e, 1.0, 1e-9);
}

TEST(NumericGrad, Square) {
  const DT g = nn::numeric_grad<double>([](const DT& v) { return v[0] * v[0]; }, DT({1}, std::vector<double>{3.0}), 1e-3);
  EXPECT_NEAR(g[0], 6.0, 1e-5);
}

// A reduced run of the shared finite-difference suite; the acceptance binary runs it at full size.
TEST(GradCheck, AllOpsPassOnSmallSuite) {
  gradcheck::SuiteConfig cfg;
  cfg.instances = 12;
  cfg.seed = 99;
  for (const auto& r : gradcheck::run_suite(cfg)) {
    EXPECT_TRUE(r.passed()) << r.op << " max rel err " << r.max_rel_err;
  }
}
