#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "psrd/ops.hpp"
#include "psrd/rng.hpp"
#include "psrd/tensor.hpp"

using namespace psrd;

namespace {

// Direct 6-loop cross-correlation reference, independent of the im2col path.
Tensor conv2d_reference(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    const int N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const int Hout = (H + 2 * pad - kh) / stride + 1;
    const int Wout = (W + 2 * pad - kw) / stride + 1;
    Tensor out({N, Cout, Hout, Wout});
    for (int n = 0; n < N; ++n)
        for (int co = 0; co < Cout; ++co)
            for (int oh = 0; oh < Hout; ++oh)
                for (int ow = 0; ow < Wout; ++ow) {
                    Real acc = b.defined() ? b[co] : Real(0);
                    for (int ci = 0; ci < Cin; ++ci)
                        for (int ki = 0; ki < kh; ++ki)
                            for (int kj = 0; kj < kw; ++kj) {
                                const int ih = oh * stride + ki - pad;
                                const int iw = ow * stride + kj - pad;
                                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                                acc += x.at4(n, ci, ih, iw) * w.at4(co, ci, ki, kj);
                            }
                    out.at4(n, co, oh, ow) = acc;
                }
    return out;
}

Tensor random_tensor(std::vector<int> shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<Real>(rng.normal());
    return t;
}

}  // namespace

TEST(Conv2d, IdentityKernel) {
    Rng rng(1);
    Tensor x = random_tensor({1, 1, 3, 3}, rng);
    Tensor w = Tensor::ones({1, 1, 1, 1});
    Tensor y = conv2d(x, w, 1, 0);
    ASSERT_EQ(y.shape(), x.shape());
    for (std::int64_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(y[i], x[i]);
}

TEST(Conv2d, ZeroKernelAnnihilates) {
    Rng rng(2);
    Tensor x = random_tensor({2, 3, 5, 4}, rng);
    Tensor w = Tensor::zeros({2, 3, 3, 3});
    Tensor y = conv2d(x, w, 1, 1);
    for (std::int64_t i = 0; i < y.numel(); ++i) EXPECT_EQ(y[i], Real(0));
}

TEST(Conv2d, RampAgainstSixLoopOracle) {
    std::vector<Real> vals(16);
    for (int i = 0; i < 16; ++i) vals[static_cast<std::size_t>(i)] = static_cast<Real>(i + 1);
    Tensor x = Tensor::from_values({1, 1, 4, 4}, vals);
    Tensor w = Tensor::ones({1, 1, 3, 3});
    Tensor y = conv2d(x, w, 1, 0);
    Tensor ref = conv2d_reference(x, w, Tensor(), 1, 0);
    ASSERT_EQ(y.shape(), (std::vector<int>{1, 1, 2, 2}));
    const Real expected[4] = {54, 63, 90, 99};  // frozen from the oracle
    for (int i = 0; i < 4; ++i) {
        EXPECT_DOUBLE_EQ(y[i], expected[i]);
        EXPECT_DOUBLE_EQ(ref[i], expected[i]);
    }
}

TEST(Conv2d, MatchesOracleOnRandomInstances) {
    Rng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        const int stride = rng.uniform_int(1, 2);
        const int pad = rng.uniform_int(0, 2);
        Tensor x = random_tensor({2, 3, 7, 6}, rng);
        Tensor w = random_tensor({4, 3, 3, 3}, rng);
        Tensor b = random_tensor({4}, rng);
        Tensor y = conv2d(x, w, b, stride, pad);
        Tensor ref = conv2d_reference(x, w, b, stride, pad);
        ASSERT_EQ(y.shape(), ref.shape());
        for (std::int64_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-10);
    }
}

TEST(Conv2d, ShapeErrorsNameTheAxes) {
    Tensor x({1, 2, 4, 4});
    Tensor w({3, 5, 3, 3});
    try {
        conv2d(x, w, 1, 0);
        FAIL() << "expected DimensionError";
    } catch (const DimensionError& e) {
        EXPECT_NE(std::string(e.what()).find("axis 1"), std::string::npos);
    }
    Tensor big_kernel({1, 2, 7, 7});
    EXPECT_THROW(conv2d(x, big_kernel, 1, 0), DimensionError);
}

TEST(BatchNorm, AlreadyNormalizedPassesThrough) {
    // per-channel zero mean, unit (biased) variance
    Tensor x = Tensor::from_values({1, 1, 2, 2}, {-1, 1, -1, 1});
    BNParams p = BNParams::make(1);
    Tensor y = batch_norm(x, p, true);
    for (std::int64_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y[i], x[i], 1e-5);
}

TEST(BatchNorm, ConstantChannelGivesBeta) {
    // zero-variance limit: x - mean is at most an ulp, amplified by 1/sqrt(eps)
    Tensor x = Tensor::full({2, 1, 2, 2}, Real(3.7));
    BNParams p = BNParams::make(1);
    p.beta[0] = Real(5);
    Tensor y = batch_norm(x, p, true);
    for (std::int64_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y[i], 5.0, 1e-9);
}

TEST(BatchNorm, ZeroGammaGivesBetaForAnyInput) {
    Rng rng(4);
    Tensor x = random_tensor({2, 3, 3, 3}, rng);
    BNParams p = BNParams::make(3);
    for (int c = 0; c < 3; ++c) {
        p.gamma[c] = Real(0);
        p.beta[c] = static_cast<Real>(c) - Real(1);
    }
    Tensor y = batch_norm(x, p, true);
    for (int c = 0; c < 3; ++c)
        for (int h = 0; h < 3; ++h)
            for (int w = 0; w < 3; ++w) EXPECT_DOUBLE_EQ(y.at4(0, c, h, w), p.beta[c]);
}

TEST(BatchNorm, SingleElementChannelIsDegenerate) {
    Tensor x({1, 2, 1, 1});
    BNParams p = BNParams::make(2);
    EXPECT_THROW(batch_norm(x, p, true), NumericError);
    EXPECT_NO_THROW(batch_norm(x, p, false));
}

TEST(BatchNorm, RunningStatsFollowMomentumRule) {
    Tensor x = Tensor::from_values({1, 1, 2, 2}, {1, 3, 1, 3});  // mean 2, biased var 1
    BNParams p = BNParams::make(1);
    p.momentum_stat = Real(0.9);
    batch_norm(x, p, true);
    EXPECT_NEAR(p.running_mean[0], 0.9 * 0.0 + 0.1 * 2.0, 1e-12);
    EXPECT_NEAR(p.running_var[0], 0.9 * 1.0 + 0.1 * 1.0, 1e-12);
}

TEST(Relu, Basics) {
    Tensor x = Tensor::from_values({3}, {-1, 0, 2});
    Tensor y = relu(x);
    EXPECT_EQ(y[0], Real(0));
    EXPECT_EQ(y[1], Real(0));
    EXPECT_EQ(y[2], Real(2));

    Tensor pos = Tensor::from_values({3}, {1, 2, 3});
    Tensor ypos = relu(pos);
    for (int i = 0; i < 3; ++i) EXPECT_EQ(ypos[i], pos[i]);
}

TEST(Relu, BackwardSubgradient) {
    Graph g;
    Tensor x = Tensor::from_values({2}, {-1, 2}, true);
    Tensor loss = sum(relu(x, &g), &g);
    backward(loss, g);
    EXPECT_EQ(x.grad_values()[0], Real(0));
    EXPECT_EQ(x.grad_values()[1], Real(1));
}

TEST(MaxPool, Basics) {
    Tensor x = Tensor::from_values({1, 1, 2, 2}, {1, 2, 3, 4});
    Tensor y = max_pool2d(x, 2, 2);
    ASSERT_EQ(y.numel(), 1);
    EXPECT_EQ(y[0], Real(4));

    Tensor c = Tensor::full({1, 2, 4, 4}, Real(2.5));
    Tensor yc = max_pool2d(c, 2, 2);
    for (std::int64_t i = 0; i < yc.numel(); ++i) EXPECT_EQ(yc[i], Real(2.5));

    EXPECT_THROW(max_pool2d(x, 3, 1), DimensionError);
}

TEST(MaxPool, RampAgainstWindowScanOracle) {
    std::vector<Real> vals(16);
    for (int i = 0; i < 16; ++i) vals[static_cast<std::size_t>(i)] = static_cast<Real>(i);
    Tensor x = Tensor::from_values({1, 1, 4, 4}, vals);
    Tensor y = max_pool2d(x, 2, 2);
    // brute-force scan over each window
    Real expected[2][2];
    for (int oh = 0; oh < 2; ++oh)
        for (int ow = 0; ow < 2; ++ow) {
            Real best = -1e30;
            for (int i = 0; i < 2; ++i)
                for (int j = 0; j < 2; ++j)
                    best = std::max(best, x.at4(0, 0, oh * 2 + i, ow * 2 + j));
            expected[oh][ow] = best;
        }
    EXPECT_EQ(y.at4(0, 0, 0, 0), expected[0][0]);
    EXPECT_EQ(y.at4(0, 0, 0, 1), expected[0][1]);
    EXPECT_EQ(y.at4(0, 0, 1, 0), expected[1][0]);
    EXPECT_EQ(y.at4(0, 0, 1, 1), expected[1][1]);
}

TEST(MaxPool, TieRoutesGradientToFirstCell) {
    Graph g;
    Tensor x = Tensor::full({1, 1, 2, 2}, Real(1), true);
    Tensor loss = sum(max_pool2d(x, 2, 2, &g), &g);
    backward(loss, g);
    EXPECT_EQ(x.grad_values()[0], Real(1));
    EXPECT_EQ(x.grad_values()[1], Real(0));
    EXPECT_EQ(x.grad_values()[2], Real(0));
    EXPECT_EQ(x.grad_values()[3], Real(0));
}

TEST(Dropout, ZeroRateIsExactIdentity) {
    Rng rng(5);
    Tensor x = random_tensor({4, 4}, rng);
    Tensor y = dropout(x, Real(0), true, rng);
    for (std::int64_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Dropout, EvalModeIsExactIdentity) {
    Rng rng(6);
    Tensor x = random_tensor({4, 4}, rng);
    Tensor y = dropout(x, Real(0.9), false, rng);
    for (std::int64_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Dropout, InvertedScalingPreservesExpectation) {
    const int n = 100000;
    Rng rng(7);
    Tensor x = Tensor::ones({n});
    Tensor y = dropout(x, Real(0.5), true, rng);
    double mean = 0;
    for (std::int64_t i = 0; i < y.numel(); ++i) mean += y[i];
    mean /= n;
    // each value is 0 or 2 with equal probability: variance 1, SE 1/sqrt(n)
    const double se = 1.0 / std::sqrt(static_cast<double>(n));
    EXPECT_NEAR(mean, 1.0, 3 * se);
}

TEST(Dropout, RejectsRateOfOne) {
    Rng rng(8);
    Tensor x = Tensor::ones({2});
    EXPECT_THROW(dropout(x, Real(1), true, rng), ContractError);
}

TEST(Softmax, UniformLogitsGiveUniformProbabilities) {
    Tensor x = Tensor::full({2, 5}, Real(3.3));
    Tensor y = softmax(x);
    for (std::int64_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y[i], 0.2, 1e-12);
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
    Tensor x = Tensor::from_values({2}, {0, 1000});
    Tensor y = softmax(x);
    EXPECT_TRUE(y.all_finite());
    EXPECT_NEAR(y[0], 0.0, 1e-12);
    EXPECT_NEAR(y[1], 1.0, 1e-12);
}

TEST(Softmax, HandArithmeticOracle) {
    Tensor x = Tensor::from_values({3}, {1, 2, 3});
    Tensor y = softmax(x);
    const double denom = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    EXPECT_NEAR(y[0], std::exp(1.0) / denom, 1e-12);
    EXPECT_NEAR(y[1], std::exp(2.0) / denom, 1e-12);
    EXPECT_NEAR(y[2], std::exp(3.0) / denom, 1e-12);
    // frozen values
    EXPECT_NEAR(y[0], 0.09003057317038046, 1e-9);
    EXPECT_NEAR(y[1], 0.24472847105479767, 1e-9);
    EXPECT_NEAR(y[2], 0.66524095577482186, 1e-9);
}

TEST(Softmax, RowsSumToOneAndStayInRange) {
    Rng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor x = random_tensor({6, 4}, rng);
        Tensor y = softmax(x);
        for (int r = 0; r < 6; ++r) {
            Real s = 0;
            for (int k = 0; k < 4; ++k) {
                const Real v = y[static_cast<std::int64_t>(r) * 4 + k];
                EXPECT_GE(v, Real(0));
                EXPECT_LE(v, Real(1));
                s += v;
            }
            EXPECT_NEAR(s, 1.0, 1e-6);
        }
    }
}
