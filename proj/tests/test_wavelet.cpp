#include <cmath>

#include <gtest/gtest.h>

#include <wavenet_sf/grad_check.hpp>
#include <wavenet_sf/wavelet.hpp>

#include "test_util.hpp"

using namespace wnsf;
using wnsf::testing::max_abs_diff;
using wnsf::testing::probe_loss;
using wnsf::testing::random_tensor;

namespace {

template <class T>
double energy(const Tensor<T>& t) {
    double e = 0;
    for (T v : t.values()) e += double(v) * double(v);
    return e;
}

WtConvParams<double> zero_kernels(std::size_t channels, std::size_t levels) {
    Rng rng(0);
    WtConvParams<double> p(channels, levels, 3, rng);
    for (auto& k : p.kernels)
        for (auto& v : k.data()) v = 0;
    return p;
}

void set_dirac(Tensor<double>& k) {
    for (auto& v : k.data()) v = 0;
    for (std::size_t c = 0; c < k.dim(0); ++c) k.at(c, 0, 1, 1) = 1;
}

}  // namespace

TEST(HaarDwt, ConstantBlock) {
    auto sb = haar_dwt2d(Tensor<double>::ones({1, 1, 2, 2}));
    EXPECT_EQ(sb.ll[0], 2.0);
    EXPECT_EQ(sb.lh[0], 0.0);
    EXPECT_EQ(sb.hl[0], 0.0);
    EXPECT_EQ(sb.hh[0], 0.0);
}

TEST(HaarDwt, IdentityBlock) {
    // [[1,0],[0,1]]: ll = (1+0+0+1)/2, lh = (1+0-0-1)/2, hl = (1-0+0-1)/2, hh = (1-0-0+1)/2
    auto sb = haar_dwt2d(Tensor<double>({1, 1, 2, 2}, {1, 0, 0, 1}));
    EXPECT_EQ(sb.ll[0], 1.0);
    EXPECT_EQ(sb.lh[0], 0.0);
    EXPECT_EQ(sb.hl[0], 0.0);
    EXPECT_EQ(sb.hh[0], 1.0);
    EXPECT_EQ(highfreq_sum(sb)[0], 1.0);
}

TEST(HaarDwt, HorizontalRampHasOnlyHl) {
    Tensor<double> x({1, 1, 4, 6});
    for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t xx = 0; xx < 6; ++xx) x.at(0, 0, y, xx) = 0.5 * double(xx) + 3.0;
    auto sb = haar_dwt2d(x);
    auto hf = highfreq_sum(sb);
    for (std::size_t i = 0; i < sb.lh.numel(); ++i) {
        EXPECT_EQ(sb.lh[i], 0.0);
        EXPECT_EQ(sb.hh[i], 0.0);
        EXPECT_EQ(hf[i], sb.hl[i]);
        EXPECT_DOUBLE_EQ(sb.hl[i], -0.5);
    }
}

TEST(HaarDwt, ConstantImageHasZeroDetails) {
    auto sb = haar_dwt2d(Tensor<double>::full({2, 3, 8, 6}, 4.25));
    for (const auto* band : {&sb.lh, &sb.hl, &sb.hh})
        for (double v : band->values()) EXPECT_EQ(v, 0.0);
    const auto hf = highfreq_sum(sb);
    for (double v : hf.values()) EXPECT_EQ(v, 0.0);
}

TEST(HaarDwt, OddSizeRejected) {
    EXPECT_THROW(haar_dwt2d(Tensor<double>({1, 1, 5, 4})), std::invalid_argument);
    try {
        haar_dwt2d(Tensor<double>({1, 1, 4, 7}));
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("pad"), std::string::npos);
    }
}

TEST(HaarIdwt, InverseExamples) {
    Tensor<double> ll({1, 1, 1, 1}, {2});
    Tensor<double> z({1, 1, 1, 1});
    auto img = haar_idwt2d(WaveletSubbands<double>{ll, z, z, z});
    for (double v : img.values()) EXPECT_EQ(v, 1.0);
    auto zero = haar_idwt2d(WaveletSubbands<double>{z, z, z, z});
    for (double v : zero.values()) EXPECT_EQ(v, 0.0);
    EXPECT_THROW(haar_idwt2d(WaveletSubbands<double>{ll, Tensor<double>({1, 1, 2, 1}), z, z}), std::invalid_argument);
}

TEST(HaarDwt, PerfectReconstructionAndParseval) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(seed);
        const std::size_t h = 2 * (1 + rng.below(8)), w = 2 * (1 + rng.below(8));
        auto x64 = random_tensor({1 + rng.below(2), 1 + rng.below(3), h, w}, rng, -5, 5);
        auto sb = haar_dwt2d(x64);
        EXPECT_LT(max_abs_diff(haar_idwt2d(sb), x64), 1e-12);
        const double e = energy(sb.ll) + energy(sb.lh) + energy(sb.hl) + energy(sb.hh);
        EXPECT_LT(std::abs(e - energy(x64)) / energy(x64), 1e-4);

        auto x32 = x64.cast<float>();
        EXPECT_LT(max_abs_diff(haar_idwt2d(haar_dwt2d(x32)), x32), 1e-5);
    }
}

TEST(HaarDwt, GradCheck) {
    Rng rng(11);
    auto x = random_tensor({2, 2, 4, 6}, rng, -1, 1, true);
    std::vector<Parameter<double>> ps{{"x", x}};
    auto r = grad_check(
        [&] {
            auto sb = haar_dwt2d(x);
            return add(probe_loss(sb.ll, 1), add(probe_loss(sb.lh, 2), add(probe_loss(sb.hl, 3), probe_loss(sb.hh, 4))));
        },
        ps);
    EXPECT_TRUE(r.pass) << r.max_rel_err;
    auto a = random_tensor({1, 2, 3, 3}, rng, -1, 1, true);
    auto b = random_tensor({1, 2, 3, 3}, rng, -1, 1, true);
    auto c = random_tensor({1, 2, 3, 3}, rng, -1, 1, true);
    auto d = random_tensor({1, 2, 3, 3}, rng, -1, 1, true);
    std::vector<Parameter<double>> ps2{{"ll", a}, {"lh", b}, {"hl", c}, {"hh", d}};
    auto r2 = grad_check([&] { return probe_loss(haar_idwt2d(WaveletSubbands<double>{a, b, c, d})); }, ps2);
    EXPECT_TRUE(r2.pass) << r2.max_rel_err;
}

TEST(LevelsForSize, Rule) {
    EXPECT_EQ(levels_for_size(28, 28, 4), 4u);
    EXPECT_EQ(levels_for_size(2, 2, 4), 1u);
    EXPECT_EQ(levels_for_size(56, 56, 4), 4u);
    EXPECT_EQ(levels_for_size(56, 56, 99), 5u);
    EXPECT_EQ(levels_for_size(14, 14, 4), 3u);
    EXPECT_EQ(levels_for_size(8, 8, 4), 3u);
    EXPECT_EQ(levels_for_size(32, 5, 4), 2u);
}

TEST(WtConv, ZeroKernelsOnConstantGiveZero) {
    const auto y = wt_conv(Tensor<double>::full({2, 2, 8, 8}, 1.75), zero_kernels(2, 3));
    for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

// With every kernel zero only the detail subbands survive the bottom-up pass,
// which equals the input minus its deepest-level LL projection.
TEST(WtConv, ZeroKernelsKeepOnlyDetails) {
    Rng rng(12);
    const std::size_t levels = 3, side = 16, block = std::size_t{1} << levels;
    auto x = random_tensor({2, 2, side, side}, rng);
    auto y = wt_conv(x, zero_kernels(2, levels));
    ASSERT_EQ(y.shape(), x.shape());
    Tensor<double> expect(x.shape());
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t c = 0; c < 2; ++c)
            for (std::size_t by = 0; by < side; by += block)
                for (std::size_t bx = 0; bx < side; bx += block) {
                    double mean = 0;
                    for (std::size_t i = 0; i < block; ++i)
                        for (std::size_t j = 0; j < block; ++j) mean += x.at(n, c, by + i, bx + j);
                    mean /= double(block * block);
                    for (std::size_t i = 0; i < block; ++i)
                        for (std::size_t j = 0; j < block; ++j)
                            expect.at(n, c, by + i, bx + j) = x.at(n, c, by + i, bx + j) - mean;
                }
    EXPECT_LT(max_abs_diff(y, expect), 1e-12);
}

TEST(WtConv, DeepestDiracReconstructsInput) {
    Rng rng(13);
    for (std::size_t levels : {1u, 2u, 3u, 4u}) {
        for (std::size_t side : {16u, 28u, 20u}) {
            auto p = zero_kernels(1, levels);
            set_dirac(p.kernels.back());
            auto x = random_tensor({1, 1, side, side}, rng);
            EXPECT_LT(max_abs_diff(wt_conv(x, p), x), 1e-5) << "levels " << levels << " side " << side;
        }
    }
}

TEST(WtConv, SingleLevelDiracOnConstant) {
    auto p = zero_kernels(1, 1);
    set_dirac(p.kernels[0]);
    auto y = wt_conv(Tensor<double>::full({1, 1, 8, 8}, 3.5), p);
    for (double v : y.values()) EXPECT_NEAR(v, 3.5, 1e-12);
}

TEST(WtConv, LinearInInput) {
    Rng rng(14);
    WtConvParams<double> p(2, 3, 3, rng);
    for (int trial = 0; trial < 5; ++trial) {
        auto x = random_tensor({1, 2, 12, 16}, rng);
        auto y = random_tensor({1, 2, 12, 16}, rng);
        const double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2);
        auto lhs = wt_conv(add(scale(x, a), scale(y, b)), p);
        auto rhs = add(scale(wt_conv(x, p), a), scale(wt_conv(y, p), b));
        EXPECT_LT(max_abs_diff(lhs, rhs), 1e-5);
    }
}

TEST(WtConv, TooDeepRejected) {
    Rng rng(15);
    WtConvParams<double> p(1, 4, 3, rng);
    EXPECT_THROW(wt_conv(Tensor<double>({1, 1, 8, 8}), p), std::invalid_argument);
    EXPECT_NO_THROW(wt_conv(Tensor<double>({1, 1, 16, 16}), p));
}

TEST(WtConv, GradCheck) {
    Rng rng(16);
    for (std::size_t side : {8u, 12u}) {
        WtConvParams<double> p(2, 3, 3, rng);
        auto x = random_tensor({1, 2, side, side}, rng, -1, 1, true);
        std::vector<Parameter<double>> ps{{"x", x}};
        for (std::size_t l = 0; l < 3; ++l) ps.push_back({"k" + std::to_string(l), p.kernels[l]});
        auto r = grad_check([&] { return probe_loss(wt_conv(x, p)); }, ps);
        EXPECT_TRUE(r.pass) << side << ": " << r.worst_param << " " << r.max_rel_err;
    }
}
