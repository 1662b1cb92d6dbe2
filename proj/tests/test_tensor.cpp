#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include <wavenet_sf/conv.hpp>
#include <wavenet_sf/grad_check.hpp>
#include <wavenet_sf/norm.hpp>
#include <wavenet_sf/ops.hpp>

#include "test_util.hpp"

using namespace wnsf;
using wnsf::testing::max_abs_diff;
using wnsf::testing::probe_loss;
using wnsf::testing::random_tensor;

namespace {

// Direct nested-loop cross-correlation with zero padding.
Tensor<double> conv_reference(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>* b,
                              std::size_t stride, std::size_t pad, std::size_t groups) {
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::size_t o = w.dim(0), k = w.dim(2), cg = c / groups, og = o / groups;
    const std::size_t ho = (h + 2 * pad - k) / stride + 1, wo = (wd + 2 * pad - k) / stride + 1;
    Tensor<double> out(Shape{n, o, ho, wo});
    for (std::size_t bn = 0; bn < n; ++bn)
        for (std::size_t oc = 0; oc < o; ++oc)
            for (std::size_t oy = 0; oy < ho; ++oy)
                for (std::size_t ox = 0; ox < wo; ++ox) {
                    double s = b ? (*b)[oc] : 0.0;
                    const std::size_t gi = oc / og;
                    for (std::size_t ic = 0; ic < cg; ++ic)
                        for (std::size_t ky = 0; ky < k; ++ky)
                            for (std::size_t kx = 0; kx < k; ++kx) {
                                const long iy = long(oy * stride + ky) - long(pad);
                                const long ix = long(ox * stride + kx) - long(pad);
                                if (iy < 0 || ix < 0 || iy >= long(h) || ix >= long(wd)) continue;
                                s += w.at(oc, ic, ky, kx) * x.at(bn, gi * cg + ic, iy, ix);
                            }
                    out.at(bn, oc, oy, ox) = s;
                }
    return out;
}

std::vector<Parameter<double>> params_of(std::initializer_list<std::pair<const char*, Tensor<double>>> list) {
    std::vector<Parameter<double>> out;
    for (const auto& [name, t] : list) out.push_back({name, t});
    return out;
}

// Values pushed at least `gap` away from zero so kinks do not land inside a finite-difference step.
Tensor<double> away_from_zero(Shape s, Rng& rng, double gap = 0.05) {
    Tensor<double> t = random_tensor(std::move(s), rng);
    for (auto& v : t.data()) v = v >= 0 ? v + gap : v - gap;
    return t;
}

}  // namespace

TEST(Conv2d, ConstantInputSummingKernel) {
    Tensor<double> x = Tensor<double>::ones({1, 1, 3, 3});
    Tensor<double> w = Tensor<double>::ones({1, 1, 2, 2});
    auto y = conv2d(x, w, nullptr, 1, PaddingSpec::none());
    ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
    for (double v : y.data()) EXPECT_EQ(v, 4.0);
}

TEST(Conv2d, DiracKernelIsIdentity) {
    Rng rng(1);
    for (auto kind : {PadKind::zero, PadKind::reflect}) {
        auto x = random_tensor({2, 3, 6, 5}, rng);
        Tensor<double> w({3, 1, 3, 3});
        for (std::size_t c = 0; c < 3; ++c) w.at(c, 0, 1, 1) = 1.0;
        auto y = conv2d(x, w, nullptr, 1, PaddingSpec{kind, 1}, 3);
        ASSERT_EQ(y.shape(), x.shape());
        for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], x[i]);
    }
}

TEST(Conv2d, MatchesNestedLoopOracle) {
    Rng rng(2);
    auto x = random_tensor({1, 2, 5, 5}, rng);
    auto w = random_tensor({3, 2, 3, 3}, rng);
    auto b = random_tensor({3}, rng);
    auto y = conv2d(x, w, &b, 2, PaddingSpec::zeros(1));
    ASSERT_EQ(y.shape(), (Shape{1, 3, 3, 3}));
    EXPECT_LT(max_abs_diff(y, conv_reference(x, w, &b, 2, 1, 1)), 1e-6);

    auto xg = random_tensor({2, 4, 7, 6}, rng);
    auto wg = random_tensor({6, 2, 3, 3}, rng);
    EXPECT_LT(max_abs_diff(conv2d(xg, wg, nullptr, 1, PaddingSpec::zeros(1), 2),
                           conv_reference(xg, wg, nullptr, 1, 1, 2)),
              1e-12);
}

TEST(Conv2d, ReflectPaddingMirrorsWithoutEdgeRepeat) {
    // Kernel picks the left neighbour: column -1 reflects to column 1.
    Tensor<double> x2({1, 1, 2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor<double> left({1, 1, 3, 3}, {0, 0, 0, 1, 0, 0, 0, 0, 0});
    auto y = conv2d(x2, left, nullptr, 1, PaddingSpec::reflect(1));
    EXPECT_EQ(y.at(0, 0, 0, 0), 2.0);
    EXPECT_EQ(y.at(0, 0, 0, 1), 1.0);
    EXPECT_EQ(y.at(0, 0, 1, 0), 5.0);
}

TEST(Conv2d, ShapeErrors) {
    Tensor<double> x({1, 4, 5, 5});
    EXPECT_THROW(conv2d(x, Tensor<double>({2, 3, 3, 3}), nullptr, 1, PaddingSpec::none(), 3), std::invalid_argument);
    EXPECT_THROW(conv2d(x, Tensor<double>({2, 3, 3, 3}), nullptr, 1, PaddingSpec::none()), std::invalid_argument);
    EXPECT_THROW(conv2d(x, Tensor<double>({2, 4, 7, 7}), nullptr, 1, PaddingSpec::none()), std::invalid_argument);
    try {
        conv2d(x, Tensor<double>({2, 3, 3, 3}), nullptr, 1, PaddingSpec::none());
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("dim 1"), std::string::npos);
    }
}

TEST(BatchNorm, SymmetricTwoSampleBatch) {
    Tensor<double> x({2, 1, 1, 1}, {1, 3});
    RunningStats<double> st(1);
    auto y = batch_norm2d(x, Tensor<double>::ones({1}), Tensor<double>::zeros({1}), st, Mode::train, 0.0);
    EXPECT_DOUBLE_EQ(y[0], -1.0);
    EXPECT_DOUBLE_EQ(y[1], 1.0);
    auto z = batch_norm2d(x, Tensor<double>::full({1}, 2.0), Tensor<double>::full({1}, 5.0), st, Mode::train, 0.0);
    EXPECT_DOUBLE_EQ(z[0], 3.0);
    EXPECT_DOUBLE_EQ(z[1], 7.0);
}

TEST(BatchNorm, OutputStatistics) {
    Rng rng(3);
    auto x = random_tensor({4, 3, 2, 2}, rng, -3, 5);
    RunningStats<double> st(3);
    const double eps = 1e-5;
    auto y = batch_norm2d(x, Tensor<double>::ones({3}), Tensor<double>::zeros({3}), st, Mode::train, eps);
    for (std::size_t c = 0; c < 3; ++c) {
        double s = 0, ss = 0, raw_s = 0, raw_ss = 0;
        for (std::size_t n = 0; n < 4; ++n)
            for (std::size_t i = 0; i < 4; ++i) {
                s += y.at(n, c, i / 2, i % 2);
                raw_s += x.at(n, c, i / 2, i % 2);
            }
        const double mu = s / 16, raw_mu = raw_s / 16;
        for (std::size_t n = 0; n < 4; ++n)
            for (std::size_t i = 0; i < 4; ++i) {
                ss += std::pow(y.at(n, c, i / 2, i % 2) - mu, 2);
                raw_ss += std::pow(x.at(n, c, i / 2, i % 2) - raw_mu, 2);
            }
        const double raw_var = raw_ss / 16;
        EXPECT_LT(std::abs(mu), 1e-5);
        EXPECT_NEAR(ss / 16, raw_var / (raw_var + eps), 1e-4);
    }
}

TEST(BatchNorm, RunningStatsAndEvalMode) {
    Tensor<double> x({2, 1, 1, 2}, {1, 3, 5, 7});
    RunningStats<double> st(1);
    auto g = Tensor<double>::ones({1});
    auto b = Tensor<double>::zeros({1});
    batch_norm2d(x, g, b, st, Mode::train, 1e-5, 0.1);
    EXPECT_NEAR(st.mean[0], 0.4, 1e-12);                       // 0.9*0 + 0.1*4
    EXPECT_NEAR(st.var[0], 0.9 + 0.1 * (20.0 / 3.0), 1e-12);  // unbiased 20/3
    auto y = batch_norm2d(x, g, b, st, Mode::eval);
    EXPECT_NEAR(y[0], (1 - 0.4) / std::sqrt(st.var[0] + 1e-5), 1e-12);
}

TEST(BatchNorm, DegenerateBatchRejected) {
    RunningStats<double> st(2);
    EXPECT_THROW(batch_norm2d(Tensor<double>({1, 2, 1, 1}), Tensor<double>::ones({2}), Tensor<double>::zeros({2}), st,
                              Mode::train),
                 std::invalid_argument);
    EXPECT_NO_THROW(batch_norm2d(Tensor<double>({1, 2, 1, 1}), Tensor<double>::ones({2}), Tensor<double>::zeros({2}),
                                 st, Mode::eval));
}

TEST(Pool, MaxAndAverage) {
    Tensor<double> x({1, 1, 2, 2}, {1, 2, 3, 4});
    EXPECT_EQ(pool2d(x, PoolKind::max, 2, 2)[0], 4.0);
    EXPECT_EQ(pool2d(x, PoolKind::avg, 2, 2)[0], 2.5);
    Tensor<double> ramp({1, 1, 4, 4});
    for (std::size_t i = 0; i < 16; ++i) ramp[i] = double(i);
    auto y = pool2d(ramp, PoolKind::max, 2, 2);
    EXPECT_EQ(y.values(), (std::vector<double>{5, 7, 13, 15}));
    EXPECT_THROW(pool2d(x, PoolKind::max, 3, 1), std::invalid_argument);
}

TEST(Pool, MaxTieRoutesGradientToFirstIndex) {
    Tensor<double> x({1, 1, 2, 2}, {2, 2, 2, 2}, true);
    auto y = pool2d(x, PoolKind::max, 2, 2);
    sum_all(y).backward();
    EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{1, 0, 0, 0}));
}

TEST(GlobalAvgPool, Values) {
    EXPECT_EQ(global_avg_pool(Tensor<double>::full({1, 1, 3, 3}, 7.0))[0], 7.0);
    EXPECT_EQ(global_avg_pool(Tensor<double>({1, 1, 2, 2}, {1, 3, 5, 7}))[0], 4.0);
    Rng rng(4);
    auto x = random_tensor({2, 3, 5, 4}, rng);
    auto y = global_avg_pool(x);
    ASSERT_EQ(y.shape(), (Shape{2, 3, 1, 1}));
    for (std::size_t nc = 0; nc < 6; ++nc) {
        double s = 0;
        for (std::size_t i = 0; i < 20; ++i) s += x[nc * 20 + i];
        EXPECT_NEAR(y[nc], s / 20, 1e-6);
    }
}

TEST(Activations, Definitions) {
    Tensor<double> x({3}, {-2, 3, 0});
    auto r = relu(x);
    EXPECT_EQ(r[0], 0.0);
    EXPECT_EQ(r[1], 3.0);
    EXPECT_DOUBLE_EQ(leaky_relu(x, 0.01)[0], -0.02);
    EXPECT_EQ(sigmoid(x)[2], 0.5);
}

TEST(Activations, SigmoidStaysInOpenInterval) {
    Tensor<float> x({4}, {-1000.f, -90.f, 40.f, 1000.f});
    const auto y = sigmoid(x);
    for (float s : y.values()) {
        EXPECT_GT(s, 0.f);
        EXPECT_LT(s, 1.f);
    }
    EXPECT_EQ(sigmoid(Tensor<double>({1}, {-800.0}))[0], std::numeric_limits<double>::min());
}

TEST(Softmax, ValuesAndStability) {
    auto a = softmax(Tensor<double>({1, 2}, {0, 0}), 1);
    EXPECT_EQ(a[0], 0.5);
    auto b = softmax(Tensor<double>({1, 2}, {1000, 1000}), 1);
    EXPECT_EQ(b[0], 0.5);
    EXPECT_EQ(b[1], 0.5);
    auto c = softmax(Tensor<double>({1, 2}, {std::numbers::ln2, 0}), 1);
    EXPECT_NEAR(c[0], 2.0 / 3.0, 1e-9);
    EXPECT_NEAR(c[1], 1.0 / 3.0, 1e-9);
}

TEST(Softmax, SumsToOneAlongAxis) {
    Rng rng(5);
    for (int seed = 0; seed < 20; ++seed) {
        auto x = random_tensor({3, 4, 5}, rng, -1000, 1000);
        for (std::size_t axis = 0; axis < 3; ++axis) {
            auto y = softmax(x, axis);
            const auto sp = detail::split_axis(x.shape(), axis);
            for (std::size_t o = 0; o < sp.outer; ++o)
                for (std::size_t i = 0; i < sp.inner; ++i) {
                    double s = 0;
                    for (std::size_t e = 0; e < sp.extent; ++e) {
                        const double v = y[(o * sp.extent + e) * sp.inner + i];
                        EXPECT_GE(v, 0.0);
                        s += v;
                    }
                    EXPECT_NEAR(s, 1.0, 1e-9);
                }
        }
    }
}

TEST(Linear, IdentityBiasAndOracle) {
    Rng rng(6);
    auto x = random_tensor({2, 3}, rng);
    Tensor<double> eye({3, 3});
    for (std::size_t i = 0; i < 3; ++i) eye[i * 3 + i] = 1;
    auto zb = Tensor<double>::zeros({3});
    EXPECT_EQ(linear(x, eye, &zb).values(), x.values());

    Tensor<double> b({4}, {1, 2, 3, 4});
    auto rows = linear(x, Tensor<double>::zeros({3, 4}), &b);
    for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(rows[r * 4 + c], b[c]);

    auto w = random_tensor({3, 4}, rng);
    auto y = linear(x, w);
    for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t c = 0; c < 4; ++c) {
            double s = 0;
            for (std::size_t k = 0; k < 3; ++k) s += x[r * 3 + k] * w[k * 4 + c];
            EXPECT_NEAR(y[r * 4 + c], s, 1e-6);
        }
    EXPECT_THROW(linear(x, Tensor<double>({4, 2})), std::invalid_argument);
}

TEST(CrossEntropy, ClosedForms) {
    EXPECT_NEAR(cross_entropy(Tensor<double>({1, 2}, {0, 0}), {0}).item(), std::numbers::ln2, 1e-12);
    EXPECT_LT(cross_entropy(Tensor<double>({1, 2}, {20, -20}), {0}).item(), 1e-8);
    Tensor<double> pair({2, 2}, {1, -1, -1, 1});
    const double single = cross_entropy(Tensor<double>({1, 2}, {1, -1}), {0}).item();
    EXPECT_NEAR(cross_entropy(pair, {0, 1}).item(), single, 1e-15);
    const double other = cross_entropy(Tensor<double>({1, 2}, {1, -1}), {1}).item();
    EXPECT_NEAR(cross_entropy(pair, {0, 0}).item(), 0.5 * (single + other), 1e-15);
    EXPECT_THROW(cross_entropy(pair, {0, 2}), std::out_of_range);
}

TEST(Backward, ScalarRules) {
    auto x = Tensor<double>::scalar(3.0, true);
    mul(x, x).backward();
    EXPECT_EQ(x.grad()[0], 6.0);

    auto a = Tensor<double>::scalar(2.0, true);
    auto b = Tensor<double>::scalar(5.0, true);
    mul(a, b).backward();
    EXPECT_EQ(a.grad()[0], 5.0);
    EXPECT_EQ(b.grad()[0], 2.0);

    // accumulation across two passes
    mul(a, b).backward();
    EXPECT_EQ(a.grad()[0], 10.0);
}

TEST(Backward, NonScalarRejected) {
    auto x = Tensor<double>({2}, {1, 2}, true);
    EXPECT_THROW(scale(x, 2.0).backward(), std::invalid_argument);
}

TEST(Backward, SharedSubexpressionVisitedOnce) {
    // y = x*x + x*x via a shared node: dy/dx = 4x
    auto x = Tensor<double>::scalar(1.5, true);
    auto sq = mul(x, x);
    add(sq, sq).backward();
    EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(GradCheck, QuadraticHasTinyError) {
    auto p = Tensor<double>({3}, {0.5, -1.2, 2.0}, true);
    std::vector<Parameter<double>> ps{{"p", p}};
    Tensor<double> coef({3}, {1.0, 3.0, 0.5});
    auto report = grad_check([&] { return sum_all(mul(coef, mul(p, p))); }, ps, 1e-5, 1e-9);
    EXPECT_LT(report.max_rel_err, 1e-9);
    EXPECT_TRUE(report.pass);
}

TEST(GradCheck, DetectsWrongGradient) {
    auto p = Tensor<double>({2}, {0.5, -1.2}, true);
    std::vector<Parameter<double>> ps{{"p", p}};
    auto report = grad_check([&] { return sum_all(mul(p, p)); }, ps, 1e-5, 1e-5, 1.1);
    EXPECT_FALSE(report.pass);
    EXPECT_EQ(report.worst_param, "p");
}

TEST(GradCheck, CompositeConvBnReluGap) {
    Rng rng(7);
    auto x = random_tensor({2, 2, 5, 5}, rng, -1, 1, true);
    auto w = random_tensor({3, 2, 3, 3}, rng, -1, 1, true);
    auto g = random_tensor({3}, rng, 0.5, 1.5, true);
    auto b = random_tensor({3}, rng, -0.5, 0.5, true);
    RunningStats<double> st(3);
    auto ps = params_of({{"x", x}, {"w", w}, {"gamma", g}, {"beta", b}});
    auto f = [&] {
        return probe_loss(global_avg_pool(relu(batch_norm2d(conv2d(x, w, nullptr, 1, PaddingSpec::zeros(1)), g, b, st,
                                                           Mode::train))));
    };
    auto report = grad_check(f, ps);
    EXPECT_TRUE(report.pass) << report.worst_param << " err " << report.max_rel_err;
}

// Every primitive, 20 seeds, randomized small shapes.
TEST(GradCheck, PrimitivesOverTwentySeeds) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(1000 + seed);
        const std::size_t n = 1 + rng.below(2), c = 1 + rng.below(3), h = 4 + rng.below(3), w = 4 + rng.below(3);
        auto check = [&](const char* what, std::vector<Parameter<double>> ps, const std::function<Tensor<double>()>& f) {
            auto r = grad_check(f, ps);
            EXPECT_TRUE(r.pass) << what << " seed " << seed << " worst " << r.worst_param << "[" << r.worst_index
                                << "] err " << r.max_rel_err;
        };
        {
            const std::size_t groups = (c % 2 == 0) ? 2 : 1;
            auto x = random_tensor({n, c, h, w}, rng, -1, 1, true);
            auto k = random_tensor({2 * groups, c / groups, 3, 3}, rng, -1, 1, true);
            auto b = random_tensor({2 * groups}, rng, -1, 1, true);
            const std::size_t stride = 1 + rng.below(2);
            const auto pad = rng.bernoulli(0.5) ? PaddingSpec::zeros(1) : PaddingSpec::reflect(1);
            check("conv2d", params_of({{"x", x}, {"k", k}, {"b", b}}),
                  [&] { return probe_loss(conv2d(x, k, &b, stride, pad, groups)); });
        }
        {
            auto x = random_tensor({n + 1, c, h, w}, rng, -2, 2, true);
            auto g = random_tensor({c}, rng, 0.5, 1.5, true);
            auto b = random_tensor({c}, rng, -1, 1, true);
            RunningStats<double> st(c);
            for (std::size_t i = 0; i < c; ++i) st.var[i] = rng.uniform(0.5, 2.0);
            check("batch_norm2d/train", params_of({{"x", x}, {"g", g}, {"b", b}}),
                  [&] { return probe_loss(batch_norm2d(x, g, b, st, Mode::train)); });
            RunningStats<double> frozen = st;
            frozen.mean = st.mean.detach();
            frozen.var = st.var.detach();
            check("batch_norm2d/eval", params_of({{"x", x}, {"g", g}, {"b", b}}),
                  [&] { return probe_loss(batch_norm2d(x, g, b, frozen, Mode::eval)); });
        }
        {
            auto x = random_tensor({n, c, h, w}, rng, -1, 1, true);
            check("max_pool2d", params_of({{"x", x}}), [&] { return probe_loss(pool2d(x, PoolKind::max, 2, 2)); });
            check("avg_pool2d", params_of({{"x", x}}), [&] { return probe_loss(pool2d(x, PoolKind::avg, 3, 1)); });
            check("global_avg_pool", params_of({{"x", x}}), [&] { return probe_loss(global_avg_pool(x)); });
            check("max_over", params_of({{"x", x}}), [&] { return probe_loss(max_over(x, 1)); });
            check("mean_over", params_of({{"x", x}}), [&] { return probe_loss(mean_over(x, 1)); });
            check("softmax", params_of({{"x", x}}), [&] { return probe_loss(softmax(x, 1)); });
            check("sigmoid", params_of({{"x", x}}), [&] { return probe_loss(sigmoid(x)); });
        }
        {
            auto x = away_from_zero({n, c, h, w}, rng);
            x.set_requires_grad(true);
            check("relu", params_of({{"x", x}}), [&] { return probe_loss(relu(x)); });
            check("leaky_relu", params_of({{"x", x}}), [&] { return probe_loss(leaky_relu(x, 0.01)); });
        }
        {
            auto x = random_tensor({n + 1, 3 + c}, rng, -1, 1, true);
            auto w = random_tensor({3 + c, 4}, rng, -1, 1, true);
            auto b = random_tensor({4}, rng, -1, 1, true);
            check("linear", params_of({{"x", x}, {"w", w}, {"b", b}}), [&] { return probe_loss(linear(x, w, &b)); });
            std::vector<int> labels;
            for (std::size_t i = 0; i < n + 1; ++i) labels.push_back(int(rng.below(4)));
            auto logits = random_tensor({n + 1, 4}, rng, -3, 3, true);
            check("cross_entropy", params_of({{"logits", logits}}), [&] { return cross_entropy(logits, labels); });
        }
        {
            auto a = random_tensor({n, c, h, w}, rng, -1, 1, true);
            auto b = random_tensor({n, 1, h, w}, rng, -1, 1, true);
            auto d = random_tensor({n, 2, h, w}, rng, -1, 1, true);
            check("broadcast mul/add/sub", params_of({{"a", a}, {"b", b}}),
                  [&] { return probe_loss(sub(add(mul(a, b), a), b)); });
            check("concat", params_of({{"a", a}, {"d", d}}), [&] { return probe_loss(concat(a, d, 1)); });
            check("pad/crop", params_of({{"a", a}}),
                  [&] { return probe_loss(crop_top_left(pad_bottom_right(a, 1, 1), h - 1, w)); });
        }
    }
}

TEST(FiniteCheck, FlagsNonFiniteResults) {
    set_finite_check(true);
    Tensor<double> x({1}, {std::numeric_limits<double>::infinity()});
    EXPECT_THROW(scale(x, 0.0), std::domain_error);
    set_finite_check(false);
    EXPECT_NO_THROW(scale(x, 0.0));
}

TEST(NoGrad, SkipsRecording) {
    auto x = Tensor<double>::scalar(2.0, true);
    NoGradGuard guard;
    auto y = mul(x, x);
    EXPECT_FALSE(y.requires_grad());
}
