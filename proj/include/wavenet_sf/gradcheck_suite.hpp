#pragma once

// The module-level gradient checks run by `wnsf gradcheck` and the acceptance
// binary: every differentiable op, the wavelet and attention modules, and an
// end-to-end tiny model, all in double precision on small fixed-seed inputs.

#include <functional>
#include <string>
#include <vector>

#include "conv.hpp"
#include "grad_check.hpp"
#include "hffc.hpp"
#include "model.hpp"
#include "msw_sa.hpp"
#include "norm.hpp"
#include "ops.hpp"
#include "wavelet.hpp"

namespace wnsf {

struct GradCheckRow {
    std::string module;
    std::string op;
    GradCheckReport report;
    double tol = 1e-5;
};

namespace detail {

inline Tensor<double> gc_random(Shape s, Rng& rng, double lo = -1, double hi = 1) {
    Tensor<double> t(std::move(s), 0.0, true);
    for (auto& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

// Keeps values at least 0.05 from zero so activation kinks stay outside the finite-difference step.
inline Tensor<double> gc_off_zero(Shape s, Rng& rng) {
    Tensor<double> t = gc_random(std::move(s), rng);
    for (auto& v : t.data()) v = v >= 0 ? v + 0.05 : v - 0.05;
    return t;
}

inline Tensor<double> gc_probe(const Tensor<double>& y, std::uint64_t seed = 99) {
    Rng rng(seed);
    Tensor<double> w(y.shape());
    for (auto& v : w.data()) v = rng.uniform(-1.0, 1.0);
    return sum_all(mul(y, w));
}

template <class M>
void gc_collect(M& m, const std::string& prefix, std::vector<Parameter<double>>& ps) {
    m.visit(prefix, [&](const std::string& name, Tensor<double>& t, bool trainable) {
        if (trainable) ps.push_back({name, t});
    });
}

}  // namespace detail

/// Runs every check; `corrupt_op` names an op whose analytic gradient is
/// scaled by 1.5 before comparison, to prove the harness catches it.
inline std::vector<GradCheckRow> run_gradcheck_suite(const std::string& corrupt_op = "") {
    using detail::gc_off_zero;
    using detail::gc_probe;
    using detail::gc_random;
    std::vector<GradCheckRow> rows;
    auto check = [&](const std::string& module, const std::string& op, std::vector<Parameter<double>> ps,
                     const std::function<Tensor<double>()>& f, double tol = 1e-5) {
        const double scale = op == corrupt_op ? 1.5 : 1.0;
        rows.push_back({module, op, grad_check(f, ps, 1e-5, tol, scale), tol});
    };

    Rng rng(2024);
    {
        auto x = gc_random({1, 4, 8, 8}, rng);
        auto k = gc_random({3, 4, 3, 3}, rng);
        auto b = gc_random({3}, rng);
        check("tensor_engine", "conv2d", {{"x", x}, {"k", k}, {"b", b}},
              [=] { return gc_probe(conv2d(x, k, &b, 1, PaddingSpec::zeros(1))); });
        auto kg = gc_random({4, 2, 3, 3}, rng);
        check("tensor_engine", "conv2d_grouped_reflect_s2", {{"x", x}, {"k", kg}},
              [=] { return gc_probe(conv2d(x, kg, nullptr, 2, PaddingSpec::reflect(1), 2)); });
    }
    {
        auto x = gc_random({1, 4, 6, 6}, rng, -2, 2);
        auto g = gc_random({4}, rng, 0.5, 1.5);
        auto b = gc_random({4}, rng);
        RunningStats<double> st(4);
        check("tensor_engine", "batch_norm2d_train", {{"x", x}, {"gamma", g}, {"beta", b}},
              [=]() mutable { return gc_probe(batch_norm2d(x, g, b, st, Mode::train)); });
        RunningStats<double> frozen(4);
        for (std::size_t i = 0; i < 4; ++i) {
            frozen.mean[i] = rng.uniform(-0.5, 0.5);
            frozen.var[i] = rng.uniform(0.5, 2.0);
        }
        check("tensor_engine", "batch_norm2d_eval", {{"x", x}, {"gamma", g}, {"beta", b}},
              [=]() mutable { return gc_probe(batch_norm2d(x, g, b, frozen, Mode::eval)); });
    }
    {
        auto x = gc_random({1, 4, 8, 8}, rng);
        check("tensor_engine", "max_pool2d", {{"x", x}}, [=] { return gc_probe(pool2d(x, PoolKind::max, 2, 2)); });
        check("tensor_engine", "avg_pool2d", {{"x", x}}, [=] { return gc_probe(pool2d(x, PoolKind::avg, 2, 2)); });
        check("tensor_engine", "global_avg_pool", {{"x", x}}, [=] { return gc_probe(global_avg_pool(x)); });
        check("tensor_engine", "sigmoid", {{"x", x}}, [=] { return gc_probe(sigmoid(x)); });
        check("tensor_engine", "softmax", {{"x", x}}, [=] { return gc_probe(softmax(x, 1)); });
        auto xk = gc_off_zero({1, 4, 8, 8}, rng);
        check("tensor_engine", "relu", {{"x", xk}}, [=] { return gc_probe(relu(xk)); });
        check("tensor_engine", "leaky_relu", {{"x", xk}}, [=] { return gc_probe(leaky_relu(xk, 0.01)); });
    }
    {
        auto x = gc_random({3, 6}, rng);
        auto w = gc_random({6, 4}, rng);
        auto b = gc_random({4}, rng);
        check("tensor_engine", "linear", {{"x", x}, {"w", w}, {"b", b}}, [=] { return gc_probe(linear(x, w, &b)); });
        auto logits = gc_random({3, 4}, rng, -3, 3);
        check("tensor_engine", "cross_entropy", {{"logits", logits}},
              [=] { return cross_entropy(logits, {2, 0, 3}); });
    }
    {
        auto x = gc_random({1, 4, 8, 8}, rng);
        check("wavelet", "haar_dwt2d", {{"x", x}}, [=] {
            auto sb = haar_dwt2d(x);
            return add(gc_probe(sb.ll, 1), add(gc_probe(sb.lh, 2), add(gc_probe(sb.hl, 3), gc_probe(sb.hh, 4))));
        });
        WaveletSubbands<double> sb{gc_random({1, 4, 4, 4}, rng), gc_random({1, 4, 4, 4}, rng),
                                   gc_random({1, 4, 4, 4}, rng), gc_random({1, 4, 4, 4}, rng)};
        check("wavelet", "haar_idwt2d", {{"ll", sb.ll}, {"lh", sb.lh}, {"hl", sb.hl}, {"hh", sb.hh}},
              [=] { return gc_probe(haar_idwt2d(sb)); });
        WtConvParams<double> p(4, 2, 3, rng);
        auto xw = gc_random({1, 4, 12, 12}, rng);
        std::vector<Parameter<double>> ps{{"x", xw}};
        for (std::size_t l = 0; l < p.kernels.size(); ++l) ps.push_back({"k" + std::to_string(l), p.kernels[l]});
        check("wavelet", "wt_conv", ps, [=] { return gc_probe(wt_conv(xw, p)); });
    }
    {
        MswSa<double> m(16, 16, MswSaConfig{}, rng);
        auto f = gc_random({1, 4, 16, 16}, rng);
        std::vector<Parameter<double>> ps{{"input", f}};
        detail::gc_collect(m, "msw_sa", ps);
        auto mp = std::make_shared<MswSa<double>>(std::move(m));
        check("msw_sa", "msw_sa_train", ps, [=] { return gc_probe((*mp)(f, Mode::train)); });
        check("msw_sa", "msw_sa_eval", ps, [=] { return gc_probe((*mp)(f, Mode::eval)); });
    }
    {
        auto blk = std::make_shared<HffcBlock<double>>(4, 4, HffcConfig{}, rng);
        // Train-mode batch norm after global pooling needs two samples.
        auto x = gc_random({2, 4, 8, 8}, rng);
        std::vector<Parameter<double>> ps{{"input", x}};
        detail::gc_collect(*blk, "hffc", ps);
        check("hffc", "hffc_train", ps, [=] { return gc_probe((*blk)(x, Mode::train)); });
        auto x1 = gc_random({1, 4, 8, 8}, rng);
        ps.front() = {"input", x1};
        check("hffc", "hffc_eval", ps, [=] { return gc_probe((*blk)(x1, Mode::eval)); });
    }
    {
        ModelConfig cfg;
        cfg.input_size = 16;
        cfg.num_classes = 3;
        cfg.stages = {{1, 4, false}, {1, 4, true}};
        cfg.hffc_channels = {4};
        cfg.d_lf = 4;
        cfg.d_hf = 4;
        auto m = std::make_shared<Model<double>>(cfg, 7);
        Tensor<double> x({2, 1, 16, 16});
        for (auto& v : x.data()) v = rng.uniform(-1, 1);
        check("model", "end_to_end", m->parameters(),
              [=] { return cross_entropy(m->forward(x, Mode::train), {0, 2}); }, 1e-4);
    }
    return rows;
}

}  // namespace wnsf
