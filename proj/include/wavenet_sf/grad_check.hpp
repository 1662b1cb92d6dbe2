#pragma once

// Central finite-difference verification of analytic gradients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace wnsf {

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    std::size_t coords_checked = 0;
    bool pass = false;
};

/// Below 1e-4 in magnitude the denominator is clamped, so gradients that are
/// truly zero compare by absolute error against finite-difference round-off.
inline double relative_error(double a, double n) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-4});
}

/// Compares backward() against (f(θ+h) − f(θ−h)) / 2h for every coordinate of
/// every parameter. `f` must rebuild its graph on each call. Double precision
/// only: float differences cannot resolve the tolerances used here.
///
/// `analytic_scale` multiplies the analytic gradients before comparison; it is
/// a test hook for proving that the harness catches a wrong gradient.
inline GradCheckReport grad_check(const std::function<Tensor<double>()>& f, std::vector<Parameter<double>>& params,
                                  double h = 1e-5, double tol = 1e-5, double analytic_scale = 1.0) {
    for (auto& p : params) {
        p.value.set_requires_grad(true);
        p.value.zero_grad();
    }
    Tensor<double> loss = f();
    loss.backward();

    GradCheckReport report;
    for (auto& p : params) {
        std::vector<double> analytic(p.value.numel(), 0.0);
        if (p.value.has_grad()) {
            auto g = p.value.grad();
            std::copy(g.begin(), g.end(), analytic.begin());
        }
        auto values = p.value.data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            double plus, minus;
            {
                NoGradGuard guard;
                values[i] = saved + h;
                plus = f().item();
                values[i] = saved - h;
                minus = f().item();
                values[i] = saved;
            }
            const double numeric = (plus - minus) / (2.0 * h);
            const double a = analytic[i] * analytic_scale;
            const double err = relative_error(a, numeric);
            ++report.coords_checked;
            if (err > report.max_rel_err || report.worst_param.empty()) {
                report.max_rel_err = err;
                report.worst_param = p.name;
                report.worst_index = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
        p.value.zero_grad();
    }
    report.pass = report.max_rel_err < tol;
    return report;
}

}  // namespace wnsf
