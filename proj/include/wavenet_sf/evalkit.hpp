#pragma once

// Classification metrics, summary statistics, paired t-test, and the
// multiplicative speckle-noise benchmark.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace wnsf {

struct ConfusionMatrix {
    std::size_t k = 0;
    std::vector<std::size_t> counts;  // row = true class, column = predicted

    explicit ConfusionMatrix(std::size_t classes = 0) : k(classes), counts(classes * classes, 0) {}
    std::size_t& at(std::size_t truth, std::size_t pred) { return counts[truth * k + pred]; }
    std::size_t at(std::size_t truth, std::size_t pred) const { return counts[truth * k + pred]; }
    std::size_t total() const {
        std::size_t s = 0;
        for (std::size_t c : counts) s += c;
        return s;
    }
    std::size_t support(std::size_t cls) const {
        std::size_t s = 0;
        for (std::size_t p = 0; p < k; ++p) s += at(cls, p);
        return s;
    }
};

inline ConfusionMatrix confusion(const std::vector<int>& preds, const std::vector<int>& labels, std::size_t k) {
    if (preds.size() != labels.size()) {
        throw std::invalid_argument("confusion: " + std::to_string(preds.size()) + " predictions vs " +
                                    std::to_string(labels.size()) + " labels");
    }
    ConfusionMatrix cm(k);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i] < 0 || labels[i] < 0 || std::size_t(preds[i]) >= k || std::size_t(labels[i]) >= k) {
            throw std::out_of_range("confusion: class out of range at sample " + std::to_string(i));
        }
        ++cm.at(std::size_t(labels[i]), std::size_t(preds[i]));
    }
    return cm;
}

/// Accuracy is trace / total. Per-class scores are one-vs-rest; a ratio with
/// a zero denominator is reported as 0, and so is F1 when P + S == 0.
struct MetricReport {
    double accuracy = 0;
    std::vector<double> precision, sensitivity, f1;
    std::vector<std::size_t> support;
    double macro_precision = 0, macro_sensitivity = 0, macro_f1 = 0;
};

inline double f1_score(double p, double s) { return p + s > 0 ? 2 * p * s / (p + s) : 0.0; }

inline MetricReport metrics(const ConfusionMatrix& cm) {
    const std::size_t total = cm.total();
    if (total == 0) throw std::invalid_argument("metrics: empty confusion matrix");
    MetricReport r;
    std::size_t correct = 0;
    for (std::size_t c = 0; c < cm.k; ++c) {
        const std::size_t tp = cm.at(c, c);
        std::size_t predicted = 0;
        for (std::size_t t = 0; t < cm.k; ++t) predicted += cm.at(t, c);
        const std::size_t sup = cm.support(c);
        const double p = predicted ? double(tp) / double(predicted) : 0.0;
        const double s = sup ? double(tp) / double(sup) : 0.0;
        r.precision.push_back(p);
        r.sensitivity.push_back(s);
        r.f1.push_back(f1_score(p, s));
        r.support.push_back(sup);
        correct += tp;
    }
    r.accuracy = double(correct) / double(total);
    for (std::size_t c = 0; c < cm.k; ++c) {
        r.macro_precision += r.precision[c];
        r.macro_sensitivity += r.sensitivity[c];
        r.macro_f1 += r.f1[c];
    }
    const double k = double(cm.k);
    r.macro_precision /= k;
    r.macro_sensitivity /= k;
    r.macro_f1 /= k;
    return r;
}

struct SummaryStats {
    double mean = 0;
    double stddev = 0;  // population (divisor n)
    std::size_t n = 0;
};

inline SummaryStats summary_stats(std::span<const double> xs) {
    if (xs.empty()) throw std::invalid_argument("summary_stats: empty sample");
    SummaryStats st;
    st.n = xs.size();
    for (double x : xs) st.mean += x;
    st.mean /= double(st.n);
    double ss = 0;
    for (double x : xs) ss += (x - st.mean) * (x - st.mean);
    st.stddev = std::sqrt(ss / double(st.n));
    return st;
}

namespace detail {

// Continued fraction for the incomplete beta function (modified Lentz).
inline double beta_cf(double a, double b, double x) {
    constexpr double tiny = 1e-300;
    constexpr double eps = 1e-15;
    const double qab = a + b, qap = a + 1, qam = a - 1;
    double c = 1, d = 1 - qab * x / qap;
    if (std::abs(d) < tiny) d = tiny;
    d = 1 / d;
    double h = d;
    for (int m = 1; m <= 500; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1) < eps) return h;
    }
    throw std::runtime_error("incomplete beta: continued fraction did not converge");
}

}  // namespace detail

/// I_x(a, b), the regularized incomplete beta function.
inline double regularized_incomplete_beta(double a, double b, double x) {
    if (x < 0 || x > 1 || a <= 0 || b <= 0) throw std::domain_error("regularized_incomplete_beta: argument out of range");
    if (x == 0 || x == 1) return x;
    const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(ln_front);
    if (x < (a + 1) / (a + b + 2)) return front * detail::beta_cf(a, b, x) / a;
    return 1 - front * detail::beta_cf(b, a, 1 - x) / b;
}

/// P(|T| >= |t|) for Student's t with df degrees of freedom.
inline double student_t_two_sided_p(double t, double df) {
    return regularized_incomplete_beta(df / 2, 0.5, df / (df + t * t));
}

struct TTestResult {
    double t = 0;
    double df = 0;
    double p_two_sided = 1;
};

inline TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("paired_t_test: samples differ in length");
    const std::size_t n = a.size();
    if (n < 2) throw std::invalid_argument("paired_t_test: need at least two pairs");
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
    double mean = 0;
    for (double v : d) mean += v;
    mean /= double(n);
    double ss = 0;
    for (double v : d) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / double(n - 1));
    if (!(sd > 0)) throw std::invalid_argument("paired_t_test: degenerate differences (zero variance)");
    TTestResult r;
    r.t = mean / (sd / std::sqrt(double(n)));
    r.df = double(n - 1);
    r.p_two_sided = student_t_two_sided_p(r.t, r.df);
    return r;
}

// ---------------------------------------------------------------------------
// Speckle noise: F = g + g·u, u ~ N(0, s), clamped to [0, max_val].

/// Corrupts `g` in place. u is drawn as sqrt(s)·z with z standard normal, so a
/// fixed rng state gives noise whose magnitude grows monotonically with s.
inline void add_speckle(std::span<float> g, double s, Rng& rng, double max_val = 1.0) {
    if (!(s >= 0)) throw std::invalid_argument("add_speckle: variance must be >= 0");
    const double sd = std::sqrt(s);
    for (float& v : g) {
        const double u = sd * rng.normal();
        v = static_cast<float>(std::clamp(double(v) * (1.0 + u), 0.0, max_val));
    }
}

inline double psnr(std::span<const float> clean, std::span<const float> noisy, double max_val) {
    if (clean.size() != noisy.size() || clean.empty()) throw std::invalid_argument("psnr: size mismatch");
    double mse = 0;
    for (std::size_t i = 0; i < clean.size(); ++i) {
        const double e = double(clean[i]) - double(noisy[i]);
        mse += e * e;
    }
    mse /= double(clean.size());
    if (mse == 0) throw std::domain_error("psnr: identical images, PSNR undefined/infinite");
    return 20 * std::log10(max_val / std::sqrt(mse));
}

/// Corrupted copy of a batch N×... with a dedicated generator per call.
inline Tensor<float> apply_speckle(const Tensor<float>& images, double s, std::uint64_t seed, double max_val = 1.0) {
    Tensor<float> out = images.detach();
    Rng rng(seed);
    add_speckle(out.data(), s, rng, max_val);
    return out;
}

/// Mean over samples of the per-image PSNR.
inline double mean_psnr(const Tensor<float>& clean, const Tensor<float>& noisy, double max_val = 1.0) {
    const std::size_t n = clean.dim(0), per = clean.numel() / n;
    double acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
        acc += psnr(clean.data().subspan(i * per, per), noisy.data().subspan(i * per, per), max_val);
    }
    return acc / double(n);
}

struct SpeckleParams {
    double s = 0;
    double target_psnr = 0;
    double achieved_psnr = 0;
    std::uint64_t seed = 0;
};

/// Bisection on s until the dataset-mean PSNR is within tol_db of the target.
inline SpeckleParams calibrate_speckle(const Tensor<float>& images, double target_psnr, double tol_db, std::uint64_t seed,
                                       double max_val = 1.0) {
    if (!std::isfinite(target_psnr)) throw std::invalid_argument("calibrate_speckle: target PSNR must be finite (s = 0 is not a calibration)");
    auto eval = [&](double s) { return mean_psnr(images, apply_speckle(images, s, seed, max_val), max_val); };

    double lo = 0, hi = 1e-3;
    double p_hi = eval(hi);
    for (int i = 0; p_hi >= target_psnr; ++i) {
        if (i == 60) {
            throw std::runtime_error("calibrate_speckle: " + std::to_string(target_psnr) +
                                     " dB unreachable; PSNR at s=" + std::to_string(hi) + " is " + std::to_string(p_hi));
        }
        lo = hi;
        hi *= 2;
        p_hi = eval(hi);
    }
    SpeckleParams sp{hi, target_psnr, p_hi, seed};
    if (std::abs(p_hi - target_psnr) <= tol_db) return sp;
    for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double p = eval(mid);
        if (std::abs(p - target_psnr) <= tol_db) return {mid, target_psnr, p, seed};
        (p > target_psnr ? lo : hi) = mid;
    }
    throw std::runtime_error("calibrate_speckle: no convergence to " + std::to_string(target_psnr) + " dB within 60 steps; bracket s in [" +
                             std::to_string(lo) + ", " + std::to_string(hi) + "]");
}

inline const std::vector<double>& default_psnr_ladder() {
    static const std::vector<double> ladder{28.82, 25.46, 23.13, 21.46, 20.22, 19.28};
    return ladder;
}

struct NoiseRow {
    bool clean = false;
    double target_db = 0;
    double achieved_db = 0;
    double s = 0;
    double accuracy = 0;
    double macro_f1 = 0;
};

using Classifier = std::function<std::vector<int>(const Tensor<float>&)>;

/// Clean row first, then one row per ladder level. `images` holds unit-range
/// intensities; `classify` applies any model-side preprocessing. Level i uses
/// seed + i + 1 for its noise draw.
inline std::vector<NoiseRow> noise_bench(const Classifier& classify, const Tensor<float>& images,
                                         const std::vector<int>& labels, std::size_t num_classes,
                                         const std::vector<double>& ladder, std::uint64_t seed, double tol_db = 0.05) {
    std::vector<NoiseRow> rows;
    auto score = [&](const Tensor<float>& batch, NoiseRow& row) {
        const MetricReport r = metrics(confusion(classify(batch), labels, num_classes));
        row.accuracy = r.accuracy;
        row.macro_f1 = r.macro_f1;
    };
    NoiseRow clean;
    clean.clean = true;
    clean.target_db = clean.achieved_db = std::numeric_limits<double>::infinity();
    score(images, clean);
    rows.push_back(clean);
    for (std::size_t i = 0; i < ladder.size(); ++i) {
        const std::uint64_t level_seed = seed + i + 1;
        const SpeckleParams sp = calibrate_speckle(images, ladder[i], tol_db, level_seed);
        NoiseRow row;
        row.target_db = ladder[i];
        row.achieved_db = sp.achieved_psnr;
        row.s = sp.s;
        score(apply_speckle(images, sp.s, level_seed), row);
        rows.push_back(row);
    }
    return rows;
}

inline void write_noise_csv(std::ostream& os, const std::vector<NoiseRow>& rows) {
    os << "level_db_target,level_db_achieved,s,accuracy,macro_f1\n";
    os.precision(10);
    for (const auto& r : rows) {
        if (r.clean) {
            os << "clean,inf,0," << r.accuracy << ',' << r.macro_f1 << '\n';
        } else {
            os << r.target_db << ',' << r.achieved_db << ',' << r.s << ',' << r.accuracy << ',' << r.macro_f1 << '\n';
        }
    }
}

}  // namespace wnsf
