#pragma once

// Adam with decoupled weight decay, warmup + cosine learning-rate schedule,
// on-the-fly augmentation, and the epoch loop with best-on-validation
// checkpoint selection.

#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "data_io.hpp"
#include "evalkit.hpp"
#include "model.hpp"

namespace wnsf {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
};

struct OptimState {
    AdamConfig cfg;
    std::vector<std::vector<double>> m, v;
    std::size_t t = 0;
};

/// One Adam step: theta <- theta - lr*wd*theta, then the bias-corrected update.
template <class T>
void adam_step(std::vector<Parameter<T>>& params, OptimState& st, double lr) {
    if (st.m.empty()) {
        for (auto& p : params) {
            st.m.emplace_back(p.value.numel(), 0.0);
            st.v.emplace_back(p.value.numel(), 0.0);
        }
    }
    if (st.m.size() != params.size()) throw std::invalid_argument("adam_step: parameter list changed between steps");
    for (const auto& p : params) {
        if (!p.value.has_grad()) throw std::invalid_argument("adam_step: parameter " + p.name + " has no gradient");
    }
    ++st.t;
    const AdamConfig& c = st.cfg;
    const double bc1 = 1 - std::pow(c.beta1, double(st.t));
    const double bc2 = 1 - std::pow(c.beta2, double(st.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto theta = params[i].value.data();
        auto g = std::as_const(params[i].value).grad();
        auto& m = st.m[i];
        auto& v = st.v[i];
        for (std::size_t k = 0; k < theta.size(); ++k) {
            double th = double(theta[k]);
            th -= lr * c.weight_decay * th;
            const double gk = double(g[k]);
            m[k] = c.beta1 * m[k] + (1 - c.beta1) * gk;
            v[k] = c.beta2 * v[k] + (1 - c.beta2) * gk * gk;
            th -= lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + c.eps);
            theta[k] = static_cast<T>(th);
        }
    }
}

struct ScheduleConfig {
    double base_lr = 2e-4;
    double min_lr = 2e-6;
    std::size_t warmup_epochs = 5;
    std::size_t total_epochs = 200;

    void validate() const {
        if (!(min_lr < base_lr)) throw std::invalid_argument("schedule: min_lr must be below base_lr");
        if (warmup_epochs >= total_epochs) throw std::invalid_argument("schedule: warmup_epochs must be < total epochs");
    }
};

/// Linear warmup from min_lr, then cosine annealing reaching min_lr at the last epoch.
inline double lr_at(std::size_t epoch, const ScheduleConfig& s) {
    s.validate();
    if (epoch >= s.total_epochs) {
        throw std::out_of_range("lr_at: epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(s.total_epochs) + ")");
    }
    const std::size_t w = s.warmup_epochs, last = s.total_epochs - 1;
    if (epoch < w) return s.min_lr + (s.base_lr - s.min_lr) * double(epoch) / double(w);
    if (epoch == w) return s.base_lr;
    if (epoch == last) return s.min_lr;
    const double frac = double(epoch - w) / double(last - w);
    return s.min_lr + 0.5 * (s.base_lr - s.min_lr) * (1 + std::cos(std::numbers::pi * frac));
}

struct AugmentConfig {
    double rotation_deg = 15;
    double crop_scale_lo = 0.8;
    double crop_scale_hi = 1.2;
    double jitter = 0.2;
    double hflip_prob = 0.5;
};

namespace detail {

inline float bilinear_zero(const float* src, std::size_t h, std::size_t w, double fy, double fx) {
    const double y0f = std::floor(fy), x0f = std::floor(fx);
    const long y0 = long(y0f), x0 = long(x0f);
    const double wy = fy - y0f, wx = fx - x0f;
    auto px = [&](long y, long x) -> double {
        if (y < 0 || x < 0 || y >= long(h) || x >= long(w)) return 0.0;
        return src[std::size_t(y) * w + std::size_t(x)];
    };
    const double v = (px(y0, x0) * (1 - wx) + px(y0, x0 + 1) * wx) * (1 - wy) +
                     (px(y0 + 1, x0) * (1 - wx) + px(y0 + 1, x0 + 1) * wx) * wy;
    return static_cast<float>(v);
}

}  // namespace detail

/// Augments one H×W plane of [0, 1] intensities in place: rotation, resized
/// crop (area scale > 1 zooms out with zero fill), brightness and contrast
/// jitter, horizontal flip, clamp to [0, 1]. Disabled steps draw nothing.
inline void augment_plane(std::span<float> img, std::size_t h, std::size_t w, const AugmentConfig& cfg, Rng& rng) {
    std::vector<float> src(img.begin(), img.end());
    const double cy = 0.5 * double(h) - 0.5, cx = 0.5 * double(w) - 0.5;

    if (cfg.rotation_deg > 0) {
        const double a = rng.uniform(-cfg.rotation_deg, cfg.rotation_deg) * std::numbers::pi / 180.0;
        const double ca = std::cos(a), sa = std::sin(a);
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                const double dy = double(y) - cy, dx = double(x) - cx;
                img[y * w + x] = detail::bilinear_zero(src.data(), h, w, cy + ca * dy - sa * dx, cx + sa * dy + ca * dx);
            }
        src.assign(img.begin(), img.end());
    }

    if (cfg.crop_scale_lo != 1.0 || cfg.crop_scale_hi != 1.0) {
        const double k = std::sqrt(rng.uniform(cfg.crop_scale_lo, cfg.crop_scale_hi));
        const double ch = k * double(h), cw = k * double(w);
        const double oy = rng.uniform(std::min(0.0, double(h) - ch), std::max(0.0, double(h) - ch));
        const double ox = rng.uniform(std::min(0.0, double(w) - cw), std::max(0.0, double(w) - cw));
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                img[y * w + x] = detail::bilinear_zero(src.data(), h, w, oy + (double(y) + 0.5) * k - 0.5,
                                                       ox + (double(x) + 0.5) * k - 0.5);
    }

    if (cfg.jitter > 0) {
        const double b = rng.uniform(1 - cfg.jitter, 1 + cfg.jitter);
        const double c = rng.uniform(1 - cfg.jitter, 1 + cfg.jitter);
        double mean = 0;
        for (float v : img) mean += v;
        mean = mean / double(img.size()) * b;
        for (float& v : img) v = static_cast<float>((double(v) * b - mean) * c + mean);
    }

    if (cfg.hflip_prob > 0 && rng.bernoulli(cfg.hflip_prob)) {
        for (std::size_t y = 0; y < h; ++y) std::reverse(img.begin() + long(y * w), img.begin() + long(y * w + w));
    }

    for (float& v : img) v = std::clamp(v, 0.0f, 1.0f);
}

/// Augmented copy of a 1×H×W or N×C×H×W unit-range tensor; every plane draws independently.
inline Tensor<float> augment(const Tensor<float>& images, const AugmentConfig& cfg, Rng& rng) {
    Tensor<float> out = images.detach();
    const std::size_t h = images.dim(images.ndim() - 2), w = images.dim(images.ndim() - 1);
    const std::size_t planes = images.numel() / (h * w);
    for (std::size_t p = 0; p < planes; ++p) augment_plane(out.data().subspan(p * h * w, h * w), h, w, cfg, rng);
    return out;
}

struct TrainConfig {
    ScheduleConfig schedule;
    AdamConfig adam;
    AugmentConfig aug;
    bool augment = true;
    bool recalibrate_bn = true;
    std::size_t batch_size = 8;
    std::uint64_t seed = 1;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double lr = 0;
    double train_loss = 0, train_acc = 0;
    double val_loss = 0, val_acc = 0;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;
    double best_val_acc = -1;
    double best_val_loss = 0;
    Checkpoint best;
    std::size_t steps = 0;
};

/// Rows [begin, end) of an N×... tensor.
inline Tensor<float> batch_rows(const Tensor<float>& x, const std::vector<std::size_t>& idx, std::size_t begin,
                                std::size_t end) {
    Shape s = x.shape();
    s[0] = end - begin;
    const std::size_t per = x.numel() / x.dim(0);
    Tensor<float> out(s);
    for (std::size_t i = begin; i < end; ++i)
        std::copy_n(x.data().begin() + long(idx[i] * per), per, out.data().begin() + long((i - begin) * per));
    return out;
}

struct EvalResult {
    double loss = 0;
    double accuracy = 0;
    std::vector<int> preds;
};

/// Eval-mode pass over standardized images, no graph recorded.
inline EvalResult evaluate(Model<float>& model, const Tensor<float>& images, const std::vector<int>& labels,
                           std::size_t batch = 32) {
    NoGradGuard guard;
    const std::size_t n = images.dim(0);
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    EvalResult r;
    std::size_t correct = 0;
    for (std::size_t b = 0; b < n; b += batch) {
        const std::size_t e = std::min(n, b + batch);
        const Tensor<float> logits = model.forward(batch_rows(images, idx, b, e), Mode::eval);
        if (!labels.empty()) {
            const std::vector<int> lab(labels.begin() + long(b), labels.begin() + long(e));
            r.loss += double(cross_entropy(logits, lab).item()) * double(e - b);
        }
        const std::vector<int> pred = argmax_rows(logits);
        for (std::size_t i = 0; i < e - b; ++i) {
            const int p = pred[i];
            r.preds.push_back(p);
            if (!labels.empty()) correct += p == labels[b + i];
        }
    }
    r.loss /= double(n);
    r.accuracy = double(correct) / double(n);
    return r;
}

/// Re-estimates every batch-norm running mean and variance as the average
/// over train-mode passes of clean `unit_images` in batches of `batch`. The
/// weights are untouched. Statistics gathered on augmented batches do not
/// match clean inputs: bilinear resampling smooths the speckle that dominates
/// the first-level detail subbands, which shifts the high branch's pooled
/// features.
inline void recalibrate_bn(Model<float>& model, const Tensor<float>& unit_images, std::size_t batch) {
    model.visit([](const std::string& name, Tensor<float>& t, bool trainable) {
        if (trainable) return;
        const bool is_var = name.size() >= 4 && name.compare(name.size() - 4, 4, "_var") == 0;
        for (auto& v : t.data()) v = is_var ? 1.0f : 0.0f;
    });
    const Tensor<float> x = standardize_batch(unit_images);
    const std::size_t n = x.dim(0);
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    NoGradGuard no_grad;
    std::size_t k = 0;
    for (std::size_t b = 0; b < n; b += batch) {
        const std::size_t e = std::min(n, b + batch);
        if (e - b < 2) continue;
        BnMomentumGuard cumulative(1.0 / double(++k));
        model.forward(batch_rows(x, idx, b, e), Mode::train);
    }
}

/// Standardizes unit-range images and returns eval-mode predictions.
inline std::vector<int> predict_unit(Model<float>& model, const Tensor<float>& unit_images, std::size_t batch = 32) {
    return evaluate(model, standardize_batch(unit_images), {}, batch).preds;
}

/// Trains on unit-range `train` images (augmented, then standardized per
/// image) and validates each epoch on standardized `val` images. The
/// checkpoint with the highest validation accuracy is kept; ties go to the
/// lower validation loss.
/// With `recalibrate_bn`, batch-norm statistics are re-estimated on the clean
/// training images before each validation pass.
/// A trailing batch of one sample is dropped: batch norm needs two.
inline TrainResult train(Model<float>& model, const SplitData& train_set, const SplitData& val_set, const TrainConfig& cfg,
                         const std::function<void(const EpochRecord&)>& on_epoch = {}) {
    if (train_set.labels.empty()) throw std::invalid_argument("train: empty training split");
    if (val_set.labels.empty()) throw std::invalid_argument("train: empty validation split");
    if (cfg.batch_size < 2) throw std::invalid_argument("train: batch_size must be >= 2 (batch norm)");
    cfg.schedule.validate();

    auto params = model.parameters();
    OptimState opt;
    opt.cfg = cfg.adam;
    Rng root(cfg.seed);
    Rng shuffle_rng = root.fork(1);
    Rng aug_rng = root.fork(2);
    const Tensor<float> val_std = standardize_batch(val_set.images);
    const std::size_t n = train_set.labels.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    TrainResult res;
    for (std::size_t epoch = 0; epoch < cfg.schedule.total_epochs; ++epoch) {
        const double lr = lr_at(epoch, cfg.schedule);
        shuffle_rng.shuffle(order);
        double loss_sum = 0;
        std::size_t seen = 0, correct = 0;
        for (std::size_t b = 0; b < n; b += cfg.batch_size) {
            const std::size_t e = std::min(n, b + cfg.batch_size);
            if (e - b < 2) continue;
            Tensor<float> x = batch_rows(train_set.images, order, b, e);
            if (cfg.augment) x = augment(x, cfg.aug, aug_rng);
            x = standardize_batch(x);
            std::vector<int> y;
            for (std::size_t i = b; i < e; ++i) y.push_back(train_set.labels[order[i]]);

            for (auto& p : params) p.value.zero_grad();
            Tensor<float> logits = model.forward(x, Mode::train);
            Tensor<float> loss = cross_entropy(logits, y);
            const auto pred = argmax_rows(logits);
            loss.backward();
            adam_step(params, opt, lr);
            ++res.steps;

            loss_sum += double(loss.item()) * double(e - b);
            seen += e - b;
            for (std::size_t i = 0; i < y.size(); ++i) correct += pred[i] == y[i];
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        rec.train_loss = seen ? loss_sum / double(seen) : 0.0;
        rec.train_acc = seen ? double(correct) / double(seen) : 0.0;
        if (cfg.recalibrate_bn) recalibrate_bn(model, train_set.images, cfg.batch_size);
        const EvalResult v = evaluate(model, val_std, val_set.labels);
        rec.val_loss = v.loss;
        rec.val_acc = v.accuracy;
        res.history.push_back(rec);
        if (rec.val_acc > res.best_val_acc || (rec.val_acc == res.best_val_acc && rec.val_loss < res.best_val_loss)) {
            res.best_val_acc = rec.val_acc;
            res.best_val_loss = rec.val_loss;
            res.best_epoch = epoch;
            res.best = capture_state(model);
        }
        if (on_epoch) on_epoch(rec);
    }
    return res;
}

inline void write_history_csv(std::ostream& os, const std::vector<EpochRecord>& history) {
    os << "epoch,lr,train_loss,train_acc,val_loss,val_acc\n";
    char line[256];
    for (const auto& r : history) {
        std::snprintf(line, sizeof line, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.epoch, r.lr, r.train_loss, r.train_acc,
                      r.val_loss, r.val_acc);
        os << line;
    }
}

}  // namespace wnsf
