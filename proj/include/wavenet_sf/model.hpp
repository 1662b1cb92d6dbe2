#pragma once

// Dual-branch classifier.
//
//   image -> haar_dwt2d -> LL -----> stem -> stage 1 -> MSW-SA -> ... -> stage S -> GAP -> proj(d_lf) --+
//                       \-> LH+HL+HH -> HFFC x4 -> GAP -> proj(d_hf) --------------------------------------+-> concat -> classifier
//
// With wavelet_front_end off the raw image enters a stride-2 7×7 stem
// instead, so every later stage sees the same spatial size.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hffc.hpp"
#include "layers.hpp"
#include "msw_sa.hpp"
#include "wavelet.hpp"

namespace wnsf {

struct StageSpec {
    std::size_t blocks = 2;
    std::size_t channels = 16;
    bool downsample = false;
};

struct AblationFlags {
    bool wavelet_front_end = true;
    bool msw_sa = true;
    bool hffc = true;
    FfeVariant ffe = FfeVariant::full;
};

struct ModelConfig {
    std::size_t input_size = 64;
    std::size_t in_channels = 1;
    std::size_t num_classes = 8;
    std::vector<StageSpec> stages{{2, 16, false}, {2, 32, true}, {2, 64, true}, {2, 128, true}};
    std::size_t msw_sa_cap = 4;
    Compress msw_sa_compress = Compress::sum;
    std::vector<std::size_t> hffc_channels{16, 32, 64, 128};
    std::size_t d_lf = 128;
    std::size_t d_hf = 64;
    HffcConfig hffc;
    AblationFlags ablation;

    std::size_t downsamples() const {
        std::size_t d = 0;
        for (const auto& s : stages) d += s.downsample ? 1 : 0;
        return d;
    }

    /// Throws std::invalid_argument naming the first violated constraint.
    void validate() const {
        auto fail = [](const std::string& m) { throw std::invalid_argument("model config: " + m); };
        if (stages.empty()) fail("at least one backbone stage is required");
        for (const auto& s : stages)
            if (s.blocks == 0 || s.channels == 0) fail("stage blocks and channels must be positive");
        if (in_channels == 0 || num_classes < 2) fail("need in_channels >= 1 and num_classes >= 2");
        if (d_lf == 0) fail("d_lf must be positive");
        const std::size_t div = std::size_t{1} << (1 + downsamples());
        if (input_size == 0 || input_size % div != 0) {
            fail("input_size " + std::to_string(input_size) + " must be divisible by " + std::to_string(div));
        }
        if (ablation.hffc) {
            if (hffc_channels.empty()) fail("hffc needs at least one block");
            if (d_hf == 0) fail("d_hf must be positive");
            const std::size_t hdiv = std::size_t{2} << hffc_channels.size();
            if (input_size % hdiv != 0) {
                fail("input_size " + std::to_string(input_size) + " must be divisible by " + std::to_string(hdiv) +
                     " for " + std::to_string(hffc_channels.size()) + " HFFC blocks");
            }
            std::size_t prev = in_channels;
            for (std::size_t c : hffc_channels) {
                if (c < prev) fail("hffc channels must be non-decreasing from in_channels");
                if (c % hffc.groups != 0) fail("hffc channels must be divisible by filter groups");
                prev = c;
            }
        }
    }

    std::size_t fused_width() const { return d_lf + (ablation.hffc ? d_hf : 0); }
};

/// conv3×3 -> BN -> ReLU -> conv3×3 -> BN, plus identity or 1×1 projection shortcut, then ReLU.
template <class T>
struct ResidualBlock {
    Conv2d<T> conv1, conv2, proj;
    BatchNorm2d<T> bn1, bn2, proj_bn;
    bool has_proj = false;

    ResidualBlock() = default;
    ResidualBlock(std::size_t in, std::size_t out, std::size_t stride, Rng& rng)
        : conv1(in, out, 3, stride, PaddingSpec::zeros(1), false, rng),
          conv2(out, out, 3, 1, PaddingSpec::zeros(1), false, rng),
          bn1(out),
          bn2(out) {
        if (in != out || stride != 1) {
            has_proj = true;
            proj = Conv2d<T>(in, out, 1, stride, PaddingSpec::none(), false, rng);
            proj_bn = BatchNorm2d<T>(out);
        }
    }

    Tensor<T> operator()(const Tensor<T>& x, Mode mode) {
        Tensor<T> y = relu(bn1(conv1(x), mode));
        y = bn2(conv2(y), mode);
        Tensor<T> skip = has_proj ? proj_bn(proj(x), mode) : x;
        return relu(add(y, skip));
    }

    template <class F>
    void visit(const std::string& prefix, F&& fn) {
        conv1.visit(prefix + "/conv1", fn);
        bn1.visit(prefix + "/bn1", fn);
        conv2.visit(prefix + "/conv2", fn);
        bn2.visit(prefix + "/bn2", fn);
        if (has_proj) {
            proj.visit(prefix + "/proj", fn);
            proj_bn.visit(prefix + "/proj_bn", fn);
        }
    }
};

template <class T>
struct BranchFeatures {
    Tensor<T> low;   // N×d_lf
    Tensor<T> high;  // N×d_hf, undefined when the high branch is off
};

template <class T>
class Model {
public:
    Model() = default;
    Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
        cfg_.validate();
        Rng root(seed);
        const std::size_t half = cfg_.input_size / 2;
        const std::size_t c0 = cfg_.stages.front().channels;

        Rng stem_rng = root.fork(1);
        if (cfg_.ablation.wavelet_front_end) {
            stem_ = Conv2d<T>(cfg_.in_channels, c0, 3, 1, PaddingSpec::zeros(1), false, stem_rng);
        } else {
            stem_ = Conv2d<T>(cfg_.in_channels, c0, 7, 2, PaddingSpec::zeros(3), false, stem_rng);
        }
        stem_bn_ = BatchNorm2d<T>(c0);

        std::size_t side = half, in = c0;
        for (std::size_t s = 0; s < cfg_.stages.size(); ++s) {
            const StageSpec& spec = cfg_.stages[s];
            Rng srng = root.fork(100 + s);
            std::vector<ResidualBlock<T>> blocks;
            for (std::size_t b = 0; b < spec.blocks; ++b) {
                const std::size_t stride = (b == 0 && spec.downsample) ? 2 : 1;
                blocks.emplace_back(in, spec.channels, stride, srng);
                in = spec.channels;
            }
            if (spec.downsample) side /= 2;
            stages_.push_back(std::move(blocks));
            if (cfg_.ablation.msw_sa && s + 1 < cfg_.stages.size()) {
                Rng mrng = root.fork(200 + s);
                MswSaConfig mc;
                mc.max_levels = cfg_.msw_sa_cap;
                mc.compress = cfg_.msw_sa_compress;
                attn_.emplace_back(side, side, mc, mrng);
            }
        }
        Rng lrng = root.fork(300);
        low_proj_ = Linear<T>(in, cfg_.d_lf, lrng);

        if (cfg_.ablation.hffc) {
            HffcConfig hc = cfg_.hffc;
            hc.variant = cfg_.ablation.ffe;
            std::size_t hin = cfg_.in_channels;
            for (std::size_t i = 0; i < cfg_.hffc_channels.size(); ++i) {
                Rng hrng = root.fork(400 + i);
                hffc_.emplace_back(hin, cfg_.hffc_channels[i], hc, hrng);
                hin = cfg_.hffc_channels[i];
            }
            Rng prng = root.fork(500);
            high_proj_ = Linear<T>(hin, cfg_.d_hf, prng);
        }
        Rng crng = root.fork(600);
        classifier_ = Linear<T>(cfg_.fused_width(), cfg_.num_classes, crng);
    }

    // Tensors are shared handles, so a copy would alias every parameter.
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;
    Model(Model&&) = default;
    Model& operator=(Model&&) = default;

    const ModelConfig& config() const { return cfg_; }

    /// Diagnostic: replace LH/HL/HH with zeros right after the DWT.
    void set_zero_details(bool on) { zero_details_ = on; }

    BranchFeatures<T> features(const Tensor<T>& image, Mode mode) {
        check_input(image);
        const std::size_t n = image.dim(0);
        Tensor<T> low_in, high_in;
        if (cfg_.ablation.wavelet_front_end) {
            WaveletSubbands<T> sb = haar_dwt2d(image);
            low_in = sb.ll;
            if (cfg_.ablation.hffc) high_in = zero_details_ ? Tensor<T>(sb.ll.shape()) : highfreq_sum(sb);
        } else {
            low_in = image;
            if (cfg_.ablation.hffc) high_in = image;
        }

        BranchFeatures<T> out;
        Tensor<T> x = relu(stem_bn_(stem_(low_in), mode));
        std::size_t a = 0;
        for (std::size_t s = 0; s < stages_.size(); ++s) {
            for (auto& blk : stages_[s]) x = blk(x, mode);
            if (cfg_.ablation.msw_sa && s + 1 < stages_.size()) x = attn_[a++](x, mode);
        }
        out.low = relu(low_proj_(reshape(global_avg_pool(x), Shape{n, x.dim(1)})));

        if (cfg_.ablation.hffc) {
            if (!cfg_.ablation.wavelet_front_end) high_in = pool2d(high_in, PoolKind::avg, 2, 2);
            Tensor<T> h = high_in;
            for (auto& blk : hffc_) h = blk(h, mode);
            out.high = relu(high_proj_(reshape(global_avg_pool(h), Shape{n, h.dim(1)})));
        }
        return out;
    }

    Tensor<T> forward(const Tensor<T>& image, Mode mode) {
        BranchFeatures<T> f = features(image, mode);
        Tensor<T> fused = cfg_.ablation.hffc ? concat(f.low, f.high, 1) : f.low;
        return classifier_(fused);
    }

    /// Every named tensor, trainable parameters and BN running statistics alike.
    template <class F>
    void visit(F&& fn) {
        stem_.visit("stem/conv", fn);
        stem_bn_.visit("stem/bn", fn);
        std::size_t a = 0;
        for (std::size_t s = 0; s < stages_.size(); ++s) {
            for (std::size_t b = 0; b < stages_[s].size(); ++b)
                stages_[s][b].visit("stage" + std::to_string(s + 1) + "/block" + std::to_string(b + 1), fn);
            if (cfg_.ablation.msw_sa && s + 1 < stages_.size()) attn_[a++].visit("msw_sa" + std::to_string(s + 1), fn);
        }
        low_proj_.visit("low_proj", fn);
        for (std::size_t i = 0; i < hffc_.size(); ++i) hffc_[i].visit("hffc" + std::to_string(i + 1), fn);
        if (cfg_.ablation.hffc) high_proj_.visit("high_proj", fn);
        classifier_.visit("classifier", fn);
    }

    std::vector<Parameter<T>> parameters() {
        std::vector<Parameter<T>> ps;
        visit([&](const std::string& name, Tensor<T>& t, bool trainable) {
            if (trainable) ps.push_back({name, t});
        });
        return ps;
    }

    std::size_t parameter_count() {
        std::size_t n = 0;
        for (auto& p : parameters()) n += p.value.numel();
        return n;
    }

    /// Copies the state of another model with an identical layout.
    void copy_state_from(Model& other) {
        std::map<std::string, Tensor<T>*> src;
        other.visit([&](const std::string& name, Tensor<T>& t, bool) { src[name] = &t; });
        visit([&](const std::string& name, Tensor<T>& t, bool) {
            auto it = src.find(name);
            if (it == src.end() || it->second->shape() != t.shape()) {
                throw std::invalid_argument("copy_state_from: layout mismatch at " + name);
            }
            std::copy(it->second->data().begin(), it->second->data().end(), t.data().begin());
        });
    }

private:
    void check_input(const Tensor<T>& image) const {
        if (image.ndim() != 4 || image.dim(1) != cfg_.in_channels || image.dim(2) != cfg_.input_size ||
            image.dim(3) != cfg_.input_size) {
            throw std::invalid_argument("model: expected N×" + std::to_string(cfg_.in_channels) + "×" +
                                        std::to_string(cfg_.input_size) + "×" + std::to_string(cfg_.input_size) +
                                        " input, got " + shape_str(image.shape()));
        }
    }

    ModelConfig cfg_;
    bool zero_details_ = false;
    Conv2d<T> stem_;
    BatchNorm2d<T> stem_bn_;
    std::vector<std::vector<ResidualBlock<T>>> stages_;
    std::vector<MswSa<T>> attn_;
    Linear<T> low_proj_;
    std::vector<HffcBlock<T>> hffc_;
    Linear<T> high_proj_;
    Linear<T> classifier_;
};

}  // namespace wnsf
