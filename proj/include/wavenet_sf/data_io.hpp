#pragma once

// Grayscale PGM I/O, per-image standardization, dataset manifests, and the
// synthetic 8-class retina-like image generator.

#include <algorithm>
#include <array>
#include <cmath>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace wnsf {

struct ImageGray {
    std::size_t width = 0, height = 0;
    std::vector<std::uint8_t> pixels;  // row-major

    std::uint8_t at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }
};

class PgmError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

class PgmHeaderReader {
public:
    explicit PgmHeaderReader(const std::vector<std::uint8_t>& b) : b_(b) {}

    std::size_t offset() const { return pos_; }

    void skip_space_and_comments() {
        while (pos_ < b_.size()) {
            if (b_[pos_] == '#') {
                while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
            } else if (std::isspace(b_[pos_])) {
                ++pos_;
            } else {
                break;
            }
        }
    }

    std::size_t number(const char* what) {
        skip_space_and_comments();
        const std::size_t start = pos_;
        std::size_t v = 0;
        while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
            v = v * 10 + std::size_t(b_[pos_] - '0');
            if (v > 1u << 24) throw PgmError(std::string("pgm: ") + what + " too large at offset " + std::to_string(start));
            ++pos_;
        }
        if (pos_ == start) throw PgmError(std::string("pgm: expected ") + what + " at offset " + std::to_string(start));
        return v;
    }

    void single_whitespace() {
        if (pos_ >= b_.size() || !std::isspace(b_[pos_])) {
            throw PgmError("pgm: expected whitespace after maxval at offset " + std::to_string(pos_));
        }
        ++pos_;
    }

private:
    const std::vector<std::uint8_t>& b_;
    std::size_t pos_ = 2;
};

}  // namespace detail

inline ImageGray parse_pgm(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P') throw PgmError("pgm: bad magic at offset 0");
    if (bytes[1] != '5') {
        if (bytes[1] >= '1' && bytes[1] <= '7') {
            throw PgmError(std::string("pgm: unsupported variant P") + char(bytes[1]) + " at offset 0 (only binary P5)");
        }
        throw PgmError("pgm: bad magic at offset 0");
    }
    detail::PgmHeaderReader r(bytes);
    ImageGray img;
    img.width = r.number("width");
    img.height = r.number("height");
    const std::size_t maxval_at = r.offset();
    const std::size_t maxval = r.number("maxval");
    if (maxval == 0 || maxval > 255) {
        throw PgmError("pgm: maxval " + std::to_string(maxval) + " unsupported (1..255) near offset " + std::to_string(maxval_at));
    }
    if (img.width == 0 || img.height == 0) throw PgmError("pgm: zero image dimension");
    r.single_whitespace();
    const std::size_t need = img.width * img.height, have = bytes.size() - r.offset();
    if (have < need) {
        throw PgmError("pgm: truncated payload at offset " + std::to_string(r.offset()) + ": need " + std::to_string(need) +
                       " bytes, have " + std::to_string(have));
    }
    img.pixels.assign(bytes.begin() + static_cast<long>(r.offset()), bytes.begin() + static_cast<long>(r.offset() + need));
    return img;
}

inline std::vector<std::uint8_t> encode_pgm(const ImageGray& img) {
    if (img.pixels.size() != img.width * img.height) throw PgmError("pgm: pixel count does not match dimensions");
    const std::string header = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), img.pixels.begin(), img.pixels.end());
    return out;
}

inline ImageGray read_pgm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw PgmError("pgm: cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    try {
        return parse_pgm(bytes);
    } catch (const PgmError& e) {
        throw PgmError(std::string(e.what()) + " in " + path);
    }
}

inline void write_pgm(const ImageGray& img, const std::string& path) {
    const auto bytes = encode_pgm(img);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw PgmError("pgm: cannot open " + path + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw PgmError("pgm: write failed for " + path);
}

/// Bilinear resize (pixel-center aligned, edge clamped) to size×size with
/// intensities scaled to [0, 1]. Returns 1×1×size×size.
inline Tensor<float> to_unit_tensor(const ImageGray& img, std::size_t size) {
    Tensor<float> out({1, 1, size, size});
    const double sy = double(img.height) / double(size), sx = double(img.width) / double(size);
    auto px = [&](std::size_t x, std::size_t y) { return double(img.at(x, y)) / 255.0; };
    for (std::size_t y = 0; y < size; ++y) {
        const double fy = std::clamp((double(y) + 0.5) * sy - 0.5, 0.0, double(img.height - 1));
        const std::size_t y0 = std::size_t(fy), y1 = std::min(y0 + 1, img.height - 1);
        const double wy = fy - double(y0);
        for (std::size_t x = 0; x < size; ++x) {
            const double fx = std::clamp((double(x) + 0.5) * sx - 0.5, 0.0, double(img.width - 1));
            const std::size_t x0 = std::size_t(fx), x1 = std::min(x0 + 1, img.width - 1);
            const double wx = fx - double(x0);
            const double top = px(x0, y0) * (1 - wx) + px(x1, y0) * wx;
            const double bot = px(x0, y1) * (1 - wx) + px(x1, y1) * wx;
            out[y * size + x] = static_cast<float>(top * (1 - wy) + bot * wy);
        }
    }
    return out;
}

/// Per-image zero mean / unit variance over every sample of an N×... batch.
/// Variances below 1e-6 are floored, so constant images map to zeros.
inline Tensor<float> standardize_batch(const Tensor<float>& batch) {
    Tensor<float> out = batch.detach();
    const std::size_t n = batch.dim(0), per = batch.numel() / n;
    for (std::size_t i = 0; i < n; ++i) {
        auto s = out.data().subspan(i * per, per);
        double mean = 0;
        for (float v : s) mean += v;
        mean /= double(per);
        double var = 0;
        for (float v : s) var += (v - mean) * (v - mean);
        var /= double(per);
        const double inv = 1.0 / std::sqrt(std::max(var, 1e-6));
        for (float& v : s) v = static_cast<float>((v - mean) * inv);
    }
    return out;
}

inline Tensor<float> standardize(const ImageGray& img, std::size_t size) { return standardize_batch(to_unit_tensor(img, size)); }

// ---------------------------------------------------------------------------
// Manifests

enum class Split { train, val, test };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

inline Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw std::invalid_argument("unknown split '" + s + "' (expected train, val or test)");
}

struct ManifestEntry {
    std::string path;  // relative to the manifest directory
    int label = 0;
    Split split = Split::train;
};

struct DatasetManifest {
    std::string root;
    std::vector<std::string> class_names;
    std::vector<ManifestEntry> entries;
};

inline void write_manifest(const DatasetManifest& m, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f << "# classes: ";
    for (std::size_t i = 0; i < m.class_names.size(); ++i) f << (i ? "," : "") << m.class_names[i];
    f << '\n';
    for (const auto& e : m.entries) f << e.path << '\t' << e.label << '\t' << split_name(e.split) << '\n';
}

inline DatasetManifest read_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open manifest " + path);
    DatasetManifest m;
    m.root = std::filesystem::path(path).parent_path().string();
    std::string line;
    std::size_t lineno = 0;
    const std::string header = "# classes: ";
    while (std::getline(f, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line.rfind(header, 0) == 0) {
            std::stringstream ss(line.substr(header.size()));
            std::string name;
            while (std::getline(ss, name, ',')) m.class_names.push_back(name);
            continue;
        }
        if (line[0] == '#') continue;
        std::stringstream ss(line);
        ManifestEntry e;
        std::string label, split;
        if (!std::getline(ss, e.path, '\t') || !std::getline(ss, label, '\t') || !std::getline(ss, split)) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected path<TAB>class<TAB>split");
        }
        try {
            e.label = std::stoi(label);
            e.split = parse_split(split);
        } catch (const std::exception& ex) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + ex.what());
        }
        m.entries.push_back(e);
    }
    if (m.class_names.empty()) throw std::runtime_error(path + ": missing '# classes:' header");
    for (const auto& e : m.entries) {
        if (e.label < 0 || std::size_t(e.label) >= m.class_names.size()) {
            throw std::runtime_error(path + ": class index " + std::to_string(e.label) + " outside [0, " +
                                     std::to_string(m.class_names.size()) + ")");
        }
    }
    return m;
}

struct SplitCounts {
    std::size_t train = 0, val = 0, test = 0;
};

/// val and test take floor(ratio·n); the remainder goes to train.
inline SplitCounts split_counts(std::size_t n, double val_ratio, double test_ratio) {
    if (val_ratio < 0 || test_ratio < 0 || val_ratio + test_ratio >= 1) {
        throw std::invalid_argument("split ratios must be nonnegative and leave room for a train split");
    }
    SplitCounts c;
    c.val = std::size_t(std::floor(double(n) * val_ratio + 1e-9));
    c.test = std::size_t(std::floor(double(n) * test_ratio + 1e-9));
    c.train = n - c.val - c.test;
    return c;
}

/// Assigns splits to `entries` by a seeded shuffle: the first `test` shuffled
/// positions become test, the next `val` become val, the rest train.
inline void assign_splits(std::vector<ManifestEntry>& entries, double val_ratio, double test_ratio, std::uint64_t seed) {
    const SplitCounts c = split_counts(entries.size(), val_ratio, test_ratio);
    std::vector<std::size_t> order(entries.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);
    for (std::size_t i = 0; i < order.size(); ++i) {
        entries[order[i]].split = i < c.test ? Split::test : (i < c.test + c.val ? Split::val : Split::train);
    }
}

struct SplitData {
    Tensor<float> images;  // N×1×S×S, intensities in [0, 1]
    std::vector<int> labels;
};

/// Split images resized to input_size with unit-range intensities, in manifest order.
inline SplitData load_split_unit(const DatasetManifest& m, Split split, std::size_t input_size) {
    std::vector<const ManifestEntry*> sel;
    for (const auto& e : m.entries)
        if (e.split == split) sel.push_back(&e);
    if (sel.empty()) throw std::runtime_error(std::string("split '") + split_name(split) + "' is empty");
    SplitData d;
    d.images = Tensor<float>({sel.size(), 1, input_size, input_size});
    const std::size_t plane = input_size * input_size;
    for (std::size_t i = 0; i < sel.size(); ++i) {
        const std::string full = (std::filesystem::path(m.root) / sel[i]->path).string();
        if (!std::filesystem::exists(full)) throw std::runtime_error("missing image file " + full);
        const Tensor<float> t = to_unit_tensor(read_pgm(full), input_size);
        std::copy(t.data().begin(), t.data().end(), d.images.data().begin() + static_cast<long>(i * plane));
        d.labels.push_back(sel[i]->label);
    }
    return d;
}

/// Same as load_split_unit followed by per-image standardization.
inline SplitData load_split(const DatasetManifest& m, Split split, std::size_t input_size) {
    SplitData d = load_split_unit(m, split, input_size);
    d.images = standardize_batch(d.images);
    return d;
}

// ---------------------------------------------------------------------------
// Synthetic generator

inline const std::array<const char*, 8>& synth_class_names() {
    static const std::array<const char*, 8> names{"AMD", "CNV", "CSR", "DME", "DR", "DRUSEN", "MH", "NORMAL"};
    return names;
}

struct SynthConfig {
    std::size_t size = 64;
    std::size_t per_class = 16;
    std::uint64_t seed = 1;
    double val_ratio = 0.15;
    double test_ratio = 0.15;
};

namespace detail {

struct Canvas {
    std::size_t n;
    std::vector<double> v;
    explicit Canvas(std::size_t size, double fill) : n(size), v(size * size, fill) {}
    double& at(std::size_t x, std::size_t y) { return v[y * n + x]; }
};

// Soft inside-test for an axis-aligned ellipse, 1 at the center fading to 0 over ~1 px at the rim.
inline double ellipse_cover(double x, double y, double cx, double cy, double rx, double ry) {
    const double d = std::sqrt((x - cx) * (x - cx) / (rx * rx) + (y - cy) * (y - cy) / (ry * ry));
    const double edge = 1.0 / std::min(rx, ry);
    return std::clamp((1.0 - d) / edge + 0.5, 0.0, 1.0);
}

}  // namespace detail

/// One synthetic image of class `cls` (index into synth_class_names()).
inline ImageGray synth_image(std::size_t cls, std::size_t size, Rng& rng) {
    if (size < 32 || size % 2) throw std::invalid_argument("synth: size must be even and >= 32");
    if (cls >= 8) throw std::invalid_argument("synth: class index out of range");
    const double S = double(size);
    const double two_pi = 2 * std::numbers::pi;
    const std::string name = synth_class_names()[cls];

    // Retinal band between two smooth boundaries.
    const double top0 = S * rng.uniform(0.32, 0.42);
    const double amp1 = S * rng.uniform(0.01, 0.035), f1 = rng.uniform(0.4, 1.2), ph1 = rng.uniform(0, two_pi);
    const double thick = S * rng.uniform(0.18, 0.24);
    const double amp2 = S * rng.uniform(0.005, 0.02), f2 = rng.uniform(0.5, 1.5), ph2 = rng.uniform(0, two_pi);
    const double band_level = rng.uniform(150, 190);
    std::vector<double> top(size), bot(size);
    for (std::size_t x = 0; x < size; ++x) {
        const double u = double(x) / S;
        top[x] = top0 + amp1 * std::sin(two_pi * f1 * u + ph1);
        bot[x] = top[x] + thick + amp2 * std::sin(two_pi * f2 * u + ph2);
    }

    const double cx = S * rng.uniform(0.35, 0.65);
    if (name == "CSR") {
        const double h = S * rng.uniform(0.08, 0.12), w = S * rng.uniform(0.10, 0.16);
        for (std::size_t x = 0; x < size; ++x) {
            const double lift = h * std::exp(-0.5 * std::pow((double(x) - cx) / w, 2));
            top[x] -= lift;
            bot[x] -= lift;
        }
    } else if (name == "AMD") {
        const double extra = S * rng.uniform(0.05, 0.08), a = S * rng.uniform(0.025, 0.04);
        const double f = rng.uniform(2.5, 4.0), ph = rng.uniform(0, two_pi);
        for (std::size_t x = 0; x < size; ++x) bot[x] += extra + a * std::sin(two_pi * f * double(x) / S + ph);
    }

    detail::Canvas c(size, 0.0);
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
            const double yy = double(y) + 0.5;
            const double in_top = std::clamp(yy - top[x] + 0.5, 0.0, 1.0);
            const double in_bot = std::clamp(bot[x] - yy + 0.5, 0.0, 1.0);
            const double depth = std::clamp((yy - top[x]) / std::max(1.0, bot[x] - top[x]), 0.0, 1.0);
            const double level = band_level * (0.85 + 0.3 * depth);
            c.at(x, y) = 18.0 + (level - 18.0) * in_top * in_bot;
        }

    auto paint_ellipse = [&](double ex, double ey, double rx, double ry, double value) {
        for (std::size_t y = 0; y < size; ++y)
            for (std::size_t x = 0; x < size; ++x) {
                const double w = detail::ellipse_cover(double(x) + 0.5, double(y) + 0.5, ex, ey, rx, ry);
                if (w > 0) c.at(x, y) = c.at(x, y) * (1 - w) + value * w;
            }
    };
    const std::size_t ix = std::min(size - 1, std::size_t(cx));

    if (name == "MH") {
        const double half = S * rng.uniform(0.05, 0.07);
        for (std::size_t y = 0; y < size; ++y)
            for (std::size_t x = 0; x < size; ++x) {
                const double yy = double(y) + 0.5;
                // V-shaped opening, widest at the top of the band
                const double frac = std::clamp((bot[ix] - yy) / std::max(1.0, bot[ix] - top[ix]), 0.0, 1.0);
                const double w = half * (0.35 + 0.65 * frac);
                const double cover = std::clamp(w - std::abs(double(x) + 0.5 - cx) + 0.5, 0.0, 1.0);
                if (yy > top[x] - 1 && yy < bot[x] - 0.15 * (bot[x] - top[x])) c.at(x, y) = c.at(x, y) * (1 - cover) + 18.0 * cover;
            }
    } else if (name == "DRUSEN") {
        const std::size_t bumps = 3 + rng.below(3);
        for (std::size_t b = 0; b < bumps; ++b) {
            const double bx = S * rng.uniform(0.12, 0.88);
            const double r = S * rng.uniform(0.03, 0.05);
            const std::size_t bxi = std::min(size - 1, std::size_t(bx));
            paint_ellipse(bx, bot[bxi] - 0.2 * r, r, 0.8 * r, 235.0);
        }
    } else if (name == "DME") {
        const double ey = 0.5 * (top[ix] + bot[ix]);
        paint_ellipse(cx, ey, S * rng.uniform(0.08, 0.12), 0.3 * (bot[ix] - top[ix]), 35.0);
    } else if (name == "CNV") {
        const double by = bot[ix] + S * rng.uniform(0.05, 0.08);
        for (int k = 0; k < 3; ++k) {
            paint_ellipse(cx + S * rng.uniform(-0.06, 0.06), by + S * rng.uniform(-0.03, 0.03), S * rng.uniform(0.035, 0.06),
                          S * rng.uniform(0.025, 0.045), 230.0);
        }
    } else if (name == "DR") {
        const std::size_t dots = 8 + rng.below(7);
        for (std::size_t d = 0; d < dots; ++d) {
            const double dx = S * rng.uniform(0.08, 0.92);
            const std::size_t dxi = std::min(size - 1, std::size_t(dx));
            const double dy = top[dxi] + (bot[dxi] - top[dxi]) * rng.uniform(0.2, 0.8);
            const double r = S * rng.uniform(0.015, 0.025);
            paint_ellipse(dx, dy, r, r, 40.0);
        }
    }

    ImageGray img;
    img.width = img.height = size;
    img.pixels.resize(size * size);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        const double textured = c.v[i] * (1.0 + 0.08 * rng.normal()) + 4.0 * rng.normal();
        img.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(textured), 0L, 255L));
    }
    return img;
}

/// Writes per_class images for each of the 8 classes under out_dir/<CLASS>/
/// plus out_dir/manifest.tsv, and returns the manifest.
inline DatasetManifest synth_generate(const SynthConfig& cfg, const std::string& out_dir) {
    namespace fs = std::filesystem;
    if (cfg.per_class == 0) throw std::invalid_argument("synth: per_class must be positive");
    fs::create_directories(out_dir);
    DatasetManifest m;
    m.root = out_dir;
    for (const char* n : synth_class_names()) m.class_names.push_back(n);
    Rng root(cfg.seed);
    for (std::size_t c = 0; c < 8; ++c) {
        const std::string cname = synth_class_names()[c];
        fs::create_directories(fs::path(out_dir) / cname);
        for (std::size_t i = 0; i < cfg.per_class; ++i) {
            Rng rng = root.fork((std::uint64_t(c) << 32) | i);
            char file[64];
            std::snprintf(file, sizeof file, "%s_%04zu.pgm", cname.c_str(), i);
            const std::string rel = cname + "/" + file;
            write_pgm(synth_image(c, cfg.size, rng), (fs::path(out_dir) / rel).string());
            m.entries.push_back({rel, int(c), Split::train});
        }
    }
    assign_splits(m.entries, cfg.val_ratio, cfg.test_ratio, root.fork(0xC0FFEE).next_u64());
    write_manifest(m, (fs::path(out_dir) / "manifest.tsv").string());
    return m;
}

}  // namespace wnsf
