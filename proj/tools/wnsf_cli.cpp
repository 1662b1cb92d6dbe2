// wnsf: synthetic data, training, evaluation, noise benchmark, DWT export and
// gradient checks from one binary. Exit codes: 0 ok, 1 runtime failure, 2 usage.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include <wavenet_sf/checkpoint.hpp>
#include <wavenet_sf/data_io.hpp>
#include <wavenet_sf/evalkit.hpp>
#include <wavenet_sf/gradcheck_suite.hpp>
#include <wavenet_sf/model.hpp>
#include <wavenet_sf/run_config.hpp>
#include <wavenet_sf/training.hpp>
#include <wavenet_sf/wavelet.hpp>

namespace fs = std::filesystem;
using namespace wnsf;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

RunConfig config_from(const std::string& path) {
    try {
        return path.empty() ? parse_run_config("") : load_run_config(path);
    } catch (const std::invalid_argument& e) {
        throw UsageError(std::string("config: ") + e.what());
    } catch (const ConfigError& e) {
        throw UsageError(std::string("config: ") + e.what());
    }
}

DatasetManifest manifest_of(const RunConfig& cfg) { return read_manifest(cfg.manifest); }

Model<float> model_from_checkpoint(const RunConfig& cfg, const std::string& path) {
    Model<float> model(cfg.model, cfg.train.seed);
    restore_state(model, load_checkpoint(path));
    return model;
}

void ensure_parent(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

int cmd_synth(const std::string& config, const std::string& out, const std::optional<std::uint64_t>& seed) {
    RunConfig cfg = config_from(config);
    SynthConfig s = cfg.synth();
    if (seed) s.seed = *seed;
    synth_generate(s, out);
    std::cout << (fs::path(out) / "manifest.tsv").string() << "\n";
    return 0;
}

int cmd_train(const std::string& config, const std::string& out) {
    const RunConfig cfg = config_from(config);
    const auto manifest = manifest_of(cfg);
    const auto tr = load_split_unit(manifest, Split::train, cfg.model.input_size);
    const auto va = load_split_unit(manifest, Split::val, cfg.model.input_size);
    Model<float> model(cfg.model, cfg.train.seed);
    std::printf("model: %zu parameters, %zu train / %zu val images\n", model.parameter_count(), tr.labels.size(),
                va.labels.size());
    const auto res = train(model, tr, va, cfg.train, [](const EpochRecord& r) {
        std::printf("epoch %3zu  lr %.3e  train loss %.4f acc %.3f  val loss %.4f acc %.3f\n", r.epoch, r.lr,
                    r.train_loss, r.train_acc, r.val_loss, r.val_acc);
        std::fflush(stdout);
    });
    fs::create_directories(out);
    save_checkpoint(res.best, (fs::path(out) / "best.ckpt").string());
    std::ofstream hist(fs::path(out) / "history.csv");
    write_history_csv(hist, res.history);
    std::printf("best val acc %.4f at epoch %zu; wrote %s\n", res.best_val_acc, res.best_epoch,
                (fs::path(out) / "best.ckpt").string().c_str());
    return 0;
}

int cmd_eval(const std::string& config, const std::string& checkpoint, const std::string& split_name,
             const std::string& out) {
    const RunConfig cfg = config_from(config);
    Split split;
    try {
        split = parse_split(split_name);
    } catch (const std::exception& e) {
        throw UsageError(e.what());
    }
    const auto manifest = manifest_of(cfg);
    Model<float> model = model_from_checkpoint(cfg, checkpoint);
    const auto data = load_split_unit(manifest, split, cfg.model.input_size);
    if (data.labels.empty()) throw std::runtime_error("eval: split " + split_name + " is empty");
    const auto preds = predict_unit(model, data.images);
    const std::size_t k = cfg.model.num_classes;
    const auto cm = confusion(preds, data.labels, k);
    const auto rep = metrics(cm);

    nlohmann::ordered_json j;
    j["split"] = split_name;
    j["samples"] = data.labels.size();
    j["accuracy"] = rep.accuracy;
    j["macro_precision"] = rep.macro_precision;
    j["macro_sensitivity"] = rep.macro_sensitivity;
    j["macro_f1"] = rep.macro_f1;
    auto& per = j["per_class"] = nlohmann::ordered_json::array();
    for (std::size_t c = 0; c < k; ++c) {
        per.push_back({{"class", c < manifest.class_names.size() ? manifest.class_names[c] : std::to_string(c)},
                       {"precision", rep.precision[c]},
                       {"sensitivity", rep.sensitivity[c]},
                       {"f1", rep.f1[c]},
                       {"support", rep.support[c]}});
    }
    fs::create_directories(out);
    std::ofstream(fs::path(out) / "metrics.json") << j.dump(2) << "\n";
    std::ofstream csv(fs::path(out) / "confusion.csv");
    csv << "true\\pred";
    for (std::size_t c = 0; c < k; ++c) csv << "," << per[c]["class"].get<std::string>();
    csv << "\n";
    for (std::size_t r = 0; r < k; ++r) {
        csv << per[r]["class"].get<std::string>();
        for (std::size_t c = 0; c < k; ++c) csv << "," << cm.at(r, c);
        csv << "\n";
    }
    std::printf("%s: accuracy %.4f  macro F1 %.4f (%zu samples)\n", split_name.c_str(), rep.accuracy, rep.macro_f1,
                data.labels.size());
    return 0;
}

int cmd_noise_bench(const std::string& config, const std::string& checkpoint, const std::string& out) {
    const RunConfig cfg = config_from(config);
    const auto manifest = manifest_of(cfg);
    Model<float> model = model_from_checkpoint(cfg, checkpoint);
    const auto data = load_split_unit(manifest, Split::test, cfg.model.input_size);
    if (data.labels.empty()) throw std::runtime_error("noise-bench: test split is empty");
    const auto rows = noise_bench([&](const Tensor<float>& x) { return predict_unit(model, x); }, data.images,
                                  data.labels, cfg.model.num_classes, cfg.psnr_ladder, cfg.noise_seed,
                                  cfg.noise_tol_db);
    ensure_parent(out);
    std::ofstream f(out);
    write_noise_csv(f, rows);
    for (const auto& r : rows) {
        if (r.clean) std::printf("clean               acc %.4f  macro F1 %.4f\n", r.accuracy, r.macro_f1);
        else std::printf("%6.2f dB (%6.3f)  acc %.4f  macro F1 %.4f\n", r.target_db, r.achieved_db, r.accuracy, r.macro_f1);
    }
    return 0;
}

ImageGray to_gray(const Tensor<double>& t, double offset, double scale) {
    ImageGray g{t.dim(3), t.dim(2), {}};
    for (double v : t.values()) g.pixels.push_back(std::uint8_t(std::clamp(std::lround(offset + v * scale), 0L, 255L)));
    return g;
}

int cmd_dwt(const std::string& in, const std::string& out, std::size_t levels, bool reconstruct) {
    if (levels == 0) throw UsageError("dwt: --levels must be >= 1");
    const ImageGray img = read_pgm(in);
    const std::size_t div = std::size_t(1) << levels;
    if (img.width % div || img.height % div) {
        throw std::runtime_error("dwt: image " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                                 " is not divisible by 2^" + std::to_string(levels));
    }
    Tensor<double> x({1, 1, img.height, img.width});
    for (std::size_t i = 0; i < img.pixels.size(); ++i) x[i] = img.pixels[i];
    fs::create_directories(out);
    std::vector<WaveletSubbands<double>> pyramid;
    Tensor<double> ll = x;
    for (std::size_t l = 1; l <= levels; ++l) {
        pyramid.push_back(haar_dwt2d(ll));
        ll = pyramid.back().ll;
        // Orthonormal Haar gains 2 per level on LL; details span ±2^(l-1)·255.
        const double gain = double(std::size_t(1) << l);
        const auto& sb = pyramid.back();
        const std::string suffix = "_l" + std::to_string(l) + ".pgm";
        write_pgm(to_gray(sb.lh, 127.5, 1.0 / gain), (fs::path(out) / ("lh" + suffix)).string());
        write_pgm(to_gray(sb.hl, 127.5, 1.0 / gain), (fs::path(out) / ("hl" + suffix)).string());
        write_pgm(to_gray(sb.hh, 127.5, 1.0 / gain), (fs::path(out) / ("hh" + suffix)).string());
        if (l == levels) write_pgm(to_gray(sb.ll, 0.0, 1.0 / gain), (fs::path(out) / ("ll" + suffix)).string());
    }
    std::printf("wrote %zu subbands of %zux%zu at the coarsest level to %s\n", 3 * levels + 1, ll.dim(3), ll.dim(2),
                out.c_str());
    if (reconstruct) {
        Tensor<double> r = ll;
        for (std::size_t l = levels; l-- > 0;) {
            WaveletSubbands<double> sb = pyramid[l];
            sb.ll = r;
            r = haar_idwt2d(sb);
        }
        write_pgm(to_gray(r, 0.0, 1.0), (fs::path(out) / "reconstructed.pgm").string());
    }
    return 0;
}

int cmd_gradcheck(const std::string& corrupt_op) {
    const auto rows = run_gradcheck_suite(corrupt_op);
    bool ok = true;
    std::map<std::string, double> worst;
    std::printf("%-14s %-28s %-12s %s\n", "module", "op", "max_rel_err", "status");
    for (const auto& r : rows) {
        std::printf("%-14s %-28s %-12.3e %s\n", r.module.c_str(), r.op.c_str(), r.report.max_rel_err,
                    r.report.pass ? "PASS" : "FAIL");
        if (!r.report.pass) {
            ok = false;
            std::fprintf(stderr, "gradcheck FAILED: %s (%s[%zu] analytic %.6g numeric %.6g)\n", r.op.c_str(),
                         r.report.worst_param.c_str(), r.report.worst_index, r.report.analytic, r.report.numeric);
        }
        worst[r.module] = std::max(worst[r.module], r.report.max_rel_err);
    }
    std::printf("\nper-module max relative error:\n");
    for (const auto& [m, e] : worst) std::printf("  %-14s %.3e\n", m.c_str(), e);
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Wavelet spatial-frequency OCT classifier toolkit"};
    app.require_subcommand(1);
    std::string config;

    auto* synth = app.add_subcommand("synth", "Generate the synthetic 8-class dataset and manifest");
    std::string synth_out;
    std::optional<std::uint64_t> synth_seed;
    synth->add_option("--config", config, "Run config (key = value)")->check(CLI::ExistingFile);
    synth->add_option("--out", synth_out, "Output directory")->required();
    synth->add_option("--seed", synth_seed, "Override data.seed");

    auto* tr = app.add_subcommand("train", "Train and keep the best-on-validation checkpoint");
    std::string train_out = "run";
    tr->add_option("--config", config, "Run config (key = value)")->check(CLI::ExistingFile);
    tr->add_option("--out", train_out, "Directory for best.ckpt and history.csv")->capture_default_str();

    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint: metrics.json and confusion.csv");
    std::string ckpt, split = "test", eval_out = "eval";
    ev->add_option("--config", config, "Run config (key = value)")->check(CLI::ExistingFile);
    ev->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
    ev->add_option("--split", split, "train, val or test")->capture_default_str();
    ev->add_option("--out", eval_out, "Output directory")->capture_default_str();

    auto* nb = app.add_subcommand("noise-bench", "Accuracy under calibrated speckle noise on the test split");
    std::string noise_out = "noise.csv";
    nb->add_option("--config", config, "Run config (key = value)")->check(CLI::ExistingFile);
    nb->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
    nb->add_option("--out", noise_out, "CSV path")->capture_default_str();

    auto* dw = app.add_subcommand("dwt", "Export Haar subbands of a PGM image");
    std::string dwt_in, dwt_out;
    std::size_t levels = 1;
    bool reconstruct = false;
    dw->add_option("--in", dwt_in, "Input P5 PGM")->required();
    dw->add_option("--out", dwt_out, "Output directory")->required();
    dw->add_option("--levels", levels, "Decomposition levels")->capture_default_str();
    dw->add_flag("--reconstruct", reconstruct, "Also write the inverse transform as reconstructed.pgm");

    auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable module");
    std::string corrupt;
    gc->add_option("--corrupt-op", corrupt, "Scale one op's analytic gradient (harness self-test)")->group("");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*synth) return cmd_synth(config, synth_out, synth_seed);
        if (*tr) return cmd_train(config, train_out);
        if (*ev) return cmd_eval(config, ckpt, split, eval_out);
        if (*nb) return cmd_noise_bench(config, ckpt, noise_out);
        if (*dw) return cmd_dwt(dwt_in, dwt_out, levels, reconstruct);
        if (*gc) return cmd_gradcheck(corrupt);
    } catch (const UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
