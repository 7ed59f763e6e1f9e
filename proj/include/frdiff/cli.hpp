#pragma once

// Command layer behind the `frdiff` executable. Kept in a header so tests can drive
// commands in-process; needs CLI11 on the include path.

#include <CLI11.hpp>

#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "frdiff.hpp"

namespace frdiff::cli {

namespace fs = std::filesystem;

inline int exit_code(ErrorKind k) {
    switch (k) {
        case ErrorKind::usage: return 1;
        case ErrorKind::data: return 2;
        case ErrorKind::numeric: return 3;
        case ErrorKind::io: return 4;
    }
    return 2;
}

/// Reproducibility header: command, resolved settings, seed.
inline void print_header(std::ostream& out, const std::string& cmd,
                         const std::vector<std::pair<std::string, std::string>>& settings,
                         std::optional<std::uint64_t> seed) {
    out << "# frdiff " << cmd << "\n";
    for (const auto& [k, v] : settings) out << "# " << k << " = " << v << "\n";
    if (seed) out << "# seed = " << *seed << "\n";
    out.flush();
}

inline std::string config_comment(const TrainConfig& c) {
    std::istringstream in(serialize_config(c));
    std::string line, out;
    while (std::getline(in, line)) out += "# " + line + "\n";
    return out;
}

inline std::vector<Tensor3<float>> load_all(const std::vector<fs::path>& paths) {
    std::vector<Tensor3<float>> out;
    out.reserve(paths.size());
    for (const auto& p : paths) out.push_back(load_tensor<float>(p));
    return out;
}

/// Pairs files of two directories by file name; every name must exist in both.
inline std::vector<std::pair<fs::path, fs::path>> pair_by_name(const fs::path& a, const fs::path& b) {
    const auto la = list_images(a), lb = list_images(b);
    if (la.empty()) throw DataError(concat("no images in ", a.string()));
    std::map<std::string, fs::path> names;
    for (const auto& p : lb) names[p.filename().string()] = p;
    std::vector<std::pair<fs::path, fs::path>> out;
    for (const auto& p : la) {
        auto it = names.find(p.filename().string());
        if (it == names.end()) throw DataError(concat(p.filename().string(), " has no counterpart in ", b.string()));
        out.emplace_back(p, it->second);
        names.erase(it);
    }
    if (!names.empty())
        throw DataError(concat(names.begin()->first, " in ", b.string(), " has no counterpart in ", a.string()));
    return out;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

struct SynthArgs {
    std::string out;
    int scenes = 64, size = 64;
    std::uint64_t seed = 0;
};

inline int cmd_synth(const SynthArgs& a, std::ostream& out) {
    print_header(out, "synth", {{"out", a.out}, {"scenes", std::to_string(a.scenes)}, {"size", std::to_string(a.size)}},
                 a.seed);
    const DatasetIndex idx = make_toy_dataset(a.out, a.seed, a.scenes, a.size);
    const Bytes manifest = read_file(idx.root / "manifest.csv");
    out << std::string(manifest.begin(), manifest.end());
    return 0;
}

struct SwapArgs {
    std::string content, donor, out;
};

inline int cmd_swap(const SwapArgs& a, std::ostream& out) {
    print_header(out, "swap", {{"content", a.content}, {"donor", a.donor}, {"out", a.out}}, std::nullopt);
    const auto c = load_tensor<double>(a.content);
    const auto d = load_tensor<double>(a.donor);
    save_tensor(swap_amplitude(c, d), a.out);
    out << "wrote " << a.out << "\n";
    return 0;
}

struct DcStatsArgs {
    std::string hazy, clear, synclear = "on", out, hist;
    int patch = 15;
};

inline int cmd_dcstats(const DcStatsArgs& a, std::ostream& out) {
    const bool with_syn = a.synclear == "on";
    const std::string hist = a.hist.empty() ? (fs::path(a.out).replace_extension("").string() + "_hist.csv") : a.hist;
    print_header(out, "dcstats",
                 {{"hazy", a.hazy}, {"clear", a.clear}, {"synclear", a.synclear}, {"patch", std::to_string(a.patch)},
                  {"out", a.out}, {"hist", hist}},
                 std::nullopt);
    const auto pairs = pair_by_name(a.hazy, a.clear);
    std::vector<Tensor3<float>> hz, cl;
    std::vector<std::string> names;
    for (const auto& [h, c] : pairs) {
        hz.push_back(load_tensor<float>(h));
        cl.push_back(load_tensor<float>(c));
        names.push_back(h.filename().string());
    }
    const SwapExperimentReport rep = swap_experiment(hz, cl, a.patch, with_syn, names);
    write_text_atomic(a.out, swap_rows_csv(rep));
    write_text_atomic(hist, swap_histogram_csv(rep));
    out << "pairs = " << rep.rows.size() << "\n";
    if (with_syn) out << "closeness_fraction = " << format_metric(rep.closeness_fraction()) << "\n";
    out << "below25_hazy = " << format_metric(rep.below_fraction(rep.below_hazy)) << "\n";
    out << "below25_clear = " << format_metric(rep.below_fraction(rep.below_clear)) << "\n";
    if (with_syn) out << "below25_synclear = " << format_metric(rep.below_fraction(rep.below_synclear)) << "\n";
    return 0;
}

struct TrainArgs {
    int stage = 1;
    std::string config, init, out, log;
    std::uint64_t seed = 0;
};

inline int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
    if (a.stage == 2 && a.init.empty()) throw UsageError("stage 2 requires --init <stage-1 checkpoint>");
    if (a.stage == 1 && !a.init.empty()) throw UsageError("--init is only valid with --stage 2");
    TrainConfig cfg = load_config(a.config);
    cfg.stage = a.stage;
    cfg.seed = a.seed;
    if (!a.out.empty()) cfg.out = a.out;
    if (!a.log.empty()) cfg.log = a.log;
    if (cfg.data_root.empty()) throw UsageError(concat(a.config, ": data_root is not set"));
    validate(cfg);
    print_header(out, "train", {{"config", a.config}, {"init", a.init.empty() ? "-" : a.init}}, std::nullopt);
    out << config_comment(cfg);
    out.flush();

    std::optional<Checkpoint> init;
    if (!a.init.empty()) init = load_checkpoint(a.init);
    const DatasetIndex idx = index_dataset(cfg.data_root);
    const ImagePool hazy = ImagePool::load(idx.hazy_paths);
    const ImagePool clear = ImagePool::load(idx.clear_paths);

    std::vector<StepLog> log;
    TrainHooks hooks;
    hooks.on_step = [&](const StepLog& row) { log.push_back(row); };
    hooks.on_epoch_end = [&](int epoch, const Checkpoint& ck) {
        save_checkpoint(ck, cfg.out);
        write_text_atomic(cfg.log, loss_csv(log));
        double total = 0, diff = 0;
        int n = 0;
        for (const auto& r : log)
            if (r.epoch == epoch) total += r.total, diff += r.diff, ++n;
        out << "epoch " << epoch + 1 << "/" << cfg.epochs << " loss " << format_metric(total / n);
        if (cfg.stage == 2) out << " l_diff " << format_metric(diff / n);
        out << "\n";
        out.flush();
    };
    try {
        train_stage<float>(cfg, hazy, clear, init ? &*init : nullptr, hooks);
    } catch (const TrainingAborted& e) {
        write_text_atomic(cfg.log, loss_csv(e.log));
        err << "error: " << e.what() << "\n";
        if (fs::exists(cfg.out)) err << "last good checkpoint: " << cfg.out << "\n";
        return exit_code(ErrorKind::numeric);
    }
    out << "checkpoint " << cfg.out << "\nlog " << cfg.log << "\n";
    return 0;
}

struct DehazeArgs {
    std::string ckpt, in, out;
    std::uint64_t seed = 0;
};

inline int cmd_dehaze(const DehazeArgs& a, std::ostream& out) {
    print_header(out, "dehaze", {{"ckpt", a.ckpt}, {"in", a.in}, {"out", a.out}}, a.seed);
    const FrDiffModel<float> m = model_from_checkpoint<float>(load_checkpoint(a.ckpt));
    const auto paths = list_images(a.in);
    if (paths.empty()) throw DataError(concat("no images in ", a.in));
    const auto inputs = load_all(paths);
    const auto outputs = parallel_map<Tensor3<float>>(
        inputs.size(), [&](std::size_t i) { return infer(m, inputs[i], item_seed(a.seed, i)); });
    ensure_directory(a.out);
    for (std::size_t i = 0; i < paths.size(); ++i) save_tensor(outputs[i], fs::path(a.out) / paths[i].filename());
    out << "dehazed " << paths.size() << " images into " << a.out << "\n";
    return 0;
}

struct EvalArgs {
    std::string pred, ref, out;
};

inline int cmd_eval(const EvalArgs& a, std::ostream& out) {
    print_header(out, "eval", {{"pred", a.pred}, {"ref", a.ref}, {"out", a.out}}, std::nullopt);
    const auto pairs = pair_by_name(a.pred, a.ref);
    struct Row {
        double p, s;
    };
    const auto rows = parallel_map<Row>(pairs.size(), [&](std::size_t i) {
        const auto x = load_tensor<double>(pairs[i].first), y = load_tensor<double>(pairs[i].second);
        if (!x.same_shape(y))
            throw ShapeError(concat(pairs[i].first.filename().string(), ": prediction ", x.shape_str(),
                                    " vs reference ", y.shape_str()));
        return Row{psnr(x, y), ssim(x, y)};
    });
    std::ostringstream csv;
    csv << "file,psnr,ssim\n";
    double mp = 0, ms = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        csv << pairs[i].first.filename().string() << "," << format_metric(rows[i].p) << ","
            << format_metric(rows[i].s) << "\n";
        mp += rows[i].p / static_cast<double>(rows.size());
        ms += rows[i].s / static_cast<double>(rows.size());
    }
    write_text_atomic(a.out, csv.str());
    out << "images = " << rows.size() << "\nmean_psnr = " << format_metric(mp) << "\nmean_ssim = " << format_metric(ms)
        << "\n";
    return 0;
}

inline int cmd_gradcheck(std::uint64_t seed, std::ostream& out) {
    print_header(out, "gradcheck", {}, seed);
    bool ok = true;
    for (const auto& e : run_gradient_suite(seed)) {
        out << (e.pass() ? "PASS " : "FAIL ") << std::left << std::setw(48) << e.name << " rel_err "
            << std::scientific << std::setprecision(3) << e.max_rel_error << " tol " << e.tolerance
            << std::defaultfloat << "  (" << e.checked << " probes";
        if (e.skipped) out << ", " << e.skipped << " at kinks";
        out << ")\n";
        ok = ok && e.pass();
    }
    if (!ok) throw NumericError("gradient check failed");
    return 0;
}

struct SweepArgs {
    std::string config, eval, out;
    std::uint64_t seed = 0;
    int epochs = 0;
    std::vector<double> values{0.1, 1.0, 10.0};
};

inline int cmd_sweep(const SweepArgs& a, std::ostream& out) {
    TrainConfig cfg = load_config(a.config);
    cfg.seed = a.seed;
    if (a.epochs > 0) cfg.epochs = a.epochs;
    if (cfg.data_root.empty()) throw UsageError(concat(a.config, ": data_root is not set"));
    validate(cfg);
    std::string vals;
    for (double v : a.values) vals += (vals.empty() ? "" : ",") + format_metric(v);
    print_header(out, "sweep", {{"config", a.config}, {"eval", a.eval}, {"out", a.out}, {"values", vals}},
                 std::nullopt);
    out << config_comment(cfg);
    const DatasetIndex idx = index_dataset(cfg.data_root);
    const ImagePool hazy = ImagePool::load(idx.hazy_paths), clear = ImagePool::load(idx.clear_paths);
    std::vector<Tensor3<float>> eh, er;
    for (const auto& [h, r] : pair_by_name(fs::path(a.eval) / "hazy", fs::path(a.eval) / "reference")) {
        eh.push_back(load_tensor<float>(h));
        er.push_back(load_tensor<float>(r));
    }
    const auto rows = run_lambda_sweep<float>(cfg, hazy, clear, eh, er, a.values, [&](const SweepRow& r) {
        out << r.weight << " = " << format_metric(r.value) << ": psnr " << format_metric(r.psnr) << " ssim "
            << format_metric(r.ssim) << "\n";
        out.flush();
    });
    write_text_atomic(a.out, sweep_csv(rows));
    for (const auto& line : sweep_orderings(rows)) out << line << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

inline int run(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"frdiff: frequency-domain unpaired dehazing toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "frdiff 1.0.0");

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "Generate a seeded toy hazy/clear dataset");
    s->add_option("--out", synth.out, "Output directory")->required();
    s->add_option("--scenes", synth.scenes, "Number of scenes")->check(CLI::Range(2, 100000));
    s->add_option("--size", synth.size, "Image side length")->check(CLI::Range(8, 4096));
    s->add_option("--seed", synth.seed, "Random seed")->required();

    SwapArgs swap;
    auto* w = app.add_subcommand("swap", "Put the donor's amplitude spectrum under the content's phase");
    w->add_option("--content", swap.content, "Image supplying the phase")->required();
    w->add_option("--donor", swap.donor, "Image supplying the amplitude")->required();
    w->add_option("--out", swap.out, "Output image (.png or .ppm)")->required();

    DcStatsArgs dc;
    auto* d = app.add_subcommand("dcstats", "Dark-channel statistics of hazy, clear and amplitude-swapped images");
    d->add_option("--hazy", dc.hazy, "Hazy image directory")->required();
    d->add_option("--clear", dc.clear, "Paired clear image directory")->required();
    d->add_option("--synclear", dc.synclear, "Include amplitude-swapped images")->check(CLI::IsMember({"on", "off"}));
    d->add_option("--patch", dc.patch, "Dark-channel window (odd)")->check(CLI::Range(1, 255));
    d->add_option("--out", dc.out, "Per-pair CSV")->required();
    d->add_option("--hist", dc.hist, "Histogram CSV (default: <out>_hist.csv)");

    TrainArgs train;
    auto* t = app.add_subcommand("train", "Train one stage");
    t->add_option("--stage", train.stage, "1 or 2")->required()->check(CLI::IsMember({1, 2}));
    t->add_option("--config", train.config, "Config file")->required();
    t->add_option("--init", train.init, "Stage-1 checkpoint (stage 2 only)");
    t->add_option("--seed", train.seed, "Random seed")->required();
    t->add_option("--out", train.out, "Checkpoint path (overrides config)");
    t->add_option("--log", train.log, "Loss log CSV (overrides config)");

    DehazeArgs dh;
    auto* h = app.add_subcommand("dehaze", "Dehaze a directory of images with a stage-2 checkpoint");
    h->add_option("--ckpt", dh.ckpt, "Checkpoint")->required();
    h->add_option("--in", dh.in, "Input directory")->required();
    h->add_option("--out", dh.out, "Output directory")->required();
    h->add_option("--seed", dh.seed, "Random seed")->required();

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "PSNR/SSIM of predictions against references (matched by file name)");
    e->add_option("--pred", ev.pred, "Prediction directory")->required();
    e->add_option("--ref", ev.ref, "Reference directory")->required();
    e->add_option("--out", ev.out, "CSV output")->required();

    std::uint64_t gc_seed = 20240611;
    auto* g = app.add_subcommand("gradcheck", "Run the double-precision gradient suite");
    g->add_option("--seed", gc_seed, "Random seed for the probes");

    SweepArgs sw;
    auto* p = app.add_subcommand("sweep", "Loss-weight sweep: vary each lambda over a grid, train, evaluate");
    p->add_option("--config", sw.config, "Base config file")->required();
    p->add_option("--eval", sw.eval, "Held-out dataset root (hazy/ and reference/)")->required();
    p->add_option("--out", sw.out, "CSV output")->required();
    p->add_option("--seed", sw.seed, "Random seed")->required();
    p->add_option("--epochs", sw.epochs, "Epochs per stage (overrides config)")->check(CLI::PositiveNumber);
    p->add_option("--values", sw.values, "Grid values")->delimiter(',');

    try {
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::ParseError& ex) {
        const int rc = app.exit(ex, out, err);
        return rc == 0 ? 0 : exit_code(ErrorKind::usage);
    }

    try {
        if (*s) return cmd_synth(synth, out);
        if (*w) return cmd_swap(swap, out);
        if (*d) return cmd_dcstats(dc, out);
        if (*t) return cmd_train(train, out, err);
        if (*h) return cmd_dehaze(dh, out);
        if (*e) return cmd_eval(ev, out);
        if (*g) return cmd_gradcheck(gc_seed, out);
        if (*p) return cmd_sweep(sw, out);
    } catch (const Error& ex) {
        err << "error: " << ex.what() << "\n";
        return exit_code(ex.kind());
    } catch (const std::bad_alloc&) {
        err << "error: out of memory\n";
        return exit_code(ErrorKind::io);
    } catch (const fs::filesystem_error& ex) {
        err << "error: " << ex.what() << "\n";
        return exit_code(ErrorKind::io);
    }
    return exit_code(ErrorKind::usage);
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    return run(std::vector<std::string>(argv + 1, argv + argc), out, err);
}

} // namespace frdiff::cli
