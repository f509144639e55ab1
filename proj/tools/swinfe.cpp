// swinfe command-line entry point.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime or
// numeric failure (including failed gradient checks).

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "swinfe/swinfe.hpp"

namespace fs = std::filesystem;
using namespace swinfe;

namespace {

constexpr int kUsageError = 1;
constexpr int kRuntimeError = 2;

struct CommonArgs {
    std::string config;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::string out;
};

void add_common(CLI::App* cmd, CommonArgs& a, bool needs_out) {
    cmd->add_option("--config", a.config, "key=value config file (defaults apply to missing keys)");
    cmd->add_option("--set", a.sets, "override KEY=VALUE (repeatable)")->take_all();
    cmd->add_option("--seed", a.seed, "shorthand for --set run.seed=N");
    auto* out = cmd->add_option("--out", a.out, "output directory");
    if (needs_out) out->required();
}

RunConfig resolve(const CommonArgs& a) {
    RunConfig rc = a.config.empty() ? RunConfig{} : RunConfig::from_file(a.config);
    for (const auto& s : a.sets) rc.set_assignment(s);
    if (a.seed) rc.set("run.seed", std::to_string(*a.seed));
    return rc;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << text;
    if (!f) throw std::runtime_error("write failed: " + path.string());
}

fs::path prepare_out(const std::string& out, const RunConfig& rc) {
    fs::path dir(out);
    fs::create_directories(dir);
    write_text(dir / "config.txt", rc.dump());
    return dir;
}

int cmd_train(const CommonArgs& a, const std::string& resume) {
    const RunConfig rc = resolve(a);
    const RunSetup setup = RunSetup::from(rc);
    const fs::path dir = prepare_out(a.out, rc);
    Detector<float> det(setup.model, setup.train.seed);
    AdamW<float> opt(setup.optim);
    if (!resume.empty()) load_checkpoint(resume, det.params, &opt);
    SampleCache data(setup.data);

    std::ofstream log(dir / "loss.tsv", std::ios::binary | std::ios::trunc);
    if (!log) throw std::runtime_error("cannot write " + (dir / "loss.tsv").string());
    TrainHooks hooks;
    hooks.on_log = [&](const LossRecord& r) {
        log << format_loss_line(r);
        log.flush();
        if (r.step % 100 == 0) std::cerr << "step " << r.step << "  total " << r.total << "\n";
    };
    hooks.on_checkpoint = [&](std::uint64_t done) {
        save_checkpoint(det.params, &opt, dir / ("checkpoint_step" + std::to_string(done) + ".bin"));
    };
    train(det, opt, data, setup.n_train, setup.train, hooks);
    save_checkpoint(det.params, &opt, dir / "checkpoint.bin");
    std::cout << "trained " << opt.step_count() << " steps; outputs in " << dir.string() << "\n";
    return 0;
}

int cmd_eval(const CommonArgs& a, const std::string& checkpoint) {
    const RunConfig rc = resolve(a);
    const RunSetup setup = RunSetup::from(rc);
    Detector<float> det(setup.model, setup.train.seed);
    if (!checkpoint.empty()) load_checkpoint(checkpoint, det.params, static_cast<AdamW<float>*>(nullptr));
    SampleCache data(setup.data);
    const auto r = evaluate_detector(det, data, setup.n_train, setup.eval_count(), setup.iou_thresh);
    std::ostringstream os;
    os << "eval images: " << setup.eval_count() << " (indices " << setup.n_train << ".."
       << setup.n_train + setup.eval_count() - 1 << "), IoU threshold " << setup.iou_thresh << "\n"
       << format_eval(r) << "\n"
       << format_table({{backbone_label(setup.model.swin), neck_label(setup.model.neck.kind), r.ap}});
    std::cout << os.str();
    if (!a.out.empty()) write_text(prepare_out(a.out, rc) / "eval.txt", os.str());
    return 0;
}

int cmd_ablate(const CommonArgs& a) {
    const RunConfig rc = resolve(a);
    RunSetup::from(rc);
    const fs::path dir = prepare_out(a.out, rc);
    const auto result = run_ablation(rc, [](const std::string& msg) { std::cerr << msg << "\n"; });
    const std::string report = ablation_report(result, rc);
    for (std::size_t i = 0; i < result.runs.size(); ++i) {
        const std::string tag = neck_name(static_cast<NeckKind>(i));
        write_text(dir / ("loss_" + tag + ".tsv"), format_loss_log(result.runs[i].log));
        write_text(dir / ("checkpoint_" + tag + ".bin"), result.runs[i].checkpoint);
    }
    write_text(dir / "ablation.txt", report);
    std::cout << report;
    return 0;
}

int cmd_gradcheck(const std::string& scope, const CommonArgs& a, const std::string& corrupt, std::size_t entries) {
    GradcheckOptions opt;
    opt.fault_op = corrupt;
    std::vector<GradcheckResult> results;
    if (scope == "ops") {
        results = gradcheck_ops(opt);
    } else if (scope == "block") {
        results = gradcheck_block(opt);
    } else {
        const RunConfig rc = resolve(a);
        opt.max_entries = entries;
        results = gradcheck_model(ModelConfig::from(rc), opt);
    }
    bool ok = true;
    for (const auto& r : results) {
        std::printf("%-28s worst rel err %.3e  (tol %.0e, %zu entries, at %s)  %s\n", r.group.c_str(), r.worst,
                    r.tolerance, r.checked, r.worst_at.c_str(), r.pass() ? "PASS" : "FAIL");
        ok = ok && r.pass();
    }
    std::printf("%s\n", ok ? "gradcheck passed" : "gradcheck FAILED");
    return ok ? 0 : kRuntimeError;
}

int cmd_bench(const std::vector<std::size_t>& sizes, std::size_t window, std::size_t channels, std::size_t heads,
              const std::string& out) {
    const auto rows = bench_attention(sizes, window, channels, heads);
    const std::string table = format_attention_bench(rows, window);
    std::cout << table;
    if (!out.empty()) {
        fs::create_directories(out);
        write_text(fs::path(out) / "bench_attention.txt", table);
    }
    return 0;
}

int cmd_synth_preview(const CommonArgs& a, std::size_t n) {
    const RunConfig rc = resolve(a);
    const SynthConfig sc = rc.synth();
    const fs::path dir = prepare_out(a.out, rc);
    std::string ann;
    int failures = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const Sample s = synth_sample(sc, i);
        char name[32];
        std::snprintf(name, sizeof name, "sample_%04zu.pgm", i);
        try {
            write_text(dir / name, encode_pgm(s.image));
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << "\n";
            ++failures;
        }
        for (const auto& b : s.gt) {
            char line[128];
            std::snprintf(line, sizeof line, "%zu %g %g %g %g\n", i, b.x1, b.y1, b.x2, b.y2);
            ann += line;
        }
    }
    write_text(dir / "annotations.txt", ann);
    std::cout << "wrote " << n - static_cast<std::size_t>(failures) << " images to " << dir.string() << "\n";
    return failures ? kRuntimeError : 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Shifted-window transformer ship detector with feature-enhancement pyramid"};
    app.require_subcommand(1);

    CommonArgs train_args, eval_args, ablate_args, grad_args, synth_args;
    std::string resume, checkpoint, corrupt, scope, bench_out;
    std::size_t entries = 3, n = 3, window = 4, channels = 32, heads = 2;
    std::vector<std::size_t> sizes{8, 16, 32};

    auto* train = app.add_subcommand("train", "train a detector and write a run directory");
    add_common(train, train_args, true);
    train->add_option("--resume", resume, "continue from a checkpoint written by an earlier run");

    auto* eval = app.add_subcommand("eval", "evaluate AP on the held-out split");
    add_common(eval, eval_args, false);
    eval->add_option("--checkpoint", checkpoint, "checkpoint to evaluate (default: freshly initialised model)");

    auto* ablate = app.add_subcommand("ablate", "train and evaluate FPN, PAFPN and FEFPN under one budget");
    add_common(ablate, ablate_args, true);

    auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient checks in double precision");
    grad->add_option("scope", scope, "ops | block | model")->required()->check(CLI::IsMember({"ops", "block", "model"}));
    add_common(grad, grad_args, false);
    grad->add_option("--entries", entries, "entries checked per tensor in the model scope (0 = all)");
    grad->add_option("--corrupt-backward", corrupt, "test hook: scale the backward of this op by 1.5");

    auto* bench = app.add_subcommand("bench-attention", "attention MACs and latency, windowed vs global");
    bench->add_option("--sizes", sizes, "token-map sides")->delimiter(',');
    bench->add_option("--window", window, "window side");
    bench->add_option("--channels", channels, "token channels");
    bench->add_option("--heads", heads, "attention heads");
    bench->add_option("--out", bench_out, "also write the table here");

    auto* synth = app.add_subcommand("synth-preview", "write synthetic scenes as PGM plus box annotations");
    add_common(synth, synth_args, true);
    synth->add_option("-n", n, "number of images");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kUsageError;
    }

    try {
        if (*train) return cmd_train(train_args, resume);
        if (*eval) return cmd_eval(eval_args, checkpoint);
        if (*ablate) return cmd_ablate(ablate_args);
        if (*grad) return cmd_gradcheck(scope, grad_args, corrupt, entries);
        if (*bench) return cmd_bench(sizes, window, channels, heads, bench_out);
        if (*synth) return cmd_synth_preview(synth_args, n);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kUsageError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRuntimeError;
    }
    return kUsageError;
}
