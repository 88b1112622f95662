#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nestlab/checks.hpp"
#include "nestlab/harness.hpp"

namespace {

struct CommonFlags {
    std::string config_path;
    std::vector<std::string> overrides;
    std::vector<long> seeds;
    std::string out_dir;
    int jobs = 0;
    bool json = false;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config_path, "Config file (key=value lines)");
    cmd->add_option("--set", f.overrides, "Override a config field, key=value (repeatable)");
    cmd->add_option("--seed,--seeds", f.seeds, "Seeds to run (default: config seeds)");
    cmd->add_option("--out", f.out_dir, "Output directory");
    cmd->add_option("--jobs", f.jobs, "Parallel seed runs");
    cmd->add_flag("--json", f.json, "Print the best ResultRecord as JSON");
}

nestlab::ExperimentConfig make_config(const CommonFlags& f, const std::string& task) {
    nestlab::ExperimentConfig cfg;
    if (!f.config_path.empty()) cfg = nestlab::load_config(f.config_path);
    if (!task.empty()) cfg.task = task;
    for (const auto& kv : f.overrides) nestlab::apply_override(cfg, kv);
    if (!f.seeds.empty()) cfg.seeds = f.seeds;
    if (!f.out_dir.empty()) {
        cfg.out_dir = f.out_dir;
    } else if (const char* root = std::getenv("NESTLAB_OUT"); root && *root) {
        cfg.out_dir = std::string(root) + "/" + cfg.out_dir;
    }
    if (f.jobs > 0) cfg.jobs = f.jobs;
    return cfg;
}

void print_record(const nestlab::ResultRecord& r) {
    std::printf("seed=%ld", r.seed);
    if (r.metrics.psnr_db) std::printf(" psnr_db=%.4f", *r.metrics.psnr_db);
    if (r.metrics.ssim) std::printf(" ssim=%.4f", *r.metrics.ssim);
    if (r.metrics.iou) std::printf(" iou=%.4f", *r.metrics.iou);
    if (r.metrics.abs_err) std::printf(" abs_err=%.6f", *r.metrics.abs_err);
    if (r.metrics.rel_err) std::printf(" rel_err=%.6f", *r.metrics.rel_err);
    if (r.metrics.explained_var) std::printf(" explained_var=%.6f", *r.metrics.explained_var);
    std::printf(" params=%zu wall_s=%.1f\n", r.param_count, r.wall_seconds);
}

int run_task(const CommonFlags& f, const std::string& task) {
    nestlab::ExperimentConfig cfg = make_config(f, task);
    nestlab::SeedSweepResult sweep = nestlab::run_seed_sweep(cfg);
    for (const auto& r : sweep.all) print_record(r);
    std::printf("best: ");
    print_record(sweep.best);
    if (f.json) std::printf("%s\n", nestlab::to_json(sweep.best).dump().c_str());
    return 0;
}

int run_verify() {
    bool ok = true;
    for (const auto& c : nestlab::run_verification_suite()) {
        std::printf("%-50s %-4s (value %.3e, threshold %.3e)\n", c.name.c_str(),
                    c.passed() ? "pass" : "FAIL", c.value, c.threshold);
        ok = ok && c.passed();
    }
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"nestlab: nested-activation neural fields laboratory"};
    app.require_subcommand(1);

    struct TaskCmd {
        const char* name;
        const char* task;
        const char* help;
    };
    const TaskCmd tasks[] = {
        {"fit-image", "image", "Fit a procedural image"},
        {"fit-occupancy", "occupancy", "Fit an analytic occupancy volume"},
        {"sisr", "sisr", "Single-image super-resolution"},
        {"misr", "misr", "Multi-image super-resolution"},
        {"denoise", "denoise", "Poisson denoising"},
        {"ct", "ct", "CT reconstruction from a sinogram"},
        {"pinn", "pinn", "Physics-informed convection solve"},
    };

    std::vector<CommonFlags> flags(16);
    std::size_t fi = 0;
    struct Dispatch {
        CLI::App* cmd;
        std::string task;
        std::size_t flag_index;
    };
    std::vector<Dispatch> dispatch;
    for (const auto& t : tasks) {
        CLI::App* cmd = app.add_subcommand(t.name, t.help);
        add_common(cmd, flags[fi]);
        dispatch.push_back({cmd, t.task, fi});
        ++fi;
    }

    CommonFlags& lr_flags = flags[fi++];
    std::vector<double> lrs;
    CLI::App* sweep_lr = app.add_subcommand("sweep-lr", "Learning-rate sweep");
    add_common(sweep_lr, lr_flags);
    sweep_lr->add_option("--lrs", lrs, "Learning rates to sweep")->required();

    CommonFlags& scale_flags = flags[fi++];
    std::vector<int> factors;
    CLI::App* sweep_scale = app.add_subcommand("sweep-scale", "Downsampling-factor sweep");
    add_common(sweep_scale, scale_flags);
    sweep_scale->add_option("--factors", factors, "Downsampling factors")->required();

    CommonFlags& dump_flags = flags[fi++];
    CLI::App* dump = app.add_subcommand("dump-activations",
                                        "Train and dump learned-activation traces");
    add_common(dump, dump_flags);

    CLI::App* verify = app.add_subcommand("verify", "Run the built-in oracle suite");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "%s\n\n%s", e.what(), app.help().c_str());
        return 2;
    }

    try {
        if (verify->parsed()) return run_verify();
        for (const auto& d : dispatch)
            if (d.cmd->parsed()) return run_task(flags[d.flag_index], d.task);
        if (sweep_lr->parsed()) {
            nestlab::ExperimentConfig cfg = make_config(lr_flags, "");
            for (const auto& row : nestlab::run_lr_sweep(cfg, lrs)) {
                std::printf("lr=%g ", row.key);
                print_record(row.best);
            }
            return 0;
        }
        if (sweep_scale->parsed()) {
            nestlab::ExperimentConfig cfg = make_config(scale_flags, "");
            for (const auto& row : nestlab::run_scale_sweep(cfg, factors)) {
                std::printf("factor=%d ", static_cast<int>(row.key));
                print_record(row.best);
            }
            return 0;
        }
        if (dump->parsed()) {
            nestlab::ExperimentConfig cfg = make_config(dump_flags, "");
            nestlab::ResultRecord rec = nestlab::run_experiment(cfg, cfg.seeds.at(0));
            for (const auto& a : rec.artifacts)
                if (a.find("activations_layer") != std::string::npos) std::printf("%s\n", a.c_str());
            print_record(rec);
            return 0;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
