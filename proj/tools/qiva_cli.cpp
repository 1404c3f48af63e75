// Command-line front end: predict, simulate, experiment, selftest.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <omp.h>

#include "qiva/harness.hpp"
#include "qiva/selftest.hpp"

namespace fs = std::filesystem;
using namespace qiva;

namespace {

struct Common {
    std::string out_dir = ".";
    std::uint64_t seed = 0;
    bool seed_given = false;
    int threads = 0;
    bool emit_plots = false;
};

int default_threads() {
    if (const char* env = std::getenv("QIVA_THREADS")) {
        try {
            return std::max(0, std::stoi(env));
        } catch (const std::exception&) {
            std::cerr << "ignoring QIVA_THREADS=" << env << "\n";
        }
    }
    return 0;
}

ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
    Config file = path.empty() ? Config{} : Config::from_file(path);
    for (const auto& o : overrides) file.apply_override(o);
    ExperimentConfig cfg;
    if (file.has("experiment")) {
        const std::string id = file.get("experiment");
        if (id == "exp1-mu" || id == "exp1-T" || id == "exp2" || id == "exp3") cfg = experiment_defaults(id);
    }
    cfg.apply(file);
    return cfg;
}

int emit(const ExperimentConfig& cfg, const std::vector<ResultRow>& rows, const std::string& stem, const Common& c) {
    fs::create_directories(c.out_dir);
    const fs::path csv = fs::path(c.out_dir) / (stem + ".csv");
    {
        std::ofstream f(csv);
        write_csv(f, cfg, rows);
    }
    {
        std::ofstream f(fs::path(c.out_dir) / (stem + "_timing.csv"));
        write_timing_csv(f, rows);
    }
    if (c.emit_plots) {
        std::ofstream f(fs::path(c.out_dir) / (stem + ".gp"));
        write_plot_script(f, cfg, csv.filename().string());
    }
    std::cout << "wrote " << csv.string() << "\n";
    int failed = 0;
    for (const auto& r : rows) failed += r.status == "failed";
    if (failed) {
        std::cerr << failed << " grid point(s) exceeded the excluded-trial budget\n";
        return 1;
    }
    return 0;
}

int run(ExperimentConfig cfg, bool simulate, const std::string& stem, const Common& c) {
    if (c.seed_given) cfg.seed = c.seed;
    cfg.validate();
    const Harness h(cfg);
    RunOptions ro;
    ro.simulate = simulate;
    ro.threads = c.threads;
    ro.log = [](const std::string& s) { std::cerr << s << "\n"; };
    return emit(cfg, h.run(ro), stem, c);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Gaussian QML independent vector analysis: solver, ISR prediction and Monte-Carlo harness"};
    app.set_version_flag("--version", std::string(kVersion));
    app.require_subcommand(1);

    Common c;
    c.threads = default_threads();
    app.add_option("--out", c.out_dir, "Output directory")->capture_default_str();
    app.add_option("--threads", c.threads, "OpenMP threads (0 keeps the default; env QIVA_THREADS)");
    auto* seed_opt = app.add_option("--seed", c.seed, "Master seed overriding the configuration");
    app.add_flag("--emit-plots", c.emit_plots, "Write a gnuplot script next to every CSV");

    std::string config_path;
    std::vector<std::string> overrides;

    auto* predict = app.add_subcommand("predict", "Prediction and bound only");
    predict->add_option("--config", config_path, "Configuration file")->required()->check(CLI::ExistingFile);
    predict->add_option("--override", overrides, "key=value applied after the file");

    long trials = 0;
    auto* simulate = app.add_subcommand("simulate", "Prediction plus Monte-Carlo trials");
    simulate->add_option("--config", config_path, "Configuration file")->required()->check(CLI::ExistingFile);
    simulate->add_option("--trials", trials, "Trials per grid point");
    simulate->add_option("--override", overrides, "key=value applied after the file");

    std::string exp_id;
    bool full_scale = false;
    bool predict_only = false;
    auto* experiment = app.add_subcommand("experiment", "Run one of the reference experiments");
    experiment->add_option("id", exp_id, "exp1-mu, exp1-T, exp2 or exp3")
        ->required()
        ->check(CLI::IsMember({"exp1-mu", "exp1-T", "exp2", "exp3"}));
    experiment->add_option("--override", overrides, "key=value applied on top of the defaults");
    experiment->add_flag("--full-scale", full_scale, "Full trial counts and sample sizes");
    experiment->add_flag("--predict-only", predict_only, "Skip the Monte-Carlo trials");

    std::string inject;
    bool quick = false;
    auto* selftest = app.add_subcommand("selftest", "Run the invariant suite");
    selftest->add_option("--inject", inject, "Fault injection: sign (second trace term) or scale (missing 1/T^2)")
        ->check(CLI::IsMember({"sign", "scale"}));
    selftest->add_flag("--quick", quick, "Fewer Monte-Carlo trials and instances");

    CLI11_PARSE(app, argc, argv);
    c.seed_given = seed_opt->count() > 0;

    try {
        if (*predict) {
            const ExperimentConfig cfg = load_config(config_path, overrides);
            return run(cfg, false, fs::path(config_path).stem().string() + "_predict", c);
        }
        if (*simulate) {
            ExperimentConfig cfg = load_config(config_path, overrides);
            if (trials > 0) cfg.trials = static_cast<int>(trials);
            return run(cfg, true, fs::path(config_path).stem().string(), c);
        }
        if (*experiment) {
            ExperimentConfig cfg = experiment_defaults(exp_id, full_scale);
            Config ov;
            for (const auto& o : overrides) ov.apply_override(o);
            cfg.apply(ov);
            return run(cfg, !predict_only, experiment_stem(exp_id), c);
        }
        if (*selftest) {
            SelftestOptions so;
            if (c.seed_given) so.seed = c.seed;
            if (c.threads > 0) omp_set_num_threads(c.threads);
            if (inject == "sign") so.cq.second_term_sign = -1.0;
            if (inject == "scale") so.cq.normalize = false;
            if (quick) {
                so.gradient_instances = 6;
                so.covariance_trials = 20000;
            }
            const SelftestReport rep = run_selftest(so);
            for (const auto& chk : rep.checks) {
                std::cout << (chk.pass ? "PASS " : "FAIL ") << chk.name << ": " << chk.detail << "\n";
            }
            std::cout << (rep.all_pass() ? "selftest passed" : "selftest FAILED") << "\n";
            return rep.all_pass() ? 0 : 1;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
