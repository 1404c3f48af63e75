#pragma once

// Experiment configuration, the prediction / Monte-Carlo driver, and CSV and
// plot-script output.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include "qiva/config.hpp"
#include "qiva/core_model.hpp"
#include "qiva/covariance.hpp"
#include "qiva/perturbation.hpp"
#include "qiva/sourcegen.hpp"

namespace qiva {

inline constexpr const char* kVersion = "1.0.0";

struct ExperimentConfig {
    std::string id = "custom";
    int M = 2;
    int K = 3;
    int L = 10;
    double eta = 1.0;
    /// "zeros": filters designed from random zeros (mismodelled by a, b, c, mu).
    /// "gaussian": i.i.d. Gaussian taps, presumed model exact.
    std::string fir_kind = "zeros";
    double a = 2.0;
    double b = 0.1;
    double c = 0.1;
    std::vector<double> mu{0.0};
    std::vector<int> T{1000};
    /// Mixture switch probabilities; empty means plain FIR sources.
    std::vector<double> p;
    std::vector<NoiseFamily> families{NoiseFamily::Gaussian};
    int trials = 100;
    std::uint64_t seed = 1;
    /// "true" (B0 = A^-1) or "identity".
    std::string init = "true";
    double tol = 1e-11;
    int max_iter = 50;
    EngineKind engine = EngineKind::Auto;
    /// "identity" or "random".
    std::string mixing = "identity";
    double excluded_budget = 0.01;

    void validate() const;
    [[nodiscard]] Config to_config() const;
    /// Applies every key of cfg on top of this configuration; unknown keys throw.
    void apply(const Config& cfg);
};

/// Defaults for exp1-mu, exp1-T, exp2, exp3. full_scale restores the
/// original trial counts and sample sizes where they were reduced.
[[nodiscard]] ExperimentConfig experiment_defaults(const std::string& id, bool full_scale = false);

/// True and presumed second-order models at one grid point.
struct Models {
    std::vector<FirBank> true_banks;      // one bank, or banks a and b for mixtures
    std::vector<ScvCovariance> C_true;
    std::vector<ScvCovariance> C_presumed;
};

/// p NaN (or the config has no mixture grid) gives plain FIR sources.
[[nodiscard]] Models build_models(const ExperimentConfig& cfg, int T, double mu,
                                  double p = std::numeric_limits<double>::quiet_NaN());

struct ResultRow {
    std::string experiment;
    int T = 0;
    double mu = 0.0;
    double p = std::numeric_limits<double>::quiet_NaN();
    NoiseFamily family = NoiseFamily::Gaussian;
    std::string engine;
    IsrTable predicted;
    IsrTable bound;
    IsrTable empirical;
    double predicted_total = 0.0;
    double bound_total = 0.0;
    double empirical_total = std::numeric_limits<double>::quiet_NaN();
    double empirical_se = std::numeric_limits<double>::quiet_NaN();
    long trials = 0;
    long excluded = 0;
    /// "ok", "predict-only" or "failed".
    std::string status = "predict-only";
    double wall_seconds = 0.0;
    /// Totals of any registered baseline estimators, in registration order.
    std::vector<double> baseline_totals;
};

/// Alternative estimator hook: maps the observed mixtures to demixing matrices.
using BaselineEstimator = std::function<DemixingSet(const std::vector<Matrix>& X)>;

struct RunOptions {
    bool simulate = true;
    /// 0 keeps the OpenMP default.
    int threads = 0;
    std::function<void(const std::string&)> log;
};

class Harness {
public:
    explicit Harness(ExperimentConfig cfg);

    [[nodiscard]] const ExperimentConfig& config() const noexcept { return cfg_; }

    /// Registers an extra estimator evaluated on the same trials. No baseline
    /// ships with the library.
    void add_baseline(std::string name, BaselineEstimator fn);

    [[nodiscard]] std::vector<ResultRow> run(const RunOptions& opts = {}) const;

private:
    ExperimentConfig cfg_;
    std::vector<std::string> baseline_names_;
    std::vector<BaselineEstimator> baselines_;
};

/// Main CSV (deterministic for a given config and seed).
void write_csv(std::ostream& out, const ExperimentConfig& cfg, const std::vector<ResultRow>& rows);
/// Wall-clock sidecar.
void write_timing_csv(std::ostream& out, const std::vector<ResultRow>& rows);
/// gnuplot script plotting predicted and empirical totals from csv_name.
void write_plot_script(std::ostream& out, const ExperimentConfig& cfg, const std::string& csv_name);

/// File stem used by the experiment command, e.g. "fig1_exp1_mu".
[[nodiscard]] std::string experiment_stem(const std::string& id);

}  // namespace qiva
