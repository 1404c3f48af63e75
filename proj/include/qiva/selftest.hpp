#pragma once

// Invariant suite run by `qiva selftest`: finite-difference gradients,
// closed-form agreement, Monte-Carlo covariance of the targets, brute-force
// Isserlis sums, solver certification and the 1/T scaling of predictions.

#include <cstdint>
#include <string>
#include <vector>

#include "qiva/covariance.hpp"
#include "qiva/perturbation.hpp"
#include "qiva/sourcegen.hpp"

namespace qiva {

struct CheckResult {
    std::string name;
    bool pass = false;
    /// Worst observed value of the checked quantity, compared against threshold.
    double metric = 0.0;
    double threshold = 0.0;
    std::string detail;
};

struct SelftestOptions {
    std::uint64_t seed = 20261016;
    /// Fault injection into the target covariance (sign flip, missing 1/T^2).
    QCovarianceOptions cq;
    int gradient_instances = 20;
    long covariance_trials = 200000;
    int covariance_T = 64;
    bool parallel = true;
};

struct SelftestReport {
    std::vector<CheckResult> checks;

    [[nodiscard]] bool all_pass() const;
};

/// A small random problem: banks from random zeros, presumed banks with
/// perturbed zeros, Gaussian sources observed with A = I.
struct SmallInstance {
    int M = 0;
    int K = 0;
    int T = 0;
    FirBank true_bank;
    std::vector<ScvCovariance> C_true;
    std::vector<ScvCovariance> C_presumed;
    std::vector<ScvPrecision> P_presumed;
};

[[nodiscard]] SmallInstance make_small_instance(int M, int K, int T, int L, Rng& rng);

[[nodiscard]] CheckResult check_gradient_fd(const SelftestOptions& opts);
[[nodiscard]] CheckResult check_closed_form(const SelftestOptions& opts);
[[nodiscard]] CheckResult check_covariance_oracle(const SelftestOptions& opts);
[[nodiscard]] CheckResult check_isserlis_bruteforce(const SelftestOptions& opts);
[[nodiscard]] CheckResult check_solver_certification(const SelftestOptions& opts);
[[nodiscard]] CheckResult check_inverse_t_scaling(const SelftestOptions& opts);

[[nodiscard]] SelftestReport run_selftest(const SelftestOptions& opts = {});

}  // namespace qiva
