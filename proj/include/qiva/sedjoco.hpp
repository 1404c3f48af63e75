#pragma once

// Target matrices, the extended SeDJoCo residual F(B; Q) = O and its Jacobian,
// and a damped Newton solver.

#include <stdexcept>
#include <string>
#include <vector>

#include "qiva/banded.hpp"
#include "qiva/core_model.hpp"
#include "qiva/covariance.hpp"

namespace qiva {

class SingularJacobian : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NoConvergence : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Q_k^(m1,m2) = (1/T) X^(m1) P_k^(m1,m2) X^(m2)^T with dense precision blocks.
[[nodiscard]] TargetSet compute_targets(const std::vector<Matrix>& X, const std::vector<ScvPrecision>& P);

/// Same targets through banded Cholesky factors of the presumed covariances:
/// Omega_k = (1/T) Y^T Y with Y = L_k^{-1} blockdiag(X^(m)^T).
[[nodiscard]] TargetSet compute_targets(const std::vector<Matrix>& X, const std::vector<BandedCholesky>& chol);

/// Asymptotic targets at identity mixing: diagonal, with
/// Q_{k,ii}^(m1,m2) = (1/T) Tr(C_i^(m2,m1) P_k^(m1,m2)).
[[nodiscard]] TargetSet expected_targets(const std::vector<ScvCovariance>& C_true,
                                         const std::vector<ScvPrecision>& P_presumed);

/// F_m = sum_k sum_l E_kk B^(l) Q_k^(l,m) B^(m)^T - I, one K x K block per m.
struct Residual {
    std::vector<Matrix> F;

    /// Flattened with the b_index layout.
    [[nodiscard]] Vector flat() const;
    [[nodiscard]] double max_abs() const;
};

[[nodiscard]] Residual residual(const DemixingSet& B, const TargetSet& Q);

/// dvec(F)/dvec(B), square of side K^2 M; rows and columns use b_index.
[[nodiscard]] Matrix jacobian(const DemixingSet& B, const TargetSet& Q);

/// max over k, m of |D_k^(m) e_k - e_k|_inf with D_k^(m) = sum_l B^(m) Q_k^(m,l) B^(l)^T.
[[nodiscard]] double drilled_check(const DemixingSet& B, const TargetSet& Q);

enum class SolverStatus { Converged, NoConvergence, SingularJacobian };

[[nodiscard]] std::string to_string(SolverStatus s);

struct NewtonOptions {
    double tol = 1e-11;
    int max_iter = 50;
    int max_halvings = 20;
    /// Smallest accepted reciprocal condition estimate of the Jacobian.
    double min_rcond = 1e-12;
};

struct NewtonReport {
    SolverStatus status = SolverStatus::NoConvergence;
    int iterations = 0;
    int halvings = 0;
    double final_residual = 0.0;
    double last_rcond = 0.0;
    /// Max-abs residual before the first step and after each accepted step.
    std::vector<double> history;
};

struct NewtonResult {
    DemixingSet B;
    NewtonReport report;

    [[nodiscard]] bool converged() const noexcept { return report.status == SolverStatus::Converged; }
};

[[nodiscard]] NewtonResult newton_solve(const TargetSet& Q, const DemixingSet& B0, const NewtonOptions& opts = {});

}  // namespace qiva
