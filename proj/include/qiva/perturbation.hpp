#pragma once

// First-order sensitivity of the SeDJoCo solution to the target matrices,
// the asymptotic covariance of the target elements, and the resulting
// ISR prediction.

#include <memory>
#include <string>
#include <vector>

#include "qiva/core_model.hpp"
#include "qiva/covariance.hpp"
#include "qiva/sedjoco.hpp"
#include "qiva/trace_kernels.hpp"

namespace qiva {

/// vec(dF/dQ_e) at B for the independent element e (its symmetric duplicate
/// moves with it). Layout follows b_index.
[[nodiscard]] Vector rhs_y(const QElement& e, const DemixingSet& B);

/// Rows: solution elements B_pq^(m) (b_index). Columns: target elements (QLayout).
struct GradientMatrix {
    ProblemDims dims;
    Matrix G;

    [[nodiscard]] Vector row(int m, int p, int q) const { return G.row(b_index(m, p, q, dims)).transpose(); }
};

/// LU factorisation of H, reused for any number of right-hand sides.
class FactoredJacobian {
public:
    /// Throws SingularJacobian when the reciprocal condition estimate is below min_rcond.
    explicit FactoredJacobian(const Matrix& H, double min_rcond = 1e-12);

    [[nodiscard]] double rcond() const noexcept { return rcond_; }
    [[nodiscard]] Matrix solve(const Matrix& rhs) const { return lu_.solve(rhs); }

private:
    Eigen::PartialPivLU<Matrix> lu_;
    double rcond_ = 0.0;
};

/// G = -H^{-1} [y_1 ... y_Mq] with y_r = rhs_y(layout[r], B).
[[nodiscard]] GradientMatrix solve_gradients(const Matrix& H, const DemixingSet& B, const QLayout& layout,
                                             double min_rcond = 1e-12);

/// Columns with i = j = k computed from M x M systems per source, valid when
/// B and the targets are diagonal. Other columns are left at zero.
struct DiagGradientColumns {
    std::vector<int> columns;
    Matrix values;  // K^2 M x columns.size()
};

[[nodiscard]] DiagGradientColumns closed_form_diag_gradients(const TargetSet& Q, const DemixingSet& B);
[[nodiscard]] DiagGradientColumns closed_form_diag_gradients(const TargetSet& Q);

enum class IsserlisCase { I, II, III, IV, V };

[[nodiscard]] IsserlisCase isserlis_case(const QElement& a, const QElement& b);

struct QCovarianceOptions {
    /// Multiplier of the second trace term. Only -1 for fault injection.
    double second_term_sign = 1.0;
    /// false drops the 1/T^2 normalisation (fault injection).
    bool normalize = true;
    /// Synthetic fourth-cumulant contribution added (divided by T) to every
    /// entry whose four source indices coincide.
    double case_iv_extra = 0.0;
};

/// Covariance of the target elements restricted to a set of columns.
struct QCovariance {
    std::vector<int> columns;
    Matrix values;

    /// Entry at global target indices; throws DomainError if either is absent.
    [[nodiscard]] double at(int r1, int r2) const;
    [[nodiscard]] int position(int r) const;
};

[[nodiscard]] QCovariance q_covariance(const TraceEngine& engine, const QLayout& layout, std::vector<int> columns,
                                       const QCovarianceOptions& opts = {});

/// All M_q columns, exact engine.
[[nodiscard]] QCovariance q_covariance_identity(const std::vector<ScvCovariance>& C_true,
                                                const std::vector<ScvPrecision>& P_presumed,
                                                const QCovarianceOptions& opts = {});

/// Target columns that can move B_pq and B_qp (p != q) when B and the
/// targets are diagonal: i != j with {i, j} = {p, q} and k in {p, q}.
[[nodiscard]] std::vector<int> isr_support_columns(const QLayout& layout, int p, int q);

/// g^T C_q g, after checking that g vanishes outside the covered columns.
[[nodiscard]] double quadratic_form(const Vector& g, const QCovariance& cq);

/// ISR_ij^(m) = g^T C_q g / (B_ii^(m))^2 * power_j / power_i. powers is M x K.
[[nodiscard]] IsrTable predicted_isr(const GradientMatrix& G, const QCovariance& cq, const DemixingSet& gains,
                                     const Matrix& powers);

/// Diagonal Phi_k^(a,b) with entries (1/T) Tr(P_k^(a,b) C_l^(b,a)); identical
/// to the expected targets.
[[nodiscard]] TargetSet phi_limits(const TraceEngine& engine);

struct GainSolution {
    DemixingSet gains;  // diagonal B^(m)
    double residual = 0.0;
    int iterations = 0;
};

/// Solves sum_l g_k^(m) phi_kk^(m,l) g_k^(l) = 1 for every k and m. Throws
/// NoConvergence when Newton fails.
[[nodiscard]] GainSolution asymptotic_gains(const TargetSet& phi, const NewtonOptions& opts = {});

[[nodiscard]] double gain_equation_residual(const TargetSet& phi, const DemixingSet& gains);

enum class EngineKind { Auto, Exact, Spectral };

[[nodiscard]] EngineKind parse_engine(const std::string& s);
[[nodiscard]] std::string to_string(EngineKind e);

struct PredictionOptions {
    EngineKind engine = EngineKind::Auto;
    /// Auto picks the exact engine when its dense precisions fit this budget.
    std::size_t memory_budget_bytes = std::size_t{3} << 29;
    bool parallel = true;
    QCovarianceOptions cq;
    NewtonOptions gain_solver;
    double min_rcond = 1e-12;
};

struct Prediction {
    std::string engine;
    TargetSet expected;
    DemixingSet gains;
    double gain_residual = 0.0;
    GradientMatrix G;
    Matrix powers;
    IsrTable isr;
};

[[nodiscard]] std::unique_ptr<TraceEngine> make_engine(const std::vector<ScvCovariance>& C_true,
                                                       const std::vector<ScvCovariance>& C_presumed,
                                                       const PredictionOptions& opts = {});

[[nodiscard]] Prediction predict(const TraceEngine& engine, const Matrix& powers, const PredictionOptions& opts = {});
[[nodiscard]] Prediction predict(const std::vector<ScvCovariance>& C_true, const std::vector<ScvCovariance>& C_presumed,
                                 const PredictionOptions& opts = {});

/// The matched-model prediction (presumed = true), which is the induced
/// Cramer-Rao bound on the ISR.
[[nodiscard]] IsrTable icrlb_gaussian(const std::vector<ScvCovariance>& C_true, const PredictionOptions& opts = {});

/// M x K matrix of r_k^(m,m)[0].
[[nodiscard]] Matrix source_powers(const std::vector<ScvCovariance>& C);

}  // namespace qiva
