#include "qiva/sedjoco.hpp"

#include <cmath>

namespace qiva {

namespace {

void check_data(const std::vector<Matrix>& X, int M) {
    if (static_cast<int>(X.size()) != M || X.empty()) throw PreconditionError("compute_targets: expected M data matrices");
    for (const auto& x : X) {
        if (x.rows() != X.front().rows() || x.cols() != X.front().cols()) {
            throw PreconditionError("compute_targets: data matrices differ in shape");
        }
    }
}

}  // namespace

TargetSet compute_targets(const std::vector<Matrix>& X, const std::vector<ScvPrecision>& P) {
    if (P.empty()) throw PreconditionError("compute_targets: no precision matrices");
    const int M = P.front().M();
    const int T = P.front().T();
    check_data(X, M);
    const int K = static_cast<int>(X.front().rows());
    if (static_cast<int>(P.size()) != K || X.front().cols() != T) {
        throw PreconditionError("compute_targets: need K precision matrices matching the data length");
    }
    TargetSet Q(M, K);
    const double inv_t = 1.0 / T;
    for (int k = 0; k < K; ++k) {
        for (int m1 = 0; m1 < M; ++m1) {
            for (int m2 = m1; m2 < M; ++m2) {
                const Matrix xp = X[static_cast<std::size_t>(m1)] * P[static_cast<std::size_t>(k)].block(m1, m2);
                Q.set_pair(k, m1, m2, inv_t * (xp * X[static_cast<std::size_t>(m2)].transpose()));
            }
        }
    }
    return Q;
}

TargetSet compute_targets(const std::vector<Matrix>& X, const std::vector<BandedCholesky>& chol) {
    if (chol.empty()) throw PreconditionError("compute_targets: no covariance factors");
    const int M = chol.front().M();
    const int T = chol.front().T();
    check_data(X, M);
    const int K = static_cast<int>(X.front().rows());
    if (static_cast<int>(chol.size()) != K || X.front().cols() != T) {
        throw PreconditionError("compute_targets: need K covariance factors matching the data length");
    }
    TargetSet Q(M, K);
    const double inv_t = 1.0 / T;
    RowMatrix y(static_cast<Eigen::Index>(M) * T, static_cast<Eigen::Index>(M) * K);
    for (int k = 0; k < K; ++k) {
        const BandedCholesky& L = chol[static_cast<std::size_t>(k)];
        y.setZero();
        for (int m = 0; m < M; ++m) {
            const Matrix& x = X[static_cast<std::size_t>(m)];
            for (int t = 0; t < T; ++t) {
                for (int i = 0; i < K; ++i) y(L.interleaved(m, t), m * K + i) = x(i, t);
            }
        }
        L.forward_solve(y);
        Matrix omega = Matrix::Zero(M * K, M * K);
        omega.selfadjointView<Eigen::Lower>().rankUpdate(y.transpose(), inv_t);
        omega = omega.selfadjointView<Eigen::Lower>();
        for (int m1 = 0; m1 < M; ++m1) {
            for (int m2 = m1; m2 < M; ++m2) Q.set_pair(k, m1, m2, omega.block(m1 * K, m2 * K, K, K));
        }
    }
    return Q;
}

TargetSet expected_targets(const std::vector<ScvCovariance>& C_true, const std::vector<ScvPrecision>& P_presumed) {
    if (C_true.empty() || C_true.size() != P_presumed.size()) {
        throw PreconditionError("expected_targets: need one true covariance and one presumed precision per source");
    }
    const int K = static_cast<int>(C_true.size());
    const int M = C_true.front().M();
    const int T = C_true.front().T();
    TargetSet Q(M, K);
    for (int k = 0; k < K; ++k) {
        const ScvPrecision& P = P_presumed[static_cast<std::size_t>(k)];
        for (int m1 = 0; m1 < M; ++m1) {
            for (int m2 = m1; m2 < M; ++m2) {
                const auto Pb = P.block(m1, m2);
                Matrix d = Matrix::Zero(K, K);
                for (int i = 0; i < K; ++i) {
                    const ScvCovariance& C = C_true[static_cast<std::size_t>(i)];
                    const int reach = std::min(C.max_lag(), T - 1);
                    // Tr(C P) = sum_tau r^(m2,m1)[tau] sum_b P(b, b + tau)
                    double acc = 0.0;
                    for (int tau = -reach; tau <= reach; ++tau) {
                        const double r = C.lag(m2, m1, tau);
                        if (r == 0.0) continue;
                        double diag = 0.0;
                        for (int b = std::max(0, -tau); b < std::min(T, T - tau); ++b) diag += Pb(b, b + tau);
                        acc += r * diag;
                    }
                    d(i, i) = acc / T;
                }
                Q.set_pair(k, m1, m2, d);
            }
        }
    }
    return Q;
}

Vector Residual::flat() const {
    if (F.empty()) return {};
    const auto K = F.front().rows();
    Vector v(K * K * static_cast<Eigen::Index>(F.size()));
    for (std::size_t m = 0; m < F.size(); ++m) v.segment(static_cast<Eigen::Index>(m) * K * K, K * K) = F[m].reshaped();
    return v;
}

double Residual::max_abs() const {
    double worst = 0.0;
    for (const auto& f : F) worst = std::max(worst, f.cwiseAbs().maxCoeff());
    return worst;
}

namespace {

void check_pair(const DemixingSet& B, const TargetSet& Q) {
    if (B.M() != Q.M() || B.K() != Q.K() || B.M() == 0) throw PreconditionError("SeDJoCo: B and Q dimensions differ");
}

/// R_m with row r = sum_l b_r^(l)^T Q_r^(l,m).
std::vector<Matrix> row_products(const DemixingSet& B, const TargetSet& Q) {
    const int M = Q.M();
    const int K = Q.K();
    std::vector<Matrix> R(static_cast<std::size_t>(M), Matrix::Zero(K, K));
    for (int m = 0; m < M; ++m) {
        for (int r = 0; r < K; ++r) {
            for (int l = 0; l < M; ++l) {
                R[static_cast<std::size_t>(m)].row(r).noalias() += B.B[static_cast<std::size_t>(l)].row(r) * Q(r, l, m);
            }
        }
    }
    return R;
}

}  // namespace

Residual residual(const DemixingSet& B, const TargetSet& Q) {
    check_pair(B, Q);
    const auto R = row_products(B, Q);
    Residual out;
    out.F.reserve(R.size());
    for (std::size_t m = 0; m < R.size(); ++m) {
        out.F.push_back(R[m] * B.B[m].transpose() - Matrix::Identity(Q.K(), Q.K()));
    }
    return out;
}

Matrix jacobian(const DemixingSet& B, const TargetSet& Q) {
    check_pair(B, Q);
    const int M = Q.M();
    const int K = Q.K();
    const int n = K * K * M;
    const ProblemDims dims{M, K, 1, 0};
    const auto R = row_products(B, Q);
    Matrix H = Matrix::Zero(n, n);
    for (int m = 0; m < M; ++m) {
        for (int p = 0; p < K; ++p) {
            for (int nn = 0; nn < M; ++nn) {
                // W = Q_p^(m,n) B^(n)^T; E_pq W keeps row q of W in row p
                const Matrix W = Q(p, m, nn) * B.B[static_cast<std::size_t>(nn)].transpose();
                for (int q = 0; q < K; ++q) {
                    const int col = b_index(m, p, q, dims);
                    for (int c = 0; c < K; ++c) H(b_index(nn, p, c, dims), col) += W(q, c);
                }
            }
            for (int q = 0; q < K; ++q) {
                // R_m E_qp puts column q of R_m into column p
                const int col = b_index(m, p, q, dims);
                for (int r = 0; r < K; ++r) H(b_index(m, r, p, dims), col) += R[static_cast<std::size_t>(m)](r, q);
            }
        }
    }
    return H;
}

double drilled_check(const DemixingSet& B, const TargetSet& Q) {
    check_pair(B, Q);
    const int M = Q.M();
    const int K = Q.K();
    double worst = 0.0;
    for (int k = 0; k < K; ++k) {
        for (int m = 0; m < M; ++m) {
            Vector d = Vector::Zero(K);
            for (int l = 0; l < M; ++l) {
                d += B.B[static_cast<std::size_t>(m)] * (Q(k, m, l) * B.B[static_cast<std::size_t>(l)].row(k).transpose());
            }
            d(k) -= 1.0;
            worst = std::max(worst, d.cwiseAbs().maxCoeff());
        }
    }
    return worst;
}

std::string to_string(SolverStatus s) {
    switch (s) {
        case SolverStatus::Converged: return "converged";
        case SolverStatus::NoConvergence: return "no-convergence";
        case SolverStatus::SingularJacobian: return "singular-jacobian";
    }
    return "unknown";
}

NewtonResult newton_solve(const TargetSet& Q, const DemixingSet& B0, const NewtonOptions& opts) {
    check_pair(B0, Q);
    NewtonResult out;
    out.B = B0;
    Vector b = B0.flat();
    const int M = Q.M();
    const int K = Q.K();

    Residual F = residual(out.B, Q);
    double norm_inf = F.max_abs();
    double norm2 = F.flat().norm();
    out.report.history.push_back(norm_inf);

    for (int it = 0; it < opts.max_iter; ++it) {
        if (norm_inf <= opts.tol) break;
        const Eigen::PartialPivLU<Matrix> lu(jacobian(out.B, Q));
        out.report.last_rcond = lu.rcond();
        if (!(out.report.last_rcond >= opts.min_rcond)) {
            out.report.status = SolverStatus::SingularJacobian;
            out.report.iterations = it;
            out.report.final_residual = norm_inf;
            return out;
        }
        const Vector delta = lu.solve(-F.flat());
        double step = 1.0;
        Vector trial = b + delta;
        DemixingSet Bt = DemixingSet::from_flat(trial, M, K);
        Residual Ft = residual(Bt, Q);
        double trial2 = Ft.flat().norm();
        int halvings = 0;
        while (!(trial2 < norm2) && halvings < opts.max_halvings) {
            step *= 0.5;
            ++halvings;
            trial = b + step * delta;
            Bt = DemixingSet::from_flat(trial, M, K);
            Ft = residual(Bt, Q);
            trial2 = Ft.flat().norm();
        }
        out.report.halvings += halvings;
        if (!std::isfinite(trial2)) break;
        // Near machine precision the norm can stall; once backtracking is
        // exhausted the smallest step is taken anyway.
        b = trial;
        out.B = std::move(Bt);
        F = std::move(Ft);
        norm2 = trial2;
        norm_inf = F.max_abs();
        out.report.history.push_back(norm_inf);
        out.report.iterations = it + 1;
    }
    out.report.final_residual = norm_inf;
    out.report.status = norm_inf <= opts.tol ? SolverStatus::Converged : SolverStatus::NoConvergence;
    return out;
}

}  // namespace qiva
