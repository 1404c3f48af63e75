#include "qiva/perturbation.hpp"

#include <algorithm>
#include <cmath>

namespace qiva {

Vector rhs_y(const QElement& e, const DemixingSet& B) {
    const int M = B.M();
    const int K = B.K();
    const ProblemDims dims{M, K, 1, 0};
    if (e.k < 0 || e.k >= K || e.i < 0 || e.i >= K || e.j < 0 || e.j >= K || e.m1 < 0 || e.m1 >= M || e.m2 < 0 ||
        e.m2 >= M) {
        throw DomainError("rhs_y: element out of range");
    }
    const Matrix& B1 = B.B[static_cast<std::size_t>(e.m1)];
    const Matrix& B2 = B.B[static_cast<std::size_t>(e.m2)];
    Vector y = Vector::Zero(dims.nb());
    // block m2, row k: B^(m1)(k,i) * b_j^(m2)^T
    for (int c = 0; c < K; ++c) y(b_index(e.m2, e.k, c, dims)) += B1(e.k, e.i) * B2(c, e.j);
    if (e.m1 != e.m2 || e.i != e.j) {
        // symmetric duplicate: block m1, row k: B^(m2)(k,j) * b_i^(m1)^T
        for (int c = 0; c < K; ++c) y(b_index(e.m1, e.k, c, dims)) += B2(e.k, e.j) * B1(c, e.i);
    }
    return y;
}

FactoredJacobian::FactoredJacobian(const Matrix& H, double min_rcond) : lu_(H) {
    rcond_ = lu_.rcond();
    if (!(rcond_ >= min_rcond)) {
        throw SingularJacobian("Jacobian is numerically singular (rcond " + std::to_string(rcond_) + ")");
    }
}

GradientMatrix solve_gradients(const Matrix& H, const DemixingSet& B, const QLayout& layout, double min_rcond) {
    const ProblemDims dims{B.M(), B.K(), 1, 0};
    if (H.rows() != dims.nb() || H.cols() != dims.nb()) throw PreconditionError("solve_gradients: H has the wrong size");
    if (layout.M() != dims.M || layout.K() != dims.K) throw PreconditionError("solve_gradients: layout mismatch");
    const FactoredJacobian lu(H, min_rcond);
    Matrix Y(dims.nb(), layout.size());
    for (int r = 0; r < layout.size(); ++r) Y.col(r) = -rhs_y(layout[r], B);
    GradientMatrix g;
    g.dims = dims;
    g.G = lu.solve(Y);
    return g;
}

namespace {

bool is_diagonal(const Matrix& X) {
    for (Eigen::Index c = 0; c < X.cols(); ++c) {
        for (Eigen::Index r = 0; r < X.rows(); ++r) {
            if (r != c && X(r, c) != 0.0) return false;
        }
    }
    return true;
}

}  // namespace

DiagGradientColumns closed_form_diag_gradients(const TargetSet& Q, const DemixingSet& B) {
    const int M = Q.M();
    const int K = Q.K();
    if (B.M() != M || B.K() != K) throw PreconditionError("closed_form_diag_gradients: dimension mismatch");
    for (const auto& b : B.B) {
        if (!is_diagonal(b)) throw PreconditionError("closed_form_diag_gradients: B must be diagonal");
    }
    for (int k = 0; k < K; ++k)
        for (int m1 = 0; m1 < M; ++m1)
            for (int m2 = 0; m2 < M; ++m2)
                if (!is_diagonal(Q(k, m1, m2))) throw PreconditionError("closed_form_diag_gradients: targets must be diagonal");

    const ProblemDims dims{M, K, 1, 0};
    const QLayout layout(M, K);
    DiagGradientColumns out;
    out.values = Matrix::Zero(dims.nb(), static_cast<Eigen::Index>(K) * M * (M + 1) / 2);
    for (int i = 0; i < K; ++i) {
        Vector b(M);
        for (int m = 0; m < M; ++m) b(m) = B.B[static_cast<std::size_t>(m)](i, i);
        // rows: equations F_m(i,i); columns: unknowns B_ii^(l)
        Matrix beta_t(M, M);
        for (int m = 0; m < M; ++m) {
            for (int l = 0; l < M; ++l) {
                double v = Q(i, l, m)(i, i) * b(m);
                if (l == m) {
                    for (int lp = 0; lp < M; ++lp) v += b(lp) * Q(i, lp, l)(i, i);
                }
                beta_t(m, l) = v;
            }
        }
        const FactoredJacobian lu(beta_t);
        for (int n1 = 0; n1 < M; ++n1) {
            for (int m1 = 0; m1 <= n1; ++m1) {
                Vector y = Vector::Zero(M);
                y(n1) += b(m1) * b(n1);
                if (m1 != n1) y(m1) += b(m1) * b(n1);
                const Vector alpha = lu.solve(-y);
                const int col = static_cast<int>(out.columns.size());
                out.columns.push_back(layout.index(i, i, i, m1, n1));
                for (int l = 0; l < M; ++l) out.values(b_index(l, i, i, dims), col) = alpha(l);
            }
        }
    }
    return out;
}

DiagGradientColumns closed_form_diag_gradients(const TargetSet& Q) {
    return closed_form_diag_gradients(Q, DemixingSet::identity(Q.M(), Q.K()));
}

IsserlisCase isserlis_case(const QElement& a, const QElement& b) {
    if (a.i == a.j && b.i == b.j && a.i == b.i) return IsserlisCase::IV;
    if (a.i == a.j && b.i == b.j) return IsserlisCase::I;
    if (a.i == b.j && b.i == a.j) return IsserlisCase::II;
    if (a.i == b.i && a.j == b.j) return IsserlisCase::III;
    return IsserlisCase::V;
}

int QCovariance::position(int r) const {
    const auto it = std::find(columns.begin(), columns.end(), r);
    return it == columns.end() ? -1 : static_cast<int>(it - columns.begin());
}

double QCovariance::at(int r1, int r2) const {
    const int p1 = position(r1);
    const int p2 = position(r2);
    if (p1 < 0 || p2 < 0) throw DomainError("QCovariance::at: column not covered");
    return values(p1, p2);
}

QCovariance q_covariance(const TraceEngine& engine, const QLayout& layout, std::vector<int> columns,
                         const QCovarianceOptions& opts) {
    if (layout.M() != engine.M() || layout.K() != engine.K()) throw PreconditionError("q_covariance: layout mismatch");
    const int n = static_cast<int>(columns.size());
    const double T = engine.T();

    // Which tensor (and which of its entries) feeds each term.
    struct Term {
        int key = -1;
        int a = 0, b = 0, c = 0, d = 0;
    };
    std::vector<QuadKey> keys;
    auto key_index = [&keys](QuadKey k) {
        const auto it = std::find(keys.begin(), keys.end(), k);
        if (it != keys.end()) return static_cast<int>(it - keys.begin());
        keys.push_back(k);
        return static_cast<int>(keys.size()) - 1;
    };
    std::vector<Term> first(static_cast<std::size_t>(n) * n);
    std::vector<Term> second(static_cast<std::size_t>(n) * n);
    for (int c2 = 0; c2 < n; ++c2) {
        const QElement e2 = layout[columns[static_cast<std::size_t>(c2)]];
        for (int c1 = 0; c1 <= c2; ++c1) {
            const QElement e1 = layout[columns[static_cast<std::size_t>(c1)]];
            const std::size_t s = static_cast<std::size_t>(c1) + static_cast<std::size_t>(n) * c2;
            if (e1.i == e2.i && e1.j == e2.j) {
                first[s] = Term{key_index({e1.i, e1.k, e1.j, e2.k}), e2.m1, e1.m1, e1.m2, e2.m2};
            }
            if (e1.i == e2.j && e1.j == e2.i) {
                second[s] = Term{key_index({e1.i, e1.k, e2.i, e2.k}), e2.m2, e1.m1, e1.m2, e2.m1};
            }
        }
    }
    const std::vector<QuadTensor> theta = engine.quad(keys);
    const double scale = opts.normalize ? 1.0 / T : T;

    QCovariance out;
    out.values = Matrix::Zero(n, n);
    for (int c2 = 0; c2 < n; ++c2) {
        const QElement e2 = layout[columns[static_cast<std::size_t>(c2)]];
        for (int c1 = 0; c1 <= c2; ++c1) {
            const QElement e1 = layout[columns[static_cast<std::size_t>(c1)]];
            const std::size_t s = static_cast<std::size_t>(c1) + static_cast<std::size_t>(n) * c2;
            double v = 0.0;
            if (const Term& t = first[s]; t.key >= 0) v += theta[static_cast<std::size_t>(t.key)](t.a, t.b, t.c, t.d);
            if (const Term& t = second[s]; t.key >= 0) {
                v += opts.second_term_sign * theta[static_cast<std::size_t>(t.key)](t.a, t.b, t.c, t.d);
            }
            v *= scale;
            if (opts.case_iv_extra != 0.0 && isserlis_case(e1, e2) == IsserlisCase::IV) v += opts.case_iv_extra / T;
            out.values(c1, c2) = v;
            out.values(c2, c1) = v;
        }
    }
    out.columns = std::move(columns);
    return out;
}

QCovariance q_covariance_identity(const std::vector<ScvCovariance>& C_true, const std::vector<ScvPrecision>& P_presumed,
                                  const QCovarianceOptions& opts) {
    const auto engine = make_exact_engine(C_true, P_presumed);
    const QLayout layout(engine->M(), engine->K());
    std::vector<int> all(static_cast<std::size_t>(layout.size()));
    for (int r = 0; r < layout.size(); ++r) all[static_cast<std::size_t>(r)] = r;
    return q_covariance(*engine, layout, std::move(all), opts);
}

std::vector<int> isr_support_columns(const QLayout& layout, int p, int q) {
    if (p == q) throw PreconditionError("isr_support_columns: need p != q");
    std::vector<int> cols;
    for (int r = 0; r < layout.size(); ++r) {
        const QElement& e = layout[r];
        const bool pair = (e.i == p && e.j == q) || (e.i == q && e.j == p);
        if (pair && (e.k == p || e.k == q)) cols.push_back(r);
    }
    return cols;
}

double quadratic_form(const Vector& g, const QCovariance& cq) {
    Vector sub(static_cast<Eigen::Index>(cq.columns.size()));
    std::vector<char> covered(static_cast<std::size_t>(g.size()), 0);
    for (std::size_t c = 0; c < cq.columns.size(); ++c) {
        sub(static_cast<Eigen::Index>(c)) = g(cq.columns[c]);
        covered[static_cast<std::size_t>(cq.columns[c])] = 1;
    }
    const double scale = g.cwiseAbs().maxCoeff();
    for (Eigen::Index r = 0; r < g.size(); ++r) {
        if (!covered[static_cast<std::size_t>(r)] && std::abs(g(r)) > 1e-10 * scale) {
            throw PreconditionError("quadratic_form: gradient has weight outside the covered columns");
        }
    }
    return sub.dot(cq.values * sub);
}

IsrTable predicted_isr(const GradientMatrix& G, const QCovariance& cq, const DemixingSet& gains, const Matrix& powers) {
    const int M = G.dims.M;
    const int K = G.dims.K;
    IsrTable t = IsrTable::zeros(M, K);
    for (int m = 0; m < M; ++m) {
        for (int i = 0; i < K; ++i) {
            for (int j = 0; j < K; ++j) {
                if (i == j) continue;
                const double gain = gains.B[static_cast<std::size_t>(m)](i, i);
                t.isr[static_cast<std::size_t>(m)](i, j) =
                    quadratic_form(G.row(m, i, j), cq) / (gain * gain) * powers(m, j) / powers(m, i);
            }
        }
    }
    return t;
}

TargetSet phi_limits(const TraceEngine& engine) {
    const int M = engine.M();
    const int K = engine.K();
    TargetSet Q(M, K);
    for (int k = 0; k < K; ++k) {
        for (int a = 0; a < M; ++a) {
            for (int b = a; b < M; ++b) {
                Matrix d = Matrix::Zero(K, K);
                for (int i = 0; i < K; ++i) d(i, i) = engine.pair_trace(i, k, a, b);
                Q.set_pair(k, a, b, d);
            }
        }
    }
    return Q;
}

double gain_equation_residual(const TargetSet& phi, const DemixingSet& gains) {
    double worst = 0.0;
    for (int k = 0; k < phi.K(); ++k) {
        for (int m = 0; m < phi.M(); ++m) {
            double s = 0.0;
            for (int l = 0; l < phi.M(); ++l) {
                s += gains.B[static_cast<std::size_t>(m)](k, k) * phi(k, m, l)(k, k) * gains.B[static_cast<std::size_t>(l)](k, k);
            }
            worst = std::max(worst, std::abs(s - 1.0));
        }
    }
    return worst;
}

GainSolution asymptotic_gains(const TargetSet& phi, const NewtonOptions& opts) {
    const int M = phi.M();
    const int K = phi.K();
    GainSolution out;
    out.gains.B.assign(static_cast<std::size_t>(M), Matrix::Zero(K, K));
    for (int k = 0; k < K; ++k) {
        Matrix A(M, M);
        for (int m = 0; m < M; ++m)
            for (int l = 0; l < M; ++l) A(m, l) = phi(k, m, l)(k, k);
        // The positive root is the unique minimiser of the strictly convex
        // 0.5 g^T A g - sum log g_m over g > 0. Other sign patterns also solve
        // the equations but are not the limit of the estimator.
        auto eval = [&A](const Vector& g) { return Vector((g.array() * (A * g).array()).matrix() - Vector::Ones(g.size())); };
        auto objective = [&A](const Vector& g) { return 0.5 * g.dot(A * g) - g.array().log().sum(); };
        Vector g(M);
        for (int m = 0; m < M; ++m) g(m) = A(m, m) > 0.0 ? 1.0 / std::sqrt(A(m, m)) : 1.0;
        Vector f = eval(g);
        int it = 0;
        for (; it < opts.max_iter && f.cwiseAbs().maxCoeff() > opts.tol; ++it) {
            Matrix H = A;
            H.diagonal() += g.array().square().inverse().matrix();
            const Eigen::LLT<Matrix> llt(H);
            if (llt.info() != Eigen::Success) throw NoConvergence("asymptotic_gains: target limits are not positive definite");
            const Vector grad = A * g - g.cwiseInverse();
            const Vector step = llt.solve(-grad);
            const double f0 = objective(g);
            double s = 1.0;
            Vector trial = g + step;
            for (int h = 0; h < opts.max_halvings; ++h) {
                if ((trial.array() > 0.0).all() &&
                    (objective(trial) <= f0 || eval(trial).norm() < f.norm())) {
                    break;
                }
                s *= 0.5;
                trial = g + s * step;
            }
            if (!(trial.array() > 0.0).all()) throw NoConvergence("asymptotic_gains: step left the positive orthant");
            g = trial;
            f = eval(g);
        }
        if (!(f.cwiseAbs().maxCoeff() <= opts.tol)) {
            throw NoConvergence("asymptotic_gains: no solution found for source " + std::to_string(k));
        }
        out.iterations = std::max(out.iterations, it);
        for (int m = 0; m < M; ++m) out.gains.B[static_cast<std::size_t>(m)](k, k) = g(m);
    }
    out.residual = gain_equation_residual(phi, out.gains);
    return out;
}

EngineKind parse_engine(const std::string& s) {
    if (s == "auto") return EngineKind::Auto;
    if (s == "exact") return EngineKind::Exact;
    if (s == "spectral") return EngineKind::Spectral;
    throw PreconditionError("unknown prediction engine '" + s + "' (expected auto, exact or spectral)");
}

std::string to_string(EngineKind e) {
    switch (e) {
        case EngineKind::Auto: return "auto";
        case EngineKind::Exact: return "exact";
        case EngineKind::Spectral: return "spectral";
    }
    return "auto";
}

Matrix source_powers(const std::vector<ScvCovariance>& C) {
    if (C.empty()) return {};
    Matrix p(C.front().M(), static_cast<Eigen::Index>(C.size()));
    for (std::size_t k = 0; k < C.size(); ++k)
        for (int m = 0; m < C.front().M(); ++m) p(m, static_cast<Eigen::Index>(k)) = C[k].power(m);
    return p;
}

std::unique_ptr<TraceEngine> make_engine(const std::vector<ScvCovariance>& C_true,
                                         const std::vector<ScvCovariance>& C_presumed, const PredictionOptions& opts) {
    if (C_true.empty() || C_true.size() != C_presumed.size()) {
        throw PreconditionError("make_engine: need one true and one presumed covariance per source");
    }
    EngineKind kind = opts.engine;
    if (kind == EngineKind::Auto) {
        const double n = static_cast<double>(C_true.front().M()) * C_true.front().T();
        const double dense = static_cast<double>(C_true.size()) * n * n * sizeof(double);
        kind = dense <= static_cast<double>(opts.memory_budget_bytes) ? EngineKind::Exact : EngineKind::Spectral;
    }
    if (kind == EngineKind::Spectral) return make_spectral_engine(C_true, C_presumed, opts.parallel);
    std::vector<ScvPrecision> P;
    P.reserve(C_presumed.size());
    for (const auto& c : C_presumed) P.push_back(scv_precision(c));
    ExactEngineOptions eo;
    eo.parallel = opts.parallel;
    return make_exact_engine(C_true, std::move(P), eo);
}

Prediction predict(const TraceEngine& engine, const Matrix& powers, const PredictionOptions& opts) {
    const int M = engine.M();
    const int K = engine.K();
    const QLayout layout(M, K);
    Prediction out;
    out.engine = engine.name();
    out.powers = powers;
    out.expected = phi_limits(engine);
    GainSolution gs = asymptotic_gains(out.expected, opts.gain_solver);
    out.gains = std::move(gs.gains);
    out.gain_residual = gs.residual;
    out.G = solve_gradients(jacobian(out.gains, out.expected), out.gains, layout, opts.min_rcond);
    out.G.dims.T = engine.T();
    out.isr = IsrTable::zeros(M, K);
    for (int p = 0; p < K; ++p) {
        for (int q = p + 1; q < K; ++q) {
            const QCovariance cq = q_covariance(engine, layout, isr_support_columns(layout, p, q), opts.cq);
            for (int m = 0; m < M; ++m) {
                for (const auto& [i, j] : {std::pair{p, q}, std::pair{q, p}}) {
                    const double gain = out.gains.B[static_cast<std::size_t>(m)](i, i);
                    out.isr.isr[static_cast<std::size_t>(m)](i, j) =
                        quadratic_form(out.G.row(m, i, j), cq) / (gain * gain) * powers(m, j) / powers(m, i);
                }
            }
        }
    }
    return out;
}

Prediction predict(const std::vector<ScvCovariance>& C_true, const std::vector<ScvCovariance>& C_presumed,
                   const PredictionOptions& opts) {
    const auto engine = make_engine(C_true, C_presumed, opts);
    return predict(*engine, source_powers(C_true), opts);
}

IsrTable icrlb_gaussian(const std::vector<ScvCovariance>& C_true, const PredictionOptions& opts) {
    return predict(C_true, C_true, opts).isr;
}

}  // namespace qiva
