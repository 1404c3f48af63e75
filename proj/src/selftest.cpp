#include "qiva/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "qiva/banded.hpp"
#include "qiva/sedjoco.hpp"

namespace qiva {

namespace {

constexpr std::uint64_t kTagInstance = 1;
constexpr std::uint64_t kTagData = 2;
constexpr std::uint64_t kTagMixing = 3;

std::string sci(double v) {
    std::ostringstream s;
    s.precision(3);
    s << std::scientific << v;
    return s.str();
}

/// Dimensions of the i-th small instance: M in 1..3, K in 2..3, T in {32, 64}.
void instance_dims(int i, int& M, int& K, int& T) {
    M = 1 + i % 3;
    K = 2 + (i / 3) % 2;
    T = (i / 6) % 2 == 0 ? 32 : 64;
}

std::vector<BandedCholesky> factor_all(const std::vector<ScvCovariance>& C) {
    std::vector<BandedCholesky> out;
    out.reserve(C.size());
    for (const auto& c : C) out.emplace_back(c);
    return out;
}

NewtonOptions tight() {
    NewtonOptions o;
    o.tol = 1e-13;
    o.max_iter = 100;
    return o;
}

}  // namespace

bool SelftestReport::all_pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.pass; });
}

SmallInstance make_small_instance(int M, int K, int T, int L, Rng& rng) {
    SmallInstance inst;
    inst.M = M;
    inst.K = K;
    inst.T = T;
    const BankZeros z0 = draw_bank_zeros(M, K, L, 2.0, rng);
    const BankZeros z1 = perturb_bank_zeros(z0, 0.3, 0.2, rng);
    inst.true_bank = bank_from_zeros(z0, 0.5);
    const FirBank presumed = bank_from_zeros(z1, 0.5);
    for (int k = 0; k < K; ++k) {
        inst.C_true.push_back(scv_covariance_from_firs(inst.true_bank, k, T));
        inst.C_presumed.push_back(scv_covariance_from_firs(presumed, k, T));
        inst.P_presumed.push_back(scv_precision(inst.C_presumed.back()));
    }
    return inst;
}

CheckResult check_gradient_fd(const SelftestOptions& opts) {
    CheckResult r{"gradient finite differences", false, 0.0, 1e-4, {}};
    const double h = 1e-5;
    long entries = 0;
    for (int n = 0; n < opts.gradient_instances; ++n) {
        int M, K, T;
        instance_dims(n, M, K, T);
        Rng rng = Rng::stream(opts.seed, static_cast<std::uint64_t>(n), kTagInstance);
        const SmallInstance inst = make_small_instance(M, K, T, 4, rng);
        Rng data = Rng::stream(opts.seed, static_cast<std::uint64_t>(n), kTagData);
        const auto X = gen_sources(inst.true_bank, NoiseFamily::Gaussian, T, data);
        const TargetSet Q = compute_targets(X, inst.P_presumed);
        const NewtonResult sol = newton_solve(Q, DemixingSet::identity(M, K), tight());
        if (!sol.converged()) {
            r.detail = "Newton failed on instance " + std::to_string(n);
            r.metric = INFINITY;
            return r;
        }
        const QLayout layout(M, K);
        const GradientMatrix G = solve_gradients(jacobian(sol.B, Q), sol.B, layout);
        const double floor = 1e-2 * G.G.cwiseAbs().maxCoeff();
        for (int c = 0; c < layout.size(); ++c) {
            TargetSet Qp = Q;
            TargetSet Qm = Q;
            layout.perturb(Qp, c, h);
            layout.perturb(Qm, c, -h);
            const NewtonResult bp = newton_solve(Qp, sol.B, tight());
            const NewtonResult bm = newton_solve(Qm, sol.B, tight());
            if (!bp.converged() || !bm.converged()) {
                r.detail = "perturbed Newton failed on instance " + std::to_string(n);
                r.metric = INFINITY;
                return r;
            }
            const Vector fd = (bp.B.flat() - bm.B.flat()) / (2.0 * h);
            for (Eigen::Index row = 0; row < fd.size(); ++row) {
                const double an = G.G(row, c);
                const double rel = std::abs(fd(row) - an) / std::max(std::abs(an), floor);
                r.metric = std::max(r.metric, rel);
                ++entries;
            }
        }
    }
    r.pass = r.metric <= r.threshold;
    r.detail = std::to_string(opts.gradient_instances) + " instances, " + std::to_string(entries) +
               " entries, worst relative error " + sci(r.metric);
    return r;
}

CheckResult check_closed_form(const SelftestOptions& opts) {
    CheckResult r{"closed-form diagonal gradients", false, 0.0, 1e-10, {}};
    double worst_cf = 0.0;
    double worst_leak = 0.0;
    for (int n = 0; n < opts.gradient_instances; ++n) {
        int M, K, T;
        instance_dims(n, M, K, T);
        Rng rng = Rng::stream(opts.seed, static_cast<std::uint64_t>(n), kTagInstance);
        const SmallInstance inst = make_small_instance(M, K, T, 4, rng);
        const TargetSet phi = expected_targets(inst.C_true, inst.P_presumed);
        const GainSolution gs = asymptotic_gains(phi);
        const QLayout layout(M, K);
        const GradientMatrix G = solve_gradients(jacobian(gs.gains, phi), gs.gains, layout);
        const DiagGradientColumns cf = closed_form_diag_gradients(phi, gs.gains);
        for (std::size_t c = 0; c < cf.columns.size(); ++c) {
            const double d =
                (cf.values.col(static_cast<Eigen::Index>(c)) - G.G.col(cf.columns[c])).cwiseAbs().maxCoeff();
            worst_cf = std::max(worst_cf, d);
        }
        const ProblemDims dims{M, K, T, 0};
        for (int c = 0; c < layout.size(); ++c) {
            if (layout[c].i != layout[c].j) continue;
            for (int m = 0; m < M; ++m)
                for (int p = 0; p < K; ++p)
                    for (int q = 0; q < K; ++q)
                        if (p != q) worst_leak = std::max(worst_leak, std::abs(G.G(b_index(m, p, q, dims), c)));
        }
    }
    r.metric = std::max(worst_cf, worst_leak);
    r.pass = r.metric <= r.threshold;
    r.detail = "closed form vs generic " + sci(worst_cf) + ", off-diagonal rows of i=j columns " + sci(worst_leak);
    return r;
}

CheckResult check_covariance_oracle(const SelftestOptions& opts) {
    CheckResult r{"target covariance vs Monte Carlo", false, 0.0, 3.0, {}};
    const int M = 2;
    const int K = 2;
    const int T = opts.covariance_T;
    Rng rng = Rng::stream(opts.seed, 0, kTagInstance + 100);
    const SmallInstance inst = make_small_instance(M, K, T, 4, rng);
    const QCovariance cq = q_covariance_identity(inst.C_true, inst.P_presumed, opts.cq);
    const QLayout layout(M, K);
    const auto chol = factor_all(inst.C_presumed);
    const long N = opts.covariance_trials;
    const int n = layout.size();
    Matrix samples(n, N);
#pragma omp parallel for schedule(static) if (opts.parallel)
    for (long t = 0; t < N; ++t) {
        Rng data = Rng::stream(opts.seed, static_cast<std::uint64_t>(t), kTagData + 100);
        const auto X = gen_sources(inst.true_bank, NoiseFamily::Gaussian, T, data);
        samples.col(t) = layout.gather(compute_targets(X, chol));
    }
    const Vector mean = samples.rowwise().mean();
    samples.colwise() -= mean;
    long checked = 0;
    long violations = 0;
    long zero_violations = 0;
    for (int a = 0; a < n; ++a) {
        for (int b = a; b < n; ++b) {
            const double theo = cq.values(a, b);
            const IsserlisCase ic = isserlis_case(layout[a], layout[b]);
            // independent sources: these covariances vanish identically
            if ((ic == IsserlisCase::V || ic == IsserlisCase::I) && theo != 0.0) ++zero_violations;
            if (theo == 0.0) continue;
            const Eigen::ArrayXd prod = samples.row(a).array() * samples.row(b).array();
            const double emp = prod.sum() / static_cast<double>(N - 1);
            const double var = (prod - prod.mean()).square().sum() / static_cast<double>(N - 1);
            const double se = std::sqrt(var / static_cast<double>(N));
            const double z = std::abs(emp - theo) / se;
            r.metric = std::max(r.metric, z);
            if (z > r.threshold) ++violations;
            ++checked;
        }
    }
    r.pass = violations == 0 && zero_violations == 0 && checked > 0;
    r.detail = std::to_string(checked) + " nonzero entries over " + std::to_string(N) + " trials at T=" +
               std::to_string(T) + ", " + std::to_string(violations) + " beyond 3 SE (worst " + sci(r.metric) +
               " SE), " + std::to_string(zero_violations) + " nonzero uncorrelated entries";
    return r;
}

CheckResult check_isserlis_bruteforce(const SelftestOptions& opts) {
    CheckResult r{"Isserlis brute force at T=4", false, 0.0, 1e-12, {}};
    const int M = 2;
    const int K = 2;
    const int T = 4;
    Rng rng = Rng::stream(opts.seed, 0, kTagInstance + 200);
    const SmallInstance inst = make_small_instance(M, K, T, 3, rng);
    const QCovariance cq = q_covariance_identity(inst.C_true, inst.P_presumed, opts.cq);
    const QLayout layout(M, K);
    std::vector<Matrix> C;
    for (const auto& c : inst.C_true) C.push_back(c.dense());
    // E[x_{i,a}(t) x_{j,b}(s)]
    auto cov = [&](int i, int a, int t, int j, int b, int s) {
        return i == j ? C[static_cast<std::size_t>(i)](a * T + t, b * T + s) : 0.0;
    };
    double scale = cq.values.cwiseAbs().maxCoeff();
    long case_iv = 0;
    for (int c1 = 0; c1 < layout.size(); ++c1) {
        const QElement e1 = layout[c1];
        const auto P1 = inst.P_presumed[static_cast<std::size_t>(e1.k)].block(e1.m1, e1.m2);
        for (int c2 = c1; c2 < layout.size(); ++c2) {
            const QElement e2 = layout[c2];
            const auto P2 = inst.P_presumed[static_cast<std::size_t>(e2.k)].block(e2.m1, e2.m2);
            double acc = 0.0;
            for (int t = 0; t < T; ++t)
                for (int s = 0; s < T; ++s)
                    for (int u = 0; u < T; ++u)
                        for (int v = 0; v < T; ++v) {
                            const double pairs =
                                cov(e1.i, e1.m1, t, e2.i, e2.m1, u) * cov(e1.j, e1.m2, s, e2.j, e2.m2, v) +
                                cov(e1.i, e1.m1, t, e2.j, e2.m2, v) * cov(e1.j, e1.m2, s, e2.i, e2.m1, u);
                            acc += P1(t, s) * P2(u, v) * pairs;
                        }
            acc /= static_cast<double>(T) * T;
            if (isserlis_case(e1, e2) == IsserlisCase::IV) ++case_iv;
            r.metric = std::max(r.metric, std::abs(acc - cq.values(c1, c2)) / scale);
        }
    }
    r.pass = r.metric <= r.threshold && case_iv > 0;
    r.detail = "all " + std::to_string(layout.size() * (layout.size() + 1) / 2) + " entries (" +
               std::to_string(case_iv) + " in Case IV), worst relative deviation " + sci(r.metric);
    return r;
}

CheckResult check_solver_certification(const SelftestOptions& opts) {
    CheckResult r{"solver certification", false, 0.0, 1.0, {}};
    double worst_drill = 0.0;
    double worst_equiv = 0.0;
    double worst_gain = 0.0;
    int failures = 0;
    for (int n = 0; n < opts.gradient_instances; ++n) {
        int M, K, T;
        instance_dims(n, M, K, T);
        Rng rng = Rng::stream(opts.seed, static_cast<std::uint64_t>(n), kTagInstance);
        const SmallInstance inst = make_small_instance(M, K, T, 4, rng);
        Rng data = Rng::stream(opts.seed, static_cast<std::uint64_t>(n), kTagData);
        const auto S = gen_sources(inst.true_bank, NoiseFamily::Gaussian, T, data);
        Rng mrng = Rng::stream(opts.seed, static_cast<std::uint64_t>(n), kTagMixing);
        const auto A = random_mixing(M, K, mrng);
        const auto X = mix(A, S);
        const NewtonResult plain = newton_solve(compute_targets(S, inst.P_presumed), DemixingSet::identity(M, K));
        DemixingSet B0;
        for (const auto& a : A) B0.B.push_back(a.inverse());
        const TargetSet QA = compute_targets(X, inst.P_presumed);
        const NewtonResult mixed = newton_solve(QA, B0);
        if (!plain.converged() || !mixed.converged()) {
            ++failures;
            continue;
        }
        worst_drill = std::max({worst_drill, drilled_check(plain.B, compute_targets(S, inst.P_presumed)),
                                drilled_check(mixed.B, QA)});
        for (int m = 0; m < M; ++m) {
            const Matrix global = mixed.B.B[static_cast<std::size_t>(m)] * A[static_cast<std::size_t>(m)];
            worst_equiv = std::max(worst_equiv, (global - plain.B.B[static_cast<std::size_t>(m)]).cwiseAbs().maxCoeff());
        }
        const TargetSet phi = expected_targets(inst.C_true, inst.P_presumed);
        worst_gain = std::max(worst_gain, gain_equation_residual(phi, asymptotic_gains(phi).gains));
    }
    r.metric = std::max({worst_drill / 1e-10, worst_equiv / 1e-8, worst_gain / 1e-10});
    r.pass = failures == 0 && r.metric <= r.threshold;
    r.detail = "drilled " + sci(worst_drill) + " (<= 1e-10), equivariance " + sci(worst_equiv) +
               " (<= 1e-8), gain equations " + sci(worst_gain) + " (<= 1e-10), " + std::to_string(failures) +
               " solver failures";
    return r;
}

CheckResult check_inverse_t_scaling(const SelftestOptions& opts) {
    CheckResult r{"1/T scaling of predicted ISR", false, 0.0, 0.05, {}};
    Rng rng = Rng::stream(opts.seed, 0, kTagInstance + 300);
    const BankZeros z0 = draw_bank_zeros(2, 2, 4, 2.0, rng);
    const BankZeros z1 = perturb_bank_zeros(z0, 0.3, 0.2, rng);
    const FirBank truth = bank_from_zeros(z0, 0.5);
    const FirBank presumed = bank_from_zeros(z1, 0.5);
    PredictionOptions popts;
    popts.engine = EngineKind::Exact;
    popts.cq = opts.cq;
    popts.parallel = opts.parallel;
    double totals[2];
    const int Ts[2] = {1000, 2000};
    for (int s = 0; s < 2; ++s) {
        std::vector<ScvCovariance> Ct;
        std::vector<ScvCovariance> Cp;
        for (int k = 0; k < 2; ++k) {
            Ct.push_back(scv_covariance_from_firs(truth, k, Ts[s]));
            Cp.push_back(scv_covariance_from_firs(presumed, k, Ts[s]));
        }
        totals[s] = predict(Ct, Cp, popts).isr.total_normalized();
    }
    const double diff = to_db(totals[0]) - to_db(totals[1]);
    const double expected = 10.0 * std::log10(2.0);
    r.metric = std::abs(diff - expected);
    r.pass = r.metric <= r.threshold;
    r.detail = "T=1000 vs T=2000 differ by " + std::to_string(diff) + " dB (expected " + std::to_string(expected) + ")";
    return r;
}

SelftestReport run_selftest(const SelftestOptions& opts) {
    SelftestReport rep;
    rep.checks.push_back(check_gradient_fd(opts));
    rep.checks.push_back(check_closed_form(opts));
    rep.checks.push_back(check_covariance_oracle(opts));
    rep.checks.push_back(check_isserlis_bruteforce(opts));
    rep.checks.push_back(check_solver_certification(opts));
    rep.checks.push_back(check_inverse_t_scaling(opts));
    return rep;
}

}  // namespace qiva
