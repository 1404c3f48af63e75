#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <complex>

#include "qiva/perturbation.hpp"
#include "qiva/selftest.hpp"
#include "qiva/sourcegen.hpp"

using namespace qiva;

namespace {

TargetSet scalar_targets(double q) {
    TargetSet Q(1, 1);
    Q.set_pair(0, 0, 0, Matrix::Constant(1, 1, q));
    return Q;
}

std::vector<ScvCovariance> bank_covariances(const FirBank& bank, int T) {
    std::vector<ScvCovariance> C;
    for (int k = 0; k < bank.K(); ++k) C.push_back(scv_covariance_from_firs(bank, k, T));
    return C;
}

}  // namespace

TEST_CASE("rhs_y at the identity") {
    const int M = 2, K = 3;
    const ProblemDims d{M, K, 1, 0};
    const DemixingSet I = DemixingSet::identity(M, K);
    SUBCASE("same dataset") {
        const Vector y = rhs_y({1, 1, 1, 0, 0}, I);
        Vector e = Vector::Zero(d.nb());
        e(1 + 1 * K + 0) = 1.0;
        CHECK((y - e).norm() == 0.0);
    }
    SUBCASE("two datasets") {
        const Vector y = rhs_y({2, 2, 2, 0, 1}, I);
        Vector e = Vector::Zero(d.nb());
        e(2 + 2 * K + 0 * K * K) += 1.0;
        e(2 + 2 * K + 1 * K * K) += 1.0;
        CHECK((y - e).norm() == 0.0);
    }
    SUBCASE("i = j different from k") { CHECK(rhs_y({0, 1, 1, 0, 1}, I).norm() == 0.0); }
}

TEST_CASE("rhs_y is the derivative of the residual") {
    Rng rng(4);
    const int M = 2, K = 2;
    TargetSet Q(M, K);
    for (int k = 0; k < K; ++k)
        for (int m1 = 0; m1 < M; ++m1)
            for (int m2 = m1; m2 < M; ++m2) {
                Matrix b(K, K);
                for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = rng.normal();
                Q.set_pair(k, m1, m2, b);
            }
    DemixingSet B = DemixingSet::identity(M, K);
    for (auto& b : B.B)
        for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] += 0.3 * rng.normal();
    const QLayout layout(M, K);
    for (int r = 0; r < layout.size(); ++r) {
        TargetSet Qp = Q;
        layout.perturb(Qp, r, 1.0);
        // the residual is affine in Q, so the difference is exact
        const Vector diff = residual(B, Qp).flat() - residual(B, Q).flat();
        CHECK((diff - rhs_y(layout[r], B)).cwiseAbs().maxCoeff() < 1e-13);
    }
}

TEST_CASE("scalar gradient and closed form") {
    const DemixingSet B = DemixingSet::identity(1, 1);
    const TargetSet Q = scalar_targets(1.0);
    const GradientMatrix G = solve_gradients(jacobian(B, Q), B, QLayout(1, 1));
    CHECK(G.G(0, 0) == doctest::Approx(-0.5));
    const DiagGradientColumns cf = closed_form_diag_gradients(Q);
    CHECK(cf.values(0, 0) == doctest::Approx(-0.5));

    // M = 1, K = 2: decoupled scalars, alpha = -1 / (2 Q_ii) at B = I
    TargetSet Q2(1, 2);
    Matrix d = Matrix::Zero(2, 2);
    d.diagonal() << 1.0, 1.0;
    Q2.set_pair(0, 0, 0, d);
    Q2.set_pair(1, 0, 0, d);
    const DiagGradientColumns cf2 = closed_form_diag_gradients(Q2);
    for (std::size_t c = 0; c < cf2.columns.size(); ++c) CHECK(cf2.values.col(c).sum() == doctest::Approx(-0.5));
    CHECK_THROWS_AS((void)closed_form_diag_gradients(Q2, [] {
        DemixingSet b = DemixingSet::identity(1, 2);
        b.B[0](0, 1) = 0.1;
        return b;
    }()), PreconditionError);
}

TEST_CASE("closed form matches the generic solve on random diagonal targets") {
    Rng rng(6);
    const int M = 2, K = 2;
    TargetSet Q(M, K);
    for (int k = 0; k < K; ++k) {
        Matrix phi(M, M);
        phi << 1.0 + rng.uniform01(), 0.3 * rng.normal(), 0.0, 1.0 + rng.uniform01();
        phi(1, 0) = phi(0, 1);
        for (int m1 = 0; m1 < M; ++m1)
            for (int m2 = m1; m2 < M; ++m2) {
                Matrix d = Matrix::Zero(K, K);
                for (int i = 0; i < K; ++i) d(i, i) = (i == k) ? phi(m1, m2) : 0.5 + rng.uniform01() * (m1 == m2);
                Q.set_pair(k, m1, m2, d);
            }
    }
    const GainSolution gs = asymptotic_gains(Q);
    const QLayout layout(M, K);
    const GradientMatrix G = solve_gradients(jacobian(gs.gains, Q), gs.gains, layout);
    const DiagGradientColumns cf = closed_form_diag_gradients(Q, gs.gains);
    for (std::size_t c = 0; c < cf.columns.size(); ++c)
        CHECK((cf.values.col(c) - G.G.col(cf.columns[c])).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("Isserlis classification") {
    CHECK(isserlis_case({0, 1, 1, 0, 0}, {1, 1, 1, 0, 1}) == IsserlisCase::IV);
    CHECK(isserlis_case({0, 0, 0, 0, 0}, {0, 1, 1, 0, 0}) == IsserlisCase::I);
    CHECK(isserlis_case({0, 0, 1, 0, 0}, {1, 1, 0, 0, 1}) == IsserlisCase::II);
    CHECK(isserlis_case({0, 0, 1, 0, 1}, {1, 0, 1, 0, 0}) == IsserlisCase::III);
    CHECK(isserlis_case({0, 0, 1, 0, 0}, {0, 0, 2, 0, 0}) == IsserlisCase::V);
}

TEST_CASE("target covariance on a white model") {
    const int T = 10;
    ScvCovariance c(1, T, 0);
    c.set_lag(0, 0, 0, 1.0);
    const QCovariance cq = q_covariance_identity({c, c}, {scv_precision(c), scv_precision(c)});
    const QLayout layout(1, 2);
    const int off = layout.index(0, 1, 0, 0, 0);
    CHECK(cq.at(off, off) == doctest::Approx(1.0 / T));
    const int diag = layout.index(0, 0, 0, 0, 0);
    CHECK(cq.at(diag, diag) == doctest::Approx(2.0 / T));
    CHECK(cq.at(diag, layout.index(0, 1, 1, 0, 0)) == 0.0);
    CHECK(cq.values.isApprox(cq.values.transpose()));
}

namespace {

// Smallest eigenvalue of the per-source spectral matrix H(w) H(w)^H on a grid.
// Near-zero values mean long correlation lengths and slow edge decay.
double symbol_floor(const FirBank& bank, int k) {
    double floor = 1e300;
    const int M = bank.M();
    for (int s = 0; s <= 4000; ++s) {
        const double w = M_PI * s / 4000.0;
        Eigen::MatrixXcd H(M, M);
        for (int m = 0; m < M; ++m)
            for (int l = 0; l < M; ++l) {
                std::complex<double> z = 0.0;
                const Taps& h = bank.taps(k, m, l);
                for (std::size_t u = 0; u < h.size(); ++u) z += h[u] * std::polar(1.0, -w * double(u));
                H(m, l) = z;
            }
        const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(H * H.adjoint());
        floor = std::min(floor, es.eigenvalues()(0));
    }
    return floor;
}

Matrix scaled_cq(const FirBank& bank, int T) {
    const auto C = bank_covariances(bank, T);
    std::vector<ScvPrecision> P;
    for (const auto& c : C) P.push_back(scv_precision(c));
    return double(T) * q_covariance_identity(C, P).values;
}

}  // namespace

TEST_CASE("target covariance scales as 1/T") {
    Rng rng(9);
    const FirBank bank = gaussian_tap_bank(2, 2, 3, 0.5, rng);
    for (int k = 0; k < bank.K(); ++k) REQUIRE(symbol_floor(bank, k) > 0.04);

    // T C_q(T) = c + d / T up to edge terms that vanish once T exceeds the
    // correlation length. Two Richardson limits must coincide.
    const Matrix d1 = scaled_cq(bank, 200);
    const Matrix d2 = scaled_cq(bank, 400);
    const Matrix d3 = scaled_cq(bank, 800);
    const Matrix lim_a = 2.0 * d2 - d1;
    const Matrix lim_b = 2.0 * d3 - d2;
    const double scale = lim_b.cwiseAbs().maxCoeff();
    CHECK((lim_a - lim_b).cwiseAbs().maxCoeff() / scale < 1e-3);

    // Raw doubling is within the O(1/T) trace edge effect and shrinks with T.
    const double raw_400 = (d2 - d3).cwiseAbs().maxCoeff() / scale;
    const double raw_200 = (d1 - d2).cwiseAbs().maxCoeff() / scale;
    CHECK(raw_400 < 2e-2);
    CHECK(raw_400 < 0.6 * raw_200);
}

TEST_CASE("self-test checks pass and catch injected faults") {
    SelftestOptions o;
    o.gradient_instances = 4;
    o.covariance_trials = 20000;
    CHECK(check_isserlis_bruteforce(o).pass);
    CHECK(check_inverse_t_scaling(o).pass);
    CHECK(check_covariance_oracle(o).pass);
    SelftestOptions sign = o;
    sign.cq.second_term_sign = -1.0;
    CHECK_FALSE(check_covariance_oracle(sign).pass);
    CHECK_FALSE(check_isserlis_bruteforce(sign).pass);
    SelftestOptions scale = o;
    scale.cq.normalize = false;
    CHECK_FALSE(check_inverse_t_scaling(scale).pass);
}

TEST_CASE("ISR support and quadratic forms") {
    const QLayout layout(2, 3);
    const auto cols = isr_support_columns(layout, 0, 2);
    for (int r : cols) {
        const QElement& e = layout[r];
        CHECK(e.i != e.j);
        CHECK(((e.i == 0 && e.j == 2) || (e.i == 2 && e.j == 0)));
        CHECK((e.k == 0 || e.k == 2));
    }
    // k in {0,2}; blocks (0,0),(1,1) hold one canonical element, block (0,1) two
    CHECK(cols.size() == 2 * (1 + 1 + 2));
    QCovariance cq;
    cq.columns = {cols[0], cols[1]};
    cq.values = Matrix::Identity(2, 2) * 2.0;
    Vector g = Vector::Zero(layout.size());
    g(cols[0]) = 1.0;
    g(cols[1]) = 3.0;
    CHECK(quadratic_form(g, cq) == doctest::Approx(20.0));
    g(cols[2]) = 1.0;
    CHECK_THROWS_AS((void)quadratic_form(g, cq), PreconditionError);
}

TEST_CASE("asymptotic gains") {
    SUBCASE("single dataset") {
        TargetSet phi(1, 2);
        Matrix d = Matrix::Zero(2, 2);
        d.diagonal() << 4.0, 9.0;
        phi.set_pair(0, 0, 0, d);
        phi.set_pair(1, 0, 0, d);
        const GainSolution g = asymptotic_gains(phi);
        CHECK(g.gains.B[0](0, 0) == doctest::Approx(0.5));
        CHECK(g.gains.B[0](1, 1) == doctest::Approx(1.0 / 3.0));
    }
    SUBCASE("positive root when other sign patterns also solve") {
        // rows far from summing to one with strong negative coupling: the
        // mixed-sign root is nearby, the positive one must be returned
        TargetSet phi(2, 1);
        phi.set_pair(0, 0, 0, Matrix::Constant(1, 1, 10.5489));
        phi.set_pair(0, 1, 1, Matrix::Constant(1, 1, 9.33159));
        phi.set_pair(0, 0, 1, Matrix::Constant(1, 1, -8.83042));
        const GainSolution g = asymptotic_gains(phi);
        CHECK(g.gains.B[0](0, 0) > 0.0);
        CHECK(g.gains.B[1](0, 0) > 0.0);
        CHECK(g.residual < 1e-10);
    }
    SUBCASE("matched model gives unit gains") {
        Rng rng(8);
        const FirBank bank = gaussian_tap_bank(3, 2, 4, 0.5, rng);
        const auto C = bank_covariances(bank, 60);
        std::vector<ScvPrecision> P;
        for (const auto& c : C) P.push_back(scv_precision(c));
        const TargetSet phi = expected_targets(C, P);
        CHECK(gain_equation_residual(phi, DemixingSet::identity(3, 2)) < 1e-10);
        const GainSolution g = asymptotic_gains(phi);
        for (const auto& b : g.gains.B) CHECK((b - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-9);
    }
    SUBCASE("random SPD limits") {
        Rng rng(9);
        TargetSet phi(2, 2);
        for (int k = 0; k < 2; ++k) {
            Matrix a(2, 3);
            for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
            const Matrix s = a * a.transpose();
            for (int m1 = 0; m1 < 2; ++m1)
                for (int m2 = m1; m2 < 2; ++m2) {
                    Matrix d = Matrix::Zero(2, 2);
                    d(k, k) = s(m1, m2);
                    d(1 - k, 1 - k) = m1 == m2 ? 1.0 : 0.0;
                    phi.set_pair(k, m1, m2, d);
                }
        }
        CHECK(asymptotic_gains(phi).residual <= 1e-10);
    }
}

TEST_CASE("phi limits and their T dependence") {
    Rng rng(10);
    const BankZeros z0 = draw_bank_zeros(2, 2, 6, 2.0, rng);
    const FirBank bt = bank_from_zeros(z0, 0.5);
    const FirBank bp = bank_from_zeros(perturb_bank_zeros(z0, 0.3, 0.2, rng), 0.5);
    double v[2];
    const int Ts[2] = {200, 400};
    for (int s = 0; s < 2; ++s) {
        const auto C = bank_covariances(bt, Ts[s]);
        const auto Cp = bank_covariances(bp, Ts[s]);
        std::vector<ScvPrecision> P;
        for (const auto& c : Cp) P.push_back(scv_precision(c));
        const auto engine = make_exact_engine(C, P);
        const TargetSet phi = phi_limits(*engine);
        const TargetSet ex = expected_targets(C, P);
        for (int k = 0; k < 2; ++k) CHECK((phi.omega(k) - ex.omega(k)).cwiseAbs().maxCoeff() < 1e-12);
        v[s] = phi(0, 0, 1)(0, 0);
    }
    CHECK(std::abs(v[0] - v[1]) < 6.0 / 200.0);
}

TEST_CASE("matched prediction is the bound, and mismatch cannot beat it") {
    Rng rng(11);
    const BankZeros z0 = draw_bank_zeros(2, 3, 10, 2.0, rng);
    const BankZeros z1 = perturb_bank_zeros(z0, 0.1, 0.1, rng);
    const FirBank bt = bank_from_zeros(z0, 1.0);
    const auto C = bank_covariances(bt, 300);
    const IsrTable bound = icrlb_gaussian(C);
    const Prediction matched = predict(C, C);
    for (int m = 0; m < 2; ++m) CHECK((matched.isr.isr[m] - bound.isr[m]).cwiseAbs().maxCoeff() == 0.0);
    for (double mu : {0.5, 1.0}) {
        const auto Cp = bank_covariances(bank_from_zeros(interpolate_bank_zeros(z0, z1, mu), 1.0), 300);
        const Prediction p = predict(C, Cp);
        for (int m = 0; m < 2; ++m)
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j)
                    if (i != j) CHECK(p.isr.isr[m](i, j) >= bound.isr[m](i, j) * (1 - 1e-9));
    }
    // equal powers make the ratio factor one
    const Matrix pw = source_powers(C);
    CHECK((pw.array() - 2.0).abs().maxCoeff() < 1e-12);
}

TEST_CASE("exact and spectral predictions agree for long records") {
    Rng rng(12);
    const FirBank bt = bank_from_zeros(draw_bank_zeros(2, 2, 4, 2.0, rng), 0.5);
    const FirBank bp = gaussian_tap_bank(2, 2, 4, 0.5, rng);
    const auto C = bank_covariances(bt, 1500);
    const auto Cp = bank_covariances(bp, 1500);
    PredictionOptions ex, sp;
    ex.engine = EngineKind::Exact;
    sp.engine = EngineKind::Spectral;
    const double a = predict(C, Cp, ex).isr.total_normalized();
    const double b = predict(C, Cp, sp).isr.total_normalized();
    CHECK(std::abs(to_db(a) - to_db(b)) < 0.05);
    PredictionOptions tiny;
    tiny.memory_budget_bytes = 1;
    CHECK(predict(C, Cp, tiny).engine == "spectral");
    CHECK(predict(C, Cp).engine == "exact");
}

TEST_CASE("white sources in one dataset are not identifiable") {
    ScvCovariance a(1, 20, 0), b(1, 20, 0);
    a.set_lag(0, 0, 0, 1.0);
    b.set_lag(0, 0, 0, 3.0);
    CHECK_THROWS_AS((void)icrlb_gaussian({a, b}), SingularJacobian);
}

TEST_CASE("zero gradient row gives zero ISR") {
    GradientMatrix G;
    G.dims = {1, 2, 1, 0};
    G.G = Matrix::Zero(4, QLayout(1, 2).size());
    QCovariance cq;
    for (int r = 0; r < QLayout(1, 2).size(); ++r) cq.columns.push_back(r);
    cq.values = Matrix::Identity(static_cast<Eigen::Index>(cq.columns.size()), static_cast<Eigen::Index>(cq.columns.size()));
    const IsrTable t = predicted_isr(G, cq, DemixingSet::identity(1, 2), Matrix::Ones(1, 2));
    CHECK(t.isr[0](0, 1) == 0.0);
}
