#include <doctest.h>

#include <cmath>

#include "qiva/sedjoco.hpp"
#include "qiva/sourcegen.hpp"

using namespace qiva;

namespace {

TargetSet scalar_targets(double q) {
    TargetSet Q(1, 1);
    Q.set_pair(0, 0, 0, Matrix::Constant(1, 1, q));
    return Q;
}

DemixingSet scalar_b(double b) {
    DemixingSet B;
    B.B.push_back(Matrix::Constant(1, 1, b));
    return B;
}

TargetSet random_targets(int M, int K, Rng& rng) {
    TargetSet Q(M, K);
    for (int k = 0; k < K; ++k) {
        Matrix A(M * K, M * K + 2);
        for (Eigen::Index i = 0; i < A.size(); ++i) A.data()[i] = rng.normal();
        const Matrix om = A * A.transpose() / static_cast<double>(A.cols());
        for (int m1 = 0; m1 < M; ++m1)
            for (int m2 = m1; m2 < M; ++m2) Q.set_pair(k, m1, m2, om.block(m1 * K, m2 * K, K, K));
    }
    return Q;
}

DemixingSet random_b(int M, int K, Rng& rng) {
    DemixingSet B = DemixingSet::identity(M, K);
    for (auto& b : B.B)
        for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] += 0.2 * rng.normal();
    return B;
}

/// Plain-loop residual straight from the drilled equations.
Vector residual_oracle(const DemixingSet& B, const TargetSet& Q) {
    const int M = B.M(), K = B.K();
    Vector out(K * K * M);
    for (int m = 0; m < M; ++m)
        for (int k = 0; k < K; ++k)
            for (int c = 0; c < K; ++c) {
                double acc = 0.0;
                for (int l = 0; l < M; ++l) acc += (B.B[l].row(k) * Q(k, l, m) * B.B[m].row(c).transpose())(0, 0);
                out(k + c * K + m * K * K) = acc - (k == c ? 1.0 : 0.0);
            }
    return out;
}

}  // namespace

TEST_CASE("residual small cases") {
    CHECK(residual(scalar_b(0.5), scalar_targets(4.0)).max_abs() == 0.0);
    CHECK(residual(scalar_b(1.0), scalar_targets(4.0)).F[0](0, 0) == doctest::Approx(3.0));

    // B = I with diagonal targets whose rows of phi sum to one
    TargetSet Q(2, 2);
    for (int k = 0; k < 2; ++k) {
        Q.set_pair(k, 0, 0, Matrix::Identity(2, 2) * 0.7);
        Q.set_pair(k, 1, 1, Matrix::Identity(2, 2) * 0.6);
        Matrix off = Matrix::Zero(2, 2);
        off(k, k) = 0.3;
        Q.set_pair(k, 0, 1, off);
    }
    // phi for k: [[0.7, 0.3],[0.3, 0.6]] needs rows summing to 1: fix m=1
    for (int k = 0; k < 2; ++k) {
        Matrix d = Q(k, 1, 1);
        d(k, k) = 0.7;
        Q.set_pair(k, 1, 1, d);
    }
    CHECK(residual(DemixingSet::identity(2, 2), Q).max_abs() < 1e-15);
}

TEST_CASE("residual matches the element-wise definition") {
    Rng rng(1);
    for (int trial = 0; trial < 5; ++trial) {
        const TargetSet Q = random_targets(3, 2, rng);
        const DemixingSet B = random_b(3, 2, rng);
        CHECK((residual(B, Q).flat() - residual_oracle(B, Q)).cwiseAbs().maxCoeff() < 1e-13);
    }
}

TEST_CASE("jacobian") {
    SUBCASE("scalar") {
        const Matrix H = jacobian(scalar_b(0.7), scalar_targets(3.0));
        CHECK(H(0, 0) == doctest::Approx(2 * 3.0 * 0.7));
    }
    SUBCASE("finite differences") {
        Rng rng(2);
        for (const auto [M, K] : {std::pair{1, 2}, std::pair{2, 2}, std::pair{3, 3}}) {
            const TargetSet Q = random_targets(M, K, rng);
            const DemixingSet B = random_b(M, K, rng);
            const Matrix H = jacobian(B, Q);
            const Vector b0 = B.flat();
            const double h = 1e-6;
            for (Eigen::Index c = 0; c < b0.size(); ++c) {
                Vector bp = b0, bm = b0;
                bp(c) += h;
                bm(c) -= h;
                const Vector fd = (residual_oracle(DemixingSet::from_flat(bp, M, K), Q) -
                                   residual_oracle(DemixingSet::from_flat(bm, M, K), Q)) /
                                  (2 * h);
                const double scale = std::max(1.0, H.col(c).cwiseAbs().maxCoeff());
                CHECK((fd - H.col(c)).cwiseAbs().maxCoeff() / scale < 1e-6);
            }
        }
    }
    SUBCASE("identity with diagonal targets") {
        // At B = I and diagonal Q the derivative of F_m(k, c) w.r.t. B_pq^(n)
        // is delta_kp Q_k^(q,m)(q,c)... expanded by hand for M = 1, K = 2.
        TargetSet Q(1, 2);
        Matrix q0(2, 2), q1(2, 2);
        q0 << 2.0, 0.0, 0.0, 3.0;
        q1 << 5.0, 0.0, 0.0, 7.0;
        Q.set_pair(0, 0, 0, q0);
        Q.set_pair(1, 0, 0, q1);
        const Matrix H = jacobian(DemixingSet::identity(1, 2), Q);
        // F(k,c) = b_k Q_k b_c^T - delta; row index k + 2c, column p + 2q
        Matrix expected = Matrix::Zero(4, 4);
        for (int k = 0; k < 2; ++k)
            for (int c = 0; c < 2; ++c)
                for (int p = 0; p < 2; ++p)
                    for (int qq = 0; qq < 2; ++qq) {
                        const Matrix& Qk = Q(k, 0, 0);
                        double v = 0.0;
                        if (p == k) v += Qk(qq, c);
                        if (p == c) v += Qk(k, qq);
                        expected(k + 2 * c, p + 2 * qq) = v;
                    }
        CHECK((H - expected).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("Newton solver") {
    SUBCASE("scalar") {
        const NewtonResult r = newton_solve(scalar_targets(4.0), scalar_b(1.0));
        REQUIRE(r.converged());
        CHECK(r.B.B[0](0, 0) == doctest::Approx(0.5).epsilon(1e-12));
    }
    SUBCASE("M = 1 diagonal targets") {
        TargetSet Q(1, 3);
        Matrix d = Matrix::Zero(3, 3);
        d.diagonal() << 2.0, 3.0, 5.0;
        for (int k = 0; k < 3; ++k) Q.set_pair(k, 0, 0, d);
        const NewtonResult r = newton_solve(Q, DemixingSet::identity(1, 3));
        REQUIRE(r.converged());
        for (int k = 0; k < 3; ++k) CHECK(r.B.B[0](k, k) == doctest::Approx(1.0 / std::sqrt(d(k, k))).epsilon(1e-12));
        CHECK(std::abs(r.B.B[0](0, 1)) < 1e-12);
    }
    SUBCASE("finite-T targets from the true demixing matrices") {
        Rng rng(5);
        const FirBank bank = bank_from_zeros(draw_bank_zeros(2, 3, 10, 2.0, rng), 1.0);
        std::vector<ScvPrecision> P;
        for (int k = 0; k < 3; ++k) P.push_back(scv_precision(scv_covariance_from_firs(bank, k, 500)));
        const auto S = gen_sources(bank, NoiseFamily::Gaussian, 500, rng);
        const auto A = random_mixing(2, 3, rng);
        const auto X = mix(A, S);
        DemixingSet B0;
        for (const auto& a : A) B0.B.push_back(a.inverse());
        NewtonOptions o;
        o.tol = 1e-10;
        const NewtonResult r = newton_solve(compute_targets(X, P), B0, o);
        REQUIRE(r.converged());
        CHECK(r.report.iterations <= 10);
        CHECK(r.report.history.front() > r.report.final_residual);
        CHECK(drilled_check(r.B, compute_targets(X, P)) <= 1e-10);
    }
    SUBCASE("reports failure") {
        NewtonOptions o;
        o.max_iter = 1;
        o.tol = 1e-300;
        const NewtonResult r = newton_solve(scalar_targets(4.0), scalar_b(3.0), o);
        CHECK_FALSE(r.converged());
        CHECK(r.report.status == SolverStatus::NoConvergence);
        const NewtonResult s = newton_solve(scalar_targets(4.0), scalar_b(0.0));
        CHECK(s.report.status == SolverStatus::SingularJacobian);
    }
}

TEST_CASE("drilled check") {
    Rng rng(7);
    const TargetSet Q = random_targets(2, 2, rng);
    const NewtonResult r = newton_solve(Q, DemixingSet::identity(2, 2));
    REQUIRE(r.converged());
    CHECK(drilled_check(r.B, Q) <= 1e-10);
    DemixingSet Bp = r.B;
    Bp.B[0](0, 1) += 1e-3;
    const double v = drilled_check(Bp, Q);
    CHECK(v > 1e-5);
    CHECK(v < 1e-2);
    CHECK(drilled_check(random_b(2, 2, rng), random_targets(2, 2, rng)) > 0.0);
}

TEST_CASE("targets from data") {
    SUBCASE("ones with identity precision") {
        const int T = 7;
        std::vector<Matrix> X{Matrix::Ones(1, T)};
        std::vector<ScvPrecision> P{ScvPrecision(1, T, Matrix::Identity(T, T))};
        CHECK(compute_targets(X, P)(0, 0, 0)(0, 0) == doctest::Approx(1.0));
    }
    SUBCASE("dense and banded agree") {
        Rng rng(8);
        const FirBank bank = bank_from_zeros(draw_bank_zeros(3, 2, 4, 2.0, rng), 0.5);
        std::vector<ScvPrecision> P;
        std::vector<BandedCholesky> chol;
        for (int k = 0; k < 2; ++k) {
            const ScvCovariance c = scv_covariance_from_firs(bank, k, 40);
            P.push_back(scv_precision(c.dense(), 3, 40));
            chol.emplace_back(c);
        }
        const auto X = gen_sources(bank, NoiseFamily::Uniform, 40, rng);
        const TargetSet a = compute_targets(X, P);
        const TargetSet b = compute_targets(X, chol);
        for (int k = 0; k < 2; ++k)
            CHECK((a.omega(k) - b.omega(k)).cwiseAbs().maxCoeff() < 1e-12 * (1.0 + a.omega(k).cwiseAbs().maxCoeff()));
        CHECK(b.max_asymmetry() == 0.0);
        // direct formula for one block
        const Matrix direct = X[0] * P[1].block(0, 2) * X[2].transpose() / 40.0;
        CHECK((direct - a(1, 0, 2)).cwiseAbs().maxCoeff() < 1e-12);
        CHECK(Eigen::LLT<Matrix>(b.omega(0)).info() == Eigen::Success);
    }
    SUBCASE("white data has identity mean") {
        const int T = 16, N = 10000;
        std::vector<ScvPrecision> P{ScvPrecision(1, T, Matrix::Identity(T, T)), ScvPrecision(1, T, Matrix::Identity(T, T))};
        Matrix sum = Matrix::Zero(2, 2), sq = Matrix::Zero(2, 2);
        for (int n = 0; n < N; ++n) {
            Rng rng = Rng::stream(3, static_cast<std::uint64_t>(n));
            Matrix x(2, T);
            for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
            const Matrix q = compute_targets({x}, P)(0, 0, 0);
            sum += q;
            sq += q.cwiseProduct(q);
        }
        const Matrix mean = sum / N;
        const Matrix se = ((sq / N - mean.cwiseProduct(mean)) / N).cwiseSqrt();
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) CHECK(std::abs(mean(i, j) - (i == j ? 1.0 : 0.0)) < 3 * se(i, j));
    }
    SUBCASE("matched targets become diagonal as T grows") {
        Rng rng(9);
        const FirBank bank = bank_from_zeros(draw_bank_zeros(2, 2, 6, 2.0, rng), 0.5);
        double off[2];
        const int Ts[2] = {200, 5000};
        for (int s = 0; s < 2; ++s) {
            std::vector<BandedCholesky> chol;
            for (int k = 0; k < 2; ++k) chol.emplace_back(scv_covariance_from_firs(bank, k, Ts[s]));
            const auto X = gen_sources(bank, NoiseFamily::Gaussian, Ts[s], rng);
            const TargetSet Q = compute_targets(X, chol);
            double acc = 0.0;
            for (int k = 0; k < 2; ++k) {
                const Matrix om = Q.omega(k);
                for (int a = 0; a < 4; ++a)
                    for (int b = 0; b < 4; ++b)
                        if (a % 2 != b % 2) acc += om(a, b) * om(a, b);
            }
            off[s] = std::sqrt(acc);
        }
        CHECK(off[1] < off[0]);
        CHECK(off[1] < 0.5 * off[0]);
    }
}

TEST_CASE("expected targets") {
    SUBCASE("identity") {
        ScvCovariance c(1, 5, 0);
        c.set_lag(0, 0, 0, 1.0);
        const TargetSet Q = expected_targets({c, c}, {scv_precision(c), scv_precision(c)});
        CHECK((Q(0, 0, 0) - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-15);
    }
    SUBCASE("matched single dataset") {
        Rng rng(10);
        const FirBank bank = gaussian_tap_bank(1, 2, 4, 1.0, rng);
        std::vector<ScvCovariance> C;
        std::vector<ScvPrecision> P;
        for (int k = 0; k < 2; ++k) {
            C.push_back(scv_covariance_from_firs(bank, k, 30));
            P.push_back(scv_precision(C.back()));
        }
        const TargetSet Q = expected_targets(C, P);
        CHECK(Q(0, 0, 0)(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(Q(1, 0, 0)(1, 1) == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("dense trace oracle") {
        Rng rng(11);
        const FirBank bank = gaussian_tap_bank(2, 2, 3, 0.5, rng);
        const FirBank other = gaussian_tap_bank(2, 2, 3, 0.5, rng);
        std::vector<ScvCovariance> C;
        std::vector<ScvPrecision> P;
        const int T = 12;
        for (int k = 0; k < 2; ++k) {
            C.push_back(scv_covariance_from_firs(bank, k, T));
            P.push_back(scv_precision(scv_covariance_from_firs(other, k, T)));
        }
        const TargetSet Q = expected_targets(C, P);
        for (int k = 0; k < 2; ++k)
            for (int i = 0; i < 2; ++i)
                for (int m1 = 0; m1 < 2; ++m1)
                    for (int m2 = 0; m2 < 2; ++m2) {
                        const double tr = (C[i].block(m2, m1) * P[k].block(m1, m2)).trace() / T;
                        CHECK(Q(k, m1, m2)(i, i) == doctest::Approx(tr).epsilon(1e-12));
                        CHECK(Q(k, m1, m2)(i, 1 - i) == 0.0);
                    }
    }
}
