#include <doctest.h>

#include <boost/math/special_functions/erf.hpp>

#include <cmath>

#include "qiva/banded.hpp"
#include "qiva/covariance.hpp"
#include "qiva/sourcegen.hpp"

using namespace qiva;

namespace {

FirBank random_bank(int M, int K, int L, double eta, std::uint64_t seed) {
    Rng rng(seed);
    return gaussian_tap_bank(M, K, L, eta, rng);
}

/// Sample covariance of the stacked vector over many draws, with the standard
/// error of every entry, compared against an analytic matrix.
/// Entries are judged at the family-wise level of a single 3 sigma test:
/// Bonferroni over the number of distinct entries. `over_3` still counts plain
/// 3 sigma exceedances for diagnostics.
struct CovarianceCheck {
    long checked = 0;
    long violations = 0;
    long over_3 = 0;
    double worst_z = 0.0;
    double threshold = 3.0;
};

template <class Draw>
CovarianceCheck mc_covariance(const Matrix& expected, long N, Draw draw) {
    const Eigen::Index n = expected.rows();
    Matrix samples(n, N);
    for (long t = 0; t < N; ++t) samples.col(t) = draw(t);
    CovarianceCheck out;
    const double entries = static_cast<double>(n * (n + 1) / 2);
    const double alpha = std::erfc(3.0 / std::sqrt(2.0));
    out.threshold = std::sqrt(2.0) * boost::math::erfc_inv(alpha / entries);
    for (Eigen::Index a = 0; a < n; ++a) {
        for (Eigen::Index b = a; b < n; ++b) {
            const Eigen::ArrayXd prod = samples.row(a).array() * samples.row(b).array();
            const double mean = prod.mean();
            const double se = std::sqrt((prod - mean).square().sum() / static_cast<double>(N - 1) / static_cast<double>(N));
            const double z = std::abs(mean - expected(a, b)) / se;
            out.worst_z = std::max(out.worst_z, z);
            out.violations += z > out.threshold;
            out.over_3 += z > 3.0;
            ++out.checked;
        }
    }
    return out;
}

}  // namespace

TEST_CASE("fir_cross_correlation") {
    const Taps one{1.0};
    CHECK(fir_cross_correlation(one, one)[0] == 1.0);
    const double s = 1.0 / std::sqrt(2.0);
    const Taps ma{s, s};
    const LagSequence r = fir_cross_correlation(ma, ma);
    CHECK(r[-1] == doctest::Approx(0.5));
    CHECK(r[0] == doctest::Approx(1.0));
    CHECK(r[1] == doctest::Approx(0.5));
    CHECK(r[2] == 0.0);

    Rng rng(3);
    Taps h1(4), h2(4);
    for (auto& v : h1) v = rng.normal();
    for (auto& v : h2) v = rng.normal();
    const LagSequence r12 = fir_cross_correlation(h1, h2);
    for (int tau = -3; tau <= 3; ++tau) {
        double acc = 0.0;
        for (int u = 0; u < 4; ++u)
            for (int v = 0; v < 4; ++v)
                if (u - v == tau) acc += h1[static_cast<std::size_t>(u)] * h2[static_cast<std::size_t>(v)];
        CHECK(r12[tau] == doctest::Approx(acc).epsilon(1e-14));
    }
    double e = 0.0;
    for (double v : h1) e += v * v;
    CHECK(fir_cross_correlation(h1, h1)[0] == doctest::Approx(e).epsilon(1e-14));
}

TEST_CASE("FirBank normalisation") {
    FirBank bank = random_bank(3, 2, 5, 0.3, 1);
    CHECK(bank.is_normalized(1e-12));
    double e = 0.0;
    for (double v : bank.taps(1, 0, 2)) e += v * v;
    CHECK(e == doctest::Approx(0.3).epsilon(1e-12));
    FirBank zero_eta = random_bank(2, 1, 3, 0.0, 2);
    for (double v : zero_eta.taps(0, 0, 1)) CHECK(v == 0.0);
    CHECK_THROWS_AS(FirBank(0, 1, 1, 1.0), PreconditionError);
}

TEST_CASE("SCV covariance from filters") {
    SUBCASE("white") {
        FirBank bank(1, 1, 1, 1.0);
        bank.taps(0, 0, 0) = {1.0};
        const Matrix c = scv_covariance_from_firs(bank, 0, 5).dense();
        CHECK((c - Matrix::Identity(5, 5)).norm() == 0.0);
    }
    SUBCASE("power with eta = 1") {
        const FirBank bank = random_bank(2, 3, 6, 1.0, 4);
        for (int k = 0; k < 3; ++k) {
            const ScvCovariance c = scv_covariance_from_firs(bank, k, 20);
            CHECK(c.power(0) == doctest::Approx(2.0).epsilon(1e-12));
            CHECK(c.power(1) == doctest::Approx(2.0).epsilon(1e-12));
        }
    }
    SUBCASE("structure") {
        const FirBank bank = random_bank(3, 1, 4, 0.5, 5);
        const ScvCovariance c = scv_covariance_from_firs(bank, 0, 9);
        const Matrix d = c.dense();
        CHECK((d - d.transpose()).cwiseAbs().maxCoeff() == 0.0);
        CHECK(Eigen::LLT<Matrix>(d).info() == Eigen::Success);
        for (int m1 = 0; m1 < 3; ++m1)
            for (int m2 = 0; m2 < 3; ++m2)
                for (int tau = -4; tau <= 4; ++tau) CHECK(c.lag(m1, m2, tau) == c.lag(m2, m1, -tau));
        CHECK(d(0 * 9 + 5, 1 * 9 + 2) == c.lag(0, 1, 3));
        CHECK(d(0, 9 + 8) == 0.0);
    }
    SUBCASE("unnormalised bank is rejected") {
        FirBank bank(1, 1, 2, 1.0);
        bank.taps(0, 0, 0) = {1.0, 1.0};
        CHECK_THROWS_AS((void)scv_covariance_from_firs(bank, 0, 4), PreconditionError);
    }
}

TEST_CASE("SCV covariance matches simulated sources") {
    const int M = 2, T = 6;
    const FirBank bank = random_bank(M, 1, 3, 0.7, 6);
    const Matrix expected = scv_covariance_from_firs(bank, 0, T).dense();
    const auto res = mc_covariance(expected, 2000000, [&](long t) {
        Rng rng = Rng::stream(99, static_cast<std::uint64_t>(t));
        const auto S = gen_sources(bank, NoiseFamily::Gaussian, T, rng);
        Vector v(M * T);
        for (int m = 0; m < M; ++m) v.segment(m * T, T) = S[static_cast<std::size_t>(m)].row(0).transpose();
        return v;
    });
    INFO("worst z " << res.worst_z << " over " << res.checked << ", threshold " << res.threshold << ", above 3: " << res.over_3);
    CHECK(res.violations == 0);
}

TEST_CASE("precision blocks") {
    SUBCASE("identity and scaled identity") {
        ScvCovariance c(2, 4, 0);
        c.set_lag(0, 0, 0, 1.0);
        c.set_lag(1, 1, 0, 1.0);
        CHECK((scv_precision(c).dense() - Matrix::Identity(8, 8)).cwiseAbs().maxCoeff() < 1e-15);
        c.set_lag(0, 0, 0, 2.0);
        c.set_lag(1, 1, 0, 2.0);
        CHECK((scv_precision(c).dense() - 0.5 * Matrix::Identity(8, 8)).cwiseAbs().maxCoeff() < 1e-15);
    }
    SUBCASE("banded inverse against dense inversion") {
        for (std::uint64_t seed = 10; seed < 14; ++seed) {
            const FirBank bank = random_bank(2, 1, 3, 0.8, seed);
            const ScvCovariance c = scv_covariance_from_firs(bank, 0, 4);
            const Matrix dense_inv = c.dense().inverse();
            const ScvPrecision p = scv_precision(c);
            CHECK((p.dense() - dense_inv).cwiseAbs().maxCoeff() < 1e-10);
            CHECK((c.dense() * p.dense() - Matrix::Identity(8, 8)).cwiseAbs().maxCoeff() < 1e-8);
            CHECK((p.block(0, 1) - p.block(1, 0).transpose()).norm() == 0.0);
        }
    }
    SUBCASE("random SPD matrix") {
        Rng rng(21);
        Matrix A(8, 8);
        for (Eigen::Index i = 0; i < A.size(); ++i) A.data()[i] = rng.normal();
        const Matrix spd = A * A.transpose() + 0.5 * Matrix::Identity(8, 8);
        const ScvPrecision p = scv_precision(spd, 2, 4);
        CHECK((p.dense() - spd.inverse()).cwiseAbs().maxCoeff() < 1e-10);
        CHECK_THROWS_AS((void)scv_precision(Matrix::Zero(8, 8), 2, 4), SingularCovariance);
    }
    SUBCASE("singular stationary covariance") {
        ScvCovariance c(1, 4, 0);
        CHECK_THROWS_AS((void)scv_precision(c), SingularCovariance);
    }
    SUBCASE("band structure") {
        const FirBank bank = random_bank(3, 1, 4, 0.5, 7);
        const ScvCovariance c = scv_covariance_from_firs(bank, 0, 30);
        const BandedCholesky chol(c);
        CHECK(chol.bandwidth() == c.interleaved_bandwidth());
        CHECK(chol.bandwidth() == 3 * 4 - 1);
        CHECK(chol.factor(0, 20) == 0.0);
        CHECK(chol.factor(50, 0) == 0.0);
    }
}

TEST_CASE("mixture covariance") {
    const FirBank ba = random_bank(2, 1, 3, 0.6, 8);
    const FirBank bb = random_bank(2, 1, 3, 0.4, 9);
    const ScvCovariance a = scv_covariance_from_firs(ba, 0, 4);
    const ScvCovariance b = scv_covariance_from_firs(bb, 0, 4);
    SUBCASE("p close to one") {
        const ScvCovariance c = mixture_covariance(a, b, 1.0 - 1e-12);
        CHECK((c.dense() - a.dense()).cwiseAbs().maxCoeff() < 1e-10);
    }
    SUBCASE("equal components") {
        const double p = 0.3;
        const Matrix c = mixture_covariance(a, a, p).dense();
        const Matrix d = a.dense();
        const double f = p * p + (1 - p) * (1 - p);
        for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 8; ++j) CHECK(c(i, j) == doctest::Approx(i == j ? d(i, j) : f * d(i, j)).epsilon(1e-14));
    }
    SUBCASE("matches switched draws") {
        const double p = 0.3;
        const Matrix expected = mixture_covariance(a, b, p).dense();
        const auto res = mc_covariance(expected, 2000000, [&](long t) {
            Rng rng = Rng::stream(77, static_cast<std::uint64_t>(t));
            const auto S = gen_mixture_sources(ba, bb, p, NoiseFamily::Gaussian, NoiseFamily::Gaussian, 4, rng);
            Vector v(8);
            for (int m = 0; m < 2; ++m) v.segment(m * 4, 4) = S[static_cast<std::size_t>(m)].row(0).transpose();
            return v;
        });
        INFO("worst z " << res.worst_z << " over " << res.checked << ", threshold " << res.threshold << ", above 3: " << res.over_3);
        CHECK(res.violations == 0);
    }
    CHECK_THROWS_AS((void)mixture_covariance(a, b, 1.0), PreconditionError);
}

TEST_CASE("symbol of a stationary covariance") {
    const FirBank bank = random_bank(2, 1, 3, 0.5, 12);
    const ScvCovariance c = scv_covariance_from_firs(bank, 0, 10);
    const Eigen::MatrixXcd s0 = c.symbol(0.0);
    double direct = 0.0;
    for (int tau = -2; tau <= 2; ++tau) direct += c.lag(0, 1, tau);
    CHECK(s0(0, 1).real() == doctest::Approx(direct));
    const Eigen::MatrixXcd s = c.symbol(0.7);
    CHECK((s - s.adjoint()).cwiseAbs().maxCoeff() < 1e-14);
}
