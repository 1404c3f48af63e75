#pragma once

// Second-order statistics of source component vectors (SCVs): FIR filter
// banks, the stationary block-Toeplitz covariance they induce, and the
// precision blocks of its inverse.
//
// Block order for every MT x MT matrix: rows m*T + t (dataset-major).

#include <complex>
#include <span>
#include <stdexcept>
#include <vector>

#include "qiva/core_model.hpp"

namespace qiva {

using Taps = std::vector<double>;

class SingularCovariance : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// r[tau] for tau in [-max_lag, max_lag]; zero outside.
struct LagSequence {
    int max_lag = 0;
    std::vector<double> values;

    [[nodiscard]] double operator[](int tau) const noexcept {
        if (tau < -max_lag || tau > max_lag) return 0.0;
        return values[static_cast<std::size_t>(tau + max_lag)];
    }
};

/// r[tau] = sum_u h1[u] h2[u - tau].
[[nodiscard]] LagSequence fir_cross_correlation(std::span<const double> h1, std::span<const double> h2);

/// h_k^(m,l): filter from driving noise l to dataset m for source k.
class FirBank {
public:
    FirBank() = default;
    FirBank(int M, int K, int L, double eta);

    [[nodiscard]] int M() const noexcept { return M_; }
    [[nodiscard]] int K() const noexcept { return K_; }
    [[nodiscard]] int L() const noexcept { return L_; }
    [[nodiscard]] double eta() const noexcept { return eta_; }

    [[nodiscard]] Taps& taps(int k, int m, int l) { return h_.at(slot(k, m, l)); }
    [[nodiscard]] const Taps& taps(int k, int m, int l) const { return h_.at(slot(k, m, l)); }

    /// Energy 1 on m == l filters, eta elsewhere.
    [[nodiscard]] double target_energy(int m, int l) const noexcept { return m == l ? 1.0 : eta_; }

    void normalize();
    [[nodiscard]] bool is_normalized(double tol = 1e-12) const;

private:
    [[nodiscard]] std::size_t slot(int k, int m, int l) const;

    int M_ = 0;
    int K_ = 0;
    int L_ = 0;
    double eta_ = 0.0;
    std::vector<Taps> h_;
};

/// Stationary SCV covariance of one source: C^(m1,m2)[t1,t2] = r^(m1,m2)[t1-t2]
/// for t1,t2 in [0,T).
class ScvCovariance {
public:
    ScvCovariance() = default;
    ScvCovariance(int M, int T, int max_lag);

    [[nodiscard]] int M() const noexcept { return M_; }
    [[nodiscard]] int T() const noexcept { return T_; }
    [[nodiscard]] int max_lag() const noexcept { return max_lag_; }

    [[nodiscard]] double lag(int m1, int m2, int tau) const;
    /// Sets r^(m1,m2)[tau] and its mirror r^(m2,m1)[-tau].
    void set_lag(int m1, int m2, int tau, double value);

    [[nodiscard]] double entry(int m1, int m2, int t1, int t2) const { return lag(m1, m2, t1 - t2); }
    [[nodiscard]] Matrix block(int m1, int m2) const;
    [[nodiscard]] Matrix dense() const;

    /// r^(m,m)[0].
    [[nodiscard]] double power(int m) const { return lag(m, m, 0); }

    /// Half-bandwidth of the matrix in time-interleaved order (row t*M + m).
    [[nodiscard]] int interleaved_bandwidth() const noexcept { return M_ * (std::min(max_lag_, T_ - 1) + 1) - 1; }

    /// S(w)[m1,m2] = sum_tau r^(m1,m2)[tau] exp(-i w tau).
    [[nodiscard]] Eigen::MatrixXcd symbol(double omega) const;

    friend bool operator==(const ScvCovariance&, const ScvCovariance&) = default;

private:
    [[nodiscard]] std::size_t slot(int m1, int m2, int tau) const;

    int M_ = 0;
    int T_ = 0;
    int max_lag_ = 0;
    std::vector<double> r_;
};

/// Dense precision blocks P^(m1,m2) of an SCV covariance inverse.
class ScvPrecision {
public:
    ScvPrecision() = default;
    ScvPrecision(int M, int T, Matrix dense);

    [[nodiscard]] int M() const noexcept { return M_; }
    [[nodiscard]] int T() const noexcept { return T_; }
    [[nodiscard]] const Matrix& dense() const noexcept { return p_; }
    [[nodiscard]] Eigen::Block<const Matrix> block(int m1, int m2) const { return p_.block(m1 * T_, m2 * T_, T_, T_); }

private:
    int M_ = 0;
    int T_ = 0;
    Matrix p_;
};

/// Covariance of source k generated by the bank (with burn-in, so exactly
/// stationary). Throws PreconditionError for an unnormalised bank.
[[nodiscard]] ScvCovariance scv_covariance_from_firs(const FirBank& bank, int k, int T);

/// Exact second-order statistics of I*a + (1-I)*b with i.i.d. Bernoulli(p)
/// switches per (dataset, sample) and independent a, b.
[[nodiscard]] ScvCovariance mixture_covariance(const ScvCovariance& a, const ScvCovariance& b, double p);

/// Inverse via banded Cholesky of the stationary structure.
[[nodiscard]] ScvPrecision scv_precision(const ScvCovariance& cov);
/// Inverse of an arbitrary symmetric positive definite MT x MT matrix.
[[nodiscard]] ScvPrecision scv_precision(const Matrix& dense_cov, int M, int T);

}  // namespace qiva
