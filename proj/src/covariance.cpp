#include "qiva/covariance.hpp"

#include <cmath>

#include "qiva/banded.hpp"

namespace qiva {

LagSequence fir_cross_correlation(std::span<const double> h1, std::span<const double> h2) {
    if (h1.size() != h2.size()) {
        throw PreconditionError("fir_cross_correlation: tap vectors differ in length");
    }
    const int L = static_cast<int>(h1.size());
    LagSequence r;
    r.max_lag = std::max(L - 1, 0);
    r.values.assign(static_cast<std::size_t>(2 * r.max_lag + 1), 0.0);
    for (int tau = -r.max_lag; tau <= r.max_lag; ++tau) {
        double acc = 0.0;
        for (int u = std::max(0, tau); u < std::min(L, L + tau); ++u) {
            acc += h1[static_cast<std::size_t>(u)] * h2[static_cast<std::size_t>(u - tau)];
        }
        r.values[static_cast<std::size_t>(tau + r.max_lag)] = acc;
    }
    return r;
}

FirBank::FirBank(int M, int K, int L, double eta) : M_(M), K_(K), L_(L), eta_(eta) {
    if (M < 1 || K < 1 || L < 1) throw PreconditionError("FirBank: need M, K, L >= 1");
    if (!(eta >= 0.0)) throw PreconditionError("FirBank: eta must be non-negative");
    h_.assign(static_cast<std::size_t>(K) * M * M, Taps(static_cast<std::size_t>(L), 0.0));
}

std::size_t FirBank::slot(int k, int m, int l) const {
    if (k < 0 || k >= K_ || m < 0 || m >= M_ || l < 0 || l >= M_) throw DomainError("FirBank: index out of range");
    return static_cast<std::size_t>(k) + static_cast<std::size_t>(K_) * (static_cast<std::size_t>(m) + static_cast<std::size_t>(M_) * l);
}

void FirBank::normalize() {
    for (int k = 0; k < K_; ++k) {
        for (int m = 0; m < M_; ++m) {
            for (int l = 0; l < M_; ++l) {
                Taps& h = taps(k, m, l);
                double energy = 0.0;
                for (double v : h) energy += v * v;
                const double target = target_energy(m, l);
                if (target == 0.0) {
                    std::fill(h.begin(), h.end(), 0.0);
                    continue;
                }
                if (!(energy > 0.0)) throw PreconditionError("FirBank::normalize: zero filter cannot be scaled");
                const double s = std::sqrt(target / energy);
                for (double& v : h) v *= s;
            }
        }
    }
}

bool FirBank::is_normalized(double tol) const {
    for (int k = 0; k < K_; ++k) {
        for (int m = 0; m < M_; ++m) {
            for (int l = 0; l < M_; ++l) {
                double energy = 0.0;
                for (double v : taps(k, m, l)) energy += v * v;
                if (std::abs(energy - target_energy(m, l)) > tol) return false;
            }
        }
    }
    return true;
}

ScvCovariance::ScvCovariance(int M, int T, int max_lag) : M_(M), T_(T), max_lag_(max_lag) {
    if (M < 1 || T < 1 || max_lag < 0) throw PreconditionError("ScvCovariance: need M >= 1, T >= 1, max_lag >= 0");
    r_.assign(static_cast<std::size_t>(M) * M * (2 * max_lag + 1), 0.0);
}

std::size_t ScvCovariance::slot(int m1, int m2, int tau) const {
    return static_cast<std::size_t>(tau + max_lag_) +
           static_cast<std::size_t>(2 * max_lag_ + 1) * (static_cast<std::size_t>(m1) + static_cast<std::size_t>(M_) * m2);
}

double ScvCovariance::lag(int m1, int m2, int tau) const {
    if (m1 < 0 || m1 >= M_ || m2 < 0 || m2 >= M_) throw DomainError("ScvCovariance::lag: dataset index out of range");
    if (tau < -max_lag_ || tau > max_lag_) return 0.0;
    return r_[slot(m1, m2, tau)];
}

void ScvCovariance::set_lag(int m1, int m2, int tau, double value) {
    if (m1 < 0 || m1 >= M_ || m2 < 0 || m2 >= M_ || tau < -max_lag_ || tau > max_lag_) {
        throw DomainError("ScvCovariance::set_lag: index out of range");
    }
    r_[slot(m1, m2, tau)] = value;
    r_[slot(m2, m1, -tau)] = value;
}

Matrix ScvCovariance::block(int m1, int m2) const {
    Matrix b = Matrix::Zero(T_, T_);
    const int reach = std::min(max_lag_, T_ - 1);
    for (int tau = -reach; tau <= reach; ++tau) {
        const double v = lag(m1, m2, tau);
        if (v == 0.0) continue;
        // entries with t1 - t2 = tau
        for (int t2 = std::max(0, -tau); t2 < std::min(T_, T_ - tau); ++t2) b(t2 + tau, t2) = v;
    }
    return b;
}

Matrix ScvCovariance::dense() const {
    Matrix c(static_cast<Eigen::Index>(M_) * T_, static_cast<Eigen::Index>(M_) * T_);
    for (int m1 = 0; m1 < M_; ++m1) {
        for (int m2 = 0; m2 < M_; ++m2) c.block(m1 * T_, m2 * T_, T_, T_) = block(m1, m2);
    }
    return c;
}

Eigen::MatrixXcd ScvCovariance::symbol(double omega) const {
    Eigen::MatrixXcd s = Eigen::MatrixXcd::Zero(M_, M_);
    for (int tau = -max_lag_; tau <= max_lag_; ++tau) {
        const std::complex<double> w = std::polar(1.0, -omega * tau);
        for (int m1 = 0; m1 < M_; ++m1) {
            for (int m2 = 0; m2 < M_; ++m2) s(m1, m2) += r_[slot(m1, m2, tau)] * w;
        }
    }
    return s;
}

ScvPrecision::ScvPrecision(int M, int T, Matrix dense) : M_(M), T_(T), p_(std::move(dense)) {
    if (p_.rows() != static_cast<Eigen::Index>(M) * T || p_.cols() != p_.rows()) {
        throw PreconditionError("ScvPrecision: matrix is not MT x MT");
    }
}

ScvCovariance scv_covariance_from_firs(const FirBank& bank, int k, int T) {
    if (!bank.is_normalized(1e-10)) throw PreconditionError("scv_covariance_from_firs: bank is not normalised");
    if (T < 1) throw PreconditionError("scv_covariance_from_firs: T must be >= 1");
    const int M = bank.M();
    ScvCovariance cov(M, T, bank.L() - 1);
    for (int m1 = 0; m1 < M; ++m1) {
        for (int m2 = m1; m2 < M; ++m2) {
            std::vector<double> acc(static_cast<std::size_t>(2 * bank.L() - 1), 0.0);
            for (int l = 0; l < M; ++l) {
                const LagSequence r = fir_cross_correlation(bank.taps(k, m1, l), bank.taps(k, m2, l));
                for (std::size_t s = 0; s < acc.size(); ++s) acc[s] += r.values[s];
            }
            for (int tau = -(bank.L() - 1); tau <= bank.L() - 1; ++tau) {
                const double v = acc[static_cast<std::size_t>(tau + bank.L() - 1)];
                if (m1 == m2 && tau < 0) continue;  // filled by the mirror of +tau
                cov.set_lag(m1, m2, tau, v);
            }
        }
    }
    return cov;
}

ScvCovariance mixture_covariance(const ScvCovariance& a, const ScvCovariance& b, double p) {
    if (a.M() != b.M() || a.T() != b.T()) throw PreconditionError("mixture_covariance: dimension mismatch");
    if (!(p > 0.0 && p < 1.0)) throw PreconditionError("mixture_covariance: p must lie in (0,1)");
    const int lag = std::max(a.max_lag(), b.max_lag());
    ScvCovariance out(a.M(), a.T(), lag);
    const double q = 1.0 - p;
    for (int m1 = 0; m1 < a.M(); ++m1) {
        for (int m2 = 0; m2 < a.M(); ++m2) {
            for (int tau = -lag; tau <= lag; ++tau) {
                const bool same_switch = (m1 == m2 && tau == 0);
                const double v = same_switch ? p * a.lag(m1, m2, tau) + q * b.lag(m1, m2, tau)
                                             : p * p * a.lag(m1, m2, tau) + q * q * b.lag(m1, m2, tau);
                out.set_lag(m1, m2, tau, v);
            }
        }
    }
    return out;
}

ScvPrecision scv_precision(const ScvCovariance& cov) {
    const BandedCholesky chol(cov);
    return ScvPrecision(cov.M(), cov.T(), chol.inverse_block_order());
}

ScvPrecision scv_precision(const Matrix& dense_cov, int M, int T) {
    if (dense_cov.rows() != static_cast<Eigen::Index>(M) * T || dense_cov.cols() != dense_cov.rows()) {
        throw PreconditionError("scv_precision: matrix is not MT x MT");
    }
    Eigen::LLT<Matrix> llt(dense_cov);
    if (llt.info() != Eigen::Success) throw SingularCovariance("scv_precision: covariance is not positive definite");
    Matrix p = llt.solve(Matrix::Identity(dense_cov.rows(), dense_cov.cols()));
    p = 0.5 * (p + p.transpose()).eval();
    return ScvPrecision(M, T, std::move(p));
}

}  // namespace qiva
