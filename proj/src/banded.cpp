#include "qiva/banded.hpp"

#include <lapacke.h>

#include <string>

namespace qiva {

BandedCholesky::BandedCholesky(const ScvCovariance& cov)
    : M_(cov.M()), T_(cov.T()), n_(cov.M() * cov.T()), kd_(std::min(cov.interleaved_bandwidth(), n_ - 1)) {
    const auto ld = static_cast<std::size_t>(kd_ + 1);
    ab_.assign(ld * static_cast<std::size_t>(n_), 0.0);
    for (int j = 0; j < n_; ++j) {
        const int t2 = j / M_;
        const int m2 = j % M_;
        for (int i = j; i <= std::min(n_ - 1, j + kd_); ++i) {
            const int t1 = i / M_;
            const int m1 = i % M_;
            ab_[static_cast<std::size_t>(i - j) + ld * static_cast<std::size_t>(j)] = cov.lag(m1, m2, t1 - t2);
        }
    }
    const lapack_int info = LAPACKE_dpbtrf(LAPACK_COL_MAJOR, 'L', n_, kd_, ab_.data(), kd_ + 1);
    if (info != 0) {
        throw SingularCovariance("BandedCholesky: factorisation failed (LAPACK info " + std::to_string(info) + ")");
    }
}

double BandedCholesky::factor(int i, int j) const {
    if (i < j || i > j + kd_ || i >= n_ || j < 0) return 0.0;
    return ab_[static_cast<std::size_t>(i - j) + static_cast<std::size_t>(kd_ + 1) * static_cast<std::size_t>(j)];
}

void BandedCholesky::forward_solve(RowMatrix& Y) const {
    if (Y.rows() != n_) throw PreconditionError("BandedCholesky::forward_solve: row count mismatch");
    const auto ld = static_cast<std::size_t>(kd_ + 1);
    for (int r = 0; r < n_; ++r) {
        for (int s = std::max(0, r - kd_); s < r; ++s) {
            const double l = ab_[static_cast<std::size_t>(r - s) + ld * static_cast<std::size_t>(s)];
            if (l != 0.0) Y.row(r) -= l * Y.row(s);
        }
        Y.row(r) /= ab_[ld * static_cast<std::size_t>(r)];
    }
}

void BandedCholesky::backward_solve(RowMatrix& Y) const {
    if (Y.rows() != n_) throw PreconditionError("BandedCholesky::backward_solve: row count mismatch");
    const auto ld = static_cast<std::size_t>(kd_ + 1);
    for (int r = n_ - 1; r >= 0; --r) {
        const std::size_t col = ld * static_cast<std::size_t>(r);
        for (int s = r + 1; s <= std::min(n_ - 1, r + kd_); ++s) {
            const double l = ab_[static_cast<std::size_t>(s - r) + col];
            if (l != 0.0) Y.row(r) -= l * Y.row(s);
        }
        Y.row(r) /= ab_[col];
    }
}

Matrix BandedCholesky::inverse_block_order() const {
    RowMatrix y = RowMatrix::Identity(n_, n_);
    forward_solve(y);
    backward_solve(y);
    Matrix out(n_, n_);
    for (int m1 = 0; m1 < M_; ++m1) {
        for (int t1 = 0; t1 < T_; ++t1) {
            const int src_row = interleaved(m1, t1);
            for (int m2 = 0; m2 < M_; ++m2) {
                for (int t2 = 0; t2 < T_; ++t2) {
                    out(m1 * T_ + t1, m2 * T_ + t2) = y(src_row, interleaved(m2, t2));
                }
            }
        }
    }
    out = 0.5 * (out + out.transpose()).eval();
    return out;
}

}  // namespace qiva
