#pragma once

// Banded Cholesky factor of a stationary SCV covariance. Rows are ordered
// time-interleaved (t*M + m), which makes the matrix banded with half-width
// M*(lag+1) - 1 regardless of T.

#include <vector>

#include "qiva/covariance.hpp"

namespace qiva {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class BandedCholesky {
public:
    /// Throws SingularCovariance when the matrix is not positive definite.
    explicit BandedCholesky(const ScvCovariance& cov);

    [[nodiscard]] int size() const noexcept { return n_; }
    [[nodiscard]] int bandwidth() const noexcept { return kd_; }
    [[nodiscard]] int M() const noexcept { return M_; }
    [[nodiscard]] int T() const noexcept { return T_; }

    /// Interleaved row of block-ordered index (m, t).
    [[nodiscard]] int interleaved(int m, int t) const noexcept { return t * M_ + m; }

    /// L(i, j) for j <= i <= j + kd, zero elsewhere.
    [[nodiscard]] double factor(int i, int j) const;

    /// Overwrites Y with L^{-1} Y (interleaved rows).
    void forward_solve(RowMatrix& Y) const;
    /// Overwrites Y with L^{-T} Y (interleaved rows).
    void backward_solve(RowMatrix& Y) const;

    /// Full inverse in dataset-major block order, symmetrised.
    [[nodiscard]] Matrix inverse_block_order() const;

private:
    int M_;
    int T_;
    int n_;
    int kd_;
    std::vector<double> ab_;  // LAPACK lower band storage, column-major (kd+1) x n
};

}  // namespace qiva
