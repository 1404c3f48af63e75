#pragma once

// Domain types shared by every stage of the estimator and the performance
// analysis, plus the flat index maps that tie multi-indexed matrix elements to
// vectors.
//
// Index convention: every multi-index in this library is 0-based
// (m in [0,M), p,q,i,j,k in [0,K)). A 1-based symbol (m,p,q) maps to
// (m-1,p-1,q-1) and flat indices are 0-based offsets.

#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace qiva {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class DomainError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

class PreconditionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// M datasets of K sources with T samples each. L is the FIR length when the
/// sources come from a filter bank (0 when unused).
struct ProblemDims {
    int M = 1;
    int K = 1;
    int T = 1;
    int L = 0;

    /// Number of distinct target-matrix elements once symmetric duplicates are
    /// collapsed: M K^2 (1 + M K) / 2.
    [[nodiscard]] int mq() const noexcept { return M * K * K * (1 + M * K) / 2; }
    /// Number of demixing unknowns K^2 M.
    [[nodiscard]] int nb() const noexcept { return K * K * M; }

    void validate() const;
};

/// The M demixing matrices B^(m), each K x K.
struct DemixingSet {
    std::vector<Matrix> B;

    [[nodiscard]] static DemixingSet identity(int M, int K);
    [[nodiscard]] int M() const noexcept { return static_cast<int>(B.size()); }
    [[nodiscard]] int K() const noexcept { return B.empty() ? 0 : static_cast<int>(B.front().rows()); }

    /// Flattened per b_index (column-major within each B^(m), then m).
    [[nodiscard]] Vector flat() const;
    [[nodiscard]] static DemixingSet from_flat(const Vector& v, int M, int K);

    [[nodiscard]] bool all_finite() const;
};

/// K M^2 target matrices Q_k^(m1,m2). The invariant
/// Q_k^(m1,m2) == Q_k^(m2,m1)^T is maintained by set_pair().
class TargetSet {
public:
    TargetSet() = default;
    TargetSet(int M, int K);

    [[nodiscard]] int M() const noexcept { return M_; }
    [[nodiscard]] int K() const noexcept { return K_; }

    [[nodiscard]] const Matrix& operator()(int k, int m1, int m2) const { return q_[slot(k, m1, m2)]; }
    [[nodiscard]] Matrix& operator()(int k, int m1, int m2) { return q_[slot(k, m1, m2)]; }

    /// Writes Q_k^(m1,m2) = value and Q_k^(m2,m1) = value^T. For m1 == m2 the
    /// value is symmetrised.
    void set_pair(int k, int m1, int m2, const Matrix& value);

    /// The stacked KM x KM matrix with block (m1,m2) = Q_k^(m1,m2).
    [[nodiscard]] Matrix omega(int k) const;

    [[nodiscard]] double max_asymmetry() const;

private:
    [[nodiscard]] std::size_t slot(int k, int m1, int m2) const;

    int M_ = 0;
    int K_ = 0;
    std::vector<Matrix> q_;
};

/// 0-based flat position of B_pq^(m): p + q K + m K^2.
[[nodiscard]] int b_index(int m, int p, int q, const ProblemDims& dims);

/// One independent element Q_{k,ij}^(m1,m2) of the target set.
struct QElement {
    int k = 0;
    int i = 0;
    int j = 0;
    int m1 = 0;
    int m2 = 0;

    friend bool operator==(const QElement&, const QElement&) = default;
};

/// Canonical form of an element: (m1,m2) with m1 <= m2, and i >= j inside a
/// symmetric block (m1 == m2). The duplicate of (k,i,j,m1,m2) is (k,j,i,m2,m1).
[[nodiscard]] QElement canonical(QElement e);

/// Bijection between canonical target elements and 0..M_q-1.
///
/// Enumeration order follows the wide target matrix
/// [Q_1^(.,.) ... Q_K^(.,.)] scanned block by block (m2 outer, then m1, then
/// k) and column-major inside each block, keeping only canonical elements.
class QLayout {
public:
    QLayout(int M, int K);
    explicit QLayout(const ProblemDims& dims) : QLayout(dims.M, dims.K) {}

    [[nodiscard]] int size() const noexcept { return static_cast<int>(entries_.size()); }
    [[nodiscard]] const std::vector<QElement>& entries() const noexcept { return entries_; }
    [[nodiscard]] const QElement& operator[](int r) const { return entries_.at(static_cast<std::size_t>(r)); }

    /// Flat index of any element; duplicates resolve to their canonical slot.
    [[nodiscard]] int index(const QElement& e) const;
    [[nodiscard]] int index(int k, int i, int j, int m1, int m2) const { return index(QElement{k, i, j, m1, m2}); }

    /// Reads the canonical vector q out of a target set.
    [[nodiscard]] Vector gather(const TargetSet& Q) const;

    /// Adds delta to element r of Q together with its symmetric duplicate.
    void perturb(TargetSet& Q, int r, double delta) const;

    [[nodiscard]] int M() const noexcept { return M_; }
    [[nodiscard]] int K() const noexcept { return K_; }

private:
    [[nodiscard]] std::size_t key(const QElement& e) const;

    int M_;
    int K_;
    std::vector<QElement> entries_;
    std::vector<int> lookup_;
};

/// Interference-to-source ratios ISR_ij^(m), i != j. Diagonal cells are unused
/// and kept at zero.
struct IsrTable {
    std::vector<Matrix> isr;

    [[nodiscard]] static IsrTable zeros(int M, int K);
    [[nodiscard]] int M() const noexcept { return static_cast<int>(isr.size()); }
    [[nodiscard]] int K() const noexcept { return isr.empty() ? 0 : static_cast<int>(isr.front().rows()); }

    /// Arithmetic mean over the M K (K-1) off-diagonal cells.
    [[nodiscard]] double total_normalized() const;
};

[[nodiscard]] double to_db(double linear);

}  // namespace qiva
