#include "qiva/core_model.hpp"

#include <cmath>
#include <limits>

namespace qiva {

void ProblemDims::validate() const {
    if (M < 1 || K < 1 || T < 1 || L < 0) {
        throw PreconditionError("ProblemDims: need M >= 1, K >= 1, T >= 1, L >= 0 (got M=" + std::to_string(M) +
                                " K=" + std::to_string(K) + " T=" + std::to_string(T) + " L=" + std::to_string(L) + ")");
    }
}

DemixingSet DemixingSet::identity(int M, int K) {
    DemixingSet d;
    d.B.assign(static_cast<std::size_t>(M), Matrix::Identity(K, K));
    return d;
}

Vector DemixingSet::flat() const {
    const int k = K();
    Vector v(static_cast<Eigen::Index>(k) * k * M());
    for (int m = 0; m < M(); ++m) {
        v.segment(static_cast<Eigen::Index>(m) * k * k, k * k) = B[static_cast<std::size_t>(m)].reshaped();
    }
    return v;
}

DemixingSet DemixingSet::from_flat(const Vector& v, int M, int K) {
    if (v.size() != static_cast<Eigen::Index>(M) * K * K) {
        throw DomainError("DemixingSet::from_flat: length mismatch");
    }
    DemixingSet d;
    d.B.reserve(static_cast<std::size_t>(M));
    for (int m = 0; m < M; ++m) {
        d.B.emplace_back(v.segment(static_cast<Eigen::Index>(m) * K * K, K * K).reshaped(K, K));
    }
    return d;
}

bool DemixingSet::all_finite() const {
    for (const auto& b : B) {
        if (!b.allFinite()) return false;
    }
    return true;
}

TargetSet::TargetSet(int M, int K) : M_(M), K_(K), q_(static_cast<std::size_t>(K) * M * M, Matrix::Zero(K, K)) {}

std::size_t TargetSet::slot(int k, int m1, int m2) const {
    if (k < 0 || k >= K_ || m1 < 0 || m1 >= M_ || m2 < 0 || m2 >= M_) {
        throw DomainError("TargetSet: index out of range");
    }
    return static_cast<std::size_t>(k) + static_cast<std::size_t>(K_) * (static_cast<std::size_t>(m1) + static_cast<std::size_t>(M_) * m2);
}

void TargetSet::set_pair(int k, int m1, int m2, const Matrix& value) {
    if (m1 == m2) {
        (*this)(k, m1, m1) = 0.5 * (value + value.transpose());
        return;
    }
    (*this)(k, m1, m2) = value;
    (*this)(k, m2, m1) = value.transpose();
}

Matrix TargetSet::omega(int k) const {
    Matrix w(static_cast<Eigen::Index>(K_) * M_, static_cast<Eigen::Index>(K_) * M_);
    for (int m1 = 0; m1 < M_; ++m1) {
        for (int m2 = 0; m2 < M_; ++m2) {
            w.block(m1 * K_, m2 * K_, K_, K_) = (*this)(k, m1, m2);
        }
    }
    return w;
}

double TargetSet::max_asymmetry() const {
    double worst = 0.0;
    for (int k = 0; k < K_; ++k) {
        for (int m1 = 0; m1 < M_; ++m1) {
            for (int m2 = m1; m2 < M_; ++m2) {
                worst = std::max(worst, ((*this)(k, m1, m2) - (*this)(k, m2, m1).transpose()).cwiseAbs().maxCoeff());
            }
        }
    }
    return worst;
}

int b_index(int m, int p, int q, const ProblemDims& dims) {
    if (m < 0 || m >= dims.M || p < 0 || p >= dims.K || q < 0 || q >= dims.K) {
        throw DomainError("b_index: (m,p,q) out of range");
    }
    return p + q * dims.K + m * dims.K * dims.K;
}

QElement canonical(QElement e) {
    if (e.m1 > e.m2 || (e.m1 == e.m2 && e.i < e.j)) {
        return QElement{e.k, e.j, e.i, e.m2, e.m1};
    }
    return e;
}

QLayout::QLayout(int M, int K) : M_(M), K_(K) {
    if (M < 1 || K < 1) throw PreconditionError("QLayout: need M >= 1 and K >= 1");
    lookup_.assign(static_cast<std::size_t>(K) * K * K * M * M, -1);
    for (int m2 = 0; m2 < M; ++m2) {
        for (int m1 = 0; m1 <= m2; ++m1) {
            for (int k = 0; k < K; ++k) {
                for (int j = 0; j < K; ++j) {
                    for (int i = (m1 == m2 ? j : 0); i < K; ++i) {
                        const QElement e{k, i, j, m1, m2};
                        lookup_[key(e)] = static_cast<int>(entries_.size());
                        entries_.push_back(e);
                    }
                }
            }
        }
    }
}

std::size_t QLayout::key(const QElement& e) const {
    const auto K = static_cast<std::size_t>(K_);
    const auto M = static_cast<std::size_t>(M_);
    return static_cast<std::size_t>(e.i) +
           K * (static_cast<std::size_t>(e.j) +
                K * (static_cast<std::size_t>(e.k) + K * (static_cast<std::size_t>(e.m1) + M * static_cast<std::size_t>(e.m2))));
}

int QLayout::index(const QElement& e) const {
    if (e.k < 0 || e.k >= K_ || e.i < 0 || e.i >= K_ || e.j < 0 || e.j >= K_ || e.m1 < 0 || e.m1 >= M_ || e.m2 < 0 ||
        e.m2 >= M_) {
        throw DomainError("QLayout::index: element out of range");
    }
    return lookup_[key(canonical(e))];
}

Vector QLayout::gather(const TargetSet& Q) const {
    Vector q(size());
    for (int r = 0; r < size(); ++r) {
        const auto& e = entries_[static_cast<std::size_t>(r)];
        q(r) = Q(e.k, e.m1, e.m2)(e.i, e.j);
    }
    return q;
}

void QLayout::perturb(TargetSet& Q, int r, double delta) const {
    const auto& e = (*this)[r];
    Q(e.k, e.m1, e.m2)(e.i, e.j) += delta;
    if (e.m1 != e.m2 || e.i != e.j) {
        Q(e.k, e.m2, e.m1)(e.j, e.i) += delta;
    }
}

IsrTable IsrTable::zeros(int M, int K) {
    IsrTable t;
    t.isr.assign(static_cast<std::size_t>(M), Matrix::Zero(K, K));
    return t;
}

double IsrTable::total_normalized() const {
    const int k = K();
    if (M() == 0 || k < 2) return 0.0;
    double sum = 0.0;
    for (const auto& m : isr) {
        for (int i = 0; i < k; ++i) {
            for (int j = 0; j < k; ++j) {
                if (i != j) sum += m(i, j);
            }
        }
    }
    return sum / (static_cast<double>(M()) * k * (k - 1));
}

double to_db(double linear) {
    if (!(linear > 0.0)) return -std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(linear);
}

}  // namespace qiva
