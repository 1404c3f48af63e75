#include "qiva/trace_kernels.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

namespace qiva {

namespace {

// U = C^(a,b) * P where C^(a,b)[t1,t2] = r^(a,b)[t1 - t2].
template <class Block>
void toeplitz_times(Matrix& U, const ScvCovariance& C, int a, int b, const Block& P) {
    const int T = C.T();
    U.setZero();
    const int reach = std::min(C.max_lag(), T - 1);
    for (int tau = -reach; tau <= reach; ++tau) {
        const double r = C.lag(a, b, tau);
        if (r == 0.0) continue;
        const int lo = std::max(0, tau);
        const int n = std::min(T, T + tau) - lo;
        U.middleRows(lo, n).noalias() += r * P.middleRows(lo - tau, n);
    }
}

// V = P * C^(a,b).
template <class Block>
void times_toeplitz(Matrix& V, const Block& P, const ScvCovariance& C, int a, int b) {
    const int T = C.T();
    V.setZero();
    const int reach = std::min(C.max_lag(), T - 1);
    for (int tau = -reach; tau <= reach; ++tau) {
        const double r = C.lag(a, b, tau);
        if (r == 0.0) continue;
        // V(:, t2) += r[tau] P(:, t2 + tau)
        const int lo = std::max(0, -tau);
        const int n = std::min(T, T - tau) - lo;
        V.middleCols(lo, n).noalias() += r * P.middleCols(lo + tau, n);
    }
}

bool block_is_zero(const ScvCovariance& C, int a, int b) {
    for (int tau = -C.max_lag(); tau <= C.max_lag(); ++tau) {
        if (C.lag(a, b, tau) != 0.0) return false;
    }
    return true;
}

struct PairIndex {
    int first;
    int second;
    friend bool operator==(const PairIndex&, const PairIndex&) = default;
};

int find_or_add(std::vector<PairIndex>& list, PairIndex p) {
    const auto it = std::find(list.begin(), list.end(), p);
    if (it != list.end()) return static_cast<int>(it - list.begin());
    list.push_back(p);
    return static_cast<int>(list.size()) - 1;
}

class ExactEngine final : public TraceEngine {
public:
    ExactEngine(std::vector<ScvCovariance> C, std::vector<ScvPrecision> P, ExactEngineOptions opts)
        : C_(std::move(C)), P_(std::move(P)), opts_(opts) {
        if (C_.empty() || C_.size() != P_.size()) {
            throw PreconditionError("exact engine: need one covariance and one precision per source");
        }
        M_ = C_.front().M();
        T_ = C_.front().T();
        for (std::size_t k = 0; k < C_.size(); ++k) {
            if (C_[k].M() != M_ || C_[k].T() != T_ || P_[k].M() != M_ || P_[k].T() != T_) {
                throw PreconditionError("exact engine: inconsistent dimensions");
            }
        }
    }

    int M() const override { return M_; }
    int K() const override { return static_cast<int>(C_.size()); }
    int T() const override { return T_; }
    std::string name() const override { return "exact"; }

    double pair_trace(int i, int k, int a, int b) const override {
        const ScvCovariance& C = C_.at(static_cast<std::size_t>(i));
        const auto Pb = P_.at(static_cast<std::size_t>(k)).block(a, b);
        const int reach = std::min(C.max_lag(), T_ - 1);
        double acc = 0.0;
        for (int tau = -reach; tau <= reach; ++tau) {
            const double r = C.lag(b, a, tau);
            if (r == 0.0) continue;
            double diag = 0.0;
            for (int v = std::max(0, -tau); v < std::min(T_, T_ - tau); ++v) diag += Pb(v, v + tau);
            acc += r * diag;
        }
        return acc / T_;
    }

    std::vector<QuadTensor> quad(std::span<const QuadKey> keys) const override {
        std::vector<QuadTensor> out(keys.size(), QuadTensor(M_));
        const std::size_t per_factor = static_cast<std::size_t>(M_) * T_ * T_ * sizeof(double);
        std::size_t start = 0;
        while (start < keys.size()) {
            // Greedy chunk of keys whose distinct factors fit the budget.
            std::vector<PairIndex> xy;
            std::vector<PairIndex> zw;
            std::size_t end = start;
            while (end < keys.size()) {
                auto xy_try = xy;
                auto zw_try = zw;
                find_or_add(xy_try, {keys[end].x, keys[end].y});
                find_or_add(zw_try, {keys[end].z, keys[end].w});
                if (end > start && (xy_try.size() + zw_try.size()) * per_factor > opts_.buffer_budget_bytes) break;
                xy = std::move(xy_try);
                zw = std::move(zw_try);
                ++end;
            }
            run_chunk(keys.subspan(start, end - start), xy, zw, std::span<QuadTensor>(out).subspan(start, end - start));
            start = end;
        }
        return out;
    }

private:
    void run_chunk(std::span<const QuadKey> keys, std::span<const PairIndex> xy, std::span<const PairIndex> zw,
                   std::span<QuadTensor> out) const {
        const int M = M_;
        const int nxy = static_cast<int>(xy.size());
        const int nzw = static_cast<int>(zw.size());
        std::vector<Matrix> U(static_cast<std::size_t>(nxy) * M, Matrix(T_, T_));
        std::vector<Matrix> V(static_cast<std::size_t>(nzw) * M, Matrix(T_, T_));
        std::vector<char> u_zero(U.size());
        std::vector<char> v_zero(V.size());
        std::vector<int> key_xy(keys.size());
        std::vector<int> key_zw(keys.size());
        for (std::size_t n = 0; n < keys.size(); ++n) {
            key_xy[n] = static_cast<int>(std::find(xy.begin(), xy.end(), PairIndex{keys[n].x, keys[n].y}) - xy.begin());
            key_zw[n] = static_cast<int>(std::find(zw.begin(), zw.end(), PairIndex{keys[n].z, keys[n].w}) - zw.begin());
        }
        const bool par = opts_.parallel;
        const double inv_t = 1.0 / T_;
        const int n_inner = static_cast<int>(keys.size()) * M * M;

        for (int a = 0; a < M; ++a) {
            for (int c = 0; c < M; ++c) {
                // U[xy][b] = C_x^(a,b) P_y^(b,c)
#pragma omp parallel for schedule(dynamic) if (par)
                for (int task = 0; task < nxy * M; ++task) {
                    const int s = task / M;
                    const int b = task % M;
                    const ScvCovariance& C = C_[static_cast<std::size_t>(xy[static_cast<std::size_t>(s)].first)];
                    const auto& P = P_[static_cast<std::size_t>(xy[static_cast<std::size_t>(s)].second)];
                    u_zero[static_cast<std::size_t>(task)] = block_is_zero(C, a, b);
                    if (!u_zero[static_cast<std::size_t>(task)]) toeplitz_times(U[static_cast<std::size_t>(task)], C, a, b, P.block(b, c));
                }
                // V[zw][d] = P_w^(a,d) C_z^(d,c), the transpose of C_z^(c,d) P_w^(d,a)
#pragma omp parallel for schedule(dynamic) if (par)
                for (int task = 0; task < nzw * M; ++task) {
                    const int s = task / M;
                    const int d = task % M;
                    const ScvCovariance& C = C_[static_cast<std::size_t>(zw[static_cast<std::size_t>(s)].first)];
                    const auto& P = P_[static_cast<std::size_t>(zw[static_cast<std::size_t>(s)].second)];
                    v_zero[static_cast<std::size_t>(task)] = block_is_zero(C, d, c);
                    if (!v_zero[static_cast<std::size_t>(task)]) times_toeplitz(V[static_cast<std::size_t>(task)], P.block(a, d), C, d, c);
                }
#pragma omp parallel for schedule(static) if (par)
                for (int task = 0; task < n_inner; ++task) {
                    const int n = task / (M * M);
                    const int b = (task / M) % M;
                    const int d = task % M;
                    const std::size_t ui = static_cast<std::size_t>(key_xy[static_cast<std::size_t>(n)]) * M + b;
                    const std::size_t vi = static_cast<std::size_t>(key_zw[static_cast<std::size_t>(n)]) * M + d;
                    double value = 0.0;
                    if (!u_zero[ui] && !v_zero[vi]) value = (U[ui].array() * V[vi].array()).sum() * inv_t;
                    out[static_cast<std::size_t>(n)](a, b, c, d) = value;
                }
            }
        }
    }

    std::vector<ScvCovariance> C_;
    std::vector<ScvPrecision> P_;
    ExactEngineOptions opts_;
    int M_ = 0;
    int T_ = 0;
};

class SpectralEngine final : public TraceEngine {
public:
    SpectralEngine(const std::vector<ScvCovariance>& C, const std::vector<ScvCovariance>& presumed, bool parallel)
        : parallel_(parallel) {
        if (C.empty() || C.size() != presumed.size()) {
            throw PreconditionError("spectral engine: need one true and one presumed covariance per source");
        }
        M_ = C.front().M();
        T_ = C.front().T();
        K_ = static_cast<int>(C.size());
        nf_ = T_ / 2 + 1;
        weight_.assign(static_cast<std::size_t>(nf_), 2.0);
        weight_[0] = 1.0;
        if (T_ % 2 == 0) weight_.back() = 1.0;
        if (T_ == 1) weight_[0] = 1.0;
        S_.resize(static_cast<std::size_t>(K_) * nf_);
        Pi_.resize(static_cast<std::size_t>(K_) * nf_);
        for (int k = 0; k < K_; ++k) {
            if (C[static_cast<std::size_t>(k)].M() != M_ || C[static_cast<std::size_t>(k)].T() != T_ ||
                presumed[static_cast<std::size_t>(k)].M() != M_ || presumed[static_cast<std::size_t>(k)].T() != T_) {
                throw PreconditionError("spectral engine: inconsistent dimensions");
            }
            for (int f = 0; f < nf_; ++f) {
                const double omega = 2.0 * std::numbers::pi * f / T_;
                S_[slot(k, f)] = C[static_cast<std::size_t>(k)].symbol(omega);
                const Eigen::MatrixXcd sp = presumed[static_cast<std::size_t>(k)].symbol(omega);
                Eigen::LLT<Eigen::MatrixXcd> llt(sp);
                if (llt.info() != Eigen::Success) {
                    throw SingularCovariance("spectral engine: presumed spectral density is not positive definite");
                }
                Pi_[slot(k, f)] = llt.solve(Eigen::MatrixXcd::Identity(M_, M_));
            }
        }
    }

    int M() const override { return M_; }
    int K() const override { return K_; }
    int T() const override { return T_; }
    std::string name() const override { return "spectral"; }

    double pair_trace(int i, int k, int a, int b) const override {
        double acc = 0.0;
        for (int f = 0; f < nf_; ++f) {
            acc += weight_[static_cast<std::size_t>(f)] * (S_[slot(i, f)](b, a) * Pi_[slot(k, f)](a, b)).real();
        }
        return acc / T_;
    }

    std::vector<QuadTensor> quad(std::span<const QuadKey> keys) const override {
        std::vector<QuadTensor> out(keys.size(), QuadTensor(M_));
        const int M = M_;
        const int n_keys = static_cast<int>(keys.size());
#pragma omp parallel for schedule(dynamic) if (parallel_)
        for (int n = 0; n < n_keys; ++n) {
            const QuadKey key = keys[static_cast<std::size_t>(n)];
            std::vector<double> acc(static_cast<std::size_t>(M) * M * M * M, 0.0);
            std::vector<std::complex<double>> X(static_cast<std::size_t>(M) * M * M);
            std::vector<std::complex<double>> Y(static_cast<std::size_t>(M) * M * M);
            for (int f = 0; f < nf_; ++f) {
                const auto& Sx = S_[slot(key.x, f)];
                const auto& Py = Pi_[slot(key.y, f)];
                const auto& Sz = S_[slot(key.z, f)];
                const auto& Pw = Pi_[slot(key.w, f)];
                const double wf = weight_[static_cast<std::size_t>(f)];
                // X[a,b,c] = Sx(a,b) Py(b,c); Y[c,d,a] = Sz(c,d) Pw(d,a)
                for (int c = 0; c < M; ++c)
                    for (int b = 0; b < M; ++b)
                        for (int a = 0; a < M; ++a) X[static_cast<std::size_t>(a + M * (b + M * c))] = Sx(a, b) * Py(b, c);
                for (int a = 0; a < M; ++a)
                    for (int d = 0; d < M; ++d)
                        for (int c = 0; c < M; ++c) Y[static_cast<std::size_t>(c + M * (d + M * a))] = Sz(c, d) * Pw(d, a);
                for (int d = 0; d < M; ++d)
                    for (int c = 0; c < M; ++c)
                        for (int b = 0; b < M; ++b)
                            for (int a = 0; a < M; ++a) {
                                const auto prod = X[static_cast<std::size_t>(a + M * (b + M * c))] *
                                                  Y[static_cast<std::size_t>(c + M * (d + M * a))];
                                acc[static_cast<std::size_t>(a + M * (b + M * (c + M * d)))] += wf * prod.real();
                            }
            }
            for (int d = 0; d < M; ++d)
                for (int c = 0; c < M; ++c)
                    for (int b = 0; b < M; ++b)
                        for (int a = 0; a < M; ++a)
                            out[static_cast<std::size_t>(n)](a, b, c, d) = acc[static_cast<std::size_t>(a + M * (b + M * (c + M * d)))] / T_;
        }
        return out;
    }

private:
    [[nodiscard]] std::size_t slot(int k, int f) const noexcept {
        return static_cast<std::size_t>(k) * static_cast<std::size_t>(nf_) + static_cast<std::size_t>(f);
    }

    bool parallel_;
    int M_ = 0;
    int T_ = 0;
    int K_ = 0;
    int nf_ = 0;
    std::vector<double> weight_;
    std::vector<Eigen::MatrixXcd> S_;
    std::vector<Eigen::MatrixXcd> Pi_;
};

}  // namespace

std::unique_ptr<TraceEngine> make_exact_engine(std::vector<ScvCovariance> C_true, std::vector<ScvPrecision> P_presumed,
                                               ExactEngineOptions opts) {
    return std::make_unique<ExactEngine>(std::move(C_true), std::move(P_presumed), opts);
}

std::unique_ptr<TraceEngine> make_spectral_engine(const std::vector<ScvCovariance>& C_true,
                                                  const std::vector<ScvCovariance>& C_presumed, bool parallel) {
    return std::make_unique<SpectralEngine>(C_true, C_presumed, parallel);
}

double quad_trace_reference(const std::vector<Matrix>& C_dense, const std::vector<Matrix>& P_dense, int T,
                            const QuadKey& key, int a, int b, int c, int d) {
    auto blk = [T](const Matrix& X, int r, int s) { return X.block(r * T, s * T, T, T); };
    const Matrix left = blk(C_dense.at(static_cast<std::size_t>(key.x)), a, b) * blk(P_dense.at(static_cast<std::size_t>(key.y)), b, c);
    const Matrix right = blk(C_dense.at(static_cast<std::size_t>(key.z)), c, d) * blk(P_dense.at(static_cast<std::size_t>(key.w)), d, a);
    return (left * right).trace() / T;
}

}  // namespace qiva
