#pragma once

// Normalised trace kernels behind the asymptotic target statistics:
//
//   pair:  (1/T) Tr(C_i^(b,a) P_k^(a,b))
//   quad:  Theta_{xyzw}[a,b,c,d] = (1/T) Tr(C_x^(a,b) P_y^(b,c) C_z^(c,d) P_w^(d,a))
//
// C are true SCV covariances, P presumed precisions. Two engines compute them:
// an exact one on dense precision blocks and a spectral one that replaces
// every Toeplitz block by its circulant counterpart (error O(lag/T)).

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "qiva/covariance.hpp"

namespace qiva {

/// Source indices (x, y, z, w) selecting C_x, P_y, C_z, P_w.
struct QuadKey {
    int x = 0;
    int y = 0;
    int z = 0;
    int w = 0;

    friend bool operator==(const QuadKey&, const QuadKey&) = default;
};

/// M^4 values indexed (a, b, c, d).
class QuadTensor {
public:
    QuadTensor() = default;
    explicit QuadTensor(int M) : M_(M), v_(static_cast<std::size_t>(M) * M * M * M, 0.0) {}

    [[nodiscard]] int M() const noexcept { return M_; }
    [[nodiscard]] double& operator()(int a, int b, int c, int d) { return v_[slot(a, b, c, d)]; }
    [[nodiscard]] double operator()(int a, int b, int c, int d) const { return v_[slot(a, b, c, d)]; }

private:
    [[nodiscard]] std::size_t slot(int a, int b, int c, int d) const noexcept {
        const auto M = static_cast<std::size_t>(M_);
        return static_cast<std::size_t>(a) + M * (static_cast<std::size_t>(b) + M * (static_cast<std::size_t>(c) + M * static_cast<std::size_t>(d)));
    }

    int M_ = 0;
    std::vector<double> v_;
};

class TraceEngine {
public:
    virtual ~TraceEngine() = default;

    [[nodiscard]] virtual int M() const = 0;
    [[nodiscard]] virtual int K() const = 0;
    [[nodiscard]] virtual int T() const = 0;
    [[nodiscard]] virtual std::string name() const = 0;

    /// (1/T) Tr(C_i^(b,a) P_k^(a,b)).
    [[nodiscard]] virtual double pair_trace(int i, int k, int a, int b) const = 0;
    /// One tensor per key, in key order.
    [[nodiscard]] virtual std::vector<QuadTensor> quad(std::span<const QuadKey> keys) const = 0;
};

struct ExactEngineOptions {
    /// Use OpenMP inside the kernels; off gives the serial kernel.
    bool parallel = true;
    /// Cap on the T x T work buffers held at once.
    std::size_t buffer_budget_bytes = std::size_t{1} << 30;
};

/// Dense precision blocks, banded products with the Toeplitz covariances.
[[nodiscard]] std::unique_ptr<TraceEngine> make_exact_engine(std::vector<ScvCovariance> C_true,
                                                             std::vector<ScvPrecision> P_presumed,
                                                             ExactEngineOptions opts = {});

/// Circulant approximation on the T Fourier frequencies 2 pi f / T; presumed
/// precision symbols are the inverses of the presumed covariance symbols.
[[nodiscard]] std::unique_ptr<TraceEngine> make_spectral_engine(const std::vector<ScvCovariance>& C_true,
                                                                const std::vector<ScvCovariance>& C_presumed,
                                                                bool parallel = true);

/// Straight dense products, for testing the engines.
[[nodiscard]] double quad_trace_reference(const std::vector<Matrix>& C_dense, const std::vector<Matrix>& P_dense, int T,
                                          const QuadKey& key, int a, int b, int c, int d);

}  // namespace qiva
