#pragma once

// Synthetic sources: FIR banks designed from zeros inside the unit circle,
// white driving noises, Bernoulli-switched mixtures, linear mixing and the
// empirical ISR of estimated demixing matrices.

#include <complex>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "qiva/core_model.hpp"
#include "qiva/covariance.hpp"

namespace qiva {

/// A 64-bit Mersenne twister whose state is derived from (seed, index, tag),
/// so every trial owns an independent reproducible stream.
class Rng {
public:
    explicit Rng(std::uint64_t seed);
    [[nodiscard]] static Rng stream(std::uint64_t master_seed, std::uint64_t index, std::uint64_t tag = 0);

    [[nodiscard]] std::uint64_t next() { return engine_(); }
    /// Open interval (0, 1) with 53-bit resolution.
    [[nodiscard]] double uniform01();
    /// Standard normal by inverse CDF.
    [[nodiscard]] double normal();

private:
    std::mt19937_64 engine_;
};

enum class NoiseFamily { Gaussian, Uniform, Bernoulli, Laplace };

[[nodiscard]] NoiseFamily parse_family(const std::string& s);
[[nodiscard]] std::string to_string(NoiseFamily f);

/// Zero-mean unit-variance i.i.d. samples.
void gen_white(NoiseFamily family, std::span<double> out, Rng& rng);
[[nodiscard]] std::vector<double> gen_white(NoiseFamily family, int n, Rng& rng);

/// Zeros of one FIR filter. Complex zeros are stored once; their conjugates
/// are implied.
struct ZeroSet {
    bool has_real = false;
    double real = 0.0;
    std::vector<std::complex<double>> pairs;

    [[nodiscard]] int order() const noexcept { return static_cast<int>(pairs.size()) * 2 + (has_real ? 1 : 0); }
    [[nodiscard]] double max_radius() const;
};

/// L - 1 zeros: floor((L-1)/2) conjugate pairs plus one real zero when L is
/// even. Radii exp(-a u), pair phases U(0, pi), real zero at phase 0.
[[nodiscard]] ZeroSet draw_zeros(double a, int L, Rng& rng);

/// Pair phases get N(0, b^2) noise; every radius is multiplied by (1 - c).
[[nodiscard]] ZeroSet perturb_zeros(const ZeroSet& z0, double b, double c, Rng& rng);

/// mu z1 + (1 - mu) z0, zero by zero.
[[nodiscard]] ZeroSet interpolate_zeros(const ZeroSet& z0, const ZeroSet& z1, double mu);

/// Coefficients of prod (1 - z q^-1), scaled to the requested energy.
[[nodiscard]] Taps fir_from_zeros(const ZeroSet& z, double target_energy);

/// Zero sets for every (k, m, l) filter of an M x K bank, stored at index
/// k + K (m + M l).
struct BankZeros {
    int M = 0;
    int K = 0;
    int L = 0;
    std::vector<ZeroSet> zeros;

    [[nodiscard]] const ZeroSet& at(int k, int m, int l) const;
};

[[nodiscard]] BankZeros draw_bank_zeros(int M, int K, int L, double a, Rng& rng);
[[nodiscard]] BankZeros perturb_bank_zeros(const BankZeros& z0, double b, double c, Rng& rng);
[[nodiscard]] BankZeros interpolate_bank_zeros(const BankZeros& z0, const BankZeros& z1, double mu);
[[nodiscard]] FirBank bank_from_zeros(const BankZeros& z, double eta);

/// Bank with i.i.d. standard Gaussian taps, then normalised.
[[nodiscard]] FirBank gaussian_tap_bank(int M, int K, int L, double eta, Rng& rng);

/// S^(m) (K x T) with s_k^(m) = sum_l w_k^(l) * h_k^(m,l); driving noise
/// starts L - 1 samples early so the output is exactly stationary.
[[nodiscard]] std::vector<Matrix> gen_sources(const FirBank& bank, NoiseFamily family, int T, Rng& rng);

/// Sample-wise switch between two independent source sets: set a with
/// probability p, independently for every (k, m, t).
[[nodiscard]] std::vector<Matrix> gen_mixture_sources(const FirBank& bank_a, const FirBank& bank_b, double p,
                                                      NoiseFamily family_a, NoiseFamily family_b, int T, Rng& rng);

[[nodiscard]] std::vector<Matrix> mix(const std::vector<Matrix>& A, const std::vector<Matrix>& S);

/// Random mixing matrices I + 0.3 N(0,1) redrawn until the condition number
/// is below 10.
[[nodiscard]] std::vector<Matrix> random_mixing(int M, int K, Rng& rng);

/// Running mean of |T_ij|^2 / |T_ii|^2 * power_j / power_i with T = B_hat A.
class IsrAccumulator {
public:
    IsrAccumulator(int M, int K);

    void add(const DemixingSet& B_hat, const std::vector<Matrix>& A, const Matrix& powers);
    void add_excluded() { ++excluded_; }
    void merge(const IsrAccumulator& other);

    [[nodiscard]] long trials() const noexcept { return trials_; }
    [[nodiscard]] long excluded() const noexcept { return excluded_; }
    [[nodiscard]] IsrTable mean() const;
    /// Standard error of the total normalised ISR across trials.
    [[nodiscard]] double total_standard_error() const;

private:
    int M_;
    int K_;
    long trials_ = 0;
    long excluded_ = 0;
    std::vector<Matrix> sum_;
    double total_sum_ = 0.0;
    double total_sq_ = 0.0;
};

[[nodiscard]] IsrTable empirical_isr(const std::vector<DemixingSet>& trials, const std::vector<Matrix>& A,
                                     const Matrix& powers);

}  // namespace qiva
