#include "qiva/sourcegen.hpp"

#include <boost/math/special_functions/erf.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace qiva {

Rng::Rng(std::uint64_t seed) : engine_(seed) {}

Rng Rng::stream(std::uint64_t master_seed, std::uint64_t index, std::uint64_t tag) {
    auto lo = [](std::uint64_t v) { return static_cast<std::uint32_t>(v & 0xffffffffULL); };
    auto hi = [](std::uint64_t v) { return static_cast<std::uint32_t>(v >> 32); };
    std::seed_seq seq{lo(master_seed), hi(master_seed), lo(index), hi(index), lo(tag), hi(tag)};
    Rng r(0);
    r.engine_.seed(seq);
    return r;
}

double Rng::uniform01() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
}

double Rng::normal() {
    return std::numbers::sqrt2 * boost::math::erf_inv(2.0 * uniform01() - 1.0);
}

NoiseFamily parse_family(const std::string& s) {
    if (s == "gaussian") return NoiseFamily::Gaussian;
    if (s == "uniform") return NoiseFamily::Uniform;
    if (s == "bernoulli") return NoiseFamily::Bernoulli;
    if (s == "laplace") return NoiseFamily::Laplace;
    throw PreconditionError("unknown noise family '" + s + "'");
}

std::string to_string(NoiseFamily f) {
    switch (f) {
        case NoiseFamily::Gaussian: return "gaussian";
        case NoiseFamily::Uniform: return "uniform";
        case NoiseFamily::Bernoulli: return "bernoulli";
        case NoiseFamily::Laplace: return "laplace";
    }
    return "gaussian";
}

void gen_white(NoiseFamily family, std::span<double> out, Rng& rng) {
    switch (family) {
        case NoiseFamily::Gaussian:
            for (double& v : out) v = rng.normal();
            break;
        case NoiseFamily::Uniform: {
            const double s = std::sqrt(3.0);
            for (double& v : out) v = s * (2.0 * rng.uniform01() - 1.0);
            break;
        }
        case NoiseFamily::Bernoulli:
            for (double& v : out) v = (rng.next() >> 63) ? 1.0 : -1.0;
            break;
        case NoiseFamily::Laplace: {
            const double scale = 1.0 / std::numbers::sqrt2;
            for (double& v : out) {
                const double u = rng.uniform01() - 0.5;
                v = (u < 0.0 ? scale : -scale) * std::log1p(-2.0 * std::abs(u));
            }
            break;
        }
    }
}

std::vector<double> gen_white(NoiseFamily family, int n, Rng& rng) {
    if (n < 1) throw PreconditionError("gen_white: n must be >= 1");
    std::vector<double> v(static_cast<std::size_t>(n));
    gen_white(family, v, rng);
    return v;
}

double ZeroSet::max_radius() const {
    double r = has_real ? std::abs(real) : 0.0;
    for (const auto& z : pairs) r = std::max(r, std::abs(z));
    return r;
}

ZeroSet draw_zeros(double a, int L, Rng& rng) {
    if (!(a > 0.0)) throw PreconditionError("draw_zeros: a must be positive");
    if (L < 1) throw PreconditionError("draw_zeros: L must be >= 1");
    ZeroSet z;
    const int n = L - 1;
    z.has_real = (n % 2) == 1;
    if (z.has_real) z.real = std::exp(-a * rng.uniform01());
    for (int p = 0; p < n / 2; ++p) {
        const double radius = std::exp(-a * rng.uniform01());
        const double phase = std::numbers::pi * rng.uniform01();
        z.pairs.push_back(std::polar(radius, phase));
    }
    return z;
}

ZeroSet perturb_zeros(const ZeroSet& z0, double b, double c, Rng& rng) {
    if (!(c >= 0.0 && c < 1.0)) throw PreconditionError("perturb_zeros: c must lie in [0,1)");
    ZeroSet z = z0;
    z.real *= (1.0 - c);
    for (auto& p : z.pairs) {
        const double phase = std::arg(p) + b * rng.normal();
        p = std::polar(std::abs(p) * (1.0 - c), phase);
    }
    return z;
}

ZeroSet interpolate_zeros(const ZeroSet& z0, const ZeroSet& z1, double mu) {
    if (z0.has_real != z1.has_real || z0.pairs.size() != z1.pairs.size()) {
        throw PreconditionError("interpolate_zeros: zero sets do not pair up");
    }
    ZeroSet z = z0;
    z.real = mu * z1.real + (1.0 - mu) * z0.real;
    for (std::size_t i = 0; i < z.pairs.size(); ++i) z.pairs[i] = mu * z1.pairs[i] + (1.0 - mu) * z0.pairs[i];
    return z;
}

Taps fir_from_zeros(const ZeroSet& z, double target_energy) {
    std::vector<double> poly{1.0};
    auto multiply = [&poly](const std::vector<double>& factor) {
        std::vector<double> out(poly.size() + factor.size() - 1, 0.0);
        for (std::size_t i = 0; i < poly.size(); ++i)
            for (std::size_t j = 0; j < factor.size(); ++j) out[i + j] += poly[i] * factor[j];
        poly = std::move(out);
    };
    if (z.has_real) multiply({1.0, -z.real});
    for (const auto& p : z.pairs) multiply({1.0, -2.0 * p.real(), std::norm(p)});
    double energy = 0.0;
    for (double v : poly) energy += v * v;
    const double s = std::sqrt(target_energy / energy);
    for (double& v : poly) v *= s;
    return poly;
}

const ZeroSet& BankZeros::at(int k, int m, int l) const {
    if (k < 0 || k >= K || m < 0 || m >= M || l < 0 || l >= M) throw DomainError("BankZeros::at: index out of range");
    return zeros[static_cast<std::size_t>(k + K * (m + M * l))];
}

BankZeros draw_bank_zeros(int M, int K, int L, double a, Rng& rng) {
    BankZeros b{M, K, L, {}};
    b.zeros.reserve(static_cast<std::size_t>(M) * M * K);
    for (int l = 0; l < M; ++l)
        for (int m = 0; m < M; ++m)
            for (int k = 0; k < K; ++k) b.zeros.push_back(draw_zeros(a, L, rng));
    return b;
}

BankZeros perturb_bank_zeros(const BankZeros& z0, double b, double c, Rng& rng) {
    BankZeros out = z0;
    for (auto& z : out.zeros) z = perturb_zeros(z, b, c, rng);
    return out;
}

BankZeros interpolate_bank_zeros(const BankZeros& z0, const BankZeros& z1, double mu) {
    if (z0.zeros.size() != z1.zeros.size()) throw PreconditionError("interpolate_bank_zeros: size mismatch");
    BankZeros out = z0;
    for (std::size_t i = 0; i < out.zeros.size(); ++i) out.zeros[i] = interpolate_zeros(z0.zeros[i], z1.zeros[i], mu);
    return out;
}

FirBank bank_from_zeros(const BankZeros& z, double eta) {
    FirBank bank(z.M, z.K, z.L, eta);
    for (int k = 0; k < z.K; ++k)
        for (int m = 0; m < z.M; ++m)
            for (int l = 0; l < z.M; ++l) {
                const double energy = bank.target_energy(m, l);
                bank.taps(k, m, l) = energy > 0.0 ? fir_from_zeros(z.at(k, m, l), energy) : Taps(static_cast<std::size_t>(z.L), 0.0);
            }
    return bank;
}

FirBank gaussian_tap_bank(int M, int K, int L, double eta, Rng& rng) {
    FirBank bank(M, K, L, eta);
    for (int l = 0; l < M; ++l)
        for (int m = 0; m < M; ++m)
            for (int k = 0; k < K; ++k)
                for (double& v : bank.taps(k, m, l)) v = rng.normal();
    bank.normalize();
    return bank;
}

namespace {

// Adds sum_u h[u] w[t + L - 1 - u] into row `row` of S.
void convolve_into(Matrix& S, int row, const Taps& h, const std::vector<double>& w, int T) {
    const int L = static_cast<int>(h.size());
    for (int u = 0; u < L; ++u) {
        const double hu = h[static_cast<std::size_t>(u)];
        if (hu == 0.0) continue;
        const Eigen::Map<const Eigen::RowVectorXd> seg(w.data() + (L - 1 - u), T);
        S.row(row) += hu * seg;
    }
}

}  // namespace

std::vector<Matrix> gen_sources(const FirBank& bank, NoiseFamily family, int T, Rng& rng) {
    if (T < 1) throw PreconditionError("gen_sources: T must be >= 1");
    const int M = bank.M();
    const int K = bank.K();
    const int L = bank.L();
    std::vector<Matrix> S(static_cast<std::size_t>(M), Matrix::Zero(K, T));
    std::vector<double> w(static_cast<std::size_t>(T + L - 1));
    for (int k = 0; k < K; ++k) {
        for (int l = 0; l < M; ++l) {
            gen_white(family, w, rng);
            for (int m = 0; m < M; ++m) convolve_into(S[static_cast<std::size_t>(m)], k, bank.taps(k, m, l), w, T);
        }
    }
    return S;
}

std::vector<Matrix> gen_mixture_sources(const FirBank& bank_a, const FirBank& bank_b, double p, NoiseFamily family_a,
                                        NoiseFamily family_b, int T, Rng& rng) {
    if (!(p > 0.0 && p < 1.0)) throw PreconditionError("gen_mixture_sources: p must lie in (0,1)");
    if (bank_a.M() != bank_b.M() || bank_a.K() != bank_b.K()) {
        throw PreconditionError("gen_mixture_sources: banks differ in shape");
    }
    std::vector<Matrix> S = gen_sources(bank_a, family_a, T, rng);
    const std::vector<Matrix> Sb = gen_sources(bank_b, family_b, T, rng);
    for (std::size_t m = 0; m < S.size(); ++m) {
        for (int t = 0; t < T; ++t) {
            for (int k = 0; k < bank_a.K(); ++k) {
                if (!(rng.uniform01() < p)) S[m](k, t) = Sb[m](k, t);
            }
        }
    }
    return S;
}

std::vector<Matrix> mix(const std::vector<Matrix>& A, const std::vector<Matrix>& S) {
    if (A.size() != S.size()) throw PreconditionError("mix: need one mixing matrix per dataset");
    std::vector<Matrix> X;
    X.reserve(S.size());
    for (std::size_t m = 0; m < S.size(); ++m) X.push_back(A[m] * S[m]);
    return X;
}

std::vector<Matrix> random_mixing(int M, int K, Rng& rng) {
    std::vector<Matrix> A;
    for (int m = 0; m < M; ++m) {
        for (;;) {
            Matrix a = Matrix::Identity(K, K);
            for (int c = 0; c < K; ++c)
                for (int r = 0; r < K; ++r) a(r, c) += 0.3 * rng.normal();
            const Eigen::JacobiSVD<Matrix> svd(a);
            const auto& s = svd.singularValues();
            if (s(K - 1) > 0.0 && s(0) / s(K - 1) < 10.0) {
                A.push_back(std::move(a));
                break;
            }
        }
    }
    return A;
}

IsrAccumulator::IsrAccumulator(int M, int K) : M_(M), K_(K), sum_(static_cast<std::size_t>(M), Matrix::Zero(K, K)) {}

void IsrAccumulator::add(const DemixingSet& B_hat, const std::vector<Matrix>& A, const Matrix& powers) {
    double total = 0.0;
    for (int m = 0; m < M_; ++m) {
        const Matrix Tm = B_hat.B[static_cast<std::size_t>(m)] * A[static_cast<std::size_t>(m)];
        for (int i = 0; i < K_; ++i) {
            for (int j = 0; j < K_; ++j) {
                if (i == j) continue;
                const double v = (Tm(i, j) * Tm(i, j)) / (Tm(i, i) * Tm(i, i)) * powers(m, j) / powers(m, i);
                sum_[static_cast<std::size_t>(m)](i, j) += v;
                total += v;
            }
        }
    }
    if (K_ > 1) total /= static_cast<double>(M_) * K_ * (K_ - 1);
    total_sum_ += total;
    total_sq_ += total * total;
    ++trials_;
}

void IsrAccumulator::merge(const IsrAccumulator& other) {
    for (std::size_t m = 0; m < sum_.size(); ++m) sum_[m] += other.sum_[m];
    trials_ += other.trials_;
    excluded_ += other.excluded_;
    total_sum_ += other.total_sum_;
    total_sq_ += other.total_sq_;
}

IsrTable IsrAccumulator::mean() const {
    IsrTable t = IsrTable::zeros(M_, K_);
    if (trials_ == 0) return t;
    for (std::size_t m = 0; m < sum_.size(); ++m) t.isr[m] = sum_[m] / static_cast<double>(trials_);
    return t;
}

double IsrAccumulator::total_standard_error() const {
    if (trials_ < 2) return 0.0;
    const double n = static_cast<double>(trials_);
    const double mean = total_sum_ / n;
    const double var = std::max(0.0, (total_sq_ - n * mean * mean) / (n - 1.0));
    return std::sqrt(var / n);
}

IsrTable empirical_isr(const std::vector<DemixingSet>& trials, const std::vector<Matrix>& A, const Matrix& powers) {
    if (trials.empty()) throw PreconditionError("empirical_isr: no trials");
    IsrAccumulator acc(trials.front().M(), trials.front().K());
    for (const auto& b : trials) acc.add(b, A, powers);
    return acc.mean();
}

}  // namespace qiva
