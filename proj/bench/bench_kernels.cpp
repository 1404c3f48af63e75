#include <benchmark/benchmark.h>

#include "qiva/perturbation.hpp"
#include "qiva/sedjoco.hpp"
#include "qiva/sourcegen.hpp"
#include "qiva/trace_kernels.hpp"

namespace {

using namespace qiva;

struct Fixture {
    FirBank bank;
    std::vector<ScvCovariance> C_true;
    std::vector<ScvCovariance> C_presumed;
    std::vector<ScvPrecision> P;
    std::vector<QuadKey> keys;
};

Fixture make(int M, int K, int T) {
    Rng rng(7);
    const BankZeros z0 = draw_bank_zeros(M, K, 10, 2.0, rng);
    const BankZeros z1 = perturb_bank_zeros(z0, 0.1, 0.1, rng);
    Fixture f;
    f.bank = bank_from_zeros(z0, 1.0);
    const FirBank presumed = bank_from_zeros(interpolate_bank_zeros(z0, z1, 0.5), 1.0);
    for (int k = 0; k < K; ++k) {
        f.C_true.push_back(scv_covariance_from_firs(f.bank, k, T));
        f.C_presumed.push_back(scv_covariance_from_firs(presumed, k, T));
        f.P.push_back(scv_precision(f.C_presumed.back()));
    }
    for (int i = 0; i < K; ++i)
        for (int k = 0; k < K; ++k) f.keys.push_back({i, k, i, k});
    return f;
}

void BM_ExactQuad(benchmark::State& state) {
    const Fixture f = make(2, 3, static_cast<int>(state.range(0)));
    ExactEngineOptions o;
    o.parallel = state.range(1) != 0;
    const auto engine = make_exact_engine(f.C_true, f.P, o);
    for (auto _ : state) benchmark::DoNotOptimize(engine->quad(f.keys));
}
BENCHMARK(BM_ExactQuad)->Args({250, 0})->Args({250, 1})->Args({1000, 0})->Args({1000, 1})->Unit(benchmark::kMillisecond);

void BM_SpectralQuad(benchmark::State& state) {
    const Fixture f = make(2, 3, static_cast<int>(state.range(0)));
    const auto engine = make_spectral_engine(f.C_true, f.C_presumed, state.range(1) != 0);
    for (auto _ : state) benchmark::DoNotOptimize(engine->quad(f.keys));
}
BENCHMARK(BM_SpectralQuad)->Args({1000, 0})->Args({1000, 1})->Unit(benchmark::kMillisecond);

void BM_BandedTargets(benchmark::State& state) {
    const int T = static_cast<int>(state.range(0));
    const Fixture f = make(2, 3, T);
    std::vector<BandedCholesky> chol;
    for (const auto& c : f.C_presumed) chol.emplace_back(c);
    Rng rng(11);
    const auto X = gen_sources(f.bank, NoiseFamily::Gaussian, T, rng);
    for (auto _ : state) benchmark::DoNotOptimize(compute_targets(X, chol));
}
BENCHMARK(BM_BandedTargets)->Arg(1000)->Arg(5000)->Unit(benchmark::kMicrosecond);

void BM_DenseTargets(benchmark::State& state) {
    const int T = static_cast<int>(state.range(0));
    const Fixture f = make(2, 3, T);
    Rng rng(11);
    const auto X = gen_sources(f.bank, NoiseFamily::Gaussian, T, rng);
    for (auto _ : state) benchmark::DoNotOptimize(compute_targets(X, f.P));
}
BENCHMARK(BM_DenseTargets)->Arg(1000)->Unit(benchmark::kMicrosecond);

void BM_Predict(benchmark::State& state) {
    const Fixture f = make(2, 3, 1000);
    for (auto _ : state) benchmark::DoNotOptimize(predict(f.C_true, f.C_presumed));
}
BENCHMARK(BM_Predict)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
