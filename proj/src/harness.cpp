#include "qiva/harness.hpp"

#include <omp.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <set>
#include <sstream>

#include "qiva/banded.hpp"
#include "qiva/sedjoco.hpp"

namespace qiva {

namespace {

// Stream tags separating the independent random quantities of a run.
constexpr std::uint64_t kTagBankA = 1;
constexpr std::uint64_t kTagPerturbA = 2;
constexpr std::uint64_t kTagBankB = 3;
constexpr std::uint64_t kTagPerturbB = 4;
constexpr std::uint64_t kTagTrial = 10;
constexpr std::uint64_t kTagMixing = 11;

std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

template <class T>
std::string join(const std::vector<T>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ",";
        if constexpr (std::is_same_v<T, NoiseFamily>) {
            s += to_string(v[i]);
        } else if constexpr (std::is_floating_point_v<T>) {
            s += fmt(v[i]);
        } else {
            s += std::to_string(v[i]);
        }
    }
    return s;
}

bool has_mixture(double p) { return !std::isnan(p); }

}  // namespace

void ExperimentConfig::validate() const {
    auto fail = [](const std::string& what) { throw PreconditionError("experiment config: " + what); };
    if (M < 1 || K < 2) fail("need M >= 1 and K >= 2");
    if (L < 1) fail("fir.L must be >= 1");
    if (!(eta >= 0.0)) fail("fir.eta must be >= 0");
    if (fir_kind != "zeros" && fir_kind != "gaussian") fail("fir.kind must be zeros or gaussian");
    if (!(a > 0.0) || !(b >= 0.0) || !(c >= 0.0 && c < 1.0)) fail("mismodel needs a > 0, b >= 0, 0 <= c < 1");
    if (mu.empty() || T.empty() || families.empty()) fail("grids must be non-empty");
    for (double m : mu)
        if (!(m >= 0.0 && m <= 1.0)) fail("mismodel.mu values must lie in [0,1]");
    for (int t : T)
        if (t < 1) fail("grid.T values must be >= 1");
    for (double q : p)
        if (!(q > 0.0 && q < 1.0)) fail("mixture.p values must lie in (0,1)");
    if (trials < 1) fail("trials must be >= 1");
    if (init != "true" && init != "identity") fail("solver.init must be true or identity");
    if (!(tol > 0.0) || max_iter < 1) fail("solver.tol must be > 0 and solver.max_iter >= 1");
    if (mixing != "identity" && mixing != "random") fail("mixing must be identity or random");
    if (!(excluded_budget >= 0.0 && excluded_budget <= 1.0)) fail("budget.excluded must lie in [0,1]");
}

Config ExperimentConfig::to_config() const {
    Config out;
    out.set("experiment", id);
    out.set("dims.M", std::to_string(M));
    out.set("dims.K", std::to_string(K));
    out.set("fir.L", std::to_string(L));
    out.set("fir.eta", fmt(eta));
    out.set("fir.kind", fir_kind);
    out.set("mismodel.a", fmt(a));
    out.set("mismodel.b", fmt(b));
    out.set("mismodel.c", fmt(c));
    out.set("mismodel.mu", join(mu));
    out.set("grid.T", join(T));
    out.set("mixture.p", join(p));
    out.set("noise.families", join(families));
    out.set("trials", std::to_string(trials));
    out.set("seed", std::to_string(seed));
    out.set("solver.init", init);
    out.set("solver.tol", fmt(tol));
    out.set("solver.max_iter", std::to_string(max_iter));
    out.set("prediction.engine", to_string(engine));
    out.set("mixing", mixing);
    out.set("budget.excluded", fmt(excluded_budget));
    return out;
}

void ExperimentConfig::apply(const Config& cfg) {
    static const std::set<std::string> known{
        "experiment", "dims.M",         "dims.K",      "fir.L",        "fir.eta",        "fir.kind",
        "mismodel.a", "mismodel.b",     "mismodel.c",  "mismodel.mu",  "grid.T",         "mixture.p",
        "noise.families", "trials",     "seed",        "solver.init",  "solver.tol",     "solver.max_iter",
        "prediction.engine", "mixing",  "budget.excluded"};
    for (const auto& [k, v] : cfg.values()) {
        if (!known.count(k)) throw PreconditionError("experiment config: unknown key '" + k + "'");
    }
    if (cfg.has("experiment")) id = cfg.get("experiment");
    if (cfg.has("dims.M")) M = static_cast<int>(cfg.get_int("dims.M"));
    if (cfg.has("dims.K")) K = static_cast<int>(cfg.get_int("dims.K"));
    if (cfg.has("fir.L")) L = static_cast<int>(cfg.get_int("fir.L"));
    if (cfg.has("fir.eta")) eta = cfg.get_double("fir.eta");
    if (cfg.has("fir.kind")) fir_kind = cfg.get("fir.kind");
    if (cfg.has("mismodel.a")) a = cfg.get_double("mismodel.a");
    if (cfg.has("mismodel.b")) b = cfg.get_double("mismodel.b");
    if (cfg.has("mismodel.c")) c = cfg.get_double("mismodel.c");
    if (cfg.has("mismodel.mu")) mu = cfg.get_doubles("mismodel.mu");
    if (cfg.has("grid.T")) {
        T.clear();
        for (long long t : cfg.get_ints("grid.T")) T.push_back(static_cast<int>(t));
    }
    if (cfg.has("mixture.p")) p = cfg.get_doubles("mixture.p");
    if (cfg.has("noise.families")) {
        families.clear();
        for (const auto& s : cfg.get_strings("noise.families")) families.push_back(parse_family(s));
    }
    if (cfg.has("trials")) trials = static_cast<int>(cfg.get_int("trials"));
    if (cfg.has("seed")) seed = cfg.get_uint64("seed");
    if (cfg.has("solver.init")) init = cfg.get("solver.init");
    if (cfg.has("solver.tol")) tol = cfg.get_double("solver.tol");
    if (cfg.has("solver.max_iter")) max_iter = static_cast<int>(cfg.get_int("solver.max_iter"));
    if (cfg.has("prediction.engine")) engine = parse_engine(cfg.get("prediction.engine"));
    if (cfg.has("mixing")) mixing = cfg.get("mixing");
    if (cfg.has("budget.excluded")) excluded_budget = cfg.get_double("budget.excluded");
}

ExperimentConfig experiment_defaults(const std::string& id, bool full_scale) {
    ExperimentConfig c;
    c.id = id;
    if (id == "exp1-mu") {
        c.M = 2; c.K = 3; c.L = 10; c.eta = 1.0;
        c.mu = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
        c.T = {1000};
        c.trials = full_scale ? 10000 : 2000;
    } else if (id == "exp1-T") {
        c.M = 2; c.K = 3; c.L = 10; c.eta = 1.0;
        c.mu = {0.0, 0.5, 1.0};
        c.T = {50, 100, 200, 500, 1000};
        c.trials = full_scale ? 10000 : 1000;
    } else if (id == "exp2") {
        c.M = 5; c.K = 2; c.L = 4; c.eta = 0.5;
        c.fir_kind = "gaussian";
        c.mu = {0.0};
        c.T = {1000};
        c.families = {NoiseFamily::Gaussian, NoiseFamily::Uniform, NoiseFamily::Bernoulli, NoiseFamily::Laplace};
        c.trials = full_scale ? 10000 : 2000;
    } else if (id == "exp3") {
        c.M = 8; c.K = 5; c.L = 10; c.eta = 0.1;
        c.mu = {0.5};
        c.T = {full_scale ? 10000 : 5000};
        c.p = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
        c.trials = full_scale ? 1000 : 200;
    } else {
        throw PreconditionError("unknown experiment '" + id + "' (expected exp1-mu, exp1-T, exp2 or exp3)");
    }
    return c;
}

std::string experiment_stem(const std::string& id) {
    if (id == "exp1-mu") return "fig1_exp1_mu";
    if (id == "exp1-T") return "fig2_exp1_T";
    if (id == "exp2") return "fig3_exp2";
    if (id == "exp3") return "fig4_exp3";
    return id;
}

Models build_models(const ExperimentConfig& cfg, int T, double mu, double p) {
    Models out;
    std::vector<FirBank> presumed;
    const int sets = has_mixture(p) ? 2 : 1;
    for (int s = 0; s < sets; ++s) {
        const std::uint64_t bank_tag = s == 0 ? kTagBankA : kTagBankB;
        const std::uint64_t perturb_tag = s == 0 ? kTagPerturbA : kTagPerturbB;
        Rng bank_rng = Rng::stream(cfg.seed, 0, bank_tag);
        if (cfg.fir_kind == "gaussian") {
            out.true_banks.push_back(gaussian_tap_bank(cfg.M, cfg.K, cfg.L, cfg.eta, bank_rng));
            presumed.push_back(out.true_banks.back());
        } else {
            const BankZeros z0 = draw_bank_zeros(cfg.M, cfg.K, cfg.L, cfg.a, bank_rng);
            Rng perturb_rng = Rng::stream(cfg.seed, 0, perturb_tag);
            const BankZeros z1 = perturb_bank_zeros(z0, cfg.b, cfg.c, perturb_rng);
            out.true_banks.push_back(bank_from_zeros(z0, cfg.eta));
            presumed.push_back(bank_from_zeros(interpolate_bank_zeros(z0, z1, mu), cfg.eta));
        }
    }
    for (int k = 0; k < cfg.K; ++k) {
        if (sets == 1) {
            out.C_true.push_back(scv_covariance_from_firs(out.true_banks[0], k, T));
            out.C_presumed.push_back(scv_covariance_from_firs(presumed[0], k, T));
        } else {
            out.C_true.push_back(mixture_covariance(scv_covariance_from_firs(out.true_banks[0], k, T),
                                                    scv_covariance_from_firs(out.true_banks[1], k, T), p));
            out.C_presumed.push_back(mixture_covariance(scv_covariance_from_firs(presumed[0], k, T),
                                                        scv_covariance_from_firs(presumed[1], k, T), p));
        }
    }
    return out;
}

Harness::Harness(ExperimentConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

void Harness::add_baseline(std::string name, BaselineEstimator fn) {
    baseline_names_.push_back(std::move(name));
    baselines_.push_back(std::move(fn));
}

namespace {

struct TrialOutcome {
    bool ok = false;
    IsrTable ratios;
    std::vector<IsrTable> baseline;
};

IsrTable single_trial_ratios(const DemixingSet& B, const std::vector<Matrix>& A, const Matrix& powers) {
    IsrAccumulator acc(B.M(), B.K());
    acc.add(B, A, powers);
    return acc.mean();
}

}  // namespace

std::vector<ResultRow> Harness::run(const RunOptions& opts) const {
    if (opts.threads > 0) omp_set_num_threads(opts.threads);
    auto log = [&opts](const std::string& s) {
        if (opts.log) opts.log(s);
    };
    PredictionOptions popts;
    popts.engine = cfg_.engine;

    std::vector<ResultRow> rows;
    const std::vector<double> p_grid = cfg_.p.empty() ? std::vector<double>{std::numeric_limits<double>::quiet_NaN()} : cfg_.p;
    for (int T : cfg_.T) {
        for (double p : p_grid) {
            std::vector<ScvCovariance> bound_cov;
            Prediction bound;
            for (double mu : cfg_.mu) {
                const auto t0 = std::chrono::steady_clock::now();
                const Models models = build_models(cfg_, T, mu, p);
                if (bound_cov != models.C_true) {
                    bound = predict(models.C_true, models.C_true, popts);
                    bound_cov = models.C_true;
                }
                const Prediction pred = models.C_presumed == models.C_true ? bound : predict(models.C_true, models.C_presumed, popts);
                const double predict_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                {
                    std::ostringstream msg;
                    msg << cfg_.id << ": T=" << T << " mu=" << mu << (has_mixture(p) ? " p=" + fmt(p) : std::string())
                        << " predicted " << fmt(to_db(pred.isr.total_normalized())) << " dB (" << pred.engine << ", "
                        << fmt(predict_seconds) << " s)";
                    log(msg.str());
                }
                for (NoiseFamily family : cfg_.families) {
                    const auto t1 = std::chrono::steady_clock::now();
                    ResultRow row;
                    row.experiment = cfg_.id;
                    row.T = T;
                    row.mu = mu;
                    row.p = p;
                    row.family = family;
                    row.engine = pred.engine;
                    row.predicted = pred.isr;
                    row.bound = bound.isr;
                    row.predicted_total = pred.isr.total_normalized();
                    row.bound_total = bound.isr.total_normalized();
                    if (opts.simulate) {
                        std::vector<BandedCholesky> chol;
                        chol.reserve(models.C_presumed.size());
                        for (const auto& c : models.C_presumed) chol.emplace_back(c);
                        const Matrix powers = source_powers(models.C_true);
                        const int n = cfg_.trials;
                        std::vector<TrialOutcome> outcomes(static_cast<std::size_t>(n));
                        NewtonOptions nopts;
                        nopts.tol = cfg_.tol;
                        nopts.max_iter = cfg_.max_iter;
#pragma omp parallel for schedule(dynamic)
                        for (int trial = 0; trial < n; ++trial) {
                            TrialOutcome& out = outcomes[static_cast<std::size_t>(trial)];
                            try {
                                Rng rng = Rng::stream(cfg_.seed, static_cast<std::uint64_t>(trial), kTagTrial);
                                const std::vector<Matrix> S =
                                    has_mixture(p) ? gen_mixture_sources(models.true_banks[0], models.true_banks[1], p, family,
                                                                         family, T, rng)
                                                   : gen_sources(models.true_banks[0], family, T, rng);
                                std::vector<Matrix> A;
                                if (cfg_.mixing == "random") {
                                    Rng mrng = Rng::stream(cfg_.seed, static_cast<std::uint64_t>(trial), kTagMixing);
                                    A = random_mixing(cfg_.M, cfg_.K, mrng);
                                } else {
                                    A.assign(static_cast<std::size_t>(cfg_.M), Matrix::Identity(cfg_.K, cfg_.K));
                                }
                                const std::vector<Matrix> X = mix(A, S);
                                const TargetSet Q = compute_targets(X, chol);
                                DemixingSet B0 = DemixingSet::identity(cfg_.M, cfg_.K);
                                if (cfg_.init == "true") {
                                    for (int m = 0; m < cfg_.M; ++m) B0.B[static_cast<std::size_t>(m)] = A[static_cast<std::size_t>(m)].inverse();
                                }
                                const NewtonResult res = newton_solve(Q, B0, nopts);
                                if (res.converged()) {
                                    out.ratios = single_trial_ratios(res.B, A, powers);
                                    out.ok = true;
                                }
                                for (const auto& fn : baselines_) out.baseline.push_back(single_trial_ratios(fn(X), A, powers));
                            } catch (const std::exception&) {
                                out.ok = false;
                            }
                        }
                        IsrTable sum = IsrTable::zeros(cfg_.M, cfg_.K);
                        std::vector<double> baseline_sum(baselines_.size(), 0.0);
                        double tot = 0.0;
                        double tot_sq = 0.0;
                        for (const auto& o : outcomes) {
                            for (std::size_t b = 0; b < o.baseline.size(); ++b) baseline_sum[b] += o.baseline[b].total_normalized();
                            if (!o.ok) {
                                ++row.excluded;
                                continue;
                            }
                            ++row.trials;
                            for (int m = 0; m < cfg_.M; ++m) sum.isr[static_cast<std::size_t>(m)] += o.ratios.isr[static_cast<std::size_t>(m)];
                            const double t = o.ratios.total_normalized();
                            tot += t;
                            tot_sq += t * t;
                        }
                        if (row.trials > 0) {
                            const double cnt = static_cast<double>(row.trials);
                            for (auto& m : sum.isr) m /= cnt;
                            row.empirical = sum;
                            row.empirical_total = sum.total_normalized();
                            const double mean = tot / cnt;
                            row.empirical_se = row.trials > 1 ? std::sqrt(std::max(0.0, (tot_sq - cnt * mean * mean) / (cnt - 1.0)) / cnt)
                                                              : std::numeric_limits<double>::quiet_NaN();
                        }
                        for (double s : baseline_sum) row.baseline_totals.push_back(s / n);
                        row.status = static_cast<double>(row.excluded) > cfg_.excluded_budget * n ? "failed" : "ok";
                        std::ostringstream msg;
                        msg << "  " << to_string(family) << ": empirical " << fmt(to_db(row.empirical_total)) << " dB over "
                            << row.trials << " trials (" << row.excluded << " excluded)";
                        log(msg.str());
                    }
                    row.wall_seconds = predict_seconds + std::chrono::duration<double>(std::chrono::steady_clock::now() - t1).count();
                    rows.push_back(std::move(row));
                }
            }
        }
    }
    return rows;
}

void write_csv(std::ostream& out, const ExperimentConfig& cfg, const std::vector<ResultRow>& rows) {
    out << "# qiva " << kVersion << "\n";
    out << "# experiment = " << cfg.id << "\n";
    out << cfg.to_config().dump("# config ");
    out << "# decision q_covariance_normalization = 1/T^2\n";
    out << "# decision zero_radius_attenuation = multiply by (1-c); real zeros get no phase noise\n";
    out << "# decision burn_in = L-1 samples of driving noise\n";
    out << "# decision prediction_expansion_point = diagonal asymptotic gains\n";
    out << "# decision random_streams = per trial, shared across grid points\n";
    if (!cfg.p.empty()) {
        out << "# decision mixture_presumed_covariance = exact switched-process formula on erroneous FIR covariances\n";
        out << "# decision mixture_erroneous_fir = zeros mismodelled with mismodel.a/b/c/mu\n";
    }
    out << "experiment,T,mu,p,family,engine,predicted_db,bound_db,empirical_db,empirical_se_db,gap_db,trials,excluded,status";
    const int M = cfg.M;
    const int K = cfg.K;
    for (const char* kind : {"pred", "emp"}) {
        for (int m = 0; m < M; ++m)
            for (int i = 0; i < K; ++i)
                for (int j = 0; j < K; ++j)
                    if (i != j) out << ",isr_" << kind << "_m" << m << "_" << i << "_" << j << "_db";
    }
    out << "\n";
    for (const auto& r : rows) {
        const double pred_db = to_db(r.predicted_total);
        const double emp_db = r.status == "predict-only" ? std::numeric_limits<double>::quiet_NaN() : to_db(r.empirical_total);
        const double se_db = std::isnan(r.empirical_se) ? std::numeric_limits<double>::quiet_NaN()
                                                        : 10.0 / std::log(10.0) * r.empirical_se / r.empirical_total;
        out << r.experiment << "," << r.T << "," << fmt(r.mu) << "," << fmt(r.p) << "," << to_string(r.family) << ","
            << r.engine << "," << fmt(pred_db) << "," << fmt(to_db(r.bound_total)) << "," << fmt(emp_db) << "," << fmt(se_db)
            << "," << fmt(emp_db - pred_db) << "," << r.trials << "," << r.excluded << "," << r.status;
        for (int pass = 0; pass < 2; ++pass) {
            for (int m = 0; m < M; ++m)
                for (int i = 0; i < K; ++i)
                    for (int j = 0; j < K; ++j) {
                        if (i == j) continue;
                        double v = std::numeric_limits<double>::quiet_NaN();
                        if (pass == 0) v = to_db(r.predicted.isr[static_cast<std::size_t>(m)](i, j));
                        else if (r.empirical.M() > 0) v = to_db(r.empirical.isr[static_cast<std::size_t>(m)](i, j));
                        out << "," << fmt(v);
                    }
        }
        out << "\n";
    }
}

void write_timing_csv(std::ostream& out, const std::vector<ResultRow>& rows) {
    out << "experiment,T,mu,p,family,wall_seconds\n";
    for (const auto& r : rows) {
        out << r.experiment << "," << r.T << "," << fmt(r.mu) << "," << fmt(r.p) << "," << to_string(r.family) << ","
            << fmt(r.wall_seconds) << "\n";
    }
}

void write_plot_script(std::ostream& out, const ExperimentConfig& cfg, const std::string& csv_name) {
    // Column numbers follow write_csv: T=2, mu=3, p=4, predicted_db=7, empirical_db=9.
    int xcol = 0;
    std::string xlabel = "row";
    bool logx = false;
    if (cfg.mu.size() > 1 && cfg.T.size() == 1) {
        xcol = 3;
        xlabel = "mu";
    } else if (cfg.T.size() > 1) {
        xcol = 2;
        xlabel = "T";
        logx = true;
    } else if (cfg.p.size() > 1) {
        xcol = 4;
        xlabel = "p";
    }
    const std::string x = xcol == 0 ? "0" : std::to_string(xcol);
    out << "# gnuplot script for " << csv_name << "\n";
    out << "set datafile separator ','\n";
    out << "set datafile commentschars '#'\n";
    out << "set key autotitle columnhead\n";
    out << "set xlabel '" << xlabel << "'\n";
    out << "set ylabel 'total normalized ISR [dB]'\n";
    if (logx) out << "set logscale x\n";
    out << "set terminal pngcairo size 900,600\n";
    out << "set output '" << csv_name.substr(0, csv_name.rfind('.')) << ".png'\n";
    out << "plot '" << csv_name << "' using " << x << ":7 with linespoints title 'predicted', \\\n";
    out << "     '" << csv_name << "' using " << x << ":9 with points title 'empirical', \\\n";
    out << "     '" << csv_name << "' using " << x << ":8 with lines dashtype 2 title 'iCRLB'\n";
}

}  // namespace qiva
