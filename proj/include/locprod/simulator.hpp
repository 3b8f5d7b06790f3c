#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "locprod/inference.hpp"
#include "locprod/panel.hpp"
#include "locprod/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace locprod {

// Synthetic one-dimensional location economy: 50 grid locations on
// [0.50, 0.99], two inputs (capital quasi-fixed, materials flexible),
// exogenous AR(1) productivity with location-specific level.
struct SimConfig {
    int n = 100;
    int T = 10;
    std::uint64_t seed = 1;
    std::uint64_t stream = 0;  // replicate index within a study
    double sigma_eta = 0.07;
    double sigma_zeta = 0.04;
    bool location_invariant = false;  // constant-coefficient variant
    double invariant_at = grid_point(25);  // = 0.75

    static constexpr int kGridSize = 50;
    static double grid_point(int j) { return static_cast<double>(50 + j) / 100.0; }
    static std::vector<double> grid() {
        std::vector<double> g(kGridSize);
        for (int j = 0; j < kGridSize; ++j) g[j] = grid_point(j);
        return g;
    }

    double beta_k(double s) const {
        return 0.2 + 0.1 * (location_invariant ? invariant_at : s);
    }
    double beta_m(double s) const {
        const double x = location_invariant ? invariant_at : s;
        return 0.4 + 0.1 * std::exp(x * x);
    }
    double rho0(double s) const {
        const double x = location_invariant ? invariant_at : s;
        return 0.5 + x - x * x;
    }
    double rho1(double) const { return 0.7; }
    double theta() const { return std::exp(0.5 * sigma_eta * sigma_eta); }

    // cross-validation shortcut h = 0.3 (nT)^{4/5}, both steps
    int h_shortcut() const {
        return static_cast<int>(std::llround(0.3 * std::pow(static_cast<double>(n) * T, 0.8)));
    }
};

struct TruthRecord {
    std::vector<double> s_firm;  // per firm
    std::vector<double> omega;   // per observation
    std::vector<double> eta;
    std::vector<double> zeta;    // 0 in the first period
};

struct SimulatedPanel {
    PanelDataset panel;
    TruthRecord truth;
};

inline SimulatedPanel generate_panel(const SimConfig& cfg) {
    if (cfg.n < 1 || cfg.T < 2) throw ConfigError("generate_panel: need n >= 1 and T >= 2");
    RngStream rng = RngStream::substream(cfg.seed, cfg.stream);
    static const double kDeltas[5] = {0.05, 0.075, 0.10, 0.125, 0.15};
    const double log_theta = std::log(cfg.theta());

    PanelDatasetBuilder builder(1, /*has_labor=*/false, /*control_dim=*/0);
    for (int t = 1; t <= cfg.T; ++t) builder.set_price_ratio(t, log_theta);

    SimulatedPanel out;
    out.truth.s_firm.resize(static_cast<std::size_t>(cfg.n));

    std::ostringstream id;
    for (int i = 0; i < cfg.n; ++i) {
        const double s = SimConfig::grid_point(static_cast<int>(rng.uniform_index(SimConfig::kGridSize)));
        const double delta = kDeltas[rng.uniform_index(5)];
        double K = rng.uniform(10.0, 200.0);
        out.truth.s_firm[static_cast<std::size_t>(i)] = s;

        const double bk = cfg.beta_k(s), bm = cfg.beta_m(s);
        const double r0 = cfg.rho0(s), r1 = cfg.rho1(s);
        double omega = r0;  // initial productivity level

        id.str("");
        id << "f" << i;
        const std::string firm = id.str();
        for (int t = 1; t <= cfg.T; ++t) {
            double zeta = 0.0;
            if (t > 1) {
                zeta = rng.normal(0.0, cfg.sigma_zeta);
                const double invest = std::pow(K, 0.8) * std::exp(0.1 * omega);
                K = invest + (1.0 - delta) * K;
                omega = r0 + r1 * omega + zeta;
            }
            const double eta = rng.normal(0.0, cfg.sigma_eta);
            const double k = std::log(K);
            // conditional material demand under P^M = theta, P^Y = 1
            const double m = (std::log(bm) + bk * k + omega) / (1.0 - bm);
            const double y = bk * k + bm * m + omega + eta;
            builder.add(firm, t, y, k, 0.0, m, {s});
            out.truth.omega.push_back(omega);
            out.truth.eta.push_back(eta);
            out.truth.zeta.push_back(zeta);
        }
    }
    out.panel = builder.finish();
    return out;
}

// ---------------------------------------------------------------------------
// Per-location parametric comparator: splits the sample by location.
// ---------------------------------------------------------------------------

struct SampleSplitResult {
    ParamLayout layout;
    Eigen::MatrixXd coef;  // n_unique x layout.size()
    std::vector<double> beta_m;
    std::vector<double> theta;
    std::vector<char> flagged;
};

inline SampleSplitResult sample_splitting_estimator(const PanelDataset& panel,
                                                    const TechnologySpec& tech,
                                                    const EstimationOptions& opts = {}) {
    SampleSplitResult out;
    out.layout = ParamLayout{tech.form, panel.has_labor, tech.control_dim};
    const int L = static_cast<int>(panel.n_locations());
    out.coef.setConstant(L, out.layout.size(), std::numeric_limits<double>::quiet_NaN());
    out.beta_m.assign(static_cast<std::size_t>(L), std::numeric_limits<double>::quiet_NaN());
    out.theta.assign(static_cast<std::size_t>(L), std::numeric_limits<double>::quiet_NaN());
    out.flagged.assign(static_cast<std::size_t>(L), 0);

    for (int loc = 0; loc < L; ++loc) {
        PanelDatasetBuilder b(panel.coord_dim, panel.has_labor, panel.control_dim);
        for (const auto& [period, pr] : panel.price_series) b.set_price_ratio(period, pr);
        for (int oi : panel.location_observations[static_cast<std::size_t>(loc)]) {
            const auto& o = panel.observations[static_cast<std::size_t>(oi)];
            b.add(o.firm_id, o.period, o.y, o.k, o.l, o.m, panel.location_of(o), o.controls, o.v);
        }
        try {
            const PanelDataset sub = b.finish();
            const InvariantResult res = estimate_invariant(sub, tech, opts);
            out.coef.row(loc) = res.coef.transpose();
            out.beta_m[static_cast<std::size_t>(loc)] = res.beta_m;
            out.theta[static_cast<std::size_t>(loc)] = res.theta;
        } catch (const std::exception&) {
            out.flagged[static_cast<std::size_t>(loc)] = 1;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Monte Carlo study of the estimators against the known truth.
// ---------------------------------------------------------------------------

struct ParamMetrics {
    std::string param;
    double bias = 0.0;
    double rmse = 0.0;
    double mae = 0.0;
};

struct MonteCarloReport {
    std::string estimator;  // "kernel" | "sample-splitting"
    int n = 0, T = 0, Q = 0;
    std::uint64_t seed = 0;
    int h = 0;  // kernel neighbor count (0 for sample-splitting)
    std::vector<ParamMetrics> metrics;  // beta_k, rho0, rho1
    int failures = 0;
    double wall_seconds = 0.0;
};

enum class SimEstimator { Kernel, SampleSplitting };

inline MonteCarloReport run_monte_carlo(const SimConfig& cfg, int Q, SimEstimator which,
                                        int h_override = 0) {
    if (Q < 1) throw std::invalid_argument("run_monte_carlo: Q must be positive");
    const int h = h_override > 0 ? h_override : cfg.h_shortcut();

    MonteCarloReport rep;
    rep.estimator = which == SimEstimator::Kernel ? "kernel" : "sample-splitting";
    rep.n = cfg.n;
    rep.T = cfg.T;
    rep.Q = Q;
    rep.seed = cfg.seed;
    rep.h = which == SimEstimator::Kernel ? h : 0;

    constexpr int kParams = 3;  // beta_k, rho0, rho1
    Eigen::MatrixXd bias_q(Q, kParams), rmse_q(Q, kParams), mae_q(Q, kParams);
    std::vector<char> ok(static_cast<std::size_t>(Q), 0);

#pragma omp parallel for schedule(dynamic)
    for (int q = 0; q < Q; ++q) {
        SimConfig c = cfg;
        c.stream = static_cast<std::uint64_t>(q);
        try {
            const SimulatedPanel sim = generate_panel(c);
            const auto& panel = sim.panel;
            const TechnologySpec tech = TechnologySpec::for_panel(panel);
            const ParamLayout lay{tech.form, panel.has_labor, tech.control_dim};

            Eigen::MatrixXd est(panel.n_locations(), 3);  // beta_k, rho0, rho1 per location
            std::vector<char> usable(panel.n_locations(), 0);
            if (which == SimEstimator::Kernel) {
                const EstimationResult fit = full_fit(panel, h, h, tech);
                for (std::size_t t = 0; t < panel.n_locations(); ++t) {
                    if (fit.second.flagged[t]) continue;
                    est(static_cast<Eigen::Index>(t), 0) = fit.second.coef(t, lay.beta_k());
                    est(static_cast<Eigen::Index>(t), 1) = fit.second.coef(t, lay.rho0());
                    est(static_cast<Eigen::Index>(t), 2) = fit.second.coef(t, lay.rho1());
                    usable[t] = 1;
                }
            } else {
                const SampleSplitResult split = sample_splitting_estimator(panel, tech);
                for (std::size_t t = 0; t < panel.n_locations(); ++t) {
                    if (split.flagged[t]) continue;
                    est(static_cast<Eigen::Index>(t), 0) = split.coef(t, lay.beta_k());
                    est(static_cast<Eigen::Index>(t), 1) = split.coef(t, lay.rho0());
                    est(static_cast<Eigen::Index>(t), 2) = split.coef(t, lay.rho1());
                    usable[t] = 1;
                }
            }

            // firm-level error metrics at each firm's own location
            double sb[kParams] = {0, 0, 0}, ss[kParams] = {0, 0, 0}, sa[kParams] = {0, 0, 0};
            long cnt = 0;
            for (int i = 0; i < c.n; ++i) {
                const double s = sim.truth.s_firm[static_cast<std::size_t>(i)];
                const auto& first_obs =
                    panel.observations[static_cast<std::size_t>(i) * static_cast<std::size_t>(c.T)];
                const int loc = first_obs.location_index;
                if (!usable[static_cast<std::size_t>(loc)]) continue;
                const double truth[kParams] = {c.beta_k(s), c.rho0(s), c.rho1(s)};
                for (int p = 0; p < kParams; ++p) {
                    const double e = est(loc, p) - truth[p];
                    sb[p] += e;
                    ss[p] += e * e;
                    sa[p] += std::abs(e);
                }
                ++cnt;
            }
            if (cnt == 0) throw NumericError("no usable locations");
            for (int p = 0; p < kParams; ++p) {
                bias_q(q, p) = sb[p] / static_cast<double>(cnt);
                rmse_q(q, p) = std::sqrt(ss[p] / static_cast<double>(cnt));
                mae_q(q, p) = sa[p] / static_cast<double>(cnt);
            }
            ok[static_cast<std::size_t>(q)] = 1;
        } catch (const std::exception&) {
            ok[static_cast<std::size_t>(q)] = 0;
        }
    }

    long kept = 0;
    double acc[3][kParams] = {};
    for (int q = 0; q < Q; ++q) {
        if (!ok[static_cast<std::size_t>(q)]) continue;
        ++kept;
        for (int p = 0; p < kParams; ++p) {
            acc[0][p] += bias_q(q, p);
            acc[1][p] += rmse_q(q, p);
            acc[2][p] += mae_q(q, p);
        }
    }
    rep.failures = Q - static_cast<int>(kept);
    if (rep.failures > 0.02 * Q)
        throw NumericError("run_monte_carlo: more than 2% of panels failed to estimate");

    const char* names[kParams] = {"beta_k", "rho0", "rho1"};
    for (int p = 0; p < kParams; ++p) {
        ParamMetrics m;
        m.param = names[p];
        m.bias = acc[0][p] / static_cast<double>(kept);
        m.rmse = acc[1][p] / static_cast<double>(kept);
        m.mae = acc[2][p] / static_cast<double>(kept);
        rep.metrics.push_back(m);
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Coverage of the bootstrap confidence intervals against the known truth.
// ---------------------------------------------------------------------------

struct CoverageReport {
    int n = 0, T = 0, Q = 0, B = 0;
    double alpha = 0.05;
    std::uint64_t seed = 0;
    std::vector<std::string> functional_names;
    std::vector<double> truth;
    std::vector<double> coverage;
    int failed_sims = 0;
    std::vector<double> null_offsets;  // power-curve grid (offsets from truth)
    Eigen::MatrixXd rejection;         // offsets x functionals
    double wall_seconds = 0.0;
};

inline CoverageReport coverage_study(const SimConfig& cfg, int Q, int B, double alpha) {
    if (Q < 1 || B < 50) throw std::invalid_argument("coverage_study: need Q >= 1, B >= 50");

    const auto grid = SimConfig::grid();
    std::vector<std::vector<double>> grid_targets;
    for (double s : grid) grid_targets.push_back({s});

    std::vector<Functional> funs;
    funs.push_back(Functional::coefficient_mean("beta_k", grid_targets, "mean_beta_k"));
    for (int j : {15, 25, 35}) {
        std::ostringstream nm;
        nm << "beta_k@" << SimConfig::grid_point(j);
        funs.push_back(Functional::coefficient("beta_k", {SimConfig::grid_point(j)}, nm.str()));
    }

    CoverageReport rep;
    rep.n = cfg.n;
    rep.T = cfg.T;
    rep.Q = Q;
    rep.B = B;
    rep.alpha = alpha;
    rep.seed = cfg.seed;
    double tk = 0.0;
    for (double s : grid) tk += cfg.beta_k(s);
    rep.truth = {tk / grid.size(), cfg.beta_k(SimConfig::grid_point(15)),
                 cfg.beta_k(SimConfig::grid_point(25)), cfg.beta_k(SimConfig::grid_point(35))};
    for (const auto& f : funs) rep.functional_names.push_back(f.name);
    for (double off = -0.10; off <= 0.1001; off += 0.01) rep.null_offsets.push_back(off);

    const int F = static_cast<int>(funs.size());
    const int O = static_cast<int>(rep.null_offsets.size());
    Eigen::MatrixXi covered = Eigen::MatrixXi::Zero(Q, F);
    std::vector<Eigen::MatrixXi> rejected(static_cast<std::size_t>(Q),
                                          Eigen::MatrixXi::Zero(O, F));
    std::vector<char> ok(static_cast<std::size_t>(Q), 0);
    const int h = cfg.h_shortcut();

#pragma omp parallel for schedule(dynamic)
    for (int q = 0; q < Q; ++q) {
        SimConfig c = cfg;
        c.stream = static_cast<std::uint64_t>(q);
        try {
            const SimulatedPanel sim = generate_panel(c);
            EstimationOptions opts;
            opts.extra_targets = grid_targets;
            const TechnologySpec tech = TechnologySpec::for_panel(sim.panel);
            const EstimationResult fit = full_fit(sim.panel, h, h, tech, opts);

            BootstrapOptions bopt;
            bopt.estimation = opts;
            const std::uint64_t bseed = derive_stream_seed(cfg.seed, 0x7000000ull + q);
            const BootstrapDraws draws =
                wild_bootstrap(sim.panel, fit, B, bseed, h, h, funs, bopt);
            if (draws.draws.rows() < 50) throw NumericError("too many excluded replicates");

            for (int j = 0; j < F; ++j) {
                std::vector<double> dj(draws.draws.rows());
                for (Eigen::Index r = 0; r < draws.draws.rows(); ++r) dj[r] = draws.draws(r, j);
                const auto ci = percentile_ci(dj, draws.point[static_cast<std::size_t>(j)], alpha,
                                              /*bias_correct=*/true, Sidedness::TwoSided);
                const double t = rep.truth[static_cast<std::size_t>(j)];
                covered(q, j) = (t >= ci.lower && t <= ci.upper) ? 1 : 0;
                for (int o = 0; o < O; ++o) {
                    const double null_value = t + rep.null_offsets[static_cast<std::size_t>(o)];
                    rejected[static_cast<std::size_t>(q)](o, j) =
                        (null_value < ci.lower || null_value > ci.upper) ? 1 : 0;
                }
            }
            ok[static_cast<std::size_t>(q)] = 1;
        } catch (const std::exception&) {
            ok[static_cast<std::size_t>(q)] = 0;
        }
    }

    long kept = 0;
    rep.coverage.assign(static_cast<std::size_t>(F), 0.0);
    rep.rejection = Eigen::MatrixXd::Zero(O, F);
    for (int q = 0; q < Q; ++q) {
        if (!ok[static_cast<std::size_t>(q)]) continue;
        ++kept;
        for (int j = 0; j < F; ++j) {
            rep.coverage[static_cast<std::size_t>(j)] += covered(q, j);
            for (int o = 0; o < O; ++o)
                rep.rejection(o, j) += rejected[static_cast<std::size_t>(q)](o, j);
        }
    }
    rep.failed_sims = Q - static_cast<int>(kept);
    if (kept == 0) throw NumericError("coverage_study: every simulation failed");
    for (auto& c : rep.coverage) c /= static_cast<double>(kept);
    rep.rejection /= static_cast<double>(kept);
    return rep;
}

}
