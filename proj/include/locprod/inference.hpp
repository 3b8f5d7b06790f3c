#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "locprod/decomposition.hpp"
#include "locprod/estimator.hpp"
#include "locprod/rng.hpp"
#include "locprod/stats.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace locprod {

// ---------------------------------------------------------------------------
// Tracked functionals: registered before a bootstrap run so replicates store
// scalars instead of whole coefficient surfaces.
// ---------------------------------------------------------------------------

struct Functional {
    enum class Kind {
        Coefficient,      // named parameter at a target location
        CoefficientMean,  // mean of a named parameter over targets
        ReturnsToScale,   // RTS at a target location
        Theta,            // the scalar theta
        DecompTech,       // decomposition components of `at` vs `benchmark`
        DecompTfp,
        DecompProd,
    };
    Kind kind = Kind::Coefficient;
    std::string param;        // e.g. "beta_k", "beta_m", "rho0", "rho1", "rho2_1", "b_m"
    std::vector<double> at;   // target coordinates (Coefficient/RTS/Decomp*)
    std::vector<std::vector<double>> over;  // explicit targets for means; empty = unique locations
    std::vector<double> benchmark;          // Decomp*: benchmark coordinates
    std::string name;                       // serialization id

    static Functional coefficient(std::string param, std::vector<double> at, std::string name = {});
    static Functional coefficient_mean(std::string param, std::vector<std::vector<double>> over = {},
                                       std::string name = {});
    static Functional rts(std::vector<double> at, std::string name = {});
};

inline Functional Functional::coefficient(std::string param, std::vector<double> at,
                                          std::string name) {
    Functional f;
    f.kind = Kind::Coefficient;
    f.param = std::move(param);
    f.at = std::move(at);
    f.name = name.empty() ? f.param + "@" : std::move(name);
    return f;
}

inline Functional Functional::coefficient_mean(std::string param,
                                               std::vector<std::vector<double>> over,
                                               std::string name) {
    Functional f;
    f.kind = Kind::CoefficientMean;
    f.param = std::move(param);
    f.over = std::move(over);
    f.name = name.empty() ? "mean_" + f.param : std::move(name);
    return f;
}

inline Functional Functional::rts(std::vector<double> at, std::string name) {
    Functional f;
    f.kind = Kind::ReturnsToScale;
    f.at = std::move(at);
    f.name = name.empty() ? "rts@" : std::move(name);
    return f;
}

namespace detail {

inline double coefficient_at(const EstimationResult& fit, const std::string& param, int target) {
    if (!target_usable(fit, target)) return std::numeric_limits<double>::quiet_NaN();
    if (param == "beta_m") {
        if (fit.tech.form == TechnologyForm::CobbDouglas)
            return fit.first.beta_m[static_cast<std::size_t>(target)];
        return fit.first.share_coef(target, 0);
    }
    if (param == "b_m") {
        if (fit.tech.form == TechnologyForm::CobbDouglas)
            return fit.first.b_m[static_cast<std::size_t>(target)];
        return std::numeric_limits<double>::quiet_NaN();
    }
    if (fit.tech.form == TechnologyForm::Translog) {
        if (param == "beta_mm") return fit.first.share_coef(target, 1);
        if (param == "beta_km") return fit.first.share_coef(target, 2);
        if (param == "beta_lm" && fit.has_labor) return fit.first.share_coef(target, 3);
    }
    const auto names = fit.second.layout.names();
    for (std::size_t j = 0; j < names.size(); ++j)
        if (names[j] == param) return fit.second.coef(target, static_cast<Eigen::Index>(j));
    throw ConfigError("unknown coefficient name: '" + param + "'");
}

inline int require_target(const EstimationResult& fit, const std::vector<double>& s) {
    const int t = fit.target_index(s);
    if (t < 0) throw ConfigError("functional target is not among the fit's evaluation locations");
    return t;
}

}  // namespace detail

inline double eval_functional(const PanelDataset& panel, const EstimationResult& fit,
                              const Functional& f) {
    using Kind = Functional::Kind;
    switch (f.kind) {
        case Kind::Theta:
            return fit.first.theta;
        case Kind::Coefficient:
            return detail::coefficient_at(fit, f.param, detail::require_target(fit, f.at));
        case Kind::CoefficientMean: {
            double acc = 0.0;
            long cnt = 0;
            if (f.over.empty()) {
                for (int t = 0; t < fit.n_unique; ++t) {
                    acc += detail::coefficient_at(fit, f.param, t);
                    ++cnt;
                }
            } else {
                for (const auto& s : f.over) {
                    acc += detail::coefficient_at(fit, f.param, detail::require_target(fit, s));
                    ++cnt;
                }
            }
            return acc / static_cast<double>(cnt);
        }
        case Kind::ReturnsToScale: {
            const int t = detail::require_target(fit, f.at);
            double k_at = 0.0, l_at = 0.0, m_at = 0.0;
            if (fit.tech.form == TechnologyForm::Translog) {
                // evaluate elasticities at the location's mean log inputs
                long n = 0;
                for (const auto& o : panel.observations)
                    if (o.location_index == t) {
                        k_at += o.k;
                        l_at += o.l;
                        m_at += o.m;
                        ++n;
                    }
                if (n == 0)
                    for (const auto& o : panel.observations) {
                        k_at += o.k;
                        l_at += o.l;
                        m_at += o.m;
                        ++n;
                    }
                k_at /= static_cast<double>(n);
                l_at /= static_cast<double>(n);
                m_at /= static_cast<double>(n);
            }
            return returns_to_scale(fit, t, k_at, l_at, m_at);
        }
        case Kind::DecompTech:
        case Kind::DecompTfp:
        case Kind::DecompProd: {
            const int s = detail::require_target(fit, f.at);
            const int kappa = f.benchmark.empty() ? select_benchmark(panel, fit)
                                                  : detail::require_target(fit, f.benchmark);
            const auto rec = decompose(panel, fit, s, kappa);
            if (f.kind == Kind::DecompTech) return rec.d_tech;
            if (f.kind == Kind::DecompTfp) return rec.d_tfp;
            return rec.d_prod;
        }
    }
    throw ConfigError("unhandled functional kind");
}

// ---------------------------------------------------------------------------
// Wild residual block bootstrap (the block is the firm).
// ---------------------------------------------------------------------------

struct BootstrapDraws {
    int B = 0;                  // requested replicates
    int excluded = 0;           // dropped due to solver failures
    std::uint64_t seed = 0;
    std::vector<std::string> functional_names;
    std::vector<double> point;  // original-fit functional values
    Eigen::MatrixXd draws;      // successful replicates x functionals
    bool stored_surfaces = false;
    std::vector<Eigen::MatrixXd> surfaces;  // optional second-step coefficient surfaces
};

struct BootstrapOptions {
    bool store_surfaces = false;
    EstimationOptions estimation;
};

// One wild replicate's regenerated series. The block is the firm: every
// observation of firm i shares the same two-point weight xi[i] in both the
// share equation and the proxied production function.
struct WildReplicate {
    std::vector<double> xi;     // per firm
    std::vector<double> v;      // per observation
    std::vector<double> ystar;  // per lagged row
};

namespace detail {

// residual series recentered to zero mean (NaNs excluded)
inline std::vector<double> recenter(const std::vector<double>& x) {
    double mean = 0.0;
    long n = 0;
    for (double e : x)
        if (std::isfinite(e)) {
            mean += e;
            ++n;
        }
    if (n == 0) throw NumericError("recenter: no finite residuals");
    mean /= static_cast<double>(n);
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - mean;
    return out;
}

}  // namespace detail

// Builds replicate b's data from fitted values and recentered residuals:
// v^b = v_fit - xi * eta_c per observation, y*^b = ystar_fit + xi * comp_c
// per lagged row.
inline WildReplicate make_wild_replicate(const PanelDataset& panel,
                                         const std::vector<LaggedRow>& rows,
                                         const std::vector<double>& v_fit,
                                         const std::vector<double>& eta_c,
                                         const std::vector<double>& ystar_fit,
                                         const std::vector<double>& comp_c, std::uint64_t seed,
                                         std::uint64_t replicate) {
    RngStream rng = RngStream::substream(seed, replicate);
    WildReplicate rep;
    rep.xi.resize(static_cast<std::size_t>(panel.n_firms));
    for (auto& x : rep.xi) x = mammen_weight(rng);
    rep.v.resize(panel.n_observations());
    for (std::size_t i = 0; i < panel.n_observations(); ++i)
        rep.v[i] = v_fit[i] -
                   rep.xi[static_cast<std::size_t>(panel.observations[i].firm_index)] * eta_c[i];
    rep.ystar.resize(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto& cur = panel.observations[static_cast<std::size_t>(rows[r].current)];
        rep.ystar[r] = ystar_fit[r] + rep.xi[static_cast<std::size_t>(cur.firm_index)] * comp_c[r];
    }
    return rep;
}

inline BootstrapDraws wild_bootstrap(const PanelDataset& panel, const EstimationResult& fit, int B,
                                     std::uint64_t seed, int h1, int h2,
                                     const std::vector<Functional>& functionals,
                                     const BootstrapOptions& opts = {}) {
    if (B < 1) throw std::invalid_argument("wild_bootstrap: B must be positive");
    const auto n_obs = panel.n_observations();
    const auto& rows = fit.first.rows;

    // recentered residual series (global recentering)
    const std::vector<double> eta_c = detail::recenter(fit.first.eta_hat);
    const std::vector<double> comp_c = detail::recenter(fit.second.residuals);

    // fitted values the disturbances are rebuilt around
    std::vector<double> v_fit(n_obs), ystar_fit(rows.size());
    for (std::size_t i = 0; i < n_obs; ++i)
        v_fit[i] = panel.observations[i].v + fit.first.eta_hat[i];
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const int cur = rows[r].current;
        ystar_fit[r] = fit.first.y_star[static_cast<std::size_t>(cur)] - fit.second.residuals[r];
    }

    EstimationOptions est = opts.estimation;
    est.extra_targets.clear();
    for (std::size_t t = static_cast<std::size_t>(fit.n_unique); t < fit.targets.size(); ++t)
        est.extra_targets.push_back(fit.targets[t]);
    WeightCache cache1, cache2;
    if (!est.weights1) {
        cache1 = build_weight_cache(panel, fit.targets, h1);
        est.weights1 = &cache1;
    }
    if (!est.weights2) {
        cache2 = build_weight_cache(panel, fit.targets, h2);
        est.weights2 = &cache2;
    }

    BootstrapDraws out;
    out.B = B;
    out.seed = seed;
    out.stored_surfaces = opts.store_surfaces;
    for (const auto& f : functionals) {
        out.functional_names.push_back(f.name);
        out.point.push_back(eval_functional(panel, fit, f));
    }

    const int F = static_cast<int>(functionals.size());
    Eigen::MatrixXd all(B, std::max(F, 1));
    std::vector<char> ok(static_cast<std::size_t>(B), 0);
    std::vector<Eigen::MatrixXd> surf(opts.store_surfaces ? static_cast<std::size_t>(B) : 0);

#pragma omp parallel for schedule(dynamic)
    for (int b = 0; b < B; ++b) {
        const WildReplicate wr = make_wild_replicate(panel, rows, v_fit, eta_c, ystar_fit, comp_c,
                                                     seed, static_cast<std::uint64_t>(b));
        try {
            EstimationOptions eopt = est;
            eopt.v_override = &wr.v;
            FirstStepResult first_b = step1(panel, h1, fit.tech, eopt);
            eopt.row_response_override = &wr.ystar;
            SecondStepResult second_b = step2(panel, first_b, h2, fit.tech, eopt);

            EstimationResult fit_b;
            fit_b.tech = fit.tech;
            fit_b.has_labor = fit.has_labor;
            fit_b.h1 = h1;
            fit_b.h2 = h2;
            fit_b.targets = fit.targets;
            fit_b.n_unique = fit.n_unique;
            fit_b.first = std::move(first_b);
            fit_b.second = std::move(second_b);
            fit_b.productivity = recover_productivity(panel, fit_b.first, fit_b.second);

            bool finite = true;
            for (int j = 0; j < F; ++j) {
                const double val = eval_functional(panel, fit_b, functionals[static_cast<std::size_t>(j)]);
                all(b, j) = val;
                finite = finite && std::isfinite(val);
            }
            if (opts.store_surfaces) surf[static_cast<std::size_t>(b)] = fit_b.second.coef;
            ok[static_cast<std::size_t>(b)] = finite ? 1 : 0;
        } catch (const std::exception&) {
            ok[static_cast<std::size_t>(b)] = 0;
        }
    }

    int kept = 0;
    for (int b = 0; b < B; ++b) kept += ok[static_cast<std::size_t>(b)];
    out.excluded = B - kept;
    out.draws.resize(kept, F);
    int at = 0;
    for (int b = 0; b < B; ++b) {
        if (!ok[static_cast<std::size_t>(b)]) continue;
        out.draws.row(at) = all.row(b).head(F);
        if (opts.store_surfaces) out.surfaces.push_back(std::move(surf[static_cast<std::size_t>(b)]));
        ++at;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Bootstrap percentile confidence intervals with optional bias correction.
// ---------------------------------------------------------------------------

enum class Sidedness { TwoSided, LowerBound, UpperBound };

struct ConfidenceInterval {
    double level = 0.95;
    double lower = 0.0;
    double upper = 0.0;
    double z0 = 0.0;
    Sidedness sidedness = Sidedness::TwoSided;
    bool bias_corrected = true;
    bool degenerate = false;
};

inline ConfidenceInterval percentile_ci(const std::vector<double>& draws, double point_estimate,
                                        double alpha, bool bias_correct = true,
                                        Sidedness side = Sidedness::TwoSided) {
    if (draws.size() < 50)
        throw std::invalid_argument("percentile_ci: needs at least 50 successful replicates");
    if (!(alpha > 0.0) || alpha > 1.0) throw std::invalid_argument("percentile_ci: bad alpha");

    ConfidenceInterval ci;
    ci.level = 1.0 - alpha;
    ci.sidedness = side;
    ci.bias_corrected = bias_correct;

    std::vector<double> sorted = draws;
    std::sort(sorted.begin(), sorted.end());
    if (sorted.front() == sorted.back()) {
        ci.lower = ci.upper = sorted.front();
        ci.degenerate = true;
        return ci;
    }

    const auto B = static_cast<double>(draws.size());
    if (bias_correct) {
        long below = 0;
        for (double d : draws)
            if (d < point_estimate) ++below;
        double prop = static_cast<double>(below) / B;
        prop = std::min(std::max(prop, 1.0 / (2.0 * B)), 1.0 - 1.0 / (2.0 * B));
        ci.z0 = normal_quantile(prop);
    }

    auto adjusted = [&](double p) {
        const double q = normal_cdf(2.0 * ci.z0 + normal_quantile(p));
        return quantile_type7_sorted(sorted, q);
    };
    const double inf = std::numeric_limits<double>::infinity();
    switch (side) {
        case Sidedness::TwoSided:
            ci.lower = adjusted(alpha / 2.0);
            ci.upper = adjusted(1.0 - alpha / 2.0);
            break;
        case Sidedness::LowerBound:
            ci.lower = adjusted(alpha);
            ci.upper = inf;
            break;
        case Sidedness::UpperBound:
            ci.lower = -inf;
            ci.upper = adjusted(1.0 - alpha);
            break;
    }
    return ci;
}

// ---------------------------------------------------------------------------
// Bootstrap specification test of location invariance.
// ---------------------------------------------------------------------------

struct InvarianceTestResult {
    double t_stat = 0.0;
    std::vector<double> t_boot;  // successful replicate statistics
    double p_value = 1.0;
    int B = 0;
    int excluded = 0;
    std::uint64_t seed = 0;
    double rss_restricted = 0.0;
    double rss_unrestricted = 0.0;
};

inline InvarianceTestResult invariance_test(const PanelDataset& panel, int h1, int h2, int B,
                                            std::uint64_t seed, const TechnologySpec& tech,
                                            const EstimationOptions& user_opts = {}) {
    if (B < 1) throw std::invalid_argument("invariance_test: B must be positive");

    EstimationOptions est = user_opts;
    WeightCache cache1, cache2;
    const auto targets = make_targets(panel, est.extra_targets);
    if (!est.weights1) {
        cache1 = build_weight_cache(panel, targets, h1);
        est.weights1 = &cache1;
    }
    if (!est.weights2) {
        cache2 = build_weight_cache(panel, targets, h2);
        est.weights2 = &cache2;
    }

    const EstimationResult unres = full_fit(panel, h1, h2, tech, est);
    const InvariantResult res = estimate_invariant(panel, tech, est);
    const auto& rows = res.rows;

    // the statistic uses rows where both models produced residuals
    auto rss_pair = [&](const std::vector<double>& r0, const std::vector<double>& r1) {
        double rss0 = 0.0, rss1 = 0.0;
        for (std::size_t i = 0; i < r0.size(); ++i)
            if (std::isfinite(r0[i]) && std::isfinite(r1[i])) {
                rss0 += r0[i] * r0[i];
                rss1 += r1[i] * r1[i];
            }
        return std::make_pair(rss0, rss1);
    };
    const auto [rss0, rss1] = rss_pair(res.residuals, unres.second.residuals);
    if (!(rss1 > 0.0)) throw NumericError("invariance_test: zero unrestricted RSS");

    InvarianceTestResult out;
    out.seed = seed;
    out.B = B;
    out.rss_restricted = rss0;
    out.rss_unrestricted = rss1;
    out.t_stat = (rss0 - rss1) / rss1;

    // recentered restricted residuals and restricted fitted values: the null
    // world is regenerated from the location-invariant model
    const auto n_obs = panel.n_observations();
    const std::vector<double> eta_c = detail::recenter(res.eta_hat);
    const std::vector<double> comp_c = detail::recenter(res.residuals);

    std::vector<double> v_fit(n_obs), ystar_fit(rows.size());
    for (std::size_t i = 0; i < n_obs; ++i) v_fit[i] = panel.observations[i].v + res.eta_hat[i];
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const int cur = rows[r].current;
        ystar_fit[r] = res.y_star[static_cast<std::size_t>(cur)] - res.residuals[r];
    }

    std::vector<double> t_raw(static_cast<std::size_t>(B),
                              std::numeric_limits<double>::quiet_NaN());

#pragma omp parallel for schedule(dynamic)
    for (int b = 0; b < B; ++b) {
        const WildReplicate wr = make_wild_replicate(panel, rows, v_fit, eta_c, ystar_fit, comp_c,
                                                     seed, static_cast<std::uint64_t>(b));
        try {
            EstimationOptions eopt = est;
            eopt.v_override = &wr.v;
            eopt.row_response_override = &wr.ystar;
            const InvariantResult res_b = estimate_invariant(panel, tech, eopt);
            FirstStepResult first_b = step1(panel, h1, tech, eopt);
            SecondStepResult second_b = step2(panel, first_b, h2, tech, eopt);
            const auto [b0, b1] = rss_pair(res_b.residuals, second_b.residuals);
            if (b1 > 0.0) t_raw[static_cast<std::size_t>(b)] = (b0 - b1) / b1;
        } catch (const std::exception&) {
            // excluded below
        }
    }

    long ge = 0;
    for (double t : t_raw) {
        if (!std::isfinite(t)) {
            ++out.excluded;
            continue;
        }
        out.t_boot.push_back(t);
        if (t >= out.t_stat) ++ge;
    }
    // the original statistic counts as one replicate
    out.p_value = static_cast<double>(ge + 1) / static_cast<double>(out.t_boot.size() + 1);
    return out;
}

}
