#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <map>
#include <vector>

#include "locprod/estimator.hpp"
#include "locprod/stats.hpp"

namespace locprod {

struct LocationAggregate {
    int location = -1;  // unique-location index
    int period = kPooled;
    long n = 0;
    double y_bar = 0.0;  // mean fitted log output, net of the transitory shock
    double k_bar = 0.0;
    double l_bar = 0.0;
    double m_bar = 0.0;
    double omega_bar = 0.0;

    static constexpr int kPooled = std::numeric_limits<int>::min();
};

struct DecompositionRecord {
    int location = -1;
    int benchmark = -1;
    int period = LocationAggregate::kPooled;
    double d_prod = 0.0;
    double d_tech = 0.0;
    double d_tfp = 0.0;
    double d_y = 0.0;
    double d_k = 0.0;
    double d_l = 0.0;
    double d_m = 0.0;
};

namespace detail {

// full log technology at the location's coefficients (material part included)
inline double log_technology(const EstimationResult& fit, int target, double k, double l, double m) {
    const auto& lay = fit.second.layout;
    const Eigen::VectorXd th = fit.second.coef.row(target).transpose();
    double acc = tech_log_output(lay, th, k, l);
    if (fit.tech.form == TechnologyForm::CobbDouglas) {
        acc += fit.first.beta_m[static_cast<std::size_t>(target)] * m;
    } else {
        const auto c = fit.first.share_coef.row(target);  // [bM, bMM, bKM, (bLM)]
        acc += c[0] * m + 0.5 * c[1] * m * m + c[2] * k * m + (fit.has_labor ? c[3] * l * m : 0.0);
    }
    return acc;
}

inline bool target_usable(const EstimationResult& fit, int target) {
    return !fit.first.flagged[static_cast<std::size_t>(target)] &&
           !fit.second.flagged[static_cast<std::size_t>(target)];
}

}  // namespace detail

// Sum of output elasticities. Cobb-Douglas: beta_K + beta_L + beta_M;
// translog: elasticities evaluated at the evaluation inputs (k, l, m).
inline double returns_to_scale(const EstimationResult& fit, int target, double k_at = 0.0,
                               double l_at = 0.0, double m_at = 0.0) {
    if (!detail::target_usable(fit, target)) return std::numeric_limits<double>::quiet_NaN();
    const auto& lay = fit.second.layout;
    const Eigen::VectorXd th = fit.second.coef.row(target).transpose();
    if (fit.tech.form == TechnologyForm::CobbDouglas) {
        double rts = th[lay.beta_k()] + fit.first.beta_m[static_cast<std::size_t>(target)];
        if (fit.has_labor) rts += th[lay.beta_l()];
        return rts;
    }
    const auto c = fit.first.share_coef.row(target);
    double e_k = th[lay.beta_k()] + th[lay.beta_kk()] * k_at + c[2] * m_at;
    double e_m = c[0] + c[1] * m_at + c[2] * k_at;
    double e_l = 0.0;
    if (fit.has_labor) {
        e_k += th[lay.beta_kl()] * l_at;
        e_m += c[3] * l_at;
        e_l = th[lay.beta_l()] + th[lay.beta_ll()] * l_at + th[lay.beta_kl()] * k_at + c[3] * m_at;
    }
    return e_k + e_l + e_m;
}

// Per-(location, period) cell means; period = kPooled gives grand means.
inline std::vector<LocationAggregate> location_aggregates(const PanelDataset& panel,
                                                          const EstimationResult& fit,
                                                          bool pooled) {
    std::map<std::pair<int, int>, LocationAggregate> cells;
    for (std::size_t i = 0; i < panel.n_observations(); ++i) {
        const auto& o = panel.observations[i];
        if (!detail::target_usable(fit, o.location_index)) continue;
        const int period = pooled ? LocationAggregate::kPooled : o.period;
        auto& c = cells[{o.location_index, period}];
        c.location = o.location_index;
        c.period = period;
        ++c.n;
        c.y_bar += o.y - fit.first.eta_hat[i];
        c.k_bar += o.k;
        c.l_bar += o.l;
        c.m_bar += o.m;
        c.omega_bar += fit.productivity.omega[i];
    }
    std::vector<LocationAggregate> out;
    out.reserve(cells.size());
    for (auto& [key, c] : cells) {
        const double inv = 1.0 / static_cast<double>(c.n);
        c.y_bar *= inv;
        c.k_bar *= inv;
        c.l_bar *= inv;
        c.m_bar *= inv;
        c.omega_bar *= inv;
        out.push_back(c);
    }
    return out;
}

// Benchmark rule: the location with the smallest pooled mean fitted log
// output; ties resolved toward lexicographically smallest coordinates.
inline int select_benchmark(const PanelDataset& panel, const EstimationResult& fit) {
    const auto cells = location_aggregates(panel, fit, true);
    int best = -1;
    double best_y = std::numeric_limits<double>::infinity();
    for (const auto& c : cells) {
        if (c.y_bar < best_y) {
            best_y = c.y_bar;
            best = c.location;
        } else if (c.y_bar == best_y && best >= 0 &&
                   panel.locations[static_cast<std::size_t>(c.location)] <
                       panel.locations[static_cast<std::size_t>(best)]) {
            best = c.location;
        }
    }
    if (best < 0) throw NumericError("select_benchmark: no usable location");
    return best;
}

namespace detail {

inline DecompositionRecord decompose_cells(const EstimationResult& fit,
                                           const LocationAggregate& cs,
                                           const LocationAggregate& ck) {
    DecompositionRecord r;
    r.location = cs.location;
    r.benchmark = ck.location;
    r.period = cs.period;
    r.d_y = cs.y_bar - ck.y_bar;
    r.d_k = cs.k_bar - ck.k_bar;
    r.d_l = cs.l_bar - ck.l_bar;
    r.d_m = cs.m_bar - ck.m_bar;
    // counterfactual: location s's technology evaluated at kappa's mean inputs
    const double f_s_at_k = log_technology(fit, cs.location, ck.k_bar, ck.l_bar, ck.m_bar);
    const double f_k_at_k = log_technology(fit, ck.location, ck.k_bar, ck.l_bar, ck.m_bar);
    r.d_tech = f_s_at_k - f_k_at_k;
    r.d_tfp = cs.omega_bar - ck.omega_bar;
    if (fit.tech.form == TechnologyForm::CobbDouglas) {
        // mean output differential net of s-technology input differences;
        // algebraically equal to d_tech + d_tfp (the linear form commutes
        // with cell averaging)
        const double f_s_at_s = log_technology(fit, cs.location, cs.k_bar, cs.l_bar, cs.m_bar);
        r.d_prod = r.d_y - (f_s_at_s - f_s_at_k);
    } else {
        // a quadratic form does not commute with averaging, so the additive
        // construction is the definition here
        r.d_prod = r.d_tech + r.d_tfp;
    }
    return r;
}

}  // namespace detail

// Decomposition of the mean productivity differential of location s against
// benchmark kappa, per period or pooled.
inline DecompositionRecord decompose(const PanelDataset& panel, const EstimationResult& fit, int s,
                                     int kappa, int period = LocationAggregate::kPooled) {
    const bool pooled = period == LocationAggregate::kPooled;
    const auto cells = location_aggregates(panel, fit, pooled);
    const LocationAggregate* cs = nullptr;
    const LocationAggregate* ck = nullptr;
    for (const auto& c : cells) {
        if (c.location == s && c.period == period) cs = &c;
        if (c.location == kappa && c.period == period) ck = &c;
    }
    if (!cs || !ck)
        throw IntegrityError("decompose: empty location-period cell");
    return detail::decompose_cells(fit, *cs, *ck);
}

struct DecompositionTable {
    int benchmark = -1;
    bool pooled = true;
    std::vector<DecompositionRecord> records;
    // summaries over records excluding the benchmark's own (identically zero) row
    SummaryQuartiles tech, tfp, prod;
    int warnings = 0;  // cells skipped because the benchmark cell was missing
};

inline DecompositionTable decomposition_table(const PanelDataset& panel,
                                              const EstimationResult& fit, bool pooled = true,
                                              int benchmark = -1) {
    DecompositionTable tab;
    tab.pooled = pooled;
    if (panel.n_locations() < 2) {
        // nothing to compare against: empty table, flagged
        tab.benchmark = panel.n_locations() == 1 ? 0 : -1;
        tab.warnings = 1;
        return tab;
    }
    tab.benchmark = benchmark >= 0 ? benchmark : select_benchmark(panel, fit);

    const auto cells = location_aggregates(panel, fit, pooled);
    std::map<int, const LocationAggregate*> bench_by_period;
    for (const auto& c : cells)
        if (c.location == tab.benchmark) bench_by_period[c.period] = &c;

    std::vector<double> vt, vf, vp;
    for (const auto& c : cells) {
        auto it = bench_by_period.find(c.period);
        if (it == bench_by_period.end()) {
            ++tab.warnings;
            continue;
        }
        const auto rec = detail::decompose_cells(fit, c, *it->second);
        tab.records.push_back(rec);
        if (c.location != tab.benchmark) {
            vt.push_back(rec.d_tech);
            vf.push_back(rec.d_tfp);
            vp.push_back(rec.d_prod);
        }
    }
    if (!vp.empty()) {
        tab.tech = summarize_quartiles(vt);
        tab.tfp = summarize_quartiles(vf);
        tab.prod = summarize_quartiles(vp);
    }
    return tab;
}

}
