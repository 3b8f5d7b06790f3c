#pragma once

#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "locprod/csv.hpp"
#include "locprod/decomposition.hpp"
#include "locprod/estimator.hpp"
#include "locprod/inference.hpp"
#include "locprod/panel.hpp"
#include "locprod/simulator.hpp"
#include "locprod/version.hpp"

namespace locprod {

using json = nlohmann::ordered_json;

inline json panel_metadata(const PanelDataset& panel) {
    json meta;
    meta["observations"] = panel.n_observations();
    meta["firms"] = panel.n_firms;
    int pmin = 0, pmax = 0;
    bool first = true;
    for (const auto& o : panel.observations) {
        if (first || o.period < pmin) pmin = o.period;
        if (first || o.period > pmax) pmax = o.period;
        first = false;
    }
    meta["period_min"] = pmin;
    meta["period_max"] = pmax;
    meta["locations"] = panel.n_locations();
    meta["coordinate_dim"] = panel.coord_dim;
    meta["has_labor"] = panel.has_labor;
    meta["controls"] = panel.control_dim;
    return meta;
}

// one row per evaluation location: coordinates, all coefficient surfaces,
// returns to scale, solver flags
inline void write_surfaces_csv(const PanelDataset& panel, const EstimationResult& fit,
                               std::ostream& out) {
    CsvWriter w(out);
    std::vector<std::string> head = {"location_id"};
    for (int d = 0; d < panel.coord_dim; ++d) head.push_back("s" + std::to_string(d + 1));
    head.push_back("n_obs");
    head.push_back("is_extra_target");
    if (fit.tech.form == TechnologyForm::CobbDouglas) {
        head.push_back("b_m");
        head.push_back("beta_m");
    } else {
        head.push_back("beta_m");
        head.push_back("beta_mm");
        head.push_back("beta_km");
        if (fit.has_labor) head.push_back("beta_lm");
    }
    for (const auto& nm : fit.second.layout.names()) head.push_back(nm);
    head.push_back("rts");
    head.push_back("converged");
    head.push_back("flagged");
    w.row(head);

    for (std::size_t t = 0; t < fit.targets.size(); ++t) {
        std::vector<std::string> f;
        f.push_back(std::to_string(t));
        for (double c : fit.targets[t]) f.push_back(format_double(c));
        const bool extra = static_cast<int>(t) >= fit.n_unique;
        f.push_back(std::to_string(
            extra ? 0 : panel.location_observations[t].size()));
        f.push_back(extra ? "1" : "0");
        if (fit.tech.form == TechnologyForm::CobbDouglas) {
            f.push_back(format_double(fit.first.b_m[t]));
            f.push_back(format_double(fit.first.beta_m[t]));
        } else {
            for (Eigen::Index j = 0; j < fit.first.share_coef.cols(); ++j)
                f.push_back(format_double(fit.first.share_coef(static_cast<Eigen::Index>(t), j)));
        }
        for (Eigen::Index j = 0; j < fit.second.coef.cols(); ++j)
            f.push_back(format_double(fit.second.coef(static_cast<Eigen::Index>(t), j)));
        double k_at = 0, l_at = 0, m_at = 0;
        if (fit.tech.form == TechnologyForm::Translog && !extra) {
            long n = 0;
            for (int oi : panel.location_observations[t]) {
                const auto& o = panel.observations[static_cast<std::size_t>(oi)];
                k_at += o.k;
                l_at += o.l;
                m_at += o.m;
                ++n;
            }
            if (n) {
                k_at /= n;
                l_at /= n;
                m_at /= n;
            }
        }
        f.push_back(format_double(returns_to_scale(fit, static_cast<int>(t), k_at, l_at, m_at)));
        f.push_back(fit.second.diagnostics[t].converged ? "1" : "0");
        f.push_back((fit.first.flagged[t] || fit.second.flagged[t]) ? "1" : "0");
        w.row(f);
    }
}

// per-observation series: eta_hat, omega_hat, fitted values, y*, nu*
inline void write_observations_csv(const PanelDataset& panel, const EstimationResult& fit,
                                   std::ostream& out) {
    // nu_star is defined on lagged rows; map back to the current observation
    std::vector<double> nu_of_obs(panel.n_observations(),
                                  std::numeric_limits<double>::quiet_NaN());
    for (std::size_t r = 0; r < fit.first.rows.size(); ++r)
        nu_of_obs[static_cast<std::size_t>(fit.first.rows[r].current)] = fit.first.nu_star[r];
    std::vector<double> resid_of_obs(panel.n_observations(),
                                     std::numeric_limits<double>::quiet_NaN());
    for (std::size_t r = 0; r < fit.first.rows.size(); ++r)
        resid_of_obs[static_cast<std::size_t>(fit.first.rows[r].current)] =
            fit.second.residuals[r];

    CsvWriter w(out);
    w.row({"firm_id", "period", "location_id", "y", "fitted", "omega_hat", "eta_hat", "y_star",
           "nu_star_lag", "residual2"});
    for (std::size_t i = 0; i < panel.n_observations(); ++i) {
        const auto& o = panel.observations[i];
        const double fitted = o.y - fit.first.eta_hat[i] - fit.productivity.omega[i];
        w.row({o.firm_id, std::to_string(o.period), std::to_string(o.location_index),
               format_double(o.y), format_double(fitted), format_double(fit.productivity.omega[i]),
               format_double(fit.first.eta_hat[i]), format_double(fit.first.y_star[i]),
               format_double(nu_of_obs[i]), format_double(resid_of_obs[i])});
    }
}

inline void write_cv_csv(const CrossValidationResult& cv, std::ostream& out) {
    CsvWriter w(out);
    w.row({"h", "total_squared_error", "evaluated", "skipped_locations", "chosen"});
    for (std::size_t i = 0; i < cv.h_grid.size(); ++i)
        w.row({std::to_string(cv.h_grid[i]), format_double(cv.scores[i]),
               std::to_string(cv.evaluated[i]), std::to_string(cv.skipped[i]),
               cv.h_grid[i] == cv.chosen_h ? "1" : "0"});
}

inline void write_draws_csv(const BootstrapDraws& draws, std::ostream& out) {
    CsvWriter w(out);
    w.row({"functional", "replicate", "value"});
    for (Eigen::Index r = 0; r < draws.draws.rows(); ++r)
        for (Eigen::Index j = 0; j < draws.draws.cols(); ++j)
            w.row({draws.functional_names[static_cast<std::size_t>(j)], std::to_string(r),
                   format_double(draws.draws(r, j))});
}

inline json interval_summary(const BootstrapDraws& draws,
                             const std::vector<ConfidenceInterval>& cis) {
    json out;
    out["replicates"] = draws.B;
    out["excluded"] = draws.excluded;
    out["seed"] = draws.seed;
    out["quantile_convention"] = "type7_linear_interpolation";
    json arr = json::array();
    for (std::size_t j = 0; j < draws.functional_names.size(); ++j) {
        json e;
        e["functional"] = draws.functional_names[j];
        e["point"] = draws.point[j];
        const auto& ci = cis[j];
        e["level"] = ci.level;
        e["lower"] = ci.lower;
        e["upper"] = ci.upper;
        e["z0"] = ci.z0;
        e["bias_corrected"] = ci.bias_corrected;
        e["sidedness"] = ci.sidedness == Sidedness::TwoSided
                             ? "two_sided"
                             : (ci.sidedness == Sidedness::LowerBound ? "lower" : "upper");
        e["degenerate"] = ci.degenerate;
        arr.push_back(e);
    }
    out["intervals"] = arr;
    return out;
}

inline void write_decomposition_csv(const PanelDataset& panel, const DecompositionTable& tab,
                                    std::ostream& out) {
    CsvWriter w(out);
    std::vector<std::string> head = {"location_id"};
    for (int d = 0; d < panel.coord_dim; ++d) head.push_back("s" + std::to_string(d + 1));
    for (const auto& c : {"benchmark_id", "period", "d_prod", "d_tech", "d_tfp", "d_y", "d_k",
                          "d_l", "d_m"})
        head.push_back(c);
    w.row(head);
    for (const auto& r : tab.records) {
        std::vector<std::string> f;
        f.push_back(std::to_string(r.location));
        for (double c : panel.locations[static_cast<std::size_t>(r.location)])
            f.push_back(format_double(c));
        f.push_back(std::to_string(r.benchmark));
        f.push_back(r.period == LocationAggregate::kPooled ? "pooled" : std::to_string(r.period));
        for (double v : {r.d_prod, r.d_tech, r.d_tfp, r.d_y, r.d_k, r.d_l, r.d_m})
            f.push_back(format_double(v));
        w.row(f);
    }
}

inline json decomposition_summary(const DecompositionTable& tab) {
    auto block = [](const SummaryQuartiles& s) {
        json b;
        b["mean"] = s.mean;
        b["q1"] = s.q1;
        b["median"] = s.median;
        b["q3"] = s.q3;
        return b;
    };
    json out;
    out["benchmark"] = tab.benchmark;
    out["pooled"] = tab.pooled;
    out["records"] = tab.records.size();
    out["warnings"] = tab.warnings;
    out["d_tech"] = block(tab.tech);
    out["d_tfp"] = block(tab.tfp);
    out["d_prod"] = block(tab.prod);
    return out;
}

// Monte Carlo report in the simulation table's layout: one row per metric,
// one column per parameter.
inline void write_mc_report_csv(const MonteCarloReport& rep, std::ostream& out) {
    CsvWriter w(out);
    std::vector<std::string> head = {"metric"};
    for (const auto& m : rep.metrics) head.push_back(m.param);
    w.row(head);
    std::vector<std::string> bias = {"mean_bias"}, rmse = {"rmse"}, mae = {"mae"};
    for (const auto& m : rep.metrics) {
        bias.push_back(format_double(m.bias));
        rmse.push_back(format_double(m.rmse));
        mae.push_back(format_double(m.mae));
    }
    w.row(bias);
    w.row(rmse);
    w.row(mae);
}

inline void write_coverage_csv(const CoverageReport& rep, std::ostream& out) {
    CsvWriter w(out);
    w.row({"functional", "truth", "coverage"});
    for (std::size_t j = 0; j < rep.functional_names.size(); ++j)
        w.row({rep.functional_names[j], format_double(rep.truth[j]),
               format_double(rep.coverage[j])});
}

inline void write_power_curve_csv(const CoverageReport& rep, std::ostream& out) {
    CsvWriter w(out);
    w.row({"functional", "null_value", "rejection_rate"});
    for (std::size_t j = 0; j < rep.functional_names.size(); ++j)
        for (std::size_t o = 0; o < rep.null_offsets.size(); ++o)
            w.row({rep.functional_names[j],
                   format_double(rep.truth[j] + rep.null_offsets[o]),
                   format_double(rep.rejection(static_cast<Eigen::Index>(o),
                                               static_cast<Eigen::Index>(j)))});
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write file: " + path);
    out << content;
}

}
