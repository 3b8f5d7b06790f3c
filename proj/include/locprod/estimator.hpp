#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "locprod/error.hpp"
#include "locprod/kernel.hpp"
#include "locprod/panel.hpp"
#include "locprod/solver.hpp"

namespace locprod {

enum class TechnologyForm { CobbDouglas, Translog };

struct TechnologySpec {
    TechnologyForm form = TechnologyForm::CobbDouglas;
    int control_dim = 0;

    static TechnologySpec for_panel(const PanelDataset& panel,
                                    TechnologyForm form = TechnologyForm::CobbDouglas) {
        return TechnologySpec{form, panel.control_dim};
    }
};

// Index map for the second-step parameter vector. Layout:
//   Cobb-Douglas: [beta_K, (beta_L), rho0, rho1, rho2_1..rho2_q]
//   translog:     [beta_K, beta_KK, (beta_L, beta_LL, beta_KL), rho0, rho1, rho2...]
struct ParamLayout {
    TechnologyForm form = TechnologyForm::CobbDouglas;
    bool has_labor = true;
    int control_dim = 0;

    int n_tech() const {
        if (form == TechnologyForm::CobbDouglas) return has_labor ? 2 : 1;
        return has_labor ? 5 : 2;
    }
    int size() const { return n_tech() + 2 + control_dim; }
    int beta_k() const { return 0; }
    int beta_kk() const { return 1; }  // translog only
    int beta_l() const { return form == TechnologyForm::CobbDouglas ? 1 : 2; }
    int beta_ll() const { return 3; }  // translog only
    int beta_kl() const { return 4; }  // translog only
    int rho0() const { return n_tech(); }
    int rho1() const { return n_tech() + 1; }
    int rho2(int j) const { return n_tech() + 2 + j; }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.push_back("beta_k");
        if (form == TechnologyForm::Translog) out.push_back("beta_kk");
        if (has_labor) {
            out.push_back("beta_l");
            if (form == TechnologyForm::Translog) {
                out.push_back("beta_ll");
                out.push_back("beta_kl");
            }
        }
        out.push_back("rho0");
        out.push_back("rho1");
        for (int j = 0; j < control_dim; ++j) out.push_back("rho2_" + std::to_string(j + 1));
        return out;
    }
};

// First-step share-equation columns: x = (1, m, k, (l)).
inline int share_dim(bool has_labor) { return has_labor ? 4 : 3; }

struct FirstStepResult {
    TechnologySpec tech;
    bool has_labor = true;
    int n_unique = 0;    // unique panel locations come first among targets
    int n_targets = 0;   // unique + extra evaluation points
    double theta = 1.0;

    // Cobb-Douglas surfaces (per target)
    std::vector<double> b_m;     // ln[beta_M(s) * theta]
    std::vector<double> beta_m;  // material elasticity

    // translog surfaces: unscaled [beta_M, beta_MM, beta_KM, (beta_LM)] per target
    Eigen::MatrixXd share_coef;

    std::vector<char> flagged;  // per target (translog inner NLS failure)

    std::vector<double> eta_hat;  // per observation
    std::vector<double> y_star;   // per observation
    std::vector<LaggedRow> rows;  // second-step sample
    std::vector<double> nu_star;  // per lagged row
};

struct TargetDiagnostics {
    bool converged = false;
    int iterations = 0;
    double weighted_rss = 0.0;
    double rcond = 0.0;
};

struct SecondStepResult {
    ParamLayout layout;
    Eigen::MatrixXd coef;  // n_targets x layout.size()
    std::vector<char> flagged;
    std::vector<TargetDiagnostics> diagnostics;
    std::vector<double> residuals;  // per lagged row, at own-location coefficients
};

struct ProductivitySeries {
    std::vector<double> omega;  // per observation
};

struct EstimationOptions {
    std::vector<std::vector<double>> extra_targets;
    Rho1Search rho1_search;
    GaussNewtonOptions gn;
    bool translog_gn_polish = true;
    // optional precomputed kernel weights (must match targets and h)
    const struct WeightCache* weights1 = nullptr;
    const struct WeightCache* weights2 = nullptr;
    // bootstrap plumbing: regenerated series replacing the panel's own
    const std::vector<double>* v_override = nullptr;             // per observation
    const std::vector<double>* row_response_override = nullptr;  // per lagged row (y* response)
};

struct WeightCache {
    int h = 0;
    std::vector<WeightVector> by_target;
};

inline std::vector<std::vector<double>> make_targets(const PanelDataset& panel,
                                                     const std::vector<std::vector<double>>& extra) {
    std::vector<std::vector<double>> targets = panel.locations;
    std::map<std::vector<double>, int> seen;
    for (std::size_t i = 0; i < targets.size(); ++i) seen.emplace(targets[i], static_cast<int>(i));
    for (const auto& t : extra)
        if (seen.emplace(t, static_cast<int>(targets.size())).second) targets.push_back(t);
    return targets;
}

inline WeightCache build_weight_cache(const PanelDataset& panel,
                                      const std::vector<std::vector<double>>& targets, int h) {
    WeightCache cache;
    cache.h = h;
    cache.by_target.reserve(targets.size());
    KernelSpec spec{h, KernelFamily::GaussianSecondOrder};
    for (const auto& t : targets) cache.by_target.push_back(kernel_weights(t, panel, spec));
    return cache;
}

namespace detail {

struct FitFrame {
    const PanelDataset* panel = nullptr;
    TechnologySpec tech;
    bool has_labor = true;
    Eigen::VectorXd y, k, l, m, v;  // per observation
    Eigen::MatrixXd G;              // N x q
    std::vector<LaggedRow> rows;
    Eigen::VectorXd price_lag;  // per row: ln(P^M/P^Y) at t-1
    std::vector<std::vector<double>> targets;
    int n_unique = 0;
};

inline FitFrame build_frame(const PanelDataset& panel, const TechnologySpec& tech,
                            const std::vector<std::vector<double>>& extra_targets,
                            const std::vector<double>* v_override = nullptr) {
    if (tech.control_dim != panel.control_dim)
        throw ConfigError("TechnologySpec.control_dim does not match the panel's control columns");
    if (v_override && v_override->size() != panel.n_observations())
        throw std::invalid_argument("v_override length mismatch");
    FitFrame f;
    f.panel = &panel;
    f.tech = tech;
    f.has_labor = panel.has_labor;
    const auto n = static_cast<Eigen::Index>(panel.n_observations());
    if (n == 0) throw IntegrityError("empty panel");
    f.y.resize(n);
    f.k.resize(n);
    f.l.resize(n);
    f.m.resize(n);
    f.v.resize(n);
    f.G.resize(n, tech.control_dim);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& o = panel.observations[static_cast<std::size_t>(i)];
        f.y[i] = o.y;
        f.k[i] = o.k;
        f.l[i] = o.l;
        f.m[i] = o.m;
        f.v[i] = v_override ? (*v_override)[static_cast<std::size_t>(i)] : o.v;
        for (int g = 0; g < tech.control_dim; ++g) f.G(i, g) = o.controls[static_cast<std::size_t>(g)];
    }
    f.rows = build_lagged_rows(panel);
    f.price_lag.resize(static_cast<Eigen::Index>(f.rows.size()));
    for (std::size_t r = 0; r < f.rows.size(); ++r)
        f.price_lag[static_cast<Eigen::Index>(r)] =
            panel.observations[static_cast<std::size_t>(f.rows[r].lagged)].price_ratio;
    f.targets = make_targets(panel, extra_targets);
    f.n_unique = static_cast<int>(panel.n_locations());
    return f;
}

// material-share regressors x_it = (1, m, k, (l)) for the translog first step
inline Eigen::MatrixXd share_design(const FitFrame& f) {
    const Eigen::Index n = f.v.size();
    Eigen::MatrixXd X(n, share_dim(f.has_labor));
    X.col(0).setOnes();
    X.col(1) = f.m;
    X.col(2) = f.k;
    if (f.has_labor) X.col(3) = f.l;
    return X;
}

inline WeightedObjectiveSpec make_share_model(const Eigen::MatrixXd& X, const Eigen::VectorXd& v) {
    WeightedObjectiveSpec spec;
    spec.n_params = X.cols();
    spec.n_rows = X.rows();
    spec.residual = [&X, &v](const Eigen::VectorXd& a, Eigen::VectorXd& r) {
        r = v - (X * a).array().log().matrix();
    };
    spec.jacobian = [&X](const Eigen::VectorXd& a, Eigen::MatrixXd& J) {
        const Eigen::ArrayXd lin = (X * a).array();
        J = -(X.array().colwise() / lin).matrix();
    };
    return spec;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// First step: location-specific material share equation.
// ---------------------------------------------------------------------------

inline FirstStepResult step1(const PanelDataset& panel, int h1, const TechnologySpec& tech,
                             const EstimationOptions& opts = {}) {
    const auto frame = detail::build_frame(panel, tech, opts.extra_targets, opts.v_override);
    const Eigen::Index n = frame.v.size();
    const int n_targets = static_cast<int>(frame.targets.size());

    const WeightCache* cache = opts.weights1;
    WeightCache local;
    if (!cache || cache->h != h1 || static_cast<int>(cache->by_target.size()) != n_targets) {
        local = build_weight_cache(panel, frame.targets, h1);
        cache = &local;
    }

    FirstStepResult res;
    res.tech = tech;
    res.has_labor = frame.has_labor;
    res.n_unique = frame.n_unique;
    res.n_targets = n_targets;
    res.flagged.assign(static_cast<std::size_t>(n_targets), 0);
    res.eta_hat.resize(static_cast<std::size_t>(n));
    res.y_star.resize(static_cast<std::size_t>(n));
    res.rows = frame.rows;
    res.nu_star.resize(frame.rows.size());

    if (tech.form == TechnologyForm::CobbDouglas) {
        res.b_m.resize(static_cast<std::size_t>(n_targets));
        for (int t = 0; t < n_targets; ++t) {
            const auto& w = cache->by_target[static_cast<std::size_t>(t)];
            Eigen::Map<const Eigen::VectorXd> wv(w.weights.data(), n);
            res.b_m[static_cast<std::size_t>(t)] = weighted_mean(frame.v, wv);
        }
        double sum_exp = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const int loc = panel.observations[static_cast<std::size_t>(i)].location_index;
            const double eta = res.b_m[static_cast<std::size_t>(loc)] - frame.v[i];
            res.eta_hat[static_cast<std::size_t>(i)] = eta;
            sum_exp += std::exp(eta);
        }
        res.theta = sum_exp / static_cast<double>(n);
        res.beta_m.resize(static_cast<std::size_t>(n_targets));
        for (int t = 0; t < n_targets; ++t)
            res.beta_m[static_cast<std::size_t>(t)] =
                std::exp(res.b_m[static_cast<std::size_t>(t)]) / res.theta;

        for (Eigen::Index i = 0; i < n; ++i) {
            const int loc = panel.observations[static_cast<std::size_t>(i)].location_index;
            res.y_star[static_cast<std::size_t>(i)] =
                frame.y[i] - res.beta_m[static_cast<std::size_t>(loc)] * frame.m[i];
        }
        for (std::size_t r = 0; r < frame.rows.size(); ++r) {
            const int lag = frame.rows[r].lagged;
            const int loc = panel.observations[static_cast<std::size_t>(lag)].location_index;
            res.nu_star[r] = frame.price_lag[static_cast<Eigen::Index>(r)] -
                             res.b_m[static_cast<std::size_t>(loc)] +
                             (1.0 - res.beta_m[static_cast<std::size_t>(loc)]) * frame.m[lag];
        }
        return res;
    }

    // translog: local NLS of v ~ ln([beta_M theta] + [beta_MM theta] m + ...)
    const int q = share_dim(frame.has_labor);
    const Eigen::MatrixXd X = detail::share_design(frame);
    const auto model = detail::make_share_model(X, frame.v);
    Eigen::MatrixXd scaled(n_targets, q);  // theta-scaled coefficients per target
    for (int t = 0; t < n_targets; ++t) {
        const auto& w = cache->by_target[static_cast<std::size_t>(t)];
        Eigen::Map<const Eigen::VectorXd> wv(w.weights.data(), n);
        Eigen::VectorXd init = Eigen::VectorXd::Zero(q);
        init[0] = std::exp(weighted_mean(frame.v, wv));
        const SolverReport rep = fit_gauss_newton(model, init, wv, opts.gn);
        if (!rep.converged || !rep.estimate.allFinite()) {
            res.flagged[static_cast<std::size_t>(t)] = 1;
            scaled.row(t).setConstant(std::numeric_limits<double>::quiet_NaN());
        } else {
            scaled.row(t) = rep.estimate.transpose();
        }
    }

    // theta from exponentiated fitted-minus-observed shares, then unscale
    double sum_exp = 0.0;
    long n_ok = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const int loc = panel.observations[static_cast<std::size_t>(i)].location_index;
        if (res.flagged[static_cast<std::size_t>(loc)]) {
            res.eta_hat[static_cast<std::size_t>(i)] = std::numeric_limits<double>::quiet_NaN();
            continue;
        }
        const double lin = scaled.row(loc).dot(X.row(i));
        const double eta = std::log(lin) - frame.v[i];
        res.eta_hat[static_cast<std::size_t>(i)] = eta;
        sum_exp += std::exp(eta);
        ++n_ok;
    }
    if (n_ok == 0) throw NumericError("translog first step failed at every location");
    res.theta = sum_exp / static_cast<double>(n_ok);
    res.share_coef = scaled / res.theta;

    for (Eigen::Index i = 0; i < n; ++i) {
        const int loc = panel.observations[static_cast<std::size_t>(i)].location_index;
        if (res.flagged[static_cast<std::size_t>(loc)]) {
            res.y_star[static_cast<std::size_t>(i)] = std::numeric_limits<double>::quiet_NaN();
            continue;
        }
        const auto c = res.share_coef.row(loc);  // [bM, bMM, bKM, (bLM)]
        const double mi = frame.m[i], ki = frame.k[i], li = frame.has_labor ? frame.l[i] : 0.0;
        res.y_star[static_cast<std::size_t>(i)] =
            frame.y[i] - c[0] * mi - 0.5 * c[1] * mi * mi - c[2] * ki * mi -
            (frame.has_labor ? c[3] * li * mi : 0.0);
    }
    for (std::size_t r = 0; r < frame.rows.size(); ++r) {
        const int lag = frame.rows[r].lagged;
        const int loc = panel.observations[static_cast<std::size_t>(lag)].location_index;
        if (res.flagged[static_cast<std::size_t>(loc)]) {
            res.nu_star[r] = std::numeric_limits<double>::quiet_NaN();
            continue;
        }
        const auto c = res.share_coef.row(loc);
        const double ml = frame.m[lag], kl = frame.k[lag], ll = frame.has_labor ? frame.l[lag] : 0.0;
        const double elast = res.theta * scaled.row(loc).dot(X.row(lag));
        res.nu_star[r] = frame.price_lag[static_cast<Eigen::Index>(r)] - std::log(elast) +
                         (1.0 - c[0]) * ml - 0.5 * c[1] * ml * ml - c[2] * kl * ml -
                         (frame.has_labor ? c[3] * ll * ml : 0.0);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Second step: locally weighted NLS of the proxied production function.
// ---------------------------------------------------------------------------

namespace detail {

// technology regressors u(k, l): the pieces entering both t and t-1
inline void tech_regressors(const ParamLayout& lay, double k, double l, double* out) {
    if (lay.form == TechnologyForm::CobbDouglas) {
        out[0] = k;
        if (lay.has_labor) out[1] = l;
        return;
    }
    out[0] = k;
    out[1] = 0.5 * k * k;
    if (lay.has_labor) {
        out[2] = l;
        out[3] = 0.5 * l * l;
        out[4] = k * l;
    }
}

struct SecondStepData {
    ParamLayout layout;
    ProfiledBilinearSpec spec;   // linear sub-layout: [tech..., intercept, G...]
    std::vector<int> row_index;  // kept rows -> index into frame.rows
};

inline SecondStepData build_second_step(const FitFrame& frame, const FirstStepResult& first,
                                        const std::vector<double>* row_response = nullptr) {
    if (row_response && row_response->size() != frame.rows.size())
        throw std::invalid_argument("row_response_override length mismatch");
    SecondStepData d;
    d.layout = ParamLayout{frame.tech.form, frame.has_labor, frame.tech.control_dim};
    const int nt = d.layout.n_tech();
    const int p_lin = nt + 1 + frame.tech.control_dim;

    for (std::size_t r = 0; r < frame.rows.size(); ++r) {
        const int cur = frame.rows[r].current;
        const double resp = row_response ? (*row_response)[r]
                                         : first.y_star[static_cast<std::size_t>(cur)];
        if (std::isfinite(resp) && std::isfinite(first.nu_star[r]))
            d.row_index.push_back(static_cast<int>(r));
    }
    const auto R = static_cast<Eigen::Index>(d.row_index.size());
    d.spec.X0.setZero(R, p_lin);
    d.spec.X1.setZero(R, p_lin);
    d.spec.y0.resize(R);
    d.spec.y1.resize(R);

    std::vector<double> u(static_cast<std::size_t>(nt));
    for (Eigen::Index i = 0; i < R; ++i) {
        const auto ri = static_cast<std::size_t>(d.row_index[static_cast<std::size_t>(i)]);
        const auto& row = frame.rows[ri];
        const int cur = row.current, lag = row.lagged;
        d.spec.y0[i] = row_response ? (*row_response)[ri]
                                    : first.y_star[static_cast<std::size_t>(cur)];
        d.spec.y1[i] = first.nu_star[ri];
        tech_regressors(d.layout, frame.k[cur], frame.has_labor ? frame.l[cur] : 0.0, u.data());
        for (int j = 0; j < nt; ++j) d.spec.X0(i, j) = u[static_cast<std::size_t>(j)];
        tech_regressors(d.layout, frame.k[lag], frame.has_labor ? frame.l[lag] : 0.0, u.data());
        for (int j = 0; j < nt; ++j) d.spec.X1(i, j) = u[static_cast<std::size_t>(j)];
        d.spec.X0(i, nt) = 1.0;  // intercept: rho0
        for (int g = 0; g < frame.tech.control_dim; ++g)
            d.spec.X0(i, nt + 1 + g) = frame.G(lag, g);  // G_{it-1}
    }
    return d;
}

// full-layout parameter vector from the profiled solution [lin..., rho1]
inline Eigen::VectorXd assemble_full(const ParamLayout& lay, const Eigen::VectorXd& profiled) {
    const int nt = lay.n_tech();
    Eigen::VectorXd full(lay.size());
    for (int j = 0; j < nt; ++j) full[j] = profiled[j];
    full[lay.rho0()] = profiled[nt];
    full[lay.rho1()] = profiled[nt + 1 + lay.control_dim];
    for (int g = 0; g < lay.control_dim; ++g) full[lay.rho2(g)] = profiled[nt + 1 + g];
    return full;
}

inline Eigen::VectorXd to_profiled(const ParamLayout& lay, const Eigen::VectorXd& full) {
    const int nt = lay.n_tech();
    Eigen::VectorXd prof(lay.size());
    for (int j = 0; j < nt; ++j) prof[j] = full[j];
    prof[nt] = full[lay.rho0()];
    for (int g = 0; g < lay.control_dim; ++g) prof[nt + 1 + g] = full[lay.rho2(g)];
    prof[nt + 1 + lay.control_dim] = full[lay.rho1()];
    return prof;
}

// residual of Eq-22-shaped model at full-layout theta for one row of the spec
inline double second_step_residual(const ProfiledBilinearSpec& spec, const ParamLayout& lay,
                                   const Eigen::VectorXd& full, Eigen::Index i) {
    const int nt = lay.n_tech();
    const double rho1 = full[lay.rho1()];
    double acc = spec.y0[i] - rho1 * spec.y1[i] - full[lay.rho0()];
    for (int j = 0; j < nt; ++j) acc -= full[j] * (spec.X0(i, j) - rho1 * spec.X1(i, j));
    for (int g = 0; g < lay.control_dim; ++g) acc -= full[lay.rho2(g)] * spec.X0(i, nt + 1 + g);
    return acc;
}

// GN model over the full layout (used for the translog polish and solver
// cross-checks)
inline WeightedObjectiveSpec make_second_step_model(const ProfiledBilinearSpec& spec,
                                                    const ParamLayout& lay) {
    WeightedObjectiveSpec m;
    m.n_params = lay.size();
    m.n_rows = spec.X0.rows();
    m.residual = [&spec, lay](const Eigen::VectorXd& th, Eigen::VectorXd& r) {
        r.resize(spec.X0.rows());
        for (Eigen::Index i = 0; i < spec.X0.rows(); ++i)
            r[i] = second_step_residual(spec, lay, th, i);
    };
    m.jacobian = [&spec, lay](const Eigen::VectorXd& th, Eigen::MatrixXd& J) {
        const int nt = lay.n_tech();
        const double rho1 = th[lay.rho1()];
        J.resize(spec.X0.rows(), lay.size());
        for (Eigen::Index i = 0; i < spec.X0.rows(); ++i) {
            for (int j = 0; j < nt; ++j) J(i, j) = -(spec.X0(i, j) - rho1 * spec.X1(i, j));
            J(i, lay.rho0()) = -1.0;
            double dr1 = -spec.y1[i];
            for (int j = 0; j < nt; ++j) dr1 += th[j] * spec.X1(i, j);
            J(i, lay.rho1()) = dr1;
            for (int g = 0; g < lay.control_dim; ++g) J(i, lay.rho2(g)) = -spec.X0(i, nt + 1 + g);
        }
    };
    return m;
}

}  // namespace detail

inline SecondStepResult step2(const PanelDataset& panel, const FirstStepResult& first, int h2,
                              const TechnologySpec& tech, const EstimationOptions& opts = {}) {
    const auto frame = detail::build_frame(panel, tech, opts.extra_targets);
    if (frame.rows.empty()) throw IntegrityError("second step requires lagged rows");
    if (first.nu_star.size() != frame.rows.size() ||
        first.y_star.size() != panel.n_observations())
        throw IntegrityError("step2: first-step result does not match this panel");
    auto data = detail::build_second_step(frame, first, opts.row_response_override);
    const auto R = static_cast<Eigen::Index>(data.row_index.size());
    if (R == 0) throw IntegrityError("second step: no usable lagged rows");
    const int n_targets = static_cast<int>(frame.targets.size());

    const WeightCache* cache = opts.weights2;
    WeightCache local;
    if (!cache || cache->h != h2 || static_cast<int>(cache->by_target.size()) != n_targets) {
        local = build_weight_cache(panel, frame.targets, h2);
        cache = &local;
    }

    SecondStepResult res;
    res.layout = data.layout;
    res.coef.setConstant(n_targets, data.layout.size(), std::numeric_limits<double>::quiet_NaN());
    res.flagged.assign(static_cast<std::size_t>(n_targets), 0);
    res.diagnostics.resize(static_cast<std::size_t>(n_targets));

    const auto model = detail::make_second_step_model(data.spec, data.layout);
    Eigen::VectorXd w_rows(R);
    for (int t = 0; t < n_targets; ++t) {
        const auto& w = cache->by_target[static_cast<std::size_t>(t)];
        for (Eigen::Index i = 0; i < R; ++i) {
            const auto& row =
                frame.rows[static_cast<std::size_t>(data.row_index[static_cast<std::size_t>(i)])];
            w_rows[i] = w.weights[static_cast<std::size_t>(row.current)];
        }
        try {
            SolverReport rep = fit_profiled_nls(data.spec, opts.rho1_search, w_rows);
            Eigen::VectorXd full = detail::assemble_full(data.layout, rep.estimate);
            if (tech.form == TechnologyForm::Translog && opts.translog_gn_polish) {
                SolverReport gn = fit_gauss_newton(model, full, w_rows, opts.gn);
                if (gn.converged && gn.weighted_rss <= rep.weighted_rss) {
                    full = gn.estimate;
                    rep.weighted_rss = gn.weighted_rss;
                    rep.iterations += gn.iterations;
                    rep.converged = gn.converged;
                }
            }
            res.coef.row(t) = full.transpose();
            auto& d = res.diagnostics[static_cast<std::size_t>(t)];
            d.converged = rep.converged;
            d.iterations = rep.iterations;
            d.weighted_rss = rep.weighted_rss;
            d.rcond = rep.rcond;
        } catch (const SingularMatrixError&) {
            res.flagged[static_cast<std::size_t>(t)] = 1;
        } catch (const NumericError&) {
            res.flagged[static_cast<std::size_t>(t)] = 1;
        }
    }

    // residuals at each row's own location coefficients
    res.residuals.assign(frame.rows.size(), std::numeric_limits<double>::quiet_NaN());
    for (Eigen::Index i = 0; i < R; ++i) {
        const int ri = data.row_index[static_cast<std::size_t>(i)];
        const auto& row = frame.rows[static_cast<std::size_t>(ri)];
        const int loc = panel.observations[static_cast<std::size_t>(row.current)].location_index;
        if (res.flagged[static_cast<std::size_t>(loc)]) continue;
        const Eigen::VectorXd th = res.coef.row(loc).transpose();
        res.residuals[static_cast<std::size_t>(ri)] =
            detail::second_step_residual(data.spec, data.layout, th, i);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Productivity recovery and the full two-step pipeline.
// ---------------------------------------------------------------------------

namespace detail {

inline double tech_log_output(const ParamLayout& lay, const Eigen::VectorXd& coef, double k,
                              double l) {
    // capital/labor part of ln F (material part is removed in y*)
    double acc = coef[lay.beta_k()] * k;
    if (lay.form == TechnologyForm::Translog) acc += 0.5 * coef[lay.beta_kk()] * k * k;
    if (lay.has_labor) {
        acc += coef[lay.beta_l()] * l;
        if (lay.form == TechnologyForm::Translog)
            acc += 0.5 * coef[lay.beta_ll()] * l * l + coef[lay.beta_kl()] * k * l;
    }
    return acc;
}

}  // namespace detail

inline ProductivitySeries recover_productivity(const PanelDataset& panel,
                                               const FirstStepResult& first,
                                               const SecondStepResult& second) {
    ProductivitySeries out;
    out.omega.resize(panel.n_observations());
    for (std::size_t i = 0; i < panel.n_observations(); ++i) {
        const auto& o = panel.observations[i];
        const int loc = o.location_index;
        if (second.flagged[static_cast<std::size_t>(loc)] ||
            first.flagged[static_cast<std::size_t>(loc)]) {
            out.omega[i] = std::numeric_limits<double>::quiet_NaN();
            continue;
        }
        const Eigen::VectorXd th = second.coef.row(loc).transpose();
        out.omega[i] = first.y_star[i] - detail::tech_log_output(second.layout, th, o.k, o.l) -
                       first.eta_hat[i];
    }
    return out;
}

struct EstimationResult {
    TechnologySpec tech;
    bool has_labor = true;
    int h1 = 0;
    int h2 = 0;
    std::vector<std::vector<double>> targets;
    int n_unique = 0;
    FirstStepResult first;
    SecondStepResult second;
    ProductivitySeries productivity;

    int target_index(const std::vector<double>& s) const {
        for (std::size_t t = 0; t < targets.size(); ++t)
            if (targets[t] == s) return static_cast<int>(t);
        return -1;
    }
};

inline EstimationResult full_fit(const PanelDataset& panel, int h1, int h2,
                                 const TechnologySpec& tech, const EstimationOptions& opts = {}) {
    EstimationResult res;
    res.tech = tech;
    res.has_labor = panel.has_labor;
    res.h1 = h1;
    res.h2 = h2;
    res.targets = make_targets(panel, opts.extra_targets);
    res.n_unique = static_cast<int>(panel.n_locations());
    res.first = step1(panel, h1, tech, opts);
    res.second = step2(panel, res.first, h2, tech, opts);
    res.productivity = recover_productivity(panel, res.first, res.second);
    return res;
}

// ---------------------------------------------------------------------------
// Location-invariant baseline: sample-mean share equation + global NLS.
// ---------------------------------------------------------------------------

struct InvariantResult {
    TechnologySpec tech;
    bool has_labor = true;
    double b_m = 0.0;
    double theta = 1.0;
    double beta_m = 0.0;
    Eigen::VectorXd share_coef;  // translog: unscaled first-step coefficients
    ParamLayout layout;
    Eigen::VectorXd coef;  // second-step parameters
    std::vector<double> eta_hat;  // per observation
    std::vector<double> y_star;   // per observation
    std::vector<LaggedRow> rows;
    std::vector<double> nu_star;    // per row
    std::vector<double> residuals;  // per row
    ProductivitySeries productivity;
    SolverReport report;
};

inline InvariantResult estimate_invariant(const PanelDataset& panel, const TechnologySpec& tech,
                                          const EstimationOptions& opts = {}) {
    const auto frame = detail::build_frame(panel, tech, {}, opts.v_override);
    const Eigen::Index n = frame.v.size();

    InvariantResult res;
    res.tech = tech;
    res.has_labor = frame.has_labor;
    res.layout = ParamLayout{tech.form, frame.has_labor, tech.control_dim};
    res.rows = frame.rows;
    res.eta_hat.resize(static_cast<std::size_t>(n));
    res.y_star.resize(static_cast<std::size_t>(n));
    res.nu_star.resize(frame.rows.size());

    FirstStepResult first;  // filled as a single-target surrogate for reuse below
    first.tech = tech;
    first.has_labor = frame.has_labor;
    first.n_unique = frame.n_unique;
    first.n_targets = static_cast<int>(frame.targets.size());
    first.rows = frame.rows;

    if (tech.form == TechnologyForm::CobbDouglas) {
        res.b_m = frame.v.mean();
        double sum_exp = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            res.eta_hat[static_cast<std::size_t>(i)] = res.b_m - frame.v[i];
            sum_exp += std::exp(res.b_m - frame.v[i]);
        }
        res.theta = sum_exp / static_cast<double>(n);
        res.beta_m = std::exp(res.b_m) / res.theta;
        for (Eigen::Index i = 0; i < n; ++i)
            res.y_star[static_cast<std::size_t>(i)] = frame.y[i] - res.beta_m * frame.m[i];
        for (std::size_t r = 0; r < frame.rows.size(); ++r) {
            const int lag = frame.rows[r].lagged;
            res.nu_star[r] = frame.price_lag[static_cast<Eigen::Index>(r)] - res.b_m +
                             (1.0 - res.beta_m) * frame.m[lag];
        }
    } else {
        const Eigen::MatrixXd X = detail::share_design(frame);
        const auto model = detail::make_share_model(X, frame.v);
        const Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
        Eigen::VectorXd init = Eigen::VectorXd::Zero(share_dim(frame.has_labor));
        init[0] = std::exp(frame.v.mean());
        const SolverReport rep = fit_gauss_newton(model, init, ones, opts.gn);
        if (!rep.converged)
            throw NumericError("estimate_invariant: translog share equation did not converge");
        double sum_exp = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double eta = std::log(rep.estimate.dot(X.row(i))) - frame.v[i];
            res.eta_hat[static_cast<std::size_t>(i)] = eta;
            sum_exp += std::exp(eta);
        }
        res.theta = sum_exp / static_cast<double>(n);
        res.share_coef = rep.estimate / res.theta;
        res.b_m = std::log(rep.estimate[0]);  // ln[beta_M theta] at the constant term
        res.beta_m = res.share_coef[0];
        const auto& c = res.share_coef;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double mi = frame.m[i], ki = frame.k[i], li = frame.has_labor ? frame.l[i] : 0.0;
            res.y_star[static_cast<std::size_t>(i)] =
                frame.y[i] - c[0] * mi - 0.5 * c[1] * mi * mi - c[2] * ki * mi -
                (frame.has_labor ? c[3] * li * mi : 0.0);
        }
        for (std::size_t r = 0; r < frame.rows.size(); ++r) {
            const int lag = frame.rows[r].lagged;
            const double ml = frame.m[lag], kl = frame.k[lag], ll = frame.has_labor ? frame.l[lag] : 0.0;
            const double elast = res.theta * (c[0] + c[1] * ml + c[2] * kl +
                                              (frame.has_labor ? c[3] * ll : 0.0));
            res.nu_star[r] = frame.price_lag[static_cast<Eigen::Index>(r)] - std::log(elast) +
                             (1.0 - c[0]) * ml - 0.5 * c[1] * ml * ml - c[2] * kl * ml -
                             (frame.has_labor ? c[3] * ll * ml : 0.0);
        }
    }

    first.y_star = res.y_star;
    first.nu_star = res.nu_star;
    auto data = detail::build_second_step(frame, first, opts.row_response_override);
    const auto R = static_cast<Eigen::Index>(data.row_index.size());
    if (R == 0) throw IntegrityError("estimate_invariant: no usable lagged rows");
    const Eigen::VectorXd w = Eigen::VectorXd::Ones(R);
    SolverReport rep = fit_profiled_nls(data.spec, opts.rho1_search, w);
    res.coef = detail::assemble_full(data.layout, rep.estimate);
    if (tech.form == TechnologyForm::Translog) {
        const auto model2 = detail::make_second_step_model(data.spec, data.layout);
        SolverReport gn = fit_gauss_newton(model2, res.coef, w, opts.gn);
        if (gn.converged && gn.weighted_rss <= rep.weighted_rss) {
            res.coef = gn.estimate;
            rep = gn;
        }
    }
    res.report = rep;

    res.residuals.assign(frame.rows.size(), std::numeric_limits<double>::quiet_NaN());
    for (Eigen::Index i = 0; i < R; ++i) {
        const int ri = data.row_index[static_cast<std::size_t>(i)];
        res.residuals[static_cast<std::size_t>(ri)] =
            detail::second_step_residual(data.spec, data.layout, res.coef, i);
    }

    res.productivity.omega.resize(panel.n_observations());
    for (std::size_t i = 0; i < panel.n_observations(); ++i) {
        const auto& o = panel.observations[i];
        res.productivity.omega[i] = res.y_star[i] -
                                    detail::tech_log_output(res.layout, res.coef, o.k, o.l) -
                                    res.eta_hat[i];
    }
    return res;
}

// ---------------------------------------------------------------------------
// Leave-one-location-out cross-validation of the number of neighbors.
// ---------------------------------------------------------------------------

struct CrossValidationResult {
    int chosen_h = 0;
    std::vector<int> h_grid;
    std::vector<double> scores;       // total squared prediction error
    std::vector<int> skipped;         // locations skipped per candidate
    std::vector<long> evaluated;      // held-out observations scored per candidate
};

namespace detail {

// kernel weights at s over observations not located at excluded_loc
struct MaskedWeights {
    std::vector<double> w;  // dense over all observations, 0 at excluded ones
    BandwidthStatus status = BandwidthStatus::Regular;
    bool ok = false;
};

inline MaskedWeights masked_kernel_weights(const PanelDataset& panel,
                                           const std::vector<double>& s, int h, int excluded_loc) {
    MaskedWeights out;
    std::vector<double> by_loc(panel.n_locations());
    for (std::size_t j = 0; j < panel.n_locations(); ++j)
        by_loc[j] = distance(panel.locations[j], s);
    std::vector<double> dist;
    dist.reserve(panel.n_observations());
    for (const auto& o : panel.observations)
        if (o.location_index != excluded_loc)
            dist.push_back(by_loc[static_cast<std::size_t>(o.location_index)]);
    if (dist.empty() || h > static_cast<int>(dist.size())) return out;
    const auto bw = adaptive_bandwidth_impl(std::move(dist), h);
    out.status = bw.status;
    out.w.assign(panel.n_observations(), 0.0);
    for (std::size_t i = 0; i < panel.n_observations(); ++i) {
        const auto& o = panel.observations[i];
        if (o.location_index == excluded_loc) continue;
        const double d = by_loc[static_cast<std::size_t>(o.location_index)];
        out.w[i] = bw.status == BandwidthStatus::AllCoincident ? gaussian_kernel(0.0)
                                                               : gaussian_kernel(d / bw.value);
    }
    out.ok = true;
    return out;
}

}  // namespace detail

inline CrossValidationResult cross_validate(const PanelDataset& panel, int step,
                                            const std::vector<int>& h_grid,
                                            const TechnologySpec& tech, int h1_for_step2 = 0,
                                            const EstimationOptions& opts = {}) {
    if (step != 1 && step != 2) throw std::invalid_argument("cross_validate: step must be 1 or 2");
    if (h_grid.empty()) throw std::invalid_argument("cross_validate: empty h grid");
    if (panel.n_locations() < 2)
        throw ConfigError("cross-validation requires at least two unique locations");
    if (step == 2 && h1_for_step2 <= 0)
        throw std::invalid_argument("cross_validate: step 2 requires the frozen first-step h1");

    const auto frame = detail::build_frame(panel, tech, {});
    CrossValidationResult out;
    out.h_grid = h_grid;
    out.scores.assign(h_grid.size(), 0.0);
    out.skipped.assign(h_grid.size(), 0);
    out.evaluated.assign(h_grid.size(), 0);

    std::optional<FirstStepResult> first;
    std::optional<detail::SecondStepData> data;
    if (step == 2) {
        first = step1(panel, h1_for_step2, tech, opts);
        data = detail::build_second_step(frame, *first);
    }
    // hoisted share-equation pieces for the translog step-1 branch
    Eigen::MatrixXd share_X;
    WeightedObjectiveSpec share_model;
    if (step == 1 && tech.form == TechnologyForm::Translog) {
        share_X = detail::share_design(frame);
        share_model = detail::make_share_model(share_X, frame.v);
    }

    for (std::size_t hi = 0; hi < h_grid.size(); ++hi) {
        const int h = h_grid[hi];
        for (int loc = 0; loc < static_cast<int>(panel.n_locations()); ++loc) {
            const auto& held = panel.location_observations[static_cast<std::size_t>(loc)];
            if (held.empty()) continue;
            const auto mw =
                detail::masked_kernel_weights(panel, panel.locations[static_cast<std::size_t>(loc)], h, loc);
            if (!mw.ok) {
                ++out.skipped[hi];
                continue;
            }

            if (step == 1) {
                if (tech.form == TechnologyForm::CobbDouglas) {
                    double sw = 0.0, swv = 0.0;
                    for (std::size_t i = 0; i < mw.w.size(); ++i) {
                        sw += mw.w[i];
                        swv += mw.w[i] * frame.v[static_cast<Eigen::Index>(i)];
                    }
                    if (!(sw > 0.0)) {
                        ++out.skipped[hi];
                        continue;
                    }
                    const double pred = swv / sw;
                    for (int i : held) {
                        const double e = frame.v[i] - pred;
                        out.scores[hi] += e * e;
                        ++out.evaluated[hi];
                    }
                } else {
                    Eigen::Map<const Eigen::VectorXd> wv(mw.w.data(),
                                                         static_cast<Eigen::Index>(mw.w.size()));
                    Eigen::VectorXd init = Eigen::VectorXd::Zero(share_dim(frame.has_labor));
                    init[0] = std::exp(weighted_mean(frame.v, wv));
                    const SolverReport rep = fit_gauss_newton(share_model, init, wv, opts.gn);
                    if (!rep.converged) {
                        ++out.skipped[hi];
                        continue;
                    }
                    for (int i : held) {
                        const double pred = std::log(rep.estimate.dot(share_X.row(i)));
                        const double e = frame.v[i] - pred;
                        out.scores[hi] += e * e;
                        ++out.evaluated[hi];
                    }
                }
            } else {
                // step 2: fit on other locations' rows, predict held-out rows
                std::vector<int> fit_rows, test_rows;
                for (std::size_t di = 0; di < data->row_index.size(); ++di) {
                    const auto& row =
                        frame.rows[static_cast<std::size_t>(data->row_index[di])];
                    const int rloc =
                        panel.observations[static_cast<std::size_t>(row.current)].location_index;
                    (rloc == loc ? test_rows : fit_rows).push_back(static_cast<int>(di));
                }
                if (test_rows.empty()) continue;
                const auto p_lin = data->spec.X0.cols();
                if (static_cast<Eigen::Index>(fit_rows.size()) < p_lin + 1) {
                    ++out.skipped[hi];
                    continue;
                }
                ProfiledBilinearSpec sub;
                sub.X0.resize(static_cast<Eigen::Index>(fit_rows.size()), p_lin);
                sub.X1.resize(static_cast<Eigen::Index>(fit_rows.size()), p_lin);
                sub.y0.resize(static_cast<Eigen::Index>(fit_rows.size()));
                sub.y1.resize(static_cast<Eigen::Index>(fit_rows.size()));
                Eigen::VectorXd w(static_cast<Eigen::Index>(fit_rows.size()));
                for (std::size_t i = 0; i < fit_rows.size(); ++i) {
                    const int di = fit_rows[i];
                    sub.X0.row(static_cast<Eigen::Index>(i)) = data->spec.X0.row(di);
                    sub.X1.row(static_cast<Eigen::Index>(i)) = data->spec.X1.row(di);
                    sub.y0[static_cast<Eigen::Index>(i)] = data->spec.y0[di];
                    sub.y1[static_cast<Eigen::Index>(i)] = data->spec.y1[di];
                    const auto& row =
                        frame.rows[static_cast<std::size_t>(data->row_index[static_cast<std::size_t>(di)])];
                    w[static_cast<Eigen::Index>(i)] = mw.w[static_cast<std::size_t>(row.current)];
                }
                try {
                    const SolverReport rep = fit_profiled_nls(sub, opts.rho1_search, w);
                    const Eigen::VectorXd full = detail::assemble_full(data->layout, rep.estimate);
                    for (int di : test_rows) {
                        const double e = detail::second_step_residual(data->spec, data->layout, full,
                                                                      static_cast<Eigen::Index>(di));
                        out.scores[hi] += e * e;
                        ++out.evaluated[hi];
                    }
                } catch (const SingularMatrixError&) {
                    ++out.skipped[hi];
                } catch (const NumericError&) {
                    ++out.skipped[hi];
                }
            }
        }
    }

    // argmin over candidates, scanned in ascending h so ties pick the smaller
    // value; totals are normalized by the evaluated count so candidates that
    // skipped locations are compared on the same footing
    std::vector<std::size_t> order(h_grid.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return h_grid[a] < h_grid[b]; });
    double best = std::numeric_limits<double>::infinity();
    int best_h = 0;
    for (std::size_t oi : order) {
        if (out.evaluated[oi] == 0) continue;
        const double score = out.scores[oi] / static_cast<double>(out.evaluated[oi]);
        if (score < best) {
            best = score;
            best_h = h_grid[oi];
        }
    }
    if (best_h == 0) throw NumericError("cross_validate: no usable candidate in the h grid");
    out.chosen_h = best_h;
    return out;
}

}
