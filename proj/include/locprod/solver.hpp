#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "locprod/error.hpp"

namespace locprod {

struct SolverReport {
    Eigen::VectorXd estimate;
    double weighted_rss = 0.0;
    int iterations = 0;
    bool converged = false;
    double gradient_norm = 0.0;   // inf-norm of the weighted-RSS gradient
    double gradient_tol = 0.0;    // converged implies gradient_norm <= gradient_tol
    double rcond = 0.0;           // reciprocal condition estimate of the final design
    std::string message;
};

inline double weighted_mean(const std::vector<double>& values, const std::vector<double>& weights) {
    if (values.size() != weights.size())
        throw std::invalid_argument("weighted_mean: length mismatch");
    double sw = 0.0, swv = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        sw += weights[i];
        swv += weights[i] * values[i];
    }
    if (!(sw > 0.0)) throw std::invalid_argument("weighted_mean: total weight must be positive");
    return swv / sw;
}

inline double weighted_mean(const Eigen::VectorXd& values, const Eigen::VectorXd& weights) {
    if (values.size() != weights.size())
        throw std::invalid_argument("weighted_mean: length mismatch");
    const double sw = weights.sum();
    if (!(sw > 0.0)) throw std::invalid_argument("weighted_mean: total weight must be positive");
    return weights.dot(values) / sw;
}

// Reusable storage for the sqrt(w)-scaled system; avoids reallocation in
// profiling loops.
struct LinearSolveWorkspace {
    Eigen::MatrixXd A;
    Eigen::VectorXd b;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr;
};

// Minimizes sum_i w_i (y_i - x_i' beta)^2 through a column-pivoted
// Householder QR of the sqrt(w)-scaled system. Rank deficiency is
// diagnosed, not assumed away.
inline Eigen::VectorXd solve_weighted_linear(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                             const Eigen::VectorXd& w,
                                             LinearSolveWorkspace* ws = nullptr,
                                             double* rcond_out = nullptr) {
    if (X.rows() != y.size() || X.rows() != w.size())
        throw std::invalid_argument("solve_weighted_linear: dimension mismatch");
    if (X.rows() < X.cols())
        throw SingularMatrixError("solve_weighted_linear: fewer rows than parameters", 0.0);

    LinearSolveWorkspace local;
    LinearSolveWorkspace& s = ws ? *ws : local;
    s.A.resizeLike(X);
    s.b.resizeLike(y);
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        if (w[i] < 0.0) throw std::invalid_argument("solve_weighted_linear: negative weight");
        const double sw = std::sqrt(w[i]);
        s.A.row(i) = X.row(i) * sw;
        s.b[i] = y[i] * sw;
    }
    s.qr.compute(s.A);
    const auto& R = s.qr.matrixR();
    const double r00 = std::abs(R(0, 0));
    const Eigen::Index p = X.cols();
    const double rpp = std::abs(R(p - 1, p - 1));
    const double rcond = r00 > 0.0 ? rpp / r00 : 0.0;
    if (rcond_out) *rcond_out = rcond;
    if (s.qr.rank() < p || !(rcond > 1e-13))
        throw SingularMatrixError("solve_weighted_linear: rank-deficient weighted design", rcond);
    return s.qr.solve(s.b);
}

// Second-step shape shared by the Cobb-Douglas and translog models: for a
// fixed rho1 the residual (y0 - rho1*y1) - (X0 - rho1*X1)*beta is linear
// in beta.
struct ProfiledBilinearSpec {
    Eigen::MatrixXd X0;  // rows x p_lin, regressors at t
    Eigen::MatrixXd X1;  // rows x p_lin, lagged pieces multiplied by rho1
    Eigen::VectorXd y0;  // response at t
    Eigen::VectorXd y1;  // response offset multiplied by rho1 (nu*)
};

struct Rho1Search {
    double lo = -0.2;
    double hi = 1.2;
    double tol = 1e-7;
};

namespace detail {

struct ProfileEval {
    double rss = std::numeric_limits<double>::infinity();
    bool ok = false;
    double rcond = 0.0;
};

inline ProfileEval eval_profile(const ProfiledBilinearSpec& spec, const Eigen::VectorXd& w,
                                double rho1, Eigen::MatrixXd& X, Eigen::VectorXd& y,
                                Eigen::VectorXd& beta, LinearSolveWorkspace& ws) {
    X = spec.X0 - rho1 * spec.X1;
    y = spec.y0 - rho1 * spec.y1;
    ProfileEval ev;
    try {
        beta = solve_weighted_linear(X, y, w, &ws, &ev.rcond);
    } catch (const SingularMatrixError&) {
        return ev;
    }
    const Eigen::VectorXd r = y - X * beta;
    ev.rss = r.cwiseProduct(r).dot(w);
    ev.ok = std::isfinite(ev.rss);
    if (!ev.ok) ev.rss = std::numeric_limits<double>::infinity();
    return ev;
}

}  // namespace detail

// Profiles the weighted RSS over rho1 (coarse sweep + golden-section
// refinement); the inner problem is linear and solved exactly. Estimate
// layout: [beta..., rho1].
inline SolverReport fit_profiled_nls(const ProfiledBilinearSpec& spec, const Rho1Search& search,
                                     const Eigen::VectorXd& weights) {
    const Eigen::Index p_lin = spec.X0.cols();
    if (spec.X1.cols() != p_lin || spec.y0.size() != spec.X0.rows() ||
        spec.y1.size() != spec.X0.rows() || weights.size() != spec.X0.rows())
        throw std::invalid_argument("fit_profiled_nls: dimension mismatch");
    if (spec.X0.rows() < p_lin + 1)
        throw SingularMatrixError("fit_profiled_nls: fewer rows than parameters", 0.0);
    if (!(search.hi > search.lo) || !(search.tol > 0.0))
        throw std::invalid_argument("fit_profiled_nls: invalid search bracket");

    Eigen::MatrixXd X(spec.X0.rows(), p_lin);
    Eigen::VectorXd y(spec.y0.size());
    Eigen::VectorXd beta(p_lin);
    LinearSolveWorkspace ws;
    int evals = 0;

    auto q = [&](double rho1) {
        ++evals;
        return detail::eval_profile(spec, weights, rho1, X, y, beta, ws).rss;
    };

    // coarse presweep guards against a multimodal profile
    constexpr int kPre = 15;
    double best_x = search.lo;
    double best_q = std::numeric_limits<double>::infinity();
    const double step = (search.hi - search.lo) / (kPre - 1);
    for (int i = 0; i < kPre; ++i) {
        const double x = search.lo + step * i;
        const double qx = q(x);
        if (qx < best_q) {
            best_q = qx;
            best_x = x;
        }
    }
    if (!std::isfinite(best_q))
        throw NumericError("fit_profiled_nls: profile objective undefined on the whole bracket");

    double a = std::max(search.lo, best_x - step);
    double b = std::min(search.hi, best_x + step);
    constexpr double kInvPhi = 0.6180339887498949;
    double x1 = b - kInvPhi * (b - a);
    double x2 = a + kInvPhi * (b - a);
    double q1 = q(x1), q2 = q(x2);
    while (b - a > search.tol) {
        if (q1 <= q2) {
            b = x2;
            x2 = x1;
            q2 = q1;
            x1 = b - kInvPhi * (b - a);
            q1 = q(x1);
        } else {
            a = x1;
            x1 = x2;
            q1 = q2;
            x2 = a + kInvPhi * (b - a);
            q2 = q(x2);
        }
        if (q1 < best_q) {
            best_q = q1;
            best_x = x1;
        }
        if (q2 < best_q) {
            best_q = q2;
            best_x = x2;
        }
    }

    // final inner solve at the minimizer
    const auto fin = detail::eval_profile(spec, weights, best_x, X, y, beta, ws);
    if (!fin.ok)
        throw SingularMatrixError("fit_profiled_nls: singular inner system at profile minimum",
                                  fin.rcond);

    SolverReport rep;
    rep.estimate.resize(p_lin + 1);
    rep.estimate.head(p_lin) = beta;
    rep.estimate[p_lin] = best_x;
    rep.weighted_rss = fin.rss;
    rep.iterations = evals;
    rep.rcond = fin.rcond;

    // profile curvature around the minimizer gives the gradient scale the
    // bracket tolerance can resolve
    const double delta = std::max(1e-4, 10.0 * search.tol);
    const double qm = q(std::max(search.lo, best_x - delta));
    const double qp = q(std::min(search.hi, best_x + delta));
    rep.gradient_norm = std::abs(qp - qm) / (2.0 * delta);
    const double curvature = std::abs(qp - 2.0 * fin.rss + qm) / (delta * delta);
    rep.gradient_tol = std::max(1e-8 * std::max(1.0, fin.rss), 2.0 * curvature * search.tol);

    const bool at_boundary = (best_x - search.lo <= search.tol) || (search.hi - best_x <= search.tol);
    if (at_boundary) {
        rep.converged = false;
        rep.message = "profile minimum at bracket boundary";
    } else {
        rep.converged = rep.gradient_norm <= rep.gradient_tol;
        if (!rep.converged) rep.message = "gradient above tolerance at profile minimum";
    }
    return rep;
}

// Residual model with caller-supplied analytic Jacobian.
struct WeightedObjectiveSpec {
    Eigen::Index n_params = 0;
    Eigen::Index n_rows = 0;
    std::function<void(const Eigen::VectorXd&, Eigen::VectorXd&)> residual;
    std::function<void(const Eigen::VectorXd&, Eigen::MatrixXd&)> jacobian;
};

struct GaussNewtonOptions {
    int max_iter = 200;
    double rss_tol = 1e-10;   // relative RSS change
    double grad_tol = 1e-8;   // scaled by max(1, RSS)
    double lambda0 = 1e-8;    // Levenberg damping seed
};

// Levenberg-damped Gauss-Newton on the weighted residuals.
inline SolverReport fit_gauss_newton(const WeightedObjectiveSpec& spec, const Eigen::VectorXd& init,
                                     const Eigen::VectorXd& weights,
                                     const GaussNewtonOptions& opt = {}) {
    if (init.size() != spec.n_params)
        throw std::invalid_argument("fit_gauss_newton: init size mismatch");
    if (weights.size() != spec.n_rows)
        throw std::invalid_argument("fit_gauss_newton: weights size mismatch");

    Eigen::VectorXd theta = init;
    Eigen::VectorXd r(spec.n_rows), r_try(spec.n_rows);
    Eigen::MatrixXd J(spec.n_rows, spec.n_params);

    auto rss_of = [&](const Eigen::VectorXd& res) {
        const double v = res.cwiseProduct(res).dot(weights);
        return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
    };

    spec.residual(theta, r);
    double rss = rss_of(r);
    SolverReport rep;
    if (!std::isfinite(rss)) {
        rep.estimate = theta;
        rep.weighted_rss = rss;
        rep.message = "non-finite objective at initial point";
        return rep;
    }

    double lambda = opt.lambda0;
    int iter = 0;
    bool done = false;
    while (iter < opt.max_iter && !done) {
        ++iter;
        spec.jacobian(theta, J);
        const Eigen::MatrixXd JtW = J.transpose() * weights.asDiagonal();
        const Eigen::VectorXd g = 2.0 * (JtW * r);  // gradient of weighted RSS
        rep.gradient_norm = g.lpNorm<Eigen::Infinity>();
        rep.gradient_tol = opt.grad_tol * std::max(1.0, rss);
        if (rep.gradient_norm <= rep.gradient_tol) {
            rep.converged = true;
            break;
        }

        const Eigen::MatrixXd JtWJ = JtW * J;
        bool accepted = false;
        while (lambda < 1e14) {
            Eigen::MatrixXd H = JtWJ;
            for (Eigen::Index d = 0; d < H.rows(); ++d)
                H(d, d) += lambda * std::max(JtWJ(d, d), 1e-12);
            const Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
            if (ldlt.info() != Eigen::Success) {
                lambda *= 10.0;
                continue;
            }
            const Eigen::VectorXd delta = ldlt.solve(-(JtW * r));
            const Eigen::VectorXd theta_try = theta + delta;
            spec.residual(theta_try, r_try);
            const double rss_try = rss_of(r_try);
            if (rss_try < rss) {
                const double drop = rss - rss_try;
                theta = theta_try;
                r.swap(r_try);
                rss = rss_try;
                lambda = std::max(lambda * 0.3, 1e-12);
                accepted = true;
                if (drop <= opt.rss_tol * std::max(1.0, rss)) {
                    // stalled on RSS: report convergence only if the gradient
                    // criterion also holds at the new point
                    spec.jacobian(theta, J);
                    const Eigen::VectorXd g2 =
                        2.0 * (J.transpose() * weights.asDiagonal() * r);
                    rep.gradient_norm = g2.lpNorm<Eigen::Infinity>();
                    rep.gradient_tol = opt.grad_tol * std::max(1.0, rss);
                    rep.converged = rep.gradient_norm <= rep.gradient_tol;
                    if (!rep.converged) rep.message = "RSS stalled above gradient tolerance";
                    done = true;
                }
                break;
            }
            lambda *= 3.0;
        }
        if (!accepted) {
            rep.message = "damping exhausted without descent";
            break;
        }
    }
    if (!rep.converged && rep.message.empty())
        rep.message = "no convergence within max_iter";

    rep.estimate = theta;
    rep.weighted_rss = rss;
    rep.iterations = iter;
    return rep;
}

}
