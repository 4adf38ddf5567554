#pragma once

#include <optional>
#include <sstream>

#include "lsrkit/lsr.hpp"
#include "lsrkit/opt.hpp"
#include "lsrkit/residual.hpp"

namespace lsrkit {

/// The linearized least-squares objective 0.5 ||A y + f0||^2 at a fixed
/// state, exposed through actions plus an optional dense materialization
/// (always present in the reduced mode).
struct LinearizedProblem {
    LinOp apply;    // y -> A y
    LinOp apply_t;  // u -> A^T u
    Vec f0;
    std::size_t dim_in = 0;
    std::size_t dim_out = 0;
    std::optional<Matrix> dense;

    double loss(const Vec& y) const {
        Vec r = apply(y);
        axpy(1.0, f0, r);
        return 0.5 * dot(r, r);
    }
    Vec gradient(const Vec& y) const {
        Vec r = apply(y);
        axpy(1.0, f0, r);
        return apply_t(r);
    }
    Vec rhs() const {  // right-hand side of A y = -f0
        Vec b(f0.size());
        for (std::size_t i = 0; i < b.size(); ++i) b[i] = -f0[i];
        return b;
    }
};

/// Reduced-space linearization: materializes M = (AJ)V.
inline LinearizedProblem make_reduced_linearization(const ResidualProblem& prob, const Vec& theta0,
                                                    const SubspaceBasis& basis) {
    LinearizedProblem lp;
    Matrix m = prob.aj_action_multi(theta0, basis.v);
    lp.dim_in = m.cols();
    lp.dim_out = m.rows();
    lp.f0 = prob.residual_at(theta0);
    auto shared = std::make_shared<Matrix>(std::move(m));
    lp.dense = *shared;
    lp.apply = [shared](const Vec& y) { return matvec(*shared, y); };
    lp.apply_t = [shared](const Vec& u) { return matvec_t(*shared, u); };
    return lp;
}

/// Full-space linearization over delta-theta; actions only, no dense matrix.
inline LinearizedProblem make_full_linearization(std::shared_ptr<const ResidualProblem> prob, Vec theta0) {
    LinearizedProblem lp;
    lp.dim_in = prob->param_dim();
    lp.dim_out = prob->residual_dim();
    lp.f0 = prob->residual_at(theta0);
    auto th = std::make_shared<Vec>(std::move(theta0));
    lp.apply = [prob, th](const Vec& v) { return prob->aj_action(*th, v); };
    lp.apply_t = [prob, th](const Vec& u) { return prob->gt_action(*th, u); };
    return lp;
}

struct SolverBudgets {
    std::size_t adam_steps = 100000;
    double adam_lr = 1e-3;
    std::size_t lbfgs_steps = 2000;
    std::size_t cgls_iters = 2000;
    std::size_t lsqr_iters = 2000;
};

struct SolverRow {
    std::string solver;
    std::size_t iterations = 0;
    double final_loss = std::numeric_limits<double>::quiet_NaN();
    bool failed = false;
    std::string error;
};

/// Run Adam, L-BFGS, CGLS and LSQR from y = 0 on the shared linearized
/// objective, then append the direct QR solve. Per-solver failures are
/// recorded in their rows.
inline std::vector<SolverRow> compare_solvers(const LinearizedProblem& lp, const SolverBudgets& budgets) {
    std::vector<SolverRow> rows;
    const Vec y0(lp.dim_in, 0.0);
    GradOracle oracle = [&lp](const Vec& y, Vec& g) {
        g = lp.gradient(y);
        return lp.loss(y);
    };

    auto guarded = [&rows](const std::string& name, std::size_t iters, auto&& fn) {
        SolverRow row{name, iters};
        try {
            row.final_loss = fn();
        } catch (const std::exception& e) {
            row.failed = true;
            row.error = e.what();
        }
        rows.push_back(std::move(row));
    };

    guarded("adam", budgets.adam_steps, [&] {
        AdamConfig cfg;
        cfg.lr = budgets.adam_lr;
        cfg.max_steps = budgets.adam_steps;
        cfg.record_every = std::max<std::size_t>(1, budgets.adam_steps / 100);
        auto [y, trace] = adam_minimize(oracle, y0, cfg);
        return lp.loss(y);
    });
    guarded("lbfgs", budgets.lbfgs_steps, [&] {
        LbfgsConfig cfg;
        cfg.max_steps = budgets.lbfgs_steps;
        cfg.record_every = std::max<std::size_t>(1, budgets.lbfgs_steps / 100);
        auto [y, trace] = lbfgs_minimize(oracle, y0, cfg);
        return lp.loss(y);
    });
    guarded("cgls", budgets.cgls_iters, [&] {
        const KrylovResult res = cgls_solve(lp.apply, lp.apply_t, lp.rhs(), lp.dim_in, budgets.cgls_iters, 0.0);
        return lp.loss(res.x);
    });
    guarded("lsqr", budgets.lsqr_iters, [&] {
        const KrylovResult res = lsqr_solve(lp.apply, lp.apply_t, lp.rhs(), lp.dim_in, budgets.lsqr_iters, 0.0);
        return lp.loss(res.x);
    });
    guarded("direct", 0, [&] {
        if (!lp.dense) throw NumericalError("compare_solvers: direct solve needs a dense materialization");
        return lp.loss(lstsq_qr(*lp.dense, lp.rhs()));
    });
    return rows;
}

struct DirectionScanRow {
    double alpha;
    double nonlinear_loss;
    double linearized_loss;
    bool finite = true;
};

/// Default alpha grid: 0, two negative probes, and 33 log-spaced points on
/// [1e-4, 2].
inline std::vector<double> default_scan_alphas() {
    std::vector<double> a = {0.0, -1e-2, -1.0};
    const double lo = std::log(1e-4), hi = std::log(2.0);
    for (int i = 0; i < 33; ++i) a.push_back(std::exp(lo + (hi - lo) * i / 32.0));
    return a;
}

/// Nonlinear loss along theta0 + alpha * delta versus the linearized model
/// 0.5 ||f0 + alpha g1||^2 with g1 = (AJ) delta computed once. The squared
/// norm is evaluated directly (not via the expanded quadratic coefficients)
/// so it stays accurate near the minimizer, where the terms cancel.
inline std::vector<DirectionScanRow> direction_scan(const ResidualProblem& prob, const Vec& theta0,
                                                    const Vec& delta, const std::vector<double>& alphas) {
    const Vec f0 = prob.residual_at(theta0);
    const Vec g1 = prob.aj_action(theta0, delta);
    std::vector<DirectionScanRow> rows;
    for (double a : alphas) {
        DirectionScanRow row;
        row.alpha = a;
        double lin = 0.0;
        for (std::size_t i = 0; i < f0.size(); ++i) {
            const double fi = f0[i] + a * g1[i];
            lin += fi * fi;
        }
        row.linearized_loss = 0.5 * lin;
        Vec th = theta0;
        axpy(a, delta, th);
        double nl = 0.0;
        try {
            const Vec f = prob.residual_at(th);
            nl = 0.5 * dot(f, f);
        } catch (const std::exception&) {
            nl = std::numeric_limits<double>::quiet_NaN();
        }
        row.nonlinear_loss = nl;
        row.finite = std::isfinite(nl);
        rows.push_back(row);
    }
    return rows;
}

struct StationarityReport {
    double residual_norm;      // ||f(theta0)||
    double grad_norm;          // ||G^T f||
    double correction_effect;  // ||(AJ) delta*||
    double loss_before;
    double loss_after;
};

/// Probe whether theta0 is a stationary point of the squared-residual loss
/// and whether one-shot LSR can move the linearized prediction there.
inline StationarityReport stationarity_probe(const ResidualProblem& prob, const Vec& theta0,
                                             const SubspaceBasis& basis) {
    StationarityReport rep{};
    const Vec f0 = prob.residual_at(theta0);
    rep.residual_norm = norm2(f0);
    rep.grad_norm = norm2(prob.gt_action(theta0, f0));
    const LsrResult res = one_shot_lsr(prob, theta0, basis);
    rep.correction_effect = norm2(prob.aj_action(theta0, res.delta_theta));
    rep.loss_before = res.loss_before;
    rep.loss_after = res.loss_after;
    return rep;
}

struct ScalarDemoRow {
    double theta0;
    double q;            // q(theta0) = (theta0 - 1)^2 + 2
    double dq;           // q'(theta0) = 2 (theta0 - 1)
    double delta_star;   // linearized correction toward the target (0 if dq = 0)
    double lin_pred;     // q + dq * delta_star
    double lin_residual; // |lin_pred - target|
};

struct ScalarDemoReport {
    double target = 1.0;
    double min_q = 2.0;   // attained at theta = 1
    bool feasible = false;  // min_q > target: the nonlinear model cannot reach it
    std::vector<ScalarDemoRow> rows;

    std::string to_csv() const {
        std::ostringstream os;
        os << "theta0,q,dq,delta_star,lin_pred,lin_residual\n";
        for (const ScalarDemoRow& r : rows)
            os << format_double(r.theta0) << ',' << format_double(r.q) << ',' << format_double(r.dq) << ','
               << format_double(r.delta_star) << ',' << format_double(r.lin_pred) << ','
               << format_double(r.lin_residual) << '\n';
        return os.str();
    }
};

/// The one-parameter illustration q(theta) = (theta - 1)^2 + 2 with the
/// infeasible target q* = 1: linearization reaches the target exactly away
/// from the stationary point and has zero effect at theta0 = 1.
inline ScalarDemoReport scalar_demo() {
    ScalarDemoReport rep;
    for (double theta0 : {0.0, 0.5, 2.0, 1.0}) {
        ScalarDemoRow row;
        row.theta0 = theta0;
        row.q = (theta0 - 1.0) * (theta0 - 1.0) + 2.0;
        row.dq = 2.0 * (theta0 - 1.0);
        row.delta_star = row.dq == 0.0 ? 0.0 : (rep.target - row.q) / row.dq;
        row.lin_pred = row.q + row.dq * row.delta_star;
        row.lin_residual = std::abs(row.lin_pred - rep.target);
        rep.rows.push_back(row);
    }
    rep.feasible = rep.min_q <= rep.target;
    return rep;
}

/// Subspace modes: the linear response J v_i on an evaluation grid for each
/// requested basis column, normalized to unit max-absolute value.
inline Matrix subspace_modes(const MlpArchitecture& arch, const Vec& theta0, const SubspaceBasis& basis,
                             const Matrix& x, const std::vector<std::size_t>& indices) {
    for (std::size_t idx : indices)
        if (idx >= basis.v.cols()) throw DimensionError("subspace_modes: index out of range");
    const std::size_t n = x.rows() * arch.output_dim;
    Matrix modes(n, indices.size());
    for (std::size_t c = 0; c < indices.size(); ++c) {
        const Matrix t = jvp(arch, theta0, x, basis.v.col(indices[c]));
        double mx = 0.0;
        for (double v : t.data()) mx = std::max(mx, std::abs(v));
        const double scale = mx == 0.0 ? 1.0 : 1.0 / mx;
        for (std::size_t i = 0; i < n; ++i) modes(i, c) = t.data()[i] * scale;
    }
    return modes;
}

/// Sign changes along a sampled 1-d mode; the oscillation proxy for the
/// low-to-high frequency trend across mode indices.
inline std::size_t zero_crossings(std::span<const double> values, double eps = 1e-9) {
    std::size_t count = 0;
    double prev = 0.0;
    bool have = false;
    for (double v : values) {
        if (std::abs(v) <= eps) continue;
        if (have && ((prev > 0) != (v > 0))) ++count;
        prev = v;
        have = true;
    }
    return count;
}

}  // namespace lsrkit
