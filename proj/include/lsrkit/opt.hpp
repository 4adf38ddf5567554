#pragma once

#include <chrono>
#include <functional>
#include <numeric>
#include <sstream>

#include "lsrkit/io.hpp"
#include "lsrkit/matrix.hpp"
#include "lsrkit/rng.hpp"

namespace lsrkit {

/// Full-batch loss/gradient oracle: fills grad (resized by the callee) and
/// returns the loss at x.
using GradOracle = std::function<double(const Vec& x, Vec& grad)>;

/// Mini-batch oracle: loss/gradient of batch b at x.
using BatchGradOracle = std::function<double(const Vec& x, Vec& grad, std::size_t b)>;

struct OptRecord {
    std::size_t step;
    double loss;
    double grad_norm;
    double lr;
    double seconds;
};

struct OptTrace {
    std::vector<OptRecord> records;

    void to_csv(std::ostream& os) const {
        os << "step,loss,grad_norm,lr,seconds\n";
        for (const OptRecord& r : records)
            os << r.step << ',' << format_double(r.loss) << ',' << format_double(r.grad_norm) << ','
               << format_double(r.lr) << ',' << format_double(r.seconds) << '\n';
    }
    std::string to_csv() const {
        std::ostringstream os;
        to_csv(os);
        return os.str();
    }
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t max_steps = 1000;
    double plateau_factor = 0.5;
    std::size_t plateau_patience = 20;
    std::size_t record_every = 1;
};

struct LbfgsConfig {
    std::size_t history = 20;
    std::size_t max_steps = 100;
    double wolfe_c1 = 1e-4;
    double wolfe_c2 = 0.9;
    double grad_tol = 0.0;
    std::size_t max_grad_evals = 0;  // 0 = unlimited; counts oracle calls
    std::size_t record_every = 1;
};

namespace detail {

inline double elapsed_seconds(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct AdamState {
    Vec m, v;
    std::size_t t = 0;

    void step(Vec& x, const Vec& g, const AdamConfig& cfg, double lr) {
        if (m.empty()) {
            m.assign(x.size(), 0.0);
            v.assign(x.size(), 0.0);
        }
        ++t;
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
        for (std::size_t i = 0; i < x.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            x[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.eps);
        }
    }
};

struct PlateauScheduler {
    double best = std::numeric_limits<double>::infinity();
    std::size_t stale = 0;

    // Returns the (possibly reduced) learning rate after observing `loss`.
    double observe(double loss, double lr, const AdamConfig& cfg) {
        if (loss < best) {
            best = loss;
            stale = 0;
        } else if (++stale >= cfg.plateau_patience) {
            lr *= cfg.plateau_factor;
            stale = 0;
        }
        return lr;
    }
};

}  // namespace detail

/// Adam with bias correction and a reduce-on-plateau schedule; one oracle
/// evaluation per step. Throws on non-finite loss with the offending step.
inline std::pair<Vec, OptTrace> adam_minimize(const GradOracle& oracle, Vec x, const AdamConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    OptTrace trace;
    detail::AdamState st;
    detail::PlateauScheduler sched;
    double lr = cfg.lr;
    Vec g;
    for (std::size_t step = 0; step < cfg.max_steps; ++step) {
        const double loss = oracle(x, g);
        if (!std::isfinite(loss))
            throw NumericalError("adam_minimize: non-finite loss at step " + std::to_string(step));
        if (step % cfg.record_every == 0 || step + 1 == cfg.max_steps)
            trace.records.push_back({step, loss, norm2(g), lr, detail::elapsed_seconds(t0)});
        st.step(x, g, cfg, lr);
        lr = sched.observe(loss, lr, cfg);
    }
    return {std::move(x), std::move(trace)};
}

/// Epoch-based mini-batch Adam: deterministic per-epoch batch permutation
/// derived from `seed`, plateau scheduling on the epoch-mean loss, one trace
/// record per epoch. `max_steps` in cfg counts epochs here.
inline std::pair<Vec, OptTrace> adam_minimize_epochs(const BatchGradOracle& oracle, std::size_t num_batches,
                                                     Vec x, const AdamConfig& cfg, std::uint64_t seed) {
    if (num_batches == 0) throw DimensionError("adam_minimize_epochs: need at least one batch");
    const auto t0 = std::chrono::steady_clock::now();
    OptTrace trace;
    detail::AdamState st;
    detail::PlateauScheduler sched;
    double lr = cfg.lr;
    Vec g;
    std::vector<std::size_t> order(num_batches);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t epoch = 0; epoch < cfg.max_steps; ++epoch) {
        SplitMix64 rng(seed ^ (0x9e3779b97f4a7c15ULL * (epoch + 1)));
        for (std::size_t i = num_batches; i > 1; --i) std::swap(order[i - 1], order[rng.next_below(i)]);
        double epoch_loss = 0.0, gnorm = 0.0;
        for (std::size_t b : order) {
            const double loss = oracle(x, g, b);
            if (!std::isfinite(loss))
                throw NumericalError("adam_minimize_epochs: non-finite loss at epoch " + std::to_string(epoch) +
                                     ", batch " + std::to_string(b));
            epoch_loss += loss;
            gnorm = norm2(g);
            st.step(x, g, cfg, lr);
        }
        epoch_loss /= static_cast<double>(num_batches);
        lr = sched.observe(epoch_loss, lr, cfg);
        if (epoch % cfg.record_every == 0 || epoch + 1 == cfg.max_steps)
            trace.records.push_back({epoch, epoch_loss, gnorm, lr, detail::elapsed_seconds(t0)});
    }
    return {std::move(x), std::move(trace)};
}

namespace detail {

struct LineSearchResult {
    double alpha = 0.0;
    double loss = 0.0;
    Vec grad;
    bool ok = false;
};

// Strong Wolfe line search (bracket + zoom with bisection), bounded oracle
// evaluations. evals is incremented per oracle call.
inline LineSearchResult strong_wolfe(const GradOracle& oracle, const Vec& x, const Vec& d, double f0,
                                     double dphi0, const LbfgsConfig& cfg, std::size_t& evals) {
    LineSearchResult out;
    const double c1 = cfg.wolfe_c1, c2 = cfg.wolfe_c2;
    auto eval = [&](double a, double& f, Vec& g) {
        Vec xa = x;
        axpy(a, d, xa);
        f = oracle(xa, g);
        ++evals;
    };
    auto zoom = [&](double lo, double flo, double hi) {
        double f;
        Vec g;
        for (int it = 0; it < 25; ++it) {
            const double a = 0.5 * (lo + hi);
            eval(a, f, g);
            const double dphi = dot(g, d);
            if (f > f0 + c1 * a * dphi0 || f >= flo) {
                hi = a;
            } else {
                if (std::abs(dphi) <= -c2 * dphi0) {
                    out = {a, f, std::move(g), true};
                    return;
                }
                if (dphi * (hi - lo) >= 0.0) hi = lo;
                lo = a;
                flo = f;
            }
        }
    };

    double aprev = 0.0, fprev = f0;
    double a = 1.0;
    double f;
    Vec g;
    for (int it = 0; it < 12 && !out.ok; ++it) {
        eval(a, f, g);
        if (!std::isfinite(f) || f > f0 + c1 * a * dphi0 || (it > 0 && f >= fprev)) {
            zoom(aprev, fprev, a);
            break;
        }
        const double dphi = dot(g, d);
        if (std::abs(dphi) <= -c2 * dphi0) {
            out = {a, f, std::move(g), true};
            break;
        }
        if (dphi >= 0.0) {
            zoom(a, f, aprev);
            break;
        }
        aprev = a;
        fprev = f;
        a *= 2.0;
    }
    return out;
}

}  // namespace detail

/// L-BFGS with two-loop recursion and strong-Wolfe line search; on
/// line-search failure the step falls back to backtracking steepest descent.
/// Stops at max_steps, gradient tolerance, or the gradient-evaluation budget.
inline std::pair<Vec, OptTrace> lbfgs_minimize(const GradOracle& oracle, Vec x, const LbfgsConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    OptTrace trace;
    std::size_t evals = 0;
    Vec g;
    double f = oracle(x, g);
    ++evals;
    if (!std::isfinite(f)) throw NumericalError("lbfgs_minimize: non-finite loss at the initial point");

    std::vector<Vec> s_hist, y_hist;
    std::vector<double> rho_hist;
    auto budget_left = [&] { return cfg.max_grad_evals == 0 || evals < cfg.max_grad_evals; };

    for (std::size_t step = 0; step < cfg.max_steps; ++step) {
        const double gnorm = norm2(g);
        if (step % cfg.record_every == 0)
            trace.records.push_back({step, f, gnorm, 1.0, detail::elapsed_seconds(t0)});
        if (gnorm <= cfg.grad_tol || !budget_left()) break;

        // two-loop recursion
        Vec d = g;
        std::vector<double> alpha(s_hist.size());
        for (std::size_t i = s_hist.size(); i-- > 0;) {
            alpha[i] = rho_hist[i] * dot(s_hist[i], d);
            axpy(-alpha[i], y_hist[i], d);
        }
        if (!s_hist.empty()) {
            const double gamma = dot(s_hist.back(), y_hist.back()) / dot(y_hist.back(), y_hist.back());
            for (double& v : d) v *= gamma;
        }
        for (std::size_t i = 0; i < s_hist.size(); ++i) {
            const double beta = rho_hist[i] * dot(y_hist[i], d);
            axpy(alpha[i] - beta, s_hist[i], d);
        }
        for (double& v : d) v = -v;

        double dphi0 = dot(g, d);
        if (!(dphi0 < 0.0)) {  // not a descent direction: restart from steepest descent
            d = g;
            for (double& v : d) v = -v;
            dphi0 = -gnorm * gnorm;
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
        }

        detail::LineSearchResult ls = detail::strong_wolfe(oracle, x, d, f, dphi0, cfg, evals);
        if (!ls.ok) {
            // backtracking Armijo fallback along steepest descent
            Vec sd = g;
            for (double& v : sd) v = -v;
            double a = 1.0 / std::max(1.0, gnorm);
            Vec gn;
            bool accepted = false;
            for (int bt = 0; bt < 40 && budget_left(); ++bt) {
                Vec xa = x;
                axpy(a, sd, xa);
                const double fa = oracle(xa, gn);
                ++evals;
                if (std::isfinite(fa) && fa <= f - cfg.wolfe_c1 * a * gnorm * gnorm) {
                    ls = {a, fa, std::move(gn), true};
                    d = std::move(sd);
                    accepted = true;
                    break;
                }
                a *= 0.5;
            }
            if (!accepted) break;  // no progress possible
        }

        Vec snew = d;
        for (double& v : snew) v *= ls.alpha;
        Vec ynew(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) ynew[i] = ls.grad[i] - g[i];
        const double sy = dot(snew, ynew);
        if (sy > 1e-12 * norm2(snew) * norm2(ynew)) {
            if (s_hist.size() == cfg.history) {
                s_hist.erase(s_hist.begin());
                y_hist.erase(y_hist.begin());
                rho_hist.erase(rho_hist.begin());
            }
            s_hist.push_back(std::move(snew));
            y_hist.push_back(std::move(ynew));
            rho_hist.push_back(1.0 / sy);
        }
        axpy(ls.alpha, d, x);
        f = ls.loss;
        g = std::move(ls.grad);
        if (!std::isfinite(f))
            throw NumericalError("lbfgs_minimize: non-finite loss at step " + std::to_string(step));
    }
    trace.records.push_back({cfg.max_steps, f, norm2(g), 1.0, detail::elapsed_seconds(t0)});
    return {std::move(x), std::move(trace)};
}

// ---------------------------------------------------------------------------
// Krylov least-squares solvers
// ---------------------------------------------------------------------------

using LinOp = std::function<Vec(const Vec&)>;

struct KrylovResult {
    Vec x;
    std::vector<double> residual_trace;  // normal-equation residual norms
    std::size_t iterations = 0;
    bool breakdown = false;
    std::size_t breakdown_iteration = 0;
};

/// CGLS on min ||A x - b||; `a` applies A (n-vector from m-vector), `at`
/// applies A^T. Stops at max_iters or ||A^T r|| <= tol * ||A^T b||.
inline KrylovResult cgls_solve(const LinOp& a, const LinOp& at, const Vec& b, std::size_t xdim,
                               std::size_t max_iters, double tol) {
    KrylovResult out;
    out.x.assign(xdim, 0.0);
    Vec r = b;
    Vec s = at(r);
    const double stop = tol * norm2(s);
    Vec p = s;
    double gamma = dot(s, s);
    for (std::size_t it = 0; it < max_iters; ++it) {
        if (gamma == 0.0) break;  // already optimal
        const Vec q = a(p);
        const double delta = dot(q, q);
        if (delta == 0.0) {
            out.breakdown = true;
            out.breakdown_iteration = it;
            break;
        }
        const double alpha = gamma / delta;
        axpy(alpha, p, out.x);
        axpy(-alpha, q, r);
        s = at(r);
        const double gamma_new = dot(s, s);
        out.residual_trace.push_back(std::sqrt(gamma_new));
        out.iterations = it + 1;
        if (std::sqrt(gamma_new) <= stop) break;
        const double beta = gamma_new / gamma;
        for (std::size_t i = 0; i < p.size(); ++i) p[i] = s[i] + beta * p[i];
        gamma = gamma_new;
    }
    return out;
}

/// LSQR (Golub-Kahan bidiagonalization) on min ||A x - b||, same conventions
/// as cgls_solve.
inline KrylovResult lsqr_solve(const LinOp& a, const LinOp& at, const Vec& b, std::size_t xdim,
                               std::size_t max_iters, double tol) {
    KrylovResult out;
    out.x.assign(xdim, 0.0);
    Vec u = b;
    double beta = norm2(u);
    if (beta == 0.0) return out;
    for (double& v : u) v /= beta;
    Vec v = at(u);
    double alpha = norm2(v);
    if (alpha == 0.0) {
        out.breakdown = true;
        return out;
    }
    for (double& w : v) w /= alpha;
    Vec w = v;
    double phibar = beta, rhobar = alpha;
    const double stop = tol * alpha * beta;  // ||A^T b|| = alpha_1 * beta_1
    for (std::size_t it = 0; it < max_iters; ++it) {
        // bidiagonalization step
        Vec av = a(v);
        for (std::size_t i = 0; i < u.size(); ++i) av[i] -= alpha * u[i];
        beta = norm2(av);
        double atr_norm;
        if (beta > 0.0) {
            u = std::move(av);
            for (double& z : u) z /= beta;
            Vec atu = at(u);
            for (std::size_t i = 0; i < v.size(); ++i) atu[i] -= beta * v[i];
            alpha = norm2(atu);
            if (alpha > 0.0) {
                v = std::move(atu);
                for (double& z : v) z /= alpha;
            }
        }
        // orthogonal transformation
        const double rho = std::hypot(rhobar, beta);
        if (rho == 0.0) {
            out.breakdown = true;
            out.breakdown_iteration = it;
            break;
        }
        const double c = rhobar / rho, s = beta / rho;
        const double theta = s * alpha;
        rhobar = -c * alpha;
        const double phi = c * phibar;
        phibar = s * phibar;
        for (std::size_t i = 0; i < xdim; ++i) {
            out.x[i] += (phi / rho) * w[i];
            w[i] = v[i] - (theta / rho) * w[i];
        }
        atr_norm = phibar * alpha * std::abs(c);
        out.residual_trace.push_back(atr_norm);
        out.iterations = it + 1;
        if (atr_norm <= stop || beta == 0.0 || alpha == 0.0) break;
    }
    return out;
}

}  // namespace lsrkit
