#pragma once

#include <sstream>

#include "lsrkit/lsr.hpp"
#include "lsrkit/opt.hpp"
#include "lsrkit/residual.hpp"

namespace lsrkit {

/// Relative L2 error ||pred - ref|| / ||ref||.
inline double error_vs_reference(const Vec& pred, const Vec& ref) {
    if (pred.size() != ref.size()) throw DimensionError("error_vs_reference: grid mismatch");
    const double rn = norm2(ref);
    if (rn == 0.0) throw NumericalError("error_vs_reference: zero-norm reference");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - ref[i]) * (pred[i] - ref[i]);
    return std::sqrt(s) / rn;
}

struct IlsrConfig {
    std::size_t outer_iters = 5;
    std::size_t align_steps = 300;  // L-BFGS gradient evaluations per outer iteration
    double delta_tau_align = 0.3;
    double delta_tau_lsr = 1e10;
    std::size_t rank = 400;
    std::size_t oversample = 10;
    std::uint64_t seed = 0;
};

struct IlsrTraceRow {
    std::size_t iter;
    std::string stage;  // "lsr" or "align"
    double loss;
    double rel_l2_error;  // NaN when no reference is available
    double kappa;         // NaN for align rows
    double y_norm;        // NaN for align rows
    double seconds;
};

struct IlsrTrace {
    std::vector<IlsrTraceRow> rows;

    void to_csv(std::ostream& os) const {
        os << "iter,stage,loss,rel_l2_error,kappa,y_norm,seconds\n";
        auto cell = [](double v) { return std::isnan(v) ? std::string() : format_double(v); };
        for (const IlsrTraceRow& r : rows)
            os << r.iter << ',' << r.stage << ',' << format_double(r.loss) << ',' << cell(r.rel_l2_error)
               << ',' << cell(r.kappa) << ',' << cell(r.y_norm) << ',' << format_double(r.seconds) << '\n';
    }
    std::string to_csv() const {
        std::ostringstream os;
        to_csv(os);
        return os.str();
    }
};

struct IlsrOutcome {
    Vec theta;          // final network parameters (restartable state)
    LsrResult last;     // the final LSR stage; q_lsr is the deliverable
    IlsrTrace trace;
};

/// Iterative LSR: per outer iteration, (1) one-shot LSR on the pseudo-time
/// residual at delta_tau_lsr (numerically the raw PDE residual) giving q_LSR,
/// then (2) L-BFGS alignment of the network toward q_LSR on the TSONN loss at
/// delta_tau_align. Parameters move only in stage 2. `reference` (optional,
/// interior-grid values) fills the error column.
inline IlsrOutcome ilsr_run(std::shared_ptr<const PdeResidual> base, Vec theta, const IlsrConfig& cfg,
                            const Vec& reference = {}) {
    if (cfg.outer_iters < 1 || cfg.align_steps < 1)
        throw DimensionError("ilsr_run: outer_iters and align_steps must be >= 1");
    const auto t0 = std::chrono::steady_clock::now();
    const double nan = std::numeric_limits<double>::quiet_NaN();
    IlsrOutcome out;
    auto err_of = [&](const Vec& pred) { return reference.empty() ? nan : error_vs_reference(pred, reference); };

    for (std::size_t it = 0; it < cfg.outer_iters; ++it) {
        try {
            // Stage 1: LSR at the pseudo-time limit, anchored at the current state.
            auto lsr_prob = tsonn_wrap(base, TsonnConfig{base->output_at(theta), cfg.delta_tau_lsr});
            SubspaceOptions opt;
            opt.oversample = cfg.oversample;
            // early iterations sit at near-linear states whose Jacobian
            // supports fewer directions than the requested rank
            opt.allow_rank_reduction = true;
            const SubspaceBasis basis =
                build_subspace(*lsr_prob, theta, cfg.rank, cfg.seed + 0x100 * (it + 1), opt);
            LsrResult res = one_shot_lsr(*lsr_prob, theta, basis);
            out.trace.rows.push_back({it + 1, "lsr", res.loss_after, err_of(res.q_lsr), res.kappa, res.y_norm,
                                      detail::elapsed_seconds(t0)});

            // Stage 2: drive the network toward q_LSR.
            auto align_prob = tsonn_wrap(base, TsonnConfig{res.q_lsr, cfg.delta_tau_align});
            GradOracle oracle = [&](const Vec& x, Vec& g) {
                g = align_prob->gradient(x);
                return align_prob->loss(x);
            };
            LbfgsConfig lcfg;
            lcfg.max_steps = cfg.align_steps;
            lcfg.max_grad_evals = cfg.align_steps;
            lcfg.record_every = std::max<std::size_t>(1, cfg.align_steps);
            auto [theta_new, ltrace] = lbfgs_minimize(oracle, std::move(theta), lcfg);
            theta = std::move(theta_new);
            out.trace.rows.push_back({it + 1, "align", ltrace.records.back().loss, err_of(base->output_at(theta)),
                                      nan, nan, detail::elapsed_seconds(t0)});
            out.last = std::move(res);
        } catch (const DimensionError&) {
            throw;
        } catch (const std::exception& e) {
            throw NumericalError("ilsr_run: outer iteration " + std::to_string(it + 1) + ": " + e.what());
        }
    }
    out.theta = std::move(theta);
    return out;
}

/// Crank-Nicolson reference solver for viscous Burgers on [-1,1] x [0,1]
/// with q(x,0) = sin(pi x) and periodic boundary: central differences in x,
/// Picard iteration on the lagged advection coefficient, periodic tridiagonal
/// solves via Sherman-Morrison. Evaluation uses bilinear interpolation.
class BurgersReference {
public:
    BurgersReference(double nu, std::size_t nx = 4096, std::size_t nt = 2048) : nx_(nx), nt_(nt) {
        const double dx = 2.0 / static_cast<double>(nx);
        const double dt = 1.0 / static_cast<double>(nt);
        grid_.assign((nt + 1) * nx, 0.0);
        Vec u(nx);
        for (std::size_t i = 0; i < nx; ++i) u[i] = std::sin(std::numbers::pi * (-1.0 + dx * i));
        std::copy(u.begin(), u.end(), grid_.begin());

        Vec ustar(nx), unew(nx), rhs(nx), lower(nx), diag(nx), upper(nx);
        for (std::size_t n = 0; n < nt; ++n) {
            // explicit half of the operator: N(u) = u u_x - nu u_xx
            for (std::size_t i = 0; i < nx; ++i) {
                const double um = u[(i + nx - 1) % nx], up = u[(i + 1) % nx];
                const double nexp = u[i] * (up - um) / (2 * dx) - nu * (up - 2 * u[i] + um) / (dx * dx);
                rhs[i] = u[i] / dt - 0.5 * nexp;
            }
            ustar = u;
            for (int picard = 0; picard < 12; ++picard) {
                for (std::size_t i = 0; i < nx; ++i) {
                    lower[i] = 0.5 * (-ustar[i] / (2 * dx) - nu / (dx * dx));
                    diag[i] = 1.0 / dt + nu / (dx * dx);
                    upper[i] = 0.5 * (ustar[i] / (2 * dx) - nu / (dx * dx));
                }
                solve_cyclic_tridiag(lower, diag, upper, rhs, unew);
                double change = 0.0;
                for (std::size_t i = 0; i < nx; ++i) change = std::max(change, std::abs(unew[i] - ustar[i]));
                ustar = unew;
                if (change < 1e-13) break;
            }
            u = ustar;
            std::copy(u.begin(), u.end(), grid_.begin() + static_cast<std::ptrdiff_t>((n + 1) * nx));
        }
    }

    double value(double x, double t) const {
        const double dx = 2.0 / static_cast<double>(nx_);
        const double dt = 1.0 / static_cast<double>(nt_);
        double fx = (x + 1.0) / dx;
        double ft = t / dt;
        fx = std::clamp(fx, 0.0, static_cast<double>(nx_));
        ft = std::clamp(ft, 0.0, static_cast<double>(nt_));
        const std::size_t i0 = std::min(static_cast<std::size_t>(fx), nx_ - 1);
        const std::size_t n0 = std::min(static_cast<std::size_t>(ft), nt_ - 1);
        const double ax = fx - static_cast<double>(i0), at = ft - static_cast<double>(n0);
        auto g = [&](std::size_t n, std::size_t i) { return grid_[n * nx_ + (i % nx_)]; };
        const double lo = (1 - ax) * g(n0, i0) + ax * g(n0, i0 + 1);
        const double hi = (1 - ax) * g(n0 + 1, i0) + ax * g(n0 + 1, i0 + 1);
        return (1 - at) * lo + at * hi;
    }

    Vec values_at(const Matrix& points) const {  // rows are (x, t)
        Vec out(points.rows());
        for (std::size_t p = 0; p < points.rows(); ++p) out[p] = value(points(p, 0), points(p, 1));
        return out;
    }

private:
    // Cyclic tridiagonal solve by Sherman-Morrison over two Thomas passes.
    static void solve_cyclic_tridiag(const Vec& a, const Vec& b, const Vec& c, const Vec& d, Vec& x) {
        const std::size_t n = b.size();
        const double gamma = -b[0];
        Vec bb = b;
        bb[0] -= gamma;
        bb[n - 1] -= a[0] * c[n - 1] / gamma;
        Vec y(n), q(n), u(n, 0.0);
        thomas(a, bb, c, d, y);
        u[0] = gamma;
        u[n - 1] = c[n - 1];
        thomas(a, bb, c, u, q);
        const double fact = (y[0] + a[0] * y[n - 1] / gamma) / (1.0 + q[0] + a[0] * q[n - 1] / gamma);
        x.resize(n);
        for (std::size_t i = 0; i < n; ++i) x[i] = y[i] - fact * q[i];
    }

    // Standard Thomas algorithm; a[i] multiplies x[i-1], c[i] multiplies x[i+1].
    static void thomas(const Vec& a, const Vec& b, const Vec& c, const Vec& d, Vec& x) {
        const std::size_t n = b.size();
        Vec cp(n), dp(n);
        cp[0] = c[0] / b[0];
        dp[0] = d[0] / b[0];
        for (std::size_t i = 1; i < n; ++i) {
            const double m = b[i] - a[i] * cp[i - 1];
            cp[i] = c[i] / m;
            dp[i] = (d[i] - a[i] * dp[i - 1]) / m;
        }
        x.resize(n);
        x[n - 1] = dp[n - 1];
        for (std::size_t i = n - 1; i-- > 0;) x[i] = dp[i] - cp[i] * x[i + 1];
    }

    std::size_t nx_, nt_;
    Vec grid_;  // (nt+1) x nx, row n is time level n
};

}  // namespace lsrkit
