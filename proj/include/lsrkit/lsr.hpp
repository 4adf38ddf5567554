#pragma once

#include <chrono>
#include <optional>

#include "lsrkit/linalg.hpp"
#include "lsrkit/net.hpp"
#include "lsrkit/residual.hpp"

namespace lsrkit {

enum class BasisSource { output_space, residual_space };

struct SubspaceBasis {
    Matrix v;                 // m x r; columns orthonormal unless preconditioned
    Vec sigma;                // retained singular values, descending, length r
    bool preconditioned = false;
    BasisSource source = BasisSource::output_space;
};

struct SubspaceOptions {
    std::size_t oversample = 10;
    BasisSource source = BasisSource::output_space;
    bool precondition = false;
    double mask_density = 1.0;  // < 1: restrict the subspace to a random parameter subset
    bool allow_rank_reduction = false;  // cap the rank at the surviving numerical rank
};

struct LsrResult {
    Vec delta_theta;      // V y*, never applied to theta
    Vec y;                // reduced solution
    Vec q_lsr;            // refined prediction over the problem's output vector
    Vec f_lsr;            // refined residual f0 + (AJ) delta
    double loss_before = 0.0;
    double loss_after = 0.0;
    double kappa = 0.0;   // condition number of the reduced matrix
    double y_norm = 0.0;
    double seconds = 0.0;
};

namespace detail {

// Random parameter mask shared by the sketch rows and the basis rows.
inline std::vector<bool> param_mask(std::size_t m, double density, std::uint64_t seed) {
    std::vector<bool> keep(m, true);
    if (density >= 1.0) return keep;
    SplitMix64 rng(seed ^ 0xa5a5a5a5a5a5a5a5ULL);
    for (std::size_t i = 0; i < m; ++i) keep[i] = rng.next_double() < density;
    return keep;
}

inline double kappa_from_r_factor(const Matrix& r) {
    const Vec sig = singular_values_jacobi(r);
    const double smax = sig.front(), smin = sig.back();
    if (!(smin > 1e-15 * smax) || !std::isfinite(smax / smin))
        return std::numeric_limits<double>::infinity();
    return smax / smin;
}

// Shared tail of the one-shot and batch paths once y* is known.
inline LsrResult finish_lsr(const ResidualProblem& prob, const Vec& theta0, const SubspaceBasis& basis,
                            Vec y, const Vec& f0, double kappa,
                            std::chrono::steady_clock::time_point t0) {
    LsrResult out;
    out.delta_theta = matvec(basis.v, y);
    out.q_lsr = prob.output_at(theta0);
    axpy(1.0, prob.j_action(theta0, out.delta_theta), out.q_lsr);
    out.f_lsr = f0;
    axpy(1.0, prob.aj_action(theta0, out.delta_theta), out.f_lsr);
    out.loss_before = 0.5 * dot(f0, f0);
    out.loss_after = 0.5 * dot(out.f_lsr, out.f_lsr);
    out.kappa = kappa;
    out.y_norm = norm2(y);
    out.y = std::move(y);
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

// Singular values and right singular vectors of the k x m projected sketch.
// For the wide (k < m) case, QR of the transpose plus a Jacobi SVD of the
// small triangular factor keeps the trailing directions accurate; a Gram
// route would lose anything below sqrt(eps) * sigma_max.
struct RightSingular {
    Vec sigma;
    Matrix v;  // m x keep
};

inline RightSingular right_singular_basis(const Matrix& b) {
    RightSingular out;
    if (b.rows() >= b.cols()) {
        ThinSvd svd = jacobi_svd(b);
        out.sigma = std::move(svd.sigma);
        out.v = std::move(svd.v);
    } else {
        const QrFactors qr = householder_qr(b.transposed());
        ThinSvd svd = jacobi_svd(qr.r);
        out.sigma = std::move(svd.sigma);
        out.v = matmul(qr.q, svd.u);
    }
    return out;
}

}  // namespace detail

/// Randomized-SVD subspace construction: sketch Y = J Omega (or (AJ) Omega
/// for the residual-space source), orthonormalize, project B = Q^T J (or
/// Q^T (AJ)), take the leading right-singular directions of B as V, and
/// optionally rescale columns by 1/sigma.
inline SubspaceBasis build_subspace(const ResidualProblem& prob, const Vec& theta0, std::size_t rank,
                                    std::uint64_t seed, const SubspaceOptions& opt = {}) {
    const std::size_t m = prob.param_dim();
    const std::size_t k = rank + opt.oversample;
    const std::size_t sketch_dim =
        opt.source == BasisSource::output_space ? prob.output_dim() : prob.residual_dim();
    if (rank < 1) throw DimensionError("build_subspace: rank must be >= 1");
    if (k > sketch_dim)
        throw DimensionError("build_subspace: rank + oversample exceeds the sketch dimension");

    Matrix omega = gaussian_sketch(m, k, seed);
    const std::vector<bool> mask = detail::param_mask(m, opt.mask_density, seed);
    if (opt.mask_density < 1.0)
        for (std::size_t i = 0; i < m; ++i)
            if (!mask[i])
                for (std::size_t j = 0; j < k; ++j) omega(i, j) = 0.0;

    const Matrix y = opt.source == BasisSource::output_space ? prob.j_action_multi(theta0, omega)
                                                             : prob.aj_action_multi(theta0, omega);
    const QrFactors qr = householder_qr(y);
    Matrix b = opt.source == BasisSource::output_space ? prob.jt_action_multi(theta0, qr.q)
                                                       : prob.gt_action_multi(theta0, qr.q);
    if (opt.mask_density < 1.0)
        for (std::size_t i = 0; i < m; ++i)
            if (!mask[i])
                for (std::size_t r = 0; r < k; ++r) b(r, i) = 0.0;

    const detail::RightSingular svd = detail::right_singular_basis(b);
    if (svd.sigma.size() < rank) {
        if (!opt.allow_rank_reduction || svd.sigma.empty())
            throw RankDeficiencyError(svd.sigma.size(),
                                      "build_subspace: only " + std::to_string(svd.sigma.size()) +
                                          " singular values survive truncation; need " + std::to_string(rank));
        rank = svd.sigma.size();  // near-linear state: take what the spectrum supports
    }

    SubspaceBasis basis;
    basis.v = svd.v.left_cols(rank);
    basis.sigma.assign(svd.sigma.begin(), svd.sigma.begin() + static_cast<std::ptrdiff_t>(rank));
    basis.source = opt.source;
    basis.preconditioned = opt.precondition;
    if (opt.precondition)
        for (std::size_t j = 0; j < rank; ++j)
            for (std::size_t i = 0; i < m; ++i) basis.v(i, j) /= basis.sigma[j];
    return basis;
}

/// Algorithm core: assemble the reduced linearized system (AJ)V y = -f0 and
/// solve it by QR. The correction defines a refined predictor; theta0 is
/// never updated.
inline LsrResult one_shot_lsr(const ResidualProblem& prob, const Vec& theta0, const SubspaceBasis& basis) {
    const auto t0 = std::chrono::steady_clock::now();
    const Vec f0 = prob.residual_at(theta0);
    for (double v : f0)
        if (!std::isfinite(v)) throw NumericalError("one_shot_lsr: non-finite residual at theta0");

    const Matrix m = prob.aj_action_multi(theta0, basis.v);  // n x r
    const QrFactors qr = householder_qr(m);
    Vec rhs(f0.size());
    for (std::size_t i = 0; i < f0.size(); ++i) rhs[i] = -f0[i];
    const Vec z = matvec_t(qr.q, rhs);
    Vec y = solve_triangular(qr.r, z);
    return detail::finish_lsr(prob, theta0, basis, std::move(y), f0, detail::kappa_from_r_factor(qr.r), t0);
}

/// Refined predictor at arbitrary inputs: q(x; theta0) + J(x) delta_theta.
inline Matrix lsr_predict_at(const MlpArchitecture& arch, const Vec& theta0, const Vec& delta_theta,
                             const Matrix& x) {
    Matrix q = forward(arch, theta0, x);
    const Matrix t = jvp(arch, theta0, x, delta_theta);
    for (std::size_t i = 0; i < q.size(); ++i) q.data()[i] += t.data()[i];
    return q;
}

namespace detail {

struct BatchRange {
    std::size_t begin, count;
};

inline std::vector<BatchRange> batch_ranges(std::size_t n_points, std::size_t batch_size) {
    if (batch_size == 0) throw DimensionError("batch_lsr: batch_size must be >= 1");
    std::vector<BatchRange> out;
    for (std::size_t b = 0; b < n_points; b += batch_size)
        out.push_back({b, std::min(batch_size, n_points - b)});
    return out;
}

}  // namespace detail

/// Batched subspace construction: per full batch, sketch and orthonormalize
/// locally, then accumulate H += Q_b^T J_b; the basis is the leading
/// right-singular block of H. A final undersized batch is dropped here (and
/// only here).
inline SubspaceBasis build_subspace_batched(const PointSliceable& slicer, const Vec& theta0, std::size_t rank,
                                            std::uint64_t seed, std::size_t batch_size,
                                            const SubspaceOptions& opt = {}) {
    const std::size_t n_points = slicer.num_points();
    const std::size_t k = rank + opt.oversample;
    auto ranges = detail::batch_ranges(n_points, batch_size);
    if (ranges.size() > 1 && ranges.back().count < batch_size) ranges.pop_back();

    Matrix omega;  // lazily sized once the first slice reveals param_dim
    Matrix h;
    std::vector<bool> mask;
    std::size_t m = 0;
    bool any = false;
    for (const auto& range : ranges) {
        const auto part = slicer.slice_points(range.begin, range.count);
        if (part->residual_dim() < k) continue;  // cannot QR an underdetermined sketch
        if (!any) {
            m = part->param_dim();
            omega = gaussian_sketch(m, k, seed);
            mask = detail::param_mask(m, opt.mask_density, seed);
            if (opt.mask_density < 1.0)
                for (std::size_t i = 0; i < m; ++i)
                    if (!mask[i])
                        for (std::size_t j = 0; j < k; ++j) omega(i, j) = 0.0;
            h = Matrix(k, m);
            any = true;
        }
        const Matrix y = opt.source == BasisSource::output_space ? part->j_action_multi(theta0, omega)
                                                                 : part->aj_action_multi(theta0, omega);
        const QrFactors qr = householder_qr(y);
        const Matrix hb = opt.source == BasisSource::output_space ? part->jt_action_multi(theta0, qr.q)
                                                                  : part->gt_action_multi(theta0, qr.q);
        for (std::size_t i = 0; i < h.size(); ++i) h.data()[i] += hb.data()[i];
    }
    if (!any)
        throw InsufficientBatchError("build_subspace_batched: no batch has residual dimension >= rank + oversample");
    if (opt.mask_density < 1.0)
        for (std::size_t i = 0; i < m; ++i)
            if (!mask[i])
                for (std::size_t r = 0; r < k; ++r) h(r, i) = 0.0;

    const detail::RightSingular svd = detail::right_singular_basis(h);
    if (svd.sigma.size() < rank)
        throw RankDeficiencyError(svd.sigma.size(),
                                  "build_subspace_batched: only " + std::to_string(svd.sigma.size()) +
                                      " singular values survive truncation; need " + std::to_string(rank));
    SubspaceBasis basis;
    basis.v = svd.v.left_cols(rank);
    basis.sigma.assign(svd.sigma.begin(), svd.sigma.begin() + static_cast<std::ptrdiff_t>(rank));
    basis.source = opt.source;
    basis.preconditioned = opt.precondition;
    if (opt.precondition)
        for (std::size_t j = 0; j < rank; ++j)
            for (std::size_t i = 0; i < basis.v.rows(); ++i) basis.v(i, j) /= basis.sigma[j];
    return basis;
}

/// Streaming reduced-system assembly with a fixed basis: per batch, stack the
/// running triangular factor above the batch rows, re-factor, and carry the
/// rotated right-hand side. Equivalent to the all-at-once least squares.
inline LsrResult batch_lsr_with_basis(const ResidualProblem& full, const PointSliceable& slicer,
                                      const Vec& theta0, const SubspaceBasis& basis, std::size_t batch_size) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t r = basis.v.cols();
    const auto ranges = detail::batch_ranges(slicer.num_points(), batch_size);

    Matrix rfac(r, r);
    Vec z(r, 0.0);
    for (const auto& range : ranges) {
        const auto part = slicer.slice_points(range.begin, range.count);
        const Matrix yb = part->aj_action_multi(theta0, basis.v);  // n_b x r
        const Vec fb = part->residual_at(theta0);
        const std::size_t nb = yb.rows();
        Matrix stacked(r + nb, r);
        Vec rhs(r + nb);
        for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < r; ++j) stacked(i, j) = rfac(i, j);
            rhs[i] = z[i];
        }
        for (std::size_t i = 0; i < nb; ++i) {
            for (std::size_t j = 0; j < r; ++j) stacked(r + i, j) = yb(i, j);
            rhs[r + i] = -fb[i];
        }
        const QrFactors qr = householder_qr(stacked);
        rfac = qr.r;
        z = matvec_t(qr.q, rhs);
    }

    Vec y = solve_triangular(rfac, z);
    const Vec f0 = full.residual_at(theta0);
    return detail::finish_lsr(full, theta0, basis, std::move(y), f0, detail::kappa_from_r_factor(rfac), t0);
}

/// Full batch-LSR pipeline: batched basis construction followed by streaming
/// assembly and the reduced solve.
inline LsrResult batch_lsr(const ResidualProblem& full, const PointSliceable& slicer, const Vec& theta0,
                           std::size_t rank, std::uint64_t seed, std::size_t batch_size,
                           const SubspaceOptions& opt = {}) {
    const SubspaceBasis basis = build_subspace_batched(slicer, theta0, rank, seed, batch_size, opt);
    return batch_lsr_with_basis(full, slicer, theta0, basis, batch_size);
}

struct RankSweepRow {
    std::size_t rank = 0;
    bool failed = false;
    std::string error;
    double loss_before = 0.0;
    double loss_after = 0.0;
    double test_error = std::numeric_limits<double>::quiet_NaN();
    double kappa = 0.0;
    double y_norm = 0.0;
    double seconds = 0.0;
    std::size_t peak_memory_bytes = 0;
};

struct RankSweepResult {
    std::vector<RankSweepRow> rows;
    std::size_t selected_rank = 0;  // largest rank with monotonically decreasing loss
};

/// Sweep ascending ranks using one basis built at the largest rank; smaller
/// ranks reuse leading-column prefixes. Per-rank failures are recorded, not
/// rethrown. `test_error_fn` (optional) maps a result to a held-out error.
inline RankSweepResult rank_sweep(const ResidualProblem& prob, const Vec& theta0,
                                  const std::vector<std::size_t>& ranks, std::uint64_t seed,
                                  const SubspaceOptions& opt = {},
                                  const std::function<double(const LsrResult&)>& test_error_fn = {}) {
    if (ranks.empty()) throw DimensionError("rank_sweep: need at least one rank");
    for (std::size_t i = 1; i < ranks.size(); ++i)
        if (ranks[i] <= ranks[i - 1]) throw DimensionError("rank_sweep: ranks must be strictly ascending");

    RankSweepResult out;
    const std::size_t rmax = ranks.back();
    SubspaceBasis full;
    try {
        full = build_subspace(prob, theta0, rmax, seed, opt);
    } catch (const std::exception& e) {
        for (std::size_t r : ranks) out.rows.push_back({r, true, e.what()});
        return out;
    }

    const std::size_t m = prob.param_dim(), n = prob.residual_dim(), k = rmax + opt.oversample;
    double prev_loss = std::numeric_limits<double>::infinity();
    bool monotone = true;
    for (std::size_t r : ranks) {
        RankSweepRow row;
        row.rank = r;
        // dominant dense allocations: sketch, sketch image, projected block,
        // basis prefix, reduced matrix
        row.peak_memory_bytes = 8 * (m * k + n * k + k * m + m * r + n * r);
        try {
            SubspaceBasis sub;
            sub.v = full.v.left_cols(r);
            sub.sigma.assign(full.sigma.begin(), full.sigma.begin() + static_cast<std::ptrdiff_t>(r));
            sub.preconditioned = full.preconditioned;
            sub.source = full.source;
            const LsrResult res = one_shot_lsr(prob, theta0, sub);
            row.loss_before = res.loss_before;
            row.loss_after = res.loss_after;
            row.kappa = res.kappa;
            row.y_norm = res.y_norm;
            row.seconds = res.seconds;
            if (test_error_fn) row.test_error = test_error_fn(res);
            if (monotone && res.loss_after <= prev_loss) {
                out.selected_rank = r;
                prev_loss = res.loss_after;
            } else {
                monotone = false;
            }
        } catch (const std::exception& e) {
            row.failed = true;
            row.error = e.what();
            monotone = false;
        }
        out.rows.push_back(std::move(row));
    }
    return out;
}

}  // namespace lsrkit
