#pragma once

#include <functional>
#include <memory>
#include <numbers>

#include "lsrkit/linalg.hpp"
#include "lsrkit/matrix.hpp"
#include "lsrkit/net.hpp"

namespace lsrkit {

/// A stacked residual f(theta) with Jacobian actions. The residual Jacobian
/// factors as G = A J with J the output-parameter Jacobian and A the
/// residual-output derivative; only actions of J, J^T, G and G^T are exposed.
class ResidualProblem {
public:
    virtual ~ResidualProblem() = default;

    virtual std::size_t residual_dim() const = 0;
    virtual std::size_t param_dim() const = 0;
    virtual std::size_t output_dim() const = 0;

    virtual Vec residual_at(const Vec& theta) const = 0;
    virtual Vec output_at(const Vec& theta) const = 0;
    virtual Vec j_action(const Vec& theta, const Vec& v) const = 0;
    virtual Vec jt_action(const Vec& theta, const Vec& u) const = 0;
    virtual Vec aj_action(const Vec& theta, const Vec& v) const = 0;
    virtual Vec gt_action(const Vec& theta, const Vec& u) const = 0;

    // Column-block variants; defaults fall back to per-column calls.
    virtual Matrix j_action_multi(const Vec& theta, const Matrix& cols) const {
        Matrix y(output_dim(), cols.cols());
        for (std::size_t c = 0; c < cols.cols(); ++c) {
            const Vec yc = j_action(theta, cols.col(c));
            for (std::size_t i = 0; i < yc.size(); ++i) y(i, c) = yc[i];
        }
        return y;
    }
    virtual Matrix aj_action_multi(const Vec& theta, const Matrix& cols) const {
        Matrix y(residual_dim(), cols.cols());
        for (std::size_t c = 0; c < cols.cols(); ++c) {
            const Vec yc = aj_action(theta, cols.col(c));
            for (std::size_t i = 0; i < yc.size(); ++i) y(i, c) = yc[i];
        }
        return y;
    }
    /// Returns K x m (one cotangent row per column of ucols).
    virtual Matrix jt_action_multi(const Vec& theta, const Matrix& ucols) const {
        Matrix g(ucols.cols(), param_dim());
        for (std::size_t c = 0; c < ucols.cols(); ++c) {
            const Vec gc = jt_action(theta, ucols.col(c));
            for (std::size_t i = 0; i < gc.size(); ++i) g(c, i) = gc[i];
        }
        return g;
    }
    virtual Matrix gt_action_multi(const Vec& theta, const Matrix& ucols) const {
        Matrix g(ucols.cols(), param_dim());
        for (std::size_t c = 0; c < ucols.cols(); ++c) {
            const Vec gc = gt_action(theta, ucols.col(c));
            for (std::size_t i = 0; i < gc.size(); ++i) g(c, i) = gc[i];
        }
        return g;
    }

    double loss(const Vec& theta) const {
        const Vec f = residual_at(theta);
        return 0.5 * dot(f, f);
    }
    /// Gradient of 0.5 ||f||^2, i.e. G^T f.
    Vec gradient(const Vec& theta) const { return gt_action(theta, residual_at(theta)); }
};

/// Problems whose residual rows are grouped per data point, enabling batch
/// (streaming) LSR assembly over point ranges.
class PointSliceable {
public:
    virtual ~PointSliceable() = default;
    virtual std::size_t num_points() const = 0;
    virtual std::shared_ptr<ResidualProblem> slice_points(std::size_t begin, std::size_t count) const = 0;
};

/// f(theta) = A theta - b. Used for oracle checks and the scalar lab demos.
class GenericLinearResidual final : public ResidualProblem {
public:
    GenericLinearResidual(Matrix a, Vec b) : a_(std::move(a)), b_(std::move(b)) {
        if (a_.rows() != b_.size()) throw DimensionError("GenericLinearResidual: shape mismatch");
    }

    std::size_t residual_dim() const override { return a_.rows(); }
    std::size_t param_dim() const override { return a_.cols(); }
    std::size_t output_dim() const override { return a_.rows(); }

    Vec residual_at(const Vec& theta) const override {
        Vec f = matvec(a_, theta);
        for (std::size_t i = 0; i < f.size(); ++i) f[i] -= b_[i];
        return f;
    }
    Vec output_at(const Vec& theta) const override { return matvec(a_, theta); }
    Vec j_action(const Vec&, const Vec& v) const override { return matvec(a_, v); }
    Vec jt_action(const Vec&, const Vec& u) const override { return matvec_t(a_, u); }
    Vec aj_action(const Vec& theta, const Vec& v) const override { return j_action(theta, v); }
    Vec gt_action(const Vec& theta, const Vec& u) const override { return jt_action(theta, u); }

    const Matrix& matrix() const { return a_; }
    const Vec& rhs() const { return b_; }

private:
    Matrix a_;
    Vec b_;
};

/// Supervised data misfit: residual = q(x; theta) - targets, A = I.
class SupervisedResidual final : public ResidualProblem, public PointSliceable {
public:
    SupervisedResidual(MlpArchitecture arch, Matrix x, Matrix targets)
        : arch_(std::move(arch)), x_(std::move(x)), targets_(std::move(targets)) {
        if (x_.rows() != targets_.rows() || targets_.cols() != arch_.output_dim)
            throw DimensionError("SupervisedResidual: batch shape mismatch");
    }

    std::size_t residual_dim() const override { return x_.rows() * arch_.output_dim; }
    std::size_t param_dim() const override { return arch_.param_count(); }
    std::size_t output_dim() const override { return residual_dim(); }

    Vec residual_at(const Vec& theta) const override {
        Matrix q = forward(arch_, theta, x_);
        Vec f(residual_dim());
        for (std::size_t p = 0; p < x_.rows(); ++p)
            for (std::size_t o = 0; o < arch_.output_dim; ++o)
                f[p * arch_.output_dim + o] = q(p, o) - targets_(p, o);
        return f;
    }
    Vec output_at(const Vec& theta) const override {
        Matrix q = forward(arch_, theta, x_);
        return q.data();
    }
    Vec j_action(const Vec& theta, const Vec& v) const override {
        return jvp(arch_, theta, x_, v).data();
    }
    Vec jt_action(const Vec& theta, const Vec& u) const override {
        Matrix ub(x_.rows(), arch_.output_dim, u);
        return vjp(arch_, theta, x_, ub);
    }
    Vec aj_action(const Vec& theta, const Vec& v) const override { return j_action(theta, v); }
    Vec gt_action(const Vec& theta, const Vec& u) const override { return jt_action(theta, u); }

    Matrix j_action_multi(const Vec& theta, const Matrix& cols) const override {
        return jvp_multi(arch_, theta, x_, cols);
    }
    Matrix aj_action_multi(const Vec& theta, const Matrix& cols) const override {
        return jvp_multi(arch_, theta, x_, cols);
    }
    Matrix jt_action_multi(const Vec& theta, const Matrix& ucols) const override {
        return vjp_multi(arch_, theta, x_, ucols);
    }
    Matrix gt_action_multi(const Vec& theta, const Matrix& ucols) const override {
        return vjp_multi(arch_, theta, x_, ucols);
    }

    std::size_t num_points() const override { return x_.rows(); }
    std::shared_ptr<ResidualProblem> slice_points(std::size_t begin, std::size_t count) const override {
        Matrix xs(count, x_.cols()), ts(count, targets_.cols());
        for (std::size_t p = 0; p < count; ++p)
            for (std::size_t j = 0; j < x_.cols(); ++j) xs(p, j) = x_(begin + p, j);
        for (std::size_t p = 0; p < count; ++p)
            for (std::size_t j = 0; j < targets_.cols(); ++j) ts(p, j) = targets_(begin + p, j);
        return std::make_shared<SupervisedResidual>(arch_, std::move(xs), std::move(ts));
    }

    const MlpArchitecture& arch() const { return arch_; }
    const Matrix& inputs() const { return x_; }
    const Matrix& targets() const { return targets_; }

private:
    MlpArchitecture arch_;
    Matrix x_, targets_;
};

/// Classification residual: per sample softmax(q) - onehot(label), with the
/// softmax Jacobian A = diag(s) - s s^T applied to output tangents.
class ClassificationResidual final : public ResidualProblem, public PointSliceable {
public:
    ClassificationResidual(MlpArchitecture arch, Matrix x, std::vector<std::size_t> labels)
        : arch_(std::move(arch)), x_(std::move(x)), labels_(std::move(labels)) {
        if (x_.rows() != labels_.size()) throw DimensionError("ClassificationResidual: batch shape mismatch");
        for (std::size_t l : labels_)
            if (l >= arch_.output_dim) throw DimensionError("ClassificationResidual: label out of range");
    }

    std::size_t residual_dim() const override { return x_.rows() * arch_.output_dim; }
    std::size_t param_dim() const override { return arch_.param_count(); }
    std::size_t output_dim() const override { return residual_dim(); }

    Vec residual_at(const Vec& theta) const override {
        const Matrix q = forward(arch_, theta, x_);
        Vec f(residual_dim());
        Vec s;
        for (std::size_t p = 0; p < x_.rows(); ++p) {
            softmax_row(q, p, s);
            for (std::size_t o = 0; o < arch_.output_dim; ++o)
                f[p * arch_.output_dim + o] = s[o] - (o == labels_[p] ? 1.0 : 0.0);
        }
        return f;
    }
    Vec output_at(const Vec& theta) const override { return forward(arch_, theta, x_).data(); }
    Vec j_action(const Vec& theta, const Vec& v) const override { return jvp(arch_, theta, x_, v).data(); }
    Vec jt_action(const Vec& theta, const Vec& u) const override {
        Matrix ub(x_.rows(), arch_.output_dim, u);
        return vjp(arch_, theta, x_, ub);
    }
    Vec aj_action(const Vec& theta, const Vec& v) const override {
        Matrix t(residual_dim(), 1, j_action(theta, v));
        apply_softmax_jacobian(theta, t);
        return t.data();
    }
    Vec gt_action(const Vec& theta, const Vec& u) const override {
        Matrix w(residual_dim(), 1, u);
        apply_softmax_jacobian(theta, w);  // A is symmetric per sample
        return jt_action(theta, w.data());
    }

    Matrix j_action_multi(const Vec& theta, const Matrix& cols) const override {
        return jvp_multi(arch_, theta, x_, cols);
    }
    Matrix aj_action_multi(const Vec& theta, const Matrix& cols) const override {
        Matrix t = jvp_multi(arch_, theta, x_, cols);
        apply_softmax_jacobian(theta, t);
        return t;
    }
    Matrix jt_action_multi(const Vec& theta, const Matrix& ucols) const override {
        return vjp_multi(arch_, theta, x_, ucols);
    }
    Matrix gt_action_multi(const Vec& theta, const Matrix& ucols) const override {
        Matrix w = ucols;
        apply_softmax_jacobian(theta, w);
        return vjp_multi(arch_, theta, x_, w);
    }

    std::size_t num_points() const override { return x_.rows(); }
    std::shared_ptr<ResidualProblem> slice_points(std::size_t begin, std::size_t count) const override {
        Matrix xs(count, x_.cols());
        std::vector<std::size_t> ls(count);
        for (std::size_t p = 0; p < count; ++p) {
            for (std::size_t j = 0; j < x_.cols(); ++j) xs(p, j) = x_(begin + p, j);
            ls[p] = labels_[begin + p];
        }
        return std::make_shared<ClassificationResidual>(arch_, std::move(xs), std::move(ls));
    }

    /// Fraction of samples whose argmax over refined logits matches the label.
    double accuracy(const Vec& logits) const {
        if (logits.size() != residual_dim()) throw DimensionError("accuracy: logits length mismatch");
        std::size_t hits = 0;
        const std::size_t c = arch_.output_dim;
        for (std::size_t p = 0; p < x_.rows(); ++p) {
            std::size_t best = 0;
            for (std::size_t o = 1; o < c; ++o)
                if (logits[p * c + o] > logits[p * c + best]) best = o;
            if (best == labels_[p]) ++hits;
        }
        return static_cast<double>(hits) / static_cast<double>(x_.rows());
    }

    const std::vector<std::size_t>& labels() const { return labels_; }
    const MlpArchitecture& arch() const { return arch_; }

private:
    void softmax_row(const Matrix& q, std::size_t p, Vec& s) const {
        const std::size_t c = arch_.output_dim;
        s.resize(c);
        double mx = q(p, 0);
        for (std::size_t o = 1; o < c; ++o) mx = std::max(mx, q(p, o));
        double sum = 0.0;
        for (std::size_t o = 0; o < c; ++o) {
            s[o] = std::exp(q(p, o) - mx);
            sum += s[o];
        }
        for (std::size_t o = 0; o < c; ++o) s[o] /= sum;
    }

    // In place per-sample t <- (diag(s) - s s^T) t on stacked rows.
    void apply_softmax_jacobian(const Vec& theta, Matrix& t) const {
        const Matrix q = forward(arch_, theta, x_);
        const std::size_t c = arch_.output_dim, K = t.cols();
        Vec s, dotk(K);
        for (std::size_t p = 0; p < x_.rows(); ++p) {
            softmax_row(q, p, s);
            std::fill(dotk.begin(), dotk.end(), 0.0);
            for (std::size_t o = 0; o < c; ++o) {
                const double* r = t.row(p * c + o);
                for (std::size_t k = 0; k < K; ++k) dotk[k] += s[o] * r[k];
            }
            for (std::size_t o = 0; o < c; ++o) {
                double* r = t.row(p * c + o);
                for (std::size_t k = 0; k < K; ++k) r[k] = s[o] * (r[k] - dotk[k]);
            }
        }
    }

    MlpArchitecture arch_;
    Matrix x_;
    std::vector<std::size_t> labels_;
};

// ---------------------------------------------------------------------------
// PDE collocation residuals
// ---------------------------------------------------------------------------

struct CollocationSet {
    Matrix interior;        // n_i x dim
    Matrix boundary;        // n_b x dim, Dirichlet
    Matrix initial;         // n_0 x dim
    Matrix periodic_left;   // paired with periodic_right row-by-row
    Matrix periodic_right;
    double w_interior = 1.0;
    double w_boundary = 1.0;
    double w_initial = 1.0;
};

/// Uniform collocation sampling on [0,1]^2 with boundary points spread
/// round-robin over the four faces. Deterministic per seed.
inline CollocationSet sample_poisson_collocation(std::size_t n_interior, std::size_t n_boundary,
                                                 std::uint64_t seed) {
    CollocationSet cs;
    SplitMix64 rng(seed);
    cs.interior = Matrix(n_interior, 2);
    for (std::size_t i = 0; i < n_interior; ++i) {
        cs.interior(i, 0) = rng.next_double();
        cs.interior(i, 1) = rng.next_double();
    }
    cs.boundary = Matrix(n_boundary, 2);
    for (std::size_t i = 0; i < n_boundary; ++i) {
        const double t = rng.next_double();
        switch (i % 4) {
            case 0: cs.boundary(i, 0) = t;   cs.boundary(i, 1) = 0.0; break;
            case 1: cs.boundary(i, 0) = t;   cs.boundary(i, 1) = 1.0; break;
            case 2: cs.boundary(i, 0) = 0.0; cs.boundary(i, 1) = t;   break;
            default: cs.boundary(i, 0) = 1.0; cs.boundary(i, 1) = t;  break;
        }
    }
    return cs;
}

/// Collocation for Burgers on [-1,1] x [0,1]: interior points, initial-line
/// points at t = 0, and periodic pairs ((-1,t),(1,t)).
inline CollocationSet sample_burgers_collocation(std::size_t n_interior, std::size_t n_initial,
                                                 std::size_t n_periodic, std::uint64_t seed) {
    CollocationSet cs;
    SplitMix64 rng(seed);
    cs.interior = Matrix(n_interior, 2);
    for (std::size_t i = 0; i < n_interior; ++i) {
        cs.interior(i, 0) = rng.uniform(-1.0, 1.0);
        cs.interior(i, 1) = rng.next_double();
    }
    cs.initial = Matrix(n_initial, 2);
    for (std::size_t i = 0; i < n_initial; ++i) {
        cs.initial(i, 0) = rng.uniform(-1.0, 1.0);
        cs.initial(i, 1) = 0.0;
    }
    cs.periodic_left = Matrix(n_periodic, 2);
    cs.periodic_right = Matrix(n_periodic, 2);
    for (std::size_t i = 0; i < n_periodic; ++i) {
        const double t = rng.next_double();
        cs.periodic_left(i, 0) = -1.0;
        cs.periodic_left(i, 1) = t;
        cs.periodic_right(i, 0) = 1.0;
        cs.periodic_right(i, 1) = t;
    }
    return cs;
}

/// Collocation residuals whose first n_interior rows are the PDE interior
/// rows; the prediction vector (output_at) is q over the interior points.
class PdeResidual : public ResidualProblem {
public:
    virtual std::size_t n_interior() const = 0;
    virtual double interior_weight() const = 0;
    virtual const Matrix& interior_points() const = 0;
};

/// Poisson: q_xx + q_yy = f_s on the interior, Dirichlet q = g on the
/// boundary. Rows: sqrt(w_i)(q_xx + q_yy - f_s), then sqrt(w_b)(q - g).
class PoissonResidual final : public PdeResidual {
public:
    using ScalarField = std::function<double(double, double)>;

    PoissonResidual(MlpArchitecture arch, CollocationSet coll, ScalarField source, ScalarField bc)
        : arch_(std::move(arch)), coll_(std::move(coll)) {
        if (arch_.input_dim != 2 || arch_.output_dim != 1)
            throw DimensionError("PoissonResidual: arch must be 2 -> 1");
        src_.resize(coll_.interior.rows());
        for (std::size_t i = 0; i < src_.size(); ++i) src_[i] = source(coll_.interior(i, 0), coll_.interior(i, 1));
        bc_.resize(coll_.boundary.rows());
        for (std::size_t i = 0; i < bc_.size(); ++i) bc_[i] = bc(coll_.boundary(i, 0), coll_.boundary(i, 1));
    }

    std::size_t residual_dim() const override { return coll_.interior.rows() + coll_.boundary.rows(); }
    std::size_t param_dim() const override { return arch_.param_count(); }
    std::size_t output_dim() const override { return coll_.interior.rows(); }
    std::size_t n_interior() const override { return coll_.interior.rows(); }
    double interior_weight() const override { return coll_.w_interior; }
    const Matrix& interior_points() const override { return coll_.interior; }

    Vec residual_at(const Vec& theta) const override {
        const JetBatch jet = input_jet(arch_, theta, coll_.interior);
        const double si = std::sqrt(coll_.w_interior), sb = std::sqrt(coll_.w_boundary);
        Vec f(residual_dim());
        for (std::size_t i = 0; i < n_interior(); ++i)
            f[i] = si * (jet.hess(i, 0) + jet.hess(i, 1) - src_[i]);
        const Matrix qb = forward(arch_, theta, coll_.boundary);
        for (std::size_t i = 0; i < coll_.boundary.rows(); ++i)
            f[n_interior() + i] = sb * (qb(i, 0) - bc_[i]);
        return f;
    }
    Vec output_at(const Vec& theta) const override {
        return forward(arch_, theta, coll_.interior).data();
    }
    Vec j_action(const Vec& theta, const Vec& v) const override {
        return jvp(arch_, theta, coll_.interior, v).data();
    }
    Vec jt_action(const Vec& theta, const Vec& u) const override {
        Matrix ub(coll_.interior.rows(), 1, u);
        return vjp(arch_, theta, coll_.interior, ub);
    }
    Vec aj_action(const Vec& theta, const Vec& v) const override {
        Matrix cols(v.size(), 1, v);
        return aj_action_multi(theta, cols).data();
    }
    Matrix aj_action_multi(const Vec& theta, const Matrix& cols) const override {
        const JetTangentMulti t = jet_param_tangent_multi(arch_, theta, coll_.interior, cols);
        const double si = std::sqrt(coll_.w_interior), sb = std::sqrt(coll_.w_boundary);
        Matrix y(residual_dim(), cols.cols());
        for (std::size_t i = 0; i < n_interior(); ++i)
            for (std::size_t c = 0; c < cols.cols(); ++c)
                y(i, c) = si * (t.hess[0](i, c) + t.hess[1](i, c));
        if (coll_.boundary.rows() > 0) {
            const Matrix tb = jvp_multi(arch_, theta, coll_.boundary, cols);
            for (std::size_t i = 0; i < coll_.boundary.rows(); ++i)
                for (std::size_t c = 0; c < cols.cols(); ++c) y(n_interior() + i, c) = sb * tb(i, c);
        }
        return y;
    }
    Vec gt_action(const Vec& theta, const Vec& u) const override {
        const double si = std::sqrt(coll_.w_interior), sb = std::sqrt(coll_.w_boundary);
        const std::size_t ni = n_interior();
        Matrix av(ni, 1), ag(ni, 2), ah(ni, 2);
        for (std::size_t i = 0; i < ni; ++i) {
            ah(i, 0) = si * u[i];
            ah(i, 1) = si * u[i];
        }
        Vec g = jet_vjp(arch_, theta, coll_.interior, av, ag, ah);
        if (coll_.boundary.rows() > 0) {
            Matrix ub(coll_.boundary.rows(), 1);
            for (std::size_t i = 0; i < coll_.boundary.rows(); ++i) ub(i, 0) = sb * u[ni + i];
            axpy(1.0, vjp(arch_, theta, coll_.boundary, ub), g);
        }
        return g;
    }
    Matrix j_action_multi(const Vec& theta, const Matrix& cols) const override {
        return jvp_multi(arch_, theta, coll_.interior, cols);
    }
    Matrix jt_action_multi(const Vec& theta, const Matrix& ucols) const override {
        return vjp_multi(arch_, theta, coll_.interior, ucols);
    }

    const CollocationSet& collocation() const { return coll_; }
    const MlpArchitecture& arch() const { return arch_; }

private:
    MlpArchitecture arch_;
    CollocationSet coll_;
    Vec src_, bc_;
};

/// Viscous Burgers: q_t + q q_x - nu q_xx = 0 on [-1,1] x [0,1], initial
/// condition q(x,0) = sin(pi x), value-periodic in x. Input axes are (x, t).
class BurgersResidual final : public PdeResidual {
public:
    BurgersResidual(MlpArchitecture arch, CollocationSet coll, double nu)
        : arch_(std::move(arch)), coll_(std::move(coll)), nu_(nu) {
        if (arch_.input_dim != 2 || arch_.output_dim != 1)
            throw DimensionError("BurgersResidual: arch must be 2 -> 1");
        init_.resize(coll_.initial.rows());
        for (std::size_t i = 0; i < init_.size(); ++i)
            init_[i] = std::sin(std::numbers::pi * coll_.initial(i, 0));
    }

    std::size_t residual_dim() const override {
        return coll_.interior.rows() + coll_.initial.rows() + coll_.periodic_left.rows();
    }
    std::size_t param_dim() const override { return arch_.param_count(); }
    std::size_t output_dim() const override { return coll_.interior.rows(); }
    std::size_t n_interior() const override { return coll_.interior.rows(); }
    double interior_weight() const override { return coll_.w_interior; }
    const Matrix& interior_points() const override { return coll_.interior; }

    Vec residual_at(const Vec& theta) const override {
        const JetBatch jet = input_jet(arch_, theta, coll_.interior);
        const double si = std::sqrt(coll_.w_interior);
        const double s0 = std::sqrt(coll_.w_initial);
        const double sp = std::sqrt(coll_.w_boundary);
        Vec f(residual_dim());
        for (std::size_t i = 0; i < n_interior(); ++i) {
            const double q = jet.value(i, 0), qx = jet.grad(i, 0), qt = jet.grad(i, 1), qxx = jet.hess(i, 0);
            f[i] = si * (qt + q * qx - nu_ * qxx);
        }
        std::size_t off = n_interior();
        if (coll_.initial.rows() > 0) {
            const Matrix q0 = forward(arch_, theta, coll_.initial);
            for (std::size_t i = 0; i < coll_.initial.rows(); ++i) f[off + i] = s0 * (q0(i, 0) - init_[i]);
        }
        off += coll_.initial.rows();
        if (coll_.periodic_left.rows() > 0) {
            const Matrix ql = forward(arch_, theta, coll_.periodic_left);
            const Matrix qr = forward(arch_, theta, coll_.periodic_right);
            for (std::size_t i = 0; i < coll_.periodic_left.rows(); ++i)
                f[off + i] = sp * (ql(i, 0) - qr(i, 0));
        }
        return f;
    }
    Vec output_at(const Vec& theta) const override {
        return forward(arch_, theta, coll_.interior).data();
    }
    Vec j_action(const Vec& theta, const Vec& v) const override {
        return jvp(arch_, theta, coll_.interior, v).data();
    }
    Vec jt_action(const Vec& theta, const Vec& u) const override {
        Matrix ub(coll_.interior.rows(), 1, u);
        return vjp(arch_, theta, coll_.interior, ub);
    }
    Vec aj_action(const Vec& theta, const Vec& v) const override {
        Matrix cols(v.size(), 1, v);
        return aj_action_multi(theta, cols).data();
    }
    Matrix aj_action_multi(const Vec& theta, const Matrix& cols) const override {
        // The advection term makes A state dependent: row tangent is
        // v_t + q v_x + q_x v - nu v_xx with (v, v_x, v_t, v_xx) the jet tangent.
        const JetBatch base = input_jet(arch_, theta, coll_.interior);
        const JetTangentMulti t = jet_param_tangent_multi(arch_, theta, coll_.interior, cols);
        const double si = std::sqrt(coll_.w_interior);
        const double s0 = std::sqrt(coll_.w_initial);
        const double sp = std::sqrt(coll_.w_boundary);
        Matrix y(residual_dim(), cols.cols());
        for (std::size_t i = 0; i < n_interior(); ++i) {
            const double q = base.value(i, 0), qx = base.grad(i, 0);
            for (std::size_t c = 0; c < cols.cols(); ++c)
                y(i, c) = si * (t.grad[1](i, c) + q * t.grad[0](i, c) + qx * t.value(i, c) - nu_ * t.hess[0](i, c));
        }
        std::size_t off = n_interior();
        if (coll_.initial.rows() > 0) {
            const Matrix t0 = jvp_multi(arch_, theta, coll_.initial, cols);
            for (std::size_t i = 0; i < coll_.initial.rows(); ++i)
                for (std::size_t c = 0; c < cols.cols(); ++c) y(off + i, c) = s0 * t0(i, c);
        }
        off += coll_.initial.rows();
        if (coll_.periodic_left.rows() > 0) {
            const Matrix tl = jvp_multi(arch_, theta, coll_.periodic_left, cols);
            const Matrix tr = jvp_multi(arch_, theta, coll_.periodic_right, cols);
            for (std::size_t i = 0; i < coll_.periodic_left.rows(); ++i)
                for (std::size_t c = 0; c < cols.cols(); ++c) y(off + i, c) = sp * (tl(i, c) - tr(i, c));
        }
        return y;
    }
    Vec gt_action(const Vec& theta, const Vec& u) const override {
        const JetBatch base = input_jet(arch_, theta, coll_.interior);
        const double si = std::sqrt(coll_.w_interior);
        const double s0 = std::sqrt(coll_.w_initial);
        const double sp = std::sqrt(coll_.w_boundary);
        const std::size_t ni = n_interior();
        Matrix av(ni, 1), ag(ni, 2), ah(ni, 2);
        for (std::size_t i = 0; i < ni; ++i) {
            const double ui = si * u[i];
            av(i, 0) = ui * base.grad(i, 0);  // d row / d q   = q_x
            ag(i, 0) = ui * base.value(i, 0); // d row / d q_x = q
            ag(i, 1) = ui;                    // d row / d q_t = 1
            ah(i, 0) = -nu_ * ui;             // d row / d q_xx
        }
        Vec g = jet_vjp(arch_, theta, coll_.interior, av, ag, ah);
        std::size_t off = ni;
        if (coll_.initial.rows() > 0) {
            Matrix u0(coll_.initial.rows(), 1);
            for (std::size_t i = 0; i < coll_.initial.rows(); ++i) u0(i, 0) = s0 * u[off + i];
            axpy(1.0, vjp(arch_, theta, coll_.initial, u0), g);
        }
        off += coll_.initial.rows();
        if (coll_.periodic_left.rows() > 0) {
            Matrix ul(coll_.periodic_left.rows(), 1), ur(coll_.periodic_right.rows(), 1);
            for (std::size_t i = 0; i < coll_.periodic_left.rows(); ++i) {
                ul(i, 0) = sp * u[off + i];
                ur(i, 0) = -sp * u[off + i];
            }
            axpy(1.0, vjp(arch_, theta, coll_.periodic_left, ul), g);
            axpy(1.0, vjp(arch_, theta, coll_.periodic_right, ur), g);
        }
        return g;
    }
    Matrix j_action_multi(const Vec& theta, const Matrix& cols) const override {
        return jvp_multi(arch_, theta, coll_.interior, cols);
    }
    Matrix jt_action_multi(const Vec& theta, const Matrix& ucols) const override {
        return vjp_multi(arch_, theta, coll_.interior, ucols);
    }

    double viscosity() const { return nu_; }
    const CollocationSet& collocation() const { return coll_; }
    const MlpArchitecture& arch() const { return arch_; }

private:
    MlpArchitecture arch_;
    CollocationSet coll_;
    double nu_;
    Vec init_;
};

struct TsonnConfig {
    Vec q0;            // reference state over interior points
    double delta_tau;  // pseudo-time step
};

/// Pseudo-time wrapper: interior rows become
///   sqrt(w_i) (q - q0) / delta_tau  -  (base interior rows),
/// i.e. the base PDE operator is treated as the pseudo-time evolution rate.
/// As delta_tau -> infinity the rows reduce to the base interior rows up to
/// sign, so the objective coincides with the raw PDE residual objective.
/// Boundary/initial rows pass through unchanged.
class TsonnWrapped final : public ResidualProblem {
public:
    TsonnWrapped(std::shared_ptr<const PdeResidual> base, TsonnConfig cfg)
        : base_(std::move(base)), cfg_(std::move(cfg)) {
        if (cfg_.q0.size() != base_->n_interior()) throw DimensionError("tsonn_wrap: q0 length mismatch");
        if (!(cfg_.delta_tau > 0.0)) throw DimensionError("tsonn_wrap: delta_tau must be positive");
    }

    std::size_t residual_dim() const override { return base_->residual_dim(); }
    std::size_t param_dim() const override { return base_->param_dim(); }
    std::size_t output_dim() const override { return base_->output_dim(); }

    Vec residual_at(const Vec& theta) const override {
        Vec f = base_->residual_at(theta);
        const Vec q = base_->output_at(theta);
        const double si = std::sqrt(base_->interior_weight());
        const std::size_t ni = base_->n_interior();
        for (std::size_t i = 0; i < ni; ++i)
            f[i] = si * (q[i] - cfg_.q0[i]) / cfg_.delta_tau - f[i];
        return f;
    }
    Vec output_at(const Vec& theta) const override { return base_->output_at(theta); }
    Vec j_action(const Vec& theta, const Vec& v) const override { return base_->j_action(theta, v); }
    Vec jt_action(const Vec& theta, const Vec& u) const override { return base_->jt_action(theta, u); }

    Vec aj_action(const Vec& theta, const Vec& v) const override {
        Vec y = base_->aj_action(theta, v);
        const Vec jv = base_->j_action(theta, v);
        const double si = std::sqrt(base_->interior_weight());
        const std::size_t ni = base_->n_interior();
        for (std::size_t i = 0; i < ni; ++i) y[i] = si * jv[i] / cfg_.delta_tau - y[i];
        return y;
    }
    Matrix aj_action_multi(const Vec& theta, const Matrix& cols) const override {
        Matrix y = base_->aj_action_multi(theta, cols);
        const Matrix jv = base_->j_action_multi(theta, cols);
        const double si = std::sqrt(base_->interior_weight());
        const std::size_t ni = base_->n_interior();
        for (std::size_t i = 0; i < ni; ++i)
            for (std::size_t c = 0; c < cols.cols(); ++c) y(i, c) = si * jv(i, c) / cfg_.delta_tau - y(i, c);
        return y;
    }
    Vec gt_action(const Vec& theta, const Vec& u) const override {
        Vec u2 = u;
        const std::size_t ni = base_->n_interior();
        for (std::size_t i = 0; i < ni; ++i) u2[i] = -u2[i];
        Vec g = base_->gt_action(theta, u2);
        Vec uin(u.begin(), u.begin() + ni);
        const double si = std::sqrt(base_->interior_weight());
        for (double& x : uin) x *= si / cfg_.delta_tau;
        axpy(1.0, base_->jt_action(theta, uin), g);
        return g;
    }

    Matrix j_action_multi(const Vec& theta, const Matrix& cols) const override {
        return base_->j_action_multi(theta, cols);
    }
    Matrix jt_action_multi(const Vec& theta, const Matrix& ucols) const override {
        return base_->jt_action_multi(theta, ucols);
    }

    const TsonnConfig& config() const { return cfg_; }
    const PdeResidual& base() const { return *base_; }

private:
    std::shared_ptr<const PdeResidual> base_;
    TsonnConfig cfg_;
};

inline std::shared_ptr<TsonnWrapped> tsonn_wrap(std::shared_ptr<const PdeResidual> base, TsonnConfig cfg) {
    return std::make_shared<TsonnWrapped>(std::move(base), std::move(cfg));
}

/// The Poisson benchmark field q(x,y) = sin(4 pi x^2) sin(pi y) and its
/// analytically derived source f_s = q_xx + q_yy:
///   q_xx = [8 pi cos(4 pi x^2) - 64 pi^2 x^2 sin(4 pi x^2)] sin(pi y)
///   q_yy = -pi^2 sin(4 pi x^2) sin(pi y)
inline double poisson_exact(double x, double y) {
    return std::sin(4.0 * std::numbers::pi * x * x) * std::sin(std::numbers::pi * y);
}
inline double poisson_source(double x, double y) {
    const double pi = std::numbers::pi;
    const double s = std::sin(4.0 * pi * x * x), c = std::cos(4.0 * pi * x * x);
    const double qxx = (8.0 * pi * c - 64.0 * pi * pi * x * x * s) * std::sin(pi * y);
    const double qyy = -pi * pi * s * std::sin(pi * y);
    return qxx + qyy;
}

}  // namespace lsrkit
