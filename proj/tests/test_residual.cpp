#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "lsrkit/residual.hpp"

using namespace lsrkit;

namespace {

Vec random_vec(std::size_t n, std::uint64_t seed) {
    GaussianStream g(seed);
    Vec v(n);
    for (double& x : v) x = g.next();
    return v;
}

Matrix random_points(std::size_t n, std::size_t d, std::uint64_t seed, double lo, double hi) {
    SplitMix64 rng(seed);
    Matrix x(n, d);
    for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(lo, hi);
    return x;
}

// Central finite difference of residual_at along v.
Vec fd_aj(const ResidualProblem& prob, const Vec& theta, const Vec& v, double h) {
    Vec tp = theta, tm = theta;
    axpy(h, v, tp);
    axpy(-h, v, tm);
    const Vec fp = prob.residual_at(tp), fm = prob.residual_at(tm);
    Vec out(fp.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (fp[i] - fm[i]) / (2 * h);
    return out;
}

void check_aj_matches_fd(const ResidualProblem& prob, const Vec& theta, std::uint64_t seed, double tol = 1e-5) {
    const Vec v = random_vec(prob.param_dim(), seed);
    const Vec got = prob.aj_action(theta, v);
    const Vec want = fd_aj(prob, theta, v, 1e-5);
    double scale = 0.0;
    for (double w : want) scale = std::max(scale, std::abs(w));
    scale = std::max(scale, 1e-12);
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - want[i]) <= tol * scale);
}

void check_adjoint(const ResidualProblem& prob, const Vec& theta, std::uint64_t seed) {
    const Vec v = random_vec(prob.param_dim(), seed);
    const Vec u = random_vec(prob.output_dim(), seed + 1);
    const Vec jv = prob.j_action(theta, v);
    const Vec jtu = prob.jt_action(theta, u);
    const double lhs = dot(u, jv), rhs = dot(jtu, v);
    CHECK(std::abs(lhs - rhs) <= 1e-10 * std::max(std::abs(lhs), std::abs(rhs)));
}

void check_g_adjoint(const ResidualProblem& prob, const Vec& theta, std::uint64_t seed) {
    const Vec v = random_vec(prob.param_dim(), seed);
    const Vec u = random_vec(prob.residual_dim(), seed + 1);
    const Vec gv = prob.aj_action(theta, v);
    const Vec gtu = prob.gt_action(theta, u);
    const double lhs = dot(u, gv), rhs = dot(gtu, v);
    CHECK(std::abs(lhs - rhs) <= 1e-10 * std::max(std::abs(lhs), std::abs(rhs)));
}

void check_gradient_fd(const ResidualProblem& prob, const Vec& theta, std::uint64_t seed) {
    const Vec g = prob.gradient(theta);
    const Vec v = random_vec(prob.param_dim(), seed);
    const double h = 1e-6;
    Vec tp = theta, tm = theta;
    axpy(h, v, tp);
    axpy(-h, v, tm);
    const double fd = (prob.loss(tp) - prob.loss(tm)) / (2 * h);
    const double got = dot(g, v);
    CHECK(std::abs(got - fd) <= 1e-6 * std::max(1.0, std::abs(fd)));
}

void check_multi_consistency(const ResidualProblem& prob, const Vec& theta, std::uint64_t seed) {
    const std::size_t K = 3;
    Matrix cols(prob.param_dim(), K);
    GaussianStream g(seed);
    for (double& x : cols.data()) x = g.next();
    const Matrix aj = prob.aj_action_multi(theta, cols);
    const Matrix j = prob.j_action_multi(theta, cols);
    for (std::size_t c = 0; c < K; ++c) {
        const Vec a1 = prob.aj_action(theta, cols.col(c));
        const Vec j1 = prob.j_action(theta, cols.col(c));
        for (std::size_t i = 0; i < a1.size(); ++i)
            CHECK(std::abs(aj(i, c) - a1[i]) <= 1e-12 * std::max(1.0, std::abs(a1[i])));
        for (std::size_t i = 0; i < j1.size(); ++i)
            CHECK(std::abs(j(i, c) - j1[i]) <= 1e-12 * std::max(1.0, std::abs(j1[i])));
    }
    Matrix ucols(prob.output_dim(), K);
    for (double& x : ucols.data()) x = g.next();
    const Matrix jt = prob.jt_action_multi(theta, ucols);
    for (std::size_t c = 0; c < K; ++c) {
        const Vec g1 = prob.jt_action(theta, ucols.col(c));
        for (std::size_t i = 0; i < g1.size(); ++i)
            CHECK(std::abs(jt(c, i) - g1[i]) <= 1e-12 * std::max(1.0, std::abs(g1[i])));
    }
    Matrix rcols(prob.residual_dim(), K);
    for (double& x : rcols.data()) x = g.next();
    const Matrix gt = prob.gt_action_multi(theta, rcols);
    for (std::size_t c = 0; c < K; ++c) {
        const Vec g1 = prob.gt_action(theta, rcols.col(c));
        for (std::size_t i = 0; i < g1.size(); ++i)
            CHECK(std::abs(gt(c, i) - g1[i]) <= 1e-12 * std::max(1.0, std::abs(g1[i])));
    }
}

}  // namespace

TEST_CASE("generic linear residual actions are exact") {
    Matrix a(4, 3);
    GaussianStream g(1);
    for (double& x : a.data()) x = g.next();
    const Vec b = random_vec(4, 2);
    GenericLinearResidual prob(a, b);
    const Vec theta = random_vec(3, 3);
    check_aj_matches_fd(prob, theta, 4);
    check_adjoint(prob, theta, 5);
    check_gradient_fd(prob, theta, 6);
}

TEST_CASE("supervised residual interpolating state is zero") {
    MlpArchitecture arch{2, 1, {}, Activation::tanh};
    Vec theta = {1.0, 2.0, 0.5};  // q = x0 + 2 x1 + 0.5
    Matrix x(3, 2);
    Matrix t(3, 1);
    SplitMix64 rng(7);
    for (std::size_t p = 0; p < 3; ++p) {
        x(p, 0) = rng.uniform(-1, 1);
        x(p, 1) = rng.uniform(-1, 1);
        t(p, 0) = x(p, 0) + 2.0 * x(p, 1) + 0.5;
    }
    SupervisedResidual prob(arch, x, t);
    for (double f : prob.residual_at(theta)) CHECK(std::abs(f) < 1e-15);
}

TEST_CASE("stacking duplicate points doubles the squared residual") {
    MlpArchitecture arch{2, 1, {6}, Activation::tanh};
    const Vec theta = init_params(arch, 11);
    const Matrix x = random_points(10, 2, 12, -1, 1);
    Matrix t(10, 1);
    for (std::size_t p = 0; p < 10; ++p) t(p, 0) = std::sin(x(p, 0));
    Matrix x2(20, 2), t2(20, 1);
    for (std::size_t p = 0; p < 20; ++p) {
        for (std::size_t j = 0; j < 2; ++j) x2(p, j) = x(p % 10, j);
        t2(p, 0) = t(p % 10, 0);
    }
    SupervisedResidual a(arch, x, t), b(arch, x2, t2);
    CHECK(std::abs(b.loss(theta) - 2.0 * a.loss(theta)) < 1e-12 * std::max(1.0, a.loss(theta)));
}

TEST_CASE("supervised residual oracles") {
    MlpArchitecture arch{2, 2, {8}, Activation::tanh};
    const Vec theta = init_params(arch, 21);
    const Matrix x = random_points(6, 2, 22, -1, 1);
    Matrix t(6, 2);
    GaussianStream g(23);
    for (double& v : t.data()) v = g.next();
    SupervisedResidual prob(arch, x, t);
    check_aj_matches_fd(prob, theta, 24);
    check_adjoint(prob, theta, 25);
    check_g_adjoint(prob, theta, 26);
    check_gradient_fd(prob, theta, 27);
    check_multi_consistency(prob, theta, 28);
    // A = I: aj == j
    const Vec v = random_vec(prob.param_dim(), 29);
    CHECK(prob.aj_action(theta, v) == prob.j_action(theta, v));
}

TEST_CASE("supervised slice_points matches row blocks") {
    MlpArchitecture arch{1, 1, {4}, Activation::tanh};
    const Vec theta = init_params(arch, 30);
    const Matrix x = random_points(9, 1, 31, -1, 1);
    Matrix t(9, 1);
    for (std::size_t p = 0; p < 9; ++p) t(p, 0) = x(p, 0) * x(p, 0);
    SupervisedResidual prob(arch, x, t);
    const Vec full = prob.residual_at(theta);
    auto part = prob.slice_points(3, 4);
    const Vec sub = part->residual_at(theta);
    for (std::size_t i = 0; i < 4; ++i) CHECK(sub[i] == full[3 + i]);
}

TEST_CASE("classification residual uniform softmax") {
    MlpArchitecture arch{2, 2, {}, Activation::tanh};
    Vec theta(arch.param_count(), 0.0);  // logits are all zero -> uniform softmax
    Matrix x(1, 2);
    x(0, 0) = 0.4;
    ClassificationResidual prob(arch, x, {0});
    const Vec f = prob.residual_at(theta);
    CHECK(std::abs(f[0] + 0.5) < 1e-15);
    CHECK(std::abs(f[1] - 0.5) < 1e-15);
}

TEST_CASE("classification residual rows sum to zero per sample") {
    MlpArchitecture arch{2, 4, {6}, Activation::tanh};
    const Vec theta = init_params(arch, 41);
    const Matrix x = random_points(5, 2, 42, -1, 1);
    ClassificationResidual prob(arch, x, {0, 3, 1, 2, 2});
    const Vec f = prob.residual_at(theta);
    for (std::size_t p = 0; p < 5; ++p) {
        double s = 0.0;
        for (std::size_t o = 0; o < 4; ++o) s += f[p * 4 + o];
        CHECK(std::abs(s) < 1e-14);
    }
}

TEST_CASE("classification residual oracles") {
    MlpArchitecture arch{2, 2, {7}, Activation::tanh};
    const Vec theta = init_params(arch, 51);
    const Matrix x = random_points(6, 2, 52, -1, 1);
    ClassificationResidual prob(arch, x, {0, 1, 1, 0, 1, 0});
    check_aj_matches_fd(prob, theta, 53);
    check_adjoint(prob, theta, 54);
    check_g_adjoint(prob, theta, 55);
    check_gradient_fd(prob, theta, 56);
    check_multi_consistency(prob, theta, 57);
}

TEST_CASE("classification rejects out-of-range labels and measures accuracy") {
    MlpArchitecture arch{2, 3, {}, Activation::tanh};
    Matrix x(2, 2);
    CHECK_THROWS_AS(ClassificationResidual(arch, x, {0, 3}), DimensionError);
    ClassificationResidual prob(arch, x, {0, 2});
    Vec logits = {3.0, 1.0, 0.0, /* sample 2 */ 0.0, 1.0, 5.0};
    CHECK(prob.accuracy(logits) == 1.0);
    logits[5] = -5.0;
    CHECK(prob.accuracy(logits) == 0.5);
}

TEST_CASE("poisson residual zero field") {
    MlpArchitecture arch{2, 1, {8}, Activation::tanh};
    Vec theta(arch.param_count(), 0.0);  // tanh net with zero params: q == 0
    CollocationSet cs = sample_poisson_collocation(10, 8, 61);
    PoissonResidual prob(arch, cs, [](double, double) { return 0.0; }, [](double, double) { return 0.0; });
    for (double f : prob.residual_at(theta)) CHECK(std::abs(f) < 1e-15);
}

TEST_CASE("manufactured poisson solution has zero interior residual") {
    // Evaluate the interior operator on the exact field directly (no network):
    // q_xx + q_yy - f_s must vanish identically by construction of f_s.
    SplitMix64 rng(62);
    const double h = 1e-5;
    for (int trial = 0; trial < 50; ++trial) {
        const double x = rng.uniform(0.05, 0.95), y = rng.uniform(0.05, 0.95);
        const double qxx =
            (poisson_exact(x + h, y) - 2 * poisson_exact(x, y) + poisson_exact(x - h, y)) / (h * h);
        const double qyy =
            (poisson_exact(x, y + h) - 2 * poisson_exact(x, y) + poisson_exact(x, y - h)) / (h * h);
        CHECK(std::abs(qxx + qyy - poisson_source(x, y)) < 1e-4);
    }
}

TEST_CASE("poisson residual oracles") {
    MlpArchitecture arch{2, 1, {16}, Activation::tanh};
    const Vec theta = init_params(arch, 63);
    CollocationSet cs = sample_poisson_collocation(20, 8, 64);
    cs.w_interior = 0.7;
    cs.w_boundary = 1.3;
    PoissonResidual prob(arch, cs, poisson_source, poisson_exact);
    check_aj_matches_fd(prob, theta, 65);
    check_adjoint(prob, theta, 66);
    check_g_adjoint(prob, theta, 67);
    check_gradient_fd(prob, theta, 68);
    check_multi_consistency(prob, theta, 69);
}

TEST_CASE("burgers residual trivial fields") {
    MlpArchitecture arch{2, 1, {6}, Activation::tanh};
    CollocationSet cs = sample_burgers_collocation(12, 6, 5, 71);
    BurgersResidual prob(arch, cs, 0.01 / std::numbers::pi);
    SECTION("zero parameters: only the initial rows survive") {
        Vec theta(arch.param_count(), 0.0);
        const Vec f = prob.residual_at(theta);
        for (std::size_t i = 0; i < 12; ++i) CHECK(std::abs(f[i]) < 1e-15);
        for (std::size_t i = 0; i < 6; ++i)
            CHECK(std::abs(f[12 + i] + std::sin(std::numbers::pi * cs.initial(i, 0))) < 1e-14);
        for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(f[18 + i]) < 1e-15);
    }
    SECTION("constant field: interior rows vanish") {
        MlpArchitecture lin{2, 1, {}, Activation::tanh};
        Vec theta = {0.0, 0.0, 3.7};  // q == 3.7
        BurgersResidual cprob(lin, cs, 0.01 / std::numbers::pi);
        const Vec f = cprob.residual_at(theta);
        for (std::size_t i = 0; i < 12; ++i) CHECK(std::abs(f[i]) < 1e-14);
        for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(f[18 + i]) < 1e-14);
    }
}

TEST_CASE("burgers residual oracles") {
    MlpArchitecture arch{2, 1, {12}, Activation::tanh};
    const Vec theta = init_params(arch, 72);
    CollocationSet cs = sample_burgers_collocation(14, 4, 3, 73);
    cs.w_interior = 0.5;
    cs.w_initial = 2.0;
    BurgersResidual prob(arch, cs, 0.01 / std::numbers::pi);
    check_aj_matches_fd(prob, theta, 74);
    check_adjoint(prob, theta, 75);
    check_g_adjoint(prob, theta, 76);
    check_gradient_fd(prob, theta, 77);
    check_multi_consistency(prob, theta, 78);
}

TEST_CASE("sample_collocation determinism and containment") {
    const CollocationSet a = sample_poisson_collocation(30, 12, 5);
    const CollocationSet b = sample_poisson_collocation(30, 12, 5);
    CHECK(a.interior.data() == b.interior.data());
    CHECK(a.boundary.data() == b.boundary.data());
    for (std::size_t i = 0; i < 30; ++i)
        for (std::size_t j = 0; j < 2; ++j) {
            CHECK(a.interior(i, j) >= 0.0);
            CHECK(a.interior(i, j) <= 1.0);
        }
    for (std::size_t i = 0; i < 12; ++i) {
        const bool on_edge = a.boundary(i, 0) == 0.0 || a.boundary(i, 0) == 1.0 ||
                             a.boundary(i, 1) == 0.0 || a.boundary(i, 1) == 1.0;
        CHECK(on_edge);
    }
    const CollocationSet c = sample_burgers_collocation(20, 6, 4, 9);
    for (std::size_t i = 0; i < 20; ++i) {
        CHECK(c.interior(i, 0) >= -1.0);
        CHECK(c.interior(i, 0) <= 1.0);
        CHECK(c.interior(i, 1) >= 0.0);
        CHECK(c.interior(i, 1) <= 1.0);
    }
    for (std::size_t i = 0; i < 6; ++i) CHECK(c.initial(i, 1) == 0.0);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(c.periodic_left(i, 0) == -1.0);
        CHECK(c.periodic_right(i, 0) == 1.0);
        CHECK(c.periodic_left(i, 1) == c.periodic_right(i, 1));
    }
    const CollocationSet empty = sample_poisson_collocation(0, 0, 1);
    CHECK(empty.interior.rows() == 0);
}

TEST_CASE("tsonn wrapper semantics") {
    MlpArchitecture arch{2, 1, {10}, Activation::tanh};
    const Vec theta = init_params(arch, 81);
    CollocationSet cs = sample_poisson_collocation(15, 6, 82);
    auto base = std::make_shared<PoissonResidual>(arch, cs, poisson_source, poisson_exact);
    const std::size_t ni = base->n_interior();

    SECTION("large delta_tau recovers the base interior rows up to sign") {
        // The pseudo-time form is (q - q0)/dtau - f(q); as dtau -> inf the
        // interior rows tend to the negated base rows, leaving the squared
        // objective identical to the raw PDE objective.
        auto w = tsonn_wrap(base, TsonnConfig{base->output_at(theta), 1e10});
        const Vec fw = w->residual_at(theta);
        const Vec fb = base->residual_at(theta);
        double scale = 0.0;
        for (std::size_t i = 0; i < ni; ++i) scale = std::max(scale, std::abs(fb[i]));
        for (std::size_t i = 0; i < ni; ++i) CHECK(std::abs(fw[i] + fb[i]) <= 1e-8 * scale);
        for (std::size_t i = ni; i < fb.size(); ++i) CHECK(fw[i] == fb[i]);
        CHECK(std::abs(w->loss(theta) - base->loss(theta)) <= 1e-12 * base->loss(theta));
    }
    SECTION("q = q0 pointwise gives minus the interior operator") {
        auto w = tsonn_wrap(base, TsonnConfig{base->output_at(theta), 0.3});
        const Vec fw = w->residual_at(theta);
        const Vec fb = base->residual_at(theta);
        for (std::size_t i = 0; i < ni; ++i)
            CHECK(std::abs(fw[i] + fb[i]) <= 1e-12 * std::max(1.0, std::abs(fb[i])));
    }
    SECTION("oracles at finite delta_tau") {
        Vec q0 = base->output_at(theta);
        for (double& v : q0) v += 0.05;
        auto w = tsonn_wrap(base, TsonnConfig{q0, 0.3});
        check_aj_matches_fd(*w, theta, 83);
        check_g_adjoint(*w, theta, 84);
        check_gradient_fd(*w, theta, 85);
        check_multi_consistency(*w, theta, 86);
    }
    SECTION("rejects bad config") {
        CHECK_THROWS_AS(tsonn_wrap(base, TsonnConfig{Vec(ni + 1, 0.0), 0.3}), DimensionError);
        CHECK_THROWS_AS(tsonn_wrap(base, TsonnConfig{Vec(ni, 0.0), 0.0}), DimensionError);
    }
}

TEST_CASE("burgers tsonn wrapper oracles") {
    MlpArchitecture arch{2, 1, {8}, Activation::tanh};
    const Vec theta = init_params(arch, 91);
    CollocationSet cs = sample_burgers_collocation(10, 4, 3, 92);
    auto base = std::make_shared<BurgersResidual>(arch, cs, 0.01 / std::numbers::pi);
    Vec q0 = base->output_at(theta);
    for (double& v : q0) v -= 0.1;
    auto w = tsonn_wrap(base, TsonnConfig{q0, 0.3});
    check_aj_matches_fd(*w, theta, 93);
    check_g_adjoint(*w, theta, 94);
    check_gradient_fd(*w, theta, 95);
}
