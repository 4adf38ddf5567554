#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "lsrkit/lab.hpp"

using namespace lsrkit;

namespace {

Vec random_vec(std::size_t n, std::uint64_t seed) {
    GaussianStream g(seed);
    Vec v(n);
    for (double& x : v) x = g.next();
    return v;
}

Matrix random_matrix(std::size_t n, std::size_t k, std::uint64_t seed) {
    GaussianStream g(seed);
    Matrix a(n, k);
    for (double& x : a.data()) x = g.next();
    return a;
}

struct NetFixture {
    MlpArchitecture arch{2, 1, {10}, Activation::tanh};
    Matrix x;
    Matrix targets;
    Vec theta;
    std::shared_ptr<SupervisedResidual> prob;

    NetFixture() {
        SplitMix64 rng(15);
        x = Matrix(30, 2);
        targets = Matrix(30, 1);
        for (std::size_t p = 0; p < 30; ++p) {
            x(p, 0) = rng.uniform(-1, 1);
            x(p, 1) = rng.uniform(-1, 1);
            targets(p, 0) = x(p, 0) * x(p, 1);
        }
        theta = init_params(arch, 29);
        prob = std::make_shared<SupervisedResidual>(arch, x, targets);
    }
};

}  // namespace

TEST_CASE("compare_solvers on a well-conditioned reduced system") {
    NetFixture fx;
    SubspaceOptions opt;
    opt.oversample = 4;
    const SubspaceBasis basis = build_subspace(*fx.prob, fx.theta, 8, 201, opt);
    const LinearizedProblem lin = make_reduced_linearization(*fx.prob, fx.theta, basis);
    SolverBudgets budgets;
    budgets.adam_steps = 20000;
    budgets.lbfgs_steps = 500;
    budgets.cgls_iters = 500;
    budgets.lsqr_iters = 500;
    const auto rows = compare_solvers(lin, budgets);
    REQUIRE(rows.size() == 5);
    double direct_loss = -1.0;
    for (const auto& r : rows)
        if (r.solver == "direct") direct_loss = r.final_loss;
    REQUIRE(direct_loss >= 0.0);
    for (const auto& r : rows) {
        INFO(r.solver);
        REQUIRE_FALSE(r.failed);
        CHECK(r.final_loss >= direct_loss - 1e-12);
        if (r.solver != "adam") CHECK(r.final_loss <= 10.0 * std::max(direct_loss, 1e-14));
    }
    // direct row must agree with one_shot_lsr's refined loss
    const LsrResult res = one_shot_lsr(*fx.prob, fx.theta, basis);
    CHECK(std::abs(direct_loss - res.loss_after) <= 1e-10 * std::max(1.0, res.loss_after));
}

TEST_CASE("direction_scan") {
    NetFixture fx;
    SubspaceOptions opt;
    opt.oversample = 4;
    const SubspaceBasis basis = build_subspace(*fx.prob, fx.theta, 8, 211, opt);
    const LsrResult res = one_shot_lsr(*fx.prob, fx.theta, basis);
    const auto rows = direction_scan(*fx.prob, fx.theta, res.delta_theta, {0.0, 0.5, 1.0, 2.0});
    REQUIRE(rows.size() == 4);
    SECTION("alpha=0 reproduces the base loss in both columns") {
        const double l0 = fx.prob->loss(fx.theta);
        CHECK(std::abs(rows[0].nonlinear_loss - l0) <= 1e-14 * std::max(1.0, l0));
        CHECK(std::abs(rows[0].linearized_loss - l0) <= 1e-14 * std::max(1.0, l0));
    }
    SECTION("linearized curve at alpha=1 equals the refined loss") {
        CHECK(std::abs(rows[2].linearized_loss - res.loss_after) <=
              1e-10 * std::max(1.0, res.loss_after));
    }
    SECTION("linearized curve is an exact quadratic in alpha") {
        // check midpoint value against the quadratic through alpha = 0, 1, 2
        const double l0 = rows[0].linearized_loss;
        const double l1 = rows[2].linearized_loss;
        const double l2 = rows[3].linearized_loss;
        const double mid = 0.375 * l0 + 0.75 * l1 - 0.125 * l2;
        CHECK(std::abs(rows[1].linearized_loss - mid) <= 1e-10 * std::max(1.0, l0));
    }
    SECTION("linearized curve on an exactly linear problem matches the nonlinear one") {
        const Matrix a = random_matrix(20, 6, 212);
        const Vec b = random_vec(20, 213);
        GenericLinearResidual lp(a, b);
        const Vec t0 = random_vec(6, 214);
        const Vec d = random_vec(6, 215);
        const auto lr = direction_scan(lp, t0, d, {0.0, 0.3, 1.0, 1.7});
        for (const auto& r : lr)
            CHECK(std::abs(r.nonlinear_loss - r.linearized_loss) <=
                  1e-10 * std::max(1.0, r.nonlinear_loss));
    }
    SECTION("default grid starts with the pinned probes") {
        const auto alphas = default_scan_alphas();
        REQUIRE(alphas.size() >= 3);
        CHECK(alphas[0] == 0.0);
        CHECK(alphas[1] == -1e-2);
        CHECK(alphas[2] == -1.0);
    }
}

TEST_CASE("stationarity_probe") {
    const Matrix a = random_matrix(30, 10, 221);
    const Vec b = random_vec(30, 222);
    GenericLinearResidual prob(a, b);
    SubspaceOptions opt;
    opt.oversample = 4;
    SECTION("at the least-squares solution the correction effect vanishes") {
        const Vec tstar = lstsq_qr(a, b);
        const SubspaceBasis basis = build_subspace(prob, tstar, 10, 223, opt);
        const StationarityReport rep = stationarity_probe(prob, tstar, basis);
        CHECK(rep.grad_norm <= 1e-8 * std::max(1.0, rep.residual_norm));
        CHECK(rep.correction_effect <= 1e-8 * std::max(1.0, rep.residual_norm));
        CHECK(std::abs(rep.loss_after - rep.loss_before) <= 1e-10 * std::max(1.0, rep.loss_before));
    }
    SECTION("away from stationarity the correction is active") {
        const Vec t0 = random_vec(10, 224);
        const SubspaceBasis basis = build_subspace(prob, t0, 10, 225, opt);
        const StationarityReport rep = stationarity_probe(prob, t0, basis);
        CHECK(rep.grad_norm > 1e-6);
        CHECK(rep.correction_effect > 1e-6);
        CHECK(rep.loss_after < rep.loss_before);
    }
}

TEST_CASE("scalar_demo exact table") {
    const ScalarDemoReport demo = scalar_demo();
    REQUIRE(demo.rows.size() == 4);
    SECTION("theta0 = 0") {
        const auto& r = demo.rows[0];
        CHECK(r.theta0 == 0.0);
        CHECK(r.q == 3.0);                 // (0-1)^2 + 2
        CHECK(r.dq == -2.0);
        CHECK(r.delta_star == 1.0);        // (1-3)/(-2)
        CHECK(r.lin_pred == 1.0);          // q + dq * delta
        CHECK(r.lin_residual == 0.0);
    }
    SECTION("theta0 = 1 has zero slope and zero correction") {
        const auto& r = demo.rows[3];
        CHECK(r.theta0 == 1.0);
        CHECK(r.q == 2.0);
        CHECK(r.dq == 0.0);
        CHECK(r.delta_star == 0.0);
        CHECK(r.lin_pred == 2.0);
        CHECK(r.lin_residual == 1.0);
    }
    SECTION("target is infeasible for the true model") {
        CHECK(demo.target == 1.0);
        CHECK(demo.min_q == 2.0);
        CHECK_FALSE(demo.feasible);
    }
    SECTION("csv is well-formed") {
        const std::string csv = demo.to_csv();
        CHECK(csv.rfind("theta0,", 0) == 0);
    }
}

TEST_CASE("subspace_modes") {
    NetFixture fx;
    SubspaceOptions opt;
    opt.oversample = 4;
    const SubspaceBasis basis = build_subspace(*fx.prob, fx.theta, 6, 231, opt);
    Matrix grid(50, 2);
    for (std::size_t i = 0; i < 50; ++i) {
        grid(i, 0) = -1.0 + 2.0 * double(i) / 49.0;
        grid(i, 1) = 0.0;
    }
    SECTION("modes are max-abs normalized") {
        const Matrix modes = subspace_modes(fx.arch, fx.theta, basis, grid, {0, 1, 2, 3, 4, 5});
        REQUIRE(modes.rows() == 50);
        REQUIRE(modes.cols() == 6);
        for (std::size_t j = 0; j < 6; ++j) {
            const Vec mode = modes.col(j);
            double m = 0.0;
            for (double v : mode) m = std::max(m, std::abs(v));
            CHECK(std::abs(m - 1.0) < 1e-12);
        }
    }
    SECTION("deterministic") {
        const Matrix a = subspace_modes(fx.arch, fx.theta, basis, grid, {2});
        const Matrix b = subspace_modes(fx.arch, fx.theta, basis, grid, {2});
        CHECK(a.data() == b.data());
    }
    SECTION("out-of-range index throws") {
        CHECK_THROWS_AS(subspace_modes(fx.arch, fx.theta, basis, grid, {6}), DimensionError);
    }
}

TEST_CASE("zero_crossings") {
    SECTION("simple sign change") {
        Vec v{1.0, -1.0, -2.0, 3.0};
        CHECK(zero_crossings(v) == 2);
    }
    SECTION("constant-sign vector has none") {
        Vec v{0.5, 2.0, 1.0};
        CHECK(zero_crossings(v) == 0);
    }
    SECTION("near-zero entries below eps are ignored") {
        Vec v{1.0, 1e-12, 1.0};
        CHECK(zero_crossings(v) == 0);
    }
    SECTION("sampled sine counts its interior sign changes") {
        // sin(3 pi t) on [0,1]: sign changes at t = 1/3 and 2/3; the roots at
        // the endpoints do not separate opposite-sign samples
        Vec v(101);
        for (int i = 0; i <= 100; ++i)
            v[i] = std::sin(3.14159265358979323846 * 3.0 * i / 100.0);
        CHECK(zero_crossings(v) == 2);
    }
}
