#pragma once

#include <cmath>
#include <memory>

#include "lsrkit/config.hpp"
#include "lsrkit/lsr.hpp"
#include "lsrkit/residual.hpp"

namespace lsrkit {

inline constexpr double kPi = 3.14159265358979323846;

struct LabeledPoints {
    Matrix x;
    Matrix targets;           // regression targets (func2d)
    std::vector<std::size_t> labels;  // class labels (classify_synth)
};

/// Example-1 regression data: uniform samples on [-1,1]^2 with
/// q(x, y) = sin(pi x) sin(pi y) targets.
inline LabeledPoints func2d_data(std::size_t n, std::uint64_t seed) {
    SplitMix64 rng(seed);
    LabeledPoints d;
    d.x = Matrix(n, 2);
    d.targets = Matrix(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
        d.x(i, 0) = rng.uniform(-1.0, 1.0);
        d.x(i, 1) = rng.uniform(-1.0, 1.0);
        d.targets(i, 0) = std::sin(kPi * d.x(i, 0)) * std::sin(kPi * d.x(i, 1));
    }
    return d;
}

/// Synthetic classification data: equally weighted isotropic Gaussian blobs
/// centered on a circle of radius 2.
inline LabeledPoints classify_blob_data(std::size_t n, std::size_t classes, std::uint64_t seed) {
    if (classes < 2) throw DimensionError("classify_blob_data: need at least 2 classes");
    GaussianStream g(seed);
    SplitMix64 rng(seed ^ 0x5851f42d4c957f2dULL);
    LabeledPoints d;
    d.x = Matrix(n, 2);
    d.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = rng.next_below(classes);
        const double ang = 2.0 * kPi * double(c) / double(classes);
        d.x(i, 0) = 2.0 * std::cos(ang) + 0.35 * g.next();
        d.x(i, 1) = 2.0 * std::sin(ang) + 0.35 * g.next();
        d.labels[i] = c;
    }
    return d;
}

inline MlpArchitecture arch_from_config(const RunConfig& cfg) {
    MlpArchitecture arch;
    arch.hidden = cfg.hidden;
    arch.activation = activation_from_name(cfg.activation);
    switch (cfg.problem) {
        case ProblemKind::func2d:
            arch.input_dim = 2;
            arch.output_dim = 1;
            break;
        case ProblemKind::classify_synth:
            arch.input_dim = 2;
            arch.output_dim = cfg.classes;
            break;
        case ProblemKind::poisson:
        case ProblemKind::burgers:
            arch.input_dim = 2;
            arch.output_dim = 1;
            break;
    }
    return arch;
}

inline std::shared_ptr<SupervisedResidual> make_func2d(const RunConfig& cfg, const LabeledPoints& data) {
    return std::make_shared<SupervisedResidual>(arch_from_config(cfg), data.x, data.targets);
}

inline std::shared_ptr<ClassificationResidual> make_classify(const RunConfig& cfg, const LabeledPoints& data) {
    return std::make_shared<ClassificationResidual>(arch_from_config(cfg), data.x, data.labels);
}

inline std::shared_ptr<PoissonResidual> make_poisson(const RunConfig& cfg) {
    const CollocationSet coll =
        sample_poisson_collocation(cfg.interior_points, cfg.boundary_points, cfg.seed_data);
    return std::make_shared<PoissonResidual>(
        arch_from_config(cfg), coll,
        [](double x, double y) { return poisson_source(x, y); },
        [](double x, double y) { return poisson_exact(x, y); });
}

inline std::shared_ptr<BurgersResidual> make_burgers(const RunConfig& cfg) {
    const CollocationSet coll = sample_burgers_collocation(cfg.interior_points, cfg.initial_points,
                                                           cfg.periodic_points, cfg.seed_data);
    return std::make_shared<BurgersResidual>(arch_from_config(cfg), coll, 0.01 / kPi);
}

/// Mean squared error of the network against regression targets.
inline double test_mse(const MlpArchitecture& arch, const Vec& theta, const LabeledPoints& data) {
    const Matrix q = forward(arch, theta, data.x);
    double s = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) s += (q.data()[i] - data.targets.data()[i]) * (q.data()[i] - data.targets.data()[i]);
    return s / double(q.size());
}

/// Mean squared error of a refined linear predictor against targets.
inline double test_mse_lsr(const MlpArchitecture& arch, const Vec& theta, const Vec& delta_theta,
                           const LabeledPoints& data) {
    const Matrix q = lsr_predict_at(arch, theta, delta_theta, data.x);
    double s = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) s += (q.data()[i] - data.targets.data()[i]) * (q.data()[i] - data.targets.data()[i]);
    return s / double(q.size());
}

}  // namespace lsrkit
