#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "lsrkit/config.hpp"
#include "lsrkit/ilsr.hpp"
#include "lsrkit/lab.hpp"
#include "lsrkit/problems.hpp"

namespace fs = std::filesystem;
using namespace lsrkit;

namespace {

constexpr const char* kVersion = "lsrkit 1.0.0";

std::string timestamp_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

struct RunManifest {
    std::string config_echo;
    std::string started = timestamp_now();
    std::vector<std::string> artifacts;

    void add(const std::string& path) { artifacts.push_back(path); }

    // Written last, atomically: compose in a temp file, then rename.
    void write(const fs::path& dir) const {
        const fs::path final_path = dir / "manifest.txt";
        const fs::path tmp_path = dir / "manifest.txt.tmp";
        {
            std::ofstream os(tmp_path, std::ios::binary);
            if (!os) throw std::ios_base::failure("cannot write " + tmp_path.string());
            os << "version = " << kVersion << '\n';
            os << "started = " << started << '\n';
            os << "finished = " << timestamp_now() << '\n';
            os << "[artifacts]\n";
            for (const std::string& a : artifacts)
                os << a << " (" << fs::file_size(dir / a) << " bytes)\n";
            os << "[config]\n" << config_echo;
            if (!os.flush()) throw std::ios_base::failure("write failed: " + tmp_path.string());
        }
        fs::rename(tmp_path, final_path);
    }
};

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::ios_base::failure("cannot write " + path.string());
    os << text;
    if (!os.flush()) throw std::ios_base::failure("write failed: " + path.string());
}

struct Invocation {
    std::string config_path;
    std::string checkpoint_path;
    std::string out_override;
    long long rank_override = -1;
    long long seed_override = -1;
    bool batch = false;
    bool precondition = false;
};

RunConfig resolve_config(const Invocation& inv) {
    RunConfig cfg = load_config(inv.config_path);
    if (!inv.out_override.empty()) cfg.out_dir = inv.out_override;
    if (inv.rank_override >= 0) cfg.rank = static_cast<std::size_t>(inv.rank_override);
    if (inv.seed_override >= 0) {
        const auto s = static_cast<std::uint64_t>(inv.seed_override);
        cfg.seed_data = s;
        cfg.seed_init = s + 1;
        cfg.seed_sketch = s + 2;
    }
    if (inv.precondition) cfg.precondition = true;
    return cfg;
}

// Builds the configured residual problem at cfg's data seed; for supervised
// problems the companion test set uses seed_data + 1.
struct ProblemBundle {
    MlpArchitecture arch;
    std::shared_ptr<ResidualProblem> problem;
    std::shared_ptr<PdeResidual> pde;  // set for poisson/burgers
    LabeledPoints train, test;
};

ProblemBundle build_problem(const RunConfig& cfg) {
    ProblemBundle b;
    b.arch = arch_from_config(cfg);
    switch (cfg.problem) {
        case ProblemKind::func2d:
            b.train = func2d_data(cfg.train_points, cfg.seed_data);
            b.test = func2d_data(cfg.test_points, cfg.seed_data + 1);
            b.problem = make_func2d(cfg, b.train);
            break;
        case ProblemKind::classify_synth:
            b.train = classify_blob_data(cfg.train_points, cfg.classes, cfg.seed_data);
            b.test = classify_blob_data(cfg.test_points, cfg.classes, cfg.seed_data + 1);
            b.problem = make_classify(cfg, b.train);
            break;
        case ProblemKind::poisson:
            b.pde = make_poisson(cfg);
            b.problem = b.pde;
            break;
        case ProblemKind::burgers:
            b.pde = make_burgers(cfg);
            b.problem = b.pde;
            break;
    }
    return b;
}

Vec initial_theta(const Invocation& inv, const RunConfig& cfg, const MlpArchitecture& arch) {
    if (inv.checkpoint_path.empty()) return init_params(arch, cfg.seed_init);
    auto [ck_arch, theta] = load_checkpoint(inv.checkpoint_path);
    if (!(ck_arch == arch))
        throw DimensionError("checkpoint architecture does not match the configured architecture");
    return theta;
}

double classify_error_rate(const ProblemBundle& b, const RunConfig& cfg, const Vec& logits_test) {
    ClassificationResidual test_prob(b.arch, b.test.x, b.test.labels);
    return 1.0 - test_prob.accuracy(logits_test);
}

// Held-out error for the lsr/rank-sweep CSV columns: MSE for regression,
// error rate for classification, relative L2 against the exact solution for
// Poisson; NaN when no reference exists.
double test_error_of(const ProblemBundle& b, const RunConfig& cfg, const Vec& theta, const Vec* delta) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    switch (cfg.problem) {
        case ProblemKind::func2d:
            return delta ? test_mse_lsr(b.arch, theta, *delta, b.test) : test_mse(b.arch, theta, b.test);
        case ProblemKind::classify_synth: {
            const Matrix q = delta ? lsr_predict_at(b.arch, theta, *delta, b.test.x)
                                   : forward(b.arch, theta, b.test.x);
            return classify_error_rate(b, cfg, q.data());
        }
        case ProblemKind::poisson: {
            const Matrix& pts = b.pde->interior_points();
            Vec exact(pts.rows());
            for (std::size_t i = 0; i < exact.size(); ++i) exact[i] = poisson_exact(pts(i, 0), pts(i, 1));
            Vec pred = b.pde->output_at(theta);
            if (delta) axpy(1.0, b.pde->j_action(theta, *delta), pred);
            return error_vs_reference(pred, exact);
        }
        case ProblemKind::burgers:
            return nan;
    }
    return nan;
}

int cmd_train(const Invocation& inv) {
    const RunConfig cfg = resolve_config(inv);
    const ProblemBundle b = build_problem(cfg);
    fs::create_directories(cfg.out_dir);
    RunManifest manifest;
    manifest.config_echo = serialize_config(cfg);

    Vec theta = init_params(b.arch, cfg.seed_init);
    OptTrace trace;
    if (cfg.optimizer == "lbfgs") {
        GradOracle oracle = [&](const Vec& x, Vec& g) {
            g = b.problem->gradient(x);
            return b.problem->loss(x);
        };
        LbfgsConfig lc;
        lc.max_steps = cfg.lbfgs_steps;
        std::tie(theta, trace) = lbfgs_minimize(oracle, std::move(theta), lc);
    } else if (cfg.batch_size == 0) {
        GradOracle oracle = [&](const Vec& x, Vec& g) {
            g = b.problem->gradient(x);
            return b.problem->loss(x);
        };
        AdamConfig ac;
        ac.lr = cfg.lr;
        ac.max_steps = cfg.epochs;
        ac.plateau_factor = cfg.plateau_factor;
        ac.plateau_patience = cfg.plateau_patience;
        std::tie(theta, trace) = adam_minimize(oracle, std::move(theta), ac);
    } else {
        const auto* slicer = dynamic_cast<const PointSliceable*>(b.problem.get());
        if (!slicer) throw ConfigError("batch_size > 0 requires a point-sliceable problem");
        const std::size_t n = slicer->num_points();
        const std::size_t nb = (n + cfg.batch_size - 1) / cfg.batch_size;
        BatchGradOracle oracle = [&](const Vec& x, Vec& g, std::size_t bi) {
            const std::size_t begin = bi * cfg.batch_size;
            const std::size_t count = std::min(cfg.batch_size, n - begin);
            const auto part = slicer->slice_points(begin, count);
            g = part->gradient(x);
            return part->loss(x);
        };
        AdamConfig ac;
        ac.lr = cfg.lr;
        ac.max_steps = cfg.epochs;
        ac.plateau_factor = cfg.plateau_factor;
        ac.plateau_patience = cfg.plateau_patience;
        std::tie(theta, trace) = adam_minimize_epochs(oracle, nb, std::move(theta), ac, cfg.seed_data);
    }

    save_checkpoint((fs::path(cfg.out_dir) / "checkpoint.bin").string(), b.arch, theta);
    manifest.add("checkpoint.bin");
    write_text(fs::path(cfg.out_dir) / "train_trace.csv", trace.to_csv());
    manifest.add("train_trace.csv");
    manifest.write(cfg.out_dir);

    const double final_loss = b.problem->loss(theta);
    std::cout << "final train loss: " << format_double(final_loss) << '\n';
    const double err = test_error_of(b, cfg, theta, nullptr);
    if (std::isfinite(err)) std::cout << "final test error: " << format_double(err) << '\n';
    return 0;
}

int cmd_lsr(const Invocation& inv) {
    const RunConfig cfg = resolve_config(inv);
    const ProblemBundle b = build_problem(cfg);
    fs::create_directories(cfg.out_dir);
    RunManifest manifest;
    manifest.config_echo = serialize_config(cfg);

    const Vec theta = initial_theta(inv, cfg, b.arch);
    SubspaceOptions opt;
    opt.oversample = cfg.oversample;
    opt.precondition = cfg.precondition;
    opt.source = cfg.source == "residual" ? BasisSource::residual_space : BasisSource::output_space;

    const double err_before = test_error_of(b, cfg, theta, nullptr);
    LsrResult res;
    if (inv.batch || cfg.lsr_batch_size > 0) {
        const auto* slicer = dynamic_cast<const PointSliceable*>(b.problem.get());
        if (!slicer) throw ConfigError("--batch requires a point-sliceable problem");
        const std::size_t bs = cfg.lsr_batch_size > 0 ? cfg.lsr_batch_size : 256;
        res = batch_lsr(*b.problem, *slicer, theta, cfg.rank, cfg.seed_sketch, bs, opt);
    } else {
        const SubspaceBasis basis = build_subspace(*b.problem, theta, cfg.rank, cfg.seed_sketch, opt);
        res = one_shot_lsr(*b.problem, theta, basis);
    }
    const double err_after = test_error_of(b, cfg, theta, &res.delta_theta);

    std::ostringstream csv;
    auto cell = [](double v) { return std::isnan(v) ? std::string() : format_double(v); };
    csv << "rank,loss_before,loss_after,test_error_before,test_error_after,kappa,y_norm,seconds\n";
    csv << cfg.rank << ',' << format_double(res.loss_before) << ',' << format_double(res.loss_after) << ','
        << cell(err_before) << ',' << cell(err_after) << ',' << format_double(res.kappa) << ','
        << format_double(res.y_norm) << ',' << format_double(res.seconds) << '\n';
    write_text(fs::path(cfg.out_dir) / "lsr_result.csv", csv.str());
    manifest.add("lsr_result.csv");
    write_vector_file((fs::path(cfg.out_dir) / "lsr_prediction.vec").string(), res.q_lsr);
    manifest.add("lsr_prediction.vec");
    write_vector_file((fs::path(cfg.out_dir) / "lsr_delta.vec").string(), res.delta_theta);
    manifest.add("lsr_delta.vec");
    manifest.write(cfg.out_dir);

    std::cout << "loss: " << format_double(res.loss_before) << " -> " << format_double(res.loss_after) << '\n';
    if (std::isfinite(err_before))
        std::cout << "test error: " << format_double(err_before) << " -> " << format_double(err_after) << '\n';
    return res.loss_after < res.loss_before ? 0 : 2;
}

int cmd_ilsr(const Invocation& inv) {
    const RunConfig cfg = resolve_config(inv);
    if (cfg.problem != ProblemKind::poisson && cfg.problem != ProblemKind::burgers)
        throw ConfigError("ilsr requires problem name poisson or burgers");
    const ProblemBundle b = build_problem(cfg);
    fs::create_directories(cfg.out_dir);
    RunManifest manifest;
    manifest.config_echo = serialize_config(cfg);

    Vec reference;
    const Matrix& pts = b.pde->interior_points();
    if (cfg.problem == ProblemKind::poisson) {
        reference.resize(pts.rows());
        for (std::size_t i = 0; i < reference.size(); ++i)
            reference[i] = poisson_exact(pts(i, 0), pts(i, 1));
    } else {
        const BurgersReference ref(0.01 / kPi);
        reference = ref.values_at(pts);
    }

    IlsrConfig ic;
    ic.outer_iters = cfg.outer_iters;
    ic.align_steps = cfg.align_steps;
    ic.delta_tau_align = cfg.delta_tau_align;
    ic.delta_tau_lsr = cfg.delta_tau_lsr;
    ic.rank = cfg.ilsr_rank;
    ic.oversample = cfg.oversample;
    ic.seed = cfg.seed_sketch;

    const Vec theta0 = initial_theta(inv, cfg, b.arch);
    const IlsrOutcome out = ilsr_run(b.pde, theta0, ic, reference);

    write_text(fs::path(cfg.out_dir) / "ilsr_trace.csv", out.trace.to_csv());
    manifest.add("ilsr_trace.csv");
    save_checkpoint((fs::path(cfg.out_dir) / "ilsr_checkpoint.bin").string(), b.arch, out.theta);
    manifest.add("ilsr_checkpoint.bin");
    write_vector_file((fs::path(cfg.out_dir) / "ilsr_prediction.vec").string(), out.last.q_lsr);
    manifest.add("ilsr_prediction.vec");
    manifest.write(cfg.out_dir);

    const IlsrTraceRow& last_lsr = *std::find_if(out.trace.rows.rbegin(), out.trace.rows.rend(),
                                                 [](const IlsrTraceRow& r) { return r.stage == "lsr"; });
    std::cout << "final lsr-stage loss: " << format_double(last_lsr.loss) << '\n';
    if (std::isfinite(last_lsr.rel_l2_error))
        std::cout << "final rel-L2 error: " << format_double(last_lsr.rel_l2_error) << '\n';
    return 0;
}

int cmd_experiment(const std::string& name, const Invocation& inv) {
    static const std::vector<std::string> known = {"compare-solvers", "direction-scan", "stationarity",
                                                   "scalar-demo",     "rank-sweep",     "modes"};
    if (std::find(known.begin(), known.end(), name) == known.end()) {
        std::ostringstream os;
        os << "unknown experiment '" << name << "'; valid names:";
        for (const auto& k : known) os << ' ' << k;
        throw ConfigError(os.str());
    }
    const RunConfig cfg = resolve_config(inv);
    fs::create_directories(cfg.out_dir);
    RunManifest manifest;
    manifest.config_echo = serialize_config(cfg);
    const std::string csv_name = name + ".csv";
    std::ostringstream csv;

    if (name == "scalar-demo") {
        const ScalarDemoReport demo = scalar_demo();
        csv << demo.to_csv();
        std::cout << demo.to_csv();
        std::cout << "target " << format_double(demo.target) << " below min q "
                  << format_double(demo.min_q) << ": " << (demo.feasible ? "feasible" : "infeasible") << '\n';
    } else {
        const ProblemBundle b = build_problem(cfg);
        const Vec theta = initial_theta(inv, cfg, b.arch);
        SubspaceOptions opt;
        opt.oversample = cfg.oversample;
        opt.precondition = cfg.precondition;
        opt.source = cfg.source == "residual" ? BasisSource::residual_space : BasisSource::output_space;

        if (name == "rank-sweep") {
            std::vector<std::size_t> ranks;
            for (std::size_t r : {cfg.rank / 8, cfg.rank / 4, cfg.rank / 2, cfg.rank})
                if (r >= 1 && (ranks.empty() || r > ranks.back())) ranks.push_back(r);
            auto err_fn = [&](const LsrResult& res) { return test_error_of(b, cfg, theta, &res.delta_theta); };
            const RankSweepResult sweep = rank_sweep(*b.problem, theta, ranks, cfg.seed_sketch, opt, err_fn);
            auto cell = [](double v) { return std::isnan(v) ? std::string() : format_double(v); };
            csv << "rank,failed,error,loss_before,loss_after,test_error,kappa,y_norm,seconds,peak_memory_bytes\n";
            for (const RankSweepRow& r : sweep.rows)
                csv << r.rank << ',' << (r.failed ? "true" : "false") << ',' << r.error << ','
                    << format_double(r.loss_before) << ',' << format_double(r.loss_after) << ','
                    << cell(r.test_error) << ',' << format_double(r.kappa) << ',' << format_double(r.y_norm)
                    << ',' << format_double(r.seconds) << ',' << r.peak_memory_bytes << '\n';
            std::cout << "selected rank: " << sweep.selected_rank << '\n';
        } else if (name == "compare-solvers") {
            const SubspaceBasis basis = build_subspace(*b.problem, theta, cfg.rank, cfg.seed_sketch, opt);
            const LinearizedProblem lin = make_reduced_linearization(*b.problem, theta, basis);
            const auto rows = compare_solvers(lin, SolverBudgets{});
            csv << "solver,iterations,final_loss,failed,error\n";
            for (const SolverRow& r : rows)
                csv << r.solver << ',' << r.iterations << ',' << format_double(r.final_loss) << ','
                    << (r.failed ? "true" : "false") << ',' << r.error << '\n';
        } else if (name == "direction-scan") {
            const SubspaceBasis basis = build_subspace(*b.problem, theta, cfg.rank, cfg.seed_sketch, opt);
            const LsrResult res = one_shot_lsr(*b.problem, theta, basis);
            const auto rows = direction_scan(*b.problem, theta, res.delta_theta, default_scan_alphas());
            csv << "alpha,nonlinear_loss,linearized_loss\n";
            for (const DirectionScanRow& r : rows)
                csv << format_double(r.alpha) << ',' << format_double(r.nonlinear_loss) << ','
                    << format_double(r.linearized_loss) << '\n';
        } else if (name == "stationarity") {
            const SubspaceBasis basis = build_subspace(*b.problem, theta, cfg.rank, cfg.seed_sketch, opt);
            const StationarityReport rep = stationarity_probe(*b.problem, theta, basis);
            csv << "residual_norm,grad_norm,correction_effect,loss_before,loss_after\n";
            csv << format_double(rep.residual_norm) << ',' << format_double(rep.grad_norm) << ','
                << format_double(rep.correction_effect) << ',' << format_double(rep.loss_before) << ','
                << format_double(rep.loss_after) << '\n';
        } else {  // modes
            const SubspaceBasis basis = build_subspace(*b.problem, theta, cfg.rank, cfg.seed_sketch, opt);
            const Matrix& pts = b.pde ? b.pde->interior_points() : b.train.x;
            const std::size_t n_modes = std::min<std::size_t>(8, basis.v.cols());
            std::vector<std::size_t> idx(n_modes);
            std::iota(idx.begin(), idx.end(), std::size_t{0});
            const Matrix modes = subspace_modes(b.arch, theta, basis, pts, idx);
            csv << "x0,x1";
            for (std::size_t j = 0; j < n_modes; ++j) csv << ",mode" << j;
            csv << '\n';
            for (std::size_t i = 0; i < pts.rows(); ++i) {
                csv << format_double(pts(i, 0)) << ',' << format_double(pts(i, 1));
                for (std::size_t j = 0; j < n_modes; ++j) csv << ',' << format_double(modes(i, j));
                csv << '\n';
            }
        }
    }
    write_text(fs::path(cfg.out_dir) / csv_name, csv.str());
    manifest.add(csv_name);
    manifest.write(cfg.out_dir);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    // LSRKIT_THREADS caps internal parallelism; all kernels currently run
    // single-threaded, so any valid value is accepted as-is.
    if (const char* env = std::getenv("LSRKIT_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end == env || *end != '\0' || v < 1) {
            std::cerr << "invalid LSRKIT_THREADS value: " << env << '\n';
            return 1;
        }
    }

    CLI::App app{"linearized subspace refinement toolkit"};
    app.require_subcommand(1);

    Invocation inv;
    std::string experiment_name;
    auto add_common = [&inv](CLI::App* cmd) {
        cmd->add_option("--config", inv.config_path, "run configuration file")->required();
        cmd->add_option("--checkpoint", inv.checkpoint_path, "network checkpoint file");
        cmd->add_option("--rank", inv.rank_override, "subspace rank override");
        cmd->add_flag("--batch", inv.batch, "use the streaming batch path");
        cmd->add_flag("--precondition", inv.precondition, "whiten the basis by 1/sigma");
        cmd->add_option("--out", inv.out_override, "output directory override");
        cmd->add_option("--seed", inv.seed_override, "master seed override");
    };
    CLI::App* train = app.add_subcommand("train", "train the configured baseline network");
    CLI::App* lsr = app.add_subcommand("lsr", "run one-shot or batch subspace refinement");
    CLI::App* ilsr = app.add_subcommand("ilsr", "run iterative refinement on a PDE problem");
    CLI::App* experiment = app.add_subcommand("experiment", "run a named diagnostic experiment");
    experiment->add_option("name", experiment_name, "experiment name")->required();
    for (CLI::App* cmd : {train, lsr, ilsr, experiment}) add_common(cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (app.got_subcommand(train)) return cmd_train(inv);
        if (app.got_subcommand(lsr)) return cmd_lsr(inv);
        if (app.got_subcommand(ilsr)) return cmd_ilsr(inv);
        return cmd_experiment(experiment_name, inv);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const DimensionError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const std::ios_base::failure& e) {
        std::cerr << "i/o error: " << e.what() << '\n';
        return 3;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "i/o error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 2;
    }
}
