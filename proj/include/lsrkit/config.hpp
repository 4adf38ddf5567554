#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lsrkit/io.hpp"
#include "lsrkit/matrix.hpp"

namespace lsrkit {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class ProblemKind { func2d, classify_synth, poisson, burgers };

inline const char* problem_name(ProblemKind p) {
    switch (p) {
        case ProblemKind::func2d: return "func2d";
        case ProblemKind::classify_synth: return "classify_synth";
        case ProblemKind::poisson: return "poisson";
        case ProblemKind::burgers: return "burgers";
    }
    return "?";
}

inline ProblemKind problem_from_name(const std::string& s) {
    if (s == "func2d") return ProblemKind::func2d;
    if (s == "classify_synth") return ProblemKind::classify_synth;
    if (s == "poisson") return ProblemKind::poisson;
    if (s == "burgers") return ProblemKind::burgers;
    throw ConfigError("unknown problem name '" + s + "' (expected func2d, classify_synth, poisson, burgers)");
}

/// Flat sectioned key = value run configuration with strict unknown-key
/// rejection. Desk-scale defaults; every field is overridable from file.
struct RunConfig {
    // [problem]
    ProblemKind problem = ProblemKind::func2d;
    std::size_t train_points = 2000;   // func2d / classify_synth sample count
    std::size_t test_points = 500;
    std::size_t classes = 4;           // classify_synth
    std::size_t interior_points = 3000;  // poisson / burgers
    std::size_t boundary_points = 400;   // poisson
    std::size_t initial_points = 200;    // burgers
    std::size_t periodic_points = 100;   // burgers

    // [arch]
    std::vector<std::size_t> hidden = {64, 64, 64, 64};
    std::string activation = "tanh";

    // [train]
    std::string optimizer = "adam";
    double lr = 1e-3;
    std::size_t epochs = 200;
    std::size_t batch_size = 0;        // 0: full batch
    double plateau_factor = 0.5;
    std::size_t plateau_patience = 20;
    std::size_t lbfgs_steps = 2000;

    // [lsr]
    std::size_t rank = 400;
    std::size_t oversample = 10;
    bool precondition = false;
    std::string source = "output";      // "output" or "residual"
    std::size_t lsr_batch_size = 0;     // 0: one-shot

    // [ilsr]
    std::size_t outer_iters = 5;
    std::size_t align_steps = 300;
    double delta_tau_align = 0.3;
    double delta_tau_lsr = 1e10;
    std::size_t ilsr_rank = 400;

    // [seeds]
    std::uint64_t seed_data = 1;
    std::uint64_t seed_init = 2;
    std::uint64_t seed_sketch = 3;

    // [out]
    std::string out_dir = "out";
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::uint64_t parse_u64(const std::string& v, const std::string& key, std::size_t line) {
    try {
        std::size_t pos = 0;
        if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
        const unsigned long long x = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing");
        return x;
    } catch (const std::exception&) {
        throw ConfigError("line " + std::to_string(line) + ": key '" + key + "' needs a non-negative integer, got '" + v + "'");
    }
}

inline double parse_f64(const std::string& v, const std::string& key, std::size_t line) {
    try {
        std::size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing");
        return x;
    } catch (const std::exception&) {
        throw ConfigError("line " + std::to_string(line) + ": key '" + key + "' needs a number, got '" + v + "'");
    }
}

inline bool parse_bool(const std::string& v, const std::string& key, std::size_t line) {
    if (v == "true") return true;
    if (v == "false") return false;
    throw ConfigError("line " + std::to_string(line) + ": key '" + key + "' needs true or false, got '" + v + "'");
}

inline std::vector<std::size_t> parse_width_list(const std::string& v, const std::string& key, std::size_t line) {
    std::vector<std::size_t> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_u64(trim(item), key, line));
    if (out.empty()) throw ConfigError("line " + std::to_string(line) + ": key '" + key + "' needs at least one width");
    return out;
}

}  // namespace detail

inline RunConfig parse_config(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string raw, section;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string line = raw;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("line " + std::to_string(line_no) + ": malformed section header '" + line + "'");
            section = line.substr(1, line.size() - 2);
            if (section != "problem" && section != "arch" && section != "train" && section != "lsr" &&
                section != "ilsr" && section != "seeds" && section != "out")
                throw ConfigError("line " + std::to_string(line_no) + ": unknown section '" + section + "'");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value', got '" + line + "'");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string val = detail::trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError("line " + std::to_string(line_no) + ": empty key");
        if (section.empty())
            throw ConfigError("line " + std::to_string(line_no) + ": key '" + key + "' appears before any section");

        auto unknown = [&]() -> ConfigError {
            return ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "' in section [" +
                               section + "]");
        };
        if (section == "problem") {
            if (key == "name") cfg.problem = problem_from_name(val);
            else if (key == "train_points") cfg.train_points = detail::parse_u64(val, key, line_no);
            else if (key == "test_points") cfg.test_points = detail::parse_u64(val, key, line_no);
            else if (key == "classes") cfg.classes = detail::parse_u64(val, key, line_no);
            else if (key == "interior_points") cfg.interior_points = detail::parse_u64(val, key, line_no);
            else if (key == "boundary_points") cfg.boundary_points = detail::parse_u64(val, key, line_no);
            else if (key == "initial_points") cfg.initial_points = detail::parse_u64(val, key, line_no);
            else if (key == "periodic_points") cfg.periodic_points = detail::parse_u64(val, key, line_no);
            else throw unknown();
        } else if (section == "arch") {
            if (key == "hidden") cfg.hidden = detail::parse_width_list(val, key, line_no);
            else if (key == "activation") cfg.activation = val;
            else throw unknown();
        } else if (section == "train") {
            if (key == "optimizer") cfg.optimizer = val;
            else if (key == "lr") cfg.lr = detail::parse_f64(val, key, line_no);
            else if (key == "epochs") cfg.epochs = detail::parse_u64(val, key, line_no);
            else if (key == "batch_size") cfg.batch_size = detail::parse_u64(val, key, line_no);
            else if (key == "plateau_factor") cfg.plateau_factor = detail::parse_f64(val, key, line_no);
            else if (key == "plateau_patience") cfg.plateau_patience = detail::parse_u64(val, key, line_no);
            else if (key == "lbfgs_steps") cfg.lbfgs_steps = detail::parse_u64(val, key, line_no);
            else throw unknown();
        } else if (section == "lsr") {
            if (key == "rank") cfg.rank = detail::parse_u64(val, key, line_no);
            else if (key == "oversample") cfg.oversample = detail::parse_u64(val, key, line_no);
            else if (key == "precondition") cfg.precondition = detail::parse_bool(val, key, line_no);
            else if (key == "source") cfg.source = val;
            else if (key == "batch_size") cfg.lsr_batch_size = detail::parse_u64(val, key, line_no);
            else throw unknown();
        } else if (section == "ilsr") {
            if (key == "outer_iters") cfg.outer_iters = detail::parse_u64(val, key, line_no);
            else if (key == "align_steps") cfg.align_steps = detail::parse_u64(val, key, line_no);
            else if (key == "delta_tau_align") cfg.delta_tau_align = detail::parse_f64(val, key, line_no);
            else if (key == "delta_tau_lsr") cfg.delta_tau_lsr = detail::parse_f64(val, key, line_no);
            else if (key == "rank") cfg.ilsr_rank = detail::parse_u64(val, key, line_no);
            else throw unknown();
        } else if (section == "seeds") {
            if (key == "data") cfg.seed_data = detail::parse_u64(val, key, line_no);
            else if (key == "init") cfg.seed_init = detail::parse_u64(val, key, line_no);
            else if (key == "sketch") cfg.seed_sketch = detail::parse_u64(val, key, line_no);
            else throw unknown();
        } else {  // out
            if (key == "dir") cfg.out_dir = val;
            else throw unknown();
        }
    }
    if (cfg.source != "output" && cfg.source != "residual")
        throw ConfigError("key 'source' must be 'output' or 'residual', got '" + cfg.source + "'");
    if (cfg.optimizer != "adam" && cfg.optimizer != "lbfgs")
        throw ConfigError("key 'optimizer' must be 'adam' or 'lbfgs', got '" + cfg.optimizer + "'");
    return cfg;
}

inline std::string serialize_config(const RunConfig& c) {
    std::ostringstream os;
    os << "[problem]\n";
    os << "name = " << problem_name(c.problem) << '\n';
    os << "train_points = " << c.train_points << '\n';
    os << "test_points = " << c.test_points << '\n';
    os << "classes = " << c.classes << '\n';
    os << "interior_points = " << c.interior_points << '\n';
    os << "boundary_points = " << c.boundary_points << '\n';
    os << "initial_points = " << c.initial_points << '\n';
    os << "periodic_points = " << c.periodic_points << '\n';
    os << "[arch]\n";
    os << "hidden = ";
    for (std::size_t i = 0; i < c.hidden.size(); ++i) os << (i ? "," : "") << c.hidden[i];
    os << '\n';
    os << "activation = " << c.activation << '\n';
    os << "[train]\n";
    os << "optimizer = " << c.optimizer << '\n';
    os << "lr = " << format_double(c.lr) << '\n';
    os << "epochs = " << c.epochs << '\n';
    os << "batch_size = " << c.batch_size << '\n';
    os << "plateau_factor = " << format_double(c.plateau_factor) << '\n';
    os << "plateau_patience = " << c.plateau_patience << '\n';
    os << "lbfgs_steps = " << c.lbfgs_steps << '\n';
    os << "[lsr]\n";
    os << "rank = " << c.rank << '\n';
    os << "oversample = " << c.oversample << '\n';
    os << "precondition = " << (c.precondition ? "true" : "false") << '\n';
    os << "source = " << c.source << '\n';
    os << "batch_size = " << c.lsr_batch_size << '\n';
    os << "[ilsr]\n";
    os << "outer_iters = " << c.outer_iters << '\n';
    os << "align_steps = " << c.align_steps << '\n';
    os << "delta_tau_align = " << format_double(c.delta_tau_align) << '\n';
    os << "delta_tau_lsr = " << format_double(c.delta_tau_lsr) << '\n';
    os << "rank = " << c.ilsr_rank << '\n';
    os << "[seeds]\n";
    os << "data = " << c.seed_data << '\n';
    os << "init = " << c.seed_init << '\n';
    os << "sketch = " << c.seed_sketch << '\n';
    os << "[out]\n";
    os << "dir = " << c.out_dir << '\n';
    return os.str();
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::ios_base::failure("cannot open config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

}  // namespace lsrkit
