#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "adiag/errors.hpp"
#include "adiag/model.hpp"
#include "adiag/synthgen.hpp"
#include "adiag/train.hpp"

namespace adiag {

inline constexpr const char* kVersion = "1.0.0";

// Everything a run needs, gathered in one place. A run config is a flat
// key=value text file ('#' starts a comment); the CLI exposes one flag per
// key, so a file and a flag list describe the same space. The single `seed`
// key feeds both the generator and the trainer; sub-streams are derived
// internally.
struct RunConfig {
    GenConfig gen;
    ModelConfig model;
    TrainConfig train;

    std::string dataset_dir;
    std::string out_dir;
    std::string checkpoint;
    std::string graph_file;
    std::string eval_csv;

    RunConfig() { gen.seed = train.seed; }
};

namespace detail {

inline int parse_int(const std::string& key, const std::string& value) {
    int out = 0;
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc{} || ptr != value.data() + value.size()) {
        throw ConfigError("config key \"" + key + "\": expected integer, got \"" + value + "\"");
    }
    return out;
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& value) {
    std::uint64_t out = 0;
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc{} || ptr != value.data() + value.size()) {
        throw ConfigError("config key \"" + key + "\": expected unsigned integer, got \"" +
                          value + "\"");
    }
    return out;
}

inline double parse_real(const std::string& key, const std::string& value) {
    double out = 0.0;
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc{} || ptr != value.data() + value.size()) {
        throw ConfigError("config key \"" + key + "\": expected number, got \"" + value + "\"");
    }
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ConfigError("config key \"" + key + "\": expected true/false, got \"" + value + "\"");
}

inline std::string fmt_int(long long v) { return std::to_string(v); }

inline std::string fmt_real(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

inline std::string fmt_bool(bool v) { return v ? "true" : "false"; }

inline Activation parse_activation(const std::string& key, const std::string& value) {
    if (value == "sigmoid") return Activation::sigmoid;
    if (value == "relu") return Activation::relu;
    throw ConfigError("config key \"" + key + "\": expected sigmoid or relu, got \"" +
                      value + "\"");
}

inline Aggregator parse_aggregator(const std::string& key, const std::string& value) {
    if (value == "weighted_mean") return Aggregator::weighted_mean;
    if (value == "mean") return Aggregator::mean;
    throw ConfigError("config key \"" + key + "\": expected weighted_mean or mean, got \"" +
                      value + "\"");
}

inline Optimizer parse_optimizer(const std::string& key, const std::string& value) {
    if (value == "sgd") return Optimizer::sgd;
    if (value == "adam") return Optimizer::adam;
    throw ConfigError("config key \"" + key + "\": expected sgd or adam, got \"" + value + "\"");
}

inline LrSchedule parse_schedule(const std::string& key, const std::string& value) {
    if (value == "constant") return LrSchedule::constant;
    if (value == "step") return LrSchedule::step;
    throw ConfigError("config key \"" + key + "\": expected constant or step, got \"" +
                      value + "\"");
}

} // namespace detail

struct ConfigKey {
    const char* name;
    const char* help;
    void (*apply)(RunConfig&, const std::string&);
    std::string (*echo)(const RunConfig&);
};

// Single authority for the key space. The file parser, the flag layer, and
// the run-manifest echo all walk this table, so they cannot drift apart.
inline const std::vector<ConfigKey>& config_keys() {
    using detail::fmt_bool;
    using detail::fmt_int;
    using detail::fmt_real;
    static const std::vector<ConfigKey> keys = {
        {"seed", "master RNG seed for generation and training",
         [](RunConfig& rc, const std::string& v) {
             rc.gen.seed = detail::parse_u64("seed", v);
             rc.train.seed = rc.gen.seed;
         },
         [](const RunConfig& rc) { return std::to_string(rc.train.seed); }},

        {"nodes", "graph nodes per generated subject",
         [](RunConfig& rc, const std::string& v) { rc.gen.nodes = detail::parse_int("nodes", v); },
         [](const RunConfig& rc) { return fmt_int(rc.gen.nodes); }},
        {"vertices_per_node", "surface vertices aggregated into each node",
         [](RunConfig& rc, const std::string& v) {
             rc.gen.vertices_per_node = detail::parse_int("vertices_per_node", v);
         },
         [](const RunConfig& rc) { return fmt_int(rc.gen.vertices_per_node); }},
        {"n_ad", "AD subjects to generate",
         [](RunConfig& rc, const std::string& v) { rc.gen.n_ad = detail::parse_int("n_ad", v); },
         [](const RunConfig& rc) { return fmt_int(rc.gen.n_ad); }},
        {"n_nc", "NC subjects to generate",
         [](RunConfig& rc, const std::string& v) { rc.gen.n_nc = detail::parse_int("n_nc", v); },
         [](const RunConfig& rc) { return fmt_int(rc.gen.n_nc); }},
        {"sigma_t", "edge kernel length scale, mm",
         [](RunConfig& rc, const std::string& v) {
             rc.gen.sigma_t = detail::parse_real("sigma_t", v);
         },
         [](const RunConfig& rc) { return fmt_real(rc.gen.sigma_t); }},
        {"thinning", "AD multiplier on affected-region thickness; 1.0 disables the signal",
         [](RunConfig& rc, const std::string& v) {
             rc.gen.thinning = detail::parse_real("thinning", v);
         },
         [](const RunConfig& rc) { return fmt_real(rc.gen.thinning); }},
        {"affected_fraction", "fraction of regions thinned in AD subjects",
         [](RunConfig& rc, const std::string& v) {
             rc.gen.affected_fraction = detail::parse_real("affected_fraction", v);
         },
         [](const RunConfig& rc) { return fmt_real(rc.gen.affected_fraction); }},
        {"mean_thickness", "population baseline thickness, mm",
         [](RunConfig& rc, const std::string& v) {
             rc.gen.mean_thickness = detail::parse_real("mean_thickness", v);
         },
         [](const RunConfig& rc) { return fmt_real(rc.gen.mean_thickness); }},
        {"subject_sd", "spread of per-subject baseline thickness, mm",
         [](RunConfig& rc, const std::string& v) {
             rc.gen.subject_sd = detail::parse_real("subject_sd", v);
         },
         [](const RunConfig& rc) { return fmt_real(rc.gen.subject_sd); }},
        {"vertex_noise_sd", "independent per-vertex measurement noise, mm",
         [](RunConfig& rc, const std::string& v) {
             rc.gen.vertex_noise_sd = detail::parse_real("vertex_noise_sd", v);
         },
         [](const RunConfig& rc) { return fmt_real(rc.gen.vertex_noise_sd); }},
        {"field_sd", "amplitude of the smooth regional thickness variation, mm",
         [](RunConfig& rc, const std::string& v) {
             rc.gen.field_sd = detail::parse_real("field_sd", v);
         },
         [](const RunConfig& rc) { return fmt_real(rc.gen.field_sd); }},
        {"min_thickness", "physiological clip floor, mm",
         [](RunConfig& rc, const std::string& v) {
             rc.gen.min_thickness = detail::parse_real("min_thickness", v);
         },
         [](const RunConfig& rc) { return fmt_real(rc.gen.min_thickness); }},
        {"radius", "cortical sphere radius, mm",
         [](RunConfig& rc, const std::string& v) {
             rc.gen.radius = detail::parse_real("radius", v);
         },
         [](const RunConfig& rc) { return fmt_real(rc.gen.radius); }},
        {"sparsify_tau", "drop edges below this weight; 0 keeps the complete graph",
         [](RunConfig& rc, const std::string& v) {
             rc.gen.sparsify_tau = detail::parse_real("sparsify_tau", v);
         },
         [](const RunConfig& rc) { return fmt_real(rc.gen.sparsify_tau); }},

        {"hidden", "feature width of every graph layer",
         [](RunConfig& rc, const std::string& v) {
             rc.model.hidden = detail::parse_int("hidden", v);
         },
         [](const RunConfig& rc) { return fmt_int(rc.model.hidden); }},
        {"activation", "nonlinearity for conv and embed layers: sigmoid or relu",
         [](RunConfig& rc, const std::string& v) {
             rc.model.activation = detail::parse_activation("activation", v);
         },
         [](const RunConfig& rc) { return std::string(activation_name(rc.model.activation)); }},
        {"aggregator", "neighborhood aggregation: weighted_mean or mean",
         [](RunConfig& rc, const std::string& v) {
             rc.model.aggregator = detail::parse_aggregator("aggregator", v);
         },
         [](const RunConfig& rc) { return std::string(aggregator_name(rc.model.aggregator)); }},

        {"epochs", "training epochs",
         [](RunConfig& rc, const std::string& v) {
             rc.train.epochs = detail::parse_int("epochs", v);
         },
         [](const RunConfig& rc) { return fmt_int(rc.train.epochs); }},
        {"learning_rate", "base learning rate",
         [](RunConfig& rc, const std::string& v) {
             rc.train.learning_rate = detail::parse_real("learning_rate", v);
         },
         [](const RunConfig& rc) { return fmt_real(rc.train.learning_rate); }},
        {"schedule", "learning-rate schedule: constant or step",
         [](RunConfig& rc, const std::string& v) {
             rc.train.schedule = detail::parse_schedule("schedule", v);
         },
         [](const RunConfig& rc) { return std::string(schedule_name(rc.train.schedule)); }},
        {"lr_gamma", "step-schedule decay factor",
         [](RunConfig& rc, const std::string& v) {
             rc.train.lr_gamma = detail::parse_real("lr_gamma", v);
         },
         [](const RunConfig& rc) { return fmt_real(rc.train.lr_gamma); }},
        {"lr_every", "epochs between step-schedule decays",
         [](RunConfig& rc, const std::string& v) {
             rc.train.lr_every = detail::parse_int("lr_every", v);
         },
         [](const RunConfig& rc) { return fmt_int(rc.train.lr_every); }},
        {"optimizer", "parameter update rule: sgd or adam",
         [](RunConfig& rc, const std::string& v) {
             rc.train.optimizer = detail::parse_optimizer("optimizer", v);
         },
         [](const RunConfig& rc) { return std::string(optimizer_name(rc.train.optimizer)); }},
        {"adam_beta1", "Adam first-moment decay",
         [](RunConfig& rc, const std::string& v) {
             rc.train.adam_beta1 = detail::parse_real("adam_beta1", v);
         },
         [](const RunConfig& rc) { return fmt_real(rc.train.adam_beta1); }},
        {"adam_beta2", "Adam second-moment decay",
         [](RunConfig& rc, const std::string& v) {
             rc.train.adam_beta2 = detail::parse_real("adam_beta2", v);
         },
         [](const RunConfig& rc) { return fmt_real(rc.train.adam_beta2); }},
        {"adam_eps", "Adam denominator floor",
         [](RunConfig& rc, const std::string& v) {
             rc.train.adam_eps = detail::parse_real("adam_eps", v);
         },
         [](const RunConfig& rc) { return fmt_real(rc.train.adam_eps); }},
        {"batch_size", "graphs per accumulated gradient step",
         [](RunConfig& rc, const std::string& v) {
             rc.train.batch_size = detail::parse_int("batch_size", v);
         },
         [](const RunConfig& rc) { return fmt_int(rc.train.batch_size); }},
        {"val_fraction", "held-out fraction per class",
         [](RunConfig& rc, const std::string& v) {
             rc.train.val_fraction = detail::parse_real("val_fraction", v);
         },
         [](const RunConfig& rc) { return fmt_real(rc.train.val_fraction); }},
        {"use_batchnorm", "normalize node features after each conv block",
         [](RunConfig& rc, const std::string& v) {
             rc.train.use_batchnorm = detail::parse_bool("use_batchnorm", v);
         },
         [](const RunConfig& rc) { return fmt_bool(rc.train.use_batchnorm); }},
        {"lambda_link", "weight of the link-prediction auxiliary loss",
         [](RunConfig& rc, const std::string& v) {
             rc.train.lambda_link = detail::parse_real("lambda_link", v);
         },
         [](const RunConfig& rc) { return fmt_real(rc.train.lambda_link); }},
        {"lambda_entropy", "weight of the assignment-entropy auxiliary loss",
         [](RunConfig& rc, const std::string& v) {
             rc.train.lambda_entropy = detail::parse_real("lambda_entropy", v);
         },
         [](const RunConfig& rc) { return fmt_real(rc.train.lambda_entropy); }},

        {"dataset_dir", "directory holding a generated dataset",
         [](RunConfig& rc, const std::string& v) { rc.dataset_dir = v; },
         [](const RunConfig& rc) { return rc.dataset_dir; }},
        {"out_dir", "directory for generated or trained outputs",
         [](RunConfig& rc, const std::string& v) { rc.out_dir = v; },
         [](const RunConfig& rc) { return rc.out_dir; }},
        {"checkpoint", "model checkpoint path",
         [](RunConfig& rc, const std::string& v) { rc.checkpoint = v; },
         [](const RunConfig& rc) { return rc.checkpoint; }},
        {"graph_file", "single graph file for prediction",
         [](RunConfig& rc, const std::string& v) { rc.graph_file = v; },
         [](const RunConfig& rc) { return rc.graph_file; }},
        {"eval_csv", "optional per-graph results file written by eval",
         [](RunConfig& rc, const std::string& v) { rc.eval_csv = v; },
         [](const RunConfig& rc) { return rc.eval_csv; }},
    };
    return keys;
}

inline void apply_config_key(RunConfig& rc, const std::string& key, const std::string& value) {
    for (const ConfigKey& k : config_keys()) {
        if (key == k.name) {
            k.apply(rc, value);
            return;
        }
    }
    throw ConfigError("unknown config key \"" + key + "\"");
}

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

} // namespace detail

inline void load_config_file(RunConfig& rc, const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config file: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path + ":" + std::to_string(lineno) +
                              ": expected key=value, got \"" + line + "\"");
        }
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key");
        }
        apply_config_key(rc, key, value);
    }
}

// One key=value per line, table order. Feeding this back through
// load_config_file reproduces the run.
inline std::string config_echo(const RunConfig& rc) {
    std::string out;
    for (const ConfigKey& k : config_keys()) {
        out += k.name;
        out += '=';
        out += k.echo(rc);
        out += '\n';
    }
    return out;
}

// The manifest doubles as a config file: non-key lines are comments, so
// `adiag train --config run_manifest.txt` replays the run it records.
inline void write_run_manifest(const RunConfig& rc, const std::string& path,
                               const std::string& command) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write run manifest: " + path);
    os << "# adiag " << kVersion << " run manifest (command: " << command << ")\n";
    os << config_echo(rc);
    os.flush();
    if (!os) throw IoError("short write on run manifest: " + path);
}

} // namespace adiag
