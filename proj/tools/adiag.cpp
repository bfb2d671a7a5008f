// adiag: generate synthetic connectome datasets, train and evaluate the
// hierarchical pooling classifier, score single graphs, and verify gradients.
//
// Exit codes: 0 success, 2 config/validation error, 3 I/O error,
// 4 training divergence, 5 gradient-check failure.

#include <cstdio>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"

#include "adiag/config.hpp"
#include "adiag/gradcheck.hpp"
#include "adiag/graph.hpp"
#include "adiag/model.hpp"
#include "adiag/synthgen.hpp"
#include "adiag/train.hpp"

namespace {

using namespace adiag;

void require_path(const std::string& value, const char* key, const char* why) {
    if (value.empty()) {
        throw ConfigError(std::string("missing required path: set ") + key + " (" + why + ")");
    }
}

// An existing directory with no dataset manifest is a content problem, not a
// filesystem one, so it maps to exit 2 rather than 3.
GraphDataset load_dataset_checked(const std::string& dir) {
    if (!std::filesystem::exists(manifest_path(dir))) {
        throw ConfigError("no dataset manifest in \"" + dir + "\"");
    }
    GraphDataset ds = load_dataset(dir);
    if (ds.graphs.empty()) throw ConfigError("dataset in \"" + dir + "\" is empty");
    return ds;
}

int cmd_gen(const RunConfig& rc) {
    require_path(rc.out_dir, "out_dir", "where the dataset is written");
    GraphDataset ds = generate_dataset(rc.gen);
    save_dataset(ds, rc.out_dir);
    std::size_t edges = complete_edge_count(rc.gen.nodes);
    if (rc.gen.sparsify_tau > 0.0 && !ds.graphs.empty()) {
        edges = dense_to_coo(ds.graphs.front().w).size();
    }
    std::printf("%d graphs (%d AD / %d NC), %zu edges each\n",
                static_cast<int>(ds.graphs.size()), ds.count_label(1), ds.count_label(0), edges);
    return 0;
}

int cmd_train(const RunConfig& rc, bool quiet) {
    require_path(rc.dataset_dir, "dataset_dir", "where the training graphs live");
    require_path(rc.out_dir, "out_dir", "where checkpoint and metrics are written");
    GraphDataset data = load_dataset_checked(rc.dataset_dir);

    const int total = rc.train.epochs;
    auto progress = [&](int epoch, const EpochMetrics& m) {
        std::printf("epoch %3d/%d  train loss %.4f  acc %.3f  val loss %.4f  acc %.3f\n",
                    epoch + 1, total, m.train_loss, m.train_acc, m.val_loss, m.val_acc);
    };
    TrainResult result = quiet ? train(data, rc.model, rc.train)
                               : train(data, rc.model, rc.train, progress);

    std::error_code ec;
    std::filesystem::create_directories(rc.out_dir, ec);
    if (ec) throw IoError("cannot create output directory " + rc.out_dir + ": " + ec.message());
    const auto out = std::filesystem::path(rc.out_dir);
    const std::string ckpt =
        rc.checkpoint.empty() ? (out / "model.adck").string() : rc.checkpoint;
    const std::string csv = (out / "metrics.csv").string();
    save_checkpoint(result.model, ckpt);
    write_metrics_csv(csv, result.history);
    // Manifest last: its presence marks a run that completed.
    write_run_manifest(rc, (out / "run_manifest.txt").string(), "train");

    if (!quiet) std::printf("wrote %s, %s, run_manifest.txt\n", ckpt.c_str(), csv.c_str());
    std::printf("best epoch %d  peak validation accuracy %.6g\n",
                result.history.best_epoch + 1, result.history.best_val_acc);
    return 0;
}

int cmd_eval(const RunConfig& rc) {
    require_path(rc.checkpoint, "checkpoint", "the trained model to evaluate");
    require_path(rc.dataset_dir, "dataset_dir", "the graphs to evaluate on");
    AdiagModel model = load_checkpoint(rc.checkpoint);
    GraphDataset data = load_dataset_checked(rc.dataset_dir);
    EvalResult r = evaluate(model, data);
    std::printf("graphs %d  accuracy %.6g  mean loss %.6g\n", r.count, r.accuracy, r.mean_loss);
    std::printf("confusion  tn %d  fp %d  fn %d  tp %d\n",
                r.confusion[0][0], r.confusion[0][1], r.confusion[1][0], r.confusion[1][1]);

    if (!rc.eval_csv.empty()) {
        std::ofstream os(rc.eval_csv, std::ios::trunc);
        if (!os) throw IoError("cannot open for writing: " + rc.eval_csv);
        os << "subject_id,label,prediction,probability\n";
        for (const BrainGraph& g : data.graphs) {
            const double logit = adiag_forward(g, model, false).item();
            char row[160];
            std::snprintf(row, sizeof(row), "%s,%d,%d,%.6g\n", g.subject_id.c_str(), g.label,
                          predict_label(logit), logit_to_probability(logit));
            os << row;
        }
        os.flush();
        if (!os) throw IoError("short write: " + rc.eval_csv);
    }
    return 0;
}

int cmd_predict(const RunConfig& rc) {
    require_path(rc.checkpoint, "checkpoint", "the trained model");
    require_path(rc.graph_file, "graph_file", "the graph to score");
    AdiagModel model = load_checkpoint(rc.checkpoint);
    BrainGraph g = load_graph(rc.graph_file);
    if (g.n() != model.config.nodes) {
        throw DimensionError("graph has " + std::to_string(g.n()) + " nodes but checkpoint was " +
                             "trained for " + std::to_string(model.config.nodes));
    }
    const double logit = adiag_forward(g, model, false).item();
    std::printf("label=%d p=%.6g\n", predict_label(logit), logit_to_probability(logit));
    return 0;
}

int cmd_gradcheck(const RunConfig& rc, const std::string& mode, bool inject_fault) {
    std::vector<Activation> acts;
    if (mode == "both" || mode == "sigmoid") acts.push_back(Activation::sigmoid);
    if (mode == "both" || mode == "relu") acts.push_back(Activation::relu);

    fault_inject_matmul_backward() = inject_fault;
    int failures = 0;
    for (Activation act : acts) {
        ModelConfig cfg;
        cfg.nodes = 16;
        cfg.hidden = 8;  // small width keeps the finite-difference sweep fast
        cfg.activation = act;
        GradCheckReport report = gradcheck_model(cfg, rc.train.seed);
        std::printf("gradcheck %-7s  max rel err %.3g  (%d parameter entries)  %s\n",
                    activation_name(act), report.max_rel_err, report.checked,
                    report.pass() ? "ok" : "FAIL");
        if (!report.pass()) {
            ++failures;
            for (const GradCheckEntry& e : report.per_param) {
                if (e.failed > 0) {
                    std::printf("  %-20s rel err %.3g  (%d of %d entries over tolerance)\n",
                                e.name.c_str(), e.max_rel_err, e.failed, e.checked);
                }
            }
        }
    }
    fault_inject_matmul_backward() = false;
    return failures > 0 ? 5 : 0;
}

int run(int argc, char** argv) {
    CLI::App app{"synthetic cortical connectome graphs and a hierarchical pooling classifier"};
    app.require_subcommand(1);

    std::string config_path;
    bool quiet = false;
    std::vector<std::pair<std::string, std::string>> overrides;

    app.add_option("--config", config_path, "key=value config file; flags override its entries");
    app.add_flag("--quiet", quiet, "suppress progress output");
    for (const ConfigKey& key : config_keys()) {
        const std::string name = key.name;
        app.add_option_function<std::string>(
               "--" + name,
               [&overrides, name](const std::string& v) { overrides.emplace_back(name, v); },
               key.help)
            ->group("Config keys");
    }

    CLI::App* gen = app.add_subcommand("gen", "generate a synthetic dataset into out_dir");
    CLI::App* train_cmd = app.add_subcommand("train", "train on dataset_dir, write to out_dir");
    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on dataset_dir");
    CLI::App* predict = app.add_subcommand("predict", "score one graph file with a checkpoint");
    CLI::App* gradcheck =
        app.add_subcommand("gradcheck", "compare every gradient to finite differences");

    std::string mode = "both";
    bool inject_fault = false;
    gradcheck->add_option("--mode", mode, "activation modes to check")
        ->check(CLI::IsMember({"both", "sigmoid", "relu"}));
    gradcheck->add_flag("--inject-fault", inject_fault)->group("");

    for (CLI::App* sub : {gen, train_cmd, eval_cmd, predict, gradcheck}) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    RunConfig rc;
    if (!config_path.empty()) load_config_file(rc, config_path);
    for (const auto& [key, value] : overrides) apply_config_key(rc, key, value);

    if (gen->parsed()) return cmd_gen(rc);
    if (train_cmd->parsed()) return cmd_train(rc, quiet);
    if (eval_cmd->parsed()) return cmd_eval(rc);
    if (predict->parsed()) return cmd_predict(rc);
    return cmd_gradcheck(rc, mode, inject_fault);
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const adiag::DivergenceError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    } catch (const adiag::IoError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const adiag::ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::filesystem::filesystem_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "unexpected error: %s\n", e.what());
        return 1;
    }
}
