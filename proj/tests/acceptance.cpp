// End-to-end acceptance gate. Each numbered criterion prints one PASS/FAIL
// line with the measured value next to its threshold; the exit code is the
// number of failures. Runs the two desk-scale training experiments in full,
// so expect a couple of minutes on one core.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "adiag/gradcheck.hpp"
#include "adiag/graph.hpp"
#include "adiag/model.hpp"
#include "adiag/rng.hpp"
#include "adiag/synthgen.hpp"
#include "adiag/tensor.hpp"
#include "adiag/train.hpp"

using namespace adiag;

namespace {

int g_failures = 0;
int g_index = 0;

void report(const char* name, bool ok, const std::string& detail) {
    ++g_index;
    if (!ok) ++g_failures;
    std::printf("[%2d] %s  %-24s %s\n", g_index, ok ? "PASS" : "FAIL", name, detail.c_str());
    std::fflush(stdout);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), pattern, a, b, c);
    return buf;
}

std::vector<char> slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    return std::vector<char>(std::istreambuf_iterator<char>(is),
                             std::istreambuf_iterator<char>());
}

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("adiag_accept_" + std::to_string(::getpid()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

void check_gradient_oracle() {
    const auto t0 = std::chrono::steady_clock::now();
    ModelConfig cfg;
    cfg.nodes = 16;
    cfg.hidden = 8;
    double worst = 0.0;
    bool ok = true;
    for (Activation act : {Activation::sigmoid, Activation::relu}) {
        cfg.activation = act;
        GradCheckReport r = gradcheck_model(cfg, 3);
        worst = std::max(worst, r.max_rel_err);
        ok = ok && r.pass();
    }
    const double elapsed = seconds_since(t0);
    ok = ok && worst < 1e-5 && elapsed < 60.0;
    report("gradient oracle", ok,
           fmt("max rel err %.3g (< 1e-5), both activations, %.1f s (< 60 s)", worst, elapsed));
}

void check_shape_contract() {
    ModelConfig cfg;  // 1162 nodes, sigmoid, the architecture's home scale
    AdiagModel model = AdiagModel::init(cfg, 3);
    GradCheckInputs in = make_gradcheck_inputs(cfg.nodes, 3);
    const auto t0 = std::chrono::steady_clock::now();
    ForwardTrace trace;
    adiag_forward(in.x, in.w, model, false, &trace);
    const double elapsed = seconds_since(t0);
    const std::vector<int> want = {1162, 291, 73, 18};
    std::string counts;
    for (int n : trace.node_counts) counts += (counts.empty() ? "" : "->") + std::to_string(n);
    const bool ok = trace.node_counts == want && elapsed < 30.0;
    report("coarsening ladder", ok, counts + fmt(", forward %.2f s (< 30 s)", elapsed));
}

void check_edge_count() {
    GenConfig cfg;
    cfg.n_ad = 1;
    cfg.n_nc = 0;
    cfg.seed = 3;
    GraphDataset ds = generate_dataset(cfg);
    const std::size_t edges = dense_to_coo(ds.graphs.front().w).size();
    const std::size_t want = complete_edge_count(cfg.nodes);
    report("edge count", edges == want && want == 674541,
           std::to_string(edges) + " COO edges (expect 674541)");
}

void check_permutation_invariance() {
    ModelConfig cfg;
    cfg.nodes = 64;
    AdiagModel model = AdiagModel::init(cfg, 3);
    GradCheckInputs in = make_gradcheck_inputs(64, 3);
    const double base = adiag_forward(in.x, in.w, model, false).item();
    double lo = base, hi = base;
    Rng rng(derive_seed(3, 99));
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<int> perm(64);
        for (int i = 0; i < 64; ++i) perm[i] = i;
        rng.shuffle(perm);
        Tensor px = Tensor::zeros({64, 3});
        Tensor pw = Tensor::zeros({64, 64});
        for (int i = 0; i < 64; ++i) {
            for (int j = 0; j < 3; ++j) px.at(perm[i], j) = in.x.at(i, j);
            for (int j = 0; j < 64; ++j) pw.at(perm[i], perm[j]) = in.w.at(i, j);
        }
        const double logit = adiag_forward(px, pw, model, false).item();
        lo = std::min(lo, logit);
        hi = std::max(hi, logit);
    }
    report("permutation invariance", hi - lo < 1e-8,
           fmt("logit spread %.3g over 20 permutations (< 1e-8)", hi - lo));
}

void check_assignment_normalization() {
    double row_err = 0.0, sym_err = 0.0, most_negative = 0.0;
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        ModelConfig cfg;
        cfg.nodes = 64;
        AdiagModel model = AdiagModel::init(cfg, seed);
        GradCheckInputs in = make_gradcheck_inputs(64, seed);
        ForwardTrace trace;
        adiag_forward(in.x, in.w, model, true, &trace);
        for (const Tensor& s : trace.assignments) {
            for (int i = 0; i < s.rows(); ++i) {
                double sum = 0.0;
                for (int j = 0; j < s.cols(); ++j) sum += s.at(i, j);
                row_err = std::max(row_err, std::fabs(sum - 1.0));
            }
        }
        for (const Tensor& a : trace.coarse_adj) {
            for (int i = 0; i < a.rows(); ++i) {
                for (int j = 0; j < a.cols(); ++j) {
                    sym_err = std::max(sym_err, std::fabs(a.at(i, j) - a.at(j, i)));
                    most_negative = std::min(most_negative, a.at(i, j));
                }
            }
        }
    }
    const bool ok = row_err < 1e-12 && sym_err < 1e-10 && most_negative >= -1e-12;
    report("pooling normalization", ok,
           fmt("row sum err %.3g (< 1e-12), asymmetry %.3g (< 1e-10), min entry %.3g (>= -1e-12)",
               row_err, sym_err, most_negative));
}

TrainConfig desk_train_config() {
    TrainConfig tcfg;
    tcfg.seed = 3;
    return tcfg;
}

GenConfig desk_gen_config(double thinning) {
    GenConfig g = GenConfig::desk();
    g.thinning = thinning;
    g.seed = 3;
    return g;
}

void check_planted_signal() {
    const auto t0 = std::chrono::steady_clock::now();
    GraphDataset data = generate_dataset(desk_gen_config(0.85));

    const double baseline = mean_weight_threshold_accuracy(data);
    report("threshold baseline", baseline > 0.8,
           fmt("mean-weight threshold accuracy %.3f (> 0.8)", baseline));

    ModelConfig mcfg;
    mcfg.activation = Activation::relu;
    TrainResult r = train(data, mcfg, desk_train_config());
    const double elapsed = seconds_since(t0);
    const double first = r.history.epochs.front().train_loss;
    const double last = r.history.epochs.back().train_loss;
    const bool ok = r.history.best_val_acc >= 0.90 && last < 0.8 * first && elapsed < 900.0;
    report("planted signal learned", ok,
           fmt("best val acc %.3f (>= 0.90), train loss ratio %.2g (< 0.8), %.0f s (< 900 s)",
               r.history.best_val_acc, last / first, elapsed));
}

void check_null_control() {
    GraphDataset data = generate_dataset(desk_gen_config(1.0));
    ModelConfig mcfg;
    mcfg.activation = Activation::relu;
    TrainResult r = train(data, mcfg, desk_train_config());
    const double final_acc = r.history.epochs.back().val_acc;
    double mean_acc = 0.0;
    for (const EpochMetrics& m : r.history.epochs) mean_acc += m.val_acc;
    mean_acc /= static_cast<double>(r.history.epochs.size());
    report("null-signal control", final_acc >= 0.4 && final_acc <= 0.6,
           fmt("final val acc %.3f (in [0.4, 0.6]); epoch mean %.3f", final_acc, mean_acc));
}

void check_determinism() {
    TempDir dir;
    GenConfig g;
    g.nodes = 32;
    g.vertices_per_node = 2;
    g.n_ad = 6;
    g.n_nc = 6;
    g.seed = 3;
    GraphDataset data = generate_dataset(g);
    ModelConfig mcfg;
    TrainConfig tcfg;
    tcfg.epochs = 5;
    tcfg.seed = 3;
    for (int run = 0; run < 2; ++run) {
        TrainResult r = train(data, mcfg, tcfg);
        const std::string tag = std::to_string(run);
        save_checkpoint(r.model, dir.file("model" + tag + ".adck"));
        write_metrics_csv(dir.file("metrics" + tag + ".csv"), r.history);
    }
    const bool csv_equal = slurp(dir.file("metrics0.csv")) == slurp(dir.file("metrics1.csv"));
    const bool ckpt_equal = slurp(dir.file("model0.adck")) == slurp(dir.file("model1.adck"));
    report("determinism", csv_equal && ckpt_equal,
           std::string("repeat runs: metrics CSV bytes ") + (csv_equal ? "equal" : "DIFFER") +
               ", checkpoint bytes " + (ckpt_equal ? "equal" : "DIFFER"));
}

void check_round_trips() {
    TempDir dir;
    GenConfig g;
    g.nodes = 32;
    g.vertices_per_node = 2;
    g.n_ad = 1;
    g.n_nc = 1;
    g.seed = 3;
    GraphDataset data = generate_dataset(g);

    save_graph(data.graphs.front(), dir.file("g1.adgr"));
    BrainGraph loaded = load_graph(dir.file("g1.adgr"));
    save_graph(loaded, dir.file("g2.adgr"));
    const bool graph_ok = slurp(dir.file("g1.adgr")) == slurp(dir.file("g2.adgr"));

    ModelConfig mcfg;
    mcfg.nodes = 32;
    mcfg.hidden = 8;
    AdiagModel model = AdiagModel::init(mcfg, 3);
    save_checkpoint(model, dir.file("m1.adck"));
    AdiagModel reloaded = load_checkpoint(dir.file("m1.adck"));
    save_checkpoint(reloaded, dir.file("m2.adck"));
    const bool ckpt_ok = slurp(dir.file("m1.adck")) == slurp(dir.file("m2.adck"));

    report("file round-trips", graph_ok && ckpt_ok,
           std::string("graph bytes ") + (graph_ok ? "stable" : "DIFFER") +
               ", checkpoint bytes " + (ckpt_ok ? "stable" : "DIFFER"));
}

void check_loss_anchor() {
    const double loss = bce_with_logits(Tensor::scalar(0.0), 1.0).item();
    const double err = std::fabs(loss - std::log(2.0));
    report("loss anchor at zero logit", err < 1e-12,
           fmt("|loss - ln 2| = %.3g (< 1e-12)", err));
}

} // namespace

int main() {
    std::printf("acceptance gate, %d criteria\n", 11);
    check_gradient_oracle();
    check_shape_contract();
    check_edge_count();
    check_permutation_invariance();
    check_assignment_normalization();
    check_planted_signal();
    check_null_control();
    check_determinism();
    check_round_trips();
    check_loss_anchor();
    if (g_failures == 0) {
        std::printf("all criteria passed\n");
    } else {
        std::printf("%d criteria FAILED\n", g_failures);
    }
    return g_failures;
}
