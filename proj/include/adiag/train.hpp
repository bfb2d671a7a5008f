#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "adiag/errors.hpp"
#include "adiag/graph.hpp"
#include "adiag/model.hpp"
#include "adiag/rng.hpp"
#include "adiag/tensor.hpp"

namespace adiag {

enum class Optimizer { sgd, adam };
enum class LrSchedule { constant, step };

inline const char* optimizer_name(Optimizer o) {
    return o == Optimizer::sgd ? "sgd" : "adam";
}

inline const char* schedule_name(LrSchedule s) {
    return s == LrSchedule::constant ? "constant" : "step";
}

struct TrainConfig {
    int epochs = 150;
    double learning_rate = 1e-3;  // zero is legal and means "measure, never move"
    LrSchedule schedule = LrSchedule::step;
    double lr_gamma = 0.5;
    int lr_every = 50;
    Optimizer optimizer = Optimizer::adam;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int batch_size = 8;
    double val_fraction = 0.2;
    std::uint64_t seed = 2026;
    bool use_batchnorm = true;  // authoritative; copied onto the model config
    double lambda_link = 0.0;   // weight of the pooling reconstruction penalty
    double lambda_entropy = 0.0;

    void check() const {
        if (epochs < 1)
            throw ConfigError("epochs must be at least 1, got " + std::to_string(epochs));
        if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
            throw ConfigError("learning rate must be finite and non-negative");
        if (!(val_fraction > 0.0) || !(val_fraction < 1.0))
            throw ConfigError("val fraction must lie strictly between 0 and 1");
        if (batch_size < 1)
            throw ConfigError("batch size must be at least 1");
        if (!(lr_gamma > 0.0))
            throw ConfigError("lr decay factor must be positive");
        if (lr_every < 1)
            throw ConfigError("lr decay interval must be at least 1 epoch");
        if (adam_beta1 < 0.0 || adam_beta1 >= 1.0 || adam_beta2 < 0.0 || adam_beta2 >= 1.0)
            throw ConfigError("adam betas must lie in [0, 1)");
        if (!(adam_eps > 0.0))
            throw ConfigError("adam eps must be positive");
        if (lambda_link < 0.0 || lambda_entropy < 0.0)
            throw ConfigError("auxiliary loss weights must be non-negative");
    }
};

// Learning rate in force during a given zero-based epoch.
inline double lr_at(const TrainConfig& cfg, int epoch) {
    if (cfg.schedule == LrSchedule::constant) return cfg.learning_rate;
    return cfg.learning_rate * std::pow(cfg.lr_gamma, epoch / cfg.lr_every);
}

struct EpochMetrics {
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_loss = 0.0;
    double val_acc = 0.0;
};

struct MetricsHistory {
    std::vector<EpochMetrics> epochs;
    int best_epoch = -1;  // zero-based index into epochs
    double best_val_acc = 0.0;
};

struct SplitIndices {
    std::vector<int> train;
    std::vector<int> val;
};

// Seeded stratified holdout: each class contributes max(1, floor(fraction *
// class size)) validation graphs, chosen by shuffle, leaving at least one
// training graph per class.
inline SplitIndices stratified_split(const GraphDataset& data, double val_fraction,
                                     std::uint64_t seed) {
    if (!(val_fraction > 0.0) || !(val_fraction < 1.0))
        throw ConfigError("val fraction must lie strictly between 0 and 1");
    std::vector<int> by_label[2];
    for (std::size_t i = 0; i < data.graphs.size(); ++i) {
        const int y = data.graphs[i].label;
        if (y != 0 && y != 1)
            throw ConfigError("graph " + data.graphs[i].subject_id +
                              " has label " + std::to_string(y));
        by_label[y].push_back(static_cast<int>(i));
    }
    if (by_label[0].size() < 2 || by_label[1].size() < 2)
        throw ConfigError("training needs at least two graphs of each class, got " +
                          std::to_string(by_label[1].size()) + " positive and " +
                          std::to_string(by_label[0].size()) + " negative");

    Rng rng(derive_seed(seed, 10));
    SplitIndices split;
    for (auto& cls : by_label) {
        rng.shuffle(cls);
        const int take = std::max(
            1, static_cast<int>(std::floor(val_fraction * static_cast<double>(cls.size()))));
        for (std::size_t i = 0; i < cls.size(); ++i)
            (static_cast<int>(i) < take ? split.val : split.train).push_back(cls[i]);
    }
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.val.begin(), split.val.end());
    return split;
}

struct AuxWeights {
    double link = 0.0;
    double entropy = 0.0;
    bool any() const { return link != 0.0 || entropy != 0.0; }
};

struct GraphObjective {
    Tensor loss;   // scalar, tape-recorded if a tape is active
    double logit = 0.0;
};

// Classification loss for one graph, plus the optional pooling regularizers
// summed over all three stages. Runs under whatever tape is active.
inline GraphObjective graph_objective(AdiagModel& model, const BrainGraph& g,
                                      const AuxWeights& aux, bool train_mode) {
    ForwardTrace trace;
    Tensor logit = adiag_forward(g.x, g.w, model, train_mode, aux.any() ? &trace : nullptr);
    Tensor loss = bce_with_logits(logit, static_cast<double>(g.label));
    if (aux.any()) {
        for (std::size_t i = 0; i < trace.assignments.size(); ++i) {
            if (aux.link != 0.0)
                loss = add(loss, scale(link_prediction_loss(trace.assignments[i],
                                                            trace.input_adj[i]),
                                       aux.link));
            if (aux.entropy != 0.0)
                loss = add(loss, scale(entropy_loss(trace.assignments[i]), aux.entropy));
        }
    }
    return {loss, logit.item()};
}

// Adds each graph's parameter gradient into grad_accum (one vector per entry
// of named_parameters, zeroed by the caller). Returns the summed loss values
// and bumps `correct` by the number of right train-mode predictions. The
// accumulated gradient is the exact sum over graphs of per-graph gradients.
inline void accumulate_gradients(AdiagModel& model, const GraphDataset& data,
                                 const std::vector<int>& batch, const AuxWeights& aux,
                                 std::vector<std::vector<double>>& grad_accum,
                                 std::vector<double>& loss_by_index, int& correct,
                                 int epoch_display) {
    auto params = model.named_parameters();
    for (int idx : batch) {
        const BrainGraph& g = data.graphs[static_cast<std::size_t>(idx)];
        Tape tape;
        GraphObjective obj;
        {
            TapeScope scope(tape);
            obj = graph_objective(model, g, aux, true);
        }
        backward(obj.loss, tape);

        const double lval = obj.loss.item();
        if (!std::isfinite(lval))
            throw DivergenceError("training diverged: non-finite loss at epoch " +
                                  std::to_string(epoch_display) + " on graph " +
                                  g.subject_id);
        loss_by_index[static_cast<std::size_t>(idx)] = lval;
        if (predict_label(obj.logit) == g.label) ++correct;

        for (std::size_t p = 0; p < params.size(); ++p) {
            const auto& gr = params[p].second.grad();
            if (gr.empty()) continue;  // parameter did not participate
            auto& acc = grad_accum[p];
            for (std::size_t i = 0; i < gr.size(); ++i) acc[i] += gr[i];
        }
    }
}

struct TrainResult {
    AdiagModel model;  // snapshot from the best-validation epoch
    MetricsHistory history;
    SplitIndices split;
};

// The full regimen: stratified split, shuffled minibatches with summed
// gradients, one optimizer step per batch on the mean gradient, step-decayed
// learning rate, per-epoch metrics on both splits, best-validation snapshot.
// Everything downstream of the seed is deterministic.
inline TrainResult train(const GraphDataset& data, ModelConfig mcfg, const TrainConfig& tcfg,
                         const std::function<void(int, const EpochMetrics&)>& on_epoch = {}) {
    tcfg.check();
    if (data.graphs.empty()) throw ConfigError("cannot train on an empty dataset");
    const int nodes = data.graphs.front().n();
    for (const BrainGraph& g : data.graphs)
        if (g.n() != nodes)
            throw ConfigError("graphs disagree on node count: " + g.subject_id +
                              " has " + std::to_string(g.n()) + ", expected " +
                              std::to_string(nodes));

    mcfg.nodes = nodes;
    mcfg.use_batchnorm = tcfg.use_batchnorm;

    SplitIndices split = stratified_split(data, tcfg.val_fraction, tcfg.seed);
    AdiagModel model = AdiagModel::init(mcfg, derive_seed(tcfg.seed, 11));
    Rng shuffle_rng(derive_seed(tcfg.seed, 12));
    const AuxWeights aux{tcfg.lambda_link, tcfg.lambda_entropy};

    auto params = model.named_parameters();
    std::vector<std::vector<double>> grad_accum(params.size());
    std::vector<std::vector<double>> adam_m(params.size()), adam_v(params.size());
    for (std::size_t p = 0; p < params.size(); ++p) {
        grad_accum[p].assign(params[p].second.size(), 0.0);
        adam_m[p].assign(params[p].second.size(), 0.0);
        adam_v[p].assign(params[p].second.size(), 0.0);
    }
    int adam_t = 0;

    TrainResult result;
    std::vector<int> order = split.train;

    for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
        const double lr = lr_at(tcfg, epoch);
        shuffle_rng.shuffle(order);

        std::vector<double> loss_by_index(data.graphs.size(), 0.0);
        int train_correct = 0;

        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(tcfg.batch_size)) {
            const std::size_t count =
                std::min<std::size_t>(tcfg.batch_size, order.size() - start);
            std::vector<int> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(start + count));
            for (auto& acc : grad_accum) std::fill(acc.begin(), acc.end(), 0.0);
            accumulate_gradients(model, data, batch, aux, grad_accum, loss_by_index,
                                 train_correct, epoch + 1);

            const double inv = 1.0 / static_cast<double>(count);
            if (tcfg.optimizer == Optimizer::sgd) {
                for (std::size_t p = 0; p < params.size(); ++p) {
                    double* value = params[p].second.data();
                    for (std::size_t i = 0; i < grad_accum[p].size(); ++i)
                        value[i] -= lr * grad_accum[p][i] * inv;
                }
            } else {
                ++adam_t;
                const double c1 = 1.0 - std::pow(tcfg.adam_beta1, adam_t);
                const double c2 = 1.0 - std::pow(tcfg.adam_beta2, adam_t);
                for (std::size_t p = 0; p < params.size(); ++p) {
                    double* value = params[p].second.data();
                    for (std::size_t i = 0; i < grad_accum[p].size(); ++i) {
                        const double g = grad_accum[p][i] * inv;
                        adam_m[p][i] = tcfg.adam_beta1 * adam_m[p][i] +
                                       (1.0 - tcfg.adam_beta1) * g;
                        adam_v[p][i] = tcfg.adam_beta2 * adam_v[p][i] +
                                       (1.0 - tcfg.adam_beta2) * g * g;
                        value[i] -= lr * (adam_m[p][i] / c1) /
                                    (std::sqrt(adam_v[p][i] / c2) + tcfg.adam_eps);
                    }
                }
            }
        }

        EpochMetrics m;
        // Sum per-graph losses in dataset order, not visit order, so the
        // reported number does not depend on how the shuffle fell.
        double train_sum = 0.0;
        for (int idx : split.train) train_sum += loss_by_index[static_cast<std::size_t>(idx)];
        m.train_loss = train_sum / static_cast<double>(split.train.size());
        m.train_acc = static_cast<double>(train_correct) /
                      static_cast<double>(split.train.size());

        double val_sum = 0.0;
        int val_correct = 0;
        for (int idx : split.val) {
            const BrainGraph& g = data.graphs[static_cast<std::size_t>(idx)];
            GraphObjective obj = graph_objective(model, g, aux, false);
            const double lval = obj.loss.item();
            if (!std::isfinite(lval))
                throw DivergenceError("training diverged: non-finite validation loss at epoch " +
                                      std::to_string(epoch + 1) + " on graph " +
                                      g.subject_id);
            val_sum += lval;
            if (predict_label(obj.logit) == g.label) ++val_correct;
        }
        m.val_loss = val_sum / static_cast<double>(split.val.size());
        m.val_acc = static_cast<double>(val_correct) / static_cast<double>(split.val.size());
        result.history.epochs.push_back(m);
        if (on_epoch) on_epoch(epoch, m);

        // Strict improvement only, so ties keep the earlier epoch.
        if (result.history.best_epoch < 0 || m.val_acc > result.history.best_val_acc) {
            result.history.best_epoch = epoch;
            result.history.best_val_acc = m.val_acc;
            result.model = model.clone();
        }
    }

    result.split = std::move(split);
    return result;
}

struct EvalResult {
    double accuracy = 0.0;
    double mean_loss = 0.0;
    std::array<std::array<int, 2>, 2> confusion{};  // [true label][prediction]
    int count = 0;
};

// Eval-mode pass over a whole dataset; running statistics are read, never
// written, so evaluating twice gives identical numbers.
inline EvalResult evaluate(AdiagModel& model, const GraphDataset& data) {
    if (data.graphs.empty()) throw ConfigError("cannot evaluate an empty dataset");
    EvalResult r;
    double loss_sum = 0.0;
    int correct = 0;
    for (const BrainGraph& g : data.graphs) {
        Tensor logit = adiag_forward(g.x, g.w, model, false);
        loss_sum += bce_with_logits(logit, static_cast<double>(g.label)).item();
        const int pred = predict_label(logit.item());
        r.confusion[static_cast<std::size_t>(g.label)][static_cast<std::size_t>(pred)] += 1;
        if (pred == g.label) ++correct;
    }
    r.count = static_cast<int>(data.graphs.size());
    r.accuracy = static_cast<double>(correct) / static_cast<double>(r.count);
    r.mean_loss = loss_sum / static_cast<double>(r.count);
    return r;
}

// History as CSV, one row per epoch, six significant digits.
inline void write_metrics_csv(const std::string& path, const MetricsHistory& history) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open metrics file for writing: " + path);
    os << "epoch,train_loss,train_acc,val_loss,val_acc\n";
    char line[192];
    for (std::size_t i = 0; i < history.epochs.size(); ++i) {
        const EpochMetrics& m = history.epochs[i];
        std::snprintf(line, sizeof line, "%zu,%.6g,%.6g,%.6g,%.6g\n", i + 1,
                      m.train_loss, m.train_acc, m.val_loss, m.val_acc);
        os << line;
    }
    if (!os) throw IoError("short write while saving metrics: " + path);
}

inline double mean_edge_weight(const BrainGraph& g) {
    const int n = g.n();
    if (n < 2) return 0.0;
    double sum = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) sum += g.w.at(i, j);
    return sum / static_cast<double>(complete_edge_count(n));
}

// Strawman classifier: the best single threshold on mean edge weight, trying
// both directions. Measures whether a class signal exists in the data at all,
// independent of the network.
inline double mean_weight_threshold_accuracy(const GraphDataset& data) {
    if (data.graphs.empty()) throw ConfigError("cannot score an empty dataset");
    const std::size_t n = data.graphs.size();
    std::vector<double> means(n);
    for (std::size_t i = 0; i < n; ++i) means[i] = mean_edge_weight(data.graphs[i]);

    double best = 0.0;
    auto score = [&](auto&& predict) {
        int correct = 0;
        for (std::size_t i = 0; i < n; ++i)
            if (predict(means[i]) == data.graphs[i].label) ++correct;
        best = std::max(best, static_cast<double>(correct) / static_cast<double>(n));
    };
    score([](double) { return 0; });
    score([](double) { return 1; });
    for (double tau : means) {
        score([tau](double m) { return m <= tau ? 1 : 0; });
        score([tau](double m) { return m >= tau ? 1 : 0; });
    }
    return best;
}

}  // namespace adiag
