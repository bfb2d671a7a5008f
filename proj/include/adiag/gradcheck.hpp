#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "adiag/model.hpp"
#include "adiag/rng.hpp"
#include "adiag/tensor.hpp"

namespace adiag {

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    int checked = 0;
    int failed = 0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> per_param;
    double max_rel_err = 0.0;
    int checked = 0;
    int failed = 0;
    double tol = 0.0;
    std::string worst_param;
    bool pass() const { return failed == 0; }
};

struct GradCheckInputs {
    Tensor x;  // node features, unit scale
    Tensor w;  // symmetric weighted adjacency, zero diagonal
};

// Synthetic graph for exercising the backward pass: features in [-1, 1],
// edge weights bounded away from zero so no normalization kinks sit under
// the finite-difference probe.
inline GradCheckInputs make_gradcheck_inputs(int nodes, std::uint64_t seed) {
    Rng rng(derive_seed(seed, 1));
    GradCheckInputs in;
    in.x = Tensor::zeros({nodes, 3});
    double* xv = in.x.data();
    for (std::size_t i = 0; i < in.x.size(); ++i) xv[i] = rng.uniform(-1.0, 1.0);
    in.w = Tensor::zeros({nodes, nodes});
    for (int i = 0; i < nodes; ++i) {
        for (int j = i + 1; j < nodes; ++j) {
            const double v = rng.uniform(0.05, 1.0);
            in.w.at(i, j) = v;
            in.w.at(j, i) = v;
        }
    }
    return in;
}

// Compares the recorded backward pass against central differences on every
// parameter entry, using the training-mode logit as the scalar objective.
// The step adapts to the parameter's magnitude; the error is relative with a
// small absolute floor so near-zero gradients are not judged on noise alone.
inline GradCheckReport gradcheck_model(const ModelConfig& cfg, std::uint64_t seed,
                                       double step = 1e-5, double tol = 1e-5) {
    AdiagModel model = AdiagModel::init(cfg, derive_seed(seed, 0));
    GradCheckInputs in = make_gradcheck_inputs(cfg.nodes, seed);

    // Check at a generic point. Freshly initialized biases are all zero,
    // which parks relu pre-activations exactly on the kink where central
    // differences and the subgradient legitimately disagree.
    Rng jitter(derive_seed(seed, 2));
    for (auto& [name, t] : model.named_parameters()) {
        double* v = t.data();
        for (std::size_t i = 0; i < t.size(); ++i) v[i] += jitter.uniform(-0.2, 0.2);
    }

    Tape tape;
    Tensor loss;
    {
        TapeScope scope(tape);
        loss = adiag_forward(in.x, in.w, model, true);
    }
    backward(loss, tape);

    auto params = model.named_parameters();
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (auto& [name, t] : params) {
        std::vector<double> g = t.grad();
        if (g.empty()) g.assign(t.size(), 0.0);  // parameter unused this forward
        analytic.push_back(std::move(g));
    }

    GradCheckReport report;
    report.tol = tol;

    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& t = params[p].second;
        GradCheckEntry entry;
        entry.name = params[p].first;

        double* values = t.data();
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double saved = values[i];
            const double h = step * std::max(1.0, std::abs(saved));

            values[i] = saved + h;
            const double up = adiag_forward(in.x, in.w, model, true).item();
            values[i] = saved - h;
            const double down = adiag_forward(in.x, in.w, model, true).item();
            values[i] = saved;

            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic[p][i];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-3});
            const double rel = std::abs(a - numeric) / denom;

            entry.checked += 1;
            if (rel > entry.max_rel_err) entry.max_rel_err = rel;
            if (rel >= tol) entry.failed += 1;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_param = entry.name;
            }
        }

        report.checked += entry.checked;
        report.failed += entry.failed;
        report.per_param.push_back(std::move(entry));
    }
    return report;
}

}  // namespace adiag
