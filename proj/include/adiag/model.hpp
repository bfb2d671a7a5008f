#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "adiag/binio.hpp"
#include "adiag/errors.hpp"
#include "adiag/graph.hpp"
#include "adiag/rng.hpp"
#include "adiag/tensor.hpp"

namespace adiag {

// How a convolution layer pools its neighbourhood: weighted_mean divides each
// incoming feature by the node's total edge mass, mean ignores the weights and
// averages over whichever neighbours exist at all.
enum class Aggregator { weighted_mean, mean };

inline const char* aggregator_name(Aggregator a) {
    return a == Aggregator::weighted_mean ? "weighted_mean" : "mean";
}

struct SageLayer {
    Tensor weight;  // [2*f_in, f_out], left half acts on self features
    Tensor bias;    // [1, f_out]
    Activation act = Activation::sigmoid;
    Aggregator agg = Aggregator::weighted_mean;
};

namespace detail {

// 0/1 mask of the adjacency, detached from the tape on purpose: the mean
// aggregator treats the graph as unweighted, so its output must not carry
// gradients back into the edge weights.
inline Tensor neighbor_mask(const Tensor& w) {
    Tensor mask = Tensor::zeros(w.shape());
    const auto& src = w.values();
    double* dst = mask.data();
    for (std::size_t i = 0; i < src.size(); ++i)
        dst[i] = src[i] != 0.0 ? 1.0 : 0.0;
    return mask;
}

}  // namespace detail

// One dense convolution: aggregate the neighbourhood, concatenate with the
// node's own features, apply the layer's linear map and nonlinearity.
// Nodes with no edges aggregate to zero rather than erroring out.
inline Tensor sage_forward(const Tensor& x, const Tensor& w_adj, const SageLayer& layer) {
    const int n = x.rows();
    if (w_adj.rows() != n || w_adj.cols() != n)
        throw DimensionError("adjacency is " + shape_str(w_adj.shape()) +
                             " but features have " + std::to_string(n) + " rows");
    const int f_in = x.cols();
    if (layer.weight.rows() != 2 * f_in)
        throw DimensionError("conv weight expects " +
                             std::to_string(layer.weight.rows() / 2) +
                             " input features, got " + std::to_string(f_in));

    Tensor p = layer.agg == Aggregator::weighted_mean
                   ? row_normalize(w_adj)
                   : row_normalize(detail::neighbor_mask(w_adj));
    Tensor h_n = matmul(p, x);
    Tensor cat = concat_cols(x, h_n);
    Tensor z = add_bias(matmul(cat, layer.weight), layer.bias);
    return activation(z, layer.act);
}

struct PoolBlock {
    SageLayer embed;   // produces the features carried to the coarse graph
    SageLayer assign;  // produces cluster logits, activation stays identity
};

struct PoolOut {
    Tensor x;  // [c, f] coarse node features
    Tensor a;  // [c, c] coarse adjacency, diagonal kept
    Tensor s;  // [n, c] soft assignment, rows sum to one
};

// Soft hierarchical coarsening: embed and assign are both convolutions over
// the same graph, the assignment is row-softmaxed, and the coarse graph is
// the quadratic form S^T A S. Shrinking is mandatory except for the fully
// collapsed single-node graph, which may only map onto itself.
inline PoolOut diffpool_forward(const Tensor& x, const Tensor& a, const PoolBlock& block) {
    const int n = x.rows();
    const int c = block.assign.weight.cols();
    if (c > n || (c == n && n > 1))
        throw ConfigError("pooling must reduce the graph: " + std::to_string(n) +
                          " nodes cannot map to " + std::to_string(c) + " clusters");

    Tensor z = sage_forward(x, a, block.embed);
    Tensor s = softmax_rows(sage_forward(x, a, block.assign));
    Tensor st = transpose(s);
    PoolOut out;
    out.x = matmul(st, z);
    out.a = matmul(st, matmul(a, s));
    out.s = s;
    return out;
}

struct ModelConfig {
    int nodes = 1162;
    int in_features = 3;
    int hidden = 64;
    Activation activation = Activation::sigmoid;
    Aggregator aggregator = Aggregator::weighted_mean;
    bool use_batchnorm = true;
};

// Cluster counts for the three pooling stages: quarter the graph each time,
// rounding to the nearest count (halves round up) and never dropping below
// one cluster. On the full 1162-node graph this lands on 291, 73, 18.
inline std::vector<int> pool_sizes(int nodes) {
    if (nodes < 1)
        throw ConfigError("pool_sizes: node count must be positive, got " +
                          std::to_string(nodes));
    auto quarter = [](int n) { return std::max(1, (n + 2) / 4); };
    int c1 = quarter(nodes);
    int c2 = quarter(c1);
    int c3 = quarter(c2);
    return {c1, c2, c3};
}

// Per-stage record of what the forward pass did, for diagnostics and the
// auxiliary pooling losses. Entry i of assignments/coarse_adj/input_adj
// belongs to pooling stage i.
struct ForwardTrace {
    std::vector<int> node_counts;       // nodes entering each stage, then the final count
    std::vector<Tensor> assignments;    // S per pool
    std::vector<Tensor> coarse_adj;     // S^T A S per pool
    std::vector<Tensor> input_adj;      // A fed into each pool
    std::vector<std::string> shape_trace;
};

class AdiagModel {
  public:
    ModelConfig config;
    std::vector<int> clusters;  // three entries, from pool_sizes

    SageLayer sage1, sage2, sage3;
    PoolBlock pool1, pool2, pool3;
    BatchNormState bn1, bn2, bn3;
    Tensor fc1_weight, fc1_bias;
    Tensor fc2_weight, fc2_bias;

    static AdiagModel init(const ModelConfig& cfg, std::uint64_t seed) {
        if (cfg.nodes < 1)
            throw ConfigError("model needs at least one node, got " +
                              std::to_string(cfg.nodes));
        if (cfg.in_features < 1 || cfg.hidden < 1)
            throw ConfigError("feature widths must be positive");
        if (cfg.activation == Activation::identity)
            throw ConfigError("identity is not a valid model activation");

        AdiagModel m;
        m.config = cfg;
        m.clusters = pool_sizes(cfg.nodes);
        Rng rng(seed);

        const int h = cfg.hidden;
        m.sage1 = make_sage(cfg.in_features, h, cfg, rng);
        m.pool1 = make_pool(h, m.clusters[0], cfg, rng);
        m.sage2 = make_sage(h, h, cfg, rng);
        m.pool2 = make_pool(h, m.clusters[1], cfg, rng);
        m.sage3 = make_sage(h, h, cfg, rng);
        m.pool3 = make_pool(h, m.clusters[2], cfg, rng);

        m.bn1 = make_bn(h);
        m.bn2 = make_bn(h);
        m.bn3 = make_bn(h);

        const int flat = m.clusters[2] * h;
        m.fc1_weight = glorot(flat, h, rng);
        m.fc1_bias = Tensor::zeros({1, h}).set_requires_grad(true);
        m.fc2_weight = glorot(h, 1, rng);
        m.fc2_bias = Tensor::zeros({1, 1}).set_requires_grad(true);
        return m;
    }

    // Parameters in pipeline order; the names double as checkpoint keys.
    std::vector<std::pair<std::string, Tensor>> named_parameters() {
        std::vector<std::pair<std::string, Tensor>> out;
        auto add_sage = [&out](const std::string& prefix, SageLayer& l) {
            out.emplace_back(prefix + ".weight", l.weight);
            out.emplace_back(prefix + ".bias", l.bias);
        };
        auto add_bn = [&out](const std::string& prefix, BatchNormState& b) {
            out.emplace_back(prefix + ".gamma", b.gamma);
            out.emplace_back(prefix + ".beta", b.beta);
        };
        add_sage("sage1", sage1);
        add_bn("bn1", bn1);
        add_sage("pool1.embed", pool1.embed);
        add_sage("pool1.assign", pool1.assign);
        add_sage("sage2", sage2);
        add_bn("bn2", bn2);
        add_sage("pool2.embed", pool2.embed);
        add_sage("pool2.assign", pool2.assign);
        add_sage("sage3", sage3);
        add_bn("bn3", bn3);
        add_sage("pool3.embed", pool3.embed);
        add_sage("pool3.assign", pool3.assign);
        out.emplace_back("fc1.weight", fc1_weight);
        out.emplace_back("fc1.bias", fc1_bias);
        out.emplace_back("fc2.weight", fc2_weight);
        out.emplace_back("fc2.bias", fc2_bias);
        return out;
    }

    // Running statistics: saved and restored, never trained.
    std::vector<std::pair<std::string, Tensor>> named_buffers() {
        return {
            {"bn1.running_mean", bn1.running_mean}, {"bn1.running_var", bn1.running_var},
            {"bn2.running_mean", bn2.running_mean}, {"bn2.running_var", bn2.running_var},
            {"bn3.running_mean", bn3.running_mean}, {"bn3.running_var", bn3.running_var},
        };
    }

    // Deep copy: fresh storage for every tensor, so snapshots survive later
    // optimizer steps on the original.
    AdiagModel clone() const {
        AdiagModel m;
        m.config = config;
        m.clusters = clusters;
        auto copy_sage = [](const SageLayer& l) {
            SageLayer out;
            out.weight = l.weight.clone();
            out.bias = l.bias.clone();
            out.act = l.act;
            out.agg = l.agg;
            return out;
        };
        auto copy_bn = [](const BatchNormState& b) {
            BatchNormState out;
            out.gamma = b.gamma.clone();
            out.beta = b.beta.clone();
            out.running_mean = b.running_mean.clone();
            out.running_var = b.running_var.clone();
            out.momentum = b.momentum;
            out.eps = b.eps;
            return out;
        };
        m.sage1 = copy_sage(sage1);
        m.sage2 = copy_sage(sage2);
        m.sage3 = copy_sage(sage3);
        m.pool1 = {copy_sage(pool1.embed), copy_sage(pool1.assign)};
        m.pool2 = {copy_sage(pool2.embed), copy_sage(pool2.assign)};
        m.pool3 = {copy_sage(pool3.embed), copy_sage(pool3.assign)};
        m.bn1 = copy_bn(bn1);
        m.bn2 = copy_bn(bn2);
        m.bn3 = copy_bn(bn3);
        m.fc1_weight = fc1_weight.clone();
        m.fc1_bias = fc1_bias.clone();
        m.fc2_weight = fc2_weight.clone();
        m.fc2_bias = fc2_bias.clone();
        return m;
    }

  private:
    static Tensor glorot(int fan_in, int fan_out, Rng& rng) {
        const double limit = std::sqrt(6.0 / (fan_in + fan_out));
        Tensor t = Tensor::zeros({fan_in, fan_out});
        double* v = t.data();
        for (std::size_t i = 0; i < t.size(); ++i) v[i] = rng.uniform(-limit, limit);
        t.set_requires_grad(true);
        return t;
    }

    static SageLayer make_sage(int f_in, int f_out, const ModelConfig& cfg, Rng& rng) {
        SageLayer l;
        l.weight = glorot(2 * f_in, f_out, rng);
        l.bias = Tensor::zeros({1, f_out}).set_requires_grad(true);
        l.act = cfg.activation;
        l.agg = cfg.aggregator;
        return l;
    }

    static BatchNormState make_bn(int features) {
        BatchNormState s = BatchNormState::init(features);
        s.gamma.set_requires_grad(true);
        s.beta.set_requires_grad(true);
        return s;
    }

    static PoolBlock make_pool(int f_in, int c, const ModelConfig& cfg, Rng& rng) {
        PoolBlock b;
        b.embed = make_sage(f_in, f_in, cfg, rng);
        b.assign = make_sage(f_in, c, cfg, rng);
        b.assign.act = Activation::identity;  // softmax wants raw logits
        return b;
    }
};

namespace detail {

inline void trace_stage(ForwardTrace* trace, const Tensor& x) {
    if (!trace) return;
    trace->shape_trace.push_back(shape_str(x.shape()));
}

}  // namespace detail

// Full pipeline: three rounds of convolve, normalize, pool, then flatten the
// final coarse graph into a single logit. Returns shape [1,1].
inline Tensor adiag_forward(const Tensor& x, const Tensor& w, AdiagModel& model,
                            bool train, ForwardTrace* trace = nullptr) {
    if (x.rows() != model.config.nodes)
        throw DimensionError("model was built for " + std::to_string(model.config.nodes) +
                             " nodes, input has " + std::to_string(x.rows()));
    if (x.cols() != model.config.in_features)
        throw DimensionError("model expects " + std::to_string(model.config.in_features) +
                             " node features, input has " + std::to_string(x.cols()));
    if (w.rows() != x.rows() || w.cols() != x.rows())
        throw DimensionError("adjacency shape " + shape_str(w.shape()) +
                             " does not match " + std::to_string(x.rows()) + " nodes");

    const bool bn = model.config.use_batchnorm;
    if (trace) trace->node_counts.push_back(x.rows());

    Tensor h = sage_forward(x, w, model.sage1);
    if (bn) h = batchnorm_nodes(h, model.bn1, train);
    detail::trace_stage(trace, h);
    if (trace) trace->input_adj.push_back(w);
    PoolOut p1 = diffpool_forward(h, w, model.pool1);
    if (trace) {
        trace->assignments.push_back(p1.s);
        trace->coarse_adj.push_back(p1.a);
        trace->node_counts.push_back(p1.x.rows());
    }

    h = sage_forward(p1.x, p1.a, model.sage2);
    if (bn) h = batchnorm_nodes(h, model.bn2, train);
    detail::trace_stage(trace, h);
    if (trace) trace->input_adj.push_back(p1.a);
    PoolOut p2 = diffpool_forward(h, p1.a, model.pool2);
    if (trace) {
        trace->assignments.push_back(p2.s);
        trace->coarse_adj.push_back(p2.a);
        trace->node_counts.push_back(p2.x.rows());
    }

    h = sage_forward(p2.x, p2.a, model.sage3);
    if (bn) h = batchnorm_nodes(h, model.bn3, train);
    detail::trace_stage(trace, h);
    if (trace) trace->input_adj.push_back(p2.a);
    PoolOut p3 = diffpool_forward(h, p2.a, model.pool3);
    if (trace) {
        trace->assignments.push_back(p3.s);
        trace->coarse_adj.push_back(p3.a);
        trace->node_counts.push_back(p3.x.rows());
    }

    Tensor flat = reshape_copy(p3.x, {1, p3.x.rows() * p3.x.cols()});
    Tensor h1 = activation(add_bias(matmul(flat, model.fc1_weight), model.fc1_bias),
                           Activation::relu);
    Tensor logit = add_bias(matmul(h1, model.fc2_weight), model.fc2_bias);
    detail::trace_stage(trace, logit);
    return logit;
}

inline Tensor adiag_forward(const BrainGraph& g, AdiagModel& model, bool train,
                            ForwardTrace* trace = nullptr) {
    return adiag_forward(g.x, g.w, model, train, trace);
}

// Decision rule on the raw logit; the boundary itself counts as positive.
inline int predict_label(double logit) { return logit >= 0.0 ? 1 : 0; }

inline double logit_to_probability(double logit) {
    if (logit >= 0.0) return 1.0 / (1.0 + std::exp(-logit));
    const double e = std::exp(logit);
    return e / (1.0 + e);
}

// ---------------------------------------------------------------------------
// Checkpoint format: magic, version, the geometry needed to rebuild the
// module tree, then every named tensor with its shape and raw values.

inline constexpr char kCheckpointMagic[4] = {'A', 'D', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline std::uint8_t activation_code(Activation a) {
    switch (a) {
        case Activation::sigmoid: return 0;
        case Activation::relu: return 1;
        case Activation::identity: return 2;
    }
    throw ConfigError("unknown activation");
}

inline Activation activation_from_code(std::uint8_t c) {
    switch (c) {
        case 0: return Activation::sigmoid;
        case 1: return Activation::relu;
        case 2: return Activation::identity;
    }
    throw FormatError("checkpoint names activation code " + std::to_string(c) +
                      ", which this build does not know");
}

inline void write_tensor_entry(std::ostream& os, const std::string& name, const Tensor& t) {
    binio::write_string(os, name);
    const auto& shape = t.shape();
    binio::write_u32(os, static_cast<std::uint32_t>(shape.size()));
    for (int d : shape) binio::write_u32(os, static_cast<std::uint32_t>(d));
    for (double v : t.values()) binio::write_f64(os, v);
}

}  // namespace detail

inline void save_checkpoint(AdiagModel& model, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open checkpoint for writing: " + path);

    os.write(kCheckpointMagic, 4);
    binio::write_u32(os, kCheckpointVersion);
    binio::write_u32(os, static_cast<std::uint32_t>(model.config.nodes));
    binio::write_u32(os, static_cast<std::uint32_t>(model.config.in_features));
    binio::write_u32(os, static_cast<std::uint32_t>(model.config.hidden));
    for (int c : model.clusters) binio::write_u32(os, static_cast<std::uint32_t>(c));
    binio::write_u8(os, detail::activation_code(model.config.activation));
    binio::write_u8(os, model.config.aggregator == Aggregator::weighted_mean ? 0 : 1);
    binio::write_u8(os, model.config.use_batchnorm ? 1 : 0);

    auto params = model.named_parameters();
    auto buffers = model.named_buffers();
    binio::write_u32(os, static_cast<std::uint32_t>(params.size() + buffers.size()));
    for (auto& [name, t] : params) detail::write_tensor_entry(os, name, t);
    for (auto& [name, t] : buffers) detail::write_tensor_entry(os, name, t);

    if (!os) throw IoError("short write while saving checkpoint: " + path);
}

inline AdiagModel load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path);

    char magic[4] = {};
    binio::read_exact(is, magic, 4, "checkpoint magic");
    if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw FormatError("not a checkpoint file: " + path);
    const std::uint32_t version = binio::read_u32(is, "checkpoint version");
    if (version != kCheckpointVersion)
        throw FormatError("checkpoint version " + std::to_string(version) +
                          " is not supported");

    ModelConfig cfg;
    cfg.nodes = static_cast<int>(binio::read_u32(is, "node count"));
    cfg.in_features = static_cast<int>(binio::read_u32(is, "feature count"));
    cfg.hidden = static_cast<int>(binio::read_u32(is, "hidden width"));
    std::vector<int> clusters(3);
    for (auto& c : clusters) c = static_cast<int>(binio::read_u32(is, "cluster count"));
    cfg.activation = detail::activation_from_code(binio::read_u8(is, "activation"));
    const std::uint8_t agg = binio::read_u8(is, "aggregator");
    if (agg > 1) throw FormatError("unknown aggregator code " + std::to_string(agg));
    cfg.aggregator = agg == 0 ? Aggregator::weighted_mean : Aggregator::mean;
    cfg.use_batchnorm = binio::read_u8(is, "batchnorm flag") != 0;

    if (cfg.nodes < 1 || cfg.nodes > (1 << 20) || cfg.in_features < 1 ||
        cfg.hidden < 1 || cfg.hidden > (1 << 20))
        throw FormatError("checkpoint header is implausible: " + path);
    if (clusters != pool_sizes(cfg.nodes))
        throw FormatError("checkpoint cluster sizes disagree with its node count");

    AdiagModel model = AdiagModel::init(cfg, 0);

    std::vector<std::pair<std::string, Tensor>> slots;
    for (auto& p : model.named_parameters()) slots.push_back(p);
    for (auto& b : model.named_buffers()) slots.push_back(b);

    const std::uint32_t count = binio::read_u32(is, "tensor count");
    if (count != slots.size())
        throw FormatError("checkpoint holds " + std::to_string(count) +
                          " tensors, model needs " + std::to_string(slots.size()));

    std::vector<bool> filled(slots.size(), false);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = binio::read_string(is, "tensor name");
        const std::uint32_t rank = binio::read_u32(is, "tensor rank");
        if (rank != 2) throw FormatError("tensor " + name + " has rank " +
                                         std::to_string(rank) + ", expected 2");
        Shape shape(rank);
        for (auto& d : shape) d = static_cast<int>(binio::read_u32(is, "tensor dim"));

        std::size_t slot = slots.size();
        for (std::size_t j = 0; j < slots.size(); ++j) {
            if (slots[j].first == name) { slot = j; break; }
        }
        if (slot == slots.size())
            throw FormatError("checkpoint tensor " + name + " has no place in this model");
        if (filled[slot]) throw FormatError("checkpoint repeats tensor " + name);
        Tensor& dst = slots[slot].second;
        if (shape != dst.shape())
            throw FormatError("tensor " + name + " is " + shape_str(shape) +
                              " in the file but " + shape_str(dst.shape()) +
                              " in the model");
        double* out = dst.data();
        for (std::size_t v = 0; v < dst.size(); ++v)
            out[v] = binio::read_f64(is, name.c_str());
        filled[slot] = true;
    }
    for (std::size_t j = 0; j < slots.size(); ++j)
        if (!filled[j]) throw FormatError("checkpoint is missing tensor " + slots[j].first);
    return model;
}

}  // namespace adiag
