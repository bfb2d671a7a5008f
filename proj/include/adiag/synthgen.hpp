#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "adiag/errors.hpp"
#include "adiag/graph.hpp"
#include "adiag/rng.hpp"
#include "adiag/tensor.hpp"

// Synthetic cortical connectomes.
//
// Subjects are spheres of ~85 mm radius covered by contiguous regions (one
// region per graph node). Each subject gets a baseline thickness around
// 2.5 mm, modulated by a smooth low-frequency field over the sphere plus
// independent per-vertex noise. AD subjects have a fixed polar cap of
// regions thinned by a multiplicative factor. Patches of vertices are
// averaged into nodes and edge weights follow a thickness-similarity kernel
//   w_ij = exp(-|t_i - t_j| / sigma_t).

namespace adiag {

enum class Group { nc, ad, indeterminate };

inline const char* group_name(Group g) {
    switch (g) {
        case Group::nc: return "NC";
        case Group::ad: return "AD";
        case Group::indeterminate: return "indeterminate";
    }
    return "?";
}

// Clinical grouping rule on (CDR, MMSE):
//   NC requires CDR == 0 with MMSE in [25,30]; AD requires CDR >= 0.5 with
//   MMSE <= 24; anything else is indeterminate and excluded from cohorts.
inline Group assign_group(double cdr, int mmse) {
    if (!(cdr >= 0.0) || !std::isfinite(cdr)) {
        throw ConfigError("assign_group: CDR must be >= 0, got " + std::to_string(cdr));
    }
    if (mmse < 0 || mmse > 30) {
        throw ConfigError("assign_group: MMSE must be in [0,30], got " + std::to_string(mmse));
    }
    if (cdr == 0.0 && mmse >= 25) return Group::nc;
    if (cdr >= 0.5 && mmse <= 24) return Group::ad;
    return Group::indeterminate;
}

struct SubjectMeta {
    std::string subject_id;
    double cdr = 0.0;
    int mmse = 30;
    Group group = Group::indeterminate;
};

struct GenConfig {
    int nodes = 1162;
    int vertices_per_node = 250;
    int n_ad = 60;
    int n_nc = 61;
    double sigma_t = 0.5;         // edge kernel length scale, mm
    double thinning = 0.85;       // AD multiplier on affected-region thickness
    double affected_fraction = 0.25;
    double mean_thickness = 2.5;  // population baseline, mm
    double subject_sd = 0.15;     // spread of per-subject baselines
    double vertex_noise_sd = 0.1; // independent measurement noise per vertex
    double field_sd = 0.05;       // amplitude of the smooth regional variation
    double min_thickness = 0.5;   // physiological clip floor, mm
    double radius = 85.0;         // sphere radius, mm
    double sparsify_tau = 0.0;    // drop weights below this threshold; 0 keeps all
    std::uint64_t seed = 0;

    // Small configuration for laptop-scale runs and CI.
    static GenConfig desk() {
        GenConfig c;
        c.nodes = 128;
        c.vertices_per_node = 50;
        c.n_ad = 20;
        c.n_nc = 20;
        return c;
    }

    int n_subjects() const { return n_ad + n_nc; }

    int affected_regions() const {
        return static_cast<int>(std::lround(affected_fraction * nodes));
    }

    void check() const {
        if (nodes < 2) throw ConfigError("gen: nodes must be >= 2, got " + std::to_string(nodes));
        if (vertices_per_node < 1) {
            throw ConfigError("gen: vertices_per_node must be >= 1, got " +
                              std::to_string(vertices_per_node));
        }
        if (n_ad < 0 || n_nc < 0 || n_subjects() == 0) {
            throw ConfigError("gen: subject counts must be non-negative and sum > 0");
        }
        if (sigma_t <= 0.0) throw ConfigError("gen: sigma_t must be positive");
        if (thinning <= 0.0 || thinning > 1.0) {
            throw ConfigError("gen: thinning must be in (0,1], got " + std::to_string(thinning));
        }
        if (affected_fraction < 0.0 || affected_fraction > 1.0) {
            throw ConfigError("gen: affected_fraction must be in [0,1]");
        }
        if (sparsify_tau < 0.0 || sparsify_tau >= 1.0) {
            throw ConfigError("gen: sparsify_tau must be in [0,1)");
        }
    }
};

struct Vertex {
    double px, py, pz;
    double thickness;
    int region;
};

struct SurfaceModel {
    SubjectMeta meta;
    std::vector<Vertex> vertices; // sorted by region, vertices_per_node per region
};

namespace detail {

// Deterministic even coverage of the sphere; region r of R. Index order runs
// pole to pole, so "the first k regions" form a spherical cap (the stand-in
// for an anatomically contiguous lobe).
inline void fibonacci_point(int r, int total, double out[3]) {
    const double golden = 2.399963229728653; // 2*pi*(2 - phi)
    const double z = 1.0 - 2.0 * (r + 0.5) / total;
    const double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden * r;
    out[0] = rho * std::cos(phi);
    out[1] = rho * std::sin(phi);
    out[2] = z;
}

struct SmoothField {
    // Sum of K random plane-wave cosines; wavelengths are a few cm so the
    // field varies smoothly across an 85 mm sphere.
    static constexpr int kComponents = 4;
    double dir[kComponents][3];
    double phase[kComponents];
    double amplitude;

    static SmoothField draw(Rng& rng, double sd) {
        SmoothField f;
        f.amplitude = sd * std::sqrt(2.0 / kComponents);
        for (int k = 0; k < kComponents; ++k) {
            double n[3] = {rng.normal(), rng.normal(), rng.normal()};
            double len = std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
            if (len == 0.0) len = 1.0;
            for (int d = 0; d < 3; ++d) f.dir[k][d] = n[d] / len;
            f.phase[k] = rng.uniform(0.0, 6.283185307179586);
        }
        return f;
    }

    double at(const double p[3]) const {
        const double inv_wavelength = 1.0 / 25.0; // rad per mm
        double v = 0.0;
        for (int k = 0; k < kComponents; ++k) {
            const double dot = p[0] * dir[k][0] + p[1] * dir[k][1] + p[2] * dir[k][2];
            v += std::cos(dot * inv_wavelength + phase[k]);
        }
        return amplitude * v;
    }
};

} // namespace detail

// Builds one subject's surface. All randomness comes from `seed`; the
// clinical scores use a separate sub-stream from the geometry, so two groups
// built from the same seed share identical geometry and differ only through
// the thinning step (with thinning == 1 they are bit-identical).
inline SurfaceModel generate_surface(const GenConfig& cfg, Group group,
                                     const std::string& subject_id, std::uint64_t seed) {
    cfg.check();
    if (group == Group::indeterminate) {
        throw ConfigError("generate_surface: cohorts are NC or AD only");
    }
    SurfaceModel surf;
    surf.meta.subject_id = subject_id;
    surf.meta.group = group;

    Rng meta_rng(derive_seed(seed, 0));
    if (group == Group::nc) {
        surf.meta.cdr = 0.0;
        surf.meta.mmse = meta_rng.uniform_int(25, 30);
    } else {
        surf.meta.cdr = 0.5 * meta_rng.uniform_int(1, 4);
        surf.meta.mmse = meta_rng.uniform_int(10, 24);
    }

    Rng rng(derive_seed(seed, 1));
    const double subject_mean = rng.normal(cfg.mean_thickness, cfg.subject_sd);
    const auto field = detail::SmoothField::draw(rng, cfg.field_sd);

    const int affected = cfg.affected_regions();
    surf.vertices.reserve(static_cast<std::size_t>(cfg.nodes) * cfg.vertices_per_node);
    for (int r = 0; r < cfg.nodes; ++r) {
        double center[3];
        detail::fibonacci_point(r, cfg.nodes, center);
        double center_mm[3] = {center[0] * cfg.radius, center[1] * cfg.radius,
                               center[2] * cfg.radius};
        const double region_thickness = subject_mean + field.at(center_mm);
        const bool thinned = group == Group::ad && r < affected;
        for (int v = 0; v < cfg.vertices_per_node; ++v) {
            double d[3] = {center[0] + 0.03 * rng.normal(), center[1] + 0.03 * rng.normal(),
                           center[2] + 0.03 * rng.normal()};
            double len = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
            if (len == 0.0) len = 1.0;
            double t = region_thickness + rng.normal(0.0, cfg.vertex_noise_sd);
            if (thinned) t *= cfg.thinning;
            if (t < cfg.min_thickness) t = cfg.min_thickness;
            surf.vertices.push_back({d[0] / len * cfg.radius, d[1] / len * cfg.radius,
                                     d[2] / len * cfg.radius, t, r});
        }
    }
    return surf;
}

struct PatchNode {
    double px, py, pz;
    double thickness;
};

// Collapses contiguous runs of vertices_per_node vertices into nodes by
// averaging positions and thickness. Vertices must arrive region-sorted,
// which generate_surface guarantees.
inline std::vector<PatchNode> aggregate_patches(const SurfaceModel& surf, int vertices_per_node) {
    if (vertices_per_node < 1) {
        throw ConfigError("aggregate_patches: vertices_per_node must be >= 1");
    }
    const std::size_t total = surf.vertices.size();
    if (total == 0 || total % static_cast<std::size_t>(vertices_per_node) != 0) {
        throw ConfigError("aggregate_patches: " + std::to_string(total) +
                          " vertices do not divide into patches of " +
                          std::to_string(vertices_per_node));
    }
    const std::size_t n = total / static_cast<std::size_t>(vertices_per_node);
    std::vector<PatchNode> nodes(n);
    for (std::size_t i = 0; i < n; ++i) {
        double px = 0, py = 0, pz = 0, t = 0;
        for (int v = 0; v < vertices_per_node; ++v) {
            const Vertex& vx = surf.vertices[i * vertices_per_node + v];
            if (vx.region != surf.vertices[i * vertices_per_node].region) {
                throw ConfigError("aggregate_patches: patch " + std::to_string(i) +
                                  " spans two regions; vertices are not region-sorted");
            }
            px += vx.px;
            py += vx.py;
            pz += vx.pz;
            t += vx.thickness;
        }
        const double inv = 1.0 / vertices_per_node;
        nodes[i] = {px * inv, py * inv, pz * inv, t * inv};
    }
    return nodes;
}

// Thickness-similarity kernel. Equal thickness gives weight 1; each sigma_t
// of thickness difference costs a factor of e. Diagonal stays zero.
inline Tensor edge_weights(const std::vector<PatchNode>& nodes, double sigma_t, double tau = 0.0) {
    if (sigma_t <= 0.0) throw ConfigError("edge_weights: sigma_t must be positive");
    const int n = static_cast<int>(nodes.size());
    Tensor w = Tensor::zeros({n, n});
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            double v = std::exp(-std::fabs(nodes[i].thickness - nodes[j].thickness) / sigma_t);
            if (v < tau) v = 0.0;
            w.at(i, j) = v;
            w.at(j, i) = v;
        }
    }
    return w;
}

inline BrainGraph build_graph(const GenConfig& cfg, Group group, const std::string& subject_id,
                              std::uint64_t seed) {
    const SurfaceModel surf = generate_surface(cfg, group, subject_id, seed);
    const auto nodes = aggregate_patches(surf, cfg.vertices_per_node);
    if (static_cast<int>(nodes.size()) != cfg.nodes) {
        throw ConfigError("build_graph: expected " + std::to_string(cfg.nodes) + " nodes, got " +
                          std::to_string(nodes.size()));
    }
    BrainGraph g;
    g.subject_id = subject_id;
    g.label = group == Group::ad ? 1 : 0;
    g.x = Tensor::zeros({cfg.nodes, 3});
    for (int i = 0; i < cfg.nodes; ++i) {
        g.x.at(i, 0) = nodes[static_cast<std::size_t>(i)].px;
        g.x.at(i, 1) = nodes[static_cast<std::size_t>(i)].py;
        g.x.at(i, 2) = nodes[static_cast<std::size_t>(i)].pz;
    }
    g.w = edge_weights(nodes, cfg.sigma_t, cfg.sparsify_tau);
    g.edge_index = dense_to_coo(g.w);
    return g;
}

// Cohort enumeration: AD subjects first, then NC, each with a per-subject
// seed hashed from the master seed and the global subject index.
inline void for_each_graph(const GenConfig& cfg,
                           const std::function<void(const BrainGraph&)>& fn) {
    cfg.check();
    char buf[16];
    for (int i = 0; i < cfg.n_ad; ++i) {
        std::snprintf(buf, sizeof buf, "AD%04d", i + 1);
        fn(build_graph(cfg, Group::ad, buf, derive_seed(cfg.seed, static_cast<std::uint64_t>(i))));
    }
    for (int i = 0; i < cfg.n_nc; ++i) {
        std::snprintf(buf, sizeof buf, "NC%04d", i + 1);
        fn(build_graph(cfg, Group::nc, buf,
                       derive_seed(cfg.seed, static_cast<std::uint64_t>(cfg.n_ad + i))));
    }
}

inline GraphDataset generate_dataset(const GenConfig& cfg) {
    GraphDataset ds;
    ds.graphs.reserve(static_cast<std::size_t>(cfg.n_subjects()));
    for_each_graph(cfg, [&](const BrainGraph& g) { ds.graphs.push_back(g); });
    return ds;
}

} // namespace adiag
