#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "adiag/synthgen.hpp"

using namespace adiag;

TEST_CASE("group assignment covers the clinical table") {
    REQUIRE(assign_group(0.0, 29) == Group::nc);
    REQUIRE(assign_group(0.0, 25) == Group::nc);
    REQUIRE(assign_group(0.0, 30) == Group::nc);
    REQUIRE(assign_group(1.0, 20) == Group::ad);
    REQUIRE(assign_group(0.5, 24) == Group::ad);
    REQUIRE(assign_group(2.0, 0) == Group::ad);
    // healthy score but impaired rating, and vice versa, stay unlabeled
    REQUIRE(assign_group(0.0, 20) == Group::indeterminate);
    REQUIRE(assign_group(0.5, 25) == Group::indeterminate);
    REQUIRE(assign_group(0.25, 26) == Group::indeterminate);
}

TEST_CASE("group assignment rejects out-of-range scores") {
    REQUIRE_THROWS_AS(assign_group(-0.5, 25), ConfigError);
    REQUIRE_THROWS_AS(assign_group(0.0, 31), ConfigError);
    REQUIRE_THROWS_AS(assign_group(0.0, -1), ConfigError);
}

TEST_CASE("edge kernel closed forms") {
    std::vector<PatchNode> nodes = {{0, 0, 0, 2.0}, {1, 0, 0, 2.0}, {0, 1, 0, 2.5}};
    Tensor w = edge_weights(nodes, 0.5);
    REQUIRE(w.at(0, 1) == 1.0);                                    // equal thickness
    REQUIRE(std::fabs(w.at(0, 2) - 0.36787944117144233) < 1e-15);  // |dt| == sigma
    REQUIRE(w.at(2, 0) == w.at(0, 2));
    for (int i = 0; i < 3; ++i) REQUIRE(w.at(i, i) == 0.0);
    REQUIRE_THROWS_AS(edge_weights(nodes, 0.0), ConfigError);
}

TEST_CASE("edge kernel is monotone in thickness difference and bounded") {
    std::vector<PatchNode> nodes;
    for (int i = 0; i < 6; ++i) nodes.push_back({0, 0, 0, 2.0 + 0.3 * i});
    Tensor w = edge_weights(nodes, 0.5);
    for (int j = 2; j < 6; ++j) REQUIRE(w.at(0, j) < w.at(0, j - 1));
    for (int i = 0; i < 6; ++i) {
        for (int j = 0; j < 6; ++j) {
            if (i == j) continue;
            REQUIRE(w.at(i, j) > 0.0);
            REQUIRE(w.at(i, j) <= 1.0);
        }
    }
}

TEST_CASE("sparsification drops weak edges only") {
    std::vector<PatchNode> nodes = {{0, 0, 0, 2.0}, {0, 0, 0, 2.1}, {0, 0, 0, 4.0}};
    Tensor w = edge_weights(nodes, 0.5, 0.5);
    REQUIRE(w.at(0, 1) > 0.5);
    REQUIRE(w.at(0, 2) == 0.0); // exp(-4) well under tau
    REQUIRE(w.at(1, 2) == 0.0);
}

TEST_CASE("patch aggregation averages positions and thickness") {
    SurfaceModel surf;
    surf.vertices = {{0, 0, 0, 1.0, 0}, {2, 0, 0, 3.0, 0}, {0, 4, 0, 5.0, 1}, {0, 6, 0, 7.0, 1}};
    const auto nodes = aggregate_patches(surf, 2);
    REQUIRE(nodes.size() == 2);
    REQUIRE(nodes[0].px == 1.0);
    REQUIRE(nodes[0].thickness == 2.0);
    REQUIRE(nodes[1].py == 5.0);
    REQUIRE(nodes[1].thickness == 6.0);
}

TEST_CASE("patch aggregation rejects indivisible vertex counts") {
    SurfaceModel surf;
    surf.vertices = {{0, 0, 0, 1.0, 0}, {0, 0, 0, 1.0, 0}, {0, 0, 0, 1.0, 1}};
    REQUIRE_THROWS_AS(aggregate_patches(surf, 2), ConfigError);
}

TEST_CASE("patch aggregation rejects region-straddling patches") {
    SurfaceModel surf;
    surf.vertices = {{0, 0, 0, 1.0, 0}, {0, 0, 0, 1.0, 1}};
    REQUIRE_THROWS_AS(aggregate_patches(surf, 2), ConfigError);
}

TEST_CASE("surfaces are deterministic in the seed") {
    GenConfig cfg = GenConfig::desk();
    const SurfaceModel a = generate_surface(cfg, Group::ad, "AD0001", 42);
    const SurfaceModel b = generate_surface(cfg, Group::ad, "AD0001", 42);
    const SurfaceModel c = generate_surface(cfg, Group::ad, "AD0001", 43);
    REQUIRE(a.vertices.size() == b.vertices.size());
    bool any_diff = false;
    for (std::size_t i = 0; i < a.vertices.size(); ++i) {
        REQUIRE(a.vertices[i].thickness == b.vertices[i].thickness);
        REQUIRE(a.vertices[i].px == b.vertices[i].px);
        any_diff = any_diff || a.vertices[i].thickness != c.vertices[i].thickness;
    }
    REQUIRE(any_diff);
    REQUIRE(a.meta.cdr == b.meta.cdr);
    REQUIRE(a.meta.mmse == b.meta.mmse);
}

TEST_CASE("surface size and thickness floor") {
    GenConfig cfg = GenConfig::desk();
    const SurfaceModel s = generate_surface(cfg, Group::nc, "NC0001", 7);
    REQUIRE(s.vertices.size() ==
            static_cast<std::size_t>(cfg.nodes) * static_cast<std::size_t>(cfg.vertices_per_node));
    for (const auto& v : s.vertices) {
        REQUIRE(v.thickness >= cfg.min_thickness);
        const double r = std::sqrt(v.px * v.px + v.py * v.py + v.pz * v.pz);
        REQUIRE(std::fabs(r - cfg.radius) < 1e-9); // vertices live on the sphere
    }
}

TEST_CASE("metadata is consistent with the grouping rule") {
    GenConfig cfg = GenConfig::desk();
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        const SurfaceModel ad = generate_surface(cfg, Group::ad, "AD", seed);
        const SurfaceModel nc = generate_surface(cfg, Group::nc, "NC", seed);
        REQUIRE(assign_group(ad.meta.cdr, ad.meta.mmse) == Group::ad);
        REQUIRE(assign_group(nc.meta.cdr, nc.meta.mmse) == Group::nc);
    }
}

TEST_CASE("thinning factor 1 makes the groups geometrically identical") {
    GenConfig cfg = GenConfig::desk();
    cfg.thinning = 1.0;
    const SurfaceModel ad = generate_surface(cfg, Group::ad, "S", 99);
    const SurfaceModel nc = generate_surface(cfg, Group::nc, "S", 99);
    REQUIRE(ad.vertices.size() == nc.vertices.size());
    for (std::size_t i = 0; i < ad.vertices.size(); ++i) {
        REQUIRE(ad.vertices[i].thickness == nc.vertices[i].thickness);
        REQUIRE(ad.vertices[i].px == nc.vertices[i].px);
        REQUIRE(ad.vertices[i].py == nc.vertices[i].py);
        REQUIRE(ad.vertices[i].pz == nc.vertices[i].pz);
    }
}

TEST_CASE("thinning scales only the affected cap") {
    GenConfig cfg = GenConfig::desk();
    cfg.thinning = 0.8;
    const SurfaceModel ad = generate_surface(cfg, Group::ad, "S", 13);
    cfg.thinning = 1.0;
    const SurfaceModel base = generate_surface(cfg, Group::ad, "S", 13);
    const int affected = cfg.affected_regions();
    REQUIRE(affected == 32); // lround(0.25 * 128)
    double mean_affected_ad = 0, mean_affected_base = 0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < ad.vertices.size(); ++i) {
        if (ad.vertices[i].region < affected) {
            mean_affected_ad += ad.vertices[i].thickness;
            mean_affected_base += base.vertices[i].thickness;
            ++count;
        } else {
            // untouched regions are bit-identical
            REQUIRE(ad.vertices[i].thickness == base.vertices[i].thickness);
        }
    }
    REQUIRE(count > 0);
    REQUIRE(mean_affected_ad / count < 0.85 * (mean_affected_base / count));
}

TEST_CASE("aggressive thinning hits the clip floor") {
    GenConfig cfg = GenConfig::desk();
    cfg.thinning = 0.01;
    const SurfaceModel s = generate_surface(cfg, Group::ad, "S", 3);
    const int affected = cfg.affected_regions();
    for (const auto& v : s.vertices) {
        if (v.region < affected) REQUIRE(v.thickness == cfg.min_thickness);
    }
}

TEST_CASE("desk dataset has the right cohort composition") {
    GenConfig cfg = GenConfig::desk();
    cfg.seed = 404;
    const GraphDataset ds = generate_dataset(cfg);
    REQUIRE(ds.graphs.size() == 40);
    REQUIRE(ds.count_label(1) == 20);
    REQUIRE(ds.count_label(0) == 20);

    std::set<std::string> ids;
    for (const auto& g : ds.graphs) {
        ids.insert(g.subject_id);
        REQUIRE(validate(g).empty());
        REQUIRE(g.n() == 128);
        REQUIRE(g.edge_index.size() == complete_edge_count(128));
    }
    REQUIRE(ids.size() == 40); // unique subjects
    REQUIRE(ds.graphs.front().subject_id == "AD0001");
    REQUIRE(ds.graphs.back().subject_id == "NC0020");
}

TEST_CASE("dataset generation is bit-stable across calls") {
    GenConfig cfg = GenConfig::desk();
    cfg.seed = 11;
    cfg.n_ad = 2;
    cfg.n_nc = 2;
    const GraphDataset a = generate_dataset(cfg);
    const GraphDataset b = generate_dataset(cfg);
    for (std::size_t k = 0; k < a.graphs.size(); ++k) {
        REQUIRE(a.graphs[k].w.values() == b.graphs[k].w.values());
        REQUIRE(a.graphs[k].x.values() == b.graphs[k].x.values());
    }
}

TEST_CASE("an all-control config produces only label 0") {
    GenConfig cfg = GenConfig::desk();
    cfg.n_ad = 0;
    cfg.n_nc = 3;
    const GraphDataset ds = generate_dataset(cfg);
    REQUIRE(ds.graphs.size() == 3);
    REQUIRE(ds.count_label(1) == 0);
}

TEST_CASE("stronger thinning separates the cohorts more") {
    // Mean edge weight of AD graphs should fall as thinning strengthens.
    GenConfig cfg = GenConfig::desk();
    cfg.n_ad = 3;
    cfg.n_nc = 0;
    cfg.seed = 5;
    auto cohort_mean_weight = [&](double thinning) {
        GenConfig c = cfg;
        c.thinning = thinning;
        double total = 0;
        std::size_t edges = 0;
        for (const auto& g : generate_dataset(c).graphs) {
            for (const auto& e : g.edge_index) total += e.weight;
            edges += g.edge_index.size();
        }
        return total / edges;
    };
    const double w10 = cohort_mean_weight(1.0);
    const double w09 = cohort_mean_weight(0.9);
    const double w08 = cohort_mean_weight(0.8);
    REQUIRE(w09 < w10);
    REQUIRE(w08 < w09);
}

TEST_CASE("generator configs are sanity-checked") {
    GenConfig cfg = GenConfig::desk();
    cfg.thinning = 0.0;
    REQUIRE_THROWS_AS(cfg.check(), ConfigError);
    cfg = GenConfig::desk();
    cfg.nodes = 1;
    REQUIRE_THROWS_AS(cfg.check(), ConfigError);
    cfg = GenConfig::desk();
    cfg.n_ad = 0;
    cfg.n_nc = 0;
    REQUIRE_THROWS_AS(cfg.check(), ConfigError);
    REQUIRE_THROWS_AS(generate_surface(GenConfig::desk(), Group::indeterminate, "X", 1),
                      ConfigError);
}
