#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "adiag/binio.hpp"
#include "adiag/errors.hpp"
#include "adiag/tensor.hpp"

namespace adiag {

// One undirected edge, stored once with row < col.
struct CooEdge {
    int row;
    int col;
    double weight;
};

// A single subject's connectome: per-node xyz centroids (mm) and a dense
// symmetric edge-weight matrix with a zero diagonal. The COO list is a
// derived view of w, never the stored source of truth.
struct BrainGraph {
    std::string subject_id;
    int label = 0; // 1 = AD, 0 = control
    Tensor x;      // [n, 3]
    Tensor w;      // [n, n]
    std::vector<CooEdge> edge_index;

    int n() const { return x.rank() == 2 ? x.rows() : 0; }
};

inline std::size_t complete_edge_count(int n) {
    return static_cast<std::size_t>(n) * (n - 1) / 2;
}

inline std::vector<CooEdge> dense_to_coo(const Tensor& w) {
    if (w.rank() != 2 || w.rows() != w.cols()) {
        throw DimensionError("dense_to_coo: expected square matrix, got " + shape_str(w.shape()));
    }
    std::vector<CooEdge> edges;
    const int n = w.rows();
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            const double v = w.at(i, j);
            if (v != 0.0) edges.push_back({i, j, v});
        }
    }
    return edges;
}

inline Tensor coo_to_dense(const std::vector<CooEdge>& edges, int n) {
    Tensor w = Tensor::zeros({n, n});
    for (const CooEdge& e : edges) {
        if (e.row < 0 || e.col < 0 || e.row >= n || e.col >= n) {
            throw DimensionError("coo_to_dense: edge (" + std::to_string(e.row) + "," +
                                 std::to_string(e.col) + ") outside [0," + std::to_string(n) + ")");
        }
        w.at(e.row, e.col) = e.weight;
        w.at(e.col, e.row) = e.weight;
    }
    return w;
}

// Structural checks on one graph. Returns human-readable violations; an
// empty result means the graph is usable.
inline std::vector<std::string> validate(const BrainGraph& g) {
    std::vector<std::string> issues;
    auto note = [&](std::string s) {
        if (issues.size() < 16) issues.push_back(std::move(s));
    };

    if (g.subject_id.empty()) note("subject_id is empty");
    if (g.label != 0 && g.label != 1) note("label must be 0 or 1, got " + std::to_string(g.label));
    if (g.x.rank() != 2 || g.x.cols() != 3) {
        note("feature matrix must be [n,3], got " + shape_str(g.x.shape()));
        return issues;
    }
    const int n = g.x.rows();
    if (g.w.rank() != 2 || g.w.rows() != n || g.w.cols() != n) {
        note("adjacency must be [" + std::to_string(n) + "," + std::to_string(n) + "], got " +
             shape_str(g.w.shape()));
        return issues;
    }

    for (std::size_t i = 0; i < g.x.size(); ++i) {
        if (!std::isfinite(g.x.data()[i])) {
            note("non-finite feature value at flat index " + std::to_string(i));
            break;
        }
    }
    for (int i = 0; i < n; ++i) {
        if (g.w.at(i, i) != 0.0) {
            note("diagonal entry (" + std::to_string(i) + "," + std::to_string(i) +
                 ") must be zero, got " + std::to_string(g.w.at(i, i)));
            break;
        }
    }
    bool asym_reported = false, range_reported = false;
    for (int i = 0; i < n && issues.size() < 16; ++i) {
        for (int j = 0; j < n; ++j) {
            const double v = g.w.at(i, j);
            if (!std::isfinite(v)) {
                note("non-finite weight at (" + std::to_string(i) + "," + std::to_string(j) + ")");
                return issues;
            }
            if (!range_reported && (v < 0.0 || v > 1.0)) {
                std::ostringstream os;
                os << "weight at (" << i << "," << j << ") outside [0,1]: " << v;
                note(os.str());
                range_reported = true;
            }
            if (!asym_reported && j > i && v != g.w.at(j, i)) {
                std::ostringstream os;
                os << "asymmetric pair (" << i << "," << j << "): " << v << " vs " << g.w.at(j, i);
                note(os.str());
                asym_reported = true;
            }
        }
    }
    return issues;
}

// ---------------------------------------------------------------------------
// ADGR graph file
// ---------------------------------------------------------------------------
//
// Binary, little-endian:
//   magic "ADGR" | version u32 = 1 | n u32 | f u32 = 3 | label u8
//   | subject_id (u16 length + UTF-8 bytes)
//   | n*f f64 features, row-major | n*n f64 weights, row-major

inline constexpr char kGraphMagic[4] = {'A', 'D', 'G', 'R'};
inline constexpr std::uint32_t kGraphVersion = 1;

inline void save_graph(const BrainGraph& g, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    os.write(kGraphMagic, 4);
    binio::write_u32(os, kGraphVersion);
    const int n = g.n();
    binio::write_u32(os, static_cast<std::uint32_t>(n));
    binio::write_u32(os, 3);
    binio::write_u8(os, static_cast<std::uint8_t>(g.label));
    binio::write_string(os, g.subject_id);
    for (std::size_t i = 0; i < g.x.size(); ++i) binio::write_f64(os, g.x.data()[i]);
    for (std::size_t i = 0; i < g.w.size(); ++i) binio::write_f64(os, g.w.data()[i]);
    os.flush();
    if (!os) throw IoError("short write: " + path);
}

inline BrainGraph load_graph(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open graph file: " + path);
    char magic[4];
    binio::read_exact(is, magic, 4, "magic");
    if (std::string(magic, 4) != std::string(kGraphMagic, 4)) {
        throw FormatError("not a graph file (bad magic): " + path);
    }
    const std::uint32_t version = binio::read_u32(is, "version");
    if (version != kGraphVersion) {
        throw FormatError("unsupported graph version " + std::to_string(version) + ": " + path);
    }
    const std::uint32_t n = binio::read_u32(is, "node count");
    const std::uint32_t f = binio::read_u32(is, "feature count");
    if (f != 3) throw FormatError("expected 3 features per node, got " + std::to_string(f));
    if (n == 0 || n > 1u << 20) throw FormatError("implausible node count " + std::to_string(n));

    BrainGraph g;
    g.label = binio::read_u8(is, "label");
    g.subject_id = binio::read_string(is, "subject id");
    g.x = Tensor::zeros({static_cast<int>(n), 3});
    for (std::size_t i = 0; i < g.x.size(); ++i) g.x.data()[i] = binio::read_f64(is, "features");
    g.w = Tensor::zeros({static_cast<int>(n), static_cast<int>(n)});
    for (std::size_t i = 0; i < g.w.size(); ++i) g.w.data()[i] = binio::read_f64(is, "weights");
    g.edge_index = dense_to_coo(g.w);
    return g;
}

// ---------------------------------------------------------------------------
// Dataset directory + manifest
// ---------------------------------------------------------------------------
//
// A dataset is a directory of .adgr files plus "manifest.txt":
//   graphs=<total> ad=<count> nc=<count>
//   <filename> <subject_id> <label>      (one line per graph)

struct GraphDataset {
    std::vector<BrainGraph> graphs;

    int count_label(int label) const {
        int c = 0;
        for (const auto& g : graphs) c += g.label == label ? 1 : 0;
        return c;
    }
};

struct ManifestEntry {
    std::string filename;
    std::string subject_id;
    int label;
};

inline std::string manifest_path(const std::string& dir) {
    return (std::filesystem::path(dir) / "manifest.txt").string();
}

inline void write_manifest(const std::string& dir, const std::vector<ManifestEntry>& entries) {
    int ad = 0, nc = 0;
    for (const auto& e : entries) (e.label == 1 ? ad : nc)++;
    std::ofstream os(manifest_path(dir), std::ios::trunc);
    if (!os) throw IoError("cannot write manifest in " + dir);
    os << "graphs=" << entries.size() << " ad=" << ad << " nc=" << nc << "\n";
    for (const auto& e : entries) {
        os << e.filename << " " << e.subject_id << " " << e.label << "\n";
    }
    os.flush();
    if (!os) throw IoError("short write on manifest in " + dir);
}

inline std::vector<ManifestEntry> read_manifest(const std::string& dir) {
    const std::string path = manifest_path(dir);
    std::ifstream is(path);
    if (!is) throw IoError("cannot open manifest: " + path);
    std::string header;
    if (!std::getline(is, header)) throw FormatError("empty manifest: " + path);
    std::size_t total = 0, ad = 0, nc = 0;
    if (std::sscanf(header.c_str(), "graphs=%zu ad=%zu nc=%zu", &total, &ad, &nc) != 3) {
        throw FormatError("malformed manifest header: \"" + header + "\"");
    }
    if (ad + nc != total) {
        throw FormatError("manifest counts disagree: " + std::to_string(ad) + "+" +
                          std::to_string(nc) + " != " + std::to_string(total));
    }
    std::vector<ManifestEntry> entries;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        ManifestEntry e;
        if (!(ls >> e.filename >> e.subject_id >> e.label)) {
            throw FormatError("malformed manifest line: \"" + line + "\"");
        }
        entries.push_back(std::move(e));
    }
    if (entries.size() != total) {
        throw FormatError("manifest says " + std::to_string(total) + " graphs but lists " +
                          std::to_string(entries.size()));
    }
    return entries;
}

inline void save_dataset(const GraphDataset& ds, const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create dataset directory " + dir + ": " + ec.message());
    std::vector<ManifestEntry> entries;
    for (const auto& g : ds.graphs) {
        const std::string filename = g.subject_id + ".adgr";
        save_graph(g, (std::filesystem::path(dir) / filename).string());
        entries.push_back({filename, g.subject_id, g.label});
    }
    write_manifest(dir, entries); // written last: a failed run leaves no manifest
}

inline GraphDataset load_dataset(const std::string& dir) {
    GraphDataset ds;
    const auto entries = read_manifest(dir);
    int n = -1;
    for (const auto& e : entries) {
        BrainGraph g = load_graph((std::filesystem::path(dir) / e.filename).string());
        if (g.subject_id != e.subject_id) {
            throw FormatError("manifest says " + e.subject_id + " but " + e.filename +
                              " holds " + g.subject_id);
        }
        if (g.label != e.label) {
            throw FormatError("label mismatch for " + e.subject_id + ": manifest " +
                              std::to_string(e.label) + ", file " + std::to_string(g.label));
        }
        if (n < 0) n = g.n();
        if (g.n() != n) {
            throw FormatError("dataset mixes node counts: " + std::to_string(n) + " and " +
                              std::to_string(g.n()) + " (" + e.filename + ")");
        }
        const auto issues = validate(g);
        if (!issues.empty()) {
            throw FormatError("invalid graph " + e.filename + ": " + issues.front());
        }
        ds.graphs.push_back(std::move(g));
    }
    return ds;
}

} // namespace adiag
