#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "gnas/error.hpp"
#include "gnas/rng.hpp"
#include "gnas/text.hpp"

namespace gnas {

using NodeId = std::uint32_t;

enum class Split : std::uint8_t { train = 0, val = 1, test = 2 };

inline std::string_view to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

/// Attributed graph with node labels and train/val/test masks. Neighbor lists
/// are sorted and never contain the node itself; self-information is added by
/// the GNN layer, not stored here.
struct Graph {
    std::size_t num_nodes = 0;
    std::size_t num_features = 0;
    std::size_t num_classes = 0;
    bool multilabel = false;
    bool undirected = true;

    std::vector<std::vector<NodeId>> neighbors;
    std::vector<double> features;           // num_nodes x num_features, row-major
    std::vector<std::int32_t> labels;       // single-label: class index per node
    std::vector<std::uint8_t> label_matrix;  // multi-label: num_nodes x num_classes
    std::array<std::vector<std::uint8_t>, 3> masks;

    std::span<const double> feature_row(std::size_t node) const {
        return {features.data() + node * num_features, num_features};
    }
    bool has_label(std::size_t node, std::size_t cls) const {
        return multilabel ? label_matrix[node * num_classes + cls] != 0
                          : labels[node] == static_cast<std::int32_t>(cls);
    }
    const std::vector<std::uint8_t>& mask(Split s) const { return masks[static_cast<std::size_t>(s)]; }
    std::vector<std::uint8_t>& mask(Split s) { return masks[static_cast<std::size_t>(s)]; }

    std::vector<NodeId> nodes_in(Split s) const {
        std::vector<NodeId> out;
        const auto& m = mask(s);
        for (std::size_t i = 0; i < m.size(); ++i)
            if (m[i]) out.push_back(static_cast<NodeId>(i));
        return out;
    }
    std::size_t count(Split s) const {
        const auto& m = mask(s);
        return static_cast<std::size_t>(std::count(m.begin(), m.end(), std::uint8_t{1}));
    }
    std::size_t num_edge_entries() const {
        std::size_t total = 0;
        for (const auto& n : neighbors) total += n.size();
        return total;
    }

    /// Throws ValidationError on the first broken invariant.
    void validate() const {
        if (neighbors.size() != num_nodes) throw ValidationError("adjacency size does not match node count");
        if (features.size() != num_nodes * num_features)
            throw ValidationError("feature matrix row count does not match node count");
        for (std::size_t i = 0; i < num_nodes; ++i) {
            const auto& ns = neighbors[i];
            for (std::size_t k = 0; k < ns.size(); ++k) {
                if (ns[k] >= num_nodes)
                    throw ValidationError("neighbor " + std::to_string(ns[k]) + " of node " + std::to_string(i) +
                                          " out of range");
                if (ns[k] == i) throw ValidationError("node " + std::to_string(i) + " lists itself as neighbor");
                if (k > 0 && ns[k] <= ns[k - 1])
                    throw ValidationError("neighbor list of node " + std::to_string(i) + " not sorted/unique");
            }
            if (undirected) {
                for (NodeId j : ns)
                    if (!std::binary_search(neighbors[j].begin(), neighbors[j].end(), static_cast<NodeId>(i)))
                        throw ValidationError("asymmetric edge " + std::to_string(i) + "-" + std::to_string(j));
            }
        }
        if (multilabel) {
            if (label_matrix.size() != num_nodes * num_classes) throw ValidationError("label matrix size mismatch");
        } else {
            if (labels.size() != num_nodes) throw ValidationError("label vector size mismatch");
            for (auto y : labels)
                if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
                    throw ValidationError("label " + std::to_string(y) + " out of range");
        }
        for (const auto& m : masks)
            if (m.size() != num_nodes) throw ValidationError("mask length does not match node count");
        for (std::size_t i = 0; i < num_nodes; ++i)
            if (masks[0][i] + masks[1][i] + masks[2][i] > 1)
                throw ValidationError("node " + std::to_string(i) + " appears in more than one split");
    }

    friend bool operator==(const Graph&, const Graph&) = default;
};

/// |N_node|, excluding any self-loop.
inline std::size_t degree(const Graph& g, std::size_t node) {
    if (node >= g.num_nodes) throw ValidationError("node index out of range");
    return g.neighbors[node].size();
}

enum class GraphRole : std::uint8_t { train, val, test };

/// Several graphs with the same feature and label spaces (inductive setting).
struct GraphCollection {
    std::vector<Graph> graphs;
    std::vector<GraphRole> roles;

    /// Sets each graph's masks from its role: every node of a train graph is a
    /// training node, and so on.
    void apply_roles() {
        for (std::size_t g = 0; g < graphs.size(); ++g) {
            auto& gr = graphs[g];
            for (auto& m : gr.masks) m.assign(gr.num_nodes, 0);
            gr.mask(static_cast<Split>(roles[g])).assign(gr.num_nodes, 1);
        }
    }

    void validate() const {
        if (graphs.empty()) throw ValidationError("empty graph collection");
        if (roles.size() != graphs.size()) throw ValidationError("one role per graph required");
        for (const auto& g : graphs) {
            g.validate();
            if (g.num_features != graphs.front().num_features || g.num_classes != graphs.front().num_classes ||
                g.multilabel != graphs.front().multilabel)
                throw ValidationError("graphs in a collection must share feature and label spaces");
        }
    }
};

// ---------------------------------------------------------------------------
// Splits

struct ExplicitSplit {
    std::vector<NodeId> train, val, test;
};

/// `train_per_class` training nodes per class, then `val_count` and
/// `test_count` drawn from the remainder.
struct PerClassSplit {
    std::size_t train_per_class = 20;
    std::size_t val_count = 500;
    std::size_t test_count = 1000;
    std::uint64_t seed = 0;
};

/// Class-stratified fractions; the rest of each class goes to test.
struct FractionSplit {
    double train = 0.1;
    double val = 0.2;
    std::uint64_t seed = 0;
};

using SplitSpec = std::variant<ExplicitSplit, PerClassSplit, FractionSplit>;

namespace detail {

inline std::vector<std::vector<NodeId>> nodes_by_class(const Graph& g) {
    std::vector<std::vector<NodeId>> by_class(std::max<std::size_t>(g.num_classes, 1));
    for (std::size_t i = 0; i < g.num_nodes; ++i) {
        std::size_t c = 0;
        if (g.multilabel) {
            // stratify on the first positive label
            for (std::size_t k = 0; k < g.num_classes; ++k)
                if (g.has_label(i, k)) {
                    c = k;
                    break;
                }
        } else {
            c = static_cast<std::size_t>(g.labels[i]);
        }
        by_class[c].push_back(static_cast<NodeId>(i));
    }
    return by_class;
}

}  // namespace detail

inline void apply_split(Graph& g, const SplitSpec& spec) {
    for (auto& m : g.masks) m.assign(g.num_nodes, 0);
    auto mark = [&](Split s, NodeId id) {
        if (id >= g.num_nodes)
            throw ValidationError("split references node " + std::to_string(id) + " but graph has " +
                                  std::to_string(g.num_nodes) + " nodes");
        g.mask(s)[id] = 1;
    };
    if (const auto* ex = std::get_if<ExplicitSplit>(&spec)) {
        for (auto id : ex->train) mark(Split::train, id);
        for (auto id : ex->val) mark(Split::val, id);
        for (auto id : ex->test) mark(Split::test, id);
    } else if (const auto* pc = std::get_if<PerClassSplit>(&spec)) {
        CounterRng rng(pc->seed, "split");
        auto by_class = detail::nodes_by_class(g);
        std::vector<NodeId> rest;
        for (auto& members : by_class) {
            shuffle(members.begin(), members.end(), rng);
            const auto k = std::min(pc->train_per_class, members.size());
            for (std::size_t i = 0; i < k; ++i) mark(Split::train, members[i]);
            rest.insert(rest.end(), members.begin() + static_cast<std::ptrdiff_t>(k), members.end());
        }
        std::sort(rest.begin(), rest.end());
        shuffle(rest.begin(), rest.end(), rng);
        if (pc->val_count + pc->test_count > rest.size())
            throw ValidationError("not enough nodes for the requested validation/test sizes");
        for (std::size_t i = 0; i < pc->val_count; ++i) mark(Split::val, rest[i]);
        for (std::size_t i = 0; i < pc->test_count; ++i) mark(Split::test, rest[pc->val_count + i]);
    } else {
        const auto& fr = std::get<FractionSplit>(spec);
        if (fr.train < 0 || fr.val < 0 || fr.train + fr.val > 1) throw ValidationError("invalid split fractions");
        CounterRng rng(fr.seed, "split");
        for (auto& members : detail::nodes_by_class(g)) {
            if (members.empty()) continue;
            shuffle(members.begin(), members.end(), rng);
            const auto m = members.size();
            auto n_train = static_cast<std::size_t>(std::llround(fr.train * static_cast<double>(m)));
            auto n_val = static_cast<std::size_t>(std::llround(fr.val * static_cast<double>(m)));
            if (fr.train > 0) n_train = std::max<std::size_t>(n_train, 1);
            n_train = std::min(n_train, m);
            n_val = std::min(n_val, m - n_train);
            for (std::size_t i = 0; i < m; ++i)
                mark(i < n_train ? Split::train : (i < n_train + n_val ? Split::val : Split::test), members[i]);
        }
    }
    for (std::size_t i = 0; i < g.num_nodes; ++i)
        if (g.masks[0][i] + g.masks[1][i] + g.masks[2][i] > 1)
            throw ValidationError("overlapping split masks at node " + std::to_string(i));
}

/// Scales each feature row to unit L1 norm; all-zero rows are left alone.
inline void normalize_rows(Graph& g) {
    for (std::size_t i = 0; i < g.num_nodes; ++i) {
        double* row = g.features.data() + i * g.num_features;
        double s = 0.0;
        for (std::size_t k = 0; k < g.num_features; ++k) s += std::fabs(row[k]);
        if (s > 0)
            for (std::size_t k = 0; k < g.num_features; ++k) row[k] /= s;
    }
}

// ---------------------------------------------------------------------------
// Text file formats

struct LoadOptions {
    bool undirected = true;
    bool normalize_features = true;
};

namespace detail {

struct LineReader {
    std::ifstream in;
    std::string source;
    std::string line;
    std::size_t number = 0;

    explicit LineReader(const std::filesystem::path& path) : in(path), source(path.string()) {
        if (!in) throw ValidationError("cannot open " + source);
    }

    /// Next non-blank line with any '#' comment removed.
    bool next(std::string_view& out) {
        while (std::getline(in, line)) {
            ++number;
            std::string_view v = line;
            if (const auto hash = v.find('#'); hash != std::string_view::npos) v = v.substr(0, hash);
            v = text::trim(v);
            if (!v.empty()) {
                out = v;
                return true;
            }
        }
        return false;
    }

    [[noreturn]] void fail(const std::string& what) const { throw ParseError(source, number, what); }

    std::pair<std::string_view, std::string_view> key_value(std::string_view v) const {
        const auto sep = v.find_first_of("\t ");
        if (sep == std::string_view::npos) fail("expected '<id><TAB><value>'");
        return {v.substr(0, sep), text::trim(v.substr(sep + 1))};
    }

    NodeId node_id(std::string_view s) const {
        const auto id = text::parse_int(s);
        if (!id || *id < 0) fail("bad node id '" + std::string(s) + "'");
        if (*id > static_cast<std::int64_t>(UINT32_MAX)) fail("node id too large");
        return static_cast<NodeId>(*id);
    }
};

inline std::vector<NodeId> parse_id_list(std::string_view list, const LineReader& r) {
    std::vector<NodeId> out;
    list = text::trim(list);
    if (list.empty()) return out;
    for (auto tok : text::split(list, ',')) out.push_back(r.node_id(tok));
    return out;
}

}  // namespace detail

/// Reads "train: ids", "val: ids", "test: ids" lines.
inline ExplicitSplit read_split_file(const std::filesystem::path& path) {
    detail::LineReader r(path);
    ExplicitSplit split;
    std::array<bool, 3> seen{};
    std::string_view v;
    while (r.next(v)) {
        const auto colon = v.find(':');
        if (colon == std::string_view::npos) r.fail("expected 'train:', 'val:' or 'test:'");
        const auto key = text::trim(v.substr(0, colon));
        const auto ids = detail::parse_id_list(v.substr(colon + 1), r);
        std::size_t slot;
        if (key == "train") slot = 0;
        else if (key == "val") slot = 1;
        else if (key == "test") slot = 2;
        else r.fail("unknown split '" + std::string(key) + "'");
        if (seen[slot]) r.fail("duplicate split '" + std::string(key) + "'");
        seen[slot] = true;
        (slot == 0 ? split.train : slot == 1 ? split.val : split.test) = ids;
    }
    if (!(seen[0] && seen[1] && seen[2])) throw ParseError(path.string() + ": split file needs train, val and test lines");
    return split;
}

/// Parses the three data files and applies `split`. Node count is taken from
/// the feature file, whose ids must be exactly 0..n-1.
inline Graph load_graph(const std::filesystem::path& edge_path, const std::filesystem::path& feature_path,
                        const std::filesystem::path& label_path, const SplitSpec& split,
                        const LoadOptions& options = {}) {
    Graph g;
    g.undirected = options.undirected;

    // features
    {
        detail::LineReader r(feature_path);
        std::vector<std::pair<NodeId, std::vector<double>>> rows;
        std::string_view v;
        while (r.next(v)) {
            const auto [id_text, values] = r.key_value(v);
            const auto id = r.node_id(id_text);
            std::vector<double> row;
            for (auto tok : text::split(values, ',')) {
                const auto x = text::parse_double(tok);
                if (!x) r.fail("bad feature value '" + std::string(text::trim(tok)) + "'");
                row.push_back(*x);
            }
            if (!rows.empty() && row.size() != rows.front().second.size())
                r.fail("expected " + std::to_string(rows.front().second.size()) + " features, got " +
                       std::to_string(row.size()));
            rows.emplace_back(id, std::move(row));
        }
        g.num_nodes = rows.size();
        g.num_features = rows.empty() ? 0 : rows.front().second.size();
        g.features.assign(g.num_nodes * g.num_features, 0.0);
        std::vector<std::uint8_t> filled(g.num_nodes, 0);
        for (auto& [id, row] : rows) {
            if (id >= g.num_nodes)
                throw ValidationError(feature_path.string() + ": node id " + std::to_string(id) +
                                      " out of range (ids must be 0.." + std::to_string(g.num_nodes - 1) + ")");
            if (filled[id]) throw ValidationError(feature_path.string() + ": duplicate node id " + std::to_string(id));
            filled[id] = 1;
            std::copy(row.begin(), row.end(), g.features.begin() + static_cast<std::ptrdiff_t>(id * g.num_features));
        }
    }

    // edges
    g.neighbors.assign(g.num_nodes, {});
    {
        detail::LineReader r(edge_path);
        std::string_view v;
        while (r.next(v)) {
            const auto [a_text, b_text] = r.key_value(v);
            const auto a = r.node_id(a_text);
            const auto b = r.node_id(b_text);
            if (a >= g.num_nodes || b >= g.num_nodes)
                throw ValidationError(edge_path.string() + ":" + std::to_string(r.number) + ": node id " +
                                      std::to_string(std::max(a, b)) + " out of range");
            if (a == b) continue;
            g.neighbors[a].push_back(b);
            if (options.undirected) g.neighbors[b].push_back(a);
        }
        for (auto& ns : g.neighbors) {
            std::sort(ns.begin(), ns.end());
            ns.erase(std::unique(ns.begin(), ns.end()), ns.end());
        }
    }

    // labels
    {
        detail::LineReader r(label_path);
        std::vector<std::pair<NodeId, std::vector<std::int64_t>>> rows;
        std::string_view v;
        bool multi = false;
        while (r.next(v)) {
            const auto [id_text, values] = r.key_value(v);
            const auto id = r.node_id(id_text);
            const bool this_multi = values.find(',') != std::string_view::npos;
            if (!rows.empty() && this_multi != multi) r.fail("mixed single-label and multi-label lines");
            multi = this_multi;
            std::vector<std::int64_t> parsed;
            for (auto tok : text::split(values, ',')) {
                const auto x = text::parse_int(tok);
                if (!x || *x < 0 || (multi && *x > 1)) r.fail("bad label value '" + std::string(text::trim(tok)) + "'");
                parsed.push_back(*x);
            }
            if (multi && !rows.empty() && parsed.size() != rows.front().second.size())
                r.fail("inconsistent label vector width");
            if (id >= g.num_nodes)
                throw ValidationError(label_path.string() + ":" + std::to_string(r.number) + ": node id " +
                                      std::to_string(id) + " out of range");
            rows.emplace_back(id, std::move(parsed));
        }
        if (rows.size() != g.num_nodes)
            throw ValidationError(label_path.string() + ": expected a label for each of " + std::to_string(g.num_nodes) +
                                  " nodes, got " + std::to_string(rows.size()));
        g.multilabel = multi;
        std::vector<std::uint8_t> filled(g.num_nodes, 0);
        if (multi) {
            g.num_classes = rows.empty() ? 0 : rows.front().second.size();
            g.label_matrix.assign(g.num_nodes * g.num_classes, 0);
        } else {
            g.labels.assign(g.num_nodes, 0);
            std::int64_t max_label = -1;
            for (const auto& row : rows) max_label = std::max(max_label, row.second.front());
            g.num_classes = static_cast<std::size_t>(max_label + 1);
        }
        for (const auto& [id, vals] : rows) {
            if (filled[id]) throw ValidationError(label_path.string() + ": duplicate label for node " + std::to_string(id));
            filled[id] = 1;
            if (multi)
                for (std::size_t c = 0; c < vals.size(); ++c)
                    g.label_matrix[id * g.num_classes + c] = static_cast<std::uint8_t>(vals[c]);
            else
                g.labels[id] = static_cast<std::int32_t>(vals.front());
        }
    }

    if (options.normalize_features) normalize_rows(g);
    apply_split(g, split);
    g.validate();
    return g;
}

/// Writes the graph in the four text formats; loading the result with
/// normalization off reproduces `g` exactly.
inline void write_graph(const Graph& g, const std::filesystem::path& edge_path,
                        const std::filesystem::path& feature_path, const std::filesystem::path& label_path,
                        const std::filesystem::path& split_path) {
    auto open = [](const std::filesystem::path& p) {
        std::ofstream out(p);
        if (!out) throw ValidationError("cannot write " + p.string());
        return out;
    };
    {
        auto out = open(edge_path);
        for (std::size_t i = 0; i < g.num_nodes; ++i)
            for (NodeId j : g.neighbors[i])
                if (!g.undirected || i < j) out << i << '\t' << j << '\n';
    }
    {
        auto out = open(feature_path);
        for (std::size_t i = 0; i < g.num_nodes; ++i) {
            out << i << '\t';
            const auto row = g.feature_row(i);
            for (std::size_t k = 0; k < row.size(); ++k) out << (k ? "," : "") << text::format_double(row[k]);
            out << '\n';
        }
    }
    {
        auto out = open(label_path);
        for (std::size_t i = 0; i < g.num_nodes; ++i) {
            out << i << '\t';
            if (g.multilabel) {
                for (std::size_t c = 0; c < g.num_classes; ++c)
                    out << (c ? "," : "") << static_cast<int>(g.label_matrix[i * g.num_classes + c]);
            } else {
                out << g.labels[i];
            }
            out << '\n';
        }
    }
    {
        auto out = open(split_path);
        for (auto s : {Split::train, Split::val, Split::test}) {
            out << to_string(s) << ":";
            const auto ids = g.nodes_in(s);
            for (std::size_t k = 0; k < ids.size(); ++k) out << (k ? "," : " ") << ids[k];
            out << '\n';
        }
    }
}

// ---------------------------------------------------------------------------
// Synthetic graphs

struct SynthOptions {
    std::size_t avg_degree = 8;
    FractionSplit split{0.1, 0.2, 0};
};

/// Planted-partition graph. Nodes are assigned to classes round-robin; every
/// generated edge stays inside the source's class with probability
/// `homophily`, so the expected intra-class edge fraction is `homophily`.
/// Features are the one-hot class indicator blended with U(0,1) noise:
/// x = (1 - noise) * onehot + noise * u.
inline Graph synth_graph(std::size_t num_nodes, std::size_t num_classes, double homophily, double feature_noise,
                         std::uint64_t seed, const SynthOptions& options = {}) {
    if (num_classes == 0) throw ValidationError("num_classes must be positive");
    if (num_nodes < num_classes) throw ValidationError("num_nodes must be at least num_classes");
    if (!(homophily >= 0.0 && homophily <= 1.0)) throw ValidationError("homophily must lie in [0, 1]");
    if (!(feature_noise >= 0.0 && feature_noise <= 1.0)) throw ValidationError("feature_noise must lie in [0, 1]");

    Graph g;
    g.num_nodes = num_nodes;
    g.num_classes = num_classes;
    g.num_features = num_classes;
    g.labels.resize(num_nodes);
    std::vector<std::vector<NodeId>> members(num_classes);
    for (std::size_t i = 0; i < num_nodes; ++i) {
        g.labels[i] = static_cast<std::int32_t>(i % num_classes);
        members[i % num_classes].push_back(static_cast<NodeId>(i));
    }

    g.neighbors.assign(num_nodes, {});
    CounterRng edge_rng(seed, "synth.edges");
    const std::size_t per_node = std::max<std::size_t>(options.avg_degree / 2, 1);
    for (std::size_t u = 0; u < num_nodes; ++u) {
        const auto cu = u % num_classes;
        for (std::size_t e = 0; e < per_node; ++e) {
            const bool intra = edge_rng.bernoulli(homophily);
            std::size_t v;
            if (intra || num_classes == 1) {
                const auto& pool = members[cu];
                if (pool.size() < 2) continue;
                do {
                    v = pool[edge_rng.index(pool.size())];
                } while (v == u);
            } else {
                const auto others = num_nodes - members[cu].size();
                auto k = edge_rng.index(others);
                // k-th node outside class cu
                std::size_t c = 0;
                for (;; ++c) {
                    if (c == cu) continue;
                    if (k < members[c].size()) break;
                    k -= members[c].size();
                }
                v = members[c][k];
            }
            g.neighbors[u].push_back(static_cast<NodeId>(v));
            g.neighbors[v].push_back(static_cast<NodeId>(u));
        }
    }
    for (auto& ns : g.neighbors) {
        std::sort(ns.begin(), ns.end());
        ns.erase(std::unique(ns.begin(), ns.end()), ns.end());
    }

    CounterRng feat_rng(seed, "synth.features");
    g.features.resize(num_nodes * num_classes);
    for (std::size_t i = 0; i < num_nodes; ++i)
        for (std::size_t c = 0; c < num_classes; ++c) {
            const double onehot = (static_cast<std::size_t>(g.labels[i]) == c) ? 1.0 : 0.0;
            g.features[i * num_classes + c] = (1.0 - feature_noise) * onehot + feature_noise * feat_rng.uniform();
        }

    auto split = options.split;
    split.seed = seed;
    apply_split(g, split);
    g.validate();
    return g;
}

}  // namespace gnas
