#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gnas/ad/ops.hpp"
#include "gnas/ad/optimizer.hpp"
#include "gnas/ad/tensor.hpp"
#include "gnas/chromosome.hpp"
#include "gnas/graph.hpp"
#include "gnas/rng.hpp"

namespace gnas {

using ad::Index;
using ad::Tensor;

struct ModelOptions {
    bool self_loops = true;           // aggregate over N_i plus i itself
    bool normalize_attention = true;  // softmax of scores within each neighborhood
    ad::OptimizerKind optimizer = ad::OptimizerKind::adam;

    friend bool operator==(const ModelOptions&, const ModelOptions&) = default;
};

/// Directed message edges source -> target, grouped by target. With self
/// loops every node receives at least its own message.
struct EdgeIndex {
    std::size_t num_nodes = 0;
    std::vector<Index> sources;
    std::vector<Index> targets;
    std::vector<double> degree;  // messages received per node

    std::size_t size() const { return sources.size(); }
};

inline EdgeIndex build_edge_index(const Graph& g, bool self_loops) {
    EdgeIndex e;
    e.num_nodes = g.num_nodes;
    e.degree.resize(g.num_nodes);
    e.sources.reserve(g.num_edge_entries() + (self_loops ? g.num_nodes : 0));
    for (std::size_t i = 0; i < g.num_nodes; ++i) {
        bool self_done = !self_loops;
        for (NodeId j : g.neighbors[i]) {
            if (!self_done && j > i) {
                e.sources.push_back(static_cast<Index>(i));
                self_done = true;
            }
            e.sources.push_back(j);
        }
        if (!self_done) e.sources.push_back(static_cast<Index>(i));
        e.targets.resize(e.sources.size(), static_cast<Index>(i));
        e.degree[i] = static_cast<double>(g.neighbors[i].size() + (self_loops ? 1 : 0));
    }
    return e;
}

// ---------------------------------------------------------------------------
// Attention functions

/// One head's weights, viewed as plain arrays. `transform` is in_dim x out_dim
/// row-major with the head's column block at `column_offset` inside a wider
/// matrix of `stride` columns.
struct HeadWeights {
    std::span<const double> transform;
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
    std::size_t stride = 0;
    std::size_t column_offset = 0;
    std::vector<double> att_left;   // gat / sym-gat
    std::vector<double> att_right;  // gat / sym-gat
    std::vector<double> att_gene;   // gene-linear W^a
};

namespace detail {

inline std::vector<double> project(std::span<const double> h, const HeadWeights& w) {
    std::vector<double> z(w.out_dim, 0.0);
    for (std::size_t k = 0; k < w.in_dim; ++k)
        for (std::size_t c = 0; c < w.out_dim; ++c) z[c] += h[k] * w.transform[k * w.stride + w.column_offset + c];
    return z;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double leaky(double x) { return x > 0 ? x : ad::kLeakySlope * x; }

}  // namespace detail

/// Unnormalized score w_ij for the message from node j into node i, computed
/// directly from the raw embeddings. The layer computes the same quantity in
/// batched form.
inline double attention_score(Attention kind, std::span<const double> h_i, std::span<const double> h_j,
                              const HeadWeights& w, double deg_i = 1.0, double deg_j = 1.0) {
    switch (kind) {
        case Attention::constant: return 1.0;
        case Attention::gcn: return 1.0 / std::sqrt(deg_i * deg_j);
        default: break;
    }
    const auto zi = detail::project(h_i, w);
    const auto zj = detail::project(h_j, w);
    switch (kind) {
        case Attention::gat: return detail::leaky(detail::dot(w.att_left, zi) + detail::dot(w.att_right, zj));
        case Attention::sym_gat:
            return detail::leaky(detail::dot(w.att_left, zi) + detail::dot(w.att_right, zj)) +
                   detail::leaky(detail::dot(w.att_left, zj) + detail::dot(w.att_right, zi));
        case Attention::cos: {
            const double ni = std::sqrt(detail::dot(zi, zi)), nj = std::sqrt(detail::dot(zj, zj));
            return (ni > 0 && nj > 0) ? detail::dot(zi, zj) / (ni * nj) : 0.0;
        }
        case Attention::linear: {
            double s = 0;
            for (double v : zj) s += v;
            return std::tanh(s);
        }
        case Attention::gene_linear: {
            double s = 0;
            for (std::size_t c = 0; c < zi.size(); ++c) s += w.att_gene[c] * std::tanh(zi[c] + zj[c]);
            return s;
        }
        default: break;
    }
    throw ValidationError("unknown attention kind");
}

// ---------------------------------------------------------------------------
// Model

/// Multi-layer GNN instantiated from a structure chromosome. Layer k has one
/// transform of shape in_k x (heads_k * hidden_k) holding every head's W^l
/// side by side.
class GnnModel {
public:
    GnnModel(StructureChromosome structure, std::size_t num_features, std::size_t num_classes, ModelOptions options,
             std::uint64_t seed)
        : structure_(std::move(structure)), num_features_(num_features), num_classes_(num_classes), options_(options) {
        if (structure_.layers.empty()) throw ValidationError("model needs at least one layer");
        CounterRng rng(seed, "init");
        std::size_t in = num_features;
        for (std::size_t k = 0; k < depth(); ++k) {
            const auto& gene = structure_.layers[k];
            if (gene.heads <= 0 || gene.hidden <= 0) throw ValidationError("heads and hidden must be positive");
            const std::size_t heads = static_cast<std::size_t>(gene.heads);
            const std::size_t hid = hidden(k);
            const bool decay = (k == 0);
            const auto prefix = "layer" + std::to_string(k) + ".";
            params_.add(prefix + "W", {in, heads * hid}, glorot(in, hid, in * heads * hid, rng), decay);
            if (gene.attention == Attention::gat || gene.attention == Attention::sym_gat) {
                params_.add(prefix + "att_left", {hid, heads}, glorot(hid, 1, hid * heads, rng), decay);
                params_.add(prefix + "att_right", {hid, heads}, glorot(hid, 1, hid * heads, rng), decay);
            } else if (gene.attention == Attention::gene_linear) {
                params_.add(prefix + "att_gene", {hid, heads}, glorot(hid, 1, hid * heads, rng), decay);
            }
            if (gene.aggregator == Aggregator::mlp) {
                for (std::size_t l = 0; l < heads; ++l) {
                    const auto hp = prefix + "head" + std::to_string(l) + ".";
                    params_.add(hp + "mlp_hidden", {hid, hid}, glorot(hid, hid, hid * hid, rng), decay);
                    params_.add(hp + "mlp_out", {hid, hid}, glorot(hid, hid, hid * hid, rng), decay);
                }
            }
            in = output_width(k);
        }
    }

    GnnModel(StructureChromosome structure, std::size_t num_features, std::size_t num_classes, ModelOptions options,
             ad::ParameterStore weights)
        : structure_(std::move(structure)),
          num_features_(num_features),
          num_classes_(num_classes),
          options_(options),
          params_(std::move(weights)) {}

    std::size_t depth() const { return structure_.layers.size(); }
    bool is_last(std::size_t k) const { return k + 1 == depth(); }

    /// Per-head width of layer k; the last layer always emits class scores.
    std::size_t hidden(std::size_t k) const {
        return is_last(k) ? num_classes_ : static_cast<std::size_t>(structure_.layers[k].hidden);
    }
    /// Heads are concatenated in hidden layers and averaged in the last one.
    std::size_t output_width(std::size_t k) const {
        return is_last(k) ? num_classes_ : static_cast<std::size_t>(structure_.layers[k].heads) * hidden(k);
    }
    std::size_t input_width(std::size_t k) const { return k == 0 ? num_features_ : output_width(k - 1); }

    const StructureChromosome& structure() const { return structure_; }
    const ModelOptions& options() const { return options_; }
    std::size_t num_features() const { return num_features_; }
    std::size_t num_classes() const { return num_classes_; }
    ad::ParameterStore& params() { return params_; }
    const ad::ParameterStore& params() const { return params_; }

    /// Weights of one head of layer k as plain arrays (for scalar scoring).
    HeadWeights head_weights(std::size_t k, std::size_t head) const {
        const auto prefix = "layer" + std::to_string(k) + ".";
        const auto& W = params_.get(prefix + "W");
        HeadWeights w;
        w.transform = W.values();
        w.in_dim = W.rows();
        w.out_dim = hidden(k);
        w.stride = W.cols();
        w.column_offset = head * hidden(k);
        auto column = [&](const std::string& name) {
            std::vector<double> v;
            if (!params_.contains(name)) return v;
            const auto& t = params_.get(name);
            for (std::size_t r = 0; r < t.rows(); ++r) v.push_back(t.at(r, head));
            return v;
        };
        w.att_left = column(prefix + "att_left");
        w.att_right = column(prefix + "att_right");
        w.att_gene = column(prefix + "att_gene");
        return w;
    }

    /// Per-edge scores for one head given its projected embeddings Z (n x hid).
    Tensor edge_scores(std::size_t k, std::size_t head, const Tensor& z, const EdgeIndex& edges) const {
        const auto& gene = structure_.layers[k];
        const auto prefix = "layer" + std::to_string(k) + ".";
        const std::size_t heads = static_cast<std::size_t>(gene.heads);
        auto head_column = [&](const std::string& name) {
            const auto& t = params_.get(prefix + name);
            return heads == 1 ? t : ad::slice_cols(t, head, 1);
        };
        switch (gene.attention) {
            case Attention::constant: return Tensor::filled({edges.size(), 1}, 1.0);
            case Attention::gcn: {
                std::vector<double> w(edges.size());
                for (std::size_t r = 0; r < edges.size(); ++r)
                    w[r] = 1.0 / std::sqrt(edges.degree[edges.targets[r]] * edges.degree[edges.sources[r]]);
                return Tensor::from({edges.size(), 1}, std::move(w));
            }
            case Attention::gat:
            case Attention::sym_gat: {
                const auto left = ad::matmul(z, head_column("att_left"));
                const auto right = ad::matmul(z, head_column("att_right"));
                auto forward = ad::activation(Activation::leaky_relu,
                                              ad::add(ad::gather_rows(left, edges.targets), ad::gather_rows(right, edges.sources)));
                if (gene.attention == Attention::gat) return forward;
                auto reverse = ad::activation(Activation::leaky_relu,
                                              ad::add(ad::gather_rows(left, edges.sources), ad::gather_rows(right, edges.targets)));
                return ad::add(forward, reverse);
            }
            case Attention::cos:
                return ad::row_cosine(ad::gather_rows(z, edges.targets), ad::gather_rows(z, edges.sources));
            case Attention::linear:
                return ad::activation(Activation::tanh, ad::gather_rows(ad::row_sum(z), edges.sources));
            case Attention::gene_linear:
                return ad::pair_tanh_scores(z, head_column("att_gene"), edges.sources, edges.targets);
        }
        throw ValidationError("unknown attention kind");
    }

    /// One GNN layer: dropout on the input, per-head projection, scoring,
    /// neighborhood normalization, weighted messages, aggregation, activation.
    Tensor layer_forward(std::size_t k, const Tensor& input, const EdgeIndex& edges, double dropout_rate, bool training,
                         CounterRng& rng) const {
        if (input.rows() != edges.num_nodes || input.cols() != input_width(k))
            throw ShapeError("layer " + std::to_string(k) + " expects input (" + std::to_string(edges.num_nodes) + "x" +
                             std::to_string(input_width(k)) + "), got " + input.shape().str());
        const auto& gene = structure_.layers[k];
        const auto prefix = "layer" + std::to_string(k) + ".";
        const std::size_t heads = static_cast<std::size_t>(gene.heads);
        const std::size_t hid = hidden(k);
        const std::size_t n = edges.num_nodes;

        const auto h = ad::dropout(input, dropout_rate, training, rng);
        const auto z_all = ad::matmul(h, params_.get(prefix + "W"));

        std::vector<Tensor> outs;
        outs.reserve(heads);
        for (std::size_t l = 0; l < heads; ++l) {
            const auto z = heads == 1 ? z_all : ad::slice_cols(z_all, l * hid, hid);
            auto scores = edge_scores(k, l, z, edges);
            if (options_.normalize_attention) scores = ad::segment_softmax(scores, edges.targets, n);
            std::optional<ad::MlpWeights> mlp;
            if (gene.aggregator == Aggregator::mlp) {
                const auto hp = prefix + "head" + std::to_string(l) + ".";
                mlp = ad::MlpWeights{params_.get(hp + "mlp_hidden"), params_.get(hp + "mlp_out")};
            }
            auto agg = ad::message_aggregate(gene.aggregator, z, scores, edges.sources, edges.targets, n,
                                             mlp ? &*mlp : nullptr);
            outs.push_back(is_last(k) ? agg : ad::activation(gene.activation, agg));
        }
        if (is_last(k)) return ad::activation(gene.activation, heads == 1 ? outs.front() : ad::mean_stack(outs));
        return heads == 1 ? outs.front() : ad::concat_cols(outs);
    }

    /// Final-layer scores (before softmax / sigmoid).
    Tensor forward(const Graph& g, const EdgeIndex& edges, std::span<const double> dropout, bool training,
                   CounterRng& rng) const {
        auto h = Tensor::from({g.num_nodes, g.num_features}, g.features);
        for (std::size_t k = 0; k < depth(); ++k)
            h = layer_forward(k, h, edges, k < dropout.size() ? dropout[k] : 0.0, training, rng);
        return h;
    }

private:
    static std::vector<double> glorot(std::size_t fan_in, std::size_t fan_out, std::size_t count, CounterRng& rng) {
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        std::vector<double> v(count);
        for (auto& x : v) x = rng.uniform(-limit, limit);
        return v;
    }

    StructureChromosome structure_;
    std::size_t num_features_;
    std::size_t num_classes_;
    ModelOptions options_;
    ad::ParameterStore params_;
};

// ---------------------------------------------------------------------------
// Metrics

struct MetricCounts {
    std::size_t correct = 0;
    std::size_t total = 0;
    std::size_t true_pos = 0;
    std::size_t false_pos = 0;
    std::size_t false_neg = 0;

    MetricCounts& operator+=(const MetricCounts& o) {
        correct += o.correct;
        total += o.total;
        true_pos += o.true_pos;
        false_pos += o.false_pos;
        false_neg += o.false_neg;
        return *this;
    }

    double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
    double micro_f1() const {
        const auto denom = 2 * true_pos + false_pos + false_neg;
        return denom ? 2.0 * static_cast<double>(true_pos) / static_cast<double>(denom) : 1.0;
    }
};

/// Counts over `rows` of output scores (n x C): argmax vs label for
/// single-label graphs, score > 0 (sigmoid > 0.5) per class for multi-label.
inline MetricCounts count_predictions(const Graph& g, std::span<const double> scores, std::span<const NodeId> rows) {
    MetricCounts m;
    const std::size_t c = g.num_classes;
    for (auto r : rows) {
        const double* x = scores.data() + static_cast<std::size_t>(r) * c;
        ++m.total;
        if (g.multilabel) {
            for (std::size_t j = 0; j < c; ++j) {
                const bool pred = x[j] > 0.0;
                const bool truth = g.has_label(r, j);
                m.true_pos += pred && truth;
                m.false_pos += pred && !truth;
                m.false_neg += !pred && truth;
            }
        } else {
            std::size_t best = 0;
            for (std::size_t j = 1; j < c; ++j)
                if (x[j] > x[best]) best = j;
            m.correct += static_cast<std::int32_t>(best) == g.labels[r];
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// Training

/// A trained (structure, params) pair with its weights at the epoch of best
/// validation score.
struct CandidateModel {
    Genome genome;
    std::optional<GnnModel> model;
    double val_score = 0.0;
    double test_score = 0.0;
    bool failed = false;
    std::size_t best_epoch = 0;
    std::vector<double> loss_history;  // training loss per epoch
};

namespace detail {

inline Tensor graph_loss(const Graph& g, const Tensor& out, std::span<const Index> rows) {
    if (g.multilabel) return ad::sigmoid_cross_entropy(out, g.label_matrix, rows);
    return ad::softmax_cross_entropy(out, g.labels, rows);
}

inline std::vector<Index> rows_of(const Graph& g, Split s) {
    const auto ids = g.nodes_in(s);
    return {ids.begin(), ids.end()};
}

}  // namespace detail

/// Score of `model` on one split, pooled over all graphs: accuracy for
/// single-label data, micro-F1 for multi-label.
inline double evaluate(const GnnModel& model, std::span<const Graph> graphs, Split split) {
    ad::NoGradGuard no_grad;
    MetricCounts total;
    bool multilabel = false;
    CounterRng unused;
    for (const auto& g : graphs) {
        const auto rows = g.nodes_in(split);
        if (rows.empty()) continue;
        multilabel = g.multilabel;
        const auto edges = build_edge_index(g, model.options().self_loops);
        const auto out = model.forward(g, edges, {}, false, unused);
        total += count_predictions(g, out.values(), rows);
    }
    if (total.total == 0) throw ValidationError("cannot evaluate on an empty " + std::string(to_string(split)) + " split");
    return multilabel ? total.micro_f1() : total.accuracy();
}

inline double evaluate(const CandidateModel& candidate, const Graph& g, Split split) {
    if (!candidate.model) throw ValidationError("candidate has no trained weights");
    return evaluate(*candidate.model, std::span<const Graph>(&g, 1), split);
}

/// Full-batch training of one candidate. The loss is the mean cross entropy
/// over all training nodes of all graphs; validation is scored after every
/// epoch (and once before training) and the best epoch's weights are kept.
inline CandidateModel build_and_train(const StructureChromosome& structure, const ParamChromosome& params,
                                      std::span<const Graph> graphs, std::size_t epochs, std::uint64_t seed,
                                      const ModelOptions& options = {}) {
    if (graphs.empty()) throw ValidationError("no graphs to train on");
    if (params.dropout.size() != structure.depth())
        throw ValidationError("one dropout rate per layer required");
    const auto& first = graphs.front();

    CandidateModel result;
    result.genome = {structure, params};
    GnnModel model(structure, first.num_features, first.num_classes, options, seed);

    struct Prepared {
        EdgeIndex edges;
        std::vector<Index> train;
        std::vector<NodeId> val, test;
    };
    std::vector<Prepared> prepared;
    std::size_t train_total = 0;
    for (const auto& g : graphs) {
        Prepared p{build_edge_index(g, options.self_loops), detail::rows_of(g, Split::train), g.nodes_in(Split::val),
                   g.nodes_in(Split::test)};
        train_total += p.train.size();
        prepared.push_back(std::move(p));
    }
    if (train_total == 0) throw ValidationError("no training nodes");

    ad::OptimizerState optimizer({options.optimizer, params.learning_rate, params.weight_decay});
    CounterRng dropout_rng(seed, "dropout");
    CounterRng unused;

    auto score = [&]() {
        ad::NoGradGuard no_grad;
        MetricCounts val, test;
        for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
            if (prepared[gi].val.empty() && prepared[gi].test.empty()) continue;
            const auto out = model.forward(graphs[gi], prepared[gi].edges, {}, false, unused);
            val += count_predictions(graphs[gi], out.values(), prepared[gi].val);
            test += count_predictions(graphs[gi], out.values(), prepared[gi].test);
        }
        const bool multi = first.multilabel;
        return std::pair{multi ? val.micro_f1() : val.accuracy(), multi ? test.micro_f1() : test.accuracy()};
    };

    auto [val0, test0] = score();
    result.val_score = val0;
    result.test_score = test0;
    auto best_weights = model.params().clone();

    for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
        Tensor loss;
        for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
            const auto& rows = prepared[gi].train;
            if (rows.empty()) continue;
            const auto out = model.forward(graphs[gi], prepared[gi].edges, params.dropout, true, dropout_rng);
            auto part = detail::graph_loss(graphs[gi], out, rows);
            if (graphs.size() > 1)
                part = ad::scale(part, static_cast<double>(rows.size()) / static_cast<double>(train_total));
            loss = loss.defined() ? ad::add(loss, part) : part;
        }
        const double value = loss.item();
        result.loss_history.push_back(value);
        if (!std::isfinite(value)) {
            result.failed = true;
            result.val_score = 0.0;
            result.test_score = 0.0;
            result.model.reset();
            return result;
        }
        ad::backward(loss);
        optimizer.step(model.params());

        const auto [val, test] = score();
        if (val > result.val_score) {
            result.val_score = val;
            result.test_score = test;
            result.best_epoch = epoch;
            best_weights = model.params().clone();
        }
    }
    result.model.emplace(structure, first.num_features, first.num_classes, options, std::move(best_weights));
    return result;
}

inline CandidateModel build_and_train(const StructureChromosome& structure, const ParamChromosome& params,
                                      const Graph& graph, std::size_t epochs, std::uint64_t seed,
                                      const ModelOptions& options = {}) {
    return build_and_train(structure, params, std::span<const Graph>(&graph, 1), epochs, seed, options);
}

}  // namespace gnas
