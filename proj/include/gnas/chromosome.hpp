#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gnas/error.hpp"
#include "gnas/kinds.hpp"
#include "gnas/rng.hpp"
#include "gnas/text.hpp"

namespace gnas {

/// Choices for one GNN layer. `hidden` of the last layer is carried but the
/// model builder replaces it with the class count.
struct StructureGene {
    Attention attention = Attention::gcn;
    int heads = 1;
    Aggregator aggregator = Aggregator::sum;
    Activation activation = Activation::relu;
    int hidden = 16;

    friend bool operator==(const StructureGene&, const StructureGene&) = default;
};

inline constexpr std::size_t kGenesPerLayer = 5;

enum class StructureField : std::size_t { attention = 0, heads = 1, aggregator = 2, activation = 3, hidden = 4 };

inline std::string_view to_string(StructureField f) {
    switch (f) {
        case StructureField::attention: return "attention";
        case StructureField::heads: return "heads";
        case StructureField::aggregator: return "aggregator";
        case StructureField::activation: return "activation";
        case StructureField::hidden: return "hidden";
    }
    return "?";
}

struct StructureChromosome {
    std::vector<StructureGene> layers;

    std::size_t depth() const { return layers.size(); }
    std::size_t gene_count() const { return layers.size() * kGenesPerLayer; }

    /// "gcn|8|sum|relu|16;gat|1|mlp|tanh|7"
    std::string canonical() const {
        std::string out;
        for (std::size_t k = 0; k < layers.size(); ++k) {
            const auto& g = layers[k];
            if (k) out += ';';
            out += std::string(to_string(g.attention)) + '|' + std::to_string(g.heads) + '|' +
                   std::string(to_string(g.aggregator)) + '|' + std::string(to_string(g.activation)) + '|' +
                   std::to_string(g.hidden);
        }
        return out;
    }

    friend bool operator==(const StructureChromosome&, const StructureChromosome&) = default;
};

/// Per-layer dropout rates followed by the shared weight decay and learning
/// rate; gene order is dropout_1..dropout_L, weight_decay, learning_rate.
struct ParamChromosome {
    std::vector<double> dropout;
    double weight_decay = 5e-4;
    double learning_rate = 5e-3;

    std::size_t gene_count() const { return dropout.size() + 2; }

    /// "0.5,0.5|5e-4|5e-3"
    std::string canonical() const {
        std::vector<std::string> rates;
        for (double d : dropout) rates.push_back(text::format_hyper(d));
        return text::join(rates, ",") + '|' + text::format_hyper(weight_decay) + '|' + text::format_hyper(learning_rate);
    }

    double& gene(std::size_t pos) {
        if (pos < dropout.size()) return dropout[pos];
        if (pos == dropout.size()) return weight_decay;
        if (pos == dropout.size() + 1) return learning_rate;
        throw ValidationError("parameter gene " + std::to_string(pos) + " out of range");
    }
    double gene(std::size_t pos) const { return const_cast<ParamChromosome&>(*this).gene(pos); }

    friend bool operator==(const ParamChromosome&, const ParamChromosome&) = default;
};

/// A full candidate architecture: structure plus learning parameters.
struct Genome {
    StructureChromosome structure;
    ParamChromosome params;

    std::string canonical() const { return structure.canonical() + " :: " + params.canonical(); }
    friend bool operator==(const Genome&, const Genome&) = default;
};

/// Candidate sets for every gene. Defaults are the published search space,
/// with the head-count set read as {1, 2, 4, 6, 8, 16}.
struct SearchSpace {
    std::vector<Attention> attention{Attention::constant, Attention::gcn,    Attention::gat,        Attention::sym_gat,
                                     Attention::cos,      Attention::linear, Attention::gene_linear};
    std::vector<int> heads{1, 2, 4, 6, 8, 16};
    std::vector<Aggregator> aggregator{Aggregator::sum, Aggregator::mean_pooling, Aggregator::max_pooling,
                                       Aggregator::mlp};
    std::vector<Activation> activation{Activation::sigmoid,  Activation::tanh,       Activation::relu,
                                       Activation::linear,   Activation::softplus,   Activation::leaky_relu,
                                       Activation::relu6,    Activation::elu};
    std::vector<int> hidden{4, 8, 16, 32, 64, 128, 256};
    std::vector<double> dropout{0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
    std::vector<double> weight_decay{5e-4, 8e-4, 1e-3, 4e-3};
    std::vector<double> learning_rate{5e-4, 1e-3, 5e-3, 1e-2};

    void validate() const {
        if (attention.empty() || heads.empty() || aggregator.empty() || activation.empty() || hidden.empty() ||
            dropout.empty() || weight_decay.empty() || learning_rate.empty())
            throw ValidationError("every search-space candidate set must be nonempty");
        for (int h : heads)
            if (h <= 0) throw ValidationError("head counts must be positive");
        for (int h : hidden)
            if (h <= 0) throw ValidationError("hidden sizes must be positive");
        for (double d : dropout)
            if (!(d >= 0 && d < 1)) throw ValidationError("dropout rates must lie in [0, 1)");
        for (double w : weight_decay)
            if (!(w >= 0)) throw ValidationError("weight decay must be nonnegative");
        for (double l : learning_rate)
            if (!(l > 0)) throw ValidationError("learning rates must be positive");
    }

    std::size_t structure_choices(std::size_t gene_pos) const {
        switch (static_cast<StructureField>(gene_pos % kGenesPerLayer)) {
            case StructureField::attention: return attention.size();
            case StructureField::heads: return heads.size();
            case StructureField::aggregator: return aggregator.size();
            case StructureField::activation: return activation.size();
            case StructureField::hidden: return hidden.size();
        }
        return 0;
    }

    std::size_t param_choices(std::size_t gene_pos, std::size_t depth) const {
        if (gene_pos < depth) return dropout.size();
        if (gene_pos == depth) return weight_decay.size();
        return learning_rate.size();
    }

    std::size_t structure_space_size(std::size_t depth) const {
        std::size_t n = 1;
        for (std::size_t k = 0; k < depth * kGenesPerLayer; ++k) n *= structure_choices(k);
        return n;
    }
};

namespace detail {

template <typename T>
std::optional<std::size_t> position_of(const std::vector<T>& set, const T& v) {
    const auto it = std::find(set.begin(), set.end(), v);
    if (it == set.end()) return std::nullopt;
    return static_cast<std::size_t>(it - set.begin());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Gene-position access used by crossover and mutation

/// Index of the gene's current value in its candidate set; nullopt when the
/// value lies outside the set (e.g. a last-layer hidden equal to the class count).
inline std::optional<std::size_t> structure_gene_choice(const StructureChromosome& s, std::size_t pos,
                                                        const SearchSpace& space) {
    const auto& g = s.layers.at(pos / kGenesPerLayer);
    switch (static_cast<StructureField>(pos % kGenesPerLayer)) {
        case StructureField::attention: return detail::position_of(space.attention, g.attention);
        case StructureField::heads: return detail::position_of(space.heads, g.heads);
        case StructureField::aggregator: return detail::position_of(space.aggregator, g.aggregator);
        case StructureField::activation: return detail::position_of(space.activation, g.activation);
        case StructureField::hidden: return detail::position_of(space.hidden, g.hidden);
    }
    return std::nullopt;
}

inline void set_structure_gene(StructureChromosome& s, std::size_t pos, std::size_t choice, const SearchSpace& space) {
    auto& g = s.layers.at(pos / kGenesPerLayer);
    switch (static_cast<StructureField>(pos % kGenesPerLayer)) {
        case StructureField::attention: g.attention = space.attention.at(choice); break;
        case StructureField::heads: g.heads = space.heads.at(choice); break;
        case StructureField::aggregator: g.aggregator = space.aggregator.at(choice); break;
        case StructureField::activation: g.activation = space.activation.at(choice); break;
        case StructureField::hidden: g.hidden = space.hidden.at(choice); break;
    }
}

inline void swap_structure_gene(StructureChromosome& a, StructureChromosome& b, std::size_t pos) {
    auto& ga = a.layers.at(pos / kGenesPerLayer);
    auto& gb = b.layers.at(pos / kGenesPerLayer);
    switch (static_cast<StructureField>(pos % kGenesPerLayer)) {
        case StructureField::attention: std::swap(ga.attention, gb.attention); break;
        case StructureField::heads: std::swap(ga.heads, gb.heads); break;
        case StructureField::aggregator: std::swap(ga.aggregator, gb.aggregator); break;
        case StructureField::activation: std::swap(ga.activation, gb.activation); break;
        case StructureField::hidden: std::swap(ga.hidden, gb.hidden); break;
    }
}

inline const std::vector<double>& param_candidates(const SearchSpace& space, std::size_t pos, std::size_t depth) {
    if (pos < depth) return space.dropout;
    if (pos == depth) return space.weight_decay;
    return space.learning_rate;
}

inline std::optional<std::size_t> param_gene_choice(const ParamChromosome& p, std::size_t pos,
                                                    const SearchSpace& space) {
    return detail::position_of(param_candidates(space, pos, p.dropout.size()), p.gene(pos));
}

inline void set_param_gene(ParamChromosome& p, std::size_t pos, std::size_t choice, const SearchSpace& space) {
    p.gene(pos) = param_candidates(space, pos, p.dropout.size()).at(choice);
}

// ---------------------------------------------------------------------------
// Sampling and membership

inline StructureChromosome random_structure(const SearchSpace& space, std::size_t depth, CounterRng& rng) {
    StructureChromosome s;
    s.layers.resize(depth);
    for (std::size_t pos = 0; pos < s.gene_count(); ++pos)
        set_structure_gene(s, pos, rng.index(space.structure_choices(pos)), space);
    return s;
}

inline ParamChromosome random_params(const SearchSpace& space, std::size_t depth, CounterRng& rng) {
    ParamChromosome p;
    p.dropout.resize(depth);
    for (std::size_t pos = 0; pos < p.gene_count(); ++pos) set_param_gene(p, pos, rng.index(space.param_choices(pos, depth)), space);
    return p;
}

/// Throws ValidationError naming the first gene outside the search space.
/// The last layer's hidden size is exempt.
inline void check_in_space(const StructureChromosome& s, const SearchSpace& space) {
    if (s.layers.empty()) throw ValidationError("structure needs at least one layer");
    for (std::size_t pos = 0; pos < s.gene_count(); ++pos) {
        const auto layer = pos / kGenesPerLayer;
        const auto field = static_cast<StructureField>(pos % kGenesPerLayer);
        if (field == StructureField::hidden && layer + 1 == s.depth()) continue;
        if (!structure_gene_choice(s, pos, space))
            throw ValidationError("layer " + std::to_string(layer + 1) + " gene '" + std::string(to_string(field)) +
                                  "' is outside the search space");
    }
}

inline void check_in_space(const ParamChromosome& p, const SearchSpace& space) {
    for (std::size_t pos = 0; pos < p.gene_count(); ++pos)
        if (!param_gene_choice(p, pos, space)) {
            const std::string name = pos < p.dropout.size() ? "dropout " + std::to_string(pos + 1)
                                     : pos == p.dropout.size() ? std::string("weight_decay")
                                                                : std::string("learning_rate");
            throw ValidationError("parameter gene '" + name + "' is outside the search space");
        }
}

// ---------------------------------------------------------------------------
// Parsing the canonical forms

inline StructureChromosome parse_structure(std::string_view text) {
    StructureChromosome s;
    text = text::trim(text);
    if (text.empty()) throw ParseError("empty structure string");
    const auto layers = text::split(text, ';');
    for (std::size_t k = 0; k < layers.size(); ++k) {
        const auto fields = text::split(layers[k], '|');
        const auto where = [&](StructureField f) {
            return "layer " + std::to_string(k + 1) + " gene '" + std::string(to_string(f)) + "'";
        };
        if (fields.size() != kGenesPerLayer)
            throw ParseError("layer " + std::to_string(k + 1) + ": expected 5 genes separated by '|', got " +
                             std::to_string(fields.size()));
        StructureGene g;
        const auto att = parse_attention(text::trim(fields[0]));
        if (!att) throw ParseError(where(StructureField::attention) + ": unknown value '" + std::string(text::trim(fields[0])) + "'");
        g.attention = *att;
        const auto heads = text::parse_int(fields[1]);
        if (!heads || *heads <= 0) throw ParseError(where(StructureField::heads) + ": bad value '" + std::string(text::trim(fields[1])) + "'");
        g.heads = static_cast<int>(*heads);
        const auto agg = parse_aggregator(text::trim(fields[2]));
        if (!agg) throw ParseError(where(StructureField::aggregator) + ": unknown value '" + std::string(text::trim(fields[2])) + "'");
        g.aggregator = *agg;
        const auto act = parse_activation(text::trim(fields[3]));
        if (!act) throw ParseError(where(StructureField::activation) + ": unknown value '" + std::string(text::trim(fields[3])) + "'");
        g.activation = *act;
        const auto hidden = text::parse_int(fields[4]);
        if (!hidden || *hidden <= 0) throw ParseError(where(StructureField::hidden) + ": bad value '" + std::string(text::trim(fields[4])) + "'");
        g.hidden = static_cast<int>(*hidden);
        s.layers.push_back(g);
    }
    return s;
}

inline ParamChromosome parse_params(std::string_view text) {
    const auto parts = text::split(text::trim(text), '|');
    if (parts.size() != 3)
        throw ParseError("parameter string needs 'dropouts|weight_decay|learning_rate', got '" + std::string(text) + "'");
    ParamChromosome p;
    for (auto tok : text::split(parts[0], ',')) {
        const auto d = text::parse_double(tok);
        if (!d || !(*d >= 0 && *d < 1))
            throw ParseError("parameter gene 'dropout " + std::to_string(p.dropout.size() + 1) + "': bad value '" +
                             std::string(text::trim(tok)) + "'");
        p.dropout.push_back(*d);
    }
    const auto wd = text::parse_double(parts[1]);
    if (!wd || *wd < 0) throw ParseError("parameter gene 'weight_decay': bad value '" + std::string(text::trim(parts[1])) + "'");
    p.weight_decay = *wd;
    const auto lr = text::parse_double(parts[2]);
    if (!lr || *lr <= 0) throw ParseError("parameter gene 'learning_rate': bad value '" + std::string(text::trim(parts[2])) + "'");
    p.learning_rate = *lr;
    return p;
}

/// "structure :: params"
inline Genome parse_genome(std::string_view text) {
    const auto sep = text.find("::");
    if (sep == std::string_view::npos) throw ParseError("genome string needs 'structure :: params'");
    Genome g{parse_structure(text.substr(0, sep)), parse_params(text.substr(sep + 2))};
    if (g.params.dropout.size() != g.structure.depth())
        throw ParseError("structure has " + std::to_string(g.structure.depth()) + " layers but " +
                         std::to_string(g.params.dropout.size()) + " dropout rates were given");
    return g;
}

}  // namespace gnas
