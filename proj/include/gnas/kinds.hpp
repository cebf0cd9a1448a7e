#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

#include "gnas/error.hpp"

namespace gnas {

enum class Attention { constant, gcn, gat, sym_gat, cos, linear, gene_linear };
enum class Aggregator { sum, mean_pooling, max_pooling, mlp };
enum class Activation { sigmoid, tanh, relu, linear, softplus, leaky_relu, relu6, elu };

inline constexpr std::array<std::pair<Attention, std::string_view>, 7> kAttentionNames{{
    {Attention::constant, "const"},
    {Attention::gcn, "gcn"},
    {Attention::gat, "gat"},
    {Attention::sym_gat, "sym-gat"},
    {Attention::cos, "cos"},
    {Attention::linear, "linear"},
    {Attention::gene_linear, "gene-linear"},
}};

inline constexpr std::array<std::pair<Aggregator, std::string_view>, 4> kAggregatorNames{{
    {Aggregator::sum, "sum"},
    {Aggregator::mean_pooling, "mean-pooling"},
    {Aggregator::max_pooling, "max-pooling"},
    {Aggregator::mlp, "mlp"},
}};

inline constexpr std::array<std::pair<Activation, std::string_view>, 8> kActivationNames{{
    {Activation::sigmoid, "sigmoid"},
    {Activation::tanh, "tanh"},
    {Activation::relu, "relu"},
    {Activation::linear, "linear"},
    {Activation::softplus, "softplus"},
    {Activation::leaky_relu, "leaky_relu"},
    {Activation::relu6, "relu6"},
    {Activation::elu, "elu"},
}};

namespace detail {

template <typename E, std::size_t N>
std::string_view name_of(const std::array<std::pair<E, std::string_view>, N>& table, E value) {
    for (const auto& [v, name] : table)
        if (v == value) return name;
    return "?";
}

template <typename E, std::size_t N>
std::optional<E> lookup(const std::array<std::pair<E, std::string_view>, N>& table, std::string_view name) {
    for (const auto& [v, n] : table)
        if (n == name) return v;
    return std::nullopt;
}

}  // namespace detail

inline std::string_view to_string(Attention a) { return detail::name_of(kAttentionNames, a); }
inline std::string_view to_string(Aggregator a) { return detail::name_of(kAggregatorNames, a); }
inline std::string_view to_string(Activation a) { return detail::name_of(kActivationNames, a); }

inline std::optional<Attention> parse_attention(std::string_view s) { return detail::lookup(kAttentionNames, s); }
inline std::optional<Aggregator> parse_aggregator(std::string_view s) { return detail::lookup(kAggregatorNames, s); }
inline std::optional<Activation> parse_activation(std::string_view s) { return detail::lookup(kActivationNames, s); }

}  // namespace gnas
