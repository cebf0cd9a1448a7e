#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "gnas/graph.hpp"

namespace gnas::testing {

/// Multinomial logistic regression on raw node features, ignoring edges.
/// Trained by full-batch gradient descent on the train split; returns the
/// accuracy on `eval`. Used to confirm a dataset's feature signal is linearly
/// separable before asking a GNN to find it.
inline double logistic_regression_accuracy(const Graph& g, Split eval, int iterations = 500, double lr = 1.0) {
    const std::size_t f = g.num_features, c = g.num_classes;
    std::vector<double> w((f + 1) * c, 0.0);
    const auto train = g.nodes_in(Split::train);
    std::vector<double> p(c);

    auto logits = [&](std::size_t node, std::vector<double>& out) {
        const auto x = g.feature_row(node);
        for (std::size_t k = 0; k < c; ++k) {
            double s = w[f * c + k];
            for (std::size_t j = 0; j < f; ++j) s += x[j] * w[j * c + k];
            out[k] = s;
        }
    };

    for (int it = 0; it < iterations; ++it) {
        std::vector<double> grad(w.size(), 0.0);
        for (auto node : train) {
            logits(node, p);
            const double m = *std::max_element(p.begin(), p.end());
            double z = 0;
            for (auto& v : p) z += (v = std::exp(v - m));
            for (std::size_t k = 0; k < c; ++k) {
                const double d = p[k] / z - (g.labels[node] == static_cast<std::int32_t>(k) ? 1.0 : 0.0);
                const auto x = g.feature_row(node);
                for (std::size_t j = 0; j < f; ++j) grad[j * c + k] += d * x[j];
                grad[f * c + k] += d;
            }
        }
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * grad[i] / static_cast<double>(train.size());
    }

    std::size_t correct = 0;
    const auto rows = g.nodes_in(eval);
    for (auto node : rows) {
        logits(node, p);
        const auto best = static_cast<std::int32_t>(std::max_element(p.begin(), p.end()) - p.begin());
        correct += best == g.labels[node];
    }
    return rows.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(rows.size());
}

}  // namespace gnas::testing
