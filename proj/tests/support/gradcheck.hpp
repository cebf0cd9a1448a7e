#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "gnas/ad/tensor.hpp"

namespace gnas::testing {

/// ||a - b|| / max(||a||, ||b||), with a floor so all-zero gradients compare
/// as equal.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
    double diff = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double scale = std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
    return std::sqrt(diff) / scale;
}

/// Central-difference gradient of `loss` with respect to every element of
/// `leaf`. Runs with recording disabled; independent of the backward rules.
inline std::vector<double> numeric_gradient(const std::function<ad::Tensor()>& loss, ad::Tensor leaf,
                                            double step = 1e-5) {
    ad::NoGradGuard guard;
    auto values = leaf.mutable_values();
    std::vector<double> grad(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double keep = values[i];
        values[i] = keep + step;
        const double up = loss().item();
        values[i] = keep - step;
        const double down = loss().item();
        values[i] = keep;
        grad[i] = (up - down) / (2 * step);
    }
    return grad;
}

inline std::vector<double> analytic_gradient(const std::function<ad::Tensor()>& loss, std::vector<ad::Tensor> leaves,
                                             std::size_t which) {
    for (auto& l : leaves) l.zero_grad();
    ad::backward(loss());
    auto g = leaves[which].grad();
    std::vector<double> out(g.begin(), g.end());
    if (out.empty()) out.assign(leaves[which].size(), 0.0);
    return out;
}

/// Worst relative error over all leaves.
inline double gradcheck(const std::function<ad::Tensor()>& loss, const std::vector<ad::Tensor>& leaves,
                        double step = 1e-5) {
    double worst = 0;
    for (std::size_t k = 0; k < leaves.size(); ++k) {
        const auto analytic = analytic_gradient(loss, leaves, k);
        const auto numeric = numeric_gradient(loss, leaves[k], step);
        worst = std::max(worst, relative_error(analytic, numeric));
    }
    return worst;
}

}  // namespace gnas::testing
