#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "gnas/ad/tensor.hpp"
#include "gnas/kinds.hpp"
#include "gnas/rng.hpp"

namespace gnas::ad {

using Index = std::uint32_t;

namespace detail {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;

inline bool wants(const std::shared_ptr<Node>& p) { return p->requires_grad; }

inline std::shared_ptr<const std::vector<Index>> share(std::span<const Index> idx) {
    return std::make_shared<const std::vector<Index>>(idx.begin(), idx.end());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Dense algebra

/// (n x k) . (k x m)
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) throw ShapeError("matmul shape mismatch: " + a.shape().str() + " . " + b.shape().str());
    const auto n = static_cast<Eigen::Index>(a.rows()), k = static_cast<Eigen::Index>(a.cols()),
               m = static_cast<Eigen::Index>(b.cols());
    std::vector<double> out(static_cast<std::size_t>(n * m));
    detail::MatrixMap(out.data(), n, m).noalias() =
        detail::ConstMatrixMap(a.values().data(), n, k) * detail::ConstMatrixMap(b.values().data(), k, m);
    return make_result({a.rows(), b.cols()}, std::move(out), {a, b}, [n, k, m](detail::Node& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        const detail::ConstMatrixMap G(self.grad.data(), n, m);
        if (detail::wants(pa))
            detail::MatrixMap(pa->grad_data(), n, k).noalias() += G * detail::ConstMatrixMap(pb->value.data(), k, m).transpose();
        if (detail::wants(pb))
            detail::MatrixMap(pb->grad_data(), k, m).noalias() += detail::ConstMatrixMap(pa->value.data(), n, k).transpose() * G;
    });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw ShapeError("add shape mismatch: " + a.shape().str() + " + " + b.shape().str());
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
        for (auto& p : self.parents) {
            if (!detail::wants(p)) continue;
            double* d = p->grad_data();
            for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i];
        }
    });
}

/// Elementwise product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw ShapeError("mul shape mismatch: " + a.shape().str() + " * " + b.shape().str());
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        if (detail::wants(pa)) {
            double* d = pa->grad_data();
            for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i] * pb->value[i];
        }
        if (detail::wants(pb)) {
            double* d = pb->grad_data();
            for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i] * pa->value[i];
        }
    });
}

inline Tensor scale(const Tensor& a, double factor) {
    std::vector<double> out(a.values().begin(), a.values().end());
    for (auto& v : out) v *= factor;
    return make_result(a.shape(), std::move(out), {a}, [factor](detail::Node& self) {
        double* d = self.parents[0]->grad_data();
        for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += factor * self.grad[i];
    });
}

/// Sum of all elements, as a scalar.
inline Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    return make_result({1, 1}, {s}, {a}, [](detail::Node& self) {
        double* d = self.parents[0]->grad_data();
        const double g = self.grad[0];
        for (std::size_t i = 0; i < self.parents[0]->value.size(); ++i) d[i] += g;
    });
}

/// Horizontal concatenation: (n x a) | (n x b) | ... -> (n x (a+b+...)).
inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat of zero tensors");
    const std::size_t n = parts.front().rows();
    std::size_t width = 0;
    for (const auto& p : parts) {
        if (p.rows() != n) throw ShapeError("concat row mismatch: " + parts.front().shape().str() + " vs " + p.shape().str());
        width += p.cols();
    }
    std::vector<double> out(n * width);
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const auto w = p.cols();
        for (std::size_t i = 0; i < n; ++i)
            std::copy_n(p.values().data() + i * w, w, out.data() + i * width + offset);
        offset += w;
    }
    return make_result({n, width}, std::move(out), parts, [n, width](detail::Node& self) {
        std::size_t offset = 0;
        for (auto& p : self.parents) {
            const auto w = p->shape.cols;
            if (detail::wants(p)) {
                double* d = p->grad_data();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < w; ++j) d[i * w + j] += self.grad[i * width + offset + j];
            }
            offset += w;
        }
    });
}

/// Columns [begin, begin + count).
inline Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
    if (begin + count > a.cols()) throw ShapeError("slice_cols out of range on " + a.shape().str());
    const std::size_t n = a.rows(), w = a.cols();
    std::vector<double> out(n * count);
    for (std::size_t i = 0; i < n; ++i) std::copy_n(a.values().data() + i * w + begin, count, out.data() + i * count);
    return make_result({n, count}, std::move(out), {a}, [n, w, begin, count](detail::Node& self) {
        double* d = self.parents[0]->grad_data();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < count; ++j) d[i * w + begin + j] += self.grad[i * count + j];
    });
}

/// Elementwise mean of equally shaped tensors.
inline Tensor mean_stack(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("mean of zero tensors");
    const auto shape = parts.front().shape();
    std::vector<double> out(shape.size(), 0.0);
    for (const auto& p : parts) {
        if (p.shape() != shape) throw ShapeError("mean_stack shape mismatch: " + shape.str() + " vs " + p.shape().str());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += p.values()[i];
    }
    const double inv = 1.0 / static_cast<double>(parts.size());
    for (auto& v : out) v *= inv;
    return make_result(shape, std::move(out), parts, [inv](detail::Node& self) {
        for (auto& p : self.parents) {
            if (!detail::wants(p)) continue;
            double* d = p->grad_data();
            for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += inv * self.grad[i];
        }
    });
}

// ---------------------------------------------------------------------------
// Activations

inline constexpr double kLeakySlope = 0.2;

inline double activate(Activation kind, double x) {
    switch (kind) {
        case Activation::sigmoid: return 1.0 / (1.0 + std::exp(-x));
        case Activation::tanh: return std::tanh(x);
        case Activation::relu: return x > 0 ? x : 0.0;
        case Activation::linear: return x;
        case Activation::softplus: return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x)));
        case Activation::leaky_relu: return x > 0 ? x : kLeakySlope * x;
        case Activation::relu6: return std::min(std::max(x, 0.0), 6.0);
        case Activation::elu: return x > 0 ? x : std::expm1(x);
    }
    throw ValidationError("unknown activation");
}

/// d activate / dx at x, with y = activate(x) supplied.
inline double activate_grad(Activation kind, double x, double y) {
    switch (kind) {
        case Activation::sigmoid: return y * (1.0 - y);
        case Activation::tanh: return 1.0 - y * y;
        case Activation::relu: return x > 0 ? 1.0 : 0.0;
        case Activation::linear: return 1.0;
        case Activation::softplus: return 1.0 / (1.0 + std::exp(-x));
        case Activation::leaky_relu: return x > 0 ? 1.0 : kLeakySlope;
        case Activation::relu6: return (x > 0 && x < 6.0) ? 1.0 : 0.0;
        case Activation::elu: return x > 0 ? 1.0 : y + 1.0;
    }
    throw ValidationError("unknown activation");
}

inline Tensor activation(Activation kind, const Tensor& x) {
    if (kind == Activation::linear) return x;
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = activate(kind, x.values()[i]);
    return make_result(x.shape(), std::move(out), {x}, [kind](detail::Node& self) {
        auto& p = self.parents[0];
        double* d = p->grad_data();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            d[i] += self.grad[i] * activate_grad(kind, p->value[i], self.value[i]);
    });
}

// ---------------------------------------------------------------------------
// Edge-indexed gather/scatter

/// Row r of the output is row idx[r] of `x`.
inline Tensor gather_rows(const Tensor& x, std::span<const Index> idx) {
    const std::size_t w = x.cols();
    std::vector<double> out(idx.size() * w);
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] >= x.rows()) throw ShapeError("gather index out of range for " + x.shape().str());
        std::copy_n(x.values().data() + idx[r] * w, w, out.data() + r * w);
    }
    auto shared = detail::share(idx);
    return make_result({idx.size(), w}, std::move(out), {x}, [shared, w](detail::Node& self) {
        double* d = self.parents[0]->grad_data();
        const auto& ix = *shared;
        for (std::size_t r = 0; r < ix.size(); ++r)
            for (std::size_t j = 0; j < w; ++j) d[ix[r] * w + j] += self.grad[r * w + j];
    });
}

/// Multiplies row r of `x` (E x d) by the scalar s[r] (E x 1).
inline Tensor scale_rows(const Tensor& x, const Tensor& s) {
    if (s.cols() != 1 || s.rows() != x.rows()) throw ShapeError("scale_rows shape mismatch: " + x.shape().str() + " by " + s.shape().str());
    const std::size_t n = x.rows(), w = x.cols();
    std::vector<double> out(n * w);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < w; ++j) out[r * w + j] = x.values()[r * w + j] * s.values()[r];
    return make_result({n, w}, std::move(out), {x, s}, [n, w](detail::Node& self) {
        auto& px = self.parents[0];
        auto& ps = self.parents[1];
        if (detail::wants(px)) {
            double* d = px->grad_data();
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t j = 0; j < w; ++j) d[r * w + j] += self.grad[r * w + j] * ps->value[r];
        }
        if (detail::wants(ps)) {
            double* d = ps->grad_data();
            for (std::size_t r = 0; r < n; ++r) {
                double acc = 0.0;
                for (std::size_t j = 0; j < w; ++j) acc += self.grad[r * w + j] * px->value[r * w + j];
                d[r] += acc;
            }
        }
    });
}

/// Per-row sum: (E x d) -> (E x 1).
inline Tensor row_sum(const Tensor& x) {
    const std::size_t n = x.rows(), w = x.cols();
    std::vector<double> out(n, 0.0);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < w; ++j) out[r] += x.values()[r * w + j];
    return make_result({n, 1}, std::move(out), {x}, [n, w](detail::Node& self) {
        double* d = self.parents[0]->grad_data();
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < w; ++j) d[r * w + j] += self.grad[r];
    });
}

/// Per-row cosine similarity of two (E x d) tensors -> (E x 1). Rows with a
/// zero vector score 0 and pass no gradient.
inline Tensor row_cosine(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw ShapeError("row_cosine shape mismatch: " + a.shape().str() + " vs " + b.shape().str());
    const std::size_t n = a.rows(), w = a.cols();
    std::vector<double> out(n, 0.0);
    auto norms = std::make_shared<std::vector<double>>(2 * n, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        double dot = 0, na = 0, nb = 0;
        for (std::size_t j = 0; j < w; ++j) {
            const double x = a.values()[r * w + j], y = b.values()[r * w + j];
            dot += x * y;
            na += x * x;
            nb += y * y;
        }
        na = std::sqrt(na);
        nb = std::sqrt(nb);
        (*norms)[2 * r] = na;
        (*norms)[2 * r + 1] = nb;
        out[r] = (na > 0 && nb > 0) ? dot / (na * nb) : 0.0;
    }
    return make_result({n, 1}, std::move(out), {a, b}, [n, w, norms](detail::Node& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        for (std::size_t r = 0; r < n; ++r) {
            const double na = (*norms)[2 * r], nb = (*norms)[2 * r + 1];
            if (na == 0 || nb == 0) continue;
            const double g = self.grad[r], c = self.value[r];
            const double* x = pa->value.data() + r * w;
            const double* y = pb->value.data() + r * w;
            if (detail::wants(pa)) {
                double* d = pa->grad_data() + r * w;
                for (std::size_t j = 0; j < w; ++j) d[j] += g * (y[j] / (na * nb) - c * x[j] / (na * na));
            }
            if (detail::wants(pb)) {
                double* d = pb->grad_data() + r * w;
                for (std::size_t j = 0; j < w; ++j) d[j] += g * (x[j] / (na * nb) - c * y[j] / (nb * nb));
            }
        }
    });
}

/// Softmax of per-edge scores within each target's edge group, stabilized by
/// subtracting the group max.
inline Tensor segment_softmax(const Tensor& scores, std::span<const Index> targets, std::size_t num_nodes) {
    if (scores.cols() != 1 || scores.rows() != targets.size()) throw ShapeError("segment_softmax expects (E x 1) scores for " + std::to_string(targets.size()) + " edges, got " +
                        scores.shape().str());
    const std::size_t e = targets.size();
    std::vector<double> group_max(num_nodes, -std::numeric_limits<double>::infinity());
    for (std::size_t r = 0; r < e; ++r) {
        if (targets[r] >= num_nodes) throw ShapeError("segment target out of range");
        group_max[targets[r]] = std::max(group_max[targets[r]], scores.values()[r]);
    }
    std::vector<double> out(e), group_sum(num_nodes, 0.0);
    for (std::size_t r = 0; r < e; ++r) {
        out[r] = std::exp(scores.values()[r] - group_max[targets[r]]);
        group_sum[targets[r]] += out[r];
    }
    for (std::size_t r = 0; r < e; ++r) out[r] /= group_sum[targets[r]];
    auto shared = detail::share(targets);
    return make_result({e, 1}, std::move(out), {scores}, [shared, num_nodes](detail::Node& self) {
        const auto& t = *shared;
        std::vector<double> dot(num_nodes, 0.0);
        for (std::size_t r = 0; r < t.size(); ++r) dot[t[r]] += self.value[r] * self.grad[r];
        double* d = self.parents[0]->grad_data();
        for (std::size_t r = 0; r < t.size(); ++r) d[r] += self.value[r] * (self.grad[r] - dot[t[r]]);
    });
}

/// Weights of the mlp aggregator: relu(sum . hidden) . out.
struct MlpWeights {
    Tensor hidden;
    Tensor out;
};

/// Combines per-edge message rows into per-node rows. Nodes with no incoming
/// edge get a zero row.
inline Tensor neighbor_aggregate(Aggregator kind, const Tensor& messages, std::span<const Index> targets,
                                 std::size_t num_nodes, const MlpWeights* mlp = nullptr) {
    if (messages.rows() != targets.size()) throw ShapeError("neighbor_aggregate: " + std::to_string(targets.size()) +
                                                           " targets for messages " + messages.shape().str());
    for (auto t : targets)
        if (t >= num_nodes) throw ShapeError("aggregate target out of range");
    const std::size_t e = targets.size(), w = messages.cols();
    const double* m = messages.values().data();
    auto shared = detail::share(targets);

    switch (kind) {
        case Aggregator::sum:
        case Aggregator::mean_pooling: {
            std::vector<double> out(num_nodes * w, 0.0);
            auto inv = std::make_shared<std::vector<double>>(num_nodes, 1.0);
            for (std::size_t r = 0; r < e; ++r)
                for (std::size_t j = 0; j < w; ++j) out[targets[r] * w + j] += m[r * w + j];
            if (kind == Aggregator::mean_pooling) {
                std::vector<std::size_t> count(num_nodes, 0);
                for (auto t : targets) ++count[t];
                for (std::size_t i = 0; i < num_nodes; ++i) {
                    (*inv)[i] = count[i] ? 1.0 / static_cast<double>(count[i]) : 0.0;
                    for (std::size_t j = 0; j < w; ++j) out[i * w + j] *= (*inv)[i];
                }
            }
            return make_result({num_nodes, w}, std::move(out), {messages}, [shared, inv, w](detail::Node& self) {
                double* d = self.parents[0]->grad_data();
                const auto& t = *shared;
                for (std::size_t r = 0; r < t.size(); ++r)
                    for (std::size_t j = 0; j < w; ++j) d[r * w + j] += (*inv)[t[r]] * self.grad[t[r] * w + j];
            });
        }
        case Aggregator::max_pooling: {
            constexpr auto none = std::numeric_limits<std::size_t>::max();
            auto argmax = std::make_shared<std::vector<std::size_t>>(num_nodes * w, none);
            std::vector<double> out(num_nodes * w, 0.0);
            for (std::size_t r = 0; r < e; ++r)
                for (std::size_t j = 0; j < w; ++j) {
                    const auto slot = targets[r] * w + j;
                    // strict '>' keeps the first edge on ties
                    if ((*argmax)[slot] == none || m[r * w + j] > out[slot]) {
                        out[slot] = m[r * w + j];
                        (*argmax)[slot] = r;
                    }
                }
            return make_result({num_nodes, w}, std::move(out), {messages}, [argmax, w](detail::Node& self) {
                double* d = self.parents[0]->grad_data();
                for (std::size_t slot = 0; slot < argmax->size(); ++slot) {
                    const auto r = (*argmax)[slot];
                    if (r != none) d[r * w + slot % w] += self.grad[slot];
                }
            });
        }
        case Aggregator::mlp: {
            if (mlp == nullptr || !mlp->hidden.defined() || !mlp->out.defined())
                throw ValidationError("mlp aggregator needs hidden and output weights");
            auto summed = neighbor_aggregate(Aggregator::sum, messages, targets, num_nodes);
            return matmul(activation(Activation::relu, matmul(summed, mlp->hidden)), mlp->out);
        }
    }
    throw ValidationError("unknown aggregator");
}

/// Same result as neighbor_aggregate(kind, scale_rows(gather_rows(z, sources),
/// scores), targets, ...) without materializing the per-edge message rows.
inline Tensor message_aggregate(Aggregator kind, const Tensor& z, const Tensor& scores, std::span<const Index> sources,
                                std::span<const Index> targets, std::size_t num_nodes, const MlpWeights* mlp = nullptr) {
    if (sources.size() != targets.size() || scores.cols() != 1 || scores.rows() != targets.size())
        throw ShapeError("message_aggregate: scores " + scores.shape().str() + " for " + std::to_string(sources.size()) +
                         " sources and " + std::to_string(targets.size()) + " targets");
    const std::size_t e = targets.size(), w = z.cols();
    for (std::size_t r = 0; r < e; ++r)
        if (sources[r] >= z.rows() || targets[r] >= num_nodes) throw ShapeError("message_aggregate: edge out of range");
    if (kind == Aggregator::mlp) {
        if (mlp == nullptr || !mlp->hidden.defined() || !mlp->out.defined())
            throw ValidationError("mlp aggregator needs hidden and output weights");
        auto summed = message_aggregate(Aggregator::sum, z, scores, sources, targets, num_nodes);
        return matmul(activation(Activation::relu, matmul(summed, mlp->hidden)), mlp->out);
    }
    const double* zv = z.values().data();
    const double* sv = scores.values().data();
    auto src = detail::share(sources);
    auto tgt = detail::share(targets);
    std::vector<double> out(num_nodes * w, 0.0);

    if (kind == Aggregator::max_pooling) {
        constexpr auto none = std::numeric_limits<std::size_t>::max();
        auto argmax = std::make_shared<std::vector<std::size_t>>(num_nodes * w, none);
        for (std::size_t r = 0; r < e; ++r) {
            const double a = sv[r];
            const double* zr = zv + sources[r] * w;
            const auto base = targets[r] * w;
            for (std::size_t j = 0; j < w; ++j) {
                const double m = a * zr[j];
                if ((*argmax)[base + j] == none || m > out[base + j]) {
                    out[base + j] = m;
                    (*argmax)[base + j] = r;
                }
            }
        }
        return make_result({num_nodes, w}, std::move(out), {z, scores}, [argmax, src, w](detail::Node& self) {
            auto& pz = self.parents[0];
            auto& ps = self.parents[1];
            for (std::size_t slot = 0; slot < argmax->size(); ++slot) {
                const auto r = (*argmax)[slot];
                if (r == none) continue;
                const auto j = slot % w;
                const auto zi = (*src)[r] * w + j;
                if (detail::wants(pz)) pz->grad_data()[zi] += self.grad[slot] * ps->value[r];
                if (detail::wants(ps)) ps->grad_data()[r] += self.grad[slot] * pz->value[zi];
            }
        });
    }

    auto inv = std::make_shared<std::vector<double>>(num_nodes, 1.0);
    if (kind == Aggregator::mean_pooling) {
        std::vector<std::size_t> count(num_nodes, 0);
        for (auto t : targets) ++count[t];
        for (std::size_t i = 0; i < num_nodes; ++i) (*inv)[i] = count[i] ? 1.0 / static_cast<double>(count[i]) : 0.0;
    }
    for (std::size_t r = 0; r < e; ++r) {
        const double a = sv[r] * (*inv)[targets[r]];
        const double* zr = zv + sources[r] * w;
        double* o = out.data() + targets[r] * w;
        for (std::size_t j = 0; j < w; ++j) o[j] += a * zr[j];
    }
    return make_result({num_nodes, w}, std::move(out), {z, scores}, [inv, src, tgt, w](detail::Node& self) {
        auto& pz = self.parents[0];
        auto& ps = self.parents[1];
        double* dz = detail::wants(pz) ? pz->grad_data() : nullptr;
        double* ds = detail::wants(ps) ? ps->grad_data() : nullptr;
        for (std::size_t r = 0; r < src->size(); ++r) {
            const auto t = (*tgt)[r];
            const double* g = self.grad.data() + t * w;
            const double scale = (*inv)[t];
            const auto zi = (*src)[r] * w;
            if (dz) {
                const double a = ps->value[r] * scale;
                for (std::size_t j = 0; j < w; ++j) dz[zi + j] += a * g[j];
            }
            if (ds) {
                double acc = 0.0;
                for (std::size_t j = 0; j < w; ++j) acc += g[j] * pz->value[zi + j];
                ds[r] += scale * acc;
            }
        }
    });
}

/// s[e] = sum_c a[c] * tanh(z[t_e, c] + z[s_e, c]) for every edge, as one node.
/// tanh goes through Eigen's vectorized exp; libm tanh dominated wide layers.
inline Tensor pair_tanh_scores(const Tensor& z, const Tensor& a, std::span<const Index> sources,
                               std::span<const Index> targets) {
    const std::size_t w = z.cols(), e = sources.size();
    if (a.rows() != w || a.cols() != 1) throw ShapeError("pair_tanh_scores weight " + a.shape().str() + " for width " + std::to_string(w));
    if (targets.size() != e) throw ShapeError("pair_tanh_scores: sources and targets differ in length");
    auto th = std::make_shared<detail::Matrix>(e, w);
    const auto zv = z.values();
    for (std::size_t r = 0; r < e; ++r) {
        if (sources[r] >= z.rows() || targets[r] >= z.rows()) throw ShapeError("pair_tanh_scores index out of range");
        const double* zt = zv.data() + targets[r] * w;
        const double* zs = zv.data() + sources[r] * w;
        double* out = th->data() + r * w;
        for (std::size_t c = 0; c < w; ++c) out[c] = zt[c] + zs[c];
    }
    // tanh(u) = 1 - 2 / (exp(2u) + 1); saturates cleanly at +-1 for large |u|.
    th->array() = 1.0 - 2.0 / ((2.0 * th->array()).exp() + 1.0);
    std::vector<double> out(e);
    Eigen::Map<Eigen::VectorXd>(out.data(), e).noalias() =
        *th * Eigen::Map<const Eigen::VectorXd>(a.values().data(), w);
    auto src = detail::share(sources);
    auto tgt = detail::share(targets);
    return make_result({e, 1}, std::move(out), {z, a}, [th, src, tgt, w, e](detail::Node& self) {
        auto& pz = self.parents[0];
        auto& pa = self.parents[1];
        const Eigen::Map<const Eigen::VectorXd> g(self.grad.data(), e);
        if (detail::wants(pa)) Eigen::Map<Eigen::VectorXd>(pa->grad_data(), w) += th->transpose() * g;
        if (!detail::wants(pz)) return;
        const Eigen::Map<const Eigen::RowVectorXd> av(pa->value.data(), w);
        double* dz = pz->grad_data();
        Eigen::RowVectorXd du(w);
        for (std::size_t r = 0; r < e; ++r) {
            du = g[r] * av.cwiseProduct((1.0 - th->row(r).array().square()).matrix());
            Eigen::Map<Eigen::RowVectorXd>(dz + (*tgt)[r] * w, w) += du;
            Eigen::Map<Eigen::RowVectorXd>(dz + (*src)[r] * w, w) += du;
        }
    });
}

// ---------------------------------------------------------------------------
// Regularization and losses

/// Inverted dropout: survivors are scaled by 1/(1 - rate). Identity when not
/// training or when rate is 0.
inline Tensor dropout(const Tensor& x, double rate, bool training, CounterRng& rng) {
    if (!(rate >= 0.0 && rate < 1.0)) throw ValidationError("dropout rate must lie in [0, 1)");
    if (!training || rate == 0.0) return x;
    const double keep_scale = 1.0 / (1.0 - rate);
    auto mask = std::make_shared<std::vector<double>>(x.size());
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        (*mask)[i] = rng.bernoulli(rate) ? 0.0 : keep_scale;
        out[i] = x.values()[i] * (*mask)[i];
    }
    return make_result(x.shape(), std::move(out), {x}, [mask](detail::Node& self) {
        double* d = self.parents[0]->grad_data();
        for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i] * (*mask)[i];
    });
}

/// Mean over `rows` of -log softmax(h_r)[label_r].
inline Tensor softmax_cross_entropy(const Tensor& h, std::span<const std::int32_t> labels,
                                    std::span<const Index> rows) {
    if (rows.empty()) throw ShapeError("cross entropy over an empty node set");
    if (labels.size() != h.rows()) throw ShapeError("one label per row required for " + h.shape().str());
    const std::size_t c = h.cols();
    auto probs = std::make_shared<std::vector<double>>(rows.size() * c);
    double loss = 0.0;
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const double* x = h.values().data() + rows[k] * c;
        const double mx = *std::max_element(x, x + c);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += std::exp(x[j] - mx);
        const auto y = static_cast<std::size_t>(labels[rows[k]]);
        loss -= x[y] - mx - std::log(z);
        for (std::size_t j = 0; j < c; ++j) (*probs)[k * c + j] = std::exp(x[j] - mx) / z;
    }
    const double inv = 1.0 / static_cast<double>(rows.size());
    auto shared_rows = detail::share(rows);
    auto shared_labels = std::make_shared<std::vector<std::int32_t>>(labels.begin(), labels.end());
    return make_result({1, 1}, {loss * inv}, {h}, [probs, shared_rows, shared_labels, c, inv](detail::Node& self) {
        double* d = self.parents[0]->grad_data();
        const double g = self.grad[0] * inv;
        const auto& rs = *shared_rows;
        for (std::size_t k = 0; k < rs.size(); ++k) {
            const auto y = static_cast<std::size_t>((*shared_labels)[rs[k]]);
            for (std::size_t j = 0; j < c; ++j)
                d[rs[k] * c + j] += g * ((*probs)[k * c + j] - (j == y ? 1.0 : 0.0));
        }
    });
}

/// Mean over `rows` x classes of binary cross entropy on logits `h`;
/// `targets` is the row-major 0/1 label matrix.
inline Tensor sigmoid_cross_entropy(const Tensor& h, std::span<const std::uint8_t> targets,
                                    std::span<const Index> rows) {
    if (rows.empty()) throw ShapeError("cross entropy over an empty node set");
    if (targets.size() != h.size()) throw ShapeError("label matrix does not match " + h.shape().str());
    const std::size_t c = h.cols();
    double loss = 0.0;
    for (auto r : rows)
        for (std::size_t j = 0; j < c; ++j) {
            const double x = h.values()[r * c + j];
            const double y = targets[r * c + j];
            loss += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::fabs(x)));
        }
    const double inv = 1.0 / static_cast<double>(rows.size() * c);
    auto shared_rows = detail::share(rows);
    auto shared_targets = std::make_shared<std::vector<std::uint8_t>>(targets.begin(), targets.end());
    return make_result({1, 1}, {loss * inv}, {h}, [shared_rows, shared_targets, c, inv](detail::Node& self) {
        auto& p = self.parents[0];
        double* d = p->grad_data();
        const double g = self.grad[0] * inv;
        for (auto r : *shared_rows)
            for (std::size_t j = 0; j < c; ++j) {
                const double x = p->value[r * c + j];
                d[r * c + j] += g * (1.0 / (1.0 + std::exp(-x)) - (*shared_targets)[r * c + j]);
            }
    });
}

}  // namespace gnas::ad
