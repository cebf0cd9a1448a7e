#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "gnas/ad/tensor.hpp"

namespace gnas::ad {

/// Named trainable tensors. `decay` marks the tensors the weight-decay
/// penalty applies to.
class ParameterStore {
public:
    struct Entry {
        std::string name;
        Tensor tensor;
        bool decay = false;
    };

    Tensor& add(const std::string& name, Shape shape, std::vector<double> values, bool decay = false) {
        if (index_.count(name)) throw ValidationError("duplicate parameter name '" + name + "'");
        index_.emplace(name, entries_.size());
        entries_.push_back({name, Tensor::parameter(shape, std::move(values)), decay});
        return entries_.back().tensor;
    }

    const Tensor& get(const std::string& name) const {
        const auto it = index_.find(name);
        if (it == index_.end()) throw ValidationError("no parameter named '" + name + "'");
        return entries_[it->second].tensor;
    }
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    std::vector<Entry>& entries() { return entries_; }
    const std::vector<Entry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += e.tensor.size();
        return n;
    }

    void zero_grad() {
        for (auto& e : entries_) e.tensor.zero_grad();
    }

    /// Deep copy of the values; the copy shares nothing with this store.
    ParameterStore clone() const {
        ParameterStore out;
        for (const auto& e : entries_) {
            std::vector<double> v(e.tensor.values().begin(), e.tensor.values().end());
            out.add(e.name, e.tensor.shape(), std::move(v), e.decay);
        }
        return out;
    }

private:
    std::vector<Entry> entries_;
    std::map<std::string, std::size_t> index_;
};

enum class OptimizerKind { adam, sgd };

struct OptimizerSettings {
    OptimizerKind kind = OptimizerKind::adam;
    double learning_rate = 0.01;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Adam (or plain SGD) with an L2 gradient penalty on decay-tagged tensors.
class OptimizerState {
public:
    explicit OptimizerState(OptimizerSettings settings) : settings_(settings) {}

    const OptimizerSettings& settings() const { return settings_; }
    long step_count() const { return step_; }

    /// Applies one update from the accumulated gradients, then clears them.
    void step(ParameterStore& params) {
        if (first_.empty()) {
            for (const auto& e : params.entries()) {
                first_.emplace_back(e.tensor.size(), 0.0);
                second_.emplace_back(e.tensor.size(), 0.0);
            }
        }
        if (first_.size() != params.size()) throw ValidationError("optimizer state does not match parameter store");
        for (const auto& e : params.entries())
            if (!e.tensor.has_grad()) throw ValidationError("parameter '" + e.name + "' has no gradient");

        ++step_;
        const auto& s = settings_;
        const double bias1 = 1.0 - std::pow(s.beta1, static_cast<double>(step_));
        const double bias2 = 1.0 - std::pow(s.beta2, static_cast<double>(step_));
        for (std::size_t p = 0; p < params.size(); ++p) {
            auto& entry = params.entries()[p];
            auto w = entry.tensor.mutable_values();
            auto g = entry.tensor.grad();
            const double wd = entry.decay ? s.weight_decay : 0.0;
            auto& m = first_[p];
            auto& v = second_[p];
            if (m.size() != w.size()) throw ValidationError("optimizer moment shape mismatch for '" + entry.name + "'");
            for (std::size_t i = 0; i < w.size(); ++i) {
                const double grad = g[i] + wd * w[i];
                if (s.kind == OptimizerKind::sgd) {
                    w[i] -= s.learning_rate * grad;
                    continue;
                }
                m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * grad;
                v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * grad * grad;
                const double m_hat = m[i] / bias1;
                const double v_hat = v[i] / bias2;
                w[i] -= s.learning_rate * m_hat / (std::sqrt(v_hat) + s.epsilon);
            }
        }
        params.zero_grad();
    }

private:
    OptimizerSettings settings_;
    long step_ = 0;
    std::vector<std::vector<double>> first_;
    std::vector<std::vector<double>> second_;
};

}  // namespace gnas::ad
