#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "unvp/array.hpp"
#include "unvp/error.hpp"

namespace unvp {

enum class OptKind { sgd, adam };

inline const char* to_string(OptKind k) { return k == OptKind::sgd ? "sgd" : "adam"; }

inline OptKind opt_kind_from(const std::string& s) {
    if (s == "sgd") return OptKind::sgd;
    if (s == "adam") return OptKind::adam;
    throw ConfigError("unknown optimizer '" + s + "' (expected sgd or adam)");
}

// First-order updates over a fixed, ordered parameter list. Moment buffers
// are indexed by position, so the list passed to step() must always match the
// one passed to attach().
class Optimizer {
public:
    OptKind kind = OptKind::adam;
    double lr = 1e-4;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::uint64_t step_count = 0;

    Optimizer() = default;
    Optimizer(OptKind k, double learning_rate) : kind(k), lr(learning_rate) {}

    void attach(const std::vector<ArrayPtr>& params) {
        m_.clear();
        v_.clear();
        for (const auto& p : params) {
            m_.emplace_back(p->numel(), 0.0);
            if (kind == OptKind::adam) v_.emplace_back(p->numel(), 0.0);
        }
    }

    bool attached() const { return !m_.empty(); }

    void step(const std::vector<ArrayPtr>& params) {
        if (m_.size() != params.size())
            throw ShapeError("optimizer: parameter list does not match attached state");
        ++step_count;
        for (std::size_t k = 0; k < params.size(); ++k) {
            Array& p = *params[k];
            if (!p.requires_grad || p.grad.size() != p.data.size())
                throw ShapeError("optimizer: parameter " + std::to_string(k) + " has no gradient buffer");
            if (m_[k].size() != p.numel())
                throw ShapeError("optimizer: moment size mismatch at parameter " + std::to_string(k));
            for (double g : p.grad)
                if (!std::isfinite(g))
                    throw NumericError("optimizer: non-finite gradient in parameter " + std::to_string(k));

            if (kind == OptKind::sgd) {
                for (std::size_t i = 0; i < p.numel(); ++i) p.data[i] -= lr * p.grad[i];
            } else {
                const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
                const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
                auto& m = m_[k];
                auto& v = v_[k];
                for (std::size_t i = 0; i < p.numel(); ++i) {
                    const double g = p.grad[i];
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                    v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                    p.data[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
                }
            }
        }
    }

    // Serialization hooks for checkpoints.
    const std::vector<std::vector<double>>& moments1() const { return m_; }
    const std::vector<std::vector<double>>& moments2() const { return v_; }
    void restore(std::uint64_t steps, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v) {
        step_count = steps;
        m_ = std::move(m);
        v_ = std::move(v);
    }

private:
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

} // namespace unvp
