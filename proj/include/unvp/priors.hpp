#pragma once

// Class-conditional diagonal Gaussian priors over the latent space. The fixed
// form places class c at mean c * (1,...,1) with unit covariance. The extended
// form makes means and log-variances learnable per class and shifts all means
// by a small mapped noise signal during training; at evaluation the noise is
// zero so inference is deterministic.

#include <cmath>
#include <string>
#include <vector>

#include "unvp/array.hpp"
#include "unvp/autograd.hpp"
#include "unvp/error.hpp"
#include "unvp/ops.hpp"
#include "unvp/rng.hpp"

namespace unvp {

enum class PriorMode { unvp, eunvp };

inline const char* to_string(PriorMode m) { return m == PriorMode::unvp ? "unvp" : "eunvp"; }

inline double log_2pi() { return std::log(2.0 * 3.14159265358979323846); }

// Diagonal Gaussian log-density. Plain doubles, no tape.
inline double gaussian_log_prob(const std::vector<double>& z, const std::vector<double>& mu,
                                const std::vector<double>& var) {
    if (z.size() != mu.size() || z.size() != var.size())
        throw ShapeError("gaussian_log_prob: dimension mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        if (!(var[i] > 0.0)) throw NumericError("gaussian_log_prob: non-positive variance at coordinate " + std::to_string(i));
        const double d = z[i] - mu[i];
        acc += d * d / var[i] + std::log(var[i]) + log_2pi();
    }
    return -0.5 * acc;
}

class ClassPriorSet {
public:
    PriorMode mode = PriorMode::unvp;
    int num_classes = 0;
    int dim = 0;
    double gamma = 1.0;
    double lambda = 0.1;
    int noise_dim = 0;
    int noise_hidden = 32;

    // eunvp learnables; empty in unvp mode
    ArrayPtr mean_table;   // [C, d], row c starts at c * (1,...,1)
    ArrayPtr logvar_table; // [C, d], zeros at init so Sigma_c = I
    ArrayPtr noise_w1, noise_b1, noise_w2, noise_b2; // one-hidden-layer noise map, zero-init output

    ClassPriorSet() = default;

    ClassPriorSet(PriorMode m, int C, int d, double g, double l, Rng& rng) : mode(m), num_classes(C), dim(d), gamma(g), lambda(l) {
        if (C < 1 || d < 1) throw ConfigError("priors: need at least one class and one dimension");
        if (g < 0.0 || l < 0.0) throw ConfigError("priors: gamma and lambda must be non-negative");
        if (mode == PriorMode::eunvp) {
            noise_dim = std::min(d, 32);
            mean_table = make_param({static_cast<std::size_t>(C), static_cast<std::size_t>(d)});
            for (int c = 0; c < C; ++c)
                for (int j = 0; j < d; ++j) mean_table->data[c * d + j] = static_cast<double>(c);
            logvar_table = make_param({static_cast<std::size_t>(C), static_cast<std::size_t>(d)});
            noise_w1 = make_param({static_cast<std::size_t>(noise_dim), static_cast<std::size_t>(noise_hidden)});
            for (auto& v : noise_w1->data) v = normal(rng, 0.0, std::sqrt(2.0 / noise_dim));
            noise_b1 = make_param({static_cast<std::size_t>(noise_hidden)});
            noise_w2 = make_param({static_cast<std::size_t>(noise_hidden), static_cast<std::size_t>(d)});
            noise_b2 = make_param({static_cast<std::size_t>(d)});
            // zero-init output layer: the noise shift starts at exactly 0
        }
    }

    std::vector<ArrayPtr> params() const {
        if (mode == PriorMode::unvp) return {};
        return {mean_table, logvar_table, noise_w1, noise_b1, noise_w2, noise_b2};
    }

    void check_label(int c) const {
        if (c < 0 || c >= num_classes)
            throw ShapeError("priors: class " + std::to_string(c) + " out of range 0.." + std::to_string(num_classes - 1));
    }

    // n ~ N(0, I) over the noise dimensions, one draw per training batch.
    ArrayPtr sample_noise(Rng& rng) const {
        if (mode != PriorMode::eunvp) throw StateError("sample_noise: only meaningful for learnable priors");
        auto n = make_array({1, static_cast<std::size_t>(noise_dim)});
        for (auto& v : n->data) v = normal(rng);
        return n;
    }

    // (mu_c, Sigma_c) as plain vectors; noise defaults to zero (evaluation form).
    std::pair<std::vector<double>, std::vector<double>> prior_params(int c, const ArrayPtr& noise = nullptr) const {
        check_label(c);
        std::vector<double> mu(dim), var(dim, 1.0);
        if (mode == PriorMode::unvp) {
            for (int j = 0; j < dim; ++j) mu[j] = static_cast<double>(c);
            return {mu, var};
        }
        Tape t;
        t.recording = false;
        auto shift = noise_shift(t, noise);
        for (int j = 0; j < dim; ++j) {
            mu[j] = gamma * mean_table->data[c * dim + j] + lambda * shift->data[j];
            var[j] = std::exp(logvar_table->data[c * dim + j]);
        }
        return {mu, var};
    }

    // H_m(n) as a [1, d] row; n = 0 when absent.
    ArrayPtr noise_shift(Tape& t, const ArrayPtr& noise) const {
        ArrayPtr n = noise;
        if (!n) n = make_array({1, static_cast<std::size_t>(noise_dim)});
        if (n->shape.size() != 2 || n->cols() != static_cast<std::size_t>(noise_dim))
            throw ShapeError("priors: noise must be [1, " + std::to_string(noise_dim) + "]");
        auto h = ops::relu(t, ops::add_rowvec(t, ops::matmul(t, n, noise_w1), noise_b1));
        return ops::add_rowvec(t, ops::matmul(t, h, noise_w2), noise_b2);
    }

    // Per-sample prior means as tape values: mu rows for a label vector.
    ArrayPtr mean_rows(Tape& t, const std::vector<int>& labels, const ArrayPtr& noise = nullptr) const {
        for (int c : labels) check_label(c);
        if (mode == PriorMode::unvp) {
            auto mu = make_array({labels.size(), static_cast<std::size_t>(dim)});
            for (std::size_t i = 0; i < labels.size(); ++i)
                for (int j = 0; j < dim; ++j) mu->data[i * dim + j] = static_cast<double>(labels[i]);
            return mu;
        }
        auto base = ops::mul_scalar(t, ops::gather_rows(t, mean_table, labels), gamma);
        // one shift row for the whole batch; broadcasting keeps gradients
        // flowing into the noise map
        auto shift = ops::mul_scalar(t, noise_shift(t, noise), lambda); // [1, d]
        return ops::add_rowvec(t, base, shift);
    }

    // Per-sample prior log-variances as tape values.
    ArrayPtr logvar_rows(Tape& t, const std::vector<int>& labels) const {
        for (int c : labels) check_label(c);
        if (mode == PriorMode::unvp) return make_array({labels.size(), static_cast<std::size_t>(dim)});
        return ops::gather_rows(t, logvar_table, labels);
    }

    // log p_Z(z, c) per sample: [B] column. Differentiable in z and, for the
    // learnable mode, in the prior parameters.
    ArrayPtr log_prob_rows(Tape& t, const ArrayPtr& z, const std::vector<int>& labels,
                           const ArrayPtr& noise = nullptr) const {
        if (z->shape.size() != 2 || z->cols() != static_cast<std::size_t>(dim))
            throw ShapeError("priors: latents " + z->shape_str() + " do not match dimension " + std::to_string(dim));
        if (z->rows() != labels.size()) throw ShapeError("priors: batch and label counts differ");
        auto mu = mean_rows(t, labels, noise);
        auto logvar = logvar_rows(t, labels);
        auto diff = ops::sub(t, z, mu);
        auto quad = ops::mul(t, ops::square(t, diff), ops::exp(t, ops::mul_scalar(t, logvar, -1.0)));
        auto per_coord = ops::add(t, quad, ops::add_scalar(t, logvar, log_2pi()));
        return ops::mul_scalar(t, ops::row_sum(t, per_coord), -0.5);
    }
};

} // namespace unvp
