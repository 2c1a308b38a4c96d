#pragma once

// Invertible map between data space and latent space. Each step applies an
// actnorm, an invertible linear mix, and an affine coupling. All three are
// exactly invertible and expose their log-det Jacobian contribution, so the
// model gives exact densities by change of variables.

#include <cmath>
#include <memory>
#include <utility>
#include <vector>

#include "unvp/array.hpp"
#include "unvp/autograd.hpp"
#include "unvp/error.hpp"
#include "unvp/ops.hpp"
#include "unvp/priors.hpp"
#include "unvp/rng.hpp"

namespace unvp {

// Scale/translation network used inside a coupling: in-projection to the
// hidden width, three residual blocks with rectifier, zero-initialized
// out-projection so a fresh net computes exactly zero.
struct StNet {
    static constexpr int kResBlocks = 3;

    ArrayPtr w_in, b_in;
    ArrayPtr res_w1[kResBlocks], res_b1[kResBlocks], res_w2[kResBlocks], res_b2[kResBlocks];
    ArrayPtr w_out, b_out;

    StNet() = default;

    StNet(std::size_t dim, std::size_t hidden, Rng& rng) {
        w_in = make_param({dim, hidden});
        for (auto& v : w_in->data) v = normal(rng, 0.0, std::sqrt(2.0 / static_cast<double>(dim)));
        b_in = make_param({hidden});
        const double res_std = std::sqrt(2.0 / static_cast<double>(hidden));
        for (int k = 0; k < kResBlocks; ++k) {
            res_w1[k] = make_param({hidden, hidden});
            for (auto& v : res_w1[k]->data) v = normal(rng, 0.0, res_std);
            res_b1[k] = make_param({hidden});
            res_w2[k] = make_param({hidden, hidden});
            for (auto& v : res_w2[k]->data) v = normal(rng, 0.0, res_std);
            res_b2[k] = make_param({hidden});
        }
        w_out = make_param({hidden, dim}); // stays zero: identity at init
        b_out = make_param({dim});
    }

    ArrayPtr forward(Tape& t, const ArrayPtr& x) const {
        auto h = ops::add_rowvec(t, ops::matmul(t, x, w_in), b_in);
        for (int k = 0; k < kResBlocks; ++k) {
            auto inner = ops::relu(t, ops::add_rowvec(t, ops::matmul(t, h, res_w1[k]), res_b1[k]));
            h = ops::add(t, h, ops::add_rowvec(t, ops::matmul(t, inner, res_w2[k]), res_b2[k]));
        }
        return ops::add_rowvec(t, ops::matmul(t, h, w_out), b_out);
    }

    void collect(std::vector<ArrayPtr>& out) const {
        out.push_back(w_in);
        out.push_back(b_in);
        for (int k = 0; k < kResBlocks; ++k) {
            out.push_back(res_w1[k]);
            out.push_back(res_b1[k]);
            out.push_back(res_w2[k]);
            out.push_back(res_b2[k]);
        }
        out.push_back(w_out);
        out.push_back(b_out);
    }
};

struct FlowOut {
    ArrayPtr y;      // transformed batch [B, d]
    ArrayPtr logdet; // per-sample contribution [B]
};

// y = b(.)x + (1-b)(.)[x(.)exp(S(b(.)x)) + T(b(.)x)], S squashed through
// clamp*tanh(./clamp) so scales cannot overflow.
struct CouplingBlock {
    ArrayPtr mask;   // [d], entries 0/1, kept coordinates are the ones
    ArrayPtr unmask; // 1 - mask
    StNet s_net, t_net;
    double clamp = 2.0;

    CouplingBlock() = default;

    CouplingBlock(ArrayPtr m, std::size_t hidden, Rng& rng) : mask(std::move(m)) {
        const std::size_t d = mask->numel();
        unmask = make_array({d});
        for (std::size_t i = 0; i < d; ++i) {
            const double b = mask->data[i];
            if (b != 0.0 && b != 1.0) throw ShapeError("coupling: mask entries must be 0 or 1");
            unmask->data[i] = 1.0 - b;
        }
        s_net = StNet(d, hidden, rng);
        t_net = StNet(d, hidden, rng);
    }

    std::size_t dim() const { return mask->numel(); }

    FlowOut forward(Tape& t, const ArrayPtr& x) const {
        if (x->shape.size() != 2 || x->cols() != dim())
            throw ShapeError("coupling: input " + x->shape_str() + " does not match mask size " + std::to_string(dim()));
        auto xm = ops::mul_rowvec(t, x, mask);
        auto s = squash(t, s_net.forward(t, xm));
        auto shift = t_net.forward(t, xm);
        auto transformed = ops::add(t, ops::mul(t, x, ops::exp(t, s)), shift);
        auto y = ops::add(t, ops::mul_rowvec(t, x, mask), ops::mul_rowvec(t, transformed, unmask));
        auto logdet = ops::row_sum(t, ops::mul_rowvec(t, s, unmask));
        return {y, logdet};
    }

    ArrayPtr inverse(const ArrayPtr& y) const {
        if (y->shape.size() != 2 || y->cols() != dim())
            throw ShapeError("coupling: input " + y->shape_str() + " does not match mask size " + std::to_string(dim()));
        Tape t;
        t.recording = false;
        auto ym = ops::mul_rowvec(t, y, mask);
        auto s = squash(t, s_net.forward(t, ym));
        auto shift = t_net.forward(t, ym);
        const std::size_t rows = y->rows(), d = dim();
        auto x = make_array(y->shape);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < d; ++j) {
                const std::size_t k = i * d + j;
                x->data[k] = mask->data[j] != 0.0
                                 ? y->data[k]
                                 : (y->data[k] - shift->data[k]) * std::exp(-s->data[k]);
            }
        return x;
    }

    ArrayPtr squash(Tape& t, const ArrayPtr& raw) const {
        return ops::mul_scalar(t, ops::tanh(t, ops::mul_scalar(t, raw, 1.0 / clamp)), clamp);
    }

    void collect(std::vector<ArrayPtr>& out) const {
        s_net.collect(out);
        t_net.collect(out);
    }
};

// Per-channel affine with data-dependent init: the first training batch is
// mapped to zero mean, unit std. The scale is stored as its log so it can
// never reach zero.
struct ActNormBlock {
    ArrayPtr log_s, t;
    bool initialized = false;

    ActNormBlock() = default;

    explicit ActNormBlock(std::size_t dim) {
        log_s = make_param({dim});
        t = make_param({dim});
    }

    std::size_t dim() const { return log_s->numel(); }

    void init_from_batch(const ArrayPtr& batch) {
        if (batch->shape.size() != 2 || batch->cols() != dim())
            throw ShapeError("actnorm: batch " + batch->shape_str() + " does not match dimension");
        const std::size_t n = batch->rows(), d = dim();
        if (n < 2) throw ShapeError("actnorm: data init needs at least 2 samples");
        for (std::size_t j = 0; j < d; ++j) {
            double mean = 0.0;
            for (std::size_t i = 0; i < n; ++i) mean += batch->data[i * d + j];
            mean /= static_cast<double>(n);
            double var = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double dlt = batch->data[i * d + j] - mean;
                var += dlt * dlt;
            }
            var /= static_cast<double>(n);
            if (!(var > 0.0))
                throw DegenerateDataError("actnorm: zero-variance channel " + std::to_string(j));
            const double std_dev = std::sqrt(var);
            log_s->data[j] = -std::log(std_dev);
            t->data[j] = -mean / std_dev;
        }
        initialized = true;
    }

    void init_identity() {
        std::fill(log_s->data.begin(), log_s->data.end(), 0.0);
        std::fill(t->data.begin(), t->data.end(), 0.0);
        initialized = true;
    }

    double scale(std::size_t j) const { return std::exp(log_s->data[j]); }

    FlowOut forward(Tape& tp, const ArrayPtr& x) const {
        if (!initialized) throw StateError("actnorm: evaluated before initialization");
        auto s = ops::exp(tp, log_s);
        auto y = ops::add_rowvec(tp, ops::mul_rowvec(tp, x, s), t);
        auto logdet = ops::broadcast_scalar(tp, ops::sum_all(tp, log_s), x->rows());
        return {y, logdet};
    }

    ArrayPtr inverse(const ArrayPtr& y) const {
        if (!initialized) throw StateError("actnorm: evaluated before initialization");
        const std::size_t n = y->rows(), d = dim();
        auto x = make_array(y->shape);
        for (std::size_t j = 0; j < d; ++j) {
            const double inv_s = std::exp(-log_s->data[j]);
            for (std::size_t i = 0; i < n; ++i)
                x->data[i * d + j] = (y->data[i * d + j] - t->data[j]) * inv_s;
        }
        return x;
    }

    void collect(std::vector<ArrayPtr>& out) const {
        out.push_back(log_s);
        out.push_back(t);
    }
};

// Learned invertible channel mixing W = L*U, kept in triangular factors with
// a log-parameterized diagonal: invertibility is structural and the log-det
// is just the diagonal sum. Starts as the identity.
struct MixBlock {
    ArrayPtr lower;    // strictly lower entries used
    ArrayPtr upper;    // strictly upper entries used
    ArrayPtr log_diag; // [d]
    ArrayPtr mask_lower, mask_upper, eye; // constants

    MixBlock() = default;

    explicit MixBlock(std::size_t d) {
        lower = make_param({d, d});
        upper = make_param({d, d});
        log_diag = make_param({d});
        mask_lower = make_array({d, d});
        mask_upper = make_array({d, d});
        eye = make_array({d, d});
        for (std::size_t i = 0; i < d; ++i) {
            eye->data[i * d + i] = 1.0;
            for (std::size_t j = 0; j < i; ++j) mask_lower->data[i * d + j] = 1.0;
            for (std::size_t j = i + 1; j < d; ++j) mask_upper->data[i * d + j] = 1.0;
        }
    }

    std::size_t dim() const { return log_diag->numel(); }

    FlowOut forward(Tape& t, const ArrayPtr& x) const {
        auto l = ops::add(t, ops::mul(t, lower, mask_lower), eye);
        auto u = ops::add(t, ops::mul(t, upper, mask_upper), ops::mul_rowvec(t, eye, ops::exp(t, log_diag)));
        auto w = ops::matmul(t, l, u);
        auto y = ops::matmul(t, x, ops::transpose(t, w));
        auto logdet = ops::broadcast_scalar(t, ops::sum_all(t, log_diag), x->rows());
        return {y, logdet};
    }

    ArrayPtr inverse(const ArrayPtr& y) const {
        const std::size_t n = y->rows(), d = dim();
        auto x = make_array(y->shape);
        std::vector<double> u(d); // scratch for one sample
        for (std::size_t i = 0; i < n; ++i) {
            const double* yi = y->data.data() + i * d;
            // L v = y, unit diagonal
            for (std::size_t r = 0; r < d; ++r) {
                double acc = yi[r];
                for (std::size_t c = 0; c < r; ++c) acc -= lower->data[r * d + c] * u[c];
                u[r] = acc;
            }
            // U x = v, diagonal exp(log_diag)
            double* xi = x->data.data() + i * d;
            for (std::size_t r = d; r-- > 0;) {
                double acc = u[r];
                for (std::size_t c = r + 1; c < d; ++c) acc -= upper->data[r * d + c] * xi[c];
                xi[r] = acc * std::exp(-log_diag->data[r]);
            }
        }
        return x;
    }

    void collect(std::vector<ArrayPtr>& out) const {
        out.push_back(lower);
        out.push_back(upper);
        out.push_back(log_diag);
    }
};

struct FlowStep {
    ActNormBlock act;
    MixBlock mix;
    CouplingBlock coupling;
};

// Mask schedule. Flat vectors use a half/half split with alternating
// polarity. Image-shaped inputs alternate between checkerboard and top/bottom
// split, each also alternating polarity, so consecutive couplings never share
// a mask.
inline ArrayPtr make_mask(std::size_t d, std::size_t img_h, std::size_t img_w, int step_index) {
    auto m = make_array({d});
    const bool flip = ((step_index / 2) % 2) != 0;
    if (img_h == 0 || img_w == 0) {
        const std::size_t half = (d + 1) / 2;
        const bool polarity = (step_index % 2) != 0;
        for (std::size_t i = 0; i < d; ++i) {
            const bool in_first = i < half;
            m->data[i] = (in_first != polarity) ? 1.0 : 0.0;
        }
        return m;
    }
    if (img_h * img_w != d) throw ShapeError("make_mask: image dims do not cover the input dimension");
    if (step_index % 2 == 0) {
        for (std::size_t r = 0; r < img_h; ++r)
            for (std::size_t c = 0; c < img_w; ++c) {
                const bool odd = ((r + c) % 2) != 0;
                m->data[r * img_w + c] = (odd != flip) ? 1.0 : 0.0;
            }
    } else {
        for (std::size_t r = 0; r < img_h; ++r)
            for (std::size_t c = 0; c < img_w; ++c) {
                const bool top = r < img_h / 2;
                m->data[r * img_w + c] = (top != flip) ? 1.0 : 0.0;
            }
    }
    return m;
}

class FlowModel {
public:
    std::size_t dim = 0;
    std::size_t hidden = 64;
    std::size_t img_h = 0, img_w = 0; // zero for flat vector data
    std::vector<FlowStep> steps;
    // Constant per-sample log-det of the dataset preprocessing map; folded
    // into every likelihood so densities refer to raw inputs.
    double preproc_logdet = 0.0;

    FlowModel() = default;

    FlowModel(std::size_t d, std::size_t n_steps, std::size_t hidden_width, Rng& rng, std::size_t image_h = 0,
              std::size_t image_w = 0)
        : dim(d), hidden(hidden_width), img_h(image_h), img_w(image_w) {
        if (d < 2) throw ConfigError("flow: need at least 2 dimensions to split");
        steps.resize(n_steps);
        for (std::size_t i = 0; i < n_steps; ++i) {
            steps[i].act = ActNormBlock(d);
            steps[i].mix = MixBlock(d);
            steps[i].coupling = CouplingBlock(make_mask(d, img_h, img_w, static_cast<int>(i)), hidden, rng);
        }
    }

    bool initialized() const {
        for (const auto& s : steps)
            if (!s.act.initialized) return false;
        return true;
    }

    // Data-dependent init: each actnorm standardizes the batch as it arrives
    // at that step. Mix and coupling start as identities, so this amounts to
    // standardizing once at the first step.
    void initialize(const ArrayPtr& batch) {
        ArrayPtr x = batch;
        Tape t;
        t.recording = false;
        for (auto& s : steps) {
            s.act.init_from_batch(x);
            x = s.act.forward(t, x).y;
            x = s.mix.forward(t, x).y;
            x = s.coupling.forward(t, x).y;
        }
    }

    void init_identity() {
        for (auto& s : steps) s.act.init_identity();
    }

    FlowOut forward(Tape& t, const ArrayPtr& x) const {
        if (!initialized()) throw StateError("flow: forward before actnorm initialization");
        if (x->shape.size() != 2 || x->cols() != dim)
            throw ShapeError("flow: input " + x->shape_str() + " does not match dimension " + std::to_string(dim));
        auto base = make_array({1}, preproc_logdet);
        ArrayPtr logdet = ops::broadcast_scalar(t, base, x->rows());
        ArrayPtr cur = x;
        for (const auto& s : steps) {
            auto a = s.act.forward(t, cur);
            auto m = s.mix.forward(t, a.y);
            auto c = s.coupling.forward(t, m.y);
            cur = c.y;
            logdet = ops::add(t, logdet, ops::add(t, a.logdet, ops::add(t, m.logdet, c.logdet)));
        }
        return {cur, logdet};
    }

    ArrayPtr inverse(const ArrayPtr& z) const {
        if (!initialized()) throw StateError("flow: inverse before actnorm initialization");
        ArrayPtr cur = z;
        for (std::size_t i = steps.size(); i-- > 0;) {
            cur = steps[i].coupling.inverse(cur);
            cur = steps[i].mix.inverse(cur);
            cur = steps[i].act.inverse(cur);
        }
        return cur;
    }

    // log p_X(x, c) per sample: latent prior density plus total log-det.
    ArrayPtr log_likelihood_rows(Tape& t, const ClassPriorSet& priors, const ArrayPtr& x,
                                 const std::vector<int>& labels, const ArrayPtr& noise = nullptr) const {
        auto out = forward(t, x);
        auto logp = priors.log_prob_rows(t, out.y, labels, noise);
        return ops::add(t, logp, out.logdet);
    }

    // Mean negative log-likelihood of a batch, the training objective.
    ArrayPtr mean_nll(Tape& t, const ClassPriorSet& priors, const ArrayPtr& x, const std::vector<int>& labels,
                      const ArrayPtr& noise = nullptr) const {
        auto rows = log_likelihood_rows(t, priors, x, labels, noise);
        return ops::mul_scalar(t, ops::mean_all(t, rows), -1.0);
    }

    std::vector<ArrayPtr> params() const {
        std::vector<ArrayPtr> out;
        for (const auto& s : steps) {
            s.act.collect(out);
            s.mix.collect(out);
            s.coupling.collect(out);
        }
        return out;
    }
};

} // namespace unvp
