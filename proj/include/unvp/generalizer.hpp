#pragma once

// The min-max training core: distribution distance between class Gaussians,
// the regularized synthesis cost, adversarial hard-sample generation, and the
// alternating minimization/maximization schedule.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "unvp/array.hpp"
#include "unvp/autograd.hpp"
#include "unvp/classifier.hpp"
#include "unvp/config.hpp"
#include "unvp/error.hpp"
#include "unvp/flow.hpp"
#include "unvp/ops.hpp"
#include "unvp/optimizer.hpp"
#include "unvp/priors.hpp"
#include "unvp/rng.hpp"

namespace unvp {

constexpr double kVarianceFloor = 1e-6;
// preprocessed inputs live in this box; synthesized samples are clipped to it
constexpr double kInputLo = -0.5;
constexpr double kInputHi = 0.5;

// ---------------------------------------------------------------------------
// Gaussian summaries and the transformation cost between them

struct GaussianSummary {
    std::vector<double> mu;
    std::vector<double> sigma; // diagonal variances, floored at kVarianceFloor
    std::size_t count = 0;

    std::size_t dim() const { return mu.size(); }
};

// Empirical mean and diagonal population variance of latent rows.
inline GaussianSummary fit_gaussian(const ArrayPtr& z) {
    if (z->shape.size() != 2 || z->rows() == 0) throw ShapeError("fit_gaussian: need a non-empty [n, d] batch");
    const std::size_t n = z->rows(), d = z->cols();
    GaussianSummary s;
    s.mu.assign(d, 0.0);
    s.sigma.assign(d, 0.0);
    s.count = n;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) s.mu[j] += z->data[i * d + j];
    for (std::size_t j = 0; j < d; ++j) s.mu[j] /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            const double dlt = z->data[i * d + j] - s.mu[j];
            s.sigma[j] += dlt * dlt;
        }
    for (std::size_t j = 0; j < d; ++j) s.sigma[j] = std::max(s.sigma[j] / static_cast<double>(n), kVarianceFloor);
    return s;
}

// Wasserstein-2 distance between diagonal Gaussians:
// cost^2 = ||mu_a - mu_b||^2 + sum_i (sqrt(sig_a_i) - sqrt(sig_b_i))^2.
inline double bures_cost(const GaussianSummary& a, const GaussianSummary& b) {
    if (a.dim() != b.dim()) throw ShapeError("bures_cost: dimension mismatch " + std::to_string(a.dim()) + " vs " +
                                             std::to_string(b.dim()));
    double acc = 0.0;
    for (std::size_t j = 0; j < a.dim(); ++j) {
        const double dm = a.mu[j] - b.mu[j];
        const double ds = std::sqrt(a.sigma[j]) - std::sqrt(b.sigma[j]);
        acc += dm * dm + ds * ds;
    }
    return std::sqrt(acc);
}

// Source summary for one class, read off the priors (the flow is trained to
// match them). A noise row instantiates the learnable priors' shifted means;
// absent noise gives the evaluation form.
inline GaussianSummary summary_from_prior(const ClassPriorSet& priors, int c, const ArrayPtr& noise = nullptr) {
    auto [mu, var] = priors.prior_params(c, noise);
    GaussianSummary s;
    s.mu = std::move(mu);
    s.sigma = std::move(var);
    for (auto& v : s.sigma) v = std::max(v, kVarianceFloor);
    s.count = 1;
    return s;
}

// Tape-resident summary of a latent batch, differentiable through mean and
// variance.
struct SummaryNodes {
    ArrayPtr mu;    // [d]
    ArrayPtr sigma; // [d], clamped at the floor
};

inline SummaryNodes fit_gaussian_nodes(Tape& t, const ArrayPtr& z) {
    if (z->shape.size() != 2 || z->rows() == 0) throw ShapeError("fit_gaussian: need a non-empty [n, d] batch");
    auto mu = ops::col_mean(t, z);
    auto centered = ops::add_rowvec(t, z, ops::mul_scalar(t, mu, -1.0));
    auto sigma = ops::clamp_min(t, ops::col_mean(t, ops::square(t, centered)), kVarianceFloor);
    return {mu, sigma};
}

inline ArrayPtr bures_cost_sq_nodes(Tape& t, const SummaryNodes& a, const GaussianSummary& b) {
    if (a.mu->numel() != b.dim()) throw ShapeError("bures_cost: dimension mismatch");
    auto mu_b = make_array({b.dim()}, b.mu);
    auto sqrt_b = make_array({b.dim()});
    for (std::size_t j = 0; j < b.dim(); ++j) sqrt_b->data[j] = std::sqrt(b.sigma[j]);
    auto mean_term = ops::sum_all(t, ops::square(t, ops::sub(t, a.mu, mu_b)));
    auto var_term = ops::sum_all(t, ops::square(t, ops::sub(t, ops::sqrt(t, a.sigma), sqrt_b)));
    return ops::add(t, mean_term, var_term);
}

// Squared transformation cost of a same-class batch against its source
// distribution, plus the feature-consistency term:
//   cost^2 = bures^2(fit(F(x)), source) + w * mean ||M(x) - M(x_src)||^2.
// Batches smaller than 4 drop the variance statistics and use the squared
// distance between the latent mean and the source mean instead.
inline ArrayPtr regularized_cost(Tape& t, const ArrayPtr& x_batch, const FlowModel& flow, const Classifier& clf,
                                 const GaussianSummary& source, const ArrayPtr& source_features,
                                 double feature_reg_weight) {
    if (x_batch->shape.size() != 2 || x_batch->rows() == 0)
        throw ShapeError("regularized_cost: need a non-empty [n, d] batch");
    auto z = flow.forward(t, x_batch).y;
    ArrayPtr dist;
    if (x_batch->rows() >= 4) {
        dist = bures_cost_sq_nodes(t, fit_gaussian_nodes(t, z), source);
    } else {
        auto mu = ops::col_mean(t, z);
        auto mu_src = make_array({source.dim()}, source.mu);
        dist = ops::sum_all(t, ops::square(t, ops::sub(t, mu, mu_src)));
    }
    if (feature_reg_weight == 0.0) return dist;
    auto feat = clf.forward(t, x_batch).features;
    if (feat->shape != source_features->shape)
        throw ShapeError("regularized_cost: feature shapes " + feat->shape_str() + " vs " +
                         source_features->shape_str());
    auto diff = ops::sub(t, feat, source_features);
    auto feat_term = ops::mean_all(t, ops::row_sum(t, ops::square(t, diff)));
    return ops::add(t, dist, ops::mul_scalar(t, feat_term, feature_reg_weight));
}

// ---------------------------------------------------------------------------
// Hard-sample pool and synthesis

struct HardSamplePool {
    std::size_t dim = 0;
    std::vector<double> xs; // row-major [size, dim]
    std::vector<int> labels;
    std::vector<int> rounds;

    std::size_t size() const { return labels.size(); }

    void append(const double* row, std::size_t d, int label, int round) {
        if (dim == 0) dim = d;
        if (d != dim) throw ShapeError("hard-sample pool: dimension changed");
        xs.insert(xs.end(), row, row + d);
        labels.push_back(label);
        rounds.push_back(round);
    }
};

struct SynthesisReport {
    std::vector<std::vector<double>> traces; // one objective trace per class group
    std::size_t added = 0;
    std::size_t discarded = 0; // samples dropped because their group went non-finite
};

namespace detail {

// J(x) = CE(M(x), c) + NLL(F(x), c) - alpha * regularized_cost(x, ...),
// evaluated on one same-class group. Scalar on the tape.
inline ArrayPtr ascent_objective(Tape& t, const ArrayPtr& x, const std::vector<int>& labels, const FlowModel& flow,
                                 const Classifier& clf, const ClassPriorSet& priors, const GaussianSummary& source,
                                 const ArrayPtr& source_features, const RunConfig& cfg,
                                 const ArrayPtr& noise = nullptr) {
    auto ce = cross_entropy(t, clf.forward(t, x).logits, labels);
    auto nll = flow.mean_nll(t, priors, x, labels, noise);
    auto cost = regularized_cost(t, x, flow, clf, source, source_features, cfg.feature_reg_weight);
    return ops::add(t, ops::add(t, ce, nll), ops::mul_scalar(t, cost, -cfg.alpha));
}

} // namespace detail

// Gradient ascent on J for each class group of the selected batch, with all
// model parameters frozen. Each step proposes x + eta_adv * grad J; if that
// would lower the group objective (or leave it non-finite) the step is halved
// up to six times, and when no halving helps the iterate stays put. Accepted
// steps therefore never decrease J, so traces are monotone, and once the
// penalty gradient dominates, its vanishing near the optimum freezes the
// iterates instead of letting them wander along cost level sets. Final points
// are clipped to the preprocessed input box. Groups whose objective is
// non-finite at the source points are discarded with a warning. For learnable
// priors, a noise row instantiates the shifted prior the round ascends
// against; both the likelihood term and the Bures target use that same
// instantiation, so each round synthesizes around a freshly displaced prior.
inline SynthesisReport synthesize_hard_samples(const FlowModel& flow, const Classifier& clf,
                                               const ClassPriorSet& priors, const ArrayPtr& x_src,
                                               const std::vector<int>& labels, const RunConfig& cfg, int round_index,
                                               HardSamplePool& pool, const ArrayPtr& noise = nullptr) {
    if (x_src->shape.size() != 2 || x_src->rows() != labels.size())
        throw ShapeError("synthesize: batch " + x_src->shape_str() + " vs " + std::to_string(labels.size()) +
                         " labels");
    const std::size_t d = x_src->cols();
    SynthesisReport report;

    // stable class order: ascending label
    std::vector<int> classes;
    for (int c : labels)
        if (std::find(classes.begin(), classes.end(), c) == classes.end()) classes.push_back(c);
    std::sort(classes.begin(), classes.end());

    for (int c : classes) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == c) idx.push_back(i);
        const std::size_t m = idx.size();

        auto group_src = make_array({m, d});
        for (std::size_t i = 0; i < m; ++i)
            std::copy_n(x_src->data.begin() + idx[i] * d, d, group_src->data.begin() + i * d);
        const std::vector<int> group_labels(m, c);

        const GaussianSummary source = summary_from_prior(priors, c, noise);
        // frozen feature snapshot of the source points
        ArrayPtr source_features;
        {
            Tape t;
            t.recording = false;
            auto f = clf.forward(t, group_src).features;
            source_features = make_array(f->shape, f->data);
        }

        auto x = make_array(group_src->shape, group_src->data);
        x->set_requires_grad();

        auto eval_j = [&]() {
            Tape t;
            t.recording = false;
            return detail::ascent_objective(t, x, group_labels, flow, clf, priors, source, source_features, cfg,
                                            noise)
                ->data[0];
        };

        std::vector<double> trace;
        trace.reserve(static_cast<std::size_t>(cfg.t_max) + 1);
        bool ok = true;
        try {
            double j_cur = eval_j();
            if (!std::isfinite(j_cur)) throw NumericError("ascent objective non-finite at the source points");
            trace.push_back(j_cur);
            std::vector<double> dir(m * d), base(m * d);
            for (int step = 0; step < cfg.t_max && ok; ++step) {
                Tape t;
                auto j = detail::ascent_objective(t, x, group_labels, flow, clf, priors, source, source_features, cfg,
                                                  noise);
                x->zero_grad();
                t.backward(j);
                dir = x->grad;
                base = x->data;
                double eta = cfg.eta_adv;
                bool accepted = false;
                for (int attempt = 0; attempt <= 6; ++attempt) {
                    for (std::size_t k = 0; k < m * d; ++k) x->data[k] = base[k] + eta * dir[k];
                    const double j_new = eval_j();
                    if (std::isfinite(j_new) && j_new >= j_cur) {
                        j_cur = j_new;
                        accepted = true;
                        break;
                    }
                    eta *= 0.5;
                }
                if (!accepted) x->data = base;
                trace.push_back(j_cur);
            }
        } catch (const NumericError& e) {
            std::fprintf(stderr, "warning: discarding %zu hard samples of class %d: %s\n", m, c, e.what());
            report.discarded += m;
            ok = false;
        }
        if (!ok) continue;

        for (auto& v : x->data) v = std::min(std::max(v, kInputLo), kInputHi);
        for (std::size_t i = 0; i < m; ++i) pool.append(x->data.data() + i * d, d, c, round_index);
        report.added += m;
        report.traces.push_back(std::move(trace));
    }
    return report;
}

// ---------------------------------------------------------------------------
// Training state and schedule

struct EpochMetrics {
    int epoch = 0; // global row index across pre-training and minimization
    std::string phase;
    std::optional<double> ce;
    std::optional<double> nll;
    double acc_src = 0.0;
    std::optional<double> acc_unseen;
    std::size_t pool_size = 0;
};

struct TrainState {
    RunConfig cfg;
    std::size_t data_dim = 0;
    std::size_t num_classes = 0;
    std::size_t img_h = 0, img_w = 0;

    Classifier clf;
    FlowModel flow;       // untouched in pure mode
    ClassPriorSet priors; // untouched in pure mode
    Optimizer opt;
    std::vector<ArrayPtr> params;

    HardSamplePool pool;
    Rng rng; // the training stream

    int pre_epochs_done = 0;
    int min_epochs_done = 0;
    int rounds_done = 0;
    bool flow_initialized = false;

    bool uses_flow() const { return cfg.mode() != RunMode::pure; }
    int total_min_epochs() const { return (2 + cfg.k_rounds) * cfg.epochs; }
};

// Parameter registration order is fixed (classifier, flow, priors) so
// optimizer moments line up across checkpoint loads.
inline void register_params(TrainState& st) {
    st.params = st.clf.params();
    if (st.uses_flow()) {
        for (auto& p : st.flow.params()) st.params.push_back(p);
        for (auto& p : st.priors.params()) st.params.push_back(p);
    }
}

// Draw order on the training stream: classifier init, then flow init, then
// prior init; afterwards only per-epoch shuffles, per-batch noise and
// round selections consume it. Pure mode draws the classifier init and the
// shuffles, nothing else.
inline TrainState make_train_state(const RunConfig& cfg, std::size_t dim, std::size_t num_classes, std::size_t img_h,
                                   std::size_t img_w, double preproc_logdet) {
    cfg.validate();
    TrainState st;
    st.cfg = cfg;
    st.data_dim = dim;
    st.num_classes = num_classes;
    st.img_h = img_h;
    st.img_w = img_w;
    st.rng = make_rng(cfg.seed, kStreamTrain);
    st.clf = (img_h > 0) ? Classifier(img_h, img_w, num_classes, st.rng) : Classifier(dim, num_classes, st.rng);
    if (st.uses_flow()) {
        st.flow = FlowModel(dim, cfg.flow_steps, cfg.flow_hidden, st.rng, img_h, img_w);
        st.flow.preproc_logdet = preproc_logdet;
        const PriorMode pm = cfg.mode() == RunMode::unvp ? PriorMode::unvp : PriorMode::eunvp;
        st.priors = ClassPriorSet(pm, static_cast<int>(num_classes), static_cast<int>(dim), cfg.gamma, cfg.lambda,
                                  st.rng);
    }
    register_params(st);
    st.opt = Optimizer(cfg.opt_kind(), cfg.lr);
    st.opt.attach(st.params);
    st.pool.dim = dim;
    return st;
}

// Fisher-Yates permutation of 0..n-1 on the training stream. Exposed so the
// bitwise-equivalence tests can replay the exact schedule.
inline std::vector<std::size_t> shuffle_indices(Rng& rng, std::size_t n) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[uniform_below(rng, i)]);
    return idx;
}

namespace detail {

struct Snapshot {
    std::vector<std::vector<double>> params;
    std::vector<std::vector<double>> m1, m2;
    std::uint64_t opt_steps;
    Rng rng;
};

inline Snapshot take_snapshot(const TrainState& st) {
    Snapshot s;
    for (const auto& p : st.params) s.params.push_back(p->data);
    s.m1 = st.opt.moments1();
    s.m2 = st.opt.moments2();
    s.opt_steps = st.opt.step_count;
    s.rng = st.rng;
    return s;
}

inline void restore_snapshot(TrainState& st, const Snapshot& s) {
    for (std::size_t i = 0; i < st.params.size(); ++i) st.params[i]->data = s.params[i];
    st.opt.restore(s.opt_steps, s.m1, s.m2);
    st.rng = s.rng;
}

// Assembles one shuffled batch from source rows and pool rows; pool entries
// occupy the index range [n_src, n_src + pool).
inline void gather_batch(const ArrayPtr& x_src, const std::vector<int>& y_src, const HardSamplePool& pool,
                         const std::vector<std::size_t>& order, std::size_t begin, std::size_t end, ArrayPtr& xb,
                         std::vector<int>& yb) {
    const std::size_t d = x_src->cols(), n_src = x_src->rows(), b = end - begin;
    xb = make_array({b, d});
    yb.resize(b);
    for (std::size_t i = 0; i < b; ++i) {
        const std::size_t src = order[begin + i];
        if (src < n_src) {
            std::copy_n(x_src->data.begin() + src * d, d, xb->data.begin() + i * d);
            yb[i] = y_src[src];
        } else {
            const std::size_t p = src - n_src;
            std::copy_n(pool.xs.begin() + p * d, d, xb->data.begin() + i * d);
            yb[i] = pool.labels[p];
        }
    }
}

} // namespace detail

// Accuracy of the classifier over a dataset, evaluated in batches.
inline double evaluate_accuracy(const Classifier& clf, const ArrayPtr& x, const std::vector<int>& y,
                                std::size_t batch) {
    const std::size_t n = x->rows(), d = x->cols();
    if (n == 0) return 0.0;
    std::size_t hits = 0;
    Tape t;
    t.recording = false;
    for (std::size_t begin = 0; begin < n; begin += batch) {
        const std::size_t end = std::min(begin + batch, n);
        auto xb = make_array({end - begin, d});
        std::copy_n(x->data.begin() + begin * d, (end - begin) * d, xb->data.begin());
        auto logits = clf.forward(t, xb).logits;
        for (std::size_t i = 0; i < end - begin; ++i) {
            std::size_t best = 0;
            for (std::size_t j = 1; j < clf.num_classes; ++j)
                if (logits->data[i * clf.num_classes + j] > logits->data[i * clf.num_classes + best]) best = j;
            if (static_cast<int>(best) == y[begin + i]) ++hits;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(n);
}

// One pre-training epoch: maximize the flow log-likelihood (all flow and
// prior parameters; classifier gradients are zero so its moments stay zero).
inline double pretrain_epoch(TrainState& st, const ArrayPtr& x_src, const std::vector<int>& y_src) {
    const std::size_t n = x_src->rows();
    const std::size_t batch = static_cast<std::size_t>(st.cfg.batch);
    auto order = shuffle_indices(st.rng, n);
    double nll_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t begin = 0; begin < n; begin += batch) {
        const std::size_t end = std::min(begin + batch, n);
        ArrayPtr xb;
        std::vector<int> yb;
        detail::gather_batch(x_src, y_src, HardSamplePool{}, order, begin, end, xb, yb);
        if (!st.flow_initialized) {
            st.flow.initialize(xb);
            st.flow_initialized = true;
        }
        ArrayPtr noise = st.priors.mode == PriorMode::eunvp ? st.priors.sample_noise(st.rng) : nullptr;
        Tape t;
        auto loss = st.flow.mean_nll(t, st.priors, xb, yb, noise);
        zero_grads(st.params);
        t.backward(loss);
        st.opt.step(st.params);
        nll_sum += loss->data[0] * static_cast<double>(end - begin);
        seen += end - begin;
    }
    return nll_sum / static_cast<double>(seen);
}

struct MinimizeResult {
    double ce = 0.0;
    double nll = 0.0; // only meaningful when the flow branch is active
};

// One minimization epoch over source data plus the replayed hard-sample
// pool. On numeric failure the pre-epoch state (parameters, moments, RNG) is
// restored before the error propagates.
inline MinimizeResult minimization_epoch(TrainState& st, const ArrayPtr& x_src, const std::vector<int>& y_src) {
    const auto snapshot = detail::take_snapshot(st);
    try {
        const std::size_t n = x_src->rows() + st.pool.size();
        const std::size_t batch = static_cast<std::size_t>(st.cfg.batch);
        auto order = shuffle_indices(st.rng, n);
        MinimizeResult res;
        std::size_t seen = 0;
        for (std::size_t begin = 0; begin < n; begin += batch) {
            const std::size_t end = std::min(begin + batch, n);
            ArrayPtr xb;
            std::vector<int> yb;
            detail::gather_batch(x_src, y_src, st.pool, order, begin, end, xb, yb);
            Tape t;
            auto ce = cross_entropy(t, st.clf.forward(t, xb).logits, yb);
            ArrayPtr loss = ce;
            ArrayPtr nll;
            if (st.uses_flow()) {
                if (!st.flow_initialized) {
                    st.flow.initialize(xb);
                    st.flow_initialized = true;
                }
                ArrayPtr noise = st.priors.mode == PriorMode::eunvp ? st.priors.sample_noise(st.rng) : nullptr;
                nll = st.flow.mean_nll(t, st.priors, xb, yb, noise);
                loss = ops::add(t, ce, nll);
            }
            zero_grads(st.params);
            t.backward(loss);
            st.opt.step(st.params);
            res.ce += ce->data[0] * static_cast<double>(end - begin);
            if (nll) res.nll += nll->data[0] * static_cast<double>(end - begin);
            seen += end - begin;
        }
        res.ce /= static_cast<double>(seen);
        res.nll /= static_cast<double>(seen);
        return res;
    } catch (const NumericError&) {
        detail::restore_snapshot(st, snapshot);
        throw;
    }
}

// Random without-replacement selection of round(beta * n) source samples.
inline std::vector<std::size_t> select_for_synthesis(Rng& rng, std::size_t n, double beta) {
    std::size_t want = static_cast<std::size_t>(std::llround(beta * static_cast<double>(n)));
    want = std::min(want, n);
    auto order = shuffle_indices(rng, n);
    order.resize(want);
    std::sort(order.begin(), order.end()); // order-stable synthesis
    return order;
}

// Runs one maximization phase: select, instantiate the round's prior noise,
// synthesize per class, grow the pool. The noise draw (learnable priors only)
// comes after the selection draw on the training stream.
inline SynthesisReport maximization_phase(TrainState& st, const ArrayPtr& x_src, const std::vector<int>& y_src) {
    const std::size_t d = x_src->cols();
    auto picked = select_for_synthesis(st.rng, x_src->rows(), st.cfg.beta);
    SynthesisReport report;
    if (picked.empty()) {
        ++st.rounds_done;
        return report;
    }
    auto xs = make_array({picked.size(), d});
    std::vector<int> ys(picked.size());
    for (std::size_t i = 0; i < picked.size(); ++i) {
        std::copy_n(x_src->data.begin() + picked[i] * d, d, xs->data.begin() + i * d);
        ys[i] = y_src[picked[i]];
    }
    ArrayPtr noise = st.priors.mode == PriorMode::eunvp ? st.priors.sample_noise(st.rng) : nullptr;
    report = synthesize_hard_samples(st.flow, st.clf, st.priors, xs, ys, st.cfg, st.rounds_done, st.pool, noise);
    ++st.rounds_done;
    return report;
}

// Full schedule: pre-train the flow, then (2 + K) * E_min minimization
// epochs with K maximization phases fired at epochs 2*E_min + k*E_min.
// Pure mode runs the same epoch budget with the classifier loss only.
inline void train(TrainState& st, const ArrayPtr& x_src, const std::vector<int>& y_src, const ArrayPtr& x_unseen,
                  const std::vector<int>& y_unseen,
                  const std::function<void(const EpochMetrics&)>& on_epoch = nullptr,
                  const std::function<void(const TrainState&)>& on_checkpoint = nullptr) {
    const RunConfig& cfg = st.cfg;
    const std::size_t batch = static_cast<std::size_t>(cfg.batch);
    int row = st.pre_epochs_done + st.min_epochs_done;

    auto emit = [&](const std::string& phase, std::optional<double> ce, std::optional<double> nll) {
        EpochMetrics m;
        m.epoch = row++;
        m.phase = phase;
        m.ce = ce;
        m.nll = nll;
        m.acc_src = evaluate_accuracy(st.clf, x_src, y_src, batch);
        if (x_unseen && x_unseen->rows() > 0) m.acc_unseen = evaluate_accuracy(st.clf, x_unseen, y_unseen, batch);
        m.pool_size = st.pool.size();
        if (on_epoch) on_epoch(m);
        if (on_checkpoint) on_checkpoint(st);
    };

    if (st.uses_flow()) {
        while (st.pre_epochs_done < cfg.pre_epochs) {
            const double nll = pretrain_epoch(st, x_src, y_src);
            ++st.pre_epochs_done;
            emit("pretrain", std::nullopt, nll);
        }
    } else {
        st.pre_epochs_done = cfg.pre_epochs; // no flow to pre-train
    }

    const int total = st.total_min_epochs();
    while (st.min_epochs_done < total) {
        if (st.uses_flow() && st.rounds_done < cfg.k_rounds &&
            st.min_epochs_done == (2 + st.rounds_done) * cfg.epochs) {
            maximization_phase(st, x_src, y_src);
        }
        const auto res = minimization_epoch(st, x_src, y_src);
        ++st.min_epochs_done;
        emit("min", res.ce, st.uses_flow() ? std::optional<double>(res.nll) : std::nullopt);
    }
}

} // namespace unvp
