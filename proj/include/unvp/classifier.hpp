#pragma once

// Discriminative model with an exposed penultimate feature map. Vector data
// gets a two-hidden-layer perceptron; image data gets a small two-convolution
// stack. The final layer is zero-initialized, so a fresh model predicts the
// uniform distribution.

#include <cmath>
#include <vector>

#include "unvp/array.hpp"
#include "unvp/autograd.hpp"
#include "unvp/error.hpp"
#include "unvp/ops.hpp"
#include "unvp/rng.hpp"

namespace unvp {

struct ClassifierOut {
    ArrayPtr logits;   // [B, C]
    ArrayPtr features; // [B, d_f], penultimate activations
};

class Classifier {
public:
    enum class Kind { mlp, conv };

    Kind kind = Kind::mlp;
    std::size_t input_dim = 0;
    std::size_t num_classes = 0;
    std::size_t feature_dim = 128;
    std::size_t img_h = 0, img_w = 0;

    // perceptron: input -> 128 -> 128 -> C
    ArrayPtr w1, b1, w2, b2, w3, b3;
    // conv stack: two strided 3x3 convolutions, then dense -> 128 -> C
    ArrayPtr conv1_w, conv1_b, conv2_w, conv2_b;
    ops::ConvGeom geo1{}, geo2{};

    Classifier() = default;

    // Vector-input model.
    Classifier(std::size_t dim, std::size_t classes, Rng& rng) : kind(Kind::mlp), input_dim(dim), num_classes(classes) {
        if (dim == 0 || classes < 2) throw ConfigError("classifier: need dim >= 1 and >= 2 classes");
        const std::size_t h = feature_dim;
        w1 = he_init({dim, h}, dim, rng);
        b1 = make_param({h});
        w2 = he_init({h, h}, h, rng);
        b2 = make_param({h});
        w3 = make_param({h, classes}); // zero: uniform predictions at init
        b3 = make_param({classes});
    }

    // Image-input model over single-channel h x w inputs.
    Classifier(std::size_t height, std::size_t width, std::size_t classes, Rng& rng)
        : kind(Kind::conv), input_dim(height * width), num_classes(classes), img_h(height), img_w(width) {
        if (height < 4 || width < 4) throw ConfigError("classifier: image inputs must be at least 4x4");
        if (classes < 2) throw ConfigError("classifier: need >= 2 classes");
        geo1 = ops::ConvGeom{1, height, width, 8, 3, 3, 2, 1};
        geo2 = ops::ConvGeom{8, geo1.out_h(), geo1.out_w(), 16, 3, 3, 2, 1};
        conv1_w = he_init({8, geo1.patch()}, geo1.patch(), rng);
        conv1_b = make_param({8});
        conv2_w = he_init({16, geo2.patch()}, geo2.patch(), rng);
        conv2_b = make_param({16});
        const std::size_t flat = 16 * geo2.out_h() * geo2.out_w();
        w2 = he_init({flat, feature_dim}, flat, rng);
        b2 = make_param({feature_dim});
        w3 = make_param({feature_dim, classes});
        b3 = make_param({classes});
    }

    ClassifierOut forward(Tape& t, const ArrayPtr& x) const {
        if (x->shape.size() != 2 || x->cols() != input_dim)
            throw ShapeError("classifier: input " + x->shape_str() + " does not match dimension " +
                             std::to_string(input_dim));
        ArrayPtr feat;
        if (kind == Kind::mlp) {
            auto h1 = ops::relu(t, ops::add_rowvec(t, ops::matmul(t, x, w1), b1));
            feat = ops::relu(t, ops::add_rowvec(t, ops::matmul(t, h1, w2), b2));
        } else {
            auto c1 = ops::relu(t, ops::conv2d(t, x, conv1_w, conv1_b, geo1));
            auto c2 = ops::relu(t, ops::conv2d(t, c1, conv2_w, conv2_b, geo2));
            feat = ops::relu(t, ops::add_rowvec(t, ops::matmul(t, c2, w2), b2));
        }
        auto logits = ops::add_rowvec(t, ops::matmul(t, feat, w3), b3);
        return {logits, feat};
    }

    std::vector<ArrayPtr> params() const {
        if (kind == Kind::mlp) return {w1, b1, w2, b2, w3, b3};
        return {conv1_w, conv1_b, conv2_w, conv2_b, w2, b2, w3, b3};
    }

private:
    static ArrayPtr he_init(const std::vector<std::size_t>& shape, std::size_t fan_in, Rng& rng) {
        auto p = make_param(shape);
        const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
        for (auto& v : p->data) v = normal(rng, 0.0, std_dev);
        return p;
    }
};

// Mean cross-entropy of a batch of logits against integer labels.
inline ArrayPtr cross_entropy(Tape& t, const ArrayPtr& logits, const std::vector<int>& labels) {
    auto logp = ops::log_softmax(t, logits);
    auto picked = ops::row_gather(t, logp, labels);
    return ops::mul_scalar(t, ops::mean_all(t, picked), -1.0);
}

inline double accuracy(const ArrayPtr& logits, const std::vector<int>& labels) {
    if (logits->shape.size() != 2 || logits->rows() != labels.size())
        throw ShapeError("accuracy: logits " + logits->shape_str() + " vs " + std::to_string(labels.size()) +
                         " labels");
    const std::size_t n = logits->rows(), c = logits->cols();
    if (n == 0) return 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < c; ++j)
            if (logits->data[i * c + j] > logits->data[i * c + best]) best = j;
        if (static_cast<int>(best) == labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(n);
}

} // namespace unvp
