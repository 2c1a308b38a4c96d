#pragma once

// Differentiable primitives. Each op validates shapes, computes the forward
// value, and registers a backward rule on the tape. Matrix products are the
// only place a BLAS-grade kernel matters at this scale; those go through
// Eigen maps over the same row-major buffers.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "unvp/array.hpp"
#include "unvp/autograd.hpp"
#include "unvp/error.hpp"

namespace unvp::ops {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

inline ECMap mat_view(const Array& a) {
    return ECMap(a.data.data(), static_cast<Eigen::Index>(a.rows()), static_cast<Eigen::Index>(a.cols()));
}

inline void check_same_shape(const char* op, const Array& a, const Array& b) {
    if (a.shape != b.shape)
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

// ---- elementwise binary ----

inline ArrayPtr add(Tape& t, const ArrayPtr& a, const ArrayPtr& b) {
    check_same_shape("add", *a, *b);
    auto out = make_array(a->shape);
    for (std::size_t i = 0; i < out->numel(); ++i) out->data[i] = a->data[i] + b->data[i];
    return t.record("add", {a, b}, out, [a, b](const std::vector<double>& g, const Tape::Accum& adj) {
        if (a->requires_grad) {
            auto& ga = adj(a);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (b->requires_grad) {
            auto& gb = adj(b);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        }
    });
}

inline ArrayPtr sub(Tape& t, const ArrayPtr& a, const ArrayPtr& b) {
    check_same_shape("sub", *a, *b);
    auto out = make_array(a->shape);
    for (std::size_t i = 0; i < out->numel(); ++i) out->data[i] = a->data[i] - b->data[i];
    return t.record("sub", {a, b}, out, [a, b](const std::vector<double>& g, const Tape::Accum& adj) {
        if (a->requires_grad) {
            auto& ga = adj(a);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (b->requires_grad) {
            auto& gb = adj(b);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
    });
}

inline ArrayPtr mul(Tape& t, const ArrayPtr& a, const ArrayPtr& b) {
    check_same_shape("mul", *a, *b);
    auto out = make_array(a->shape);
    for (std::size_t i = 0; i < out->numel(); ++i) out->data[i] = a->data[i] * b->data[i];
    return t.record("mul", {a, b}, out, [a, b](const std::vector<double>& g, const Tape::Accum& adj) {
        if (a->requires_grad) {
            auto& ga = adj(a);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += b->data[i] * g[i];
        }
        if (b->requires_grad) {
            auto& gb = adj(b);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += a->data[i] * g[i];
        }
    });
}

// ---- scalar variants ----

inline ArrayPtr add_scalar(Tape& t, const ArrayPtr& a, double c) {
    auto out = make_array(a->shape);
    for (std::size_t i = 0; i < out->numel(); ++i) out->data[i] = a->data[i] + c;
    return t.record("add_scalar", {a}, out, [a](const std::vector<double>& g, const Tape::Accum& adj) {
        auto& ga = adj(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

inline ArrayPtr mul_scalar(Tape& t, const ArrayPtr& a, double c) {
    auto out = make_array(a->shape);
    for (std::size_t i = 0; i < out->numel(); ++i) out->data[i] = a->data[i] * c;
    return t.record("mul_scalar", {a}, out, [a, c](const std::vector<double>& g, const Tape::Accum& adj) {
        auto& ga = adj(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
    });
}

// ---- elementwise unary ----

inline ArrayPtr exp(Tape& t, const ArrayPtr& a) {
    auto out = make_array(a->shape);
    for (std::size_t i = 0; i < out->numel(); ++i) out->data[i] = std::exp(a->data[i]);
    return t.record("exp", {a}, out, [a, out](const std::vector<double>& g, const Tape::Accum& adj) {
        auto& ga = adj(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += out->data[i] * g[i];
    });
}

inline ArrayPtr log(Tape& t, const ArrayPtr& a) {
    auto out = make_array(a->shape);
    for (std::size_t i = 0; i < out->numel(); ++i) out->data[i] = std::log(a->data[i]);
    return t.record("log", {a}, out, [a](const std::vector<double>& g, const Tape::Accum& adj) {
        auto& ga = adj(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / a->data[i];
    });
}

inline ArrayPtr tanh(Tape& t, const ArrayPtr& a) {
    auto out = make_array(a->shape);
    for (std::size_t i = 0; i < out->numel(); ++i) out->data[i] = std::tanh(a->data[i]);
    return t.record("tanh", {a}, out, [a, out](const std::vector<double>& g, const Tape::Accum& adj) {
        auto& ga = adj(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += (1.0 - out->data[i] * out->data[i]) * g[i];
    });
}

// Rectifier; the subgradient at exactly zero is taken as zero.
inline ArrayPtr relu(Tape& t, const ArrayPtr& a) {
    auto out = make_array(a->shape);
    for (std::size_t i = 0; i < out->numel(); ++i) out->data[i] = a->data[i] > 0.0 ? a->data[i] : 0.0;
    return t.record("relu", {a}, out, [a](const std::vector<double>& g, const Tape::Accum& adj) {
        auto& ga = adj(a);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (a->data[i] > 0.0) ga[i] += g[i];
    });
}

inline ArrayPtr square(Tape& t, const ArrayPtr& a) {
    auto out = make_array(a->shape);
    for (std::size_t i = 0; i < out->numel(); ++i) out->data[i] = a->data[i] * a->data[i];
    return t.record("square", {a}, out, [a](const std::vector<double>& g, const Tape::Accum& adj) {
        auto& ga = adj(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += 2.0 * a->data[i] * g[i];
    });
}

// Callers keep inputs strictly positive (variances are floored first); a zero
// input would blow up the backward pass and gets reported as such.
inline ArrayPtr sqrt(Tape& t, const ArrayPtr& a) {
    auto out = make_array(a->shape);
    for (std::size_t i = 0; i < out->numel(); ++i) out->data[i] = std::sqrt(a->data[i]);
    return t.record("sqrt", {a}, out, [a, out](const std::vector<double>& g, const Tape::Accum& adj) {
        auto& ga = adj(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += 0.5 / out->data[i] * g[i];
    });
}

inline ArrayPtr clamp_min(Tape& t, const ArrayPtr& a, double floor) {
    auto out = make_array(a->shape);
    for (std::size_t i = 0; i < out->numel(); ++i) out->data[i] = std::max(a->data[i], floor);
    return t.record("clamp_min", {a}, out, [a, floor](const std::vector<double>& g, const Tape::Accum& adj) {
        auto& ga = adj(a);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (a->data[i] > floor) ga[i] += g[i];
    });
}

// ---- matrix ----

inline ArrayPtr matmul(Tape& t, const ArrayPtr& a, const ArrayPtr& b) {
    if (a->shape.size() != 2 || b->shape.size() != 2 || a->cols() != b->rows())
        throw ShapeError("matmul: incompatible shapes " + a->shape_str() + " x " + b->shape_str());
    auto out = make_array({a->rows(), b->cols()});
    EMap(out->data.data(), a->rows(), b->cols()).noalias() = mat_view(*a) * mat_view(*b);
    return t.record("matmul", {a, b}, out, [a, b](const std::vector<double>& g, const Tape::Accum& adj) {
        ECMap gm(g.data(), static_cast<Eigen::Index>(a->rows()), static_cast<Eigen::Index>(b->cols()));
        if (a->requires_grad) {
            auto& ga = adj(a);
            EMap(ga.data(), a->rows(), a->cols()).noalias() += gm * mat_view(*b).transpose();
        }
        if (b->requires_grad) {
            auto& gb = adj(b);
            EMap(gb.data(), b->rows(), b->cols()).noalias() += mat_view(*a).transpose() * gm;
        }
    });
}

inline ArrayPtr transpose(Tape& t, const ArrayPtr& a) {
    auto out = make_array({a->cols(), a->rows()});
    EMap(out->data.data(), a->cols(), a->rows()) = mat_view(*a).transpose();
    return t.record("transpose", {a}, out, [a](const std::vector<double>& g, const Tape::Accum& adj) {
        auto& ga = adj(a);
        ECMap gm(g.data(), static_cast<Eigen::Index>(a->cols()), static_cast<Eigen::Index>(a->rows()));
        EMap(ga.data(), a->rows(), a->cols()) += gm.transpose();
    });
}

// ---- row-vector broadcasts over 2-d arrays ----

inline ArrayPtr add_rowvec(Tape& t, const ArrayPtr& a, const ArrayPtr& v) {
    if (a->shape.size() != 2 || v->numel() != a->cols())
        throw ShapeError("add_rowvec: " + a->shape_str() + " vs " + v->shape_str());
    auto out = make_array(a->shape);
    const std::size_t r = a->rows(), c = a->cols();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out->data[i * c + j] = a->data[i * c + j] + v->data[j];
    return t.record("add_rowvec", {a, v}, out, [a, v](const std::vector<double>& g, const Tape::Accum& adj) {
        const std::size_t r = a->rows(), c = a->cols();
        if (a->requires_grad) {
            auto& ga = adj(a);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (v->requires_grad) {
            auto& gv = adj(v);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) gv[j] += g[i * c + j];
        }
    });
}

inline ArrayPtr mul_rowvec(Tape& t, const ArrayPtr& a, const ArrayPtr& v) {
    if (a->shape.size() != 2 || v->numel() != a->cols())
        throw ShapeError("mul_rowvec: " + a->shape_str() + " vs " + v->shape_str());
    auto out = make_array(a->shape);
    const std::size_t r = a->rows(), c = a->cols();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out->data[i * c + j] = a->data[i * c + j] * v->data[j];
    return t.record("mul_rowvec", {a, v}, out, [a, v](const std::vector<double>& g, const Tape::Accum& adj) {
        const std::size_t r = a->rows(), c = a->cols();
        if (a->requires_grad) {
            auto& ga = adj(a);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += v->data[j] * g[i * c + j];
        }
        if (v->requires_grad) {
            auto& gv = adj(v);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) gv[j] += a->data[i * c + j] * g[i * c + j];
        }
    });
}

// Scalar [1] replicated to a column of length n.
inline ArrayPtr broadcast_scalar(Tape& t, const ArrayPtr& s, std::size_t n) {
    if (s->numel() != 1) throw ShapeError("broadcast_scalar: source must be scalar");
    auto out = make_array({n}, s->data[0]);
    return t.record("broadcast_scalar", {s}, out, [s](const std::vector<double>& g, const Tape::Accum& adj) {
        double total = 0.0;
        for (double v : g) total += v;
        adj(s)[0] += total;
    });
}

// ---- reductions ----

inline ArrayPtr sum_all(Tape& t, const ArrayPtr& a) {
    auto out = make_array({1});
    double s = 0.0;
    for (double v : a->data) s += v;
    out->data[0] = s;
    return t.record("sum_all", {a}, out, [a](const std::vector<double>& g, const Tape::Accum& adj) {
        auto& ga = adj(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
    });
}

inline ArrayPtr mean_all(Tape& t, const ArrayPtr& a) {
    auto out = make_array({1});
    double s = 0.0;
    for (double v : a->data) s += v;
    const double inv = 1.0 / static_cast<double>(a->numel());
    out->data[0] = s * inv;
    return t.record("mean_all", {a}, out, [a, inv](const std::vector<double>& g, const Tape::Accum& adj) {
        auto& ga = adj(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += inv * g[0];
    });
}

// [B,n] -> [B], sum across each row.
inline ArrayPtr row_sum(Tape& t, const ArrayPtr& a) {
    const std::size_t r = a->rows(), c = a->cols();
    auto out = make_array({r});
    for (std::size_t i = 0; i < r; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += a->data[i * c + j];
        out->data[i] = s;
    }
    return t.record("row_sum", {a}, out, [a](const std::vector<double>& g, const Tape::Accum& adj) {
        const std::size_t r = a->rows(), c = a->cols();
        auto& ga = adj(a);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[i];
    });
}

// [B,n] -> [n], average down each column.
inline ArrayPtr col_mean(Tape& t, const ArrayPtr& a) {
    const std::size_t r = a->rows(), c = a->cols();
    if (r == 0) throw ShapeError("col_mean: empty batch");
    auto out = make_array({c});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out->data[j] += a->data[i * c + j];
    const double inv = 1.0 / static_cast<double>(r);
    for (std::size_t j = 0; j < c; ++j) out->data[j] *= inv;
    return t.record("col_mean", {a}, out, [a, inv](const std::vector<double>& g, const Tape::Accum& adj) {
        const std::size_t r = a->rows(), c = a->cols();
        auto& ga = adj(a);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += inv * g[j];
    });
}

// ---- indexed selection ----

// table[C,d], idx[B] -> [B,d]; backward scatter-adds rows.
inline ArrayPtr gather_rows(Tape& t, const ArrayPtr& table, const std::vector<int>& idx) {
    const std::size_t c = table->rows(), d = table->cols();
    for (int i : idx)
        if (i < 0 || static_cast<std::size_t>(i) >= c)
            throw ShapeError("gather_rows: index " + std::to_string(i) + " out of range 0.." + std::to_string(c - 1));
    auto out = make_array({idx.size(), d});
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy_n(table->data.begin() + idx[i] * d, d, out->data.begin() + i * d);
    return t.record("gather_rows", {table}, out, [table, idx](const std::vector<double>& g, const Tape::Accum& adj) {
        const std::size_t d = table->cols();
        auto& gt = adj(table);
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t j = 0; j < d; ++j) gt[idx[i] * d + j] += g[i * d + j];
    });
}

// m[B,C], idx[B] -> [B], one element per row.
inline ArrayPtr row_gather(Tape& t, const ArrayPtr& m, const std::vector<int>& idx) {
    const std::size_t r = m->rows(), c = m->cols();
    if (idx.size() != r) throw ShapeError("row_gather: index count != rows");
    for (int i : idx)
        if (i < 0 || static_cast<std::size_t>(i) >= c)
            throw ShapeError("row_gather: index " + std::to_string(i) + " out of range 0.." + std::to_string(c - 1));
    auto out = make_array({r});
    for (std::size_t i = 0; i < r; ++i) out->data[i] = m->data[i * c + idx[i]];
    return t.record("row_gather", {m}, out, [m, idx](const std::vector<double>& g, const Tape::Accum& adj) {
        const std::size_t c = m->cols();
        auto& gm = adj(m);
        for (std::size_t i = 0; i < idx.size(); ++i) gm[i * c + idx[i]] += g[i];
    });
}

// ---- softmax family ----

inline ArrayPtr log_softmax(Tape& t, const ArrayPtr& a) {
    const std::size_t r = a->rows(), c = a->cols();
    auto out = make_array(a->shape);
    for (std::size_t i = 0; i < r; ++i) {
        double mx = a->data[i * c];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, a->data[i * c + j]);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += std::exp(a->data[i * c + j] - mx);
        const double lse = mx + std::log(z);
        for (std::size_t j = 0; j < c; ++j) out->data[i * c + j] = a->data[i * c + j] - lse;
    }
    return t.record("log_softmax", {a}, out, [a, out](const std::vector<double>& g, const Tape::Accum& adj) {
        const std::size_t r = a->rows(), c = a->cols();
        auto& ga = adj(a);
        for (std::size_t i = 0; i < r; ++i) {
            double gsum = 0.0;
            for (std::size_t j = 0; j < c; ++j) gsum += g[i * c + j];
            for (std::size_t j = 0; j < c; ++j)
                ga[i * c + j] += g[i * c + j] - std::exp(out->data[i * c + j]) * gsum;
        }
    });
}

inline ArrayPtr softmax(Tape& t, const ArrayPtr& a) { return exp(t, log_softmax(t, a)); }

// ---- 2-d convolution ----

struct ConvGeom {
    std::size_t in_c, in_h, in_w;
    std::size_t out_c, kh, kw;
    std::size_t stride = 1, pad = 0;

    std::size_t out_h() const { return (in_h + 2 * pad - kh) / stride + 1; }
    std::size_t out_w() const { return (in_w + 2 * pad - kw) / stride + 1; }
    std::size_t patch() const { return in_c * kh * kw; }
};

namespace detail {
// Patches laid out [B*OH*OW, C*KH*KW]; out-of-bounds taps read as zero.
inline void im2col(const ConvGeom& geo, const double* x, std::size_t batch, double* cols) {
    const std::size_t oh = geo.out_h(), ow = geo.out_w(), patch = geo.patch();
    for (std::size_t b = 0; b < batch; ++b) {
        const double* img = x + b * geo.in_c * geo.in_h * geo.in_w;
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                double* row = cols + ((b * oh + oy) * ow + ox) * patch;
                std::size_t k = 0;
                for (std::size_t c = 0; c < geo.in_c; ++c)
                    for (std::size_t ky = 0; ky < geo.kh; ++ky)
                        for (std::size_t kx = 0; kx < geo.kw; ++kx, ++k) {
                            const long iy = static_cast<long>(oy * geo.stride + ky) - static_cast<long>(geo.pad);
                            const long ix = static_cast<long>(ox * geo.stride + kx) - static_cast<long>(geo.pad);
                            row[k] = (iy < 0 || ix < 0 || iy >= static_cast<long>(geo.in_h) ||
                                      ix >= static_cast<long>(geo.in_w))
                                         ? 0.0
                                         : img[(c * geo.in_h + iy) * geo.in_w + ix];
                        }
            }
    }
}

inline void col2im_add(const ConvGeom& geo, const double* cols, std::size_t batch, double* gx) {
    const std::size_t oh = geo.out_h(), ow = geo.out_w(), patch = geo.patch();
    for (std::size_t b = 0; b < batch; ++b) {
        double* img = gx + b * geo.in_c * geo.in_h * geo.in_w;
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                const double* row = cols + ((b * oh + oy) * ow + ox) * patch;
                std::size_t k = 0;
                for (std::size_t c = 0; c < geo.in_c; ++c)
                    for (std::size_t ky = 0; ky < geo.kh; ++ky)
                        for (std::size_t kx = 0; kx < geo.kw; ++kx, ++k) {
                            const long iy = static_cast<long>(oy * geo.stride + ky) - static_cast<long>(geo.pad);
                            const long ix = static_cast<long>(ox * geo.stride + kx) - static_cast<long>(geo.pad);
                            if (iy >= 0 && ix >= 0 && iy < static_cast<long>(geo.in_h) &&
                                ix < static_cast<long>(geo.in_w))
                                img[(c * geo.in_h + iy) * geo.in_w + ix] += row[k];
                        }
            }
    }
}
} // namespace detail

// x [B, C*H*W] (channel-major per sample), w [OC, C*KH*KW], b [OC]
// -> [B, OC*OH*OW]. One fused primitive so the patch buffer is shared
// between forward and backward.
inline ArrayPtr conv2d(Tape& t, const ArrayPtr& x, const ArrayPtr& w, const ArrayPtr& bias, const ConvGeom& geo) {
    if (x->shape.size() != 2 || x->cols() != geo.in_c * geo.in_h * geo.in_w)
        throw ShapeError("conv2d: input " + x->shape_str() + " does not match geometry");
    if (w->rows() != geo.out_c || w->cols() != geo.patch())
        throw ShapeError("conv2d: kernel " + w->shape_str() + " does not match geometry");
    if (bias->numel() != geo.out_c) throw ShapeError("conv2d: bias size mismatch");

    const std::size_t batch = x->rows(), oh = geo.out_h(), ow = geo.out_w();
    const std::size_t sites = batch * oh * ow, patch = geo.patch(), per = oh * ow;

    auto cols = std::make_shared<std::vector<double>>(sites * patch);
    detail::im2col(geo, x->data.data(), batch, cols->data());

    // tmp[site, oc] = cols[site, :] . w[oc, :] + bias[oc]
    std::vector<double> tmp(sites * geo.out_c);
    {
        ECMap cm(cols->data(), static_cast<Eigen::Index>(sites), static_cast<Eigen::Index>(patch));
        EMap(tmp.data(), sites, geo.out_c).noalias() = cm * mat_view(*w).transpose();
    }
    auto out = make_array({batch, geo.out_c * per});
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t oc = 0; oc < geo.out_c; ++oc)
            for (std::size_t p = 0; p < per; ++p)
                out->data[(b * geo.out_c + oc) * per + p] = tmp[(b * per + p) * geo.out_c + oc] + bias->data[oc];

    return t.record("conv2d", {x, w, bias}, out,
                    [x, w, bias, cols, geo, batch, sites, patch, per](const std::vector<double>& g,
                                                                      const Tape::Accum& adj) {
                        // Regroup [B, OC*OH*OW] -> [B*OH*OW, OC] to mirror the forward GEMM.
                        std::vector<double> g2(sites * geo.out_c);
                        for (std::size_t b = 0; b < batch; ++b)
                            for (std::size_t oc = 0; oc < geo.out_c; ++oc)
                                for (std::size_t p = 0; p < per; ++p)
                                    g2[(b * per + p) * geo.out_c + oc] = g[(b * geo.out_c + oc) * per + p];
                        ECMap g2m(g2.data(), static_cast<Eigen::Index>(sites), static_cast<Eigen::Index>(geo.out_c));
                        ECMap cm(cols->data(), static_cast<Eigen::Index>(sites), static_cast<Eigen::Index>(patch));
                        if (w->requires_grad) {
                            auto& gw = adj(w);
                            EMap(gw.data(), geo.out_c, patch).noalias() += g2m.transpose() * cm;
                        }
                        if (bias->requires_grad) {
                            auto& gb = adj(bias);
                            for (std::size_t s = 0; s < sites; ++s)
                                for (std::size_t oc = 0; oc < geo.out_c; ++oc) gb[oc] += g2[s * geo.out_c + oc];
                        }
                        if (x->requires_grad) {
                            std::vector<double> gcols(sites * patch);
                            EMap(gcols.data(), sites, patch).noalias() = g2m * mat_view(*w);
                            auto& gx = adj(x);
                            detail::col2im_add(geo, gcols.data(), batch, gx.data());
                        }
                    });
}

} // namespace unvp::ops
