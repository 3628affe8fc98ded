#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "mstim/tensor.hpp"

namespace mstim {

namespace detail {

struct AxisSplit {
    std::size_t outer = 1;
    std::size_t extent = 1;
    std::size_t inner = 1;
};

inline AxisSplit split_at(const Shape& shape, std::size_t axis) {
    if (axis >= shape.size()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
    }
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    s.extent = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

enum class Broadcast { same, lhs_scalar, rhs_scalar };

inline Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() == b.shape()) return Broadcast::same;
    if (a.is_scalar()) return Broadcast::lhs_scalar;
    if (b.is_scalar()) return Broadcast::rhs_scalar;
    throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
}

template <class Forward, class GradLhs, class GradRhs>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, Forward f, GradLhs dfa, GradRhs dfb) {
    const Broadcast kind = broadcast_kind(a, b, name);
    const Shape& shape = kind == Broadcast::lhs_scalar ? b.shape() : a.shape();
    const std::size_t n = shape_numel(shape);
    const auto ad = a.data();
    const auto bd = b.data();
    const std::size_t sa = kind == Broadcast::lhs_scalar ? 0 : 1;
    const std::size_t sb = kind == Broadcast::rhs_scalar ? 0 : 1;
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = f(ad[i * sa], bd[i * sb]);
    Node* pa = &a.node();
    Node* pb = &b.node();
    return Tensor::make_result(shape, std::move(out), name, {a, b}, [=](std::span<const double> g) {
        if (pa->requires_grad) {
            auto& ga = pa->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) ga[i * sa] += g[i] * dfa(pa->data[i * sa], pb->data[i * sb]);
        }
        if (pb->requires_grad) {
            auto& gb = pb->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) gb[i * sb] += g[i] * dfb(pa->data[i * sa], pb->data[i * sb]);
        }
    });
}

// Unary op whose derivative is expressed through the input x and output y.
template <class Forward, class Derivative>
Tensor unary_op(const Tensor& x, const char* name, Forward f, Derivative df) {
    const auto xd = x.data();
    std::vector<double> out(xd.size());
    for (std::size_t i = 0; i < xd.size(); ++i) out[i] = f(xd[i]);
    Node* px = &x.node();
    auto result = Tensor::make_result(x.shape(), std::move(out), name, {x}, nullptr);
    if (result.requires_grad()) {
        Node* py = &result.node();
        // The output node owns this closure, so capturing it by raw pointer is safe.
        py->backward = [px, py, df](std::span<const double> g) {
            auto& gx = px->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(px->data[i], py->data[i]);
        };
    }
    return result;
}

inline double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// C[m x p] += A[m x k] * B[k x p]
inline void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t p) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * p;
        const double* arow = a + i * k;
        for (std::size_t l = 0; l < k; ++l) {
            const double av = arow[l];
            const double* brow = b + l * p;
            for (std::size_t j = 0; j < p; ++j) crow[j] += av * brow[j];
        }
    }
}

// dA[m x k] += dC[m x p] * B^T
inline void gemm_grad_lhs(const double* dc, const double* b, double* da, std::size_t m, std::size_t k, std::size_t p) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* grow = dc + i * p;
        for (std::size_t l = 0; l < k; ++l) {
            const double* brow = b + l * p;
            double acc = 0.0;
            for (std::size_t j = 0; j < p; ++j) acc += grow[j] * brow[j];
            da[i * k + l] += acc;
        }
    }
}

// dB[k x p] += A^T * dC[m x p]
inline void gemm_grad_rhs(const double* a, const double* dc, double* db, std::size_t m, std::size_t k, std::size_t p) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* grow = dc + i * p;
        for (std::size_t l = 0; l < k; ++l) {
            const double av = a[i * k + l];
            double* brow = db + l * p;
            for (std::size_t j = 0; j < p; ++j) brow[j] += av * grow[j];
        }
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

inline Tensor scale(const Tensor& x, double factor) {
    return detail::unary_op(
        x, "scale", [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

inline Tensor neg(const Tensor& x) { return scale(x, -1.0); }

inline Tensor tanh(const Tensor& x) {
    return detail::unary_op(
        x, "tanh", [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

inline Tensor sigmoid(const Tensor& x) {
    return detail::unary_op(
        x, "sigmoid", detail::stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

// Subgradient at 0 is 0.
inline Tensor relu(const Tensor& x) {
    return detail::unary_op(
        x, "relu", [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Tensor exp(const Tensor& x) {
    return detail::unary_op(
        x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Tensor square(const Tensor& x) {
    return detail::unary_op(
        x, "square", [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& x) {
    double total = 0.0;
    for (double v : x.data()) total += v;
    detail::Node* px = &x.node();
    return Tensor::make_result({}, {total}, "sum", {x}, [px](std::span<const double> g) {
        auto& gx = px->ensure_grad();
        for (auto& v : gx) v += g[0];
    });
}

inline Tensor mean(const Tensor& x) {
    double total = 0.0;
    for (double v : x.data()) total += v;
    const double inv = 1.0 / static_cast<double>(x.numel());
    detail::Node* px = &x.node();
    return Tensor::make_result({}, {total * inv}, "mean", {x}, [px, inv](std::span<const double> g) {
        auto& gx = px->ensure_grad();
        for (auto& v : gx) v += g[0] * inv;
    });
}

/// Mean along one axis; the axis is removed from the result shape.
inline Tensor mean(const Tensor& x, std::size_t axis) {
    const auto s = detail::split_at(x.shape(), axis);
    Shape shape = x.shape();
    shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
    const double inv = 1.0 / static_cast<double>(s.extent);
    const auto xd = x.data();
    std::vector<double> out(s.outer * s.inner, 0.0);
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t e = 0; e < s.extent; ++e)
            for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += xd[(o * s.extent + e) * s.inner + i];
    for (auto& v : out) v *= inv;
    detail::Node* px = &x.node();
    return Tensor::make_result(std::move(shape), std::move(out), "mean_axis", {x}, [px, s, inv](std::span<const double> g) {
        auto& gx = px->ensure_grad();
        for (std::size_t o = 0; o < s.outer; ++o)
            for (std::size_t e = 0; e < s.extent; ++e)
                for (std::size_t i = 0; i < s.inner; ++i) gx[(o * s.extent + e) * s.inner + i] += g[o * s.inner + i] * inv;
    });
}

/// Numerically stable softmax along `axis` (max-subtracted).
inline Tensor softmax(const Tensor& x, std::size_t axis) {
    const auto s = detail::split_at(x.shape(), axis);
    const auto xd = x.data();
    for (double v : xd) {
        if (!std::isfinite(v)) throw NumericError("softmax: non-finite input");
    }
    std::vector<double> out(xd.size());
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
            const std::size_t base = o * s.extent * s.inner + i;
            double mx = xd[base];
            for (std::size_t e = 1; e < s.extent; ++e) mx = std::max(mx, xd[base + e * s.inner]);
            double z = 0.0;
            for (std::size_t e = 0; e < s.extent; ++e) {
                const double v = std::exp(xd[base + e * s.inner] - mx);
                out[base + e * s.inner] = v;
                z += v;
            }
            for (std::size_t e = 0; e < s.extent; ++e) out[base + e * s.inner] /= z;
        }
    }
    detail::Node* px = &x.node();
    auto result = Tensor::make_result(x.shape(), std::move(out), "softmax", {x}, nullptr);
    if (result.requires_grad()) {
        detail::Node* py = &result.node();
        py->backward = [px, py, s](std::span<const double> g) {
            auto& gx = px->ensure_grad();
            const auto& y = py->data;
            for (std::size_t o = 0; o < s.outer; ++o) {
                for (std::size_t i = 0; i < s.inner; ++i) {
                    const std::size_t base = o * s.extent * s.inner + i;
                    double dot = 0.0;
                    for (std::size_t e = 0; e < s.extent; ++e) dot += g[base + e * s.inner] * y[base + e * s.inner];
                    for (std::size_t e = 0; e < s.extent; ++e) {
                        const std::size_t k = base + e * s.inner;
                        gx[k] += y[k] * (g[k] - dot);
                    }
                }
            }
        };
    }
    return result;
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

/// Matrix product. Supports [m,k]x[k,p], [B,m,k]x[k,p] and [B,m,k]x[B,k,p].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    const auto mismatch = [&] {
        return DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    };
    std::size_t batch = 1, m = 0, k = 0, p = 0;
    bool shared_rhs = true;
    Shape out_shape;
    if (a.rank() == 2 && b.rank() == 2) {
        m = a.dim(0), k = a.dim(1), p = b.dim(1);
        if (b.dim(0) != k) throw mismatch();
        out_shape = {m, p};
    } else if (a.rank() == 3 && b.rank() == 2) {
        // Rows of every batch element share the right-hand matrix: fold the batch into m.
        m = a.dim(0) * a.dim(1), k = a.dim(2), p = b.dim(1);
        if (b.dim(0) != k) throw mismatch();
        out_shape = {a.dim(0), a.dim(1), p};
    } else if (a.rank() == 3 && b.rank() == 3) {
        batch = a.dim(0), m = a.dim(1), k = a.dim(2), p = b.dim(2);
        if (b.dim(0) != batch || b.dim(1) != k) throw mismatch();
        shared_rhs = false;
        out_shape = {batch, m, p};
    } else {
        throw mismatch();
    }
    std::vector<double> out(batch * m * p, 0.0);
    const double* ad = a.data().data();
    const double* bd = b.data().data();
    const std::size_t bstride = shared_rhs ? 0 : k * p;
    for (std::size_t n = 0; n < batch; ++n) detail::gemm_acc(ad + n * m * k, bd + n * bstride, out.data() + n * m * p, m, k, p);

    detail::Node* pa = &a.node();
    detail::Node* pb = &b.node();
    return Tensor::make_result(std::move(out_shape), std::move(out), "matmul", {a, b},
                               [=](std::span<const double> g) {
                                   for (std::size_t n = 0; n < batch; ++n) {
                                       const double* gn = g.data() + n * m * p;
                                       if (pa->requires_grad)
                                           detail::gemm_grad_lhs(gn, pb->data.data() + n * bstride,
                                                                 pa->ensure_grad().data() + n * m * k, m, k, p);
                                       if (pb->requires_grad)
                                           detail::gemm_grad_rhs(pa->data.data() + n * m * k, gn,
                                                                 pb->ensure_grad().data() + n * bstride, m, k, p);
                                   }
                               });
}

/// Swaps the last two axes of a rank-2 or rank-3 tensor.
inline Tensor transpose(const Tensor& x) {
    if (x.rank() != 2 && x.rank() != 3) throw DimensionError("transpose: expected rank 2 or 3, got " + shape_str(x.shape()));
    const std::size_t batch = x.rank() == 3 ? x.dim(0) : 1;
    const std::size_t r = x.dim(x.rank() - 2), c = x.dim(x.rank() - 1);
    Shape shape = x.shape();
    std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
    const auto xd = x.data();
    std::vector<double> out(xd.size());
    for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) out[n * r * c + j * r + i] = xd[n * r * c + i * c + j];
    detail::Node* px = &x.node();
    return Tensor::make_result(std::move(shape), std::move(out), "transpose", {x}, [=](std::span<const double> g) {
        auto& gx = px->ensure_grad();
        for (std::size_t n = 0; n < batch; ++n)
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) gx[n * r * c + i * c + j] += g[n * r * c + j * r + i];
    });
}

/// y = x W^T + b over the last axis of x. W is [out x in], b is [out].
inline Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (x.rank() == 0 || weight.rank() != 2 || bias.rank() != 1 || weight.dim(1) != x.dim(x.rank() - 1) ||
        bias.dim(0) != weight.dim(0)) {
        throw DimensionError("linear: incompatible shapes x=" + shape_str(x.shape()) + " W=" + shape_str(weight.shape()) +
                             " b=" + shape_str(bias.shape()));
    }
    const std::size_t in = weight.dim(1), outf = weight.dim(0);
    const std::size_t rows = x.numel() / in;
    Shape shape = x.shape();
    shape.back() = outf;
    const double* xd = x.data().data();
    const double* wd = weight.data().data();
    const double* bd = bias.data().data();
    std::vector<double> out(rows * outf);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xd + r * in;
        for (std::size_t o = 0; o < outf; ++o) {
            const double* wr = wd + o * in;
            double acc = 0.0;
            for (std::size_t i = 0; i < in; ++i) acc += xr[i] * wr[i];
            out[r * outf + o] = acc + bd[o];
        }
    }
    detail::Node* px = &x.node();
    detail::Node* pw = &weight.node();
    detail::Node* pb = &bias.node();
    return Tensor::make_result(std::move(shape), std::move(out), "linear", {x, weight, bias},
                               [=](std::span<const double> g) {
                                   if (px->requires_grad) {
                                       // dx = g W
                                       detail::gemm_acc(g.data(), pw->data.data(), px->ensure_grad().data(), rows, outf, in);
                                   }
                                   if (pw->requires_grad) {
                                       auto& gw = pw->ensure_grad();
                                       for (std::size_t r = 0; r < rows; ++r)
                                           for (std::size_t o = 0; o < outf; ++o) {
                                               const double gv = g[r * outf + o];
                                               const double* xr = px->data.data() + r * in;
                                               double* gwr = gw.data() + o * in;
                                               for (std::size_t i = 0; i < in; ++i) gwr[i] += gv * xr[i];
                                           }
                                   }
                                   if (pb->requires_grad) {
                                       auto& gb = pb->ensure_grad();
                                       for (std::size_t r = 0; r < rows; ++r)
                                           for (std::size_t o = 0; o < outf; ++o) gb[o] += g[r * outf + o];
                                   }
                               });
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    detail::Node* px = &x.node();
    return Tensor::make_result(std::move(shape), x.to_vector(), "reshape", {x}, [px](std::span<const double> g) {
        auto& gx = px->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
}

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw UsageError("concat: no inputs");
    const Shape& first = parts.front().shape();
    if (axis >= first.size()) throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for " + shape_str(first));
    Shape shape = first;
    shape[axis] = 0;
    for (const auto& t : parts) {
        const Shape& s = t.shape();
        bool ok = s.size() == first.size();
        for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
        if (!ok) throw DimensionError("concat: " + shape_str(s) + " does not match " + shape_str(first) + " off axis " + std::to_string(axis));
        shape[axis] += s[axis];
    }
    const auto total = detail::split_at(shape, axis);
    std::vector<double> out(shape_numel(shape));
    std::vector<std::size_t> offsets;  // start of each part along the axis
    std::size_t offset = 0;
    for (const auto& t : parts) {
        offsets.push_back(offset);
        const std::size_t width = t.dim(axis) * total.inner;
        const auto td = t.data();
        for (std::size_t o = 0; o < total.outer; ++o)
            std::copy_n(td.begin() + static_cast<std::ptrdiff_t>(o * width), width,
                        out.begin() + static_cast<std::ptrdiff_t>(o * total.extent * total.inner + offset * total.inner));
        offset += t.dim(axis);
    }
    std::vector<detail::Node*> nodes;
    for (const auto& t : parts) nodes.push_back(&t.node());
    return Tensor::make_result(shape, std::move(out), "concat", parts, [=](std::span<const double> g) {
        for (std::size_t p = 0; p < nodes.size(); ++p) {
            if (!nodes[p]->requires_grad) continue;
            auto& gp = nodes[p]->ensure_grad();
            const std::size_t width = nodes[p]->shape[axis] * total.inner;
            for (std::size_t o = 0; o < total.outer; ++o) {
                const std::size_t src = o * total.extent * total.inner + offsets[p] * total.inner;
                for (std::size_t i = 0; i < width; ++i) gp[o * width + i] += g[src + i];
            }
        }
    });
}

/// Half-open index range [begin, end) along one axis.
struct Range {
    std::size_t begin = 0;
    std::size_t end = 0;
};

/// Extracts a sub-block; one range per axis.
inline Tensor slice(const Tensor& x, const std::vector<Range>& ranges) {
    const Shape& in = x.shape();
    if (ranges.size() != in.size()) {
        throw DimensionError("slice: " + std::to_string(ranges.size()) + " ranges for " + shape_str(in));
    }
    Shape shape(in.size());
    for (std::size_t a = 0; a < in.size(); ++a) {
        if (ranges[a].begin >= ranges[a].end || ranges[a].end > in[a]) {
            throw DimensionError("slice: range [" + std::to_string(ranges[a].begin) + "," + std::to_string(ranges[a].end) +
                                 ") out of bounds on axis " + std::to_string(a) + " of " + shape_str(in));
        }
        shape[a] = ranges[a].end - ranges[a].begin;
    }
    std::vector<std::size_t> strides(in.size(), 1);
    for (std::size_t a = in.size(); a-- > 1;) strides[a - 1] = strides[a] * in[a];

    // Flat source index of every output element, in output order.
    const std::size_t n = shape_numel(shape);
    std::vector<std::size_t> source(n);
    std::vector<std::size_t> idx(in.size(), 0);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t flat = 0;
        for (std::size_t a = 0; a < in.size(); ++a) flat += (ranges[a].begin + idx[a]) * strides[a];
        source[i] = flat;
        for (std::size_t a = in.size(); a-- > 0;) {
            if (++idx[a] < shape[a]) break;
            idx[a] = 0;
        }
    }
    const auto xd = x.data();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = xd[source[i]];
    detail::Node* px = &x.node();
    return Tensor::make_result(std::move(shape), std::move(out), "slice", {x},
                               [px, source = std::move(source)](std::span<const double> g) {
                                   auto& gx = px->ensure_grad();
                                   for (std::size_t i = 0; i < g.size(); ++i) gx[source[i]] += g[i];
                               });
}

inline Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
    std::vector<Range> ranges;
    for (std::size_t a = 0; a < x.rank(); ++a) ranges.push_back({0, x.shape()[a]});
    if (axis >= x.rank()) throw DimensionError("slice: axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
    ranges[axis] = {begin, end};
    return slice(x, ranges);
}

/// Picks one index along `axis`, dropping that axis.
inline Tensor select(const Tensor& x, std::size_t axis, std::size_t index) {
    const auto s = detail::split_at(x.shape(), axis);
    if (index >= s.extent) {
        throw DimensionError("select: index " + std::to_string(index) + " out of bounds on axis " + std::to_string(axis) +
                             " of " + shape_str(x.shape()));
    }
    Shape shape = x.shape();
    shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
    const auto xd = x.data();
    std::vector<double> out(s.outer * s.inner);
    for (std::size_t o = 0; o < s.outer; ++o)
        std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>((o * s.extent + index) * s.inner), s.inner,
                    out.begin() + static_cast<std::ptrdiff_t>(o * s.inner));
    detail::Node* px = &x.node();
    return Tensor::make_result(std::move(shape), std::move(out), "select", {x}, [px, s, index](std::span<const double> g) {
        auto& gx = px->ensure_grad();
        for (std::size_t o = 0; o < s.outer; ++o)
            for (std::size_t i = 0; i < s.inner; ++i) gx[(o * s.extent + index) * s.inner + i] += g[o * s.inner + i];
    });
}

/// Stacks equally shaped tensors along a new axis.
inline Tensor stack(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw UsageError("stack: no inputs");
    const Shape& first = parts.front().shape();
    if (axis > first.size()) throw DimensionError("stack: axis " + std::to_string(axis) + " out of range for " + shape_str(first));
    Shape unsq = first;
    unsq.insert(unsq.begin() + static_cast<std::ptrdiff_t>(axis), 1);
    std::vector<Tensor> expanded;
    expanded.reserve(parts.size());
    for (const auto& t : parts) {
        if (t.shape() != first) throw DimensionError("stack: " + shape_str(t.shape()) + " does not match " + shape_str(first));
        expanded.push_back(reshape(t, unsq));
    }
    return concat(expanded, axis);
}

// ---------------------------------------------------------------------------
// Sequence ops
// ---------------------------------------------------------------------------

/// 1-D cross-correlation along time with symmetric zero padding ("same" length).
/// x: [n, in] or [B, n, in]; weight: [out, in, k] with odd k; bias: [out].
inline Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if ((x.rank() != 2 && x.rank() != 3) || weight.rank() != 3 || bias.rank() != 1 ||
        weight.dim(1) != x.dim(x.rank() - 1) || bias.dim(0) != weight.dim(0)) {
        throw DimensionError("conv1d: incompatible shapes x=" + shape_str(x.shape()) + " W=" + shape_str(weight.shape()) +
                             " b=" + shape_str(bias.shape()));
    }
    const std::size_t k = weight.dim(2);
    if (k % 2 == 0) throw DimensionError("conv1d: kernel size must be odd, got " + std::to_string(k));
    const std::size_t batch = x.rank() == 3 ? x.dim(0) : 1;
    const std::size_t n = x.dim(x.rank() - 2);
    const std::size_t cin = weight.dim(1), cout = weight.dim(0);
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>((k - 1) / 2);
    Shape shape = x.shape();
    shape.back() = cout;

    const double* xd = x.data().data();
    const double* wd = weight.data().data();
    const double* bd = bias.data().data();
    std::vector<double> out(batch * n * cout);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t t = 0; t < n; ++t) {
            for (std::size_t o = 0; o < cout; ++o) {
                double acc = 0.0;
                for (std::size_t j = 0; j < k; ++j) {
                    const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(j) - pad;
                    if (src < 0 || src >= static_cast<std::ptrdiff_t>(n)) continue;
                    const double* xr = xd + (b * n + static_cast<std::size_t>(src)) * cin;
                    for (std::size_t c = 0; c < cin; ++c) acc += xr[c] * wd[(o * cin + c) * k + j];
                }
                out[(b * n + t) * cout + o] = acc + bd[o];
            }
        }
    }
    detail::Node* px = &x.node();
    detail::Node* pw = &weight.node();
    detail::Node* pb = &bias.node();
    return Tensor::make_result(std::move(shape), std::move(out), "conv1d", {x, weight, bias},
                               [=](std::span<const double> g) {
                                   double* gx = px->requires_grad ? px->ensure_grad().data() : nullptr;
                                   double* gw = pw->requires_grad ? pw->ensure_grad().data() : nullptr;
                                   double* gb = pb->requires_grad ? pb->ensure_grad().data() : nullptr;
                                   const double* xv = px->data.data();
                                   const double* wv = pw->data.data();
                                   for (std::size_t b = 0; b < batch; ++b) {
                                       for (std::size_t t = 0; t < n; ++t) {
                                           for (std::size_t o = 0; o < cout; ++o) {
                                               const double gv = g[(b * n + t) * cout + o];
                                               if (gb) gb[o] += gv;
                                               for (std::size_t j = 0; j < k; ++j) {
                                                   const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) +
                                                                              static_cast<std::ptrdiff_t>(j) - pad;
                                                   if (src < 0 || src >= static_cast<std::ptrdiff_t>(n)) continue;
                                                   const std::size_t row = (b * n + static_cast<std::size_t>(src)) * cin;
                                                   for (std::size_t c = 0; c < cin; ++c) {
                                                       const std::size_t wi = (o * cin + c) * k + j;
                                                       if (gx) gx[row + c] += gv * wv[wi];
                                                       if (gw) gw[wi] += gv * xv[row + c];
                                                   }
                                               }
                                           }
                                       }
                                   }
                               });
}

/// Non-overlapping max pooling along time. x: [n, c] or [B, n, c] -> floor(n/window) steps.
/// Gradient goes to the earliest maximal element of each window.
inline Tensor maxpool1d(const Tensor& x, std::size_t window = 2) {
    if (x.rank() != 2 && x.rank() != 3) throw DimensionError("maxpool1d: expected rank 2 or 3, got " + shape_str(x.shape()));
    if (window == 0) throw UsageError("maxpool1d: window must be positive");
    const std::size_t batch = x.rank() == 3 ? x.dim(0) : 1;
    const std::size_t n = x.dim(x.rank() - 2), c = x.dim(x.rank() - 1);
    if (n < window) {
        throw DimensionError("maxpool1d: sequence length " + std::to_string(n) + " shorter than window " + std::to_string(window));
    }
    const std::size_t m = n / window;
    Shape shape = x.shape();
    shape[shape.size() - 2] = m;
    const auto xd = x.data();
    std::vector<double> out(batch * m * c);
    std::vector<std::size_t> argmax(out.size());
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t t = 0; t < m; ++t)
            for (std::size_t ch = 0; ch < c; ++ch) {
                std::size_t best = (b * n + t * window) * c + ch;
                for (std::size_t w = 1; w < window; ++w) {
                    const std::size_t cand = (b * n + t * window + w) * c + ch;
                    if (xd[cand] > xd[best]) best = cand;
                }
                const std::size_t o = (b * m + t) * c + ch;
                out[o] = xd[best];
                argmax[o] = best;
            }
    detail::Node* px = &x.node();
    return Tensor::make_result(std::move(shape), std::move(out), "maxpool1d", {x},
                               [px, argmax = std::move(argmax)](std::span<const double> g) {
                                   auto& gx = px->ensure_grad();
                                   for (std::size_t i = 0; i < g.size(); ++i) gx[argmax[i]] += g[i];
                               });
}

} // namespace mstim
