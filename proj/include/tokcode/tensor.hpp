#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tokcode/common.hpp"
#include "tokcode/kernels.hpp"

namespace tokcode::ad {

// Define-by-run reverse-mode autodiff over dense row-major matrices. The
// graph is rebuilt per step; creation order is already a topological order,
// so the backward pass is a single reverse sweep. Real is float in training
// mode and double in test/oracle mode.

template <class Real>
class Graph;

template <class Real>
struct Node {
    int rows = 0;
    int cols = 0;
    std::vector<Real> value;
    std::vector<Real> grad;
    bool track = false;  // gradient reaches a trainable leaf through this node
    std::string op;
    std::function<void()> backward;

    size_t numel() const { return value.size(); }
};

template <class Real>
class Tensor {
public:
    Tensor() = default;
    Tensor(Graph<Real>* g, int idx) : graph_(g), index_(idx) {}

    int rows() const { return node().rows; }
    int cols() const { return node().cols; }
    const std::vector<Real>& value() const { return node().value; }
    const std::vector<Real>& grad() const { return node().grad; }
    bool tracked() const { return node().track; }

    Real scalar() const {
        if (node().numel() != 1) {
            throw InputError("Tensor::scalar: tensor " + shape_str() + " is not 1x1");
        }
        return node().value[0];
    }

    std::string shape_str() const {
        return "[" + std::to_string(rows()) + "x" + std::to_string(cols()) + "]";
    }

    Graph<Real>& graph() const { return *graph_; }
    int index() const { return index_; }
    Node<Real>& node() const;
    bool valid() const { return graph_ != nullptr; }

private:
    Graph<Real>* graph_ = nullptr;
    int index_ = -1;
};

template <class Real>
class Graph {
public:
    Tensor<Real> leaf(int rows, int cols, std::span<const Real> data, bool requires_grad,
                      std::string_view name = "leaf") {
        if (rows < 1 || cols < 1 || data.size() != static_cast<size_t>(rows) * cols) {
            throw InputError(std::string("graph leaf '") + std::string(name) + "': data size " +
                             std::to_string(data.size()) + " does not match " +
                             std::to_string(rows) + "x" + std::to_string(cols));
        }
        Node<Real> n;
        n.rows = rows;
        n.cols = cols;
        n.value.assign(data.begin(), data.end());
        n.grad.assign(n.value.size(), Real(0));
        n.track = requires_grad;
        n.op = std::string(name);
        nodes_.push_back(std::move(n));
        return Tensor<Real>(this, static_cast<int>(nodes_.size()) - 1);
    }

    Tensor<Real> leaf(int rows, int cols, const std::vector<Real>& data, bool requires_grad,
                      std::string_view name = "leaf") {
        return leaf(rows, cols, std::span<const Real>(data.data(), data.size()), requires_grad,
                    name);
    }

    Tensor<Real> constant(int rows, int cols, std::span<const Real> data,
                          std::string_view name = "const") {
        return leaf(rows, cols, data, false, name);
    }

    Tensor<Real> constant(int rows, int cols, const std::vector<Real>& data,
                          std::string_view name = "const") {
        return leaf(rows, cols, data, false, name);
    }

    Tensor<Real> scalar_const(Real v) {
        const Real buf[1] = {v};
        return constant(1, 1, std::span<const Real>(buf, 1), "scalar");
    }

    Node<Real>& node(int idx) { return nodes_[static_cast<size_t>(idx)]; }
    const Node<Real>& node(int idx) const { return nodes_[static_cast<size_t>(idx)]; }
    size_t size() const { return nodes_.size(); }

    // Appends an op node; `parents` decide whether gradients are tracked.
    Tensor<Real> make(int rows, int cols, std::string_view op,
                      std::initializer_list<Tensor<Real>> parents) {
        bool track = false;
        for (const auto& p : parents) track = track || p.tracked();
        return make_tracked(rows, cols, op, track);
    }

    Tensor<Real> make_multi(int rows, int cols, std::string_view op,
                            const std::vector<Tensor<Real>>& parents) {
        bool track = false;
        for (const auto& p : parents) track = track || p.tracked();
        return make_tracked(rows, cols, op, track);
    }

    Tensor<Real> make_tracked(int rows, int cols, std::string_view op, bool track) {
        Node<Real> n;
        n.rows = rows;
        n.cols = cols;
        n.value.assign(static_cast<size_t>(rows) * cols, Real(0));
        n.grad.assign(n.value.size(), Real(0));
        n.op = std::string(op);
        n.track = track;
        nodes_.push_back(std::move(n));
        return Tensor<Real>(this, static_cast<int>(nodes_.size()) - 1);
    }

    void backward(const Tensor<Real>& root) {
        if (root.node().numel() != 1) {
            throw InputError("Graph::backward: root must be a scalar, got " + root.shape_str());
        }
        root.node().grad[0] = Real(1);
        for (int i = root.index(); i >= 0; --i) {
            Node<Real>& n = nodes_[static_cast<size_t>(i)];
            if (n.track && n.backward) n.backward();
        }
    }

    // Throws NumericError naming the first op whose value is non-finite.
    void check_finite() const {
        for (const auto& n : nodes_) {
            for (Real v : n.value) {
                if (!std::isfinite(static_cast<double>(v))) {
                    throw NumericError("non-finite value in op '" + n.op + "'");
                }
            }
        }
    }

private:
    std::vector<Node<Real>> nodes_;
};

template <class Real>
Node<Real>& Tensor<Real>::node() const {
    return graph_->node(index_);
}

namespace detail {

template <class Real>
void require_same_shape(const Tensor<Real>& a, const Tensor<Real>& b, std::string_view op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw InputError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Core ops
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
    if (a.cols() != b.rows()) {
        throw InputError("matmul: inner dimensions disagree " + a.shape_str() + " vs " +
                         b.shape_str());
    }
    Graph<Real>& g = a.graph();
    const int m = a.rows(), k = a.cols(), n = b.cols();
    Tensor<Real> out = g.make(m, n, "matmul", {a, b});
    kern::mm_nn(a.value().data(), b.value().data(), out.node().value.data(), m, k, n);
    const int ai = a.index(), bi = b.index(), oi = out.index();
    out.node().backward = [&g, ai, bi, oi, m, k, n]() {
        Node<Real>& an = g.node(ai);
        Node<Real>& bn = g.node(bi);
        Node<Real>& on = g.node(oi);
        if (an.track) {
            kern::mm_nt(on.grad.data(), bn.value.data(), an.grad.data(), m, n, k, true);
        }
        if (bn.track) {
            kern::mm_tn(an.value.data(), on.grad.data(), bn.grad.data(), k, m, n, true);
        }
    };
    return out;
}

template <class Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
    detail::require_same_shape(a, b, "add");
    Graph<Real>& g = a.graph();
    Tensor<Real> out = g.make(a.rows(), a.cols(), "add", {a, b});
    const size_t n = out.node().numel();
    for (size_t i = 0; i < n; ++i) out.node().value[i] = a.value()[i] + b.value()[i];
    const int ai = a.index(), bi = b.index(), oi = out.index();
    out.node().backward = [&g, ai, bi, oi, n]() {
        Node<Real>& on = g.node(oi);
        if (g.node(ai).track) {
            for (size_t i = 0; i < n; ++i) g.node(ai).grad[i] += on.grad[i];
        }
        if (g.node(bi).track) {
            for (size_t i = 0; i < n; ++i) g.node(bi).grad[i] += on.grad[i];
        }
    };
    return out;
}

template <class Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
    detail::require_same_shape(a, b, "sub");
    Graph<Real>& g = a.graph();
    Tensor<Real> out = g.make(a.rows(), a.cols(), "sub", {a, b});
    const size_t n = out.node().numel();
    for (size_t i = 0; i < n; ++i) out.node().value[i] = a.value()[i] - b.value()[i];
    const int ai = a.index(), bi = b.index(), oi = out.index();
    out.node().backward = [&g, ai, bi, oi, n]() {
        Node<Real>& on = g.node(oi);
        if (g.node(ai).track) {
            for (size_t i = 0; i < n; ++i) g.node(ai).grad[i] += on.grad[i];
        }
        if (g.node(bi).track) {
            for (size_t i = 0; i < n; ++i) g.node(bi).grad[i] -= on.grad[i];
        }
    };
    return out;
}

template <class Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
    detail::require_same_shape(a, b, "mul");
    Graph<Real>& g = a.graph();
    Tensor<Real> out = g.make(a.rows(), a.cols(), "mul", {a, b});
    const size_t n = out.node().numel();
    for (size_t i = 0; i < n; ++i) out.node().value[i] = a.value()[i] * b.value()[i];
    const int ai = a.index(), bi = b.index(), oi = out.index();
    out.node().backward = [&g, ai, bi, oi, n]() {
        Node<Real>& on = g.node(oi);
        if (g.node(ai).track) {
            for (size_t i = 0; i < n; ++i) g.node(ai).grad[i] += on.grad[i] * g.node(bi).value[i];
        }
        if (g.node(bi).track) {
            for (size_t i = 0; i < n; ++i) g.node(bi).grad[i] += on.grad[i] * g.node(ai).value[i];
        }
    };
    return out;
}

// alpha * t + beta, elementwise with scalar constants.
template <class Real>
Tensor<Real> affine(const Tensor<Real>& t, Real alpha, Real beta) {
    Graph<Real>& g = t.graph();
    Tensor<Real> out = g.make(t.rows(), t.cols(), "affine", {t});
    const size_t n = out.node().numel();
    for (size_t i = 0; i < n; ++i) out.node().value[i] = alpha * t.value()[i] + beta;
    const int ti = t.index(), oi = out.index();
    out.node().backward = [&g, ti, oi, n, alpha]() {
        if (!g.node(ti).track) return;
        for (size_t i = 0; i < n; ++i) g.node(ti).grad[i] += alpha * g.node(oi).grad[i];
    };
    return out;
}

template <class Real>
Tensor<Real> scale(const Tensor<Real>& t, Real alpha) {
    return affine(t, alpha, Real(0));
}

// Broadcast-adds a [1,n] row to every row of a [m,n] matrix.
template <class Real>
Tensor<Real> add_bias(const Tensor<Real>& a, const Tensor<Real>& bias) {
    if (bias.rows() != 1 || bias.cols() != a.cols()) {
        throw InputError("add_bias: bias " + bias.shape_str() + " does not broadcast over " +
                         a.shape_str());
    }
    Graph<Real>& g = a.graph();
    const int m = a.rows(), n = a.cols();
    Tensor<Real> out = g.make(m, n, "add_bias", {a, bias});
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            out.node().value[static_cast<size_t>(i) * n + j] =
                a.value()[static_cast<size_t>(i) * n + j] + bias.value()[j];
        }
    }
    const int ai = a.index(), bi = bias.index(), oi = out.index();
    out.node().backward = [&g, ai, bi, oi, m, n]() {
        Node<Real>& on = g.node(oi);
        if (g.node(ai).track) {
            const size_t total = static_cast<size_t>(m) * n;
            for (size_t i = 0; i < total; ++i) g.node(ai).grad[i] += on.grad[i];
        }
        if (g.node(bi).track) {
            for (int i = 0; i < m; ++i) {
                for (int j = 0; j < n; ++j) {
                    g.node(bi).grad[j] += on.grad[static_cast<size_t>(i) * n + j];
                }
            }
        }
    };
    return out;
}

template <class Real>
Tensor<Real> softmax_rows(const Tensor<Real>& a) {
    Graph<Real>& g = a.graph();
    const int m = a.rows(), n = a.cols();
    Tensor<Real> out = g.make(m, n, "softmax", {a});
    for (int i = 0; i < m; ++i) {
        const Real* x = a.value().data() + static_cast<size_t>(i) * n;
        Real* y = out.node().value.data() + static_cast<size_t>(i) * n;
        Real mx = x[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
        Real sum = Real(0);
        for (int j = 0; j < n; ++j) {
            y[j] = std::exp(x[j] - mx);
            sum += y[j];
        }
        const Real inv = Real(1) / sum;
        for (int j = 0; j < n; ++j) y[j] *= inv;
    }
    const int ai = a.index(), oi = out.index();
    out.node().backward = [&g, ai, oi, m, n]() {
        if (!g.node(ai).track) return;
        for (int i = 0; i < m; ++i) {
            const Real* y = g.node(oi).value.data() + static_cast<size_t>(i) * n;
            const Real* dy = g.node(oi).grad.data() + static_cast<size_t>(i) * n;
            Real* dx = g.node(ai).grad.data() + static_cast<size_t>(i) * n;
            Real dot = Real(0);
            for (int j = 0; j < n; ++j) dot += dy[j] * y[j];
            for (int j = 0; j < n; ++j) dx[j] += y[j] * (dy[j] - dot);
        }
    };
    return out;
}

template <class Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gain,
                        const Tensor<Real>& bias, Real eps = Real(1e-5)) {
    if (gain.rows() != 1 || gain.cols() != x.cols() || bias.rows() != 1 ||
        bias.cols() != x.cols()) {
        throw InputError("layer_norm: gain/bias " + gain.shape_str() + "/" + bias.shape_str() +
                         " do not match " + x.shape_str());
    }
    Graph<Real>& g = x.graph();
    const int m = x.rows(), n = x.cols();
    Tensor<Real> out = g.make(m, n, "layer_norm", {x, gain, bias});
    // Cache xhat and inv-std per row for the backward pass.
    auto xhat = std::make_shared<std::vector<Real>>(static_cast<size_t>(m) * n);
    auto inv_std = std::make_shared<std::vector<Real>>(m);
    for (int i = 0; i < m; ++i) {
        const Real* xr = x.value().data() + static_cast<size_t>(i) * n;
        Real mean = Real(0);
        for (int j = 0; j < n; ++j) mean += xr[j];
        mean /= Real(n);
        Real var = Real(0);
        for (int j = 0; j < n; ++j) var += (xr[j] - mean) * (xr[j] - mean);
        var /= Real(n);
        const Real inv = Real(1) / std::sqrt(var + eps);
        (*inv_std)[i] = inv;
        Real* xh = xhat->data() + static_cast<size_t>(i) * n;
        Real* y = out.node().value.data() + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            xh[j] = (xr[j] - mean) * inv;
            y[j] = xh[j] * gain.value()[j] + bias.value()[j];
        }
    }
    const int xi = x.index(), gi = gain.index(), bi = bias.index(), oi = out.index();
    out.node().backward = [&g, xi, gi, bi, oi, m, n, xhat, inv_std]() {
        Node<Real>& on = g.node(oi);
        for (int i = 0; i < m; ++i) {
            const Real* dy = on.grad.data() + static_cast<size_t>(i) * n;
            const Real* xh = xhat->data() + static_cast<size_t>(i) * n;
            if (g.node(gi).track) {
                for (int j = 0; j < n; ++j) g.node(gi).grad[j] += dy[j] * xh[j];
            }
            if (g.node(bi).track) {
                for (int j = 0; j < n; ++j) g.node(bi).grad[j] += dy[j];
            }
            if (g.node(xi).track) {
                const Real* gain_v = g.node(gi).value.data();
                Real mean_dxhat = Real(0), mean_dxhat_xhat = Real(0);
                for (int j = 0; j < n; ++j) {
                    const Real dxh = dy[j] * gain_v[j];
                    mean_dxhat += dxh;
                    mean_dxhat_xhat += dxh * xh[j];
                }
                mean_dxhat /= Real(n);
                mean_dxhat_xhat /= Real(n);
                Real* dx = g.node(xi).grad.data() + static_cast<size_t>(i) * n;
                for (int j = 0; j < n; ++j) {
                    const Real dxh = dy[j] * gain_v[j];
                    dx[j] += (*inv_std)[i] * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
                }
            }
        }
    };
    return out;
}

template <class Real>
Tensor<Real> gelu(const Tensor<Real>& a) {
    Graph<Real>& g = a.graph();
    Tensor<Real> out = g.make(a.rows(), a.cols(), "gelu", {a});
    const size_t n = out.node().numel();
    constexpr Real c = Real(0.7978845608028654);  // sqrt(2/pi)
    constexpr Real k = Real(0.044715);
    for (size_t i = 0; i < n; ++i) {
        const Real x = a.value()[i];
        const Real t = std::tanh(c * (x + k * x * x * x));
        out.node().value[i] = Real(0.5) * x * (Real(1) + t);
    }
    const int ai = a.index(), oi = out.index();
    out.node().backward = [&g, ai, oi, n]() {
        if (!g.node(ai).track) return;
        constexpr Real cc = Real(0.7978845608028654);
        constexpr Real kk = Real(0.044715);
        for (size_t i = 0; i < n; ++i) {
            const Real x = g.node(ai).value[i];
            const Real u = cc * (x + kk * x * x * x);
            const Real t = std::tanh(u);
            const Real du = cc * (Real(1) + Real(3) * kk * x * x);
            const Real d = Real(0.5) * (Real(1) + t) + Real(0.5) * x * (Real(1) - t * t) * du;
            g.node(ai).grad[i] += g.node(oi).grad[i] * d;
        }
    };
    return out;
}

// Rows of `codebook` selected by token id; gradient scatter-adds.
template <class Real>
Tensor<Real> embedding_lookup(const Tensor<Real>& codebook, std::span<const int32_t> ids) {
    Graph<Real>& g = codebook.graph();
    const int v = codebook.rows(), d = codebook.cols();
    const int m = static_cast<int>(ids.size());
    if (m < 1) throw InputError("embedding_lookup: empty id list");
    for (int32_t id : ids) {
        if (id < 0 || id >= v) {
            throw InputError("embedding_lookup: id " + std::to_string(id) +
                             " outside codebook with " + std::to_string(v) + " rows");
        }
    }
    Tensor<Real> out = g.make(m, d, "embedding_lookup", {codebook});
    auto idx = std::make_shared<std::vector<int32_t>>(ids.begin(), ids.end());
    for (int i = 0; i < m; ++i) {
        const Real* src = codebook.value().data() + static_cast<size_t>((*idx)[i]) * d;
        Real* dst = out.node().value.data() + static_cast<size_t>(i) * d;
        for (int j = 0; j < d; ++j) dst[j] = src[j];
    }
    const int ci = codebook.index(), oi = out.index();
    out.node().backward = [&g, ci, oi, m, d, idx]() {
        if (!g.node(ci).track) return;
        for (int i = 0; i < m; ++i) {
            const Real* dy = g.node(oi).grad.data() + static_cast<size_t>(i) * d;
            Real* dst = g.node(ci).grad.data() + static_cast<size_t>((*idx)[i]) * d;
            for (int j = 0; j < d; ++j) dst[j] += dy[j];
        }
    };
    return out;
}

// Row gather by position index (differentiable version of compaction).
template <class Real>
Tensor<Real> gather_rows(const Tensor<Real>& t, std::span<const int> rows) {
    Graph<Real>& g = t.graph();
    const int m = static_cast<int>(rows.size());
    const int n = t.cols();
    if (m < 1) throw InputError("gather_rows: empty row list");
    for (int r : rows) {
        if (r < 0 || r >= t.rows()) {
            throw InputError("gather_rows: row " + std::to_string(r) + " outside " +
                             t.shape_str());
        }
    }
    Tensor<Real> out = g.make(m, n, "gather_rows", {t});
    auto idx = std::make_shared<std::vector<int>>(rows.begin(), rows.end());
    for (int i = 0; i < m; ++i) {
        const Real* src = t.value().data() + static_cast<size_t>((*idx)[i]) * n;
        Real* dst = out.node().value.data() + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) dst[j] = src[j];
    }
    const int ti = t.index(), oi = out.index();
    out.node().backward = [&g, ti, oi, m, n, idx]() {
        if (!g.node(ti).track) return;
        for (int i = 0; i < m; ++i) {
            const Real* dy = g.node(oi).grad.data() + static_cast<size_t>(i) * n;
            Real* dst = g.node(ti).grad.data() + static_cast<size_t>((*idx)[i]) * n;
            for (int j = 0; j < n; ++j) dst[j] += dy[j];
        }
    };
    return out;
}

template <class Real>
Tensor<Real> concat_rows(const std::vector<Tensor<Real>>& parts) {
    if (parts.empty()) throw InputError("concat_rows: no inputs");
    Graph<Real>& g = parts[0].graph();
    const int n = parts[0].cols();
    int m = 0;
    for (const auto& p : parts) {
        if (p.cols() != n) {
            throw InputError("concat_rows: column mismatch " + parts[0].shape_str() + " vs " +
                             p.shape_str());
        }
        m += p.rows();
    }
    Tensor<Real> out = g.make_multi(m, n, "concat_rows", parts);
    size_t offset = 0;
    for (const auto& p : parts) {
        const size_t len = p.node().numel();
        for (size_t i = 0; i < len; ++i) out.node().value[offset + i] = p.value()[i];
        offset += len;
    }
    auto indices = std::make_shared<std::vector<int>>();
    for (const auto& p : parts) indices->push_back(p.index());
    const int oi = out.index();
    out.node().backward = [&g, oi, indices]() {
        size_t off = 0;
        for (int pi : *indices) {
            Node<Real>& pn = g.node(pi);
            const size_t len = pn.value.size();
            if (pn.track) {
                for (size_t i = 0; i < len; ++i) pn.grad[i] += g.node(oi).grad[off + i];
            }
            off += len;
        }
    };
    return out;
}

template <class Real>
Tensor<Real> concat_rows(std::initializer_list<Tensor<Real>> parts) {
    return concat_rows(std::vector<Tensor<Real>>(parts));
}

template <class Real>
Tensor<Real> transpose(const Tensor<Real>& a) {
    Graph<Real>& g = a.graph();
    const int m = a.rows(), n = a.cols();
    Tensor<Real> out = g.make(n, m, "transpose", {a});
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            out.node().value[static_cast<size_t>(j) * m + i] =
                a.value()[static_cast<size_t>(i) * n + j];
        }
    }
    const int ai = a.index(), oi = out.index();
    out.node().backward = [&g, ai, oi, m, n]() {
        if (!g.node(ai).track) return;
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < n; ++j) {
                g.node(ai).grad[static_cast<size_t>(i) * n + j] +=
                    g.node(oi).grad[static_cast<size_t>(j) * m + i];
            }
        }
    };
    return out;
}

template <class Real>
Tensor<Real> slice_cols(const Tensor<Real>& a, int c0, int c1) {
    if (c0 < 0 || c1 > a.cols() || c0 >= c1) {
        throw InputError("slice_cols: range [" + std::to_string(c0) + ", " + std::to_string(c1) +
                         ") invalid for " + a.shape_str());
    }
    Graph<Real>& g = a.graph();
    const int m = a.rows(), n = a.cols(), w = c1 - c0;
    Tensor<Real> out = g.make(m, w, "slice_cols", {a});
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < w; ++j) {
            out.node().value[static_cast<size_t>(i) * w + j] =
                a.value()[static_cast<size_t>(i) * n + c0 + j];
        }
    }
    const int ai = a.index(), oi = out.index();
    out.node().backward = [&g, ai, oi, m, n, w, c0]() {
        if (!g.node(ai).track) return;
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < w; ++j) {
                g.node(ai).grad[static_cast<size_t>(i) * n + c0 + j] +=
                    g.node(oi).grad[static_cast<size_t>(i) * w + j];
            }
        }
    };
    return out;
}

// Adds a large negative constant above the diagonal; softmax then zeroes
// attention to future positions.
template <class Real>
Tensor<Real> causal_mask(const Tensor<Real>& scores) {
    if (scores.rows() != scores.cols()) {
        throw InputError("causal_mask: expected square scores, got " + scores.shape_str());
    }
    Graph<Real>& g = scores.graph();
    const int m = scores.rows();
    Tensor<Real> out = g.make(m, m, "causal_mask", {scores});
    constexpr Real neg = Real(-1e30);
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < m; ++j) {
            out.node().value[static_cast<size_t>(i) * m + j] =
                scores.value()[static_cast<size_t>(i) * m + j] + (j > i ? neg : Real(0));
        }
    }
    const int si = scores.index(), oi = out.index();
    out.node().backward = [&g, si, oi, m]() {
        if (!g.node(si).track) return;
        const size_t total = static_cast<size_t>(m) * m;
        for (size_t i = 0; i < total; ++i) g.node(si).grad[i] += g.node(oi).grad[i];
    };
    return out;
}

// Weighted mean over rows; weights are fixed (not differentiated).
template <class Real>
Tensor<Real> mean_pool(const Tensor<Real>& x, std::span<const Real> weights) {
    Graph<Real>& g = x.graph();
    const int m = x.rows(), n = x.cols();
    if (static_cast<int>(weights.size()) != m) {
        throw InputError("mean_pool: weight count " + std::to_string(weights.size()) +
                         " does not match rows of " + x.shape_str());
    }
    Real wsum = Real(0);
    for (Real w : weights) wsum += w;
    if (!(wsum > Real(0))) throw InputError("mean_pool: weights must sum to a positive value");
    Tensor<Real> out = g.make(1, n, "mean_pool", {x});
    auto wnorm = std::make_shared<std::vector<Real>>(m);
    for (int i = 0; i < m; ++i) (*wnorm)[i] = weights[i] / wsum;
    for (int i = 0; i < m; ++i) {
        const Real* xr = x.value().data() + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) out.node().value[j] += (*wnorm)[i] * xr[j];
    }
    const int xi = x.index(), oi = out.index();
    out.node().backward = [&g, xi, oi, m, n, wnorm]() {
        if (!g.node(xi).track) return;
        for (int i = 0; i < m; ++i) {
            Real* dx = g.node(xi).grad.data() + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) dx[j] += (*wnorm)[i] * g.node(oi).grad[j];
        }
    };
    return out;
}

template <class Real>
Tensor<Real> mean_pool(const Tensor<Real>& x, const std::vector<Real>& weights) {
    return mean_pool(x, std::span<const Real>(weights.data(), weights.size()));
}

template <class Real>
Tensor<Real> mean_all(const Tensor<Real>& x) {
    Graph<Real>& g = x.graph();
    Tensor<Real> out = g.make(1, 1, "mean", {x});
    const size_t n = x.node().numel();
    Real s = Real(0);
    for (size_t i = 0; i < n; ++i) s += x.value()[i];
    out.node().value[0] = s / Real(n);
    const int xi = x.index(), oi = out.index();
    out.node().backward = [&g, xi, oi, n]() {
        if (!g.node(xi).track) return;
        const Real d = g.node(oi).grad[0] / Real(n);
        for (size_t i = 0; i < n; ++i) g.node(xi).grad[i] += d;
    };
    return out;
}

template <class Real>
Tensor<Real> l2_norm(const Tensor<Real>& x) {
    Graph<Real>& g = x.graph();
    Tensor<Real> out = g.make(1, 1, "l2_norm", {x});
    const size_t n = x.node().numel();
    Real s = Real(0);
    for (size_t i = 0; i < n; ++i) s += x.value()[i] * x.value()[i];
    const Real norm = std::sqrt(s);
    out.node().value[0] = norm;
    const int xi = x.index(), oi = out.index();
    out.node().backward = [&g, xi, oi, n, norm]() {
        if (!g.node(xi).track) return;
        const Real inv = Real(1) / std::max(norm, Real(1e-30));
        const Real d = g.node(oi).grad[0];
        for (size_t i = 0; i < n; ++i) g.node(xi).grad[i] += d * g.node(xi).value[i] * inv;
    };
    return out;
}

// Sum of elementwise squared differences.
template <class Real>
Tensor<Real> squared_error(const Tensor<Real>& a, const Tensor<Real>& b) {
    detail::require_same_shape(a, b, "squared_error");
    Graph<Real>& g = a.graph();
    Tensor<Real> out = g.make(1, 1, "squared_error", {a, b});
    const size_t n = a.node().numel();
    Real s = Real(0);
    for (size_t i = 0; i < n; ++i) {
        const Real d = a.value()[i] - b.value()[i];
        s += d * d;
    }
    out.node().value[0] = s;
    const int ai = a.index(), bi = b.index(), oi = out.index();
    out.node().backward = [&g, ai, bi, oi, n]() {
        const Real d = g.node(oi).grad[0];
        for (size_t i = 0; i < n; ++i) {
            const Real diff = g.node(ai).value[i] - g.node(bi).value[i];
            if (g.node(ai).track) g.node(ai).grad[i] += Real(2) * diff * d;
            if (g.node(bi).track) g.node(bi).grad[i] -= Real(2) * diff * d;
        }
    };
    return out;
}

constexpr double kCosineEps = 1e-12;

// cos(a, b) over flattened values, epsilon-guarded denominator.
template <class Real>
Tensor<Real> cosine_similarity(const Tensor<Real>& a, const Tensor<Real>& b) {
    detail::require_same_shape(a, b, "cosine_similarity");
    Graph<Real>& g = a.graph();
    Tensor<Real> out = g.make(1, 1, "cosine_similarity", {a, b});
    const size_t n = a.node().numel();
    Real dot = Real(0), na2 = Real(0), nb2 = Real(0);
    for (size_t i = 0; i < n; ++i) {
        dot += a.value()[i] * b.value()[i];
        na2 += a.value()[i] * a.value()[i];
        nb2 += b.value()[i] * b.value()[i];
    }
    const Real na = std::sqrt(na2), nb = std::sqrt(nb2);
    const Real den = na * nb + Real(kCosineEps);
    const Real cosv = dot / den;
    out.node().value[0] = cosv;
    const int ai = a.index(), bi = b.index(), oi = out.index();
    out.node().backward = [&g, ai, bi, oi, n, na, nb, den, cosv]() {
        const Real d = g.node(oi).grad[0];
        const Real tiny = Real(1e-30);
        if (g.node(ai).track) {
            const Real coef = (na > tiny) ? cosv * nb / (na * den) : Real(0);
            for (size_t i = 0; i < n; ++i) {
                g.node(ai).grad[i] +=
                    d * (g.node(bi).value[i] / den - coef * g.node(ai).value[i]);
            }
        }
        if (g.node(bi).track) {
            const Real coef = (nb > tiny) ? cosv * na / (nb * den) : Real(0);
            for (size_t i = 0; i < n; ++i) {
                g.node(bi).grad[i] +=
                    d * (g.node(ai).value[i] / den - coef * g.node(bi).value[i]);
            }
        }
    };
    return out;
}

// Forward value passes through unchanged; gradient stops here.
template <class Real>
Tensor<Real> stop_gradient(const Tensor<Real>& t) {
    Graph<Real>& g = t.graph();
    return g.constant(t.rows(), t.cols(),
                      std::span<const Real>(t.value().data(), t.value().size()), "stop_gradient");
}

// sg(hard - soft) + soft, fused: the forward value is a verbatim copy of
// `hard` (no reassociation), the gradient passes to `soft` unchanged and the
// hard branch receives none.
template <class Real>
Tensor<Real> straight_through(const Tensor<Real>& hard, const Tensor<Real>& soft) {
    detail::require_same_shape(hard, soft, "straight_through");
    Graph<Real>& g = hard.graph();
    Tensor<Real> out = g.make_tracked(hard.rows(), hard.cols(), "straight_through",
                                      soft.tracked());
    out.node().value = hard.value();
    const int si = soft.index(), oi = out.index();
    const size_t n = out.node().numel();
    out.node().backward = [&g, si, oi, n]() {
        if (!g.node(si).track) return;
        for (size_t i = 0; i < n; ++i) g.node(si).grad[i] += g.node(oi).grad[i];
    };
    return out;
}

// Mean cross-entropy of rows against integer targets with label smoothing.
template <class Real>
Tensor<Real> cross_entropy_rows(const Tensor<Real>& logits, std::span<const int32_t> targets,
                                Real label_smooth = Real(0)) {
    Graph<Real>& g = logits.graph();
    const int m = logits.rows(), n = logits.cols();
    if (static_cast<int>(targets.size()) != m) {
        throw InputError("cross_entropy_rows: target count " + std::to_string(targets.size()) +
                         " does not match rows of " + logits.shape_str());
    }
    for (int32_t t : targets) {
        if (t < 0 || t >= n) {
            throw InputError("cross_entropy_rows: target " + std::to_string(t) +
                             " outside [0, " + std::to_string(n) + ")");
        }
    }
    Tensor<Real> out = g.make(1, 1, "cross_entropy", {logits});
    auto probs = std::make_shared<std::vector<Real>>(static_cast<size_t>(m) * n);
    auto tgt = std::make_shared<std::vector<int32_t>>(targets.begin(), targets.end());
    Real total = Real(0);
    for (int i = 0; i < m; ++i) {
        const Real* x = logits.value().data() + static_cast<size_t>(i) * n;
        Real* p = probs->data() + static_cast<size_t>(i) * n;
        Real mx = x[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
        Real sum = Real(0);
        for (int j = 0; j < n; ++j) {
            p[j] = std::exp(x[j] - mx);
            sum += p[j];
        }
        const Real inv = Real(1) / sum;
        Real mean_logit = Real(0);
        for (int j = 0; j < n; ++j) {
            p[j] *= inv;
            mean_logit += x[j];
        }
        mean_logit /= Real(n);
        const Real lse = std::log(sum) + mx;
        total += lse - (Real(1) - label_smooth) * x[(*tgt)[i]] - label_smooth * mean_logit;
    }
    out.node().value[0] = total / Real(m);
    const int li = logits.index(), oi = out.index();
    out.node().backward = [&g, li, oi, m, n, probs, tgt, label_smooth]() {
        if (!g.node(li).track) return;
        const Real d = g.node(oi).grad[0] / Real(m);
        for (int i = 0; i < m; ++i) {
            const Real* p = probs->data() + static_cast<size_t>(i) * n;
            Real* dx = g.node(li).grad.data() + static_cast<size_t>(i) * n;
            const Real uniform = label_smooth / Real(n);
            for (int j = 0; j < n; ++j) {
                Real q = uniform;
                if (j == (*tgt)[i]) q += Real(1) - label_smooth;
                dx[j] += d * (p[j] - q);
            }
        }
    };
    return out;
}

// Mixes codebook rows by weight rows; thin alias kept for readability at
// call sites that implement soft embeddings.
template <class Real>
Tensor<Real> embedding_mix(const Tensor<Real>& weights, const Tensor<Real>& codebook) {
    return matmul(weights, codebook);
}

}  // namespace tokcode::ad
