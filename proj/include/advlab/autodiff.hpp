#pragma once

// Reverse-mode automatic differentiation over Tensor values.
//
// Every operation on tracked Vars appends a node to a dynamic graph. Node
// sequence numbers give the evaluation order, so the set of nodes reachable
// from a root, sorted by descending sequence number, is exactly the tape to
// replay backward. Backward rules are themselves written with Var operations:
// when a backward pass runs with create_graph=true those operations are
// recorded too and the resulting gradients can be differentiated again.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "errors.hpp"
#include "tensor.hpp"

namespace advlab {

class Var;

/// Receives the op's output and the incoming gradient; returns one gradient per input
/// (an empty Var for inputs that receive none).
using BackwardFn = std::function<std::vector<Var>(const Var& out, const Var& grad)>;

struct Node {
    Tensor value;
    bool requires_grad = false;
    std::vector<Var> inputs;
    BackwardFn backward;
    bool differentiable_backward = true;
    const char* op = "const";
    std::uint64_t seq = 0;
};

struct Counters {
    std::uint64_t model_forwards = 0;
    std::uint64_t backward_passes = 0;
    std::uint64_t attack_calls = 0;
};

/// Per-thread instrumentation used to check pass-count contracts.
inline Counters& counters() {
    thread_local Counters c;
    return c;
}

namespace detail {
inline bool& recording() {
    thread_local bool on = true;
    return on;
}
inline std::uint64_t next_seq() {
    thread_local std::uint64_t s = 0;
    return ++s;
}
}  // namespace detail

/// Disables graph recording in its scope (restores the previous state on exit).
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::recording()) { detail::recording() = false; }
    ~NoGradGuard() { detail::recording() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

class RecordingGuard {
public:
    explicit RecordingGuard(bool on) : prev_(detail::recording()) { detail::recording() = on; }
    ~RecordingGuard() { detail::recording() = prev_; }
    RecordingGuard(const RecordingGuard&) = delete;
    RecordingGuard& operator=(const RecordingGuard&) = delete;

private:
    bool prev_;
};

/// Handle to a graph node. Copies share the node.
class Var {
public:
    Var() = default;

    static Var constant(Tensor t) {
        auto n = std::make_shared<Node>();
        n->value = std::move(t);
        n->seq = detail::next_seq();
        return Var(std::move(n));
    }

    /// A tracked leaf: gradients can be requested with respect to it.
    static Var leaf(Tensor t) {
        auto n = std::make_shared<Node>();
        n->value = std::move(t);
        n->requires_grad = true;
        n->op = "leaf";
        n->seq = detail::next_seq();
        return Var(std::move(n));
    }

    bool defined() const noexcept { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    std::size_t size() const { return node_->value.size(); }
    bool tracked() const noexcept { return node_ && node_->requires_grad; }
    const Node* node() const noexcept { return node_.get(); }
    const std::shared_ptr<Node>& node_ptr() const noexcept { return node_; }
    double item() const { return node_->value.item(); }

    explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

private:
    std::shared_ptr<Node> node_;
};

/// Creates an op result. When recording is off or no input is tracked the result is a constant.
/// Custom ops whose backward cannot itself be differentiated pass differentiable_backward=false;
/// exact second-order requests through them raise CapabilityError.
inline Var make_op(const char* name, Tensor value, std::vector<Var> inputs, BackwardFn backward,
                   bool differentiable_backward = true) {
    if (!value.all_finite()) throw NumericalError(std::string(name) + ": produced a non-finite value");
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->op = name;
    n->seq = detail::next_seq();
    const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Var& v) { return v.tracked(); });
    if (detail::recording() && any) {
        n->requires_grad = true;
        n->inputs = std::move(inputs);
        n->backward = std::move(backward);
        n->differentiable_backward = differentiable_backward;
    }
    return Var(std::move(n));
}

inline Var detach(const Var& v) { return Var::constant(v.value()); }

// ---- forward ops -------------------------------------------------------------------------

inline Var operator+(const Var& a, const Var& b);
inline Var operator-(const Var& a, const Var& b);
inline Var operator*(const Var& a, const Var& b);
inline Var operator/(const Var& a, const Var& b);
inline Var operator-(const Var& a);
inline Var operator*(const Var& a, double s);
inline Var operator+(const Var& a, double s);
inline Var sum(const Var& a);
inline Var expand(const Var& scalar, const Shape& shape);
inline Var reshape(const Var& a, const Shape& shape);
inline Var row_sum(const Var& a);
inline Var col_sum(const Var& a);
inline Var broadcast_cols(const Var& col, std::size_t cols);
inline Var broadcast_rows(const Var& row, std::size_t rows);
inline Var index_select(const Var& a, std::shared_ptr<const std::vector<std::ptrdiff_t>> idx, const Shape& out_shape);
inline Var scatter_add(const Var& a, std::shared_ptr<const std::vector<std::ptrdiff_t>> idx, const Shape& out_shape);
inline Var sigmoid(const Var& a);

inline Var operator*(double s, const Var& a) { return a * s; }
inline Var operator+(double s, const Var& a) { return a + s; }
inline Var operator-(const Var& a, double s) { return a + (-s); }

namespace detail {
/// Reduces a broadcast gradient back to a scalar operand's shape.
inline Var unbroadcast(const Var& g, const Shape& target) {
    if (g.shape() == target) return g;
    return reshape(sum(g), target);
}
inline Var mask_mul(const Var& g, Tensor mask) { return g * Var::constant(std::move(mask)); }
}  // namespace detail

inline Var operator+(const Var& a, const Var& b) {
    Tensor v = kernels::zip(a.value(), b.value(), [](double x, double y) { return x + y; }, "add");
    Shape sa = a.shape(), sb = b.shape();
    return make_op("add", std::move(v), {a, b}, [sa, sb](const Var&, const Var& g) {
        return std::vector<Var>{detail::unbroadcast(g, sa), detail::unbroadcast(g, sb)};
    });
}

inline Var operator-(const Var& a, const Var& b) {
    Tensor v = kernels::zip(a.value(), b.value(), [](double x, double y) { return x - y; }, "sub");
    Shape sa = a.shape(), sb = b.shape();
    return make_op("sub", std::move(v), {a, b}, [sa, sb](const Var&, const Var& g) {
        return std::vector<Var>{detail::unbroadcast(g, sa), detail::unbroadcast(-g, sb)};
    });
}

inline Var operator*(const Var& a, const Var& b) {
    Tensor v = kernels::zip(a.value(), b.value(), [](double x, double y) { return x * y; }, "mul");
    return make_op("mul", std::move(v), {a, b}, [](const Var& out, const Var& g) {
        const Var& x = out.node()->inputs[0];
        const Var& y = out.node()->inputs[1];
        std::vector<Var> r(2);
        if (x.tracked()) r[0] = detail::unbroadcast(g * y, x.shape());
        if (y.tracked()) r[1] = detail::unbroadcast(g * x, y.shape());
        return r;
    });
}

inline Var operator/(const Var& a, const Var& b) {
    Tensor v = kernels::zip(a.value(), b.value(), [](double x, double y) { return x / y; }, "div");
    return make_op("div", std::move(v), {a, b}, [](const Var& out, const Var& g) {
        const Var& x = out.node()->inputs[0];
        const Var& y = out.node()->inputs[1];
        std::vector<Var> r(2);
        if (x.tracked()) r[0] = detail::unbroadcast(g / y, x.shape());
        if (y.tracked()) r[1] = detail::unbroadcast(-(g * out) / y, y.shape());
        return r;
    });
}

inline Var operator-(const Var& a) {
    return make_op("neg", kernels::map(a.value(), [](double x) { return -x; }), {a},
                   [](const Var&, const Var& g) { return std::vector<Var>{-g}; });
}

inline Var operator*(const Var& a, double s) {
    return make_op("scale", kernels::map(a.value(), [s](double x) { return x * s; }), {a},
                   [s](const Var&, const Var& g) { return std::vector<Var>{g * s}; });
}

inline Var operator+(const Var& a, double s) {
    return make_op("add_scalar", kernels::map(a.value(), [s](double x) { return x + s; }), {a},
                   [](const Var&, const Var& g) { return std::vector<Var>{g}; });
}

/// op(a) * op(b); the transpose flags avoid materializing transposes in backward rules.
inline Var matmul(const Var& a, const Var& b, bool ta = false, bool tb = false) {
    Tensor v = kernels::matmul(a.value(), b.value(), ta, tb);
    return make_op("matmul", std::move(v), {a, b}, [ta, tb](const Var& out, const Var& g) {
        const Var& x = out.node()->inputs[0];
        const Var& y = out.node()->inputs[1];
        std::vector<Var> r(2);
        if (x.tracked()) r[0] = ta ? matmul(y, g, tb, true) : matmul(g, y, false, !tb);
        if (y.tracked()) r[1] = tb ? matmul(g, x, true, ta) : matmul(x, g, !ta, false);
        return r;
    });
}

/// relu'(0) = 0.
inline Var relu(const Var& a) {
    return make_op("relu", kernels::map(a.value(), [](double x) { return x > 0.0 ? x : 0.0; }), {a},
                   [](const Var& out, const Var& g) {
                       const Var& x = out.node()->inputs[0];
                       return std::vector<Var>{
                           detail::mask_mul(g, kernels::map(x.value(), [](double t) { return t > 0.0 ? 1.0 : 0.0; }))};
                   });
}

inline Var sigmoid(const Var& a) {
    return make_op("sigmoid", kernels::map(a.value(), [](double x) { return advlab::sigmoid(x); }), {a},
                   [](const Var& out, const Var& g) { return std::vector<Var>{g * (out - out * out)}; });
}

inline Var softplus(const Var& a) {
    return make_op("softplus", kernels::map(a.value(), [](double x) { return advlab::softplus(x); }), {a},
                   [](const Var& out, const Var& g) {
                       return std::vector<Var>{g * sigmoid(out.node()->inputs[0])};
                   });
}

inline Var exp(const Var& a) {
    return make_op("exp", kernels::map(a.value(), [](double x) { return std::exp(x); }), {a},
                   [](const Var& out, const Var& g) { return std::vector<Var>{g * out}; });
}

inline Var log(const Var& a) {
    for (double v : a.value().data())
        if (!(v > 0.0)) throw NumericalError("log: argument must be positive");
    return make_op("log", kernels::map(a.value(), [](double x) { return std::log(x); }), {a},
                   [](const Var& out, const Var& g) { return std::vector<Var>{g / out.node()->inputs[0]}; });
}

inline Var abs(const Var& a) {
    return make_op("abs", kernels::map(a.value(), [](double x) { return std::abs(x); }), {a},
                   [](const Var& out, const Var& g) {
                       const Var& x = out.node()->inputs[0];
                       return std::vector<Var>{
                           detail::mask_mul(g, kernels::map(x.value(), [](double t) { return advlab::sign(t); }))};
                   });
}

inline Var square(const Var& a) { return a * a; }

/// Gradient passes where lo <= x <= hi.
inline Var clamp(const Var& a, double lo, double hi) {
    return make_op("clamp", kernels::map(a.value(), [lo, hi](double x) { return std::min(std::max(x, lo), hi); }), {a},
                   [lo, hi](const Var& out, const Var& g) {
                       const Var& x = out.node()->inputs[0];
                       return std::vector<Var>{detail::mask_mul(
                           g, kernels::map(x.value(), [lo, hi](double t) { return (t >= lo && t <= hi) ? 1.0 : 0.0; }))};
                   });
}

inline Var sum(const Var& a) {
    Shape s = a.shape();
    return make_op("sum", Tensor::scalar(kernels::sum(a.value())), {a},
                   [s](const Var&, const Var& g) { return std::vector<Var>{expand(g, s)}; });
}

inline Var mean(const Var& a) { return sum(a) * (1.0 / static_cast<double>(a.size())); }

inline Var expand(const Var& scalar, const Shape& shape) {
    if (!scalar.value().is_scalar()) throw ShapeError("expand: operand must be scalar, got " + shape_str(scalar.shape()));
    Shape s = scalar.shape();
    return make_op("expand", Tensor(shape, scalar.value()[0]), {scalar},
                   [s](const Var&, const Var& g) { return std::vector<Var>{reshape(sum(g), s)}; });
}

inline Var reshape(const Var& a, const Shape& shape) {
    Shape s = a.shape();
    return make_op("reshape", a.value().reshaped(shape), {a},
                   [s](const Var&, const Var& g) { return std::vector<Var>{reshape(g, s)}; });
}

namespace detail {
inline void require_matrix(const Var& a, const char* op) {
    if (a.value().rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
}
}  // namespace detail

/// [M, C] -> [M, 1]
inline Var row_sum(const Var& a) {
    detail::require_matrix(a, "row_sum");
    const std::size_t m = a.shape()[0], c = a.shape()[1];
    Tensor out({m, 1});
    for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += a.value().at(i, j);
        out[i] = s;
    }
    return make_op("row_sum", std::move(out), {a},
                   [c](const Var&, const Var& g) { return std::vector<Var>{broadcast_cols(g, c)}; });
}

/// [M, C] -> [1, C]
inline Var col_sum(const Var& a) {
    detail::require_matrix(a, "col_sum");
    const std::size_t m = a.shape()[0], c = a.shape()[1];
    Tensor out({1, c});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j] += a.value().at(i, j);
    return make_op("col_sum", std::move(out), {a},
                   [m](const Var&, const Var& g) { return std::vector<Var>{broadcast_rows(g, m)}; });
}

/// [M, 1] -> [M, C]
inline Var broadcast_cols(const Var& col, std::size_t cols) {
    if (col.value().rank() != 2 || col.shape()[1] != 1)
        throw ShapeError("broadcast_cols: expected [M,1], got " + shape_str(col.shape()));
    const std::size_t m = col.shape()[0];
    Tensor out({m, cols});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < cols; ++j) out.at(i, j) = col.value()[i];
    return make_op("broadcast_cols", std::move(out), {col},
                   [](const Var&, const Var& g) { return std::vector<Var>{row_sum(g)}; });
}

/// [1, C] -> [M, C]
inline Var broadcast_rows(const Var& row, std::size_t rows) {
    if (row.value().rank() != 2 || row.shape()[0] != 1)
        throw ShapeError("broadcast_rows: expected [1,C], got " + shape_str(row.shape()));
    const std::size_t c = row.shape()[1];
    Tensor out({rows, c});
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < c; ++j) out.at(i, j) = row.value()[j];
    return make_op("broadcast_rows", std::move(out), {row},
                   [](const Var&, const Var& g) { return std::vector<Var>{col_sum(g)}; });
}

/// Adds a bias vector [C] to every row of x [M, C].
inline Var add_rowwise(const Var& x, const Var& bias) {
    detail::require_matrix(x, "add_rowwise");
    if (bias.size() != x.shape()[1])
        throw ShapeError("add_rowwise: bias " + shape_str(bias.shape()) + " does not match rows of " +
                         shape_str(x.shape()));
    return x + broadcast_rows(reshape(bias, {1, bias.size()}), x.shape()[0]);
}

/// out[k] = a.flat[idx[k]], or 0 where idx[k] < 0.
inline Var index_select(const Var& a, std::shared_ptr<const std::vector<std::ptrdiff_t>> idx, const Shape& out_shape) {
    if (idx->size() != numel(out_shape)) throw ShapeError("index_select: index count does not match output shape");
    Tensor out(out_shape);
    const auto in = a.value().data();
    for (std::size_t k = 0; k < idx->size(); ++k) {
        const auto i = (*idx)[k];
        if (i >= 0) {
            if (static_cast<std::size_t>(i) >= in.size()) throw ShapeError("index_select: index out of range");
            out[k] = in[static_cast<std::size_t>(i)];
        }
    }
    Shape s = a.shape();
    return make_op("index_select", std::move(out), {a}, [idx, s](const Var&, const Var& g) {
        return std::vector<Var>{scatter_add(g, idx, s)};
    });
}

/// Adjoint of index_select: out.flat[idx[k]] += a[k].
inline Var scatter_add(const Var& a, std::shared_ptr<const std::vector<std::ptrdiff_t>> idx, const Shape& out_shape) {
    if (idx->size() != a.size()) throw ShapeError("scatter_add: index count does not match operand");
    Tensor out(out_shape);
    for (std::size_t k = 0; k < idx->size(); ++k) {
        const auto i = (*idx)[k];
        if (i >= 0) out[static_cast<std::size_t>(i)] += a.value()[k];
    }
    Shape s = a.shape();
    return make_op("scatter_add", std::move(out), {a}, [idx, s](const Var&, const Var& g) {
        return std::vector<Var>{index_select(g, idx, s)};
    });
}

/// Row-wise maximum [M, C] -> [M, 1]; the gradient goes to the first maximal entry.
inline Var row_max(const Var& a) {
    detail::require_matrix(a, "row_max");
    const std::size_t m = a.shape()[0], c = a.shape()[1];
    if (c == 0) throw ShapeError("row_max: empty rows");
    Tensor out({m, 1});
    auto idx = std::make_shared<std::vector<std::ptrdiff_t>>(m);
    for (std::size_t i = 0; i < m; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < c; ++j)
            if (a.value().at(i, j) > a.value().at(i, best)) best = j;
        out[i] = a.value().at(i, best);
        (*idx)[i] = static_cast<std::ptrdiff_t>(i * c + best);
    }
    Shape s = a.shape();
    return make_op("row_max", std::move(out), {a}, [idx, s](const Var&, const Var& g) {
        return std::vector<Var>{scatter_add(g, idx, s)};
    });
}

// ---- backward ----------------------------------------------------------------------------

/// d(root)/d(leaf) for each leaf. With create_graph the returned gradients are themselves
/// tracked and can be differentiated again.
inline std::vector<Var> grad_vars(const Var& root, const std::vector<Var>& leaves, bool create_graph = false) {
    if (!root.defined() || !root.value().is_scalar())
        throw ShapeError("grad: root must be a scalar, got " + (root.defined() ? shape_str(root.shape()) : "undefined"));
    for (const auto& l : leaves)
        if (!l.tracked()) throw InvalidArgument("grad: leaf is not tracked on the tape");
    if (!root.tracked()) throw InvalidArgument("grad: root was not produced on the live tape");
    ++counters().backward_passes;

    std::vector<const Node*> order;
    std::unordered_map<const Node*, Var> handles;
    {
        std::vector<Var> stack{root};
        handles.emplace(root.node(), root);
        while (!stack.empty()) {
            Var v = stack.back();
            stack.pop_back();
            order.push_back(v.node());
            for (const auto& in : v.node()->inputs)
                if (in.tracked() && handles.emplace(in.node(), in).second) stack.push_back(in);
        }
    }
    std::sort(order.begin(), order.end(), [](const Node* a, const Node* b) { return a->seq > b->seq; });

    std::unordered_map<const Node*, Var> grads;
    {
        RecordingGuard rec(create_graph);
        grads.emplace(root.node(), Var::constant(Tensor(root.shape(), 1.0)));
        for (const Node* n : order) {
            auto it = grads.find(n);
            if (it == grads.end() || !n->backward) continue;
            if (create_graph && !n->differentiable_backward)
                throw CapabilityError(std::string("exact higher-order gradient requested through op '") + n->op +
                                      "' whose backward pass is not differentiable");
            const Var g = it->second;
            const Var& out = handles.at(n);
            std::vector<Var> in_grads = n->backward(out, g);
            for (std::size_t i = 0; i < n->inputs.size(); ++i) {
                const Var& in = n->inputs[i];
                if (!in.tracked() || i >= in_grads.size() || !in_grads[i].defined()) continue;
                if (in_grads[i].shape() != in.shape())
                    throw ShapeError(std::string("grad: backward of '") + n->op + "' produced " +
                                     shape_str(in_grads[i].shape()) + " for input " + shape_str(in.shape()));
                auto [slot, fresh] = grads.emplace(in.node(), in_grads[i]);
                if (!fresh) slot->second = slot->second + in_grads[i];
            }
        }
    }

    std::vector<Var> result;
    result.reserve(leaves.size());
    for (const auto& l : leaves) {
        auto it = grads.find(l.node());
        result.push_back(it == grads.end() ? Var::constant(Tensor(l.shape())) : it->second);
    }
    return result;
}

inline std::vector<Tensor> grad(const Var& root, const std::vector<Var>& leaves) {
    auto gs = grad_vars(root, leaves, false);
    std::vector<Tensor> out;
    out.reserve(gs.size());
    for (auto& g : gs) out.push_back(g.value());
    return out;
}

enum class HvpMode { exact, finite_diff };

using ScalarFn = std::function<Var(const Var&)>;

/// H v for H = d^2 root / d leaf^2, by differentiating the recorded backward pass.
inline Tensor hvp(const Var& root, const Var& leaf, const Tensor& v) {
    if (v.shape() != leaf.shape())
        throw ShapeError("hvp: direction " + shape_str(v.shape()) + " does not match leaf " + shape_str(leaf.shape()));
    Var g = grad_vars(root, {leaf}, true)[0];
    if (!g.tracked()) return Tensor(leaf.shape());  // gradient independent of the leaf: H = 0
    Var s = sum(g * Var::constant(v));
    if (!s.tracked()) return Tensor(leaf.shape());
    return grad(s, {leaf})[0];
}

/// H v for the scalar function f at x. finite_diff uses central differences of gradients
/// with h = 1e-4 (1 + |x|_inf).
inline Tensor hvp(const ScalarFn& f, const Tensor& x, const Tensor& v, HvpMode mode) {
    if (v.shape() != x.shape())
        throw ShapeError("hvp: direction " + shape_str(v.shape()) + " does not match point " + shape_str(x.shape()));
    if (mode == HvpMode::exact) {
        Var leaf = Var::leaf(x);
        return hvp(f(leaf), leaf, v);
    }
    const double h = 1e-4 * (1.0 + kernels::norm_inf(x.data()));
    auto grad_at = [&](double sgn) {
        Tensor p = x;
        for (std::size_t i = 0; i < p.size(); ++i) p[i] += sgn * h * v[i];
        Var leaf = Var::leaf(std::move(p));
        Var r = f(leaf);
        if (!r.tracked()) return Tensor(x.shape());
        return grad(r, {leaf})[0];
    };
    Tensor gp = grad_at(1.0);
    Tensor gm = grad_at(-1.0);
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (gp[i] - gm[i]) / (2.0 * h);
    return out;
}

}  // namespace advlab
