#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "advlab/advlab.hpp"

namespace advlab::testing {

/// Uniform tensor from a seeded stream.
inline Tensor random_tensor(const Shape& s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    Tensor t(s);
    for (auto& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

inline Model softplus_mlp(std::vector<std::size_t> sizes, std::uint64_t seed) {
    ModelSpec s;
    s.sizes = std::move(sizes);
    s.activation = Activation::softplus;
    s.seed = seed;
    return init_model(s);
}

inline std::vector<int> random_labels(std::size_t m, std::size_t classes, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<int> y(m);
    for (auto& v : y) v = static_cast<int>(rng.below(classes));
    return y;
}

/// Central differences of a scalar function of one tensor.
inline Tensor fd_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double h = 1e-5) {
    Tensor g(x.shape());
    Tensor p = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = p[i];
        p[i] = keep + h;
        const double up = f(p);
        p[i] = keep - h;
        const double down = f(p);
        p[i] = keep;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

/// |a - b| / max(|a|, |b|) in the Euclidean norm; 0 when both vanish.
inline double rel_err(const Tensor& a, const Tensor& b) {
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double scale = std::sqrt(std::max(na, nb));
    return scale == 0.0 ? 0.0 : std::sqrt(diff) / scale;
}

/// Per-sample loss 0.5 x^T A x + b^T x, for quadratic oracles.
inline LossFn quadratic_loss(const Tensor& a, const Tensor& b) {
    return [a, b](const Var& x) {
        const std::size_t m = x.shape()[0];
        Var ax = matmul(x, Var::constant(a));
        Var quad = row_sum(x * ax) * 0.5;
        Var lin = row_sum(x * broadcast_rows(Var::constant(b.reshaped({1, b.size()})), m));
        return reshape(quad + lin, {m});
    };
}

inline Tensor diag(std::initializer_list<double> d) {
    Tensor t({d.size(), d.size()});
    std::size_t i = 0;
    for (double v : d) {
        t.at(i, i) = v;
        ++i;
    }
    return t;
}

/// A small MLP fitted for a few epochs on Gaussian blobs; the shared "trained model" fixture.
inline Model trained_mlp(const Dataset& ds, Scheme scheme, std::size_t epochs, std::uint64_t seed,
                         Activation act = Activation::relu, std::size_t hidden = 32) {
    ModelSpec s;
    s.sizes = {ds.dim(), hidden, ds.classes};
    s.activation = act;
    s.seed = seed;
    Model m = init_model(s);
    TrainPlan plan;
    plan.scheme = std::move(scheme);
    plan.epochs = epochs;
    plan.batch_size = 32;
    plan.lr.stages = {0.05};
    plan.lr.decay_epochs = {};
    plan.seed = seed;
    OptimizerState st = OptimizerState::for_model(m, plan.momentum, plan.weight_decay, 0.05);
    for (std::size_t e = 0; e < epochs; ++e) train_epoch(m, ds, plan, e, st);
    return m;
}

}  // namespace advlab::testing
