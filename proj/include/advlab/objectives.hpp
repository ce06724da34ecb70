#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "errors.hpp"
#include "models.hpp"

namespace advlab {

/// Maps a batch of inputs [M, d] to per-sample losses [M].
using LossFn = std::function<Var(const Var& x)>;

namespace detail {
inline Tensor one_hot(std::span<const int> y, std::size_t classes) {
    Tensor t({y.size(), classes});
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (y[i] < 0 || static_cast<std::size_t>(y[i]) >= classes)
            throw InvalidArgument("label " + std::to_string(y[i]) + " outside [0," + std::to_string(classes) + ")");
        t.at(i, static_cast<std::size_t>(y[i])) = 1.0;
    }
    return t;
}

/// Row maxima broadcast over the row, as a constant (stabilizer only).
inline Var row_max_constant(const Var& z) {
    const std::size_t m = z.shape()[0], c = z.shape()[1];
    Tensor t({m, c});
    for (std::size_t i = 0; i < m; ++i) {
        const auto r = z.value().row(i);
        const double mx = *std::max_element(r.begin(), r.end());
        for (std::size_t j = 0; j < c; ++j) t.at(i, j) = mx;
    }
    return Var::constant(std::move(t));
}
}  // namespace detail

/// Row-wise log-softmax of logits [M, C].
inline Var log_softmax(const Var& logits) {
    detail::require_matrix(logits, "log_softmax");
    const Var shifted = logits - detail::row_max_constant(logits);
    const Var lse = log(row_sum(exp(shifted)));
    return shifted - broadcast_cols(lse, logits.shape()[1]);
}

/// Per-sample -log softmax(logits)[y], shape [M].
inline Var cross_entropy(const Var& logits, std::span<const int> y) {
    detail::require_matrix(logits, "cross_entropy");
    const std::size_t m = logits.shape()[0], c = logits.shape()[1];
    if (y.size() != m)
        throw ShapeError("cross_entropy: " + std::to_string(y.size()) + " labels for logits " + shape_str(logits.shape()));
    const Var shifted = logits - detail::row_max_constant(logits);
    const Var lse = log(row_sum(exp(shifted)));
    const Var picked = row_sum(shifted * Var::constant(detail::one_hot(y, c)));
    return reshape(lse - picked, {m});
}

/// Per-sample cross-entropy of the model's logits, with parameters held constant.
inline LossFn model_loss(const Model& model, std::vector<int> y) {
    return [&model, y = std::move(y)](const Var& x) { return cross_entropy(forward_logits(model, x), y); };
}

inline Tensor per_sample_loss(const Model& model, const Tensor& x, std::span<const int> y) {
    NoGradGuard ng;
    return cross_entropy(forward_logits(model, Var::constant(x)), y).value();
}

// ---- logit-consistency regularizer -----------------------------------------------------------

enum class WeightKind { top_n, all_ones, self_weighted, kl, js };

inline const char* to_string(WeightKind k) {
    switch (k) {
        case WeightKind::top_n: return "topn";
        case WeightKind::all_ones: return "all_ones";
        case WeightKind::self_weighted: return "self_weighted";
        case WeightKind::kl: return "kl";
        case WeightKind::js: return "js";
    }
    return "?";
}

inline WeightKind parse_weight_kind(const std::string& s) {
    if (s == "topn") return WeightKind::top_n;
    if (s == "all_ones" || s == "l1") return WeightKind::all_ones;
    if (s == "self_weighted" || s == "squared_l2") return WeightKind::self_weighted;
    if (s == "kl") return WeightKind::kl;
    if (s == "js") return WeightKind::js;
    throw InvalidArgument("unknown weight scheme '" + s + "'");
}

/// How the per-logit gaps |f_j(x_i + delta) - f_j(x_i)| are weighted. For top_n, `count` > 0 fixes N;
/// otherwise N = round(fraction * M * C), at least 1.
struct WeightScheme {
    WeightKind kind = WeightKind::top_n;
    std::size_t count = 0;
    double fraction = 0.1;

    static WeightScheme top_n(std::size_t n) { return {WeightKind::top_n, n, 0.0}; }
    static WeightScheme top_fraction(double f) { return {WeightKind::top_n, 0, f}; }
    static WeightScheme of(WeightKind k) { return {k, 0, 0.1}; }

    std::size_t resolve_n(std::size_t entries) const {
        const std::size_t n = count > 0 ? count
                                        : static_cast<std::size_t>(std::max<long long>(
                                              1, std::llround(fraction * static_cast<double>(entries))));
        if (n < 1 || n > entries)
            throw InvalidArgument("top-N weight: N=" + std::to_string(n) + " outside [1, " + std::to_string(entries) +
                                  "]");
        return n;
    }

    /// Whether the scheme's value is a batch sum (true) or already a batch mean (kl, js).
    bool is_sum() const { return kind != WeightKind::kl && kind != WeightKind::js; }

    friend bool operator==(const WeightScheme&, const WeightScheme&) = default;
};

/// Absolute per-logit differences o[i,j] = |adv[i,j] - clean[i,j]|, as a value.
inline Tensor logit_gaps(const Tensor& clean, const Tensor& adv) {
    if (clean.shape() != adv.shape())
        throw ShapeError("logit gaps: shapes " + shape_str(clean.shape()) + " vs " + shape_str(adv.shape()));
    return kernels::zip(adv, clean, [](double a, double c) { return std::abs(a - c); }, "logit_gaps");
}

/// 0/1 mask selecting the N largest entries across the whole batch; ties go to the lower flat index.
inline Tensor top_n_mask(const Tensor& gaps, std::size_t n) {
    std::vector<std::size_t> order(gaps.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n), order.end(),
                      [&](std::size_t a, std::size_t b) { return gaps[a] > gaps[b] || (gaps[a] == gaps[b] && a < b); });
    Tensor mask(gaps.shape());
    for (std::size_t k = 0; k < n; ++k) mask[order[k]] = 1.0;
    return mask;
}

namespace detail {
inline Var kl_rows(const Var& logp, const Var& logq) {
    return row_sum(exp(logp) * (logp - logq));
}
}  // namespace detail

/// Logit-consistency regularizer between clean and adversarial logits [M, C].
///   top_n:         sum of the N largest gaps in the batch (selection treated as constant)
///   all_ones:      sum of all gaps (l1)
///   self_weighted: sum of squared gaps (squared l2)
///   kl:            batch mean of KL(softmax(clean) || softmax(adv))
///   js:            batch mean of the Jensen-Shannon divergence
inline Var advlc(const Var& clean, const Var& adv, const WeightScheme& scheme) {
    if (clean.shape() != adv.shape())
        throw ShapeError("advlc: clean logits " + shape_str(clean.shape()) + " vs adversarial " + shape_str(adv.shape()));
    detail::require_matrix(clean, "advlc");
    const double m = static_cast<double>(clean.shape()[0]);
    switch (scheme.kind) {
        case WeightKind::top_n: {
            const std::size_t n = scheme.resolve_n(clean.size());
            const Var o = abs(adv - clean);
            return sum(o * Var::constant(top_n_mask(o.value(), n)));
        }
        case WeightKind::all_ones: return sum(abs(adv - clean));
        case WeightKind::self_weighted: return sum(square(adv - clean));
        case WeightKind::kl: return sum(detail::kl_rows(log_softmax(clean), log_softmax(adv))) * (1.0 / m);
        case WeightKind::js: {
            const Var lp = log_softmax(clean);
            const Var lq = log_softmax(adv);
            // log((p + q) / 2) = lp + softplus(lq - lp) - log 2
            const Var lmix = lp + softplus(lq - lp) - std::numbers::ln2;
            const Var js = detail::kl_rows(lp, lmix) * 0.5 + detail::kl_rows(lq, lmix) * 0.5;
            return sum(js) * (1.0 / m);
        }
    }
    throw InvalidArgument("advlc: unknown scheme");
}

// ---- composite objectives --------------------------------------------------------------------

struct ObjectiveValue {
    Var objective;          // scalar to differentiate w.r.t. parameters
    double reg = 0.0;       // regularizer value (per-sample mean), 0 when absent
    Tensor adv_logits;      // logits on the inputs the loss was computed on
};

inline Var shifted_input(const Tensor& x, const Tensor& delta) {
    return Var::constant(kernels::zip(x, delta, [](double a, double b) { return a + b; }, "x+delta"));
}

/// mean L(x)
inline ObjectiveValue standard_objective(const Model& model, std::span<const Var> params, const Tensor& x,
                                         std::span<const int> y) {
    Var logits = forward_logits(model, Var::constant(x), params);
    return {mean(cross_entropy(logits, y)), 0.0, logits.value()};
}

/// mean L(x + delta)
inline ObjectiveValue adversarial_objective(const Model& model, std::span<const Var> params, const Tensor& x,
                                            std::span<const int> y, const Tensor& delta) {
    Var logits = forward_logits(model, shifted_input(x, delta), params);
    return {mean(cross_entropy(logits, y)), 0.0, logits.value()};
}

/// mean[L(x + delta) - alpha L(x)], subtracting per sample before averaging.
inline ObjectiveValue at_minus_clean_loss(const Model& model, std::span<const Var> params, const Tensor& x,
                                          std::span<const int> y, const Tensor& delta, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidArgument("at_minus_clean: alpha must be in [0,1]");
    Var adv_logits = forward_logits(model, shifted_input(x, delta), params);
    Var clean_logits = forward_logits(model, Var::constant(x), params);
    Var obj = mean(cross_entropy(adv_logits, y) - cross_entropy(clean_logits, y) * alpha);
    return {obj, 0.0, adv_logits.value()};
}

/// mean[L(x) + beta * |grad_x L(x)|_2^2]; the penalty is differentiable w.r.t. the parameters
/// through a recorded backward pass.
inline ObjectiveValue igr_loss(const Model& model, std::span<const Var> params, const Tensor& x,
                               std::span<const int> y, double beta) {
    if (beta < 0.0) throw InvalidArgument("igr: beta must be non-negative");
    Var xin = Var::leaf(x);
    Var logits = forward_logits(model, xin, params);
    Var losses = cross_entropy(logits, y);
    if (beta == 0.0) return {mean(losses), 0.0, logits.value()};
    Var gx = grad_vars(sum(losses), {xin}, true)[0];
    Var penalty = reshape(row_sum(square(gx)), {x.dim(0)});
    Var obj = mean(losses + penalty * beta);
    return {obj, kernels::sum(penalty.value()) / static_cast<double>(x.dim(0)), logits.value()};
}

/// (sum_i L(x_i + delta_i) + lambda * L_reg) / M for sum-type weightings, or mean L(x + delta) + lambda * L_reg
/// for the divergence weightings that are already batch means. Uses exactly two forward passes.
inline ObjectiveValue advlc_objective(const Model& model, std::span<const Var> params, const Tensor& x,
                                      std::span<const int> y, const Tensor& delta, double lambda,
                                      const WeightScheme& scheme) {
    if (lambda < 0.0) throw InvalidArgument("advlc: lambda must be non-negative");
    Var clean_logits = forward_logits(model, Var::constant(x), params);
    Var adv_logits = forward_logits(model, shifted_input(x, delta), params);
    Var adv_loss = mean(cross_entropy(adv_logits, y));
    Var reg = advlc(clean_logits, adv_logits, scheme);
    if (scheme.is_sum()) reg = reg * (1.0 / static_cast<double>(x.dim(0)));
    return {adv_loss + reg * lambda, reg.value().item(), adv_logits.value()};
}

}  // namespace advlab
