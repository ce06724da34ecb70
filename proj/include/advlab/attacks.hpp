#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "errors.hpp"
#include "models.hpp"
#include "objectives.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace advlab {

enum class AttackKind { fgsm, fgsm_r, fgsm_n, pgd };
enum class InitMode { none, uniform_random };

inline const char* to_string(AttackKind k) {
    switch (k) {
        case AttackKind::fgsm: return "fgsm";
        case AttackKind::fgsm_r: return "fgsm_r";
        case AttackKind::fgsm_n: return "fgsm_n";
        case AttackKind::pgd: return "pgd";
    }
    return "?";
}

inline AttackKind parse_attack_kind(const std::string& s) {
    if (s == "fgsm") return AttackKind::fgsm;
    if (s == "fgsm_r") return AttackKind::fgsm_r;
    if (s == "fgsm_n") return AttackKind::fgsm_n;
    if (s == "pgd") return AttackKind::pgd;
    throw InvalidArgument("unknown attack kind '" + s + "'");
}

/// l_inf attack configuration. epsilon = 0 is accepted and yields the zero perturbation.
struct AttackSpec {
    AttackKind kind = AttackKind::pgd;
    double epsilon = 8.0 / 255.0;
    std::size_t steps = 1;
    double step_size = 2.0 / 255.0;
    InitMode init = InitMode::none;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw InvalidArgument("attack: epsilon must be >= 0");
        if (steps < 1) throw InvalidArgument("attack: steps must be >= 1");
        if (!(step_size > 0.0) && epsilon > 0.0) throw InvalidArgument("attack: step_size must be > 0");
    }

    static AttackSpec fgsm(double eps) { return {AttackKind::fgsm, eps, 1, eps, InitMode::none, 0}; }
    static AttackSpec fgsm_r(double eps, std::uint64_t seed) {
        return {AttackKind::fgsm_r, eps, 1, eps, InitMode::uniform_random, seed};
    }
    static AttackSpec fgsm_n(double eps, std::uint64_t seed) {
        return {AttackKind::fgsm_n, eps, 1, eps, InitMode::uniform_random, seed};
    }
    /// Multi-step PGD with the default step size epsilon / 4.
    static AttackSpec pgd(double eps, std::size_t steps, InitMode init = InitMode::none, std::uint64_t seed = 0) {
        return {AttackKind::pgd, eps, steps, eps / 4.0, init, seed};
    }

    friend bool operator==(const AttackSpec&, const AttackSpec&) = default;
};

struct Perturbation {
    Tensor delta;
    AttackSpec spec;
    Tensor loss_at_delta;  // per-sample loss at x + delta
};

/// Per-sample gradients of the loss w.r.t. the input batch (gradient of the summed losses).
inline Tensor input_gradient(const LossFn& loss, const Tensor& x) {
    Var leaf = Var::leaf(x);
    Var l = loss(leaf);
    if (!l.tracked()) return Tensor(x.shape());
    return grad(sum(l), {leaf})[0];
}

/// Projects delta onto the l_inf ball of radius eps, then clips x + delta to [0,1].
inline void project(const Tensor& x, Tensor& delta, double eps) {
    for (std::size_t i = 0; i < delta.size(); ++i) {
        const double d = std::clamp(delta[i], -eps, eps);
        delta[i] = std::clamp(x[i] + d, 0.0, 1.0) - x[i];
    }
}

namespace detail {

/// U(-eps, eps) noise with an independent stream per sample row.
inline Tensor uniform_noise(const Shape& shape, double eps, std::uint64_t seed) {
    Tensor t(shape);
    const std::size_t rows = shape.empty() ? 1 : shape[0];
    const std::size_t w = rows ? t.size() / rows : 0;
    for (std::size_t r = 0; r < rows; ++r) {
        Rng rng(derive_seed(seed, {r}));
        for (std::size_t j = 0; j < w; ++j) t[r * w + j] = rng.uniform(-eps, eps);
    }
    return t;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    return kernels::zip(a, b, [](double u, double v) { return u + v; }, "add");
}

inline Perturbation finish(const LossFn& loss, const Tensor& x, Tensor delta, const AttackSpec& spec) {
    NoGradGuard ng;
    Tensor l = loss(Var::constant(add(x, delta))).value();
    return {std::move(delta), spec, std::move(l)};
}

}  // namespace detail

/// k steps of sign-gradient ascent, each followed by l_inf projection and [0,1] clipping.
inline Perturbation pgd(const LossFn& loss, const Tensor& x, const AttackSpec& spec) {
    spec.validate();
    ++counters().attack_calls;
    Tensor delta(x.shape());
    if (spec.epsilon == 0.0) return detail::finish(loss, x, std::move(delta), spec);
    if (spec.init == InitMode::uniform_random) {
        delta = detail::uniform_noise(x.shape(), spec.epsilon, spec.seed);
        project(x, delta, spec.epsilon);
    }
    for (std::size_t k = 0; k < spec.steps; ++k) {
        const Tensor g = input_gradient(loss, detail::add(x, delta));
        for (std::size_t i = 0; i < delta.size(); ++i) delta[i] += spec.step_size * sign(g[i]);
        project(x, delta, spec.epsilon);
    }
    return detail::finish(loss, x, std::move(delta), spec);
}

/// One step of size epsilon from x; identical to PGD with one step of size epsilon and no init.
inline Perturbation fgsm(const LossFn& loss, const Tensor& x, double epsilon) {
    AttackSpec s = AttackSpec::fgsm(epsilon);
    s.kind = AttackKind::pgd;
    Perturbation p = pgd(loss, x, s);
    p.spec.kind = AttackKind::fgsm;
    return p;
}

/// Uniform random start inside the ball (clipped to valid inputs), then one step of size epsilon.
inline Perturbation fgsm_r(const LossFn& loss, const Tensor& x, const AttackSpec& spec) {
    AttackSpec s = spec;
    s.kind = AttackKind::pgd;
    s.steps = 1;
    s.step_size = spec.epsilon;
    s.init = InitMode::uniform_random;
    Perturbation p = pgd(loss, x, s);
    p.spec.kind = AttackKind::fgsm_r;
    return p;
}

/// Noise augmentation: the gradient is taken at the raw noisy point x + eta (no clipping),
/// delta = eta + epsilon * sign(grad), then projected to the ball and clipped to [0,1].
inline Perturbation fgsm_n(const LossFn& loss, const Tensor& x, const AttackSpec& spec) {
    spec.validate();
    ++counters().attack_calls;
    AttackSpec s = spec;
    s.kind = AttackKind::fgsm_n;
    s.steps = 1;
    Tensor delta(x.shape());
    if (spec.epsilon == 0.0) return detail::finish(loss, x, std::move(delta), s);
    delta = detail::uniform_noise(x.shape(), spec.epsilon, spec.seed);
    const Tensor g = input_gradient(loss, detail::add(x, delta));
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] += spec.epsilon * sign(g[i]);
    project(x, delta, spec.epsilon);
    return detail::finish(loss, x, std::move(delta), s);
}

inline Perturbation run_attack(const LossFn& loss, const Tensor& x, const AttackSpec& spec) {
    switch (spec.kind) {
        case AttackKind::fgsm: return fgsm(loss, x, spec.epsilon);
        case AttackKind::fgsm_r: return fgsm_r(loss, x, spec);
        case AttackKind::fgsm_n: return fgsm_n(loss, x, spec);
        case AttackKind::pgd: return pgd(loss, x, spec);
    }
    throw InvalidArgument("unknown attack kind");
}

inline Perturbation run_attack(const Model& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec) {
    return run_attack(model_loss(model, {y.begin(), y.end()}), x, spec);
}

// ---- degenerations ---------------------------------------------------------------------------

/// m * delta for m in [0,1]; the ball and box constraints are preserved.
inline Tensor scale_perturbation(const Tensor& delta, double m) {
    if (!(m >= 0.0 && m <= 1.0)) throw InvalidArgument("scale_perturbation: multiplier must be in [0,1]");
    return kernels::map(delta, [m](double v) { return m * v; });
}

/// +1/-1 mask negating exactly round(p * d) coordinates per row; the choice is seeded per row.
inline Tensor flip_mask(const Shape& shape, double p, std::uint64_t seed) {
    if (!(p >= 0.0 && p <= 0.5)) throw InvalidArgument("flip_signs: fraction must be in [0, 0.5]");
    Tensor mask(shape, 1.0);
    const std::size_t rows = shape.at(0);
    const std::size_t d = mask.size() / std::max<std::size_t>(rows, 1);
    const auto count = static_cast<std::size_t>(std::llround(p * static_cast<double>(d)));
    for (std::size_t r = 0; r < rows; ++r) {
        auto order = permutation(d, derive_seed(seed, {r}));
        for (std::size_t k = 0; k < count; ++k) mask[r * d + order[k]] = -1.0;
    }
    return mask;
}

inline Tensor apply_mask(const Tensor& delta, const Tensor& mask) {
    return kernels::zip(delta, mask, [](double a, double b) { return a * b; }, "apply_mask");
}

/// Negates a seeded fraction p of each sample's coordinates, then clips x + delta to [0,1].
inline Tensor flip_signs(const Tensor& x, const Tensor& delta, double p, std::uint64_t seed) {
    Tensor out = apply_mask(delta, flip_mask(delta.shape(), p, seed));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(x[i] + out[i], 0.0, 1.0) - x[i];
    return out;
}

/// Adds U(-s, s) noise to every parameter, with one s ~ U(0, s_max) drawn per call.
inline Model perturb_weights(const Model& model, double s_max, std::uint64_t seed, double* drawn_scale = nullptr) {
    if (s_max < 0.0) throw InvalidArgument("perturb_weights: s_max must be >= 0");
    Model out = model;
    Rng rng(derive_seed(seed, {0x3E16}));
    const double s = s_max * rng.uniform();
    if (drawn_scale) *drawn_scale = s;
    if (s == 0.0) return out;
    for (auto& p : out.params())
        for (auto& v : p.data()) v += rng.uniform(-s, s);
    return out;
}

}  // namespace advlab
