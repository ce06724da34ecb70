#pragma once

// Input loss-landscape diagnostics: slope (input-gradient norm), curvature (Hessian spectrum
// by deflated power iteration), adversarial variance and its second-order bound, attack
// effectiveness, gradient alignment, and small-d brute-force oracles for the bound theory.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "attacks.hpp"
#include "autodiff.hpp"
#include "datasets.hpp"
#include "errors.hpp"
#include "models.hpp"
#include "objectives.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace advlab {

inline constexpr std::size_t kDenseHessianMaxDim = 64;

/// Per-sample values with an inclusion flag; excluded samples do not enter the mean.
struct PerSample {
    std::vector<double> values;
    std::vector<bool> included;

    std::size_t excluded() const { return static_cast<std::size_t>(std::count(included.begin(), included.end(), false)); }
    std::size_t count() const { return included.size() - excluded(); }

    double mean() const {
        double s = 0.0;
        std::size_t n = 0;
        for (std::size_t i = 0; i < values.size(); ++i)
            if (included[i]) {
                s += values[i];
                ++n;
            }
        if (n == 0) throw EmptyMetricError("metric mean: every sample was excluded");
        return s / static_cast<double>(n);
    }

    static PerSample all(std::vector<double> v) {
        PerSample p;
        p.included.assign(v.size(), true);
        p.values = std::move(v);
        return p;
    }
};

inline double mean_of(const std::vector<double>& v) {
    if (v.empty()) throw EmptyMetricError("mean of empty sample");
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// ---- first order -----------------------------------------------------------------------------

/// |grad_x L(x)|_1 per sample.
inline std::vector<double> input_grad_norm(const LossFn& loss, const Tensor& x) {
    const Tensor g = input_gradient(loss, x);
    std::vector<double> out(x.dim(0));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = kernels::norm1(g.row(i));
    return out;
}

/// L(x + delta) - L(x) per sample.
inline std::vector<double> adversarial_variance(const LossFn& loss, const Tensor& x, const Tensor& delta) {
    NoGradGuard ng;
    const Tensor clean = loss(Var::constant(x)).value();
    const Tensor adv = loss(Var::constant(detail::add(x, delta))).value();
    std::vector<double> out(clean.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = adv[i] - clean[i];
    return out;
}

/// cos(grad L(x), grad L(x + eta)), eta ~ U(-eps, eps)^d per sample; samples where either
/// gradient vanishes are excluded.
inline PerSample gradient_alignment(const LossFn& loss, const Tensor& x, double eps, std::uint64_t seed) {
    const Tensor g0 = input_gradient(loss, x);
    const Tensor g1 = input_gradient(loss, detail::add(x, detail::uniform_noise(x.shape(), eps, seed)));
    PerSample out;
    for (std::size_t i = 0; i < x.dim(0); ++i) {
        const double aa = kernels::dot(g0.row(i), g0.row(i));
        const double bb = kernels::dot(g1.row(i), g1.row(i));
        if (aa == 0.0 || bb == 0.0) {
            out.values.push_back(0.0);
            out.included.push_back(false);
            continue;
        }
        out.values.push_back(std::clamp(kernels::dot(g0.row(i), g1.row(i)) / std::sqrt(aa * bb), -1.0, 1.0));
        out.included.push_back(true);
    }
    return out;
}

// ---- second order ----------------------------------------------------------------------------

/// Applies the per-sample input Hessians of a batch to a batch of directions. The loss is summed
/// over samples, so the batch Hessian is block diagonal and row i of the result is H_i v_i.
/// Exact mode keeps the recorded gradient graph and differentiates it once per application.
class HessianOperator {
public:
    HessianOperator(LossFn loss, Tensor x, HvpMode mode) : loss_(std::move(loss)), x_(std::move(x)), mode_(mode) {
        if (mode_ == HvpMode::exact) {
            leaf_ = Var::leaf(x_);
            Var l = loss_(leaf_);
            if (l.tracked()) grad_ = grad_vars(sum(l), {leaf_}, true)[0];
        }
    }

    Tensor apply(const Tensor& v) const {
        if (v.shape() != x_.shape()) throw ShapeError("hessian operator: direction shape mismatch");
        if (mode_ == HvpMode::finite_diff)
            return hvp([this](const Var& in) { return sum(loss_(in)); }, x_, v, HvpMode::finite_diff);
        if (!grad_.defined() || !grad_.tracked()) return Tensor(x_.shape());
        Var s = sum(grad_ * Var::constant(v));
        if (!s.tracked()) return Tensor(x_.shape());
        return grad(s, {leaf_})[0];
    }

    Tensor gradient() const {
        if (mode_ == HvpMode::exact) return grad_.defined() ? grad_.value() : Tensor(x_.shape());
        return input_gradient(loss_, x_);
    }

    const Tensor& point() const { return x_; }

private:
    LossFn loss_;
    Tensor x_;
    HvpMode mode_;
    Var leaf_, grad_;
};

/// Dense per-sample input Hessians [d, d], assembled column by column from Hessian-vector
/// products with basis vectors and symmetrized. Only for d <= 64.
inline std::vector<Tensor> dense_hessians(const LossFn& loss, const Tensor& x, HvpMode mode = HvpMode::exact) {
    const std::size_t m = x.dim(0), d = x.dim(1);
    if (d > kDenseHessianMaxDim)
        throw CapabilityError("dense Hessian requested for input dimension " + std::to_string(d) +
                              " (limit " + std::to_string(kDenseHessianMaxDim) +
                              "); use a small-d (e.g. synthetic) dataset for bound-based metrics");
    HessianOperator op(loss, x, mode);
    std::vector<Tensor> hs(m, Tensor({d, d}));
    for (std::size_t j = 0; j < d; ++j) {
        Tensor e(x.shape());
        for (std::size_t i = 0; i < m; ++i) e.at(i, j) = 1.0;
        const Tensor col = op.apply(e);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t r = 0; r < d; ++r) hs[i].at(r, j) = col.at(i, r);
    }
    for (auto& h : hs)
        for (std::size_t r = 0; r < d; ++r)
            for (std::size_t c = r + 1; c < d; ++c) {
                const double s = 0.5 * (h.at(r, c) + h.at(c, r));
                h.at(r, c) = h.at(c, r) = s;
            }
    return hs;
}

/// eps * sum|g_i| + eps^2 / 2 * sum_ij |H_ij|
inline double av_upper_bound(std::span<const double> g, const Tensor& h, double eps) {
    return eps * kernels::norm1(g) + 0.5 * eps * eps * kernels::norm1(h.data());
}

/// g^T delta + 1/2 delta^T H delta
inline double quadratic_av(std::span<const double> g, const Tensor& h, std::span<const double> delta) {
    const std::size_t d = g.size();
    double lin = kernels::dot(g, delta), quad = 0.0;
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) quad += h.at(i, j) * delta[i] * delta[j];
    return lin + 0.5 * quad;
}

/// Second-order theoretical AV bound per sample.
inline std::vector<double> av_upper_bound_2nd(const LossFn& loss, const Tensor& x, double eps,
                                              HvpMode mode = HvpMode::exact) {
    const auto hs = dense_hessians(loss, x, mode);
    const Tensor g = input_gradient(loss, x);
    std::vector<double> out(x.dim(0));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av_upper_bound(g.row(i), hs[i], eps);
    return out;
}

/// |L(x+delta) - L(x) - g^T delta - 1/2 delta^T H delta| per sample, with dense H.
inline std::vector<double> taylor_residual(const LossFn& loss, const Tensor& x, const Tensor& delta,
                                           HvpMode mode = HvpMode::exact) {
    const auto hs = dense_hessians(loss, x, mode);
    const Tensor g = input_gradient(loss, x);
    const auto av = adversarial_variance(loss, x, delta);
    std::vector<double> out(x.dim(0));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(av[i] - quadratic_av(g.row(i), hs[i], delta.row(i)));
    return out;
}

// ---- effectiveness ---------------------------------------------------------------------------

inline constexpr double kEffectivenessMinGain = 1e-6;

/// (L(x+delta) - L(x)) / (L(x+delta_ref) - L(x)); samples whose reference gain is below 1e-6
/// are excluded.
inline PerSample effectiveness(const LossFn& loss, const Tensor& x, const Tensor& delta, const Tensor& delta_ref) {
    NoGradGuard ng;
    const Tensor clean = loss(Var::constant(x)).value();
    const Tensor adv = loss(Var::constant(detail::add(x, delta))).value();
    const Tensor ref = loss(Var::constant(detail::add(x, delta_ref))).value();
    PerSample out;
    for (std::size_t i = 0; i < clean.size(); ++i) {
        const double denom = ref[i] - clean[i];
        if (denom < kEffectivenessMinGain) {
            out.values.push_back(0.0);
            out.included.push_back(false);
        } else {
            out.values.push_back((adv[i] - clean[i]) / denom);
            out.included.push_back(true);
        }
    }
    return out;
}

/// Reference attack default: PGD50 at the assessed budget with step eps/4.
inline PerSample effectiveness(const LossFn& loss, const Tensor& x, const Tensor& delta, const AttackSpec& reference) {
    return effectiveness(loss, x, delta, run_attack(loss, x, reference).delta);
}

/// AV divided by its second-order theoretical bound; zero-bound samples are excluded.
inline PerSample theoretical_effectiveness(const LossFn& loss, const Tensor& x, const Tensor& delta, double eps,
                                           HvpMode mode = HvpMode::exact) {
    const auto bound = av_upper_bound_2nd(loss, x, eps, mode);
    const auto av = adversarial_variance(loss, x, delta);
    PerSample out;
    for (std::size_t i = 0; i < av.size(); ++i) {
        const bool ok = bound[i] > 0.0;
        out.values.push_back(ok ? av[i] / bound[i] : 0.0);
        out.included.push_back(ok);
    }
    return out;
}

// ---- Hessian spectrum ------------------------------------------------------------------------

struct SpectrumOptions {
    std::size_t k = 20;  // clipped to d
    std::size_t max_iters = 100;
    double tol = 1e-3;
    std::uint64_t seed = 0;
    HvpMode mode = HvpMode::exact;
};

struct Spectrum {
    std::vector<double> eigenvalues;  // signed, in non-increasing |lambda| order
    std::vector<bool> converged;
    std::vector<Tensor> eigenvectors;
    double hs = 0.0;  // sum |lambda|
};

/// Largest-magnitude input-Hessian eigenvalues per sample by power iteration with deflation
/// (found pairs are subtracted inside the operator as lambda u u^T v). An estimate is converged
/// when successive Rayleigh quotients differ by < tol relative and the residual
/// |Hu - lambda u| is below 10 tol |lambda|. Unconverged values are still reported, flagged.
inline std::vector<Spectrum> hessian_spectrum(const HessianOperator& op, const SpectrumOptions& opt) {
    const Tensor& x = op.point();
    const std::size_t m = x.dim(0), d = x.dim(1);
    const std::size_t k = std::min(opt.k, d);
    std::vector<Spectrum> out(m);
    for (std::size_t e = 0; e < k; ++e) {
        Tensor v(x.shape());
        for (std::size_t i = 0; i < m; ++i) {
            Rng rng(derive_seed(opt.seed, {i, e}));
            auto row = v.row(i);
            for (auto& t : row) t = rng.uniform(-1.0, 1.0);
            const double n = kernels::norm2(row);
            for (auto& t : row) t /= n;
        }
        std::vector<double> lambda(m, 0.0), prev(m, std::numeric_limits<double>::quiet_NaN());
        std::vector<bool> done(m, false);
        Tensor best = v;
        for (std::size_t it = 0; it < opt.max_iters; ++it) {
            Tensor w = op.apply(v);
            for (std::size_t i = 0; i < m; ++i) {
                if (done[i]) continue;
                auto wi = w.row(i);
                const auto vi = v.row(i);
                for (std::size_t p = 0; p < e; ++p) {
                    const double c = out[i].eigenvalues[p] * kernels::dot(out[i].eigenvectors[p].data(), vi);
                    const auto u = out[i].eigenvectors[p].data();
                    for (std::size_t j = 0; j < d; ++j) wi[j] -= c * u[j];
                }
                const double lam = kernels::dot(vi, wi);
                double res2 = 0.0;
                for (std::size_t j = 0; j < d; ++j) res2 += (wi[j] - lam * vi[j]) * (wi[j] - lam * vi[j]);
                const double res = std::sqrt(res2);
                const double scale = std::abs(lam);
                lambda[i] = lam;
                std::copy(vi.begin(), vi.end(), best.row(i).begin());
                const double wn = kernels::norm2(wi);
                const bool vanished = wn <= 1e-300;
                const bool settled = std::isfinite(prev[i]) && std::abs(lam - prev[i]) < opt.tol * (scale + 1e-12) &&
                                     res <= 10.0 * opt.tol * scale;
                if (vanished || settled || (scale < 1e-14 && res < 1e-14)) {
                    done[i] = true;
                    continue;
                }
                prev[i] = lam;
                auto vrow = v.row(i);
                for (std::size_t j = 0; j < d; ++j) vrow[j] = wi[j] / wn;
            }
            if (std::all_of(done.begin(), done.end(), [](bool b) { return b; })) break;
        }
        for (std::size_t i = 0; i < m; ++i) {
            out[i].eigenvalues.push_back(lambda[i]);
            out[i].converged.push_back(done[i]);
            out[i].eigenvectors.push_back(Tensor({d}, std::vector<double>(best.row(i).begin(), best.row(i).end())));
        }
    }
    for (auto& s : out) {
        std::vector<std::size_t> order(s.eigenvalues.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return std::abs(s.eigenvalues[a]) > std::abs(s.eigenvalues[b]);
        });
        Spectrum sorted;
        for (auto o : order) {
            sorted.eigenvalues.push_back(s.eigenvalues[o]);
            sorted.converged.push_back(s.converged[o]);
            sorted.eigenvectors.push_back(std::move(s.eigenvectors[o]));
        }
        for (double l : sorted.eigenvalues) sorted.hs += std::abs(l);
        s = std::move(sorted);
    }
    return out;
}

inline std::vector<Spectrum> hessian_spectrum(const LossFn& loss, const Tensor& x, const SpectrumOptions& opt) {
    return hessian_spectrum(HessianOperator(loss, x, opt.mode), opt);
}

// ---- small-d oracles for the bound theory ----------------------------------------------------

struct BruteForceAv {
    double max_av;
    std::vector<double> argmax;
};

/// Maximizes g^T delta + 1/2 delta^T H delta over a grid of `grid_points` per axis spanning
/// [-eps, eps]^d (endpoints included). d <= 4.
inline BruteForceAv max_av_bruteforce(std::span<const double> g, const Tensor& h, double eps, std::size_t grid_points) {
    const std::size_t d = g.size();
    if (d > 4) throw CapabilityError("max_av_bruteforce: dimension " + std::to_string(d) + " exceeds the grid limit 4");
    if (grid_points < 3) throw InvalidArgument("max_av_bruteforce: need at least 3 grid points per axis");
    if (h.rank() != 2 || h.dim(0) != d || h.dim(1) != d) throw ShapeError("max_av_bruteforce: H must be d x d");
    std::vector<double> axis(grid_points);
    for (std::size_t t = 0; t < grid_points; ++t)
        axis[t] = -eps + 2.0 * eps * static_cast<double>(t) / static_cast<double>(grid_points - 1);
    axis.back() = eps;
    std::vector<std::size_t> pos(d, 0);
    std::vector<double> delta(d);
    BruteForceAv best{-std::numeric_limits<double>::infinity(), std::vector<double>(d, 0.0)};
    while (true) {
        for (std::size_t i = 0; i < d; ++i) delta[i] = axis[pos[i]];
        const double av = quadratic_av(g, h, delta);
        if (av > best.max_av) best = {av, delta};
        std::size_t i = 0;
        while (i < d && ++pos[i] == grid_points) pos[i++] = 0;
        if (i == d) break;
    }
    if (d == 0) best.max_av = 0.0;
    return best;
}

/// True iff no sign vector s in {-1,+1}^d has sign(g_i) = s_i for every nonzero g_i and
/// sign(H_ij) = s_i s_j for every nonzero H_ij (diagonal included). d <= 12.
inline bool gradient_conflict_exists(std::span<const double> g, const Tensor& h) {
    const std::size_t d = g.size();
    if (d > 12) throw CapabilityError("gradient_conflict_exists: dimension exceeds 12");
    if (h.rank() != 2 || h.dim(0) != d || h.dim(1) != d) throw ShapeError("gradient_conflict_exists: H must be d x d");
    for (std::uint32_t bits = 0; bits < (1u << d); ++bits) {
        auto s = [&](std::size_t i) { return ((bits >> i) & 1u) ? -1.0 : 1.0; };
        bool ok = true;
        for (std::size_t i = 0; i < d && ok; ++i)
            if (g[i] != 0.0 && sign(g[i]) != s(i)) ok = false;
        for (std::size_t i = 0; i < d && ok; ++i)
            for (std::size_t j = 0; j < d && ok; ++j)
                if (h.at(i, j) != 0.0 && sign(h.at(i, j)) != s(i) * s(j)) ok = false;
        if (ok) return false;
    }
    return true;
}

// ---- statistics ------------------------------------------------------------------------------

/// Ranks starting at 1; ties receive their average rank.
inline std::vector<double> ranks(const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t t = i; t <= j; ++t) r[order[t]] = avg;
        i = j + 1;
    }
    return r;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2) throw InvalidArgument("correlation needs two equal-length samples");
    const double ma = mean_of(a), mb = mean_of(b);
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

inline double spearman(const std::vector<double>& a, const std::vector<double>& b) { return pearson(ranks(a), ranks(b)); }

// ---- report ----------------------------------------------------------------------------------

struct NamedAttack {
    std::string name;
    AttackSpec spec;
};

struct LandscapeOptions {
    std::size_t subset_size = 200;
    std::size_t chunk = 100;  // samples per batched evaluation
    SpectrumOptions spectrum{};
    bool compute_hs = true;
    bool softplus_twin = false;
    double alignment_eps = 8.0 / 255.0;
    std::uint64_t seed = 0;
    AttackSpec av_attack = AttackSpec::pgd(8.0 / 255.0, 20);
    AttackSpec reference = AttackSpec::pgd(8.0 / 255.0, 50);
    std::vector<NamedAttack> effectiveness_attacks{{"fgsm", AttackSpec::fgsm(8.0 / 255.0)},
                                                   {"pgd10", AttackSpec::pgd(8.0 / 255.0, 10)}};
};

struct LandscapeReport {
    double ig = 0.0;
    double hs = 0.0;
    double hs_softplus = std::numeric_limits<double>::quiet_NaN();
    double av = 0.0;
    std::vector<std::pair<std::string, double>> effectiveness;  // NaN when every sample was excluded
    std::vector<std::pair<std::string, std::size_t>> effectiveness_excluded;
    double grad_align = std::numeric_limits<double>::quiet_NaN();
    std::size_t sample_count = 0;
    Split split = Split::train;
};

/// Means of the landscape metrics over `data` (already the metric subset), processed in chunks
/// in storage order so the reduction order is fixed.
inline LandscapeReport landscape_report(const Model& model, const Dataset& data, const LandscapeOptions& opt) {
    if (data.size() == 0) throw EmptyMetricError("landscape report: empty sample");
    LandscapeReport rep;
    rep.split = data.split;
    rep.sample_count = data.size();
    std::vector<double> ig, hs, hs_sp, av, ga;
    std::vector<std::vector<double>> eff(opt.effectiveness_attacks.size());
    std::vector<std::size_t> excluded(opt.effectiveness_attacks.size(), 0);
    const Model twin = swap_activation(model, Activation::softplus);
    std::size_t chunk_index = 0;
    for (const auto& b : sequential_batches(data, std::max<std::size_t>(1, opt.chunk))) {
        const LossFn loss = model_loss(model, b.y);
        for (double v : input_grad_norm(loss, b.x)) ig.push_back(v);
        const Tensor adv = run_attack(loss, b.x, opt.av_attack).delta;
        for (double v : adversarial_variance(loss, b.x, adv)) av.push_back(v);
        SpectrumOptions so = opt.spectrum;
        so.seed = derive_seed(opt.seed, {chunk_index});
        if (opt.compute_hs) {
            for (const auto& s : hessian_spectrum(loss, b.x, so)) hs.push_back(s.hs);
            if (opt.softplus_twin)
                for (const auto& s : hessian_spectrum(model_loss(twin, b.y), b.x, so)) hs_sp.push_back(s.hs);
        }
        const auto al = gradient_alignment(loss, b.x, opt.alignment_eps, derive_seed(opt.seed, {chunk_index, 7}));
        for (std::size_t i = 0; i < al.values.size(); ++i)
            if (al.included[i]) ga.push_back(al.values[i]);
        if (!opt.effectiveness_attacks.empty()) {
            const Tensor ref = run_attack(loss, b.x, opt.reference).delta;
            for (std::size_t a = 0; a < opt.effectiveness_attacks.size(); ++a) {
                AttackSpec spec = opt.effectiveness_attacks[a].spec;
                spec.seed = derive_seed(spec.seed, {chunk_index});
                const auto e = effectiveness(loss, b.x, run_attack(loss, b.x, spec).delta, ref);
                for (std::size_t i = 0; i < e.values.size(); ++i) {
                    if (e.included[i])
                        eff[a].push_back(e.values[i]);
                    else
                        ++excluded[a];
                }
            }
        }
        ++chunk_index;
    }
    rep.ig = mean_of(ig);
    rep.av = mean_of(av);
    rep.hs = hs.empty() ? std::numeric_limits<double>::quiet_NaN() : mean_of(hs);
    if (!hs_sp.empty()) rep.hs_softplus = mean_of(hs_sp);
    if (!ga.empty()) rep.grad_align = mean_of(ga);
    for (std::size_t a = 0; a < eff.size(); ++a) {
        rep.effectiveness.emplace_back(opt.effectiveness_attacks[a].name,
                                       eff[a].empty() ? std::numeric_limits<double>::quiet_NaN() : mean_of(eff[a]));
        rep.effectiveness_excluded.emplace_back(opt.effectiveness_attacks[a].name, excluded[a]);
    }
    return rep;
}

}  // namespace advlab
