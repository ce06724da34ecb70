#include <gtest/gtest.h>

#include "helpers.hpp"

using namespace advlab;
using namespace advlab::testing;

namespace {

void expect_in_ball(const Tensor& x, const Tensor& delta, double eps) {
    for (std::size_t i = 0; i < x.size(); ++i) {
        ASSERT_LE(std::abs(delta[i]), eps + 1e-12);
        ASSERT_GE(x[i] + delta[i], 0.0);
        ASSERT_LE(x[i] + delta[i], 1.0);
    }
}

const Dataset& blobs() {
    static const Dataset ds = synth_gaussians(10, 3, 300, 0.6, 21, 0.15);
    return ds;
}

const Model& trained() {
    static const Model m = trained_mlp(blobs(), StandardScheme{}, 15, 3);
    return m;
}

}  // namespace

TEST(Attacks, FgsmEqualsOneStepPgdBitExact) {
    const Model m = softplus_mlp({8, 10, 3}, 1);
    const Tensor x = random_tensor({16, 8}, 2, 0, 1);
    const auto y = random_labels(16, 3, 3);
    const LossFn loss = model_loss(m, y);
    AttackSpec one = AttackSpec::pgd(0.1, 1);
    one.step_size = 0.1;
    EXPECT_EQ(run_attack(loss, x, AttackSpec::fgsm(0.1)).delta, run_attack(loss, x, one).delta);
}

TEST(Attacks, ZeroGradientGivesZeroPerturbation) {
    ModelSpec s;
    s.sizes = {3, 2};
    Model m = init_model(s);
    m.params()[0] = Tensor({3, 2});
    const Tensor x = random_tensor({4, 3}, 1, 0, 1);
    const LossFn loss = model_loss(m, random_labels(4, 2, 1));
    EXPECT_EQ(run_attack(loss, x, AttackSpec::fgsm(0.1)).delta, Tensor({4, 3}));
    EXPECT_EQ(run_attack(loss, x, AttackSpec::pgd(0.1, 7)).delta, Tensor({4, 3}));
}

TEST(Attacks, LinearSoftmaxSignOracle) {
    ModelSpec s;
    s.sizes = {2, 3};
    s.seed = 4;
    const Model m = init_model(s);
    const Tensor x = random_tensor({20, 2}, 5, 0.3, 0.7);
    const auto y = random_labels(20, 3, 6);
    const Tensor delta = run_attack(model_loss(m, y), x, AttackSpec::fgsm(0.05)).delta;
    const Tensor logits = forward_logits(m, x);
    const Tensor& w = m.params()[0];
    for (std::size_t i = 0; i < 20; ++i) {
        double mx = -1e300, z = 0.0;
        for (std::size_t c = 0; c < 3; ++c) mx = std::max(mx, logits.at(i, c));
        for (std::size_t c = 0; c < 3; ++c) z += std::exp(logits.at(i, c) - mx);
        for (std::size_t j = 0; j < 2; ++j) {
            double g = 0.0;
            for (std::size_t c = 0; c < 3; ++c)
                g += w.at(j, c) * (std::exp(logits.at(i, c) - mx) / z - (static_cast<int>(c) == y[i] ? 1.0 : 0.0));
            EXPECT_EQ(sign(delta.at(i, j)), sign(g));
            EXPECT_NEAR(std::abs(delta.at(i, j)), 0.05, 1e-15);
        }
    }
}

TEST(Attacks, PgdFindsBoxMaximizerOfConvexQuadratic) {
    // L(x) = |x - c|^2 up to a constant: A = 2I, b = -2c, with c outside the ball.
    const Tensor c = Tensor::vector({0.9, 0.05, 0.6, 0.3});
    Tensor b(Shape{4});
    for (std::size_t i = 0; i < 4; ++i) b[i] = -2.0 * c[i];
    const LossFn loss = quadratic_loss(diag({2, 2, 2, 2}), b);
    const Tensor x = Tensor::matrix({{0.4, 0.5, 0.2, 0.7}});
    const double eps = 0.1;
    const Tensor delta = run_attack(loss, x, AttackSpec::pgd(eps, 50)).delta;
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(delta[i], -eps * sign(c[i] - x[i]), 1e-6);
}

TEST(Attacks, BallAndBoxInvariantsOnRandomCases) {
    std::size_t cases = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Model m = softplus_mlp({6, 8, 4}, seed);
        Tensor x = random_tensor({25, 6}, 100 + seed, 0, 1);
        for (std::size_t i = 0; i < 6; ++i) x.at(0, i) = i % 2 ? 1.0 : 0.0;
        const LossFn loss = model_loss(m, random_labels(25, 4, seed));
        Rng rng(seed);
        const double eps = rng.uniform(0.0, 0.3);
        for (const AttackSpec& a : {AttackSpec::fgsm(eps), AttackSpec::fgsm_r(eps, seed), AttackSpec::fgsm_n(eps, seed),
                                    AttackSpec::pgd(eps, 5, InitMode::uniform_random, seed)}) {
            expect_in_ball(x, run_attack(loss, x, a).delta, eps);
            cases += 25;
        }
    }
    EXPECT_EQ(cases, 1000u);
}

TEST(Attacks, ZeroBudgetGivesZero) {
    const Model m = softplus_mlp({4, 5, 2}, 1);
    const Tensor x = random_tensor({3, 4}, 1, 0, 1);
    const LossFn loss = model_loss(m, random_labels(3, 2, 1));
    for (const AttackSpec& a : {AttackSpec::fgsm(0.0), AttackSpec::fgsm_r(0.0, 1), AttackSpec::fgsm_n(0.0, 1),
                                AttackSpec::pgd(0.0, 3, InitMode::uniform_random, 1)})
        EXPECT_EQ(run_attack(loss, x, a).delta, Tensor({3, 4}));
}

TEST(Attacks, RandomStartsAreDeterministicPerSeed) {
    const Model m = softplus_mlp({4, 5, 2}, 1);
    const Tensor x = random_tensor({6, 4}, 1, 0, 1);
    const LossFn loss = model_loss(m, random_labels(6, 2, 1));
    for (auto make : {+[](std::uint64_t s) { return AttackSpec::fgsm_r(0.2, s); },
                      +[](std::uint64_t s) { return AttackSpec::fgsm_n(0.2, s); },
                      +[](std::uint64_t s) { return AttackSpec::pgd(0.2, 3, InitMode::uniform_random, s); }}) {
        EXPECT_EQ(run_attack(loss, x, make(9)).delta, run_attack(loss, x, make(9)).delta);
        EXPECT_NE(run_attack(loss, x, make(9)).delta, run_attack(loss, x, make(10)).delta);
    }
}

TEST(Attacks, SingleStepAttacksRaiseLossOnTrainedModel) {
    const Dataset& ds = blobs();
    const LossFn loss = model_loss(trained(), ds.labels);
    const double clean = kernels::sum(per_sample_loss(trained(), ds.inputs, ds.labels));
    for (const AttackSpec& a : {AttackSpec::fgsm(0.1), AttackSpec::fgsm_r(0.1, 2), AttackSpec::fgsm_n(0.1, 2)})
        EXPECT_GT(kernels::sum(run_attack(loss, ds.inputs, a).loss_at_delta), clean) << to_string(a.kind);
}

TEST(Attacks, PgdLossGrowsWithSteps) {
    const Dataset& ds = blobs();
    const LossFn loss = model_loss(trained(), ds.labels);
    double prev = -1e300;
    for (std::size_t k : {1, 2, 5, 10, 20}) {
        const double l = kernels::sum(run_attack(loss, ds.inputs, AttackSpec::pgd(0.1, k)).loss_at_delta) / 300.0;
        EXPECT_GE(l, prev - 1e-3) << k;
        prev = l;
    }
}

TEST(Attacks, InvalidSpecsAreRejected) {
    const Model m = softplus_mlp({4, 5, 2}, 1);
    const LossFn loss = model_loss(m, {0});
    const Tensor x = random_tensor({1, 4}, 1, 0, 1);
    AttackSpec a = AttackSpec::pgd(0.1, 1);
    a.steps = 0;
    EXPECT_THROW(run_attack(loss, x, a), InvalidArgument);
    EXPECT_THROW(run_attack(loss, x, AttackSpec::pgd(-0.1, 2)), InvalidArgument);
    EXPECT_THROW(parse_attack_kind("cw"), InvalidArgument);
}

TEST(Degenerations, ScaleEndpointsAndQuadraticAv) {
    const Tensor delta = Tensor::matrix({{0.1, -0.05, 0.02}});
    EXPECT_EQ(scale_perturbation(delta, 0.0), Tensor({1, 3}));
    EXPECT_EQ(scale_perturbation(delta, 1.0), delta);
    EXPECT_THROW(scale_perturbation(delta, 1.5), InvalidArgument);
    const Tensor h = Tensor::matrix({{2, 1, 0}, {1, -3, 0.5}, {0, 0.5, 1}});
    const Tensor b = Tensor::vector({0.3, -0.2, 0.1});
    const LossFn loss = quadratic_loss(h, b);
    const Tensor x = Tensor::matrix({{0.2, 0.4, 0.6}});
    const Tensor g = input_gradient(loss, x);
    for (double m : {0.25, 0.5, 0.75}) {
        const Tensor d = scale_perturbation(delta, m);
        const double av = adversarial_variance(loss, x, d)[0];
        double gd = 0.0, dhd = 0.0;
        for (std::size_t i = 0; i < 3; ++i) {
            gd += g[i] * delta[i];
            for (std::size_t j = 0; j < 3; ++j) dhd += delta[i] * h.at(i, j) * delta[j];
        }
        EXPECT_NEAR(av, m * gd + m * m * 0.5 * dhd, 1e-14);
    }
}

TEST(Degenerations, FlipMaskCountsAndInvolution) {
    const Tensor delta = random_tensor({4, 10}, 3, -0.1, 0.1);
    const Tensor mask = flip_mask(delta.shape(), 0.3, 7);
    for (std::size_t r = 0; r < 4; ++r) {
        int neg = 0;
        for (std::size_t j = 0; j < 10; ++j) neg += mask.at(r, j) < 0;
        EXPECT_EQ(neg, 3);
    }
    EXPECT_EQ(apply_mask(apply_mask(delta, mask), mask), delta);
    EXPECT_EQ(flip_mask(delta.shape(), 0.3, 7), mask);
    const Tensor x = random_tensor({4, 10}, 4, 0.2, 0.8);
    EXPECT_LT(rel_err(flip_signs(x, delta, 0.0, 1), delta), 1e-14);
    EXPECT_THROW(flip_signs(x, delta, 0.6, 1), InvalidArgument);
    const Tensor flipped = flip_signs(x, delta, 0.5, 1);
    expect_in_ball(x, flipped, 0.1);
}

TEST(Degenerations, HalfFlipLowersAv) {
    const Dataset& ds = blobs();
    const LossFn loss = model_loss(trained(), ds.labels);
    const Tensor delta = run_attack(loss, ds.inputs, AttackSpec::pgd(0.1, 10)).delta;
    const double base = mean_of(adversarial_variance(loss, ds.inputs, delta));
    const double half = mean_of(adversarial_variance(loss, ds.inputs, flip_signs(ds.inputs, delta, 0.5, 3)));
    EXPECT_LT(half, base);
}

TEST(Degenerations, PerturbWeights) {
    const Model m = softplus_mlp({4, 5, 2}, 1);
    EXPECT_EQ(perturb_weights(m, 0.0, 3).params(), m.params());
    double s1 = -1, s2 = -1;
    const Model a = perturb_weights(m, 0.5, 3, &s1);
    const Model b = perturb_weights(m, 0.5, 3, &s2);
    EXPECT_EQ(a.params(), b.params());
    EXPECT_EQ(s1, s2);
    EXPECT_GE(s1, 0.0);
    EXPECT_LT(s1, 0.5);
    for (std::size_t k = 0; k < m.params().size(); ++k)
        for (std::size_t i = 0; i < m.params()[k].size(); ++i)
            EXPECT_LE(std::abs(a.params()[k][i] - m.params()[k][i]), s1);
    EXPECT_NE(perturb_weights(m, 0.5, 4).params(), a.params());
    EXPECT_THROW(perturb_weights(m, -1.0, 1), InvalidArgument);
}
