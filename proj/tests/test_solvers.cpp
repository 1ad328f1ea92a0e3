#include <gtest/gtest.h>

#include <random>

#include "ladlag_bsde/instances.hpp"
#include "ladlag_bsde/solvers.hpp"

using namespace ladlag;

namespace {

// One step, two equiprobable children, no driver and no marks.
Model one_step(double cont, double jump) {
    Model m{build_tree({{0.0, 1.0}}, std::vector<int>{2}, {{0.5, 0.5}}), {}, {}, {}};
    m.C = {{cont, 0.0, 0.0}, {jump, 0.0, 0.0}};
    m.X = make_driver(m.tree, m.C, 0, {});
    m.J = make_marks(m.tree, m.C, 0, {-1, -1, -1});
    return m;
}

Instance instance_for(std::uint64_t seed, EquationKind kind, int variant) {
    InstanceSpec s;
    std::mt19937_64 r(seed * 7 + 1);
    s.phi = std::uniform_real_distribution<double>(0.0, 0.6)(r);
    if (kind == EquationKind::Reflected) s.phi *= 0.14;
    s.use_y = variant != 3;
    s.use_y_minus = variant != 2;
    s.reflected = kind == EquationKind::Reflected;
    s.constant = variant_constant(kind, variant);
    return random_instance(seed, s);
}

LadlagProcess obstacle_of(const Instance& inst, EquationKind kind) {
    return kind == EquationKind::Reflected ? inst.xi : bsde_obstacle(inst.model.tree, inst.xi_terminal());
}

}  // namespace

TEST(Picard, ZeroGeneratorKeepsAConstant) {
    const auto m = one_step(0.0, 1.0);
    PicardOptions o;
    o.beta_hat = 100.0;
    const auto res = picard_bsde(m, zero_generator(m.tree, 0.5), std::vector<double>{0.0, 3.0, 3.0}, o);
    for (double v : res.solution.y.at) EXPECT_DOUBLE_EQ(v, 3.0);
    EXPECT_DOUBLE_EQ(res.solution.y.post[0], 3.0);
}

TEST(Picard, LinearGeneratorMatchesTheImplicitSolve) {
    const double c = 0.5, a = 0.4;
    const auto m = one_step(c, 0.0);
    GeneratorSpec g;
    g.kind = GeneratorKind::Affine;
    g.f0 = LadlagProcess::constant(m.tree, 0.0);
    g.a = a;
    PicardOptions o;
    o.beta_hat = 10.0;
    const auto res = picard_bsde(m, g, std::vector<double>{0.0, 1.0, 3.0}, o);
    // y = E[xi] + a y c on the interval.
    EXPECT_NEAR(res.solution.y.post[0], 2.0 / (1.0 - a * c), 1e-12);
    EXPECT_EQ(res.trace.variant, 2);
    EXPECT_NEAR(res.trace.constant, 0.54, 1e-14);
    EXPECT_LE(res.trace.max_ratio(), res.trace.constant);
}

TEST(Picard, RatiosStayBelowTheConstant) {
    for (auto kind : {EquationKind::Bsde, EquationKind::Reflected}) {
        for (int variant = 1; variant <= 3; ++variant) {
            for (std::uint64_t seed = 0; seed < 15; ++seed) {
                const auto inst = instance_for(seed, kind, variant);
                PicardOptions o;
                o.beta_hat = inst.beta_hat;
                o.variant = variant;
                o.phi = inst.phi;
                const auto xi = obstacle_of(inst, kind);
                const auto res = picard_iterate(inst.model, inst.gen, xi, kind, o);
                EXPECT_TRUE(res.trace.converged);
                EXPECT_TRUE(res.trace.verified);
                EXPECT_LE(res.trace.max_ratio(), res.trace.constant + 1e-9) << variant << ' ' << seed;
                EXPECT_LT(residual(inst.model, inst.gen, res.solution, xi), 1e-9);
            }
        }
    }
}

TEST(Picard, InactiveObstacleReducesToTheBsde) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto inst = instance_for(seed, EquationKind::Bsde, 2);
        PicardOptions o;
        o.beta_hat = inst.beta_hat;
        o.phi = inst.phi;
        o.force = true;
        const auto xi = bsde_obstacle(inst.model.tree, inst.xi_terminal());
        const auto bsde = picard_bsde(inst.model, inst.gen, inst.xi_terminal(), o);
        const auto refl = picard_reflected(inst.model, inst.gen, xi, o);
        for (std::size_t i = 0; i < bsde.solution.y.at.size(); ++i) {
            EXPECT_NEAR(bsde.solution.y.at[i], refl.solution.y.at[i], 1e-12);
            EXPECT_NEAR(bsde.solution.y.post[i], refl.solution.y.post[i], 1e-12);
        }
        for (int n = 0; n < inst.model.tree.size(); ++n) {
            if (inst.model.tree.terminal(n)) continue;
            EXPECT_EQ(refl.solution.dk_r[static_cast<std::size_t>(n)], 0.0);
            EXPECT_EQ(refl.solution.dk_l[static_cast<std::size_t>(n)], 0.0);
        }
    }
}

TEST(Picard, VariantMustMatchTheGenerator) {
    const auto inst = instance_for(3, EquationKind::Bsde, 1);
    PicardOptions o;
    o.beta_hat = inst.beta_hat;
    o.variant = 2;
    try {
        picard_bsde(inst.model, inst.gen, inst.xi_terminal(), o);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::VariantDependenceMismatch);
    }
}

TEST(Picard, RefusesWithoutContraction) {
    const auto inst = instance_for(4, EquationKind::Bsde, 2);
    PicardOptions o;
    o.beta_hat = 0.01;
    try {
        picard_bsde(inst.model, inst.gen, inst.xi_terminal(), o);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::NotContractive);
    }
}

TEST(Picard, DeclaredPhiBelowTheClockJump) {
    const auto inst = instance_for(5, EquationKind::Bsde, 2);
    PicardOptions o;
    o.beta_hat = inst.beta_hat;
    o.phi = 0.0;
    const auto clock = generator_clock(inst.model, inst.gen);
    if (clock.phi_eff == 0.0) GTEST_SKIP() << "instance has no jump mass";
    EXPECT_THROW(picard_bsde(inst.model, inst.gen, inst.xi_terminal(), o), Error);
}

TEST(Picard, VariantsAndStartsAgree) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        InstanceSpec s;
        s.phi = 0.05;
        s.constant = ConstantId::Mt1;
        const auto inst = random_instance(seed, s);
        PicardOptions o;
        o.beta_hat = inst.beta_hat;
        o.force = true;
        std::vector<LadlagProcess> ys;
        for (int variant : {1, 2}) {
            o.variant = variant;
            for (bool random_init : {false, true}) {
                o.random_init = random_init;
                o.seed = seed + 100;
                ys.push_back(picard_bsde(inst.model, inst.gen, inst.xi_terminal(), o).solution.y);
            }
        }
        for (const auto& y : ys) {
            for (std::size_t i = 0; i < y.at.size(); ++i) {
                EXPECT_NEAR(y.at[i], ys[0].at[i], 1e-9);
                EXPECT_NEAR(y.post[i], ys[0].post[i], 1e-9);
            }
        }
    }
}

TEST(Residual, DetectsAPerturbation) {
    const auto inst = instance_for(1, EquationKind::Bsde, 2);
    PicardOptions o;
    o.beta_hat = inst.beta_hat;
    auto res = picard_bsde(inst.model, inst.gen, inst.xi_terminal(), o);
    const auto xi = bsde_obstacle(inst.model.tree, inst.xi_terminal());
    EXPECT_LT(residual(inst.model, inst.gen, res.solution, xi), 1e-9);
    res.solution.y.at[0] += 1e-3;
    EXPECT_NEAR(residual(inst.model, inst.gen, res.solution, xi), 1e-3, 1e-9);
}

TEST(DivergenceProbe, SaturatedJumpDiverges) {
    EXPECT_TRUE(divergence_probe(2.0, 4).not_contractive);
    EXPECT_FALSE(divergence_probe(0.5, 4).not_contractive);
}
