#include <gtest/gtest.h>

#include <random>

#include "ladlag_bsde/calculus.hpp"
#include "ladlag_bsde/instances.hpp"

using namespace ladlag;

namespace {

EventTree one_step(std::vector<double> probs) {
    const int b = static_cast<int>(probs.size());
    return build_tree({{0.0, 1.0}}, std::vector<int>{b}, {probs});
}

Integrator unit_jumps(const EventTree& t, double jump = 1.0, double cont = 0.0) {
    Integrator C{std::vector<double>(static_cast<std::size_t>(t.size()), 0.0),
                 std::vector<double>(static_cast<std::size_t>(t.size()), 0.0)};
    for (int n = 0; n < t.size(); ++n)
        if (!t.terminal(n)) C.jump[static_cast<std::size_t>(n)] = jump, C.cont[static_cast<std::size_t>(n)] = cont;
    return C;
}

// Four equiprobable children: X = +-1 crossed with mark / no mark.
struct Product {
    EventTree tree = one_step({0.25, 0.25, 0.25, 0.25});
    Integrator C = unit_jumps(tree);
    DriverX X = make_driver(tree, C, 1, {0.0, 1.0, -1.0, 1.0, -1.0});
    MarkedJumps J = make_marks(tree, C, 1, {-1, 0, 0, -1, -1});
};

}  // namespace

TEST(Integrator, RejectsMassAtTerminalNodes) {
    const auto t = one_step({0.5, 0.5});
    Integrator C = unit_jumps(t);
    C.jump[1] = 0.1;
    EXPECT_THROW(validate_integrator(t, C), Error);
}

TEST(LsIntegral, TotalMass) {
    const auto t = build_tree({{0.0, 1.0, 2.0}}, std::vector<int>{2, 2}, {{0.5, 0.5}, {0.5, 0.5}});
    const auto C = unit_jumps(t, 0.2, 0.3);
    const auto I = ls_integral(t, C, LadlagProcess::constant(t, 1.0), 0, 2);
    for (int leaf : t.leaves()) EXPECT_NEAR(I[static_cast<std::size_t>(leaf)], 1.0, 1e-15);
}

TEST(LsIntegral, EmptyWindow) {
    const auto t = one_step({0.5, 0.5});
    const auto I = ls_integral(t, unit_jumps(t), LadlagProcess::constant(t, 7.0), 1, 1);
    for (int leaf : t.leaves()) EXPECT_EQ(I[static_cast<std::size_t>(leaf)], 0.0);
}

TEST(LsIntegral, InvertedWindow) {
    const auto t = one_step({0.5, 0.5});
    try {
        ls_integral(t, unit_jumps(t), LadlagProcess::constant(t, 1.0), 1, 0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::WindowInverted);
    }
}

TEST(LsIntegral, SlotSumByHand) {
    const auto t = build_tree({{0.0, 1.0, 2.0}}, std::vector<int>{1, 2}, {{1.0}, {0.5, 0.5}});
    Integrator C = unit_jumps(t);
    C.cont = {0.3, 0.7, 0.0, 0.0};
    C.jump = {0.2, 0.4, 0.0, 0.0};
    LadlagProcess f = LadlagProcess::constant(t, 0.0);
    f.post = {2.0, -1.0, 0.0, 0.0};
    f.at = {9.0, 5.0, 3.0, 4.0};
    const auto I = ls_integral(t, C, f, 0, 2);
    // post(0)*0.3 + at(1)*0.2 + post(1)*0.7 + at(leaf)*0.4
    EXPECT_NEAR(I[2], 2.0 * 0.3 + 5.0 * 0.2 - 1.0 * 0.7 + 3.0 * 0.4, 1e-15);
    EXPECT_NEAR(I[3], 2.0 * 0.3 + 5.0 * 0.2 - 1.0 * 0.7 + 4.0 * 0.4, 1e-15);
}

TEST(VectorSi, IdentityIntegrandReturnsTheDriver) {
    const auto t = build_tree({{0.0, 1.0, 2.0}}, std::vector<int>{2, 2}, {{0.5, 0.5}, {0.5, 0.5}});
    const auto C = unit_jumps(t);
    const auto X = make_driver(t, C, 1, {0.0, 1.0, -1.0, 0.5, -0.5, 2.0, -2.0});
    NodeVectors one{1, std::vector<double>(static_cast<std::size_t>(t.size()), 1.0)};
    const auto M = vector_si(t, X, one);
    EXPECT_EQ(M[3], 1.5);
    EXPECT_EQ(M[6], -3.0);
    const auto Z0 = vector_si(t, X, NodeVectors::zeros(t, 1));
    for (double v : Z0) EXPECT_EQ(v, 0.0);
}

TEST(Driver, RejectsDrift) {
    const auto t = one_step({0.5, 0.5});
    try {
        make_driver(t, unit_jumps(t), 1, {0.0, 1.0, 0.0});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::DriverNotMartingale);
    }
}

TEST(Driver, RejectsMovementWithoutJumpMass) {
    const auto t = one_step({0.5, 0.5});
    try {
        make_driver(t, unit_jumps(t, 0.0, 1.0), 1, {0.0, 1.0, -1.0});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::DriverNotDominated);
    }
}

TEST(CompensatedJumps, BernoulliVariance) {
    const auto t = one_step({0.25, 0.75});
    const auto C = unit_jumps(t);
    const auto J = make_marks(t, C, 1, {-1, 0, -1});
    NodeVectors U{1, {1.0, 0.0, 0.0}};
    const auto ci = compensated_jump_integral(t, C, J, U);
    EXPECT_NEAR(ci.density[0], 0.25 * 0.75, 1e-15);
    EXPECT_NEAR(ci.martingale[1], 0.75, 1e-15);
    EXPECT_NEAR(ci.martingale[2], -0.25, 1e-15);
}

TEST(CompensatedJumps, ZeroPayload) {
    const auto t = one_step({0.25, 0.75});
    const auto C = unit_jumps(t);
    const auto J = make_marks(t, C, 1, {-1, 0, -1});
    const auto ci = compensated_jump_integral(t, C, J, NodeVectors::zeros(t, 1));
    for (double v : ci.martingale) EXPECT_EQ(v, 0.0);
    EXPECT_EQ(ci.density[0], 0.0);
}

TEST(CompensatedJumps, IsometryOnRandomPayloads) {
    std::mt19937_64 rng(21);
    std::normal_distribution<double> nd;
    for (int seed = 0; seed < 20; ++seed) {
        InstanceSpec s;
        s.marks = 2;
        const auto inst = random_instance(static_cast<std::uint64_t>(seed), s);
        const auto& m = inst.model;
        NodeVectors U = NodeVectors::zeros(m.tree, m.J.count);
        for (auto& v : U.values) v = nd(rng);
        const auto ci = compensated_jump_integral(m.tree, m.C, m.J, U);
        for (int n = 0; n < m.tree.size(); ++n) {
            if (m.tree.terminal(n)) continue;
            double second = 0.0;
            const double base = ci.martingale[static_cast<std::size_t>(n)];
            for (int ch : m.tree.children(n)) {
                const double d = ci.martingale[static_cast<std::size_t>(ch)] - base;
                second += m.tree.prob(ch) * d * d;
            }
            EXPECT_NEAR(second, ci.density[static_cast<std::size_t>(n)] * m.C.jump[static_cast<std::size_t>(n)],
                        1e-12);
        }
    }
}

TEST(Orthogonality, ProductStructurePasses) {
    Product p;
    EXPECT_TRUE(validate_driver_orthogonality(p.tree, p.X, p.J).ok);
}

TEST(Orthogonality, AlignedJumpIsLocated) {
    const auto t = one_step({0.5, 0.5});
    const auto C = unit_jumps(t);
    const auto X = make_driver(t, C, 1, {0.0, 1.0, -1.0});
    const auto J = make_marks(t, C, 1, {-1, 0, -1});
    const auto rep = validate_driver_orthogonality(t, X, J);
    EXPECT_FALSE(rep.ok);
    ASSERT_EQ(rep.violating_parents.size(), 1u);
    EXPECT_EQ(rep.violating_parents[0], 0);
}

TEST(Orthogonality, GeneratedInstancesPass) {
    for (int seed = 0; seed < 100; ++seed) {
        InstanceSpec s;
        s.x_dim = 1 + seed % 2;
        const auto inst = random_instance(static_cast<std::uint64_t>(seed), s);
        EXPECT_TRUE(validate_driver_orthogonality(inst.model.tree, inst.model.X, inst.model.J).ok) << seed;
    }
}

TEST(Decomposition, DriverIntegralProjectsOntoItself) {
    Product p;
    const auto none = make_marks(p.tree, p.C, 0, {-1, -1, -1, -1, -1});
    NodeVectors Z{1, {0.7, 0.0, 0.0, 0.0, 0.0}};
    const auto M = vector_si(p.tree, p.X, Z);
    const auto d = orthogonal_decomposition(p.tree, M, p.X, none);
    EXPECT_NEAR(d.z.row(0)[0], 0.7, 1e-14);
    for (double v : d.dn) EXPECT_NEAR(v, 0.0, 1e-14);
}

TEST(Decomposition, CompensatedIndicatorProjectsOntoItsPayload) {
    Product p;
    NodeVectors U{1, {1.3, 0.0, 0.0, 0.0, 0.0}};
    const auto ci = compensated_jump_integral(p.tree, p.C, p.J, U);
    const auto d = orthogonal_decomposition(p.tree, ci.martingale, p.X, p.J);
    EXPECT_NEAR(d.z.row(0)[0], 0.0, 1e-14);
    EXPECT_NEAR(d.u.row(0)[0], 1.3, 1e-14);
    for (double v : d.dn) EXPECT_NEAR(v, 0.0, 1e-14);
}

TEST(Decomposition, ResidualsAndIdempotenceOnRandomMartingales) {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> nd;
    for (int seed = 0; seed < 50; ++seed) {
        InstanceSpec s;
        s.x_dim = 1 + seed % 2;
        s.marks = 1 + seed % 3;
        const auto inst = random_instance(static_cast<std::uint64_t>(seed), s);
        const auto& m = inst.model;
        std::vector<double> inc(static_cast<std::size_t>(m.tree.size()), 0.0);
        for (int n = 0; n < m.tree.size(); ++n) {
            if (m.tree.terminal(n)) continue;
            double mean = 0.0;
            for (int ch : m.tree.children(n)) mean += m.tree.prob(ch) * (inc[static_cast<std::size_t>(ch)] = nd(rng));
            for (int ch : m.tree.children(n)) inc[static_cast<std::size_t>(ch)] -= mean;
        }
        const auto d = orthogonal_decomposition_of_increments(m.tree, m.X, m.J, inc);
        const auto r = decomposition_residuals(m.tree, m.X, m.J, d, inc);
        EXPECT_LT(r.reconstruction, 1e-12);
        EXPECT_LT(r.n_vs_x, 1e-12);
        EXPECT_LT(r.n_vs_marks, 1e-12);
        EXPECT_LT(r.n_mean, 1e-12);

        std::vector<double> again(inc.size(), 0.0);
        for (int ch = 1; ch < m.tree.size(); ++ch) again[static_cast<std::size_t>(ch)] = reconstruct_increment(m.tree, m.X, m.J, d, ch);
        const auto d2 = orthogonal_decomposition_of_increments(m.tree, m.X, m.J, again);
        for (std::size_t i = 0; i < d.z.values.size(); ++i) EXPECT_NEAR(d2.z.values[i], d.z.values[i], 1e-12);
        for (std::size_t i = 0; i < d.u.values.size(); ++i) EXPECT_NEAR(d2.u.values[i], d.u.values[i], 1e-12);
        for (std::size_t i = 0; i < d.dn.size(); ++i) EXPECT_NEAR(d2.dn[i], d.dn[i], 1e-12);
    }
}
