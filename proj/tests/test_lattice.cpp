#include <gtest/gtest.h>

#include <random>
#include <set>

#include "ladlag_bsde/lattice.hpp"
#include "oracles.hpp"

using namespace ladlag;

namespace {

EventTree binary(int periods, double p = 0.5) {
    TimeGrid g;
    for (int k = 0; k <= periods; ++k) g.instants.push_back(k);
    return build_tree(g, std::vector<int>(static_cast<std::size_t>(periods), 2),
                      std::vector<std::vector<double>>(static_cast<std::size_t>(periods), {p, 1.0 - p}));
}

EventTree random_tree(std::mt19937_64& rng, int periods) {
    std::uniform_int_distribution<int> branch(1, 3);
    std::uniform_real_distribution<double> w(0.1, 1.0);
    TimeGrid g;
    for (int k = 0; k <= periods; ++k) g.instants.push_back(0.5 * k);
    std::vector<int> b;
    for (int k = 0; k < periods; ++k) b.push_back(branch(rng));
    std::vector<std::vector<double>> probs;
    int width = 1;
    for (int k = 0; k < periods; ++k) {
        for (int i = 0; i < width; ++i) {
            std::vector<double> p(static_cast<std::size_t>(b[static_cast<std::size_t>(k)]));
            double s = 0.0;
            for (auto& v : p) s += (v = w(rng));
            for (auto& v : p) v /= s;
            probs.push_back(p);
        }
        width *= b[static_cast<std::size_t>(k)];
    }
    return build_tree(g, b, probs);
}

}  // namespace

TEST(BuildTree, SmallestTreeHasThreeNodes) {
    EXPECT_EQ(binary(1).size(), 3);
}

TEST(BuildTree, CountsNodesPerLevel) {
    const auto t = build_tree({{0.0, 1.0, 2.0}}, std::vector<int>{2, 3},
                              {{0.5, 0.5}, {0.2, 0.3, 0.5}});
    EXPECT_EQ(t.size(), 1 + 2 + 6);
    EXPECT_EQ(t.leaf_count(), 6);
    double mass = 0.0;
    for (int leaf : t.leaves()) mass += t.path_prob(leaf);
    EXPECT_NEAR(mass, 1.0, 1e-15);
}

TEST(BuildTree, RejectsProbabilitiesNotSummingToOne) {
    try {
        build_tree({{0.0, 1.0}}, std::vector<int>{2}, {{0.6, 0.5}});
        FAIL() << "accepted probabilities summing to 1.1";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::NonStochasticProbabilities);
    }
}

TEST(BuildTree, RejectsZeroBranch) {
    try {
        build_tree({{0.0, 1.0}}, std::vector<int>{2}, {{1.0, 0.0}});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::ZeroProbabilityBranch);
    }
}

TEST(ConditionalExpectation, EquiprobableMean) {
    const auto t = binary(1);
    const std::vector<double> x{0.0, 1.0, 3.0};
    EXPECT_DOUBLE_EQ(conditional_expectation(t, x, 1, 0)[0], 2.0);
}

TEST(ConditionalExpectation, WeightedThreeChildren) {
    const auto t = build_tree({{0.0, 1.0}}, std::vector<int>{3}, {{0.2, 0.3, 0.5}});
    const std::vector<double> x{0.0, 10.0, 0.0, 2.0};
    EXPECT_NEAR(conditional_expectation(t, x, 1, 0)[0], 3.0, 1e-15);
}

TEST(ConditionalExpectation, ConstantsAreFixed) {
    const auto t = binary(3, 0.3);
    const std::vector<double> x(static_cast<std::size_t>(t.size()), 4.25);
    const auto e = conditional_expectation(t, x, 3, 0);
    for (int n = 0; n < t.size(); ++n) EXPECT_NEAR(e[static_cast<std::size_t>(n)], 4.25, 1e-14);
}

TEST(ConditionalExpectation, MatchesLeafSumsOnRandomTrees) {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> nd;
    for (int rep = 0; rep < 20; ++rep) {
        const auto t = random_tree(rng, 3);
        std::vector<double> x(static_cast<std::size_t>(t.size()));
        for (auto& v : x) v = nd(rng);
        const auto e = conditional_expectation(t, x, 3, 0);
        for (int n = 0; n < t.size(); ++n)
            EXPECT_NEAR(e[static_cast<std::size_t>(n)], oracle::leaf_expectation(t, x, n), 1e-12);
    }
}

TEST(ConditionalExpectation, RejectsInvertedLevels) {
    const auto t = binary(2);
    std::vector<double> x(static_cast<std::size_t>(t.size()), 0.0);
    EXPECT_THROW(conditional_expectation(t, x, 0, 1), Error);
}

TEST(Projections, AdaptedProcessIsItsOwnOptionalProjection) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> nd;
    const auto t = random_tree(rng, 3);
    LadlagProcess x = LadlagProcess::constant(t, 0.0);
    for (int n = 0; n < t.size(); ++n) {
        x.at[static_cast<std::size_t>(n)] = nd(rng);
        x.post[static_cast<std::size_t>(n)] = t.terminal(n) ? 0.0 : nd(rng);
    }
    const auto pr = projections(t, to_path_process(t, x));
    for (int n = 0; n < t.size(); ++n) {
        EXPECT_NEAR(pr.optional.at[static_cast<std::size_t>(n)], x.at[static_cast<std::size_t>(n)], 1e-12);
        if (!t.terminal(n)) {
            EXPECT_NEAR(pr.optional.post[static_cast<std::size_t>(n)], x.post[static_cast<std::size_t>(n)], 1e-12);
        }
    }
}

TEST(Projections, PredictableProjectionOfTerminalPayoffIsTower) {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> nd;
    const auto t = random_tree(rng, 3);
    std::vector<double> payoff(static_cast<std::size_t>(t.size()), 0.0);
    for (int leaf : t.leaves()) payoff[static_cast<std::size_t>(leaf)] = nd(rng);
    auto p = PathProcess::zeros(t);
    const int first = t.level_begin(t.periods());
    for (int leaf : t.leaves())
        for (int s = 0; s < p.slots; ++s) p(leaf - first, s) = payoff[static_cast<std::size_t>(leaf)];
    const auto pr = projections(t, p);
    for (int n = 1; n < t.size(); ++n)
        EXPECT_NEAR(pr.predictable.at[static_cast<std::size_t>(n)], oracle::leaf_expectation(t, payoff, t.parent(n)),
                    1e-12);
}

TEST(LeftLimits, ConstantObstacle) {
    const auto t = binary(3);
    const auto ll = left_limit_process(t, LadlagProcess::constant(t, 2.0));
    for (int n = 0; n < t.size(); ++n) {
        if (t.terminal(n)) continue;
        EXPECT_EQ(ll.xi_bar.step[static_cast<std::size_t>(n)], 2.0);
    }
    for (int li = 0; li < t.leaf_count(); ++li)
        for (int s = 1; s < ll.brs.slots; ++s) EXPECT_EQ(ll.brs(li, s), 2.0);
}

TEST(LeftLimits, LeftLimitIsThePostValue) {
    const auto t = binary(1);
    LadlagProcess xi = LadlagProcess::constant(t, 0.0);
    xi.at[0] = 5.0;
    xi.post[0] = 3.0;
    const auto ll = left_limit_process(t, xi);
    EXPECT_EQ(ll.xi_bar.at_child(t, 1), 3.0);
    EXPECT_EQ(ll.xi_bar.at_child(t, 2), 3.0);
}

TEST(LeftLimits, BackwardRunningSupIsSuffixMax) {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> nd;
    for (int rep = 0; rep < 10; ++rep) {
        const auto t = random_tree(rng, 3);
        LadlagProcess xi = LadlagProcess::constant(t, 0.0);
        for (int n = 0; n < t.size(); ++n) {
            xi.at[static_cast<std::size_t>(n)] = nd(rng);
            xi.post[static_cast<std::size_t>(n)] = nd(rng);
        }
        const auto ll = left_limit_process(t, xi);
        const int N = t.periods(), first = t.level_begin(N);
        for (int leaf : t.leaves()) {
            const auto path = t.path_to(leaf);
            // Slots before T in time order: at(0), post(0), at(1), ..., post(N-1).
            std::vector<double> slots;
            for (int k = 0; k < N; ++k) {
                slots.push_back(xi.at[static_cast<std::size_t>(path[static_cast<std::size_t>(k)])]);
                slots.push_back(xi.post[static_cast<std::size_t>(path[static_cast<std::size_t>(k)])]);
            }
            for (int k = 0; k < N; ++k) {
                double sup = 0.0;
                for (std::size_t s = 2 * static_cast<std::size_t>(k) + 1; s < slots.size(); ++s)
                    sup = std::max(sup, slots[s]);
                EXPECT_DOUBLE_EQ(ll.brs(leaf - first, PathProcess::post_slot(k)), sup);
                EXPECT_DOUBLE_EQ(ll.brs(leaf - first, PathProcess::at_slot(k + 1)), sup);
            }
        }
    }
}

TEST(StoppingRules, OneDecisionNode) {
    EXPECT_EQ(enumerate_stopping_rules(binary(1), 0, 1).size(), 2u);
}

TEST(StoppingRules, BinaryTwoPeriods) {
    const auto t = binary(2);
    EXPECT_EQ(enumerate_stopping_rules(t, 0, 2).size(), 5u);
    EXPECT_EQ(count_stopping_rules(t, RuleWindow{{0}, 2, false}), 5.0);
}

TEST(StoppingRules, RulesAreDistinct) {
    const auto rules = enumerate_stopping_rules(binary(3), 0, 3);
    std::set<std::vector<StopAction>> seen;
    for (const auto& r : rules) seen.insert(r.action);
    EXPECT_EQ(seen.size(), rules.size());
}

TEST(StoppingRules, CapExceeded) {
    try {
        enumerate_stopping_rules(binary(6), 0, 6);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::EnumerationTooLarge);
    }
}
