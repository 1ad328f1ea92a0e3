#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "ladlag_bsde/audit.hpp"
#include "ladlag_bsde/scenario.hpp"

using namespace ladlag;

namespace {

PairData batch_pair(std::uint64_t seed) {
    InstanceSpec s;
    std::mt19937_64 r(seed * 31 + 1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    s.reflected = seed % 2 == 0;
    s.phi = s.reflected ? 0.05 + 0.5 * u(r) : 0.05 + 0.7 * u(r);
    s.use_y_minus = u(r) < 0.5;
    return pair_from_instance(random_instance(seed, s), seed + 77);
}

const char* kTrivialScenario = R"({
  "name": "one step",
  "equation": "bsde",
  "tree": {"instants": [0, 1], "branching": [2], "probabilities": [[0.5, 0.5]]},
  "integrator": {"cont": 0.0, "jump": 1.0},
  "generator": {"kind": "zero", "alpha2_floor": 0.5},
  "obstacle": {"terminal": [2.0, 4.0]},
  "beta_hat": 100
})";

}  // namespace

TEST(Audit, EqualGeneratorsLeaveOnlyZeroDifferences) {
    auto d = batch_pair(4);
    d.f2 = d.f1;
    const auto rep = audit_apriori_pair(d, 2.0, 1.0);
    EXPECT_TRUE(rep.all_pass());
    int difference_rows = 0;
    for (const auto& row : rep.rows) {
        const bool difference = row.name.find("_dy") != std::string::npos ||
                                row.name.find("delta") != std::string::npos;
        if (!difference) continue;
        ++difference_rows;
        EXPECT_LE(row.lhs, 1e-12) << row.name;
    }
    EXPECT_GT(difference_rows, 0);
}

TEST(Audit, HandDoobExample) {
    const auto t = build_tree({{0.0, 1.0}}, std::vector<int>{2}, {{0.5, 0.5}});
    const auto row = audit_cond_doob(t, {1.0, 0.0, 2.0});
    EXPECT_DOUBLE_EQ(row.lhs, 2.5);
    EXPECT_DOUBLE_EQ(row.rhs, 8.0);
    EXPECT_TRUE(row.pass);
    EXPECT_EQ(row.node, 0);
}

TEST(Audit, ExpRulesRowsAreIdentities) {
    const auto d = batch_pair(1);
    const auto rep = audit_exp_rules(d.model.tree, d.clock, 3.0, 0.7);
    ASSERT_EQ(rep.rows.size(), 3u);
    for (const auto& row : rep.rows) {
        EXPECT_TRUE(row.identity);
        EXPECT_TRUE(row.pass) << row.name;
    }
}

TEST(Audit, GammaMustStayBelowBeta) {
    const auto d = batch_pair(2);
    EXPECT_THROW(audit_apriori_pair(d, 1.0, 1.0), Error);
}

TEST(Audit, BatchPasses) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto d = batch_pair(seed);
        for (double beta : {0.5, 2.0, 10.0}) {
            for (double frac : {0.25, 0.5, 0.75}) {
                auto rep = audit_apriori_pair(d, beta, frac * beta);
                rep.append(audit_apriori_bsde(d, beta));
                rep.append(audit_k_estimate(d, frac * beta, beta));
                for (const auto& row : rep.rows) EXPECT_TRUE(row.pass) << seed << ' ' << row.name;
            }
        }
        EXPECT_TRUE(audit_appendix(d, seed).all_pass()) << seed;
    }
}

TEST(Audit, InflatedLeftSideFails) {
    const auto row = inequality_row("probe", "probe", 1.0 + 2e-9, 1.0);
    EXPECT_FALSE(row.pass);
    EXPECT_TRUE(inequality_row("probe", "probe", 1.0 + 5e-10, 1.0).pass);
}

TEST(Scenario, ParsesAnExplicitModel) {
    const auto sc = parse_scenario(json::parse(kTrivialScenario));
    EXPECT_EQ(sc.name, "one step");
    EXPECT_EQ(sc.instance.model.tree.size(), 3);
    EXPECT_EQ(sc.instance.model.C.jump[0], 1.0);
    EXPECT_EQ(sc.instance.model.C.jump[1], 0.0);
    EXPECT_EQ(sc.instance.xi.at[2], 4.0);
    EXPECT_EQ(sc.instance.beta_hat, 100.0);
    EXPECT_TRUE(std::isinf(sc.instance.xi.at[0]));
}

TEST(Scenario, SchemaErrors) {
    auto j = json::parse(kTrivialScenario);
    j["equation"] = "forward";
    try {
        parse_scenario(j);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::SchemaError);
    }
    auto k = json::parse(kTrivialScenario);
    k["integrator"]["jump"] = json::array({1.0, 0.0});
    EXPECT_THROW(parse_scenario(k), Error);
    EXPECT_THROW(parse_scenario(json::array()), Error);
}

TEST(Scenario, NullObstacleEntriesAreMinusInfinity) {
    auto j = json::parse(kTrivialScenario);
    j["equation"] = "reflected";
    j["obstacle"]["before_terminal"] = {{"at", json::array({3.0, nullptr, nullptr})},
                                        {"post", json::array({nullptr, nullptr, nullptr})}};
    const auto sc = parse_scenario(j);
    EXPECT_EQ(sc.instance.xi.at[0], 3.0);
    EXPECT_TRUE(std::isinf(sc.instance.xi.post[0]));
}

TEST(Scenario, RandomScenariosAreDeterministic) {
    const auto j = json::parse(R"({"seed": 9, "random": {"periods": [3, 3], "marks": 2}})");
    const auto a = parse_scenario(j), b = parse_scenario(j);
    PicardOptions o;
    o.beta_hat = a.instance.beta_hat;
    o.phi = a.instance.phi;
    const auto sa = picard_bsde(a.instance.model, a.instance.gen, a.instance.xi_terminal(), o);
    const auto sb = picard_bsde(b.instance.model, b.instance.gen, b.instance.xi_terminal(), o);
    EXPECT_EQ(solution_to_json(sa.solution).dump(), solution_to_json(sb.solution).dump());
    EXPECT_NE(parse_scenario(j, 10).instance.xi_terminal(), a.instance.xi_terminal());
}

TEST(Scenario, SolutionRoundTrip) {
    const auto sc = parse_scenario(json::parse(R"({"seed": 3, "equation": "reflected", "random": {"phi": 0.05}})"));
    PicardOptions o;
    o.beta_hat = sc.instance.beta_hat;
    o.phi = sc.instance.phi;
    const auto res = picard_reflected(sc.instance.model, sc.instance.gen, sc.instance.xi, o);
    const auto back = solution_from_json(json::parse(solution_to_json(res.solution).dump()), sc.instance.model.tree);
    EXPECT_EQ(back.y.at, res.solution.y.at);
    EXPECT_EQ(back.dk_r, res.solution.dk_r);
    EXPECT_LT(residual(sc.instance.model, sc.instance.gen, back, sc.instance.xi), 1e-9);
}

TEST(Reports, CsvIsStable) {
    const auto d = batch_pair(5);
    std::ostringstream a, b;
    write_audit_csv(a, audit_apriori_pair(d, 2.0, 1.0));
    write_audit_csv(b, audit_apriori_pair(d, 2.0, 1.0));
    EXPECT_EQ(a.str(), b.str());
    EXPECT_FALSE(a.str().empty());
}
