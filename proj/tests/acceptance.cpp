// One PASS/FAIL line per acceptance criterion; exit status 1 when any fails.

#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "ladlag_bsde/audit.hpp"
#include "ladlag_bsde/comparison.hpp"
#include "ladlag_bsde/constants.hpp"
#include "ladlag_bsde/instances.hpp"
#include "ladlag_bsde/solvers.hpp"
#include "oracles.hpp"

using namespace ladlag;

namespace {

struct Verdict {
    bool pass = true;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// Criterion 1: closed forms against a golden-section infimum over gamma.
Verdict constants_vs_infima() {
    std::mt19937_64 rng(20240601);
    std::uniform_real_distribution<double> lb(-1.0, 3.0), lp(-3.0, 0.3);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
        const double beta = std::pow(10.0, lb(rng)), psi = std::pow(10.0, lp(rng));
        worst = std::max({worst, oracle::relative_gap(oracle::ff_infimum(beta, psi), ff(beta, psi)),
                          oracle::relative_gap(oracle::fg_infimum(beta, psi), fg(beta, psi))});
    }
    return {worst <= 1e-6, fmt("100 pairs, worst relative gap %.2e (tol 1e-6)", worst)};
}

// Criterion 2.
Verdict thresholds() {
    const double reflected_bound = 1.0 / (2.0 * (3.0 + std::sqrt(5.0)));
    const auto a = threshold_beta(ConstantId::M2, 0.05);
    const auto b = threshold_beta(ConstantId::M2, 0.10);
    const auto c = threshold_beta(ConstantId::Mt2, 0.5);
    const auto d = threshold_beta(ConstantId::Mt2, 1.5);
    const bool boundaries = threshold_beta(ConstantId::M2, reflected_bound * 0.999).beta_star.has_value() &&
                            !threshold_beta(ConstantId::M2, reflected_bound * 1.001).beta_star.has_value() &&
                            threshold_beta(ConstantId::Mt2, 0.999).beta_star.has_value() &&
                            !threshold_beta(ConstantId::Mt2, 1.001).beta_star.has_value();
    const bool ok = a.beta_star && !b.beta_star && std::abs(b.limit - 1.0472) < 1e-4 && c.beta_star &&
                    !d.beta_star && boundaries;
    return {ok, fmt("M2(0.05) beta* %.4g, M2(0.10) none with limit %.6f, Mt2(0.5) beta* %.4g, Mt2(1.5) %s, "
                    "boundaries %.4f and 1 %s",
                    a.beta_star.value_or(NAN), b.limit, c.beta_star.value_or(NAN), d.beta_star ? "finite" : "none",
                    reflected_bound, boundaries ? "sharp" : "off")};
}

// Criterion 3 at psi = 0.05.
Verdict limits() {
    const double beta = 1e6, psi = 0.05;
    const double k = 2.0 * (3.0 + std::sqrt(5.0));
    const double ffv = ff(beta, psi);
    const double e_fg = oracle::relative_gap(fg(beta, psi), psi);
    const double e_m2 = oracle::relative_gap(M_constants(beta, psi).m2, k * psi);
    const double e_mt2 = oracle::relative_gap(Mtilde_constants(beta, psi).m2, psi);
    const bool ok = ffv < 1e-5 && e_fg <= 1e-3 && e_m2 <= 1e-3 && e_mt2 <= 1e-3;
    return {ok, fmt("beta 1e6, psi 0.05: ff %.2e, relative gaps fg %.2e, M2 %.2e, Mt2 %.2e (tol 1e-3)", ffv, e_fg,
                    e_m2, e_mt2)};
}

struct SolveBatch {
    double worst_ratio_excess = -INFINITY;  // max ratio - (Mt2 + 0.05)
    int max_iterations = 0;
    int unconverged = 0;
    double worst_residual = 0.0;
    double worst_skorokhod = 0.0;
    int solved = 0;
};

// Criteria 4 to 6 share their solves.
SolveBatch solve_batch() {
    SolveBatch out;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        std::mt19937_64 r(seed * 7 + 1);
        std::uniform_real_distribution<double> u(0.0, 0.6);
        InstanceSpec s;
        s.phi = u(r);
        s.constant = ConstantId::Mt2;
        const auto inst = random_instance(seed, s);
        PicardOptions o;
        o.beta_hat = inst.beta_hat;
        o.variant = 2;
        o.phi = inst.phi;
        const auto xi = bsde_obstacle(inst.model.tree, inst.xi_terminal());
        const auto res = picard_iterate(inst.model, inst.gen, xi, EquationKind::Bsde, o);
        const double bound = Mtilde_constants(inst.beta_hat, inst.phi).m2 + 0.05;
        out.worst_ratio_excess = std::max(out.worst_ratio_excess, res.trace.max_ratio() - bound);
        out.max_iterations = std::max(out.max_iterations, res.trace.iterations);
        if (!res.trace.converged) {
            ++out.unconverged;
            continue;
        }
        ++out.solved;
        out.worst_residual = std::max(out.worst_residual, residual(inst.model, inst.gen, res.solution, xi));
    }
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        std::mt19937_64 r(seed * 11 + 3);
        std::uniform_real_distribution<double> u(0.0, 0.08);
        InstanceSpec s;
        s.reflected = true;
        s.phi = u(r);
        s.constant = ConstantId::M2;
        const auto inst = random_instance(seed + 1000, s);
        PicardOptions o;
        o.beta_hat = inst.beta_hat;
        o.variant = 2;
        o.phi = inst.phi;
        const auto res = picard_iterate(inst.model, inst.gen, inst.xi, EquationKind::Reflected, o);
        if (!res.trace.converged) {
            ++out.unconverged;
            continue;
        }
        ++out.solved;
        out.worst_residual = std::max(out.worst_residual, residual(inst.model, inst.gen, res.solution, inst.xi));
        out.worst_skorokhod = std::max(out.worst_skorokhod, verify_skorokhod(inst.model.tree, res.solution, inst.xi));
    }
    return out;
}

// Criterion 7.
Verdict representation() {
    double worst = 0.0;
    int checked = 0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        std::mt19937_64 r(seed * 5 + 2);
        InstanceSpec s;
        s.reflected = true;
        s.phi = std::uniform_real_distribution<double>(0.0, 0.08)(r);
        s.constant = ConstantId::M2;
        const auto inst = random_instance(seed + 500, s);
        const auto& tree = inst.model.tree;
        int decision = 0;
        for (int n = 0; n < tree.size(); ++n) decision += tree.terminal(n) ? 0 : 1;
        if (tree.periods() > 3 || decision > 25) return {false, fmt("seed %llu outside the tree budget", (unsigned long long)seed)};
        PicardOptions o;
        o.beta_hat = inst.beta_hat;
        o.phi = inst.phi;
        const auto res = picard_reflected(inst.model, inst.gen, inst.xi, o);
        const auto rep = verify_representation(tree, inst.model.C, res.solution.y, inst.xi, res.solution.f);
        worst = std::max(worst, rep.max_defect);
        checked += rep.slots_checked;
    }
    return {worst <= 1e-9, fmt("50 seeds, %d slots, worst |esssup - Y| %.2e (tol 1e-9)", checked, worst)};
}

// Criterion 8.
Verdict decomposition() {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> nd;
    double worst = 0.0, idem = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        InstanceSpec s;
        s.x_dim = 1 + static_cast<int>(seed % 2);
        s.marks = 1 + static_cast<int>(seed % 3);
        const auto inst = random_instance(seed, s);
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
        worst = std::max({worst, r.reconstruction, r.n_vs_x, r.n_vs_marks, r.n_mean});
        std::vector<double> again(inc.size(), 0.0);
        for (int ch = 1; ch < m.tree.size(); ++ch)
            again[static_cast<std::size_t>(ch)] = reconstruct_increment(m.tree, m.X, m.J, d, ch);
        const auto d2 = orthogonal_decomposition_of_increments(m.tree, m.X, m.J, again);
        for (std::size_t i = 0; i < d.z.values.size(); ++i) idem = std::max(idem, std::abs(d2.z.values[i] - d.z.values[i]));
        for (std::size_t i = 0; i < d.u.values.size(); ++i) idem = std::max(idem, std::abs(d2.u.values[i] - d.u.values[i]));
        for (std::size_t i = 0; i < d.dn.size(); ++i) idem = std::max(idem, std::abs(d2.dn[i] - d.dn[i]));
    }
    return {worst < 1e-12 && idem < 1e-12,
            fmt("100 instances, worst orthogonality residual %.2e, re-decomposition drift %.2e (tol 1e-12)", worst, idem)};
}

// Criterion 9.
Verdict apriori_audit() {
    int rows = 0, failures = 0, signed_rows = 0;
    double worst = INFINITY, worst_signed = 0.0;
    std::string first;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        std::mt19937_64 r(seed * 31 + 1);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        InstanceSpec s;
        s.reflected = seed % 2 == 0;
        s.phi = s.reflected ? 0.05 + 0.5 * u(r) : 0.05 + 0.7 * u(r);
        s.use_y_minus = u(r) < 0.5;
        const auto d = pair_from_instance(random_instance(seed, s), seed + 77);
        for (double beta : {0.5, 2.0, 10.0}) {
            for (double frac : {0.25, 0.5, 0.75}) {
                auto rep = audit_apriori_pair(d, beta, frac * beta);
                rep.append(audit_apriori_bsde(d, beta));
                rep.append(audit_k_estimate(d, frac * beta, beta));
                for (const auto& row : rep.rows) {
                    ++rows;
                    if (row.name.starts_with("bsde_identity_signed")) {
                        ++signed_rows;
                        worst_signed = std::max(worst_signed, std::abs(row.lhs - row.rhs));
                    } else {
                        worst = std::min(worst, row.slack);
                    }
                    if (!row.pass) {
                        ++failures;
                        if (first.empty()) first = row.name;
                    }
                }
            }
        }
    }
    const bool ok = failures == 0 && worst >= -1e-9 && worst_signed <= 1e-10 && signed_rows > 0;
    return {ok, fmt("%d rows, %d failed%s%s, worst slack %.2e (tol -1e-9), signed identity gap %.2e (tol 1e-10)",
                    rows, failures, first.empty() ? "" : " first ", first.c_str(), worst, worst_signed)};
}

// Criterion 10.
Verdict comparison() {
    int ordered = 0, total = 0;
    double worst_gap = -INFINITY;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const auto pair = random_comparison_pair(seed);
        const auto& inst = pair.instance;
        const auto rep = compare(inst.model, pair.upper, pair.lower, inst.beta_hat, inst.phi);
        ++total;
        ordered += rep.ordered ? 1 : 0;
        worst_gap = std::max(worst_gap, rep.max_gap);
    }
    const auto inst = random_instance(7, InstanceSpec{});
    const BsdeData same{inst.gen, inst.xi_terminal()};
    const auto refl = compare(inst.model, same, same, inst.beta_hat, inst.phi);
    const bool ok = ordered == total && worst_gap <= kOrderingTolerance && refl.identical;
    return {ok, fmt("%d/%d pairs ordered, worst Y' - Y %.2e (tol 1e-10), reflexive pair %s", ordered, total, worst_gap,
                    refl.identical ? "identical" : "differs")};
}

// Criterion 11.
Verdict appendix() {
    int doob_fail = 0, exp_fail = 0;
    double doob_slack = INFINITY, exp_err = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto inst = random_instance(seed, InstanceSpec{});
        const auto& tree = inst.model.tree;
        const auto row = audit_cond_doob(tree, random_nonnegative_martingale(tree, seed + 13));
        doob_fail += row.pass ? 0 : 1;
        doob_slack = std::min(doob_slack, row.slack);
        const auto A = generator_clock(inst.model, inst.gen);
        for (const auto& r : audit_exp_rules(tree, A, 2.0 + static_cast<double>(seed % 5), 0.5).rows) {
            exp_fail += r.pass ? 0 : 1;
            exp_err = std::max(exp_err, std::abs(r.lhs - r.rhs));
        }
    }
    return {doob_fail == 0 && exp_fail == 0 && exp_err <= 1e-10,
            fmt("100 martingales, Doob failures %d (min slack %.3g), exponential identity error %.2e (tol 1e-10)",
                doob_fail, doob_slack, exp_err)};
}

// Criterion 12.
Verdict sharpness() {
    const auto low = divergence_probe(0.5, 4);
    const auto high = divergence_probe(2.0, 4);
    double low_max = 0.0, high_min = INFINITY;
    for (double r : low.trace.ratios) low_max = std::max(low_max, r);
    for (double r : high.trace.ratios) high_min = std::min(high_min, r);
    const bool ok = !low.trace.ratios.empty() && !high.trace.ratios.empty() && low_max < 1.0 && high_min > 1.0;
    return {ok, fmt("alpha^2 dC = 0.5: max ratio %.3f; alpha^2 dC = 2: min ratio %.3f", low_max, high_min)};
}

}  // namespace

int main() {
    int failed = 0;
    auto report = [&](int id, const char* name, const std::function<Verdict()>& check) {
        Verdict v;
        try {
            v = check();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        failed += v.pass ? 0 : 1;
        std::printf("%s  [%2d] %s: %s\n", v.pass ? "PASS" : "FAIL", id, name, v.detail.c_str());
        std::fflush(stdout);
    };
    report(1, "constants", constants_vs_infima);
    report(2, "thresholds", thresholds);
    report(3, "limits", limits);
    SolveBatch batch;
    try {
        batch = solve_batch();
    } catch (const std::exception& e) {
        std::printf("solve batch aborted: %s\n", e.what());
        batch.unconverged = -1;
    }
    report(4, "picard contraction", [&] {
        const bool ok = batch.unconverged == 0 && batch.worst_ratio_excess <= 0.0 && batch.max_iterations <= 200;
        return Verdict{ok, fmt("100 instances, max(ratio - (Mt2 + 0.05)) %.3f, max iterations %d, unconverged %d",
                               batch.worst_ratio_excess, batch.max_iterations, batch.unconverged)};
    });
    report(5, "equation residuals", [&] {
        return Verdict{batch.solved == 200 && batch.worst_residual < 1e-10,
                       fmt("%d solutions, worst defect %.2e (tol 1e-10)", batch.solved, batch.worst_residual)};
    });
    report(6, "skorokhod", [&] {
        return Verdict{batch.solved == 200 && batch.worst_skorokhod < 1e-10,
                       fmt("100 reflected instances, worst complementarity residual %.2e (tol 1e-10)",
                           batch.worst_skorokhod)};
    });
    report(7, "representation", representation);
    report(8, "orthogonal decomposition", decomposition);
    report(9, "a priori audit", apriori_audit);
    report(10, "comparison", comparison);
    report(11, "appendix lemmas", appendix);
    report(12, "sharpness", sharpness);
    std::printf("%d of 12 criteria failed\n", failed);
    return failed == 0 ? 0 : 1;
}
