// Command-line front end: solve, compare, audit, constants, threshold and
// counterexample. Artifacts go to --out; the exit code is 0 only when every
// requested check passes.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "ladlag_bsde/audit.hpp"
#include "ladlag_bsde/comparison.hpp"
#include "ladlag_bsde/constants.hpp"
#include "ladlag_bsde/scenario.hpp"
#include "ladlag_bsde/solvers.hpp"

namespace fs = std::filesystem;
using namespace ladlag;

namespace {

enum Exit : int { kOk = 0, kCheckFailed = 1, kError = 2, kHypothesis = 3 };

struct Common {
    std::string scenario;
    std::string out = "ladlag_out";
    std::optional<std::uint64_t> seed;
    std::optional<int> variant;
    std::optional<double> beta;
    std::optional<double> phi;
    bool force = false;
};

void add_common(CLI::App* sub, Common& c, bool needs_scenario) {
    auto* opt = sub->add_option("--scenario", c.scenario, "Scenario JSON file");
    if (needs_scenario) opt->required()->check(CLI::ExistingFile);
    sub->add_option("--out", c.out, "Output directory");
    sub->add_option("--seed", c.seed, "Seed override");
    sub->add_option("--variant", c.variant, "Contraction variant")->check(CLI::Range(1, 3));
    sub->add_option("--beta", c.beta, "Weight parameter beta_hat");
    sub->add_option("--phi", c.phi, "Declared bound on the clock jumps");
    sub->add_flag("--force", c.force, "Iterate even when the constant is not below 1");
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    if (!out) throw Error(Errc::SchemaError, "cannot write " + p.string());
    out << text;
}

void write_json(const fs::path& p, const json& j) { write_file(p, j.dump(2) + "\n"); }

Scenario load(const Common& c) {
    Scenario sc = load_scenario(c.scenario, c.seed);
    if (c.variant) sc.variant = *c.variant;
    if (c.beta) sc.instance.beta_hat = *c.beta;
    if (c.phi) sc.instance.phi = *c.phi;
    return sc;
}

PicardOptions picard_options(const Scenario& sc, const Common& c) {
    PicardOptions opt;
    opt.beta_hat = sc.instance.beta_hat;
    opt.variant = sc.variant;
    opt.tol = sc.tol.picard;
    opt.phi = sc.instance.phi;
    opt.force = c.force;
    return opt;
}

void print_row(const AuditRow& r) {
    std::cout << (r.pass ? "PASS " : "FAIL ") << r.name << "  lhs=" << format_number(r.lhs)
              << " rhs=" << format_number(r.rhs) << " slack=" << format_number(r.slack) << '\n';
}

int run_solve(const Common& c) {
    const Scenario sc = load(c);
    const auto& inst = sc.instance;
    fs::create_directories(c.out);
    const auto res = finish(picard_iterate(inst.model, inst.gen, inst.xi, sc.equation, picard_options(sc, c)));
    AuditReport checks;
    const auto tol = sc.tol.for_audit();
    const double defect = residual(inst.model, inst.gen, res.solution, inst.xi);
    checks.rows.push_back(inequality_row("equation_residual", "backward dynamics", defect, sc.tol.residual, {0.0, 0.0}));
    if (sc.equation == EquationKind::Reflected) {
        const double sk = verify_skorokhod(inst.model.tree, res.solution, inst.xi);
        const auto ob = verify_obstacle(inst.model.tree, res.solution, inst.xi);
        checks.rows.push_back(inequality_row("skorokhod", "complementarity", sk, sc.tol.residual, {0.0, 0.0}));
        checks.rows.push_back(inequality_row("obstacle", "Y above the obstacle", ob.below_obstacle, 0.0, tol));
        checks.rows.push_back(inequality_row("increments", "K non-decreasing", ob.negative_increment, 0.0, tol));
    }
    write_json(fs::path(c.out) / "solution.json", solution_to_json(res.solution));
    std::ostringstream trace;
    write_trace_csv(trace, res.trace);
    write_file(fs::path(c.out) / "trace.csv", trace.str());
    std::ostringstream rows;
    write_audit_csv(rows, checks);
    write_file(fs::path(c.out) / "residuals.csv", rows.str());
    write_json(fs::path(c.out) / "summary.json",
               {{"scenario", sc.name}, {"trace", to_json(res.trace)}, {"checks", to_json(checks)},
                {"y0", res.solution.y.at[0]}});
    std::cout << "converged in " << res.trace.iterations << " iterations, constant "
              << format_number(res.trace.constant) << ", max ratio " << format_number(res.trace.max_ratio()) << '\n';
    for (const auto& r : checks.rows) print_row(r);
    return checks.all_pass() ? kOk : kCheckFailed;
}

int run_compare(const Common& c) {
    const Scenario sc = load(c);
    if (!sc.lower) throw Error(Errc::SchemaError, "compare needs a 'lower' section");
    const auto& inst = sc.instance;
    fs::create_directories(c.out);
    const BsdeData upper{inst.gen, inst.xi_terminal()};
    const auto rep = compare_unchecked(inst.model, upper, *sc.lower, inst.beta_hat, inst.phi);
    const auto& h = rep.hypotheses;
    json out = {{"ordered", rep.ordered},
                {"identical", rep.identical},
                {"max_gap", rep.max_gap},
                {"witness", rep.witness},
                {"hypotheses",
                 {{"ok", h.ok()},
                  {"failed", h.failed},
                  {"terminal_excess", h.terminal_excess},
                  {"generator_excess", h.generator_excess},
                  {"phi_eff", h.phi_eff},
                  {"jump_margin", h.jump_margin},
                  {"polarization_defect", h.polarization_defect},
                  {"coefficient_excess", h.coefficient_excess},
                  {"min_exp", h.min_exp}}},
                {"measure",
                 {{"root_mean_defect", rep.measure.root_mean_defect},
                  {"margin", rep.measure.margin},
                  {"x_martingale_defect", rep.measure.x_martingale_defect},
                  {"u_martingale_defect", rep.measure.u_martingale_defect},
                  {"n_martingale_defect", rep.measure.n_martingale_defect}}}};
    write_json(fs::path(c.out) / "comparison.json", out);
    if (!h.ok()) {
        std::cerr << "HypothesisViolated: " << h.failed << '\n';
        return kHypothesis;
    }
    std::cout << (rep.ordered ? "PASS" : "FAIL") << " ordering, max gap " << format_number(rep.max_gap)
              << (rep.identical ? " (identical)" : "") << '\n';
    return rep.ordered ? kOk : kCheckFailed;
}

// Checks a stored solution against the scenario without re-solving.
AuditReport audit_solution_file(const Scenario& sc, const std::string& path) {
    const auto& inst = sc.instance;
    const auto sol = solution_from_json(read_json_file(path), inst.model.tree);
    AuditReport rep;
    const double defect = residual(inst.model, inst.gen, sol, inst.xi);
    rep.rows.push_back(inequality_row("equation_residual", "backward dynamics", defect, sc.tol.residual, {0.0, 0.0}));
    const auto ob = verify_obstacle(inst.model.tree, sol, inst.xi);
    rep.rows.push_back(inequality_row("terminal", "Y_T = xi_T", ob.terminal_mismatch, sc.tol.residual, {0.0, 0.0}));
    rep.rows.push_back(inequality_row("obstacle", "Y above the obstacle", ob.below_obstacle, 0.0, sc.tol.for_audit()));
    rep.rows.push_back(inequality_row("increments", "K non-decreasing", ob.negative_increment, 0.0, sc.tol.for_audit()));
    rep.rows.push_back(inequality_row("skorokhod", "complementarity", verify_skorokhod(inst.model.tree, sol, inst.xi),
                                      sc.tol.residual, {0.0, 0.0}));
    return rep;
}

std::string grid_tag(double beta, double gamma) {
    std::ostringstream os;
    os << "[beta=" << beta << ",gamma=" << gamma << ']';
    return os.str();
}

AuditReport audit_scenario(const Scenario& sc, std::uint64_t seed, std::vector<NormRow>& norms) {
    const auto& inst = sc.instance;
    PairData d = pair_from_instance(inst, seed);
    d.f1 = generator_at_zero(inst.model, inst.gen);
    const auto tol = sc.tol.for_audit();
    AuditReport rep;
    auto tagged = [&rep](AuditReport part, const std::string& tag) {
        for (auto& r : part.rows) r.name += tag;
        rep.append(part);
    };
    const auto sol = solve_exogenous(d.model.tree, d.model.C, d.model.X, d.model.J, d.xi, d.f1);
    for (double beta : sc.audit_betas) {
        const WeightContext w(d.model.tree, d.model.C, d.clock, beta);
        norms.push_back({"L2beta_xi_T", beta, norm_l2(w, inst.xi_terminal())});
        norms.push_back({"S2Tbeta_y", beta, norm_s2(w, sol.y)});
        norms.push_back({"H2Tbeta_alpha_y", beta, norm_h2(w, multiply_by_alpha(d.model.tree, d.clock, sol.y))});
        norms.push_back({"H2Tbeta_f_over_alpha", beta, norm_h2(w, divide_by_alpha(d.model.tree, d.clock, d.f1))});
        norms.push_back({"H2mart_eta", beta, norm_h2mart_increments(w, sol.eta_increment)});
        norms.push_back({"I2Tbeta_k_r", beta, norm_i2(w, sol.dk_r_on_children(d.model.tree))});
        norms.push_back({"I2Tbeta_k_l", beta, norm_i2(w, sol.dk_l)});
        tagged(audit_apriori_bsde(d, beta, tol), grid_tag(beta, 0.0));
        for (double frac : sc.audit_gamma_fractions) {
            const double gamma = frac * beta;
            tagged(audit_apriori_pair(d, beta, gamma, tol), grid_tag(beta, gamma));
            tagged(audit_k_estimate(d, gamma, beta, tol), grid_tag(beta, gamma));
        }
    }
    rep.append(audit_appendix(d, seed, tol));
    return rep;
}

int run_audit(const Common& c, const std::string& solution) {
    const Scenario sc = load(c);
    fs::create_directories(c.out);
    std::vector<NormRow> norms;
    const AuditReport rep = solution.empty() ? audit_scenario(sc, sc.seed, norms) : audit_solution_file(sc, solution);
    std::ostringstream csv;
    write_audit_csv(csv, rep);
    write_file(fs::path(c.out) / "audit.csv", csv.str());
    write_json(fs::path(c.out) / "audit.json", to_json(rep));
    if (!norms.empty()) {
        std::ostringstream n;
        write_norms_csv(n, norms);
        write_file(fs::path(c.out) / "norms.csv", n.str());
    }
    for (const auto& note : rep.notes) std::cout << "note: " << note << '\n';
    for (const auto& r : rep.rows)
        if (!r.pass) print_row(r);
    std::cout << rep.rows.size() - static_cast<std::size_t>(rep.failures()) << '/' << rep.rows.size()
              << " rows pass, worst slack " << format_number(rep.worst_slack()) << '\n';
    return rep.all_pass() ? kOk : kCheckFailed;
}

int run_constants(const Common& c) {
    const double phi = c.phi.value_or(0.0);
    const auto rep = constants_report(phi, c.beta);
    const json out = constants_to_json(rep);
    fs::create_directories(c.out);
    write_json(fs::path(c.out) / "constants.json", out);
    std::cout << out.dump(2) << '\n';
    return kOk;
}

int run_threshold(const Common& c, const std::string& constant, double level) {
    const auto id = constant_from_string(constant);
    if (!id) throw Error(Errc::SchemaError, "unknown constant " + constant);
    const double phi = c.phi.value_or(0.0);
    const auto th = threshold_beta(*id, phi, level);
    const json out = {{"constant", constant},
                      {"phi", phi},
                      {"level", level},
                      {"beta_star", th.beta_star ? json(*th.beta_star) : json(nullptr)},
                      {"limit", th.limit},
                      {"diagnostic", th.diagnostic}};
    fs::create_directories(c.out);
    write_json(fs::path(c.out) / "threshold.json", out);
    std::cout << out.dump(2) << '\n';
    return kOk;
}

int run_counterexample(const Common& c, const std::vector<double>& alphas, int periods) {
    fs::create_directories(c.out);
    std::ostringstream csv;
    csv << "alpha_jump,iteration,ratio\n";
    json out = json::array();
    for (double a : alphas) {
        const auto probe = divergence_probe(a, periods);
        for (std::size_t k = 0; k < probe.trace.ratios.size(); ++k)
            csv << format_number(a) << ',' << k + 2 << ',' << format_number(probe.trace.ratios[k]) << '\n';
        out.push_back({{"alpha_jump", a},
                       {"not_contractive", probe.not_contractive},
                       {"converged", probe.trace.converged},
                       {"max_ratio", probe.trace.max_ratio()},
                       {"ratios", probe.trace.ratios}});
        std::cout << "alpha^2 dC = " << a << ": max ratio " << format_number(probe.trace.max_ratio())
                  << (probe.not_contractive ? " (not contractive)" : "") << '\n';
    }
    write_file(fs::path(c.out) / "probe.csv", csv.str());
    write_json(fs::path(c.out) / "probe.json", out);
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Reflected and plain BSDEs on finite event trees"};
    app.require_subcommand(1);

    Common solve_c, compare_c, audit_c, constants_c, threshold_c, probe_c;
    auto* solve = app.add_subcommand("solve", "Picard solve of a scenario");
    add_common(solve, solve_c, true);
    auto* compare = app.add_subcommand("compare", "Check the ordering of two equations");
    add_common(compare, compare_c, true);
    auto* audit = app.add_subcommand("audit", "Run the estimate audits, or check a stored solution");
    add_common(audit, audit_c, true);
    std::string solution_file;
    audit->add_option("--solution", solution_file, "Solution JSON to check instead of running the estimate audits")
        ->check(CLI::ExistingFile);
    auto* constants = app.add_subcommand("constants", "Contraction constants and thresholds");
    add_common(constants, constants_c, false);
    auto* threshold = app.add_subcommand("threshold", "Smallest beta with constant below a level");
    add_common(threshold, threshold_c, false);
    std::string constant = "M2";
    double level = 1.0;
    threshold->add_option("--constant", constant, "M1 M2 M3 Mt1 Mt2 Mt3");
    threshold->add_option("--level", level, "Target level");
    auto* probe = app.add_subcommand("counterexample", "Divergence probe on the saturating instance");
    add_common(probe, probe_c, false);
    std::vector<double> alphas{0.5, 2.0};
    int periods = 6;
    probe->add_option("--alpha", alphas, "Values of alpha^2 dC");
    probe->add_option("--periods", periods, "Tree depth")->check(CLI::PositiveNumber);

    CLI11_PARSE(app, argc, argv);
    try {
        if (*solve) return run_solve(solve_c);
        if (*compare) return run_compare(compare_c);
        if (*audit) return run_audit(audit_c, solution_file);
        if (*constants) return run_constants(constants_c);
        if (*threshold) return run_threshold(threshold_c, constant, level);
        if (*probe) return run_counterexample(probe_c, alphas, periods);
    } catch (const Error& e) {
        std::cerr << e.what() << '\n';
        return e.code() == Errc::HypothesisViolated ? kHypothesis : kError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kError;
    }
    return kError;
}
