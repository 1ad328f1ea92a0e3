#pragma once

// Scenario files, solution files and report writers. The schema is documented
// in README.md; every node-indexed field accepts a scalar (broadcast) or an
// array with one entry per node in breadth-first order. Obstacle entries may
// be null for -inf.

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "audit.hpp"
#include "comparison.hpp"
#include "constants.hpp"
#include "errors.hpp"
#include "generator.hpp"
#include "instances.hpp"
#include "lattice.hpp"
#include "solvers.hpp"

namespace ladlag {

using json = nlohmann::json;

struct ScenarioTolerances {
    double picard = 1e-10;
    double residual = 1e-10;
    double audit = kAuditTolerance;
    double identity = kIdentityTolerance;

    AuditTolerances for_audit() const { return {audit, identity}; }
};

// Defaults, replaced wholesale by LADLAG_BSDE_TOL when it parses as a
// positive number.
inline ScenarioTolerances default_tolerances() {
    ScenarioTolerances t;
    if (const char* env = std::getenv("LADLAG_BSDE_TOL")) {
        char* end = nullptr;
        const double v = std::strtod(env, &end);
        if (end != env && *end == '\0' && v > 0.0) t.picard = t.residual = t.audit = t.identity = v;
    }
    return t;
}

struct Scenario {
    std::string name;
    std::uint64_t seed = 0;
    EquationKind equation = EquationKind::Bsde;
    Instance instance;              // model, generator, obstacle, phi, beta_hat
    std::optional<BsdeData> lower;  // second equation for compare
    int variant = 0;
    ScenarioTolerances tol;
    std::vector<double> audit_betas{0.5, 2.0, 10.0};
    std::vector<double> audit_gamma_fractions{0.25, 0.5, 0.75};
};

namespace detail {

[[noreturn]] inline void schema_error(const std::string& what) { throw Error(Errc::SchemaError, what); }

inline const json& require(const json& j, const char* key) {
    if (!j.is_object() || !j.contains(key)) schema_error(std::string("missing field '") + key + "'");
    return j.at(key);
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
    if (!j.is_object() || !j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        schema_error(std::string("field '") + key + "': " + e.what());
    }
}

inline double number(const json& v, const std::string& where, bool allow_null) {
    if (v.is_null()) {
        if (allow_null) return kNegInf;
        schema_error(where + ": null not allowed");
    }
    if (!v.is_number()) schema_error(where + ": number expected");
    return v.get<double>();
}

// Scalar broadcast or one value per node.
inline std::vector<double> node_values(const json& v, int size, const std::string& where, bool allow_null = false) {
    if (v.is_array()) {
        if (static_cast<int>(v.size()) != size)
            schema_error(where + ": expected " + std::to_string(size) + " entries, got " + std::to_string(v.size()));
        std::vector<double> out;
        out.reserve(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) out.push_back(number(v[i], where, allow_null));
        return out;
    }
    return std::vector<double>(static_cast<std::size_t>(size), number(v, where, allow_null));
}

inline LadlagProcess ladlag_values(const json& v, const EventTree& tree, const std::string& where,
                                   bool allow_null = false) {
    if (v.is_object())
        return {node_values(require(v, "at"), tree.size(), where + ".at", allow_null),
                node_values(require(v, "post"), tree.size(), where + ".post", allow_null)};
    auto x = node_values(v, tree.size(), where, allow_null);
    return {x, x};
}

// Terminal values: scalar, one per leaf, or one per node.
inline std::vector<double> terminal_values(const json& v, const EventTree& tree, const std::string& where) {
    std::vector<double> out(static_cast<std::size_t>(tree.size()), 0.0);
    if (v.is_array() && static_cast<int>(v.size()) == tree.leaf_count() && tree.leaf_count() != tree.size()) {
        int i = 0;
        for (int leaf : tree.leaves()) out[static_cast<std::size_t>(leaf)] = number(v[static_cast<std::size_t>(i++)], where, false);
        return out;
    }
    return node_values(v, tree.size(), where);
}

inline GeneratorKind generator_kind(const std::string& s) {
    if (s == "zero") return GeneratorKind::Zero;
    if (s == "affine") return GeneratorKind::Affine;
    if (s == "lipschitz") return GeneratorKind::Lipschitz;
    schema_error("generator kind '" + s + "' is not zero, affine or lipschitz");
}

inline GeneratorSpec parse_generator(const json& j, const Model& m) {
    GeneratorSpec g;
    g.kind = generator_kind(get_or<std::string>(j, "kind", "zero"));
    g.f0 = j.contains("f0") ? ladlag_values(j.at("f0"), m.tree, "generator.f0") : LadlagProcess::constant(m.tree, 0.0);
    g.a = get_or<double>(j, "a", 0.0);
    g.b = get_or<double>(j, "b", 0.0);
    g.h = get_or<std::vector<double>>(j, "h", std::vector<double>(static_cast<std::size_t>(m.X.dim), 0.0));
    g.g = get_or<std::vector<double>>(j, "g", std::vector<double>(static_cast<std::size_t>(m.J.count), 0.0));
    g.alpha2_floor = get_or<double>(j, "alpha2_floor", 0.0);
    validate_generator(m, g);
    return g;
}

inline InstanceSpec parse_random_spec(const json& j) {
    InstanceSpec s;
    if (j.contains("periods")) {
        const auto p = j.at("periods").get<std::vector<int>>();
        if (p.size() != 2) schema_error("random.periods must be [min, max]");
        s.periods_min = p[0];
        s.periods_max = p[1];
    }
    if (j.contains("branching")) {
        const auto b = j.at("branching").get<std::vector<int>>();
        if (b.size() != 2) schema_error("random.branching must be [min, max]");
        s.branch_min = b[0];
        s.branch_max = b[1];
    }
    s.x_dim = get_or<int>(j, "x_dim", s.x_dim);
    s.marks = get_or<int>(j, "marks", s.marks);
    s.phi = get_or<double>(j, "phi", s.phi);
    s.cont_max = get_or<double>(j, "cont_max", s.cont_max);
    s.kind = generator_kind(get_or<std::string>(j, "generator", to_string(s.kind)));
    s.use_y = get_or<bool>(j, "use_y", s.use_y);
    s.use_y_minus = get_or<bool>(j, "use_y_minus", s.use_y_minus);
    s.use_z = get_or<bool>(j, "use_z", s.use_z);
    s.use_u = get_or<bool>(j, "use_u", s.use_u);
    s.alpha2_floor = get_or<double>(j, "alpha2_floor", s.alpha2_floor);
    s.reflected = get_or<bool>(j, "reflected", s.reflected);
    s.neg_inf_share = get_or<double>(j, "neg_inf_share", s.neg_inf_share);
    if (j.contains("constant")) {
        const auto id = constant_from_string(j.at("constant").get<std::string>());
        if (!id) schema_error("random.constant must be one of M1 M2 M3 Mt1 Mt2 Mt3");
        s.constant = *id;
    }
    s.constant_level = get_or<double>(j, "constant_level", s.constant_level);
    return s;
}

inline Model parse_model(const json& j) {
    const auto& t = require(j, "tree");
    TimeGrid grid{get_or<std::vector<double>>(t, "instants", {})};
    const auto branching = get_or<std::vector<int>>(t, "branching", {});
    const auto probs = get_or<std::vector<std::vector<double>>>(t, "probabilities", {});
    Model m{build_tree(grid, branching, probs), {}, {}, {}};
    const int size = m.tree.size();
    const auto& c = require(j, "integrator");
    m.C.cont = node_values(get_or<json>(c, "cont", 0.0), size, "integrator.cont");
    m.C.jump = node_values(get_or<json>(c, "jump", 0.0), size, "integrator.jump");
    for (int leaf : m.tree.leaves()) m.C.cont[static_cast<std::size_t>(leaf)] = m.C.jump[static_cast<std::size_t>(leaf)] = 0.0;
    validate_integrator(m.tree, m.C);
    const json drv = get_or<json>(j, "driver", json::object());
    const int dim = get_or<int>(drv, "dim", 0);
    std::vector<double> inc = dim > 0 ? get_or<std::vector<double>>(drv, "increments", {}) : std::vector<double>{};
    m.X = make_driver(m.tree, m.C, dim, std::move(inc));
    const json mk = get_or<json>(j, "marks", json::object());
    const int count = get_or<int>(mk, "count", 0);
    std::vector<int> child_marks = get_or<std::vector<int>>(mk, "child_marks", std::vector<int>(static_cast<std::size_t>(size), -1));
    m.J = make_marks(m.tree, m.C, count, std::move(child_marks));
    return m;
}

}  // namespace detail

inline Scenario parse_scenario(const json& j, std::optional<std::uint64_t> seed_override = std::nullopt) {
    if (!j.is_object()) detail::schema_error("scenario must be a JSON object");
    Scenario sc;
    sc.name = detail::get_or<std::string>(j, "name", "scenario");
    sc.seed = seed_override.value_or(detail::get_or<std::uint64_t>(j, "seed", 0));
    const auto eq = detail::get_or<std::string>(j, "equation", "bsde");
    if (eq == "bsde") sc.equation = EquationKind::Bsde;
    else if (eq == "reflected") sc.equation = EquationKind::Reflected;
    else detail::schema_error("equation must be bsde or reflected");
    sc.variant = detail::get_or<int>(j, "variant", 0);
    if (sc.variant < 0 || sc.variant > 3) detail::schema_error("variant must be 0, 1, 2 or 3");

    sc.tol = default_tolerances();
    if (j.contains("tolerances")) {
        const auto& t = j.at("tolerances");
        sc.tol.picard = detail::get_or<double>(t, "picard", sc.tol.picard);
        sc.tol.residual = detail::get_or<double>(t, "residual", sc.tol.residual);
        sc.tol.audit = detail::get_or<double>(t, "audit", sc.tol.audit);
        sc.tol.identity = detail::get_or<double>(t, "identity", sc.tol.identity);
    }
    if (j.contains("audit")) {
        const auto& a = j.at("audit");
        sc.audit_betas = detail::get_or<std::vector<double>>(a, "betas", sc.audit_betas);
        sc.audit_gamma_fractions = detail::get_or<std::vector<double>>(a, "gamma_fractions", sc.audit_gamma_fractions);
    }

    auto& inst = sc.instance;
    inst.seed = sc.seed;
    if (j.contains("random")) {
        const auto& rj = j.at("random");
        auto spec = detail::parse_random_spec(rj);
        if (sc.equation == EquationKind::Reflected) spec.reflected = true;
        // Calibrate beta_hat against the constant the solver will check.
        if (!rj.contains("constant")) {
            const int v = sc.variant != 0 ? sc.variant : (spec.use_y && spec.use_y_minus) ? 1 : (spec.use_y_minus ? 3 : 2);
            spec.constant = variant_constant(sc.equation, v);
        }
        inst = random_instance(sc.seed, spec);
    } else {
        inst.model = detail::parse_model(j);
        const auto& tree = inst.model.tree;
        inst.gen = detail::parse_generator(detail::require(j, "generator"), inst.model);
        const auto& ob = detail::require(j, "obstacle");
        const auto terminal = detail::terminal_values(detail::require(ob, "terminal"), tree, "obstacle.terminal");
        inst.xi = bsde_obstacle(tree, terminal);
        if (sc.equation == EquationKind::Reflected) {
            const json none = nullptr;
            const auto before = detail::ladlag_values(
                ob.contains("before_terminal") ? ob.at("before_terminal") : none, tree, "obstacle.before_terminal", true);
            for (int n = 0; n < tree.size(); ++n) {
                if (tree.terminal(n)) continue;
                inst.xi.at[static_cast<std::size_t>(n)] = before.at[static_cast<std::size_t>(n)];
                inst.xi.post[static_cast<std::size_t>(n)] = before.post[static_cast<std::size_t>(n)];
            }
        }
        const auto A = generator_clock(inst.model, inst.gen);
        inst.phi = detail::get_or<double>(j, "phi", A.phi_eff);
        if (A.phi_eff > inst.phi * (1.0 + 1e-12) + 1e-15)
            throw Error(Errc::PhiExceeded, "clock jump " + std::to_string(A.phi_eff) + " exceeds phi " +
                                               std::to_string(inst.phi));
        const int variant = sc.variant == 0 ? auto_variant(inst.gen) : sc.variant;
        const auto th = threshold_beta(variant_constant(sc.equation, variant), inst.phi, 0.9);
        inst.beta_hat = th.beta_star.value_or(1.0);
    }
    if (j.contains("phi") && j.contains("random")) inst.phi = j.at("phi").get<double>();
    inst.beta_hat = detail::get_or<double>(j, "beta_hat", inst.beta_hat);

    if (j.contains("lower")) {
        const auto& lo = j.at("lower");
        BsdeData d;
        d.gen = lo.contains("generator") ? detail::parse_generator(lo.at("generator"), inst.model) : inst.gen;
        d.xi_terminal = lo.contains("terminal")
                            ? detail::terminal_values(lo.at("terminal"), inst.model.tree, "lower.terminal")
                            : inst.xi_terminal();
        if (lo.contains("shift")) {
            const double s = lo.at("shift").get<double>();
            for (auto& v : d.gen.f0.at) v -= s;
            for (auto& v : d.gen.f0.post) v -= s;
            for (int leaf : inst.model.tree.leaves()) d.xi_terminal[static_cast<std::size_t>(leaf)] -= s;
        }
        sc.lower = std::move(d);
    }
    return sc;
}

inline json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::SchemaError, "cannot open " + path);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw Error(Errc::SchemaError, path + ": " + e.what());
    }
}

inline Scenario load_scenario(const std::string& path, std::optional<std::uint64_t> seed_override = std::nullopt) {
    return parse_scenario(read_json_file(path), seed_override);
}

// JSON numbers cannot be infinite; -inf is written as null.
inline json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json to_json(const LadlagProcess& x) {
    json at = json::array(), post = json::array();
    for (double v : x.at) at.push_back(finite_or_null(v));
    for (double v : x.post) post.push_back(finite_or_null(v));
    return {{"at", at}, {"post", post}};
}

inline json to_json(const NodeVectors& v) { return {{"dim", v.dim}, {"values", v.values}}; }

inline json solution_to_json(const ReflectedSolution& s) {
    return {{"y", to_json(s.y)},
            {"z", to_json(s.mart.z)},
            {"u", to_json(s.mart.u)},
            {"dn", s.mart.dn},
            {"eta_increment", s.eta_increment},
            {"dk_r", s.dk_r},
            {"dk_l", s.dk_l},
            {"f", to_json(s.f)}};
}

inline ReflectedSolution solution_from_json(const json& j, const EventTree& tree) {
    auto vec = [&](const char* key) {
        auto v = detail::require(j, key).get<std::vector<double>>();
        if (static_cast<int>(v.size()) != tree.size()) detail::schema_error(std::string(key) + ": wrong length");
        return v;
    };
    auto nodevec = [&](const char* key) {
        const auto& o = detail::require(j, key);
        NodeVectors v{o.at("dim").get<int>(), o.at("values").get<std::vector<double>>()};
        if (static_cast<int>(v.values.size()) != tree.size() * v.dim) detail::schema_error(std::string(key) + ": wrong length");
        return v;
    };
    ReflectedSolution s;
    s.y = detail::ladlag_values(detail::require(j, "y"), tree, "y");
    s.mart.z = nodevec("z");
    s.mart.u = nodevec("u");
    s.mart.dn = vec("dn");
    s.eta_increment = vec("eta_increment");
    s.dk_r = vec("dk_r");
    s.dk_l = vec("dk_l");
    s.f = detail::ladlag_values(detail::require(j, "f"), tree, "f");
    s.rule.action.assign(static_cast<std::size_t>(tree.size()), StopAction::Continue);
    return s;
}

inline json to_json(const AuditRow& r) {
    return {{"name", r.name},   {"anchor", r.anchor}, {"lhs", r.lhs},           {"rhs", r.rhs},
            {"slack", r.slack}, {"pass", r.pass},     {"identity", r.identity}, {"node", r.node}};
}

inline json to_json(const AuditReport& rep) {
    json rows = json::array();
    for (const auto& r : rep.rows) rows.push_back(to_json(r));
    return {{"rows", rows},
            {"notes", rep.notes},
            {"all_pass", rep.all_pass()},
            {"failures", rep.failures()},
            {"worst_slack", rep.rows.empty() ? json(nullptr) : json(rep.worst_slack())}};
}

inline json to_json(const PicardTrace& t) {
    json diffs = json::array();
    for (const auto& d : t.differences)
        diffs.push_back({{"s2", d.s2}, {"alpha_y", d.alpha_y}, {"alpha_y_minus", d.alpha_y_minus}, {"combined", d.combined}});
    return {{"iterations", t.iterations}, {"polish_steps", t.polish_steps}, {"converged", t.converged},
            {"verified", t.verified},     {"variant", t.variant},           {"beta_hat", t.beta_hat},
            {"phi", t.phi},               {"constant", t.constant},         {"ratios", t.ratios},
            {"max_ratio", t.max_ratio()}, {"differences", diffs}};
}

// Fixed-width scientific notation keeps reports byte-identical across runs.
inline std::string format_number(double v) {
    std::ostringstream os;
    os.precision(17);
    os << std::scientific << v;
    return os.str();
}

inline void write_audit_csv(std::ostream& os, const AuditReport& rep) {
    os << "name,anchor,lhs,rhs,slack,pass,node\n";
    for (const auto& r : rep.rows)
        os << r.name << ",\"" << r.anchor << "\"," << format_number(r.lhs) << ',' << format_number(r.rhs) << ','
           << format_number(r.slack) << ',' << (r.pass ? "PASS" : "FAIL") << ',' << r.node << '\n';
}

inline void write_trace_csv(std::ostream& os, const PicardTrace& t) {
    os << "iteration,combined,ratio\n";
    for (std::size_t k = 0; k < t.differences.size(); ++k)
        os << k + 1 << ',' << format_number(t.differences[k].combined) << ','
           << (k == 0 ? std::string() : format_number(t.ratios[k - 1])) << '\n';
}

struct NormRow {
    std::string kind;
    double beta;
    double value;
};

inline void write_norms_csv(std::ostream& os, const std::vector<NormRow>& rows) {
    os << "kind,beta,value\n";
    for (const auto& r : rows) os << r.kind << ',' << format_number(r.beta) << ',' << format_number(r.value) << '\n';
}

inline json constants_to_json(const ConstantsReport& r) {
    json thresholds = json::object(), limits = json::object();
    for (std::size_t i = 0; i < kAllConstants.size(); ++i) {
        const auto name = to_string(kAllConstants[i]);
        const auto& t = r.thresholds[i];
        thresholds[name] = {{"beta_star", t.beta_star ? json(*t.beta_star) : json(nullptr)},
                            {"limit", t.limit},
                            {"diagnostic", t.diagnostic}};
        limits[name] = r.limits[i];
    }
    json out = {{"phi", r.psi},
                {"limits", limits},
                {"thresholds", thresholds},
                {"L", {{"value", r.L.value}, {"eps", r.L.eps}, {"kappa", r.L.kappa}, {"nu", r.L.nu}}}};
    if (r.beta) {
        out["beta"] = *r.beta;
        out["ff"] = r.ff;
        out["fg"] = r.fg;
        out["M"] = {r.m.m1, r.m.m2, r.m.m3};
        out["Mt"] = {r.mt.m1, r.mt.m2, r.mt.m3};
    }
    return out;
}

}  // namespace ladlag
