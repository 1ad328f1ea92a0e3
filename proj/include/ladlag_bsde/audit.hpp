#pragma once

// Numerical audits of the a priori estimates, the weighted bound on the
// increasing processes and the appendix lemmas. Every row compares a left
// side with a right side; a row passes when lhs <= rhs + tolerance, or, for
// identity rows, when |lhs - rhs| <= identity tolerance.
//
// Conditional inequalities are checked at every pre-terminal node and slot
// (both sides coincide at T); the row keeps the node with the smallest slack.
// The predictable window at t_k starts at the parent's interval, matching the
// lattice convention that the left limit Y_{t_k-} is the parent's post value.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "comparison.hpp"
#include "constants.hpp"
#include "errors.hpp"
#include "generator.hpp"
#include "instances.hpp"
#include "lattice.hpp"
#include "snell.hpp"
#include "solvers.hpp"
#include "weights.hpp"

namespace ladlag {

inline constexpr double kAuditTolerance = 1e-9;
inline constexpr double kIdentityTolerance = 1e-10;

struct AuditRow {
    std::string name;
    std::string anchor;
    double lhs = 0.0;
    double rhs = 0.0;
    double slack = 0.0;  // rhs - lhs, or -|lhs - rhs| for identities
    bool pass = true;
    bool identity = false;
    int node = -1;       // worst node for conditional rows
};

struct AuditReport {
    std::vector<AuditRow> rows;
    std::vector<std::string> notes;

    bool all_pass() const {
        return std::all_of(rows.begin(), rows.end(), [](const AuditRow& r) { return r.pass; });
    }
    int failures() const {
        return static_cast<int>(std::count_if(rows.begin(), rows.end(), [](const AuditRow& r) { return !r.pass; }));
    }
    double worst_slack() const {
        double w = std::numeric_limits<double>::infinity();
        for (const auto& r : rows) w = std::min(w, r.slack);
        return w;
    }
    const AuditRow* first_failure() const {
        for (const auto& r : rows)
            if (!r.pass) return &r;
        return nullptr;
    }
    void append(const AuditReport& other) {
        rows.insert(rows.end(), other.rows.begin(), other.rows.end());
        notes.insert(notes.end(), other.notes.begin(), other.notes.end());
    }
};

struct AuditTolerances {
    double inequality = kAuditTolerance;
    double identity = kIdentityTolerance;
};

inline AuditRow inequality_row(std::string name, std::string anchor, double lhs, double rhs,
                               const AuditTolerances& tol = {}, int node = -1) {
    const double slack = rhs - lhs;
    return {std::move(name), std::move(anchor), lhs, rhs, slack, slack >= -tol.inequality, false, node};
}

inline AuditRow identity_row(std::string name, std::string anchor, double lhs, double rhs,
                             const AuditTolerances& tol = {}, int node = -1) {
    const double gap = std::abs(lhs - rhs);
    return {std::move(name), std::move(anchor), lhs, rhs, -gap, gap <= tol.identity, true, node};
}

// Data of two exogenous equations sharing model, clock and obstacle.
struct PairData {
    Model model;
    ClockA clock;
    double phi = 0.0;
    LadlagProcess xi;
    LadlagProcess f1, f2;
};

namespace detail {

inline double pos(double v) { return v > 0.0 ? v : 0.0; }

// Running quantities along one root-to-leaf path, indexed by level k.
struct PathTails {
    std::vector<double> integral;  // int over (t_k, T] of the integrand dC
    std::vector<double> eta;       // sum of squared eta increments after t_k
    std::vector<double> sup_at;    // sup of xi^+ 1_{<T} over slots from at(t_k)
    std::vector<double> sup_post;  // same from post(t_k)
};

inline PathTails path_tails(const EventTree& tree, const Integrator& C, const std::vector<int>& path,
                            const LadlagProcess& integrand, bool absolute, const std::vector<double>* eta_inc,
                            const LadlagProcess* xi) {
    const int N = tree.periods();
    PathTails t;
    t.integral.assign(static_cast<std::size_t>(N) + 1, 0.0);
    t.eta.assign(static_cast<std::size_t>(N) + 1, 0.0);
    t.sup_at.assign(static_cast<std::size_t>(N) + 1, 0.0);
    t.sup_post.assign(static_cast<std::size_t>(N) + 1, 0.0);
    auto mag = [absolute](double v) { return absolute ? std::abs(v) : v; };
    for (int k = N - 1; k >= 0; --k) {
        const auto n = static_cast<std::size_t>(path[static_cast<std::size_t>(k)]);
        const auto ch = static_cast<std::size_t>(path[static_cast<std::size_t>(k) + 1]);
        const auto kk = static_cast<std::size_t>(k);
        t.integral[kk] = t.integral[kk + 1] + mag(integrand.post[n]) * C.cont[n] + mag(integrand.at[ch]) * C.jump[n];
        if (eta_inc) t.eta[kk] = t.eta[kk + 1] + (*eta_inc)[ch] * (*eta_inc)[ch];
        if (xi) {
            t.sup_post[kk] = std::max(pos(xi->post[n]), t.sup_at[kk + 1]);
            t.sup_at[kk] = std::max(pos(xi->at[n]), t.sup_post[kk]);
        }
    }
    return t;
}

// E[h_k | node at level k] for every node, where per_path(path) returns h_k
// for k = 0..N along one root-to-leaf path.
template <class PerPath>
std::vector<double> conditional_along_paths(const EventTree& tree, PerPath&& per_path) {
    std::vector<double> acc(static_cast<std::size_t>(tree.size()), 0.0);
    for (int leaf : tree.leaves()) {
        const auto path = tree.path_to(leaf);
        const std::vector<double> h = per_path(path);
        for (std::size_t k = 0; k < path.size(); ++k)
            acc[static_cast<std::size_t>(path[k])] += tree.path_prob(leaf) * h[k];
    }
    for (int n = 0; n < tree.size(); ++n) acc[static_cast<std::size_t>(n)] /= tree.path_prob(n);
    return acc;
}

// Worst node of lhs[n] <= rhs[n] over the given nodes.
inline AuditRow worst_inequality(std::string name, std::string anchor, const std::vector<double>& lhs,
                                 const std::vector<double>& rhs, const std::vector<int>& nodes,
                                 const AuditTolerances& tol) {
    AuditRow worst = inequality_row(name, anchor, 0.0, 0.0, tol);
    worst.slack = std::numeric_limits<double>::infinity();
    for (int n : nodes) {
        const auto i = static_cast<std::size_t>(n);
        if (rhs[i] - lhs[i] < worst.slack) worst = inequality_row(name, anchor, lhs[i], rhs[i], tol, n);
    }
    return worst;
}

inline AuditRow worst_identity(std::string name, std::string anchor, const std::vector<double>& lhs,
                               const std::vector<double>& rhs, const std::vector<int>& nodes,
                               const AuditTolerances& tol) {
    AuditRow worst = identity_row(name, anchor, 0.0, 0.0, tol);
    worst.slack = std::numeric_limits<double>::infinity();
    for (int n : nodes) {
        const auto i = static_cast<std::size_t>(n);
        if (-std::abs(lhs[i] - rhs[i]) < worst.slack) worst = identity_row(name, anchor, lhs[i], rhs[i], tol, n);
    }
    return worst;
}

inline std::vector<int> all_nodes(const EventTree& tree) {
    std::vector<int> v(static_cast<std::size_t>(tree.size()));
    for (int n = 0; n < tree.size(); ++n) v[static_cast<std::size_t>(n)] = n;
    return v;
}

inline std::vector<int> pre_terminal_nodes(const EventTree& tree) {
    std::vector<int> v;
    for (int n = 0; n < tree.size(); ++n)
        if (!tree.terminal(n)) v.push_back(n);
    return v;
}

inline LadlagProcess difference(const LadlagProcess& a, const LadlagProcess& b) {
    LadlagProcess d = a;
    for (std::size_t i = 0; i < d.at.size(); ++i) {
        d.at[i] -= b.at[i];
        d.post[i] -= b.post[i];
    }
    return d;
}

inline std::vector<double> difference(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = a[i] - b[i];
    return d;
}

// E[(max over pre-terminal slots of xi^+)^2].
inline double sup_positive_part_sq(const EventTree& tree, const LadlagProcess& xi) {
    double acc = 0.0;
    for (int leaf : tree.leaves()) {
        double best = 0.0;
        for (int n = tree.parent(leaf); n >= 0; n = tree.parent(n))
            best = std::max({best, pos(xi.at[static_cast<std::size_t>(n)]), pos(xi.post[static_cast<std::size_t>(n)])});
        acc += tree.path_prob(leaf) * best * best;
    }
    return acc;
}

inline std::vector<double> terminal_values(const EventTree& tree, const LadlagProcess& xi) {
    std::vector<double> out(static_cast<std::size_t>(tree.size()), 0.0);
    for (int leaf : tree.leaves()) out[static_cast<std::size_t>(leaf)] = xi.at[static_cast<std::size_t>(leaf)];
    return out;
}

inline void require_gamma_beta(double gamma, double beta) {
    if (!(gamma > 0.0) || !(gamma < beta) || !std::isfinite(beta))
        throw Error(Errc::BadGammaBeta, "need 0 < gamma < beta < inf");
}

// Conditional rows for one solution against its own integrand. The optional
// rows sit at the at and post slot of every node, the predictable rows at
// every non-root node conditioned on its parent.
struct ConditionalSides {
    std::vector<double> y_at, y_post, y_pred;        // |y|^2 (or |delta y|^2) per slot
    std::vector<double> eta_opt, eta_pred;           // E[sum d<eta> | slot]
    std::vector<double> int_opt, int_pred;           // E[(int g dC)^2 | slot]
    std::vector<double> int_abs_opt, int_abs_pred;   // first moment, for the linear bounds
    std::vector<double> sup_at, sup_post, brs_pred;  // E[sup^2] and the linear versions
    std::vector<double> sup_at_lin, sup_post_lin, brs_pred_lin;
};

inline ConditionalSides conditional_sides(const Model& m, const LadlagProcess& y, const std::vector<double>& eta_inc,
                                          const LadlagProcess& g, bool absolute, const LadlagProcess* xi) {
    const auto& tree = m.tree;
    const auto size = static_cast<std::size_t>(tree.size());
    ConditionalSides s;
    s.y_at.assign(size, 0.0);
    s.y_post.assign(size, 0.0);
    s.y_pred.assign(size, 0.0);
    for (int n = 0; n < tree.size(); ++n) {
        const auto i = static_cast<std::size_t>(n);
        s.y_at[i] = y.at[i] * y.at[i];
        s.y_post[i] = tree.terminal(n) ? 0.0 : y.post[i] * y.post[i];
        if (n > 0) {
            const double l = y.post[static_cast<std::size_t>(tree.parent(n))];
            s.y_pred[i] = l * l;
        }
    }
    // Per level k along a path: optional quantities from t_k on; predictable
    // ones from the parent's interval on, stored at the child's level.
    auto along = [&](int field, bool square, bool predictable) {
        auto per_path = [&](const std::vector<int>& path) {
            const auto t = path_tails(tree, m.C, path, g, absolute, &eta_inc, xi);
            std::vector<double> h(path.size(), 0.0);
            for (std::size_t k = 0; k < path.size(); ++k) {
                if (predictable && k == 0) continue;
                const std::size_t j = predictable ? k - 1 : k;
                double v = 0.0;
                switch (field) {
                    case 0: v = t.integral[j]; break;
                    case 1: v = t.eta[j]; break;
                    case 2: v = predictable ? t.sup_post[j] : t.sup_at[j]; break;
                    case 3: v = t.sup_post[j]; break;
                }
                h[k] = square ? v * v : v;
            }
            return h;
        };
        auto opt = conditional_along_paths(tree, per_path);
        if (!predictable) return opt;
        // Condition the child's value on the parent.
        std::vector<double> pred(size, 0.0);
        for (int n = 0; n < tree.size(); ++n) {
            if (tree.terminal(n)) continue;
            double acc = 0.0;
            for (int ch : tree.children(n)) acc += tree.prob(ch) * opt[static_cast<std::size_t>(ch)];
            for (int ch : tree.children(n)) pred[static_cast<std::size_t>(ch)] = acc;
        }
        return pred;
    };
    s.int_opt = along(0, true, false);
    s.int_pred = along(0, true, true);
    s.int_abs_opt = along(0, false, false);
    s.int_abs_pred = along(0, false, true);
    s.eta_opt = along(1, false, false);
    s.eta_pred = along(1, false, true);
    if (xi) {
        s.sup_at = along(2, true, false);
        s.sup_post = along(3, true, false);
        s.brs_pred = along(2, true, true);
        s.sup_at_lin = along(2, false, false);
        s.sup_post_lin = along(3, false, false);
        s.brs_pred_lin = along(2, false, true);
    }
    return s;
}

}  // namespace detail

inline PairData pair_from_instance(const Instance& inst, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(-scale, scale);
    PairData d;
    d.model = inst.model;
    d.clock = generator_clock(inst.model, inst.gen);
    d.phi = inst.phi;
    d.xi = inst.xi;
    d.f1 = LadlagProcess::constant(d.model.tree, 0.0);
    d.f2 = d.f1;
    for (auto* f : {&d.f1, &d.f2}) {
        for (auto& v : f->at) v = unif(rng);
        for (auto& v : f->post) v = unif(rng);
    }
    return d;
}

inline AuditReport audit_apriori_pair(const PairData& d, double beta, double gamma, const AuditTolerances& tol = {}) {
    detail::require_gamma_beta(gamma, beta);
    const auto& m = d.model;
    const auto& tree = m.tree;
    const auto& A = d.clock;
    const double phi = d.phi;
    if (A.phi_eff > phi * (1.0 + 1e-12) + 1e-15)
        throw Error(Errc::PhiExceeded, "clock jump " + std::to_string(A.phi_eff) + " above phi");
    const WeightContext w(tree, m.C, A, beta);
    const WeightContext plain(tree, m.C, A, 0.0);
    const auto s1 = solve_exogenous(tree, m.C, m.X, m.J, d.xi, d.f1);
    const auto s2 = solve_exogenous(tree, m.C, m.X, m.J, d.xi, d.f2);
    const auto xiT = detail::terminal_values(tree, d.xi);

    const double xiT_b = norm_l2(w, xiT);
    const double xiT_0 = norm_l2(plain, xiT);
    const double sup_xi = detail::sup_positive_part_sq(tree, d.xi);
    const double brs_b = norm_h2(w, alpha_brs(tree, A, d.xi));
    const double pb = 1.0 + beta * phi, pg = 1.0 + gamma * phi;
    const double L = L_constant().value;
    const double fgb = fg(beta, phi), ffb = ff(beta, phi);

    AuditReport rep;
    int idx = 1;
    for (const auto* s : {&s1, &s2}) {
        const auto& f = idx == 1 ? d.f1 : d.f2;
        const std::string tag = "y" + std::to_string(idx);
        const double fa = norm_h2(w, divide_by_alpha(tree, A, f));
        const double ay = norm_h2(w, multiply_by_alpha(tree, A, s->y));
        const double aym = norm_h2(w, multiply_by_alpha(tree, A, left_limit_of(tree, s->y)));
        const double ys2 = norm_s2(plain, s->y);
        const double eta = norm_h2mart_increments(w, s->eta_increment);
        rep.rows.push_back(inequality_row("apriori_alpha_" + tag, "apriori: alpha y^i in H2_beta", ay,
                                          3.0 * (pb / beta * xiT_b + brs_b + pb / (gamma * (beta - gamma)) * fa), tol));
        rep.rows.push_back(inequality_row("apriori_alpha_" + tag + "_minus", "apriori: alpha y^i_- in H2_beta", aym,
                                          3.0 * (pb / beta * xiT_b + brs_b + pb * pg / (gamma * (beta - gamma)) * fa),
                                          tol));
        rep.rows.push_back(inequality_row("apriori_s2_" + tag, "apriori: y^i in S2", ys2,
                                          12.0 * (xiT_0 + sup_xi + fa / beta), tol));
        rep.rows.push_back(inequality_row("apriori_eta" + std::to_string(idx), "apriori: eta^i in H2_beta with L", eta,
                                          L * ((beta + 1.0) * xiT_b + sup_xi + beta * brs_b + fgb * fa), tol));

        // Unconditional S2 bound of the running-sup lemma.
        const auto sides = detail::conditional_sides(m, s->y, s->eta_increment, f, true, &d.xi);
        double rhs = 0.0;
        for (int leaf : tree.leaves()) {
            const double T = xiT[static_cast<std::size_t>(leaf)];
            double best = 0.0, integral = 0.0;
            const auto path = tree.path_to(leaf);
            const auto t = detail::path_tails(tree, m.C, path, f, true, nullptr, &d.xi);
            best = t.sup_at[0];
            integral = t.integral[0];
            rhs += tree.path_prob(leaf) * (T * T + best * best + integral * integral);
        }
        rep.rows.push_back(inequality_row("bound_s2_" + tag, "bound_delta_y_s2: y^i in S2", ys2, 12.0 * rhs, tol));

        // Linear conditional bounds on |y^i|.
        const auto nodes = detail::all_nodes(tree);
        const auto pre = detail::pre_terminal_nodes(tree);
        std::vector<int> non_root(nodes.begin() + 1, nodes.end());
        const auto absT = [&] {
            std::vector<double> v(xiT.size());
            for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::abs(xiT[i]);
            return conditional_expectation(tree, v, tree.periods(), 0);
        }();
        const auto absT_sq = [&] {
            std::vector<double> v(xiT.size());
            for (std::size_t i = 0; i < v.size(); ++i) v[i] = xiT[i] * xiT[i];
            return conditional_expectation(tree, v, tree.periods(), 0);
        }();
        const auto size = static_cast<std::size_t>(tree.size());
        std::vector<double> lhs_at(size), rhs_at(size), lhs_post(size), rhs_post(size), lhs_pred(size),
            rhs_pred(size);
        std::vector<double> qlhs_at(size), qrhs_at(size), qlhs_post(size), qrhs_post(size), qlhs_pred(size),
            qrhs_pred(size);
        for (int n = 0; n < tree.size(); ++n) {
            const auto i = static_cast<std::size_t>(n);
            lhs_at[i] = std::abs(s->y.at[i]);
            rhs_at[i] = absT[i] + sides.sup_at_lin[i] + sides.int_abs_opt[i];
            qlhs_at[i] = sides.y_at[i] + sides.eta_opt[i];
            qrhs_at[i] = L * (absT_sq[i] + sides.sup_at[i] + sides.int_opt[i]);
            if (!tree.terminal(n)) {
                lhs_post[i] = std::abs(s->y.post[i]);
                rhs_post[i] = absT[i] + sides.sup_post_lin[i] + sides.int_abs_opt[i];
                qlhs_post[i] = sides.y_post[i] + sides.eta_opt[i];
                qrhs_post[i] = L * (absT_sq[i] + sides.sup_post[i] + sides.int_opt[i]);
            }
            if (n > 0) {
                const auto p = static_cast<std::size_t>(tree.parent(n));
                lhs_pred[i] = std::abs(s->y.post[p]);
                rhs_pred[i] = absT[p] + sides.brs_pred_lin[i] + sides.int_abs_pred[i];
                qlhs_pred[i] = sides.y_pred[i] + sides.eta_pred[i];
                qrhs_pred[i] = L * (absT_sq[p] + sides.brs_pred[i] + sides.int_pred[i]);
            }
        }
        rep.rows.push_back(detail::worst_inequality("cond_abs_" + tag + "_at", "bound_delta_y_s2: |y^i_S|, at slots",
                                                    lhs_at, rhs_at, pre, tol));
        rep.rows.push_back(detail::worst_inequality("cond_abs_" + tag + "_post",
                                                    "bound_delta_y_s2: |y^i_S|, post slots", lhs_post, rhs_post, pre,
                                                    tol));
        rep.rows.push_back(detail::worst_inequality("cond_abs_" + tag + "_pred", "bound_delta_y_s2: |y^i_S-|",
                                                    lhs_pred, rhs_pred, non_root, tol));
        rep.rows.push_back(detail::worst_inequality("cond_L_" + tag + "_at", "cond_estimates: y^i with L, at slots",
                                                    qlhs_at, qrhs_at, pre, tol));
        rep.rows.push_back(detail::worst_inequality("cond_L_" + tag + "_post",
                                                    "cond_estimates: y^i with L, post slots", qlhs_post, qrhs_post,
                                                    pre, tol));
        rep.rows.push_back(detail::worst_inequality("cond_L_" + tag + "_pred", "cond_estimates: y^i_- with L",
                                                    qlhs_pred, qrhs_pred, non_root, tol));
        ++idx;
    }

    // Differences.
    const auto df = detail::difference(d.f1, d.f2);
    const auto dy = detail::difference(s1.y, s2.y);
    const auto deta = detail::difference(s1.eta_increment, s2.eta_increment);
    const double dfa = norm_h2(w, divide_by_alpha(tree, A, df));
    const double ady = norm_h2(w, multiply_by_alpha(tree, A, dy));
    const double adym = norm_h2(w, multiply_by_alpha(tree, A, left_limit_of(tree, dy)));
    const double dys2 = norm_s2(plain, dy);
    const double deta_n = norm_h2mart_increments(w, deta);
    const auto Mc = M_constants(beta, phi);
    rep.rows.push_back(inequality_row("apriori_alpha_dy", "apriori: alpha delta y with ff", ady, ffb * dfa, tol));
    rep.rows.push_back(inequality_row("apriori_alpha_dy_minus", "apriori: alpha delta y_-", adym,
                                      pb * pg / (gamma * (beta - gamma)) * dfa, tol));
    rep.rows.push_back(inequality_row("apriori_s2_dy", "apriori: delta y in S2 with 4/beta", dys2, 4.0 / beta * dfa, tol));
    rep.rows.push_back(inequality_row("apriori_delta_eta", "apriori: delta eta with fg", deta_n,
                                      kCondConstant * fgb * dfa, tol));
    rep.rows.push_back(inequality_row("apriori_M1", "apriori: composite with M1", dys2 + ady + adym + deta_n,
                                      Mc.m1 * dfa, tol));
    rep.rows.push_back(inequality_row("apriori_M2", "apriori: composite with M2", ady + deta_n, Mc.m2 * dfa, tol));
    rep.rows.push_back(inequality_row("apriori_M3", "apriori: composite with M3", dys2 + adym + deta_n,
                                      Mc.m3 * dfa, tol));

    const auto dsides = detail::conditional_sides(m, dy, deta, df, true, nullptr);
    double root_sq = 0.0;
    for (int leaf : tree.leaves()) {
        const auto t = detail::path_tails(tree, m.C, tree.path_to(leaf), df, true, nullptr, nullptr);
        root_sq += tree.path_prob(leaf) * t.integral[0] * t.integral[0];
    }
    rep.rows.push_back(inequality_row("bound_s2_dy", "bound_delta_y_s2: delta y in S2", dys2, 4.0 * root_sq, tol));

    const auto size = static_cast<std::size_t>(tree.size());
    const auto nodes = detail::all_nodes(tree);
    const auto pre = detail::pre_terminal_nodes(tree);
    std::vector<int> non_root(nodes.begin() + 1, nodes.end());
    std::vector<double> l_at(size), l_post(size, 0.0), l_pred(size, 0.0), r_at(size), r_post(size, 0.0),
        r_pred(size, 0.0);
    std::vector<double> q_at(size), q_post(size, 0.0), q_pred(size, 0.0), qr_at(size), qr_post(size, 0.0),
        qr_pred(size, 0.0);
    for (int n = 0; n < tree.size(); ++n) {
        const auto i = static_cast<std::size_t>(n);
        l_at[i] = std::abs(dy.at[i]);
        r_at[i] = dsides.int_abs_opt[i];
        q_at[i] = dsides.y_at[i] + dsides.eta_opt[i];
        qr_at[i] = kCondConstant * dsides.int_opt[i];
        if (!tree.terminal(n)) {
            l_post[i] = std::abs(dy.post[i]);
            r_post[i] = dsides.int_abs_opt[i];
            q_post[i] = dsides.y_post[i] + dsides.eta_opt[i];
            qr_post[i] = kCondConstant * dsides.int_opt[i];
        }
        if (n > 0) {
            l_pred[i] = std::abs(dy.post[static_cast<std::size_t>(tree.parent(n))]);
            r_pred[i] = dsides.int_abs_pred[i];
            q_pred[i] = dsides.y_pred[i] + dsides.eta_pred[i];
            qr_pred[i] = kCondConstant * dsides.int_pred[i];
        }
    }
    rep.rows.push_back(detail::worst_inequality("cond_abs_dy_at", "bound_delta_y_s2: |delta y_S|, at slots", l_at,
                                                r_at, pre, tol));
    rep.rows.push_back(detail::worst_inequality("cond_abs_dy_post", "bound_delta_y_s2: |delta y_S|, post slots",
                                                l_post, r_post, pre, tol));
    rep.rows.push_back(detail::worst_inequality("cond_abs_dy_pred", "bound_delta_y_s2: |delta y_S-|", l_pred, r_pred,
                                                non_root, tol));
    rep.rows.push_back(detail::worst_inequality("cond_delta_eta_at", "cond_estimates: delta eta, at slots", q_at,
                                                qr_at, pre, tol));
    rep.rows.push_back(detail::worst_inequality("cond_delta_eta_post", "cond_estimates: delta eta, post slots",
                                                q_post, qr_post, pre, tol));
    rep.rows.push_back(detail::worst_inequality("cond_delta_eta_pred", "cond_estimates: delta eta, predictable",
                                                q_pred, qr_pred, non_root, tol));
    return rep;
}

// Uses the terminal values of d.xi only; the obstacle is -inf before T.
inline AuditReport audit_apriori_bsde(const PairData& d, double beta, const AuditTolerances& tol = {}) {
    if (!(beta > 0.0) || !std::isfinite(beta)) throw Error(Errc::NonpositiveBeta, "beta must be positive");
    const auto& m = d.model;
    const auto& tree = m.tree;
    const auto& A = d.clock;
    const double phi = d.phi;
    const auto xi = bsde_obstacle(tree, detail::terminal_values(tree, d.xi));
    const auto s1 = solve_exogenous(tree, m.C, m.X, m.J, xi, d.f1);
    const auto s2 = solve_exogenous(tree, m.C, m.X, m.J, xi, d.f2);
    const auto df = detail::difference(d.f1, d.f2);
    const auto dy = detail::difference(s1.y, s2.y);
    const auto deta = detail::difference(s1.eta_increment, s2.eta_increment);

    const auto signed_sides = detail::conditional_sides(m, dy, deta, df, false, nullptr);
    const auto abs_sides = detail::conditional_sides(m, dy, deta, df, true, nullptr);
    const auto size = static_cast<std::size_t>(tree.size());
    const auto nodes = detail::all_nodes(tree);
    const auto pre = detail::pre_terminal_nodes(tree);
    std::vector<int> non_root(nodes.begin() + 1, nodes.end());
    std::vector<double> l_at(size), l_post(size, 0.0), l_pred(size, 0.0);
    for (int n = 0; n < tree.size(); ++n) {
        const auto i = static_cast<std::size_t>(n);
        l_at[i] = signed_sides.y_at[i] + signed_sides.eta_opt[i];
        if (!tree.terminal(n)) l_post[i] = signed_sides.y_post[i] + signed_sides.eta_opt[i];
        if (n > 0) l_pred[i] = signed_sides.y_pred[i] + signed_sides.eta_pred[i];
    }
    std::vector<double> r_post = signed_sides.int_opt, ra_post = abs_sides.int_opt;
    for (int n : tree.leaves()) r_post[static_cast<std::size_t>(n)] = ra_post[static_cast<std::size_t>(n)] = 0.0;

    AuditReport rep;
    rep.rows.push_back(detail::worst_identity("bsde_identity_signed_at", "apriori_bsde: signed identity, at slots",
                                              l_at, signed_sides.int_opt, pre, tol));
    rep.rows.push_back(detail::worst_identity("bsde_identity_signed_post",
                                              "apriori_bsde: signed identity, post slots", l_post, r_post, pre, tol));
    rep.rows.push_back(detail::worst_identity("bsde_identity_signed_pred", "apriori_bsde: signed identity, predictable",
                                              l_pred, signed_sides.int_pred, non_root, tol));
    rep.rows.push_back(detail::worst_inequality("bsde_identity_abs_at", "apriori_bsde: |delta f| form, at slots", l_at,
                                                abs_sides.int_opt, pre, tol));
    rep.rows.push_back(detail::worst_inequality("bsde_identity_abs_post", "apriori_bsde: |delta f| form, post slots",
                                                l_post, ra_post, pre, tol));
    rep.rows.push_back(detail::worst_inequality("bsde_identity_abs_pred", "apriori_bsde: |delta f| form, predictable",
                                                l_pred, abs_sides.int_pred, non_root, tol));

    const WeightContext w(tree, m.C, A, beta);
    const WeightContext plain(tree, m.C, A, 0.0);
    const double dfa = norm_h2(w, divide_by_alpha(tree, A, df));
    const double ady = norm_h2(w, multiply_by_alpha(tree, A, dy));
    const double adym = norm_h2(w, multiply_by_alpha(tree, A, left_limit_of(tree, dy)));
    const double dys2 = norm_s2(plain, dy);
    const double deta_n = norm_h2mart_increments(w, deta);
    const auto Mt = Mtilde_constants(beta, phi);
    rep.rows.push_back(inequality_row("bsde_delta_eta", "apriori_bsde: delta eta with fg", deta_n,
                                      fg(beta, phi) * dfa, tol));
    rep.rows.push_back(inequality_row("bsde_Mt1", "apriori_bsde: composite with M~1", dys2 + ady + adym + deta_n,
                                      Mt.m1 * dfa, tol));
    rep.rows.push_back(inequality_row("bsde_Mt2", "apriori_bsde: composite with M~2", ady + deta_n, Mt.m2 * dfa, tol));
    rep.rows.push_back(inequality_row("bsde_Mt3", "apriori_bsde: composite with M~3", dys2 + adym + deta_n,
                                      Mt.m3 * dfa, tol));
    return rep;
}

// Weighted bound on K^r and K^l for the solution driven by d.f1.
inline AuditReport audit_k_estimate(const PairData& d, double gamma, double beta, const AuditTolerances& tol = {}) {
    detail::require_gamma_beta(gamma, beta);
    const auto& m = d.model;
    const auto& tree = m.tree;
    const auto& A = d.clock;
    const auto s = solve_exogenous(tree, m.C, m.X, m.J, d.xi, d.f1);
    const WeightContext wg(tree, m.C, A, gamma);
    const WeightContext wb(tree, m.C, A, beta);
    const double kr = norm_i2(wg, s.dk_r_on_children(tree));
    const double kl = norm_i2(wg, s.dk_l);
    const double eta = norm_h2mart_increments(wg, s.eta_increment);
    const double xiT = norm_l2(wg, detail::terminal_values(tree, d.xi));
    const double xi_pos = norm_s2(wg, positive_part_before_terminal(tree, d.xi));
    const double fa = norm_h2(wb, divide_by_alpha(tree, A, d.f1));
    const double j = std::max(1.0, jfun(gamma, beta, d.phi));
    const double c = 108.0 * j * j;
    const double rhs = 3.0 * (eta + c * (xiT + xi_pos) + (c + 1.0) * (1.0 + gamma * d.phi) / (beta - gamma) * fa);
    AuditReport rep;
    rep.rows.push_back(inequality_row("k_estimate", "weighted_k_estimate: K^r and K^l in I2_gamma", kr + kl, rhs, tol));
    return rep;
}

// Random non-negative martingale: terminal values drawn, earlier values by
// conditioning.
inline std::vector<double> random_nonnegative_martingale(const EventTree& tree, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::exponential_distribution<double> expo(1.0);
    std::bernoulli_distribution zero(0.25);
    std::vector<double> terminal(static_cast<std::size_t>(tree.size()), 0.0);
    for (int leaf : tree.leaves()) terminal[static_cast<std::size_t>(leaf)] = zero(rng) ? 0.0 : expo(rng);
    return conditional_expectation(tree, terminal, tree.periods(), 0);
}

// E[sup_{s >= t} M_s^2 | node] <= 4 E[M_T^2 | node] at every pre-terminal node.
inline AuditRow audit_cond_doob(const EventTree& tree, const std::vector<double>& M, const AuditTolerances& tol = {}) {
    if (static_cast<int>(M.size()) != tree.size()) throw Error(Errc::ShapeMismatch, "martingale must cover the tree");
    const auto sup_sq = detail::conditional_along_paths(tree, [&](const std::vector<int>& path) {
        std::vector<double> h(path.size());
        double best = 0.0;
        for (std::size_t k = path.size(); k-- > 0;) {
            best = std::max(best, M[static_cast<std::size_t>(path[k])] * M[static_cast<std::size_t>(path[k])]);
            h[k] = best;
        }
        return h;
    });
    std::vector<double> sq(M.size());
    for (std::size_t i = 0; i < sq.size(); ++i) sq[i] = M[i] * M[i];
    auto rhs = conditional_expectation(tree, sq, tree.periods(), 0);
    for (auto& v : rhs) v *= 4.0;
    return detail::worst_inequality("cond_doob", "cond_doob: pathwise Doob with factor 4", sup_sq, rhs,
                                    detail::pre_terminal_nodes(tree), tol);
}

// E[esssup |xi_tau|^2] <= E[sup |xi|^2] <= 4 E[esssup |xi_tau|^2], with the
// esssup taken pathwise over every enumerated stopping rule. -inf slots of
// the obstacle count as 0.
inline AuditReport audit_esssup_sup(const EventTree& tree, const LadlagProcess& xi, const AuditTolerances& tol = {},
                                    const EnumerationLimits& lim = {}) {
    AuditReport rep;
    const int N = tree.periods();
    auto val = [](double v) { return std::isfinite(v) ? v * v : 0.0; };
    RuleWindow window;
    window.roots = {0};
    window.to_level = N;
    SlotEligibility elig;
    elig.mask.assign(static_cast<std::size_t>(tree.size()), 3u);
    std::vector<StoppingRule> rules;
    try {
        rules = enumerate_stopping_rules(tree, window, elig, lim);
    } catch (const Error& e) {
        if (e.code() != Errc::EnumerationTooLarge) throw;
        rep.notes.push_back(std::string("esssup rows skipped: ") + e.what());
        return rep;
    }
    double esssup = 0.0, sup = 0.0;
    for (int leaf : tree.leaves()) {
        const auto path = tree.path_to(leaf);
        double best_rule = 0.0, best_slot = 0.0;
        for (int k = 0; k <= N; ++k) {
            const auto n = static_cast<std::size_t>(path[static_cast<std::size_t>(k)]);
            best_slot = std::max(best_slot, val(xi.at[n]));
            if (k < N) best_slot = std::max(best_slot, val(xi.post[n]));
        }
        for (const auto& r : rules) {
            double stopped = val(xi.at[static_cast<std::size_t>(leaf)]);
            for (int k = 0; k < N; ++k) {
                const auto n = static_cast<std::size_t>(path[static_cast<std::size_t>(k)]);
                if (r.action[n] == StopAction::StopAt) { stopped = val(xi.at[n]); break; }
                if (r.action[n] == StopAction::StopPost) { stopped = val(xi.post[n]); break; }
            }
            best_rule = std::max(best_rule, stopped);
        }
        esssup += tree.path_prob(leaf) * best_rule;
        sup += tree.path_prob(leaf) * best_slot;
    }
    rep.rows.push_back(inequality_row("esssup_below_sup", "equiv_integ_xi: esssup below sup, p = 2", esssup, sup, tol));
    rep.rows.push_back(inequality_row("sup_below_4_esssup", "equiv_integ_xi: sup below 4 esssup, p = 2", sup,
                                      4.0 * esssup, tol));
    return rep;
}

inline AuditReport audit_exp_rules(const EventTree& tree, const ClockA& A, double beta, double gamma,
                                   const AuditTolerances& tol = {}) {
    StepIncrements a{A.a_cont, A.a_jump}, b{A.a_cont, A.a_jump};
    for (auto& v : a.cont) v *= beta;
    for (auto& v : a.jump) v *= beta;
    for (auto& v : b.cont) v *= gamma;
    for (auto& v : b.jump) v *= gamma;
    const auto r = exp_rules_check(tree, a, b);
    AuditReport rep;
    rep.rows.push_back(identity_row("exp_inverse", "stochastic exponential: inverse", r.inverse_error, 0.0, tol));
    rep.rows.push_back(identity_row("exp_ratio", "stochastic exponential: ratio", r.ratio_error, 0.0, tol));
    rep.rows.push_back(identity_row("exp_root", "stochastic exponential: square root", r.root_error, 0.0, tol));
    return rep;
}

inline AuditReport audit_appendix(const PairData& d, std::uint64_t seed, const AuditTolerances& tol = {},
                                  const EnumerationLimits& lim = {}) {
    const auto& tree = d.model.tree;
    AuditReport rep;
    rep.rows.push_back(audit_cond_doob(tree, random_nonnegative_martingale(tree, seed), tol));
    rep.append(audit_esssup_sup(tree, d.xi, tol, lim));
    rep.append(audit_exp_rules(tree, d.clock, 2.0, 0.5, tol));
    return rep;
}

struct ComparisonPair {
    Instance instance;
    BsdeData upper, lower;
    int attempts = 0;
};

// Ordered pair of BSDE data on one model: the lower generator is either the
// upper one shifted down, or a damped affine copy shifted further down, and
// the lower terminal value sits below the upper one. Draws are retried until
// the comparison hypotheses hold.
inline ComparisonPair random_comparison_pair(std::uint64_t seed, int max_attempts = 20) {
    for (int attempt = 0; attempt < max_attempts; ++attempt) {
        std::mt19937_64 rng(seed * 1000003ULL + static_cast<std::uint64_t>(attempt) * 7919ULL + 5ULL);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        InstanceSpec s;
        s.phi = 0.05 + 0.5 * u(rng);
        s.use_y = u(rng) < 0.7;
        s.use_y_minus = u(rng) < 0.5;
        s.constant = variant_constant(EquationKind::Bsde, (s.use_y && s.use_y_minus) ? 1 : (s.use_y_minus ? 3 : 2));
        ComparisonPair out;
        out.attempts = attempt + 1;
        out.instance = random_instance(rng(), s);
        const auto& inst = out.instance;
        out.upper = {inst.gen, inst.xi_terminal()};
        out.lower = out.upper;
        if (u(rng) < 0.5) {
            for (auto& v : out.lower.gen.f0.at) v -= u(rng);
            for (auto& v : out.lower.gen.f0.post) v -= u(rng);
        } else {
            auto& g = out.lower.gen;
            g.kind = GeneratorKind::Affine;
            g.a *= 0.3;
            g.b *= 0.3;
            for (auto& v : g.h) v *= 0.3;
            for (auto& v : g.g) v *= 0.3;
            for (auto& v : g.f0.at) v -= 3.0;
            for (auto& v : g.f0.post) v -= 3.0;
        }
        for (int leaf : inst.model.tree.leaves()) out.lower.xi_terminal[static_cast<std::size_t>(leaf)] -= u(rng);
        try {
            const auto rep = compare_unchecked(inst.model, out.upper, out.lower, inst.beta_hat, inst.phi);
            if (rep.hypotheses.ok()) return out;
        } catch (const Error& e) {
            if (e.code() != Errc::JumpConditionViolated) throw;
        }
    }
    throw Error(Errc::SpecInfeasible, "no admissible comparison pair within the attempt budget");
}

}  // namespace ladlag
