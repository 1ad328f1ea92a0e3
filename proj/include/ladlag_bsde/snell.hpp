#pragma once

// Optimal stopping with an exogenous running reward f dC, its Snell envelope
// and the Mertens decomposition into martingale, K^r and K^l.
//
// Values are in "Y form": the envelope minus the reward already accumulated,
// so Y_T = xi_T. Stopping at a post slot means stopping right after t_k, which
// forgoes the interval mass of C; interval mass accrues only by continuing
// through the whole interval.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "calculus.hpp"
#include "errors.hpp"
#include "lattice.hpp"

namespace ladlag {

struct SnellResult {
    LadlagProcess value;
    std::vector<double> continuation;  // per parent: E[Y_next + f dC over the step | node]
    StoppingRule optimal;
};

// f.post[n] meets cont mass of the step after n; f.at[child] meets its jump mass.
inline double step_reward_mean(const EventTree& tree, const Integrator& C, const LadlagProcess& f,
                               std::span<const double> next_at, int n) {
    const auto i = static_cast<std::size_t>(n);
    double raw = f.post[i] * C.cont[i];
    for (int ch : tree.children(n))
        raw += tree.prob(ch) * (next_at[static_cast<std::size_t>(ch)] + f.at[static_cast<std::size_t>(ch)] * C.jump[i]);
    return raw;
}

inline SnellResult snell_envelope(const EventTree& tree, const Integrator& C, const LadlagProcess& xi,
                                  const LadlagProcess& f) {
    const auto size = static_cast<std::size_t>(tree.size());
    if (xi.at.size() != size || xi.post.size() != size || f.at.size() != size || f.post.size() != size)
        throw Error(Errc::ShapeMismatch, "obstacle and reward must cover the tree");
    SnellResult out;
    out.value = LadlagProcess::constant(tree, 0.0);
    out.continuation.assign(size, 0.0);
    out.optimal.action.assign(size, StopAction::Continue);
    const int N = tree.periods();
    for (int leaf : tree.leaves()) {
        const double x = xi.at[static_cast<std::size_t>(leaf)];
        if (!std::isfinite(x))
            throw Error(Errc::InfiniteTerminalObstacle, "terminal obstacle at node " + std::to_string(leaf));
        out.value.at[static_cast<std::size_t>(leaf)] = x;
        out.value.post[static_cast<std::size_t>(leaf)] = x;
        out.optimal.action[static_cast<std::size_t>(leaf)] = StopAction::StopAt;
    }
    for (int k = N - 1; k >= 0; --k) {
        for (int n : tree.level_nodes(k)) {
            const auto i = static_cast<std::size_t>(n);
            const double raw = step_reward_mean(tree, C, f, out.value.at, n);
            out.continuation[i] = raw;
            // A -inf obstacle slot never binds; max() handles it.
            out.value.post[i] = std::max(xi.post[i], raw);
            out.value.at[i] = std::max(xi.at[i], out.value.post[i]);
            if (std::isfinite(xi.at[i]) && out.value.at[i] <= xi.at[i])
                out.optimal.action[i] = StopAction::StopAt;
            else if (std::isfinite(xi.post[i]) && out.value.post[i] <= xi.post[i])
                out.optimal.action[i] = StopAction::StopPost;
        }
    }
    return out;
}

// E[xi_tau + int_S^tau f dC | root] for a node-local rule, S being the root's
// at slot (or post slot when start_post).
inline double stopping_value(const EventTree& tree, const Integrator& C, const LadlagProcess& xi,
                             const LadlagProcess& f, const StoppingRule& rule, int root, bool start_post) {
    auto value = [&](auto&& self, int n, bool first) -> double {
        const auto i = static_cast<std::size_t>(n);
        const StopAction a = rule.action[i];
        if (tree.terminal(n)) return xi.at[i];
        if (a == StopAction::StopAt && !(first && start_post)) return xi.at[i];
        if (a == StopAction::StopPost) return xi.post[i];
        double acc = f.post[i] * C.cont[i];
        for (int ch : tree.children(n))
            acc += tree.prob(ch) * (f.at[static_cast<std::size_t>(ch)] * C.jump[i] + self(self, ch, false));
        return acc;
    };
    return value(value, root, true);
}

struct ReflectedSolution {
    LadlagProcess y;
    MartingaleDecomposition mart;
    std::vector<double> eta_increment;  // on the edge into each node
    std::vector<double> dk_r;           // per parent: jump of K^r at the next instant
    std::vector<double> dk_l;           // per node: right jump K^l at its at-slot, 0 at T
    StoppingRule rule;
    LadlagProcess f;                    // generator values the solution was built from

    // K^r increments placed on the child nodes (sibling-constant).
    std::vector<double> dk_r_on_children(const EventTree& tree) const {
        std::vector<double> out(dk_r.size(), 0.0);
        for (int ch = 1; ch < tree.size(); ++ch)
            out[static_cast<std::size_t>(ch)] = dk_r[static_cast<std::size_t>(tree.parent(ch))];
        return out;
    }
    // Node-indexed martingale eta with eta_0 = 0.
    std::vector<double> eta(const EventTree& tree) const {
        std::vector<double> out(eta_increment.size(), 0.0);
        for (int ch = 1; ch < tree.size(); ++ch)
            out[static_cast<std::size_t>(ch)] =
                out[static_cast<std::size_t>(tree.parent(ch))] + eta_increment[static_cast<std::size_t>(ch)];
        return out;
    }
};

inline ReflectedSolution mertens_decomposition(const EventTree& tree, const Integrator& C, const DriverX& X,
                                               const MarkedJumps& J, const LadlagProcess& f,
                                               const SnellResult& snell) {
    const auto size = static_cast<std::size_t>(tree.size());
    ReflectedSolution sol;
    sol.y = snell.value;
    sol.rule = snell.optimal;
    sol.f = f;
    sol.eta_increment.assign(size, 0.0);
    sol.dk_r.assign(size, 0.0);
    sol.dk_l.assign(size, 0.0);
    for (int n = 0; n < tree.size(); ++n) {
        if (tree.terminal(n)) continue;
        const auto i = static_cast<std::size_t>(n);
        sol.dk_l[i] = sol.y.at[i] - sol.y.post[i];
        sol.dk_r[i] = sol.y.post[i] - snell.continuation[i];
        const double expected = snell.continuation[i];
        for (int ch : tree.children(n)) {
            const auto c = static_cast<std::size_t>(ch);
            sol.eta_increment[c] = sol.y.at[c] + f.at[c] * C.jump[i] + f.post[i] * C.cont[i] - expected;
        }
    }
    sol.mart = orthogonal_decomposition_of_increments(tree, X, J, sol.eta_increment);
    return sol;
}

inline ReflectedSolution solve_exogenous(const EventTree& tree, const Integrator& C, const DriverX& X,
                                         const MarkedJumps& J, const LadlagProcess& xi, const LadlagProcess& f) {
    return mertens_decomposition(tree, C, X, J, f, snell_envelope(tree, C, xi, f));
}

// Sum over each path of (Y_{t-} - xi_bar) dK^r + (Y - xi) dK^l, with 0 * inf := 0;
// the largest path total is returned.
inline double verify_skorokhod(const EventTree& tree, const ReflectedSolution& sol, const LadlagProcess& xi) {
    auto term = [](double gap, double dk) { return dk == 0.0 ? 0.0 : gap * dk; };
    double worst = 0.0;
    for (int leaf : tree.leaves()) {
        double total = 0.0;
        for (int n = tree.parent(leaf); n >= 0; n = tree.parent(n)) {
            const auto i = static_cast<std::size_t>(n);
            total += term(sol.y.post[i] - xi.post[i], sol.dk_r[i]);
            total += term(sol.y.at[i] - xi.at[i], sol.dk_l[i]);
        }
        worst = std::max(worst, std::abs(total));
    }
    return worst;
}

struct ObstacleReport {
    double below_obstacle = 0.0;      // max (xi - Y)^+ before T
    double terminal_mismatch = 0.0;   // max |Y_T - xi_T|
    double negative_increment = 0.0;  // max (-dK)^+
};

inline ObstacleReport verify_obstacle(const EventTree& tree, const ReflectedSolution& sol, const LadlagProcess& xi) {
    ObstacleReport rep;
    for (int n = 0; n < tree.size(); ++n) {
        const auto i = static_cast<std::size_t>(n);
        if (tree.terminal(n)) {
            rep.terminal_mismatch = std::max(rep.terminal_mismatch, std::abs(sol.y.at[i] - xi.at[i]));
            continue;
        }
        if (std::isfinite(xi.at[i])) rep.below_obstacle = std::max(rep.below_obstacle, xi.at[i] - sol.y.at[i]);
        if (std::isfinite(xi.post[i])) rep.below_obstacle = std::max(rep.below_obstacle, xi.post[i] - sol.y.post[i]);
        rep.negative_increment = std::max({rep.negative_increment, -sol.dk_r[i], -sol.dk_l[i]});
    }
    return rep;
}

// Pathwise defect of the backward dynamics: starting from xi_T, rebuild the
// right-hand side at every slot using f, the decomposition (Z, U, N) and K.
inline double equation_defect(const EventTree& tree, const Integrator& C, const DriverX& X, const MarkedJumps& J,
                              const ReflectedSolution& sol, const LadlagProcess& f, const LadlagProcess& xi) {
    double worst = 0.0;
    std::vector<double> rhs_at(static_cast<std::size_t>(tree.size()), 0.0);
    for (int leaf : tree.leaves()) {
        rhs_at[static_cast<std::size_t>(leaf)] = xi.at[static_cast<std::size_t>(leaf)];
        worst = std::max(worst, std::abs(sol.y.at[static_cast<std::size_t>(leaf)] - rhs_at[static_cast<std::size_t>(leaf)]));
    }
    // Y_post(n) is determined by any child; checking every child covers all paths.
    for (int k = tree.periods() - 1; k >= 0; --k) {
        for (int n : tree.level_nodes(k)) {
            const auto i = static_cast<std::size_t>(n);
            double rhs_post = 0.0;
            for (int ch : tree.children(n)) {
                const auto c = static_cast<std::size_t>(ch);
                const double r = rhs_at[c] + f.at[c] * C.jump[i] + f.post[i] * C.cont[i] -
                                 reconstruct_increment(tree, X, J, sol.mart, ch) + sol.dk_r[i];
                worst = std::max(worst, std::abs(sol.y.post[i] - r));
                rhs_post = r;
            }
            rhs_at[i] = rhs_post + sol.dk_l[i];
            worst = std::max(worst, std::abs(sol.y.at[i] - rhs_at[i]));
        }
    }
    return worst;
}

struct RepresentationReport {
    double max_defect = 0.0;
    int slots_checked = 0;
    int worst_node = -1;
    bool pass(double tol = 1e-9) const { return max_defect <= tol; }
};

// Brute-force ess sup over all stopping rules from every node and slot,
// compared with Y. Slots with a -inf obstacle are never chosen.
inline RepresentationReport verify_representation(const EventTree& tree, const Integrator& C,
                                                  const LadlagProcess& y, const LadlagProcess& xi,
                                                  const LadlagProcess& f, const EnumerationLimits& lim = {}) {
    SlotEligibility elig;
    elig.mask.assign(static_cast<std::size_t>(tree.size()), 0);
    for (int n = 0; n < tree.size(); ++n) {
        const auto i = static_cast<std::size_t>(n);
        if (std::isfinite(xi.at[i])) elig.mask[i] |= 1u;
        if (!tree.terminal(n) && std::isfinite(xi.post[i])) elig.mask[i] |= 2u;
    }
    RepresentationReport rep;
    for (int n = 0; n < tree.size(); ++n) {
        const auto i = static_cast<std::size_t>(n);
        if (tree.terminal(n)) {
            const double d = std::abs(y.at[i] - xi.at[i]);
            if (d > rep.max_defect) rep.max_defect = d, rep.worst_node = n;
            ++rep.slots_checked;
            continue;
        }
        for (bool start_post : {false, true}) {
            RuleWindow w{{n}, tree.periods(), start_post};
            const auto rules = enumerate_stopping_rules(tree, w, elig, lim);
            double best = kNegInf;
            for (const auto& rule : rules) best = std::max(best, stopping_value(tree, C, xi, f, rule, n, start_post));
            const double d = std::abs(best - (start_post ? y.post[i] : y.at[i]));
            if (d > rep.max_defect) rep.max_defect = d, rep.worst_node = n;
            ++rep.slots_checked;
        }
    }
    return rep;
}

}  // namespace ladlag
