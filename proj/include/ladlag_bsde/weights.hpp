#pragma once

// Clock A = int alpha^2 dC, stochastic exponentials E(beta A) and the
// weighted norms built on them.
//
// A is stored per step: a_cont = alpha^2 cont (spread over the open interval)
// and a_jump = alpha^2 jump (charged at the next instant). Weights on an open
// interval are integrated exactly against the exponential growth of A^c.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "calculus.hpp"
#include "errors.hpp"
#include "lattice.hpp"

namespace ladlag {

inline constexpr double kReflectedPhiBound = 1.0 / (2.0 * (3.0 + 2.2360679774997896964));

struct LipschitzCoefficients {
    std::vector<double> r, rbar, theta_x, theta_mu;  // per parent
};

inline std::vector<double> alpha_squared(const LipschitzCoefficients& k) {
    std::vector<double> a2(k.r.size());
    for (std::size_t n = 0; n < a2.size(); ++n)
        a2[n] = std::max({std::sqrt(k.r[n]), std::sqrt(k.rbar[n]), k.theta_x[n], k.theta_mu[n]});
    return a2;
}

struct ClockA {
    std::vector<double> alpha2;   // per parent
    std::vector<double> a_cont;   // per parent
    std::vector<double> a_jump;   // per parent, the jump of A at the next instant
    LadlagProcess cumulative;     // at: A_{t_k}; post: A_{t_{k+1}-}
    double phi_eff = 0.0;

    bool below_one() const { return phi_eff < 1.0; }
    bool below_reflected_bound() const { return phi_eff < kReflectedPhiBound; }
};

inline ClockA clock_from_alpha2(const EventTree& tree, const Integrator& C, std::vector<double> alpha2) {
    if (static_cast<int>(alpha2.size()) != tree.size())
        throw Error(Errc::ShapeMismatch, "alpha^2 needs one value per node");
    ClockA A;
    const auto N = static_cast<std::size_t>(tree.size());
    A.a_cont.assign(N, 0.0);
    A.a_jump.assign(N, 0.0);
    A.cumulative = LadlagProcess::constant(tree, 0.0);
    for (int n = 0; n < tree.size(); ++n) {
        const auto i = static_cast<std::size_t>(n);
        if (tree.terminal(n)) {
            alpha2[i] = 0.0;
            continue;
        }
        if (C.total(n) > 0.0 && !(alpha2[i] > 0.0))
            throw Error(Errc::DegenerateAlpha, "alpha vanishes after node " + std::to_string(n) +
                                                   " where C charges");
        A.a_cont[i] = alpha2[i] * C.cont[i];
        A.a_jump[i] = alpha2[i] * C.jump[i];
        A.phi_eff = std::max(A.phi_eff, A.a_jump[i]);
        A.cumulative.post[i] = A.cumulative.at[i] + A.a_cont[i];
        for (int ch : tree.children(n)) A.cumulative.at[static_cast<std::size_t>(ch)] = A.cumulative.post[i] + A.a_jump[i];
    }
    A.alpha2 = std::move(alpha2);
    return A;
}

inline ClockA clock_from_lipschitz(const EventTree& tree, const Integrator& C, const LipschitzCoefficients& k) {
    return clock_from_alpha2(tree, C, alpha_squared(k));
}

// Finite-variation process given by per-step increments.
struct StepIncrements {
    std::vector<double> cont;
    std::vector<double> jump;
};

// E(X) = exp(X^c) prod(1 + dX). `post` holds the left limit before the next
// instant, which is also the supremum over the open interval when X^c grows.
inline LadlagProcess stoch_exp_increments(const EventTree& tree, const StepIncrements& x) {
    LadlagProcess E = LadlagProcess::constant(tree, 1.0);
    for (int n = 0; n < tree.size(); ++n) {
        const auto i = static_cast<std::size_t>(n);
        if (tree.terminal(n)) {
            E.post[i] = E.at[i];
            continue;
        }
        E.post[i] = E.at[i] * std::exp(x.cont[i]);
        for (int ch : tree.children(n)) E.at[static_cast<std::size_t>(ch)] = E.post[i] * (1.0 + x.jump[i]);
    }
    return E;
}

inline LadlagProcess stoch_exp(const EventTree& tree, double beta, const ClockA& A) {
    StepIncrements x{A.a_cont, A.a_jump};
    for (auto& v : x.cont) v *= beta;
    for (auto& v : x.jump) v *= beta;
    return stoch_exp_increments(tree, x);
}

struct ExpRulesReport {
    double inverse_error = 0.0;
    double ratio_error = 0.0;
    double root_error = 0.0;
    bool pass(double tol = 1e-10) const {
        return inverse_error <= tol && ratio_error <= tol && root_error <= tol;
    }
};

// Checks E(A)^{-1} = E(-Abar), E(A)^{-1} E(B) = E(C) and E(A)^{1/2} = E(D)
// at every at-slot and left limit; errors are relative to the left side.
inline ExpRulesReport exp_rules_check(const EventTree& tree, const StepIncrements& a, const StepIncrements& b) {
    const auto N = a.cont.size();
    StepIncrements neg_abar{std::vector<double>(N), std::vector<double>(N)};
    StepIncrements c{std::vector<double>(N), std::vector<double>(N)};
    StepIncrements d{std::vector<double>(N), std::vector<double>(N)};
    for (std::size_t n = 0; n < N; ++n) {
        neg_abar.cont[n] = -a.cont[n];
        neg_abar.jump[n] = -(a.jump[n] - a.jump[n] * a.jump[n] / (1.0 + a.jump[n]));
        c.cont[n] = b.cont[n] - a.cont[n];
        c.jump[n] = (b.jump[n] - a.jump[n]) / (1.0 + a.jump[n]);
        d.cont[n] = a.cont[n] / 2.0;
        d.jump[n] = std::sqrt(1.0 + a.jump[n]) - 1.0;
    }
    const auto EA = stoch_exp_increments(tree, a);
    const auto EB = stoch_exp_increments(tree, b);
    const auto Einv = stoch_exp_increments(tree, neg_abar);
    const auto Ec = stoch_exp_increments(tree, c);
    const auto Ed = stoch_exp_increments(tree, d);
    ExpRulesReport rep;
    auto rel = [](double lhs, double rhs) { return std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs)); };
    for (std::size_t n = 0; n < N; ++n) {
        for (auto slot : {&LadlagProcess::at, &LadlagProcess::post}) {
            const double ea = (EA.*slot)[n], eb = (EB.*slot)[n];
            rep.inverse_error = std::max(rep.inverse_error, rel(1.0 / ea, (Einv.*slot)[n]));
            rep.ratio_error = std::max(rep.ratio_error, rel(eb / ea, (Ec.*slot)[n]));
            rep.root_error = std::max(rep.root_error, rel(std::sqrt(ea), (Ed.*slot)[n]));
        }
    }
    return rep;
}

enum class WeightedNormKind { L2beta, S2Tbeta, H2Tbeta, H2TbetaX, H2Tbetamu, H2mart, I2Tbeta };

class WeightContext {
public:
    WeightContext(const EventTree& tree, const Integrator& C, const ClockA& A, double beta)
        : tree_(&tree), C_(&C), A_(&A), beta_(beta), E_(stoch_exp(tree, beta, A)) {}

    const EventTree& tree() const { return *tree_; }
    const Integrator& integrator() const { return *C_; }
    const ClockA& clock() const { return *A_; }
    double beta() const { return beta_; }
    const LadlagProcess& weight() const { return E_; }

    double at(int n) const { return E_.at[static_cast<std::size_t>(n)]; }
    double left(int n) const { return E_.post[static_cast<std::size_t>(n)]; }
    // Weight of the instant following parent n (sibling-constant).
    double next(int n) const { return at(tree_->node(n).first_child); }
    // int over (t_k, t_{k+1}) of E(beta A) dC^c, divided by cont.
    double interval_factor(int n) const {
        const double x = beta_ * A_->a_cont[static_cast<std::size_t>(n)];
        return at(n) * (x > 0.0 ? std::expm1(x) / x : 1.0);
    }

private:
    const EventTree* tree_;
    const Integrator* C_;
    const ClockA* A_;
    double beta_;
    LadlagProcess E_;
};

inline void require_node_sized(const WeightContext& w, std::size_t size) {
    if (static_cast<int>(size) != w.tree().size())
        throw Error(Errc::ShapeMismatch, "node-indexed object has the wrong length");
}

// E[E(beta A)_T zeta^2] for zeta given on the terminal nodes.
inline double norm_l2(const WeightContext& w, std::span<const double> zeta) {
    require_node_sized(w, zeta.size());
    double acc = 0.0;
    for (int leaf : w.tree().leaves()) {
        const double v = zeta[static_cast<std::size_t>(leaf)];
        acc += w.tree().path_prob(leaf) * w.at(leaf) * v * v;
    }
    return acc;
}

// E[sup_s E(beta A)_s Y_s^2] over the slots of each path.
inline double norm_s2(const WeightContext& w, const PathProcess& y, bool include_terminal = true) {
    const auto& tree = w.tree();
    const int N = tree.periods();
    const int first_leaf = tree.level_begin(N);
    double acc = 0.0;
    for (int leaf : tree.leaves()) {
        const auto path = tree.path_to(leaf);
        double best = 0.0;
        for (int k = 0; k <= N; ++k) {
            const int n = path[static_cast<std::size_t>(k)];
            if (k < N || include_terminal) {
                const double v = y(leaf - first_leaf, PathProcess::at_slot(k));
                best = std::max(best, w.at(n) * v * v);
            }
            if (k < N) {
                const double v = y(leaf - first_leaf, PathProcess::post_slot(k));
                best = std::max(best, w.left(n) * v * v);
            }
        }
        acc += tree.path_prob(leaf) * best;
    }
    return acc;
}

inline double norm_s2(const WeightContext& w, const LadlagProcess& y, bool include_terminal = true) {
    require_node_sized(w, y.at.size());
    return norm_s2(w, to_path_process(w.tree(), y), include_terminal);
}

// E[int_(0,T] E(beta A) phi^2 dC]; phi.post meets cont mass, phi.at of the
// child meets jump mass.
inline double norm_h2(const WeightContext& w, const PathProcess& phi) {
    const auto& tree = w.tree();
    const auto& C = w.integrator();
    const int N = tree.periods();
    const int first_leaf = tree.level_begin(N);
    double acc = 0.0;
    for (int leaf : tree.leaves()) {
        const auto path = tree.path_to(leaf);
        double sum = 0.0;
        for (int k = 0; k < N; ++k) {
            const int n = path[static_cast<std::size_t>(k)];
            const int ch = path[static_cast<std::size_t>(k) + 1];
            const double vp = phi(leaf - first_leaf, PathProcess::post_slot(k));
            const double va = phi(leaf - first_leaf, PathProcess::at_slot(k + 1));
            if (C.cont[static_cast<std::size_t>(n)] > 0.0)
                sum += w.interval_factor(n) * vp * vp * C.cont[static_cast<std::size_t>(n)];
            if (C.jump[static_cast<std::size_t>(n)] > 0.0)
                sum += w.at(ch) * va * va * C.jump[static_cast<std::size_t>(n)];
        }
        acc += tree.path_prob(leaf) * sum;
    }
    return acc;
}

inline double norm_h2(const WeightContext& w, const LadlagProcess& phi) {
    require_node_sized(w, phi.at.size());
    const auto& tree = w.tree();
    const auto& C = w.integrator();
    double acc = 0.0;
    for (int n = 0; n < tree.size(); ++n) {
        if (tree.terminal(n)) continue;
        const auto i = static_cast<std::size_t>(n);
        double step = 0.0;
        if (C.cont[i] > 0.0) step += w.interval_factor(n) * phi.post[i] * phi.post[i] * C.cont[i];
        if (C.jump[i] > 0.0)
            for (int ch : tree.children(n)) {
                const double v = phi.at[static_cast<std::size_t>(ch)];
                step += tree.prob(ch) * w.at(ch) * v * v * C.jump[i];
            }
        acc += tree.path_prob(n) * step;
    }
    return acc;
}

inline double norm_h2x(const WeightContext& w, const DriverX& X, const NodeVectors& Z) {
    const auto& tree = w.tree();
    if (Z.dim != X.dim || static_cast<int>(Z.values.size()) != tree.size() * X.dim)
        throw Error(Errc::ShapeMismatch, "integrand dimension differs from the driver");
    double acc = 0.0;
    for (int n = 0; n < tree.size(); ++n) {
        if (tree.terminal(n) || X.dim == 0) continue;
        Eigen::Map<const Eigen::VectorXd> z(Z.row(n).data(), X.dim);
        const double q = z.dot(X.c(n) * z);
        acc += tree.path_prob(n) * w.next(n) * q * w.integrator().jump[static_cast<std::size_t>(n)];
    }
    return acc;
}

inline double norm_h2mu(const WeightContext& w, const MarkedJumps& J, const NodeVectors& U) {
    const auto& tree = w.tree();
    if (U.dim != J.count || static_cast<int>(U.values.size()) != tree.size() * J.count)
        throw Error(Errc::ShapeMismatch, "payload width differs from the mark alphabet");
    double acc = 0.0;
    for (int n = 0; n < tree.size(); ++n) {
        if (tree.terminal(n) || J.count == 0) continue;
        acc += tree.path_prob(n) * w.next(n) * triple_norm_sq(J, w.integrator(), n, U.row(n)) *
               w.integrator().jump[static_cast<std::size_t>(n)];
    }
    return acc;
}

// E[int E(beta A) d<M>] for a martingale given by its increments on the edges.
inline double norm_h2mart_increments(const WeightContext& w, std::span<const double> inc) {
    require_node_sized(w, inc.size());
    const auto& tree = w.tree();
    double acc = 0.0;
    for (int ch = 1; ch < tree.size(); ++ch) {
        const double v = inc[static_cast<std::size_t>(ch)];
        acc += tree.path_prob(ch) * w.at(ch) * v * v;
    }
    return acc;
}

// E[M_0^2] + E[int E(beta A) d<M>] for a node-indexed martingale.
inline double norm_h2mart(const WeightContext& w, std::span<const double> M) {
    require_node_sized(w, M.size());
    std::vector<double> inc(M.size(), 0.0);
    for (int ch = 1; ch < w.tree().size(); ++ch)
        inc[static_cast<std::size_t>(ch)] = M[static_cast<std::size_t>(ch)] - M[static_cast<std::size_t>(w.tree().parent(ch))];
    return M[0] * M[0] + norm_h2mart_increments(w, inc);
}

// E[(int E(beta A)^{1/2} dK)^2] for an increasing process whose increments sit
// on the at-slots of the nodes (root included, K_{0-} = 0).
inline double norm_i2(const WeightContext& w, std::span<const double> dk) {
    require_node_sized(w, dk.size());
    const auto& tree = w.tree();
    double acc = 0.0;
    for (int leaf : tree.leaves()) {
        double sum = 0.0;
        for (int n = leaf; n >= 0; n = tree.parent(n)) sum += std::sqrt(w.at(n)) * dk[static_cast<std::size_t>(n)];
        acc += tree.path_prob(leaf) * sum * sum;
    }
    return acc;
}

using NormObject = std::variant<std::vector<double>, LadlagProcess, PathProcess, NodeVectors>;

// Kind-checked dispatcher. Node vectors mean terminal values (L2beta), a
// martingale (H2mart) or increments on at-slots (I2Tbeta).
inline double weighted_norm(WeightedNormKind kind, const NormObject& obj, const WeightContext& w,
                            const DriverX* X = nullptr, const MarkedJumps* J = nullptr) {
    auto shape = [] { return Error(Errc::ShapeMismatch, "object does not fit the norm kind"); };
    switch (kind) {
        case WeightedNormKind::L2beta:
            if (auto v = std::get_if<std::vector<double>>(&obj)) return norm_l2(w, *v);
            throw shape();
        case WeightedNormKind::S2Tbeta:
            if (auto y = std::get_if<LadlagProcess>(&obj)) return norm_s2(w, *y);
            if (auto y = std::get_if<PathProcess>(&obj)) return norm_s2(w, *y);
            throw shape();
        case WeightedNormKind::H2Tbeta:
            if (auto y = std::get_if<LadlagProcess>(&obj)) return norm_h2(w, *y);
            if (auto y = std::get_if<PathProcess>(&obj)) return norm_h2(w, *y);
            throw shape();
        case WeightedNormKind::H2TbetaX:
            if (auto z = std::get_if<NodeVectors>(&obj); z && X) return norm_h2x(w, *X, *z);
            throw shape();
        case WeightedNormKind::H2Tbetamu:
            if (auto u = std::get_if<NodeVectors>(&obj); u && J) return norm_h2mu(w, *J, *u);
            throw shape();
        case WeightedNormKind::H2mart:
            if (auto v = std::get_if<std::vector<double>>(&obj)) return norm_h2mart(w, *v);
            throw shape();
        case WeightedNormKind::I2Tbeta:
            if (auto v = std::get_if<std::vector<double>>(&obj)) return norm_i2(w, *v);
            throw shape();
    }
    throw shape();
}

// phi / alpha slot-wise; zero where alpha vanishes (no C mass there).
inline LadlagProcess divide_by_alpha(const EventTree& tree, const ClockA& A, const LadlagProcess& phi) {
    LadlagProcess out = LadlagProcess::constant(tree, 0.0);
    for (int n = 0; n < tree.size(); ++n) {
        if (tree.terminal(n)) continue;
        const double a = std::sqrt(A.alpha2[static_cast<std::size_t>(n)]);
        if (!(a > 0.0)) continue;
        out.post[static_cast<std::size_t>(n)] = phi.post[static_cast<std::size_t>(n)] / a;
        for (int ch : tree.children(n)) out.at[static_cast<std::size_t>(ch)] = phi.at[static_cast<std::size_t>(ch)] / a;
    }
    return out;
}

inline LadlagProcess multiply_by_alpha(const EventTree& tree, const ClockA& A, const LadlagProcess& phi) {
    LadlagProcess out = LadlagProcess::constant(tree, 0.0);
    for (int n = 0; n < tree.size(); ++n) {
        if (tree.terminal(n)) continue;
        const double a = std::sqrt(A.alpha2[static_cast<std::size_t>(n)]);
        out.post[static_cast<std::size_t>(n)] = phi.post[static_cast<std::size_t>(n)] * a;
        for (int ch : tree.children(n)) out.at[static_cast<std::size_t>(ch)] = phi.at[static_cast<std::size_t>(ch)] * a;
    }
    return out;
}

// xi^+ 1_{<T} with -inf mapped to 0.
inline LadlagProcess positive_part_before_terminal(const EventTree& tree, const LadlagProcess& xi) {
    LadlagProcess out = LadlagProcess::constant(tree, 0.0);
    for (int n = 0; n < tree.size(); ++n) {
        if (tree.terminal(n)) continue;
        const auto i = static_cast<std::size_t>(n);
        out.at[i] = std::max(0.0, xi.at[i]);
        out.post[i] = std::max(0.0, xi.post[i]);
    }
    return out;
}

// alpha brs{xi} as a path integrand: step k carries alpha_k times the backward
// running sup on both the interval and the following instant.
inline PathProcess alpha_brs(const EventTree& tree, const ClockA& A, const LadlagProcess& xi) {
    const auto ll = left_limit_process(tree, xi);
    PathProcess out = ll.brs;
    const int N = tree.periods();
    const int first_leaf = tree.level_begin(N);
    for (int leaf : tree.leaves()) {
        const auto path = tree.path_to(leaf);
        for (int k = 0; k < N; ++k) {
            const double a = std::sqrt(A.alpha2[static_cast<std::size_t>(path[static_cast<std::size_t>(k)])]);
            out(leaf - first_leaf, PathProcess::post_slot(k)) *= a;
            out(leaf - first_leaf, PathProcess::at_slot(k + 1)) *= a;
        }
        out(leaf - first_leaf, PathProcess::at_slot(0)) = 0.0;
    }
    return out;
}

struct StandardDataReport {
    double xi_terminal = 0.0;      // ||xi_T||^2 in L2 at beta_hat
    double alpha_brs = 0.0;        // ||alpha brs{xi}||^2 in H2 at beta_hat
    double f0_over_alpha = 0.0;    // ||f(0)/alpha||^2 in H2 at beta_hat
    double xi_plus_star = 0.0;     // ||xi^+ 1_{<T}||^2 in S2 at beta_star
    double bound_factor = 0.0;     // (1 + b* phi)(1 + b phi)/(b* - b)
    double lemma_rhs = 0.0;
    bool finite = true;
    bool lemma_holds = true;
    double slack() const { return lemma_rhs - alpha_brs; }
};

inline StandardDataReport standard_data_check(const EventTree& tree, const Integrator& C, const ClockA& A,
                                              const LadlagProcess& xi, const LadlagProcess& f0,
                                              double beta_hat, double beta_star, double phi,
                                              double tol = 1e-9) {
    if (!(beta_star > beta_hat)) throw Error(Errc::BadBetaPair, "beta* must exceed beta_hat");
    const WeightContext w_hat(tree, C, A, beta_hat);
    const WeightContext w_star(tree, C, A, beta_star);
    StandardDataReport rep;
    std::vector<double> xi_t(static_cast<std::size_t>(tree.size()), 0.0);
    for (int leaf : tree.leaves()) xi_t[static_cast<std::size_t>(leaf)] = xi.at[static_cast<std::size_t>(leaf)];
    rep.xi_terminal = norm_l2(w_hat, xi_t);
    rep.alpha_brs = norm_h2(w_hat, alpha_brs(tree, A, xi));
    rep.f0_over_alpha = norm_h2(w_hat, divide_by_alpha(tree, A, f0));
    rep.xi_plus_star = norm_s2(w_star, positive_part_before_terminal(tree, xi));
    rep.bound_factor = (1.0 + beta_star * phi) * (1.0 + beta_hat * phi) / (beta_star - beta_hat);
    rep.lemma_rhs = rep.bound_factor * rep.xi_plus_star;
    rep.finite = std::isfinite(rep.xi_terminal) && std::isfinite(rep.alpha_brs) && std::isfinite(rep.f0_over_alpha);
    rep.lemma_holds = rep.alpha_brs <= rep.lemma_rhs + tol;
    return rep;
}

}  // namespace ladlag
