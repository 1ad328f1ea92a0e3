#pragma once

// Comparison of two BSDEs on the same lattice: with xi'_T <= xi_T, f' <= f
// along the primed solution, Phi < 1 and an admissible jump linearizer rho,
// the primed solution stays below. Every hypothesis is checked numerically
// before ordering is asserted.
//
// Linearization of f(Y..) - f(Y'..) from below uses the Lipschitz data of the
// upper generator: lambda = -sqrt(r) sgn(dy), lambda_hat = -sqrt(rbar) sgn(dy_-),
// eta = -sqrt(theta_X) dz / |c^{1/2} dz|, and rho with Q rho = g_eff so that
// g_eff^T du = <rho, du> in the triple-norm polarization. sgn(0) = 0.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "calculus.hpp"
#include "errors.hpp"
#include "generator.hpp"
#include "lattice.hpp"
#include "snell.hpp"
#include "solvers.hpp"
#include "weights.hpp"

namespace ladlag {

inline constexpr double kOrderingTolerance = 1e-10;

inline double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

struct Linearization {
    LadlagProcess lambda;      // post: interval slot; at[child]: instant slot
    LadlagProcess lambda_hat;
    LadlagProcess gamma;       // lambda_hat / (1 - lambda_hat dC)
    NodeVectors eta;           // per parent, R^m
    NodeVectors rho;           // per parent, one payload per mark
    LadlagProcess exp_v;       // E(int gamma dC)
    LadlagProcess exp_w;       // E(int lambda dC)
    double max_lambda_excess = 0.0;  // max |lambda| - sqrt(r), and the same for lambda_hat
    double max_eta_excess = 0.0;     // max eta^T c eta - theta_X
    double min_exp = 0.0;            // smallest value of E(v), E(w)
};

// Stochastic exponential of a slot-indexed rate against C; the instant rate
// may differ between siblings.
inline LadlagProcess exp_of_rate(const EventTree& tree, const Integrator& C, const LadlagProcess& rate) {
    LadlagProcess E = LadlagProcess::constant(tree, 1.0);
    for (int n = 0; n < tree.size(); ++n) {
        const auto i = static_cast<std::size_t>(n);
        if (tree.terminal(n)) {
            E.post[i] = E.at[i];
            continue;
        }
        E.post[i] = E.at[i] * std::exp(rate.post[i] * C.cont[i]);
        for (int ch : tree.children(n))
            E.at[static_cast<std::size_t>(ch)] = E.post[i] * (1.0 + rate.at[static_cast<std::size_t>(ch)] * C.jump[i]);
    }
    return E;
}

inline Linearization linearize(const Model& m, const GeneratorSpec& upper, const ReflectedSolution& sol,
                               const ReflectedSolution& sol_prime) {
    const auto& tree = m.tree;
    const auto k = lipschitz_coefficients(m, upper);
    Linearization lin;
    lin.lambda = LadlagProcess::constant(tree, 0.0);
    lin.lambda_hat = lin.lambda;
    lin.gamma = lin.lambda;
    lin.eta = NodeVectors::zeros(tree, m.X.dim);
    lin.rho = NodeVectors::zeros(tree, m.J.count);
    for (int n = 0; n < tree.size(); ++n) {
        if (tree.terminal(n)) continue;
        const auto i = static_cast<std::size_t>(n);
        const double sr = std::sqrt(k.r[i]), srb = std::sqrt(k.rbar[i]);
        const double dyp = sol.y.post[i] - sol_prime.y.post[i];
        lin.lambda.post[i] = -sr * sgn(dyp);
        lin.lambda_hat.post[i] = -srb * sgn(dyp);
        for (int ch : tree.children(n)) {
            const auto c = static_cast<std::size_t>(ch);
            lin.lambda.at[c] = -sr * sgn(sol.y.at[c] - sol_prime.y.at[c]);
            lin.lambda_hat.at[c] = lin.lambda_hat.post[i];
        }
        lin.gamma.post[i] = lin.lambda_hat.post[i];  // no jump on the interval
        for (int ch : tree.children(n)) {
            const auto c = static_cast<std::size_t>(ch);
            lin.gamma.at[c] = lin.lambda_hat.at[c] / (1.0 - lin.lambda_hat.at[c] * m.C.jump[i]);
            lin.max_lambda_excess = std::max({lin.max_lambda_excess, std::abs(lin.lambda.at[c]) - sr,
                                              std::abs(lin.lambda_hat.at[c]) - srb});
        }
        if (m.X.dim > 0) {
            Eigen::VectorXd dz(m.X.dim);
            for (int d = 0; d < m.X.dim; ++d)
                dz(d) = sol.mart.z.row(n)[static_cast<std::size_t>(d)] - sol_prime.mart.z.row(n)[static_cast<std::size_t>(d)];
            const double q = dz.dot(m.X.c(n) * dz);
            if (q > 0.0) {
                const Eigen::VectorXd e = -std::sqrt(k.theta_x[i]) * dz / std::sqrt(q);
                for (int d = 0; d < m.X.dim; ++d) lin.eta.row(n)[static_cast<std::size_t>(d)] = e(d);
                lin.max_eta_excess = std::max(lin.max_eta_excess, e.dot(m.X.c(n) * e) - k.theta_x[i]);
            }
        }
        const Eigen::VectorXd rho = slope_payload(m, upper, n);
        for (int e = 0; e < m.J.count; ++e) lin.rho.row(n)[static_cast<std::size_t>(e)] = rho(e);
    }
    lin.exp_v = exp_of_rate(tree, m.C, lin.gamma);
    lin.exp_w = exp_of_rate(tree, m.C, lin.lambda);
    lin.min_exp = std::min(*std::min_element(lin.exp_v.at.begin(), lin.exp_v.at.end()),
                           *std::min_element(lin.exp_w.at.begin(), lin.exp_w.at.end()));
    return lin;
}

struct RhoReport {
    NodeVectors rho;
    bool feasible = true;
    double margin = 0.0;          // min over children of 1 + eta dX + rho~
    int witness = -1;             // child with the smallest margin when infeasible
    double polarization_defect = 0.0;  // max of (<rho, dU> - (f(U) - f(U'))) over charged children
};

// rho = Q^+ g_eff per parent; checks the jump condition (with the supplied
// eta, zero if none) and the polarization inequality on the pair (U, U').
inline RhoReport construct_rho(const Model& m, const GeneratorSpec& g, const ReflectedSolution& sol_prime,
                               const NodeVectors& U, const NodeVectors& U_prime, const NodeVectors* eta = nullptr) {
    const auto& tree = m.tree;
    RhoReport rep;
    rep.rho = NodeVectors::zeros(tree, m.J.count);
    rep.margin = std::numeric_limits<double>::infinity();
    const auto with_u = evaluate_generator(m, g, {sol_prime.y, sol_prime.mart.z, U});
    const auto with_u_prime = evaluate_generator(m, g, {sol_prime.y, sol_prime.mart.z, U_prime});
    for (int n = 0; n < tree.size(); ++n) {
        if (tree.terminal(n)) continue;
        const auto i = static_cast<std::size_t>(n);
        const Eigen::VectorXd rho = slope_payload(m, g, n);
        for (int e = 0; e < m.J.count; ++e) rep.rho.row(n)[static_cast<std::size_t>(e)] = rho(e);
        std::vector<double> du(static_cast<std::size_t>(m.J.count));
        for (int e = 0; e < m.J.count; ++e)
            du[static_cast<std::size_t>(e)] = U.row(n)[static_cast<std::size_t>(e)] - U_prime.row(n)[static_cast<std::size_t>(e)];
        const double bil = m.J.count > 0 ? jump_bilinear(m.J, m.C, n, rep.rho.row(n), du) : 0.0;
        for (int ch : tree.children(n)) {
            const auto c = static_cast<std::size_t>(ch);
            double jump = m.J.count > 0 ? compensated_increment(tree, m.J, ch, rep.rho.row(n)) : 0.0;
            if (eta)
                for (int d = 0; d < m.X.dim; ++d)
                    jump += eta->row(n)[static_cast<std::size_t>(d)] * m.X.dx(ch)[static_cast<std::size_t>(d)];
            if (1.0 + jump < rep.margin) {
                rep.margin = 1.0 + jump;
                rep.witness = ch;
            }
            if (m.C.jump[i] > 0.0)
                rep.polarization_defect = std::max(rep.polarization_defect, bil - (with_u.at[c] - with_u_prime.at[c]));
        }
    }
    rep.feasible = rep.margin > 0.0 && rep.polarization_defect <= 1e-12;
    if (rep.feasible) rep.witness = -1;
    return rep;
}

struct MeasureChange {
    std::vector<double> density;   // E(L) at every node
    double root_mean_defect = 0.0; // |E[E(L)_T] - 1|
    double margin = 0.0;           // min of 1 + dL
    double x_martingale_defect = 0.0;
    double u_martingale_defect = 0.0;
    double n_martingale_defect = 0.0;
};

// dL on the edge into a child: eta dX + rho~.
inline double density_increment(const Model& m, const Linearization& lin, int child) {
    const int n = m.tree.parent(child);
    double d = m.J.count > 0 ? compensated_increment(m.tree, m.J, child, lin.rho.row(n)) : 0.0;
    for (int i = 0; i < m.X.dim; ++i)
        d += lin.eta.row(n)[static_cast<std::size_t>(i)] * m.X.dx(child)[static_cast<std::size_t>(i)];
    return d;
}

// Density of Q and the per-parent Girsanov identities for the difference
// martingale: E_Q[dZ dX] = eta^T c dZ dC, E_Q[dU~] = <rho, dU> dC, E_Q[dN] = 0.
inline MeasureChange girsanov_weights(const Model& m, const Linearization& lin, const ReflectedSolution& sol,
                                      const ReflectedSolution& sol_prime) {
    const auto& tree = m.tree;
    MeasureChange mc;
    mc.density.assign(static_cast<std::size_t>(tree.size()), 1.0);
    mc.margin = std::numeric_limits<double>::infinity();
    for (int ch = 1; ch < tree.size(); ++ch) {
        const double d = density_increment(m, lin, ch);
        mc.margin = std::min(mc.margin, 1.0 + d);
    }
    if (!(mc.margin > 0.0))
        throw Error(Errc::JumpConditionViolated, "1 + dL = " + std::to_string(mc.margin));
    for (int ch = 1; ch < tree.size(); ++ch)
        mc.density[static_cast<std::size_t>(ch)] =
            mc.density[static_cast<std::size_t>(tree.parent(ch))] * (1.0 + density_increment(m, lin, ch));
    double mean = 0.0;
    for (int leaf : tree.leaves()) mean += tree.path_prob(leaf) * mc.density[static_cast<std::size_t>(leaf)];
    mc.root_mean_defect = std::abs(mean - 1.0);

    for (int n = 0; n < tree.size(); ++n) {
        if (tree.terminal(n)) continue;
        const auto i = static_cast<std::size_t>(n);
        std::vector<double> dz(static_cast<std::size_t>(m.X.dim)), du(static_cast<std::size_t>(m.J.count));
        for (int d = 0; d < m.X.dim; ++d)
            dz[static_cast<std::size_t>(d)] = sol.mart.z.row(n)[static_cast<std::size_t>(d)] - sol_prime.mart.z.row(n)[static_cast<std::size_t>(d)];
        for (int e = 0; e < m.J.count; ++e)
            du[static_cast<std::size_t>(e)] = sol.mart.u.row(n)[static_cast<std::size_t>(e)] - sol_prime.mart.u.row(n)[static_cast<std::size_t>(e)];
        double qx = 0.0, qu = 0.0, qn = 0.0;
        for (int ch : tree.children(n)) {
            const auto c = static_cast<std::size_t>(ch);
            const double w = tree.prob(ch) * (1.0 + density_increment(m, lin, ch));
            double zx = 0.0;
            for (int d = 0; d < m.X.dim; ++d) zx += dz[static_cast<std::size_t>(d)] * m.X.dx(ch)[static_cast<std::size_t>(d)];
            qx += w * zx;
            if (m.J.count > 0) qu += w * compensated_increment(tree, m.J, ch, du);
            qn += w * (sol.mart.dn[c] - sol_prime.mart.dn[c]);
        }
        double drift_x = 0.0;
        if (m.X.dim > 0) {
            Eigen::Map<const Eigen::VectorXd> e(lin.eta.row(n).data(), m.X.dim), z(dz.data(), m.X.dim);
            drift_x = e.dot(m.X.c(n) * z) * m.C.jump[i];
        }
        const double drift_u = m.J.count > 0 ? jump_bilinear(m.J, m.C, n, lin.rho.row(n), du) * m.C.jump[i] : 0.0;
        mc.x_martingale_defect = std::max(mc.x_martingale_defect, std::abs(qx - drift_x));
        mc.u_martingale_defect = std::max(mc.u_martingale_defect, std::abs(qu - drift_u));
        mc.n_martingale_defect = std::max(mc.n_martingale_defect, std::abs(qn));
    }
    return mc;
}

struct BsdeData {
    GeneratorSpec gen;
    std::vector<double> xi_terminal;  // node-indexed, read on the leaves
};

struct ComparisonHypotheses {
    double terminal_excess = 0.0;    // max (xi'_T - xi_T)
    double generator_excess = 0.0;   // max (f' - f) along the primed solution on charged slots
    double phi_eff = 0.0;
    double jump_margin = 0.0;
    double polarization_defect = 0.0;
    double coefficient_excess = 0.0;
    double min_exp = 0.0;
    std::string failed;              // first failed condition, empty when all hold

    bool ok() const { return failed.empty(); }
};

struct ComparisonReport {
    bool ordered = false;
    bool identical = false;          // Y' == Y at every slot
    double max_gap = 0.0;            // max (Y' - Y) over all slots
    int witness = -1;                // node of the largest gap when not ordered
    ComparisonHypotheses hypotheses;
    MeasureChange measure;
    PicardResult upper;
    PicardResult lower;
};

// Solves both equations and evaluates every hypothesis without raising.
inline ComparisonReport compare_unchecked(const Model& m, const BsdeData& upper, const BsdeData& lower,
                                          double beta_hat, double phi) {
    const auto& tree = m.tree;
    ComparisonReport rep;
    auto& h = rep.hypotheses;
    auto fail = [&h](const std::string& what) {
        if (h.failed.empty()) h.failed = what;
    };
    for (int leaf : tree.leaves()) {
        const auto l = static_cast<std::size_t>(leaf);
        h.terminal_excess = std::max(h.terminal_excess, lower.xi_terminal[l] - upper.xi_terminal[l]);
    }
    if (h.terminal_excess > 0.0) fail("terminal values not ordered");
    h.phi_eff = generator_clock(m, upper.gen).phi_eff;
    if (!(h.phi_eff < 1.0)) fail("clock jump of the upper generator not below 1");

    PicardOptions opt;
    opt.beta_hat = beta_hat;
    opt.phi = phi;
    rep.upper = picard_bsde(m, upper.gen, upper.xi_terminal, opt);
    rep.lower = picard_bsde(m, lower.gen, lower.xi_terminal, opt);
    const auto& s = rep.upper.solution;
    const auto& sp = rep.lower.solution;

    const auto f_on_lower = evaluate_generator(m, upper.gen, {sp.y, sp.mart.z, sp.mart.u});
    const auto fp_on_lower = evaluate_generator(m, lower.gen, {sp.y, sp.mart.z, sp.mart.u});
    for (int n = 0; n < tree.size(); ++n) {
        if (tree.terminal(n)) continue;
        const auto i = static_cast<std::size_t>(n);
        if (m.C.cont[i] > 0.0) h.generator_excess = std::max(h.generator_excess, fp_on_lower.post[i] - f_on_lower.post[i]);
        if (m.C.jump[i] > 0.0)
            for (int ch : tree.children(n)) {
                const auto c = static_cast<std::size_t>(ch);
                h.generator_excess = std::max(h.generator_excess, fp_on_lower.at[c] - f_on_lower.at[c]);
            }
    }
    if (h.generator_excess > 0.0) fail("generators not ordered along the lower solution");

    const auto lin = linearize(m, upper.gen, s, sp);
    h.coefficient_excess = std::max(lin.max_lambda_excess, lin.max_eta_excess);
    if (h.coefficient_excess > 1e-12) fail("linearization coefficients exceed the Lipschitz data");
    h.min_exp = lin.min_exp;
    if (!(h.min_exp > 0.0)) fail("stochastic exponential of the linearization not positive");
    const auto rho = construct_rho(m, upper.gen, sp, s.mart.u, sp.mart.u, &lin.eta);
    h.jump_margin = rho.margin;
    h.polarization_defect = rho.polarization_defect;
    if (!(rho.margin > 0.0)) fail("jump condition 1 + eta dX + rho~ > 0 fails at node " + std::to_string(rho.witness));
    if (rho.polarization_defect > 1e-12) fail("polarization inequality for rho fails");
    if (rho.margin > 0.0) rep.measure = girsanov_weights(m, lin, s, sp);

    rep.identical = true;
    for (int n = 0; n < tree.size(); ++n) {
        const auto i = static_cast<std::size_t>(n);
        for (double gap : {sp.y.at[i] - s.y.at[i], tree.terminal(n) ? 0.0 : sp.y.post[i] - s.y.post[i]}) {
            if (gap != 0.0) rep.identical = false;
            if (gap > rep.max_gap) {
                rep.max_gap = gap;
                rep.witness = n;
            }
        }
    }
    rep.ordered = rep.max_gap <= kOrderingTolerance;
    if (rep.ordered) rep.witness = -1;
    return rep;
}

// Ordering verdict; raises HypothesisViolated naming the first failed check.
inline ComparisonReport compare(const Model& m, const BsdeData& upper, const BsdeData& lower, double beta_hat,
                                double phi) {
    auto rep = compare_unchecked(m, upper, lower, beta_hat, phi);
    if (!rep.hypotheses.ok()) throw Error(Errc::HypothesisViolated, rep.hypotheses.failed);
    return rep;
}

}  // namespace ladlag
