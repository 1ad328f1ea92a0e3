#pragma once

// Picard construction for the BSDE and the reflected BSDE on a lattice.
//
// One Picard step freezes (y, z, u, n), evaluates the generator on it and
// solves the resulting exogenous problem with the Snell envelope. Successive
// differences are measured in the product norm of the chosen variant:
//   1: ||.||_S2 + ||alpha y|| + ||alpha y_-|| + ||eta||   (y and y_- used)
//   2:            ||alpha y|| +                 ||eta||   (y_- unused)
//   3: ||.||_S2 +               ||alpha y_-|| + ||eta||   (y unused)
// where ||eta||^2 = ||z||^2_X + ||u||^2_mu + ||n||^2 and S2 is unweighted.
// For a contraction the squared ratio of successive differences is bounded by
// the matching constant M_i (reflected) or M~_i (BSDE).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "calculus.hpp"
#include "constants.hpp"
#include "errors.hpp"
#include "generator.hpp"
#include "lattice.hpp"
#include "snell.hpp"
#include "weights.hpp"

namespace ladlag {

enum class EquationKind { Bsde, Reflected };

struct PicardOptions {
    double beta_hat = 1.0;
    int variant = 0;              // 0 picks the smallest admissible variant
    double tol = 1e-10;
    int max_iter = 200;
    bool force = false;           // run even when the constant is not below 1
    std::optional<double> phi;    // declared jump bound; defaults to the clock's own
    bool random_init = false;
    std::uint64_t seed = 0;
    bool polish = true;           // extra steps after convergence, not recorded as ratios
};

struct DifferenceNorms {
    double s2 = 0.0;
    double alpha_y = 0.0;
    double alpha_y_minus = 0.0;
    double z = 0.0;
    double u = 0.0;
    double n = 0.0;
    double combined = 0.0;
};

struct PicardTrace {
    std::vector<DifferenceNorms> differences;  // one per Picard step
    std::vector<double> ratios;                // combined_k / combined_{k-1}
    int iterations = 0;
    int polish_steps = 0;
    bool converged = false;
    bool verified = false;                     // the constant is below 1
    int variant = 0;
    double beta_hat = 0.0;
    double phi = 0.0;
    double constant = 0.0;

    double max_ratio() const {
        double m = 0.0;
        for (double r : ratios) m = std::max(m, r);
        return m;
    }
};

struct PicardState {
    LadlagProcess y;
    NodeVectors z;
    NodeVectors u;
    std::vector<double> dn;
};

struct PicardResult {
    ReflectedSolution solution;
    PicardTrace trace;
    ClockA clock;
};

inline int auto_variant(const GeneratorSpec& g) {
    if (g.uses_y() && g.uses_y_minus()) return 1;
    if (g.uses_y_minus()) return 3;
    return 2;
}

inline void check_variant(const GeneratorSpec& g, int variant) {
    if (variant < 1 || variant > 3) throw Error(Errc::OutOfDomain, "variant must be 1, 2 or 3");
    if (variant == 2 && g.uses_y_minus())
        throw Error(Errc::VariantDependenceMismatch, "variant 2 needs a generator free of y_-");
    if (variant == 3 && g.uses_y())
        throw Error(Errc::VariantDependenceMismatch, "variant 3 needs a generator free of y");
}

inline ConstantId variant_constant(EquationKind kind, int variant) {
    static constexpr ConstantId reflected[] = {ConstantId::M1, ConstantId::M2, ConstantId::M3};
    static constexpr ConstantId bsde[] = {ConstantId::Mt1, ConstantId::Mt2, ConstantId::Mt3};
    return (kind == EquationKind::Reflected ? reflected : bsde)[variant - 1];
}

// y_- as an optional process: the post value on the interval and the parent's
// post value at the next instant.
inline LadlagProcess left_limit_of(const EventTree& tree, const LadlagProcess& y) {
    LadlagProcess out = y;
    for (int ch = 1; ch < tree.size(); ++ch)
        out.at[static_cast<std::size_t>(ch)] = y.post[static_cast<std::size_t>(tree.parent(ch))];
    return out;
}

inline DifferenceNorms difference_norms(const Model& m, const ClockA& A, double beta, int variant,
                                        const PicardState& a, const PicardState& b) {
    const auto& tree = m.tree;
    const WeightContext w(tree, m.C, A, beta);
    const WeightContext unweighted(tree, m.C, A, 0.0);
    LadlagProcess dy = LadlagProcess::constant(tree, 0.0);
    for (std::size_t i = 0; i < dy.at.size(); ++i) {
        dy.at[i] = a.y.at[i] - b.y.at[i];
        dy.post[i] = a.y.post[i] - b.y.post[i];
    }
    NodeVectors dz = a.z, du = a.u;
    for (std::size_t i = 0; i < dz.values.size(); ++i) dz.values[i] -= b.z.values[i];
    for (std::size_t i = 0; i < du.values.size(); ++i) du.values[i] -= b.u.values[i];
    std::vector<double> dn(a.dn.size());
    for (std::size_t i = 0; i < dn.size(); ++i) dn[i] = a.dn[i] - b.dn[i];

    DifferenceNorms d;
    d.z = norm_h2x(w, m.X, dz);
    d.u = norm_h2mu(w, m.J, du);
    d.n = norm_h2mart_increments(w, dn);
    d.combined = d.z + d.u + d.n;
    if (variant != 2) {
        d.s2 = norm_s2(unweighted, dy);
        d.alpha_y_minus = norm_h2(w, multiply_by_alpha(tree, A, left_limit_of(tree, dy)));
        d.combined += d.s2 + d.alpha_y_minus;
    }
    if (variant != 3) {
        d.alpha_y = norm_h2(w, multiply_by_alpha(tree, A, dy));
        d.combined += d.alpha_y;
    }
    return d;
}

inline PicardState state_of(const ReflectedSolution& s) { return {s.y, s.mart.z, s.mart.u, s.mart.dn}; }

inline PicardState initial_state(const Model& m, const PicardOptions& opt) {
    PicardState s{LadlagProcess::constant(m.tree, 0.0), NodeVectors::zeros(m.tree, m.X.dim),
                  NodeVectors::zeros(m.tree, m.J.count), std::vector<double>(static_cast<std::size_t>(m.tree.size()), 0.0)};
    if (!opt.random_init) return s;
    std::mt19937_64 rng(opt.seed);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    for (auto& v : s.y.at) v = unif(rng);
    for (auto& v : s.y.post) v = unif(rng);
    for (auto& v : s.z.values) v = unif(rng);
    for (auto& v : s.u.values) v = unif(rng);
    return s;
}

inline ReflectedSolution picard_step(const Model& m, const GeneratorSpec& g, const LadlagProcess& xi,
                                     const PicardState& s) {
    const auto f = evaluate_generator(m, g, {s.y, s.z, s.u});
    return solve_exogenous(m.tree, m.C, m.X, m.J, xi, f);
}

inline double max_abs_change(const LadlagProcess& a, const LadlagProcess& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.at.size(); ++i)
        d = std::max({d, std::abs(a.at[i] - b.at[i]), std::abs(a.post[i] - b.post[i])});
    return d;
}

// Runs the iteration without raising on non-convergence. The caller supplies
// the variant; the constant and the verified flag are filled from `kind`.
inline PicardResult picard_iterate(const Model& m, const GeneratorSpec& g, const LadlagProcess& xi,
                                   EquationKind kind, const PicardOptions& opt) {
    validate_generator(m, g);
    PicardResult res;
    res.clock = generator_clock(m, g);
    auto& tr = res.trace;
    tr.variant = opt.variant == 0 ? auto_variant(g) : opt.variant;
    check_variant(g, tr.variant);
    if (!(opt.beta_hat > 0.0)) throw Error(Errc::NonpositiveBeta, "beta_hat must be positive");
    tr.beta_hat = opt.beta_hat;
    tr.phi = opt.phi.value_or(res.clock.phi_eff);
    if (res.clock.phi_eff > tr.phi + 1e-12)
        throw Error(Errc::PhiExceeded, "jump of the clock " + std::to_string(res.clock.phi_eff) +
                                           " exceeds the declared bound " + std::to_string(tr.phi));
    tr.constant = constant_value(variant_constant(kind, tr.variant), tr.beta_hat, tr.phi);
    tr.verified = tr.constant < 1.0;
    if (!tr.verified && !opt.force)
        throw Error(Errc::NotContractive, to_string(variant_constant(kind, tr.variant)) + " = " +
                                              std::to_string(tr.constant) + " at beta " + std::to_string(tr.beta_hat));

    PicardState prev = initial_state(m, opt);
    const double target = opt.tol * opt.tol;
    for (int it = 1; it <= opt.max_iter; ++it) {
        res.solution = picard_step(m, g, xi, prev);
        PicardState next = state_of(res.solution);
        const auto d = difference_norms(m, res.clock, tr.beta_hat, tr.variant, next, prev);
        if (!tr.differences.empty() && tr.differences.back().combined > 0.0)
            tr.ratios.push_back(d.combined / tr.differences.back().combined);
        tr.differences.push_back(d);
        tr.iterations = it;
        prev = std::move(next);
        if (!std::isfinite(d.combined)) break;
        if (d.combined < target) {
            tr.converged = true;
            break;
        }
    }
    if (tr.converged && opt.polish) {
        double last = std::numeric_limits<double>::infinity();
        for (int k = 0; k < 50; ++k) {
            auto sol = picard_step(m, g, xi, prev);
            const double change = max_abs_change(sol.y, prev.y);
            res.solution = std::move(sol);
            prev = state_of(res.solution);
            ++tr.polish_steps;
            if (change < 1e-15 || change >= last) break;
            last = change;
        }
    }
    return res;
}

inline PicardResult finish(PicardResult res) {
    if (!res.trace.converged)
        throw Error(Errc::MaxIterExceeded, "no convergence after " + std::to_string(res.trace.iterations) +
                                               " iterations (last ratio " +
                                               (res.trace.ratios.empty() ? std::string("n/a")
                                                                         : std::to_string(res.trace.ratios.back())) +
                                               ")");
    return res;
}

inline LadlagProcess bsde_obstacle(const EventTree& tree, std::span<const double> xi_terminal) {
    if (static_cast<int>(xi_terminal.size()) != tree.size())
        throw Error(Errc::ShapeMismatch, "terminal values are node-indexed");
    LadlagProcess xi = LadlagProcess::constant(tree, kNegInf);
    for (int leaf : tree.leaves()) {
        xi.at[static_cast<std::size_t>(leaf)] = xi_terminal[static_cast<std::size_t>(leaf)];
        xi.post[static_cast<std::size_t>(leaf)] = xi_terminal[static_cast<std::size_t>(leaf)];
    }
    return xi;
}

inline PicardResult picard_bsde(const Model& m, const GeneratorSpec& g, std::span<const double> xi_terminal,
                                const PicardOptions& opt = {}) {
    return finish(picard_iterate(m, g, bsde_obstacle(m.tree, xi_terminal), EquationKind::Bsde, opt));
}

inline PicardResult picard_reflected(const Model& m, const GeneratorSpec& g, const LadlagProcess& xi,
                                     const PicardOptions& opt = {}) {
    return finish(picard_iterate(m, g, xi, EquationKind::Reflected, opt));
}

// Largest pathwise defect of the backward dynamics with the generator
// re-evaluated on the solution itself.
inline double residual(const Model& m, const GeneratorSpec& g, const ReflectedSolution& sol, const LadlagProcess& xi) {
    const auto f = evaluate_generator(m, g, {sol.y, sol.mart.z, sol.mart.u});
    return equation_defect(m.tree, m.C, m.X, m.J, sol, f, xi);
}

struct DivergenceProbe {
    PicardTrace trace;
    double alpha_jump = 0.0;
    bool not_contractive = false;  // every ratio after the warm-up exceeds 1
};

// Binary tree, p = 1/2, one mark on the first branch, C a unit jump per step,
// xi_T the number of marks seen. The generator b y_- has alpha^2 dC = |b| and
// saturates its Lipschitz bound; the Picard map is then triangular with
// diagonal b, so squared differences grow like b^2 once the lower part has
// propagated through the tree.
// Large enough that M~_3 < 1 for every alpha_jump < 1 seen in practice.
inline constexpr double kProbeBeta = 100.0;

inline DivergenceProbe divergence_probe(double alpha_jump, int periods) {
    if (!(alpha_jump > 0.0) || periods < 1) throw Error(Errc::OutOfDomain, "alpha_jump > 0 and periods >= 1 needed");
    TimeGrid grid;
    for (int k = 0; k <= periods; ++k) grid.instants.push_back(k);
    Model m{build_tree(grid, std::vector<int>(static_cast<std::size_t>(periods), 2),
                           std::vector<std::vector<double>>(static_cast<std::size_t>(periods), {0.5, 0.5})), {}, {}, {}};
    const auto N = static_cast<std::size_t>(m.tree.size());
    m.C.cont.assign(N, 0.0);
    m.C.jump.assign(N, 0.0);
    for (int n = 0; n < m.tree.size(); ++n)
        if (!m.tree.terminal(n)) m.C.jump[static_cast<std::size_t>(n)] = 1.0;
    m.X = make_driver(m.tree, m.C, 0, {});
    std::vector<int> marks(N, -1);
    std::vector<double> count(N, 0.0);
    for (int ch = 1; ch < m.tree.size(); ++ch) {
        const bool first = ch == m.tree.node(m.tree.parent(ch)).first_child;
        marks[static_cast<std::size_t>(ch)] = first ? 0 : -1;
        count[static_cast<std::size_t>(ch)] = count[static_cast<std::size_t>(m.tree.parent(ch))] + (first ? 1.0 : 0.0);
    }
    m.J = make_marks(m.tree, m.C, 1, marks);

    GeneratorSpec g;
    g.kind = GeneratorKind::Affine;
    g.f0 = LadlagProcess::constant(m.tree, 0.0);
    g.b = alpha_jump;

    PicardOptions opt;
    opt.variant = 3;
    opt.beta_hat = kProbeBeta;
    opt.force = true;
    opt.polish = false;
    opt.max_iter = 200;
    DivergenceProbe out;
    out.alpha_jump = alpha_jump;
    out.trace = picard_iterate(m, g, bsde_obstacle(m.tree, count), EquationKind::Bsde, opt).trace;
    const auto& r = out.trace.ratios;
    out.not_contractive = static_cast<int>(r.size()) > periods &&
                          std::all_of(r.begin() + periods, r.end(), [](double v) { return v > 1.0; });
    return out;
}

}  // namespace ladlag
