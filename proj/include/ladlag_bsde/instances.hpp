#pragma once

// Reproducible random instances satisfying the standing data assumptions by
// construction: X has zero conditional mean and is uncorrelated with every
// mark indicator (it is centered inside each mark group), and the jump part
// of the clock stays below the requested bound.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "calculus.hpp"
#include "constants.hpp"
#include "errors.hpp"
#include "generator.hpp"
#include "lattice.hpp"
#include "weights.hpp"

namespace ladlag {

inline constexpr int kMaxInstanceNodes = 20000;

struct InstanceSpec {
    int periods_min = 2, periods_max = 3;
    int branch_min = 2, branch_max = 3;
    int x_dim = 1;
    int marks = 2;
    double phi = 0.3;                 // target bound on the jump of the clock
    double cont_max = 0.0;            // interval mass per step drawn from [0, cont_max]
    GeneratorKind kind = GeneratorKind::Lipschitz;
    bool use_y = true;
    bool use_y_minus = false;
    bool use_z = true;
    bool use_u = true;
    double alpha2_floor = 0.2;
    bool reflected = false;           // finite obstacle before T, else -inf
    double neg_inf_share = 0.2;       // share of obstacle slots set to -inf
    ConstantId constant = ConstantId::Mt2;
    double constant_level = 0.9;      // beta_hat is chosen with constant(beta_hat) <= level
};

struct Instance {
    Model model;
    GeneratorSpec gen;
    LadlagProcess xi;
    double phi = 0.0;
    double beta_hat = 1.0;
    std::uint64_t seed = 0;

    std::vector<double> xi_terminal() const {
        std::vector<double> out(static_cast<std::size_t>(model.tree.size()), 0.0);
        for (int leaf : model.tree.leaves()) out[static_cast<std::size_t>(leaf)] = xi.at[static_cast<std::size_t>(leaf)];
        return out;
    }
};

inline EventTree random_tree(std::mt19937_64& rng, const InstanceSpec& s) {
    std::uniform_int_distribution<int> periods(s.periods_min, s.periods_max);
    std::uniform_int_distribution<int> branch(s.branch_min, s.branch_max);
    std::uniform_real_distribution<double> weight(0.2, 1.0);
    const int N = periods(rng);
    TimeGrid grid;
    for (int k = 0; k <= N; ++k) grid.instants.push_back(static_cast<double>(k));
    std::vector<int> b(static_cast<std::size_t>(N));
    long nodes = 1, width = 1;
    for (auto& v : b) {
        v = branch(rng);
        width *= v;
        nodes += width;
    }
    if (nodes > kMaxInstanceNodes) throw Error(Errc::SpecInfeasible, "tree exceeds the node cap");
    std::vector<std::vector<double>> probs;
    for (long k = 0, w = 1; k < N; w *= b[static_cast<std::size_t>(k)], ++k)
        for (long j = 0; j < w; ++j) {
            std::vector<double> p(static_cast<std::size_t>(b[static_cast<std::size_t>(k)]));
            double sum = 0.0;
            for (auto& v : p) sum += (v = weight(rng));
            for (auto& v : p) v /= sum;
            // Renormalize the last entry so the row sums to 1 in floating point.
            double head = 0.0;
            for (std::size_t i = 0; i + 1 < p.size(); ++i) head += p[i];
            p.back() = 1.0 - head;
            probs.push_back(std::move(p));
        }
    return build_tree(grid, b, probs);
}

inline Instance random_instance(std::uint64_t seed, const InstanceSpec& s) {
    if (s.periods_min < 1 || s.periods_max < s.periods_min || s.branch_min < 1 || s.branch_max < s.branch_min ||
        s.x_dim < 0 || s.marks < 0 || !(s.phi >= 0.0) || !(s.phi < 1.0) || !(s.cont_max >= 0.0))
        throw Error(Errc::SpecInfeasible, "instance spec out of range");
    if (s.phi == 0.0 && !(s.cont_max > 0.0))
        throw Error(Errc::SpecInfeasible, "phi = 0 leaves no mass for C");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(-1.0, 1.0), u01(0.0, 1.0);
    Instance inst;
    inst.seed = seed;
    inst.phi = s.phi;
    Model& m = inst.model;
    m.tree = random_tree(rng, s);
    const auto& tree = m.tree;
    const auto size = static_cast<std::size_t>(tree.size());
    const bool jumps = s.phi > 0.0;

    m.C.cont.assign(size, 0.0);
    m.C.jump.assign(size, 0.0);
    std::vector<int> marks(size, -1);
    std::vector<double> dx(size * static_cast<std::size_t>(s.x_dim), 0.0);
    for (int n = 0; n < tree.size(); ++n) {
        if (tree.terminal(n)) continue;
        const auto i = static_cast<std::size_t>(n);
        if (s.cont_max > 0.0) m.C.cont[i] = s.cont_max * (0.25 + 0.75 * u01(rng));
        if (!jumps) continue;
        m.C.jump[i] = 0.2 + 0.8 * u01(rng);
        std::uniform_int_distribution<int> mark(-1, s.marks - 1);
        for (int ch : tree.children(n)) marks[static_cast<std::size_t>(ch)] = s.marks > 0 ? mark(rng) : -1;
        // X is centered inside each mark group, hence orthogonal to the marks.
        for (int d = 0; d < s.x_dim; ++d) {
            for (int ch : tree.children(n)) dx[static_cast<std::size_t>(ch * s.x_dim + d)] = unif(rng);
            for (int e = -1; e < s.marks; ++e) {
                double mass = 0.0, mean = 0.0;
                for (int ch : tree.children(n))
                    if (marks[static_cast<std::size_t>(ch)] == e) {
                        mass += tree.prob(ch);
                        mean += tree.prob(ch) * dx[static_cast<std::size_t>(ch * s.x_dim + d)];
                    }
                if (mass > 0.0)
                    for (int ch : tree.children(n))
                        if (marks[static_cast<std::size_t>(ch)] == e) dx[static_cast<std::size_t>(ch * s.x_dim + d)] -= mean / mass;
            }
        }
    }

    GeneratorSpec& g = inst.gen;
    g.kind = s.kind;
    g.alpha2_floor = s.alpha2_floor;
    g.f0 = LadlagProcess::constant(tree, 0.0);
    for (auto& v : g.f0.at) v = unif(rng);
    for (auto& v : g.f0.post) v = unif(rng);
    if (s.kind != GeneratorKind::Zero) {
        g.a = s.use_y ? unif(rng) : 0.0;
        g.b = s.use_y_minus ? unif(rng) : 0.0;
        g.h.assign(static_cast<std::size_t>(s.x_dim), 0.0);
        g.g.assign(static_cast<std::size_t>(s.marks), 0.0);
        if (s.use_z)
            for (auto& v : g.h) v = unif(rng);
        if (s.use_u)
            for (auto& v : g.g) v = unif(rng);
    }

    // Shrink jump mass and X together per parent: every part of the clock jump
    // scales at least linearly with the factor, so one pass suffices.
    auto rebuild = [&] {
        m.X = make_driver(tree, m.C, s.x_dim, dx);
        m.J = make_marks(tree, m.C, s.marks, marks);
    };
    rebuild();
    if (jumps) {
        const auto A = generator_clock(m, g);
        for (int n = 0; n < tree.size(); ++n) {
            if (tree.terminal(n)) continue;
            const auto i = static_cast<std::size_t>(n);
            const double da = A.a_jump[i];
            if (da <= s.phi) continue;
            const double t = s.phi / da;
            m.C.jump[i] *= t;
            for (int ch : tree.children(n))
                for (int d = 0; d < s.x_dim; ++d) dx[static_cast<std::size_t>(ch * s.x_dim + d)] *= t;
        }
        rebuild();
    }
    const auto A = generator_clock(m, g);
    if (A.phi_eff > s.phi * (1.0 + 1e-12))
        throw Error(Errc::SpecInfeasible, "could not bring the clock jump below phi");

    inst.xi = LadlagProcess::constant(tree, kNegInf);
    for (int n = 0; n < tree.size(); ++n) {
        const auto i = static_cast<std::size_t>(n);
        if (tree.terminal(n)) {
            inst.xi.at[i] = inst.xi.post[i] = unif(rng);
            continue;
        }
        if (!s.reflected) continue;
        const double a = unif(rng), b = unif(rng);
        if (u01(rng) >= s.neg_inf_share) inst.xi.at[i] = a;
        if (u01(rng) >= s.neg_inf_share) inst.xi.post[i] = b;
    }

    const auto th = threshold_beta(s.constant, s.phi, s.constant_level);
    if (!th.beta_star) throw Error(Errc::SpecInfeasible, "no beta reaches the constant level: " + th.diagnostic);
    inst.beta_hat = *th.beta_star;
    return inst;
}

}  // namespace ladlag
