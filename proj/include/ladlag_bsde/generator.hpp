#pragma once

// Generators f(y, y_-, z, u) on the lattice and their Lipschitz data.
//
// On an open interval C has no martingale noise, so f there may depend on
// (y, y_-) only: both equal the post value. At an instant t_{k+1} the generator
// sees y = Y_at(child), y_- = Y_post(parent), z and u of the parent step.
//
// The u-dependence is linear, through effective slopes that vanish on null
// payload directions of the triple norm (unused marks, and constants when the
// marks exhaust the step). The z-dependence goes through c z for the same
// reason.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "calculus.hpp"
#include "errors.hpp"
#include "lattice.hpp"
#include "weights.hpp"

namespace ladlag {

struct Model {
    EventTree tree;
    Integrator C;
    DriverX X;
    MarkedJumps J;
};

enum class GeneratorKind { Zero, Affine, Lipschitz };

inline std::string to_string(GeneratorKind k) {
    switch (k) {
        case GeneratorKind::Zero: return "zero";
        case GeneratorKind::Affine: return "affine";
        case GeneratorKind::Lipschitz: return "lipschitz";
    }
    return "?";
}

// f = f0 + a phi(y) + b phi(y_-) + psi(h^T c z) + g_eff^T u with phi = psi =
// identity (Affine) or phi = sin, psi = tanh (Lipschitz). Zero keeps only f0.
struct GeneratorSpec {
    GeneratorKind kind = GeneratorKind::Zero;
    LadlagProcess f0;          // post: per parent interval value; at: per child instant value
    double a = 0.0;            // y coefficient
    double b = 0.0;            // y_- coefficient
    std::vector<double> h;     // z loading, length m
    std::vector<double> g;     // u slopes, length |E|
    double alpha2_floor = 0.0; // lower bound imposed on alpha^2

    bool uses_y() const { return kind != GeneratorKind::Zero && a != 0.0; }
    bool uses_y_minus() const { return kind != GeneratorKind::Zero && b != 0.0; }
    bool uses_z() const {
        return kind != GeneratorKind::Zero && std::any_of(h.begin(), h.end(), [](double v) { return v != 0.0; });
    }
    bool uses_u() const {
        return kind != GeneratorKind::Zero && std::any_of(g.begin(), g.end(), [](double v) { return v != 0.0; });
    }
};

inline GeneratorSpec zero_generator(const EventTree& tree, double alpha2_floor) {
    GeneratorSpec s;
    s.f0 = LadlagProcess::constant(tree, 0.0);
    s.alpha2_floor = alpha2_floor;
    return s;
}

inline void validate_generator(const Model& m, const GeneratorSpec& s) {
    const auto size = static_cast<std::size_t>(m.tree.size());
    if (s.f0.at.size() != size || s.f0.post.size() != size)
        throw Error(Errc::ShapeMismatch, "f0 must cover the tree");
    if (s.kind != GeneratorKind::Zero) {
        if (!s.h.empty() && static_cast<int>(s.h.size()) != m.X.dim)
            throw Error(Errc::DimensionMismatch, "z loading differs from the driver dimension");
        if (!s.g.empty() && static_cast<int>(s.g.size()) != m.J.count)
            throw Error(Errc::MarkAlphabetMismatch, "u slopes differ from the mark alphabet");
    }
}

// Slopes used at parent n: restricted to marks that can occur, and centered
// when they occur surely, so they lie in the range of the mark Gram matrix.
inline Eigen::VectorXd effective_slopes(const Model& m, const GeneratorSpec& s, int n) {
    const int E = m.J.count;
    Eigen::VectorXd g = Eigen::VectorXd::Zero(E);
    if (s.g.empty() || s.kind == GeneratorKind::Zero || !(m.C.jump[static_cast<std::size_t>(n)] > 0.0)) return g;
    int support = 0;
    double sum = 0.0;
    for (int e = 0; e < E; ++e)
        if (m.J.prob(n, e) > 0.0) {
            g(e) = s.g[static_cast<std::size_t>(e)];
            sum += g(e);
            ++support;
        }
    if (support > 0 && std::abs(m.J.zeta[static_cast<std::size_t>(n)] - 1.0) <= 1e-12)
        for (int e = 0; e < E; ++e)
            if (m.J.prob(n, e) > 0.0) g(e) -= sum / support;
    return g;
}

// Minimal-norm rho with Q rho = g_eff, so that g_eff^T du = <rho, du> in the
// triple-norm polarization.
inline Eigen::VectorXd slope_payload(const Model& m, const GeneratorSpec& s, int n) {
    const Eigen::VectorXd g = effective_slopes(m, s, n);
    if (g.size() == 0 || g.isZero(0.0)) return Eigen::VectorXd::Zero(g.size());
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod;
    cod.setThreshold(1e-12);
    cod.compute(mark_gram(m.J, m.C, n));
    return cod.solve(g);
}

inline double z_loading(const Model& m, const GeneratorSpec& s, int n, std::span<const double> z) {
    if (s.h.empty() || m.X.dim == 0) return 0.0;
    Eigen::Map<const Eigen::VectorXd> hv(s.h.data(), m.X.dim), zv(z.data(), m.X.dim);
    return hv.dot(m.X.c(n) * zv);
}

struct GeneratorArgs {
    const LadlagProcess& y;
    const NodeVectors& z;
    const NodeVectors& u;
};

inline LadlagProcess evaluate_generator(const Model& m, const GeneratorSpec& s, const GeneratorArgs& args) {
    validate_generator(m, s);
    const auto& tree = m.tree;
    LadlagProcess f = LadlagProcess::constant(tree, 0.0);
    const bool lip = s.kind == GeneratorKind::Lipschitz;
    auto phi = [lip](double v) { return lip ? std::sin(v) : v; };
    auto psi = [lip](double v) { return lip ? std::tanh(v) : v; };
    for (int n = 0; n < tree.size(); ++n) {
        if (tree.terminal(n)) continue;
        const auto i = static_cast<std::size_t>(n);
        if (s.kind == GeneratorKind::Zero) {
            f.post[i] = s.f0.post[i];
            for (int ch : tree.children(n)) f.at[static_cast<std::size_t>(ch)] = s.f0.at[static_cast<std::size_t>(ch)];
            continue;
        }
        const double ym = args.y.post[i];
        f.post[i] = s.f0.post[i] + s.a * phi(ym) + s.b * phi(ym);
        double zu = 0.0;
        if (m.C.jump[i] > 0.0) {
            zu = psi(z_loading(m, s, n, args.z.row(n)));
            const Eigen::VectorXd g = effective_slopes(m, s, n);
            for (int e = 0; e < m.J.count; ++e) zu += g(e) * args.u.row(n)[static_cast<std::size_t>(e)];
        }
        for (int ch : tree.children(n)) {
            const auto c = static_cast<std::size_t>(ch);
            f.at[c] = s.f0.at[c] + s.a * phi(args.y.at[c]) + s.b * phi(ym) + zu;
        }
    }
    return f;
}

// f(0, 0, 0, 0) slot-wise.
inline LadlagProcess generator_at_zero(const Model& m, const GeneratorSpec& s) {
    const auto y = LadlagProcess::constant(m.tree, 0.0);
    const auto z = NodeVectors::zeros(m.tree, m.X.dim);
    const auto u = NodeVectors::zeros(m.tree, m.J.count);
    return evaluate_generator(m, s, {y, z, u});
}

// Coefficients with |df|^2 <= r dy^2 + rbar dy_-^2 + theta_x |c^{1/2} dz|^2 +
// theta_mu |||du|||^2: each of the n active terms is bounded by its own
// Lipschitz constant and |sum of n terms|^2 <= n sum of squares.
inline LipschitzCoefficients lipschitz_coefficients(const Model& m, const GeneratorSpec& s) {
    const auto& tree = m.tree;
    const auto size = static_cast<std::size_t>(tree.size());
    LipschitzCoefficients k{std::vector<double>(size, 0.0), std::vector<double>(size, 0.0),
                            std::vector<double>(size, 0.0), std::vector<double>(size, 0.0)};
    for (int n = 0; n < tree.size(); ++n) {
        if (tree.terminal(n)) continue;
        const auto i = static_cast<std::size_t>(n);
        double tx = 0.0, tm = 0.0;
        if (s.kind != GeneratorKind::Zero && m.C.jump[i] > 0.0) {
            if (!s.h.empty() && m.X.dim > 0) {
                Eigen::Map<const Eigen::VectorXd> hv(s.h.data(), m.X.dim);
                tx = hv.dot(m.X.c(n) * hv);
            }
            const Eigen::VectorXd g = effective_slopes(m, s, n);
            if (g.size() > 0 && !g.isZero(0.0)) tm = g.dot(slope_payload(m, s, n));
        }
        const int active = (s.uses_y() ? 1 : 0) + (s.uses_y_minus() ? 1 : 0) + (tx > 0.0 ? 1 : 0) + (tm > 0.0 ? 1 : 0);
        const double mult = std::max(1, active);
        k.r[i] = s.uses_y() ? mult * s.a * s.a : 0.0;
        k.rbar[i] = s.uses_y_minus() ? mult * s.b * s.b : 0.0;
        k.theta_x[i] = mult * tx;
        k.theta_mu[i] = mult * tm;
        const double a2 = std::max({std::sqrt(k.r[i]), std::sqrt(k.rbar[i]), k.theta_x[i], k.theta_mu[i]});
        if (a2 < s.alpha2_floor) k.r[i] = s.alpha2_floor * s.alpha2_floor;
    }
    return k;
}

inline ClockA generator_clock(const Model& m, const GeneratorSpec& s) {
    return clock_from_lipschitz(m.tree, m.C, lipschitz_coefficients(m, s));
}

// Randomized check of the declared Lipschitz inequality on sampled argument
// pairs; returns the largest excess of |df|^2 over the bound.
inline double lipschitz_audit(const Model& m, const GeneratorSpec& s, int samples, std::uint64_t seed) {
    const auto k = lipschitz_coefficients(m, s);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(-3.0, 3.0);
    const auto& tree = m.tree;
    double worst = 0.0;
    auto random_args = [&](LadlagProcess& y, NodeVectors& z, NodeVectors& u) {
        for (auto& v : y.at) v = unif(rng);
        for (auto& v : y.post) v = unif(rng);
        for (auto& v : z.values) v = unif(rng);
        for (auto& v : u.values) v = unif(rng);
    };
    for (int sample = 0; sample < samples; ++sample) {
        auto y1 = LadlagProcess::constant(tree, 0.0), y2 = y1;
        auto z1 = NodeVectors::zeros(tree, m.X.dim), z2 = z1;
        auto u1 = NodeVectors::zeros(tree, m.J.count), u2 = u1;
        random_args(y1, z1, u1);
        random_args(y2, z2, u2);
        const auto f1 = evaluate_generator(m, s, {y1, z1, u1});
        const auto f2 = evaluate_generator(m, s, {y2, z2, u2});
        for (int n = 0; n < tree.size(); ++n) {
            if (tree.terminal(n)) continue;
            const auto i = static_cast<std::size_t>(n);
            std::vector<double> du(static_cast<std::size_t>(m.J.count));
            for (int e = 0; e < m.J.count; ++e) du[static_cast<std::size_t>(e)] = u1.row(n)[static_cast<std::size_t>(e)] - u2.row(n)[static_cast<std::size_t>(e)];
            double zq = 0.0;
            if (m.X.dim > 0) {
                Eigen::VectorXd dz(m.X.dim);
                for (int d = 0; d < m.X.dim; ++d) dz(d) = z1.row(n)[static_cast<std::size_t>(d)] - z2.row(n)[static_cast<std::size_t>(d)];
                zq = dz.dot(m.X.c(n) * dz);
            }
            const double uq = m.J.count > 0 ? triple_norm_sq(m.J, m.C, n, du) : 0.0;
            const double dym = y1.post[i] - y2.post[i];
            // Interval slot: y and y_- are both the post value.
            const double dfp = f1.post[i] - f2.post[i];
            worst = std::max(worst, dfp * dfp - (k.r[i] + k.rbar[i]) * dym * dym);
            for (int ch : tree.children(n)) {
                const auto c = static_cast<std::size_t>(ch);
                const double dy = y1.at[c] - y2.at[c];
                const double df = f1.at[c] - f2.at[c];
                const double bound = k.r[i] * dy * dy + k.rbar[i] * dym * dym + k.theta_x[i] * zq + k.theta_mu[i] * uq;
                worst = std::max(worst, df * df - bound);
            }
        }
    }
    return worst;
}

}  // namespace ladlag
