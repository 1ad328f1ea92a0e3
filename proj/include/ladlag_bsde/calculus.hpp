#pragma once

// Integrator C, driver martingale X, marked jumps with compensator K dC, the
// three integrals, and the orthogonal martingale decomposition.
//
// Per-step data is indexed by the parent node of the step. The covariation
// of X and the mark compensator only charge instants (jump part of C); the
// open intervals carry continuous mass of C but no martingale noise.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "lattice.hpp"

namespace ladlag {

struct Integrator {
    std::vector<double> cont;  // mass on (t_k, t_{k+1}), per parent
    std::vector<double> jump;  // mass at t_{k+1}, per parent

    double total(int n) const {
        return cont[static_cast<std::size_t>(n)] + jump[static_cast<std::size_t>(n)];
    }
};

inline void validate_integrator(const EventTree& tree, const Integrator& C) {
    const auto N = static_cast<std::size_t>(tree.size());
    if (C.cont.size() != N || C.jump.size() != N)
        throw Error(Errc::ShapeMismatch, "integrator needs one cont/jump pair per node");
    for (std::size_t n = 0; n < N; ++n) {
        if (!(C.cont[n] >= 0.0) || !(C.jump[n] >= 0.0))
            throw Error(Errc::ShapeMismatch, "integrator increments must be non-negative");
        if (tree.terminal(static_cast<int>(n)) && (C.cont[n] != 0.0 || C.jump[n] != 0.0))
            throw Error(Errc::ShapeMismatch, "terminal nodes carry no integrator mass");
    }
}

// Row-major per-node vector values: values[n * dim + i].
struct NodeVectors {
    int dim = 0;
    std::vector<double> values;

    static NodeVectors zeros(const EventTree& tree, int dim) {
        return {dim, std::vector<double>(static_cast<std::size_t>(tree.size() * dim), 0.0)};
    }
    std::span<double> row(int n) {
        return {values.data() + static_cast<std::ptrdiff_t>(n) * dim, static_cast<std::size_t>(dim)};
    }
    std::span<const double> row(int n) const {
        return {values.data() + static_cast<std::ptrdiff_t>(n) * dim, static_cast<std::size_t>(dim)};
    }
};

struct DriverX {
    int dim = 0;
    NodeVectors increments;          // increment on the edge into each node; root row is 0
    std::vector<double> density;     // c per parent, dim x dim row-major, w.r.t. jump part of C

    std::span<const double> dx(int child) const { return increments.row(child); }
    Eigen::Map<const Eigen::MatrixXd> c(int n) const {
        return {density.data() + static_cast<std::ptrdiff_t>(n) * dim * dim, dim, dim};
    }
};

inline DriverX make_driver(const EventTree& tree, const Integrator& C, int dim,
                           std::vector<double> increments) {
    if (dim < 0 || static_cast<int>(increments.size()) != tree.size() * dim)
        throw Error(Errc::DimensionMismatch, "driver increments need one row of size m per node");
    DriverX X;
    X.dim = dim;
    X.increments = {dim, std::move(increments)};
    X.density.assign(static_cast<std::size_t>(tree.size() * dim * dim), 0.0);
    for (int i = 0; i < dim; ++i) X.increments.row(0)[static_cast<std::size_t>(i)] = 0.0;
    for (int n = 0; n < tree.size(); ++n) {
        if (tree.terminal(n)) continue;
        Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(dim, dim);
        Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
        for (int ch : tree.children(n)) {
            Eigen::Map<const Eigen::VectorXd> d(X.increments.row(ch).data(), dim);
            mean += tree.prob(ch) * d;
            cov += tree.prob(ch) * d * d.transpose();
        }
        if (dim > 0 && mean.cwiseAbs().maxCoeff() > 1e-12)
            throw Error(Errc::DriverNotMartingale,
                        "E[dX | node " + std::to_string(n) + "] is not zero");
        const double dc = C.jump[static_cast<std::size_t>(n)];
        if (dc > 0.0) {
            Eigen::Map<Eigen::MatrixXd>(X.density.data() + static_cast<std::ptrdiff_t>(n) * dim * dim, dim, dim) =
                cov / dc;
        } else if (dim > 0 && cov.cwiseAbs().maxCoeff() > 0.0) {
            throw Error(Errc::DriverNotDominated,
                        "X moves after node " + std::to_string(n) + " where C has no jump");
        }
    }
    return X;
}

struct MarkedJumps {
    int count = 0;                 // size of the mark alphabet
    std::vector<int> mark;         // mark on the edge into each node, -1 for none
    std::vector<double> p;         // P[mark e | parent], row-major per parent
    std::vector<double> zeta;      // sum_e p_e per parent

    double prob(int n, int e) const { return p[static_cast<std::size_t>(n * count + e)]; }
    double kernel(const Integrator& C, int n, int e) const {
        const double dc = C.jump[static_cast<std::size_t>(n)];
        return dc > 0.0 ? prob(n, e) / dc : 0.0;
    }
};

inline MarkedJumps make_marks(const EventTree& tree, const Integrator& C, int count,
                              std::vector<int> child_marks) {
    if (count < 0 || static_cast<int>(child_marks.size()) != tree.size())
        throw Error(Errc::ShapeMismatch, "marks need one entry per node");
    MarkedJumps J;
    J.count = count;
    J.mark = std::move(child_marks);
    J.mark[0] = -1;
    J.p.assign(static_cast<std::size_t>(tree.size() * count), 0.0);
    J.zeta.assign(static_cast<std::size_t>(tree.size()), 0.0);
    for (int n = 0; n < tree.size(); ++n) {
        if (tree.terminal(n)) continue;
        for (int ch : tree.children(n)) {
            const int e = J.mark[static_cast<std::size_t>(ch)];
            if (e < -1 || e >= count)
                throw Error(Errc::MarkOutsideAlphabet,
                            "mark " + std::to_string(e) + " on node " + std::to_string(ch));
            if (e < 0) continue;
            if (!(C.jump[static_cast<std::size_t>(n)] > 0.0))
                throw Error(Errc::DriverNotDominated,
                            "mark after node " + std::to_string(n) + " where C has no jump");
            J.p[static_cast<std::size_t>(n * count + e)] += tree.prob(ch);
            J.zeta[static_cast<std::size_t>(n)] += tree.prob(ch);
        }
    }
    return J;
}

// Gram matrix of the triple norm at a parent: Q = (diag(p) - p p^T) / dC, so
// that |||u|||^2 = u^T Q u. Zero where C has no jump.
inline Eigen::MatrixXd mark_gram(const MarkedJumps& J, const Integrator& C, int n) {
    const int E = J.count;
    Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(E, E);
    const double dc = C.jump[static_cast<std::size_t>(n)];
    if (!(dc > 0.0)) return Q;
    Eigen::Map<const Eigen::VectorXd> p(J.p.data() + static_cast<std::ptrdiff_t>(n) * E, E);
    Q = p.asDiagonal();
    Q -= p * p.transpose();
    return Q / dc;
}

// Polarization of the triple norm: the density of <rho * mu~, du * mu~> w.r.t. C.
inline double jump_bilinear(const MarkedJumps& J, const Integrator& C, int n,
                            std::span<const double> rho, std::span<const double> du) {
    if (static_cast<int>(rho.size()) != J.count || static_cast<int>(du.size()) != J.count)
        throw Error(Errc::MarkAlphabetMismatch, "payload length differs from the mark alphabet");
    const double dc = C.jump[static_cast<std::size_t>(n)];
    if (!(dc > 0.0)) return 0.0;
    double rho_hat = 0.0, du_hat = 0.0, rk = 0.0, uk = 0.0, cross = 0.0;
    for (int e = 0; e < J.count; ++e) {
        const double pe = J.prob(n, e);
        rho_hat += rho[static_cast<std::size_t>(e)] * pe;
        du_hat += du[static_cast<std::size_t>(e)] * pe;
    }
    for (int e = 0; e < J.count; ++e) {
        const double k = J.kernel(C, n, e);
        cross += (rho[static_cast<std::size_t>(e)] - rho_hat) * (du[static_cast<std::size_t>(e)] - du_hat) * k;
        rk += rho[static_cast<std::size_t>(e)] * k;
        uk += du[static_cast<std::size_t>(e)] * k;
    }
    return cross + (1.0 - J.zeta[static_cast<std::size_t>(n)]) * rk * uk * dc;
}

inline double triple_norm_sq(const MarkedJumps& J, const Integrator& C, int n,
                             std::span<const double> u) {
    return jump_bilinear(J, C, n, u, u);
}

// Compensated increment on the edge into `child`: U(mark) 1{mark} - U_hat.
inline double compensated_increment(const EventTree& tree, const MarkedJumps& J, int child,
                                    std::span<const double> u) {
    const int n = tree.parent(child);
    double u_hat = 0.0;
    for (int e = 0; e < J.count; ++e) u_hat += u[static_cast<std::size_t>(e)] * J.prob(n, e);
    const int m = J.mark[static_cast<std::size_t>(child)];
    return (m >= 0 ? u[static_cast<std::size_t>(m)] : 0.0) - u_hat;
}

// Path integral over (t_from, t_k] for every node at level k >= from_level.
// The integrand's post value at t_j meets cont mass, its at value at t_{j+1}
// meets jump mass. Entries below from_level are NaN.
inline std::vector<double> ls_integral(const EventTree& tree, const Integrator& C,
                                       const LadlagProcess& f, int from_level, int to_level) {
    if (from_level > to_level) throw Error(Errc::WindowInverted, "window (S,T] with S > T");
    if (from_level < 0 || to_level > tree.periods())
        throw Error(Errc::LevelMismatch, "window outside the time grid");
    std::vector<double> out(static_cast<std::size_t>(tree.size()), std::numeric_limits<double>::quiet_NaN());
    for (int n : tree.level_nodes(from_level)) out[static_cast<std::size_t>(n)] = 0.0;
    for (int k = from_level; k < to_level; ++k)
        for (int n : tree.level_nodes(k))
            for (int ch : tree.children(n))
                out[static_cast<std::size_t>(ch)] =
                    out[static_cast<std::size_t>(n)] +
                    f.post[static_cast<std::size_t>(n)] * C.cont[static_cast<std::size_t>(n)] +
                    f.at[static_cast<std::size_t>(ch)] * C.jump[static_cast<std::size_t>(n)];
    return out;
}

inline std::vector<double> ls_integral(const EventTree& tree, const Integrator& C,
                                       const PredictableProcess& f, int from_level, int to_level) {
    LadlagProcess g = LadlagProcess::constant(tree, 0.0);
    for (int n = 0; n < tree.size(); ++n) {
        if (tree.terminal(n)) continue;
        g.post[static_cast<std::size_t>(n)] = f.step[static_cast<std::size_t>(n)];
        for (int ch : tree.children(n)) g.at[static_cast<std::size_t>(ch)] = f.step[static_cast<std::size_t>(n)];
    }
    return ls_integral(tree, C, g, from_level, to_level);
}

// Martingale int Z dX started at 0.
inline std::vector<double> vector_si(const EventTree& tree, const DriverX& X, const NodeVectors& Z) {
    if (Z.dim != X.dim || static_cast<int>(Z.values.size()) != tree.size() * X.dim)
        throw Error(Errc::DimensionMismatch, "integrand dimension differs from the driver");
    std::vector<double> M(static_cast<std::size_t>(tree.size()), 0.0);
    for (int n = 0; n < tree.size(); ++n)
        for (int ch : tree.children(n)) {
            double inc = 0.0;
            for (int i = 0; i < X.dim; ++i)
                inc += Z.row(n)[static_cast<std::size_t>(i)] * X.dx(ch)[static_cast<std::size_t>(i)];
            M[static_cast<std::size_t>(ch)] = M[static_cast<std::size_t>(n)] + inc;
        }
    return M;
}

struct CompensatedIntegral {
    std::vector<double> martingale;     // U * mu~ started at 0
    std::vector<double> density;        // |||U|||^2 per parent
    double max_isometry_defect = 0.0;   // max |E[dU~^2 | parent] - |||U|||^2 dC|
};

inline CompensatedIntegral compensated_jump_integral(const EventTree& tree, const Integrator& C,
                                                     const MarkedJumps& J, const NodeVectors& U) {
    if (U.dim != J.count || static_cast<int>(U.values.size()) != tree.size() * J.count)
        throw Error(Errc::MarkOutsideAlphabet, "payload width differs from the mark alphabet");
    CompensatedIntegral out;
    out.martingale.assign(static_cast<std::size_t>(tree.size()), 0.0);
    out.density.assign(static_cast<std::size_t>(tree.size()), 0.0);
    for (int n = 0; n < tree.size(); ++n) {
        if (tree.terminal(n)) continue;
        double second = 0.0;
        for (int ch : tree.children(n)) {
            const double inc = compensated_increment(tree, J, ch, U.row(n));
            out.martingale[static_cast<std::size_t>(ch)] = out.martingale[static_cast<std::size_t>(n)] + inc;
            second += tree.prob(ch) * inc * inc;
        }
        out.density[static_cast<std::size_t>(n)] = triple_norm_sq(J, C, n, U.row(n));
        out.max_isometry_defect =
            std::max(out.max_isometry_defect,
                     std::abs(second - out.density[static_cast<std::size_t>(n)] * C.jump[static_cast<std::size_t>(n)]));
    }
    return out;
}

struct OrthogonalityReport {
    bool ok = true;
    double max_defect = 0.0;
    std::vector<int> violating_parents;
};

// E[dX^i 1{mark = e} | parent] = 0 for every component, mark and parent.
inline OrthogonalityReport validate_driver_orthogonality(const EventTree& tree, const DriverX& X,
                                                         const MarkedJumps& J, double tol = 1e-12) {
    OrthogonalityReport rep;
    for (int n = 0; n < tree.size(); ++n) {
        if (tree.terminal(n)) continue;
        double worst = 0.0;
        for (int e = 0; e < J.count; ++e) {
            if (J.prob(n, e) == 0.0) continue;
            for (int i = 0; i < X.dim; ++i) {
                double acc = 0.0;
                for (int ch : tree.children(n))
                    if (J.mark[static_cast<std::size_t>(ch)] == e)
                        acc += tree.prob(ch) * X.dx(ch)[static_cast<std::size_t>(i)];
                worst = std::max(worst, std::abs(acc));
            }
        }
        rep.max_defect = std::max(rep.max_defect, worst);
        if (worst > tol) {
            rep.ok = false;
            rep.violating_parents.push_back(n);
        }
    }
    return rep;
}

struct MartingaleDecomposition {
    NodeVectors z;            // per parent, R^m
    NodeVectors u;            // per parent, one payload per mark
    std::vector<double> dn;   // orthogonal remainder on the edge into each node
};

// Increment Z dX + U~ + dN on the edge into `child`.
inline double reconstruct_increment(const EventTree& tree, const DriverX& X, const MarkedJumps& J,
                                    const MartingaleDecomposition& d, int child) {
    const int n = tree.parent(child);
    double inc = d.dn[static_cast<std::size_t>(child)];
    for (int i = 0; i < X.dim; ++i)
        inc += d.z.row(n)[static_cast<std::size_t>(i)] * X.dx(child)[static_cast<std::size_t>(i)];
    return inc + compensated_increment(tree, J, child, d.u.row(n));
}

// Per parent, weighted least squares of the increment vector on
// span{dX^i, 1{mark=e} - p_e}; the residual is dN. Singular Gram matrices are
// resolved by the minimal-norm solution.
inline MartingaleDecomposition orthogonal_decomposition_of_increments(
    const EventTree& tree, const DriverX& X, const MarkedJumps& J, std::span<const double> increments) {
    if (static_cast<int>(increments.size()) != tree.size())
        throw Error(Errc::ShapeMismatch, "increments need one entry per node");
    const auto orth = validate_driver_orthogonality(tree, X, J);
    if (!orth.ok)
        throw Error(Errc::DriverNotOrthogonal,
                    "driver correlated with marks at node " + std::to_string(orth.violating_parents.front()));
    MartingaleDecomposition d{NodeVectors::zeros(tree, X.dim), NodeVectors::zeros(tree, J.count),
                              std::vector<double>(static_cast<std::size_t>(tree.size()), 0.0)};
    const int width = X.dim + J.count;
    for (int n = 0; n < tree.size(); ++n) {
        if (tree.terminal(n)) continue;
        const int rows = tree.node(n).child_count;
        const int first = tree.node(n).first_child;
        Eigen::MatrixXd B(rows, width);
        Eigen::VectorXd y(rows), sw(rows);
        for (int r = 0; r < rows; ++r) {
            const int ch = first + r;
            sw(r) = std::sqrt(tree.prob(ch));
            y(r) = increments[static_cast<std::size_t>(ch)];
            for (int i = 0; i < X.dim; ++i) B(r, i) = X.dx(ch)[static_cast<std::size_t>(i)];
            for (int e = 0; e < J.count; ++e)
                B(r, X.dim + e) = (J.mark[static_cast<std::size_t>(ch)] == e ? 1.0 : 0.0) - J.prob(n, e);
        }
        Eigen::VectorXd coef = Eigen::VectorXd::Zero(width);
        if (width > 0) {
            const Eigen::MatrixXd WB = sw.asDiagonal() * B;
            Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod;
            cod.setThreshold(1e-11);
            cod.compute(WB);
            coef = cod.solve(Eigen::VectorXd(sw.asDiagonal() * y));
        }
        for (int i = 0; i < X.dim; ++i) d.z.row(n)[static_cast<std::size_t>(i)] = coef(i);
        for (int e = 0; e < J.count; ++e) d.u.row(n)[static_cast<std::size_t>(e)] = coef(X.dim + e);
        const Eigen::VectorXd resid = width > 0 ? Eigen::VectorXd(y - B * coef) : y;
        for (int r = 0; r < rows; ++r) d.dn[static_cast<std::size_t>(first + r)] = resid(r);
    }
    return d;
}

inline MartingaleDecomposition orthogonal_decomposition(const EventTree& tree, std::span<const double> M,
                                                        const DriverX& X, const MarkedJumps& J) {
    std::vector<double> inc(static_cast<std::size_t>(tree.size()), 0.0);
    for (int ch = 1; ch < tree.size(); ++ch)
        inc[static_cast<std::size_t>(ch)] = M[static_cast<std::size_t>(ch)] - M[static_cast<std::size_t>(tree.parent(ch))];
    return orthogonal_decomposition_of_increments(tree, X, J, inc);
}

struct DecompositionResiduals {
    double reconstruction = 0.0;   // |dM - (Z dX + U~ + dN)|
    double n_vs_x = 0.0;           // |E[dN dX^i | parent]|
    double n_vs_marks = 0.0;       // |E[dN (1{mark=e} - p_e) | parent]|
    double n_mean = 0.0;           // |E[dN | parent]|
};

inline DecompositionResiduals decomposition_residuals(const EventTree& tree, const DriverX& X,
                                                      const MarkedJumps& J, const MartingaleDecomposition& d,
                                                      std::span<const double> increments) {
    DecompositionResiduals r;
    for (int n = 0; n < tree.size(); ++n) {
        if (tree.terminal(n)) continue;
        double mean = 0.0;
        std::vector<double> nx(static_cast<std::size_t>(X.dim), 0.0), nm(static_cast<std::size_t>(J.count), 0.0);
        for (int ch : tree.children(n)) {
            const double q = tree.prob(ch);
            const double dn = d.dn[static_cast<std::size_t>(ch)];
            r.reconstruction = std::max(
                r.reconstruction,
                std::abs(increments[static_cast<std::size_t>(ch)] - reconstruct_increment(tree, X, J, d, ch)));
            mean += q * dn;
            for (int i = 0; i < X.dim; ++i) nx[static_cast<std::size_t>(i)] += q * dn * X.dx(ch)[static_cast<std::size_t>(i)];
            for (int e = 0; e < J.count; ++e)
                nm[static_cast<std::size_t>(e)] +=
                    q * dn * ((J.mark[static_cast<std::size_t>(ch)] == e ? 1.0 : 0.0) - J.prob(n, e));
        }
        r.n_mean = std::max(r.n_mean, std::abs(mean));
        for (double v : nx) r.n_vs_x = std::max(r.n_vs_x, std::abs(v));
        for (double v : nm) r.n_vs_marks = std::max(r.n_vs_marks, std::abs(v));
    }
    return r;
}

}  // namespace ladlag
