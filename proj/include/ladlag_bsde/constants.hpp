#pragma once

// Scalar constants of the contraction argument: the auxiliary infima ff and
// fg, the composite constants M1..M3 (reflected) and Mt1..Mt3 (plain), the
// k-estimate factor j, the constant L, and beta thresholds.

#include <boost/math/tools/minima.hpp>
#include <gsl/gsl_multimin.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>

#include "errors.hpp"

namespace ladlag {

inline const double kSqrt5 = std::sqrt(5.0);
// Minimum of the conditional-estimate sub-expression, 2(3 + sqrt 5).
inline const double kCondConstant = 2.0 * (3.0 + kSqrt5);

namespace detail {
inline void require_beta(double beta, double psi) {
    if (!(beta > 0.0)) throw Error(Errc::NonpositiveBeta, "beta must be positive");
    if (!(psi >= 0.0)) throw Error(Errc::OutOfDomain, "psi must be non-negative");
}
}  // namespace detail

inline double ff(double beta, double psi) {
    detail::require_beta(beta, psi);
    return 4.0 * (1.0 + beta * psi) / (beta * beta);
}

inline double fg(double beta, double psi) {
    detail::require_beta(beta, psi);
    if (psi == 0.0) return 5.0 / beta;
    const double s = std::sqrt(1.0 + beta * psi);
    // s - 1 and s - 2 lose digits for small beta psi; (s - 1) = bp / (s + 1).
    const double bp = beta * psi;
    const double s_minus_1 = bp / (s + 1.0);
    const double denom = bp * (s_minus_1 - 1.0) + 2.0 * s_minus_1;
    return 1.0 / beta + beta * psi * psi * s / denom;
}

// Objectives whose infimum over gamma in (0, beta) defines ff and fg.
inline double ff_objective(double gamma, double beta, double psi) {
    return (1.0 + beta * psi) / (gamma * (beta - gamma));
}
inline double fg_objective(double gamma, double beta, double psi) {
    return 1.0 / beta + beta * (1.0 + gamma * psi) / (gamma * (beta - gamma));
}

// Infimum of a convex objective on (0, beta): scan u = gamma / beta on a grid
// dense near both ends, then refine with Brent inside the bracketing cell.
template <class Objective>
double numeric_infimum(Objective&& fn, double beta) {
    constexpr int kGrid = 4000;
    auto at = [&](double u) { return fn(u * beta); };
    auto grid_u = [](int i) {
        const double t = static_cast<double>(i) / kGrid;  // t in (0,1)
        return 0.5 * (1.0 - std::cos(M_PI * t));
    };
    int best = 1;
    double best_val = at(grid_u(1));
    for (int i = 2; i < kGrid; ++i) {
        const double v = at(grid_u(i));
        if (v < best_val) {
            best_val = v;
            best = i;
        }
    }
    const double lo = grid_u(best - 1), hi = grid_u(best + 1);
    const auto r = boost::math::tools::brent_find_minima(at, lo, hi, 52);
    return std::min(best_val, r.second);
}

inline double ff_numeric(double beta, double psi) {
    detail::require_beta(beta, psi);
    return numeric_infimum([&](double g) { return ff_objective(g, beta, psi); }, beta);
}
inline double fg_numeric(double beta, double psi) {
    detail::require_beta(beta, psi);
    return numeric_infimum([&](double g) { return fg_objective(g, beta, psi); }, beta);
}

struct MConstants {
    double m1, m2, m3;
};

inline MConstants M_constants(double beta, double psi) {
    const double a = ff(beta, psi), b = fg(beta, psi);
    const double factor = std::max(kCondConstant, (1.0 + beta * psi) / beta);
    return {4.0 / beta + a + factor * b, a + kCondConstant * b, 4.0 / beta + factor * b};
}

inline MConstants Mtilde_constants(double beta, double psi) {
    const double a = ff(beta, psi), b = fg(beta, psi);
    const double factor = std::max(1.0, (1.0 + beta * psi) / beta);
    return {a + 4.0 / beta + factor * b, a + b, 4.0 / beta + factor * b};
}

enum class ConstantId { M1, M2, M3, Mt1, Mt2, Mt3 };

inline constexpr std::array<ConstantId, 6> kAllConstants{ConstantId::M1,  ConstantId::M2,  ConstantId::M3,
                                                         ConstantId::Mt1, ConstantId::Mt2, ConstantId::Mt3};

inline std::string to_string(ConstantId id) {
    switch (id) {
        case ConstantId::M1: return "M1";
        case ConstantId::M2: return "M2";
        case ConstantId::M3: return "M3";
        case ConstantId::Mt1: return "Mt1";
        case ConstantId::Mt2: return "Mt2";
        case ConstantId::Mt3: return "Mt3";
    }
    return "?";
}

inline std::optional<ConstantId> constant_from_string(const std::string& s) {
    for (auto id : kAllConstants)
        if (to_string(id) == s) return id;
    return std::nullopt;
}

inline double constant_value(ConstantId id, double beta, double psi) {
    switch (id) {
        case ConstantId::M1: return M_constants(beta, psi).m1;
        case ConstantId::M2: return M_constants(beta, psi).m2;
        case ConstantId::M3: return M_constants(beta, psi).m3;
        case ConstantId::Mt1: return Mtilde_constants(beta, psi).m1;
        case ConstantId::Mt2: return Mtilde_constants(beta, psi).m2;
        case ConstantId::Mt3: return Mtilde_constants(beta, psi).m3;
    }
    return std::numeric_limits<double>::quiet_NaN();
}

// Limit as beta -> infinity: ff -> 0, fg -> psi, (1 + beta psi)/beta -> psi.
inline double constant_limit(ConstantId id, double psi) {
    switch (id) {
        case ConstantId::M1:
        case ConstantId::M3: return std::max(kCondConstant, psi) * psi;
        case ConstantId::M2: return kCondConstant * psi;
        case ConstantId::Mt1:
        case ConstantId::Mt3: return psi * std::max(1.0, psi);
        case ConstantId::Mt2: return psi;
    }
    return std::numeric_limits<double>::quiet_NaN();
}

struct ThresholdResult {
    std::optional<double> beta_star;
    double limit = 0.0;
    std::string diagnostic;
};

// Smallest beta (to 1e-8 relative) with constant(beta) < level, using that
// every constant decreases in beta. None when the limit is not below the level
// or the bracket [1e-6, 1e9] fails.
inline ThresholdResult threshold_beta(ConstantId id, double phi, double level = 1.0) {
    if (!(phi >= 0.0)) throw Error(Errc::OutOfDomain, "phi must be non-negative");
    ThresholdResult res;
    res.limit = constant_limit(id, phi);
    if (res.limit >= level) {
        res.diagnostic = "limit " + std::to_string(res.limit) + " is not below " + std::to_string(level);
        return res;
    }
    double lo = 1e-6, hi = 1e9;
    if (constant_value(id, lo, phi) < level) {
        res.beta_star = lo;
        res.diagnostic = "below the level already at the lower bracket end";
        return res;
    }
    if (!(constant_value(id, hi, phi) < level)) {
        res.diagnostic = "not below the level at the upper bracket end";
        return res;
    }
    while (hi - lo > 1e-8 * std::max(1.0, lo)) {
        const double mid = 0.5 * (lo + hi);
        (constant_value(id, mid, phi) < level ? hi : lo) = mid;
    }
    res.beta_star = hi;
    return res;
}

inline double jfun(double gamma, double beta, double psi) {
    if (!(gamma > 0.0) || !(gamma < beta))
        throw Error(Errc::BadGammaBeta, "need 0 < gamma < beta");
    if (!(psi >= 0.0)) throw Error(Errc::OutOfDomain, "psi must be non-negative");
    const double first = gamma / (beta - gamma);
    if (psi == 0.0) return first;  // second branch is 0/0 := 0
    const double sg = std::sqrt(1.0 + gamma * psi), sb = std::sqrt(1.0 + beta * psi);
    // Rationalized form avoids cancellation in sb - sg.
    const double second = (gamma * psi / (sg + 1.0)) * sb * (sb + sg) / ((beta - gamma) * psi);
    return std::max(first, second);
}

inline double ell(double eps, double kappa, double nu) {
    if (!(eps > 0.0) || !(kappa > 0.0) || !(nu > 0.0) || !(nu + 4.0 * kappa < 1.0))
        throw Error(Errc::OutOfDomain, "ell needs positive arguments with nu + 4 kappa < 1");
    const double inner = std::max({1.0 - 4.0 * kappa, 2.0 / kappa, 4.0 * kappa + 1.0 / eps + 1.0 / nu});
    return (12.0 * (1.0 + eps + 4.0 * kappa) + inner) / (1.0 - nu - 4.0 * kappa);
}

struct LConstant {
    double value;
    double eps, kappa, nu;
    int starts;
};

namespace detail {

// Unconstrained chart: eps = e^x0, s = logistic(x1) = nu + 4 kappa,
// w = logistic(x2) = nu / s.
inline std::array<double, 3> ell_chart(const gsl_vector* x) {
    auto logistic = [](double t) { return 1.0 / (1.0 + std::exp(-t)); };
    const double eps = std::exp(gsl_vector_get(x, 0));
    const double s = logistic(gsl_vector_get(x, 1));
    const double w = logistic(gsl_vector_get(x, 2));
    return {eps, s * (1.0 - w) / 4.0, s * w};
}

inline double ell_charted(const gsl_vector* x, void*) {
    const auto p = ell_chart(x);
    if (!(p[0] > 0.0) || !(p[1] > 0.0) || !(p[2] > 0.0) || !(p[2] + 4.0 * p[1] < 1.0))
        return std::numeric_limits<double>::max();
    return ell(p[0], p[1], p[2]);
}

inline LConstant minimize_ell() {
    const gsl_multimin_fminimizer_type* type = gsl_multimin_fminimizer_nmsimplex2;
    LConstant best{std::numeric_limits<double>::infinity(), 0, 0, 0, 0};
    gsl_multimin_function fn{&ell_charted, 3, nullptr};
    const double starts[][3] = {{0.0, 0.0, 0.0},   {-1.0, -1.0, 0.5}, {1.0, -2.0, -1.0},
                                {0.5, 1.0, 1.0},   {-2.0, -0.5, 2.0}, {2.0, 0.5, -2.0},
                                {-0.5, -2.5, 0.0}, {0.0, 2.0, -0.5}};
    gsl_vector* x = gsl_vector_alloc(3);
    gsl_vector* step = gsl_vector_alloc(3);
    for (const auto& st : starts) {
        for (int i = 0; i < 3; ++i) gsl_vector_set(x, static_cast<std::size_t>(i), st[i]);
        // Restarting the simplex a few times escapes the kinks of the max.
        for (int restart = 0; restart < 4; ++restart) {
            gsl_vector_set_all(step, restart == 0 ? 0.5 : 0.05);
            gsl_multimin_fminimizer* s = gsl_multimin_fminimizer_alloc(type, 3);
            gsl_multimin_fminimizer_set(s, &fn, x, step);
            for (int it = 0; it < 5000; ++it) {
                if (gsl_multimin_fminimizer_iterate(s)) break;
                if (gsl_multimin_test_size(gsl_multimin_fminimizer_size(s), 1e-12) == GSL_SUCCESS) break;
            }
            gsl_vector_memcpy(x, gsl_multimin_fminimizer_x(s));
            gsl_multimin_fminimizer_free(s);
        }
        const auto p = ell_chart(x);
        const double v = ell(p[0], p[1], p[2]);
        ++best.starts;
        if (v < best.value) best = {v, p[0], p[1], p[2], best.starts};
    }
    gsl_vector_free(step);
    gsl_vector_free(x);
    return best;
}

}  // namespace detail

// Numerical infimum of ell, computed once. Any value found is an upper bound
// of the true infimum, so bounds using it stay valid.
inline const LConstant& L_constant() {
    static const LConstant cached = detail::minimize_ell();
    return cached;
}

struct ConstantsReport {
    double psi = 0.0;
    std::optional<double> beta;
    double ff = 0.0, fg = 0.0;
    MConstants m{}, mt{};
    std::array<double, 6> limits{};
    std::array<ThresholdResult, 6> thresholds{};
    LConstant L{};
};

inline ConstantsReport constants_report(double psi, std::optional<double> beta) {
    ConstantsReport rep;
    rep.psi = psi;
    rep.beta = beta;
    if (beta) {
        rep.ff = ff(*beta, psi);
        rep.fg = fg(*beta, psi);
        rep.m = M_constants(*beta, psi);
        rep.mt = Mtilde_constants(*beta, psi);
    }
    for (std::size_t i = 0; i < kAllConstants.size(); ++i) {
        rep.limits[i] = constant_limit(kAllConstants[i], psi);
        rep.thresholds[i] = threshold_beta(kAllConstants[i], psi);
    }
    rep.L = L_constant();
    return rep;
}

}  // namespace ladlag
