#pragma once

// Independent reference computations used only by the tests. None of these call into the
// code paths they check.

#include <cmath>
#include <functional>
#include <span>
#include <vector>

namespace oracle {

/// AUROC by counting all pos/neg pairs; ties contribute one half.
// Doubled Mann-Whitney count: 2 per pos > neg pair, 1 per tie.
inline long long brute_force_doubled_u(std::span<const double> pos, std::span<const double> neg) {
    long long doubled = 0;
    for (double p : pos)
        for (double n : neg) doubled += p > n ? 2 : (p == n ? 1 : 0);
    return doubled;
}

inline double brute_force_auroc(std::span<const double> pos, std::span<const double> neg) {
    const long long doubled = brute_force_doubled_u(pos, neg);
    return static_cast<double>(doubled) / static_cast<double>(2LL * static_cast<long long>(pos.size()) *
                                                              static_cast<long long>(neg.size()));
}

namespace detail {

struct Gk15 {
    double kronrod;
    double gauss;
};

inline Gk15 gauss_kronrod15(const std::function<double(double)>& f, double a, double b) {
    static constexpr double xk[8] = {0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
                                     0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
                                     0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
                                     0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
    static constexpr double wk[8] = {0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
                                     0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
                                     0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
                                     0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
    static constexpr double wg[4] = {0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
                                     0.381830050505118944950369775488975, 0.417959183673469387755102040816327};
    const double c = 0.5 * (a + b);
    const double h = 0.5 * (b - a);
    const double fc = f(c);
    double k = wk[7] * fc;
    double g = wg[3] * fc;
    for (int i = 0; i < 7; ++i) {
        const double dx = h * xk[i];
        const double s = f(c - dx) + f(c + dx);
        k += wk[i] * s;
        if (i % 2 == 1) g += wg[i / 2] * s;
    }
    return {k * h, g * h};
}

inline double adaptive(const std::function<double(double)>& f, double a, double b, double rel_tol, int depth) {
    const auto r = gauss_kronrod15(f, a, b);
    if (depth <= 0 || std::fabs(r.kronrod - r.gauss) <= rel_tol * std::fabs(r.kronrod) + 1e-300) return r.kronrod;
    const double m = 0.5 * (a + b);
    return adaptive(f, a, m, rel_tol, depth - 1) + adaptive(f, m, b, rel_tol, depth - 1);
}

}  // namespace detail

/// Adaptive Gauss-Kronrod (7/15) quadrature with a relative tolerance.
inline double integrate(const std::function<double(double)>& f, double a, double b, double rel_tol = 1e-13) {
    return detail::adaptive(f, a, b, rel_tol, 40);
}

/// I_x(a, b) by quadrature of the beta density. The substitution u = s^(1/a) removes the
/// endpoint singularity at 0; for x > 1/2 the complement is integrated instead so the
/// (1 - u)^(b - 1) factor stays bounded.
inline double incomplete_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double log_beta = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
    auto lower = [&](double p, double q, double upto) {
        auto g = [p, q](double s) { return std::pow(1.0 - std::pow(s, 1.0 / p), q - 1.0); };
        return integrate(g, 0.0, std::pow(upto, p)) / p;
    };
    if (x <= 0.5) return lower(a, b, x) / std::exp(log_beta);
    return 1.0 - lower(b, a, 1.0 - x) / std::exp(log_beta);
}

/// Student t CDF by integrating the density from 0 to |t|.
inline double student_t_cdf(double t, double df) {
    const double log_norm = std::lgamma((df + 1) / 2) - std::lgamma(df / 2) - 0.5 * std::log(df * M_PI);
    auto density = [&](double u) { return std::exp(log_norm - (df + 1) / 2 * std::log1p(u * u / df)); };
    const double half = integrate(density, 0.0, std::fabs(t));
    return t >= 0 ? 0.5 + half : 0.5 - half;
}

inline double trapezoid(std::span<const double> x, std::span<const double> y) {
    double s = 0.0;
    for (std::size_t i = 1; i < x.size(); ++i) s += 0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1]);
    return s;
}

}  // namespace oracle
