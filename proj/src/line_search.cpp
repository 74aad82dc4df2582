#include "riemann/line_search.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace riemann {

void LineSearchParams::validate() const {
    if (!(0.0 < rho && rho < sigma && sigma < 1.0)) throw std::invalid_argument("LineSearchParams: need 0 < rho < sigma < 1");
    if (!(tau1 > 1.0)) throw std::invalid_argument("LineSearchParams: need tau1 > 1");
    if (!(0.0 < tau2 && tau2 < tau3 && tau3 < 1.0)) throw std::invalid_argument("LineSearchParams: need 0 < tau2 < tau3 < 1");
    if (max_evals < 1) throw std::invalid_argument("LineSearchParams: max_evals must be positive");
}

namespace {

// Minimizer over z in [lo, hi] of the interpolant on [a, b] mapped to z in [0, 1].
// Uses the cubic Hermite interpolant when phi'(b) is known, else the quadratic
// through phi(a), phi'(a), phi(b).
double interpolate(double a, double fa, double da, double b, double fb, double db, bool have_db, double lo, double hi) {
    const double len = b - a;
    const double f0 = fa, g0 = da * len, f1 = fb;
    auto model = [&](double z, double c2, double c3) { return f0 + g0 * z + c2 * z * z + c3 * z * z * z; };
    double c2, c3;
    if (have_db) {
        const double g1 = db * len;
        c2 = 3.0 * (f1 - f0) - 2.0 * g0 - g1;
        c3 = g0 + g1 - 2.0 * (f1 - f0);
    } else {
        c2 = f1 - f0 - g0;
        c3 = 0.0;
    }
    std::vector<double> cand{lo, hi};
    if (c3 != 0.0) {
        const double disc = 4.0 * c2 * c2 - 12.0 * c3 * g0;
        if (disc >= 0.0) {
            const double r = std::sqrt(disc);
            cand.push_back((-2.0 * c2 + r) / (6.0 * c3));
            cand.push_back((-2.0 * c2 - r) / (6.0 * c3));
        }
    } else if (c2 != 0.0) {
        cand.push_back(-g0 / (2.0 * c2));
    }
    double best_z = lo, best_f = std::numeric_limits<double>::infinity();
    for (double z : cand) {
        if (!(z >= lo && z <= hi)) continue;
        const double f = model(z, c2, c3);
        if (f < best_f) {
            best_f = f;
            best_z = z;
        }
    }
    return a + best_z * len;
}

}  // namespace

LineSearchResult wolfe_powell(const std::function<double(double)>& phi, const std::function<double(double)>& dphi,
                              double phi0, double dphi0, double t_trial, const LineSearchParams& params) {
    params.validate();
    if (!(dphi0 < 0.0)) throw std::invalid_argument("wolfe_powell: phi'(0) must be negative");
    if (!(t_trial > 0.0) || !std::isfinite(t_trial)) t_trial = 1.0;

    LineSearchResult best;
    best.t = 0.0;
    best.phi = phi0;
    best.dphi = dphi0;
    int evals = 0;
    // Values within the noise band of phi(0) carry no information; such points
    // are judged by their derivative alone (approximate Wolfe).
    const double noise = 64.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(phi0));
    auto armijo = [&](double t, double f) { return f <= phi0 + params.rho * t * dphi0 || f <= phi0 + noise; };
    auto curvature = [&](double d) { return std::abs(d) <= -params.sigma * dphi0; };
    auto note = [&](double t, double f, double d) {
        if (f < best.phi) {
            best.t = t;
            best.phi = f;
            best.dphi = d;
        }
    };
    auto finish = [&](double t, double f, double d) {
        LineSearchResult r;
        r.t = t;
        r.phi = f;
        r.dphi = d;
        r.evals = evals;
        r.ok = true;
        return r;
    };

    // Bracketing.
    double prev_t = 0.0, prev_f = phi0, prev_d = dphi0;
    double t = t_trial;
    double a = 0, fa = 0, da = 0, b = 0, fb = 0, db = 0;
    bool have_db = false;
    bool bracketed = false;
    while (evals < params.max_evals) {
        const double f = phi(t);
        ++evals;
        if (!std::isfinite(f)) {
            t = prev_t + 0.5 * (t - prev_t);
            continue;
        }
        if (!armijo(t, f) || f > prev_f + noise) {
            a = prev_t, fa = prev_f, da = prev_d;
            b = t, fb = f, have_db = false;
            note(t, f, std::numeric_limits<double>::quiet_NaN());
            bracketed = true;
            break;
        }
        const double d = dphi(t);
        note(t, f, d);
        if (curvature(d)) return finish(t, f, d);
        if (d >= 0.0) {
            a = t, fa = f, da = d;
            b = prev_t, fb = prev_f, db = prev_d, have_db = true;
            bracketed = true;
            break;
        }
        const double lo = 2.0 * t - prev_t;
        const double hi = t + params.tau1 * (t - prev_t);
        const double next = interpolate(prev_t, prev_f, prev_d, t, f, d, true, (lo - prev_t) / (t - prev_t),
                                        (hi - prev_t) / (t - prev_t));
        prev_t = t, prev_f = f, prev_d = d;
        t = next;
    }

    // Sectioning.
    while (bracketed && evals < params.max_evals) {
        const double tj = interpolate(a, fa, da, b, fb, db, have_db, params.tau2, 1.0 - params.tau3);
        const double f = phi(tj);
        ++evals;
        if (!armijo(tj, f) || f > fa + noise) {
            b = tj, fb = f, have_db = false;
            note(tj, f, std::numeric_limits<double>::quiet_NaN());
        } else {
            const double d = dphi(tj);
            note(tj, f, d);
            if (curvature(d)) return finish(tj, f, d);
            if ((b - a) * d >= 0.0) {
                b = a, fb = fa, db = da, have_db = true;
            }
            a = tj, fa = f, da = d;
        }
        if (std::abs(b - a) <= 1e-16 * std::max(1.0, std::abs(a))) break;
    }

    best.evals = evals;
    best.ok = false;
    if (std::isnan(best.dphi) && best.t > 0.0) best.dphi = dphi(best.t);
    return best;
}

double newton_trial_step(double dphi0, double d2phi0, double fallback, double scale) {
    if (d2phi0 > 1e-14 * scale) return -dphi0 / d2phi0;
    return fallback;
}

double brockett_step(const Mat& h, const Mat& omega, const Mat& n) {
    const double slope = 2.0 * (h * omega * n).trace();
    if (!(slope > 0.0)) throw std::domain_error("brockett_step: not an ascent direction");
    const double denom = commutator(omega, h).norm() * commutator(omega, n).norm();
    if (denom == 0.0) throw std::domain_error("brockett_step: degenerate direction");
    return slope / denom;
}

CircleStep exact_circle_step(double xqx, double xqh, double hqh) {
    const double a = 2.0 * xqh;
    const double b = xqx - hqh;
    const double r = std::hypot(a, b);
    CircleStep out;
    if (r == 0.0) {
        out.flat = true;
        return out;
    }
    // rho(theta) = const + (b cos 2 theta + a sin 2 theta) / 2, maximized at 2 theta = atan2(a, b).
    if (b >= 0.0) {
        out.c = std::sqrt(0.5 * (1.0 + b / r));
        out.s = a / (2.0 * r * out.c);
    } else {
        out.s = std::sqrt(0.5 * (1.0 - b / r));
        if (a < 0.0) out.s = -out.s;
        out.c = a / (2.0 * r * out.s);
    }
    return out;
}

CircleStep sphere_rayleigh_exact_step(const Vec& x, const Vec& h, const Mat& q) {
    if (std::abs(h.norm() - 1.0) > 1e-10) throw std::invalid_argument("sphere_rayleigh_exact_step: h must be a unit vector");
    const Vec qx = q * x, qh = q * h;
    return exact_circle_step(x.dot(qx), x.dot(qh), h.dot(qh));
}

}  // namespace riemann
