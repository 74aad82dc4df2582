#pragma once

#include "riemann/linalg.hpp"

#include <functional>

namespace riemann {

struct LineSearchParams {
    double rho = 0.01;    // sufficient decrease fraction
    double sigma = 0.1;   // curvature fraction
    double tau1 = 9.0;    // bracket expansion limit
    double tau2 = 0.1;    // sectioning: distance from the left end
    double tau3 = 0.5;    // sectioning: distance from the right end
    int max_evals = 60;

    void validate() const;
};

struct LineSearchResult {
    double t = 0.0;
    double phi = 0.0;
    double dphi = 0.0;
    int evals = 0;
    bool ok = false;
};

// Fletcher's bracketing and sectioning search for a point satisfying
//   phi(t) <= phi(0) + rho t phi'(0)  and  |phi'(t)| <= -sigma phi'(0).
// Requires phi'(0) < 0. On exhaustion returns the best point seen with ok = false.
LineSearchResult wolfe_powell(const std::function<double(double)>& phi, const std::function<double(double)>& dphi,
                              double phi0, double dphi0, double t_trial, const LineSearchParams& params = {});

// Minimizer of the quadratic model: -phi'(0)/phi''(0) when phi''(0) is
// positive and not negligible, otherwise the fallback.
double newton_trial_step(double dphi0, double d2phi0, double fallback, double scale = 1.0);

// Largest t with tr Ad_{e^{-omega s}}(H) N non-decreasing on [0, t]:
//   2 tr(H omega N) / (|[omega, H]| |[omega, N]|).
// Throws std::domain_error when 2 tr(H omega N) <= 0.
double brockett_step(const Mat& h, const Mat& omega, const Mat& n);

struct CircleStep {
    double c = 1.0;
    double s = 0.0;
    bool flat = false;
};

// Maximizer of rho(x c + h s) over the great circle through x in the unit
// direction h, given x^T Q x, x^T Q h and h^T Q h.
CircleStep exact_circle_step(double xqx, double xqh, double hqh);
CircleStep sphere_rayleigh_exact_step(const Vec& x, const Vec& h, const Mat& q);

}  // namespace riemann
