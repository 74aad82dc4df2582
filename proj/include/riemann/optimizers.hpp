#pragma once

#include "riemann/line_search.hpp"
#include "riemann/objectives.hpp"

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace riemann {

// All optimizers minimize. Maximization objectives are negated by the problem
// adapters below, so f = -rho, G = -grad f is the ascent direction of rho.
//
// A problem type provides
//   Point, Tangent, Line
//   double value(const Point&)
//   Tangent gradient(const Point&)
//   double inner(const Point&, const Tangent&, const Tangent&)
//   double hess(const Point&, const Tangent&, const Tangent&)
//   Line line(const Point&, const Tangent& h)
//   std::optional<Tangent> newton_direction(const Point&)
//   int dimension()
// and a line along t -> exp_p(t h) provides
//   double phi(double t), dphi(double t), d2phi0()
//   Point point(double t)
//   Tangent transport_direction(double t, const Point& at)      // tau h
//   Tangent transport(double t, const Point& at, const Tangent&) // tau v
//   std::pair<double, double> conjugacy(double t, const Point& at, const Tangent& tau_h, const Tangent& g)
//       // (hess(tau h, g), hess(tau h, tau h)) at the endpoint

struct StopCriteria {
    double grad_tol = 1e-12;
    int max_iters = 200;
    double f_tol = 0.0;  // relative change in f; 0 disables
};

enum class GammaMode { hessian, transported };

struct IterRecord {
    int iter = 0;
    double f = 0.0;
    double grad_norm = 0.0;
    double step = 0.0;
    double dist = std::nan("");
    bool reset = false;
    int evals = 0;
};

struct Trace {
    std::vector<IterRecord> records;
    bool converged = false;
    std::string status;
};

template <class Point>
struct RunResult {
    Point point;
    Trace trace;
};

template <class Point>
using DistanceFn = std::function<double(const Point&)>;

struct CgOptions {
    StopCriteria stop;
    GammaMode gamma = GammaMode::hessian;
    int reset_period = -1;  // <= 0 selects the manifold dimension
    LineSearchParams line_search;
};

struct StepReport {
    double f = 0.0;
    double grad_norm = 0.0;
    double t = 0.0;
    bool reset = false;
    bool converged = false;
    bool line_ok = true;
    int evals = 0;
};

// Conjugate gradient, one step at a time. Each step evaluates the gradient at
// the current point first, then forms the direction from the previous one, so
// the objective may change between steps (subspace tracking).
template <class Problem>
class CgEngine {
public:
    using Point = typename Problem::Point;
    using Tangent = typename Problem::Tangent;
    using Line = typename Problem::Line;

    CgEngine(const Problem& problem, Point p0, CgOptions options)
        : problem_(&problem), p_(std::move(p0)), opt_(options) {
        opt_.line_search.validate();
        if (opt_.reset_period <= 0) opt_.reset_period = problem.dimension();
    }

    const Point& point() const { return p_; }
    void set_point(Point p) {
        p_ = std::move(p);
        force_reset();
    }
    void force_reset() { force_reset_ = true; }
    int steps_since_reset() const { return count_; }
    const CgOptions& options() const { return opt_; }

    // Runs before the gradient is formed; returning true forces a reset.
    std::function<bool(Point&)> pre_step;
    // May modify the descent direction -grad f before it is used.
    std::function<void(const Point&, Tangent&)> adjust_gradient;

    StepReport step(bool move = true) {
        StepReport rep;
        if (pre_step && pre_step(p_)) force_reset_ = true;
        const Problem& pr = *problem_;
        rep.f = pr.value(p_);
        Tangent g = -pr.gradient(p_);
        if (adjust_gradient) adjust_gradient(p_, g);
        const double gg = pr.inner(p_, g, g);
        rep.grad_norm = std::sqrt(gg);
        if (rep.grad_norm <= opt_.stop.grad_tol) {
            rep.converged = true;
            return rep;
        }
        if (!move) return rep;

        bool reset = force_reset_ || !prev_ || count_ >= opt_.reset_period;
        Tangent h = g;
        if (!reset) {
            const Tangent tau_h = prev_->transport_direction(prev_t_, p_);
            double gamma = 0.0;
            if (opt_.gamma == GammaMode::hessian) {
                const auto [hg, hh] = prev_->conjugacy(prev_t_, p_, tau_h, g);
                const double scale = pr.inner(p_, tau_h, tau_h) * std::max(1.0, std::abs(rep.f));
                if (!(std::abs(hh) > 1e-14 * scale)) reset = true;
                else gamma = -hg / hh;
            } else {
                const Tangent tau_g = prev_->transport(prev_t_, p_, prev_g_);
                const double scale = std::max(1.0, std::abs(rep.f));
                if (!(prev_gh_ > 1e-14 * scale * scale)) reset = true;
                else gamma = pr.inner(p_, g - tau_g, g) / prev_gh_;
            }
            if (!reset) {
                h = g + gamma * tau_h;
                if (!(pr.inner(p_, h, g) > 0.0)) {
                    reset = true;
                    h = g;
                }
            }
        }
        if (reset) {
            count_ = 0;
            h = g;
        }
        force_reset_ = false;
        rep.reset = reset;

        Line line = pr.line(p_, h);
        const double dphi0 = line.dphi(0.0);
        const double hnorm = std::sqrt(pr.inner(p_, h, h));
        if (!(dphi0 < 0.0)) {
            // Round-off at the optimum; nothing left to gain along h.
            rep.converged = true;
            rep.line_ok = false;
            return rep;
        }
        const double trial = newton_trial_step(dphi0, line.d2phi0(), 1.0 / hnorm, std::abs(dphi0));
        const double phi0 = line.phi(0.0);
        const LineSearchResult ls = wolfe_powell([&](double t) { return line.phi(t); },
                                                 [&](double t) { return line.dphi(t); }, phi0, dphi0, trial,
                                                 opt_.line_search);
        rep.t = ls.t;
        rep.evals = ls.evals;
        rep.line_ok = ls.ok;
        if (ls.t <= 0.0) {
            prev_.reset();
            force_reset_ = true;
            return rep;
        }
        Point next = line.point(ls.t);
        prev_gh_ = pr.inner(p_, g, h);
        prev_g_ = std::move(g);
        prev_.emplace(std::move(line));
        prev_t_ = ls.t;
        p_ = std::move(next);
        ++count_;
        return rep;
    }

private:
    const Problem* problem_;
    Point p_;
    CgOptions opt_;
    std::optional<Line> prev_;
    double prev_t_ = 0.0;
    Tangent prev_g_{};
    double prev_gh_ = 0.0;
    int count_ = 0;
    bool force_reset_ = true;
};

namespace detail {

inline bool f_stalled(const StopCriteria& stop, double f_old, double f_new) {
    return stop.f_tol > 0.0 && std::abs(f_new - f_old) <= stop.f_tol * std::max(1.0, std::abs(f_old));
}

}  // namespace detail

template <class Problem>
RunResult<typename Problem::Point> conjugate_gradient(const Problem& problem, typename Problem::Point p0,
                                                      const CgOptions& options,
                                                      const DistanceFn<typename Problem::Point>& distance = {}) {
    CgEngine<Problem> engine(problem, std::move(p0), options);
    RunResult<typename Problem::Point> out;
    int failures = 0;
    for (int i = 0;; ++i) {
        const bool last = i >= options.stop.max_iters;
        const double dist = distance ? distance(engine.point()) : std::nan("");
        const StepReport rep = engine.step(!last);
        out.trace.records.push_back({i, rep.f, rep.grad_norm, rep.t, dist, rep.reset, rep.evals});
        if (rep.converged) {
            out.trace.converged = true;
            out.trace.status = "converged";
            break;
        }
        if (last) {
            out.trace.status = "max_iters";
            break;
        }
        failures = rep.t > 0.0 ? 0 : failures + 1;
        if (failures >= 2) {
            out.trace.status = "line_search_failed";
            break;
        }
        const auto& recs = out.trace.records;
        if (recs.size() >= 2 && detail::f_stalled(options.stop, recs[recs.size() - 2].f, rep.f)) {
            out.trace.converged = true;
            out.trace.status = "f_tol";
            break;
        }
    }
    out.point = engine.point();
    return out;
}

// Step rule for steepest descent: given the point, direction and line, return t.
template <class Problem>
using StepRule = std::function<double(const typename Problem::Point&, const typename Problem::Tangent&,
                                      typename Problem::Line&)>;

template <class Problem>
StepRule<Problem> wolfe_powell_rule(const Problem& problem, LineSearchParams params = {}) {
    return [&problem, params](const typename Problem::Point& p, const typename Problem::Tangent& h,
                              typename Problem::Line& line) {
        const double dphi0 = line.dphi(0.0);
        if (!(dphi0 < 0.0)) return 0.0;
        const double hnorm = std::sqrt(problem.inner(p, h, h));
        const double trial = newton_trial_step(dphi0, line.d2phi0(), 1.0 / hnorm, std::abs(dphi0));
        return wolfe_powell([&](double t) { return line.phi(t); }, [&](double t) { return line.dphi(t); },
                            line.phi(0.0), dphi0, trial, params)
            .t;
    };
}

template <class Problem>
RunResult<typename Problem::Point> steepest_descent(const Problem& problem, typename Problem::Point p0,
                                                    const StopCriteria& stop, StepRule<Problem> rule = {},
                                                    const DistanceFn<typename Problem::Point>& distance = {}) {
    if (!rule) rule = wolfe_powell_rule(problem);
    RunResult<typename Problem::Point> out;
    typename Problem::Point p = std::move(p0);
    for (int i = 0;; ++i) {
        IterRecord rec;
        rec.iter = i;
        rec.f = problem.value(p);
        const typename Problem::Tangent g = -problem.gradient(p);
        rec.grad_norm = std::sqrt(problem.inner(p, g, g));
        rec.dist = distance ? distance(p) : std::nan("");
        if (rec.grad_norm <= stop.grad_tol) {
            out.trace.records.push_back(rec);
            out.trace.converged = true;
            out.trace.status = "converged";
            break;
        }
        if (i >= stop.max_iters) {
            out.trace.records.push_back(rec);
            out.trace.status = "max_iters";
            break;
        }
        typename Problem::Line line = problem.line(p, g);
        const double t = rule(p, g, line);
        rec.step = t;
        out.trace.records.push_back(rec);
        if (!(t > 0.0)) {
            out.trace.status = "line_search_failed";
            break;
        }
        p = line.point(t);
    }
    out.point = std::move(p);
    return out;
}

template <class Problem>
RunResult<typename Problem::Point> newton(const Problem& problem, typename Problem::Point p0, const StopCriteria& stop,
                                          const DistanceFn<typename Problem::Point>& distance = {}) {
    RunResult<typename Problem::Point> out;
    typename Problem::Point p = std::move(p0);
    for (int i = 0;; ++i) {
        IterRecord rec;
        rec.iter = i;
        rec.f = problem.value(p);
        const typename Problem::Tangent g = -problem.gradient(p);
        rec.grad_norm = std::sqrt(problem.inner(p, g, g));
        rec.dist = distance ? distance(p) : std::nan("");
        if (rec.grad_norm <= stop.grad_tol) {
            out.trace.records.push_back(rec);
            out.trace.converged = true;
            out.trace.status = "converged";
            break;
        }
        if (i >= stop.max_iters) {
            out.trace.records.push_back(rec);
            out.trace.status = "max_iters";
            break;
        }
        std::optional<typename Problem::Tangent> h = problem.newton_direction(p);
        if (!h) {
            // Singular or indefinite: one safeguarded gradient step instead.
            typename Problem::Line line = problem.line(p, g);
            const double t = wolfe_powell_rule(problem)(p, g, line);
            rec.step = t;
            rec.reset = true;
            out.trace.records.push_back(rec);
            if (!(t > 0.0)) {
                out.trace.status = "singular";
                break;
            }
            p = line.point(t);
            continue;
        }
        rec.step = 1.0;
        out.trace.records.push_back(rec);
        p = problem.line(p, *h).point(1.0);
    }
    out.point = std::move(p);
    return out;
}

// ------------------------------------------------------------- adapters

// Minimize -x^T Q x on the unit sphere.
class SphereRayleighProblem {
public:
    using Point = Vec;
    using Tangent = Vec;

    class Line {
    public:
        Line(const SphereRayleighProblem& pr, const Vec& x, const Vec& h);
        double phi(double t) const;
        double dphi(double t) const;
        double d2phi0() const;
        Vec point(double t) const;
        Vec transport_direction(double t, const Vec& at) const;
        Vec transport(double t, const Vec& at, const Vec& v) const;
        std::pair<double, double> conjugacy(double t, const Vec& at, const Vec& tau_h, const Vec& g) const;

    private:
        const SphereRayleighProblem* pr_;
        Vec x_, u_;  // u = h / |h|
        double speed_ = 0.0;
        double xqx_ = 0.0, xqu_ = 0.0, uqu_ = 0.0;
    };

    explicit SphereRayleighProblem(Mat q) : rayleigh_(std::move(q)) {}
    const Rayleigh& rayleigh() const { return rayleigh_; }

    double value(const Vec& x) const { return -rayleigh_.value(x); }
    Vec gradient(const Vec& x) const { return -rayleigh_.gradient(x); }
    double inner(const Vec&, const Vec& u, const Vec& v) const { return u.dot(v); }
    double hess(const Vec& x, const Vec& u, const Vec& v) const { return -rayleigh_.hess(x, u, v); }
    Line line(const Vec& x, const Vec& h) const { return Line(*this, x, h); }
    std::optional<Vec> newton_direction(const Vec& x) const { return rayleigh_.newton_solve(x, -rayleigh_.gradient(x)); }
    int dimension() const { return static_cast<int>(rayleigh_.q().rows()) - 1; }

private:
    Rayleigh rayleigh_;
};

// Minimize -f on SO(n) for a maximized objective f with value, gradient
// (left-translated), hess and newton_direction (TraceQN, JacobiObjective).
template <class Objective>
class SoProblem {
public:
    using Point = Mat;
    using Tangent = Mat;

    class Line {
    public:
        Line(const SoProblem& pr, const Mat& theta, const Mat& omega)
            : pr_(&pr), theta_(theta), omega_(omega), canon_(skew_canonical(omega)) {}
        double phi(double t) const { return pr_->value(point(t)); }
        double dphi(double t) const {
            const Mat g = pr_->gradient(point(t));
            return (g.array() * omega_.array()).sum();
        }
        double d2phi0() const { return pr_->hess(theta_, omega_, omega_); }
        Mat point(double t) const { return t == 0.0 ? theta_ : Mat(theta_ * canon_.expm(t)); }
        Mat transport_direction(double, const Mat&) const { return omega_; }
        Mat transport(double t, const Mat&, const Mat& v) const {
            const Mat half = canon_.expm(0.5 * t);
            return half.transpose() * v * half;
        }
        std::pair<double, double> conjugacy(double, const Mat& at, const Mat& tau_h, const Mat& g) const {
            return {pr_->hess(at, tau_h, g), pr_->hess(at, tau_h, tau_h)};
        }

    private:
        const SoProblem* pr_;
        Mat theta_, omega_;
        SkewCanonical canon_;
    };

    explicit SoProblem(Objective obj) : obj_(std::move(obj)) {}
    const Objective& objective() const { return obj_; }

    double value(const Mat& theta) const { return -obj_.value(theta); }
    Mat gradient(const Mat& theta) const { return -obj_.gradient(theta); }
    double inner(const Mat&, const Mat& u, const Mat& v) const { return (u.array() * v.array()).sum(); }
    double hess(const Mat& theta, const Mat& u, const Mat& v) const { return -obj_.hess(theta, u, v); }
    Line line(const Mat& theta, const Mat& omega) const { return Line(*this, theta, omega); }
    std::optional<Mat> newton_direction(const Mat& theta) const {
        const SoNewtonResult r = obj_.newton_direction(theta);
        if (!r.converged || r.indefinite) return std::nullopt;
        return r.x;
    }
    int dimension() const {
        const int n = static_cast<int>(obj_.q().rows());
        return n * (n - 1) / 2;
    }

private:
    Objective obj_;
};

// Stiefel point with its coset representative and a cached A p.
struct StiefelPoint {
    Mat p;
    StiefelCoset g;
    mutable Mat ap;
    mutable unsigned long ap_version = 0;
    mutable bool has_ap = false;

    StiefelPoint() = default;
    // p is replaced by g o, which is orthonormal to working precision.
    explicit StiefelPoint(const Mat& frame) : g(frame) { p = g.point(); }
};

// Minimize -tr p^T A p N on V(n,k). Only hessian-conjugacy CG is supported:
// the line transports its own direction but not arbitrary tangents.
class StiefelRayleighProblem {
public:
    using Point = StiefelPoint;
    using Tangent = TangentM;

    class Line {
    public:
        Line(const StiefelRayleighProblem& pr, const StiefelPoint& x, const TangentM& h);
        double phi(double t) const;
        double dphi(double t) const;
        double d2phi0() const;
        StiefelPoint point(double t) const;
        TangentM transport_direction(double t, const StiefelPoint& at) const;
        TangentM transport(double t, const StiefelPoint& at, const TangentM& v) const;
        std::pair<double, double> conjugacy(double t, const StiefelPoint& at, const TangentM& tau_h,
                                            const TangentM& g) const;

    private:
        Mat a_tau(double t, const StiefelPoint& at, const TangentM& tau_h) const;
        const StiefelRayleighProblem* pr_;
        StiefelGeodesic geo_;
        TangentM h_;
        bool reduced_ = true;
        Mat basis_, abasis_, c2_;
        unsigned long version_ = 0;
    };

    StiefelRayleighProblem(const SymOperator* a, Vec n_diag) : rho_(a, std::move(n_diag)) {}
    const GenRayleigh& rho() const { return rho_; }
    GenRayleigh& rho() { return rho_; }

    const Mat& ap(const StiefelPoint& x) const;
    double value(const StiefelPoint& x) const { return -rho_.value_cached(x.p, ap(x)); }
    TangentM gradient(const StiefelPoint& x) const { return -rho_.gradient(x.g, ap(x)); }
    double inner(const StiefelPoint&, const TangentM& u, const TangentM& v) const { return riemann::inner(u, v); }
    double hess(const StiefelPoint& x, const TangentM& u, const TangentM& v) const {
        return -rho_.hess(x.g, ap(x), u, v);
    }
    Line line(const StiefelPoint& x, const TangentM& h) const { return Line(*this, x, h); }
    std::optional<TangentM> newton_direction(const StiefelPoint&) const { return std::nullopt; }
    int dimension() const {
        const int n = rho_.n(), k = rho_.k();
        return n * k - k * (k + 1) / 2;
    }

private:
    GenRayleigh rho_;
};

}  // namespace riemann
