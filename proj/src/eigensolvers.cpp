#include "riemann/eigensolvers.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <limits>
#include <numeric>

namespace riemann {

// ------------------------------------------------------------- sphere

SphereEigResult extreme_eigpair_sphere(const Mat& q, const Vec& x0, const StopCriteria& stop, SphereMethod method,
                                       const DistanceFn<Vec>& distance) {
    const int n = static_cast<int>(q.rows());
    if (q.cols() != n || x0.size() != n) throw std::invalid_argument("extreme_eigpair_sphere: dimension mismatch");
    if ((q - q.transpose()).norm() > 1e-12 * (1.0 + q.norm()))
        throw std::invalid_argument("extreme_eigpair_sphere: Q must be symmetric");
    if (x0.norm() == 0.0) throw std::invalid_argument("extreme_eigpair_sphere: zero start vector");

    SphereEigResult out;
    Vec x = x0 / x0.norm();
    Vec qx = q * x;
    out.matvecs = 1;
    double rho = x.dot(qx);
    Vec g = 2.0 * (qx - rho * x);
    Vec h = g;
    const int period = std::max(1, n - 1);
    const int patience = 3 * period;
    int count = 0;
    double best = rho;
    int last_gain = 0;

    for (int i = 0;; ++i) {
        IterRecord rec;
        rec.iter = i;
        rec.f = rho;
        rec.grad_norm = g.norm();
        rec.dist = distance ? distance(x) : std::nan("");
        rec.reset = count == 0;
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
        if (i - last_gain > patience) {
            out.trace.records.push_back(rec);
            out.trace.status = "stagnated";
            break;
        }

        // Keep h tangent at x; round-off in x^T h otherwise grows from step to step.
        h -= x.dot(h) * x;
        const double hn = h.norm();
        const Vec u = h / hn;
        // Q u is formed directly: carrying Q h by recurrence loses the small
        // gradient components near convergence and stalls the iteration.
        const Vec qu = q * u;
        ++out.matvecs;
        const CircleStep cs = exact_circle_step(rho, x.dot(qu), u.dot(qu));
        rec.step = std::atan2(cs.s, cs.c) / hn;
        rec.evals = 1;
        out.trace.records.push_back(rec);
        if (cs.flat) {
            out.trace.converged = true;
            out.trace.status = "flat";
            break;
        }

        Vec xn = x * cs.c + u * cs.s;
        Vec qxn = qx * cs.c + qu * cs.s;
        const double nrm = xn.norm();
        xn /= nrm;
        qxn /= nrm;
        const double rho_n = xn.dot(qxn);
        const Vec gn = 2.0 * (qxn - rho_n * xn);
        ++count;

        if (method == SphereMethod::steepest || count >= period) {
            h = gn;
            count = 0;
        } else {
            const Vec tau_h = hn * (u * cs.c - x * cs.s);
            const Vec tau_g = g - u.dot(g) * (x * cs.s + u * (1.0 - cs.c));
            const double denom = g.dot(h);
            const double gamma = denom > 0.0 ? (gn - tau_g).dot(gn) / denom : 0.0;
            h = gn + gamma * tau_h;
            if (!(denom > 0.0) || !(h.dot(gn) > 0.0)) {
                h = gn;
                count = 0;
            }
        }
        x = std::move(xn);
        qx = std::move(qxn);
        g = gn;
        if (rho_n > best + 4.0 * std::numeric_limits<double>::epsilon() * std::abs(best)) last_gain = i + 1;
        best = std::max(best, rho_n);
        rho = rho_n;
    }
    out.lambda = rho;
    out.x = x;
    return out;
}

SphereEigResult newton_rayleigh(const Mat& q, const Vec& x0, NewtonVariant variant, const StopCriteria& stop,
                                const DistanceFn<Vec>& distance) {
    const int n = static_cast<int>(q.rows());
    if (q.cols() != n || x0.size() != n) throw std::invalid_argument("newton_rayleigh: dimension mismatch");
    if (x0.norm() == 0.0) throw std::invalid_argument("newton_rayleigh: zero start vector");
    SphereEigResult out;
    Vec x = x0 / x0.norm();
    for (int i = 0;; ++i) {
        const Vec qx = q * x;
        ++out.matvecs;
        const double rho = x.dot(qx);
        IterRecord rec;
        rec.iter = i;
        rec.f = rho;
        rec.grad_norm = 2.0 * (qx - rho * x).norm();
        rec.dist = distance ? distance(x) : std::nan("");
        out.lambda = rho;
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
        const Eigen::PartialPivLU<Mat> lu(q - rho * Mat::Identity(n, n));
        const Vec y = lu.solve(x);
        const double xy = x.dot(y);
        if (!y.allFinite() || xy == 0.0 || !std::isfinite(xy)) {
            // The shift hit an eigenvalue: x is already an eigenvector to working precision.
            out.trace.records.push_back(rec);
            out.trace.converged = true;
            out.trace.status = "converged";
            break;
        }
        Vec xn;
        if (variant == NewtonVariant::geodesic) {
            const Vec hdir = -x + y / xy;
            const double theta = hdir.norm();
            xn = theta > 0.0 ? Vec(x * std::cos(theta) + hdir * (std::sin(theta) / theta)) : x;
            rec.step = theta;
        } else {
            xn = (xy > 0.0 ? 1.0 : -1.0) * y / y.norm();
            rec.step = std::acos(std::clamp(xn.dot(x), -1.0, 1.0));
        }
        out.trace.records.push_back(rec);
        x = xn / xn.norm();
    }
    out.x = x;
    return out;
}

// ------------------------------------------------------------- Stiefel

namespace {

std::vector<int> descending_order(const Vec& v) {
    std::vector<int> idx(static_cast<size_t>(v.size()));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return v(a) > v(b); });
    return idx;
}

Vec frame_diag(const Mat& p, const Mat& ap) { return (p.array() * ap.array()).colwise().sum().transpose(); }

}  // namespace

Vec resort_weights(const Vec& d, const Vec& n_diag) {
    if (d.size() != n_diag.size()) throw std::invalid_argument("resort_weights: size mismatch");
    const std::vector<int> od = descending_order(d), on = descending_order(n_diag);
    Vec out(n_diag.size());
    for (size_t r = 0; r < od.size(); ++r) out(od[r]) = n_diag(on[r]);
    return out;
}

Mat sort_frame(const Mat& p, const SymOperator& a, const Vec& n_diag) {
    if (p.cols() != n_diag.size()) throw std::invalid_argument("sort_frame: size mismatch");
    const Vec d = frame_diag(p, a.apply(p));
    const std::vector<int> od = descending_order(d), on = descending_order(n_diag);
    Mat out(p.rows(), p.cols());
    for (size_t r = 0; r < od.size(); ++r) out.col(on[r]) = p.col(od[r]);
    return out;
}

void canonicalize_signs(Mat& p) {
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
        Eigen::Index imax = 0;
        p.col(j).cwiseAbs().maxCoeff(&imax);
        if (p(imax, j) < 0.0) p.col(j) *= -1.0;
    }
}

Mat random_start(int n, int k, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return random_frame(n, k, rng);
}

bool apply_sort_policy(StiefelPoint& x, StiefelRayleighProblem& problem, const SortPolicy& policy, Vec& diag) {
    const Mat& ap = problem.ap(x);
    diag = frame_diag(x.p, ap);
    if (!policy.enabled || similarly_ordered(diag, problem.rho().n_diag())) return false;
    if (policy.action == SortAction::resort_n) {
        problem.rho().set_n(resort_weights(diag, problem.rho().n_diag()));
        return true;
    }
    const std::vector<int> od = descending_order(diag);
    const std::vector<int> on = descending_order(problem.rho().n_diag());
    Mat p(x.p.rows(), x.p.cols()), apn(ap.rows(), ap.cols());
    for (size_t r = 0; r < od.size(); ++r) {
        p.col(on[r]) = x.p.col(od[r]);
        apn.col(on[r]) = ap.col(od[r]);
    }
    StiefelPoint y(p);
    y.ap = apn;
    y.ap_version = problem.rho().op().version();
    y.has_ap = true;
    x = std::move(y);
    diag = frame_diag(x.p, x.ap);
    return true;
}

EigResult topk_eigpairs_stiefel(const SymOperator& a, const Vec& n_diag, const Mat& p0, const TopkOptions& opts) {
    const int n = a.dim(), k = static_cast<int>(n_diag.size());
    if (k < 1 || k > n) throw std::invalid_argument("topk_eigpairs_stiefel: need 1 <= k <= n");
    if (p0.rows() != n || p0.cols() != k) throw std::invalid_argument("topk_eigpairs_stiefel: start frame has the wrong shape");
    if (orthonormality_error(p0) > 1e-9) throw std::invalid_argument("topk_eigpairs_stiefel: start frame is not orthonormal");
    if (opts.cg.gamma != GammaMode::hessian)
        throw std::invalid_argument("topk_eigpairs_stiefel: only hessian-conjugacy CG is available on the Stiefel manifold");
    if (!looks_symmetric(a, opts.symmetry_seed)) throw std::invalid_argument("topk_eigpairs_stiefel: operator is not symmetric");

    StiefelRayleighProblem problem(&a, n_diag);
    CgEngine<StiefelRayleighProblem> engine(problem, StiefelPoint(p0), opts.cg);

    TopkRecord pending;
    engine.pre_step = [&](StiefelPoint& x) {
        pending = TopkRecord{};
        pending.orthonormality = orthonormality_error(x.p);
        pending.resorted = apply_sort_policy(x, problem, opts.sort, pending.diag);
        return pending.resorted;
    };

    EigResult out;
    const long base = a.applications();
    int failures = 0;
    for (int i = 0;; ++i) {
        const bool last = i >= opts.cg.stop.max_iters;
        const long before = a.applications();
        const StepReport rep = engine.step(!last);
        IterRecord rec{i, -rep.f, rep.grad_norm, rep.t, std::nan(""), rep.reset, rep.evals};
        if (opts.reference) rec.dist = std::abs(-rep.f - *opts.reference);
        out.trace.records.push_back(rec);
        pending.applications = a.applications() - before;
        out.details.push_back(pending);
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
        if (recs.size() >= 2 && detail::f_stalled(opts.cg.stop, recs[recs.size() - 2].f, rec.f)) {
            out.trace.converged = true;
            out.trace.status = "f_tol";
            break;
        }
    }
    const StiefelPoint& fin = engine.point();
    const Mat& ap = problem.ap(fin);
    out.frame = fin.p;
    out.eigenvalues = frame_diag(fin.p, ap);
    out.residual = (ap - fin.p * out.eigenvalues.asDiagonal()).norm();
    out.n_final = problem.rho().n_diag();
    out.applications = a.applications() - base;
    out.status = out.trace.status;
    if (opts.canonical_signs) canonicalize_signs(out.frame);
    return out;
}

EigResult topk_left_singular(const Mat& k_data, const Vec& n_diag, const Mat& p0, const TopkOptions& opts) {
    const SymOperator a = SymOperator::from_factor(k_data);
    return topk_eigpairs_stiefel(a, n_diag, p0, opts);
}

}  // namespace riemann
