#include "riemann/flows.hpp"

#include "riemann/manifolds.hpp"
#include "riemann/objectives.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>

namespace riemann {

namespace {

double bracket_scale(Eigen::Index m) { return m <= 2 ? 1.0 : static_cast<double>(m - 2); }

Vec spectrum(const Mat& h) {
    const Eigen::SelfAdjointEigenSolver<Mat> es(sym_part(h), Eigen::EigenvaluesOnly);
    return es.eigenvalues();
}

Vec singular_values(const Mat& s) { return Eigen::JacobiSVD<Mat>(s).singularValues(); }

void require_positive_step(double t_end, double dt, const char* what) {
    if (!(dt > 0.0)) throw std::invalid_argument(std::string(what) + ": dt must be positive");
    if (!(t_end >= 0.0)) throw std::invalid_argument(std::string(what) + ": t_end must be nonnegative");
}

}  // namespace

Mat svd_bracket(const Mat& a, const Mat& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument("svd_bracket: shape mismatch");
    return (a * b.transpose() - b * a.transpose()) / bracket_scale(a.rows());
}

FlowTrace rk4_integrate(const FlowRhs& rhs, const Mat& x0, double t_end, double dt, const Rk4Options& opts) {
    require_positive_step(t_end, dt, "rk4_integrate");
    const int every = std::max(1, opts.record_every);
    FlowTrace out;
    auto record = [&](double t, const Mat& x) {
        FlowSample s;
        s.t = t;
        s.state = opts.observe ? opts.observe(x) : x;
        if (opts.objective) s.objective = opts.objective(x);
        if (opts.drift) s.drift = opts.drift(x);
        out.max_drift = std::max(out.max_drift, s.drift);
        out.samples.push_back(std::move(s));
    };
    Mat x = x0;
    record(0.0, x);
    const long steps = static_cast<long>(std::ceil(t_end / dt - 1e-9));
    double t = 0.0;
    for (long i = 1; i <= steps; ++i) {
        const double h = std::min(dt, t_end - t);
        const Mat k1 = rhs(t, x);
        const Mat k2 = rhs(t + 0.5 * h, x + 0.5 * h * k1);
        const Mat k3 = rhs(t + 0.5 * h, x + 0.5 * h * k2);
        const Mat k4 = rhs(t + h, x + h * k3);
        x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        t = i == steps ? t_end : t + h;
        if (!x.allFinite()) {
            out.status = "non_finite";
            break;
        }
        if (opts.project && opts.project(x)) ++out.projections;
        if (i % every == 0 || i == steps) record(t, x);
    }
    return out;
}

FlowTrace double_bracket_flow(const Mat& h0, const Mat& n, double t_end, double dt, int record_every) {
    if (h0.rows() != h0.cols() || n.rows() != h0.rows() || n.cols() != h0.cols())
        throw std::invalid_argument("double_bracket_flow: H and N must be square of the same size");
    if ((h0 - h0.transpose()).norm() > 1e-12 * (1.0 + h0.norm()))
        throw std::invalid_argument("double_bracket_flow: H must be symmetric");
    const Vec spec0 = spectrum(h0);
    Rk4Options opts;
    opts.record_every = record_every;
    opts.objective = [&](const Mat& h) { return (h * n).trace(); };
    opts.drift = [&](const Mat& h) { return (spectrum(h) - spec0).cwiseAbs().maxCoeff(); };
    auto rhs = [&](double, const Mat& h) { return Mat(commutator(h, commutator(h, n))); };
    return rk4_integrate(rhs, h0, t_end, dt, opts);
}

FlowTrace so_gradient_flow(const Mat& q, const Mat& n, const Mat& theta0, double t_end, double dt, int record_every) {
    const Eigen::Index m = q.rows();
    if (q.cols() != m || n.rows() != m || n.cols() != m || theta0.rows() != m || theta0.cols() != m)
        throw std::invalid_argument("so_gradient_flow: size mismatch");
    if (orthonormality_error(theta0) > 1e-9 || theta0.determinant() < 0.0)
        throw std::invalid_argument("so_gradient_flow: start must be in SO(n)");
    Rk4Options opts;
    opts.record_every = record_every;
    opts.objective = [&](const Mat& th) { return (th.transpose() * q * th * n).trace(); };
    opts.drift = [](const Mat& th) { return orthonormality_error(th); };
    opts.project = [](Mat& th) {
        if (orthonormality_error(th) <= 1e-9) return false;
        th = polar_frame(th);
        return true;
    };
    auto rhs = [&](double, const Mat& th) {
        const Mat h = th.transpose() * q * th;
        return Mat(th * commutator(h, n));
    };
    return rk4_integrate(rhs, theta0, t_end, dt, opts);
}

FlowTrace genray_flow(const Mat& a, const Vec& n_diag, const Mat& p0, double t_end, double dt, int record_every) {
    require_positive_step(t_end, dt, "genray_flow");
    if (a.rows() != a.cols() || p0.rows() != a.rows() || p0.cols() != n_diag.size())
        throw std::invalid_argument("genray_flow: size mismatch");
    if (orthonormality_error(p0) > 1e-9) throw std::invalid_argument("genray_flow: start frame is not orthonormal");
    const SymOperator op = SymOperator::from_matrix(a);
    const GenRayleigh rho(&op, n_diag);
    const int every = std::max(1, record_every);
    FlowTrace out;
    auto record = [&](double t, const Mat& p) {
        FlowSample s;
        s.t = t;
        s.state = p;
        s.objective = rho.value(p);
        s.drift = orthonormality_error(p);
        out.max_drift = std::max(out.max_drift, s.drift);
        out.samples.push_back(std::move(s));
    };
    Mat p = p0;
    record(0.0, p);
    const long steps = static_cast<long>(std::ceil(t_end / dt - 1e-9));
    double t = 0.0;
    for (long i = 1; i <= steps; ++i) {
        const double h = std::min(dt, t_end - t);
        const StiefelCoset g(p);
        const TangentM grad = rho.gradient(g, op.apply(g.point()));
        p = stiefel_exp(g, grad, h);
        t = i == steps ? t_end : t + h;
        if (!p.allFinite()) {
            out.status = "non_finite";
            break;
        }
        if (i % every == 0 || i == steps) record(t, p);
    }
    return out;
}

FlowTrace svd_flow_sigma(const Mat& sigma0, const Mat& n, double t_end, double dt, int record_every) {
    if (n.rows() != sigma0.rows() || n.cols() != sigma0.cols())
        throw std::invalid_argument("svd_flow_sigma: Sigma and N must have the same shape");
    if (sigma0.rows() < sigma0.cols()) throw std::invalid_argument("svd_flow_sigma: need n >= k");
    const Vec sv0 = singular_values(sigma0);
    Rk4Options opts;
    opts.record_every = record_every;
    opts.objective = [&](const Mat& s) { return (n.transpose() * s).trace(); };
    opts.drift = [&](const Mat& s) { return (singular_values(s) - sv0).cwiseAbs().maxCoeff(); };
    auto rhs = [&](double, const Mat& s) {
        return Mat(s * svd_bracket(s.transpose(), n.transpose()) - svd_bracket(s, n) * s);
    };
    return rk4_integrate(rhs, sigma0, t_end, dt, opts);
}

FlowTrace svd_flow_uv(const Mat& k, const Mat& n, const Mat& u0, const Mat& v0, double t_end, double dt,
                      int record_every) {
    const Eigen::Index rows = k.rows(), cols = k.cols();
    if (n.rows() != rows || n.cols() != cols) throw std::invalid_argument("svd_flow_uv: K and N must have the same shape");
    if (rows < cols) throw std::invalid_argument("svd_flow_uv: need n >= k");
    if (u0.rows() != rows || u0.cols() != rows || v0.rows() != cols || v0.cols() != cols)
        throw std::invalid_argument("svd_flow_uv: U must be n x n and V k x k");
    if (orthonormality_error(u0) > 1e-9 || orthonormality_error(v0) > 1e-9)
        throw std::invalid_argument("svd_flow_uv: U and V must be orthogonal");

    // The pair is integrated as the block diagonal matrix diag(U, V).
    const Eigen::Index m = rows + cols;
    auto u_of = [rows](const Mat& x) { return x.topLeftCorner(rows, rows); };
    auto v_of = [rows, cols](const Mat& x) { return x.bottomRightCorner(cols, cols); };
    Mat x0 = Mat::Zero(m, m);
    x0.topLeftCorner(rows, rows) = u0;
    x0.bottomRightCorner(cols, cols) = v0;

    Rk4Options opts;
    opts.record_every = record_every;
    opts.observe = [&](const Mat& x) { return Mat(u_of(x).transpose() * k * v_of(x)); };
    opts.objective = [&](const Mat& x) { return (n.transpose() * u_of(x).transpose() * k * v_of(x)).trace(); };
    double pre_projection = 0.0;
    opts.drift = [&](const Mat&) { return pre_projection; };
    Mat latest = x0;
    opts.project = [&](Mat& x) {
        latest = x;
        const double du = orthonormality_error(u_of(x)), dv = orthonormality_error(v_of(x));
        pre_projection = std::max(du, dv);
        bool changed = false;
        if (du > 1e-9) {
            x.topLeftCorner(rows, rows) = polar_frame(u_of(x));
            changed = true;
        }
        if (dv > 1e-9) {
            x.bottomRightCorner(cols, cols) = polar_frame(v_of(x));
            changed = true;
        }
        if (changed) latest = x;
        return changed;
    };
    auto rhs = [&](double, const Mat& x) {
        const Mat u = u_of(x), v = v_of(x);
        const Mat s = u.transpose() * k * v;
        Mat d = Mat::Zero(m, m);
        d.topLeftCorner(rows, rows) = u * svd_bracket(s, n);
        d.bottomRightCorner(cols, cols) = v * svd_bracket(s.transpose(), n.transpose());
        return d;
    };
    FlowTrace out = rk4_integrate(rhs, x0, t_end, dt, opts);
    out.u = u_of(latest);
    out.v = v_of(latest);
    return out;
}

SvdReferenceProblem svd_reference_problem() {
    SvdReferenceProblem p;
    p.u0.resize(7, 7);
    p.u0 << -0.210, -0.091, 0.455, 0.668, -0.217, 0.490, 0.085,  //
        0.495, 0.365, 0.469, 0.291, 0.183, -0.413, -0.335,       //
        0.191, 0.647, 0.058, -0.237, -0.578, 0.154, 0.356,       //
        0.288, -0.285, 0.403, -0.539, -0.089, 0.461, -0.404,     //
        -0.490, -0.022, 0.633, -0.339, 0.130, -0.340, 0.333,     //
        -0.426, 0.598, -0.064, -0.088, 0.438, 0.364, -0.353,     //
        -0.412, -0.005, -0.046, 0.017, -0.607, -0.325, -0.595;
    p.v0.resize(5, 5);
    p.v0 << 0.679, 0.524, 0.091, -0.438, 0.253,  //
        -0.521, 0.427, 0.406, 0.137, 0.602,      //
        0.504, -0.108, 0.315, 0.788, 0.120,      //
        -0.032, -0.089, 0.839, -0.255, -0.472,   //
        0.113, -0.723, 0.156, -0.322, 0.579;
    p.u0 = gram_schmidt(p.u0);
    p.v0 = gram_schmidt(p.v0);
    p.k = Mat::Zero(7, 5);
    p.n = Mat::Zero(7, 5);
    p.singular_values.resize(5);
    p.nu.resize(5);
    for (int i = 0; i < 5; ++i) {
        p.k(i, i) = i + 1;
        p.n(i, i) = 5 - i;
        p.singular_values(i) = 5 - i;
        p.nu(i) = 5 - i;
    }
    return p;
}

// ------------------------------------------------------------- rates

RateReport rate_regression(const FlowTrace& trace, const std::vector<std::pair<int, int>>& entries,
                           const RateWindow& window) {
    RateReport rep;
    for (const auto& [i, j] : entries) {
        RateEntry e;
        e.i = i;
        e.j = j;
        std::vector<double> ts, ls;
        for (const FlowSample& s : trace.samples) {
            const Mat& st = s.state;
            if (i < 0 || j < 0 || i >= st.rows() || j >= st.cols())
                throw std::invalid_argument("rate_regression: entry outside the state");
            const double v = std::abs(st(i, j));
            if (v >= window.lo && v <= window.hi) {
                ts.push_back(s.t);
                ls.push_back(std::log(v));
            }
        }
        // The tail is taken per entry over its in-range samples: fast entries
        // leave the range long before a slow entry enters its asymptotic regime.
        const size_t drop = ts.size() - static_cast<size_t>(std::floor(window.tail_fraction * static_cast<double>(ts.size())));
        ts.erase(ts.begin(), ts.begin() + static_cast<std::ptrdiff_t>(drop));
        ls.erase(ls.begin(), ls.begin() + static_cast<std::ptrdiff_t>(drop));
        e.samples = static_cast<int>(ts.size());
        if (e.samples >= window.min_samples) {
            const double cnt = static_cast<double>(ts.size());
            double st = 0, sl = 0, stt = 0, stl = 0;
            for (size_t q = 0; q < ts.size(); ++q) {
                st += ts[q];
                sl += ls[q];
                stt += ts[q] * ts[q];
                stl += ts[q] * ls[q];
            }
            const double den = cnt * stt - st * st;
            if (den > 0.0) {
                const double slope = (cnt * stl - st * sl) / den;
                const double icpt = (sl - slope * st) / cnt;
                double ss = 0.0;
                for (size_t q = 0; q < ts.size(); ++q) {
                    const double r = ls[q] - (icpt + slope * ts[q]);
                    ss += r * r;
                }
                e.measurable = true;
                e.measured = -slope;
                e.residual = std::sqrt(ss / cnt);
            }
        }
        rep.entries.push_back(e);
    }
    return rep;
}

Mat svd_rate_matrix_sigma(double s_i, double s_j, double nu_i, double nu_j, int n, int k) {
    const double cn = bracket_scale(n), ck = bracket_scale(k);
    Mat r(2, 2);
    r << nu_i * s_i / ck + nu_j * s_j / cn, -nu_j * s_i / ck - nu_i * s_j / cn,  //
        -nu_j * s_i / cn - nu_i * s_j / ck, nu_i * s_i / cn + nu_j * s_j / ck;
    return r;
}

Mat svd_rate_matrix_uv(double s_i, double s_j, double nu_i, double nu_j, int n, int k) {
    const double cn = bracket_scale(n), ck = bracket_scale(k);
    const double diag = nu_i * s_i + nu_j * s_j, cross = nu_i * s_j + nu_j * s_i;
    Mat r(2, 2);
    r << diag / cn, -cross / cn,  //
        -cross / ck, diag / ck;
    return r;
}

double svd_predicted_rate(const Vec& d, const Vec& nu, int i, int j, int n, int k) {
    if (i == j || i < 0 || j < 0 || i >= n || j >= k || d.size() != k || nu.size() != k)
        throw std::invalid_argument("svd_predicted_rate: bad entry or sizes");
    if (i >= k) return nu(j) * std::abs(d(j)) / bracket_scale(n);
    const Mat r = svd_rate_matrix_sigma(std::abs(d(i)), std::abs(d(j)), nu(i), nu(j), n, k);
    // Both roots are real: the discriminant is a sum of squares.
    const double tr = r.trace(), det = r.determinant();
    const double disc = std::sqrt(std::max(0.0, tr * tr / 4.0 - det));
    return tr / 2.0 - disc;
}

void attach_svd_predictions(RateReport& report, const Vec& d, const Vec& nu, int n, int k) {
    for (auto& e : report.entries) e.predicted = svd_predicted_rate(d, nu, e.i, e.j, n, k);
    if (n == k)
        report.notes.push_back(
            "square input: for symmetric Sigma the time variable runs at k - 2 times the double-bracket "
            "time; measured rates are not rescaled");
}

double genray_predicted_rate(const Vec& lambda, const Vec& nu, int i, int j) {
    const int k = static_cast<int>(nu.size());
    if (i == j || j >= k || i >= lambda.size() || i < 0 || j < 0)
        throw std::invalid_argument("genray_predicted_rate: bad entry");
    if (i >= k) return (lambda(j) - lambda(i)) * nu(j);
    return (lambda(i) - lambda(j)) * (nu(i) - nu(j));
}

}  // namespace riemann
