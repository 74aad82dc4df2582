#include "riemann/objectives.hpp"

#include <Eigen/LU>

#include <cmath>

namespace riemann {

// ------------------------------------------------------------- operator

SymOperator SymOperator::from_matrix(Mat a) {
    SymOperator op;
    op.assign_matrix(std::move(a));
    op.version_ = 0;
    return op;
}

SymOperator SymOperator::from_factor(Mat l) {
    SymOperator op;
    op.assign_factor(std::move(l));
    op.version_ = 0;
    return op;
}

void SymOperator::assign_matrix(Mat a) {
    if (a.rows() != a.cols()) throw std::invalid_argument("SymOperator: matrix must be square");
    if (!a.allFinite()) throw std::invalid_argument("SymOperator: non-finite entries");
    m_ = std::move(a);
    factored_ = false;
    ++version_;
}

void SymOperator::assign_factor(Mat l) {
    if (!l.allFinite()) throw std::invalid_argument("SymOperator: non-finite entries");
    m_ = std::move(l);
    factored_ = true;
    ++version_;
}

Mat SymOperator::apply(const Mat& v) const {
    if (v.rows() != m_.rows()) throw std::invalid_argument("SymOperator::apply: dimension mismatch");
    count_ += v.cols();
    if (factored_) return m_ * (m_.transpose() * v);
    return m_ * v;
}

Mat SymOperator::dense() const { return factored_ ? Mat(m_ * m_.transpose()) : m_; }

bool looks_symmetric(const SymOperator& a, std::uint64_t seed, int samples, double tol) {
    std::mt19937_64 rng(seed);
    for (int s = 0; s < samples; ++s) {
        const Mat vw = random_normal(a.dim(), 2, rng);
        const Mat avw = a.apply(vw);
        const double lhs = avw.col(0).dot(vw.col(1));
        const double rhs = vw.col(0).dot(avw.col(1));
        const double scale = avw.norm() * vw.norm();
        if (std::abs(lhs - rhs) > tol * (scale + 1e-300)) return false;
    }
    return true;
}

bool similarly_ordered(const Vec& a, const Vec& b) {
    if (a.size() != b.size()) throw std::invalid_argument("similarly_ordered: size mismatch");
    for (Eigen::Index i = 0; i < a.size(); ++i)
        for (Eigen::Index j = i + 1; j < a.size(); ++j)
            if ((a(i) - a(j)) * (b(i) - b(j)) < 0.0) return false;
    return true;
}

// ------------------------------------------------------------- sphere

Rayleigh::Rayleigh(Mat q) : q_(std::move(q)) {
    if (q_.rows() != q_.cols() || (q_ - q_.transpose()).norm() > 1e-12 * (1.0 + q_.norm()))
        throw std::invalid_argument("Rayleigh: Q must be symmetric");
}

double Rayleigh::value(const Vec& x) const { return x.dot(q_ * x); }

Vec Rayleigh::gradient(const Vec& x) const {
    const Vec qx = q_ * x;
    return 2.0 * (qx - x.dot(qx) * x);
}

Vec Rayleigh::hess_apply(const Vec& x, const Vec& u) const {
    const double rho = value(x);
    const Vec w = q_ * u - rho * u;
    return 2.0 * (w - x.dot(w) * x);
}

double Rayleigh::hess(const Vec& x, const Vec& u, const Vec& v) const { return u.dot(hess_apply(x, v)); }

std::optional<Vec> Rayleigh::newton_solve(const Vec& x, const Vec& rhs) const {
    const int n = static_cast<int>(x.size());
    const Vec qx = q_ * x;
    const double rho = x.dot(qx);
    if ((qx - rho * x).norm() <= 1e-15 * (1.0 + q_.norm())) return std::nullopt;
    const Mat shifted = q_ - rho * Mat::Identity(n, n);
    const Eigen::PartialPivLU<Mat> lu(shifted);
    const Vec w = lu.solve(0.5 * rhs);
    const Vec z = lu.solve(x);
    const double denom = x.dot(z);
    if (!w.allFinite() || !z.allFinite() || denom == 0.0 || !std::isfinite(denom)) return std::nullopt;
    Vec u = w - (x.dot(w) / denom) * z;
    u -= x.dot(u) * x;
    return u;
}

// ------------------------------------------------------------- SO(n)

namespace {

double frob(const Mat& a, const Mat& b) { return (a.array() * b.array()).sum(); }

Mat diag_part(const Mat& h) { return Mat(h.diagonal().asDiagonal()); }

}  // namespace

SoNewtonResult so_linear_cg(const std::function<Mat(const Mat&)>& op, const Mat& rhs, double rel_tol, int max_iter) {
    SoNewtonResult out;
    out.x = Mat::Zero(rhs.rows(), rhs.cols());
    const double bnorm = rhs.norm();
    if (bnorm == 0.0) {
        out.converged = true;
        return out;
    }
    Mat r = rhs;
    Mat d = r;
    double rr = frob(r, r);
    for (int it = 0; it < max_iter; ++it) {
        const Mat bd = op(d);
        const double curv = frob(d, bd);
        if (curv <= 0.0) {
            out.indefinite = true;
            out.iterations = it;
            out.residual = std::sqrt(rr) / bnorm;
            return out;
        }
        const double alpha = rr / curv;
        out.x += alpha * d;
        r -= alpha * bd;
        const double rr_new = frob(r, r);
        out.iterations = it + 1;
        if (std::sqrt(rr_new) <= rel_tol * bnorm) {
            out.converged = true;
            out.residual = std::sqrt(rr_new) / bnorm;
            return out;
        }
        d = r + (rr_new / rr) * d;
        rr = rr_new;
    }
    out.residual = std::sqrt(rr) / bnorm;
    return out;
}

TraceQN::TraceQN(Mat q, Vec n_diag) : q_(std::move(q)), n_(std::move(n_diag)) {
    if (q_.rows() != q_.cols() || q_.rows() != n_.size()) throw std::invalid_argument("TraceQN: dimension mismatch");
}

double TraceQN::value(const Mat& theta) const { return (h(theta).diagonal().array() * n_.array()).sum(); }

Mat TraceQN::gradient(const Mat& theta) const { return commutator(h(theta), Mat(n_.asDiagonal())); }

Mat TraceQN::newton_operator(const Mat& theta, const Mat& x) const {
    const Mat hh = h(theta);
    const Mat nn = n_.asDiagonal();
    return commutator(hh, commutator(x, nn)) - commutator(commutator(x, hh), nn);
}

double TraceQN::hess(const Mat& theta, const Mat& x, const Mat& y) const {
    return -0.5 * (newton_operator(theta, x) * y).trace();
}

SoNewtonResult TraceQN::newton_direction(const Mat& theta, double rel_tol, int max_iter) const {
    const int n = static_cast<int>(n_.size());
    if (max_iter < 0) max_iter = n * (n - 1) / 2 + 50;
    const Mat hh = h(theta);
    const Mat nn = n_.asDiagonal();
    auto neg_l = [&](const Mat& x) -> Mat { return commutator(commutator(x, hh), nn) - commutator(hh, commutator(x, nn)); };
    return so_linear_cg(neg_l, 2.0 * commutator(hh, nn), rel_tol, max_iter);
}

JacobiObjective::JacobiObjective(Mat q) : q_(std::move(q)) {
    if (q_.rows() != q_.cols()) throw std::invalid_argument("JacobiObjective: Q must be square");
}

double JacobiObjective::value(const Mat& theta) const { return h(theta).diagonal().squaredNorm(); }

Mat JacobiObjective::gradient(const Mat& theta) const {
    const Mat hh = h(theta);
    return 2.0 * commutator(hh, diag_part(hh));
}

Mat JacobiObjective::newton_operator(const Mat& theta, const Mat& x) const {
    const Mat hh = h(theta);
    const Mat d = diag_part(hh);
    const Mat hx = commutator(hh, x);
    const Mat m = 2.0 * commutator(diag_part(hx), hh) + commutator(d, hx) + commutator(commutator(x, d), hh);
    return -m;
}

double JacobiObjective::hess(const Mat& theta, const Mat& x, const Mat& y) const {
    return -(newton_operator(theta, x) * y).trace();
}

SoNewtonResult JacobiObjective::newton_direction(const Mat& theta, double rel_tol, int max_iter) const {
    const int n = static_cast<int>(q_.rows());
    if (max_iter < 0) max_iter = n * (n - 1) / 2 + 50;
    auto neg_l = [&](const Mat& x) -> Mat { return -newton_operator(theta, x); };
    return so_linear_cg(neg_l, gradient(theta), rel_tol, max_iter);
}

// ------------------------------------------------------------- Stiefel

GenRayleigh::GenRayleigh(const SymOperator* a, Vec n_diag) : a_(a), n_(std::move(n_diag)) {
    if (a_ == nullptr) throw std::invalid_argument("GenRayleigh: null operator");
    if (n_.size() > a_->dim()) throw std::invalid_argument("GenRayleigh: k > n");
}

void GenRayleigh::set_n(Vec n_diag) {
    if (n_diag.size() != n_.size()) throw std::invalid_argument("GenRayleigh::set_n: size mismatch");
    n_ = std::move(n_diag);
}

double GenRayleigh::value_cached(const Mat& p, const Mat& ap) const {
    return ((p.array() * ap.array()).colwise().sum().transpose() * n_.array()).sum();
}

double GenRayleigh::value(const Mat& p) const { return value_cached(p, apply(p)); }

TangentM GenRayleigh::gradient(const StiefelCoset& g, const Mat& ap) const {
    const int k = this->k();
    const Mat c = g.apply_transpose(ap * n_.asDiagonal());
    const Mat top = c.topRows(k);
    return {top - top.transpose(), c.bottomRows(c.rows() - k)};
}

double GenRayleigh::hess(const StiefelCoset& g, const Mat& ap, const TangentM& x, const Mat& ax_amb,
                         const TangentM& y) const {
    const Mat e = g.apply_transpose(ap);
    const Mat w = x.act(y.stacked()) + y.act(x.stacked());
    const Mat y_amb = g.ambient(y);
    const auto nn = n_.asDiagonal();
    return (e.transpose() * w * nn).trace() + 2.0 * (y_amb.transpose() * ax_amb * nn).trace();
}

double GenRayleigh::hess(const StiefelCoset& g, const Mat& ap, const TangentM& x, const TangentM& y) const {
    return hess(g, ap, x, apply(g.ambient(x)), y);
}

double GenRayleigh::phi_prime0(const StiefelCoset& g, const Mat& ap, const TangentM& x) const {
    return 2.0 * (ap.transpose() * g.ambient(x) * n_.asDiagonal()).trace();
}

// sigma' ------------------------------------------------------------

SigmaPrime::SigmaPrime(Mat a, Vec n_diag) : a_(std::move(a)), n_(std::move(n_diag)) {}

Mat SigmaPrime::normalized(const Mat& p) const {
    if (p.rows() != a_.rows() || p.cols() != n_.size()) throw std::invalid_argument("SigmaPrime: dimension mismatch");
    Mat b = a_.transpose() * p;
    const double floor = 1e-12 * a_.norm();
    for (Eigen::Index j = 0; j < b.cols(); ++j) {
        const double nb = b.col(j).norm();
        if (nb <= floor) throw std::domain_error("SigmaPrime: non-differentiable point (A^T p has a zero column)");
        b.col(j) /= nb;
    }
    return b;
}

double SigmaPrime::value(const Mat& p) const {
    const Mat q = normalized(p);
    return (q.transpose() * a_.transpose() * p * n_.asDiagonal()).trace();
}

TangentM SigmaPrime::gradient(const StiefelCoset& g) const {
    const int k = static_cast<int>(n_.size());
    const Mat q = normalized(g.point());
    const Mat c = g.apply_transpose(a_ * q * n_.asDiagonal());
    return {skew_part(c.topRows(k)), 0.5 * c.bottomRows(c.rows() - k)};
}

double SigmaPrime::directional(const StiefelGeodesic& geo, double t) const {
    const Mat q = normalized(geo.point(t));
    return (n_.asDiagonal() * q.transpose() * a_.transpose() * geo.velocity(t)).trace();
}

double SigmaPrime::hess(const StiefelCoset& g, const TangentM& x, const TangentM& y) const {
    auto quad = [&](const TangentM& v) {
        const double nv = norm(v);
        if (nv == 0.0) return 0.0;
        const double h = 1e-4 / nv;
        const StiefelGeodesic geo(g, v);
        return (directional(geo, h) - directional(geo, -h)) / (2.0 * h);
    };
    return 0.25 * (quad(x + y) - quad(x - y));
}

// sigma'' -----------------------------------------------------------

double inner(const TangentPair& x, const TangentPair& y) { return inner(x.p, y.p) + inner(x.q, y.q); }

SigmaDouble::SigmaDouble(Mat a, Vec n_diag) : a_(std::move(a)), n_(std::move(n_diag)) {}

double SigmaDouble::value(const Mat& p, const Mat& q) const {
    if (p.rows() != a_.rows() || q.rows() != a_.cols() || p.cols() != n_.size() || q.cols() != n_.size())
        throw std::invalid_argument("SigmaDouble: dimension mismatch");
    return (p.transpose() * a_ * q * n_.asDiagonal()).trace();
}

TangentPair SigmaDouble::gradient(const StiefelCoset& gp, const StiefelCoset& gq) const {
    const int k = static_cast<int>(n_.size());
    const Mat p = gp.point(), q = gq.point();
    const Mat cp = gp.apply_transpose(a_ * q * n_.asDiagonal());
    const Mat cq = gq.apply_transpose(a_.transpose() * p * n_.asDiagonal());
    return {{skew_part(cp.topRows(k)), 0.5 * cp.bottomRows(cp.rows() - k)},
            {skew_part(cq.topRows(k)), 0.5 * cq.bottomRows(cq.rows() - k)}};
}

double SigmaDouble::directional(const StiefelGeodesic& gp, const StiefelGeodesic& gq, double t) const {
    const Mat p = gp.point(t), q = gq.point(t);
    const auto nn = n_.asDiagonal();
    return (gp.velocity(t).transpose() * a_ * q * nn).trace() + (p.transpose() * a_ * gq.velocity(t) * nn).trace();
}

double SigmaDouble::hess(const StiefelCoset& gp, const StiefelCoset& gq, const TangentPair& x,
                         const TangentPair& y) const {
    auto quad = [&](const TangentM& vp, const TangentM& vq) {
        const double nv = std::sqrt(inner(vp, vp) + inner(vq, vq));
        if (nv == 0.0) return 0.0;
        const double h = 1e-4 / nv;
        const StiefelGeodesic geop(gp, vp), geoq(gq, vq);
        return (directional(geop, geoq, h) - directional(geop, geoq, -h)) / (2.0 * h);
    };
    return 0.25 * (quad(x.p + y.p, x.q + y.q) - quad(x.p - y.p, x.q - y.q));
}

}  // namespace riemann
