#include "riemann/optimizers.hpp"

namespace riemann {

// ------------------------------------------------------------- sphere

// x is renormalized and h projected onto its tangent space; without this,
// round-off in |x| is amplified from one step to the next.
SphereRayleighProblem::Line::Line(const SphereRayleighProblem& pr, const Vec& x, const Vec& h)
    : pr_(&pr), x_(x / x.norm()) {
    u_ = h - x_.dot(h) * x_;
    speed_ = u_.norm();
    if (speed_ > 0.0) u_ /= speed_;
    const Mat& q = pr.rayleigh().q();
    const Vec qx = q * x;
    const Vec qu = q * u_;
    xqx_ = x.dot(qx);
    xqu_ = x.dot(qu);
    uqu_ = u_.dot(qu);
}

double SphereRayleighProblem::Line::phi(double t) const {
    const double c = std::cos(speed_ * t), s = std::sin(speed_ * t);
    return -(c * c * xqx_ + 2.0 * c * s * xqu_ + s * s * uqu_);
}

double SphereRayleighProblem::Line::dphi(double t) const {
    const double th = 2.0 * speed_ * t;
    return -speed_ * ((uqu_ - xqx_) * std::sin(th) + 2.0 * xqu_ * std::cos(th));
}

double SphereRayleighProblem::Line::d2phi0() const { return -2.0 * speed_ * speed_ * (uqu_ - xqx_); }

Vec SphereRayleighProblem::Line::point(double t) const {
    const double th = speed_ * t;
    return x_ * std::cos(th) + u_ * std::sin(th);
}

Vec SphereRayleighProblem::Line::transport_direction(double t, const Vec&) const {
    const double th = speed_ * t;
    return speed_ * (u_ * std::cos(th) - x_ * std::sin(th));
}

Vec SphereRayleighProblem::Line::transport(double t, const Vec&, const Vec& v) const {
    const double th = speed_ * t;
    return v - u_.dot(v) * (x_ * std::sin(th) + u_ * (1.0 - std::cos(th)));
}

std::pair<double, double> SphereRayleighProblem::Line::conjugacy(double, const Vec& at, const Vec& tau_h,
                                                                 const Vec& g) const {
    const Vec ht = pr_->rayleigh().hess_apply(at, tau_h);
    return {-ht.dot(g), -ht.dot(tau_h)};
}

// ------------------------------------------------------------- Stiefel

const Mat& StiefelRayleighProblem::ap(const StiefelPoint& x) const {
    if (!x.has_ap || x.ap_version != rho_.op().version()) {
        x.ap = rho_.apply(x.p);
        x.ap_version = rho_.op().version();
        x.has_ap = true;
    }
    return x.ap;
}

namespace {

// sum_j nu_j (u^T c v)_jj
double weighted_trace(const Mat& u, const Mat& c, const Mat& v, const Vec& nu) {
    const Mat cv = c * v;
    return ((u.array() * cv.array()).colwise().sum().transpose() * nu.array()).sum();
}

}  // namespace

StiefelRayleighProblem::Line::Line(const StiefelRayleighProblem& pr, const StiefelPoint& x, const TangentM& h)
    : pr_(&pr), geo_(x.g, h), h_(h) {
    reduced_ = geo_.reduced();
    version_ = pr.rho().op().version();
    if (reduced_) {
        const int k = h.k();
        basis_ = geo_.basis();
        abasis_.resize(basis_.rows(), 2 * k);
        abasis_.leftCols(k) = pr.ap(x);
        abasis_.rightCols(k) = pr.rho().apply(basis_.rightCols(k));
        c2_ = sym_part(basis_.transpose() * abasis_);
    } else {
        basis_ = x.p;
        abasis_ = pr.ap(x);
    }
}

double StiefelRayleighProblem::Line::phi(double t) const {
    const Vec& nu = pr_->rho().n_diag();
    if (reduced_) {
        const Mat y = geo_.coefficients(t);
        return -weighted_trace(y, c2_, y, nu);
    }
    if (t == 0.0) return -pr_->rho().value_cached(basis_, abasis_);
    return -pr_->rho().value(geo_.point(t));
}

double StiefelRayleighProblem::Line::dphi(double t) const {
    const Vec& nu = pr_->rho().n_diag();
    if (reduced_) {
        const Mat y = geo_.coefficients(t);
        const Mat yd = geo_.coefficient_rate(t);
        return -2.0 * weighted_trace(y, c2_, yd, nu);
    }
    const Mat pt = geo_.point(t);
    const Mat apt = t == 0.0 ? abasis_ : pr_->rho().apply(pt);
    const Mat vel = geo_.velocity(t);
    return -2.0 * ((apt.array() * vel.array()).colwise().sum().transpose() * nu.array()).sum();
}

double StiefelRayleighProblem::Line::d2phi0() const {
    const Vec& nu = pr_->rho().n_diag();
    const int k = h_.k();
    if (!reduced_) {
        StiefelPoint at(basis_);
        at.ap = abasis_;
        at.ap_version = version_;
        at.has_ap = true;
        return pr_->hess(at, h_, h_);
    }
    Mat y0 = Mat::Zero(2 * k, k), y1(2 * k, k), y2(2 * k, k);
    y0.topRows(k) = Mat::Identity(k, k);
    y1.topRows(k) = h_.a;
    y1.bottomRows(k) = Mat::Identity(k, k);
    y2.topRows(k) = h_.a * h_.a - h_.b.transpose() * h_.b;
    y2.bottomRows(k) = h_.a;
    return -2.0 * (weighted_trace(y2, c2_, y0, nu) + weighted_trace(y1, c2_, y1, nu));
}

StiefelPoint StiefelRayleighProblem::Line::point(double t) const { return StiefelPoint(geo_.point(t)); }

TangentM StiefelRayleighProblem::Line::transport_direction(double t, const StiefelPoint& at) const {
    const Mat m = at.g.apply_transpose(geo_.velocity(t));
    return {h_.a, m.bottomRows(m.rows() - h_.k())};
}

TangentM StiefelRayleighProblem::Line::transport(double, const StiefelPoint&, const TangentM&) const {
    throw std::logic_error("transported-gradient conjugacy is not available on the Stiefel manifold; use hessian mode");
}

Mat StiefelRayleighProblem::Line::a_tau(double t, const StiefelPoint& at, const TangentM& tau_h) const {
    if (reduced_ && version_ == pr_->rho().op().version()) return abasis_ * geo_.coefficient_rate(t);
    return pr_->rho().apply(at.g.ambient(tau_h));
}

std::pair<double, double> StiefelRayleighProblem::Line::conjugacy(double t, const StiefelPoint& at,
                                                                  const TangentM& tau_h, const TangentM& g) const {
    const Mat atau = a_tau(t, at, tau_h);
    const Mat& apt = pr_->ap(at);
    const GenRayleigh& rho = pr_->rho();
    return {-rho.hess(at.g, apt, tau_h, atau, g), -rho.hess(at.g, apt, tau_h, atau, tau_h)};
}

}  // namespace riemann
