#include "riemann/manifolds.hpp"

#include <algorithm>
#include <cmath>

namespace riemann {

// ---------------------------------------------------------------- sphere

Vec sphere_exp(const Vec& x, const Vec& v, double t) {
    if (x.size() != v.size()) throw std::invalid_argument("sphere_exp: dimension mismatch");
    const double nv = v.norm();
    if (std::abs(x.dot(v)) > 1e-10 * (1.0 + nv)) throw std::invalid_argument("sphere_exp: v is not tangent at x");
    if (nv == 0.0 || t == 0.0) return x;
    const double a = t * nv;
    return x * std::cos(a) + (v / nv) * std::sin(a);
}

Vec sphere_transport(const Vec& x, const Vec& h, double t, const Vec& w) {
    if (x.size() != h.size() || x.size() != w.size()) throw std::invalid_argument("sphere_transport: dimension mismatch");
    if (std::abs(h.norm() - 1.0) > 1e-10) throw std::invalid_argument("sphere_transport: direction must be a unit vector");
    const double s = std::sin(t), c = std::cos(t);
    return w - h.dot(w) * (x * s + h * (1.0 - c));
}

double sphere_distance(const Vec& x, const Vec& y) {
    // atan2 form keeps accuracy for nearby points.
    return std::atan2((x - y * x.dot(y)).norm(), x.dot(y));
}

// ----------------------------------------------------------------- SO(n)

Mat so_exp(const Mat& theta, const Mat& omega, double t) {
    require_skew(omega, "so_exp");
    if (t == 0.0) return theta;
    return theta * skew_expm(omega, t);
}

Mat so_transport(const Mat& omega, const Mat& y0, double t) {
    require_skew(omega, "so_transport");
    require_skew(y0, "so_transport");
    const SkewCanonical c = skew_canonical(omega);
    const Mat half = c.expm(0.5 * t);
    return half.transpose() * y0 * half;
}

double so_distance(const Mat& theta, const Mat& psi) {
    if (theta.rows() != psi.rows() || theta.cols() != psi.cols())
        throw std::invalid_argument("so_distance: dimension mismatch");
    const Mat r = theta.transpose() * psi;
    const SkewCanonical c = skew_canonical(skew_part(r));
    const Mat m = c.theta.transpose() * r * c.theta;
    double sum = 0.0;
    const Eigen::Index pairs = c.sigmas.size();
    Eigen::Index used = 0;
    for (Eigen::Index j = 0; j < pairs; ++j) {
        if (c.sigmas(j) <= 0.0) break;
        const double cosine = 0.5 * (m(2 * j, 2 * j) + m(2 * j + 1, 2 * j + 1));
        const double angle = std::atan2(c.sigmas(j), cosine);
        sum += angle * angle;
        used = 2 * (j + 1);
    }
    for (Eigen::Index i = used; i < m.rows(); ++i) {
        const double angle = std::acos(std::clamp(m(i, i), -1.0, 1.0));
        sum += 0.5 * angle * angle;
    }
    return std::sqrt(sum);
}

// ------------------------------------------------------------ Stiefel V(n,k)

Mat TangentM::stacked() const {
    Mat s(n(), k());
    s.topRows(k()) = a;
    s.bottomRows(b.rows()) = b;
    return s;
}

Mat TangentM::full() const {
    const int nn = n(), kk = k();
    Mat x = Mat::Zero(nn, nn);
    x.topLeftCorner(kk, kk) = a;
    x.bottomLeftCorner(nn - kk, kk) = b;
    x.topRightCorner(kk, nn - kk) = -b.transpose();
    return x;
}

Mat TangentM::act(const Mat& u) const {
    const int kk = k();
    const auto top = u.topRows(kk);
    const auto bottom = u.bottomRows(u.rows() - kk);
    Mat out(u.rows(), u.cols());
    out.topRows(kk) = a * top - b.transpose() * bottom;
    out.bottomRows(u.rows() - kk) = b * top;
    return out;
}

TangentM& TangentM::operator+=(const TangentM& o) {
    a += o.a;
    b += o.b;
    return *this;
}
TangentM& TangentM::operator-=(const TangentM& o) {
    a -= o.a;
    b -= o.b;
    return *this;
}
TangentM& TangentM::operator*=(double s) {
    a *= s;
    b *= s;
    return *this;
}
TangentM operator+(TangentM x, const TangentM& y) { return x += y; }
TangentM operator-(TangentM x, const TangentM& y) { return x -= y; }
TangentM operator*(double s, TangentM x) { return x *= s; }
TangentM operator-(TangentM x) { return x *= -1.0; }

double inner(const TangentM& x, const TangentM& y) {
    return (x.a.array() * y.a.array()).sum() + 2.0 * (x.b.array() * y.b.array()).sum();
}

double norm(const TangentM& x) { return std::sqrt(inner(x, x)); }

TangentM tangent_from_stacked(const Mat& s) {
    const Eigen::Index k = s.cols();
    return {skew_part(s.topRows(k)), s.bottomRows(s.rows() - k)};
}

StiefelCoset::StiefelCoset(const Mat& p) {
    if (p.cols() > p.rows()) throw std::invalid_argument("StiefelCoset: k > n");
    if (orthonormality_error(p) > 1e-8) throw std::invalid_argument("StiefelCoset: columns are not orthonormal");
    qr_ = householder_qr(p);
    signs_ = Vec::Ones(qr_.k);
    for (int j = 0; j < qr_.k; ++j)
        if (qr_.r(j, j) < 0.0) signs_(j) = -1.0;
}

Mat StiefelCoset::apply(const Mat& m) const {
    Mat s = m;
    s.topRows(k()).array().colwise() *= signs_.array();
    return apply_q(qr_, s, Side::left);
}

Mat StiefelCoset::apply_transpose(const Mat& m) const {
    Mat s = apply_q(qr_, m, Side::left_transpose);
    s.topRows(k()).array().colwise() *= signs_.array();
    return s;
}

Mat StiefelCoset::full() const { return apply(Mat::Identity(n(), n())); }

Mat StiefelCoset::point() const { return apply(Mat::Identity(n(), k())); }

Mat StiefelCoset::ambient(const TangentM& x) const { return apply(x.stacked()); }

StiefelGeodesic::StiefelGeodesic(const StiefelCoset& g, const TangentM& x) : g_(g), x_(x) {
    const int n = g.n(), k = g.k();
    if (x.n() != n || x.k() != k) throw std::invalid_argument("StiefelGeodesic: dimension mismatch");
    reduced_ = 2 * k <= n;
    if (reduced_) {
        qrb_ = householder_qr(x.b);
        xr_ = Mat::Zero(2 * k, 2 * k);
        xr_.topLeftCorner(k, k) = skew_part(x.a);
        xr_.bottomLeftCorner(k, k) = qrb_.r;
        xr_.topRightCorner(k, k) = -qrb_.r.transpose();
    } else {
        xr_ = x.full();
        xr_.topLeftCorner(k, k) = skew_part(x.a);
    }
    canon_ = skew_canonical(xr_);
}

namespace {

Mat assemble_reduced(const FactoredQR& qrb, const Mat& cols2k, int n, int k) {
    Mat lower = Mat::Zero(n - k, k);
    lower.topRows(k) = cols2k.bottomRows(k);
    lower = apply_q(qrb, lower, Side::left);
    Mat s(n, k);
    s.topRows(k) = cols2k.topRows(k);
    s.bottomRows(n - k) = lower;
    return s;
}

}  // namespace

Mat StiefelGeodesic::point(double t) const {
    const int n = g_.n(), k = g_.k();
    const Mat e = canon_.expm(t).leftCols(k);
    if (!reduced_) return g_.apply(e);
    return g_.apply(assemble_reduced(qrb_, e, n, k));
}

Mat StiefelGeodesic::velocity(double t) const {
    const int n = g_.n(), k = g_.k();
    const Mat e = xr_ * canon_.expm(t).leftCols(k);
    if (!reduced_) return g_.apply(e);
    return g_.apply(assemble_reduced(qrb_, e, n, k));
}

Mat StiefelGeodesic::coefficients(double t) const {
    if (!reduced_) throw std::logic_error("StiefelGeodesic::coefficients requires 2k <= n");
    const int k = g_.k();
    Mat y(2 * k, k);
    y.topRows(k) = canon_.expm(t).topLeftCorner(k, k);
    y.bottomRows(k) = canon_.expm_integral(t).topLeftCorner(k, k);
    return y;
}

Mat StiefelGeodesic::coefficient_rate(double t) const {
    if (!reduced_) throw std::logic_error("StiefelGeodesic::coefficient_rate requires 2k <= n");
    const int k = g_.k();
    const Mat e = canon_.expm(t).leftCols(k);
    Mat y(2 * k, k);
    y.topRows(k) = (xr_ * e).topRows(k);
    y.bottomRows(k) = e.topRows(k);
    return y;
}

Mat StiefelGeodesic::basis() const {
    const int n = g_.n(), k = g_.k();
    Mat out(n, 2 * k);
    out.leftCols(k) = g_.point();
    Mat s = Mat::Zero(n, k);
    s.bottomRows(n - k) = x_.b;
    out.rightCols(k) = g_.apply(s);
    return out;
}

Mat stiefel_exp(const StiefelCoset& g, const TangentM& x, double t) {
    if (t == 0.0) return g.point();
    return StiefelGeodesic(g, x).point(t);
}

TangentM stiefel_change_coset(const TangentM& x, const StiefelCoset& g1, const StiefelCoset& g2) {
    if (g1.n() != g2.n() || g1.k() != g2.k() || x.n() != g1.n() || x.k() != g1.k())
        throw std::invalid_argument("stiefel_change_coset: dimension mismatch");
    if ((g1.point() - g2.point()).norm() > 1e-8)
        throw std::invalid_argument("stiefel_change_coset: representatives of different points");
    const int n = g1.n(), k = g1.k();
    Mat s = Mat::Zero(n, k);
    s.bottomRows(n - k) = x.b;
    const Mat moved = g2.apply_transpose(g1.apply(s));
    return {x.a, moved.bottomRows(n - k)};
}

TangentM bracket_m(const TangentM& x, const TangentM& y) {
    TangentM out;
    out.a = x.a * y.a - y.a * x.a + y.b.transpose() * x.b - x.b.transpose() * y.b;
    out.b = x.b * y.a - y.b * x.a;
    return out;
}

TangentM stiefel_transport_ode(const TangentM& x, const TangentM& y0, double t, int steps) {
    if (x.n() != y0.n() || x.k() != y0.k()) throw std::invalid_argument("stiefel_transport_ode: dimension mismatch");
    if (steps < 1) steps = 1;
    const double h = t / steps;
    auto rhs = [&](const TangentM& y) { return -0.5 * bracket_m(x, y); };
    TangentM y = y0;
    for (int i = 0; i < steps; ++i) {
        const TangentM k1 = rhs(y);
        const TangentM k2 = rhs(y + (0.5 * h) * k1);
        const TangentM k3 = rhs(y + (0.5 * h) * k2);
        const TangentM k4 = rhs(y + h * k3);
        y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return y;
}

double stiefel_distance(const Mat& p, const Mat& q) {
    if (p.rows() != q.rows() || p.cols() != q.cols()) throw std::invalid_argument("stiefel_distance: dimension mismatch");
    return (p - q).norm();
}

}  // namespace riemann
