#pragma once

#include "riemann/linalg.hpp"

namespace riemann {

// ---------------------------------------------------------------- sphere

// x cos(t|v|) + (v/|v|) sin(t|v|).
Vec sphere_exp(const Vec& x, const Vec& v, double t);

// Transport of w along the great circle leaving x in the unit direction h.
Vec sphere_transport(const Vec& x, const Vec& h, double t, const Vec& w);

double sphere_distance(const Vec& x, const Vec& y);

// ----------------------------------------------------------------- SO(n)
// Tangents are left-translated: omega skew stands for theta * omega.

Mat so_exp(const Mat& theta, const Mat& omega, double t);

// e^{-t omega/2} y0 e^{t omega/2}.
Mat so_transport(const Mat& omega, const Mat& y0, double t);

// |log(theta^T psi)|_F / sqrt(2).
double so_distance(const Mat& theta, const Mat& psi);

// ------------------------------------------------------------ Stiefel V(n,k)

// Compressed element of m: x = [[a, -b^T], [b, 0]], a skew k x k, b (n-k) x k.
struct TangentM {
    Mat a;
    Mat b;

    TangentM() = default;
    TangentM(Mat a_, Mat b_) : a(std::move(a_)), b(std::move(b_)) {}
    static TangentM zero(int n, int k) { return {Mat::Zero(k, k), Mat::Zero(n - k, k)}; }

    int k() const { return static_cast<int>(a.rows()); }
    int n() const { return static_cast<int>(a.rows() + b.rows()); }

    // x * o = [a; b]
    Mat stacked() const;
    // full n x n skew matrix
    Mat full() const;
    // x applied to an n x c block.
    Mat act(const Mat& u) const;

    TangentM& operator+=(const TangentM& o);
    TangentM& operator-=(const TangentM& o);
    TangentM& operator*=(double s);
};

TangentM operator+(TangentM x, const TangentM& y);
TangentM operator-(TangentM x, const TangentM& y);
TangentM operator*(double s, TangentM x);
TangentM operator-(TangentM x);

// tr x^T y on the full matrices = tr a^T a' + 2 tr b^T b'.
double inner(const TangentM& x, const TangentM& y);
double norm(const TangentM& x);

// Split an n x k block [top; bottom] into m-form: a = skew(top) and b = bottom.
TangentM tangent_from_stacked(const Mat& s);

// Coset representative g = Q diag(D, I) with Q from Householder QR of p and
// D the sign pattern of diag(R). g is orthogonal and held in factored form.
class StiefelCoset {
public:
    StiefelCoset() = default;
    explicit StiefelCoset(const Mat& p);

    int n() const { return qr_.n; }
    int k() const { return qr_.k; }

    Mat apply(const Mat& m) const;            // g m
    Mat apply_transpose(const Mat& m) const;  // g^T m
    Mat full() const;
    Mat point() const;                        // g o
    Mat ambient(const TangentM& x) const;     // g x o
    const FactoredQR& qr() const { return qr_; }
    const Vec& signs() const { return signs_; }

private:
    FactoredQR qr_;
    Vec signs_;
};

// Geodesic t -> g e^{x t} o, reduced to a 2k x 2k skew exponential.
// With x' = [[a, -R^T], [R, 0]] (b = Q_b R) and M(t) = e^{x' t}(:, 0:k),
//   g e^{x t} o = p M_top(t) + B F(t),  B = g (0; b),  F(t) = int_0^t M_top.
// Requires 2k <= n; otherwise the full n x n exponential is used.
class StiefelGeodesic {
public:
    StiefelGeodesic(const StiefelCoset& g, const TangentM& x);

    bool reduced() const { return reduced_; }
    const Mat& reduced_generator() const { return xr_; }

    Mat point(double t) const;
    Mat velocity(double t) const;

    // Coefficients of the 2k-column basis [p, B]: Y(t) = [M_top; F], and dY/dt.
    Mat coefficients(double t) const;
    Mat coefficient_rate(double t) const;
    // [p, B]
    Mat basis() const;

private:
    StiefelCoset g_;
    TangentM x_;
    bool reduced_ = true;
    FactoredQR qrb_;
    Mat xr_;
    SkewCanonical canon_;
};

Mat stiefel_exp(const StiefelCoset& g, const TangentM& x, double t);

// Express x (given under g1) under g2, where g1 o = g2 o.
TangentM stiefel_change_coset(const TangentM& x, const StiefelCoset& g1, const StiefelCoset& g2);

// [x, y] projected onto m, in compressed form.
TangentM bracket_m(const TangentM& x, const TangentM& y);

// Parallel transport of y0 along t -> g e^{x t} o, with the result expressed
// under the moving representative g e^{x t}. RK4 on dy/dt = -1/2 [x, y]_m.
TangentM stiefel_transport_ode(const TangentM& x, const TangentM& y0, double t, int steps = 200);

// Chordal |p - q|_F.
double stiefel_distance(const Mat& p, const Mat& q);

}  // namespace riemann
