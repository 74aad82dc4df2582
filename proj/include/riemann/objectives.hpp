#pragma once

#include "riemann/manifolds.hpp"

#include <cstdint>
#include <functional>
#include <optional>

namespace riemann {

// Symmetric operator v -> A v, held either as an explicit matrix or as a
// data factor L with A = L L^T (applied as L (L^T v), never squared).
// Every applied column counts as one operator application.
class SymOperator {
public:
    SymOperator() = default;
    static SymOperator from_matrix(Mat a);
    static SymOperator from_factor(Mat l);

    int dim() const { return static_cast<int>(m_.rows()); }
    bool factored() const { return factored_; }
    Mat apply(const Mat& v) const;
    Mat dense() const;

    void assign_matrix(Mat a);
    void assign_factor(Mat l);

    long applications() const { return count_; }
    void reset_count() { count_ = 0; }
    // Bumped whenever the operator is replaced, so cached products can be invalidated.
    unsigned long version() const { return version_; }

private:
    Mat m_;
    bool factored_ = false;
    mutable long count_ = 0;
    unsigned long version_ = 0;
};

// Samples <Av, w> - <v, Aw> on random vectors; false when the relative defect exceeds tol.
bool looks_symmetric(const SymOperator& a, std::uint64_t seed, int samples = 3, double tol = 1e-10);

// True when the sorting permutations of a and b agree.
bool similarly_ordered(const Vec& a, const Vec& b);

// ------------------------------------------------------------- sphere

// rho(x) = x^T Q x on the unit sphere.
class Rayleigh {
public:
    explicit Rayleigh(Mat q);
    const Mat& q() const { return q_; }

    double value(const Vec& x) const;
    // 2 (Qx - rho x)
    Vec gradient(const Vec& x) const;
    // 2 (I - x x^T)(Q - rho I) u
    Vec hess_apply(const Vec& x, const Vec& u) const;
    double hess(const Vec& x, const Vec& u, const Vec& v) const;
    // Tangent u with hess_apply(x, u) = rhs. Empty when Q - rho I is singular,
    // which includes x being an eigenvector.
    std::optional<Vec> newton_solve(const Vec& x, const Vec& rhs) const;

private:
    Mat q_;
};

// ------------------------------------------------------------- SO(n)
// Tangents are left-translated skew matrices, metric tr X^T Y.

struct SoNewtonResult {
    Mat x;
    bool converged = false;
    bool indefinite = false;
    int iterations = 0;
    double residual = 0.0;
};

// Linear CG on so(n) for op(X) = rhs, op symmetric positive definite under tr X^T Y.
SoNewtonResult so_linear_cg(const std::function<Mat(const Mat&)>& op, const Mat& rhs, double rel_tol, int max_iter);

// f(theta) = tr theta^T Q theta N, maximized.
class TraceQN {
public:
    TraceQN(Mat q, Vec n_diag);
    const Mat& q() const { return q_; }
    const Vec& n_diag() const { return n_; }

    Mat h(const Mat& theta) const { return theta.transpose() * q_ * theta; }
    double value(const Mat& theta) const;
    // [H, N]
    Mat gradient(const Mat& theta) const;
    double hess(const Mat& theta, const Mat& x, const Mat& y) const;
    // Self-adjoint L with hess(X, Y) = -1/2 tr(L(X) Y), L(X) = [H,[X,N]] - [[X,H],N].
    Mat newton_operator(const Mat& theta, const Mat& x) const;
    // Solves L(X) = -2 [H, N] by inner CG; X is the Newton step for the maximization.
    SoNewtonResult newton_direction(const Mat& theta, double rel_tol = 1e-12, int max_iter = -1) const;

private:
    Mat q_;
    Vec n_;
};

// f(theta) = sum_i H_ii^2, maximized (Jacobi's diagonalization objective).
class JacobiObjective {
public:
    explicit JacobiObjective(Mat q);
    const Mat& q() const { return q_; }

    Mat h(const Mat& theta) const { return theta.transpose() * q_ * theta; }
    double value(const Mat& theta) const;
    // 2 [H, diag(H)]
    Mat gradient(const Mat& theta) const;
    double hess(const Mat& theta, const Mat& x, const Mat& y) const;
    // L with hess(X, Y) = -tr(L(X) Y).
    Mat newton_operator(const Mat& theta, const Mat& x) const;
    SoNewtonResult newton_direction(const Mat& theta, double rel_tol = 1e-12, int max_iter = -1) const;

private:
    Mat q_;
};

// ------------------------------------------------------------- Stiefel

// rho(p) = tr p^T A p N, maximized. The operator is referenced, not owned.
class GenRayleigh {
public:
    GenRayleigh(const SymOperator* a, Vec n_diag);
    const SymOperator& op() const { return *a_; }
    const Vec& n_diag() const { return n_; }
    void set_n(Vec n_diag);
    int n() const { return a_->dim(); }
    int k() const { return static_cast<int>(n_.size()); }

    Mat apply(const Mat& v) const { return a_->apply(v); }
    double value(const Mat& p) const;
    double value_cached(const Mat& p, const Mat& ap) const;
    // Gradient in m-form, read from C = g^T (A p N): a = C_top - C_top^T, b = C_bottom.
    TangentM gradient(const StiefelCoset& g, const Mat& ap) const;
    // Second covariant differential; ax_amb = A g x o.
    double hess(const StiefelCoset& g, const Mat& ap, const TangentM& x, const Mat& ax_amb, const TangentM& y) const;
    double hess(const StiefelCoset& g, const Mat& ap, const TangentM& x, const TangentM& y) const;
    // d/dt rho(g e^{xt} o) at 0: 2 tr (Ap)^T (g x o) N.
    double phi_prime0(const StiefelCoset& g, const Mat& ap, const TangentM& x) const;

private:
    const SymOperator* a_;
    Vec n_;
};

// sigma'(p) = tr q^T A^T p N with q the column-normalized A^T p,
// i.e. sum_j nu_j |A^T p_j|. A is n x l.
class SigmaPrime {
public:
    SigmaPrime(Mat a, Vec n_diag);
    double value(const Mat& p) const;
    TangentM gradient(const StiefelCoset& g) const;
    // Finite differences of the analytic directional derivative.
    double hess(const StiefelCoset& g, const TangentM& x, const TangentM& y) const;

private:
    Mat normalized(const Mat& p) const;
    double directional(const StiefelGeodesic& geo, double t) const;
    Mat a_;
    Vec n_;
};

struct TangentPair {
    TangentM p;
    TangentM q;
};
double inner(const TangentPair& x, const TangentPair& y);

// sigma''(p, q) = tr p^T A q N on V(m,k) x V(l,k), A m x l.
class SigmaDouble {
public:
    SigmaDouble(Mat a, Vec n_diag);
    double value(const Mat& p, const Mat& q) const;
    TangentPair gradient(const StiefelCoset& gp, const StiefelCoset& gq) const;
    double hess(const StiefelCoset& gp, const StiefelCoset& gq, const TangentPair& x, const TangentPair& y) const;

private:
    double directional(const StiefelGeodesic& gp, const StiefelGeodesic& gq, double t) const;
    Mat a_;
    Vec n_;
};

}  // namespace riemann
