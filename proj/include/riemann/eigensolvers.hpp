#pragma once

#include "riemann/optimizers.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace riemann {

// ------------------------------------------------------------- sphere

enum class SphereMethod { steepest, cg };

struct SphereEigResult {
    double lambda = 0.0;
    Vec x;
    Trace trace;
    long matvecs = 0;
};

// Largest eigenpair of symmetric Q by steepest ascent or CG on the sphere with
// the exact step along each great circle. One product with Q per iteration;
// CG restarts every n - 1 steps. Stops with status "stagnated" when the
// quotient has not improved over 3(n - 1) iterations.
SphereEigResult extreme_eigpair_sphere(const Mat& q, const Vec& x0, const StopCriteria& stop,
                                       SphereMethod method = SphereMethod::cg, const DistanceFn<Vec>& distance = {});

enum class NewtonVariant { geodesic, rqi };

// Newton's method for the Rayleigh quotient: y = (Q - rho I)^{-1} x,
// H = -x + y / (x^T y). The geodesic variant follows the great circle in
// direction H for length |H|; the RQI variant takes y / |y|, signed to agree with x.
SphereEigResult newton_rayleigh(const Mat& q, const Vec& x0, NewtonVariant variant, const StopCriteria& stop,
                                const DistanceFn<Vec>& distance = {});

// ------------------------------------------------------------- Stiefel

enum class SortAction { resort_n, resort_columns };

struct SortPolicy {
    bool enabled = true;
    SortAction action = SortAction::resort_n;
};

struct TopkOptions {
    CgOptions cg;  // gamma must be hessian
    SortPolicy sort;
    bool canonical_signs = true;
    std::uint64_t symmetry_seed = 0x5eed;
    // Reference maximum of tr p^T A p N; when set, records carry |rho - reference| as dist.
    std::optional<double> reference;
};

struct TopkRecord {
    Vec diag;  // diag(p^T A p)
    double orthonormality = 0.0;
    long applications = 0;  // operator applications spent in this iteration
    bool resorted = false;
};

struct EigResult {
    Vec eigenvalues;  // diag(p^T A p) at the final frame
    Mat frame;
    Vec n_final;  // weights after any resorting
    Trace trace;
    std::vector<TopkRecord> details;  // parallel to trace.records
    double residual = 0.0;            // |A p - p diag(eigenvalues)|_F
    long applications = 0;
    std::string status;
};

// Maximizes tr p^T A p N over V(n,k) by CG with hessian conjugacy. Before each
// step, if diag(p^T A p) is not ordered like N, N is re-sorted (or the columns
// of p are) and the direction is reset. Throws std::invalid_argument if the
// operator fails the symmetry probe or transported-gradient mode is requested.
EigResult topk_eigpairs_stiefel(const SymOperator& a, const Vec& n_diag, const Mat& p0, const TopkOptions& opts = {});

// Top-k left singular vectors of K through A = K K^T applied as K (K^T v).
// Eigenvalues are squared singular values.
EigResult topk_left_singular(const Mat& k_data, const Vec& n_diag, const Mat& p0, const TopkOptions& opts = {});

// The sorting rule applied before each CG step: when diag(p^T A p) is not
// ordered like N, re-sort N (or the columns of p). Sets diag to diag(p^T A p)
// after any change and returns true when something was re-sorted.
bool apply_sort_policy(StiefelPoint& x, StiefelRayleighProblem& problem, const SortPolicy& policy, Vec& diag);

// Column permutation of p that orders diag(p^T A p) like n_diag.
Mat sort_frame(const Mat& p, const SymOperator& a, const Vec& n_diag);

// Permutation of n_diag's entries ordered like d: the largest weight goes where d is largest.
Vec resort_weights(const Vec& d, const Vec& n_diag);

// Flips each column so its largest-magnitude entry is positive.
void canonicalize_signs(Mat& p);

// Random start: Gram-Schmidt of standard normal columns.
Mat random_start(int n, int k, std::uint64_t seed);

}  // namespace riemann
