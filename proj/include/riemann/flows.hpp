#pragma once

#include "riemann/linalg.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace riemann {

// (A B^T - B A^T) / (m - 2) for m x l inputs; m in {1, 2} divides by 1.
Mat svd_bracket(const Mat& a, const Mat& b);

struct FlowSample {
    double t = 0.0;
    Mat state;  // the observed matrix (H, Theta, Sigma or p)
    double objective = 0.0;
    double drift = 0.0;  // invariant defect at this sample
};

struct FlowTrace {
    std::vector<FlowSample> samples;
    std::string status = "ok";  // or "non_finite"
    int projections = 0;
    double max_drift = 0.0;
    // Final frames of the (U, V) flow; empty for the other flows.
    Mat u, v;
};

using FlowRhs = std::function<Mat(double, const Mat&)>;

struct Rk4Options {
    int record_every = 1;
    // Maps the integrated state to the recorded matrix; identity when empty.
    std::function<Mat(const Mat&)> observe;
    std::function<double(const Mat&)> objective;
    std::function<double(const Mat&)> drift;
    // Called after every step; returns true when it modified the state.
    std::function<bool(Mat&)> project;
};

// Classical fixed-step RK4 from t = 0 to t_end. The last step is shortened to
// land on t_end. Stops with status "non_finite" if the state blows up.
FlowTrace rk4_integrate(const FlowRhs& rhs, const Mat& x0, double t_end, double dt, const Rk4Options& opts = {});

// dH/dt = [H, [H, N]]. Drift is the max-norm change of the spectrum.
FlowTrace double_bracket_flow(const Mat& h0, const Mat& n, double t_end, double dt, int record_every = 1);

// dTheta/dt = Theta [Theta^T Q Theta, N], re-orthogonalized when
// |Theta^T Theta - I| exceeds 1e-9. Records Theta.
FlowTrace so_gradient_flow(const Mat& q, const Mat& n, const Mat& theta0, double t_end, double dt,
                           int record_every = 1);

// Gradient ascent of tr p^T A p N on V(n,k) by geodesic Euler steps
// p <- exp_p(dt grad). Records p; drift is |p^T p - I|.
FlowTrace genray_flow(const Mat& a, const Vec& n_diag, const Mat& p0, double t_end, double dt, int record_every = 1);

// dSigma/dt = Sigma [[Sigma^T, N^T]] - [[Sigma, N]] Sigma. Drift is the
// max-norm change of the singular values.
FlowTrace svd_flow_sigma(const Mat& sigma0, const Mat& n, double t_end, double dt, int record_every = 1);

// dU/dt = U [[U^T K V, N]], dV/dt = V [[V^T K^T U, N^T]]. Records
// Sigma = U^T K V; drift is the larger orthogonality defect of U and V
// before any projection.
FlowTrace svd_flow_uv(const Mat& k, const Mat& n, const Mat& u0, const Mat& v0, double t_end, double dt,
                      int record_every = 1);

// The 7 x 5 SVD-flow problem: K = diag(1..5), N = diag(5..1), and fixed
// three-digit frames made orthogonal by column-wise Gram-Schmidt.
struct SvdReferenceProblem {
    Mat k, n, u0, v0;
    Vec singular_values;  // limit diagonal (5, 4, 3, 2, 1)
    Vec nu;               // diagonal of N
};
SvdReferenceProblem svd_reference_problem();

// ------------------------------------------------------------- rates

struct RateEntry {
    int i = 0;  // zero-based row
    int j = 0;  // zero-based column
    bool measurable = false;
    double measured = 0.0;
    double residual = 0.0;  // RMS of the log-linear fit
    int samples = 0;
    std::optional<double> predicted;
};

struct RateReport {
    std::vector<RateEntry> entries;
    std::vector<std::string> notes;
};

struct RateWindow {
    double tail_fraction = 0.6;  // fit over the last 60% of each entry's in-range samples
    double lo = 1e-10;
    double hi = 1e-2;
    int min_samples = 5;
};

// Fits log |state(i, j)| = -r t + c over the samples with |state(i, j)| in
// [lo, hi], keeping the trailing tail_fraction of them. Entries with fewer than
// min_samples usable points are reported as unmeasurable.
RateReport rate_regression(const FlowTrace& trace, const std::vector<std::pair<int, int>>& entries,
                           const RateWindow& window = {});

// Linearized rate matrices of the Sigma flow and the (U, V) flow for the pair
// (i, j), both indices < k, at a diagonal critical point with entries s_i, s_j.
Mat svd_rate_matrix_sigma(double s_i, double s_j, double nu_i, double nu_j, int n, int k);
Mat svd_rate_matrix_uv(double s_i, double s_j, double nu_i, double nu_j, int n, int k);

// Slowest predicted decay rate of Sigma(i, j) near the diagonal critical
// point with diagonal d and weights nu (zero-based; i < n, j < k, i != j).
double svd_predicted_rate(const Vec& d, const Vec& nu, int i, int j, int n, int k);

// Adds predictions to each entry of an SVD-flow report and notes the square case.
void attach_svd_predictions(RateReport& report, const Vec& d, const Vec& nu, int n, int k);

// Local decay rate of p(i, j) near the sink of genray_flow with
// A = diag(lambda), weights nu: (lambda_j - lambda_i) nu_j for i >= k and
// (lambda_i - lambda_j)(nu_i - nu_j) for i, j < k (magnitudes).
double genray_predicted_rate(const Vec& lambda, const Vec& nu, int i, int j);

}  // namespace riemann
