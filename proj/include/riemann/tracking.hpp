#pragma once

#include "riemann/eigensolvers.hpp"

#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <vector>

namespace riemann {

// ------------------------------------------------------------- estimators

enum class EstimatorMode { window, fading_normalized, fading_weighted };

// Running covariance estimate R of a vector stream.
//   window:            R = (1/m) sum of x x^T over the last m <= l samples
//   fading_normalized: P = R + x x^T, R = P / |P|_F
//   fading_weighted:   R = alpha_t R + beta_t x x^T
class CovarianceEstimator {
public:
    using Weights = std::function<std::pair<double, double>(long)>;  // t -> (alpha_t, beta_t)

    static CovarianceEstimator window(int n, int length);
    static CovarianceEstimator fading_normalized(Mat r0);
    static CovarianceEstimator fading_weighted(Mat r0, Weights weights);
    static CovarianceEstimator fading_weighted(Mat r0, double alpha, double beta);

    EstimatorMode mode() const { return mode_; }
    int dim() const { return n_; }
    long count() const { return t_; }

    // Adds x. Throws on a dimension mismatch, or when the normalized
    // variant meets an all-zero P.
    void update(const Vec& x);

    Mat estimate() const;
    // Window mode only: X / sqrt(m) with X the window's samples as columns,
    // so estimate() = factor() factor()^T.
    Mat factor() const;
    // Window mode: the factor (never squared); fading modes: the matrix.
    SymOperator as_operator() const;

private:
    EstimatorMode mode_ = EstimatorMode::window;
    int n_ = 0;
    int length_ = 0;
    long t_ = 0;
    std::deque<Vec> window_;
    Mat sum_;  // window: running sum of x x^T
    Mat r_;    // fading modes
    Weights weights_;
};

// ------------------------------------------------------------- scenarios

struct ScenarioPhase {
    int first = 0;  // first time index of the phase
    Mat a;
    Vec eigenvalues;  // descending, from sym_eig_oracle
    Mat eigenvectors;
};

// Piecewise-constant symmetric matrices A_i, i = 0..length-1.
struct Scenario {
    std::string name;
    int n = 0;
    int length = 0;
    std::vector<ScenarioPhase> phases;

    const ScenarioPhase& phase(int i) const;
    const Mat& at(int i) const { return phase(i).a; }
    // Indices where a new phase begins (excluding 0).
    std::vector<int> step_times() const;
    // max tr p^T A_i p N = sum of the top-k eigenvalues weighted by sorted N.
    double reference(int i, const Vec& n_diag) const;
};

// Builds a scenario from phases given as (first index, matrix); eigenpairs
// come from sym_eig_oracle. Throws if a matrix is not symmetric.
Scenario make_scenario(std::string name, int length, std::vector<std::pair<int, Mat>> phases);
Scenario constant_scenario(const Mat& a, int length);

// Rotation by angle (degrees) of the (e_i, e_j) plane, zero-based indices:
// entries (i,i) = (j,j) = cos, (i,j) = sin, (j,i) = -sin.
Mat plane_rotation(int n, int i, int j, double degrees);

// The three step scenarios with the step after i = step (A changes for i > step).
//   first:  diag(n..1), then Theta1 diag(n..1) Theta1^T with Theta1 = R_01(135)
//   second: diag(n..1), then Theta2 diag(n, n-1, n-2, n+1, n+2, n+3, n-6, ..., 1) Theta2^T
//           with Theta2 = R_03(135) R_14(135) R_25(135)
//   third:  diag(n..1), then diag(n-3, n-4, n-5, n, n-1, n-2, n-6, ..., 1)
Scenario scenario_first(int n = 100, int length = 100, int step = 40);
Scenario scenario_second(int n = 100, int length = 100, int step = 40);
Scenario scenario_third(int n = 100, int length = 100, int step = 40);
// "first" | "second" | "third"; throws std::invalid_argument otherwise.
Scenario scenario_by_name(const std::string& name, int n = 100, int length = 100, int step = 40);

// ------------------------------------------------------------- tracker

struct TrackerConfig {
    Vec n_diag;  // weights of N
    int steps_per_sample = 1;
    bool reset_on_step = false;  // reset CG at the first sample of each new phase
    bool reset_on_jump = false;
    double jump_threshold = 0.1;  // relative change of rho between samples
    // Seeded perturbation of size jitter_magnitude added to the gradient when
    // |G| < jitter_below while the gap to the reference is still large.
    bool jitter = false;
    std::uint64_t jitter_seed = 0;
    double jitter_magnitude = 1e-13;
    double jitter_below = 1e-12;
    SortPolicy sort;
    LineSearchParams line_search;
    int reset_period = -1;  // <= 0 selects dim V(n,k)
};

struct TrackRecord {
    int i = 0;
    double rho = 0.0;      // tr p_i^T A_i p_i N with the current (possibly resorted) N
    double reference = 0.0;
    double gap = 0.0;      // |rho - reference|
    Vec diag;              // diag(p_i^T A_i p_i)
    double grad_norm = 0.0;
    double orthonormality = 0.0;
    bool resorted = false;
    bool reset = false;
    bool jittered = false;
    long applications = 0;
};

struct TrackTrace {
    std::vector<TrackRecord> records;
    Mat frame;
    Vec n_final;
};

// One CG step (or steps_per_sample of them) per time index against A_i.
TrackTrace track(const Scenario& scenario, const TrackerConfig& config, const Mat& p0);

// Feeds each column of data into the estimator and tracks its top-k subspace.
// The window estimator is applied through its factor. With reference set,
// each record's reference comes from sym_eig_oracle on the current estimate.
TrackTrace track_from_data(const Mat& data, CovarianceEstimator estimator, const TrackerConfig& config,
                           const Mat& p0, bool reference = true);

}  // namespace riemann
