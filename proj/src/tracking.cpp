#include "riemann/tracking.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace riemann {

// ------------------------------------------------------------- estimators

CovarianceEstimator CovarianceEstimator::window(int n, int length) {
    if (n < 1 || length < 1) throw std::invalid_argument("CovarianceEstimator::window: need n >= 1 and length >= 1");
    CovarianceEstimator e;
    e.mode_ = EstimatorMode::window;
    e.n_ = n;
    e.length_ = length;
    e.sum_ = Mat::Zero(n, n);
    return e;
}

CovarianceEstimator CovarianceEstimator::fading_normalized(Mat r0) {
    if (r0.rows() != r0.cols() || r0.rows() == 0) throw std::invalid_argument("fading_normalized: R0 must be square");
    CovarianceEstimator e;
    e.mode_ = EstimatorMode::fading_normalized;
    e.n_ = static_cast<int>(r0.rows());
    e.r_ = std::move(r0);
    return e;
}

CovarianceEstimator CovarianceEstimator::fading_weighted(Mat r0, Weights weights) {
    if (r0.rows() != r0.cols() || r0.rows() == 0) throw std::invalid_argument("fading_weighted: R0 must be square");
    if (!weights) throw std::invalid_argument("fading_weighted: missing weight sequence");
    CovarianceEstimator e;
    e.mode_ = EstimatorMode::fading_weighted;
    e.n_ = static_cast<int>(r0.rows());
    e.r_ = std::move(r0);
    e.weights_ = std::move(weights);
    return e;
}

CovarianceEstimator CovarianceEstimator::fading_weighted(Mat r0, double alpha, double beta) {
    return fading_weighted(std::move(r0), [alpha, beta](long) { return std::pair{alpha, beta}; });
}

void CovarianceEstimator::update(const Vec& x) {
    if (x.size() != n_) throw std::invalid_argument("CovarianceEstimator::update: dimension mismatch");
    switch (mode_) {
        case EstimatorMode::window:
            sum_.noalias() += x * x.transpose();
            window_.push_back(x);
            if (static_cast<int>(window_.size()) > length_) {
                const Vec& old = window_.front();
                sum_.noalias() -= old * old.transpose();
                window_.pop_front();
            }
            break;
        case EstimatorMode::fading_normalized: {
            Mat p = r_ + x * x.transpose();
            const double nrm = p.norm();
            if (!(nrm > 0.0)) throw std::domain_error("fading_normalized: P is zero");
            r_ = p / nrm;
            break;
        }
        case EstimatorMode::fading_weighted: {
            const auto [alpha, beta] = weights_(t_);
            r_ = alpha * r_ + beta * (x * x.transpose());
            break;
        }
    }
    ++t_;
}

Mat CovarianceEstimator::estimate() const {
    if (mode_ != EstimatorMode::window) return r_;
    if (window_.empty()) return Mat::Zero(n_, n_);
    // Until the window fills, normalize by the samples seen so far.
    return sum_ / static_cast<double>(window_.size());
}

Mat CovarianceEstimator::factor() const {
    if (mode_ != EstimatorMode::window) throw std::logic_error("CovarianceEstimator::factor: window mode only");
    if (window_.empty()) return Mat::Zero(n_, 1);
    Mat x(n_, static_cast<Eigen::Index>(window_.size()));
    for (size_t j = 0; j < window_.size(); ++j) x.col(static_cast<Eigen::Index>(j)) = window_[j];
    return x / std::sqrt(static_cast<double>(window_.size()));
}

SymOperator CovarianceEstimator::as_operator() const {
    return mode_ == EstimatorMode::window ? SymOperator::from_factor(factor()) : SymOperator::from_matrix(r_);
}

// ------------------------------------------------------------- scenarios

const ScenarioPhase& Scenario::phase(int i) const {
    if (i < 0 || i >= length) throw std::out_of_range("Scenario: time index out of range");
    const ScenarioPhase* cur = &phases.front();
    for (const auto& ph : phases)
        if (ph.first <= i) cur = &ph;
    return *cur;
}

std::vector<int> Scenario::step_times() const {
    std::vector<int> out;
    for (const auto& ph : phases)
        if (ph.first > 0) out.push_back(ph.first);
    return out;
}

double Scenario::reference(int i, const Vec& n_diag) const {
    const Vec& ev = phase(i).eigenvalues;
    const int k = static_cast<int>(n_diag.size());
    if (k > ev.size()) throw std::invalid_argument("Scenario::reference: k exceeds n");
    Vec nu = n_diag;
    std::sort(nu.data(), nu.data() + k, std::greater<>());
    // Positive weights pair with the largest eigenvalues, negative ones with the smallest.
    double r = 0.0;
    int top = 0, bottom = static_cast<int>(ev.size()) - 1;
    for (int j = 0; j < k; ++j) {
        if (nu(j) >= 0.0) r += nu(j) * ev(top++);
    }
    for (int j = k - 1; j >= 0; --j) {
        if (nu(j) < 0.0) r += nu(j) * ev(bottom--);
    }
    return r;
}

Scenario make_scenario(std::string name, int length, std::vector<std::pair<int, Mat>> phases) {
    if (phases.empty() || phases.front().first != 0) throw std::invalid_argument("make_scenario: first phase must start at 0");
    if (length < 1) throw std::invalid_argument("make_scenario: length must be positive");
    Scenario s;
    s.name = std::move(name);
    s.length = length;
    s.n = static_cast<int>(phases.front().second.rows());
    int last = -1;
    for (auto& [first, a] : phases) {
        if (first <= last) throw std::invalid_argument("make_scenario: phases must start in increasing order");
        if (a.rows() != s.n || a.cols() != s.n) throw std::invalid_argument("make_scenario: matrices must be n x n");
        if ((a - a.transpose()).norm() > 1e-12 * (1.0 + a.norm()))
            throw std::invalid_argument("make_scenario: matrices must be symmetric");
        last = first;
        ScenarioPhase ph;
        ph.first = first;
        ph.a = sym_part(a);
        const SymEig eig = sym_eig_oracle(ph.a);
        ph.eigenvalues = eig.values;
        ph.eigenvectors = eig.vectors;
        s.phases.push_back(std::move(ph));
    }
    return s;
}

Scenario constant_scenario(const Mat& a, int length) { return make_scenario("constant", length, {{0, a}}); }

Mat plane_rotation(int n, int i, int j, double degrees) {
    if (i < 0 || j < 0 || i >= n || j >= n || i == j) throw std::invalid_argument("plane_rotation: bad plane");
    const double th = degrees * std::acos(-1.0) / 180.0;
    Mat r = Mat::Identity(n, n);
    r(i, i) = std::cos(th);
    r(j, j) = std::cos(th);
    r(i, j) = std::sin(th);
    r(j, i) = -std::sin(th);
    return r;
}

namespace {

Vec ramp(int n) {
    Vec d(n);
    for (int i = 0; i < n; ++i) d(i) = n - i;
    return d;
}

void require_scenario_size(int n, int length, int step, int minimum_n) {
    if (n < minimum_n) throw std::invalid_argument("scenario: n too small");
    if (step < 0 || step + 1 >= length) throw std::invalid_argument("scenario: step must fall inside the run");
}

}  // namespace

Scenario scenario_first(int n, int length, int step) {
    require_scenario_size(n, length, step, 3);
    const Mat d = ramp(n).asDiagonal();
    const Mat th = plane_rotation(n, 0, 1, 135.0);
    return make_scenario("first", length, {{0, d}, {step + 1, th * d * th.transpose()}});
}

Scenario scenario_second(int n, int length, int step) {
    require_scenario_size(n, length, step, 7);
    Vec after = ramp(n);
    after(3) = n + 1;
    after(4) = n + 2;
    after(5) = n + 3;
    const Mat th = plane_rotation(n, 0, 3, 135.0) * plane_rotation(n, 1, 4, 135.0) * plane_rotation(n, 2, 5, 135.0);
    return make_scenario("second", length,
                         {{0, Mat(ramp(n).asDiagonal())}, {step + 1, th * after.asDiagonal() * th.transpose()}});
}

Scenario scenario_third(int n, int length, int step) {
    require_scenario_size(n, length, step, 7);
    Vec after = ramp(n);
    for (int i = 0; i < 3; ++i) {
        after(i) = n - 3 - i;
        after(3 + i) = n - i;
    }
    return make_scenario("third", length, {{0, Mat(ramp(n).asDiagonal())}, {step + 1, Mat(after.asDiagonal())}});
}

Scenario scenario_by_name(const std::string& name, int n, int length, int step) {
    if (name == "first") return scenario_first(n, length, step);
    if (name == "second") return scenario_second(n, length, step);
    if (name == "third") return scenario_third(n, length, step);
    throw std::invalid_argument("unknown scenario '" + name + "' (expected first, second or third)");
}

// ------------------------------------------------------------- tracker

namespace {

TangentM random_tangent(int n, int k, std::mt19937_64& rng) {
    std::normal_distribution<double> nd;
    Mat a(k, k), b(n - k, k);
    for (Eigen::Index j = 0; j < a.size(); ++j) a.data()[j] = nd(rng);
    for (Eigen::Index j = 0; j < b.size(); ++j) b.data()[j] = nd(rng);
    TangentM x(skew_part(a), b);
    return (1.0 / norm(x)) * x;
}

// prepare(i, op) installs A_i in op and returns true when i starts a new phase;
// reference(i, n_diag) returns max rho for A_i.
TrackTrace run_tracker(int n, int length, const TrackerConfig& cfg, const Mat& p0,
                       const std::function<bool(int, SymOperator&)>& prepare,
                       const std::function<double(int, const Vec&)>& reference) {
    const int k = static_cast<int>(cfg.n_diag.size());
    if (k < 1 || k > n) throw std::invalid_argument("track: need 1 <= k <= n");
    if (p0.rows() != n || p0.cols() != k) throw std::invalid_argument("track: start frame has the wrong shape");
    if (orthonormality_error(p0) > 1e-9) throw std::invalid_argument("track: start frame is not orthonormal");
    if (cfg.steps_per_sample < 1) throw std::invalid_argument("track: steps_per_sample must be positive");

    SymOperator op;
    prepare(0, op);
    StiefelRayleighProblem problem(&op, cfg.n_diag);
    CgOptions cg;
    cg.stop.grad_tol = 0.0;  // never stop: the matrix may change under the iterate
    cg.line_search = cfg.line_search;
    cg.reset_period = cfg.reset_period;
    CgEngine<StiefelRayleighProblem> engine(problem, StiefelPoint(p0), cg);

    std::mt19937_64 jitter_rng(cfg.jitter_seed);
    TrackRecord pending;
    double current_ref = 0.0;
    engine.pre_step = [&](StiefelPoint& x) {
        pending.orthonormality = std::max(pending.orthonormality, orthonormality_error(x.p));
        Vec diag;
        const bool resorted = apply_sort_policy(x, problem, cfg.sort, diag);
        pending.resorted = pending.resorted || resorted;
        if (pending.diag.size() == 0) pending.diag = diag;
        return resorted;
    };
    engine.adjust_gradient = [&](const StiefelPoint& x, TangentM& g) {
        if (!cfg.jitter) return;
        const double gn = norm(g);
        const double rho = problem.rho().value_cached(x.p, problem.ap(x));
        const double gap = std::abs(rho - current_ref);
        if (gn < cfg.jitter_below && gap > 1e-8 * std::max(1.0, std::abs(current_ref))) {
            g += cfg.jitter_magnitude * random_tangent(n, k, jitter_rng);
            pending.jittered = true;
        }
    };

    TrackTrace out;
    double prev_rho = std::nan("");
    for (int i = 0; i < length; ++i) {
        const bool new_phase = i > 0 && prepare(i, op);
        current_ref = reference(i, problem.rho().n_diag());
        pending = TrackRecord{};
        pending.i = i;
        pending.reference = current_ref;
        bool want_reset = cfg.reset_on_step && new_phase;
        if (cfg.reset_on_jump && std::isfinite(prev_rho)) {
            const double rho_now = problem.rho().value_cached(engine.point().p, problem.ap(engine.point()));
            if (std::abs(rho_now - prev_rho) > cfg.jump_threshold * std::abs(prev_rho)) want_reset = true;
        }
        if (want_reset) engine.force_reset();
        const long before = op.applications();
        for (int s = 0; s < cfg.steps_per_sample; ++s) {
            const StepReport rep = engine.step(true);
            if (s == 0) {
                pending.rho = -rep.f;
                pending.gap = std::abs(pending.rho - current_ref);
                pending.grad_norm = rep.grad_norm;
                pending.reset = rep.reset || want_reset;
            }
        }
        pending.applications = op.applications() - before;
        out.records.push_back(pending);
        prev_rho = pending.rho;
    }
    out.frame = engine.point().p;
    out.n_final = problem.rho().n_diag();
    return out;
}

}  // namespace

TrackTrace track(const Scenario& scenario, const TrackerConfig& config, const Mat& p0) {
    if (scenario.phases.empty()) throw std::invalid_argument("track: empty scenario");
    const ScenarioPhase* active = nullptr;
    auto prepare = [&](int i, SymOperator& op) {
        const ScenarioPhase& ph = scenario.phase(i);
        if (&ph == active) return false;
        active = &ph;
        op.assign_matrix(ph.a);
        return true;
    };
    auto reference = [&](int i, const Vec& n_diag) { return scenario.reference(i, n_diag); };
    return run_tracker(scenario.n, scenario.length, config, p0, prepare, reference);
}

TrackTrace track_from_data(const Mat& data, CovarianceEstimator estimator, const TrackerConfig& config, const Mat& p0,
                           bool reference) {
    if (data.rows() != estimator.dim()) throw std::invalid_argument("track_from_data: data and estimator dimensions differ");
    if (data.cols() < 1) throw std::invalid_argument("track_from_data: empty data stream");
    auto prepare = [&](int i, SymOperator& op) {
        estimator.update(data.col(i));
        if (estimator.mode() == EstimatorMode::window) op.assign_factor(estimator.factor());
        else op.assign_matrix(estimator.estimate());
        return false;
    };
    auto ref = [&](int, const Vec& n_diag) {
        if (!reference) return std::nan("");
        Scenario s = constant_scenario(estimator.estimate(), 1);
        return s.reference(0, n_diag);
    };
    return run_tracker(static_cast<int>(data.rows()), static_cast<int>(data.cols()), config, p0, prepare, ref);
}

}  // namespace riemann
