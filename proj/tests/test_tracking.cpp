#include <doctest.h>

#include "riemann/tracking.hpp"
#include "test_util.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>

using namespace riemann;

namespace {

Vec weights(std::initializer_list<double> v) {
    Vec d(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) d(i++) = x;
    return d;
}

Mat projector(const Mat& p) { return p * p.transpose(); }

// Frame converged on A_0, so a step in the scenario meets a settled iterate.
Mat warm_frame(const Scenario& s, const Vec& nu, std::uint64_t seed) {
    TopkOptions o;
    o.cg.stop.max_iters = 600;
    const EigResult r = topk_eigpairs_stiefel(SymOperator::from_matrix(s.at(0)), nu, random_start(s.n, static_cast<int>(nu.size()), seed), o);
    REQUIRE(r.trace.converged);
    return r.frame;
}

}  // namespace

// ------------------------------------------------------------- estimators

TEST_CASE("window estimator of a constant signal is x x^T") {
    auto g = testutil::rng(1);
    const Vec x = random_normal(5, 1, g).col(0);
    auto est = CovarianceEstimator::window(5, 4);
    for (int t = 0; t < 9; ++t) est.update(x);
    CHECK((est.estimate() - x * x.transpose()).norm() < 1e-12);
    CHECK((est.factor() * est.factor().transpose() - est.estimate()).norm() < 1e-12);
}

TEST_CASE("window of basis vectors gives I / l") {
    auto est = CovarianceEstimator::window(4, 4);
    for (int t = 0; t < 8; ++t) est.update(Vec::Unit(4, t % 4));
    CHECK((est.estimate() - Mat::Identity(4, 4) / 4.0).norm() < 1e-15);
}

TEST_CASE("window estimator matches a recompute from scratch") {
    auto g = testutil::rng(2);
    const int n = 6, l = 5;
    const Mat data = random_normal(n, 40, g);
    auto est = CovarianceEstimator::window(n, l);
    for (int t = 0; t < data.cols(); ++t) {
        est.update(data.col(t));
        const int first = std::max(0, t - l + 1);
        const int m = t - first + 1;
        const Mat block = data.middleCols(first, m);
        // Normalized by the samples seen while the window is filling.
        CHECK((est.estimate() - block * block.transpose() / m).norm() < 1e-12);
    }
    CHECK_THROWS_AS(est.update(Vec::Zero(n + 1)), std::invalid_argument);
}

TEST_CASE("fading normalized estimator") {
    auto g = testutil::rng(3);
    const Mat r0 = random_symmetric(4, g);
    auto est = CovarianceEstimator::fading_normalized(r0);
    for (int t = 0; t < 3; ++t) est.update(Vec::Zero(4));
    CHECK((est.estimate() - r0 / r0.norm()).norm() < 1e-15);

    const Vec x = random_normal(4, 1, g).col(0);
    est.update(x);
    const Mat p = r0 / r0.norm() + x * x.transpose();
    CHECK((est.estimate() - p / p.norm()).norm() < 1e-14);
    CHECK(est.estimate().norm() == doctest::Approx(1.0));

    auto zero = CovarianceEstimator::fading_normalized(Mat::Zero(3, 3));
    CHECK_THROWS_AS(zero.update(Vec::Zero(3)), std::domain_error);
}

TEST_CASE("fading weighted estimator") {
    auto g = testutil::rng(4);
    const Mat r0 = random_symmetric(3, g);
    auto frozen = CovarianceEstimator::fading_weighted(r0, 1.0, 0.0);
    for (int t = 0; t < 5; ++t) frozen.update(random_normal(3, 1, g).col(0));
    CHECK(frozen.estimate() == r0);

    auto est = CovarianceEstimator::fading_weighted(r0, [](long t) { return std::pair{0.5 + 0.1 * t, 2.0 - t}; });
    const Vec x1 = random_normal(3, 1, g).col(0), x2 = random_normal(3, 1, g).col(0);
    est.update(x1);
    est.update(x2);
    const Mat r1 = 0.5 * r0 + 2.0 * x1 * x1.transpose();
    const Mat r2 = 0.6 * r1 + 1.0 * x2 * x2.transpose();
    CHECK((est.estimate() - r2).norm() < 1e-13);
    CHECK(est.count() == 2);
    CHECK_THROWS_AS(est.factor(), std::logic_error);
}

// ------------------------------------------------------------- scenarios

TEST_CASE("first scenario rotates the top-2 subspace after the step") {
    const Scenario s = scenario_first();
    CHECK(s.n == 100);
    CHECK(s.step_times() == std::vector<int>{41});
    Vec ramp(100);
    for (int i = 0; i < 100; ++i) ramp(i) = 100 - i;
    CHECK(s.at(0) == Mat(ramp.asDiagonal()));
    CHECK(s.at(40) == Mat(ramp.asDiagonal()));
    const Mat th = plane_rotation(100, 0, 1, 135.0);
    const SymEig after = sym_eig_oracle(s.at(41));
    const Mat top2 = after.vectors.leftCols(2);
    CHECK((projector(top2) - projector(th * Mat::Identity(100, 2))).norm() < 1e-10);
    CHECK(s.reference(10, weights({3, 2, 1})) == doctest::Approx(596.0));
    CHECK(s.reference(60, weights({3, 2, 1})) == doctest::Approx(596.0));
}

TEST_CASE("second scenario carries the raised eigenvalues") {
    const Scenario s = scenario_second();
    const SymEig after = sym_eig_oracle(s.at(50));
    CHECK(after.values(0) == doctest::Approx(103.0));
    CHECK(after.values(1) == doctest::Approx(102.0));
    CHECK(after.values(2) == doctest::Approx(101.0));
    CHECK(after.values(3) == doctest::Approx(100.0));
    CHECK(s.reference(50, weights({3, 2, 1})) == doctest::Approx(3 * 103 + 2 * 102 + 101.0));
}

TEST_CASE("third scenario moves the top-3 eigenvalues to e4, e5, e6") {
    const Scenario s = scenario_third();
    const SymEig after = sym_eig_oracle(s.at(41));
    CHECK(after.values(0) == doctest::Approx(100.0));
    CHECK(after.values(1) == doctest::Approx(99.0));
    CHECK(after.values(2) == doctest::Approx(98.0));
    Mat e456 = Mat::Zero(100, 3);
    for (int j = 0; j < 3; ++j) e456(3 + j, j) = 1.0;
    CHECK((projector(after.vectors.leftCols(3)) - projector(e456)).norm() < 1e-10);
}

TEST_CASE("scenario helpers validate their input") {
    CHECK_THROWS_AS(scenario_by_name("fourth"), std::invalid_argument);
    CHECK_THROWS_AS(scenario_first(100, 30, 40), std::invalid_argument);
    Mat ns = Mat::Zero(3, 3);
    ns(0, 1) = 1.0;
    CHECK_THROWS_AS(constant_scenario(ns, 5), std::invalid_argument);
    const Mat r = plane_rotation(5, 1, 3, 135.0);
    CHECK(orthonormality_error(r) < 1e-15);
    CHECK(r.determinant() == doctest::Approx(1.0));
    CHECK_THROWS_AS(plane_rotation(5, 2, 2, 10.0), std::invalid_argument);
    // Negative weights pair with the smallest eigenvalues.
    const Scenario c = constant_scenario(Mat(weights({4, 3, 2, 1}).asDiagonal()), 3);
    CHECK(c.reference(0, weights({2, -1})) == doctest::Approx(2 * 4 - 1 * 1.0));
}

// ------------------------------------------------------------- tracker

TEST_CASE("tracking a constant matrix follows the eigensolver's trajectory") {
    auto g = testutil::rng(5);
    const Mat a = random_symmetric(30, g);
    const Vec nu = weights({3, 2, 1});
    const Mat p0 = random_start(30, 3, 9);
    TrackerConfig cfg;
    cfg.n_diag = nu;
    const TrackTrace tr = track(constant_scenario(a, 25), cfg, p0);
    TopkOptions o;
    o.cg.stop.max_iters = 24;
    const EigResult ref = topk_eigpairs_stiefel(SymOperator::from_matrix(a), nu, p0, o);
    REQUIRE(ref.trace.records.size() == 25);
    for (int i = 0; i < 25; ++i) {
        CHECK(tr.records[i].rho == doctest::Approx(ref.trace.records[i].f).epsilon(1e-12));
        CHECK(tr.records[i].resorted == ref.details[i].resorted);
    }
}

TEST_CASE("tracker keeps the frame orthonormal and records every sample") {
    TrackerConfig cfg;
    cfg.n_diag = weights({3, 2, 1});
    const TrackTrace tr = track(scenario_second(), cfg, random_start(100, 3, 2));
    REQUIRE(tr.records.size() == 100);
    for (const auto& r : tr.records) {
        CHECK(r.orthonormality <= 1e-9);
        CHECK(r.diag.size() == 3);
        CHECK(r.gap == doctest::Approx(std::abs(r.rho - r.reference)));
    }
    CHECK(orthonormality_error(tr.frame) <= 1e-9);
}

TEST_CASE("sorting rule is idempotent") {
    auto g = testutil::rng(6);
    const SymOperator op = SymOperator::from_matrix(random_symmetric(12, g));
    for (SortAction action : {SortAction::resort_n, SortAction::resort_columns}) {
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            StiefelRayleighProblem problem(&op, weights({1, 3, 2, 4}));
            StiefelPoint x(random_start(12, 4, seed));
            Vec diag;
            apply_sort_policy(x, problem, SortPolicy{true, action}, diag);
            CHECK(similarly_ordered(diag, problem.rho().n_diag()));
            CHECK_FALSE(apply_sort_policy(x, problem, SortPolicy{true, action}, diag));
        }
    }
}

TEST_CASE("reset at the step does no worse than plain tracking") {
    const Scenario s = scenario_first();
    const Vec nu = weights({3, 2, 1});
    const Mat p0 = warm_frame(s, nu, 1);
    TrackerConfig plain;
    plain.n_diag = nu;
    TrackerConfig reset = plain;
    reset.reset_on_step = true;
    const TrackTrace a = track(s, plain, p0);
    const TrackTrace b = track(s, reset, p0);
    CHECK(b.records[41].reset);
    CHECK(b.records[80].gap <= a.records[80].gap);
    // The rotation leaves the top-3 eigenvalues unchanged; recovered within a few samples.
    for (int i = 45; i < 100; ++i) {
        Vec d = b.records[i].diag;
        std::sort(d.data(), d.data() + 3);
        CHECK(std::abs(d(0) - 98) < 1e-2);
        CHECK(std::abs(d(2) - 100) < 1e-2);
    }
}

TEST_CASE("gradient vanishes at an exact saddle frame") {
    const SymOperator op = SymOperator::from_matrix(Mat(weights({4, 3, 2, 1}).asDiagonal()));
    const GenRayleigh rho(&op, weights({2, 1}));
    Mat p = Mat::Zero(4, 2);
    p(2, 0) = 1.0;
    p(3, 1) = 1.0;
    const StiefelCoset g(p);
    CHECK(norm(rho.gradient(g, op.apply(g.point()))) <= 1e-14);
}

TEST_CASE("jitter is seeded and fires only near a saddle") {
    const Scenario s = scenario_third(12, 30, 10);
    const Vec nu = weights({3, 2, 1});
    const Mat p0 = warm_frame(s, nu, 4);
    TrackerConfig cfg;
    cfg.n_diag = nu;
    cfg.jitter = true;
    cfg.jitter_seed = 17;
    const TrackTrace a = track(s, cfg, p0), b = track(s, cfg, p0);
    bool fired = false;
    for (size_t i = 0; i < a.records.size(); ++i) {
        CHECK(a.records[i].rho == b.records[i].rho);
        fired = fired || a.records[i].jittered;
        if (a.records[i].jittered) {
            CHECK(a.records[i].grad_norm < 1e-11);
            CHECK(a.records[i].gap > 1.0);
        }
    }
    CHECK(fired);
    cfg.jitter = false;
    for (const auto& r : track(s, cfg, p0).records) CHECK_FALSE(r.jittered);
}

TEST_CASE("reset on jump and several steps per sample") {
    const Mat d = Mat(weights({6, 5, 4, 3, 2, 1}).asDiagonal());
    const Scenario s = make_scenario("jump", 20, {{0, d}, {10, 3.0 * d}});
    TrackerConfig cfg;
    cfg.n_diag = weights({2, 1});
    cfg.reset_on_jump = true;
    cfg.steps_per_sample = 3;
    const TrackTrace tr = track(s, cfg, random_start(6, 2, 1));
    CHECK(tr.records[10].reset);
    CHECK(tr.records.back().gap < 1e-8);
    cfg.steps_per_sample = 0;
    CHECK_THROWS_AS(track(s, cfg, random_start(6, 2, 1)), std::invalid_argument);
}

// ------------------------------------------------------------- data streams

TEST_CASE("tracking a periodic rank-2 stream finds the signal subspace") {
    auto g = testutil::rng(7);
    const int n = 10;
    const Mat basis = random_frame(n, 2, g);
    // Alternating 3 b1, b2: the window estimate is constant once the window fills.
    Mat data(n, 120);
    for (int t = 0; t < data.cols(); ++t) data.col(t) = t % 2 ? Vec(basis.col(1)) : Vec(3.0 * basis.col(0));
    TrackerConfig cfg;
    cfg.n_diag = weights({2, 1});
    const TrackTrace tr = track_from_data(data, CovarianceEstimator::window(n, 4), cfg, random_start(n, 2, 3));
    CHECK((projector(tr.frame) - projector(basis)).norm() < 1e-10);
    CHECK(tr.records.back().reference == doctest::Approx(2 * 4.5 + 0.5));
    CHECK(tr.records.back().gap < 1e-12);

    const TrackTrace faded = track_from_data(
        data, CovarianceEstimator::fading_normalized(Mat::Identity(n, n) * 1e-3), cfg, random_start(n, 2, 3));
    CHECK((projector(faded.frame) - projector(basis)).norm() < 1e-10);
    CHECK(faded.records.back().gap < 1e-12);
}

TEST_CASE("a zero stream leaves the frame where it started") {
    TrackerConfig cfg;
    cfg.n_diag = weights({2, 1});
    const Mat p0 = random_start(5, 2, 1);
    const TrackTrace tr = track_from_data(Mat::Zero(5, 8), CovarianceEstimator::window(5, 4), cfg, p0);
    for (const auto& r : tr.records) CHECK(r.grad_norm == 0.0);
    CHECK((projector(tr.frame) - projector(p0)).norm() < 1e-14);
    CHECK_THROWS_AS(track_from_data(Mat::Zero(6, 8), CovarianceEstimator::window(5, 4), cfg, p0),
                    std::invalid_argument);
}
