#include <doctest.h>

#include "riemann/optimizers.hpp"
#include "test_util.hpp"

#include <numbers>

using namespace riemann;

namespace {

Vec random_unit(int n, std::mt19937_64& rng) {
    Vec v = random_normal(n, 1, rng).col(0);
    return v / v.norm();
}

TangentM random_m(int n, int k, std::mt19937_64& rng) {
    return {random_skew(k, rng), random_normal(n - k, k, rng)};
}

Vec descending(int hi, int lo) {
    Vec v(hi - lo + 1);
    for (int i = 0; i < v.size(); ++i) v(i) = hi - i;
    return v;
}

bool wolfe_ok(const LineSearchResult& r, double phi0, double dphi0, const LineSearchParams& p = {}) {
    return r.phi <= phi0 + p.rho * r.t * dphi0 && std::abs(r.dphi) <= -p.sigma * dphi0;
}

template <class Rec>
bool non_increasing(const std::vector<Rec>& recs, double slack) {
    for (size_t i = 1; i < recs.size(); ++i)
        if (recs[i].f > recs[i - 1].f + slack * (1.0 + std::abs(recs[i - 1].f))) return false;
    return true;
}

}  // namespace

// ------------------------------------------------------------- line search

TEST_CASE("wolfe powell on a parabola") {
    auto phi = [](double t) { return (t - 1.0) * (t - 1.0); };
    auto dphi = [](double t) { return 2.0 * (t - 1.0); };
    for (double trial : {1e-3, 0.5, 1.0, 3.0, 50.0}) {
        const LineSearchResult r = wolfe_powell(phi, dphi, 1.0, -2.0, trial);
        CHECK(r.ok);
        CHECK(wolfe_ok(r, 1.0, -2.0));
        CHECK(r.evals <= 12);
    }
    CHECK_THROWS_AS(wolfe_powell(phi, dphi, 1.0, 2.0, 1.0), std::invalid_argument);
    LineSearchParams bad;
    bad.sigma = 0.001;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("wolfe powell accepts a plateau and extrapolates from a tiny trial") {
    auto phi = [](double t) { return t < 1.0 ? -t + 0.5 * t * t : -0.5; };
    auto dphi = [](double t) { return t < 1.0 ? -1.0 + t : 0.0; };
    const LineSearchResult r = wolfe_powell(phi, dphi, 0.0, -1.0, 1e-4);
    CHECK(r.ok);
    CHECK(wolfe_ok(r, 0.0, -1.0));
    CHECK(r.t > 0.9);
}

TEST_CASE("wolfe powell reports failure on an unbounded descent") {
    LineSearchParams p;
    p.max_evals = 8;
    const LineSearchResult r = wolfe_powell([](double t) { return -t; }, [](double) { return -1.0; }, 0.0, -1.0, 1.0, p);
    CHECK_FALSE(r.ok);
    CHECK(r.t > 1.0);
    CHECK(r.evals == 8);
}

TEST_CASE("newton trial step") {
    CHECK(newton_trial_step(-2.0, 4.0, 7.0) == doctest::Approx(0.5));
    CHECK(newton_trial_step(-2.0, -4.0, 7.0) == 7.0);
    CHECK(newton_trial_step(-2.0, 1e-20, 7.0, 2.0) == 7.0);
}

TEST_CASE("brockett step keeps the trace non-decreasing") {
    auto rng = testutil::rng(70);
    const Mat nn = descending(5, 1).asDiagonal();
    CHECK_THROWS_AS(brockett_step(nn, Mat::Zero(5, 5), nn), std::domain_error);
    for (int trial = 0; trial < 20; ++trial) {
        const Mat h = random_symmetric(5, rng);
        Mat w = random_skew(5, rng);
        if ((h * w * nn).trace() < 0.0) w = -w;
        CHECK_THROWS_AS(brockett_step(h, -w, nn), std::domain_error);
        const double t = brockett_step(h, w, nn);
        REQUIRE(t > 0.0);
        double prev = (h * nn).trace();
        for (int i = 1; i <= 50; ++i) {
            const Mat e = skew_expm(w, -t * i / 50.0);
            const double cur = (e * h * e.transpose() * nn).trace();
            CHECK(cur >= prev - 1e-12 * (1.0 + std::abs(prev)));
            prev = cur;
        }
    }
}

TEST_CASE("exact circle step maximizes the rayleigh quotient on the circle") {
    auto rng = testutil::rng(71);
    const Mat q = random_symmetric(6, rng);
    for (int trial = 0; trial < 20; ++trial) {
        const Vec x = random_unit(6, rng);
        Vec h = random_normal(6, 1, rng).col(0);
        h -= x.dot(h) * x;
        h /= h.norm();
        const CircleStep cs = sphere_rayleigh_exact_step(x, h, q);
        CHECK_FALSE(cs.flat);
        CHECK(std::abs(cs.c * cs.c + cs.s * cs.s - 1.0) < 1e-14);
        const Vec y = x * cs.c + h * cs.s;
        const double best = y.dot(q * y);
        for (int i = 0; i < 360; ++i) {
            const double th = i * std::numbers::pi / 180.0;
            const Vec z = x * std::cos(th) + h * std::sin(th);
            CHECK(z.dot(q * z) <= best + 1e-12);
        }
        // The new gradient is orthogonal to the circle.
        const Vec tangent = -x * cs.s + h * cs.c;
        const Vec grad = 2.0 * (q * y - y.dot(q * y) * y);
        CHECK(std::abs(grad.dot(tangent)) < 1e-12 * (1.0 + q.norm()));
    }
    CHECK_THROWS_AS(sphere_rayleigh_exact_step(Vec::Unit(6, 0), 2.0 * Vec::Unit(6, 1), q), std::invalid_argument);
}

TEST_CASE("exact circle step edge cases") {
    const CircleStep stay = exact_circle_step(3.0, 0.0, 1.0);
    CHECK(stay.c == 1.0);
    CHECK(stay.s == 0.0);
    const CircleStep turn = exact_circle_step(1.0, 0.0, 3.0);
    CHECK(std::abs(turn.c) < 1e-15);
    CHECK(std::abs(turn.s) == doctest::Approx(1.0));
    CHECK(exact_circle_step(2.0, 0.0, 2.0).flat);
}

// ------------------------------------------------------------- sphere

TEST_CASE("sphere line matches direct evaluation") {
    auto rng = testutil::rng(72);
    const SphereRayleighProblem pr(random_symmetric(7, rng));
    const Vec x = random_unit(7, rng);
    Vec h = random_normal(7, 1, rng).col(0);
    h -= x.dot(h) * x;
    const auto line = pr.line(x, h);
    for (double t : {0.0, 0.1, 0.7, 2.0}) {
        const Vec y = sphere_exp(x, h, t);
        CHECK((line.point(t) - y).norm() < 1e-14);
        CHECK(line.phi(t) == doctest::Approx(pr.value(y)).epsilon(1e-13));
        auto phi = [&](double s) { return line.phi(t + s); };
        CHECK(line.dphi(t) == doctest::Approx(testutil::fd_first(phi, 1e-3)).epsilon(1e-7));
        const Vec tau_h = line.transport_direction(t, y);
        CHECK(std::abs(tau_h.dot(y)) < 1e-13);
        CHECK(tau_h.norm() == doctest::Approx(h.norm()));
        Vec v = random_normal(7, 1, rng).col(0);
        v -= x.dot(v) * x;
        const Vec vt = line.transport(t, y, v);
        CHECK(std::abs(vt.dot(y)) < 1e-13 * (1.0 + vt.norm()));
    }
    CHECK(line.dphi(0.0) == doctest::Approx(pr.gradient(x).dot(h)));
    CHECK(line.d2phi0() == doctest::Approx(pr.hess(x, h, h)));
}

TEST_CASE("steepest descent on the sphere converges linearly") {
    const SphereRayleighProblem pr(Mat(descending(10, 1).asDiagonal()));
    auto rng = testutil::rng(73);
    const Vec x0 = random_unit(10, rng);
    const Vec e1 = Vec::Unit(10, 0);
    StopCriteria stop;
    stop.grad_tol = 1e-10;
    stop.max_iters = 2000;
    const auto res = steepest_descent(pr, x0, stop, {}, [&](const Vec& x) { return std::min((x - e1).norm(), (x + e1).norm()); });
    CHECK(res.trace.converged);
    CHECK(non_increasing(res.trace.records, 1e-14));
    const auto& rec = res.trace.records;
    REQUIRE(rec.size() > 10);
    // Error ratios settle below one and are not superlinear.
    std::vector<double> ratios;
    for (size_t i = rec.size() / 2; i + 1 < rec.size(); ++i)
        if (rec[i].dist > 1e-9) ratios.push_back(rec[i + 1].dist / rec[i].dist);
    REQUIRE(ratios.size() >= 3);
    for (double r : ratios) {
        CHECK(r < 0.99);
        CHECK(r > 1e-3);
    }
}

TEST_CASE("newton on the sphere converges at least quadratically") {
    const Vec lam = descending(8, 1);
    const SphereRayleighProblem pr(Mat(lam.asDiagonal()));
    Vec x0 = Vec::Unit(8, 0);
    x0(1) = 0.2;
    x0(5) = -0.1;
    x0 /= x0.norm();
    const Vec e1 = Vec::Unit(8, 0);
    StopCriteria stop;
    stop.grad_tol = 1e-13;
    stop.max_iters = 20;
    const auto res = newton(pr, x0, stop, [&](const Vec& x) { return std::min((x - e1).norm(), (x + e1).norm()); });
    CHECK(res.trace.converged);
    CHECK(res.trace.records.size() <= 6);
    const auto& rec = res.trace.records;
    for (size_t i = 0; i + 1 < rec.size(); ++i) {
        const double e = rec[i].dist, en = rec[i + 1].dist;
        if (e < 0.1 && en > 1e-14) CHECK(std::log(en) / std::log(e) >= 1.9);
    }
}

TEST_CASE("conjugate gradient on S^2 converges superlinearly") {
    auto rng = testutil::rng(74);
    for (auto mode : {GammaMode::hessian, GammaMode::transported}) {
        const SphereRayleighProblem pr(random_symmetric(3, rng));
        CgOptions opt;
        opt.stop.grad_tol = 1e-10;
        opt.gamma = mode;
        const auto res = conjugate_gradient(pr, random_unit(3, rng), opt);
        CHECK(res.trace.converged);
        CHECK(res.trace.records.size() <= 10);
        CHECK(non_increasing(res.trace.records, 1e-14));
        const auto& rec = res.trace.records;
        const size_t m = rec.size();
        REQUIRE(m >= 4);
        CHECK(rec[m - 1].grad_norm / rec[m - 2].grad_norm < rec[m - 3].grad_norm / rec[m - 4].grad_norm);
        const SymEig eig = sym_eig_oracle(pr.rayleigh().q());
        CHECK(-res.trace.records.back().f == doctest::Approx(eig.values(0)).epsilon(1e-12));
    }
}

TEST_CASE("conjugate gradient resets on the period") {
    auto rng = testutil::rng(75);
    const SphereRayleighProblem pr(Mat(descending(20, 1).asDiagonal()));
    CgOptions opt;
    opt.stop.grad_tol = 1e-12;
    opt.stop.max_iters = 100;
    const auto res = conjugate_gradient(pr, random_unit(20, rng), opt);
    CHECK(res.trace.converged);
    const auto& rec = res.trace.records;
    CHECK(rec[0].reset);
    int last_reset = 0;
    for (size_t i = 1; i + 1 < rec.size(); ++i) {
        if (rec[i].reset) last_reset = static_cast<int>(i);
        CHECK(static_cast<int>(i) - last_reset <= pr.dimension());
    }
}

// ------------------------------------------------------------- SO(n)

TEST_CASE("trace QN: CG and Newton reach the sorted diagonal") {
    auto rng = testutil::rng(76);
    const Vec lam = descending(6, 1);
    const Mat q0 = random_frame(6, 6, rng);
    const Mat q = q0 * lam.asDiagonal() * q0.transpose();
    const SoProblem<TraceQN> pr(TraceQN(q, lam));
    const double fmax = lam.squaredNorm();
    CgOptions opt;
    opt.stop.grad_tol = 1e-10;
    opt.stop.max_iters = 500;
    const auto cg = conjugate_gradient(pr, Mat(Mat::Identity(6, 6)), opt);
    CHECK(cg.trace.converged);
    CHECK(-cg.trace.records.back().f == doctest::Approx(fmax).epsilon(1e-10));
    CHECK(non_increasing(cg.trace.records, 1e-13));
    const Mat h = cg.point.transpose() * q * cg.point;
    CHECK((h - Mat(lam.asDiagonal())).norm() < 1e-7);

    StopCriteria stop;
    stop.grad_tol = 1e-10;
    const auto nt = newton(pr, so_exp(cg.point, 0.02 * random_skew(6, rng), 1.0), stop);
    CHECK(nt.trace.converged);
    CHECK(nt.trace.records.size() <= 6);
}

TEST_CASE("SO line pieces agree with the objective") {
    auto rng = testutil::rng(77);
    const SoProblem<JacobiObjective> pr{JacobiObjective(random_symmetric(5, rng))};
    const Mat th = random_frame(5, 5, rng);
    const Mat w = random_skew(5, rng);
    const auto line = pr.line(th, w);
    auto phi = [&](double t) { return line.phi(t); };
    CHECK(line.dphi(0.0) == doctest::Approx(testutil::fd_first(phi, 1e-3)).epsilon(1e-6));
    CHECK(line.d2phi0() == doctest::Approx(testutil::fd_second(phi, 1e-2)).epsilon(1e-5));
    const Mat v = random_skew(5, rng);
    const Mat vt = line.transport(0.8, line.point(0.8), v);
    CHECK(is_skew(vt));
    CHECK(vt.norm() == doctest::Approx(v.norm()));
}

// ------------------------------------------------------------- Stiefel

TEST_CASE("stiefel line matches direct evaluation, reduced and full") {
    auto rng = testutil::rng(78);
    for (int n : {9, 5}) {
        const int k = 3;
        const SymOperator a = SymOperator::from_matrix(random_symmetric(n, rng));
        Vec nd(3);
        nd << 3, 2, 1;
        const StiefelRayleighProblem pr(&a, nd);
        const StiefelPoint x(random_frame(n, k, rng));
        const TangentM h = random_m(n, k, rng);
        const auto line = pr.line(x, h);
        const StiefelGeodesic geo(x.g, h);
        CHECK(geo.reduced() == (2 * k <= n));
        for (double t : {0.0, 0.05, 0.4, 1.3}) {
            const Mat pt = geo.point(t);
            CHECK((line.point(t).p - pt).norm() < 1e-12);
            CHECK(line.phi(t) == doctest::Approx(-pr.rho().value(pt)).epsilon(1e-12));
            auto phi = [&](double s) { return line.phi(t + s); };
            CHECK(line.dphi(t) == doctest::Approx(testutil::fd_first(phi, 1e-3)).epsilon(1e-6));
        }
        CHECK(line.dphi(0.0) == doctest::Approx(pr.inner(x, pr.gradient(x), h)).epsilon(1e-12));
        CHECK(line.d2phi0() == doctest::Approx(pr.hess(x, h, h)).epsilon(1e-10));
        auto phi = [&](double s) { return line.phi(s); };
        CHECK(line.d2phi0() == doctest::Approx(testutil::fd_second(phi, 1e-2)).epsilon(1e-5));
    }
}

TEST_CASE("stiefel transported direction and cached conjugacy") {
    auto rng = testutil::rng(79);
    const int n = 10, k = 3;
    const SymOperator a = SymOperator::from_matrix(random_symmetric(n, rng));
    Vec nd(3);
    nd << 1.5, 1.0, 0.25;
    const StiefelRayleighProblem pr(&a, nd);
    const StiefelPoint x(random_frame(n, k, rng));
    const TangentM h = random_m(n, k, rng);
    const auto line = pr.line(x, h);
    const StiefelGeodesic geo(x.g, h);
    for (double t : {0.3, 1.1}) {
        const StiefelPoint at = line.point(t);
        const TangentM tau_h = line.transport_direction(t, at);
        CHECK((at.g.ambient(tau_h) - geo.velocity(t)).norm() < 1e-12);
        CHECK(norm(tau_h) == doctest::Approx(norm(h)).epsilon(1e-12));
        const TangentM g = random_m(n, k, rng);
        const auto [hg, hh] = line.conjugacy(t, at, tau_h, g);
        CHECK(hg == doctest::Approx(pr.hess(at, tau_h, g)).epsilon(1e-10));
        CHECK(hh == doctest::Approx(pr.hess(at, tau_h, tau_h)).epsilon(1e-10));
    }
    CHECK_THROWS_AS(line.transport(0.3, line.point(0.3), h), std::logic_error);
}

TEST_CASE("stiefel CG finds the dominant subspace") {
    auto rng = testutil::rng(80);
    const int n = 12, k = 3;
    const Vec lam = descending(12, 1);
    const Mat q0 = random_frame(n, n, rng);
    const SymOperator a = SymOperator::from_matrix(q0 * lam.asDiagonal() * q0.transpose());
    Vec nd(3);
    nd << 3, 2, 1;
    const StiefelRayleighProblem pr(&a, nd);
    CgOptions opt;
    opt.stop.grad_tol = 1e-9;
    opt.stop.max_iters = 300;
    const auto res = conjugate_gradient(pr, StiefelPoint(random_frame(n, k, rng)), opt);
    CHECK(res.trace.converged);
    CHECK(non_increasing(res.trace.records, 1e-13));
    CHECK(-res.trace.records.back().f == doctest::Approx(3 * 12 + 2 * 11 + 10).epsilon(1e-12));
    CHECK(orthonormality_error(res.point.p) < 1e-12);
    // Columns align with the eigenvectors, in weight order.
    for (int j = 0; j < k; ++j) CHECK(std::abs(q0.col(j).dot(res.point.p.col(j))) == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("stiefel wolfe powell step is near the first line minimizer") {
    auto rng = testutil::rng(81);
    const int n = 8, k = 2;
    const SymOperator a = SymOperator::from_matrix(random_symmetric(n, rng));
    Vec nd(2);
    nd << 2, 1;
    const StiefelRayleighProblem pr(&a, nd);
    for (int trial = 0; trial < 10; ++trial) {
        const StiefelPoint x(random_frame(n, k, rng));
        const TangentM g = -pr.gradient(x);
        auto line = pr.line(x, g);
        const double step = wolfe_powell_rule(pr)(x, g, line);
        // First local minimizer from a dense scan.
        double prev = line.phi(0.0), tmin = 0.0;
        for (int i = 1; i <= 20000; ++i) {
            const double t = 1e-4 * i;
            const double f = line.phi(t);
            if (f > prev) {
                tmin = t - 1e-4;
                break;
            }
            prev = f;
        }
        REQUIRE(tmin > 0.0);
        CHECK(step >= 0.1 * tmin);
        CHECK(step <= 10.0 * tmin);
    }
}
