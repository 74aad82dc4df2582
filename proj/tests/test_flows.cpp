#include <doctest.h>

#include "riemann/eigensolvers.hpp"
#include "riemann/flows.hpp"
#include "test_util.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>

using namespace riemann;

namespace {

Mat diag_of(std::initializer_list<double> v) {
    Vec d(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) d(i++) = x;
    return d.asDiagonal();
}

Mat rect_diag(int rows, int cols, const Vec& d) {
    Mat m = Mat::Zero(rows, cols);
    for (Eigen::Index i = 0; i < d.size(); ++i) m(i, i) = d(i);
    return m;
}

bool monotone_objective(const FlowTrace& tr, double slack) {
    for (size_t s = 1; s < tr.samples.size(); ++s)
        if (tr.samples[s].objective < tr.samples[s - 1].objective - slack) return false;
    return true;
}

Vec sorted_real_eigenvalues(const Mat& m) {
    const Eigen::EigenSolver<Mat> es(m);
    Vec re = es.eigenvalues().real();
    std::sort(re.data(), re.data() + re.size());
    return re;
}

const RateEntry& find_entry(const RateReport& r, int i, int j) {
    for (const auto& e : r.entries)
        if (e.i == i && e.j == j) return e;
    throw std::logic_error("missing entry");
}

}  // namespace

TEST_CASE("svd_bracket is skew and uses m - 2 scaling") {
    auto g = testutil::rng(1);
    const Mat a = random_normal(6, 3, g), b = random_normal(6, 3, g);
    const Mat c = svd_bracket(a, b);
    CHECK((c + c.transpose()).norm() < 1e-14);
    CHECK((c * 4.0 - (a * b.transpose() - b * a.transpose())).norm() < 1e-12);
    const Mat a2 = random_normal(2, 2, g), b2 = random_normal(2, 2, g);
    CHECK((svd_bracket(a2, b2) - (a2 * b2.transpose() - b2 * a2.transpose())).norm() < 1e-15);
    CHECK_THROWS_AS(svd_bracket(a, a2), std::invalid_argument);
}

// ------------------------------------------------------------- rk4

TEST_CASE("rk4 on x' = -x matches the exponential") {
    const FlowRhs rhs = [](double, const Mat& x) { return Mat(-x); };
    const FlowTrace tr = rk4_integrate(rhs, Mat::Constant(1, 1, 1.0), 1.0, 1e-2);
    CHECK(tr.samples.size() == 101);
    for (const auto& s : tr.samples) CHECK(std::abs(s.state(0, 0) - std::exp(-s.t)) < 1e-8);
    CHECK(tr.samples.back().t == 1.0);
}

TEST_CASE("rk4 leaves a constant state alone under a zero field") {
    auto g = testutil::rng(2);
    const Mat x0 = random_normal(3, 4, g);
    const FlowTrace tr = rk4_integrate([](double, const Mat& x) { return Mat(Mat::Zero(x.rows(), x.cols())); }, x0,
                                       2.0, 0.1);
    for (const auto& s : tr.samples) CHECK(s.state == x0);
}

TEST_CASE("rk4 error drops about 16x when the step is halved") {
    // x' = t x - x^2 has no convenient closed form; the reference is a fine-step run.
    const FlowRhs rhs = [](double t, const Mat& x) { return Mat(t * x - x.cwiseProduct(x)); };
    const Mat x0 = Mat::Constant(1, 1, 0.5);
    const double ref = rk4_integrate(rhs, x0, 2.0, 1e-4).samples.back().state(0, 0);
    const double e1 = std::abs(rk4_integrate(rhs, x0, 2.0, 0.2).samples.back().state(0, 0) - ref);
    const double e2 = std::abs(rk4_integrate(rhs, x0, 2.0, 0.1).samples.back().state(0, 0) - ref);
    const double ratio = e1 / e2;
    CHECK(ratio > 12.0);
    CHECK(ratio < 20.0);
}

TEST_CASE("rk4 shortens the last step and records every k-th sample") {
    Rk4Options opts;
    opts.record_every = 4;
    const FlowTrace tr = rk4_integrate([](double, const Mat& x) { return Mat(-x); }, Mat::Constant(1, 1, 1.0), 1.05,
                                       0.1, opts);
    // Steps 4, 8 and the final 11th.
    REQUIRE(tr.samples.size() == 4);
    CHECK(tr.samples.back().t == doctest::Approx(1.05));
    CHECK(std::abs(tr.samples.back().state(0, 0) - std::exp(-1.05)) < 1e-6);
}

TEST_CASE("rk4 reports blow-up and rejects bad steps") {
    const FlowTrace tr = rk4_integrate([](double, const Mat& x) { return Mat(x.cwiseProduct(x)); },
                                       Mat::Constant(1, 1, 1.0), 5.0, 0.1);
    CHECK(tr.status == "non_finite");
    const FlowTrace zero = rk4_integrate([](double, const Mat& x) { return x; }, Mat::Constant(1, 1, 1.0), 0.0, 0.1);
    CHECK(zero.samples.size() == 1);
    CHECK_THROWS_AS(rk4_integrate([](double, const Mat& x) { return x; }, Mat::Zero(1, 1), 1.0, 0.0),
                    std::invalid_argument);
}

// ------------------------------------------------------------- double bracket

TEST_CASE("double bracket flow on a 2 x 2 converges to the ordered spectrum") {
    Mat h0(2, 2);
    h0 << 1, .3, .3, 2;
    const FlowTrace tr = double_bracket_flow(h0, diag_of({1, 2}), 20.0, 1e-3, 100);
    const Mat& h = tr.samples.back().state;
    const double r = std::sqrt(0.25 + 0.09);
    CHECK(std::abs(h(0, 1)) < 1e-10);
    CHECK(h(0, 0) == doctest::Approx(1.5 - r).epsilon(1e-10));
    CHECK(h(1, 1) == doctest::Approx(1.5 + r).epsilon(1e-10));
    CHECK(monotone_objective(tr, 1e-12));
}

TEST_CASE("double bracket flow keeps the spectrum and climbs tr HN at rate |[H,N]|^2") {
    auto g = testutil::rng(3);
    const Mat h0 = random_symmetric(6, g);
    const Mat n = diag_of({6, 5, 4, 3, 2, 1});
    const FlowTrace tr = double_bracket_flow(h0, n, 3.0, 1e-3, 1);
    CHECK(tr.status == "ok");
    CHECK(tr.max_drift <= 1e-6);
    CHECK(monotone_objective(tr, 1e-12));
    for (size_t s : {size_t{10}, size_t{500}, size_t{1500}}) {
        const double dt = tr.samples[s + 1].t - tr.samples[s - 1].t;
        const double fd = (tr.samples[s + 1].objective - tr.samples[s - 1].objective) / dt;
        const Mat& h = tr.samples[s].state;
        const double exact = commutator(h, n).squaredNorm();
        CHECK(std::abs(fd - exact) <= 1e-4 * (1.0 + exact));
        CHECK((h - h.transpose()).norm() < 1e-12);
    }
}

TEST_CASE("double bracket limits are diagonal and ordered like N") {
    const Mat n = diag_of({6, 5, 4, 3, 2, 1});
    for (unsigned seed = 10; seed < 14; ++seed) {
        auto g = testutil::rng(seed);
        const Mat h0 = random_symmetric(6, g);
        const FlowTrace tr = double_bracket_flow(h0, n, 60.0, 5e-3, 200);
        const Mat& h = tr.samples.back().state;
        const Mat off = h - Mat(h.diagonal().asDiagonal());
        CHECK(off.norm() < 1e-6);
        CHECK(similarly_ordered(h.diagonal(), n.diagonal()));
    }
}

// ------------------------------------------------------------- SO(n)

TEST_CASE("SO(n) flow reproduces the double bracket trajectory") {
    auto g = testutil::rng(4);
    const Mat q = random_symmetric(4, g);
    const Mat n = diag_of({4, 3, 2, 1});
    Mat theta0 = random_frame(4, 4, g);
    if (theta0.determinant() < 0) theta0.col(0) *= -1.0;
    const FlowTrace so = so_gradient_flow(q, n, theta0, 2.0, 1e-3, 50);
    const FlowTrace db = double_bracket_flow(theta0.transpose() * q * theta0, n, 2.0, 1e-3, 50);
    REQUIRE(so.samples.size() == db.samples.size());
    double worst = 0.0;
    for (size_t s = 0; s < so.samples.size(); ++s) {
        const Mat& th = so.samples[s].state;
        worst = std::max(worst, (th.transpose() * q * th - db.samples[s].state).norm());
        CHECK(std::abs(th.determinant() - 1.0) < 1e-8);
        CHECK(orthonormality_error(th) <= 1e-9);
        CHECK(so.samples[s].objective == doctest::Approx(db.samples[s].objective).epsilon(1e-8));
    }
    CHECK(worst < 1e-5);
}

TEST_CASE("SO(n) flow projects back when a coarse step drifts") {
    auto g = testutil::rng(5);
    const Mat q = random_symmetric(5, g) * 3.0;
    const Mat n = diag_of({5, 4, 3, 2, 1});
    Mat theta0 = random_frame(5, 5, g);
    if (theta0.determinant() < 0) theta0.col(0) *= -1.0;
    const FlowTrace tr = so_gradient_flow(q, n, theta0, 1.0, 2e-2, 1);
    CHECK(tr.projections > 0);
    for (const auto& s : tr.samples) CHECK(orthonormality_error(s.state) <= 1e-9);
    CHECK_THROWS_AS(so_gradient_flow(q, n, -theta0, 1.0, 1e-2), std::invalid_argument);
}

// ------------------------------------------------------------- generalized Rayleigh

TEST_CASE("generalized Rayleigh flow on V(4,2) reaches (e1 e2) at the predicted rates") {
    Vec lam(4);
    lam << 10, 7, 4, 1;
    Vec nu(2);
    nu << 2, 1;
    const Mat p0 = random_start(4, 2, 3);
    const FlowTrace tr = genray_flow(lam.asDiagonal(), nu, p0, 8.0, 1e-3, 10);
    const Mat& p = tr.samples.back().state;
    CHECK(std::abs(std::abs(p(0, 0)) - 1.0) < 1e-9);
    CHECK(std::abs(std::abs(p(1, 1)) - 1.0) < 1e-9);
    CHECK(tr.max_drift <= 1e-9);
    CHECK(monotone_objective(tr, 1e-12));

    const RateReport r = rate_regression(tr, {{1, 0}, {2, 1}, {3, 1}, {2, 0}, {3, 0}});
    for (auto [i, j] : {std::pair{1, 0}, std::pair{2, 1}, std::pair{3, 1}}) {
        const RateEntry& e = find_entry(r, i, j);
        REQUIRE(e.measurable);
        const double pred = genray_predicted_rate(lam, nu, i, j);
        CHECK(std::abs(e.measured - pred) <= 0.1 * pred);
    }
    // p(2,0) and p(3,0) have faster linear modes than the products feeding
    // them, so their late decay is the sum of two slower rates.
    CHECK(find_entry(r, 2, 0).measured == doctest::Approx(find_entry(r, 1, 0).measured + find_entry(r, 2, 1).measured).epsilon(0.05));
    CHECK(find_entry(r, 3, 0).measured == doctest::Approx(find_entry(r, 1, 0).measured + find_entry(r, 3, 1).measured).epsilon(0.05));
}

TEST_CASE("generalized Rayleigh flow agrees with the CG eigensolver") {
    auto g = testutil::rng(6);
    const Mat a = random_symmetric(8, g);
    Vec nu(3);
    nu << 3, 2, 1;
    const Mat p0 = random_start(8, 3, 11);
    const FlowTrace tr = genray_flow(a, nu, p0, 60.0, 5e-3, 100);
    const EigResult cg = topk_eigpairs_stiefel(SymOperator::from_matrix(a), nu, p0);
    const Mat& p = tr.samples.back().state;
    // The CG solver may permute N on the way, so the diagonals are compared as sets.
    Vec flow_diag = (p.transpose() * a * p).diagonal(), cg_diag = cg.eigenvalues;
    std::sort(flow_diag.data(), flow_diag.data() + 3);
    std::sort(cg_diag.data(), cg_diag.data() + 3);
    CHECK((flow_diag - cg_diag).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((p * p.transpose() - cg.frame * cg.frame.transpose()).norm() < 1e-6);
}

TEST_CASE("generalized Rayleigh rates use both formulas") {
    Vec lam(4);
    lam << 4, 3, 2, 1;
    Vec nu(2);
    nu << 5, 2;
    CHECK(genray_predicted_rate(lam, nu, 1, 0) == doctest::Approx(3.0));
    CHECK(genray_predicted_rate(lam, nu, 3, 1) == doctest::Approx(4.0));
    CHECK(genray_predicted_rate(lam, nu, 2, 0) == doctest::Approx(10.0));
    CHECK_THROWS_AS(genray_predicted_rate(lam, nu, 1, 1), std::invalid_argument);
}

// ------------------------------------------------------------- SVD flows

TEST_CASE("Sigma flow keeps singular values and climbs tr N^T Sigma") {
    auto g = testutil::rng(7);
    const Mat sigma0 = random_normal(5, 3, g);
    Vec nu(3);
    nu << 3, 2, 1;
    const Mat n = rect_diag(5, 3, nu);
    const FlowTrace tr = svd_flow_sigma(sigma0, n, 30.0, 1e-3, 10);
    CHECK(tr.max_drift <= 1e-6);
    CHECK(monotone_objective(tr, 1e-12));
    const Mat& s = tr.samples.back().state;
    const Vec sv = Eigen::JacobiSVD<Mat>(sigma0).singularValues();
    for (int i = 0; i < 3; ++i) CHECK(std::abs(std::abs(s(i, i)) - sv(i)) < 1e-4);
}

TEST_CASE("(U, V) flow traces the same Sigma as the Sigma flow") {
    auto g = testutil::rng(8);
    const Mat k = random_normal(5, 3, g);
    Vec nu(3);
    nu << 3, 2, 1;
    const Mat n = rect_diag(5, 3, nu);
    const Mat u0 = random_frame(5, 5, g), v0 = random_frame(3, 3, g);
    const FlowTrace uv = svd_flow_uv(k, n, u0, v0, 4.0, 1e-3, 20);
    const FlowTrace sg = svd_flow_sigma(u0.transpose() * k * v0, n, 4.0, 1e-3, 20);
    REQUIRE(uv.samples.size() == sg.samples.size());
    double worst = 0.0;
    for (size_t s = 0; s < uv.samples.size(); ++s)
        worst = std::max(worst, (uv.samples[s].state - sg.samples[s].state).norm());
    CHECK(worst < 1e-5);
    CHECK(uv.max_drift <= 1e-7);
    CHECK(orthonormality_error(uv.u) <= 1e-9);
    CHECK(orthonormality_error(uv.v) <= 1e-9);
    CHECK((uv.u.transpose() * k * uv.v - uv.samples.back().state).norm() < 1e-12);
    CHECK(monotone_objective(uv, 1e-12));
}

TEST_CASE("rate matrices of the two SVD flows share eigenvalues") {
    auto g = testutil::rng(9);
    std::uniform_real_distribution<double> u(0.1, 5.0);
    for (int rep = 0; rep < 50; ++rep) {
        const double si = u(g), sj = u(g), ni = u(g), nj = u(g);
        const int n = 3 + rep % 6, k = 2 + rep % 3;
        const Vec e1 = sorted_real_eigenvalues(svd_rate_matrix_sigma(si, sj, ni, nj, n, k));
        const Vec e2 = sorted_real_eigenvalues(svd_rate_matrix_uv(si, sj, ni, nj, n, k));
        CHECK((e1 - e2).cwiseAbs().maxCoeff() <= 1e-10 * (1.0 + e1.cwiseAbs().maxCoeff()));
    }
}

TEST_CASE("predicted SVD rates for the 7 x 5 reference problem") {
    const SvdReferenceProblem p = svd_reference_problem();
    const Vec& d = p.singular_values;
    CHECK(svd_predicted_rate(d, p.nu, 0, 1, 7, 5) == doctest::Approx((164.0 - std::sqrt(25681.0)) / 15.0).epsilon(1e-12));
    CHECK(svd_predicted_rate(d, p.nu, 6, 4, 7, 5) == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(svd_predicted_rate(d, p.nu, 3, 2, 7, 5) == doctest::Approx(0.24935).epsilon(1e-4));
    CHECK(svd_predicted_rate(d, p.nu, 2, 0, 7, 5) == doctest::Approx(0.99587).epsilon(1e-4));
    CHECK(svd_predicted_rate(d, p.nu, 1, 3, 7, 5) == doctest::Approx(0.99231).epsilon(1e-4));
    CHECK(orthonormality_error(p.u0) < 1e-12);
    CHECK(orthonormality_error(p.v0) < 1e-12);
}

TEST_CASE("slow SVD-flow rates match the predictions") {
    const SvdReferenceProblem p = svd_reference_problem();
    const FlowTrace tr = svd_flow_sigma(p.u0.transpose() * p.k * p.v0, p.n, 120.0, 1e-2, 10);
    CHECK(tr.max_drift <= 1e-6);
    RateReport r = rate_regression(tr, {{0, 1}, {3, 2}, {6, 4}});
    attach_svd_predictions(r, p.singular_values, p.nu, 7, 5);
    CHECK(r.notes.empty());
    for (const auto& e : r.entries) {
        REQUIRE(e.measurable);
        CHECK(std::abs(e.measured - *e.predicted) < 1e-3);
        CHECK(e.residual < 1e-2);
    }
    const Mat& s = tr.samples.back().state;
    for (int i = 0; i < 5; ++i) CHECK(std::abs(s(i, i) - (5 - i)) < 1e-6);
}

TEST_CASE("rate regression flags entries that never enter the window") {
    FlowTrace tr;
    for (int s = 0; s <= 100; ++s) {
        FlowSample fs;
        fs.t = 0.1 * s;
        fs.state = Mat::Zero(2, 2);
        fs.state(0, 1) = 1e-3 * std::exp(-2.0 * fs.t);
        tr.samples.push_back(fs);
    }
    const RateReport r = rate_regression(tr, {{0, 1}, {1, 0}});
    CHECK(r.entries[0].measurable);
    CHECK(r.entries[0].measured == doctest::Approx(2.0).epsilon(1e-10));
    CHECK_FALSE(r.entries[1].measurable);
    CHECK(r.entries[1].samples == 0);
    CHECK_THROWS_AS(rate_regression(tr, {{2, 0}}), std::invalid_argument);
}

TEST_CASE("square inputs carry a time-scaling note") {
    RateReport r;
    RateEntry e;
    e.j = 1;
    r.entries.push_back(e);
    Vec d(3), nu(3);
    d << 3, 2, 1;
    nu << 3, 2, 1;
    attach_svd_predictions(r, d, nu, 3, 3);
    CHECK(r.notes.size() == 1);
    CHECK(r.entries[0].predicted.has_value());
}
