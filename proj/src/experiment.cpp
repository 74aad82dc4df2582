#include "riemann/experiment.hpp"

#include "riemann/eigensolvers.hpp"
#include "riemann/flows.hpp"
#include "riemann/line_search.hpp"
#include "riemann/manifolds.hpp"
#include "riemann/tracking.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <numeric>
#include <sstream>

namespace riemann::cli {

namespace {

// ------------------------------------------------------------- schema

const std::vector<KeySpec> kCommon = {
    {"seed", "0", KeyKind::integer, {}, "RNG seed; repetition r uses seed + r"},
    {"reps", "1", KeyKind::integer, {}, "independent repetitions"},
    {"out", "", KeyKind::text, {}, "CSV path (stdout when empty)"},
};

std::vector<KeySpec> with_common(std::vector<KeySpec> keys) {
    keys.insert(keys.end(), kCommon.begin(), kCommon.end());
    return keys;
}

const std::vector<KeySpec>& eig_keys() {
    static const std::vector<KeySpec> keys = with_common({
        {"manifold", "sphere", KeyKind::choice, {"sphere", "so", "stiefel"}, "search space"},
        {"method", "cg", KeyKind::choice, {"cg", "sd", "newton", "rqi"},
         "sphere: cg|sd|newton|rqi, so: cg|sd|newton, stiefel: cg"},
        {"spectrum", "21..1", KeyKind::spectrum, {}, "eigenvalues of the diagonal test matrix"},
        {"weights", "", KeyKind::spectrum, {},
         "diagonal of N (so: defaults to n..1, stiefel: defaults to 3,2,1)"},
        {"max_iters", "200", KeyKind::integer, {}, "iteration cap"},
        {"grad_tol", "1e-12", KeyKind::real, {}, "stop when the gradient norm falls below this"},
        {"warm", "false", KeyKind::boolean, {}, "start at distance warm_radius from the solution"},
        {"warm_radius", "0.05", KeyKind::real, {}, "distance of the warm start"},
    });
    return keys;
}

const std::vector<KeySpec>& flow_keys() {
    static const std::vector<KeySpec> keys = with_common({
        {"system", "svd", KeyKind::choice, {"svd", "svd_uv", "double_bracket", "genray"},
         "svd / svd_uv: the 7 x 5 reference problem; double_bracket; genray"},
        {"spectrum", "", KeyKind::spectrum, {}, "double_bracket: 6..1, genray: diag:10,7,4,1"},
        {"weights", "", KeyKind::spectrum, {}, "double_bracket: n..1, genray: 2,1"},
        {"dt", "0.01", KeyKind::real, {}, "RK4 / Euler step"},
        {"t_end", "120", KeyKind::real, {}, "final time; 0 writes only the header"},
        {"record_every", "10", KeyKind::integer, {}, "record every this many steps"},
        {"rate_lo", "1e-10", KeyKind::real, {}, "rate fit: smallest |entry| used"},
        {"rate_hi", "1e-2", KeyKind::real, {}, "rate fit: largest |entry| used"},
        {"rate_tail", "0.6", KeyKind::real, {}, "rate fit: trailing fraction of each entry's in-range samples"},
        {"rates_out", "", KeyKind::text, {}, "path for the predicted-vs-measured rate table"},
    });
    return keys;
}

const std::vector<KeySpec>& track_keys() {
    static const std::vector<KeySpec> keys = with_common({
        {"scenario", "first", KeyKind::choice, {"first", "second", "third"}, "step scenario"},
        {"n", "100", KeyKind::integer, {}, "matrix size"},
        {"length", "100", KeyKind::integer, {}, "number of samples"},
        {"step", "40", KeyKind::integer, {}, "the matrix changes after this sample"},
        {"weights", "3,2,1", KeyKind::spectrum, {}, "diagonal of N"},
        {"steps_per_sample", "1", KeyKind::integer, {}, "CG steps per sample"},
        {"reset_on_step", "false", KeyKind::boolean, {}, "reset CG at the first sample after the step"},
        {"reset_on_jump", "false", KeyKind::boolean, {}, "reset CG when rho jumps by more than 10%"},
        {"jitter", "false", KeyKind::boolean, {}, "seeded 1e-13 gradient perturbation near saddles"},
        {"warm", "false", KeyKind::boolean, {}, "converge on the first matrix before tracking"},
    });
    return keys;
}

const std::vector<KeySpec>& bench_keys() {
    static const std::vector<KeySpec> keys = with_common({
        {"op", "stiefel_exp", KeyKind::choice, {"stiefel_exp", "change_coset"}, "timed operation"},
        {"n_grid", "128,256,512", KeyKind::grid, {}, "values of n"},
        {"k_grid", "4,8", KeyKind::grid, {}, "values of k (cells with k > n are skipped)"},
        {"min_time", "0.05", KeyKind::real, {}, "seconds spent per cell"},
    });
    return keys;
}

const KeySpec* find_key(const std::string& command, const std::string& key) {
    for (const auto& k : command_keys(command))
        if (k.key == key) return &k;
    return nullptr;
}

std::string normalize_key(std::string key) {
    std::replace(key.begin(), key.end(), '-', '_');
    return key;
}

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

// ------------------------------------------------------------- value parsing

bool parse_double(const std::string& s, double& out) {
    const std::string t = trim(s);
    if (t.empty()) return false;
    const char* end = t.data() + t.size();
    auto [ptr, ec] = std::from_chars(t.data(), end, out);
    return ec == std::errc() && ptr == end && std::isfinite(out);
}

bool parse_long(const std::string& s, long& out) {
    const std::string t = trim(s);
    if (t.empty()) return false;
    const char* end = t.data() + t.size();
    auto [ptr, ec] = std::from_chars(t.data(), end, out);
    return ec == std::errc() && ptr == end;
}

bool parse_bool(const std::string& s, bool& out) {
    if (s == "true" || s == "1" || s == "yes" || s == "on") {
        out = true;
        return true;
    }
    if (s == "false" || s == "0" || s == "no" || s == "off") {
        out = false;
        return true;
    }
    return false;
}

std::vector<std::string> split_numbers(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',' || c == ' ' || c == '\t' || c == '\n' || c == '\r') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

Vec numbers_to_vec(const std::vector<std::string>& items, const std::string& what) {
    if (items.empty()) throw UsageError(what + ": no values");
    Vec v(static_cast<Eigen::Index>(items.size()));
    for (size_t i = 0; i < items.size(); ++i)
        if (!parse_double(items[i], v(static_cast<Eigen::Index>(i))))
            throw UsageError(what + ": '" + items[i] + "' is not a finite number");
    return v;
}

void validate_value(const KeySpec& spec, const std::string& value) {
    const std::string where = "key '" + spec.key + "'";
    double d;
    long l;
    bool b;
    switch (spec.kind) {
        case KeyKind::text:
            return;
        case KeyKind::real:
            if (!parse_double(value, d)) throw UsageError(where + ": expected a number, got '" + value + "'");
            return;
        case KeyKind::integer:
            if (!parse_long(value, l)) throw UsageError(where + ": expected an integer, got '" + value + "'");
            return;
        case KeyKind::boolean:
            if (!parse_bool(value, b)) throw UsageError(where + ": expected true or false, got '" + value + "'");
            return;
        case KeyKind::choice:
            if (std::find(spec.choices.begin(), spec.choices.end(), value) == spec.choices.end()) {
                std::string all;
                for (const auto& c : spec.choices) all += (all.empty() ? "" : "|") + c;
                throw UsageError(where + ": expected one of " + all + ", got '" + value + "'");
            }
            return;
        case KeyKind::spectrum:
            if (!value.empty()) parse_spectrum(value);
            return;
        case KeyKind::grid:
            parse_grid(value);
            return;
    }
}

// ------------------------------------------------------------- output

std::string num(double x) {
    if (std::isnan(x)) return "nan";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

struct Table {
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;
    std::string summary;
    std::string rates;  // flow only, without header comments
};

void append_row(Table& t, std::vector<std::string> row) { t.rows.push_back(std::move(row)); }

std::string join(const std::vector<std::string>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
    return s;
}

// ------------------------------------------------------------- helpers

Mat random_rotation(int n, std::mt19937_64& rng) {
    Mat q = random_frame(n, n, rng);
    if (q.determinant() < 0.0) q.col(0) = -q.col(0);
    return q;
}

TangentM random_unit_tangent(int n, int k, std::mt19937_64& rng) {
    const Mat a = random_normal(k, k, rng);
    const Mat b = random_normal(n - k, k, rng);
    TangentM x(skew_part(a), b);
    const double nx = norm(x);
    return nx > 0.0 ? (1.0 / nx) * x : x;
}

Vec ramp(int n) {
    Vec v(n);
    for (int i = 0; i < n; ++i) v(i) = n - i;
    return v;
}

// Index into the spectrum for each weight: the largest positive weight takes
// the largest eigenvalue, the most negative weight the smallest.
std::vector<int> target_assignment(const Vec& spectrum, const Vec& weights) {
    const int n = static_cast<int>(spectrum.size()), k = static_cast<int>(weights.size());
    std::vector<int> by_value(n), by_weight(k);
    std::iota(by_value.begin(), by_value.end(), 0);
    std::iota(by_weight.begin(), by_weight.end(), 0);
    std::stable_sort(by_value.begin(), by_value.end(), [&](int a, int b) { return spectrum(a) > spectrum(b); });
    std::stable_sort(by_weight.begin(), by_weight.end(), [&](int a, int b) { return weights(a) > weights(b); });
    std::vector<int> out(k);
    int top = 0, bottom = n - 1;
    std::vector<int> negatives;
    for (int r = 0; r < k; ++r) {
        if (weights(by_weight[r]) > 0.0) out[by_weight[r]] = by_value[top++];
        else negatives.push_back(by_weight[r]);
    }
    // Most negative first, from the bottom of the spectrum.
    for (auto it = negatives.rbegin(); it != negatives.rend(); ++it) out[*it] = by_value[bottom--];
    return out;
}

Mat selection(int n, const std::vector<int>& idx) {
    Mat p = Mat::Zero(n, static_cast<Eigen::Index>(idx.size()));
    for (size_t j = 0; j < idx.size(); ++j) p(idx[j], static_cast<Eigen::Index>(j)) = 1.0;
    return p;
}

void require_finite(double x, const std::string& what) {
    if (!std::isfinite(x)) throw NumericalFailure(what + " is not finite");
}

void trace_rows(Table& t, const Trace& tr, bool negate) {
    for (const auto& r : tr.records)
        append_row(t, {std::to_string(r.iter), num(negate ? -r.f : r.f), num(r.grad_norm), num(r.step), num(r.dist),
                       r.reset ? "1" : "0", std::to_string(r.evals)});
}

// ------------------------------------------------------------- eig

Table run_eig(const ExperimentConfig& c, std::uint64_t seed) {
    const std::string manifold = c.get("manifold"), method = c.get("method");
    const Vec spectrum = parse_spectrum(c.get("spectrum"));
    const int n = static_cast<int>(spectrum.size());
    StopCriteria stop;
    stop.grad_tol = c.number("grad_tol");
    stop.max_iters = static_cast<int>(c.integer("max_iters"));
    if (stop.max_iters < 0) throw UsageError("max_iters must be non-negative");
    const bool warm = c.flag("warm");
    const double radius = c.number("warm_radius");
    std::mt19937_64 rng(seed);
    const Mat q = spectrum.asDiagonal();

    Table t;
    t.columns = {"iter", "objective", "grad_norm", "step", "dist", "reset", "evals"};
    std::ostringstream sum;

    if (manifold == "sphere") {
        if (n < 2) throw UsageError("sphere: need n >= 2");
        if (!c.get("weights").empty()) throw UsageError("sphere: weights do not apply");
        Eigen::Index top;
        spectrum.maxCoeff(&top);
        const Vec xi = Vec::Unit(n, top);
        Vec x0;
        if (warm) {
            Vec w = random_normal(n, 1, rng).col(0);
            w -= w.dot(xi) * xi;
            w.normalize();
            x0 = std::cos(radius) * xi + std::sin(radius) * w;
        } else {
            x0 = random_normal(n, 1, rng).col(0).normalized();
        }
        auto dist = [&](const Vec& x) { return std::min((x - xi).norm(), (x + xi).norm()); };
        SphereEigResult r;
        if (method == "cg" || method == "sd")
            r = extreme_eigpair_sphere(q, x0, stop, method == "cg" ? SphereMethod::cg : SphereMethod::steepest, dist);
        else
            r = newton_rayleigh(q, x0, method == "rqi" ? NewtonVariant::rqi : NewtonVariant::geodesic, stop, dist);
        trace_rows(t, r.trace, false);
        require_finite(r.lambda, "eigenvalue estimate");
        sum << "iterations=" << r.trace.records.size() - 1 << " final_gap=" << num(r.trace.records.back().dist)
            << " lambda=" << num(r.lambda) << " matvecs=" << r.matvecs << " status=" << r.trace.status << "\n";
        t.summary = sum.str();
        return t;
    }

    if (manifold == "so") {
        if (method == "rqi") throw UsageError("so: method rqi is sphere-only");
        const Vec weights = c.get("weights").empty() ? ramp(n) : parse_spectrum(c.get("weights"));
        if (weights.size() != n) throw UsageError("so: weights must have one entry per eigenvalue");
        const std::vector<int> assign = target_assignment(spectrum, weights);
        Mat target = selection(n, assign);
        if (target.determinant() < 0.0) target.col(0) = -target.col(0);
        Vec dvals(n);
        for (int j = 0; j < n; ++j) dvals(j) = spectrum(assign[j]);
        const Mat d = dvals.asDiagonal();
        Mat theta0;
        if (warm) {
            const Mat omega = random_skew(n, rng);
            theta0 = so_exp(target, (radius / omega.norm()) * omega, 1.0);
        } else {
            theta0 = random_rotation(n, rng);
        }
        const SoProblem<TraceQN> pr(TraceQN(q, weights));
        auto dist = [&](const Mat& th) { return (th.transpose() * q * th - d).norm(); };
        RunResult<Mat> r;
        if (method == "newton") {
            r = newton(pr, theta0, stop, dist);
        } else if (method == "cg") {
            CgOptions o;
            o.stop = stop;
            r = conjugate_gradient(pr, theta0, o, dist);
        } else {
            const Mat nmat = weights.asDiagonal();
            StepRule<SoProblem<TraceQN>> brockett = [&](const Mat& th, const Mat& h, SoProblem<TraceQN>::Line&) {
                try {
                    return brockett_step(th.transpose() * q * th, h, nmat);
                } catch (const std::domain_error&) {
                    return 0.0;
                }
            };
            r = steepest_descent(pr, theta0, stop, brockett, dist);
        }
        trace_rows(t, r.trace, true);
        require_finite(r.trace.records.back().f, "objective");
        sum << "iterations=" << r.trace.records.size() - 1 << " final_gap=" << num(r.trace.records.back().dist)
            << " objective=" << num(-r.trace.records.back().f) << " status=" << r.trace.status << "\n";
        t.summary = sum.str();
        return t;
    }

    // stiefel
    if (method != "cg") throw UsageError("stiefel: only method cg is available");
    const Vec weights = parse_spectrum(c.get("weights").empty() ? "3,2,1" : c.get("weights"));
    const int k = static_cast<int>(weights.size());
    if (k > n) throw UsageError("stiefel: more weights than eigenvalues");
    const std::vector<int> assign = target_assignment(spectrum, weights);
    double reference = 0.0;
    for (int j = 0; j < k; ++j) reference += weights(j) * spectrum(assign[j]);
    const Mat p0 = warm ? stiefel_exp(StiefelCoset(selection(n, assign)), random_unit_tangent(n, k, rng), radius)
                        : random_start(n, k, seed);
    const SymOperator op = SymOperator::from_matrix(q);
    TopkOptions o;
    o.cg.stop = stop;
    o.reference = reference;
    const EigResult r = topk_eigpairs_stiefel(op, weights, p0, o);
    for (int j = 0; j < k; ++j) t.columns.push_back("lambda_" + std::to_string(j + 1));
    t.columns.insert(t.columns.end(), {"resorted", "applications"});
    for (size_t i = 0; i < r.trace.records.size(); ++i) {
        const auto& rec = r.trace.records[i];
        const auto& det = r.details[i];
        std::vector<std::string> row = {std::to_string(rec.iter), num(rec.f), num(rec.grad_norm), num(rec.step),
                                        num(rec.dist), rec.reset ? "1" : "0", std::to_string(rec.evals)};
        for (int j = 0; j < k; ++j) row.push_back(num(det.diag(j)));
        row.push_back(det.resorted ? "1" : "0");
        row.push_back(std::to_string(det.applications));
        append_row(t, std::move(row));
    }
    require_finite(r.trace.records.back().f, "objective");
    sum << "iterations=" << r.trace.records.size() - 1 << " final_gap=" << num(r.trace.records.back().dist)
        << " reference=" << num(reference) << " matvecs=" << r.applications << " status=" << r.status << "\n";
    t.summary = sum.str();
    return t;
}

// ------------------------------------------------------------- flow

Table run_flow(const ExperimentConfig& c, std::uint64_t seed) {
    const std::string system = c.get("system");
    const double dt = c.number("dt"), t_end = c.number("t_end");
    const int every = static_cast<int>(c.integer("record_every"));
    if (!(dt > 0.0)) throw UsageError("dt must be positive");
    if (t_end < 0.0) throw UsageError("t_end must be non-negative");
    if (every < 1) throw UsageError("record_every must be positive");
    RateWindow window;
    window.lo = c.number("rate_lo");
    window.hi = c.number("rate_hi");
    window.tail_fraction = c.number("rate_tail");
    if (!(window.lo > 0.0 && window.lo < window.hi)) throw UsageError("need 0 < rate_lo < rate_hi");
    if (!(window.tail_fraction > 0.0 && window.tail_fraction <= 1.0)) throw UsageError("rate_tail must lie in (0, 1]");
    std::mt19937_64 rng(seed);

    int rows = 0, cols = 0;
    std::function<FlowTrace()> integrate;
    std::function<void(RateReport&)> predict;
    std::vector<std::pair<int, int>> entries;
    std::ostringstream notes;

    if (system == "svd" || system == "svd_uv") {
        if (!c.get("spectrum").empty() || !c.get("weights").empty())
            throw UsageError(system + ": the reference problem fixes spectrum and weights");
        const SvdReferenceProblem ref = svd_reference_problem();
        rows = static_cast<int>(ref.k.rows());
        cols = static_cast<int>(ref.k.cols());
        integrate = [=] {
            if (system == "svd") return svd_flow_sigma(ref.u0.transpose() * ref.k * ref.v0, ref.n, t_end, dt, every);
            return svd_flow_uv(ref.k, ref.n, ref.u0, ref.v0, t_end, dt, every);
        };
        predict = [=](RateReport& r) { attach_svd_predictions(r, ref.singular_values, ref.nu, rows, cols); };
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j)
                if (i != j) entries.push_back({i, j});
    } else if (system == "double_bracket") {
        const Vec spectrum = parse_spectrum(c.get("spectrum").empty() ? "6..1" : c.get("spectrum"));
        const int n = static_cast<int>(spectrum.size());
        const Vec weights = c.get("weights").empty() ? ramp(n) : parse_spectrum(c.get("weights"));
        if (weights.size() != n) throw UsageError("double_bracket: weights must have one entry per eigenvalue");
        const Mat theta = random_rotation(n, rng);
        const Mat h0 = theta * spectrum.asDiagonal() * theta.transpose();
        const Mat nmat = weights.asDiagonal();
        rows = cols = n;
        integrate = [=] { return double_bracket_flow(h0, nmat, t_end, dt, every); };
        for (int i = 1; i < n; ++i)
            for (int j = 0; j < i; ++j) entries.push_back({i, j});
        notes << "# no rate predictions for the double-bracket flow\n";
    } else {
        const Vec lambda = parse_spectrum(c.get("spectrum").empty() ? "diag:10,7,4,1" : c.get("spectrum"));
        const Vec nu = parse_spectrum(c.get("weights").empty() ? "2,1" : c.get("weights"));
        const int n = static_cast<int>(lambda.size()), k = static_cast<int>(nu.size());
        if (k > n) throw UsageError("genray: more weights than eigenvalues");
        const Mat a = lambda.asDiagonal();
        const Mat p0 = random_start(n, k, seed);
        rows = n;
        cols = k;
        integrate = [=] { return genray_flow(a, nu, p0, t_end, dt, every); };
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < k; ++j)
                if (i != j) entries.push_back({i, j});
        auto descending = [](const Vec& v) {
            for (Eigen::Index i = 1; i < v.size(); ++i)
                if (!(v(i) < v(i - 1))) return false;
            return true;
        };
        if (descending(lambda) && descending(nu) && nu.minCoeff() > 0.0) {
            predict = [=](RateReport& r) {
                for (auto& e : r.entries) e.predicted = genray_predicted_rate(lambda, nu, e.i, e.j);
            };
        } else {
            notes << "# rate predictions need strictly decreasing spectrum and positive decreasing weights\n";
        }
    }

    Table t;
    t.columns = {"t", "objective", "drift"};
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) t.columns.push_back("x_" + std::to_string(i + 1) + "_" + std::to_string(j + 1));
    if (t_end == 0.0) {
        t.summary = "t_end = 0: nothing integrated\n";
        return t;
    }
    const FlowTrace tr = integrate();
    for (const auto& s : tr.samples) {
        std::vector<std::string> row = {num(s.t), num(s.objective), num(s.drift)};
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) row.push_back(num(s.state(i, j)));
        append_row(t, std::move(row));
    }
    if (tr.status != "ok") throw NumericalFailure("flow: state became non-finite after t = " + num(tr.samples.back().t));

    RateReport report = rate_regression(tr, entries, window);
    if (predict) predict(report);
    std::ostringstream rates;
    rates << notes.str();
    for (const auto& n : report.notes) rates << "# " << n << "\n";
    rates << "entry,i,j,predicted,measured,residual,samples\n";
    for (const auto& e : report.entries) {
        rates << "r" << e.i + 1 << e.j + 1 << "," << e.i + 1 << "," << e.j + 1 << ","
              << (e.predicted ? num(*e.predicted) : "") << "," << (e.measurable ? num(e.measured) : "") << ","
              << (e.measurable ? num(e.residual) : "") << "," << e.samples << "\n";
    }
    t.rates = rates.str();
    std::ostringstream sum;
    sum << "samples=" << tr.samples.size() << " objective=" << num(tr.samples.back().objective)
        << " max_drift=" << num(tr.max_drift) << " projections=" << tr.projections << "\n"
        << t.rates;
    t.summary = sum.str();
    return t;
}

// ------------------------------------------------------------- track

Table run_track(const ExperimentConfig& c, std::uint64_t seed) {
    const int n = static_cast<int>(c.integer("n"));
    const int length = static_cast<int>(c.integer("length"));
    const int step = static_cast<int>(c.integer("step"));
    Scenario scenario;
    try {
        scenario = scenario_by_name(c.get("scenario"), n, length, step);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    TrackerConfig cfg;
    cfg.n_diag = parse_spectrum(c.get("weights"));
    const int k = static_cast<int>(cfg.n_diag.size());
    if (k > n) throw UsageError("track: more weights than the matrix size");
    cfg.steps_per_sample = static_cast<int>(c.integer("steps_per_sample"));
    cfg.reset_on_step = c.flag("reset_on_step");
    cfg.reset_on_jump = c.flag("reset_on_jump");
    cfg.jitter = c.flag("jitter");
    cfg.jitter_seed = seed;

    Mat p0 = random_start(n, k, seed);
    if (c.flag("warm")) {
        TopkOptions o;
        o.cg.stop.max_iters = 20 * n;
        p0 = topk_eigpairs_stiefel(SymOperator::from_matrix(scenario.at(0)), cfg.n_diag, p0, o).frame;
    }
    const TrackTrace tr = track(scenario, cfg, p0);

    Table t;
    t.columns = {"i", "rho_gap"};
    for (int j = 0; j < k; ++j) t.columns.push_back("lambda_" + std::to_string(j + 1));
    t.columns.insert(t.columns.end(), {"resorted", "reset"});
    int jittered = 0;
    for (const auto& r : tr.records) {
        std::vector<std::string> row = {std::to_string(r.i), num(r.gap)};
        for (int j = 0; j < k; ++j) row.push_back(num(r.diag(j)));
        row.push_back(r.resorted ? "1" : "0");
        row.push_back(r.reset ? "1" : "0");
        append_row(t, std::move(row));
        jittered += r.jittered;
        require_finite(r.rho, "rho at sample " + std::to_string(r.i));
    }
    std::ostringstream sum;
    sum << "samples=" << tr.records.size() << " final_gap=" << num(tr.records.back().gap)
        << " jittered_samples=" << jittered << "\n";
    t.summary = sum.str();
    return t;
}

// ------------------------------------------------------------- bench

Table run_bench(const ExperimentConfig& c, std::uint64_t seed) {
    const std::vector<int> ns = parse_grid(c.get("n_grid")), ks = parse_grid(c.get("k_grid"));
    const double min_time = c.number("min_time");
    if (!(min_time > 0.0)) throw UsageError("min_time must be positive");
    const bool exp_op = c.get("op") == "stiefel_exp";
    std::mt19937_64 rng(seed);
    Table t;
    t.columns = {"n", "k", "calls", "seconds_per_call"};
    std::ostringstream sum;
    double sink = 0.0;
    for (int n : ns) {
        for (int k : ks) {
            if (k > n) continue;
            // g2 is a second representative of (numerically) the same point, as after a geodesic step.
            const Mat p = random_frame(n, k, rng);
            const StiefelCoset g1(p), g2(polar_frame(p + 1e-13 * random_normal(n, k, rng)));
            const TangentM x = random_unit_tangent(n, k, rng);
            using clock = std::chrono::steady_clock;
            long calls = 0;
            const auto start = clock::now();
            double elapsed = 0.0;
            while (calls < 3 || elapsed < min_time) {
                if (exp_op) sink += stiefel_exp(g1, x, 0.3)(0, 0);
                else sink += stiefel_change_coset(x, g1, g2).a.norm();
                ++calls;
                elapsed = std::chrono::duration<double>(clock::now() - start).count();
            }
            append_row(t, {std::to_string(n), std::to_string(k), std::to_string(calls), num(elapsed / calls)});
            sum << "n=" << n << " k=" << k << " seconds_per_call=" << num(elapsed / calls) << "\n";
        }
    }
    if (!std::isfinite(sink)) throw NumericalFailure("bench: non-finite result");
    t.summary = sum.str();
    return t;
}

Table run_once(const ExperimentConfig& c, std::uint64_t seed) {
    try {
        if (c.command == "eig") return run_eig(c, seed);
        if (c.command == "flow") return run_flow(c, seed);
        if (c.command == "track") return run_track(c, seed);
        return run_bench(c, seed);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    } catch (const std::domain_error& e) {
        throw NumericalFailure(e.what());
    }
}

}  // namespace

// ------------------------------------------------------------- public

const std::vector<KeySpec>& command_keys(const std::string& command) {
    if (command == "eig") return eig_keys();
    if (command == "flow") return flow_keys();
    if (command == "track") return track_keys();
    if (command == "bench") return bench_keys();
    throw UsageError("unknown command '" + command + "' (expected eig, flow, track or bench)");
}

KeyValues parse_config_text(const std::string& text) {
    KeyValues out;
    std::istringstream in(text);
    std::string line;
    for (int lineno = 1; std::getline(in, line); ++lineno) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw UsageError("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = normalize_key(trim(line.substr(0, eq)));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw UsageError("config line " + std::to_string(lineno) + ": empty key");
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
        out.emplace_back(key, value);
    }
    return out;
}

KeyValues parse_flag_args(const std::string& command, const std::vector<std::string>& args) {
    KeyValues out;
    for (size_t i = 0; i < args.size(); ++i) {
        const std::string& a = args[i];
        if (a.rfind("--", 0) != 0 || a.size() == 2) throw UsageError("unexpected argument '" + a + "'");
        std::string body = a.substr(2);
        const auto eq = body.find('=');
        if (eq != std::string::npos) {
            const std::string key = normalize_key(body.substr(0, eq));
            if (!find_key(command, key)) throw UsageError("unknown key '" + key + "' for " + command);
            out.emplace_back(key, body.substr(eq + 1));
            continue;
        }
        std::string key = normalize_key(body);
        const KeySpec* spec = find_key(command, key);
        if (!spec && key.rfind("no_", 0) == 0) {
            const KeySpec* neg = find_key(command, key.substr(3));
            if (neg && neg->kind == KeyKind::boolean) {
                out.emplace_back(neg->key, "false");
                continue;
            }
        }
        if (!spec) throw UsageError("unknown key '" + key + "' for " + command);
        if (spec->kind == KeyKind::boolean) {
            out.emplace_back(key, "true");
            continue;
        }
        if (i + 1 >= args.size()) throw UsageError("--" + body + " needs a value");
        out.emplace_back(key, args[++i]);
    }
    return out;
}

const std::string& ExperimentConfig::get(const std::string& key) const {
    const auto it = values.find(key);
    if (it == values.end()) throw UsageError("config has no key '" + key + "'");
    return it->second;
}

double ExperimentConfig::number(const std::string& key) const {
    double d;
    if (!parse_double(get(key), d)) throw UsageError("key '" + key + "' is not a number");
    return d;
}

long ExperimentConfig::integer(const std::string& key) const {
    long l;
    if (!parse_long(get(key), l)) throw UsageError("key '" + key + "' is not an integer");
    return l;
}

bool ExperimentConfig::flag(const std::string& key) const {
    bool b;
    if (!parse_bool(get(key), b)) throw UsageError("key '" + key + "' is not a boolean");
    return b;
}

std::uint64_t ExperimentConfig::seed() const {
    const long s = integer("seed");
    if (s < 0) throw UsageError("seed must be non-negative");
    return static_cast<std::uint64_t>(s);
}

std::string ExperimentConfig::header() const {
    std::string h = "# riemann-opt " + command + "\n";
    for (const auto& [k, v] : values) h += "# " + k + "=" + v + "\n";
    return h;
}

ExperimentConfig resolve_config(const std::string& command, const KeyValues& file, const KeyValues& flags) {
    ExperimentConfig c;
    c.command = command;
    for (const auto& spec : command_keys(command)) c.values[spec.key] = spec.default_value;
    for (const KeyValues* src : {&file, &flags}) {
        for (const auto& [key, value] : *src) {
            if (!find_key(command, key)) throw UsageError("unknown key '" + key + "' for " + command);
            c.values[key] = value;
        }
    }
    for (const auto& spec : command_keys(command)) validate_value(spec, c.values[spec.key]);
    if (c.integer("reps") < 1) throw UsageError("reps must be at least 1");
    c.seed();
    return c;
}

Vec parse_spectrum(const std::string& spec) {
    if (spec.rfind("diag:", 0) == 0) return numbers_to_vec(split_numbers(spec.substr(5)), "spectrum '" + spec + "'");
    if (spec.rfind("file:", 0) == 0) {
        const std::string path = spec.substr(5);
        std::ifstream in(path);
        if (!in) throw UsageError("spectrum: cannot read '" + path + "'");
        std::stringstream buf;
        buf << in.rdbuf();
        return numbers_to_vec(split_numbers(buf.str()), "spectrum file '" + path + "'");
    }
    const auto dots = spec.find("..");
    if (dots != std::string::npos) {
        long a, b;
        if (!parse_long(spec.substr(0, dots), a) || !parse_long(spec.substr(dots + 2), b))
            throw UsageError("spectrum '" + spec + "': expected integers a..b");
        const long len = std::labs(b - a) + 1;
        if (len > 100000) throw UsageError("spectrum '" + spec + "': too long");
        Vec v(len);
        const long dir = b >= a ? 1 : -1;
        for (long i = 0; i < len; ++i) v(i) = static_cast<double>(a + dir * i);
        return v;
    }
    // A bare comma list is accepted as shorthand for diag:.
    if (spec.find_first_not_of("0123456789.,+-eE ") == std::string::npos && !trim(spec).empty())
        return numbers_to_vec(split_numbers(spec), "spectrum '" + spec + "'");
    throw UsageError("spectrum '" + spec + "': expected a..b, diag:v1,v2,... or file:<path>");
}

std::vector<int> parse_grid(const std::string& spec) {
    std::vector<int> out;
    for (const auto& item : split_numbers(spec)) {
        long v;
        if (!parse_long(item, v) || v < 1 || v > 1000000) throw UsageError("grid '" + spec + "': '" + item + "' is not a positive integer");
        out.push_back(static_cast<int>(v));
    }
    if (out.empty()) throw UsageError("grid '" + spec + "' is empty");
    return out;
}

ExperimentOutput run_experiment(const ExperimentConfig& config) {
    const long reps = config.integer("reps");
    const std::uint64_t seed = config.seed();
    std::vector<Table> tables;
    if (reps == 1 || config.command == "bench") {
        // Timing repetitions run one after another so they do not compete.
        for (long r = 0; r < reps; ++r) tables.push_back(run_once(config, seed + static_cast<std::uint64_t>(r)));
    } else {
        std::vector<std::future<Table>> jobs;
        for (long r = 0; r < reps; ++r)
            jobs.push_back(std::async(std::launch::async, run_once, std::cref(config), seed + static_cast<std::uint64_t>(r)));
        for (auto& j : jobs) tables.push_back(j.get());
    }

    ExperimentOutput out;
    std::string csv = config.header();
    std::vector<std::string> columns = tables.front().columns;
    if (reps > 1) columns.insert(columns.begin(), "rep");
    csv += join(columns) + "\n";
    for (size_t r = 0; r < tables.size(); ++r) {
        for (auto row : tables[r].rows) {
            if (reps > 1) row.insert(row.begin(), std::to_string(r));
            csv += join(row) + "\n";
        }
        if (reps > 1) {
            std::istringstream lines(tables[r].summary);
            for (std::string line; std::getline(lines, line);) out.summary += "rep " + std::to_string(r) + ": " + line + "\n";
        } else {
            out.summary += tables[r].summary;
        }
        if (!tables[r].rates.empty()) {
            if (reps > 1) out.rates_csv += "# rep " + std::to_string(r) + "\n";
            out.rates_csv += tables[r].rates;
        }
    }
    if (!out.rates_csv.empty()) out.rates_csv = config.header() + out.rates_csv;
    out.csv = std::move(csv);
    return out;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Riemannian optimization experiments: eigensolvers, flows, subspace tracking, timings.",
                 "riemann-opt"};
    app.require_subcommand(1, 1);
    std::string config_path;
    const std::vector<std::pair<std::string, std::string>> commands = {
        {"eig", "extreme eigenpairs on the sphere, SO(n) or the Stiefel manifold"},
        {"flow", "gradient flows (SVD, double bracket, generalized Rayleigh) and decay rates"},
        {"track", "subspace tracking of a piecewise-constant matrix sequence"},
        {"bench", "timing of Stiefel geodesics and coset changes"},
    };
    for (const auto& [name, description] : commands) {
        CLI::App* sub = app.add_subcommand(name, description);
        sub->allow_extras();
        sub->add_option("--config", config_path, "flat key = value file; flags override it");
        std::string keys = "Keys (--key value, or key = value in the config file):\n";
        for (const auto& k : command_keys(name)) {
            keys += "  --" + k.key;
            if (k.kind != KeyKind::boolean) keys += " (default '" + k.default_value + "')";
            keys += ": " + k.help + "\n";
        }
        sub->footer(keys);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? 0 : 1;
    }

    const CLI::App* sub = app.get_subcommands().front();
    const std::string command = sub->get_name();
    try {
        KeyValues file;
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            if (!in) throw UsageError("cannot read config file '" + config_path + "'");
            std::stringstream buf;
            buf << in.rdbuf();
            file = parse_config_text(buf.str());
        }
        const ExperimentConfig config = resolve_config(command, file, parse_flag_args(command, sub->remaining()));
        const ExperimentOutput result = run_experiment(config);

        const std::string& path = config.get("out");
        if (path.empty()) {
            out << result.csv;
            err << result.summary;
        } else {
            std::ofstream f(path, std::ios::binary);
            if (!(f << result.csv)) throw UsageError("cannot write '" + path + "'");
            out << result.summary;
        }
        if (command == "flow" && !config.get("rates_out").empty()) {
            std::ofstream f(config.get("rates_out"), std::ios::binary);
            if (!(f << result.rates_csv)) throw UsageError("cannot write '" + config.get("rates_out") + "'");
        }
        return 0;
    } catch (const UsageError& e) {
        err << "riemann-opt " << command << ": " << e.what() << "\n";
        return 1;
    } catch (const NumericalFailure& e) {
        err << "riemann-opt " << command << ": numerical failure: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "riemann-opt " << command << ": numerical failure: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace riemann::cli
