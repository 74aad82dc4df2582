#include "riemann/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

namespace riemann {

namespace {

// Reflector that maps x onto +|x| e_1. Returns beta; v is written in place.
double make_reflector(const Vec& x, Vec& v) {
    const Eigen::Index m = x.size();
    v = x;
    const double tail2 = m > 1 ? x.tail(m - 1).squaredNorm() : 0.0;
    const double x0 = x(0);
    if (tail2 == 0.0 && x0 >= 0.0) {
        v.setZero();
        return 0.0;
    }
    const double norm = std::sqrt(x0 * x0 + tail2);
    // Parlett's choice avoids cancellation when x0 > 0.
    v(0) = x0 <= 0.0 ? x0 - norm : -tail2 / (x0 + norm);
    return 2.0 / v.squaredNorm();
}

void reflect_rows(Mat& m, Eigen::Index row0, const Vec& v, double beta) {
    if (beta == 0.0) return;
    auto block = m.bottomRows(m.rows() - row0);
    Eigen::RowVectorXd w = v.transpose() * block;
    block.noalias() -= beta * v * w;
}

}  // namespace

FactoredQR householder_qr(const Mat& f) {
    const int n = static_cast<int>(f.rows());
    const int k = static_cast<int>(f.cols());
    if (k > n) throw std::invalid_argument("householder_qr: more columns than rows");
    if (!f.allFinite()) throw std::invalid_argument("householder_qr: non-finite input");

    FactoredQR qr;
    qr.n = n;
    qr.k = k;
    qr.reflectors = Mat::Zero(n, k);
    qr.beta = Vec::Zero(k);
    Mat a = f;
    Vec v;
    for (int j = 0; j < k; ++j) {
        const Vec x = a.block(j, j, n - j, 1);
        const double beta = make_reflector(x, v);
        if (beta != 0.0) {
            auto block = a.block(j, j, n - j, k - j);
            Eigen::RowVectorXd w = v.transpose() * block;
            block.noalias() -= beta * v * w;
        }
        a(j, j) = beta != 0.0 ? x.norm() : x(0);
        a.block(j + 1, j, n - j - 1, 1).setZero();
        qr.reflectors.block(j, j, n - j, 1) = v;
        qr.beta(j) = beta;
    }
    qr.r = a.topRows(k).triangularView<Eigen::Upper>();
    return qr;
}

Mat apply_q(const FactoredQR& qr, const Mat& m, Side side) {
    if (m.rows() != qr.n) throw std::invalid_argument("apply_q: row count mismatch");
    Mat out = m;
    auto step = [&](int j) {
        if (qr.beta(j) == 0.0) return;
        const Vec v = qr.reflectors.block(j, j, qr.n - j, 1);
        reflect_rows(out, j, v, qr.beta(j));
    };
    if (side == Side::left) {
        for (int j = qr.k - 1; j >= 0; --j) step(j);
    } else {
        for (int j = 0; j < qr.k; ++j) step(j);
    }
    return out;
}

Mat explicit_q(const FactoredQR& qr, int cols) {
    return apply_q(qr, Mat::Identity(qr.n, cols), Side::left);
}

double skew_defect(const Mat& w) { return (w + w.transpose()).norm(); }

bool is_skew(const Mat& w) {
    return w.rows() == w.cols() && skew_defect(w) <= 1e-10 * (1.0 + w.norm());
}

void require_skew(const Mat& w, const char* what) {
    if (!w.allFinite()) throw std::invalid_argument(std::string(what) + ": non-finite input");
    if (!is_skew(w)) throw std::invalid_argument(std::string(what) + ": matrix is not skew-symmetric");
}

Mat SkewCanonical::block_form() const {
    const Eigen::Index m = theta.rows();
    Mat s = Mat::Zero(m, m);
    for (Eigen::Index j = 0; j < sigmas.size(); ++j) {
        s(2 * j, 2 * j + 1) = sigmas(j);
        s(2 * j + 1, 2 * j) = -sigmas(j);
    }
    return s;
}

Mat SkewCanonical::expm(double t) const {
    const Eigen::Index m = theta.rows();
    Mat e = Mat::Identity(m, m);
    for (Eigen::Index j = 0; j < sigmas.size(); ++j) {
        const double c = std::cos(sigmas(j) * t);
        const double s = std::sin(sigmas(j) * t);
        e(2 * j, 2 * j) = c;
        e(2 * j, 2 * j + 1) = s;
        e(2 * j + 1, 2 * j) = -s;
        e(2 * j + 1, 2 * j + 1) = c;
    }
    return theta * e * theta.transpose();
}

Mat SkewCanonical::expm_integral(double t) const {
    const Eigen::Index m = theta.rows();
    Mat e = Mat::Identity(m, m) * t;
    for (Eigen::Index j = 0; j < sigmas.size(); ++j) {
        const double sg = sigmas(j);
        double d = t, o = 0.0;
        if (sg != 0.0) {
            d = std::sin(sg * t) / sg;
            const double h = std::sin(0.5 * sg * t);
            o = 2.0 * h * h / sg;
        }
        e(2 * j, 2 * j) = d;
        e(2 * j, 2 * j + 1) = o;
        e(2 * j + 1, 2 * j) = -o;
        e(2 * j + 1, 2 * j + 1) = d;
    }
    return theta * e * theta.transpose();
}

namespace {

// One-sided Jacobi SVD of a tall (p >= q) matrix. Returns a full p x p
// orthogonal u, a q x q orthogonal v and singular values sv with
// b = u(:, 0:q) diag(sv) v^T.
void jacobi_svd_tall(const Mat& b, Mat& u, Mat& v, Vec& sv) {
    const Eigen::Index p = b.rows();
    const Eigen::Index q = b.cols();
    Mat w = b;
    v = Mat::Identity(q, q);
    for (int sweep = 0; sweep < 80; ++sweep) {
        bool rotated = false;
        for (Eigen::Index i = 0; i < q; ++i) {
            for (Eigen::Index j = i + 1; j < q; ++j) {
                const double alpha = w.col(i).squaredNorm();
                const double beta = w.col(j).squaredNorm();
                const double gamma = w.col(i).dot(w.col(j));
                if (gamma == 0.0 || std::abs(gamma) <= 1e-15 * std::sqrt(alpha * beta)) continue;
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = (zeta >= 0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                const Vec wi = w.col(i);
                w.col(i) = c * wi - s * w.col(j);
                w.col(j) = s * wi + c * w.col(j);
                const Vec vi = v.col(i);
                v.col(i) = c * vi - s * v.col(j);
                v.col(j) = s * vi + c * v.col(j);
            }
        }
        if (!rotated) break;
    }
    sv.resize(q);
    u = Mat::Zero(p, p);
    const double scale = b.norm();
    std::vector<bool> filled(static_cast<size_t>(p), false);
    for (Eigen::Index i = 0; i < q; ++i) {
        sv(i) = w.col(i).norm();
        if (sv(i) > 1e-300 && sv(i) > 1e-15 * scale) {
            u.col(i) = w.col(i) / sv(i);
            filled[static_cast<size_t>(i)] = true;
        } else {
            sv(i) = 0.0;
        }
    }
    // Complete u: for each empty slot take the standard basis vector with
    // the largest component outside the current span.
    for (Eigen::Index i = 0; i < p; ++i) {
        if (filled[static_cast<size_t>(i)]) continue;
        Vec best;
        double best_norm = -1.0;
        for (Eigen::Index e = 0; e < p; ++e) {
            Vec c = Vec::Unit(p, e);
            for (int pass = 0; pass < 2; ++pass) {
                for (Eigen::Index j = 0; j < p; ++j) {
                    if (filled[static_cast<size_t>(j)]) c -= u.col(j).dot(c) * u.col(j);
                }
            }
            const double nc = c.norm();
            if (nc > best_norm) {
                best_norm = nc;
                best = c / nc;
            }
        }
        u.col(i) = best;
        filled[static_cast<size_t>(i)] = true;
    }
}

}  // namespace

SkewCanonical skew_canonical(const Mat& w) {
    require_skew(w, "skew_canonical");
    const Eigen::Index m = w.rows();
    SkewCanonical out;
    if (m == 0) {
        out.theta = Mat(0, 0);
        out.sigmas = Vec(0);
        return out;
    }

    // Householder reduction to skew-tridiagonal form: w = z t z^T.
    Mat t = skew_part(w);
    Mat z = Mat::Identity(m, m);
    Vec v;
    for (Eigen::Index j = 0; j + 2 < m; ++j) {
        const Vec x = t.block(j + 1, j, m - j - 1, 1);
        const double beta = make_reflector(x, v);
        if (beta == 0.0) continue;
        // t <- P t P on rows/cols j+1.., z <- z P.
        auto rows = t.bottomRows(m - j - 1);
        Eigen::RowVectorXd r = v.transpose() * rows;
        rows.noalias() -= beta * v * r;
        auto cols = t.rightCols(m - j - 1);
        Vec c = cols * v;
        cols.noalias() -= beta * c * v.transpose();
        auto zc = z.rightCols(m - j - 1);
        Vec zv = zc * v;
        zc.noalias() -= beta * zv * v.transpose();
    }

    // Interleave: even indices against odd indices gives [[0, B], [-B^T, 0]].
    const Eigen::Index p = (m + 1) / 2;
    const Eigen::Index q = m / 2;
    Mat b = Mat::Zero(p, q);
    for (Eigen::Index a = 0; a < p; ++a) {
        for (Eigen::Index c = 0; c < q; ++c) {
            const Eigen::Index i = 2 * a, j = 2 * c + 1;
            if (std::abs(i - j) == 1) b(a, c) = 0.5 * (t(i, j) - t(j, i));
        }
    }
    Mat u, vv;
    Vec sv;
    jacobi_svd_tall(b, u, vv, sv);

    std::vector<Eigen::Index> order(static_cast<size_t>(q));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index x, Eigen::Index y) { return sv(x) > sv(y); });

    // Columns of z at the even / odd positions.
    Mat z_even(m, p), z_odd(m, q);
    for (Eigen::Index a = 0; a < p; ++a) z_even.col(a) = z.col(2 * a);
    for (Eigen::Index c = 0; c < q; ++c) z_odd.col(c) = z.col(2 * c + 1);

    out.theta = Mat::Zero(m, m);
    out.sigmas = Vec::Zero(q);
    int positive = 0;
    for (Eigen::Index j = 0; j < q; ++j) {
        const Eigen::Index src = order[static_cast<size_t>(j)];
        out.sigmas(j) = sv(src);
        if (sv(src) > 0.0) ++positive;
        out.theta.col(2 * j) = z_even * u.col(src);
        out.theta.col(2 * j + 1) = z_odd * vv.col(src);
    }
    for (Eigen::Index extra = q; extra < p; ++extra) out.theta.col(2 * q + (extra - q)) = z_even * u.col(extra);
    out.zero_count = static_cast<int>(m) - 2 * positive;
    return out;
}

Mat skew_expm(const Mat& w, double t) { return skew_canonical(w).expm(t); }

SymEig sym_eig_oracle(const Mat& s) {
    if (s.rows() != s.cols()) throw std::invalid_argument("sym_eig_oracle: matrix is not square");
    if (!s.allFinite()) throw std::invalid_argument("sym_eig_oracle: non-finite input");
    if ((s - s.transpose()).norm() > 1e-10 * (1.0 + s.norm()))
        throw std::invalid_argument("sym_eig_oracle: matrix is not symmetric");
    const Eigen::Index n = s.rows();
    Mat a = sym_part(s);
    Mat v = Mat::Identity(n, n);
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
        if (off <= 1e-32 * std::max(1.0, a.squaredNorm())) break;
        for (Eigen::Index p = 0; p < n; ++p) {
            for (Eigen::Index q = p + 1; q < n; ++q) {
                if (a(p, q) == 0.0) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double sn = t * c;
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - sn * akq;
                    a(k, q) = sn * akp + c * akq;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - sn * aqk;
                    a(q, k) = sn * apk + c * aqk;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - sn * vkq;
                    v(k, q) = sn * vkp + c * vkq;
                }
            }
        }
    }
    std::vector<Eigen::Index> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index x, Eigen::Index y) { return a(x, x) > a(y, y); });
    SymEig out;
    out.values.resize(n);
    out.vectors.resize(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        out.values(i) = a(order[static_cast<size_t>(i)], order[static_cast<size_t>(i)]);
        out.vectors.col(i) = v.col(order[static_cast<size_t>(i)]);
    }
    return out;
}

Mat skew_part(const Mat& m) { return 0.5 * (m - m.transpose()); }
Mat sym_part(const Mat& m) { return 0.5 * (m + m.transpose()); }
Mat commutator(const Mat& a, const Mat& b) { return a * b - b * a; }

double orthonormality_error(const Mat& p) {
    return (p.transpose() * p - Mat::Identity(p.cols(), p.cols())).norm();
}

Mat gram_schmidt(const Mat& f) {
    Mat q = f;
    for (Eigen::Index j = 0; j < q.cols(); ++j) {
        for (int pass = 0; pass < 2; ++pass) {
            for (Eigen::Index i = 0; i < j; ++i) q.col(j) -= q.col(i).dot(q.col(j)) * q.col(i);
        }
        const double nrm = q.col(j).norm();
        if (nrm == 0.0) throw std::invalid_argument("gram_schmidt: dependent columns");
        q.col(j) /= nrm;
    }
    return q;
}

Mat random_normal(int rows, int cols, std::mt19937_64& rng) {
    std::normal_distribution<double> d(0.0, 1.0);
    Mat m(rows, cols);
    // Column-major fill keeps the draw order independent of Eigen internals.
    for (int j = 0; j < cols; ++j)
        for (int i = 0; i < rows; ++i) m(i, j) = d(rng);
    return m;
}

Mat random_frame(int n, int k, std::mt19937_64& rng) { return gram_schmidt(random_normal(n, k, rng)); }

Mat random_skew(int n, std::mt19937_64& rng) {
    const Mat m = random_normal(n, n, rng);
    return m - m.transpose();
}

Mat random_symmetric(int n, std::mt19937_64& rng) {
    const Mat m = random_normal(n, n, rng);
    return 0.5 * (m + m.transpose());
}

Mat polar_frame(const Mat& p) {
    const SymEig e = sym_eig_oracle(sym_part(p.transpose() * p));
    Vec inv_sqrt = e.values.array().max(1e-300).sqrt().inverse().matrix();
    return p * (e.vectors * inv_sqrt.asDiagonal() * e.vectors.transpose());
}

}  // namespace riemann
