#pragma once

#include <Eigen/Dense>

#include <random>
#include <stdexcept>

namespace riemann {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Householder QR held in factored form. Column j of `reflectors` stores the
// (unnormalized) vector v_j in rows j..n-1; P_j = I - beta_j v_j v_j^T.
// Q = P_1 P_2 ... P_k, so that F = Q (R over 0).
struct FactoredQR {
    Mat reflectors;
    Vec beta;
    Mat r;
    int n = 0;
    int k = 0;
};

enum class Side { left, left_transpose };

// Diagonal of R is made nonnegative; a zero pivot column gives a zero
// diagonal entry and an identity reflector.
FactoredQR householder_qr(const Mat& f);

// Q*M or Q^T*M without forming Q. M must have n rows.
Mat apply_q(const FactoredQR& qr, const Mat& m, Side side);

// First `cols` columns of Q.
Mat explicit_q(const FactoredQR& qr, int cols);

// W = theta * s * theta^T, where s is block diagonal with 2x2 blocks
// [[0, sigma_j], [-sigma_j, 0]] on columns (2j, 2j+1) followed by a zero block.
struct SkewCanonical {
    Mat theta;
    Vec sigmas;          // floor(m/2) entries, descending
    int zero_count = 0;  // m - 2 * (number of strictly positive sigmas)

    Mat block_form() const;
    // e^{W t} and its integral over [0, t], both assembled from the blocks.
    Mat expm(double t) const;
    Mat expm_integral(double t) const;
};

double skew_defect(const Mat& w);
bool is_skew(const Mat& w);
void require_skew(const Mat& w, const char* what);

SkewCanonical skew_canonical(const Mat& w);
Mat skew_expm(const Mat& w, double t);

struct SymEig {
    Vec values;   // descending
    Mat vectors;  // orthonormal columns
};

// Cyclic Jacobi; test-scale oracle.
SymEig sym_eig_oracle(const Mat& s);

// Small helpers shared by the rest of the library.
Mat skew_part(const Mat& m);
Mat sym_part(const Mat& m);
Mat commutator(const Mat& a, const Mat& b);
double orthonormality_error(const Mat& p);
Mat gram_schmidt(const Mat& f);
Mat random_normal(int rows, int cols, std::mt19937_64& rng);
Mat random_frame(int n, int k, std::mt19937_64& rng);
Mat random_skew(int n, std::mt19937_64& rng);
Mat random_symmetric(int n, std::mt19937_64& rng);
// Nearest orthonormal frame (polar factor), via the symmetric oracle on p^T p.
Mat polar_frame(const Mat& p);

}  // namespace riemann
