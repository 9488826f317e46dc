#pragma once

// Dense decompositions with canonical signs and ordering.
//
// Sign convention: every singular / eigen / completion vector is scaled so
// that its entry of largest magnitude is positive (first such index on ties).
// Rank-deficient directions are replaced by a deterministic completion: the
// identity columns, in index order, orthonormalized against what is already
// present.

#include "sstl/common.hpp"

namespace sstl::linalg {

struct RankKSVD {
  Matrix U;   // m x k, orthonormal columns
  Vector S;   // k, descending, >= 0
  Matrix Vt;  // k x n, orthonormal rows
};

struct SymEig {
  Matrix vectors;  // n x n, orthogonal
  Vector values;   // n, descending
};

struct ThinQR {
  Matrix Q;  // m x n, orthonormal columns
  Matrix R;  // n x n, upper triangular, diag >= 0
};

// Top-k singular triplets, 1 <= k <= min(m, n). Singular values at or below
// max(m, n) * eps * sigma_max are reported as exactly zero and their vectors
// come from the completion rule.
RankKSVD svd_rank_k(const Matrix& a, Index k);

// Gram-Schmidt QR with one reorthogonalization pass; requires m >= n.
// Columns whose residual falls below 1e-12 * ||A||_F get a zero R row and a
// completion column of Q.
ThinQR thin_qr(const Matrix& a);

// Eigen-decomposition of (A + A^T) / 2, values descending. Within a cluster of
// equal eigenvalues the vectors are ordered by descending lexicographic order.
SymEig sym_eig(const Matrix& a);

// Principal angles (radians, ascending) between span(u1) and span(u2).
// Both inputs must have orthonormal columns to 1e-8.
Vector principal_angles(const Matrix& u1, const Matrix& u2);

// Flips `v` in place so its largest-magnitude entry is positive. Returns true
// when a flip happened.
bool fix_sign(Eigen::Ref<Vector> v);

// Appends completion columns to `basis` (orthonormal columns, m rows) until it
// has `target_cols` columns.
Matrix complete_basis(const Matrix& basis, Index target_cols);

// max |Q^T Q - I|
double orthonormality_error(const Matrix& q);

}  // namespace sstl::linalg
