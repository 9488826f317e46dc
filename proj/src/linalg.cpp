#include "sstl/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace sstl::linalg {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

void require_finite(const Matrix& a, const char* who) {
  if (!a.allFinite()) throw NumericalError(std::string(who) + ": non-finite input");
}

// Two classical Gram-Schmidt passes of `v` against the first `cols` columns of `q`.
void orthogonalize(Eigen::Ref<Vector> v, const Matrix& q, Index cols) {
  if (cols == 0) return;
  for (int pass = 0; pass < 2; ++pass) {
    const Vector coeffs = q.leftCols(cols).transpose() * v;
    v.noalias() -= q.leftCols(cols) * coeffs;
  }
}

// Descending lexicographic comparison with a small tolerance on entries.
bool lex_greater(const Vector& a, const Vector& b) {
  for (Index i = 0; i < a.size(); ++i) {
    if (std::abs(a(i) - b(i)) > 1e-12) return a(i) > b(i);
  }
  return false;
}

}  // namespace

bool fix_sign(Eigen::Ref<Vector> v) {
  Index best = 0;
  double best_abs = -1.0;
  for (Index i = 0; i < v.size(); ++i) {
    const double a = std::abs(v(i));
    if (a > best_abs) {
      best_abs = a;
      best = i;
    }
  }
  if (v.size() > 0 && v(best) < 0.0) {
    v = -v;
    return true;
  }
  return false;
}

Matrix complete_basis(const Matrix& basis, Index target_cols) {
  const Index m = basis.rows();
  if (target_cols > m) throw NumericalError("complete_basis: cannot hold more than m orthonormal columns");
  Matrix out(m, target_cols);
  Index have = std::min(basis.cols(), target_cols);
  out.leftCols(have) = basis.leftCols(have);
  // Any remaining identity column has residual norm >= 1/sqrt(m) while the
  // basis is incomplete, so a fixed threshold never starves the loop.
  const double accept = 1e-3;
  for (Index j = 0; j < m && have < target_cols; ++j) {
    Vector e = Vector::Unit(m, j);
    orthogonalize(e, out, have);
    const double norm = e.norm();
    if (norm > accept) {
      e /= norm;
      fix_sign(e);
      out.col(have++) = e;
    }
  }
  if (have < target_cols) throw NumericalError("complete_basis: failed to complete basis");
  return out;
}

double orthonormality_error(const Matrix& q) {
  if (q.cols() == 0) return 0.0;
  return (q.transpose() * q - Matrix::Identity(q.cols(), q.cols())).cwiseAbs().maxCoeff();
}

RankKSVD svd_rank_k(const Matrix& a, Index k) {
  const Index m = a.rows();
  const Index n = a.cols();
  if (k <= 0) throw NumericalError("svd_rank_k: k must be positive");
  if (k > std::min(m, n)) {
    throw NumericalError("svd_rank_k: k = " + std::to_string(k) + " exceeds min dimension of " + shape_str(m, n));
  }
  require_finite(a, "svd_rank_k");

  RankKSVD out;
  out.S = Vector::Zero(k);
  Index nonzero = 0;
  Matrix u_lead(m, 0);
  Matrix v_lead(n, 0);
  if (!a.isZero(0.0)) {
    Eigen::BDCSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector& s = svd.singularValues();
    const double tol = static_cast<double>(std::max(m, n)) * kEps * s(0);
    while (nonzero < k && s(nonzero) > tol) ++nonzero;
    u_lead = svd.matrixU().leftCols(nonzero);
    v_lead = svd.matrixV().leftCols(nonzero);
    for (Index j = 0; j < nonzero; ++j) {
      out.S(j) = s(j);
      Vector col = u_lead.col(j);
      if (fix_sign(col)) {
        u_lead.col(j) = col;
        v_lead.col(j) = -v_lead.col(j);
      }
    }
  }
  out.U = complete_basis(u_lead, k);
  out.Vt = complete_basis(v_lead, k).transpose();
  return out;
}

ThinQR thin_qr(const Matrix& a) {
  const Index m = a.rows();
  const Index n = a.cols();
  if (m < n) throw NumericalError("thin_qr: needs rows >= cols, got " + shape_str(m, n));
  require_finite(a, "thin_qr");

  const double tol = 1e-12 * a.norm();
  Matrix q = Matrix::Zero(m, n);
  Matrix r = Matrix::Zero(n, n);
  // Accepted columns are packed at the front of `packed`; slot[j] records
  // where column j's direction landed, or -1 when it was rank deficient.
  Matrix packed(m, n);
  std::vector<Index> slot(n, -1);
  Index accepted = 0;
  for (Index j = 0; j < n; ++j) {
    Vector v = a.col(j);
    orthogonalize(v, packed, accepted);
    const double norm = v.norm();
    if (norm > tol && norm > 0.0) {
      packed.col(accepted) = v / norm;
      slot[j] = accepted++;
    }
  }
  const Matrix full = complete_basis(packed.leftCols(accepted), n);
  Index next_completion = accepted;
  for (Index j = 0; j < n; ++j) {
    q.col(j) = slot[j] >= 0 ? full.col(slot[j]) : full.col(next_completion++);
  }
  // R = Q^T A restricted to the upper triangle; rank-deficient rows stay zero.
  for (Index j = 0; j < n; ++j) {
    if (slot[j] < 0) continue;
    for (Index c = j; c < n; ++c) r(j, c) = q.col(j).dot(a.col(c));
  }
  for (Index j = 0; j < n; ++j) r(j, j) = std::max(r(j, j), 0.0);
  return {std::move(q), std::move(r)};
}

SymEig sym_eig(const Matrix& a) {
  if (a.rows() != a.cols()) throw NumericalError("sym_eig: matrix is not square");
  require_finite(a, "sym_eig");
  const Index n = a.rows();
  const Matrix sym = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> solver(sym);
  if (solver.info() != Eigen::Success) throw NumericalError("sym_eig: eigensolver did not converge");

  SymEig out;
  out.values = solver.eigenvalues().reverse();
  out.vectors = solver.eigenvectors().rowwise().reverse();
  for (Index j = 0; j < n; ++j) {
    Vector col = out.vectors.col(j);
    fix_sign(col);
    out.vectors.col(j) = col;
  }
  const double scale = std::max(1.0, out.values.cwiseAbs().maxCoeff());
  Index start = 0;
  while (start < n) {
    Index end = start + 1;
    while (end < n && std::abs(out.values(start) - out.values(end)) <= 1e-12 * scale) ++end;
    if (end - start > 1) {
      std::vector<Vector> cluster;
      for (Index j = start; j < end; ++j) cluster.emplace_back(out.vectors.col(j));
      std::stable_sort(cluster.begin(), cluster.end(), lex_greater);
      for (Index j = start; j < end; ++j) out.vectors.col(j) = cluster[j - start];
    }
    start = end;
  }
  return out;
}

Vector principal_angles(const Matrix& u1, const Matrix& u2) {
  if (u1.rows() != u2.rows()) throw NumericalError("principal_angles: row counts differ");
  if (orthonormality_error(u1) > 1e-8 || orthonormality_error(u2) > 1e-8) {
    throw NumericalError("principal_angles: inputs must have orthonormal columns");
  }
  const Matrix& wide = u1.cols() >= u2.cols() ? u1 : u2;
  const Matrix& narrow = u1.cols() >= u2.cols() ? u2 : u1;
  const Index q = narrow.cols();
  if (q == 0) return Vector(0);

  const Matrix cross = wide.transpose() * narrow;
  Eigen::JacobiSVD<Matrix> cos_svd(cross);
  const Vector cosines = cos_svd.singularValues();  // descending -> ascending angle
  const Matrix residual = narrow - wide * cross;
  Eigen::JacobiSVD<Matrix> sin_svd(residual);
  Vector sines = sin_svd.singularValues().reverse();  // ascending

  // Small angles are resolved from sines, large ones from cosines.
  Vector angles(q);
  for (Index i = 0; i < q; ++i) {
    const double c = std::min(1.0, cosines(i));
    const double s = std::min(1.0, i < sines.size() ? sines(i) : 0.0);
    angles(i) = c * c >= 0.5 ? std::asin(s) : std::acos(std::max(0.0, c));
  }
  std::sort(angles.begin(), angles.end());
  return angles;
}

}  // namespace sstl::linalg
