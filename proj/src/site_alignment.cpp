#include "sstl/site_alignment.hpp"

#include "sstl/binary_io.hpp"
#include "sstl/parallel.hpp"

#include <algorithm>
#include <fstream>

namespace sstl::align {

namespace {

constexpr char kModelMagic[] = "SSTG";
constexpr std::uint8_t kModelVersion = 1;

void check_epsilon(double epsilon) {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) {
    throw ConfigError("regularization epsilon must be finite and >= 0");
  }
}

}  // namespace

ProjectionMatrix projection_from_svd(const linalg::RankKSVD& svd, double epsilon, Index k) {
  check_epsilon(epsilon);
  if (k < 1) throw NumericalError("projection: k must be positive");
  const Index t = svd.U.rows();
  const Index used = std::min<Index>(k, svd.S.size());
  ProjectionMatrix out;
  out.epsilon = epsilon;
  out.unregularized = epsilon == 0.0;
  out.weights = Vector::Zero(used);
  for (Index i = 0; i < used; ++i) {
    const double s2 = svd.S(i) * svd.S(i);
    // s == 0 contributes nothing, including the 0/0 case at eps == 0.
    out.weights(i) = s2 > 0.0 ? s2 / (s2 + epsilon) : 0.0;
    if (out.weights(i) > 0.0) ++out.effective_rank;
  }
  const auto u = svd.U.leftCols(used);
  out.P = u * out.weights.asDiagonal() * u.transpose();
  out.P = 0.5 * (out.P + out.P.transpose());
  if (out.P.rows() != t) throw NumericalError("projection: inconsistent SVD");
  return out;
}

ProjectionMatrix projection(const data::SubjectScan& scan, double epsilon, Index k) {
  check_epsilon(epsilon);
  if (k < 1) throw NumericalError("projection: k must be positive");
  if (!scan.responses.allFinite()) throw NumericalError("projection: non-finite responses");
  const Index rank_cap = std::min(scan.timepoints(), scan.voxels());
  const auto svd = linalg::svd_rank_k(scan.responses, std::min(k, rank_cap));
  return projection_from_svd(svd, epsilon, k);
}

SiteCommonSpace SiteCommonSpace::initial(std::string site_id, Index timepoints, Index k, double epsilon) {
  if (k < 1) throw NumericalError("common space: k must be positive");
  if (k > timepoints) {
    throw ConfigError("common space: k = " + std::to_string(k) + " exceeds T = " + std::to_string(timepoints));
  }
  SiteCommonSpace c;
  c.site_id = std::move(site_id);
  c.G = Matrix::Zero(timepoints, k);
  c.sigma_tilde = Vector::Zero(k);
  c.k = k;
  c.epsilon = epsilon;
  return c;
}

void merge_projection(Matrix& G, Vector& sigma_tilde, const Matrix& P, StepTrace* trace) {
  const Index t = G.rows();
  const Index k = G.cols();
  if (P.rows() != t || P.cols() != t) {
    throw NumericalError("merge: projection is " + shape_str(P.rows(), P.cols()) + ", expected " + shape_str(t, t));
  }
  if (sigma_tilde.size() != k) throw NumericalError("merge: sigma length differs from k");

  const Matrix gtp = G.transpose() * P;
  Matrix h = P - G * gtp;
  // (I - G G^T) is idempotent; a second application only removes rounding
  // residue along span(G).
  h.noalias() -= G * (G.transpose() * h);

  auto qr = linalg::thin_qr(h);

  Matrix a = Matrix::Zero(k + t, k + t);
  a.topLeftCorner(k, k) = sigma_tilde.asDiagonal();
  a.topRightCorner(k, t) = gtp;
  a.bottomRightCorner(t, t) = qr.R;

  auto a_svd = linalg::svd_rank_k(a, k);

  Matrix b(t, k + t);
  b.leftCols(k) = G;
  b.rightCols(t) = qr.Q;
  Matrix g_next = b * a_svd.U;

  // Directions with zero singular value carry no data; give them the
  // deterministic completion so G stays orthonormal.
  Index nonzero = 0;
  while (nonzero < k && a_svd.S(nonzero) > 0.0) ++nonzero;
  for (Index j = 0; j < nonzero; ++j) {
    Vector col = g_next.col(j);
    linalg::fix_sign(col);
    g_next.col(j) = col;
  }
  if (linalg::orthonormality_error(g_next.leftCols(nonzero)) > 1e-12) {
    const auto re = linalg::thin_qr(g_next.leftCols(nonzero));
    g_next.leftCols(nonzero) = re.Q;
  }
  if (nonzero < k) g_next = linalg::complete_basis(g_next.leftCols(nonzero), k);

  if (!g_next.allFinite() || !a_svd.S.allFinite()) throw NumericalError("merge: non-finite intermediate");

  if (trace != nullptr) {
    trace->H = std::move(h);
    trace->M = qr.Q;
    trace->N = qr.R;
    trace->A = std::move(a);
    trace->B = std::move(b);
    trace->a_svd = a_svd;
  }
  G = std::move(g_next);
  sigma_tilde = a_svd.S;
}

Matrix mapping_matrix(const data::SubjectScan& scan, const Matrix& G, double epsilon) {
  check_epsilon(epsilon);
  const Matrix& x = scan.responses;
  if (G.rows() != x.rows()) {
    throw NumericalError("mapping: G has " + std::to_string(G.rows()) + " rows, scan has " +
                         std::to_string(x.rows()) + " time points");
  }
  Matrix gram = x * x.transpose();
  gram.diagonal().array() += epsilon;
  Eigen::LLT<Matrix> llt(gram);
  if (llt.info() != Eigen::Success || (epsilon == 0.0 && llt.rcond() < 1e-12)) {
    throw NumericalError("mapping: X X^T + eps I is singular for " + scan.site_id + "/" + scan.subject_id);
  }
  return x.transpose() * llt.solve(G);
}

SiteCommonSpace fit_site_from_projections(const data::SiteDataset& site, const std::vector<ProjectionMatrix>& projections,
                                          double epsilon, Index k, bool with_mappings) {
  data::require_alignment_ready(site);
  if (projections.size() != site.scans.size()) throw NumericalError("fit_site: one projection per subject required");
  auto common = SiteCommonSpace::initial(site.site_id, site.num_timepoints(), k, epsilon);
  for (std::size_t s = 0; s < projections.size(); ++s) {
    merge_projection(common.G, common.sigma_tilde, projections[s].P);
    common.subjects_processed.push_back(site.scans[s].subject_id);
  }
  if (with_mappings) {
    for (const auto& scan : site.scans) common.mappings[scan.subject_id] = mapping_matrix(scan, common.G, epsilon);
  }
  return common;
}

SiteCommonSpace fit_site(const data::SiteDataset& site, double epsilon, Index k, const FitOptions& options) {
  data::require_alignment_ready(site);
  check_epsilon(epsilon);
  if (k > site.num_timepoints()) {
    throw ConfigError("fit_site: k = " + std::to_string(k) + " exceeds T = " + std::to_string(site.num_timepoints()));
  }
  std::vector<ProjectionMatrix> projections(site.scans.size());
  parallel_for(site.scans.size(), options.threads,
               [&](std::size_t s) { projections[s] = projection(site.scans[s], epsilon, k); });
  return fit_site_from_projections(site, projections, epsilon, k, true);
}

double objective_value(const Matrix& G, const std::vector<ProjectionMatrix>& projections) {
  double total = 0.0;
  for (const auto& p : projections) {
    if (p.P.rows() != G.rows()) throw NumericalError("objective: dimension mismatch");
    total += (G.transpose() * p.P * G).trace();
  }
  return total;
}

OracleOptimum oracle_optimum(const std::vector<ProjectionMatrix>& projections, Index k) {
  if (projections.empty()) throw NumericalError("oracle: no projections");
  const Index t = projections.front().P.rows();
  Matrix sum = Matrix::Zero(t, t);
  for (const auto& p : projections) {
    if (p.P.rows() != t || p.P.cols() != t) throw NumericalError("oracle: dimension mismatch");
    sum += p.P;
  }
  if (k < 1 || k > t) throw NumericalError("oracle: k out of range");
  const auto eig = linalg::sym_eig(sum);
  return {eig.vectors.leftCols(k), eig.values.head(k).sum()};
}

SiteCommonSpace add_subject(const SiteCommonSpace& common, const data::SubjectScan& scan) {
  if (scan.timepoints() != common.timepoints()) {
    throw DataError("add_subject: scan has " + std::to_string(scan.timepoints()) + " time points, site has " +
                    std::to_string(common.timepoints()));
  }
  if (!common.mappings.empty() && common.mappings.begin()->second.rows() != scan.voxels()) {
    throw DataError("add_subject: voxel count differs from the site");
  }
  if (std::find(common.subjects_processed.begin(), common.subjects_processed.end(), scan.subject_id) !=
      common.subjects_processed.end()) {
    throw DataError("add_subject: subject " + scan.subject_id + " already processed");
  }
  SiteCommonSpace next = common;
  const auto p = projection(scan, common.epsilon, common.k);
  merge_projection(next.G, next.sigma_tilde, p.P);
  for (const auto& id : common.subjects_processed) {
    if (std::find(next.stale_mappings.begin(), next.stale_mappings.end(), id) == next.stale_mappings.end() &&
        common.mappings.count(id) != 0) {
      next.stale_mappings.push_back(id);
    }
  }
  next.subjects_processed.push_back(scan.subject_id);
  next.mappings[scan.subject_id] = mapping_matrix(scan, next.G, common.epsilon);
  return next;
}

void refresh_mappings(SiteCommonSpace& common, const data::SiteDataset& site) {
  for (const auto& id : common.subjects_processed) {
    const auto it = std::find_if(site.scans.begin(), site.scans.end(),
                                 [&](const data::SubjectScan& s) { return s.subject_id == id; });
    if (it == site.scans.end()) throw DataError("refresh_mappings: subject " + id + " missing from site");
    common.mappings[id] = mapping_matrix(*it, common.G, common.epsilon);
  }
  common.stale_mappings.clear();
}

void save_common_space(const std::filesystem::path& path, const SiteCommonSpace& common) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  io::BinaryWriter w(out);
  w.magic(kModelMagic);
  w.u8(kModelVersion);
  w.str(common.site_id);
  const Index voxels = common.mappings.empty() ? 0 : common.mappings.begin()->second.rows();
  w.u64(static_cast<std::uint64_t>(common.G.rows()));
  w.u64(static_cast<std::uint64_t>(common.k));
  w.u64(static_cast<std::uint64_t>(voxels));
  w.f64(common.epsilon);
  w.matrix_body(common.G);
  w.vector_body(common.sigma_tilde);
  w.u64(common.subjects_processed.size());
  for (const auto& id : common.subjects_processed) {
    w.str(id);
    const auto it = common.mappings.find(id);
    const bool stale =
        std::find(common.stale_mappings.begin(), common.stale_mappings.end(), id) != common.stale_mappings.end();
    std::uint8_t flags = 0;
    if (it != common.mappings.end()) flags |= 1u;
    if (stale) flags |= 2u;
    w.u8(flags);
    if (it != common.mappings.end()) w.matrix_body(it->second);
  }
  if (!out) throw DataError("write failed for " + path.string());
}

SiteCommonSpace load_common_space(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  io::BinaryReader r(in, path.string());
  r.expect_magic(kModelMagic);
  if (r.u8() != kModelVersion) throw DataError(path.string() + ": unsupported version");
  SiteCommonSpace c;
  c.site_id = r.str();
  const auto t = static_cast<Index>(r.u64());
  c.k = static_cast<Index>(r.u64());
  const auto voxels = static_cast<Index>(r.u64());
  c.epsilon = r.f64();
  c.G = r.matrix_body(t, c.k);
  c.sigma_tilde = r.vector_body(c.k);
  const auto n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    auto id = r.str();
    const auto flags = r.u8();
    if (flags & 1u) c.mappings[id] = r.matrix_body(voxels, c.k);
    if (flags & 2u) c.stale_mappings.push_back(id);
    c.subjects_processed.push_back(std::move(id));
  }
  r.expect_eof();
  return c;
}

}  // namespace sstl::align
