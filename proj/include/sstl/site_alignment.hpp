#pragma once

// Site-specific common space extraction.
//
// Each subject contributes a regularized projection matrix
//   P = U diag(s^2 / (s^2 + eps)) U^T          (U, s from a rank-k SVD of X)
// and the site's common space G (T x k, orthonormal columns) maximizes
// tr(G^T (sum_s P_s) G). G is built in a single pass over subjects with an
// incremental truncated SVD of the column concatenation [P_1 | ... | P_S]:
//
//   H = P - G G^T P,   H = M N (QR)
//   A = [ diag(sigma)  G^T P ]
//       [ 0            N     ]      (k + T) x (k + T)
//   A ~ U~ diag(sigma') V~^T  (rank k),   G' = [G | M] U~
//
// starting from G = 0, sigma = 0.

#include "sstl/common.hpp"
#include "sstl/data_model.hpp"
#include "sstl/linalg.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace sstl::align {

struct ProjectionMatrix {
  Matrix P;          // T x T, symmetric
  Vector weights;    // s^2 / (s^2 + eps), descending, length <= k
  double epsilon = 0.0;
  Index effective_rank = 0;  // number of strictly positive weights
  bool unregularized = false;  // eps == 0: ill-posed path, flagged
};

// Rank-k projection. k larger than min(T, V) is reduced to min(T, V): the
// extra directions would carry zero weight.
ProjectionMatrix projection(const data::SubjectScan& scan, double epsilon, Index k);
// Same, reusing a precomputed SVD (at least min(k, rank) triplets).
ProjectionMatrix projection_from_svd(const linalg::RankKSVD& svd, double epsilon, Index k);

struct SiteCommonSpace {
  std::string site_id;
  Matrix G;            // T x k
  Vector sigma_tilde;  // k, descending
  Index k = 0;
  double epsilon = 0.0;
  std::vector<std::string> subjects_processed;
  std::map<std::string, Matrix> mappings;  // subject -> R (V x k)
  // Subjects whose mapping was computed against an earlier G (see add_subject).
  std::vector<std::string> stale_mappings;

  Index timepoints() const { return G.rows(); }
  bool empty() const { return subjects_processed.empty(); }

  // Initial state: G = 0, sigma = 0.
  static SiteCommonSpace initial(std::string site_id, Index timepoints, Index k, double epsilon);
};

// Intermediates of one incremental step, exposed for inspection.
struct StepTrace {
  Matrix H;
  Matrix M;
  Matrix N;
  Matrix A;
  Matrix B;
  linalg::RankKSVD a_svd;
};

// One incremental step folding projection P into (G, sigma). Pure function of
// its inputs; the same call sequence always yields bit-identical results.
void merge_projection(Matrix& G, Vector& sigma_tilde, const Matrix& P, StepTrace* trace = nullptr);

struct FitOptions {
  unsigned threads = 1;  // workers for the per-subject projection stage
};

// Single pass over subjects in ascending subject_id; then R for every subject.
SiteCommonSpace fit_site(const data::SiteDataset& site, double epsilon, Index k, const FitOptions& options = {});

// Variant taking precomputed projections (ordered like site.scans). Mapping
// matrices are computed only when `with_mappings` is set.
SiteCommonSpace fit_site_from_projections(const data::SiteDataset& site, const std::vector<ProjectionMatrix>& projections,
                                          double epsilon, Index k, bool with_mappings);

// tr(G^T (sum_s P_s) G)
double objective_value(const Matrix& G, const std::vector<ProjectionMatrix>& projections);
inline double objective_value(const SiteCommonSpace& common, const std::vector<ProjectionMatrix>& projections) {
  return objective_value(common.G, projections);
}

struct OracleOptimum {
  Matrix G;
  double value = 0.0;
};

// Exact maximizer: top-k eigenvectors of sum_s P_s.
OracleOptimum oracle_optimum(const std::vector<ProjectionMatrix>& projections, Index k);

// R = X^T (X X^T + eps I)^{-1} G, the ridge solution of
// min_R ||G - X R||_F^2 + eps ||R||_F^2. eps == 0 requires X X^T invertible.
Matrix mapping_matrix(const data::SubjectScan& scan, const Matrix& G, double epsilon);

// One incremental step for a subject not yet in the site. Earlier mappings are
// kept as-is and listed in stale_mappings until refresh_mappings is called.
SiteCommonSpace add_subject(const SiteCommonSpace& common, const data::SubjectScan& scan);

// Recomputes every subject's mapping against the current G.
void refresh_mappings(SiteCommonSpace& common, const data::SiteDataset& site);

// "SSTG" model file.
void save_common_space(const std::filesystem::path& path, const SiteCommonSpace& common);
SiteCommonSpace load_common_space(const std::filesystem::path& path);

}  // namespace sstl::align
