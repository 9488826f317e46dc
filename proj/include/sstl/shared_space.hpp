#pragma once

// Global shared space: a k x k Karhunen-Loeve rotation W fitted on the
// row-stacked common spaces of the training sites.

#include "sstl/common.hpp"
#include "sstl/data_model.hpp"
#include "sstl/site_alignment.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace sstl::shared {

struct SharedSpaceModel {
  Matrix W;            // k x k, orthogonal
  Vector eigenvalues;  // descending
  Vector mean;         // column means of the stacked G (diagnostics only)
  std::vector<std::string> training_sites;
  Index k = 0;
  Index total_rows = 0;
};

// Row-stacks the G matrices; callers pass spaces in ascending site_id order.
Matrix concat_common(const std::vector<const align::SiteCommonSpace*>& spaces);
Matrix concat_common(const std::vector<align::SiteCommonSpace>& spaces);

// mu = column means, C = (G - 1 mu^T)^T (G - 1 mu^T) / (rows - 1), (W, Lambda) = eig(C).
SharedSpaceModel fit_klt(const Matrix& stacked, std::vector<std::string> training_sites = {});

// Sample covariance used by fit_klt.
Matrix centered_covariance(const Matrix& stacked, Vector* mean_out = nullptr);

// X R W. When `center` is set, mu^T W is subtracted from every row.
Matrix transform_subject(const data::SubjectScan& scan, const Matrix& R, const SharedSpaceModel& model,
                         bool center = false);
// Same, from precomputed X R.
Matrix rotate_features(const Matrix& features, const SharedSpaceModel& model, bool center = false);

// G W W^T
Matrix reconstruct(const Matrix& G, const SharedSpaceModel& model);

// "SSTW" model file.
void save_shared_model(const std::filesystem::path& path, const SharedSpaceModel& model);
SharedSpaceModel load_shared_model(const std::filesystem::path& path);

}  // namespace sstl::shared
