#pragma once

// Multi-site response data: per-subject scans, per-site datasets, the bundle
// of sites, their validation, and on-disk formats (CSV/BIN matrices, label
// sidecars, JSON manifest).

#include "sstl/common.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace sstl::data {

// One subject's T x V response matrix plus one class label per time point.
// `labels` may be empty when they are withheld (e.g. a test site before
// scoring); otherwise it has exactly one entry per row.
struct SubjectScan {
  std::string site_id;
  std::string subject_id;
  Matrix responses;
  std::vector<int> labels;
  // Columns whose variance was zero at standardization time; they hold 0.
  std::vector<Index> zero_variance_columns;
  bool standardized = false;

  Index timepoints() const { return responses.rows(); }
  Index voxels() const { return responses.cols(); }
  bool has_labels() const { return !labels.empty(); }

  // Checks finiteness and label length; throws DataError.
  static SubjectScan make(std::string site_id, std::string subject_id, Matrix responses,
                          std::vector<int> labels);
};

struct SiteDataset {
  std::string site_id;
  std::vector<SubjectScan> scans;  // ascending subject_id

  Index num_subjects() const { return static_cast<Index>(scans.size()); }
  Index num_timepoints() const { return scans.empty() ? 0 : scans.front().timepoints(); }
  Index num_voxels() const { return scans.empty() ? 0 : scans.front().voxels(); }
  // True when some labelled scan disagrees with the first labelled scan.
  bool temporally_unaligned() const;

  // Sorts scans by subject_id. Does not reject inconsistent input;
  // use validate_bundle / require_alignment_ready for that.
  static SiteDataset make(std::string site_id, std::vector<SubjectScan> scans);
};

struct MultiSiteBundle {
  std::vector<SiteDataset> sites;

  Index num_voxels() const { return sites.empty() ? 0 : sites.front().num_voxels(); }
  const SiteDataset& site(const std::string& site_id) const;
  bool has_site(const std::string& site_id) const;
};

enum class ViolationKind {
  kVoxelCountMismatch,
  kTimepointMismatch,
  kTemporalAlignment,
  kDuplicateSubject,
  kDuplicateSite,
  kEmptySite,
  kNonFinite,
  kLabelLength,
  kSiteIdMismatch,
};

struct Violation {
  ViolationKind kind;
  std::string site_id;
  std::string subject_id;
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
  std::string to_string() const;
};

std::string to_string(ViolationKind kind);

ValidationReport validate_site(const SiteDataset& site);
ValidationReport validate_bundle(const MultiSiteBundle& bundle);
// Throws DataError carrying the report text when the site is not alignment-ready.
void require_alignment_ready(const SiteDataset& site);

// Column z-scoring with sample standard deviation (denominator T - 1).
// Zero-variance columns become all-zero and are listed in the result.
SubjectScan standardize(const SubjectScan& scan);

// ---------------------------------------------------------------------------
// Files

enum class MatrixFormat { kCsv, kBin };

MatrixFormat format_from_path(const std::filesystem::path& path);

Matrix load_matrix(const std::filesystem::path& path, MatrixFormat format);
void save_matrix(const std::filesystem::path& path, const Matrix& m, MatrixFormat format);

Matrix parse_csv(const std::string& text, const std::string& source);
std::string to_csv(const Matrix& m, bool with_header = true);

std::vector<int> load_labels(const std::filesystem::path& path);
void save_labels(const std::filesystem::path& path, const std::vector<int>& labels);

// Sidecar convention: "<scan path>.labels".
std::filesystem::path labels_path_for(const std::filesystem::path& scan_path);

// Manifest is JSON; matrix and label paths are relative to its directory.
MultiSiteBundle load_bundle(const std::filesystem::path& manifest_path);
// Writes <dir>/manifest.json, <dir>/<site>/<subject>.bin and label sidecars.
std::filesystem::path save_bundle(const MultiSiteBundle& bundle, const std::filesystem::path& dir);

}  // namespace sstl::data
