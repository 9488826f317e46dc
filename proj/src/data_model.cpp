#include "sstl/data_model.hpp"

#include "sstl/binary_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>

namespace sstl::data {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMatrixMagic[] = "SSTL";
constexpr std::uint8_t kMatrixVersion = 1;

std::string location(Index r, Index c) {
  return "row " + std::to_string(r) + ", column " + std::to_string(c);
}

void check_finite(const Matrix& m, const std::string& source) {
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c)
      if (!std::isfinite(m(r, c))) throw DataError(source + ": non-finite value at " + location(r, c));
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char ch) { return !std::isspace(ch); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

}  // namespace

SubjectScan SubjectScan::make(std::string site_id, std::string subject_id, Matrix responses,
                              std::vector<int> labels) {
  const std::string who = site_id + "/" + subject_id;
  check_finite(responses, who);
  if (!labels.empty() && static_cast<Index>(labels.size()) != responses.rows()) {
    throw DataError(who + ": " + std::to_string(labels.size()) + " labels for " +
                    std::to_string(responses.rows()) + " time points");
  }
  SubjectScan scan;
  scan.site_id = std::move(site_id);
  scan.subject_id = std::move(subject_id);
  scan.responses = std::move(responses);
  scan.labels = std::move(labels);
  return scan;
}

bool SiteDataset::temporally_unaligned() const {
  const std::vector<int>* reference = nullptr;
  for (const auto& s : scans) {
    if (!s.has_labels()) continue;
    if (reference == nullptr) {
      reference = &s.labels;
    } else if (s.labels != *reference) {
      return true;
    }
  }
  return false;
}

SiteDataset SiteDataset::make(std::string site_id, std::vector<SubjectScan> scans) {
  std::stable_sort(scans.begin(), scans.end(),
                   [](const SubjectScan& a, const SubjectScan& b) { return a.subject_id < b.subject_id; });
  return SiteDataset{std::move(site_id), std::move(scans)};
}

const SiteDataset& MultiSiteBundle::site(const std::string& site_id) const {
  for (const auto& s : sites)
    if (s.site_id == site_id) return s;
  throw DataError("unknown site '" + site_id + "'");
}

bool MultiSiteBundle::has_site(const std::string& site_id) const {
  return std::any_of(sites.begin(), sites.end(), [&](const SiteDataset& s) { return s.site_id == site_id; });
}

std::string to_string(ViolationKind kind) {
  switch (kind) {
    case ViolationKind::kVoxelCountMismatch: return "voxel-count mismatch";
    case ViolationKind::kTimepointMismatch: return "time-point mismatch";
    case ViolationKind::kTemporalAlignment: return "temporal alignment";
    case ViolationKind::kDuplicateSubject: return "duplicate subject";
    case ViolationKind::kDuplicateSite: return "duplicate site";
    case ViolationKind::kEmptySite: return "empty site";
    case ViolationKind::kNonFinite: return "non-finite responses";
    case ViolationKind::kLabelLength: return "label length";
    case ViolationKind::kSiteIdMismatch: return "site id mismatch";
  }
  return "unknown";
}

std::string ValidationReport::to_string() const {
  std::ostringstream out;
  for (const auto& v : violations) {
    out << data::to_string(v.kind) << ": " << v.message << '\n';
  }
  return out.str();
}

ValidationReport validate_site(const SiteDataset& site) {
  ValidationReport report;
  auto add = [&](ViolationKind kind, const std::string& subject, std::string message) {
    report.violations.push_back({kind, site.site_id, subject, std::move(message)});
  };
  if (site.scans.empty()) {
    add(ViolationKind::kEmptySite, "", "site " + site.site_id + " has no subjects");
    return report;
  }
  const Index t = site.num_timepoints();
  const Index v = site.num_voxels();
  std::set<std::string> seen;
  const SubjectScan* reference = nullptr;
  for (const auto& s : site.scans) {
    const std::string who = "site " + site.site_id + ", subject " + s.subject_id;
    if (s.site_id != site.site_id) add(ViolationKind::kSiteIdMismatch, s.subject_id, who + " claims site " + s.site_id);
    if (!seen.insert(s.subject_id).second) add(ViolationKind::kDuplicateSubject, s.subject_id, who + " appears twice");
    if (s.timepoints() != t)
      add(ViolationKind::kTimepointMismatch, s.subject_id,
          who + " has " + std::to_string(s.timepoints()) + " time points, expected " + std::to_string(t));
    if (s.voxels() != v)
      add(ViolationKind::kVoxelCountMismatch, s.subject_id,
          who + " has " + std::to_string(s.voxels()) + " voxels, expected " + std::to_string(v));
    if (!s.responses.allFinite()) add(ViolationKind::kNonFinite, s.subject_id, who + " has non-finite responses");
    if (s.has_labels() && static_cast<Index>(s.labels.size()) != s.timepoints())
      add(ViolationKind::kLabelLength, s.subject_id, who + " label count differs from time points");
    if (s.has_labels()) {
      if (reference == nullptr) {
        reference = &s;
      } else if (s.labels != reference->labels) {
        add(ViolationKind::kTemporalAlignment, s.subject_id,
            who + " label sequence differs from subject " + reference->subject_id);
      }
    }
  }
  return report;
}

ValidationReport validate_bundle(const MultiSiteBundle& bundle) {
  ValidationReport report;
  std::set<std::string> site_ids;
  const Index v = bundle.num_voxels();
  for (const auto& site : bundle.sites) {
    if (!site_ids.insert(site.site_id).second) {
      report.violations.push_back(
          {ViolationKind::kDuplicateSite, site.site_id, "", "site id " + site.site_id + " appears twice"});
    }
    if (!site.scans.empty() && site.num_voxels() != v) {
      report.violations.push_back({ViolationKind::kVoxelCountMismatch, site.site_id, "",
                                   "site " + site.site_id + " has " + std::to_string(site.num_voxels()) +
                                       " voxels, first site has " + std::to_string(v)});
    }
    auto site_report = validate_site(site);
    for (auto& viol : site_report.violations) report.violations.push_back(std::move(viol));
  }
  return report;
}

void require_alignment_ready(const SiteDataset& site) {
  const auto report = validate_site(site);
  if (!report.ok()) throw DataError("site " + site.site_id + " is not alignment-ready:\n" + report.to_string());
}

SubjectScan standardize(const SubjectScan& scan) {
  const Index t = scan.timepoints();
  if (t < 2) throw DataError(scan.site_id + "/" + scan.subject_id + ": standardization needs at least 2 time points");
  SubjectScan out = scan;
  out.zero_variance_columns.clear();
  const double denom = static_cast<double>(t - 1);
  for (Index c = 0; c < scan.voxels(); ++c) {
    auto col = out.responses.col(c);
    const double mean = col.mean();
    col.array() -= mean;
    const double sd = std::sqrt(col.squaredNorm() / denom);
    const double scale = scan.responses.col(c).cwiseAbs().maxCoeff();
    if (sd == 0.0 || sd <= 1e-10 * scale) {
      col.setZero();
      out.zero_variance_columns.push_back(c);
    } else {
      col /= sd;
    }
  }
  out.standardized = true;
  return out;
}

// ---------------------------------------------------------------------------
// Files

MatrixFormat format_from_path(const fs::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".csv") return MatrixFormat::kCsv;
  if (ext == ".bin") return MatrixFormat::kBin;
  throw DataError("cannot infer matrix format from extension of " + path.string());
}

Matrix parse_csv(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  std::vector<std::vector<double>> rows;
  Index header_rows = -1;
  Index header_cols = -1;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (first && !line.empty() && line.front() == '#') {
      first = false;
      const auto body = trim(line.substr(1));
      const auto comma = body.find(',');
      if (comma == std::string::npos) throw DataError(source + ": malformed header '" + line + "'");
      try {
        header_rows = std::stoll(body.substr(0, comma));
        header_cols = std::stoll(body.substr(comma + 1));
      } catch (const std::exception&) {
        throw DataError(source + ": malformed header '" + line + "'");
      }
      continue;
    }
    first = false;
    if (trim(line).empty()) continue;
    const Index r = static_cast<Index>(rows.size());
    std::vector<double> values;
    std::stringstream fields(line);
    std::string field;
    Index c = 0;
    while (std::getline(fields, field, ',')) {
      const auto cell = trim(field);
      char* end = nullptr;
      errno = 0;
      const double v = std::strtod(cell.c_str(), &end);
      if (cell.empty() || end != cell.c_str() + cell.size()) {
        throw DataError(source + ": cannot parse '" + cell + "' at " + location(r, c));
      }
      if (!std::isfinite(v)) throw DataError(source + ": non-finite value at " + location(r, c));
      values.push_back(v);
      ++c;
    }
    if (!rows.empty() && values.size() != rows.front().size()) {
      throw DataError(source + ": row " + std::to_string(r) + " has " + std::to_string(values.size()) +
                      " columns, expected " + std::to_string(rows.front().size()));
    }
    rows.push_back(std::move(values));
  }
  const Index nr = static_cast<Index>(rows.size());
  const Index nc = rows.empty() ? 0 : static_cast<Index>(rows.front().size());
  if (header_rows >= 0 && (header_rows != nr || header_cols != nc)) {
    throw DataError(source + ": header declares " + shape_str(header_rows, header_cols) + " but body is " +
                    shape_str(nr, nc));
  }
  Matrix m(nr, nc);
  for (Index r = 0; r < nr; ++r)
    for (Index c = 0; c < nc; ++c) m(r, c) = rows[r][c];
  return m;
}

std::string to_csv(const Matrix& m, bool with_header) {
  std::ostringstream out;
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  if (with_header) out << "# " << m.rows() << ',' << m.cols() << '\n';
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) {
      if (c) out << ',';
      out << m(r, c);
    }
    out << '\n';
  }
  return out.str();
}

Matrix load_matrix(const fs::path& path, MatrixFormat format) {
  if (format == MatrixFormat::kCsv) return parse_csv(read_file(path), path.string());

  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  io::BinaryReader reader(in, path.string());
  reader.expect_magic(kMatrixMagic);
  const auto version = reader.u8();
  if (version != kMatrixVersion) throw DataError(path.string() + ": unsupported version " + std::to_string(version));
  const auto rows = reader.u64();
  const auto cols = reader.u64();
  constexpr std::uint64_t kMaxDim = std::uint64_t{1} << 32;
  if (rows > kMaxDim || cols > kMaxDim) throw DataError(path.string() + ": implausible dimension header");
  Matrix m = reader.matrix_body(static_cast<Index>(rows), static_cast<Index>(cols));
  reader.expect_eof();
  check_finite(m, path.string());
  return m;
}

void save_matrix(const fs::path& path, const Matrix& m, MatrixFormat format) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  if (format == MatrixFormat::kCsv) {
    out << to_csv(m);
  } else {
    io::BinaryWriter w(out);
    w.magic(kMatrixMagic);
    w.u8(kMatrixVersion);
    w.u64(static_cast<std::uint64_t>(m.rows()));
    w.u64(static_cast<std::uint64_t>(m.cols()));
    w.matrix_body(m);
  }
  if (!out) throw DataError("write failed for " + path.string());
}

std::vector<int> load_labels(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<int> labels;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto cell = trim(line);
    if (cell.empty()) continue;
    char* end = nullptr;
    const long v = std::strtol(cell.c_str(), &end, 10);
    if (end != cell.c_str() + cell.size()) {
      throw DataError(path.string() + ": line " + std::to_string(lineno) + " is not an integer label");
    }
    labels.push_back(static_cast<int>(v));
  }
  return labels;
}

void save_labels(const fs::path& path, const std::vector<int>& labels) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  for (int l : labels) out << l << '\n';
}

fs::path labels_path_for(const fs::path& scan_path) { return fs::path(scan_path.string() + ".labels"); }

MultiSiteBundle load_bundle(const fs::path& manifest_path) {
  json doc;
  try {
    doc = json::parse(read_file(manifest_path));
  } catch (const json::parse_error& e) {
    throw DataError(manifest_path.string() + ": " + e.what());
  }
  const fs::path base = manifest_path.parent_path();
  MultiSiteBundle bundle;
  try {
    const bool standardized = doc.value("standardized", false);
    for (const auto& site_doc : doc.at("sites")) {
      const std::string site_id = site_doc.at("site_id").get<std::string>();
      std::vector<SubjectScan> scans;
      for (const auto& subj : site_doc.at("subjects")) {
        const fs::path matrix_path = base / subj.at("matrix").get<std::string>();
        const fs::path label_path =
            subj.contains("labels") ? base / subj.at("labels").get<std::string>() : labels_path_for(matrix_path);
        Matrix m = load_matrix(matrix_path, format_from_path(matrix_path));
        auto labels = load_labels(label_path);
        auto scan = SubjectScan::make(site_id, subj.at("subject_id").get<std::string>(), std::move(m), std::move(labels));
        if (standardized) {
          scan.standardized = true;
          if (subj.contains("zero_variance_columns"))
            scan.zero_variance_columns = subj.at("zero_variance_columns").get<std::vector<Index>>();
        } else {
          scan = standardize(scan);
        }
        scans.push_back(std::move(scan));
      }
      bundle.sites.push_back(SiteDataset::make(site_id, std::move(scans)));
    }
  } catch (const json::exception& e) {
    throw DataError(manifest_path.string() + ": malformed manifest: " + e.what());
  }
  return bundle;
}

fs::path save_bundle(const MultiSiteBundle& bundle, const fs::path& dir) {
  fs::create_directories(dir);
  json doc;
  doc["format"] = "sstl-bundle";
  doc["version"] = 1;
  doc["num_voxels"] = bundle.num_voxels();
  bool all_standardized = true;
  for (const auto& site : bundle.sites)
    for (const auto& s : site.scans) all_standardized = all_standardized && s.standardized;
  doc["standardized"] = all_standardized;
  doc["sites"] = json::array();
  for (const auto& site : bundle.sites) {
    json site_doc;
    site_doc["site_id"] = site.site_id;
    site_doc["subjects"] = json::array();
    fs::create_directories(dir / site.site_id);
    for (const auto& s : site.scans) {
      const fs::path rel = fs::path(site.site_id) / (s.subject_id + ".bin");
      save_matrix(dir / rel, s.responses, MatrixFormat::kBin);
      save_labels(labels_path_for(dir / rel), s.labels);
      json subj;
      subj["subject_id"] = s.subject_id;
      subj["matrix"] = rel.generic_string();
      subj["labels"] = labels_path_for(rel).generic_string();
      if (all_standardized) subj["zero_variance_columns"] = s.zero_variance_columns;
      site_doc["subjects"].push_back(std::move(subj));
    }
    doc["sites"].push_back(std::move(site_doc));
  }
  const fs::path manifest = dir / "manifest.json";
  std::ofstream out(manifest, std::ios::trunc);
  if (!out) throw DataError("cannot write " + manifest.string());
  out << doc.dump(2) << '\n';
  return manifest;
}

}  // namespace sstl::data
