#include "sstl/shared_space.hpp"

#include "sstl/binary_io.hpp"
#include "sstl/linalg.hpp"

#include <fstream>

namespace sstl::shared {

namespace {
constexpr char kModelMagic[] = "SSTW";
constexpr std::uint8_t kModelVersion = 1;
}  // namespace

Matrix concat_common(const std::vector<const align::SiteCommonSpace*>& spaces) {
  if (spaces.empty()) throw NumericalError("concat_common: no common spaces");
  const Index k = spaces.front()->G.cols();
  Index rows = 0;
  for (const auto* s : spaces) {
    if (s->G.cols() != k) {
      throw NumericalError("concat_common: site " + s->site_id + " has k = " + std::to_string(s->G.cols()) +
                           ", expected " + std::to_string(k));
    }
    rows += s->G.rows();
  }
  Matrix out(rows, k);
  Index at = 0;
  for (const auto* s : spaces) {
    out.middleRows(at, s->G.rows()) = s->G;
    at += s->G.rows();
  }
  return out;
}

Matrix concat_common(const std::vector<align::SiteCommonSpace>& spaces) {
  std::vector<const align::SiteCommonSpace*> ptrs;
  ptrs.reserve(spaces.size());
  for (const auto& s : spaces) ptrs.push_back(&s);
  return concat_common(ptrs);
}

Matrix centered_covariance(const Matrix& stacked, Vector* mean_out) {
  const Index rows = stacked.rows();
  if (rows < 2) throw NumericalError("covariance needs at least 2 rows");
  const Vector mean = stacked.colwise().mean();
  const Matrix centered = stacked.rowwise() - mean.transpose();
  if (mean_out != nullptr) *mean_out = mean;
  return centered.transpose() * centered / static_cast<double>(rows - 1);
}

SharedSpaceModel fit_klt(const Matrix& stacked, std::vector<std::string> training_sites) {
  if (!stacked.allFinite()) throw NumericalError("fit_klt: non-finite input");
  SharedSpaceModel model;
  const Matrix cov = centered_covariance(stacked, &model.mean);
  const auto eig = linalg::sym_eig(cov);
  model.W = eig.vectors;
  model.eigenvalues = eig.values;
  model.k = stacked.cols();
  model.total_rows = stacked.rows();
  model.training_sites = std::move(training_sites);
  return model;
}

Matrix rotate_features(const Matrix& features, const SharedSpaceModel& model, bool center) {
  if (features.cols() != model.k) {
    throw NumericalError("rotate: features have " + std::to_string(features.cols()) + " columns, model k = " +
                         std::to_string(model.k));
  }
  Matrix out = features * model.W;
  if (center) out.rowwise() -= (model.mean.transpose() * model.W);
  return out;
}

Matrix transform_subject(const data::SubjectScan& scan, const Matrix& R, const SharedSpaceModel& model, bool center) {
  if (R.rows() != scan.voxels()) {
    throw NumericalError("transform: R has " + std::to_string(R.rows()) + " rows, scan has " +
                         std::to_string(scan.voxels()) + " voxels");
  }
  return rotate_features(scan.responses * R, model, center);
}

Matrix reconstruct(const Matrix& G, const SharedSpaceModel& model) {
  if (G.cols() != model.k) throw NumericalError("reconstruct: column count differs from k");
  return G * model.W * model.W.transpose();
}

void save_shared_model(const std::filesystem::path& path, const SharedSpaceModel& model) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  io::BinaryWriter w(out);
  w.magic(kModelMagic);
  w.u8(kModelVersion);
  w.u64(static_cast<std::uint64_t>(model.k));
  w.matrix_body(model.W);
  w.vector_body(model.eigenvalues);
  w.vector_body(model.mean);
  w.u64(static_cast<std::uint64_t>(model.total_rows));
  w.u64(model.training_sites.size());
  for (const auto& s : model.training_sites) w.str(s);
  if (!out) throw DataError("write failed for " + path.string());
}

SharedSpaceModel load_shared_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  io::BinaryReader r(in, path.string());
  r.expect_magic(kModelMagic);
  if (r.u8() != kModelVersion) throw DataError(path.string() + ": unsupported version");
  SharedSpaceModel m;
  m.k = static_cast<Index>(r.u64());
  m.W = r.matrix_body(m.k, m.k);
  m.eigenvalues = r.vector_body(m.k);
  m.mean = r.vector_body(m.k);
  m.total_rows = static_cast<Index>(r.u64());
  const auto n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) m.training_sites.push_back(r.str());
  r.expect_eof();
  return m;
}

}  // namespace sstl::shared
