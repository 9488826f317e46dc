#include "sstl/linalg.hpp"
#include "sstl/shared_space.hpp"
#include "sstl/site_alignment.hpp"
#include "support/oracles.hpp"

#include <doctest.h>

#include <filesystem>

using namespace sstl;
using sstl::testing::max_abs;

namespace {

align::SiteCommonSpace space_with(const std::string& id, Matrix g) {
  align::SiteCommonSpace s;
  s.site_id = id;
  s.k = g.cols();
  s.G = std::move(g);
  s.sigma_tilde = Vector::Zero(s.k);
  return s;
}

// Independent covariance: explicit double loop over rows.
Matrix covariance_oracle(const Matrix& g) {
  const Index n = g.rows();
  const Index k = g.cols();
  Vector mean = Vector::Zero(k);
  for (Index i = 0; i < n; ++i) mean += g.row(i).transpose();
  mean /= static_cast<double>(n);
  Matrix c = Matrix::Zero(k, k);
  for (Index i = 0; i < n; ++i) {
    const Vector d = g.row(i).transpose() - mean;
    c += d * d.transpose();
  }
  return c / static_cast<double>(n - 1);
}

}  // namespace

TEST_CASE("concat: single space is unchanged") {
  const Matrix g = testing::gaussian_matrix(4, 2, 1);
  CHECK(shared::concat_common(std::vector{space_with("A", g)}) == g);
}

TEST_CASE("concat: stacks in the given order") {
  const Matrix a = testing::gaussian_matrix(3, 2, 1);
  const Matrix b = testing::gaussian_matrix(4, 2, 2);
  const Matrix stacked = shared::concat_common(std::vector{space_with("A", a), space_with("B", b)});
  REQUIRE(stacked.rows() == 7);
  CHECK(stacked.topRows(3) == a);
  CHECK(stacked.bottomRows(4) == b);
}

TEST_CASE("concat: orthonormal stacks have column norms sqrt(2)") {
  std::mt19937_64 rng(4);
  const Matrix stacked = shared::concat_common(
      std::vector{space_with("A", testing::random_orthonormal(6, 3, rng)), space_with("B", testing::random_orthonormal(9, 3, rng))});
  for (Index j = 0; j < 3; ++j) CHECK(std::abs(stacked.col(j).norm() - std::sqrt(2.0)) < 1e-8);
}

TEST_CASE("concat: errors") {
  CHECK_THROWS(shared::concat_common(std::vector<align::SiteCommonSpace>{}));
  CHECK_THROWS(shared::concat_common(
      std::vector{space_with("A", Matrix::Ones(3, 2)), space_with("B", Matrix::Ones(3, 3))}));
}

TEST_CASE("klt: already decorrelated input") {
  // Zero-mean columns with sample variances 4 and 1, uncorrelated.
  Matrix g(4, 2);
  const double a = std::sqrt(3.0);
  const double b = std::sqrt(0.75);
  g << a, b, -a, b, a, -b, -a, -b;
  const auto model = shared::fit_klt(g);
  CHECK(model.eigenvalues(0) == doctest::Approx(4.0));
  CHECK(model.eigenvalues(1) == doctest::Approx(1.0));
  CHECK(max_abs(model.W - Matrix::Identity(2, 2)) < 1e-12);
}

TEST_CASE("klt: k = 1") {
  const auto model = shared::fit_klt(testing::gaussian_matrix(5, 1, 3));
  CHECK(model.W(0, 0) == 1.0);
}

TEST_CASE("klt: correlated Gaussian sample against a covariance oracle") {
  std::mt19937_64 rng(500);
  Matrix mix(3, 3);
  mix << 2.0, 0.0, 0.0, 0.8, 1.0, 0.0, -0.5, 0.3, 0.4;
  const Matrix g = testing::gaussian_matrix(500, 3, rng) * mix.transpose();
  const auto model = shared::fit_klt(g, {"A"});
  const Matrix c = covariance_oracle(g);
  const auto oracle = testing::jacobi_eig(c);
  for (Index j = 0; j < 3; ++j) CHECK(max_abs(model.W.col(j) - testing::sign_fixed(oracle.vectors.col(j))) < 1e-8);
  const Matrix rotated = model.W.transpose() * c * model.W;
  const Matrix off = rotated - Matrix(rotated.diagonal().asDiagonal());
  CHECK(max_abs(off) < 1e-10);
  CHECK(max_abs(rotated.diagonal() - model.eigenvalues) < 1e-10);
  CHECK(model.total_rows == 500);
  CHECK(max_abs(model.mean - g.colwise().mean().transpose()) < 1e-14);
}

TEST_CASE("klt: invariants on fitted common spaces") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 8; ++trial) {
    const Index k = 2 + static_cast<Index>(rng() % 5);
    std::vector<align::SiteCommonSpace> spaces;
    for (const char* id : {"A", "B", "C"}) {
      const auto site = testing::random_site(id, 8 + static_cast<Index>(rng() % 6), 12, 3, rng);
      spaces.push_back(align::fit_site(site, 1e-2, k));
    }
    const Matrix stacked = shared::concat_common(spaces);
    const auto model = shared::fit_klt(stacked, {"A", "B", "C"});
    CHECK(linalg::orthonormality_error(model.W) < 1e-10);
    CHECK(model.eigenvalues.minCoeff() >= -1e-10);
    for (Index i = 0; i + 1 < k; ++i) CHECK(model.eigenvalues(i) >= model.eigenvalues(i + 1));
    const Matrix centered = stacked.rowwise() - stacked.colwise().mean();
    const Matrix cov = (centered * model.W).transpose() * (centered * model.W) / static_cast<double>(stacked.rows() - 1);
    CHECK(max_abs(cov - Matrix(cov.diagonal().asDiagonal())) < 1e-8);
    CHECK((stacked - shared::reconstruct(stacked, model)).norm() < 1e-8 * stacked.norm());
  }
}

TEST_CASE("klt: errors") {
  CHECK_THROWS(shared::fit_klt(Matrix::Ones(1, 2)));
  Matrix bad = Matrix::Ones(3, 2);
  bad(1, 1) = std::nan("");
  CHECK_THROWS_AS(shared::fit_klt(bad), NumericalError);
}

TEST_CASE("transform: identity rotation, zero input, norm preservation") {
  std::mt19937_64 rng(40);
  const Matrix x = testing::gaussian_matrix(6, 5, rng);
  const Matrix r = testing::gaussian_matrix(5, 3, rng);
  const auto scan = data::SubjectScan::make("A", "s", x, {});
  shared::SharedSpaceModel identity;
  identity.k = 3;
  identity.W = Matrix::Identity(3, 3);
  identity.mean = Vector::Zero(3);
  CHECK(max_abs(shared::transform_subject(scan, r, identity) - x * r) < 1e-14);
  CHECK(shared::transform_subject(data::SubjectScan::make("A", "z", Matrix::Zero(6, 5), {}), r, identity).isZero(0.0));

  const auto model = shared::fit_klt(testing::gaussian_matrix(20, 3, rng));
  const Matrix z = shared::transform_subject(scan, r, model);
  CHECK(std::abs(z.norm() - (x * r).norm()) < 1e-8);
  CHECK_THROWS(shared::transform_subject(scan, testing::gaussian_matrix(4, 3, rng), model));
}

TEST_CASE("transform is linear and an isometry") {
  std::mt19937_64 rng(41);
  const Matrix x1 = testing::gaussian_matrix(6, 5, rng);
  const Matrix x2 = testing::gaussian_matrix(6, 5, rng);
  const Matrix r = testing::gaussian_matrix(5, 3, rng);
  const auto model = shared::fit_klt(testing::gaussian_matrix(30, 3, rng));
  auto tf = [&](const Matrix& x) { return shared::transform_subject(data::SubjectScan::make("A", "s", x, {}), r, model); };
  CHECK(max_abs(tf(2.0 * x1 - 0.5 * x2) - (2.0 * tf(x1) - 0.5 * tf(x2))) < 1e-10);
  const Matrix f = testing::gaussian_matrix(7, 3, rng);
  const Matrix rotated = shared::rotate_features(f, model);
  for (Index i = 0; i < 7; ++i)
    for (Index j = i + 1; j < 7; ++j)
      CHECK(std::abs((rotated.row(i) - rotated.row(j)).norm() - (f.row(i) - f.row(j)).norm()) < 1e-8);
}

TEST_CASE("centering option subtracts the rotated mean") {
  std::mt19937_64 rng(42);
  const Matrix g = testing::gaussian_matrix(15, 3, rng).array() + 2.0;
  const auto model = shared::fit_klt(g);
  const Matrix centered = shared::rotate_features(g, model, true);
  CHECK(centered.colwise().mean().cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("reconstruct is exact") {
  std::mt19937_64 rng(43);
  const auto model = shared::fit_klt(testing::gaussian_matrix(12, 4, rng));
  const Matrix g = testing::gaussian_matrix(9, 4, rng);
  CHECK(max_abs(shared::reconstruct(g, model) - g) < 1e-8);
  CHECK(shared::reconstruct(Matrix::Zero(3, 4), model).isZero(0.0));
  CHECK_THROWS(shared::reconstruct(Matrix::Zero(3, 5), model));
}

TEST_CASE("shared model file round-trips") {
  std::mt19937_64 rng(44);
  const auto model = shared::fit_klt(testing::gaussian_matrix(12, 4, rng), {"A", "B"});
  const auto path = std::filesystem::temp_directory_path() / "sstl_shared.sstw";
  shared::save_shared_model(path, model);
  const auto back = shared::load_shared_model(path);
  CHECK(back.W == model.W);
  CHECK(back.eigenvalues == model.eigenvalues);
  CHECK(back.mean == model.mean);
  CHECK(back.training_sites == model.training_sites);
  CHECK(back.total_rows == 12);
}
