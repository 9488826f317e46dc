#include "sstl/synth.hpp"

#include "sstl/linalg.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

namespace sstl::synth {

namespace {

constexpr double kJitterFraction = 0.1;

class Gaussian {
 public:
  explicit Gaussian(std::uint64_t seed) : rng_(seed) {}
  double operator()() { return dist_(rng_); }
  Matrix matrix(Index rows, Index cols) {
    Matrix m(rows, cols);
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < cols; ++c) m(r, c) = (*this)();
    return m;
  }
  Vector vector(Index n) {
    Vector v(n);
    for (Index i = 0; i < n; ++i) v(i) = (*this)();
    return v;
  }

 private:
  std::mt19937_64 rng_;
  std::normal_distribution<double> dist_{0.0, 1.0};
};

// Orthonormal rows from the QR of a Gaussian V x k matrix.
Matrix orthonormal_rows(Gaussian& g, Index rows, Index cols) {
  const Matrix z = g.matrix(cols, rows);
  return linalg::thin_qr(z).Q.transpose();
}

}  // namespace

void validate_config(const SynthConfig& c) {
  auto fail = [](const std::string& field, const std::string& why) { throw ConfigError(field + ": " + why); };
  if (c.num_sites < 1) fail("num_sites", "must be >= 1");
  if (static_cast<int>(c.subjects_per_site.size()) != c.num_sites) fail("subjects_per_site", "needs one entry per site");
  if (static_cast<int>(c.timepoints_per_site.size()) != c.num_sites)
    fail("timepoints_per_site", "needs one entry per site");
  for (int s : c.subjects_per_site)
    if (s < 1) fail("subjects_per_site", "every site needs at least one subject");
  for (int t : c.timepoints_per_site)
    if (t < 2) fail("timepoints_per_site", "every site needs at least two time points");
  if (c.num_voxels < 1) fail("num_voxels", "must be >= 1");
  if (c.latent_dim < 1) fail("latent_dim", "must be >= 1");
  if (c.latent_dim > c.num_voxels) fail("latent_dim", "must not exceed num_voxels");
  for (int t : c.timepoints_per_site)
    if (c.latent_dim > t) fail("latent_dim", "must not exceed the smallest timepoints_per_site");
  if (c.num_classes < 2) fail("num_classes", "must be >= 2");
  if (c.block_length < 1) fail("block_length", "must be >= 1");
  if (!(c.noise_sigma >= 0.0) || !std::isfinite(c.noise_sigma)) fail("noise_sigma", "must be finite and >= 0");
  if (!(c.batch_effect_scale >= 0.0) || !std::isfinite(c.batch_effect_scale))
    fail("batch_effect_scale", "must be finite and >= 0");
}

std::string site_name(int index) {
  if (index < 26) return std::string(1, static_cast<char>('A' + index));
  return "site-" + std::to_string(index + 1);
}

std::string subject_name(int index, int count) {
  const int width = std::max(2, static_cast<int>(std::to_string(count).size()));
  std::string digits = std::to_string(index + 1);
  return "sub-" + std::string(static_cast<std::size_t>(width) - digits.size(), '0') + digits;
}

std::vector<int> block_labels(int timepoints, int num_classes, int block_length) {
  std::vector<int> labels(static_cast<std::size_t>(timepoints));
  for (int t = 0; t < timepoints; ++t) labels[static_cast<std::size_t>(t)] = (t / block_length) % num_classes;
  return labels;
}

SynthOutput generate(const SynthConfig& config, const GenerateOptions& options) {
  validate_config(config);
  const Index v = config.num_voxels;
  const Index k = config.latent_dim;
  // Template entries have variance V / k_true so that L A_s has unit
  // variance per voxel, matching the noise at noise_sigma = 1.
  const double template_scale = std::sqrt(static_cast<double>(v) / static_cast<double>(k));

  Gaussian g(config.seed);
  SynthOutput out;
  GroundTruth& truth = out.truth;
  truth.class_templates = template_scale * g.matrix(config.num_classes, k);

  for (int d = 0; d < config.num_sites; ++d) {
    const int t = config.timepoints_per_site[static_cast<std::size_t>(d)];
    const auto labels = block_labels(t, config.num_classes, config.block_length);
    truth.truncated_last_block.push_back(t % config.block_length != 0);

    Matrix latent(t, k);
    for (int r = 0; r < t; ++r) latent.row(r) = truth.class_templates.row(labels[static_cast<std::size_t>(r)]);
    latent += kJitterFraction * template_scale * g.matrix(t, k);
    truth.site_latents.push_back(latent);

    truth.batch_profiles.push_back(g.vector(t));
    truth.batch_vectors.push_back(g.vector(v));
    const Matrix batch =
        config.batch_effect_scale * truth.batch_profiles.back() * truth.batch_vectors.back().transpose();

    const std::string site_id = site_name(d);
    const int subjects = config.subjects_per_site[static_cast<std::size_t>(d)];
    truth.subject_bases.emplace_back();
    std::vector<data::SubjectScan> scans;
    for (int s = 0; s < subjects; ++s) {
      Matrix basis = orthonormal_rows(g, k, v);
      Matrix x = latent * basis + batch;
      if (config.noise_sigma > 0.0) x += config.noise_sigma * g.matrix(t, v);
      truth.subject_bases.back().push_back(std::move(basis));
      auto scan = data::SubjectScan::make(site_id, subject_name(s, subjects), std::move(x), labels);
      scans.push_back(options.standardize ? data::standardize(scan) : std::move(scan));
    }
    out.bundle.sites.push_back(data::SiteDataset::make(site_id, std::move(scans)));
  }
  return out;
}

Matrix latent_subspace(const GroundTruth& truth, std::size_t site) {
  const Matrix& latent = truth.site_latents.at(site);
  const Matrix centered = latent.rowwise() - latent.colwise().mean();
  const auto qr = linalg::thin_qr(centered);
  // Keep only directions the latent actually spans.
  Index rank = 0;
  Matrix basis(latent.rows(), latent.cols());
  for (Index j = 0; j < qr.R.rows(); ++j) {
    if (qr.R(j, j) > 1e-10 * centered.norm()) basis.col(rank++) = qr.Q.col(j);
  }
  return basis.leftCols(rank);
}

double recovery_score(const Matrix& G, const GroundTruth& truth, std::size_t site) {
  const Matrix latent = latent_subspace(truth, site);
  if (G.rows() != latent.rows()) throw NumericalError("recovery_score: G rows differ from site time points");
  const Vector angles = linalg::principal_angles(G, latent);
  if (angles.size() == 0) return 0.0;
  return 1.0 - angles.mean() / (std::numbers::pi / 2.0);
}

void save_ground_truth(const std::filesystem::path& dir, const GroundTruth& truth) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json doc;
  doc["class_templates"] = "class_templates.bin";
  data::save_matrix(dir / "class_templates.bin", truth.class_templates, data::MatrixFormat::kBin);
  doc["sites"] = nlohmann::json::array();
  for (std::size_t d = 0; d < truth.site_latents.size(); ++d) {
    const std::string site = site_name(static_cast<int>(d));
    nlohmann::json s;
    s["site_id"] = site;
    s["latent"] = site + "_latent.bin";
    s["batch_profile"] = site + "_batch_profile.bin";
    s["batch_vector"] = site + "_batch_vector.bin";
    s["truncated_last_block"] = static_cast<bool>(truth.truncated_last_block[d]);
    data::save_matrix(dir / s["latent"].get<std::string>(), truth.site_latents[d], data::MatrixFormat::kBin);
    data::save_matrix(dir / s["batch_profile"].get<std::string>(), truth.batch_profiles[d], data::MatrixFormat::kBin);
    data::save_matrix(dir / s["batch_vector"].get<std::string>(), truth.batch_vectors[d], data::MatrixFormat::kBin);
    s["subject_bases"] = nlohmann::json::array();
    const auto& bases = truth.subject_bases[d];
    for (std::size_t i = 0; i < bases.size(); ++i) {
      const std::string name =
          site + "_" + subject_name(static_cast<int>(i), static_cast<int>(bases.size())) + "_basis.bin";
      data::save_matrix(dir / name, bases[i], data::MatrixFormat::kBin);
      s["subject_bases"].push_back(name);
    }
    doc["sites"].push_back(std::move(s));
  }
  std::ofstream out(dir / "truth.json", std::ios::trunc);
  if (!out) throw DataError("cannot write " + (dir / "truth.json").string());
  out << doc.dump(2) << '\n';
}

}  // namespace sstl::synth
