#pragma once

// Multi-site synthetic data with planted shared structure.
//
// Per site d: a block-design label sequence y_d, a latent time course
//   L_d = templates[y_d] + jitter_d          (T_d x k_true)
// and per subject s an orthonormal-row basis A_s (k_true x V):
//   X = L_d A_s + batch_scale * profile_d vector_d^T + noise_sigma * N(0, 1)
// followed by column standardization.

#include "sstl/common.hpp"
#include "sstl/data_model.hpp"
#include "sstl/site_alignment.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace sstl::synth {

struct SynthConfig {
  int num_sites = 2;
  std::vector<int> subjects_per_site{5, 5};
  std::vector<int> timepoints_per_site{120, 120};
  int num_voxels = 400;
  int latent_dim = 10;
  int num_classes = 4;
  int block_length = 6;
  double noise_sigma = 1.0;
  double batch_effect_scale = 1.0;
  std::uint64_t seed = 0;
};

// Throws ConfigError naming the offending field.
void validate_config(const SynthConfig& config);

std::string site_name(int index);
std::string subject_name(int index, int count);

// Class sequence c_0 x block, c_1 x block, ... cycling over classes; the final
// block is cut short when block_length does not divide T.
std::vector<int> block_labels(int timepoints, int num_classes, int block_length);

struct GroundTruth {
  Matrix class_templates;                     // classes x k_true
  std::vector<Matrix> site_latents;           // L_d, T_d x k_true
  std::vector<Vector> batch_profiles;         // T_d
  std::vector<Vector> batch_vectors;          // V
  std::vector<std::vector<Matrix>> subject_bases;  // [site][subject], k_true x V
  std::vector<bool> truncated_last_block;     // per site
};

struct GenerateOptions {
  bool standardize = true;
};

struct SynthOutput {
  data::MultiSiteBundle bundle;
  GroundTruth truth;
};

SynthOutput generate(const SynthConfig& config, const GenerateOptions& options = {});

// Orthonormal basis of the column-centered latent time course of a site.
Matrix latent_subspace(const GroundTruth& truth, std::size_t site);

// 1 - mean principal angle(span G, span centered L_d) / (pi / 2).
double recovery_score(const Matrix& G, const GroundTruth& truth, std::size_t site);
inline double recovery_score(const align::SiteCommonSpace& common, const GroundTruth& truth, std::size_t site) {
  return recovery_score(common.G, truth, site);
}

// truth.json plus one BIN matrix per component under `dir`.
void save_ground_truth(const std::filesystem::path& dir, const GroundTruth& truth);

}  // namespace sstl::synth
