#pragma once

// Transfer evaluation protocol.
//
// For every (epsilon, k) in the grid the training sites are aligned
// (unsupervised), a shared rotation W is fitted on their stacked common
// spaces, and one classifier per held-out training subject is trained on the
// remaining subjects' X R W features and validated on the held-out one. The
// combination with the best mean validation accuracy is kept; the test sites
// are then aligned without labels, mapped through W, and each fold model is
// scored on every test subject.

#include "sstl/classifier.hpp"
#include "sstl/common.hpp"
#include "sstl/data_model.hpp"
#include "sstl/shared_space.hpp"
#include "sstl/site_alignment.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace sstl::experiment {

struct HyperGrid {
  std::vector<double> epsilons{1e-2, 1e-4, 1e-6, 1e-8};
  std::vector<double> alphas{0.1, 0.5, 1.0, 1.1, 1.5, 2.0};
  int iterations = 1;  // single pass; kept for the grid schema only
};

void validate_grid(const HyperGrid& grid);

struct TransferTask {
  std::vector<std::string> train_sites;
  std::vector<std::string> test_sites;

  // e.g. "A->B" or "A,B->C"
  std::string direction_label() const;
};

// Throws ConfigError when the lists overlap, are empty, or name unknown sites.
void validate_task(const TransferTask& task, const data::MultiSiteBundle& bundle);

// Escrow for test-site labels. Reads before open_scoring() are counted and
// rejected with LeakageError.
class LabelVault {
 public:
  void deposit(const std::string& site, const std::string& subject, std::vector<int> labels);
  const std::vector<int>& read(const std::string& site, const std::string& subject);
  void open_scoring() { scoring_open_ = true; }
  bool scoring_open() const { return scoring_open_; }
  std::size_t reads_before_scoring() const { return early_reads_; }
  std::size_t reads() const { return reads_; }

 private:
  std::map<std::pair<std::string, std::string>, std::vector<int>> labels_;
  bool scoring_open_ = false;
  std::size_t early_reads_ = 0;
  std::size_t reads_ = 0;
};

struct StageTimings {
  double projection = 0.0;
  double merge = 0.0;
  double klt = 0.0;
  double train = 0.0;
  double predict = 0.0;

  double alignment() const { return projection + merge; }
  double total() const { return projection + merge + klt + train + predict; }
};

struct ExperimentOptions {
  classify::TrainConfig classifier;
  unsigned threads = 1;
  bool center_features = false;  // subtract mu W before classification
  bool raw_baseline = false;     // add the classifier-on-voxels arm
  bool record_timings = false;   // include wall-clock stage times in the report
  // When set, each test subject's labels are permuted with this seed before
  // scoring (chance calibration).
  std::optional<std::uint64_t> shuffle_test_labels_seed;
};

struct GridPoint {
  double epsilon = 0.0;
  double alpha = 0.0;
  Index k = 0;
  bool clamped = false;
  double validation_mean = 0.0;
};

struct FoldResult {
  std::string held_out;  // "site/subject"
  double validation_accuracy = 0.0;
  double test_accuracy = 0.0;
};

struct ArmResult {
  std::vector<FoldResult> folds;
  double mean = 0.0;
  double std = 0.0;
};

struct ExperimentReport {
  std::string direction;
  std::vector<std::string> train_sites;
  std::vector<std::string> test_sites;
  ArmResult sstl;
  std::optional<ArmResult> raw_baseline;
  double chosen_epsilon = 0.0;
  double chosen_alpha = 0.0;
  Index chosen_k = 0;
  bool chosen_k_clamped = false;
  Index k1 = 0;
  std::vector<GridPoint> grid;
  std::size_t test_label_reads_before_scoring = 0;
  std::size_t test_label_reads = 0;
  std::optional<StageTimings> runtimes;
  std::optional<double> pairwise_average;

  double mean() const { return sstl.mean; }
  std::vector<double> per_fold_accuracies() const;
};

// Fitted models of the chosen combination, for persistence.
struct ExperimentArtifacts {
  std::vector<align::SiteCommonSpace> train_spaces;
  std::vector<align::SiteCommonSpace> test_spaces;
  shared::SharedSpaceModel shared;
  std::vector<classify::LinearModel> fold_models;
};

// Mean and sample standard deviation (n - 1; 0 for a single value).
std::pair<double, double> mean_std(const std::vector<double>& values);

// k = round(alpha * k1), at least 1 and at most `max_k`; `clamped` reports a cap.
Index k_for_alpha(double alpha, Index k1, Index max_k, bool* clamped);

ExperimentReport run_transfer(const data::MultiSiteBundle& bundle, const TransferTask& task, const HyperGrid& grid,
                              const ExperimentOptions& options = {}, ExperimentArtifacts* artifacts = nullptr);

// Mean of the two task accuracies of reciprocal directions.
double pairwise_average(const ExperimentReport& ab, const ExperimentReport& ba);

// Welch two-sample two-sided p-value. Two constant samples give p = 1 when
// their means agree and p = 0 otherwise.
double t_test_two_sided(const std::vector<double>& a, const std::vector<double>& b);

// Best-of-`repeats` per-stage timings of the full protocol.
StageTimings bench_runtime(const data::MultiSiteBundle& bundle, const TransferTask& task, const HyperGrid& grid,
                           const ExperimentOptions& options = {}, int repeats = 3);

// Keeps the first `subjects` scans (ascending id) of every site.
data::MultiSiteBundle subset_subjects(const data::MultiSiteBundle& bundle, int subjects);

std::string report_to_json(const ExperimentReport& report);
std::string report_to_csv(const ExperimentReport& report);

}  // namespace sstl::experiment
