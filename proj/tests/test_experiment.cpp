#include "sstl/experiment.hpp"
#include "sstl/synth.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cmath>
#include <sstream>

using namespace sstl;
using namespace sstl::experiment;

namespace {

synth::SynthConfig small_config(std::uint64_t seed) {
  synth::SynthConfig c;
  c.seed = seed;
  c.num_voxels = 60;
  c.latent_dim = 4;
  c.num_classes = 3;
  c.block_length = 4;
  c.timepoints_per_site = {36, 36};
  c.subjects_per_site = {3, 3};
  return c;
}

HyperGrid one_combo() {
  HyperGrid g;
  g.epsilons = {1e-2};
  g.alphas = {0.5};
  return g;
}

// Sample values drawn once with numpy (seed 2024); p-value from scipy's
// Welch test on the same numbers.
const std::vector<double> kSampleA{
    1.0288568739519013,  1.6419200406711503,  1.1467195295966137,   -0.9731795154745656, -1.3928000963768683,
    0.06719635507109722, 0.8613509179404263,  0.509186798845688,    1.8102855742952833,  0.7508434731539183,
    0.6397595539314624,  -0.7313225212292476, -1.1077170351272676,  1.4844055856837017,  0.048912403069534136,
    0.8115201169815576,  -1.3764228399745688, -0.43637073584081926, -1.2910916333479945, -0.7756786842437912,
    0.9030630777436289,  -1.4805813250203528, -0.5340928297145819,  0.16378857220098098, -0.6684703049155165,
    -0.25228975964635664, -0.22186154087661292, 0.4181385697197018, -0.43125454836060817, 0.27226068000682285};
const std::vector<double> kSampleB{
    1.0568191954835344,  1.424569256141968,   1.224943388070294,   2.6576840551979304,  0.3363239305329897,
    2.1991871656162356,  0.5973875735575853,  0.042073827008186515, 2.21119446936847,   0.5604940959866436,
    0.6123641282719308,  -0.3886836827516753, -1.0981967905109227, 1.6343009414440184,  -0.1652663772886236,
    1.7782729899588319,  2.8481672953210664,  0.885202054149853,   -0.12661510304963652, 1.3941991740101531,
    1.761728470454166,   0.7382096212442624,  1.0174644908351385,  2.335270728748762,   2.2654519785916296,
    1.7099782281560678,  0.13359912282552722, 0.9463244289087339,  1.6029173174380698,  0.7881341314542641};
constexpr double kSampleP = 6.031412503355337e-05;

}  // namespace

TEST_CASE("default grid values") {
  const HyperGrid g;
  CHECK(g.epsilons == std::vector<double>{1e-2, 1e-4, 1e-6, 1e-8});
  CHECK(g.alphas == std::vector<double>{0.1, 0.5, 1.0, 1.1, 1.5, 2.0});
  CHECK(g.iterations == 1);
  CHECK_NOTHROW(validate_grid(g));
  HyperGrid bad = g;
  bad.alphas.push_back(0.0);
  CHECK_THROWS_AS(validate_grid(bad), ConfigError);
  bad = g;
  bad.iterations = 3;
  CHECK_THROWS_AS(validate_grid(bad), ConfigError);
}

TEST_CASE("k selection rounds and clamps") {
  bool clamped = true;
  CHECK(k_for_alpha(0.1, 120, 120, &clamped) == 12);
  CHECK_FALSE(clamped);
  CHECK(k_for_alpha(1.1, 120, 120, &clamped) == 120);
  CHECK(clamped);
  CHECK(k_for_alpha(0.1, 4, 4, &clamped) == 1);  // never below 1
  CHECK(k_for_alpha(1.5, 10, 100, &clamped) == 15);
}

TEST_CASE("task validation") {
  const auto bundle = synth::generate(small_config(0)).bundle;
  CHECK_NOTHROW(validate_task({{"A"}, {"B"}}, bundle));
  try {
    validate_task({{"A"}, {"A"}}, bundle);
    FAIL("expected a ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("sites must be disjoint") != std::string::npos);
  }
  CHECK_THROWS_AS(validate_task({{"A"}, {"Q"}}, bundle), ConfigError);
  CHECK_THROWS_AS(validate_task({{}, {"B"}}, bundle), ConfigError);
  CHECK(TransferTask{{"A", "B"}, {"C"}}.direction_label() == "A,B->C");
}

TEST_CASE("label vault refuses early reads") {
  LabelVault vault;
  vault.deposit("B", "s1", {1, 2});
  CHECK_THROWS_AS(vault.read("B", "s1"), LeakageError);
  CHECK(vault.reads_before_scoring() == 1);
  vault.open_scoring();
  CHECK(vault.read("B", "s1") == std::vector<int>{1, 2});
  CHECK(vault.reads() == 1);
  CHECK_THROWS_AS(vault.read("B", "nobody"), DataError);
}

TEST_CASE("mean and sample standard deviation") {
  const auto [m, s] = mean_std({1.0, 2.0, 3.0, 4.0});
  CHECK(m == doctest::Approx(2.5));
  CHECK(s == doctest::Approx(std::sqrt(5.0 / 3.0)));
  CHECK(mean_std({0.7}).second == 0.0);
}

TEST_CASE("pairwise average") {
  ExperimentReport ab;
  ab.train_sites = {"A"};
  ab.test_sites = {"B"};
  ab.sstl.mean = 0.8;
  ExperimentReport ba;
  ba.train_sites = {"B"};
  ba.test_sites = {"A"};
  ba.sstl.mean = 0.6;
  CHECK(pairwise_average(ab, ba) == doctest::Approx(0.7));
  ba.sstl.mean = 0.8;
  CHECK(pairwise_average(ab, ba) == 0.8);
  CHECK_THROWS_AS(pairwise_average(ab, ab), ConfigError);
}

TEST_CASE("welch t-test") {
  CHECK(t_test_two_sided({0.2, 0.4, 0.9}, {0.2, 0.4, 0.9}) == 1.0);
  CHECK(t_test_two_sided({0.5, 0.5}, {0.5, 0.5}) == 1.0);
  CHECK(t_test_two_sided({0.5, 0.5}, {0.7, 0.7}) == 0.0);
  const std::vector<double> jitter{0, 1e-9, 0, -1e-9, 0};
  std::vector<double> shifted;
  for (double j : jitter) shifted.push_back(1.0 + j);
  CHECK(t_test_two_sided(jitter, shifted) < 1e-6);
  CHECK(std::abs(t_test_two_sided(kSampleA, kSampleB) - kSampleP) < 1e-6);
  CHECK(t_test_two_sided({0.1, 0.4, 0.35, 0.8}, {0.3, 0.9, 0.7, 0.95, 0.6}) ==
        doctest::Approx(0.18474428862338452).epsilon(1e-9));
  CHECK_THROWS(t_test_two_sided({1.0}, {1.0, 2.0}));
}

TEST_CASE("run_transfer: single combination") {
  const auto bundle = synth::generate(small_config(1)).bundle;
  const auto report = run_transfer(bundle, {{"A"}, {"B"}}, one_combo());
  CHECK(report.direction == "A->B");
  CHECK(report.chosen_epsilon == 1e-2);
  CHECK(report.chosen_alpha == 0.5);
  CHECK(report.chosen_k == 18);
  CHECK(report.k1 == 36);
  REQUIRE(report.grid.size() == 1);
  REQUIRE(report.sstl.folds.size() == 3);
  CHECK(report.sstl.folds[0].held_out == "A/sub-01");
  const auto [m, s] = mean_std(report.per_fold_accuracies());
  CHECK(report.mean() == m);
  CHECK(report.sstl.std == s);
  CHECK(report.test_label_reads_before_scoring == 0);
  CHECK(report.test_label_reads == 3 * 3);
  CHECK_FALSE(report.runtimes.has_value());
}

TEST_CASE("run_transfer: grid records clamps and dedupes") {
  const auto bundle = synth::generate(small_config(2)).bundle;
  const auto report = run_transfer(bundle, {{"A"}, {"B"}}, HyperGrid{});
  CHECK(report.grid.size() == 24);
  int clamped = 0;
  for (const auto& p : report.grid) {
    CHECK(p.k <= 36);
    clamped += p.clamped ? 1 : 0;
  }
  CHECK(clamped == 12);  // alphas 1.1, 1.5, 2 at every epsilon
  // The chosen combination has the best validation mean.
  double best = 0.0;
  for (const auto& p : report.grid) best = std::max(best, p.validation_mean);
  for (const auto& p : report.grid) {
    if (p.epsilon == report.chosen_epsilon && p.k == report.chosen_k) CHECK(p.validation_mean == best);
  }
}

TEST_CASE("run_transfer: deterministic and thread-count independent") {
  const auto bundle = synth::generate(small_config(3)).bundle;
  HyperGrid grid;
  grid.epsilons = {1e-2, 1e-6};
  grid.alphas = {0.1, 1.0};
  ExperimentOptions options;
  options.raw_baseline = true;
  const auto a = report_to_json(run_transfer(bundle, {{"A"}, {"B"}}, grid, options));
  const auto b = report_to_json(run_transfer(bundle, {{"A"}, {"B"}}, grid, options));
  options.threads = 3;
  const auto c = report_to_json(run_transfer(bundle, {{"A"}, {"B"}}, grid, options));
  CHECK(a == b);
  CHECK(a == c);
}

TEST_CASE("run_transfer: errors") {
  auto config = small_config(4);
  config.subjects_per_site = {1, 2};
  const auto bundle = synth::generate(config).bundle;
  CHECK_THROWS_AS(run_transfer(bundle, {{"A"}, {"B"}}, one_combo()), DataError);
  CHECK_THROWS_AS(run_transfer(bundle, {{"B"}, {"B"}}, one_combo()), ConfigError);
}

TEST_CASE("run_transfer: raw baseline and timings") {
  const auto bundle = synth::generate(small_config(5)).bundle;
  ExperimentOptions options;
  options.raw_baseline = true;
  options.record_timings = true;
  const auto report = run_transfer(bundle, {{"B"}, {"A"}}, one_combo(), options);
  REQUIRE(report.raw_baseline.has_value());
  CHECK(report.raw_baseline->folds.size() == 3);
  REQUIRE(report.runtimes.has_value());
  CHECK(report.runtimes->total() > 0.0);
  CHECK(report.test_label_reads == 2 * 3 * 3);
}

TEST_CASE("report serialization") {
  const auto bundle = synth::generate(small_config(6)).bundle;
  ExperimentOptions options;
  options.raw_baseline = true;
  const auto report = run_transfer(bundle, {{"A"}, {"B"}}, one_combo(), options);
  const auto j = nlohmann::json::parse(report_to_json(report));
  CHECK(j["direction"] == "A->B");
  CHECK(j["accuracy"]["folds"].size() == 3);
  CHECK(j["chosen"]["k"] == 18);
  CHECK(j["leakage"]["test_label_reads_before_scoring"] == 0);
  CHECK(j.contains("raw_baseline"));

  std::istringstream csv(report_to_csv(report));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "direction,arm,fold,held_out,validation_accuracy,test_accuracy");
  int rows = 0;
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 6);
}

TEST_CASE("subset keeps the first subjects of every site") {
  const auto bundle = synth::generate(small_config(7)).bundle;
  const auto sub = subset_subjects(bundle, 2);
  CHECK(sub.sites[0].scans.size() == 2);
  CHECK(sub.sites[1].scans[1].subject_id == "sub-02");
  CHECK_THROWS_AS(subset_subjects(bundle, 4), ConfigError);
}

TEST_CASE("bench: halving k does not slow the projection stage") {
  auto config = small_config(8);
  config.num_voxels = 300;
  config.timepoints_per_site = {80, 80};
  const auto bundle = synth::generate(config).bundle;
  HyperGrid full;
  full.epsilons = {1e-2};
  full.alphas = {1.0};
  HyperGrid half = full;
  half.alphas = {0.5};
  const auto t_full = bench_runtime(bundle, {{"A"}, {"B"}}, full);
  const auto t_half = bench_runtime(bundle, {{"A"}, {"B"}}, half);
  // Wall-clock comparison; allow scheduler jitter.
  CHECK(t_half.projection <= 1.25 * t_full.projection + 1e-3);
}

TEST_CASE("reciprocal directions agree on symmetric sites") {
  double ab = 0.0;
  double ba = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    synth::SynthConfig c;
    c.seed = 100 + seed;
    const auto bundle = synth::generate(c).bundle;
    ab += run_transfer(bundle, {{"A"}, {"B"}}, HyperGrid{}).mean();
    ba += run_transfer(bundle, {{"B"}, {"A"}}, HyperGrid{}).mean();
  }
  MESSAGE("A->B " << ab / 10 << ", B->A " << ba / 10);
  CHECK(std::abs(ab - ba) / 10.0 < 0.15);
}
