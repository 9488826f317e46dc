#include "commands.hpp"

#include "run_config.hpp"
#include "sstl/classifier.hpp"
#include "sstl/data_model.hpp"
#include "sstl/experiment.hpp"
#include "sstl/shared_space.hpp"
#include "sstl/site_alignment.hpp"
#include "sstl/synth.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <ostream>

namespace sstl::cli {

namespace fs = std::filesystem;

namespace {

fs::path manifest_path(const fs::path& bundle) {
  return fs::is_directory(bundle) ? bundle / "manifest.json" : bundle;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed for " + path.string());
}

std::string fold_file_name(std::size_t fold) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "fold-%03zu.sstc", fold);
  return buf;
}

struct SimulateArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

int cmd_simulate(const SimulateArgs& args, std::ostream& out) {
  RunConfig config = args.config.empty() ? RunConfig{} : load_run_config(args.config);
  if (args.seed) config.set_seed(*args.seed);
  const fs::path dir = args.out.empty() ? config.output_dir : fs::path(args.out);
  const auto generated = synth::generate(config.synth);
  const fs::path manifest = data::save_bundle(generated.bundle, dir);
  synth::save_ground_truth(dir / "truth", generated.truth);

  std::size_t subjects = 0;
  for (const auto& site : generated.bundle.sites) subjects += site.scans.size();
  out << "wrote " << manifest.string() << "\n";
  out << "sites " << generated.bundle.sites.size() << ", subjects " << subjects << ", V " << config.synth.num_voxels
      << "\n";
  for (std::size_t d = 0; d < generated.bundle.sites.size(); ++d) {
    const auto& site = generated.bundle.sites[d];
    out << "  " << site.site_id << ": " << site.num_subjects() << " subjects, T = " << site.num_timepoints();
    if (generated.truth.truncated_last_block[d]) out << " (last block truncated)";
    out << "\n";
  }
  return kOk;
}

struct AlignArgs {
  std::string bundle;
  double epsilon = 1e-4;
  long long k = 0;
  bool clamp = false;
  std::string out = "models";
  unsigned threads = 1;
};

int cmd_align(const AlignArgs& args, std::ostream& out, std::ostream& err) {
  if (args.k < 1) throw ConfigError("--k: must be >= 1");
  if (args.epsilon < 0.0) throw ConfigError("--epsilon: must be >= 0");
  const auto bundle = data::load_bundle(manifest_path(args.bundle));
  const auto report = data::validate_bundle(bundle);
  if (!report.ok()) throw DataError(report.to_string());

  for (const auto& site : bundle.sites) {
    Index k = static_cast<Index>(args.k);
    if (k > site.num_timepoints()) {
      if (!args.clamp) {
        throw ConfigError("--k " + std::to_string(k) + " exceeds T = " + std::to_string(site.num_timepoints()) +
                          " at site " + site.site_id + " (pass --clamp to cap it)");
      }
      err << "notice: site " << site.site_id << ": k clamped from " << k << " to T = " << site.num_timepoints() << "\n";
      k = site.num_timepoints();
    }
    const auto common = align::fit_site(site, args.epsilon, k, {args.threads});
    std::vector<align::ProjectionMatrix> projections;
    for (const auto& scan : site.scans) projections.push_back(align::projection(scan, args.epsilon, k));
    const fs::path path = fs::path(args.out) / (site.site_id + ".sstg");
    fs::create_directories(args.out);
    align::save_common_space(path, common);
    out << site.site_id << " objective " << std::setprecision(12) << align::objective_value(common, projections)
        << " k " << k << " -> " << path.string() << "\n";
  }
  return kOk;
}

struct FitSharedArgs {
  std::vector<std::string> models;
  std::string out = "shared.sstw";
};

int cmd_fit_shared(const FitSharedArgs& args, std::ostream& out) {
  std::vector<align::SiteCommonSpace> spaces;
  for (const auto& m : args.models) spaces.push_back(align::load_common_space(m));
  std::sort(spaces.begin(), spaces.end(), [](const auto& a, const auto& b) { return a.site_id < b.site_id; });
  std::vector<std::string> sites;
  for (const auto& s : spaces) {
    if (!sites.empty() && sites.back() == s.site_id) throw ConfigError("site " + s.site_id + " given twice");
    sites.push_back(s.site_id);
  }
  const auto model = shared::fit_klt(shared::concat_common(spaces), sites);
  fs::path path(args.out);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  shared::save_shared_model(path, model);
  out << "k " << model.k << ", rows " << model.total_rows << " -> " << path.string() << "\n";
  out << "eigenvalues";
  const Index shown = std::min<Index>(model.eigenvalues.size(), 10);
  for (Index i = 0; i < shown; ++i) out << ' ' << std::setprecision(6) << model.eigenvalues(i);
  out << (shown < model.eigenvalues.size() ? " ...\n" : "\n");
  return kOk;
}

struct EvaluateArgs {
  std::string bundle;
  std::string config;
  std::string grid;
  std::vector<std::string> train_sites;
  std::vector<std::string> test_sites;
  std::string baseline;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  std::string out;
  bool center = false;
  bool timings = false;
};

RunConfig resolve(const std::string& config_path, const std::string& grid_path, std::optional<std::uint64_t> seed,
                  std::optional<unsigned> threads) {
  RunConfig config = config_path.empty() ? RunConfig{} : load_run_config(config_path);
  if (!grid_path.empty()) config.grid = load_grid(grid_path);
  if (seed) config.set_seed(*seed);
  if (threads) config.threads = std::max(1u, *threads);
  return config;
}

int cmd_evaluate(const EvaluateArgs& args, std::ostream& out) {
  RunConfig config = resolve(args.config, args.grid, args.seed, args.threads);
  if (!args.train_sites.empty()) config.task.train_sites = args.train_sites;
  if (!args.test_sites.empty()) config.task.test_sites = args.test_sites;
  if (!args.baseline.empty()) {
    if (args.baseline != "raw") throw ConfigError("--baseline: only 'raw' is supported");
    config.raw_baseline = true;
  }
  if (args.center) config.center_features = true;
  const fs::path dir = args.out.empty() ? config.output_dir : fs::path(args.out);

  const auto bundle = data::load_bundle(manifest_path(args.bundle));
  experiment::validate_task(config.task, bundle);
  experiment::ExperimentOptions options;
  options.classifier = config.classifier;
  options.threads = config.threads;
  options.center_features = config.center_features;
  options.raw_baseline = config.raw_baseline;
  options.record_timings = args.timings;
  experiment::ExperimentArtifacts artifacts;
  const auto report = experiment::run_transfer(bundle, config.task, config.grid, options, &artifacts);

  write_text(dir / "report.json", experiment::report_to_json(report));
  write_text(dir / "report.csv", experiment::report_to_csv(report));
  const fs::path models = dir / "models";
  fs::create_directories(models);
  for (const auto& s : artifacts.train_spaces) align::save_common_space(models / (s.site_id + ".sstg"), s);
  for (const auto& s : artifacts.test_spaces) align::save_common_space(models / (s.site_id + ".sstg"), s);
  shared::save_shared_model(models / "shared.sstw", artifacts.shared);
  for (std::size_t f = 0; f < artifacts.fold_models.size(); ++f)
    classify::save_model(models / fold_file_name(f), artifacts.fold_models[f]);

  out << report.direction << ": accuracy " << std::setprecision(4) << report.mean() << " +/- " << report.sstl.std
      << " (epsilon " << report.chosen_epsilon << ", k " << report.chosen_k << (report.chosen_k_clamped ? ", clamped" : "")
      << ")\n";
  if (report.raw_baseline) {
    out << "raw baseline: accuracy " << report.raw_baseline->mean << " +/- " << report.raw_baseline->std << "\n";
  }
  out << "report -> " << (dir / "report.json").string() << "\n";
  return kOk;
}

struct BenchArgs {
  std::string bundle;
  std::string config;
  std::string grid;
  std::vector<std::string> train_sites;
  std::vector<std::string> test_sites;
  std::vector<int> scale_subjects;
  int repeats = 3;
  std::optional<unsigned> threads;
  std::string out;
};

int cmd_bench(const BenchArgs& args, std::ostream& out) {
  RunConfig config = resolve(args.config, args.grid, std::nullopt, args.threads);
  if (!args.train_sites.empty()) config.task.train_sites = args.train_sites;
  if (!args.test_sites.empty()) config.task.test_sites = args.test_sites;
  if (args.scale_subjects.empty()) throw ConfigError("--scale-subjects: at least one size is required");
  if (args.repeats < 1) throw ConfigError("--repeats: must be >= 1");
  const auto bundle = data::load_bundle(manifest_path(args.bundle));
  experiment::validate_task(config.task, bundle);
  experiment::ExperimentOptions options;
  options.classifier = config.classifier;
  options.threads = config.threads;
  options.center_features = config.center_features;

  std::vector<experiment::StageTimings> timings;
  for (int n : args.scale_subjects) {
    if (n < 2) throw ConfigError("--scale-subjects: leave-one-subject-out needs at least 2 subjects");
    timings.push_back(
        experiment::bench_runtime(experiment::subset_subjects(bundle, n), config.task, config.grid, options, args.repeats));
  }
  std::ostringstream csv;
  csv << "stage,subjects,seconds\n";
  using Getter = double (*)(const experiment::StageTimings&);
  const std::pair<const char*, Getter> stages[] = {
      {"projection", [](const experiment::StageTimings& t) { return t.projection; }},
      {"merge", [](const experiment::StageTimings& t) { return t.merge; }},
      {"alignment", [](const experiment::StageTimings& t) { return t.alignment(); }},
      {"klt", [](const experiment::StageTimings& t) { return t.klt; }},
      {"train", [](const experiment::StageTimings& t) { return t.train; }},
      {"predict", [](const experiment::StageTimings& t) { return t.predict; }},
      {"total", [](const experiment::StageTimings& t) { return t.total(); }},
  };
  csv << std::setprecision(6);
  for (const auto& [name, get] : stages) {
    for (std::size_t i = 0; i < timings.size(); ++i) csv << name << ',' << args.scale_subjects[i] << ',' << get(timings[i]) << '\n';
  }
  if (args.out.empty()) {
    out << csv.str();
  } else {
    write_text(args.out, csv.str());
    out << "timings -> " << args.out << "\n";
  }
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-site functional alignment and transfer evaluation", "sstl"};
  app.require_subcommand(1);

  SimulateArgs simulate;
  auto* sim = app.add_subcommand("simulate", "Generate a synthetic multi-site bundle");
  sim->add_option("--config", simulate.config, "Run configuration (JSON)")->check(CLI::ExistingFile);
  sim->add_option("--out", simulate.out, "Output directory (overrides output_dir)");
  sim->add_option("--seed", simulate.seed, "Random seed (overrides the config)");

  AlignArgs align_args;
  auto* align_cmd = app.add_subcommand("align", "Fit one common space per site");
  align_cmd->add_option("bundle", align_args.bundle, "Bundle directory or manifest.json")->required();
  align_cmd->add_option("--epsilon", align_args.epsilon, "Ridge regularizer");
  align_cmd->add_option("--k", align_args.k, "Common space dimension")->required();
  align_cmd->add_flag("--clamp", align_args.clamp, "Cap k at each site's time point count");
  align_cmd->add_option("--out", align_args.out, "Directory for the .sstg files");
  align_cmd->add_option("--threads", align_args.threads, "Worker threads");

  FitSharedArgs fit_args;
  auto* fit = app.add_subcommand("fit-shared", "Fit the shared rotation from site common spaces");
  fit->add_option("models", fit_args.models, "Site .sstg files")->required()->check(CLI::ExistingFile);
  fit->add_option("--out", fit_args.out, "Output .sstw file");

  EvaluateArgs eval_args;
  auto* eval = app.add_subcommand("evaluate", "Grid search and cross-site transfer evaluation");
  eval->add_option("bundle", eval_args.bundle, "Bundle directory or manifest.json")->required();
  eval->add_option("--config", eval_args.config, "Run configuration (JSON)")->check(CLI::ExistingFile);
  eval->add_option("--grid", eval_args.grid, "Hyperparameter grid (JSON)")->check(CLI::ExistingFile);
  eval->add_option("--train-sites", eval_args.train_sites, "Training sites")->delimiter(',');
  eval->add_option("--test-sites", eval_args.test_sites, "Testing sites")->delimiter(',');
  eval->add_option("--baseline", eval_args.baseline, "Add a comparison arm: raw");
  eval->add_option("--seed", eval_args.seed, "Classifier seed (overrides the config)");
  eval->add_option("--threads", eval_args.threads, "Worker threads");
  eval->add_option("--out", eval_args.out, "Report directory (overrides output_dir)");
  eval->add_flag("--center", eval_args.center, "Center features by the shared-space mean");
  eval->add_flag("--timings", eval_args.timings, "Record stage wall-clock times in the report");

  BenchArgs bench_args;
  auto* bench = app.add_subcommand("bench", "Per-stage runtime at several subject counts");
  bench->add_option("bundle", bench_args.bundle, "Bundle directory or manifest.json")->required();
  bench->add_option("--config", bench_args.config, "Run configuration (JSON)")->check(CLI::ExistingFile);
  bench->add_option("--grid", bench_args.grid, "Hyperparameter grid (JSON)")->check(CLI::ExistingFile);
  bench->add_option("--train-sites", bench_args.train_sites, "Training sites")->delimiter(',');
  bench->add_option("--test-sites", bench_args.test_sites, "Testing sites")->delimiter(',');
  bench->add_option("--scale-subjects", bench_args.scale_subjects, "Subjects per site, e.g. 5,10")
      ->delimiter(',')
      ->required();
  bench->add_option("--repeats", bench_args.repeats, "Repeats per size (best is kept)");
  bench->add_option("--threads", bench_args.threads, "Worker threads");
  bench->add_option("--out", bench_args.out, "CSV output file (default: stdout)");

  auto* config_cmd = app.add_subcommand("config", "Configuration helpers");
  config_cmd->require_subcommand(1);
  auto* dump = config_cmd->add_subcommand("dump-defaults", "Print the default run configuration");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*sim) return cmd_simulate(simulate, out);
    if (*align_cmd) return cmd_align(align_args, out, err);
    if (*fit) return cmd_fit_shared(fit_args, out);
    if (*eval) return cmd_evaluate(eval_args, out);
    if (*bench) return cmd_bench(bench_args, out);
    if (*dump) {
      out << to_json(RunConfig{}).dump(2) << "\n";
      return kOk;
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const LeakageError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return kNumericalError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kUnexpected;
  }
  return kUnexpected;
}

}  // namespace sstl::cli
