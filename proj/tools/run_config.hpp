#pragma once

#include "sstl/classifier.hpp"
#include "sstl/experiment.hpp"
#include "sstl/synth.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

namespace sstl::cli {

// Everything a run needs. The single `seed` drives both the generator and
// the classifier shuffle.
struct RunConfig {
  synth::SynthConfig synth;
  experiment::HyperGrid grid;
  experiment::TransferTask task{{"A"}, {"B"}};
  classify::TrainConfig classifier;
  std::filesystem::path output_dir = "sstl_out";
  std::uint64_t seed = 0;
  unsigned threads = 1;
  bool center_features = false;
  bool raw_baseline = false;

  void set_seed(std::uint64_t value) {
    seed = value;
    synth.seed = value;
    classifier.seed = value;
  }
};

nlohmann::json to_json(const RunConfig& config);

// Rejects unknown keys and wrong types; messages carry "source:line".
RunConfig parse_run_config(const std::string& text, const std::string& source);
RunConfig load_run_config(const std::filesystem::path& path);

// A grid file holds just {"epsilons": [...], "alphas": [...], "iterations": 1}.
experiment::HyperGrid parse_grid(const std::string& text, const std::string& source);
experiment::HyperGrid load_grid(const std::filesystem::path& path);

// Dotted object path ("synth.num_classes") -> 1-based line of its key.
std::map<std::string, int> json_key_lines(const std::string& text);

}  // namespace sstl::cli
