#include "run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <vector>

namespace sstl::cli {

using nlohmann::json;

std::map<std::string, int> json_key_lines(const std::string& text) {
  struct Frame {
    bool object = false;
    std::string key;
  };
  std::map<std::string, int> lines;
  std::vector<Frame> stack;
  auto prefix = [&] {
    std::string p;
    for (const auto& f : stack) {
      if (f.object && !f.key.empty() && &f != &stack.back()) p += f.key + ".";
    }
    return p;
  };
  int line = 1;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '\n') {
      ++line;
    } else if (c == '{' || c == '[') {
      stack.push_back({c == '{', {}});
    } else if (c == '}' || c == ']') {
      if (!stack.empty()) stack.pop_back();
    } else if (c == '"') {
      const int start_line = line;
      std::string s;
      for (++i; i < text.size() && text[i] != '"'; ++i) {
        if (text[i] == '\\' && i + 1 < text.size()) ++i;
        if (text[i] == '\n') ++line;
        s += text[i];
      }
      std::size_t j = i + 1;
      while (j < text.size() && std::isspace(static_cast<unsigned char>(text[j]))) {
        if (text[j] == '\n') ++line;
        ++j;
      }
      if (j < text.size() && text[j] == ':' && !stack.empty() && stack.back().object) {
        stack.back().key = s;
        lines.emplace(prefix() + s, start_line);
      }
      i = j - 1;
    }
  }
  return lines;
}

namespace {

class Reader {
 public:
  Reader(const std::string& text, std::string source) : lines_(json_key_lines(text)), source_(std::move(source)) {}

  [[noreturn]] void fail(const std::string& path, const std::string& what) const {
    throw ConfigError(where(path) + path + ": " + what);
  }

  std::string where(const std::string& path) const {
    const auto it = lines_.find(path);
    return source_ + (it != lines_.end() ? ":" + std::to_string(it->second) : std::string{}) + ": ";
  }

  void only_keys(const json& node, const std::string& path, const std::set<std::string>& allowed) const {
    if (!node.is_object()) fail(path.empty() ? "<root>" : path, "expected an object");
    for (const auto& [key, value] : node.items()) {
      if (!allowed.count(key)) {
        const std::string full = path.empty() ? key : path + "." + key;
        throw ConfigError(where(full) + "unknown key '" + full + "'");
      }
    }
  }

  long long integer(const json& v, const std::string& path) const {
    if (!v.is_number_integer()) fail(path, "expected an integer");
    return v.get<long long>();
  }
  double real(const json& v, const std::string& path) const {
    if (!v.is_number()) fail(path, "expected a number");
    return v.get<double>();
  }
  bool boolean(const json& v, const std::string& path) const {
    if (!v.is_boolean()) fail(path, "expected true or false");
    return v.get<bool>();
  }
  std::string string(const json& v, const std::string& path) const {
    if (!v.is_string()) fail(path, "expected a string");
    return v.get<std::string>();
  }
  std::vector<double> reals(const json& v, const std::string& path) const {
    if (!v.is_array()) fail(path, "expected an array of numbers");
    std::vector<double> out;
    for (const auto& e : v) out.push_back(real(e, path));
    return out;
  }
  std::vector<int> integers(const json& v, const std::string& path) const {
    if (!v.is_array()) fail(path, "expected an array of integers");
    std::vector<int> out;
    for (const auto& e : v) out.push_back(static_cast<int>(integer(e, path)));
    return out;
  }
  std::vector<std::string> strings(const json& v, const std::string& path) const {
    if (!v.is_array()) fail(path, "expected an array of strings");
    std::vector<std::string> out;
    for (const auto& e : v) out.push_back(string(e, path));
    return out;
  }

  // Re-raises a ConfigError of the form "field: why" against `section.field`.
  [[noreturn]] void relocate(const ConfigError& e, const std::string& section) const {
    const std::string msg = e.what();
    const auto colon = msg.find(':');
    if (colon == std::string::npos) throw ConfigError(source_ + ": " + msg);
    const std::string path = section + msg.substr(0, colon);
    throw ConfigError(where(path) + path + msg.substr(colon));
  }

 private:
  std::map<std::string, int> lines_;
  std::string source_;
};

json parse_document(const std::string& text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(source + ": " + e.what());
  }
}

void read_grid(const Reader& r, const json& node, const std::string& path, experiment::HyperGrid& grid) {
  const std::string p = path.empty() ? "" : path + ".";
  r.only_keys(node, path, {"epsilons", "alphas", "iterations"});
  if (node.contains("epsilons")) grid.epsilons = r.reals(node["epsilons"], p + "epsilons");
  if (node.contains("alphas")) grid.alphas = r.reals(node["alphas"], p + "alphas");
  if (node.contains("iterations")) grid.iterations = static_cast<int>(r.integer(node["iterations"], p + "iterations"));
  try {
    experiment::validate_grid(grid);
  } catch (const ConfigError& e) {
    // validate_grid reports "grid.<field>: ..."
    std::string msg = e.what();
    if (msg.rfind("grid.", 0) == 0) msg = msg.substr(5);
    r.relocate(ConfigError(msg), p);
  }
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

json to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir.string();
  j["threads"] = c.threads;
  j["center_features"] = c.center_features;
  j["raw_baseline"] = c.raw_baseline;
  j["synth"] = {{"num_sites", c.synth.num_sites},
                {"subjects_per_site", c.synth.subjects_per_site},
                {"timepoints_per_site", c.synth.timepoints_per_site},
                {"num_voxels", c.synth.num_voxels},
                {"latent_dim", c.synth.latent_dim},
                {"num_classes", c.synth.num_classes},
                {"block_length", c.synth.block_length},
                {"noise_sigma", c.synth.noise_sigma},
                {"batch_effect_scale", c.synth.batch_effect_scale}};
  j["grid"] = {{"epsilons", c.grid.epsilons}, {"alphas", c.grid.alphas}, {"iterations", c.grid.iterations}};
  j["task"] = {{"train_sites", c.task.train_sites}, {"test_sites", c.task.test_sites}};
  j["classifier"] = {{"reg_lambda", c.classifier.reg_lambda},
                     {"epochs", c.classifier.epochs},
                     {"learning_rate", c.classifier.learning_rate}};
  return j;
}

RunConfig parse_run_config(const std::string& text, const std::string& source) {
  const json doc = parse_document(text, source);
  const Reader r(text, source);
  r.only_keys(doc, "",
              {"seed", "output_dir", "threads", "center_features", "raw_baseline", "synth", "grid", "task", "classifier"});
  RunConfig c;
  if (doc.contains("seed")) {
    const long long seed = r.integer(doc["seed"], "seed");
    if (seed < 0) r.fail("seed", "must be >= 0");
    c.seed = static_cast<std::uint64_t>(seed);
  }
  if (doc.contains("output_dir")) c.output_dir = r.string(doc["output_dir"], "output_dir");
  if (doc.contains("threads")) {
    const long long t = r.integer(doc["threads"], "threads");
    if (t < 1) r.fail("threads", "must be >= 1");
    c.threads = static_cast<unsigned>(t);
  }
  if (doc.contains("center_features")) c.center_features = r.boolean(doc["center_features"], "center_features");
  if (doc.contains("raw_baseline")) c.raw_baseline = r.boolean(doc["raw_baseline"], "raw_baseline");

  if (doc.contains("synth")) {
    const json& s = doc["synth"];
    r.only_keys(s, "synth",
                {"num_sites", "subjects_per_site", "timepoints_per_site", "num_voxels", "latent_dim", "num_classes",
                 "block_length", "noise_sigma", "batch_effect_scale"});
    auto& t = c.synth;
    if (s.contains("num_sites")) t.num_sites = static_cast<int>(r.integer(s["num_sites"], "synth.num_sites"));
    if (s.contains("subjects_per_site")) t.subjects_per_site = r.integers(s["subjects_per_site"], "synth.subjects_per_site");
    if (s.contains("timepoints_per_site"))
      t.timepoints_per_site = r.integers(s["timepoints_per_site"], "synth.timepoints_per_site");
    if (s.contains("num_voxels")) t.num_voxels = static_cast<int>(r.integer(s["num_voxels"], "synth.num_voxels"));
    if (s.contains("latent_dim")) t.latent_dim = static_cast<int>(r.integer(s["latent_dim"], "synth.latent_dim"));
    if (s.contains("num_classes")) t.num_classes = static_cast<int>(r.integer(s["num_classes"], "synth.num_classes"));
    if (s.contains("block_length")) t.block_length = static_cast<int>(r.integer(s["block_length"], "synth.block_length"));
    if (s.contains("noise_sigma")) t.noise_sigma = r.real(s["noise_sigma"], "synth.noise_sigma");
    if (s.contains("batch_effect_scale")) t.batch_effect_scale = r.real(s["batch_effect_scale"], "synth.batch_effect_scale");
    try {
      synth::validate_config(t);
    } catch (const ConfigError& e) {
      r.relocate(e, "synth.");
    }
  }
  if (doc.contains("grid")) read_grid(r, doc["grid"], "grid", c.grid);
  if (doc.contains("task")) {
    const json& t = doc["task"];
    r.only_keys(t, "task", {"train_sites", "test_sites"});
    if (t.contains("train_sites")) c.task.train_sites = r.strings(t["train_sites"], "task.train_sites");
    if (t.contains("test_sites")) c.task.test_sites = r.strings(t["test_sites"], "task.test_sites");
  }
  if (doc.contains("classifier")) {
    const json& k = doc["classifier"];
    r.only_keys(k, "classifier", {"reg_lambda", "epochs", "learning_rate"});
    if (k.contains("reg_lambda")) {
      c.classifier.reg_lambda = r.real(k["reg_lambda"], "classifier.reg_lambda");
      if (!(c.classifier.reg_lambda >= 0.0)) r.fail("classifier.reg_lambda", "must be >= 0");
    }
    if (k.contains("epochs")) {
      c.classifier.epochs = static_cast<int>(r.integer(k["epochs"], "classifier.epochs"));
      if (c.classifier.epochs < 0) r.fail("classifier.epochs", "must be >= 0");
    }
    if (k.contains("learning_rate")) {
      c.classifier.learning_rate = r.real(k["learning_rate"], "classifier.learning_rate");
      if (!(c.classifier.learning_rate > 0.0)) r.fail("classifier.learning_rate", "must be > 0");
    }
  }
  c.set_seed(c.seed);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) { return parse_run_config(slurp(path), path.string()); }

experiment::HyperGrid parse_grid(const std::string& text, const std::string& source) {
  const json doc = parse_document(text, source);
  experiment::HyperGrid grid;
  read_grid(Reader(text, source), doc, "", grid);
  return grid;
}

experiment::HyperGrid load_grid(const std::filesystem::path& path) { return parse_grid(slurp(path), path.string()); }

}  // namespace sstl::cli
