#include "sstl/experiment.hpp"

#include "sstl/linalg.hpp"
#include "sstl/parallel.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace sstl::experiment {

namespace {

using Clock = std::chrono::steady_clock;

class StageTimer {
 public:
  explicit StageTimer(double& slot) : slot_(slot), start_(Clock::now()) {}
  ~StageTimer() { slot_ += std::chrono::duration<double>(Clock::now() - start_).count(); }
  StageTimer(const StageTimer&) = delete;
  StageTimer& operator=(const StageTimer&) = delete;

 private:
  double& slot_;
  Clock::time_point start_;
};

void accumulate(StageTimings& into, const StageTimings& from) {
  into.projection += from.projection;
  into.merge += from.merge;
  into.klt += from.klt;
  into.train += from.train;
  into.predict += from.predict;
}

struct PreparedSite {
  data::SiteDataset site;
  std::vector<linalg::RankKSVD> svds;
};

PreparedSite prepare_site(data::SiteDataset site, StageTimings& timings) {
  StageTimer timer(timings.projection);
  PreparedSite out{std::move(site), {}};
  for (const auto& scan : out.site.scans) {
    const Index cap = std::min(scan.timepoints(), scan.voxels());
    out.svds.push_back(linalg::svd_rank_k(scan.responses, cap));
  }
  return out;
}

// Per-subject X R features of one site, in scan order.
struct AlignedSite {
  align::SiteCommonSpace common;
  std::vector<Matrix> features;
};

AlignedSite align_site(const PreparedSite& prepared, double epsilon, Index k, StageTimings& timings) {
  std::vector<align::ProjectionMatrix> projections;
  {
    StageTimer timer(timings.projection);
    projections.reserve(prepared.svds.size());
    for (const auto& svd : prepared.svds) projections.push_back(align::projection_from_svd(svd, epsilon, k));
  }
  StageTimer timer(timings.merge);
  AlignedSite out{align::fit_site_from_projections(prepared.site, projections, epsilon, k, false), {}};
  for (const auto& scan : prepared.site.scans) {
    const Matrix r = align::mapping_matrix(scan, out.common.G, epsilon);
    out.features.push_back(scan.responses * r);
    out.common.mappings[scan.subject_id] = r;
  }
  return out;
}

struct TrainingSubject {
  std::string name;  // "site/subject"
  const Matrix* features = nullptr;
  const std::vector<int>* labels = nullptr;
};

// Stacks every subject except `skip`.
std::pair<Matrix, std::vector<int>> stack_except(const std::vector<TrainingSubject>& subjects, std::size_t skip) {
  Index rows = 0;
  Index cols = 0;
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    if (i == skip) continue;
    rows += subjects[i].features->rows();
    cols = subjects[i].features->cols();
  }
  if (rows == 0) throw DataError("empty fold: no training subjects remain after holding out " + subjects[skip].name);
  Matrix x(rows, cols);
  std::vector<int> y;
  y.reserve(static_cast<std::size_t>(rows));
  Index at = 0;
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    if (i == skip) continue;
    x.middleRows(at, subjects[i].features->rows()) = *subjects[i].features;
    at += subjects[i].features->rows();
    y.insert(y.end(), subjects[i].labels->begin(), subjects[i].labels->end());
  }
  return {std::move(x), std::move(y)};
}

struct LosoOutcome {
  std::vector<classify::LinearModel> models;
  std::vector<double> validation;
};

LosoOutcome run_loso(const std::vector<TrainingSubject>& subjects, const classify::TrainConfig& config,
                     StageTimings& timings) {
  LosoOutcome out;
  for (std::size_t fold = 0; fold < subjects.size(); ++fold) {
    auto [x, y] = stack_except(subjects, fold);
    {
      StageTimer timer(timings.train);
      out.models.push_back(classify::train(x, y, config));
    }
    StageTimer timer(timings.predict);
    const auto pred = classify::predict(out.models.back(), *subjects[fold].features);
    out.validation.push_back(classify::accuracy(pred, *subjects[fold].labels));
  }
  return out;
}

struct Combo {
  double epsilon = 0.0;
  Index k = 0;
};

struct ComboOutcome {
  std::vector<align::SiteCommonSpace> spaces;
  shared::SharedSpaceModel model;
  std::vector<Matrix> features;  // rotated, training subjects in fold order
  LosoOutcome loso;
  double validation_mean = 0.0;
  StageTimings timings;
};

std::vector<std::string> sorted_unique(std::vector<std::string> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------

void validate_grid(const HyperGrid& grid) {
  if (grid.epsilons.empty()) throw ConfigError("grid.epsilons: must not be empty");
  if (grid.alphas.empty()) throw ConfigError("grid.alphas: must not be empty");
  for (double e : grid.epsilons)
    if (!(e >= 0.0) || !std::isfinite(e)) throw ConfigError("grid.epsilons: values must be finite and >= 0");
  for (double a : grid.alphas)
    if (!(a > 0.0) || !std::isfinite(a)) throw ConfigError("grid.alphas: values must be finite and > 0");
  if (grid.iterations != 1) throw ConfigError("grid.iterations: the alignment is single-pass; only 1 is accepted");
}

std::string TransferTask::direction_label() const {
  auto join = [](const std::vector<std::string>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
    return out;
  };
  return join(train_sites) + "->" + join(test_sites);
}

void validate_task(const TransferTask& task, const data::MultiSiteBundle& bundle) {
  if (task.train_sites.empty()) throw ConfigError("train_sites: must not be empty");
  if (task.test_sites.empty()) throw ConfigError("test_sites: must not be empty");
  for (const auto& s : task.train_sites) {
    if (std::find(task.test_sites.begin(), task.test_sites.end(), s) != task.test_sites.end()) {
      throw ConfigError("sites must be disjoint: '" + s + "' is both a training and a testing site");
    }
  }
  for (const auto* list : {&task.train_sites, &task.test_sites}) {
    for (const auto& s : *list)
      if (!bundle.has_site(s)) throw ConfigError("unknown site '" + s + "'");
  }
}

void LabelVault::deposit(const std::string& site, const std::string& subject, std::vector<int> labels) {
  labels_[{site, subject}] = std::move(labels);
}

const std::vector<int>& LabelVault::read(const std::string& site, const std::string& subject) {
  if (!scoring_open_) {
    ++early_reads_;
    throw LeakageError("test label for " + site + "/" + subject + " requested before the scoring stage");
  }
  ++reads_;
  const auto it = labels_.find({site, subject});
  if (it == labels_.end()) throw DataError("no escrowed labels for " + site + "/" + subject);
  return it->second;
}

std::vector<double> ExperimentReport::per_fold_accuracies() const {
  std::vector<double> out;
  for (const auto& f : sstl.folds) out.push_back(f.test_accuracy);
  return out;
}

std::pair<double, double> mean_std(const std::vector<double>& values) {
  if (values.empty()) return {0.0, 0.0};
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (n - 1.0))};
}

Index k_for_alpha(double alpha, Index k1, Index max_k, bool* clamped) {
  auto k = static_cast<Index>(std::llround(alpha * static_cast<double>(k1)));
  bool capped = false;
  if (k > max_k) {
    k = max_k;
    capped = true;
  }
  k = std::max<Index>(k, 1);
  if (clamped != nullptr) *clamped = capped;
  return k;
}

ExperimentReport run_transfer(const data::MultiSiteBundle& bundle, const TransferTask& task, const HyperGrid& grid,
                              const ExperimentOptions& options, ExperimentArtifacts* artifacts) {
  validate_grid(grid);
  validate_task(task, bundle);
  const auto train_ids = sorted_unique(task.train_sites);
  const auto test_ids = sorted_unique(task.test_sites);

  StageTimings timings;
  ExperimentReport report;
  report.direction = task.direction_label();
  report.train_sites = train_ids;
  report.test_sites = test_ids;

  // Training sites keep their labels; test sites go through the vault.
  std::vector<PreparedSite> train_sites;
  for (const auto& id : train_ids) {
    const auto& site = bundle.site(id);
    data::require_alignment_ready(site);
    for (const auto& scan : site.scans) {
      if (!scan.has_labels()) throw DataError("training subject " + id + "/" + scan.subject_id + " has no labels");
    }
    train_sites.push_back(prepare_site(site, timings));
  }
  LabelVault vault;
  std::vector<PreparedSite> test_sites;
  for (const auto& id : test_ids) {
    data::SiteDataset stripped = bundle.site(id);
    data::require_alignment_ready(stripped);
    for (auto& scan : stripped.scans) {
      std::vector<int> labels = std::move(scan.labels);
      scan.labels.clear();
      if (options.shuffle_test_labels_seed) {
        std::mt19937_64 rng(*options.shuffle_test_labels_seed ^ std::hash<std::string>{}(id + "/" + scan.subject_id));
        for (std::size_t i = labels.size(); i > 1; --i) std::swap(labels[i - 1], labels[rng() % i]);
      }
      vault.deposit(id, scan.subject_id, std::move(labels));
    }
    test_sites.push_back(prepare_site(std::move(stripped), timings));
  }

  // k1 = min over training sites of min(V, T_d); k may not exceed any T_d in play.
  Index k1 = std::numeric_limits<Index>::max();
  Index max_k = std::numeric_limits<Index>::max();
  for (const auto& p : train_sites) {
    k1 = std::min({k1, p.site.num_voxels(), p.site.num_timepoints()});
    max_k = std::min(max_k, p.site.num_timepoints());
  }
  for (const auto& p : test_sites) max_k = std::min(max_k, p.site.num_timepoints());
  report.k1 = k1;

  std::vector<Combo> combos;
  for (double eps : grid.epsilons) {
    for (double alpha : grid.alphas) {
      GridPoint point;
      point.epsilon = eps;
      point.alpha = alpha;
      point.k = k_for_alpha(alpha, k1, max_k, &point.clamped);
      report.grid.push_back(point);
      const bool known = std::any_of(combos.begin(), combos.end(),
                                     [&](const Combo& c) { return c.epsilon == eps && c.k == point.k; });
      if (!known) combos.push_back({eps, point.k});
    }
  }

  std::vector<TrainingSubject> subject_index;
  for (const auto& p : train_sites)
    for (const auto& scan : p.site.scans) subject_index.push_back({p.site.site_id + "/" + scan.subject_id, nullptr, &scan.labels});

  std::vector<ComboOutcome> outcomes(combos.size());
  parallel_for(combos.size(), options.threads, [&](std::size_t ci) {
    auto& out = outcomes[ci];
    const auto& combo = combos[ci];
    std::vector<AlignedSite> aligned;
    for (const auto& p : train_sites) aligned.push_back(align_site(p, combo.epsilon, combo.k, out.timings));
    {
      StageTimer timer(out.timings.klt);
      std::vector<const align::SiteCommonSpace*> spaces;
      for (const auto& a : aligned) spaces.push_back(&a.common);
      out.model = shared::fit_klt(shared::concat_common(spaces), train_ids);
      for (const auto& a : aligned)
        for (const auto& f : a.features) out.features.push_back(shared::rotate_features(f, out.model, options.center_features));
    }
    for (auto& a : aligned) out.spaces.push_back(std::move(a.common));
    auto subjects = subject_index;
    for (std::size_t i = 0; i < subjects.size(); ++i) subjects[i].features = &out.features[i];
    out.loso = run_loso(subjects, options.classifier, out.timings);
    out.validation_mean = mean_std(out.loso.validation).first;
  });
  for (const auto& o : outcomes) accumulate(timings, o.timings);

  for (auto& point : report.grid) {
    for (std::size_t ci = 0; ci < combos.size(); ++ci) {
      if (combos[ci].epsilon == point.epsilon && combos[ci].k == point.k) point.validation_mean = outcomes[ci].validation_mean;
    }
  }

  // Best mean validation accuracy; ties prefer smaller k, then larger epsilon.
  std::size_t best = 0;
  for (std::size_t ci = 1; ci < combos.size(); ++ci) {
    const auto& a = outcomes[ci];
    const auto& b = outcomes[best];
    if (a.validation_mean > b.validation_mean ||
        (a.validation_mean == b.validation_mean &&
         (combos[ci].k < combos[best].k || (combos[ci].k == combos[best].k && combos[ci].epsilon > combos[best].epsilon)))) {
      best = ci;
    }
  }
  const auto& chosen = outcomes[best];
  report.chosen_epsilon = combos[best].epsilon;
  report.chosen_k = combos[best].k;
  for (const auto& point : report.grid) {
    if (point.epsilon == report.chosen_epsilon && point.k == report.chosen_k) {
      report.chosen_alpha = point.alpha;
      report.chosen_k_clamped = point.clamped;
      break;
    }
  }

  // Test sites: unsupervised alignment with the chosen combination, then W.
  struct TestSubject {
    std::string site;
    std::string subject;
    Matrix features;
    const Matrix* raw = nullptr;
  };
  std::vector<TestSubject> test_subjects;
  for (const auto& p : test_sites) {
    auto aligned = align_site(p, combos[best].epsilon, combos[best].k, timings);
    if (artifacts != nullptr) artifacts->test_spaces.push_back(aligned.common);
    StageTimer timer(timings.klt);
    for (std::size_t s = 0; s < p.site.scans.size(); ++s) {
      test_subjects.push_back({p.site.site_id, p.site.scans[s].subject_id,
                               shared::rotate_features(aligned.features[s], chosen.model, options.center_features),
                               &p.site.scans[s].responses});
    }
  }

  vault.open_scoring();
  auto score_fold = [&](const classify::LinearModel& model, bool raw) {
    StageTimer timer(timings.predict);
    std::vector<double> per_subject;
    for (const auto& ts : test_subjects) {
      const auto pred = classify::predict(model, raw ? *ts.raw : ts.features);
      per_subject.push_back(classify::accuracy(pred, vault.read(ts.site, ts.subject)));
    }
    return mean_std(per_subject).first;
  };

  for (std::size_t fold = 0; fold < subject_index.size(); ++fold) {
    report.sstl.folds.push_back(
        {subject_index[fold].name, chosen.loso.validation[fold], score_fold(chosen.loso.models[fold], false)});
  }
  std::tie(report.sstl.mean, report.sstl.std) = mean_std(report.per_fold_accuracies());

  if (options.raw_baseline) {
    ArmResult raw;
    std::vector<TrainingSubject> raw_subjects;
    for (const auto& p : train_sites)
      for (const auto& scan : p.site.scans)
        raw_subjects.push_back({p.site.site_id + "/" + scan.subject_id, &scan.responses, &scan.labels});
    const auto loso = run_loso(raw_subjects, options.classifier, timings);
    std::vector<double> acc;
    for (std::size_t fold = 0; fold < raw_subjects.size(); ++fold) {
      raw.folds.push_back({raw_subjects[fold].name, loso.validation[fold], score_fold(loso.models[fold], true)});
      acc.push_back(raw.folds.back().test_accuracy);
    }
    std::tie(raw.mean, raw.std) = mean_std(acc);
    report.raw_baseline = std::move(raw);
  }

  if (artifacts != nullptr) {
    artifacts->train_spaces = chosen.spaces;
    artifacts->shared = chosen.model;
    artifacts->fold_models = chosen.loso.models;
  }
  report.test_label_reads_before_scoring = vault.reads_before_scoring();
  report.test_label_reads = vault.reads();
  if (options.record_timings) report.runtimes = timings;
  return report;
}

double pairwise_average(const ExperimentReport& ab, const ExperimentReport& ba) {
  if (ab.train_sites != ba.test_sites || ab.test_sites != ba.train_sites) {
    throw ConfigError("pairwise_average: reports " + ab.direction + " and " + ba.direction + " are not reciprocal");
  }
  return 0.5 * (ab.mean() + ba.mean());
}

double t_test_two_sided(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() < 2 || b.size() < 2) throw DataError("t-test: each sample needs at least two values");
  const auto [ma, sa] = mean_std(a);
  const auto [mb, sb] = mean_std(b);
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double va = sa * sa / na;
  const double vb = sb * sb / nb;
  const double se2 = va + vb;
  if (se2 == 0.0) return ma == mb ? 1.0 : 0.0;
  const double t = (ma - mb) / std::sqrt(se2);
  const double df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
  const boost::math::students_t dist(df);
  const double p = 2.0 * boost::math::cdf(dist, -std::abs(t));
  return std::clamp(p, 0.0, 1.0);
}

StageTimings bench_runtime(const data::MultiSiteBundle& bundle, const TransferTask& task, const HyperGrid& grid,
                           const ExperimentOptions& options, int repeats) {
  ExperimentOptions timed = options;
  timed.record_timings = true;
  StageTimings best;
  for (int r = 0; r < std::max(1, repeats); ++r) {
    const auto report = run_transfer(bundle, task, grid, timed);
    const auto& t = *report.runtimes;
    if (r == 0) {
      best = t;
    } else {
      best.projection = std::min(best.projection, t.projection);
      best.merge = std::min(best.merge, t.merge);
      best.klt = std::min(best.klt, t.klt);
      best.train = std::min(best.train, t.train);
      best.predict = std::min(best.predict, t.predict);
    }
  }
  return best;
}

data::MultiSiteBundle subset_subjects(const data::MultiSiteBundle& bundle, int subjects) {
  data::MultiSiteBundle out;
  for (const auto& site : bundle.sites) {
    if (static_cast<int>(site.scans.size()) < subjects) {
      throw ConfigError("site " + site.site_id + " has only " + std::to_string(site.scans.size()) + " subjects, " +
                        std::to_string(subjects) + " requested");
    }
    data::SiteDataset s{site.site_id, {site.scans.begin(), site.scans.begin() + subjects}};
    out.sites.push_back(std::move(s));
  }
  return out;
}

namespace {

nlohmann::json arm_to_json(const ArmResult& arm) {
  nlohmann::json j;
  j["mean"] = arm.mean;
  j["std"] = arm.std;
  j["folds"] = nlohmann::json::array();
  for (std::size_t i = 0; i < arm.folds.size(); ++i) {
    j["folds"].push_back({{"fold", i},
                          {"held_out", arm.folds[i].held_out},
                          {"validation_accuracy", arm.folds[i].validation_accuracy},
                          {"test_accuracy", arm.folds[i].test_accuracy}});
  }
  return j;
}

}  // namespace

std::string report_to_json(const ExperimentReport& report) {
  nlohmann::json j;
  j["direction"] = report.direction;
  j["train_sites"] = report.train_sites;
  j["test_sites"] = report.test_sites;
  j["accuracy"] = arm_to_json(report.sstl);
  j["chosen"] = {{"epsilon", report.chosen_epsilon},
                 {"alpha", report.chosen_alpha},
                 {"k", report.chosen_k},
                 {"k_clamped", report.chosen_k_clamped}};
  j["k1"] = report.k1;
  j["grid"] = nlohmann::json::array();
  for (const auto& p : report.grid) {
    j["grid"].push_back({{"epsilon", p.epsilon},
                         {"alpha", p.alpha},
                         {"k", p.k},
                         {"k_clamped", p.clamped},
                         {"validation_mean", p.validation_mean}});
  }
  if (report.raw_baseline) j["raw_baseline"] = arm_to_json(*report.raw_baseline);
  j["leakage"] = {{"test_label_reads_before_scoring", report.test_label_reads_before_scoring},
                  {"test_label_reads", report.test_label_reads}};
  if (report.runtimes) {
    const auto& t = *report.runtimes;
    j["runtimes"] = {{"projection", t.projection}, {"merge", t.merge}, {"klt", t.klt},
                     {"train", t.train},           {"predict", t.predict}};
  }
  if (report.pairwise_average) j["pairwise_average"] = *report.pairwise_average;
  return j.dump(2) + "\n";
}

std::string report_to_csv(const ExperimentReport& report) {
  std::ostringstream out;
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  out << "direction,arm,fold,held_out,validation_accuracy,test_accuracy\n";
  auto rows = [&](const ArmResult& arm, const char* name) {
    for (std::size_t i = 0; i < arm.folds.size(); ++i) {
      out << report.direction << ',' << name << ',' << i << ',' << arm.folds[i].held_out << ','
          << arm.folds[i].validation_accuracy << ',' << arm.folds[i].test_accuracy << '\n';
    }
  };
  rows(report.sstl, "sstl");
  if (report.raw_baseline) rows(*report.raw_baseline, "raw");
  return out.str();
}

}  // namespace sstl::experiment
