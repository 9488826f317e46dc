#include "sstl/classifier.hpp"

#include "sstl/binary_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

namespace sstl::classify {

namespace {

constexpr char kModelMagic[] = "SSTC";
constexpr std::uint8_t kModelVersion = 1;
constexpr int kMaxBacktracks = 40;

// +1 / -1 targets, one column per class.
Matrix one_vs_rest_targets(const std::vector<int>& labels, const std::vector<int>& classes) {
  Matrix y = Matrix::Constant(static_cast<Index>(labels.size()), static_cast<Index>(classes.size()), -1.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto it = std::lower_bound(classes.begin(), classes.end(), labels[i]);
    if (it != classes.end() && *it == labels[i]) y(static_cast<Index>(i), it - classes.begin()) = 1.0;
  }
  return y;
}

// theta = [W | b]; the bias column is not regularized.
double objective_from_scores(const Matrix& scores, const Matrix& targets, const Matrix& theta, double lambda) {
  const double n = static_cast<double>(scores.rows());
  const double loss = (1.0 - targets.array() * scores.array()).max(0.0).square().sum() / n;
  const auto w = theta.leftCols(theta.cols() - 1);
  return loss + lambda * w.squaredNorm();
}

double top_eigenvalue_gram(const Matrix& x) {
  Vector v = Vector::Ones(x.cols()) / std::sqrt(static_cast<double>(x.cols()));
  double value = 0.0;
  for (int it = 0; it < 60; ++it) {
    Vector next = x.transpose() * (x * v);
    const double norm = next.norm();
    if (norm == 0.0) return 0.0;
    value = norm;
    v = next / norm;
  }
  return value;
}

}  // namespace

LinearModel train(const Matrix& features, const std::vector<int>& labels, const TrainConfig& config,
                  std::vector<double>* objective_trace) {
  const Index n = features.rows();
  const Index k = features.cols();
  if (static_cast<Index>(labels.size()) != n) throw DataError("train: label count differs from feature rows");
  if (!features.allFinite()) throw NumericalError("train: non-finite features");
  if (config.epochs < 0 || !(config.reg_lambda >= 0.0) || !(config.learning_rate > 0.0)) {
    throw ConfigError("train: invalid classifier configuration");
  }
  std::vector<int> classes = labels;
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  if (classes.size() < 2) throw DataError("train: need at least two classes");
  if (n < static_cast<Index>(classes.size())) throw DataError("train: fewer samples than classes");

  // One seeded shuffle of the rows (Fisher-Yates on a 64-bit Mersenne twister).
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::mt19937_64 rng(config.seed);
  for (Index i = n - 1; i > 0; --i) {
    const auto j = static_cast<Index>(rng() % static_cast<std::uint64_t>(i + 1));
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }
  Matrix x(n, k + 1);
  std::vector<int> shuffled(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    x.row(i).head(k) = features.row(order[static_cast<std::size_t>(i)]);
    x(i, k) = 1.0;
    shuffled[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
  }
  const Matrix targets = one_vs_rest_targets(shuffled, classes);
  const Index c = static_cast<Index>(classes.size());
  const double nn = static_cast<double>(n);
  const double lambda = config.reg_lambda;
  const double lipschitz = 2.0 * top_eigenvalue_gram(x) / nn + 2.0 * lambda;

  Matrix theta = Matrix::Zero(c, k + 1);
  Matrix scores = Matrix::Zero(n, c);
  double current = objective_from_scores(scores, targets, theta, lambda);
  if (objective_trace != nullptr) {
    objective_trace->clear();
    objective_trace->push_back(current);
  }
  bool stalled = false;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    if (!stalled) {
      const Matrix active = (1.0 - targets.array() * scores.array()).max(0.0).matrix();
      const Matrix weighted = targets.cwiseProduct(active);
      Matrix grad = (-2.0 / nn) * weighted.transpose() * x;
      grad.leftCols(k) += 2.0 * lambda * theta.leftCols(k);
      double step = config.learning_rate / (lipschitz * std::sqrt(1.0 + epoch));
      bool accepted = false;
      for (int b = 0; b < kMaxBacktracks && !accepted; ++b, step *= 0.5) {
        Matrix trial = theta - step * grad;
        Matrix trial_scores = x * trial.transpose();
        const double value = objective_from_scores(trial_scores, targets, trial, lambda);
        if (value <= current) {
          theta = std::move(trial);
          scores = std::move(trial_scores);
          current = value;
          accepted = true;
        }
      }
      stalled = !accepted;
    }
    if (objective_trace != nullptr) objective_trace->push_back(current);
  }

  LinearModel model;
  model.weights = theta.leftCols(k);
  model.bias = theta.col(k);
  model.classes = std::move(classes);
  model.reg_lambda = lambda;
  model.epochs = config.epochs;
  model.seed = config.seed;
  return model;
}

Matrix decision_scores(const LinearModel& model, const Matrix& features) {
  if (features.cols() != model.dim()) {
    throw DataError("predict: feature width " + std::to_string(features.cols()) + " differs from model width " +
                    std::to_string(model.dim()));
  }
  Matrix scores = features * model.weights.transpose();
  scores.rowwise() += model.bias.transpose();
  return scores;
}

double objective(const LinearModel& model, const Matrix& features, const std::vector<int>& labels) {
  const Matrix scores = decision_scores(model, features);
  const Matrix targets = one_vs_rest_targets(labels, model.classes);
  Matrix theta(model.num_classes(), model.dim() + 1);
  theta << model.weights, model.bias;
  return objective_from_scores(scores, targets, theta, model.reg_lambda);
}

std::vector<int> predict(const LinearModel& model, const Matrix& features) {
  const Matrix scores = decision_scores(model, features);
  std::vector<int> out(static_cast<std::size_t>(scores.rows()));
  for (Index i = 0; i < scores.rows(); ++i) {
    Index best = 0;
    for (Index c = 1; c < scores.cols(); ++c)
      if (scores(i, c) > scores(i, best)) best = c;
    out[static_cast<std::size_t>(i)] = model.classes[static_cast<std::size_t>(best)];
  }
  return out;
}

double accuracy(const std::vector<int>& predicted, const std::vector<int>& truth) {
  if (predicted.size() != truth.size()) throw DataError("accuracy: length mismatch");
  if (truth.empty()) throw DataError("accuracy: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

void save_model(const std::filesystem::path& path, const LinearModel& model) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  io::BinaryWriter w(out);
  w.magic(kModelMagic);
  w.u8(kModelVersion);
  w.u64(static_cast<std::uint64_t>(model.num_classes()));
  w.u64(static_cast<std::uint64_t>(model.dim()));
  w.matrix_body(model.weights);
  w.vector_body(model.bias);
  for (int c : model.classes) w.i64(c);
  w.f64(model.reg_lambda);
  w.u64(static_cast<std::uint64_t>(model.epochs));
  w.u64(model.seed);
  if (!out) throw DataError("write failed for " + path.string());
}

LinearModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  io::BinaryReader r(in, path.string());
  r.expect_magic(kModelMagic);
  if (r.u8() != kModelVersion) throw DataError(path.string() + ": unsupported version");
  LinearModel m;
  const auto c = static_cast<Index>(r.u64());
  const auto k = static_cast<Index>(r.u64());
  m.weights = r.matrix_body(c, k);
  m.bias = r.vector_body(c);
  for (Index i = 0; i < c; ++i) m.classes.push_back(static_cast<int>(r.i64()));
  m.reg_lambda = r.f64();
  m.epochs = static_cast<int>(r.u64());
  m.seed = r.u64();
  r.expect_eof();
  return m;
}

}  // namespace sstl::classify
