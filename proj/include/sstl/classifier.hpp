#pragma once

// Deterministic multiclass linear classifier: one-vs-rest, L2-regularized
// squared hinge, full-batch gradient descent.

#include "sstl/common.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace sstl::classify {

struct TrainConfig {
  double reg_lambda = 1e-3;
  int epochs = 500;
  // Base step in units of 1/L, where L bounds the gradient's Lipschitz
  // constant; epoch e uses learning_rate / (L * sqrt(1 + e)).
  double learning_rate = 1.0;
  std::uint64_t seed = 0;
};

struct LinearModel {
  Matrix weights;            // classes x k
  Vector bias;               // classes
  std::vector<int> classes;  // ascending
  double reg_lambda = 0.0;
  int epochs = 0;
  std::uint64_t seed = 0;

  Index num_classes() const { return static_cast<Index>(classes.size()); }
  Index dim() const { return weights.cols(); }
};

// `objective_trace`, when given, receives the objective before training and
// after every epoch; it never increases.
LinearModel train(const Matrix& features, const std::vector<int>& labels, const TrainConfig& config,
                  std::vector<double>* objective_trace = nullptr);

// Objective of `model` on (features, labels): sum over classes of
// mean squared hinge + reg_lambda * ||w_c||^2.
double objective(const LinearModel& model, const Matrix& features, const std::vector<int>& labels);

Matrix decision_scores(const LinearModel& model, const Matrix& features);

// argmax_c (w_c . x + b_c); ties go to the lowest class index.
std::vector<int> predict(const LinearModel& model, const Matrix& features);

double accuracy(const std::vector<int>& predicted, const std::vector<int>& truth);

// "SSTC" model file.
void save_model(const std::filesystem::path& path, const LinearModel& model);
LinearModel load_model(const std::filesystem::path& path);

}  // namespace sstl::classify
