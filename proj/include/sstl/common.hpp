#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace sstl {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// Error hierarchy. The CLI maps each family onto an exit code.

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised when test-site labels are read before the scoring stage.
class LeakageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline std::string shape_str(Index rows, Index cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

}  // namespace sstl
