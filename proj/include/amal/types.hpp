#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace amal {

// Row-major so that on-disk layouts and per-instance row views are direct.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using IntVector = Eigen::VectorXi;
using Index = Eigen::Index;

class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& what) : Error("shape", what) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};
struct ParseError : Error {
  explicit ParseError(const std::string& what) : Error("parse", what) {}
};
struct IoError : Error {
  explicit IoError(const std::string& what) : Error("io", what) {}
};
struct NumericError : Error {
  NumericError(const std::string& what, std::int64_t instance_id)
      : Error("numeric", what + " (instance " + std::to_string(instance_id) + ")"),
        instance_id(instance_id) {}
  std::int64_t instance_id;
};
struct UsageError : Error {
  explicit UsageError(const std::string& what) : Error("usage", what) {}
};

}  // namespace amal
