// Dense row-major float64 tensor plus the error types shared across modules.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace nsm {

// Shape/dimension violations (matmul mismatch, bad distribution length, ...).
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Contract/domain violations (non-scalar loss, empty softmax input, ...).
class ValueError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed files (JSON schema, checkpoint container).
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid run configuration (flag combinations, missing fields).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string shape_str(const std::vector<int>& shape);

struct Tensor {
  std::vector<int> shape;     // empty = rank-0 scalar
  std::vector<double> data;   // row-major, size = product(shape)

  Tensor() = default;

  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, double value);
  static Tensor scalar(double v);
  static Tensor vec(std::vector<double> values);
  static Tensor from(std::vector<int> shape, std::vector<double> values);

  int64_t size() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  int rows() const;  // rank-2 only
  int cols() const;

  double& operator()(int i) { return data[static_cast<size_t>(i)]; }
  double operator()(int i) const { return data[static_cast<size_t>(i)]; }
  double& operator()(int i, int j) { return data[static_cast<size_t>(i) * cols() + j]; }
  double operator()(int i, int j) const { return data[static_cast<size_t>(i) * cols() + j]; }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  bool all_finite() const;
};

}  // namespace nsm
