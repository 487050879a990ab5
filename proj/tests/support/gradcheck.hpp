// Central finite-difference gradient checking used across the test suites.

#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>

#include "nsm/params.hpp"

namespace nsm::testing {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst;
  int checked = 0;
};

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

// f re-evaluates the scalar objective from the store; analytic holds the
// gradients to verify. Perturbs every entry of every named tensor.
inline GradCheckResult check_param_gradients(const std::function<double(const ParamStore&)>& f,
                                             ParamStore params,
                                             const std::map<std::string, Tensor>& analytic,
                                             double eps = 1e-5) {
  GradCheckResult result;
  for (const auto& [name, grad] : analytic) {
    Tensor& w = params.at(name);
    for (int64_t i = 0; i < w.size(); ++i) {
      const double keep = w.data[i];
      w.data[i] = keep + eps;
      const double up = f(params);
      w.data[i] = keep - eps;
      const double down = f(params);
      w.data[i] = keep;
      const double fd = (up - down) / (2.0 * eps);
      const double err = rel_err(grad.data[i], fd);
      if (err > result.max_rel_err) {
        result.max_rel_err = err;
        result.worst = name + "[" + std::to_string(i) + "] analytic=" +
                       std::to_string(grad.data[i]) + " fd=" + std::to_string(fd);
      }
      ++result.checked;
    }
  }
  return result;
}

// Same idea for a function of plain leaf tensors.
inline GradCheckResult check_input_gradients(
    const std::function<double(const std::vector<Tensor>&)>& f, std::vector<Tensor> inputs,
    const std::vector<Tensor>& analytic, double eps = 1e-5) {
  GradCheckResult result;
  for (size_t k = 0; k < inputs.size(); ++k) {
    for (int64_t i = 0; i < inputs[k].size(); ++i) {
      const double keep = inputs[k].data[i];
      inputs[k].data[i] = keep + eps;
      const double up = f(inputs);
      inputs[k].data[i] = keep - eps;
      const double down = f(inputs);
      inputs[k].data[i] = keep;
      const double fd = (up - down) / (2.0 * eps);
      const double err = rel_err(analytic[k].data[i], fd);
      if (err > result.max_rel_err) {
        result.max_rel_err = err;
        result.worst = "input " + std::to_string(k) + "[" + std::to_string(i) + "] analytic=" +
                       std::to_string(analytic[k].data[i]) + " fd=" + std::to_string(fd);
      }
      ++result.checked;
    }
  }
  return result;
}

}  // namespace nsm::testing
