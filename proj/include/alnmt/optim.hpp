#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "alnmt/tape.hpp"

namespace alnmt {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
};

/// Adam with bias correction. Moments are kept per parameter in the order
/// the parameters were first seen.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  /// One update at step `t` (1-based) with learning rate `lr`.
  void step(std::span<Parameter<T>* const> params, std::int64_t t, double lr);
  void reset() { first_.clear(); second_.clear(); }

  const std::vector<Tensor<T>>& first_moments() const { return first_; }
  const std::vector<Tensor<T>>& second_moments() const { return second_; }

 private:
  AdamConfig config_;
  std::vector<Tensor<T>> first_;
  std::vector<Tensor<T>> second_;
};

struct GradCheckResult {
  std::string parameter;
  std::size_t index = 0;
  double analytic = 0;
  double numeric = 0;
  double relative_error = 0;
};

struct GradCheckReport {
  double max_relative_error = 0;
  std::size_t checked = 0;
  GradCheckResult worst;
  std::vector<GradCheckResult> per_parameter;  // worst entry per parameter
};

/// Compares reverse-mode gradients against central finite differences for
/// every element of every parameter. `build_loss` must construct the full
/// scalar loss on the given tape from the current parameter values.
/// Relative error is |a - n| / max(|a|, |n|, floor).
GradCheckReport check_gradients(const std::function<Var<double>(Tape<double>&)>& build_loss,
                                std::span<Parameter<double>* const> params, double step = 1e-4,
                                double floor = 1e-7);

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace alnmt
