#include "alnmt/optim.hpp"

#include <algorithm>
#include <cmath>

namespace alnmt {

template <typename T>
void Adam<T>::step(std::span<Parameter<T>* const> params, std::int64_t t, double lr) {
  if (t < 1) throw ContractError("Adam step index must be >= 1");
  if (first_.size() != params.size()) {
    first_.clear();
    second_.clear();
    for (const auto* p : params) {
      first_.emplace_back(p->value.shape(), std::vector<T>(p->value.size(), T(0)));
      second_.emplace_back(p->value.shape(), std::vector<T>(p->value.size(), T(0)));
    }
  }
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter<T>& p = *params[k];
    if (!p.grad.same_shape(p.value)) throw ContractError("Adam: gradient shape mismatch for " + p.name);
    Tensor<T>& m = first_[k];
    Tensor<T>& v = second_[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      const double mi = b1 * m[i] + (1.0 - b1) * g;
      const double vi = b2 * v[i] + (1.0 - b2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = lr * (mi / c1) / (std::sqrt(vi / c2) + config_.eps);
      p.value[i] = static_cast<T>(p.value[i] - update);
    }
  }
}

template class Adam<float>;
template class Adam<double>;

GradCheckReport check_gradients(const std::function<Var<double>(Tape<double>&)>& build_loss,
                                std::span<Parameter<double>* const> params, double step,
                                double floor) {
  for (auto* p : params) p->zero_grad();
  {
    Tape<double> tape;
    Var<double> loss = build_loss(tape);
    tape.backward(loss);
  }
  auto evaluate = [&]() {
    Tape<double> tape(false);
    return build_loss(tape).value()[0];
  };

  GradCheckReport report;
  for (auto* p : params) {
    GradCheckResult worst_here;
    worst_here.parameter = p->name;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + step;
      const double up = evaluate();
      p->value[i] = saved - step;
      const double down = evaluate();
      p->value[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = p->grad[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
      const double rel = std::abs(analytic - numeric) / denom;
      ++report.checked;
      if (rel >= worst_here.relative_error) {
        worst_here = {p->name, i, analytic, numeric, rel};
      }
    }
    if (worst_here.relative_error >= report.max_relative_error) {
      report.max_relative_error = worst_here.relative_error;
      report.worst = worst_here;
    }
    report.per_parameter.push_back(worst_here);
  }
  return report;
}

}  // namespace alnmt
