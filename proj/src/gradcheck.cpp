#include "gdmsr/gradcheck.hpp"

#include <cmath>

namespace gdmsr::num {

GradCheckResult grad_check(std::span<Parameter* const> params,
                           const std::function<Tensor(Tape&)>& build_loss, double step) {
  check(step > 0.0, "grad_check: step must be positive");
  GradCheckResult res;
  if (params.empty()) return res;

  for (Parameter* p : params) p->zero_grad();
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    Tensor loss = build_loss(tape);
    tape.backward(loss);
    for (Parameter* p : params) analytic.push_back(p->grad);
  }

  auto eval = [&]() {
    Tape tape;
    return build_loss(tape).scalar();
  };

  for (size_t pi = 0; pi < params.size(); ++pi) {
    Parameter* p = params[pi];
    for (size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + step;
      const double f_plus = eval();
      p->value[i] = saved - step;
      const double f_minus = eval();
      p->value[i] = saved;
      const double fd = (f_plus - f_minus) / (2.0 * step);
      const double an = analytic[pi][i];
      const double denom = std::max({std::fabs(fd), std::fabs(an), 1e-4});
      const double rel = std::fabs(fd - an) / denom;
      ++res.coords_checked;
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst = strcat(p->name, "[", i, "]: analytic=", an, ", fd=", fd);
      }
    }
  }
  return res;
}

}  // namespace gdmsr::num
