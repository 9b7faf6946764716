#include "gdmsr/adam.hpp"

#include <cmath>

namespace gdmsr::num {

void Adam::step(std::span<Parameter* const> params) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (Parameter* p : params) {
    auto& st = state_[p];
    if (st.m.empty()) {
      st.m.assign(p->value.size(), 0.0);
      st.v.assign(p->value.size(), 0.0);
    }
    check(st.m.size() == p->value.size(), "Adam: parameter '", p->name, "' changed size");
    for (size_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad[i];
      check(std::isfinite(g), "Adam: non-finite gradient in parameter '", p->name,
            "' (training diverged)");
      st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * g;
      st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = st.m[i] / bc1;
      const double vhat = st.v[i] / bc2;
      p->value[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

}  // namespace gdmsr::num
