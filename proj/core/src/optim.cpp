#include "padrec/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace padrec {

void AdamW::step(std::span<Parameter* const> params) {
  for (const Parameter* p : params) {
    if (p->trainable && (p->grad.shape() != p->value.shape() || p->grad.size() != p->value.size())) {
      throw std::invalid_argument("adamw: parameter '" + p->name + "' has no gradient");
    }
  }
  ++step_;
  const double t = static_cast<double>(step_);
  const double bc1 = 1.0 - std::pow(opts_.beta1, t);
  const double bc2 = 1.0 - std::pow(opts_.beta2, t);
  for (Parameter* p : params) {
    if (!p->trainable) continue;
    auto [it, fresh] = state_.try_emplace(p);
    Moments& st = it->second;
    if (fresh) {
      st.m = Tensor::zeros_like(p->value);
      st.v = Tensor::zeros_like(p->value);
    }
    const double decay = p->weight_decay ? 1.0 - opts_.lr * opts_.weight_decay : 1.0;
    auto w = p->value.values();
    auto g = p->grad.values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      st.m[i] = opts_.beta1 * st.m[i] + (1.0 - opts_.beta1) * g[i];
      st.v[i] = opts_.beta2 * st.v[i] + (1.0 - opts_.beta2) * g[i] * g[i];
      const double mhat = st.m[i] / bc1;
      const double vhat = st.v[i] / bc2;
      w[i] = w[i] * decay - opts_.lr * mhat / (std::sqrt(vhat) + opts_.eps);
      if (round_to_float_) w[i] = static_cast<double>(static_cast<float>(w[i]));
    }
  }
}

}  // namespace padrec
