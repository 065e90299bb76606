#include "padrec/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace padrec {

namespace {

double eval_loss(const LossBuilder& build) {
  Tape tape;
  return build(tape).value().item();
}

}  // namespace

GradCheckReport grad_check(const LossBuilder& build_loss, std::span<Parameter* const> params, double h, double tol) {
  if (!(h > 0)) throw std::invalid_argument("grad_check: step must be positive");
  zero_grads(params);
  double base = 0;
  {
    Tape tape;
    Var loss = build_loss(tape);
    base = loss.value().item();
    tape.backward(loss);
  }
  if (eval_loss(build_loss) != base) {
    throw std::runtime_error("grad_check: loss is not deterministic across evaluations");
  }

  GradCheckReport report;
  for (Parameter* p : params) {
    GradCheckEntry entry{p->name, 0.0, 0};
    const Tensor analytic = p->grad;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double orig = p->value[i];
      auto at = [&](double offset) {
        p->value[i] = orig + offset;
        return eval_loss(build_loss);
      };
      const double a = analytic.empty() ? 0.0 : analytic[i];
      // Fourth-order stencil at three step sizes. Large steps lose to ReLU
      // kinks, small ones to roundoff on tiny gradients; the closest one counts.
      double rel = 1.0;
      for (double step : {h, h / 10.0, h / 100.0}) {
        const double numeric = (8.0 * (at(step) - at(-step)) - (at(2.0 * step) - at(-2.0 * step))) / (12.0 * step);
        rel = std::min(rel, std::abs(a - numeric) / std::max(1e-12, std::abs(a) + std::abs(numeric)));
      }
      p->value[i] = orig;
      if (rel > entry.max_rel_error) {
        entry.max_rel_error = rel;
        entry.worst_index = i;
      }
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.entries.push_back(std::move(entry));
  }
  report.passed = report.max_rel_error < tol;
  return report;
}

}  // namespace padrec
