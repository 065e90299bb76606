#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "padrec/autograd.hpp"

namespace padrec {

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  bool passed = false;
};

/// Builds the loss on the supplied tape. Must be deterministic: the harness
/// evaluates it once per perturbation with a fresh tape.
using LossBuilder = std::function<Var(Tape&)>;

/// Compares reverse-mode gradients against the five-point central difference
/// (8 (f(+s) - f(-s)) - (f(+2s) - f(-2s))) / 12s for s in {h, h/10, h/100}.
/// Relative error per coordinate is |a - n| / max(1e-12, |a| + |n|), taken
/// for the step whose estimate n lies closest to the analytic value a.
GradCheckReport grad_check(const LossBuilder& build_loss, std::span<Parameter* const> params, double h = 1e-3,
                           double tol = 1e-4);

}  // namespace padrec
