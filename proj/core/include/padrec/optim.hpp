#pragma once

#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "padrec/tensor.hpp"

namespace padrec {

struct AdamWOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.1;
};

/// AdamW with decoupled weight decay (p <- p * (1 - lr * wd) before the
/// adaptive step). Parameters with `trainable == false` are skipped; those
/// with `weight_decay == false` get the adaptive step only.
class AdamW {
 public:
  explicit AdamW(AdamWOptions opts = {}) : opts_(opts) {}

  void step(std::span<Parameter* const> params);

  std::uint64_t steps() const { return step_; }
  const AdamWOptions& options() const { return opts_; }
  /// If set, every written value is rounded through float (32-bit mode).
  void set_round_to_float(bool on) { round_to_float_ = on; }

 private:
  struct Moments {
    Tensor m;
    Tensor v;
  };

  AdamWOptions opts_;
  std::uint64_t step_ = 0;
  bool round_to_float_ = false;
  std::unordered_map<const Parameter*, Moments> state_;
};

}  // namespace padrec
