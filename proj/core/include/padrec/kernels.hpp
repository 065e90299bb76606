#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "padrec/autograd.hpp"

namespace padrec {

enum class KernelKind { gaussian, laplacian, linear, cosine };

std::string_view to_string(KernelKind kind);
KernelKind parse_kernel_kind(std::string_view name);

/// Gaussian:  exp(-||x - y||^2 / (2 sigma^2))
/// Laplacian: exp(-||x - y||_1 / sigma^2)
/// Linear:    <x, y>
/// Cosine:    1 - <x/|x|, y/|y|>  (a distance; alignment-loss use only)
class KernelSpec {
 public:
  static KernelSpec gaussian(double bandwidth);
  static KernelSpec laplacian(double bandwidth);
  static KernelSpec linear();
  static KernelSpec cosine();

  KernelKind kind() const { return kind_; }
  /// Empty for linear/cosine.
  std::optional<double> bandwidth() const { return bandwidth_; }
  bool characteristic() const { return kind_ == KernelKind::gaussian || kind_ == KernelKind::laplacian; }

  friend bool operator==(const KernelSpec&, const KernelSpec&) = default;

 private:
  KernelSpec(KernelKind kind, std::optional<double> bw) : kind_(kind), bandwidth_(bw) {}
  KernelKind kind_;
  std::optional<double> bandwidth_;
};

double kernel_eval(const KernelSpec& spec, std::span<const double> x, std::span<const double> y);

/// Plain (non-differentiable) Gram matrix: entry (i, j) = k(X_i, Y_j).
Tensor gram_matrix(const KernelSpec& spec, const Tensor& x, const Tensor& y);
/// Differentiable Gram matrix on a tape.
Var gram(const KernelSpec& spec, Var x, Var y);

/// Where a bank may be used. Two-sample banks must be positive definite, so
/// the cosine distance is only admitted as an alignment-loss variant.
enum class KernelUse { two_sample, alignment_loss };

struct WeightedKernel {
  double beta = 1.0;
  KernelSpec spec;
};

/// Non-negative combination sum_u beta_u k_u with sum_u beta_u == d.
class MultiKernel {
 public:
  /// `total` is d; when omitted it is taken as the sum of the weights.
  MultiKernel(std::vector<WeightedKernel> entries, std::optional<double> total = std::nullopt,
              KernelUse use = KernelUse::two_sample);

  static MultiKernel single(const KernelSpec& spec, KernelUse use = KernelUse::two_sample);

  const std::vector<WeightedKernel>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  double total_weight() const { return total_; }
  KernelUse use() const { return use_; }

 private:
  std::vector<WeightedKernel> entries_;
  double total_;
  KernelUse use_;
};

/// Five Gaussian kernels, bandwidths 2^s for s in {-3, -2, -1, 0, 1}, unit weights.
MultiKernel default_gaussian_bank();

/// V-statistic: mean(K_XX) + mean(K_YY) - 2 mean(K_XY).
Var mmd2_biased(Var x, Var y, const MultiKernel& mk);
/// U-statistic over equal-size samples, diagonal terms excluded.
Var mmd2_unbiased(Var x, Var y, const MultiKernel& mk);

double mmd2_biased(const Tensor& x, const Tensor& y, const MultiKernel& mk);
double mmd2_unbiased(const Tensor& x, const Tensor& y, const MultiKernel& mk);

/// -sum_i log softmax_j(cos(x_i, x'_j) / tau)[i]
Var infonce_loss(Var x, Var x_prime, double temperature);

struct PermutationTestResult {
  double statistic = 0.0;
  double p_value = 1.0;
  std::size_t permutations = 0;
};

/// Two-sample permutation test on the biased MMD^2 statistic. The p-value is
/// (1 + #{perm stat >= observed}) / (1 + permutations).
PermutationTestResult mmd_permutation_test(const Tensor& x, const Tensor& y, const MultiKernel& mk,
                                           std::size_t permutations, std::uint64_t seed);

}  // namespace padrec
