#include "padrec/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>

namespace padrec {

std::string_view to_string(KernelKind kind) {
  switch (kind) {
    case KernelKind::gaussian: return "gaussian";
    case KernelKind::laplacian: return "laplacian";
    case KernelKind::linear: return "linear";
    case KernelKind::cosine: return "cosine";
  }
  return "unknown";
}

KernelKind parse_kernel_kind(std::string_view name) {
  if (name == "gaussian") return KernelKind::gaussian;
  if (name == "laplacian") return KernelKind::laplacian;
  if (name == "linear") return KernelKind::linear;
  if (name == "cosine") return KernelKind::cosine;
  throw std::invalid_argument("unknown kernel kind '" + std::string(name) + "'");
}

KernelSpec KernelSpec::gaussian(double bandwidth) {
  if (!(bandwidth > 0) || !std::isfinite(bandwidth)) throw std::invalid_argument("gaussian kernel: bandwidth must be > 0");
  return {KernelKind::gaussian, bandwidth};
}

KernelSpec KernelSpec::laplacian(double bandwidth) {
  if (!(bandwidth > 0) || !std::isfinite(bandwidth)) throw std::invalid_argument("laplacian kernel: bandwidth must be > 0");
  return {KernelKind::laplacian, bandwidth};
}

KernelSpec KernelSpec::linear() { return {KernelKind::linear, std::nullopt}; }
KernelSpec KernelSpec::cosine() { return {KernelKind::cosine, std::nullopt}; }

double kernel_eval(const KernelSpec& spec, std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw std::invalid_argument("kernel_eval: dimension mismatch " + std::to_string(x.size()) + " vs " +
                                std::to_string(y.size()));
  }
  switch (spec.kind()) {
    case KernelKind::gaussian: {
      double s = 0;
      for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
      const double bw = *spec.bandwidth();
      return std::exp(-s / (2.0 * bw * bw));
    }
    case KernelKind::laplacian: {
      double s = 0;
      for (std::size_t i = 0; i < x.size(); ++i) s += std::abs(x[i] - y[i]);
      const double bw = *spec.bandwidth();
      return std::exp(-s / (bw * bw));
    }
    case KernelKind::linear: {
      double s = 0;
      for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
      return s;
    }
    case KernelKind::cosine: {
      double dot = 0, nx = 0, ny = 0;
      for (std::size_t i = 0; i < x.size(); ++i) {
        dot += x[i] * y[i];
        nx += x[i] * x[i];
        ny += y[i] * y[i];
      }
      if (!(nx > 0) || !(ny > 0)) throw std::domain_error("cosine kernel: zero-norm input");
      return 1.0 - dot / (std::sqrt(nx) * std::sqrt(ny));
    }
  }
  throw std::logic_error("kernel_eval: unhandled kind");
}

Tensor gram_matrix(const KernelSpec& spec, const Tensor& x, const Tensor& y) {
  if (x.cols() != y.cols()) {
    throw std::invalid_argument("gram_matrix: dimension mismatch " + shape_string(x.shape()) + " vs " +
                                shape_string(y.shape()));
  }
  Tensor k(Shape{x.rows(), y.rows()});
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < y.rows(); ++j) k.at(i, j) = kernel_eval(spec, x.row(i), y.row(j));
  return k;
}

namespace {

// Distances shared by every kernel of a bank for one (x, y) pair.
struct DistanceCache {
  Var x, y;
  Var sq, l1;

  Var squared() {
    if (!sq.valid()) sq = pairwise_sq_dist(x, y);
    return sq;
  }
  Var manhattan() {
    if (!l1.valid()) l1 = pairwise_l1_dist(x, y);
    return l1;
  }
};

Var gram_cached(const KernelSpec& spec, DistanceCache& cache) {
  switch (spec.kind()) {
    case KernelKind::gaussian: {
      const double bw = *spec.bandwidth();
      return exp(scale(cache.squared(), -1.0 / (2.0 * bw * bw)));
    }
    case KernelKind::laplacian: {
      const double bw = *spec.bandwidth();
      return exp(scale(cache.manhattan(), -1.0 / (bw * bw)));
    }
    case KernelKind::linear: return matmul(cache.x, transpose(cache.y));
    case KernelKind::cosine:
      return add_scalar(scale(matmul(normalize_rows(cache.x), transpose(normalize_rows(cache.y))), -1.0), 1.0);
  }
  throw std::logic_error("gram: unhandled kind");
}

void check_samples(const char* op, Var x, Var y) {
  if (x.rows() == 0 || y.rows() == 0) throw std::invalid_argument(std::string(op) + ": empty sample set");
  if (x.cols() != y.cols()) {
    throw std::invalid_argument(std::string(op) + ": dimension mismatch " + shape_string(x.shape()) + " vs " +
                                shape_string(y.shape()));
  }
}

Var combine(Tape& tape, const MultiKernel& mk, const std::function<Var(const KernelSpec&)>& term) {
  Var total;
  for (const auto& [beta, spec] : mk.entries()) {
    Var t = scale(term(spec), beta);
    total = total.valid() ? add(total, t) : t;
  }
  return total.valid() ? total : tape.constant(Tensor::scalar(0.0));
}

Tensor off_diagonal_mask(std::size_t n) {
  Tensor m(Shape{n, n}, 1.0);
  for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 0.0;
  return m;
}

}  // namespace

Var gram(const KernelSpec& spec, Var x, Var y) {
  if (x.cols() != y.cols()) {
    throw std::invalid_argument("gram: dimension mismatch " + shape_string(x.shape()) + " vs " + shape_string(y.shape()));
  }
  DistanceCache c{x, y, {}, {}};
  return gram_cached(spec, c);
}

MultiKernel::MultiKernel(std::vector<WeightedKernel> entries, std::optional<double> total, KernelUse use)
    : entries_(std::move(entries)), total_(0.0), use_(use) {
  if (entries_.empty()) throw std::invalid_argument("multi-kernel: no kernels");
  double s = 0;
  for (const auto& e : entries_) {
    if (!(e.beta >= 0) || !std::isfinite(e.beta)) throw std::invalid_argument("multi-kernel: weights must be >= 0");
    if (use_ == KernelUse::two_sample && e.spec.kind() == KernelKind::cosine) {
      throw std::invalid_argument("multi-kernel: cosine distance is not a positive-definite kernel");
    }
    s += e.beta;
  }
  const double d = total.value_or(s);
  if (!(d > 0)) throw std::invalid_argument("multi-kernel: total weight must be > 0");
  if (std::abs(s - d) > 1e-9 * std::max(1.0, d)) {
    throw std::invalid_argument("multi-kernel: weights sum to " + std::to_string(s) + ", expected " + std::to_string(d));
  }
  total_ = d;
}

MultiKernel MultiKernel::single(const KernelSpec& spec, KernelUse use) {
  return MultiKernel({WeightedKernel{1.0, spec}}, std::nullopt, use);
}

MultiKernel default_gaussian_bank() {
  std::vector<WeightedKernel> entries;
  for (int s = -3; s <= 1; ++s) entries.push_back({1.0, KernelSpec::gaussian(std::ldexp(1.0, s))});
  return MultiKernel(std::move(entries));
}

Var mmd2_biased(Var x, Var y, const MultiKernel& mk) {
  check_samples("mmd2_biased", x, y);
  DistanceCache xx{x, x, {}, {}}, yy{y, y, {}, {}}, xy{x, y, {}, {}};
  return combine(x.tape(), mk, [&](const KernelSpec& spec) {
    Var kxx = mean(gram_cached(spec, xx));
    Var kyy = mean(gram_cached(spec, yy));
    // both orientations of the cross term, so swapping X and Y is exact
    Var gxy = gram_cached(spec, xy);
    return sub(add(kxx, kyy), add(mean(gxy), mean(transpose(gxy))));
  });
}

Var mmd2_unbiased(Var x, Var y, const MultiKernel& mk) {
  check_samples("mmd2_unbiased", x, y);
  const std::size_t n = x.rows();
  if (y.rows() != n) throw std::invalid_argument("mmd2_unbiased: sample sizes differ");
  if (n < 2) throw std::invalid_argument("mmd2_unbiased: need at least 2 samples per set");
  Tape& tape = x.tape();
  Var mask = tape.constant(off_diagonal_mask(n));
  const double norm = 1.0 / (static_cast<double>(n) * static_cast<double>(n - 1));
  DistanceCache xx{x, x, {}, {}}, yy{y, y, {}, {}}, xy{x, y, {}, {}};
  return combine(tape, mk, [&](const KernelSpec& spec) {
    Var kxy = mul(gram_cached(spec, xy), mask);
    Var h = add(add(gram_cached(spec, xx), gram_cached(spec, yy)), scale(add(kxy, transpose(kxy)), -1.0));
    return scale(sum(mul(h, mask)), norm);
  });
}

double mmd2_biased(const Tensor& x, const Tensor& y, const MultiKernel& mk) {
  Tape tape;
  return mmd2_biased(tape.constant(x), tape.constant(y), mk).value().item();
}

double mmd2_unbiased(const Tensor& x, const Tensor& y, const MultiKernel& mk) {
  Tape tape;
  return mmd2_unbiased(tape.constant(x), tape.constant(y), mk).value().item();
}

Var infonce_loss(Var x, Var x_prime, double temperature) {
  if (!(temperature > 0)) throw std::invalid_argument("infonce_loss: temperature must be > 0");
  if (x.shape() != x_prime.shape()) {
    throw std::invalid_argument("infonce_loss: shape mismatch " + shape_string(x.shape()) + " vs " +
                                shape_string(x_prime.shape()));
  }
  const std::size_t n = x.rows();
  if (n < 2) throw std::invalid_argument("infonce_loss: need at least 2 rows");
  Var sim = scale(matmul(normalize_rows(x), transpose(normalize_rows(x_prime))), 1.0 / temperature);
  Tensor eye(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) eye.at(i, i) = 1.0;
  return scale(sum(mul(log_softmax_rows(sim), x.tape().constant(std::move(eye)))), -1.0);
}

PermutationTestResult mmd_permutation_test(const Tensor& x, const Tensor& y, const MultiKernel& mk,
                                           std::size_t permutations, std::uint64_t seed) {
  if (x.rows() == 0 || y.rows() == 0) throw std::invalid_argument("mmd_permutation_test: empty sample set");
  if (x.cols() != y.cols()) throw std::invalid_argument("mmd_permutation_test: dimension mismatch");
  if (mk.use() != KernelUse::two_sample) throw std::invalid_argument("mmd_permutation_test: bank not valid for testing");
  const std::size_t n = x.rows(), m = y.rows(), total = n + m, d = x.cols();
  Tensor pooled(Shape{total, d});
  std::copy(x.values().begin(), x.values().end(), pooled.data());
  std::copy(y.values().begin(), y.values().end(), pooled.data() + x.size());
  Tensor k(Shape{total, total});
  for (const auto& [beta, spec] : mk.entries()) {
    const Tensor g = gram_matrix(spec, pooled, pooled);
    for (std::size_t i = 0; i < k.size(); ++i) k[i] += beta * g[i];
  }

  std::vector<unsigned char> in_x(total, 0);
  auto statistic = [&](const std::vector<std::size_t>& order) {
    std::fill(in_x.begin(), in_x.end(), 0);
    for (std::size_t i = 0; i < n; ++i) in_x[order[i]] = 1;
    double sxx = 0, syy = 0, sxy = 0;
    for (std::size_t i = 0; i < total; ++i) {
      const double* row = k.data() + i * total;
      double ax = 0, ay = 0;
      for (std::size_t j = 0; j < total; ++j) (in_x[j] ? ax : ay) += row[j];
      if (in_x[i]) {
        sxx += ax;
        sxy += ay;
      } else {
        syy += ay;
      }
    }
    const double dn = static_cast<double>(n), dm = static_cast<double>(m);
    return sxx / (dn * dn) + syy / (dm * dm) - 2.0 * sxy / (dn * dm);
  };

  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), std::size_t{0});
  PermutationTestResult result;
  result.statistic = statistic(order);
  result.permutations = permutations;
  std::mt19937_64 rng(seed);
  std::size_t exceed = 0;
  for (std::size_t p = 0; p < permutations; ++p) {
    std::shuffle(order.begin(), order.end(), rng);
    if (statistic(order) >= result.statistic) ++exceed;
  }
  result.p_value = static_cast<double>(1 + exceed) / static_cast<double>(1 + permutations);
  return result;
}

}  // namespace padrec
