#include "padrec/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "linalg.hpp"

namespace padrec {

Tape& Var::tape() const {
  if (!tape_) throw std::logic_error("var: not bound to a tape");
  return *tape_;
}
const Tensor& Var::value() const { return tape().value(id_); }
const Tensor& Var::grad() const { return tape().grad(id_); }
bool Var::requires_grad() const { return tape().needs_grad(id_); }

Var Tape::constant(Tensor value) {
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::param(Parameter& p) {
  Node n;
  n.op = "param:" + p.name;
  n.value = p.value;
  n.param = &p;
  n.needs_grad = true;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::record(std::string op, Tensor value, std::vector<std::size_t> inputs, BackwardFn fn) {
  Node n;
  n.op = std::move(op);
  n.value = std::move(value);
  n.needs_grad = std::any_of(inputs.begin(), inputs.end(), [this](std::size_t i) { return nodes_.at(i).needs_grad; });
  if (n.needs_grad) {
    n.inputs = std::move(inputs);
    n.backward = std::move(fn);
  }
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

const Tensor& Tape::grad(std::size_t id) const {
  static const Tensor kEmpty;
  const Node& n = nodes_.at(id);
  return n.grad.empty() && !n.value.empty() ? kEmpty : n.grad;
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_.at(id);
  if (n.grad.shape() != n.value.shape() || n.grad.size() != n.value.size()) n.grad = Tensor::zeros_like(n.value);
  return n.grad;
}

void Tape::backward(Var loss) {
  if (!loss.valid() || &loss.tape() != this || loss.id() >= nodes_.size()) {
    throw std::invalid_argument("backward: loss is not recorded on this tape");
  }
  const Tensor& lv = nodes_[loss.id()].value;
  if (lv.size() != 1) throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_string(lv.shape()));
  grad_buffer(loss.id())[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, i);
    if (n.param) {
      Parameter& p = *n.param;
      if (p.grad.shape() != p.value.shape() || p.grad.size() != p.value.size()) p.grad = Tensor::zeros_like(p.value);
      linalg::axpy(1.0, n.grad.values(), p.grad.values());
    }
  }
}

void Tape::clear() { nodes_.clear(); }

namespace {

[[noreturn]] void shape_error(const std::string& op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(op + ": incompatible shapes " + shape_string(a) + " and " + shape_string(b));
}

void require_same(const char* op, Var a, Var b) {
  if (a.value().shape() != b.value().shape()) shape_error(op, a.shape(), b.shape());
  if (&a.tape() != &b.tape()) throw std::invalid_argument(std::string(op) + ": operands on different tapes");
}

Shape mat_shape(std::size_t r, std::size_t c) { return Shape{r, c}; }

template <typename F>
Var unary(const char* op, Var a, F f, std::function<double(double x, double y)> dfdx) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const std::size_t ia = a.id();
  return a.tape().record(op, std::move(y), {ia}, [ia, dfdx](Tape& t, std::size_t self) {
    const Tensor& x = t.value(ia);
    const Tensor& y = t.value(self);
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += g[i] * dfdx(x[i], y[i]);
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.cols() != B.rows()) shape_error("matmul", A.shape(), B.shape());
  const std::size_t n = A.rows(), k = A.cols(), m = B.cols();
  Tensor C(mat_shape(n, m));
  linalg::gemm_nn(n, k, m, A.data(), B.data(), C.data());
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("matmul", std::move(C), {ia, ib}, [ia, ib, n, k, m](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.needs_grad(ia)) linalg::gemm_nt(n, m, k, g.data(), t.value(ib).data(), t.grad_buffer(ia).data());
    if (t.needs_grad(ib)) linalg::gemm_tn(n, k, m, t.value(ia).data(), g.data(), t.grad_buffer(ib).data());
  });
}

Var transpose(Var a) {
  const Tensor& A = a.value();
  const std::size_t n = A.rows(), m = A.cols();
  Tensor T(mat_shape(m, n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) T.at(j, i) = A.at(i, j);
  const std::size_t ia = a.id();
  return a.tape().record("transpose", std::move(T), {ia}, [ia, n, m](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) ga[i * m + j] += g[j * n + i];
  });
}

Var add(Var a, Var b) {
  require_same("add", a, b);
  Tensor y = a.value();
  linalg::axpy(1.0, b.value().values(), y.values());
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("add", std::move(y), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.needs_grad(ia)) linalg::axpy(1.0, g.values(), t.grad_buffer(ia).values());
    if (t.needs_grad(ib)) linalg::axpy(1.0, g.values(), t.grad_buffer(ib).values());
  });
}

Var sub(Var a, Var b) {
  require_same("sub", a, b);
  Tensor y = a.value();
  linalg::axpy(-1.0, b.value().values(), y.values());
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("sub", std::move(y), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.needs_grad(ia)) linalg::axpy(1.0, g.values(), t.grad_buffer(ia).values());
    if (t.needs_grad(ib)) linalg::axpy(-1.0, g.values(), t.grad_buffer(ib).values());
  });
}

Var mul(Var a, Var b) {
  require_same("mul", a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  Tensor y(A.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = A[i] * B[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("mul", std::move(y), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& A = t.value(ia);
    const Tensor& B = t.value(ib);
    if (t.needs_grad(ia)) {
      Tensor& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * B[i];
    }
    if (t.needs_grad(ib)) {
      Tensor& gb = t.grad_buffer(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * A[i];
    }
  });
}

Var add_row(Var a, Var row) {
  const Tensor& A = a.value();
  const Tensor& R = row.value();
  if (R.rows() != 1 || R.cols() != A.cols()) shape_error("add_row", A.shape(), R.shape());
  const std::size_t n = A.rows(), m = A.cols();
  Tensor y = A;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) y[i * m + j] += R[j];
  const std::size_t ia = a.id(), ir = row.id();
  return a.tape().record("add_row", std::move(y), {ia, ir}, [ia, ir, n, m](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.needs_grad(ia)) linalg::axpy(1.0, g.values(), t.grad_buffer(ia).values());
    if (t.needs_grad(ir)) {
      Tensor& gr = t.grad_buffer(ir);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) gr[j] += g[i * m + j];
    }
  });
}

Var mul_row(Var a, Var row) {
  const Tensor& A = a.value();
  const Tensor& R = row.value();
  if (R.rows() != 1 || R.cols() != A.cols()) shape_error("mul_row", A.shape(), R.shape());
  const std::size_t n = A.rows(), m = A.cols();
  Tensor y = A;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) y[i * m + j] *= R[j];
  const std::size_t ia = a.id(), ir = row.id();
  return a.tape().record("mul_row", std::move(y), {ia, ir}, [ia, ir, n, m](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& A = t.value(ia);
    const Tensor& R = t.value(ir);
    if (t.needs_grad(ia)) {
      Tensor& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) ga[i * m + j] += g[i * m + j] * R[j];
    }
    if (t.needs_grad(ir)) {
      Tensor& gr = t.grad_buffer(ir);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) gr[j] += g[i * m + j] * A[i * m + j];
    }
  });
}

Var mul_col(Var a, Var col) {
  const Tensor& A = a.value();
  const Tensor& C = col.value();
  if (C.cols() != 1 || C.rows() != A.rows()) shape_error("mul_col", A.shape(), C.shape());
  const std::size_t n = A.rows(), m = A.cols();
  Tensor y = A;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) y[i * m + j] *= C[i];
  const std::size_t ia = a.id(), ic = col.id();
  return a.tape().record("mul_col", std::move(y), {ia, ic}, [ia, ic, n, m](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& A = t.value(ia);
    const Tensor& C = t.value(ic);
    if (t.needs_grad(ia)) {
      Tensor& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) ga[i * m + j] += g[i * m + j] * C[i];
    }
    if (t.needs_grad(ic)) {
      Tensor& gc = t.grad_buffer(ic);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) gc[i] += g[i * m + j] * A[i * m + j];
    }
  });
}

Var scale(Var a, double s) {
  Tensor y = a.value();
  for (double& v : y.values()) v *= s;
  const std::size_t ia = a.id();
  return a.tape().record("scale", std::move(y), {ia}, [ia, s](Tape& t, std::size_t self) {
    linalg::axpy(s, t.grad(self).values(), t.grad_buffer(ia).values());
  });
}

Var add_scalar(Var a, double s) {
  Tensor y = a.value();
  for (double& v : y.values()) v += s;
  const std::size_t ia = a.id();
  return a.tape().record("add_scalar", std::move(y), {ia}, [ia](Tape& t, std::size_t self) {
    linalg::axpy(1.0, t.grad(self).values(), t.grad_buffer(ia).values());
  });
}

Var exp(Var a) {
  return unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  for (double v : a.value().values()) {
    if (!(v > 0.0)) throw std::domain_error("log: argument " + std::to_string(v) + " is not strictly positive");
  }
  return unary("log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var sigmoid(Var a) {
  return unary(
      "sigmoid", a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
  return unary("tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var relu(Var a) {
  return unary("relu", a, [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var softmax_rows(Var a) {
  const Tensor& x = a.value();
  const std::size_t n = x.rows(), m = x.cols();
  if (m == 0) throw std::invalid_argument("softmax_rows: empty rows");
  Tensor y(x.shape());
  for (std::size_t i = 0; i < n; ++i) linalg::softmax(x.row(i), y.row(i));
  const std::size_t ia = a.id();
  return a.tape().record("softmax_rows", std::move(y), {ia}, [ia, n, m](Tape& t, std::size_t self) {
    const Tensor& y = t.value(self);
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0;
      for (std::size_t j = 0; j < m; ++j) dot += g[i * m + j] * y[i * m + j];
      for (std::size_t j = 0; j < m; ++j) ga[i * m + j] += y[i * m + j] * (g[i * m + j] - dot);
    }
  });
}

Var log_softmax_rows(Var a) {
  const Tensor& x = a.value();
  const std::size_t n = x.rows(), m = x.cols();
  if (m == 0) throw std::invalid_argument("log_softmax_rows: empty rows");
  Tensor y(x.shape());
  for (std::size_t i = 0; i < n; ++i) {
    auto r = x.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double s = 0;
    for (double v : r) s += std::exp(v - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < m; ++j) y[i * m + j] = r[j] - lse;
  }
  const std::size_t ia = a.id();
  return a.tape().record("log_softmax_rows", std::move(y), {ia}, [ia, n, m](Tape& t, std::size_t self) {
    const Tensor& y = t.value(self);
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < n; ++i) {
      double gs = 0;
      for (std::size_t j = 0; j < m; ++j) gs += g[i * m + j];
      for (std::size_t j = 0; j < m; ++j) ga[i * m + j] += g[i * m + j] - std::exp(y[i * m + j]) * gs;
    }
  });
}

Var layernorm_rows(Var a, double eps) {
  const Tensor& x = a.value();
  const std::size_t n = x.rows(), m = x.cols();
  if (m == 0) throw std::invalid_argument("layernorm_rows: empty rows");
  Tensor y(x.shape());
  std::vector<double> inv_std(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = x.row(i);
    double mu = 0;
    for (double v : r) mu += v;
    mu /= static_cast<double>(m);
    double var = 0;
    for (double v : r) var += (v - mu) * (v - mu);
    var /= static_cast<double>(m);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < m; ++j) y[i * m + j] = (r[j] - mu) * inv_std[i];
  }
  const std::size_t ia = a.id();
  return a.tape().record("layernorm_rows", std::move(y), {ia},
                         [ia, n, m, inv_std = std::move(inv_std)](Tape& t, std::size_t self) {
                           const Tensor& y = t.value(self);
                           const Tensor& g = t.grad(self);
                           Tensor& ga = t.grad_buffer(ia);
                           const double dm = static_cast<double>(m);
                           for (std::size_t i = 0; i < n; ++i) {
                             double gmean = 0, gy = 0;
                             for (std::size_t j = 0; j < m; ++j) {
                               gmean += g[i * m + j];
                               gy += g[i * m + j] * y[i * m + j];
                             }
                             gmean /= dm;
                             gy /= dm;
                             for (std::size_t j = 0; j < m; ++j)
                               ga[i * m + j] += inv_std[i] * (g[i * m + j] - gmean - y[i * m + j] * gy);
                           }
                         });
}

Var normalize_rows(Var a) {
  const Tensor& x = a.value();
  const std::size_t n = x.rows(), m = x.cols();
  Tensor y(x.shape());
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (double v : x.row(i)) s += v * v;
    if (!(s > 0.0)) throw std::domain_error("normalize_rows: row " + std::to_string(i) + " has zero norm");
    norms[i] = std::sqrt(s);
    for (std::size_t j = 0; j < m; ++j) y[i * m + j] = x[i * m + j] / norms[i];
  }
  const std::size_t ia = a.id();
  return a.tape().record("normalize_rows", std::move(y), {ia},
                         [ia, n, m, norms = std::move(norms)](Tape& t, std::size_t self) {
                           const Tensor& y = t.value(self);
                           const Tensor& g = t.grad(self);
                           Tensor& ga = t.grad_buffer(ia);
                           for (std::size_t i = 0; i < n; ++i) {
                             double dot = 0;
                             for (std::size_t j = 0; j < m; ++j) dot += g[i * m + j] * y[i * m + j];
                             for (std::size_t j = 0; j < m; ++j)
                               ga[i * m + j] += (g[i * m + j] - y[i * m + j] * dot) / norms[i];
                           }
                         });
}

Var gather_rows(Var a, std::span<const std::size_t> indices) {
  const Tensor& x = a.value();
  const std::size_t n = x.rows(), m = x.cols();
  Tensor y(mat_shape(indices.size(), m));
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= n) {
      throw std::out_of_range("gather_rows: index " + std::to_string(indices[i]) + " out of range for " +
                              std::to_string(n) + " rows");
    }
    std::copy_n(x.data() + indices[i] * m, m, y.data() + i * m);
  }
  const std::size_t ia = a.id();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return a.tape().record("gather_rows", std::move(y), {ia}, [ia, m, idx = std::move(idx)](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const double* src = g.data() + i * m;
      double* dst = ga.data() + idx[i] * m;
      for (std::size_t j = 0; j < m; ++j) dst[j] += src[j];
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const std::size_t n = parts[0].rows();
  std::vector<std::size_t> widths, ids;
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.rows() != n) shape_error("concat_cols", parts[0].shape(), p.shape());
    widths.push_back(p.cols());
    ids.push_back(p.id());
    total += p.cols();
  }
  Tensor y(mat_shape(n, total));
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& x = parts[k].value();
    for (std::size_t i = 0; i < n; ++i) std::copy_n(x.data() + i * widths[k], widths[k], y.data() + i * total + off);
    off += widths[k];
  }
  std::vector<std::size_t> inputs = ids;
  return parts[0].tape().record("concat_cols", std::move(y), std::move(inputs),
                                [ids, widths, n, total](Tape& t, std::size_t self) {
                                  const Tensor& g = t.grad(self);
                                  std::size_t off = 0;
                                  for (std::size_t k = 0; k < ids.size(); ++k) {
                                    if (t.needs_grad(ids[k])) {
                                      Tensor& gk = t.grad_buffer(ids[k]);
                                      for (std::size_t i = 0; i < n; ++i)
                                        for (std::size_t j = 0; j < widths[k]; ++j)
                                          gk[i * widths[k] + j] += g[i * total + off + j];
                                    }
                                    off += widths[k];
                                  }
                                });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const std::size_t m = parts[0].cols();
  std::vector<std::size_t> ids, sizes;
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.cols() != m) shape_error("concat_rows", parts[0].shape(), p.shape());
    ids.push_back(p.id());
    sizes.push_back(p.value().size());
    total += p.rows();
  }
  Tensor y(mat_shape(total, m));
  std::size_t off = 0;
  for (const Var& p : parts) {
    std::copy(p.value().values().begin(), p.value().values().end(), y.data() + off);
    off += p.value().size();
  }
  std::vector<std::size_t> inputs = ids;
  return parts[0].tape().record("concat_rows", std::move(y), std::move(inputs), [ids, sizes](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (t.needs_grad(ids[k])) {
        Tensor& gk = t.grad_buffer(ids[k]);
        for (std::size_t i = 0; i < sizes[k]; ++i) gk[i] += g[off + i];
      }
      off += sizes[k];
    }
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Tensor& x = a.value();
  const std::size_t n = x.rows(), m = x.cols();
  if (begin > end || end > m) {
    throw std::invalid_argument("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                                ") invalid for shape " + shape_string(x.shape()));
  }
  const std::size_t w = end - begin;
  Tensor y(mat_shape(n, w));
  for (std::size_t i = 0; i < n; ++i) std::copy_n(x.data() + i * m + begin, w, y.data() + i * w);
  const std::size_t ia = a.id();
  return a.tape().record("slice_cols", std::move(y), {ia}, [ia, n, m, begin, w](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < w; ++j) ga[i * m + begin + j] += g[i * w + j];
  });
}

Var sum(Var a) {
  double s = 0;
  for (double v : a.value().values()) s += v;
  const std::size_t ia = a.id();
  return a.tape().record("sum", Tensor::scalar(s), {ia}, [ia](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    for (double& v : t.grad_buffer(ia).values()) v += g;
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw std::invalid_argument("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var sum_rows(Var a) {
  const Tensor& x = a.value();
  const std::size_t n = x.rows(), m = x.cols();
  Tensor y(mat_shape(1, m));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) y[j] += x[i * m + j];
  const std::size_t ia = a.id();
  return a.tape().record("sum_rows", std::move(y), {ia}, [ia, n, m](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) ga[i * m + j] += g[j];
  });
}

Var sum_cols(Var a) {
  const Tensor& x = a.value();
  const std::size_t n = x.rows(), m = x.cols();
  Tensor y(mat_shape(n, 1));
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < m; ++j) s += x[i * m + j];
    y[i] = s;
  }
  const std::size_t ia = a.id();
  return a.tape().record("sum_cols", std::move(y), {ia}, [ia, n, m](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) ga[i * m + j] += g[i];
  });
}

Var mean_cols(Var a) {
  const std::size_t m = a.cols();
  if (m == 0) throw std::invalid_argument("mean_cols: empty rows");
  return scale(sum_cols(a), 1.0 / static_cast<double>(m));
}

Var segment_mean_rows(Var a, std::span<const std::size_t> lengths, std::size_t max_len) {
  const Tensor& x = a.value();
  const std::size_t m = x.cols();
  if (x.rows() != lengths.size() * max_len) {
    throw std::invalid_argument("segment_mean_rows: " + std::to_string(x.rows()) + " rows for " +
                                std::to_string(lengths.size()) + " segments of " + std::to_string(max_len));
  }
  Tensor y(mat_shape(lengths.size(), m));
  for (std::size_t b = 0; b < lengths.size(); ++b) {
    if (lengths[b] == 0 || lengths[b] > max_len) throw std::invalid_argument("segment_mean_rows: bad segment length");
    for (std::size_t t = 0; t < lengths[b]; ++t)
      for (std::size_t j = 0; j < m; ++j) y[b * m + j] += x[(b * max_len + t) * m + j];
    for (std::size_t j = 0; j < m; ++j) y[b * m + j] /= static_cast<double>(lengths[b]);
  }
  const std::size_t ia = a.id();
  std::vector<std::size_t> lens(lengths.begin(), lengths.end());
  return a.tape().record("segment_mean_rows", std::move(y), {ia},
                         [ia, m, max_len, lens = std::move(lens)](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad(self);
                           Tensor& ga = t.grad_buffer(ia);
                           for (std::size_t b = 0; b < lens.size(); ++b) {
                             const double inv = 1.0 / static_cast<double>(lens[b]);
                             for (std::size_t r = 0; r < lens[b]; ++r)
                               for (std::size_t j = 0; j < m; ++j) ga[(b * max_len + r) * m + j] += g[b * m + j] * inv;
                           }
                         });
}

Var squared_l2_norm(Var a) {
  double s = 0;
  for (double v : a.value().values()) s += v * v;
  const std::size_t ia = a.id();
  return a.tape().record("squared_l2_norm", Tensor::scalar(s), {ia}, [ia](Tape& t, std::size_t self) {
    linalg::axpy(2.0 * t.grad(self)[0], t.value(ia).values(), t.grad_buffer(ia).values());
  });
}

Var l1_norm(Var a) {
  double s = 0;
  for (double v : a.value().values()) s += std::abs(v);
  const std::size_t ia = a.id();
  return a.tape().record("l1_norm", Tensor::scalar(s), {ia}, [ia](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    const Tensor& x = t.value(ia);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += g * static_cast<double>((x[i] > 0) - (x[i] < 0));
  });
}

Var dropout(Var a, double rate) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0, 1)");
  Tape& tape = a.tape();
  if (!tape.training() || rate == 0.0) return a;
  const double keep = 1.0 - rate;
  std::bernoulli_distribution coin(keep);
  const Tensor& x = a.value();
  Tensor mask(x.shape());
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mask[i] = coin(tape.rng()) ? 1.0 / keep : 0.0;
    y[i] = x[i] * mask[i];
  }
  const std::size_t ia = a.id();
  return tape.record("dropout", std::move(y), {ia}, [ia, mask = std::move(mask)](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mask[i];
  });
}

Var stop_gradient(Var a) { return a.tape().constant(a.value()); }

Var bce_with_logits(Var logits, const Tensor& labels) {
  const Tensor& z = logits.value();
  if (z.shape() != labels.shape()) shape_error("bce_with_logits", z.shape(), labels.shape());
  if (z.size() == 0) throw std::invalid_argument("bce_with_logits: empty batch");
  double s = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double y = labels[i];
    if (y != 0.0 && y != 1.0) throw std::domain_error("bce_with_logits: labels must be 0 or 1");
    s += std::max(z[i], 0.0) - z[i] * y + std::log1p(std::exp(-std::abs(z[i])));
  }
  const double n = static_cast<double>(z.size());
  const std::size_t ia = logits.id();
  return logits.tape().record("bce_with_logits", Tensor::scalar(s / n), {ia}, [ia, labels, n](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    const Tensor& z = t.value(ia);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double p = z[i] >= 0 ? 1.0 / (1.0 + std::exp(-z[i])) : std::exp(z[i]) / (1.0 + std::exp(z[i]));
      ga[i] += g * (p - labels[i]) / n;
    }
  });
}

namespace {

template <typename Dist, typename DDist>
Var pairwise(const char* op, Var x, Var y, Dist dist, DDist ddist) {
  const Tensor& X = x.value();
  const Tensor& Y = y.value();
  if (X.cols() != Y.cols()) shape_error(op, X.shape(), Y.shape());
  const std::size_t n = X.rows(), m = Y.rows(), d = X.cols();
  Tensor D(mat_shape(n, m));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < d; ++k) s += dist(X[i * d + k] - Y[j * d + k]);
      D[i * m + j] = s;
    }
  const std::size_t ix = x.id(), iy = y.id();
  return x.tape().record(op, std::move(D), {ix, iy}, [ix, iy, n, m, d, ddist](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& X = t.value(ix);
    const Tensor& Y = t.value(iy);
    const bool gx = t.needs_grad(ix), gy = t.needs_grad(iy);
    Tensor* GX = gx ? &t.grad_buffer(ix) : nullptr;
    Tensor* GY = gy ? &t.grad_buffer(iy) : nullptr;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        const double gij = g[i * m + j];
        if (gij == 0.0) continue;
        for (std::size_t k = 0; k < d; ++k) {
          const double dd = gij * ddist(X[i * d + k] - Y[j * d + k]);
          if (gx) (*GX)[i * d + k] += dd;
          if (gy) (*GY)[j * d + k] -= dd;
        }
      }
  });
}

}  // namespace

Var pairwise_sq_dist(Var x, Var y) {
  return pairwise(
      "pairwise_sq_dist", x, y, [](double u) { return u * u; }, [](double u) { return 2.0 * u; });
}

Var pairwise_l1_dist(Var x, Var y) {
  return pairwise(
      "pairwise_l1_dist", x, y, [](double u) { return std::abs(u); },
      [](double u) { return static_cast<double>((u > 0) - (u < 0)); });
}

}  // namespace padrec
