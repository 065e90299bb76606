#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "padrec/autograd.hpp"

namespace padrec {

Var causal_attention(Var q, Var k, Var v, std::size_t max_len, std::span<const std::size_t> lengths,
                     std::size_t heads) {
  const Tensor& Q = q.value();
  const Tensor& K = k.value();
  const Tensor& V = v.value();
  if (Q.shape() != K.shape() || Q.shape() != V.shape()) {
    throw std::invalid_argument("causal_attention: q/k/v shapes differ: " + shape_string(Q.shape()) + ", " +
                                shape_string(K.shape()) + ", " + shape_string(V.shape()));
  }
  const std::size_t batch = lengths.size();
  const std::size_t d = Q.cols();
  if (heads == 0 || d % heads != 0) {
    throw std::invalid_argument("causal_attention: dim " + std::to_string(d) + " not divisible by " +
                                std::to_string(heads) + " heads");
  }
  if (Q.rows() != batch * max_len) {
    throw std::invalid_argument("causal_attention: expected " + std::to_string(batch * max_len) + " rows, got " +
                                std::to_string(Q.rows()));
  }
  for (std::size_t len : lengths) {
    if (len == 0 || len > max_len) throw std::invalid_argument("causal_attention: sequence length out of range");
  }
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::size_t L = max_len;

  // probs[((b * heads + h) * L + t) * L + j], lower triangle only.
  std::vector<double> probs(batch * heads * L * L, 0.0);
  Tensor out(Q.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t len = lengths[b];
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * dh;
      for (std::size_t t = 0; t < len; ++t) {
        double* p = probs.data() + ((b * heads + h) * L + t) * L;
        const double* qt = Q.data() + (b * L + t) * d + off;
        double mx = -INFINITY;
        for (std::size_t j = 0; j <= t; ++j) {
          const double* kj = K.data() + (b * L + j) * d + off;
          double s = 0;
          for (std::size_t c = 0; c < dh; ++c) s += qt[c] * kj[c];
          p[j] = s * inv_sqrt;
          mx = std::max(mx, p[j]);
        }
        double z = 0;
        for (std::size_t j = 0; j <= t; ++j) {
          p[j] = std::exp(p[j] - mx);
          z += p[j];
        }
        double* ot = out.data() + (b * L + t) * d + off;
        for (std::size_t j = 0; j <= t; ++j) {
          p[j] /= z;
          const double* vj = V.data() + (b * L + j) * d + off;
          for (std::size_t c = 0; c < dh; ++c) ot[c] += p[j] * vj[c];
        }
      }
    }
  }

  const std::size_t iq = q.id(), ik = k.id(), iv = v.id();
  std::vector<std::size_t> lens(lengths.begin(), lengths.end());
  return q.tape().record(
      "causal_attention", std::move(out), {iq, ik, iv},
      [iq, ik, iv, L, d, heads, dh, inv_sqrt, lens = std::move(lens), probs = std::move(probs)](Tape& t,
                                                                                                 std::size_t self) {
        const Tensor& G = t.grad(self);
        const Tensor& Q = t.value(iq);
        const Tensor& K = t.value(ik);
        const Tensor& V = t.value(iv);
        Tensor* GQ = t.needs_grad(iq) ? &t.grad_buffer(iq) : nullptr;
        Tensor* GK = t.needs_grad(ik) ? &t.grad_buffer(ik) : nullptr;
        Tensor* GV = t.needs_grad(iv) ? &t.grad_buffer(iv) : nullptr;
        std::vector<double> dp(L);
        for (std::size_t b = 0; b < lens.size(); ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = h * dh;
            for (std::size_t s = 0; s < lens[b]; ++s) {
              const double* p = probs.data() + ((b * heads + h) * L + s) * L;
              const double* gs = G.data() + (b * L + s) * d + off;
              double dot = 0;
              for (std::size_t j = 0; j <= s; ++j) {
                const double* vj = V.data() + (b * L + j) * d + off;
                double acc = 0;
                for (std::size_t c = 0; c < dh; ++c) acc += gs[c] * vj[c];
                dp[j] = acc;
                dot += acc * p[j];
                if (GV) {
                  double* gvj = GV->data() + (b * L + j) * d + off;
                  for (std::size_t c = 0; c < dh; ++c) gvj[c] += p[j] * gs[c];
                }
              }
              const double* qs = Q.data() + (b * L + s) * d + off;
              for (std::size_t j = 0; j <= s; ++j) {
                const double ds = p[j] * (dp[j] - dot) * inv_sqrt;
                if (ds == 0.0) continue;
                const double* kj = K.data() + (b * L + j) * d + off;
                if (GQ) {
                  double* gq = GQ->data() + (b * L + s) * d + off;
                  for (std::size_t c = 0; c < dh; ++c) gq[c] += ds * kj[c];
                }
                if (GK) {
                  double* gk = GK->data() + (b * L + j) * d + off;
                  for (std::size_t c = 0; c < dh; ++c) gk[c] += ds * qs[c];
                }
              }
            }
          }
        }
      });
}

}  // namespace padrec
