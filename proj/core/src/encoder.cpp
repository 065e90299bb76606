#include "padrec/encoder.hpp"

#include <cmath>
#include <stdexcept>

namespace padrec {

std::string_view to_string(EncoderKind kind) { return kind == EncoderKind::attention ? "attention" : "gru"; }

EncoderKind parse_encoder_kind(std::string_view name) {
  if (name == "attention") return EncoderKind::attention;
  if (name == "gru") return EncoderKind::gru;
  throw std::invalid_argument("unknown encoder '" + std::string(name) + "'");
}

void EncoderConfig::validate() const {
  if (dim == 0) throw std::invalid_argument("encoder: dim must be >= 1");
  if (max_len == 0) throw std::invalid_argument("encoder: max_len must be >= 1");
  if (layers == 0) throw std::invalid_argument("encoder: layers must be >= 1");
  if (kind == EncoderKind::attention && (heads == 0 || dim % heads != 0)) {
    throw std::invalid_argument("encoder: dim " + std::to_string(dim) + " not divisible by " + std::to_string(heads) +
                                " heads");
  }
  if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("encoder: dropout must be in [0, 1)");
}

Parameter xavier(std::string name, std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-a, a);
  Tensor t(Shape{rows, cols});
  for (double& v : t.values()) v = dist(rng);
  return Parameter(std::move(name), std::move(t));
}

Parameter normal_init(std::string name, Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = dist(rng);
  return Parameter(std::move(name), std::move(t));
}

namespace {

Parameter constant_param(std::string name, Shape shape, double v) { return Parameter(std::move(name), Tensor(std::move(shape), v)); }

Var affine_norm(Tape& tape, Var x, Parameter& gain, Parameter& bias) {
  return add_row(mul_row(layernorm_rows(x), tape.param(gain)), tape.param(bias));
}

}  // namespace

std::vector<std::size_t> last_positions(std::span<const std::size_t> lengths, std::size_t max_len) {
  std::vector<std::size_t> idx(lengths.size());
  for (std::size_t b = 0; b < lengths.size(); ++b) {
    if (lengths[b] == 0 || lengths[b] > max_len) {
      throw std::invalid_argument("encoder: sequence length " + std::to_string(lengths[b]) + " outside [1, " +
                                  std::to_string(max_len) + "]");
    }
    idx[b] = b * max_len + lengths[b] - 1;
  }
  return idx;
}

Tensor valid_mask(std::span<const std::size_t> lengths, std::size_t max_len) {
  Tensor m(Shape{lengths.size() * max_len, 1});
  for (std::size_t b = 0; b < lengths.size(); ++b)
    for (std::size_t t = 0; t < lengths[b] && t < max_len; ++t) m[b * max_len + t] = 1.0;
  return m;
}

SequenceEncoder::SequenceEncoder(std::string prefix, EncoderConfig config, std::mt19937_64& rng)
    : prefix_(std::move(prefix)), config_(config) {
  config_.validate();
  const std::size_t d = config_.dim;
  const std::string p = prefix_ + ".";
  if (config_.kind == EncoderKind::attention) {
    positions_ = normal_init(p + "pos", Shape{config_.max_len, d}, 0.02, rng);
    for (std::size_t l = 0; l < config_.layers; ++l) {
      const std::string lp = p + "l" + std::to_string(l) + ".";
      AttentionLayer layer{
          constant_param(lp + "ln1_gain", Shape{1, d}, 1.0), constant_param(lp + "ln1_bias", Shape{1, d}, 0.0),
          xavier(lp + "wq", d, d, rng),                      xavier(lp + "wk", d, d, rng),
          xavier(lp + "wv", d, d, rng),                      xavier(lp + "wo", d, d, rng),
          constant_param(lp + "ln2_gain", Shape{1, d}, 1.0), constant_param(lp + "ln2_bias", Shape{1, d}, 0.0),
          xavier(lp + "ff1_w", d, d, rng),                   constant_param(lp + "ff1_b", Shape{1, d}, 0.0),
          xavier(lp + "ff2_w", d, d, rng),                   constant_param(lp + "ff2_b", Shape{1, d}, 0.0)};
      attention_.push_back(std::move(layer));
    }
    final_gain_ = constant_param(p + "final_gain", Shape{1, d}, 1.0);
    final_bias_ = constant_param(p + "final_bias", Shape{1, d}, 0.0);
  } else {
    for (std::size_t l = 0; l < config_.layers; ++l) {
      const std::string lp = p + "l" + std::to_string(l) + ".";
      GruLayer layer{xavier(lp + "w_input", d, 3 * d, rng), constant_param(lp + "b_input", Shape{1, 3 * d}, 0.0),
                     xavier(lp + "w_hidden", d, 3 * d, rng), constant_param(lp + "b_hidden", Shape{1, 3 * d}, 0.0)};
      gru_.push_back(std::move(layer));
    }
  }
}

std::vector<Parameter*> SequenceEncoder::parameters() {
  std::vector<Parameter*> out;
  if (config_.kind == EncoderKind::attention) {
    out.push_back(&positions_);
    for (auto& l : attention_) {
      for (Parameter* p : {&l.ln1_gain, &l.ln1_bias, &l.wq, &l.wk, &l.wv, &l.wo, &l.ln2_gain, &l.ln2_bias, &l.ff1_w,
                           &l.ff1_b, &l.ff2_w, &l.ff2_b}) {
        out.push_back(p);
      }
    }
    out.push_back(&final_gain_);
    out.push_back(&final_bias_);
  } else {
    for (auto& l : gru_) {
      for (Parameter* p : {&l.w_input, &l.b_input, &l.w_hidden, &l.b_hidden}) out.push_back(p);
    }
  }
  return out;
}

Var SequenceEncoder::encode(Tape& tape, Var embedded, std::span<const std::size_t> lengths) {
  if (lengths.empty()) throw std::invalid_argument("encode: empty batch");
  // padding may stop at any stride up to max_len
  const std::size_t L = embedded.rows() / lengths.size();
  if (L == 0 || L > config_.max_len || embedded.rows() != lengths.size() * L || embedded.cols() != config_.dim) {
    throw std::invalid_argument("encode: expected " + std::to_string(lengths.size()) + " blocks of at most " +
                                std::to_string(config_.max_len) + " rows x " + std::to_string(config_.dim) +
                                ", got " + shape_string(embedded.shape()));
  }
  return config_.kind == EncoderKind::attention ? encode_attention(tape, embedded, lengths, L)
                                                : encode_gru(tape, embedded, lengths, L);
}

Var SequenceEncoder::encode_attention(Tape& tape, Var x, std::span<const std::size_t> lengths, std::size_t L) {
  const std::vector<std::size_t> last = last_positions(lengths, L);
  std::vector<std::size_t> pos_idx(lengths.size() * L);
  for (std::size_t i = 0; i < pos_idx.size(); ++i) pos_idx[i] = i % L;
  x = add(x, gather_rows(tape.param(positions_), pos_idx));
  x = dropout(x, config_.dropout);
  for (auto& layer : attention_) {
    Var h = affine_norm(tape, x, layer.ln1_gain, layer.ln1_bias);
    Var q = matmul(h, tape.param(layer.wq));
    Var k = matmul(h, tape.param(layer.wk));
    Var v = matmul(h, tape.param(layer.wv));
    Var a = matmul(causal_attention(q, k, v, L, lengths, config_.heads), tape.param(layer.wo));
    x = add(x, dropout(a, config_.dropout));
    Var h2 = affine_norm(tape, x, layer.ln2_gain, layer.ln2_bias);
    Var f = relu(add_row(matmul(h2, tape.param(layer.ff1_w)), tape.param(layer.ff1_b)));
    f = add_row(matmul(f, tape.param(layer.ff2_w)), tape.param(layer.ff2_b));
    x = add(x, dropout(f, config_.dropout));
  }
  x = affine_norm(tape, gather_rows(x, last), final_gain_, final_bias_);
  return x;
}

Var SequenceEncoder::encode_gru(Tape& tape, Var x, std::span<const std::size_t> lengths, std::size_t L) {
  const std::size_t n = lengths.size();
  const std::size_t d = config_.dim;
  std::size_t steps = 0;
  for (std::size_t len : lengths) {
    if (len == 0 || len > L) throw std::invalid_argument("encode: sequence length out of range");
    steps = std::max(steps, len);
  }
  x = dropout(x, config_.dropout);
  Var h;
  for (std::size_t li = 0; li < gru_.size(); ++li) {
    GruLayer& layer = gru_[li];
    Var xw = add_row(matmul(x, tape.param(layer.w_input)), tape.param(layer.b_input));
    Var w_hidden = tape.param(layer.w_hidden);
    Var b_hidden = tape.param(layer.b_hidden);
    h = tape.constant(Tensor(Shape{n, d}));
    std::vector<Var> outputs;
    for (std::size_t t = 0; t < steps; ++t) {
      std::vector<std::size_t> rows(n);
      Tensor mask(Shape{n, 1});
      for (std::size_t b = 0; b < n; ++b) {
        rows[b] = b * L + t;
        mask[b] = t < lengths[b] ? 1.0 : 0.0;
      }
      Var xt = gather_rows(xw, rows);
      Var hw = add_row(matmul(h, w_hidden), b_hidden);
      Var r = sigmoid(add(slice_cols(xt, 0, d), slice_cols(hw, 0, d)));
      Var z = sigmoid(add(slice_cols(xt, d, 2 * d), slice_cols(hw, d, 2 * d)));
      Var cand = tanh(add(slice_cols(xt, 2 * d, 3 * d), mul(r, slice_cols(hw, 2 * d, 3 * d))));
      Var h_new = add(cand, mul(z, sub(h, cand)));
      h = add(h, mul_col(sub(h_new, h), tape.constant(std::move(mask))));
      if (li + 1 < gru_.size()) outputs.push_back(h);
    }
    if (li + 1 < gru_.size()) {
      // Re-layout step-major outputs (t * n + b) as right-padded rows (b * L + t).
      for (std::size_t t = steps; t < L; ++t) outputs.push_back(tape.constant(Tensor(Shape{n, d})));
      Var stacked = concat_rows(outputs);
      std::vector<std::size_t> perm(n * L);
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t t = 0; t < L; ++t) perm[b * L + t] = t * n + b;
      x = dropout(gather_rows(stacked, perm), config_.dropout);
    }
  }
  return h;
}

}  // namespace padrec
