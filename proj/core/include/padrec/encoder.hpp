#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "padrec/autograd.hpp"

namespace padrec {

enum class EncoderKind { attention, gru };

std::string_view to_string(EncoderKind kind);
EncoderKind parse_encoder_kind(std::string_view name);

struct EncoderConfig {
  EncoderKind kind = EncoderKind::attention;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t dim = 64;
  std::size_t max_len = 23;
  double dropout = 0.1;

  void validate() const;
};

/// Sequence encoder producing one user representation per sequence.
///
/// Input rows are laid out as batch * L right-padded positions; the
/// representation is read at the last valid position. Rows at or beyond a
/// sequence's length never influence its output.
class SequenceEncoder {
 public:
  SequenceEncoder(std::string prefix, EncoderConfig config, std::mt19937_64& rng);

  /// `embedded` is (lengths.size() * L) x dim for some L <= max_len that
  /// covers every length.
  Var encode(Tape& tape, Var embedded, std::span<const std::size_t> lengths);

  const EncoderConfig& config() const { return config_; }
  std::vector<Parameter*> parameters();
  const std::string& prefix() const { return prefix_; }

 private:
  struct AttentionLayer {
    Parameter ln1_gain, ln1_bias, wq, wk, wv, wo, ln2_gain, ln2_bias, ff1_w, ff1_b, ff2_w, ff2_b;
  };
  struct GruLayer {
    Parameter w_input, b_input, w_hidden, b_hidden;
  };

  Var encode_attention(Tape& tape, Var x, std::span<const std::size_t> lengths, std::size_t L);
  Var encode_gru(Tape& tape, Var x, std::span<const std::size_t> lengths, std::size_t L);

  std::string prefix_;
  EncoderConfig config_;
  Parameter positions_;
  Parameter final_gain_, final_bias_;
  std::vector<AttentionLayer> attention_;
  std::vector<GruLayer> gru_;
};

/// Xavier-uniform initialised [rows x cols] parameter.
Parameter xavier(std::string name, std::size_t rows, std::size_t cols, std::mt19937_64& rng);
/// N(0, stddev^2) initialised parameter.
Parameter normal_init(std::string name, Shape shape, double stddev, std::mt19937_64& rng);

/// Right-padded row indices of the last valid position per sequence.
std::vector<std::size_t> last_positions(std::span<const std::size_t> lengths, std::size_t max_len);
/// (batch * max_len) x 1 tensor with 1 on valid positions, 0 on padding.
Tensor valid_mask(std::span<const std::size_t> lengths, std::size_t max_len);

}  // namespace padrec
