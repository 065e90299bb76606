#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "padrec/autograd.hpp"
#include "padrec/buckets.hpp"
#include "padrec/encoder.hpp"

namespace padrec {

enum class Expert : std::uint8_t { id = 0, align = 1, llm = 2 };
inline constexpr std::array<Expert, 3> kAllExperts{Expert::id, Expert::align, Expert::llm};

std::string_view to_string(Expert e);
Expert parse_expert(std::string_view name);

enum class GatingMode { frequency_aware, global_learned };

std::string_view to_string(GatingMode g);
GatingMode parse_gating(std::string_view name);

struct ModelConfig {
  std::size_t vocab = 0;
  std::size_t collab_dim = 64;
  std::size_t text_dim = 256;
  std::size_t mlp_hidden = 64;
  EncoderConfig encoder;
  std::size_t buckets = 10;
  std::size_t bucket_dim = 8;
  std::size_t gate_hidden = 16;
  double embedding_std = 0.1;

  void validate() const;
};

/// One batch of scoring requests. Each target is scored against the
/// behaviour sequence `owner[i]`; sequences hold at most max_len item ids.
struct Batch {
  std::vector<std::vector<std::size_t>> sequences;
  std::vector<std::size_t> targets;
  std::vector<std::size_t> owner;
  std::vector<double> labels;
};

struct ExpertOutput {
  Var user;        // sequences x d
  Var pooled;      // sequences x d, mean of behaviour item embeddings
  Var target;      // targets x d
  Var logits;      // targets x 1
};

struct ForwardResult {
  Var logits;                               // targets x 1 (fused when several experts run)
  std::optional<Var> gate_weights;          // targets x experts.size()
  std::map<Expert, ExpertOutput> experts;
  std::vector<std::size_t> distinct_items;  // sorted ids appearing in the batch
  Var align_text;                           // mlp_align(SG(text)) over distinct_items
  Var align_collab;                         // collab_align over distinct_items
};

enum class ParamGroup { id, align, llm, gate };

/// Triple-expert model over four item representations: collab_rec,
/// collab_align, mlp_align(text) and mlp_llm(text). The text matrix is a frozen
/// parameter only ever read through a stop-gradient.
///
/// Parameters are owned in place, so the model is neither copyable nor movable.
class PadModel {
 public:
  PadModel(ModelConfig config, std::uint64_t init_seed);
  PadModel(const PadModel&) = delete;
  PadModel& operator=(const PadModel&) = delete;

  const ModelConfig& config() const { return config_; }

  void set_text(Tensor text);
  bool has_text() const { return has_text_; }
  void set_buckets(FrequencyBucketMap buckets);
  const FrequencyBucketMap& buckets() const { return buckets_; }

  /// Runs the listed experts. With a single expert the logits are that
  /// expert's; with several they are fused by the gate.
  ForwardResult forward(Tape& tape, const Batch& batch, std::span<const Expert> experts, GatingMode gating);

  std::vector<Parameter*> group(ParamGroup g);
  std::vector<Parameter*> parameters(std::span<const ParamGroup> groups);
  std::vector<Parameter*> all_parameters();
  Parameter* find(std::string_view name);

  Parameter& collab_rec() { return collab_rec_; }
  Parameter& collab_align() { return collab_align_; }
  Parameter& text() { return text_; }

  // Internals shared with the catalog scorer.
  Var item_table(Tape& tape, Expert e, std::span<const std::size_t> items);
  Var aligned_text(Tape& tape, std::span<const std::size_t> items);
  SequenceEncoder& encoder(Expert e);
  struct GateScorer {
    Parameter w1, b1, w2, b2;
  };
  GateScorer& gate_scorer(Expert e) { return gate_[static_cast<std::size_t>(e)]; }
  Parameter& bucket_embedding() { return bucket_emb_; }
  Parameter& global_gate() { return global_gate_; }

 private:
  struct Mlp {
    Parameter w1, b1, w2, b2;
  };
  Var apply_mlp(Tape& tape, Mlp& mlp, Var x);

  ModelConfig config_;
  bool has_text_ = false;
  FrequencyBucketMap buckets_;

  Parameter collab_rec_, collab_align_, text_;
  Mlp mlp_align_, mlp_llm_;
  Parameter align_proj_w_, align_proj_b_;
  std::unique_ptr<SequenceEncoder> enc_id_, enc_align_, enc_llm_;
  std::array<GateScorer, 3> gate_;
  Parameter bucket_emb_;
  Parameter global_gate_;
};

/// Whole-catalog scorer for evaluation. Item tables and the item half of the
/// gate are computed once; `score` may be called concurrently.
class CatalogScorer {
 public:
  CatalogScorer(PadModel& model, std::vector<Expert> experts, GatingMode gating);

  /// Returns sequences.size() x vocab logits. Empty sequences are an error.
  Tensor score(const std::vector<std::vector<std::size_t>>& sequences) const;
  /// Gate weights (experts.size() values) for one (sequence, item) pair.
  std::vector<double> gate_weights(const std::vector<std::size_t>& sequence, std::size_t item) const;

  const std::vector<Expert>& experts() const { return experts_; }

 private:
  struct ExpertTables {
    Tensor items;      // vocab x d
    Tensor gate_item;  // vocab x h: target and bucket halves of the first gate layer
  };
  struct UserSide {
    std::vector<Tensor> user, gate_user;  // per expert: n x d, n x h
  };
  UserSide user_side(const std::vector<std::vector<std::size_t>>& sequences) const;

  PadModel& model_;
  std::vector<Expert> experts_;
  GatingMode gating_;
  std::vector<ExpertTables> tables_;
};

}  // namespace padrec
