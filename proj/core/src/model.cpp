#include "padrec/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace padrec {

std::string_view to_string(Expert e) {
  switch (e) {
    case Expert::id: return "id";
    case Expert::align: return "align";
    case Expert::llm: return "llm";
  }
  return "unknown";
}

Expert parse_expert(std::string_view name) {
  if (name == "id") return Expert::id;
  if (name == "align") return Expert::align;
  if (name == "llm") return Expert::llm;
  throw std::invalid_argument("unknown expert '" + std::string(name) + "'");
}

std::string_view to_string(GatingMode g) {
  return g == GatingMode::frequency_aware ? "frequency_aware" : "global_learned";
}

GatingMode parse_gating(std::string_view name) {
  if (name == "frequency_aware") return GatingMode::frequency_aware;
  if (name == "global_learned") return GatingMode::global_learned;
  throw std::invalid_argument("unknown gating mode '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
  if (vocab < 2) throw std::invalid_argument("model: vocabulary needs at least 2 items");
  if (collab_dim == 0 || text_dim == 0 || mlp_hidden == 0) throw std::invalid_argument("model: dimensions must be >= 1");
  if (encoder.dim != collab_dim) throw std::invalid_argument("model: encoder dim must equal collab_dim");
  encoder.validate();
  if (buckets == 0 || bucket_dim == 0 || gate_hidden == 0) throw std::invalid_argument("model: gate sizes must be >= 1");
}

namespace {

Parameter zeros(std::string name, Shape shape) { return Parameter(std::move(name), Tensor(std::move(shape))); }

std::vector<Expert> canonical(std::span<const Expert> experts) {
  std::vector<Expert> out(experts.begin(), experts.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  if (out.empty()) throw std::invalid_argument("model: no experts selected");
  return out;
}

}  // namespace

PadModel::PadModel(ModelConfig config, std::uint64_t init_seed) : config_(std::move(config)) {
  config_.encoder.dim = config_.collab_dim;
  config_.validate();
  std::mt19937_64 rng(init_seed);
  const std::size_t V = config_.vocab, d = config_.collab_dim, dt = config_.text_dim, hm = config_.mlp_hidden;
  collab_rec_ = normal_init("collab_rec", Shape{V, d}, config_.embedding_std, rng);
  collab_align_ = normal_init("collab_align", Shape{V, d}, config_.embedding_std, rng);
  text_ = Parameter("text", Tensor(Shape{V, dt}), /*train=*/false, /*decay=*/false);
  auto make_mlp = [&](const std::string& p) {
    return Mlp{xavier(p + ".w1", dt, hm, rng), zeros(p + ".b1", Shape{1, hm}), xavier(p + ".w2", hm, d, rng),
               zeros(p + ".b2", Shape{1, d})};
  };
  mlp_align_ = make_mlp("mlp_align");
  mlp_llm_ = make_mlp("mlp_llm");
  align_proj_w_ = xavier("align_proj.w", 2 * d, d, rng);
  align_proj_b_ = zeros("align_proj.b", Shape{1, d});
  enc_id_ = std::make_unique<SequenceEncoder>("enc_id", config_.encoder, rng);
  enc_align_ = std::make_unique<SequenceEncoder>("enc_align", config_.encoder, rng);
  enc_llm_ = std::make_unique<SequenceEncoder>("enc_llm", config_.encoder, rng);
  const std::size_t gin = 2 * d + config_.bucket_dim, gh = config_.gate_hidden;
  for (Expert e : kAllExperts) {
    const std::string p = "gate." + std::string(to_string(e));
    gate_[static_cast<std::size_t>(e)] = GateScorer{xavier(p + ".w1", gin, gh, rng), zeros(p + ".b1", Shape{1, gh}),
                                                    xavier(p + ".w2", gh, 1, rng), zeros(p + ".b2", Shape{1, 1})};
  }
  bucket_emb_ = normal_init("gate.bucket", Shape{config_.buckets, config_.bucket_dim}, 0.1, rng);
  bucket_emb_.weight_decay = false;
  global_gate_ = zeros("gate.global", Shape{1, 3});
}

void PadModel::set_text(Tensor text) {
  if (text.shape() != Shape{config_.vocab, config_.text_dim}) {
    throw std::invalid_argument("model: text matrix shape " + shape_string(text.shape()) + ", expected " +
                                shape_string(Shape{config_.vocab, config_.text_dim}));
  }
  text_.value = std::move(text);
  has_text_ = true;
}

void PadModel::set_buckets(FrequencyBucketMap buckets) {
  if (buckets.item_count() != config_.vocab || buckets.bucket_count() != config_.buckets) {
    throw std::invalid_argument("model: bucket map does not match vocabulary/bucket count");
  }
  buckets_ = std::move(buckets);
}

SequenceEncoder& PadModel::encoder(Expert e) {
  switch (e) {
    case Expert::id: return *enc_id_;
    case Expert::align: return *enc_align_;
    case Expert::llm: return *enc_llm_;
  }
  throw std::logic_error("encoder: unhandled expert");
}

Var PadModel::apply_mlp(Tape& tape, Mlp& mlp, Var x) {
  Var h = relu(add_row(matmul(x, tape.param(mlp.w1)), tape.param(mlp.b1)));
  return add_row(matmul(h, tape.param(mlp.w2)), tape.param(mlp.b2));
}

Var PadModel::aligned_text(Tape& tape, std::span<const std::size_t> items) {
  if (!has_text_) throw std::logic_error("model: text embeddings not loaded");
  return apply_mlp(tape, mlp_align_, stop_gradient(gather_rows(tape.param(text_), items)));
}

Var PadModel::item_table(Tape& tape, Expert e, std::span<const std::size_t> items) {
  switch (e) {
    case Expert::id: return gather_rows(tape.param(collab_rec_), items);
    case Expert::llm:
      if (!has_text_) throw std::logic_error("model: text embeddings not loaded");
      return apply_mlp(tape, mlp_llm_, stop_gradient(gather_rows(tape.param(text_), items)));
    case Expert::align: {
      std::array<Var, 2> parts{aligned_text(tape, items), gather_rows(tape.param(collab_align_), items)};
      return add_row(matmul(concat_cols(parts), tape.param(align_proj_w_)), tape.param(align_proj_b_));
    }
  }
  throw std::logic_error("item_table: unhandled expert");
}

ForwardResult PadModel::forward(Tape& tape, const Batch& batch, std::span<const Expert> experts, GatingMode gating) {
  const std::vector<Expert> active = canonical(experts);
  const std::size_t n = batch.sequences.size(), m = batch.targets.size(), max_len = config_.encoder.max_len;
  if (n == 0 || m == 0) throw std::invalid_argument("forward: empty batch");
  if (batch.owner.size() != m || batch.labels.size() != m) throw std::invalid_argument("forward: batch arrays differ in size");

  std::vector<std::size_t> distinct;
  std::size_t L = 0;  // pad only to the longest sequence
  for (const auto& seq : batch.sequences) {
    if (seq.empty() || seq.size() > max_len) {
      throw std::invalid_argument("forward: sequence length " + std::to_string(seq.size()) + " outside [1, " +
                                  std::to_string(max_len) + "]");
    }
    L = std::max(L, seq.size());
    distinct.insert(distinct.end(), seq.begin(), seq.end());
  }
  distinct.insert(distinct.end(), batch.targets.begin(), batch.targets.end());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.back() >= config_.vocab) {
    throw std::out_of_range("forward: item id " + std::to_string(distinct.back()) + " outside vocabulary of " +
                            std::to_string(config_.vocab));
  }
  auto local = [&](std::size_t item) {
    return static_cast<std::size_t>(std::lower_bound(distinct.begin(), distinct.end(), item) - distinct.begin());
  };

  std::vector<std::size_t> seq_local(n * L, 0), lengths(n), tgt_local(m), owners(m);
  for (std::size_t b = 0; b < n; ++b) {
    lengths[b] = batch.sequences[b].size();
    for (std::size_t t = 0; t < lengths[b]; ++t) seq_local[b * L + t] = local(batch.sequences[b][t]);
  }
  for (std::size_t i = 0; i < m; ++i) {
    if (batch.owner[i] >= n) throw std::out_of_range("forward: target owner out of range");
    tgt_local[i] = local(batch.targets[i]);
    owners[i] = batch.owner[i];
  }
  Var mask = tape.constant(valid_mask(lengths, L));

  ForwardResult result;
  result.distinct_items = distinct;
  for (Expert e : active) {
    Var table;
    if (e == Expert::align) {
      result.align_text = aligned_text(tape, distinct);
      result.align_collab = gather_rows(tape.param(collab_align_), distinct);
      std::array<Var, 2> parts{result.align_text, result.align_collab};
      table = add_row(matmul(concat_cols(parts), tape.param(align_proj_w_)), tape.param(align_proj_b_));
    } else {
      table = item_table(tape, e, distinct);
    }
    ExpertOutput out;
    Var seq = mul_col(gather_rows(table, seq_local), mask);
    out.user = encoder(e).encode(tape, seq, lengths);
    out.pooled = segment_mean_rows(seq, lengths, L);
    out.target = gather_rows(table, tgt_local);
    out.logits = sum_cols(mul(gather_rows(out.user, owners), out.target));
    result.experts.emplace(e, out);
  }

  if (active.size() == 1) {
    result.logits = result.experts.at(active.front()).logits;
    return result;
  }

  std::vector<Var> gate_logits, expert_logits;
  if (gating == GatingMode::frequency_aware) {
    if (buckets_.item_count() != config_.vocab) throw std::logic_error("forward: bucket map not set");
    std::vector<std::size_t> bucket_rows(m);
    for (std::size_t i = 0; i < m; ++i) bucket_rows[i] = buckets_.bucket(batch.targets[i]) - 1;
    Var bucket = gather_rows(tape.param(bucket_emb_), bucket_rows);
    for (Expert e : active) {
      const ExpertOutput& out = result.experts.at(e);
      GateScorer& g = gate_scorer(e);
      std::array<Var, 3> parts{gather_rows(out.pooled, owners), out.target, bucket};
      Var h = relu(add_row(matmul(concat_cols(parts), tape.param(g.w1)), tape.param(g.b1)));
      gate_logits.push_back(add_row(matmul(h, tape.param(g.w2)), tape.param(g.b2)));
    }
  } else {
    Var global = tape.param(global_gate_);
    Var base = tape.constant(Tensor(Shape{m, 1}));
    for (Expert e : active) {
      const std::size_t c = static_cast<std::size_t>(e);
      gate_logits.push_back(add_row(base, slice_cols(global, c, c + 1)));
    }
  }
  for (Expert e : active) expert_logits.push_back(result.experts.at(e).logits);
  Var weights = softmax_rows(concat_cols(gate_logits));
  result.gate_weights = weights;
  result.logits = sum_cols(mul(weights, concat_cols(expert_logits)));
  return result;
}

std::vector<Parameter*> PadModel::group(ParamGroup g) {
  std::vector<Parameter*> out;
  auto append = [&out](std::vector<Parameter*> more) { out.insert(out.end(), more.begin(), more.end()); };
  switch (g) {
    case ParamGroup::id:
      out.push_back(&collab_rec_);
      append(enc_id_->parameters());
      break;
    case ParamGroup::align:
      out = {&collab_align_, &mlp_align_.w1, &mlp_align_.b1, &mlp_align_.w2, &mlp_align_.b2, &align_proj_w_, &align_proj_b_};
      append(enc_align_->parameters());
      break;
    case ParamGroup::llm:
      out = {&mlp_llm_.w1, &mlp_llm_.b1, &mlp_llm_.w2, &mlp_llm_.b2};
      append(enc_llm_->parameters());
      break;
    case ParamGroup::gate:
      for (auto& s : gate_) {
        for (Parameter* p : {&s.w1, &s.b1, &s.w2, &s.b2}) out.push_back(p);
      }
      out.push_back(&bucket_emb_);
      out.push_back(&global_gate_);
      break;
  }
  return out;
}

std::vector<Parameter*> PadModel::parameters(std::span<const ParamGroup> groups) {
  std::vector<Parameter*> out;
  for (ParamGroup g : groups) {
    auto more = group(g);
    out.insert(out.end(), more.begin(), more.end());
  }
  return out;
}

std::vector<Parameter*> PadModel::all_parameters() {
  constexpr std::array<ParamGroup, 4> all{ParamGroup::id, ParamGroup::align, ParamGroup::llm, ParamGroup::gate};
  auto out = parameters(all);
  out.push_back(&text_);
  return out;
}

Parameter* PadModel::find(std::string_view name) {
  for (Parameter* p : all_parameters()) {
    if (p->name == name) return p;
  }
  return nullptr;
}

// ---------------------------------------------------------------------------

CatalogScorer::CatalogScorer(PadModel& model, std::vector<Expert> experts, GatingMode gating)
    : model_(model), experts_(canonical(experts)), gating_(gating) {
  const std::size_t V = model_.config().vocab, d = model_.config().collab_dim;
  std::vector<std::size_t> all(V);
  for (std::size_t i = 0; i < V; ++i) all[i] = i;
  const bool gated = experts_.size() > 1 && gating_ == GatingMode::frequency_aware;
  if (gated && model_.buckets().item_count() != V) throw std::logic_error("scorer: bucket map not set");
  for (Expert e : experts_) {
    Tape tape;
    ExpertTables t;
    t.items = model_.item_table(tape, e, all).value();
    if (gated) {
      const auto& g = model_.gate_scorer(e);
      const std::size_t h = g.w1.value.cols(), db = model_.config().bucket_dim;
      t.gate_item = Tensor(Shape{V, h});
      const Tensor& w1 = g.w1.value;
      const Tensor& bemb = model_.bucket_embedding().value;
      for (std::size_t i = 0; i < V; ++i) {
        const std::size_t b = model_.buckets().bucket(i) - 1;
        for (std::size_t k = 0; k < h; ++k) {
          double s = 0;
          for (std::size_t c = 0; c < d; ++c) s += t.items.at(i, c) * w1.at(d + c, k);
          for (std::size_t c = 0; c < db; ++c) s += bemb.at(b, c) * w1.at(2 * d + c, k);
          t.gate_item.at(i, k) = s;
        }
      }
    }
    tables_.push_back(std::move(t));
  }
}

CatalogScorer::UserSide CatalogScorer::user_side(const std::vector<std::vector<std::size_t>>& sequences) const {
  const std::size_t n = sequences.size(), V = model_.config().vocab;
  const std::size_t d = model_.config().collab_dim;
  std::size_t L = 0;
  for (const auto& s : sequences) {
    if (s.empty() || s.size() > model_.config().encoder.max_len) {
      throw std::invalid_argument("scorer: sequence length out of range");
    }
    L = std::max(L, s.size());
  }
  std::vector<std::size_t> seq_idx(n * L, 0), lengths(n);
  for (std::size_t b = 0; b < n; ++b) {
    const auto& s = sequences[b];
    lengths[b] = s.size();
    for (std::size_t t = 0; t < s.size(); ++t) {
      if (s[t] >= V) throw std::out_of_range("scorer: item id outside vocabulary");
      seq_idx[b * L + t] = s[t];
    }
  }
  const bool gated = experts_.size() > 1 && gating_ == GatingMode::frequency_aware;
  UserSide side;
  for (std::size_t k = 0; k < experts_.size(); ++k) {
    Tape tape;
    Var table = tape.constant(tables_[k].items);
    Var seq = mul_col(gather_rows(table, seq_idx), tape.constant(valid_mask(lengths, L)));
    side.user.push_back(model_.encoder(experts_[k]).encode(tape, seq, lengths).value());
    if (gated) {
      const Tensor pooled = segment_mean_rows(seq, lengths, L).value();
      const auto& g = model_.gate_scorer(experts_[k]);
      const std::size_t h = g.w1.value.cols();
      Tensor gu(Shape{n, h});
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t j = 0; j < h; ++j) {
          double s = g.b1.value[j];
          for (std::size_t c = 0; c < d; ++c) s += pooled.at(b, c) * g.w1.value.at(c, j);
          gu.at(b, j) = s;
        }
      side.gate_user.push_back(std::move(gu));
    }
  }
  return side;
}

Tensor CatalogScorer::score(const std::vector<std::vector<std::size_t>>& sequences) const {
  const std::size_t n = sequences.size(), V = model_.config().vocab, d = model_.config().collab_dim;
  const std::size_t k = experts_.size();
  const UserSide side = user_side(sequences);
  std::vector<Tensor> logits(k, Tensor(Shape{n, V}));
  for (std::size_t e = 0; e < k; ++e) {
    const Tensor& items = tables_[e].items;
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t i = 0; i < V; ++i) {
        double s = 0;
        for (std::size_t c = 0; c < d; ++c) s += side.user[e].at(b, c) * items.at(i, c);
        logits[e].at(b, i) = s;
      }
  }
  if (k == 1) return std::move(logits.front());

  Tensor out(Shape{n, V});
  std::vector<double> gl(k), w(k);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < V; ++i) {
      for (std::size_t e = 0; e < k; ++e) {
        if (gating_ == GatingMode::frequency_aware) {
          const auto& g = model_.gate_scorer(experts_[e]);
          const std::size_t h = g.w1.value.cols();
          double s = g.b2.value[0];
          for (std::size_t j = 0; j < h; ++j) {
            const double a = side.gate_user[e].at(b, j) + tables_[e].gate_item.at(i, j);
            if (a > 0) s += a * g.w2.value[j];
          }
          gl[e] = s;
        } else {
          gl[e] = model_.global_gate().value[static_cast<std::size_t>(experts_[e])];
        }
      }
      const double mx = *std::max_element(gl.begin(), gl.end());
      double z = 0;
      for (std::size_t e = 0; e < k; ++e) z += (w[e] = std::exp(gl[e] - mx));
      double phi = 0;
      for (std::size_t e = 0; e < k; ++e) phi += w[e] / z * logits[e].at(b, i);
      out.at(b, i) = phi;
    }
  return out;
}

std::vector<double> CatalogScorer::gate_weights(const std::vector<std::size_t>& sequence, std::size_t item) const {
  const std::size_t k = experts_.size();
  if (k == 1) return {1.0};
  const UserSide side = user_side({sequence});
  std::vector<double> gl(k);
  for (std::size_t e = 0; e < k; ++e) {
    if (gating_ == GatingMode::frequency_aware) {
      const auto& g = model_.gate_scorer(experts_[e]);
      double s = g.b2.value[0];
      for (std::size_t j = 0; j < g.w1.value.cols(); ++j) {
        const double a = side.gate_user[e].at(0, j) + tables_[e].gate_item.at(item, j);
        if (a > 0) s += a * g.w2.value[j];
      }
      gl[e] = s;
    } else {
      gl[e] = model_.global_gate().value[static_cast<std::size_t>(experts_[e])];
    }
  }
  std::vector<double> w(k);
  const double mx = *std::max_element(gl.begin(), gl.end());
  double z = 0;
  for (std::size_t e = 0; e < k; ++e) z += (w[e] = std::exp(gl[e] - mx));
  for (double& v : w) v /= z;
  return w;
}

}  // namespace padrec
