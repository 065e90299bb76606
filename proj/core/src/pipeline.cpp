#include "padrec/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "padrec/metrics.hpp"
#include "padrec/seeds.hpp"

namespace padrec {

std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::pretrain: return "pretrain";
    case Phase::align: return "align";
    case Phase::finetune: return "finetune";
  }
  return "unknown";
}

std::string_view to_string(AlignVariant v) {
  switch (v) {
    case AlignVariant::none: return "none";
    case AlignVariant::non_anchored: return "non_anchored";
    case AlignVariant::rec_anchored: return "rec_anchored";
    case AlignVariant::rec_anchored_frozen: return "rec_anchored_frozen";
  }
  return "unknown";
}

std::string_view to_string(AlignLoss l) { return l == AlignLoss::mmd ? "mmd" : "infonce"; }
std::string_view to_string(MmdEstimator e) { return e == MmdEstimator::biased ? "biased" : "unbiased"; }
std::string_view to_string(Precision p) { return p == Precision::f64 ? "f64" : "f32"; }

Phase parse_phase(std::string_view s) {
  if (s == "pretrain") return Phase::pretrain;
  if (s == "align") return Phase::align;
  if (s == "finetune") return Phase::finetune;
  throw std::invalid_argument("unknown phase '" + std::string(s) + "'");
}

AlignVariant parse_align_variant(std::string_view s) {
  if (s == "none") return AlignVariant::none;
  if (s == "non_anchored") return AlignVariant::non_anchored;
  if (s == "rec_anchored") return AlignVariant::rec_anchored;
  if (s == "rec_anchored_frozen") return AlignVariant::rec_anchored_frozen;
  throw std::invalid_argument("unknown alignment variant '" + std::string(s) +
                              "' (none, non_anchored, rec_anchored, rec_anchored_frozen)");
}

AlignLoss parse_align_loss(std::string_view s) {
  if (s == "mmd") return AlignLoss::mmd;
  if (s == "infonce") return AlignLoss::infonce;
  throw std::invalid_argument("unknown alignment loss '" + std::string(s) + "' (mmd, infonce)");
}

MmdEstimator parse_estimator(std::string_view s) {
  if (s == "biased") return MmdEstimator::biased;
  if (s == "unbiased") return MmdEstimator::unbiased;
  throw std::invalid_argument("unknown MMD estimator '" + std::string(s) + "' (biased, unbiased)");
}

Precision parse_precision(std::string_view s) {
  if (s == "f64") return Precision::f64;
  if (s == "f32") return Precision::f32;
  throw std::invalid_argument("unknown precision '" + std::string(s) + "' (f32, f64)");
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("train: batch_size must be >= 1");
  if (!(gamma >= 0) || !std::isfinite(gamma)) throw std::invalid_argument("train: gamma must be finite and >= 0");
  if (patience == 0) throw std::invalid_argument("train: patience must be >= 1");
  if (!(optimizer.lr > 0)) throw std::invalid_argument("train: learning rate must be > 0");
  if (!(optimizer.weight_decay >= 0)) throw std::invalid_argument("train: weight decay must be >= 0");
  if (experts.empty()) throw std::invalid_argument("train: expert mask must not be empty");
  if (!(temperature > 0)) throw std::invalid_argument("infonce: temperature must be > 0");
  if (eval_k == 0) throw std::invalid_argument("eval: k must be >= 1");
  if (threads == 0) throw std::invalid_argument("threads must be >= 1");
  (void)kernel_bank();
}

MultiKernel TrainConfig::kernel_bank() const {
  std::vector<WeightedKernel> entries;
  if (kernel == KernelKind::gaussian || kernel == KernelKind::laplacian) {
    if (bandwidths.empty()) throw std::invalid_argument("kernel: bandwidth list is empty");
    for (double bw : bandwidths) {
      entries.push_back({1.0, kernel == KernelKind::gaussian ? KernelSpec::gaussian(bw) : KernelSpec::laplacian(bw)});
    }
  } else {
    entries.push_back({1.0, kernel == KernelKind::linear ? KernelSpec::linear() : KernelSpec::cosine()});
  }
  if (!betas.empty()) {
    if (betas.size() != entries.size()) {
      throw std::invalid_argument("kernel: " + std::to_string(betas.size()) + " betas for " +
                                  std::to_string(entries.size()) + " kernels");
    }
    for (std::size_t i = 0; i < betas.size(); ++i) entries[i].beta = betas[i];
  }
  return MultiKernel(std::move(entries), std::nullopt, KernelUse::alignment_loss);
}

std::size_t TrainConfig::max_epochs(Phase p) const {
  switch (p) {
    case Phase::pretrain: return pretrain_epochs;
    case Phase::align: return align_epochs;
    case Phase::finetune: return finetune_epochs;
  }
  return 0;
}

std::size_t negative_sample(std::mt19937_64& rng, std::size_t positive, std::size_t catalog) {
  if (catalog < 2) throw std::invalid_argument("negative_sample: catalog needs at least 2 items");
  if (positive >= catalog) throw std::out_of_range("negative_sample: positive outside catalog");
  const std::size_t j = std::uniform_int_distribution<std::size_t>(0, catalog - 2)(rng);
  return j >= positive ? j + 1 : j;
}

EarlyStopper::EarlyStopper(std::size_t patience) : patience_(patience) {
  if (patience == 0) throw std::invalid_argument("early stop: patience must be >= 1");
}

bool EarlyStopper::update(double value) {
  ++epochs_;
  if (epochs_ == 1 || value > best_) {
    best_ = value;
    best_epoch_ = epochs_;
    since_best_ = 0;
    return false;
  }
  return ++since_best_ >= patience_;
}

std::vector<Expert> phase_experts(Phase phase, const TrainConfig& config) {
  switch (phase) {
    case Phase::pretrain: return {Expert::id};
    case Phase::align: return {Expert::align};
    case Phase::finetune: {
      std::vector<Expert> e = config.experts;
      std::sort(e.begin(), e.end());
      e.erase(std::unique(e.begin(), e.end()), e.end());
      if (e.empty()) throw std::invalid_argument("finetune: expert mask must not be empty");
      return e;
    }
  }
  throw std::logic_error("phase_experts: unhandled phase");
}

LossParts phase_loss(Tape& tape, PadModel& model, const Batch& batch, Phase phase, const TrainConfig& config) {
  const auto experts = phase_experts(phase, config);
  LossParts parts;
  parts.forward = model.forward(tape, batch, experts, config.gating);
  const Tensor labels(Shape{batch.labels.size(), 1}, batch.labels);
  parts.bce = bce_with_logits(parts.forward.logits, labels);
  parts.total = parts.bce;
  if (phase != Phase::align) return parts;

  Var text = parts.forward.align_text;
  Var collab = parts.forward.align_collab;
  if (config.variant == AlignVariant::rec_anchored_frozen) collab = stop_gradient(collab);
  Var term;
  if (config.align_loss == AlignLoss::infonce) {
    term = infonce_loss(text, collab, config.temperature);
  } else {
    const MultiKernel bank = config.kernel_bank();
    // the unbiased form needs two rows per side; fall back otherwise
    term = config.estimator == MmdEstimator::unbiased && text.rows() >= 2 ? mmd2_unbiased(text, collab, bank)
                                                                          : mmd2_biased(text, collab, bank);
  }
  parts.alignment = term;
  switch (config.variant) {
    case AlignVariant::none: break;
    case AlignVariant::non_anchored: parts.total = scale(term, config.gamma); break;
    case AlignVariant::rec_anchored:
    case AlignVariant::rec_anchored_frozen: parts.total = add(parts.bce, scale(term, config.gamma)); break;
  }
  return parts;
}

std::vector<Parameter*> phase_parameters(PadModel& model, Phase phase, const TrainConfig& config) {
  switch (phase) {
    case Phase::pretrain: return model.group(ParamGroup::id);
    case Phase::align: {
      auto params = model.group(ParamGroup::align);
      if (config.variant == AlignVariant::rec_anchored_frozen) {
        std::erase(params, &model.collab_align());
      }
      return params;
    }
    case Phase::finetune: {
      std::vector<ParamGroup> groups;
      const auto experts = phase_experts(phase, config);
      for (Expert e : experts) {
        groups.push_back(e == Expert::id ? ParamGroup::id : e == Expert::align ? ParamGroup::align : ParamGroup::llm);
      }
      if (experts.size() > 1) groups.push_back(ParamGroup::gate);
      auto params = model.parameters(groups);
      if (experts.size() > 1) {
        // only the scorers of active experts and the gating mode in use learn
        std::erase_if(params, [&](Parameter* p) {
          if (p == &model.global_gate()) return config.gating != GatingMode::global_learned;
          if (p == &model.bucket_embedding()) return config.gating != GatingMode::frequency_aware;
          for (Expert e : kAllExperts) {
            auto& g = model.gate_scorer(e);
            if (p == &g.w1 || p == &g.b1 || p == &g.w2 || p == &g.b2) {
              return config.gating != GatingMode::frequency_aware ||
                     std::find(experts.begin(), experts.end(), e) == experts.end();
            }
          }
          return false;
        });
      }
      return params;
    }
  }
  throw std::logic_error("phase_parameters: unhandled phase");
}

void initialize_alignment_expert(PadModel& model) {
  model.collab_align().value = model.collab_rec().value;
  auto src = model.encoder(Expert::id).parameters();
  auto dst = model.encoder(Expert::align).parameters();
  if (src.size() != dst.size()) throw std::logic_error("align init: encoder layouts differ");
  for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value;
  // [mlp_align(text) | collab_align] x W with W = [0; I] reproduces collab_align
  Parameter* w = model.find("align_proj.w");
  Parameter* b = model.find("align_proj.b");
  const std::size_t d = model.config().collab_dim;
  w->value.fill(0.0);
  for (std::size_t c = 0; c < d; ++c) w->value.at(d + c, c) = 1.0;
  b->value.fill(0.0);
}

std::vector<Batch> make_epoch_batches(const SplitDataset& data, std::size_t batch_size, std::size_t max_len,
                                      std::mt19937_64& order_rng, std::mt19937_64& negative_rng) {
  if (data.user_count() == 0) throw std::invalid_argument("training: empty training set");
  std::vector<std::size_t> order(data.user_count());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), order_rng);
  std::vector<Batch> batches;
  for (std::size_t lo = 0; lo < order.size(); lo += batch_size) {
    Batch b;
    const std::size_t hi = std::min(order.size(), lo + batch_size);
    std::vector<std::size_t> positives;
    for (std::size_t k = lo; k < hi; ++k) {
      const auto view = data.training_view(order[k]);
      // targets at positions 1 .. view.size() - 1 each have a non-empty prefix
      const std::size_t pos = std::uniform_int_distribution<std::size_t>(1, view.size() - 1)(order_rng);
      const std::size_t start = pos > max_len ? pos - max_len : 0;
      b.sequences.emplace_back(view.begin() + static_cast<std::ptrdiff_t>(start),
                               view.begin() + static_cast<std::ptrdiff_t>(pos));
      positives.push_back(view[pos]);
    }
    for (std::size_t i = 0; i < positives.size(); ++i) {
      b.targets.push_back(positives[i]);
      b.owner.push_back(i);
      b.labels.push_back(1.0);
    }
    for (std::size_t i = 0; i < positives.size(); ++i) {
      b.targets.push_back(negative_sample(negative_rng, positives[i], data.item_count()));
      b.owner.push_back(i);
      b.labels.push_back(0.0);
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

void GateAudit::record(const Tensor& weights, std::span<const std::size_t> targets, const FrequencyBucketMap& buckets) {
  const std::size_t k = weights.cols();
  if (weights.rows() != targets.size()) throw std::invalid_argument("gate audit: row/target count mismatch");
  if (bucket_sum.empty()) {
    bucket_sum.assign(buckets.bucket_count(), std::vector<double>(k, 0.0));
    bucket_rows.assign(buckets.bucket_count(), 0);
  }
  for (std::size_t r = 0; r < weights.rows(); ++r) {
    double s = 0;
    const std::size_t b = buckets.bucket(targets[r]) - 1;
    for (std::size_t c = 0; c < k; ++c) {
      const double w = weights.at(r, c);
      min_weight = std::min(min_weight, w);
      s += w;
      bucket_sum[b][c] += w;
    }
    ++bucket_rows[b];
    max_sum_error = std::max(max_sum_error, std::abs(s - 1.0));
    ++rows;
  }
}

std::vector<std::vector<double>> GateAudit::bucket_means() const {
  std::vector<std::vector<double>> out(bucket_sum.size());
  for (std::size_t b = 0; b < bucket_sum.size(); ++b) {
    if (bucket_rows[b] == 0) continue;
    for (double s : bucket_sum[b]) out[b].push_back(s / static_cast<double>(bucket_rows[b]));
  }
  return out;
}

double GateAudit::max_bucket_spread() const {
  const auto means = bucket_means();
  double spread = 0;
  for (std::size_t c = 0; c < experts.size(); ++c) {
    double lo = 1e300, hi = -1e300;
    for (const auto& m : means) {
      if (m.empty()) continue;
      lo = std::min(lo, m[c]);
      hi = std::max(hi, m[c]);
    }
    if (hi >= lo) spread = std::max(spread, hi - lo);
  }
  return spread;
}

double validation_ndcg(PadModel& model, const SplitDataset& data, const std::vector<Expert>& experts,
                       const TrainConfig& config, double* hr) {
  const CatalogScorer scorer(model, experts, config.gating);
  const auto ranks = rank_all_items(scorer, data, Split::validation, config.threads);
  double n = 0, h = 0;
  for (std::size_t r : ranks) {
    n += ndcg_at_k(r, config.eval_k);
    h += hr_at_k(r, config.eval_k);
  }
  const double users = static_cast<double>(ranks.size());
  if (hr) *hr = 100.0 * h / users;
  return 100.0 * n / users;
}

namespace {

std::uint64_t phase_seed(std::uint64_t master, std::string_view stream, Phase phase) {
  return derive_seed(derive_seed(master, stream), to_string(phase));
}

void round_to_float(std::span<Parameter* const> params) {
  for (Parameter* p : params)
    for (double& v : p->value.values()) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace

PhaseReport train_phase(PadModel& model, const SplitDataset& data, Phase phase, const TrainConfig& config,
                        const EpochSink& sink) {
  config.validate();
  if (data.item_count() != model.config().vocab) throw std::invalid_argument("train: dataset vocabulary differs from model");
  const auto experts = phase_experts(phase, config);
  const auto params = phase_parameters(model, phase, config);
  const std::size_t L = model.config().encoder.max_len;
  const bool gated = experts.size() > 1;

  std::mt19937_64 order_rng(phase_seed(config.seed, "shuffle", phase));
  std::mt19937_64 negative_rng(phase_seed(config.seed, "negatives", phase));
  std::mt19937_64 dropout_rng(phase_seed(config.seed, "dropout", phase));
  AdamW opt(config.optimizer);
  opt.set_round_to_float(config.precision == Precision::f32);
  if (config.precision == Precision::f32) round_to_float(params);

  PhaseReport report;
  report.phase = phase;
  report.gate.experts = experts;
  EarlyStopper stopper(config.patience);
  // Alignment trains for its whole budget and keeps the last weights:
  // validation nDCG does not see the alignment term, and for non_anchored
  // it would always pick the least aligned epoch.
  const bool select_best = phase != Phase::align;
  std::vector<Tensor> best;
  auto remember = [&] {
    best.clear();
    for (Parameter* p : params) best.push_back(p->value);
  };

  const std::size_t max_epochs = config.max_epochs(phase);
  for (std::size_t epoch = 1; epoch <= max_epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    const auto batches = make_epoch_batches(data, config.batch_size, L, order_rng, negative_rng);
    double loss_sum = 0, bce_sum = 0, align_sum = 0;
    for (const Batch& batch : batches) {
      Tape tape(/*training=*/true, dropout_rng());
      zero_grads(params);
      LossParts parts = phase_loss(tape, model, batch, phase, config);
      const double loss = parts.total.value().item();
      if (!std::isfinite(loss)) {
        throw std::runtime_error(std::string(to_string(phase)) + ": loss became non-finite in epoch " +
                                 std::to_string(epoch));
      }
      loss_sum += loss;
      bce_sum += parts.bce.value().item();
      if (parts.alignment) {
        const double a = parts.alignment->value().item();
        align_sum += a;
        if (!report.first_batch_alignment) report.first_batch_alignment = a;
      }
      if (gated && parts.forward.gate_weights) {
        report.gate.record(parts.forward.gate_weights->value(), batch.targets, model.buckets());
      }
      tape.backward(parts.total);
      opt.step(params);
    }

    EpochRecord rec;
    rec.phase = std::string(to_string(phase));
    rec.epoch = epoch;
    const double nb = static_cast<double>(batches.size());
    rec.loss = loss_sum / nb;
    rec.loss_bce = bce_sum / nb;
    rec.loss_mmd = align_sum / nb;
    rec.val_ndcg10 = validation_ndcg(model, data, experts, config, &rec.val_hr10);
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    report.history.push_back(rec);
    if (sink) sink(rec);

    if (!select_best) continue;
    const bool stop = stopper.update(rec.val_ndcg10);
    if (stopper.best_epoch() == epoch) remember();
    if (stop) {
      report.stopped_early = epoch < max_epochs;
      break;
    }
  }
  if (!select_best) {
    report.best_epoch = report.history.size();
    report.best_val_ndcg = report.history.empty() ? 0.0 : report.history.back().val_ndcg10;
    return report;
  }
  if (!best.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best[i];
  }
  report.best_epoch = stopper.best_epoch();
  report.best_val_ndcg = stopper.best_value();
  return report;
}

}  // namespace padrec
