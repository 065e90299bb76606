#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "padrec/data.hpp"
#include "padrec/kernels.hpp"
#include "padrec/model.hpp"
#include "padrec/optim.hpp"

namespace padrec {

enum class Phase { pretrain, align, finetune };
enum class AlignVariant { none, non_anchored, rec_anchored, rec_anchored_frozen };
enum class AlignLoss { mmd, infonce };
enum class MmdEstimator { biased, unbiased };
enum class Precision { f64, f32 };

std::string_view to_string(Phase p);
std::string_view to_string(AlignVariant v);
std::string_view to_string(AlignLoss l);
std::string_view to_string(MmdEstimator e);
std::string_view to_string(Precision p);
Phase parse_phase(std::string_view s);
AlignVariant parse_align_variant(std::string_view s);
AlignLoss parse_align_loss(std::string_view s);
MmdEstimator parse_estimator(std::string_view s);
Precision parse_precision(std::string_view s);

struct TrainConfig {
  std::size_t batch_size = 16;
  double gamma = 0.2;
  AdamWOptions optimizer;
  std::size_t patience = 10;
  std::size_t pretrain_epochs = 50;
  std::size_t align_epochs = 50;
  std::size_t finetune_epochs = 50;
  std::uint64_t seed = 0;

  AlignVariant variant = AlignVariant::rec_anchored;
  AlignLoss align_loss = AlignLoss::mmd;
  MmdEstimator estimator = MmdEstimator::biased;
  KernelKind kernel = KernelKind::gaussian;
  std::vector<double> bandwidths{0.125, 0.25, 0.5, 1.0, 2.0};
  std::vector<double> betas;  // empty: all 1
  double temperature = 0.1;

  std::vector<Expert> experts{Expert::id, Expert::align, Expert::llm};
  GatingMode gating = GatingMode::frequency_aware;

  Precision precision = Precision::f64;
  std::size_t threads = 1;
  std::size_t eval_k = 10;

  void validate() const;
  /// Alignment kernel bank. Cosine is admitted here (alignment-loss use).
  MultiKernel kernel_bank() const;
  std::size_t max_epochs(Phase p) const;
};

/// Uniform over the catalog excluding `positive`.
std::size_t negative_sample(std::mt19937_64& rng, std::size_t positive, std::size_t catalog);

/// Stop after `patience` consecutive epochs without strict improvement; the
/// best epoch (1-based) is the earliest maximum.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience);
  /// Records one epoch; returns true when training should stop.
  bool update(double value);
  std::size_t best_epoch() const { return best_epoch_; }
  double best_value() const { return best_; }
  std::size_t epochs() const { return epochs_; }

 private:
  std::size_t patience_;
  std::size_t epochs_ = 0;
  std::size_t best_epoch_ = 0;
  std::size_t since_best_ = 0;
  double best_ = 0.0;
};

struct LossParts {
  Var total;
  Var bce;
  std::optional<Var> alignment;  // MMD^2 or InfoNCE term before gamma
  ForwardResult forward;
};

/// Experts that run in a phase: {id}, {align} or the configured mask.
std::vector<Expert> phase_experts(Phase phase, const TrainConfig& config);

/// Training loss of one batch in `phase`:
///   pretrain  BCE of the id expert
///   align     variant-dependent combination of the align expert's BCE and
///             gamma * D(mlp_align(SG(text)), collab_align) over the batch's
///             distinct items (SG on the collab side when frozen)
///   finetune  BCE of the fused logit
LossParts phase_loss(Tape& tape, PadModel& model, const Batch& batch, Phase phase, const TrainConfig& config);

/// Parameters the optimizer updates in `phase`.
std::vector<Parameter*> phase_parameters(PadModel& model, Phase phase, const TrainConfig& config);

/// Copies collab_rec into collab_align and the id encoder into the align
/// encoder, and sets the align projection to pass collab_align through, so
/// the align expert starts out scoring exactly like the pretrained id expert.
void initialize_alignment_expert(PadModel& model);

/// One example per user: a target drawn uniformly from positions 1..l-3 of
/// the training view with its preceding behaviours, plus one sampled negative.
std::vector<Batch> make_epoch_batches(const SplitDataset& data, std::size_t batch_size, std::size_t max_len,
                                      std::mt19937_64& order_rng, std::mt19937_64& negative_rng);

struct EpochRecord {
  std::string phase;
  std::size_t epoch = 0;
  double loss = 0.0;
  double loss_bce = 0.0;
  double loss_mmd = 0.0;
  double val_hr10 = 0.0;
  double val_ndcg10 = 0.0;
  double wall_seconds = 0.0;
};
using EpochSink = std::function<void(const EpochRecord&)>;

/// Every gate-weight row emitted while training, reduced on the fly.
struct GateAudit {
  std::size_t rows = 0;
  double min_weight = 1.0;
  double max_sum_error = 0.0;
  std::vector<Expert> experts;
  /// [bucket][expert] weight sums and row counts per target bucket.
  std::vector<std::vector<double>> bucket_sum;
  std::vector<std::size_t> bucket_rows;

  void record(const Tensor& weights, std::span<const std::size_t> targets, const FrequencyBucketMap& buckets);
  /// Mean weights per bucket (empty rows for unseen buckets).
  std::vector<std::vector<double>> bucket_means() const;
  /// Largest absolute difference of a per-bucket mean weight across buckets.
  double max_bucket_spread() const;
};

struct PhaseReport {
  Phase phase = Phase::pretrain;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_ndcg = 0.0;
  bool stopped_early = false;
  std::optional<double> first_batch_alignment;
  GateAudit gate;
};

/// Trains `model` in place for one phase. Pretrain and finetune stop early on
/// validation nDCG@k and leave the best epoch's parameters; align runs all its
/// epochs and keeps the last (best_epoch is then the last epoch). The model must
/// already carry text, buckets and, for later phases, the earlier weights.
/// The align phase does not call initialize_alignment_expert itself.
PhaseReport train_phase(PadModel& model, const SplitDataset& data, Phase phase, const TrainConfig& config,
                        const EpochSink& sink = {});

/// Validation/test evaluation with the phase's experts.
double validation_ndcg(PadModel& model, const SplitDataset& data, const std::vector<Expert>& experts,
                       const TrainConfig& config, double* hr = nullptr);

}  // namespace padrec
