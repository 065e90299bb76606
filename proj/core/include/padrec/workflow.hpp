#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "padrec/buckets.hpp"
#include "padrec/checkpoint.hpp"
#include "padrec/config.hpp"
#include "padrec/data.hpp"
#include "padrec/diagnostics.hpp"
#include "padrec/metrics.hpp"
#include "padrec/model.hpp"
#include "padrec/pipeline.hpp"

namespace padrec {

/// Everything derived from the input files.
struct Workspace {
  SplitDataset data;
  Tensor text;
  std::vector<std::string> missing_text;
  FrequencyBucketMap buckets;
};

Workspace load_workspace(const RunConfig& config);
/// Builds the workspace from in-memory inputs (tests, synthetic worlds).
Workspace make_workspace(const RunConfig& config, const InteractionLog& log, const TextEmbeddingFile& text);

ModelConfig resolve_model_config(const RunConfig& config, const Workspace& ws);
std::unique_ptr<PadModel> make_model(const RunConfig& config, const Workspace& ws);

/// Exclusive ownership of a run directory through a `.lock` file.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& dir);
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;
  ~RunLock();

 private:
  std::filesystem::path path_;
};

/// One metrics.jsonl line.
std::string epoch_json(const EpochRecord& rec);

struct PhaseRun {
  PhaseReport report;
  std::filesystem::path checkpoint;
};

/// Phase 1: writes <run_dir>/pretrain.ckpt.
PhaseRun run_pretrain(const RunConfig& config, const Workspace& ws, const EpochSink& sink = {});
/// Phase 2 from pretrain.ckpt: writes align.ckpt.
PhaseRun run_align(const RunConfig& config, const Workspace& ws, const EpochSink& sink = {});
/// Phase 3 from pretrain.ckpt and align.ckpt: writes final.ckpt.
PhaseRun run_finetune(const RunConfig& config, const Workspace& ws, const EpochSink& sink = {});

/// Loads a checkpoint into a fresh model; returns the phase it was saved in.
Phase load_model(PadModel& model, const std::filesystem::path& ckpt);
/// Experts evaluated for a checkpoint of `phase`.
std::vector<Expert> evaluation_experts(Phase phase, const TrainConfig& config);

RankReport evaluate_checkpoint(const RunConfig& config, const Workspace& ws, const std::filesystem::path& ckpt,
                               Split split = Split::test);

struct PipelineResult {
  PhaseRun pretrain, align, finetune;
  RankReport baseline;  // id expert after phase 1, test split
  RankReport final;     // fused model after phase 3, test split
  KTReport alignment_kt;
  std::string report_json;
};

/// Phases 1 to 3, then report.json in the run directory.
PipelineResult run_pipeline(const RunConfig& config, const Workspace& ws, const EpochSink& sink = {});

struct DiagnoseResult {
  KTReport kt;
  PairAnalysis pairs;
  RankReport rank;
  std::string report_json;
};

/// Compares the collaborative table of `before` and `after` and analyses
/// `after`'s pair distances; writes report.json and pairs.csv to `out_dir`.
DiagnoseResult diagnose(const RunConfig& config, const Workspace& ws, const std::filesystem::path& before,
                        const std::filesystem::path& after, const std::filesystem::path& out_dir);

struct AblationVariant {
  std::string id;
  std::optional<AlignVariant> variant;
  std::optional<KernelKind> kernel;
  std::optional<AlignLoss> loss;
  std::optional<std::vector<Expert>> experts;
  std::optional<GatingMode> gating;
};

/// Parses a variant spec such as "align=non_anchored", "kernel=cosine",
/// "loss=infonce", "experts=id+llm", "gating=global_learned", combined with
/// ';'. Unknown names are errors.
AblationVariant parse_ablation_variant(const std::string& spec);

struct AblationRow {
  std::string id;
  RankReport report;
};

/// Runs each variant in <run_dir>/ablate/<id>. Phase checkpoints of the base
/// run in the run directory are reused unless `from_scratch`; variants that
/// only touch the fine-tune settings reuse the base align checkpoint.
std::vector<AblationRow> run_ablation(const RunConfig& config, const Workspace& ws,
                                      const std::vector<AblationVariant>& variants, bool from_scratch,
                                      const EpochSink& sink = {});
void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows);

}  // namespace padrec
