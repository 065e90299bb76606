#include "padrec/workflow.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "padrec/seeds.hpp"

namespace padrec {

namespace {

using json = nlohmann::json;

Workspace finish_workspace(const RunConfig& config, SplitDataset data, const AlignedText& aligned) {
  Workspace ws;
  ws.text = aligned.matrix;
  ws.missing_text = aligned.missing;
  const std::size_t B = config.model.buckets;
  if (B > data.item_count()) {
    throw ConfigError("model.buckets = " + std::to_string(B) + " exceeds the " + std::to_string(data.item_count()) +
                      " items in the catalog");
  }
  ws.buckets = bucketize(data.train_frequency(), B);
  ws.data = std::move(data);
  return ws;
}

json rank_json(const RankReport& r) { return json::parse(rank_report_json(r)); }
json kt_json(const KTReport& kt) { return json::parse(kt_report_json(kt)); }
json pairs_json(const PairAnalysis& p) { return json::parse(pair_analysis_json(p)); }

json gate_json(const GateAudit& g) {
  json experts = json::array();
  for (Expert e : g.experts) experts.push_back(std::string(to_string(e)));
  return {{"experts", experts},
          {"rows", g.rows},
          {"min_weight", g.min_weight},
          {"max_sum_error", g.max_sum_error},
          {"bucket_mean_weights", g.bucket_means()},
          {"max_bucket_spread", g.max_bucket_spread()}};
}

// Deterministic: no wall-clock values.
json history_json(const PhaseReport& r) {
  json h = json::array();
  for (const auto& e : r.history) {
    h.push_back({{"epoch", e.epoch},
                 {"loss", e.loss},
                 {"loss_bce", e.loss_bce},
                 {"loss_mmd", e.loss_mmd},
                 {"val_hr10", e.val_hr10},
                 {"val_ndcg10", e.val_ndcg10}});
  }
  return h;
}

std::string checkpoint_metadata(const RunConfig& config, const PhaseReport& r) {
  json meta;
  meta["format"] = 1;
  meta["phase"] = std::string(to_string(r.phase));
  meta["seed"] = config.train.seed;
  meta["best_epoch"] = r.best_epoch;
  meta["best_val_ndcg10"] = r.best_val_ndcg;
  meta["stopped_early"] = r.stopped_early;
  meta["history"] = history_json(r);
  meta["config"] = json::parse(resolved_config_json(config));
  return meta.dump();
}

Dtype checkpoint_dtype(const RunConfig& config) {
  return config.train.precision == Precision::f32 ? Dtype::f32 : Dtype::f64;
}

std::filesystem::path in_run(const RunConfig& config, const char* name) { return config.run_dir / name; }

void require_file(const std::filesystem::path& p, const char* what) {
  if (!std::filesystem::exists(p)) throw DataError(std::string(what) + " not found: " + p.string());
}

Tensor table_of(PadModel& model, Phase phase) {
  return phase == Phase::pretrain ? model.collab_rec().value : model.collab_align().value;
}

Tensor text_side(PadModel& model, Phase phase, std::string& source) {
  if (phase == Phase::pretrain) {
    source = "text";
    return model.text().value;
  }
  source = "mlp_align(text)";
  std::vector<std::size_t> all(model.config().vocab);
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  Tape tape;
  return model.aligned_text(tape, all).value();
}

void write_text_file(const std::filesystem::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << body << '\n';
  if (!out) throw DataError("write failed for " + path.string());
}

}  // namespace

Workspace load_workspace(const RunConfig& config) {
  if (config.interactions.empty()) throw ConfigError("data.interactions is not set");
  if (config.text_embeddings.empty() || config.text_index.empty()) {
    throw ConfigError("data.text_embeddings and data.text_index must be set");
  }
  SplitDataset data = preprocess_split(load_tsv(config.interactions), config.preprocess);
  const AlignedText aligned =
      load_text_embeddings(config.text_embeddings, config.text_index, data.vocabulary(), config.missing_text);
  return finish_workspace(config, std::move(data), aligned);
}

Workspace make_workspace(const RunConfig& config, const InteractionLog& log, const TextEmbeddingFile& text) {
  SplitDataset data = preprocess_split(log, config.preprocess);
  const AlignedText aligned = align_text_embeddings(text, data.vocabulary(), config.missing_text);
  return finish_workspace(config, std::move(data), aligned);
}

ModelConfig resolve_model_config(const RunConfig& config, const Workspace& ws) {
  ModelConfig m = config.model;
  m.vocab = ws.data.item_count();
  if (m.text_dim != 0 && m.text_dim != ws.text.cols()) {
    throw DataError("model.text_dim = " + std::to_string(m.text_dim) + " but the text embeddings have dimension " +
                    std::to_string(ws.text.cols()));
  }
  m.text_dim = ws.text.cols();
  m.encoder.dim = m.collab_dim;
  m.encoder.max_len = config.preprocess.max_len;
  return m;
}

std::unique_ptr<PadModel> make_model(const RunConfig& config, const Workspace& ws) {
  auto model = std::make_unique<PadModel>(resolve_model_config(config, ws), derive_seed(config.train.seed, "init"));
  model->set_text(ws.text);
  model->set_buckets(ws.buckets);
  return model;
}

RunLock::RunLock(const std::filesystem::path& dir) : path_(dir / ".lock") {
  std::filesystem::create_directories(dir);
  std::FILE* f = std::fopen(path_.c_str(), "wx");
  if (!f) {
    throw std::runtime_error("run directory " + dir.string() + " is locked by another process (remove " +
                             path_.string() + " if it is stale)");
  }
  std::fclose(f);
}

RunLock::~RunLock() {
  std::error_code ec;
  std::filesystem::remove(path_, ec);
}

std::string epoch_json(const EpochRecord& rec) {
  return json{{"phase", rec.phase},
              {"epoch", rec.epoch},
              {"loss", rec.loss},
              {"loss_bce", rec.loss_bce},
              {"loss_mmd", rec.loss_mmd},
              {"val_hr10", rec.val_hr10},
              {"val_ndcg10", rec.val_ndcg10},
              {"wall_seconds", rec.wall_seconds}}
      .dump();
}

Phase load_model(PadModel& model, const std::filesystem::path& path) {
  require_file(path, "checkpoint");
  const Checkpoint ckpt = load_checkpoint(path);
  restore(model, ckpt);
  try {
    return parse_phase(json::parse(ckpt.metadata).at("phase").get<std::string>());
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": malformed checkpoint metadata: " + e.what());
  }
}

std::vector<Expert> evaluation_experts(Phase phase, const TrainConfig& config) { return phase_experts(phase, config); }

PhaseRun run_pretrain(const RunConfig& config, const Workspace& ws, const EpochSink& sink) {
  auto model = make_model(config, ws);
  PhaseRun run;
  run.report = train_phase(*model, ws.data, Phase::pretrain, config.train, sink);
  run.checkpoint = in_run(config, "pretrain.ckpt");
  std::filesystem::create_directories(config.run_dir);
  save_checkpoint(run.checkpoint, snapshot(*model, checkpoint_dtype(config), checkpoint_metadata(config, run.report)));
  return run;
}

PhaseRun run_align(const RunConfig& config, const Workspace& ws, const EpochSink& sink) {
  auto model = make_model(config, ws);
  load_model(*model, in_run(config, "pretrain.ckpt"));
  initialize_alignment_expert(*model);
  PhaseRun run;
  run.report = train_phase(*model, ws.data, Phase::align, config.train, sink);
  run.checkpoint = in_run(config, "align.ckpt");
  save_checkpoint(run.checkpoint, snapshot(*model, checkpoint_dtype(config), checkpoint_metadata(config, run.report)));
  return run;
}

PhaseRun run_finetune(const RunConfig& config, const Workspace& ws, const EpochSink& sink) {
  auto model = make_model(config, ws);
  const auto pre = in_run(config, "pretrain.ckpt");
  const auto ali = in_run(config, "align.ckpt");
  require_file(pre, "pretrain checkpoint");
  require_file(ali, "align checkpoint");
  restore(*model, load_checkpoint(pre), model->group(ParamGroup::id));
  restore(*model, load_checkpoint(ali), model->group(ParamGroup::align));
  PhaseRun run;
  run.report = train_phase(*model, ws.data, Phase::finetune, config.train, sink);
  run.checkpoint = in_run(config, "final.ckpt");
  save_checkpoint(run.checkpoint, snapshot(*model, checkpoint_dtype(config), checkpoint_metadata(config, run.report)));
  return run;
}

RankReport evaluate_checkpoint(const RunConfig& config, const Workspace& ws, const std::filesystem::path& ckpt,
                               Split split) {
  auto model = make_model(config, ws);
  const Phase phase = load_model(*model, ckpt);
  const CatalogScorer scorer(*model, evaluation_experts(phase, config.train), config.train.gating);
  return evaluate(scorer, ws.data, ws.buckets, split, config.train.eval_k, config.train.threads);
}

PipelineResult run_pipeline(const RunConfig& config, const Workspace& ws, const EpochSink& sink) {
  PipelineResult res;
  res.pretrain = run_pretrain(config, ws, sink);
  res.align = run_align(config, ws, sink);
  res.finetune = run_finetune(config, ws, sink);
  res.baseline = evaluate_checkpoint(config, ws, res.pretrain.checkpoint);
  res.final = evaluate_checkpoint(config, ws, res.finetune.checkpoint);

  auto before = make_model(config, ws);
  load_model(*before, res.pretrain.checkpoint);
  auto after = make_model(config, ws);
  load_model(*after, res.align.checkpoint);
  const auto pairs = behavior_target_pairs(ws.data);
  res.alignment_kt = bucketed_kt(before->collab_rec().value, after->collab_align().value, pairs, ws.buckets);

  auto final_model = make_model(config, ws);
  load_model(*final_model, res.finetune.checkpoint);
  json pair_section = nullptr;
  if (pairs.size() >= 20) {
    std::string source;
    const Tensor text = text_side(*final_model, Phase::finetune, source);
    pair_section = pairs_json(top_bottom_pair_analysis(final_model->collab_align().value, text, pairs));
    pair_section["text_source"] = source;
  }

  json epoch_align = json::array();
  for (const auto& e : res.align.report.history) epoch_align.push_back(e.loss_mmd);
  json report;
  report["baseline_test"] = rank_json(res.baseline);
  report["test"] = rank_json(res.final);
  report["best_validation_ndcg"] = {{"pretrain", res.pretrain.report.best_val_ndcg},
                                    {"align", res.align.report.best_val_ndcg},
                                    {"finetune", res.finetune.report.best_val_ndcg}};
  report["best_epoch"] = {{"pretrain", res.pretrain.report.best_epoch},
                          {"align", res.align.report.best_epoch},
                          {"finetune", res.finetune.report.best_epoch}};
  report["alignment"] = {{"variant", std::string(to_string(config.train.variant))},
                         {"loss", std::string(to_string(config.train.align_loss))},
                         {"first_batch", res.align.report.first_batch_alignment ? json(*res.align.report.first_batch_alignment)
                                                                                : json(nullptr)},
                         {"epoch_mean", epoch_align},
                         {"kendall_tau", kt_json(res.alignment_kt)}};
  report["gate"] = gate_json(res.finetune.report.gate);
  report["pair_analysis"] = pair_section;
  res.report_json = report.dump(2);
  write_text_file(in_run(config, "report.json"), res.report_json);
  return res;
}

DiagnoseResult diagnose(const RunConfig& config, const Workspace& ws, const std::filesystem::path& before,
                        const std::filesystem::path& after, const std::filesystem::path& out_dir) {
  auto m_before = make_model(config, ws);
  auto m_after = make_model(config, ws);
  const Phase p_before = load_model(*m_before, before);
  const Phase p_after = load_model(*m_after, after);
  const auto pairs = behavior_target_pairs(ws.data);

  DiagnoseResult res;
  res.kt = bucketed_kt(table_of(*m_before, p_before), table_of(*m_after, p_after), pairs, ws.buckets);
  std::string source;
  const Tensor text = text_side(*m_after, p_after, source);
  res.pairs = top_bottom_pair_analysis(table_of(*m_after, p_after), text, pairs);
  const CatalogScorer scorer(*m_after, evaluation_experts(p_after, config.train), config.train.gating);
  res.rank = evaluate(scorer, ws.data, ws.buckets, Split::test, config.train.eval_k, config.train.threads);

  json report = json::parse(diagnostics_json(res.rank, res.kt, res.pairs));
  report["tables"] = {{"before", p_before == Phase::pretrain ? "collab_rec" : "collab_align"},
                      {"after", p_after == Phase::pretrain ? "collab_rec" : "collab_align"},
                      {"text_source", source}};
  res.report_json = report.dump(2);
  std::filesystem::create_directories(out_dir);
  write_text_file(out_dir / "report.json", res.report_json);
  write_pairs_csv(out_dir / "pairs.csv", pairs, res.pairs, ws.data.vocabulary());
  return res;
}

AblationVariant parse_ablation_variant(const std::string& spec) {
  AblationVariant v;
  std::string id;
  std::size_t start = 0;
  while (start <= spec.size()) {
    const auto end = spec.find(';', start);
    const std::string part = spec.substr(start, end == std::string::npos ? std::string::npos : end - start);
    start = end == std::string::npos ? spec.size() + 1 : end + 1;
    if (part.empty()) continue;
    const auto eq = part.find('=');
    if (eq == std::string::npos) throw ConfigError("ablation variant '" + part + "': expected name=value");
    const std::string name = part.substr(0, eq), value = part.substr(eq + 1);
    try {
      if (name == "align") {
        v.variant = parse_align_variant(value);
      } else if (name == "kernel") {
        v.kernel = parse_kernel_kind(value);
      } else if (name == "loss") {
        v.loss = parse_align_loss(value);
      } else if (name == "gating") {
        v.gating = parse_gating(value);
      } else if (name == "experts") {
        std::vector<Expert> ex;
        std::size_t s = 0;
        while (s <= value.size()) {
          const auto e = value.find('+', s);
          ex.push_back(parse_expert(value.substr(s, e == std::string::npos ? std::string::npos : e - s)));
          s = e == std::string::npos ? value.size() + 1 : e + 1;
        }
        v.experts = ex;
      } else {
        throw ConfigError("unknown ablation setting '" + name + "' (align, kernel, loss, experts, gating)");
      }
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError("ablation variant '" + spec + "': " + e.what());
    }
    id += (id.empty() ? "" : "__") + name + "-" + value;
  }
  if (id.empty()) throw ConfigError("empty ablation variant");
  for (char& c : id) {
    if (c == '+') c = '_';
  }
  v.id = id;
  return v;
}

std::vector<AblationRow> run_ablation(const RunConfig& config, const Workspace& ws,
                                      const std::vector<AblationVariant>& variants, bool from_scratch,
                                      const EpochSink& sink) {
  if (variants.empty()) throw ConfigError("ablate: no variants requested");
  RunConfig base = config;
  if (from_scratch) {
    base.run_dir = config.run_dir / "ablate" / "base";
    std::filesystem::create_directories(base.run_dir);
    run_pretrain(base, ws, sink);
    run_align(base, ws, sink);
  } else {
    require_file(in_run(base, "pretrain.ckpt"), "base pretrain checkpoint (run the pipeline first or pass --from-scratch)");
    require_file(in_run(base, "align.ckpt"), "base align checkpoint (run the pipeline first or pass --from-scratch)");
  }
  std::vector<AblationRow> rows;
  for (const AblationVariant& v : variants) {
    RunConfig vc = config;
    vc.run_dir = config.run_dir / "ablate" / v.id;
    std::filesystem::create_directories(vc.run_dir);
    if (v.variant) vc.train.variant = *v.variant;
    if (v.kernel) vc.train.kernel = *v.kernel;
    if (v.loss) vc.train.align_loss = *v.loss;
    if (v.experts) vc.train.experts = *v.experts;
    if (v.gating) vc.train.gating = *v.gating;
    vc.validate();
    std::filesystem::copy_file(in_run(base, "pretrain.ckpt"), in_run(vc, "pretrain.ckpt"),
                               std::filesystem::copy_options::overwrite_existing);
    if (v.variant || v.kernel || v.loss) {
      run_align(vc, ws, sink);
    } else {
      std::filesystem::copy_file(in_run(base, "align.ckpt"), in_run(vc, "align.ckpt"),
                                 std::filesystem::copy_options::overwrite_existing);
    }
    const PhaseRun fin = run_finetune(vc, ws, sink);
    rows.push_back({v.id, evaluate_checkpoint(vc, ws, fin.checkpoint)});
  }
  return rows;
}

void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  const std::size_t k = rows.empty() ? 10 : rows.front().report.k;
  const std::string hr = "hr" + std::to_string(k), nd = "ndcg" + std::to_string(k);
  out << "variant," << hr << ',' << nd;
  for (const char* s : {"warm", "median", "cold"}) out << ',' << s << '_' << hr << ',' << s << '_' << nd;
  out << '\n';
  out.precision(10);
  for (const auto& r : rows) {
    const auto& p = r.report;
    out << r.id << ',' << p.overall.hr << ',' << p.overall.ndcg << ',' << p.warm.hr << ',' << p.warm.ndcg << ','
        << p.median.hr << ',' << p.median.ndcg << ',' << p.cold.hr << ',' << p.cold.ndcg << '\n';
  }
  if (!out) throw DataError("write failed for " + path.string());
}

}  // namespace padrec
