#include "cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <optional>

#include "json.hpp"
#include "padrec/checkpoint.hpp"
#include "padrec/config.hpp"
#include "padrec/diagnostics.hpp"
#include "padrec/synthetic.hpp"
#include "padrec/text_embeddings.hpp"
#include "padrec/workflow.hpp"

namespace padrec::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string run_dir;
  std::optional<std::size_t> threads;
  std::string precision;
  std::vector<std::string> sets;
};

RunConfig resolve(const Globals& g) {
  RunConfig cfg;
  if (!g.config.empty()) cfg = load_config(g.config);
  if (g.seed) cfg.train.seed = *g.seed;
  if (!g.run_dir.empty()) cfg.run_dir = g.run_dir;
  if (g.threads) cfg.train.threads = *g.threads;
  if (!g.precision.empty()) set_config_value(cfg, "precision", g.precision);
  for (const auto& s : g.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    set_config_value(cfg, s.substr(0, eq), s.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

void write_file(const fs::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << body << '\n';
  if (!out) throw DataError("write failed for " + path.string());
}

// Prints each epoch and appends it to metrics.jsonl.
class MetricsLog {
 public:
  MetricsLog(const fs::path& dir, std::ostream& out) : file_(dir / "metrics.jsonl", std::ios::app), out_(out) {
    if (!file_) throw DataError("cannot open " + (dir / "metrics.jsonl").string());
  }
  EpochSink sink() {
    return [this](const EpochRecord& rec) {
      const std::string line = epoch_json(rec);
      out_ << line << std::endl;
      file_ << line << '\n';
      file_.flush();
    };
  }

 private:
  std::ofstream file_;
  std::ostream& out_;
};

// Shared setup of the commands that train or read a run directory.
struct Session {
  RunConfig config;
  RunLock lock;
  Workspace ws;
  MetricsLog metrics;

  Session(const Globals& g, std::ostream& out)
      : config(resolve(g)), lock(config.run_dir), ws(load_workspace(config)), metrics(config.run_dir, out) {
    write_file(config.run_dir / "resolved_config.json", resolved_config_json(config));
  }
};

int cmd_synth(const SyntheticOptions& o, const fs::path& out_dir, std::ostream& out) {
  const SyntheticWorld world = generate_synthetic(o);
  fs::create_directories(out_dir);
  write_tsv(out_dir / "interactions.tsv", world.log);
  write_text_embeddings(out_dir / "text.padv1", out_dir / "text.index", world.text);
  std::ofstream cold(out_dir / "cold_items.txt");
  for (const auto& c : world.cold_items) cold << c << '\n';
  if (!cold) throw DataError("write failed for " + (out_dir / "cold_items.txt").string());
  const fs::path abs = fs::absolute(out_dir);
  write_file(out_dir / "config.txt", "# generated by padrec synth\n"
                                     "data.interactions = " + (abs / "interactions.tsv").string() + "\n"
                                     "data.text_embeddings = " + (abs / "text.padv1").string() + "\n"
                                     "data.text_index = " + (abs / "text.index").string() + "\n"
                                     "seed = " + std::to_string(o.seed));
  out << json{{"interactions", world.log.records.size()},
              {"users", o.users},
              {"items", o.items},
              {"cold_items", world.cold_items.size()},
              {"out_dir", out_dir.string()}}
             .dump()
      << '\n';
  return 0;
}

int cmd_preprocess(const Globals& g, std::ostream& out) {
  const RunConfig cfg = resolve(g);
  RunLock lock(cfg.run_dir);
  const Workspace ws = load_workspace(cfg);
  write_file(cfg.run_dir / "resolved_config.json", resolved_config_json(cfg));
  const auto& freq = ws.data.train_frequency();
  std::size_t zero = 0;
  for (auto f : freq) zero += f == 0 ? 1 : 0;
  json bucket_sizes = json::array();
  std::vector<std::size_t> sizes(ws.buckets.bucket_count(), 0);
  for (auto b : ws.buckets.buckets()) ++sizes[b - 1];
  for (auto s : sizes) bucket_sizes.push_back(s);
  const json summary{{"users", ws.data.user_count()},
                     {"items", ws.data.item_count()},
                     {"items_without_training_occurrence", zero},
                     {"items_without_text", ws.missing_text.size()},
                     {"text_dim", ws.text.cols()},
                     {"bucket_sizes", bucket_sizes}};
  write_file(cfg.run_dir / "dataset.json", summary.dump(2));
  std::ofstream vocab(cfg.run_dir / "vocabulary.txt");
  for (const auto& v : ws.data.vocabulary()) vocab << v << '\n';
  out << summary.dump() << '\n';
  return 0;
}

int cmd_eval(const Globals& g, const std::string& ckpt, const std::string& split, std::ostream& out) {
  const RunConfig cfg = resolve(g);
  const Workspace ws = load_workspace(cfg);
  const fs::path path = ckpt.empty() ? cfg.run_dir / "final.ckpt" : fs::path(ckpt);
  Split s = Split::test;
  if (split == "validation") s = Split::validation;
  else if (split != "test") throw ConfigError("--split must be test or validation");
  const RankReport rep = evaluate_checkpoint(cfg, ws, path, s);
  const std::string body = rank_report_json(rep);
  out << body << '\n';
  if (fs::exists(cfg.run_dir)) write_file(cfg.run_dir / ("eval_" + split + ".json"), body);
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"padrec: three-phase sequential recommendation with text-aligned experts", "padrec"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "config file (key = value lines or JSON)");
  app.add_option("--seed", g.seed, "master seed");
  app.add_option("--run-dir", g.run_dir, "artifact directory");
  app.add_option("--threads", g.threads, "evaluation threads")->check(CLI::PositiveNumber);
  app.add_option("--precision", g.precision, "f64 or f32")->check(CLI::IsMember({"f32", "f64"}));
  app.add_option("--set", g.sets, "override one config key: key=value (repeatable)");

  SyntheticOptions so;
  std::string synth_out = "synthetic";
  auto* synth = app.add_subcommand("synth", "generate a seeded synthetic world");
  synth->add_option("--users", so.users)->check(CLI::PositiveNumber);
  synth->add_option("--items", so.items)->check(CLI::PositiveNumber);
  synth->add_option("--cold", so.cold);
  synth->add_option("--latent-dim", so.latent_dim)->check(CLI::PositiveNumber);
  synth->add_option("--text-dim", so.text_dim)->check(CLI::PositiveNumber);
  synth->add_option("--noise", so.noise, "text noise scale (1e6 makes text uninformative)");
  synth->add_option("--cold-test-fraction", so.cold_test_fraction)->check(CLI::Range(0.0, 1.0));
  synth->add_option("--out-dir", synth_out);

  auto* preprocess = app.add_subcommand("preprocess", "load, filter and split the data; write a summary");
  auto* pretrain = app.add_subcommand("pretrain", "phase 1: id expert with BCE");
  auto* align = app.add_subcommand("align", "phase 2: alignment expert from pretrain.ckpt");
  auto* finetune = app.add_subcommand("finetune", "phase 3: gated triple-expert model");
  auto* pipeline = app.add_subcommand("pipeline", "phases 1 to 3 plus report.json");

  std::string eval_ckpt, eval_split = "test";
  auto* eval = app.add_subcommand("eval", "whole-catalog HR@k / nDCG@k of a checkpoint");
  eval->add_option("--checkpoint", eval_ckpt, "defaults to <run-dir>/final.ckpt");
  eval->add_option("--split", eval_split, "test or validation");

  std::vector<std::string> ab_align, ab_kernel, ab_loss, ab_experts, ab_gating, ab_variant;
  bool from_scratch = false;
  auto* ablate = app.add_subcommand("ablate", "variant grid; writes ablation.csv");
  ablate->add_option("--align-variant", ab_align, "none, non_anchored, rec_anchored, rec_anchored_frozen");
  ablate->add_option("--kernel", ab_kernel, "gaussian, laplacian, linear, cosine");
  ablate->add_option("--loss", ab_loss, "mmd or infonce");
  ablate->add_option("--experts", ab_experts, "comma separated subset of id, align, llm");
  ablate->add_option("--gating", ab_gating, "frequency_aware or global_learned");
  ablate->add_option("--variant", ab_variant, "combined spec, e.g. 'align=non_anchored;kernel=laplacian'");
  ablate->add_flag("--from-scratch", from_scratch, "train fresh base checkpoints instead of reusing the run's");

  std::string before, after, diag_out;
  auto* diag = app.add_subcommand("diagnose", "Kendall's tau and pair-distance diagnostics");
  diag->add_option("--before", before, "defaults to <run-dir>/pretrain.ckpt");
  diag->add_option("--after", after, "defaults to <run-dir>/align.ckpt");
  diag->add_option("--out-dir", diag_out, "defaults to <run-dir>/diagnose");

  for (auto* sub : {synth, preprocess, pretrain, align, finetune, pipeline, eval, ablate, diag}) sub->fallthrough();

  try {
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }

  try {
    if (synth->parsed()) {
      so.seed = g.seed.value_or(0);
      return cmd_synth(so, synth_out, out);
    }
    if (preprocess->parsed()) return cmd_preprocess(g, out);
    if (eval->parsed()) return cmd_eval(g, eval_ckpt, eval_split, out);

    if (diag->parsed()) {
      const RunConfig cfg = resolve(g);
      const Workspace ws = load_workspace(cfg);
      const fs::path b = before.empty() ? cfg.run_dir / "pretrain.ckpt" : fs::path(before);
      const fs::path a = after.empty() ? cfg.run_dir / "align.ckpt" : fs::path(after);
      const fs::path o = diag_out.empty() ? cfg.run_dir / "diagnose" : fs::path(diag_out);
      const DiagnoseResult res = diagnose(cfg, ws, b, a, o);
      out << kt_report_json(res.kt) << '\n';
      return 0;
    }

    if (ablate->parsed()) {
      std::vector<AblationVariant> variants;
      for (const auto& v : ab_align) variants.push_back(parse_ablation_variant("align=" + v));
      for (const auto& v : ab_kernel) variants.push_back(parse_ablation_variant("kernel=" + v));
      for (const auto& v : ab_loss) variants.push_back(parse_ablation_variant("loss=" + v));
      for (auto v : ab_experts) {
        std::replace(v.begin(), v.end(), ',', '+');
        variants.push_back(parse_ablation_variant("experts=" + v));
      }
      for (const auto& v : ab_gating) variants.push_back(parse_ablation_variant("gating=" + v));
      for (const auto& v : ab_variant) variants.push_back(parse_ablation_variant(v));
      Session s(g, out);
      const auto rows = run_ablation(s.config, s.ws, variants, from_scratch, s.metrics.sink());
      write_ablation_csv(s.config.run_dir / "ablation.csv", rows);
      for (const auto& r : rows) {
        out << json{{"variant", r.id}, {"hr", r.report.overall.hr}, {"ndcg", r.report.overall.ndcg},
                    {"cold_ndcg", r.report.cold.ndcg}}.dump()
            << '\n';
      }
      return 0;
    }

    Session s(g, out);
    if (pretrain->parsed()) run_pretrain(s.config, s.ws, s.metrics.sink());
    if (align->parsed()) run_align(s.config, s.ws, s.metrics.sink());
    if (finetune->parsed()) run_finetune(s.config, s.ws, s.metrics.sink());
    if (pipeline->parsed()) {
      const PipelineResult res = run_pipeline(s.config, s.ws, s.metrics.sink());
      out << json{{"baseline_test_ndcg", res.baseline.overall.ndcg},
                  {"test_ndcg", res.final.overall.ndcg},
                  {"test_hr", res.final.overall.hr},
                  {"cold_ndcg", res.final.cold.ndcg},
                  {"baseline_cold_ndcg", res.baseline.cold.ndcg}}.dump()
          << '\n';
    }
    return 0;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace padrec::cli
