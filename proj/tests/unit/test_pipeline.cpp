#include <chrono>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "padrec/checkpoint.hpp"
#include "padrec/config.hpp"
#include "padrec/seeds.hpp"
#include "padrec/synthetic.hpp"
#include "padrec/workflow.hpp"

#ifdef PADREC_HAVE_CLI
#include "cli.hpp"
#endif

using namespace padrec;
using namespace padrec::test;

namespace {

RunConfig small_config() {
  RunConfig c;
  c.model.collab_dim = 8;
  c.model.mlp_hidden = 8;
  c.model.encoder.layers = 1;
  c.model.encoder.heads = 2;
  c.model.buckets = 4;
  c.model.bucket_dim = 3;
  c.model.gate_hidden = 4;
  c.preprocess.max_len = 8;
  c.model.text_dim = 0;
  c.train.pretrain_epochs = 2;
  c.train.align_epochs = 2;
  c.train.finetune_epochs = 2;
  c.train.seed = 11;
  return c;
}

SyntheticWorld small_world(std::uint64_t seed) {
  SyntheticOptions o;
  o.seed = seed;
  o.users = 150;
  o.items = 40;
  o.cold = 4;
  o.latent_dim = 4;
  o.text_dim = 8;
  o.max_len = 12;
  return generate_synthetic(o);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::map<std::string, std::uint64_t> checksums(PadModel& m) {
  std::map<std::string, std::uint64_t> out;
  for (Parameter* p : m.all_parameters()) out[p->name] = checksum(p->value);
  return out;
}

// pretrained model restored from `ckpt` with the align expert initialized
std::unique_ptr<PadModel> align_start(const RunConfig& cfg, const Workspace& ws, const Checkpoint& ckpt) {
  auto m = make_model(cfg, ws);
  restore(*m, ckpt);
  initialize_alignment_expert(*m);
  return m;
}

}  // namespace

TEST_CASE("negative sampling") {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 200; ++i) CHECK(negative_sample(rng, 0, 2) == 1);
  CHECK_THROWS_AS(negative_sample(rng, 0, 1), std::invalid_argument);
  CHECK_THROWS_AS(negative_sample(rng, 0, 0), std::invalid_argument);

  // chi-square goodness of fit over the 9 admissible ids, 8 dof; 20.09 is the p = 0.01 quantile
  constexpr std::size_t catalog = 10, positive = 3, draws = 100000;
  std::vector<double> counts(catalog, 0.0);
  for (std::size_t i = 0; i < draws; ++i) ++counts[negative_sample(rng, positive, catalog)];
  CHECK(counts[positive] == 0.0);
  const double expected = static_cast<double>(draws) / (catalog - 1);
  double chi2 = 0;
  for (std::size_t v = 0; v < catalog; ++v) {
    if (v == positive) continue;
    chi2 += (counts[v] - expected) * (counts[v] - expected) / expected;
  }
  CHECK(chi2 < 20.09);
}

TEST_CASE("early stopping") {
  EarlyStopper s(2);
  CHECK_FALSE(s.update(5));
  CHECK_FALSE(s.update(4));
  CHECK(s.update(4));
  CHECK(s.best_epoch() == 1);
  CHECK(s.epochs() == 3);

  EarlyStopper up(1);
  for (int e = 0; e < 50; ++e) CHECK_FALSE(up.update(e));
  CHECK(up.best_epoch() == 50);

  EarlyStopper one(1);
  CHECK_FALSE(one.update(0.3));
  CHECK(one.best_epoch() == 1);

  // earliest maximum wins on ties
  EarlyStopper tie(3);
  tie.update(1);
  tie.update(2);
  tie.update(2);
  CHECK(tie.best_epoch() == 2);
  CHECK_THROWS_AS(EarlyStopper(0), std::invalid_argument);
}

TEST_CASE("seed derivation") {
  CHECK(splitmix64(0) == 0xe220a8397b1dcdafULL);
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(derive_seed(7, "init") == splitmix64(7 ^ fnv1a64("init")));
  CHECK(derive_seed(7, "init") == derive_seed(7, "init"));
  CHECK(derive_seed(7, "init") != derive_seed(7, "dropout"));
  CHECK(derive_seed(7, "init") != derive_seed(8, "init"));
}

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  auto bad = [&](auto mutate) {
    TrainConfig t;
    mutate(t);
    CHECK_THROWS_AS(t.validate(), std::invalid_argument);
  };
  bad([](TrainConfig& t) { t.gamma = -0.1; });
  bad([](TrainConfig& t) { t.batch_size = 0; });
  bad([](TrainConfig& t) { t.patience = 0; });
  bad([](TrainConfig& t) { t.experts.clear(); });
  bad([](TrainConfig& t) { t.betas = {1.0, 2.0}; });
  bad([](TrainConfig& t) { t.bandwidths.clear(); });
  CHECK(phase_experts(Phase::pretrain, c) == std::vector<Expert>{Expert::id});
  CHECK(phase_experts(Phase::align, c) == std::vector<Expert>{Expert::align});
  CHECK(phase_experts(Phase::finetune, c).size() == 3);
}

TEST_CASE("epoch batches") {
  const RunConfig cfg = small_config();
  const auto world = small_world(1);
  const Workspace ws = make_workspace(cfg, world.log, world.text);
  std::mt19937_64 a(1), b(2);
  const auto batches = make_epoch_batches(ws.data, 16, 8, a, b);
  std::size_t examples = 0;
  for (const auto& batch : batches) {
    CHECK(batch.sequences.size() <= 16);
    // positives first, then one negative per positive for the same owner
    const std::size_t n = batch.sequences.size();
    CHECK(batch.targets.size() == 2 * n);
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(batch.labels[i] == 1.0);
      CHECK(batch.labels[n + i] == 0.0);
      CHECK(batch.owner[i] == i);
      CHECK(batch.owner[n + i] == i);
      CHECK(batch.targets[i] != batch.targets[n + i]);
    }
    for (const auto& s : batch.sequences) {
      CHECK_FALSE(s.empty());
      CHECK(s.size() <= 8);
    }
    examples += batch.sequences.size();
  }
  CHECK(examples == ws.data.user_count());
}

TEST_CASE("alignment loss decomposition") {
  RunConfig cfg = small_config();
  const auto world = small_world(2);
  const Workspace ws = make_workspace(cfg, world.log, world.text);
  auto m = make_model(cfg, ws);
  initialize_alignment_expert(*m);
  std::mt19937_64 a(3), b(4);
  const Batch batch = make_epoch_batches(ws.data, 16, 8, a, b).front();

  auto parts_for = [&](AlignVariant v, double gamma, AlignLoss loss = AlignLoss::mmd) {
    TrainConfig t = cfg.train;
    t.variant = v;
    t.gamma = gamma;
    t.align_loss = loss;
    Tape tape;
    const LossParts p = phase_loss(tape, *m, batch, Phase::align, t);
    return std::array<double, 3>{p.total.value().item(), p.bce.value().item(), p.alignment->value().item()};
  };

  const auto r = parts_for(AlignVariant::rec_anchored, 0.2);
  CHECK(r[2] > 0.0);
  CHECK(std::fabs(r[0] - (r[1] + 0.2 * r[2])) < 1e-10);
  const auto none = parts_for(AlignVariant::none, 0.2);
  CHECK(none[0] == none[1]);
  const auto non = parts_for(AlignVariant::non_anchored, 0.2);
  CHECK(std::fabs(non[0] - 0.2 * non[2]) < 1e-10);
  const auto frozen = parts_for(AlignVariant::rec_anchored_frozen, 0.2);
  CHECK(std::fabs(frozen[0] - r[0]) < 1e-12);
  const auto nce = parts_for(AlignVariant::rec_anchored, 0.2, AlignLoss::infonce);
  CHECK(std::fabs(nce[0] - (nce[1] + 0.2 * nce[2])) < 1e-10);

  // larger gamma, larger initial loss
  double prev = parts_for(AlignVariant::rec_anchored, 0.0)[0];
  for (double g : {0.05, 0.2, 0.5, 1.0}) {
    const double cur = parts_for(AlignVariant::rec_anchored, g)[0];
    CHECK(cur > prev);
    prev = cur;
  }

  // other phases: BCE only, no alignment term
  Tape tape;
  const LossParts pre = phase_loss(tape, *m, batch, Phase::pretrain, cfg.train);
  CHECK_FALSE(pre.alignment.has_value());
  CHECK(pre.total.value().item() == pre.bce.value().item());
}

TEST_CASE("training loss decreases on a 20-user toy set") {
  const InteractionLog log = toy_log(20, 40, 0);
  TextEmbeddingFile text;
  for (int i = 0; i < 40; ++i) text.ids.push_back("i" + std::to_string(i));
  text.values = random_tensor({40, 6}, 1);
  RunConfig cfg;
  cfg.model.text_dim = 0;
  cfg.train.seed = 0;
  cfg.train.optimizer.lr = 1e-3;
  cfg.train.pretrain_epochs = 3;
  const Workspace ws = make_workspace(cfg, log, text);
  REQUIRE(ws.data.user_count() == 20);
  auto m = make_model(cfg, ws);

  // The per-epoch minibatch mean resamples targets, negatives and dropout every
  // epoch, and with two steps per epoch that noise is larger than the progress.
  // The objective on the fixed training tasks (one fixed negative each) is
  // measured instead, after every epoch.
  Batch fixed;
  std::mt19937_64 rng(1);
  const std::size_t n = ws.data.user_count();
  for (std::size_t u = 0; u < n; ++u) {
    const auto t = ws.data.task(u, Split::train);
    fixed.sequences.emplace_back(t.behaviors.begin(), t.behaviors.end());
    fixed.targets.push_back(t.target);
    fixed.owner.push_back(u);
    fixed.labels.push_back(1.0);
  }
  for (std::size_t u = 0; u < n; ++u) {
    fixed.targets.push_back(negative_sample(rng, fixed.targets[u], ws.data.item_count()));
    fixed.owner.push_back(u);
    fixed.labels.push_back(0.0);
  }
  auto objective = [&] {
    Tape tape;
    return phase_loss(tape, *m, fixed, Phase::pretrain, cfg.train).total.value().item();
  };
  std::vector<double> losses{objective()};
  const PhaseReport rep = train_phase(*m, ws.data, Phase::pretrain, cfg.train,
                                      [&](const EpochRecord&) { losses.push_back(objective()); });
  REQUIRE(rep.history.size() == 3);
  REQUIRE(losses.size() == 4);
  for (std::size_t e = 1; e < losses.size(); ++e) CHECK_MESSAGE(losses[e] < losses[e - 1], "epoch " << e);
}

TEST_CASE("checkpoint round trip and corruption") {
  const RunConfig cfg = small_config();
  const auto world = small_world(3);
  const Workspace ws = make_workspace(cfg, world.log, world.text);
  auto m = make_model(cfg, ws);
  train_phase(*m, ws.data, Phase::pretrain, cfg.train);

  const Checkpoint ck = snapshot(*m, Dtype::f64, R"({"phase":"pretrain"})");
  const std::string bytes = serialize_checkpoint(ck);
  CHECK(bytes.substr(0, 8) == "PADCKPT1");
  const Checkpoint back = parse_checkpoint(bytes);
  CHECK(serialize_checkpoint(back) == bytes);
  CHECK(back.metadata == ck.metadata);
  REQUIRE(back.sections.size() == ck.sections.size());
  for (std::size_t i = 0; i < ck.sections.size(); ++i) {
    CHECK(back.sections[i].name == ck.sections[i].name);
    CHECK(back.sections[i].value == ck.sections[i].value);
  }

  const auto dir = scratch_dir("ckpt");
  save_checkpoint(dir / "a.ckpt", ck);
  CHECK(slurp(dir / "a.ckpt") == bytes);
  auto reloaded = make_model(cfg, ws);
  restore(*reloaded, load_checkpoint(dir / "a.ckpt"));
  CHECK(checksums(*reloaded) == checksums(*m));
  CHECK(validation_ndcg(*reloaded, ws.data, {Expert::id}, cfg.train) ==
        validation_ndcg(*m, ws.data, {Expert::id}, cfg.train));

  // f32 sections hold float-rounded values
  const Checkpoint f32 = parse_checkpoint(serialize_checkpoint(snapshot(*m, Dtype::f32, "{}")));
  const auto* rec = f32.find("collab_rec");
  REQUIRE(rec != nullptr);
  CHECK(rec->dtype == Dtype::f32);
  const auto& orig = m->collab_rec().value.values();
  for (std::size_t i = 0; i < orig.size(); ++i) CHECK(rec->value.values()[i] == static_cast<double>(static_cast<float>(orig[i])));

  CHECK_THROWS(parse_checkpoint(bytes.substr(0, bytes.size() - 1)));
  CHECK_THROWS(parse_checkpoint(bytes.substr(0, 20)));
  CHECK_THROWS(parse_checkpoint(bytes + "x"));
  std::string bad = bytes;
  bad[3] = 'X';
  CHECK_THROWS(parse_checkpoint(bad));
  CHECK_THROWS(parse_checkpoint(""));
  CHECK_THROWS(load_checkpoint(dir / "missing.ckpt"));

  Checkpoint extra = ck;
  extra.sections.push_back({"bogus.table", Dtype::f64, Tensor::matrix(1, 1, {1.0})});
  CHECK_THROWS(restore(*reloaded, extra));
  Checkpoint wrong = ck;
  for (auto& s : wrong.sections)
    if (s.name == "collab_rec") s.value = Tensor::matrix(1, 1, {0.0});
  CHECK_THROWS(restore(*reloaded, wrong));

  // `only` applies a subset
  auto fresh = make_model(cfg, ws);
  const auto before = checksums(*fresh);
  std::vector<Parameter*> only{&fresh->collab_rec()};
  restore(*fresh, ck, only);
  const auto after = checksums(*fresh);
  for (const auto& [name, sum] : after) {
    if (name == "collab_rec") CHECK(sum == checksum(m->collab_rec().value));
    else CHECK(sum == before.at(name));
  }
}

TEST_CASE("alignment variants") {
  RunConfig cfg = small_config();
  const auto world = small_world(4);
  const Workspace ws = make_workspace(cfg, world.log, world.text);
  auto pre = make_model(cfg, ws);
  train_phase(*pre, ws.data, Phase::pretrain, cfg.train);
  const Checkpoint ck = snapshot(*pre, Dtype::f64, "{}");

  SUBCASE("zero gamma matches no alignment") {
    TrainConfig none = cfg.train, zero = cfg.train;
    none.variant = AlignVariant::none;
    zero.variant = AlignVariant::rec_anchored;
    zero.gamma = 0.0;
    auto a = align_start(cfg, ws, ck);
    auto b = align_start(cfg, ws, ck);
    const auto ra = train_phase(*a, ws.data, Phase::align, none);
    const auto rb = train_phase(*b, ws.data, Phase::align, zero);
    REQUIRE(ra.history.size() == rb.history.size());
    for (std::size_t e = 0; e < ra.history.size(); ++e) {
      CHECK(ra.history[e].loss == rb.history[e].loss);
      CHECK(ra.history[e].loss_bce == rb.history[e].loss_bce);
      CHECK(ra.history[e].val_ndcg10 == rb.history[e].val_ndcg10);
    }
    CHECK(serialize_checkpoint(snapshot(*a, Dtype::f64, "")) == serialize_checkpoint(snapshot(*b, Dtype::f64, "")));
  }

  SUBCASE("frozen variant leaves both collaborative tables untouched") {
    TrainConfig t = cfg.train;
    t.variant = AlignVariant::rec_anchored_frozen;
    auto m = align_start(cfg, ws, ck);
    const auto rec = checksum(m->collab_rec().value), ali = checksum(m->collab_align().value);
    const auto enc_before = checksum(m->find("enc_align.l0.wq")->value);
    train_phase(*m, ws.data, Phase::align, t);
    CHECK(checksum(m->collab_rec().value) == rec);
    CHECK(checksum(m->collab_align().value) == ali);
    // the rest of the align expert still learns
    CHECK(checksum(m->find("enc_align.l0.wq")->value) != enc_before);
  }

  SUBCASE("anchored alignment moves collab_align") {
    auto m = align_start(cfg, ws, ck);
    const auto rec = checksum(m->collab_rec().value), ali = checksum(m->collab_align().value);
    const auto rep = train_phase(*m, ws.data, Phase::align, cfg.train);
    CHECK(checksum(m->collab_rec().value) == rec);
    CHECK(checksum(m->collab_align().value) != ali);
    REQUIRE(rep.first_batch_alignment.has_value());
    CHECK(*rep.first_batch_alignment > 0.0);
    CHECK(rep.best_epoch == rep.history.size());
  }
}

TEST_CASE("aligned expert starts as the id expert") {
  const RunConfig cfg = small_config();
  const auto world = small_world(5);
  const Workspace ws = make_workspace(cfg, world.log, world.text);
  auto m = make_model(cfg, ws);
  train_phase(*m, ws.data, Phase::pretrain, cfg.train);
  initialize_alignment_expert(*m);
  CHECK(m->collab_align().value == m->collab_rec().value);
  const std::vector<std::vector<std::size_t>> seqs{{1, 2, 3}, {4}, {5, 6, 7, 8, 9}};
  const Tensor id = CatalogScorer(*m, {Expert::id}, GatingMode::frequency_aware).score(seqs);
  const Tensor al = CatalogScorer(*m, {Expert::align}, GatingMode::frequency_aware).score(seqs);
  for (std::size_t i = 0; i < id.values().size(); ++i) CHECK(al.values()[i] == doctest::Approx(id.values()[i]).epsilon(1e-12));
}

TEST_CASE("fine-tune phase") {
  RunConfig cfg = small_config();
  const auto world = small_world(6);
  const Workspace ws = make_workspace(cfg, world.log, world.text);
  auto m = make_model(cfg, ws);
  const auto text = checksum(m->text().value);
  train_phase(*m, ws.data, Phase::pretrain, cfg.train);
  CHECK(checksum(m->text().value) == text);
  initialize_alignment_expert(*m);
  train_phase(*m, ws.data, Phase::align, cfg.train);
  CHECK(checksum(m->text().value) == text);
  const Checkpoint ck = snapshot(*m, Dtype::f64, "{}");

  SUBCASE("full mask with frequency-aware gating") {
    const auto rep = train_phase(*m, ws.data, Phase::finetune, cfg.train);
    CHECK(checksum(m->text().value) == text);
    CHECK(rep.gate.rows > 0);
    CHECK(rep.gate.min_weight >= 0.0);
    CHECK(rep.gate.max_sum_error < 1e-6);
    CHECK(rep.gate.max_bucket_spread() > 0.0);
    CHECK(rep.best_epoch >= 1);
    CHECK(rep.best_epoch <= rep.history.size());
  }

  SUBCASE("id-only mask reduces to the collaborative model") {
    TrainConfig t = cfg.train;
    t.experts = {Expert::id};
    const auto params = phase_parameters(*m, Phase::finetune, t);
    CHECK(params == m->group(ParamGroup::id));
    const auto before = checksums(*m);
    const auto rep = train_phase(*m, ws.data, Phase::finetune, t);
    CHECK(rep.gate.rows == 0);
    std::set<std::string> id_names;
    for (Parameter* p : m->group(ParamGroup::id)) id_names.insert(p->name);
    for (const auto& [name, sum] : checksums(*m))
      if (!id_names.count(name)) CHECK_MESSAGE(sum == before.at(name), name);
    // identical to fine-tuning a model that only ever held the pretrain weights
    auto plain = make_model(cfg, ws);
    restore(*plain, ck, plain->group(ParamGroup::id));
    const auto rep2 = train_phase(*plain, ws.data, Phase::finetune, t);
    REQUIRE(rep2.history.size() == rep.history.size());
    for (std::size_t e = 0; e < rep.history.size(); ++e) CHECK(rep.history[e].val_ndcg10 == rep2.history[e].val_ndcg10);
    CHECK(checksum(plain->collab_rec().value) == checksum(m->collab_rec().value));
  }

  SUBCASE("global gating") {
    TrainConfig t = cfg.train;
    t.gating = GatingMode::global_learned;
    const auto params = phase_parameters(*m, Phase::finetune, t);
    CHECK(std::find(params.begin(), params.end(), &m->global_gate()) != params.end());
    CHECK(std::find(params.begin(), params.end(), &m->bucket_embedding()) == params.end());
    const auto rep = train_phase(*m, ws.data, Phase::finetune, t);
    CHECK(rep.gate.max_sum_error < 1e-6);
  }
}

TEST_CASE("config parsing") {
  RunConfig c;
  apply_config_text(c, "# comment\ntrain.gamma = 0.5\n\nfinetune.experts = id, llm\nkernel.kind = laplacian\n");
  CHECK(c.train.gamma == 0.5);
  CHECK(c.train.experts == std::vector<Expert>{Expert::id, Expert::llm});
  CHECK(c.train.kernel == KernelKind::laplacian);
  apply_config_text(c, R"({"train": {"batch_size": 4}, "align.variant": "non_anchored"})");
  CHECK(c.train.batch_size == 4);
  CHECK(c.train.variant == AlignVariant::non_anchored);

  CHECK_THROWS_AS(set_config_value(c, "train.gama", "1"), ConfigError);
  CHECK_THROWS_AS(set_config_value(c, "train.gamma", "abc"), ConfigError);
  CHECK_THROWS_AS(apply_config_text(c, "train.gamma 0.1\n"), ConfigError);
  CHECK_THROWS_AS(set_config_value(c, "finetune.experts", "id,bogus"), ConfigError);

  RunConfig neg;
  set_config_value(neg, "train.gamma", "-1");
  CHECK_THROWS_AS(neg.validate(), ConfigError);
  RunConfig empty_mask;
  set_config_value(empty_mask, "finetune.experts", "");
  CHECK_THROWS_AS(empty_mask.validate(), ConfigError);

  // the resolved document reproduces itself
  const std::string resolved = resolved_config_json(c);
  RunConfig again;
  apply_config_text(again, resolved);
  CHECK(resolved_config_json(again) == resolved);
  for (const auto& k : config_keys()) CHECK(resolved.find("\"" + k.key + "\"") != std::string::npos);
}

#ifdef PADREC_HAVE_CLI

namespace {

struct CliResult {
  int code;
  std::string out, err;
};

CliResult run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "padrec");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

const char* kSmokeConfig =
    "model.text_dim = 0\nmodel.collab_dim = 16\nmodel.mlp_hidden = 16\nmodel.layers = 1\n"
    "train.pretrain_epochs = 6\ntrain.align_epochs = 3\ntrain.finetune_epochs = 3\ntrain.patience = 3\n";

}  // namespace

TEST_CASE("cli exit codes") {
  const auto dir = scratch_dir("cli_codes");
  std::ofstream(dir / "bad.txt") << "train.gama = 0.1\n";
  auto r = run_cli({"--config", (dir / "bad.txt").string(), "--run-dir", (dir / "run").string(), "preprocess"});
  CHECK(r.code == 1);
  CHECK(r.err.find("train.gama") != std::string::npos);

  CHECK(run_cli({"--precision", "f16", "preprocess"}).code == 1);
  CHECK(run_cli({"nosuchcommand"}).code == 1);

  r = run_cli({"--seed", "2", "synth", "--users", "60", "--items", "20", "--cold", "2", "--text-dim", "4", "--out-dir",
           (dir / "world").string()});
  REQUIRE(r.code == 0);
  std::filesystem::remove(dir / "world" / "text.padv1");
  r = run_cli({"--config", (dir / "world" / "config.txt").string(), "--run-dir", (dir / "run").string(), "pretrain"});
  CHECK(r.code == 2);
  CHECK(r.err.find("text.padv1") != std::string::npos);
}

TEST_CASE("cli smoke pipeline, determinism and diagnose") {
  const auto dir = scratch_dir("cli_smoke");
  REQUIRE(run_cli({"--seed", "3", "synth", "--users", "500", "--items", "100", "--cold", "10", "--text-dim", "32",
               "--out-dir", (dir / "world").string()})
              .code == 0);
  {
    std::ofstream cfg(dir / "smoke.txt");
    cfg << slurp(dir / "world" / "config.txt") << '\n' << kSmokeConfig;
  }
  const auto start = std::chrono::steady_clock::now();
  auto r = run_cli({"--config", (dir / "smoke.txt").string(), "--run-dir", (dir / "a").string(), "pipeline"});
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(seconds < 60.0);
  for (const char* f : {"pretrain.ckpt", "align.ckpt", "final.ckpt", "metrics.jsonl", "report.json",
                        "resolved_config.json"})
    CHECK_MESSAGE(std::filesystem::exists(dir / "a" / f), f);
  CHECK_FALSE(std::filesystem::exists(dir / "a" / ".lock"));

  // the run directory is part of the resolved config, so rerun in the same place
  const std::string first_ckpt = slurp(dir / "a" / "final.ckpt"), first_report = slurp(dir / "a" / "report.json");
  const std::string first_config = slurp(dir / "a" / "resolved_config.json");
  std::filesystem::remove_all(dir / "a");
  r = run_cli({"--config", (dir / "smoke.txt").string(), "--run-dir", (dir / "a").string(), "pipeline"});
  REQUIRE(r.code == 0);
  CHECK(slurp(dir / "a" / "resolved_config.json") == first_config);
  CHECK(slurp(dir / "a" / "final.ckpt") == first_ckpt);
  CHECK(slurp(dir / "a" / "report.json") == first_report);

  // self comparison: every bucket tau is 1
  const std::string ck = (dir / "a" / "align.ckpt").string();
  r = run_cli({"--config", (dir / "smoke.txt").string(), "--run-dir", (dir / "a").string(), "diagnose", "--before", ck,
           "--after", ck, "--out-dir", (dir / "diag").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(std::filesystem::exists(dir / "diag" / "pairs.csv"));
  CHECK(std::filesystem::exists(dir / "diag" / "report.json"));
  const RunConfig cfg = load_config(dir / "smoke.txt");
  const Workspace ws = load_workspace(cfg);
  const auto res = diagnose(cfg, ws, ck, ck, dir / "diag2");
  CHECK(res.kt.overall == 1.0);
  std::size_t defined = 0;
  for (const auto& t : res.kt.bucket_tau)
    if (t) {
      CHECK(*t == 1.0);
      ++defined;
    }
  CHECK(defined > 0);

  r = run_cli({"--config", (dir / "smoke.txt").string(), "--run-dir", (dir / "a").string(), "diagnose", "--before",
           (dir / "nope.ckpt").string(), "--after", ck});
  CHECK(r.code == 2);

  r = run_cli({"--config", (dir / "smoke.txt").string(), "--run-dir", (dir / "a").string(), "eval"});
  CHECK(r.code == 0);
  CHECK(r.out.find("\"ndcg\"") != std::string::npos);
}

#endif
