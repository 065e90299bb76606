#include <benchmark/benchmark.h>

#include "padrec/config.hpp"
#include "padrec/synthetic.hpp"
#include "padrec/workflow.hpp"

namespace {

struct Fixture {
  padrec::RunConfig config;
  padrec::Workspace ws;
  std::unique_ptr<padrec::PadModel> model;
};

Fixture& fixture() {
  static Fixture f = [] {
    padrec::SyntheticOptions o;
    o.users = 400;
    o.items = 300;
    o.cold = 20;
    o.text_dim = 64;
    const auto world = padrec::generate_synthetic(o);
    padrec::RunConfig cfg;
    cfg.model.collab_dim = 32;
    cfg.model.mlp_hidden = 32;
    auto ws = padrec::make_workspace(cfg, world.log, world.text);
    auto model = padrec::make_model(cfg, ws);
    return Fixture{cfg, std::move(ws), std::move(model)};
  }();
  return f;
}

// whole-catalog scoring of 128 users with all three experts fused
void bm_catalog_score(benchmark::State& state) {
  auto& f = fixture();
  padrec::CatalogScorer scorer(*f.model, {padrec::kAllExperts.begin(), padrec::kAllExperts.end()},
                               padrec::GatingMode::frequency_aware);
  std::vector<std::vector<std::size_t>> seqs;
  for (std::size_t u = 0; u < 128; ++u) {
    const auto v = f.ws.data.training_view(u);
    seqs.emplace_back(v.begin(), v.end());
  }
  for (auto _ : state) benchmark::DoNotOptimize(scorer.score(seqs).data());
}
BENCHMARK(bm_catalog_score)->Unit(benchmark::kMillisecond);

void bm_train_batch(benchmark::State& state) {
  auto& f = fixture();
  std::mt19937_64 order(1), neg(2);
  const auto batches = padrec::make_epoch_batches(f.ws.data, 16, f.config.model.encoder.max_len, order, neg);
  const std::vector<padrec::Expert> experts{padrec::kAllExperts.begin(), padrec::kAllExperts.end()};
  for (auto _ : state) {
    padrec::Tape tape(true, 3);
    auto out = f.model->forward(tape, batches.front(), experts, padrec::GatingMode::frequency_aware);
    auto loss = padrec::bce_with_logits(out.logits, padrec::Tensor({out.logits.rows(), 1}, batches.front().labels));
    tape.backward(loss);
  }
}
BENCHMARK(bm_train_batch)->Unit(benchmark::kMillisecond);

}  // namespace
