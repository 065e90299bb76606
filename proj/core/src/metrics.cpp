#include "padrec/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <thread>

namespace padrec {

std::size_t rank_of_target(std::span<const double> scores, std::size_t target) {
  if (scores.empty()) throw std::invalid_argument("rank: empty catalog");
  if (target >= scores.size()) throw std::out_of_range("rank: target outside catalog");
  const double t = scores[target];
  std::size_t rank = 1;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (j != target && scores[j] >= t) ++rank;
  }
  return rank;
}

double hr_at_k(std::size_t rank, std::size_t k) {
  if (rank == 0 || k == 0) throw std::invalid_argument("hr_at_k: rank and k must be >= 1");
  return rank <= k ? 1.0 : 0.0;
}

double ndcg_at_k(std::size_t rank, std::size_t k) {
  if (rank == 0 || k == 0) throw std::invalid_argument("ndcg_at_k: rank and k must be >= 1");
  return rank <= k ? 1.0 / std::log2(static_cast<double>(rank) + 1.0) : 0.0;
}

std::vector<std::optional<Stratum>> warm_med_cold_strata(std::span<const std::size_t> test_targets,
                                                         std::size_t catalog_size) {
  if (test_targets.empty()) throw std::invalid_argument("strata: empty test set");
  std::vector<std::size_t> freq(catalog_size, 0);
  for (std::size_t t : test_targets) {
    if (t >= catalog_size) throw std::out_of_range("strata: target outside catalog");
    ++freq[t];
  }
  std::vector<std::size_t> items;
  for (std::size_t i = 0; i < catalog_size; ++i) {
    if (freq[i] > 0) items.push_back(i);
  }
  if (items.size() < 3) throw std::invalid_argument("strata: fewer than 3 distinct test targets");
  std::sort(items.begin(), items.end(), [&](std::size_t a, std::size_t b) {
    return freq[a] != freq[b] ? freq[a] > freq[b] : a < b;
  });
  std::vector<std::optional<Stratum>> out(catalog_size);
  for (std::size_t r = 0; r < items.size(); ++r) out[items[r]] = static_cast<Stratum>(r * 3 / items.size());
  return out;
}

std::vector<std::size_t> rank_all_items(const CatalogScorer& scorer, const SplitDataset& data, Split split,
                                        std::size_t threads) {
  const std::size_t n = data.user_count();
  std::vector<std::size_t> ranks(n, 0);
  constexpr std::size_t kChunk = 128;
  const std::size_t chunks = (n + kChunk - 1) / kChunk;
  auto run_chunk = [&](std::size_t c) {
    const std::size_t lo = c * kChunk, hi = std::min(n, lo + kChunk);
    std::vector<std::vector<std::size_t>> seqs;
    for (std::size_t u = lo; u < hi; ++u) {
      const auto task = data.task(u, split);
      seqs.emplace_back(task.behaviors.begin(), task.behaviors.end());
    }
    const Tensor scores = scorer.score(seqs);
    for (std::size_t u = lo; u < hi; ++u) ranks[u] = rank_of_target(scores.row(u - lo), data.task(u, split).target);
  };
  threads = std::max<std::size_t>(1, std::min(threads, chunks));
  if (threads == 1) {
    for (std::size_t c = 0; c < chunks; ++c) run_chunk(c);
    return ranks;
  }
  // Each worker owns a strided set of chunks and writes disjoint slots.
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t c = w; c < chunks; c += threads) run_chunk(c);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return ranks;
}

RankReport summarize_ranks(std::span<const std::size_t> ranks, std::span<const std::size_t> targets,
                           const std::vector<std::optional<Stratum>>& strata, const FrequencyBucketMap& buckets,
                           std::size_t k) {
  if (ranks.size() != targets.size()) throw std::invalid_argument("summarize: rank and target counts differ");
  RankReport rep;
  rep.k = k;
  rep.buckets.assign(buckets.bucket_count(), {});
  auto add = [&](StratumMetrics& m, std::size_t rank) {
    ++m.users;
    m.hr += hr_at_k(rank, k);
    m.ndcg += ndcg_at_k(rank, k);
  };
  for (std::size_t u = 0; u < ranks.size(); ++u) {
    add(rep.overall, ranks[u]);
    const auto s = strata.at(targets[u]);
    if (!s) throw std::logic_error("summarize: target without stratum");
    add(*s == Stratum::warm ? rep.warm : *s == Stratum::median ? rep.median : rep.cold, ranks[u]);
    if (buckets.bucket_count() > 0) add(rep.buckets[buckets.bucket(targets[u]) - 1], ranks[u]);
  }
  auto finish = [](StratumMetrics& m) {
    if (m.users == 0) return;
    m.hr = 100.0 * m.hr / static_cast<double>(m.users);
    m.ndcg = 100.0 * m.ndcg / static_cast<double>(m.users);
  };
  finish(rep.overall);
  finish(rep.warm);
  finish(rep.median);
  finish(rep.cold);
  for (auto& b : rep.buckets) finish(b);
  return rep;
}

RankReport evaluate(const CatalogScorer& scorer, const SplitDataset& data, const FrequencyBucketMap& buckets,
                    Split split, std::size_t k, std::size_t threads) {
  const auto ranks = rank_all_items(scorer, data, split, threads);
  std::vector<std::size_t> targets(data.user_count());
  for (std::size_t u = 0; u < targets.size(); ++u) targets[u] = data.task(u, split).target;
  const auto strata = warm_med_cold_strata(targets, data.item_count());
  return summarize_ranks(ranks, targets, strata, buckets, k);
}

}  // namespace padrec
