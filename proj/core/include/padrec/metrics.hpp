#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "padrec/buckets.hpp"
#include "padrec/data.hpp"
#include "padrec/model.hpp"

namespace padrec {

/// 1-based rank of `target`: 1 + #{j != target : scores[j] >= scores[target]}.
/// Ties count against the target.
std::size_t rank_of_target(std::span<const double> scores, std::size_t target);

double hr_at_k(std::size_t rank, std::size_t k);
/// 1 / log2(rank + 1) when rank <= k, else 0.
double ndcg_at_k(std::size_t rank, std::size_t k);

enum class Stratum { warm = 0, median = 1, cold = 2 };

/// Distinct test targets ordered by (test frequency desc, id asc) and cut into
/// three equal-count groups; position r of n goes to group r * 3 / n.
/// Returns one entry per catalog item; items that are never a test target get
/// no stratum (std::nullopt).
std::vector<std::optional<Stratum>> warm_med_cold_strata(std::span<const std::size_t> test_targets,
                                                         std::size_t catalog_size);

struct StratumMetrics {
  std::size_t users = 0;
  double hr = 0.0;    // percent
  double ndcg = 0.0;  // percent
};

struct RankReport {
  std::size_t k = 10;
  StratumMetrics overall;
  StratumMetrics warm, median, cold;
  std::vector<StratumMetrics> buckets;  // index b - 1 for bucket b
};

/// Scores the whole catalog for each user's task in `split` and returns the
/// target ranks in user order. Users are sharded over `threads` workers; the
/// result does not depend on the thread count.
std::vector<std::size_t> rank_all_items(const CatalogScorer& scorer, const SplitDataset& data, Split split,
                                        std::size_t threads = 1);

/// HR@k / nDCG@k overall, per tercile of test-target frequency and per
/// training-frequency bucket of the target.
RankReport summarize_ranks(std::span<const std::size_t> ranks, std::span<const std::size_t> targets,
                           const std::vector<std::optional<Stratum>>& strata, const FrequencyBucketMap& buckets,
                           std::size_t k);

/// rank_all_items + summarize_ranks on the test split.
RankReport evaluate(const CatalogScorer& scorer, const SplitDataset& data, const FrequencyBucketMap& buckets,
                    Split split, std::size_t k = 10, std::size_t threads = 1);

}  // namespace padrec
