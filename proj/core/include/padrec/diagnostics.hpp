#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "padrec/buckets.hpp"
#include "padrec/data.hpp"
#include "padrec/metrics.hpp"
#include "padrec/tensor.hpp"

namespace padrec {

/// Tau-a: (#concordant - #discordant) / C(n, 2); ties on either side count as
/// neither. O(n log n).
double kendalls_tau(std::span<const double> a, std::span<const double> b);

/// Ordered (behaviour item, target item) pair.
struct ItemPair {
  std::size_t behavior = 0;
  std::size_t target = 0;
  friend bool operator==(const ItemPair&, const ItemPair&) = default;
};

/// Every (s < t) position pair inside each user's training view, users in id
/// order, deduplicated by unordered item pair keeping the first occurrence.
/// Pairs of an item with itself are skipped.
std::vector<ItemPair> behavior_target_pairs(const SplitDataset& data);
std::vector<ItemPair> behavior_target_pairs(std::span<const std::vector<std::size_t>> sequences);

/// Euclidean distance between the two rows of each pair.
std::vector<double> pair_distances(const Tensor& table, std::span<const ItemPair> pairs);

struct KTReport {
  double overall = 0.0;
  std::size_t pairs = 0;
  std::vector<std::optional<double>> bucket_tau;  // index b - 1; empty when < 2 pairs
  std::vector<std::size_t> bucket_pairs;
  /// Mean over buckets with a defined tau.
  double bucket_mean = 0.0;
};

/// Pairs are grouped by the bucket of their target item and tau is taken
/// between the before/after distance lists of each group.
KTReport bucketed_kt(const Tensor& before, const Tensor& after, std::span<const ItemPair> pairs,
                     const FrequencyBucketMap& buckets);

struct DistanceSummary {
  std::size_t count = 0;
  double mean = 0.0;
  double stddev = 0.0;
  std::vector<double> deciles;  // 0%, 10%, ..., 100%
};

enum class PairGroup { none, top, bottom };

struct PairAnalysis {
  DistanceSummary top, bottom;  // text distances of the two groups
  /// (mean_top - mean_bottom) / pooled standard deviation; 0 when both
  /// groups have identical constant text distances.
  double separation = 0.0;
  /// Fraction of (top, bottom) pairs whose text distance is not larger in top.
  double overlap = 0.0;
  std::vector<double> collab_distance, text_distance;
  std::vector<PairGroup> group;
};

/// Top and bottom `fraction` of pairs by collaborative distance, compared on
/// their textual distances. Needs at least 20 pairs and 0 < fraction <= 0.5.
PairAnalysis top_bottom_pair_analysis(const Tensor& collab, const Tensor& text, std::span<const ItemPair> pairs,
                                      double fraction = 0.10);

std::string_view to_string(PairGroup g);

/// report.json body: ranking metrics (optional), KT report and pair analysis.
std::string diagnostics_json(const std::optional<RankReport>& rank, const KTReport& kt, const PairAnalysis& pairs);
std::string rank_report_json(const RankReport& report);
std::string kt_report_json(const KTReport& report);
std::string pair_analysis_json(const PairAnalysis& analysis);
/// pair_id,behavior_item,target_item,collab_distance,text_distance,group
void write_pairs_csv(const std::filesystem::path& path, std::span<const ItemPair> pairs, const PairAnalysis& analysis,
                     const std::vector<std::string>& vocabulary);

}  // namespace padrec
