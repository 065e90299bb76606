#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace padrec {

/// Item -> frequency bucket in [1, B]; bucket 1 is the warmest.
class FrequencyBucketMap {
 public:
  FrequencyBucketMap() = default;
  FrequencyBucketMap(std::vector<std::uint32_t> buckets, std::size_t bucket_count);

  std::uint32_t bucket(std::size_t item) const;
  std::size_t bucket_count() const { return bucket_count_; }
  std::size_t item_count() const { return buckets_.size(); }
  const std::vector<std::uint32_t>& buckets() const { return buckets_; }

 private:
  std::vector<std::uint32_t> buckets_;
  std::size_t bucket_count_ = 0;
};

/// Equal-count quantile buckets over items ordered by (frequency desc, id asc).
/// Items with zero frequency always land in the coldest bucket B.
FrequencyBucketMap bucketize(std::span<const std::uint64_t> frequencies, std::size_t bucket_count);

}  // namespace padrec
