#include "padrec/buckets.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

namespace padrec {

FrequencyBucketMap::FrequencyBucketMap(std::vector<std::uint32_t> buckets, std::size_t bucket_count)
    : buckets_(std::move(buckets)), bucket_count_(bucket_count) {
  for (std::uint32_t b : buckets_) {
    if (b < 1 || b > bucket_count_) throw std::invalid_argument("bucket map: bucket id out of range");
  }
}

std::uint32_t FrequencyBucketMap::bucket(std::size_t item) const {
  if (item >= buckets_.size()) throw std::out_of_range("bucket map: item " + std::to_string(item) + " has no bucket");
  return buckets_[item];
}

FrequencyBucketMap bucketize(std::span<const std::uint64_t> frequencies, std::size_t bucket_count) {
  const std::size_t n = frequencies.size();
  if (bucket_count < 1) throw std::invalid_argument("bucketize: need at least one bucket");
  if (bucket_count > n) {
    throw std::invalid_argument("bucketize: " + std::to_string(bucket_count) + " buckets for " + std::to_string(n) +
                                " items");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return frequencies[a] > frequencies[b]; });
  std::vector<std::uint32_t> buckets(n);
  for (std::size_t rank = 0; rank < n; ++rank) {
    const std::size_t item = order[rank];
    buckets[item] = frequencies[item] == 0 ? static_cast<std::uint32_t>(bucket_count)
                                           : static_cast<std::uint32_t>(rank * bucket_count / n + 1);
  }
  return FrequencyBucketMap(std::move(buckets), bucket_count);
}

}  // namespace padrec
