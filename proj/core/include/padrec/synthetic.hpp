#pragma once

#include <cstdint>
#include <vector>

#include "padrec/data.hpp"
#include "padrec/text_embeddings.hpp"

namespace padrec {

struct SyntheticOptions {
  std::uint64_t seed = 0;
  std::size_t users = 5000;
  std::size_t items = 500;
  std::size_t cold = 50;
  std::size_t latent_dim = 8;
  std::size_t text_dim = 256;
  /// Standard deviation of the text noise relative to the unit-variance
  /// signal; 1e6 makes text carry no preference information.
  double noise = 0.1;
  std::size_t min_len = 5;
  std::size_t max_len = 23;
  std::size_t neighbors = 10;
  /// Fraction of users whose test target is replaced by a cold item. Kept
  /// small so cold items stay rare test targets and fall in the cold tercile.
  double cold_test_fraction = 0.03;
};

struct SyntheticWorld {
  InteractionLog log;
  TextEmbeddingFile text;
  std::vector<std::string> cold_items;
  std::vector<std::vector<double>> latents;  // per item, item order "i0000".."iNNNN"
};

/// Items carry latent vectors; text = standardized (random linear map of the
/// latent + Gaussian noise). Users walk latent-space nearest neighbours among
/// warm items, weighted by popularity. Cold items occur in at most two
/// training views overall and replace the test target of a fraction of users
/// with a latent neighbour of the last behaviour.
SyntheticWorld generate_synthetic(const SyntheticOptions& options);

}  // namespace padrec
