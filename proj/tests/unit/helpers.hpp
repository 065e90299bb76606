#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "padrec/data.hpp"
#include "padrec/model.hpp"
#include "padrec/tensor.hpp"

namespace padrec::test {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = g(rng);
  return t;
}

// fresh empty directory under the system temp dir
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("padrec_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// micro model of the gradient checks: vocab 20, d_c 8, L 5
inline ModelConfig micro_config(EncoderKind kind = EncoderKind::attention) {
  ModelConfig c;
  c.vocab = 20;
  c.collab_dim = 8;
  c.text_dim = 6;
  c.mlp_hidden = 5;
  c.encoder.kind = kind;
  c.encoder.layers = 1;
  c.encoder.heads = 2;
  c.encoder.dim = 8;
  c.encoder.max_len = 5;
  c.encoder.dropout = 0.0;
  c.buckets = 4;
  c.bucket_dim = 3;
  c.gate_hidden = 4;
  c.embedding_std = 0.5;
  return c;
}

inline FrequencyBucketMap micro_buckets(std::size_t vocab, std::size_t buckets) {
  std::vector<std::uint64_t> freq(vocab);
  for (std::size_t i = 0; i < vocab; ++i) freq[i] = vocab - i;
  return bucketize(freq, buckets);
}

// batch of 4 sequences, each with a positive and a negative target
inline Batch micro_batch() {
  Batch b;
  b.sequences = {{1, 2, 3}, {4, 5, 6, 7, 8}, {9}, {10, 3, 11, 12}};
  const std::vector<std::size_t> pos{4, 9, 13, 14}, neg{17, 0, 2, 19};
  for (std::size_t u = 0; u < 4; ++u) {
    b.targets.push_back(pos[u]);
    b.owner.push_back(u);
    b.labels.push_back(1.0);
    b.targets.push_back(neg[u]);
    b.owner.push_back(u);
    b.labels.push_back(0.0);
  }
  return b;
}

inline void load_micro_inputs(PadModel& m, std::uint64_t seed = 99) {
  m.set_text(random_tensor({m.config().vocab, m.config().text_dim}, seed));
  m.set_buckets(micro_buckets(m.config().vocab, m.config().buckets));
}

// users u0..u{n-1} with sequences of varied length over `items` items
inline InteractionLog toy_log(std::size_t users, std::size_t items, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  InteractionLog log;
  for (std::size_t u = 0; u < users; ++u) {
    const std::size_t len = 5 + rng() % 8;
    std::size_t cur = rng() % items;
    for (std::size_t t = 0; t < len; ++t) {
      cur = (cur + 1 + rng() % 3) % items;
      log.records.push_back({"u" + std::to_string(u), "i" + std::to_string(cur), static_cast<std::int64_t>(t), true, {}});
    }
  }
  return log;
}

}  // namespace padrec::test
