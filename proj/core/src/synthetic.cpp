#include "padrec/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <stdexcept>

#include "padrec/seeds.hpp"

namespace padrec {

namespace {

std::string padded_name(char prefix, std::size_t i, std::size_t count) {
  const int width = static_cast<int>(std::to_string(count > 0 ? count - 1 : 0).size());
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%0*zu", prefix, width, i);
  return buf;
}

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

// k nearest members of `pool` to item i (excluding i), nearest first.
std::vector<std::size_t> nearest(std::size_t i, const std::vector<std::size_t>& pool,
                                 const std::vector<std::vector<double>>& z, std::size_t k) {
  std::vector<std::pair<double, std::size_t>> d;
  for (std::size_t j : pool) {
    if (j != i) d.emplace_back(sq_dist(z[i], z[j]), j);
  }
  k = std::min(k, d.size());
  std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
  std::vector<std::size_t> out(k);
  for (std::size_t r = 0; r < k; ++r) out[r] = d[r].second;
  return out;
}

}  // namespace

SyntheticWorld generate_synthetic(const SyntheticOptions& o) {
  if (o.items < 2 || o.cold >= o.items) throw std::invalid_argument("synth: need cold < items");
  if (o.items - o.cold < 2 || o.items - o.cold <= std::min<std::size_t>(o.neighbors, 1)) {
    throw std::invalid_argument("synth: infeasible cold quota, too few warm items remain");
  }
  if (o.users == 0 || o.latent_dim == 0 || o.text_dim == 0) throw std::invalid_argument("synth: sizes must be >= 1");
  if (o.min_len < 5 || o.max_len < o.min_len) throw std::invalid_argument("synth: need 5 <= min_len <= max_len");
  if (!(o.noise >= 0) || !std::isfinite(o.noise)) throw std::invalid_argument("synth: noise must be finite and >= 0");
  if (o.neighbors == 0) throw std::invalid_argument("synth: neighbors must be >= 1");

  std::mt19937_64 rng(derive_seed(o.seed, "synth"));
  std::normal_distribution<double> normal(0.0, 1.0);
  SyntheticWorld world;

  const std::size_t V = o.items;
  world.latents.assign(V, std::vector<double>(o.latent_dim));
  for (auto& z : world.latents)
    for (double& v : z) v = normal(rng);

  std::vector<std::size_t> perm(V);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<char> is_cold(V, 0);
  for (std::size_t k = 0; k < o.cold; ++k) is_cold[perm[k]] = 1;
  std::vector<std::size_t> warm, cold;
  for (std::size_t i = 0; i < V; ++i) (is_cold[i] ? cold : warm).push_back(i);

  // Popularity: Zipf-like weight over a random ranking of warm items.
  std::vector<double> popularity(V, 0.0);
  {
    std::vector<std::size_t> order = warm;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t r = 0; r < order.size(); ++r) popularity[order[r]] = 1.0 / std::pow(1.0 + static_cast<double>(r), 0.8);
  }

  std::vector<std::vector<std::size_t>> warm_nbrs(V), cold_nbrs(V);
  for (std::size_t i = 0; i < V; ++i) {
    warm_nbrs[i] = nearest(i, warm, world.latents, o.neighbors);
    if (!cold.empty()) cold_nbrs[i] = nearest(i, cold, world.latents, 3);
  }

  auto pick_weighted = [&](const std::vector<std::size_t>& from) {
    std::vector<double> w(from.size());
    for (std::size_t k = 0; k < from.size(); ++k) w[k] = popularity[from[k]];
    std::discrete_distribution<std::size_t> dist(w.begin(), w.end());
    return from[dist(rng)];
  };

  std::uniform_int_distribution<std::size_t> len_dist(o.min_len, o.max_len);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::vector<std::size_t>> seqs(o.users);
  for (auto& seq : seqs) {
    const std::size_t len = len_dist(rng);
    seq.push_back(pick_weighted(warm));
    while (seq.size() < len) seq.push_back(pick_weighted(warm_nbrs[seq.back()]));
    if (!cold.empty() && unit(rng) < o.cold_test_fraction) {
      const auto& c = cold_nbrs[seq[len - 2]];
      seq[len - 1] = c[std::uniform_int_distribution<std::size_t>(0, c.size() - 1)(rng)];
    }
  }

  // Up to two training-view occurrences per cold item, placed as a training
  // target right after a behaviour whose cold neighbourhood contains it.
  if (!cold.empty()) {
    std::vector<char> used(o.users, 0);
    std::vector<std::size_t> users(o.users);
    std::iota(users.begin(), users.end(), std::size_t{0});
    for (std::size_t c : cold) {
      const std::size_t want = std::uniform_int_distribution<std::size_t>(0, 2)(rng);
      std::shuffle(users.begin(), users.end(), rng);
      std::size_t placed = 0;
      for (std::size_t u : users) {
        if (placed == want) break;
        auto& seq = seqs[u];
        const std::size_t l = seq.size();
        if (used[u]) continue;
        const auto& nb = cold_nbrs[seq[l - 4]];
        if (std::find(nb.begin(), nb.end(), c) == nb.end()) continue;
        seq[l - 3] = c;
        used[u] = 1;
        ++placed;
      }
    }
  }

  std::vector<std::string> item_names(V);
  for (std::size_t i = 0; i < V; ++i) item_names[i] = padded_name('i', i, V);
  for (std::size_t c : cold) world.cold_items.push_back(item_names[c]);
  for (std::size_t u = 0; u < o.users; ++u) {
    const std::string user = padded_name('u', u, o.users);
    for (std::size_t t = 0; t < seqs[u].size(); ++t) {
      world.log.records.push_back(
          Interaction{user, item_names[seqs[u][t]], 1600000000 + static_cast<std::int64_t>(t) * 3600, true, {}});
    }
  }

  // text = (A z + noise * eps) / sqrt(1 + noise^2), A_ij ~ N(0, 1/latent_dim)
  Tensor a(Shape{o.text_dim, o.latent_dim});
  const double a_std = 1.0 / std::sqrt(static_cast<double>(o.latent_dim));
  for (double& v : a.values()) v = normal(rng) * a_std;
  const double denom = std::sqrt(1.0 + o.noise * o.noise);
  world.text.ids = item_names;
  world.text.values = Tensor(Shape{V, o.text_dim});
  for (std::size_t i = 0; i < V; ++i)
    for (std::size_t r = 0; r < o.text_dim; ++r) {
      double s = 0;
      for (std::size_t k = 0; k < o.latent_dim; ++k) s += a.at(r, k) * world.latents[i][k];
      const double v = (s + o.noise * normal(rng)) / denom;
      world.text.values.at(i, r) = static_cast<double>(static_cast<float>(v));
    }
  return world;
}

}  // namespace padrec
