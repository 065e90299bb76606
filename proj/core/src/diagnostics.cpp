#include "padrec/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

#include "json.hpp"

namespace padrec {

namespace {

using i64 = std::int64_t;

i64 tie_pairs_sorted(std::span<const double> v) {
  i64 total = 0, run = 1;
  for (std::size_t i = 1; i <= v.size(); ++i) {
    if (i < v.size() && v[i] == v[i - 1]) {
      ++run;
    } else {
      total += run * (run - 1) / 2;
      run = 1;
    }
  }
  return total;
}

// Stable merge sort; returns the number of strictly inverted pairs.
i64 sort_count(std::vector<double>& v, std::vector<double>& buf, std::size_t lo, std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  i64 swaps = sort_count(v, buf, lo, mid) + sort_count(v, buf, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      swaps += static_cast<i64>(mid - i);
      buf[k++] = v[j++];
    } else {
      buf[k++] = v[i++];
    }
  }
  while (i < mid) buf[k++] = v[i++];
  while (j < hi) buf[k++] = v[j++];
  std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo), buf.begin() + static_cast<std::ptrdiff_t>(hi),
            v.begin() + static_cast<std::ptrdiff_t>(lo));
  return swaps;
}

double l2(std::span<const double> x, std::span<const double> y) {
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
  return std::sqrt(s);
}

DistanceSummary summarize(std::vector<double> v) {
  DistanceSummary s;
  s.count = v.size();
  if (v.empty()) return s;
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.stddev = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  std::sort(v.begin(), v.end());
  for (int q = 0; q <= 10; ++q) {
    // linear interpolation between order statistics
    const double pos = static_cast<double>(v.size() - 1) * q / 10.0;
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    s.deciles.push_back(v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]));
  }
  return s;
}

nlohmann::json metrics_json(const StratumMetrics& m) {
  return {{"users", m.users}, {"hr", m.hr}, {"ndcg", m.ndcg}};
}

nlohmann::json summary_json(const DistanceSummary& s) {
  return {{"count", s.count}, {"mean", s.mean}, {"stddev", s.stddev}, {"deciles", s.deciles}};
}

nlohmann::json rank_json(const RankReport& r) {
  nlohmann::json buckets = nlohmann::json::array();
  for (const auto& b : r.buckets) buckets.push_back(metrics_json(b));
  return {{"k", r.k},
          {"overall", metrics_json(r.overall)},
          {"warm", metrics_json(r.warm)},
          {"median", metrics_json(r.median)},
          {"cold", metrics_json(r.cold)},
          {"buckets", buckets}};
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

}  // namespace

double kendalls_tau(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("kendalls_tau: length mismatch");
  const std::size_t n = a.size();
  if (n < 2) throw std::invalid_argument("kendalls_tau: need at least 2 observations");
  for (std::size_t i = 0; i < n; ++i) {
    if (std::isnan(a[i]) || std::isnan(b[i])) throw std::invalid_argument("kendalls_tau: NaN input");
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return a[i] != a[j] ? a[i] < a[j] : b[i] < b[j]; });

  std::vector<double> sa(n), sb(n);
  for (std::size_t i = 0; i < n; ++i) {
    sa[i] = a[idx[i]];
    sb[i] = b[idx[i]];
  }
  const i64 n0 = static_cast<i64>(n) * static_cast<i64>(n - 1) / 2;
  const i64 n1 = tie_pairs_sorted(sa);
  i64 n3 = 0, run = 1;
  for (std::size_t i = 1; i <= n; ++i) {
    if (i < n && sa[i] == sa[i - 1] && sb[i] == sb[i - 1]) {
      ++run;
    } else {
      n3 += run * (run - 1) / 2;
      run = 1;
    }
  }
  std::vector<double> buf(n);
  const i64 swaps = sort_count(sb, buf, 0, n);
  const i64 n2 = tie_pairs_sorted(sb);
  // concordant - discordant, exactly
  const i64 s = n0 - n1 - n2 + n3 - 2 * swaps;
  return static_cast<double>(s) / static_cast<double>(n0);
}

std::vector<ItemPair> behavior_target_pairs(std::span<const std::vector<std::size_t>> sequences) {
  std::vector<ItemPair> out;
  std::unordered_set<std::uint64_t> seen;
  for (const auto& seq : sequences) {
    for (std::size_t t = 1; t < seq.size(); ++t)
      for (std::size_t s = 0; s < t; ++s) {
        // a repeated item is at distance 0 in every table and a mirrored pair
        // repeats its distance; both would only add ties to the tau lists
        if (seq[s] == seq[t]) continue;
        const auto [lo, hi] = std::minmax(seq[s], seq[t]);
        const std::uint64_t key = (static_cast<std::uint64_t>(lo) << 32) | static_cast<std::uint64_t>(hi);
        if (seen.insert(key).second) out.push_back({seq[s], seq[t]});
      }
  }
  return out;
}

std::vector<ItemPair> behavior_target_pairs(const SplitDataset& data) {
  std::vector<std::vector<std::size_t>> views;
  views.reserve(data.user_count());
  for (std::size_t u = 0; u < data.user_count(); ++u) {
    const auto v = data.training_view(u);
    views.emplace_back(v.begin(), v.end());
  }
  return behavior_target_pairs(views);
}

std::vector<double> pair_distances(const Tensor& table, std::span<const ItemPair> pairs) {
  std::vector<double> out;
  out.reserve(pairs.size());
  for (const ItemPair& p : pairs) {
    if (p.behavior >= table.rows() || p.target >= table.rows()) {
      throw std::out_of_range("pair_distances: item " + std::to_string(std::max(p.behavior, p.target)) +
                              " has no embedding row");
    }
    out.push_back(l2(table.row(p.behavior), table.row(p.target)));
  }
  return out;
}

KTReport bucketed_kt(const Tensor& before, const Tensor& after, std::span<const ItemPair> pairs,
                     const FrequencyBucketMap& buckets) {
  if (before.shape() != after.shape()) throw std::invalid_argument("bucketed_kt: tables differ in shape");
  if (buckets.item_count() != before.rows()) throw std::invalid_argument("bucketed_kt: bucket map does not match table");
  const auto da = pair_distances(before, pairs);
  const auto db = pair_distances(after, pairs);
  KTReport rep;
  rep.pairs = pairs.size();
  if (pairs.size() >= 2) rep.overall = kendalls_tau(da, db);
  const std::size_t B = buckets.bucket_count();
  std::vector<std::vector<double>> ga(B), gb(B);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const std::size_t b = buckets.bucket(pairs[i].target) - 1;
    ga[b].push_back(da[i]);
    gb[b].push_back(db[i]);
  }
  double sum = 0;
  std::size_t defined = 0;
  for (std::size_t b = 0; b < B; ++b) {
    rep.bucket_pairs.push_back(ga[b].size());
    if (ga[b].size() < 2) {
      rep.bucket_tau.emplace_back();
      continue;
    }
    const double tau = kendalls_tau(ga[b], gb[b]);
    rep.bucket_tau.emplace_back(tau);
    sum += tau;
    ++defined;
  }
  rep.bucket_mean = defined ? sum / static_cast<double>(defined) : 0.0;
  return rep;
}

PairAnalysis top_bottom_pair_analysis(const Tensor& collab, const Tensor& text, std::span<const ItemPair> pairs,
                                      double fraction) {
  if (pairs.size() < 20) throw std::invalid_argument("pair analysis: need at least 20 pairs, got " + std::to_string(pairs.size()));
  if (!(fraction > 0.0 && fraction <= 0.5)) throw std::invalid_argument("pair analysis: fraction must be in (0, 0.5]");
  PairAnalysis out;
  out.collab_distance = pair_distances(collab, pairs);
  out.text_distance = pair_distances(text, pairs);
  const std::size_t n = pairs.size();
  const std::size_t g = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n))));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return out.collab_distance[i] < out.collab_distance[j]; });
  out.group.assign(n, PairGroup::none);
  std::vector<double> top, bottom;
  for (std::size_t r = 0; r < g; ++r) {
    out.group[order[r]] = PairGroup::bottom;
    bottom.push_back(out.text_distance[order[r]]);
    out.group[order[n - 1 - r]] = PairGroup::top;
    top.push_back(out.text_distance[order[n - 1 - r]]);
  }
  std::size_t not_larger = 0;
  for (double t : top)
    for (double b : bottom) not_larger += t <= b ? 1 : 0;
  out.overlap = static_cast<double>(not_larger) / static_cast<double>(top.size() * bottom.size());
  out.top = summarize(top);
  out.bottom = summarize(bottom);
  const double diff = out.top.mean - out.bottom.mean;
  const double dof = static_cast<double>(top.size() + bottom.size()) - 2.0;
  const double pooled =
      dof > 0 ? std::sqrt(((top.size() - 1) * out.top.stddev * out.top.stddev +
                           (bottom.size() - 1) * out.bottom.stddev * out.bottom.stddev) / dof)
              : 0.0;
  out.separation = diff == 0.0 ? 0.0 : diff / std::max(pooled, 1e-12);
  return out;
}

std::string_view to_string(PairGroup g) {
  switch (g) {
    case PairGroup::top: return "top";
    case PairGroup::bottom: return "bottom";
    case PairGroup::none: break;
  }
  return "none";
}

std::string rank_report_json(const RankReport& report) { return rank_json(report).dump(2); }

std::string kt_report_json(const KTReport& kt) {
  nlohmann::json taus = nlohmann::json::array();
  for (const auto& t : kt.bucket_tau) taus.push_back(t ? nlohmann::json(*t) : nlohmann::json(nullptr));
  return nlohmann::json{{"overall", kt.overall},
                        {"pairs", kt.pairs},
                        {"bucket_tau", taus},
                        {"bucket_pairs", kt.bucket_pairs},
                        {"bucket_mean", kt.bucket_mean}}
      .dump(2);
}

std::string pair_analysis_json(const PairAnalysis& p) {
  return nlohmann::json{{"top", summary_json(p.top)},
                        {"bottom", summary_json(p.bottom)},
                        {"separation", p.separation},
                        {"overlap", p.overlap}}
      .dump(2);
}

std::string diagnostics_json(const std::optional<RankReport>& rank, const KTReport& kt, const PairAnalysis& pairs) {
  nlohmann::json j;
  j["rank"] = rank ? rank_json(*rank) : nlohmann::json(nullptr);
  j["kendall_tau"] = nlohmann::json::parse(kt_report_json(kt));
  j["pair_analysis"] = nlohmann::json::parse(pair_analysis_json(pairs));
  return j.dump(2);
}

void write_pairs_csv(const std::filesystem::path& path, std::span<const ItemPair> pairs, const PairAnalysis& analysis,
                     const std::vector<std::string>& vocabulary) {
  if (analysis.group.size() != pairs.size()) throw std::invalid_argument("pairs.csv: analysis does not match pairs");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(17);
  out << "pair_id,behavior_item,target_item,collab_distance,text_distance,group\n";
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    out << i << ',' << csv_field(vocabulary.at(pairs[i].behavior)) << ',' << csv_field(vocabulary.at(pairs[i].target)) << ','
        << analysis.collab_distance[i] << ',' << analysis.text_distance[i] << ',' << to_string(analysis.group[i]) << '\n';
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace padrec
