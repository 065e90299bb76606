#include "padrec/data.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <numeric>

namespace padrec {

namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find('\t', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <typename T>
bool parse_int(std::string_view s, T& out) {
  if (s.empty()) return false;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

}  // namespace

InteractionLog parse_tsv(std::istream& in, const std::string& source) {
  InteractionLog log;
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& what) -> DataError {
    return DataError(source + ":" + std::to_string(lineno) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 4) throw fail("expected 4 tab-separated fields, got " + std::to_string(fields.size()));
    if (fields[0].empty() || fields[1].empty()) throw fail("empty user or item id");
    Interaction rec;
    rec.user = std::string(fields[0]);
    rec.item = std::string(fields[1]);
    if (!parse_int(fields[2], rec.timestamp)) throw fail("malformed timestamp '" + std::string(fields[2]) + "'");
    if (rec.timestamp < 0) throw fail("negative timestamp");
    const std::string_view label = fields[3];
    if (label == "1" || label == "0") {
      rec.positive = label == "1";
    } else if (label.starts_with("r:")) {
      int r = 0;
      if (!parse_int(label.substr(2), r)) throw fail("malformed rating '" + std::string(label) + "'");
      if (r < 1 || r > 5) throw fail("rating " + std::to_string(r) + " outside 1-5");
      rec.rating = r;
      rec.positive = r > 3;
    } else {
      throw fail("unknown label '" + std::string(label) + "'");
    }
    log.records.push_back(std::move(rec));
  }
  if (in.bad()) throw DataError(source + ": read error");
  return log;
}

InteractionLog load_tsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open interaction file " + path.string());
  return parse_tsv(in, path.string());
}

void write_tsv(const std::filesystem::path& path, const InteractionLog& log) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const Interaction& r : log.records) {
    out << r.user << '\t' << r.item << '\t' << r.timestamp << '\t';
    if (r.rating) {
      out << "r:" << *r.rating;
    } else {
      out << (r.positive ? '1' : '0');
    }
    out << '\n';
  }
  if (!out) throw DataError("write failed for " + path.string());
}

SplitDataset::SplitDataset(std::vector<std::string> vocabulary, std::vector<std::string> users,
                           std::vector<std::vector<std::size_t>> sequences)
    : vocabulary_(std::move(vocabulary)), users_(std::move(users)), sequences_(std::move(sequences)) {
  if (users_.size() != sequences_.size()) throw std::invalid_argument("split: user and sequence counts differ");
  for (std::size_t i = 0; i < vocabulary_.size(); ++i) {
    if (!index_.emplace(vocabulary_[i], i).second) throw std::invalid_argument("split: duplicate item " + vocabulary_[i]);
  }
  train_frequency_.assign(vocabulary_.size(), 0);
  for (std::size_t u = 0; u < sequences_.size(); ++u) {
    if (sequences_[u].size() < 3) throw std::invalid_argument("split: sequence shorter than 3 items");
    for (std::size_t item : sequences_[u]) {
      if (item >= vocabulary_.size()) throw std::out_of_range("split: item id outside vocabulary");
    }
    for (std::size_t item : training_view(u)) ++train_frequency_[item];
  }
}

std::optional<std::size_t> SplitDataset::item_id(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

SplitDataset::Task SplitDataset::task(std::size_t user, Split split) const {
  const auto& seq = sequences_.at(user);
  const std::size_t l = seq.size();
  const std::size_t pos = split == Split::train ? l - 3 : split == Split::validation ? l - 2 : l - 1;
  return Task{std::span<const std::size_t>(seq.data(), pos), seq[pos]};
}

std::span<const std::size_t> SplitDataset::training_view(std::size_t user) const {
  const auto& seq = sequences_.at(user);
  return {seq.data(), seq.size() - 2};
}

SplitDataset preprocess_split(const InteractionLog& log, const PreprocessOptions& options) {
  if (log.records.empty()) throw DataError("preprocess: empty interaction log");
  if (options.min_interactions < 3) throw std::invalid_argument("preprocess: min_interactions must be >= 3");
  if (options.max_len < 3) throw std::invalid_argument("preprocess: max_len must be >= 3");

  std::map<std::string, std::vector<std::size_t>> by_user;  // user -> record indices
  for (std::size_t i = 0; i < log.records.size(); ++i) {
    if (log.records[i].positive) by_user[log.records[i].user].push_back(i);
  }

  std::vector<std::string> vocabulary, users;
  std::unordered_map<std::string, std::size_t> index;
  std::vector<std::vector<std::size_t>> sequences;
  for (auto& [user, recs] : by_user) {
    if (recs.size() < options.min_interactions) continue;
    std::stable_sort(recs.begin(), recs.end(), [&](std::size_t a, std::size_t b) {
      const Interaction& ra = log.records[a];
      const Interaction& rb = log.records[b];
      if (ra.timestamp != rb.timestamp) return ra.timestamp < rb.timestamp;
      return ra.item < rb.item;
    });
    const std::size_t keep = std::min(recs.size(), options.max_len);
    std::vector<std::size_t> seq;
    seq.reserve(keep);
    for (std::size_t k = recs.size() - keep; k < recs.size(); ++k) {
      const std::string& item = log.records[recs[k]].item;
      auto [it, fresh] = index.emplace(item, vocabulary.size());
      if (fresh) vocabulary.push_back(item);
      seq.push_back(it->second);
    }
    users.push_back(user);
    sequences.push_back(std::move(seq));
  }
  if (sequences.empty()) {
    throw DataError("preprocess: every user has fewer than " + std::to_string(options.min_interactions) +
                    " positive interactions");
  }
  return SplitDataset(std::move(vocabulary), std::move(users), std::move(sequences));
}

}  // namespace padrec
