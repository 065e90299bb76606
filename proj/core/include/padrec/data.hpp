#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace padrec {

/// Parse/load failure with a location (file and 1-based line, when known).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Interaction {
  std::string user;
  std::string item;
  std::int64_t timestamp = 0;
  bool positive = false;
  std::optional<int> rating;  // set for r:<1-5> labels
};

struct InteractionLog {
  std::vector<Interaction> records;
};

/// Lines are `user \t item \t timestamp \t label`; label is `1`/`0` (click) or
/// `r:<1-5>` (rating, positive iff > 3). Blank lines are skipped.
InteractionLog parse_tsv(std::istream& in, const std::string& source = "<stream>");
InteractionLog load_tsv(const std::filesystem::path& path);
void write_tsv(const std::filesystem::path& path, const InteractionLog& log);

enum class Split { train, validation, test };

struct PreprocessOptions {
  std::size_t min_interactions = 5;
  std::size_t max_len = 23;
};

/// Leave-out split of positive interaction histories. For a sequence of length
/// l the training, validation and test targets sit at 1-based positions l-2,
/// l-1 and l, each predicted from all earlier items.
class SplitDataset {
 public:
  struct Task {
    std::span<const std::size_t> behaviors;
    std::size_t target;
  };

  SplitDataset() = default;
  SplitDataset(std::vector<std::string> vocabulary, std::vector<std::string> users,
               std::vector<std::vector<std::size_t>> sequences);

  std::size_t user_count() const { return sequences_.size(); }
  std::size_t item_count() const { return vocabulary_.size(); }
  const std::vector<std::string>& vocabulary() const { return vocabulary_; }
  const std::vector<std::string>& users() const { return users_; }
  const std::vector<std::size_t>& sequence(std::size_t user) const { return sequences_.at(user); }
  std::optional<std::size_t> item_id(const std::string& name) const;

  Task task(std::size_t user, Split split) const;
  /// Behaviours plus training target: the only view training may observe.
  std::span<const std::size_t> training_view(std::size_t user) const;
  /// Occurrences of each item across all training views.
  const std::vector<std::uint64_t>& train_frequency() const { return train_frequency_; }

 private:
  std::vector<std::string> vocabulary_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::string> users_;
  std::vector<std::vector<std::size_t>> sequences_;
  std::vector<std::uint64_t> train_frequency_;
};

/// Filters users with fewer than min_interactions positives, orders each
/// history by (timestamp, item id, input order), keeps the latest max_len and
/// assigns dense item ids by first appearance over users in id order.
SplitDataset preprocess_split(const InteractionLog& log, const PreprocessOptions& options = {});

}  // namespace padrec
