#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace acg::text {

/// Lowercases, splits on whitespace and detaches . , ! ? ' as tokens.
std::vector<std::string> tokenize(std::string_view text);

std::string join(const std::vector<std::string>& tokens, std::string_view sep = " ");

enum class Task { ACG, ACGE };

std::string to_string(Task task);
Task parse_task(std::string_view name);

/// Token span [start, end] (inclusive) of an entity inside a context.
struct EntitySpan {
  std::string name;
  int start = 0;
  int end = 0;

  bool operator==(const EntitySpan&) const = default;
};

struct DataPoint {
  int game_id = 0;
  std::string state_id;
  std::vector<std::string> context;
  std::vector<EntitySpan> entities;
  std::vector<std::string> commands;
  Task task = Task::ACG;

  bool operator==(const DataPoint&) const = default;

  /// Join key used by predictions and evaluation: state id, plus the
  /// entity name for ACGE points.
  std::string key() const;
};

/// Throws ConsistencyError when a span does not index its entity tokens,
/// commands repeat, or an ACGE point does not carry exactly one entity.
void validate(const DataPoint& point);

class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;
  static constexpr int kEos = 3;
  static constexpr int kSep = 4;
  static constexpr int kEndOfSet = 5;
  static constexpr int kSpecialCount = 6;

  static const std::vector<std::string>& special_tokens();

  Vocab();
  /// Rebuilds from a full ordered word list (specials first).
  static Vocab from_words(const std::vector<std::string>& words);

  int add(const std::string& word);
  bool contains(std::string_view word) const;
  /// Id of `word`, or kUnk.
  int id(std::string_view word) const;
  const std::string& word(int id) const;
  int size() const { return static_cast<int>(words_.size()); }
  const std::vector<std::string>& words() const { return words_; }

  std::vector<int> encode(const std::vector<std::string>& tokens) const;
  std::vector<std::string> decode(const std::vector<int>& ids) const;

  /// FNV-1a over the ordered word list.
  std::uint64_t hash() const;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> ids_;
};

std::string hex64(std::uint64_t value);

/// Specials, then every context and command token of `train` in
/// first-occurrence order.
Vocab build_vocab(const std::vector<DataPoint>& train);

nlohmann::ordered_json to_json(const DataPoint& point);
DataPoint datapoint_from_json(const nlohmann::json& j);

/// JSON-Lines, one point per line. When `meta` is given it is written as a
/// leading {"_meta": ...} line, which load_dataset skips.
void save_dataset(const std::string& path, const std::vector<DataPoint>& points,
                  const std::optional<nlohmann::ordered_json>& meta = std::nullopt);
std::vector<DataPoint> load_dataset(const std::string& path);

struct SplitStats {
  std::string name;
  std::size_t points = 0;
  double target_mean = 0.0;
  double target_std = 0.0;  // population standard deviation
  std::size_t total_commands = 0;
  std::size_t unique_commands = 0;
  std::optional<std::size_t> unseen_commands;  // empty for the train split
};

struct CorpusStats {
  SplitStats train;
  SplitStats valid;
  SplitStats test;
};

SplitStats split_stats(const std::string& name, const std::vector<DataPoint>& points,
                       const std::set<std::string>* seen);
CorpusStats compute_stats(const std::vector<DataPoint>& train, const std::vector<DataPoint>& valid,
                          const std::vector<DataPoint>& test);

/// Two tables: split sizes with target mean +- std, and command totals with
/// unique and unseen-in-train counts.
std::string format_stats(const CorpusStats& stats, std::string_view title);

std::set<std::string> seen_command_set(const std::vector<DataPoint>& train);

}  // namespace acg::text
