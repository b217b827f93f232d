#pragma once

// Set-based scoring of predicted against gold command sets.

#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

namespace acg::eval {

/// Lowercased, single-spaced form used for matching.
std::string canonicalize(const std::string& command);

struct Counts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  Counts& operator+=(const Counts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  bool operator==(const Counts&) const = default;
};

/// Set semantics: duplicates on either side count once.
Counts match_sets(const std::vector<std::string>& pred, const std::vector<std::string>& gold);

/// tp / (tp + fp); with no predictions, 1 if nothing was missed else 0.
double precision(const Counts& c);
/// tp / (tp + fn); with no gold commands, 1 if nothing extra was predicted else 0.
double recall(const Counts& c);
double f1(double p, double r);

struct LengthBucket {
  int words = 0;
  std::size_t gold = 0;
  std::size_t missing = 0;  // fn
  std::size_t extra = 0;    // fp
  double missing_ratio() const { return gold == 0 ? 0.0 : static_cast<double>(missing) / static_cast<double>(gold); }
};

/// Buckets by number of words, ascending.
std::vector<LengthBucket> length_breakdown(const std::vector<std::vector<std::string>>& preds,
                                           const std::vector<std::vector<std::string>>& golds);

double exact_match_rate(const std::vector<std::vector<std::string>>& preds,
                        const std::vector<std::vector<std::string>>& golds);

struct EvalReport {
  std::size_t points = 0;
  std::size_t gold_commands = 0;
  std::size_t predicted_commands = 0;
  Counts pooled;
  // Micro averages over pooled counts.
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  // Macro averages of per-point values, reported separately.
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  // Over gold command instances; empty when no gold command falls in the group.
  std::optional<double> seen_recall;
  std::optional<double> unseen_recall;
  // Over unique unseen gold strings: recovered in at least one point.
  std::optional<double> unseen_recall_unique;
  std::size_t seen_gold = 0;
  std::size_t unseen_gold = 0;
  std::size_t unseen_gold_unique = 0;
  double exact_match = 0.0;
  std::vector<LengthBucket> lengths;
};

/// preds[i] and golds[i] describe the same data point.
EvalReport evaluate(const std::vector<std::vector<std::string>>& preds,
                    const std::vector<std::vector<std::string>>& golds, const std::set<std::string>& train_commands);

nlohmann::ordered_json to_json(const EvalReport& report);

/// Aligned plain-text table with one row per named report.
std::string format_table(const std::vector<std::pair<std::string, EvalReport>>& rows);

/// CSV text of the per-length tables: words,gold,missing,missing_ratio and
/// words,extra.
std::string missing_csv(const EvalReport& report);
std::string extra_csv(const EvalReport& report);

}  // namespace acg::eval
