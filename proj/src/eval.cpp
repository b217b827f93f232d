#include "acg/eval.hpp"

#include <cstdio>
#include <map>
#include <sstream>

#include "acg/errors.hpp"
#include "acg/textcorpus.hpp"

namespace acg::eval {

std::string canonicalize(const std::string& command) { return text::join(text::tokenize(command)); }

namespace {

std::set<std::string> canonical_set(const std::vector<std::string>& commands) {
  std::set<std::string> out;
  for (const auto& c : commands) out.insert(canonicalize(c));
  return out;
}

std::size_t word_count(const std::string& canonical) { return text::tokenize(canonical).size(); }

void require_aligned(std::size_t preds, std::size_t golds) {
  if (preds != golds) {
    throw ContractError("evaluation needs one prediction per gold point (" + std::to_string(preds) + " vs " +
                        std::to_string(golds) + ")");
  }
}

}  // namespace

Counts match_sets(const std::vector<std::string>& pred, const std::vector<std::string>& gold) {
  const auto p = canonical_set(pred);
  const auto g = canonical_set(gold);
  Counts c;
  for (const auto& s : p) (g.count(s) ? c.tp : c.fp) += 1;
  for (const auto& s : g) c.fn += p.count(s) == 0;
  return c;
}

double precision(const Counts& c) {
  if (c.tp + c.fp == 0) return c.fn == 0 ? 1.0 : 0.0;
  return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
}

double recall(const Counts& c) {
  if (c.tp + c.fn == 0) return c.fp == 0 ? 1.0 : 0.0;
  return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}

double f1(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

std::vector<LengthBucket> length_breakdown(const std::vector<std::vector<std::string>>& preds,
                                           const std::vector<std::vector<std::string>>& golds) {
  require_aligned(preds.size(), golds.size());
  std::map<int, LengthBucket> buckets;
  auto bucket = [&](const std::string& s) -> LengthBucket& {
    const int n = static_cast<int>(word_count(s));
    auto& b = buckets[n];
    b.words = n;
    return b;
  };
  for (std::size_t i = 0; i < golds.size(); ++i) {
    const auto p = canonical_set(preds[i]);
    const auto g = canonical_set(golds[i]);
    for (const auto& s : g) {
      auto& b = bucket(s);
      ++b.gold;
      b.missing += p.count(s) == 0;
    }
    for (const auto& s : p) {
      if (g.count(s) == 0) ++bucket(s).extra;
    }
  }
  std::vector<LengthBucket> out;
  for (const auto& [n, b] : buckets) out.push_back(b);
  return out;
}

double exact_match_rate(const std::vector<std::vector<std::string>>& preds,
                        const std::vector<std::vector<std::string>>& golds) {
  require_aligned(preds.size(), golds.size());
  if (golds.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < golds.size(); ++i) hits += canonical_set(preds[i]) == canonical_set(golds[i]);
  return static_cast<double>(hits) / static_cast<double>(golds.size());
}

EvalReport evaluate(const std::vector<std::vector<std::string>>& preds,
                    const std::vector<std::vector<std::string>>& golds, const std::set<std::string>& train_commands) {
  require_aligned(preds.size(), golds.size());
  std::set<std::string> seen;
  for (const auto& c : train_commands) seen.insert(canonicalize(c));

  EvalReport r;
  r.points = golds.size();
  std::size_t seen_tp = 0;
  std::size_t unseen_tp = 0;
  std::set<std::string> unseen_unique;
  std::set<std::string> unseen_recovered;
  for (std::size_t i = 0; i < golds.size(); ++i) {
    const auto p = canonical_set(preds[i]);
    const auto g = canonical_set(golds[i]);
    const Counts c = match_sets(preds[i], golds[i]);
    r.pooled += c;
    r.gold_commands += g.size();
    r.predicted_commands += p.size();
    const double pp = precision(c);
    const double pr = recall(c);
    r.macro_precision += pp;
    r.macro_recall += pr;
    r.macro_f1 += f1(pp, pr);
    for (const auto& s : g) {
      const bool hit = p.count(s) != 0;
      if (seen.count(s) != 0) {
        ++r.seen_gold;
        seen_tp += hit;
      } else {
        ++r.unseen_gold;
        unseen_tp += hit;
        unseen_unique.insert(s);
        if (hit) unseen_recovered.insert(s);
      }
    }
  }
  r.precision = precision(r.pooled);
  r.recall = recall(r.pooled);
  r.f1 = f1(r.precision, r.recall);
  if (r.points > 0) {
    const double n = static_cast<double>(r.points);
    r.macro_precision /= n;
    r.macro_recall /= n;
    r.macro_f1 /= n;
  }
  if (r.seen_gold > 0) r.seen_recall = static_cast<double>(seen_tp) / static_cast<double>(r.seen_gold);
  if (r.unseen_gold > 0) r.unseen_recall = static_cast<double>(unseen_tp) / static_cast<double>(r.unseen_gold);
  r.unseen_gold_unique = unseen_unique.size();
  if (!unseen_unique.empty()) {
    r.unseen_recall_unique = static_cast<double>(unseen_recovered.size()) / static_cast<double>(unseen_unique.size());
  }
  r.exact_match = exact_match_rate(preds, golds);
  r.lengths = length_breakdown(preds, golds);
  return r;
}

namespace {

nlohmann::ordered_json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

std::string optional_text(const std::optional<double>& v) {
  if (!v) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * *v);
  return buf;
}

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * v);
  return buf;
}

}  // namespace

nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["points"] = r.points;
  j["gold_commands"] = r.gold_commands;
  j["predicted_commands"] = r.predicted_commands;
  j["tp"] = r.pooled.tp;
  j["fp"] = r.pooled.fp;
  j["fn"] = r.pooled.fn;
  j["precision"] = r.precision;
  j["recall"] = r.recall;
  j["f1"] = r.f1;
  j["seen_recall"] = optional_json(r.seen_recall);
  j["unseen_recall"] = optional_json(r.unseen_recall);
  j["unseen_recall_unique"] = optional_json(r.unseen_recall_unique);
  j["seen_gold"] = r.seen_gold;
  j["unseen_gold"] = r.unseen_gold;
  j["unseen_gold_unique"] = r.unseen_gold_unique;
  j["exact_match"] = r.exact_match;
  j["macro"] = {{"precision", r.macro_precision}, {"recall", r.macro_recall}, {"f1", r.macro_f1}};
  auto lengths = nlohmann::ordered_json::array();
  for (const auto& b : r.lengths) {
    lengths.push_back({{"words", b.words},
                       {"gold", b.gold},
                       {"missing", b.missing},
                       {"missing_ratio", b.missing_ratio()},
                       {"extra", b.extra}});
  }
  j["lengths"] = std::move(lengths);
  return j;
}

std::string format_table(const std::vector<std::pair<std::string, EvalReport>>& rows) {
  std::size_t width = 5;
  for (const auto& [name, r] : rows) width = std::max(width, name.size());
  std::ostringstream os;
  char buf[256];
  const int w = static_cast<int>(width);
  std::snprintf(buf, sizeof(buf), "%-*s | %9s | %9s | %9s | %13s | %11s | %11s\n", w, "Model", "Precision", "Recall",
                "F1", "Unseen recall", "Seen recall", "Exact match");
  os << buf;
  os << std::string(width, '-') << "-+-----------+-----------+-----------+---------------+-------------+------------\n";
  for (const auto& [name, r] : rows) {
    std::snprintf(buf, sizeof(buf), "%-*s | %9s | %9s | %9s | %13s | %11s | %11s\n", w, name.c_str(),
                  percent(r.precision).c_str(), percent(r.recall).c_str(), percent(r.f1).c_str(),
                  optional_text(r.unseen_recall).c_str(), optional_text(r.seen_recall).c_str(),
                  percent(r.exact_match).c_str());
    os << buf;
  }
  return os.str();
}

std::string missing_csv(const EvalReport& report) {
  std::ostringstream os;
  os << "words,gold,missing,missing_ratio\n";
  char buf[96];
  for (const auto& b : report.lengths) {
    std::snprintf(buf, sizeof(buf), "%d,%zu,%zu,%.6f\n", b.words, b.gold, b.missing, b.missing_ratio());
    os << buf;
  }
  return os.str();
}

std::string extra_csv(const EvalReport& report) {
  std::ostringstream os;
  os << "words,extra\n";
  for (const auto& b : report.lengths) os << b.words << ',' << b.extra << '\n';
  return os.str();
}

}  // namespace acg::eval
