#include "acg/textcorpus.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "acg/errors.hpp"

namespace acg::text {

namespace {

bool is_detached(char c) { return c == '.' || c == ',' || c == '!' || c == '?' || c == '\''; }

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&]() {
    if (!current.empty()) out.push_back(std::move(current));
    current.clear();
  };
  for (char raw : text) {
    const auto c = static_cast<unsigned char>(raw);
    if (std::isspace(c)) {
      flush();
    } else if (is_detached(raw)) {
      flush();
      out.emplace_back(1, raw);
    } else {
      current.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return out;
}

std::string join(const std::vector<std::string>& tokens, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) out += sep;
    out += tokens[i];
  }
  return out;
}

std::string to_string(Task task) { return task == Task::ACG ? "ACG" : "ACGE"; }

Task parse_task(std::string_view name) {
  if (name == "ACG" || name == "acg") return Task::ACG;
  if (name == "ACGE" || name == "acge") return Task::ACGE;
  throw ConfigError("unknown task: " + std::string(name));
}

std::string DataPoint::key() const {
  if (task == Task::ACGE && !entities.empty()) return state_id + "|" + entities.front().name;
  return state_id;
}

void validate(const DataPoint& point) {
  for (const auto& span : point.entities) {
    const auto tokens = tokenize(span.name);
    const int n = static_cast<int>(point.context.size());
    if (span.start < 0 || span.end < span.start || span.end >= n ||
        span.end - span.start + 1 != static_cast<int>(tokens.size())) {
      throw ConsistencyError(point.state_id + ": span of '" + span.name + "' is out of bounds");
    }
    for (int i = span.start; i <= span.end; ++i) {
      if (point.context[static_cast<std::size_t>(i)] != tokens[static_cast<std::size_t>(i - span.start)]) {
        throw ConsistencyError(point.state_id + ": span of '" + span.name + "' does not match the context");
      }
    }
  }
  std::set<std::string> seen;
  for (const auto& c : point.commands) {
    if (c.empty()) throw ConsistencyError(point.state_id + ": empty command string");
    if (!seen.insert(c).second) throw ConsistencyError(point.state_id + ": duplicate command '" + c + "'");
  }
  if (point.task == Task::ACGE && point.entities.size() != 1) {
    throw ConsistencyError(point.state_id + ": ACGE point must carry exactly one entity");
  }
}

const std::vector<std::string>& Vocab::special_tokens() {
  static const std::vector<std::string> specials = {"<pad>", "<unk>", "<bos>", "<eos>", "<sep>", "<eocs>"};
  return specials;
}

Vocab::Vocab() {
  for (const auto& s : special_tokens()) add(s);
}

Vocab Vocab::from_words(const std::vector<std::string>& words) {
  const auto& specials = special_tokens();
  if (words.size() < specials.size()) throw ParseError("vocabulary is missing its special tokens");
  for (std::size_t i = 0; i < specials.size(); ++i) {
    if (words[i] != specials[i]) throw ParseError("vocabulary special token mismatch at id " + std::to_string(i));
  }
  Vocab v;
  for (std::size_t i = specials.size(); i < words.size(); ++i) {
    if (v.contains(words[i])) throw ParseError("duplicate vocabulary word: " + words[i]);
    v.add(words[i]);
  }
  return v;
}

int Vocab::add(const std::string& word) {
  auto it = ids_.find(word);
  if (it != ids_.end()) return it->second;
  const int id = size();
  words_.push_back(word);
  ids_.emplace(word, id);
  return id;
}

bool Vocab::contains(std::string_view word) const { return ids_.count(std::string(word)) != 0; }

int Vocab::id(std::string_view word) const {
  auto it = ids_.find(std::string(word));
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocab::word(int id) const {
  if (id < 0 || id >= size()) throw ContractError("vocabulary id out of range: " + std::to_string(id));
  return words_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocab::encode(const std::vector<std::string>& tokens) const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

std::vector<std::string> Vocab::decode(const std::vector<int>& ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int i : ids) out.push_back(word(i));
  return out;
}

std::uint64_t Vocab::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& w : words_) {
    for (char c : w) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ull;
    }
    h ^= '\n';
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

Vocab build_vocab(const std::vector<DataPoint>& train) {
  Vocab v;
  for (const auto& p : train) {
    for (const auto& t : p.context) v.add(t);
    for (const auto& c : p.commands) {
      for (const auto& t : tokenize(c)) v.add(t);
    }
  }
  return v;
}

nlohmann::ordered_json to_json(const DataPoint& point) {
  nlohmann::ordered_json j;
  j["game_id"] = point.game_id;
  j["state_id"] = point.state_id;
  j["context"] = join(point.context);
  auto entities = nlohmann::ordered_json::array();
  for (const auto& e : point.entities) {
    nlohmann::ordered_json ej;
    ej["name"] = e.name;
    ej["start"] = e.start;
    ej["end"] = e.end;
    entities.push_back(std::move(ej));
  }
  j["entities"] = std::move(entities);
  j["commands"] = point.commands;
  j["task"] = to_string(point.task);
  return j;
}

DataPoint datapoint_from_json(const nlohmann::json& j) {
  DataPoint p;
  p.game_id = j.at("game_id").get<int>();
  p.state_id = j.at("state_id").get<std::string>();
  p.context = tokenize(j.at("context").get<std::string>());
  for (const auto& e : j.at("entities")) {
    p.entities.push_back({e.at("name").get<std::string>(), e.at("start").get<int>(), e.at("end").get<int>()});
  }
  p.commands = j.at("commands").get<std::vector<std::string>>();
  p.task = parse_task(j.at("task").get<std::string>());
  return p;
}

void save_dataset(const std::string& path, const std::vector<DataPoint>& points,
                  const std::optional<nlohmann::ordered_json>& meta) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  if (meta) {
    nlohmann::ordered_json header;
    header["_meta"] = *meta;
    out << header.dump() << '\n';
  }
  for (const auto& p : points) out << to_json(p).dump() << '\n';
  if (!out) throw IoError("write failed: " + path);
}

std::vector<DataPoint> load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  std::vector<DataPoint> points;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (j.is_object() && j.contains("_meta")) continue;
      DataPoint p = datapoint_from_json(j);
      validate(p);
      points.push_back(std::move(p));
    } catch (const std::exception& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return points;
}

SplitStats split_stats(const std::string& name, const std::vector<DataPoint>& points,
                       const std::set<std::string>* seen) {
  SplitStats s;
  s.name = name;
  s.points = points.size();
  std::set<std::string> unique;
  double sum = 0.0;
  for (const auto& p : points) {
    sum += static_cast<double>(p.commands.size());
    s.total_commands += p.commands.size();
    unique.insert(p.commands.begin(), p.commands.end());
  }
  s.unique_commands = unique.size();
  if (!points.empty()) {
    s.target_mean = sum / static_cast<double>(points.size());
    double sq = 0.0;
    for (const auto& p : points) {
      const double d = static_cast<double>(p.commands.size()) - s.target_mean;
      sq += d * d;
    }
    s.target_std = std::sqrt(sq / static_cast<double>(points.size()));
  }
  if (seen != nullptr) {
    std::size_t unseen = 0;
    for (const auto& c : unique) unseen += seen->count(c) == 0;
    s.unseen_commands = unseen;
  }
  return s;
}

CorpusStats compute_stats(const std::vector<DataPoint>& train, const std::vector<DataPoint>& valid,
                          const std::vector<DataPoint>& test) {
  const auto seen = seen_command_set(train);
  return {split_stats("train", train, nullptr), split_stats("valid", valid, &seen), split_stats("test", test, &seen)};
}

std::string format_stats(const CorpusStats& stats, std::string_view title) {
  std::ostringstream os;
  char buf[160];
  os << title << '\n';
  std::snprintf(buf, sizeof(buf), "%-8s | %10s | %10s | %10s | %s\n", "Dataset", "Train", "Valid", "Test",
                "Target (mean +- population std)");
  os << buf;
  std::snprintf(buf, sizeof(buf), "%-8s | %10zu | %10zu | %10zu | %.2f +- %.2f\n", std::string(title).c_str(),
                stats.train.points, stats.valid.points, stats.test.points, stats.train.target_mean,
                stats.train.target_std);
  os << buf << '\n';
  std::snprintf(buf, sizeof(buf), "%-8s | %10s | %10s | %10s\n", "Split", "Commands", "Unique", "Unseen");
  os << buf;
  for (const SplitStats* s : {&stats.train, &stats.valid, &stats.test}) {
    const std::string unseen = s->unseen_commands ? std::to_string(*s->unseen_commands) : "-";
    std::snprintf(buf, sizeof(buf), "%-8s | %10zu | %10zu | %10s\n", s->name.c_str(), s->total_commands,
                  s->unique_commands, unseen.c_str());
    os << buf;
  }
  return os.str();
}

std::set<std::string> seen_command_set(const std::vector<DataPoint>& train) {
  std::set<std::string> out;
  for (const auto& p : train) out.insert(p.commands.begin(), p.commands.end());
  return out;
}

}  // namespace acg::text
