// acgtool: gen | stats | train | predict | eval

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "acg/errors.hpp"
#include "acg/eval.hpp"
#include "acg/hash.hpp"
#include "acg/runtime.hpp"
#include "acg/worldsim.hpp"

using namespace acg;
using Json = nlohmann::ordered_json;

namespace {

constexpr const char* kToolVersion = "acgtool 1.0.0";

// Digest of the effective option values, output locations excluded.
std::string config_digest(const CLI::App& sub) {
  std::map<std::string, std::string> values;
  for (const CLI::Option* opt : sub.get_options()) {
    const std::string name = opt->get_name();
    if (name == "--out" || name == "--metrics" || name == "--help") continue;
    std::string v;
    if (opt->count() > 0) {
      for (const auto& r : opt->results()) v += r + "\x1f";
    } else {
      v = opt->get_default_str();
    }
    values[name] = v;
  }
  Fnv1a h;
  for (const auto& [k, v] : values) {
    h.update(k);
    h.update("=");
    h.update(v);
    h.update("\n");
  }
  return text::hex64(h.digest());
}

Json artifact_meta(const CLI::App& sub, std::uint64_t seed) {
  return Json{{"tool", kToolVersion}, {"command", sub.get_name()}, {"config_digest", config_digest(sub)}, {"seed", seed}};
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << content;
  if (!out) throw IoError("failed writing " + path);
}

std::string meta_comment(const Json& meta) { return "# " + meta.dump() + "\n"; }

std::vector<text::DataPoint> load_optional(const std::string& path) {
  return path.empty() ? std::vector<text::DataPoint>{} : text::load_dataset(path);
}

// ---------------------------------------------------------------------------

struct GenOptions {
  int games = 500;
  std::uint64_t seed = 1;
  std::string out = "data";
  world::SplitRatios ratios;
  world::WorldConfig world = world::WorldConfig::defaults();
};

void run_gen(const CLI::App& sub, const GenOptions& o) {
  auto wc = o.world;
  wc.seed = o.seed;
  const auto corpus = world::generate_corpus(wc, o.games, o.ratios);
  std::filesystem::create_directories(o.out);
  const Json meta = artifact_meta(sub, o.seed);
  std::string stats;
  for (auto task : {text::Task::ACG, text::Task::ACGE}) {
    const auto& splits = task == text::Task::ACG ? corpus.acg : corpus.acge;
    const std::string prefix = task == text::Task::ACG ? "acg" : "acge";
    for (int s = 0; s < 3; ++s) {
      const auto split = static_cast<world::Split>(s);
      Json m = meta;
      m["task"] = text::to_string(task);
      m["split"] = std::string(world::to_string(split));
      m["games"] = corpus.games[static_cast<std::size_t>(s)].size();
      if (task == text::Task::ACGE) {
        m["grouping"] = "one point per (state, entity); commands grouped by primary entity; inert entities kept";
      }
      text::save_dataset(o.out + "/" + prefix + "_" + std::string(world::to_string(split)) + ".jsonl",
                         splits[static_cast<std::size_t>(s)], m);
    }
    stats += text::format_stats(text::compute_stats(splits[0], splits[1], splits[2]), text::to_string(task)) + "\n";
  }
  write_text(o.out + "/stats.txt", meta_comment(meta) + stats);
  std::cout << stats;
}

// ---------------------------------------------------------------------------

struct StatsOptions {
  std::string train, valid, test;
  std::string title = "dataset";
};

void run_stats(const StatsOptions& o) {
  const auto train = text::load_dataset(o.train);
  const auto valid = load_optional(o.valid);
  const auto test = load_optional(o.test);
  std::cout << text::format_stats(text::compute_stats(train, valid, test), o.title);
}

// ---------------------------------------------------------------------------

struct TrainOptions {
  std::string arch = "ps_cat";
  std::string train, valid;
  std::string out = "model.ckpt";
  std::string metrics;
  std::string resume;
  std::string embeddings;
  std::string optimizer = "adam";
  net::HyperParams hyper;
  runtime::TrainConfig cfg;
  int beam_width = 0;
  int top_k = 0;
};

runtime::DecodeConfig decode_for(text::Task task, int beam_width, int top_k, int max_len, int max_cmds) {
  auto d = runtime::default_decode(task);
  if (beam_width > 0) d.beam_width = beam_width;
  if (top_k > 0) d.top_k = top_k;
  d.max_len = max_len;
  d.max_cmds = max_cmds;
  if (d.top_k > d.beam_width) throw ContractError("top-k must not exceed the beam width");
  runtime::validate(d);
  return d;
}

text::Task task_of(const std::vector<text::DataPoint>& points) {
  return points.empty() ? text::Task::ACG : points.front().task;
}

void run_train(const CLI::App& sub, TrainOptions o) {
  const auto arch = models::parse_architecture(o.arch);
  o.cfg.optimizer = runtime::parse_optimizer(o.optimizer);
  const auto train = text::load_dataset(o.train);
  const auto valid = load_optional(o.valid);
  const auto vocab = text::build_vocab(train);
  o.cfg.decode = decode_for(task_of(train), o.beam_width, o.top_k, o.cfg.decode.max_len, o.cfg.decode.max_cmds);
  o.cfg.checkpoint_path = o.out;
  o.cfg.metrics_path = o.metrics;
  o.cfg.meta = artifact_meta(sub, o.cfg.seed);
  o.hyper.seed = o.cfg.seed;

  runtime::Model model;
  if (!o.resume.empty()) {
    model = runtime::load_checkpoint(o.resume);
    if (model.arch != arch) {
      throw ConsistencyError("checkpoint architecture " + models::to_string(model.arch) + " does not match --arch " +
                             models::to_string(arch));
    }
    runtime::require_vocab(model, vocab);
  } else {
    model = runtime::make_model(o.hyper, vocab, arch);
    if (!o.embeddings.empty()) {
      const int n = net::load_embeddings(*model.net, vocab, o.embeddings);
      std::cerr << "loaded " << n << " embedding rows\n";
    }
  }
  const auto result = runtime::train(model, train, valid, o.cfg, [](const runtime::EpochMetrics& m) {
    std::fprintf(stderr, "epoch %d  loss %.4f  valid P %.4f R %.4f F1 %.4f  %.1fs\n", m.epoch, m.train_loss,
                 m.valid_precision, m.valid_recall, m.valid_f1, m.seconds);
  });
  const auto& best = result.history.empty() ? runtime::EpochMetrics{} : *std::max_element(
      result.history.begin(), result.history.end(),
      [](const auto& a, const auto& b) { return a.valid_f1 < b.valid_f1; });
  std::printf("best epoch %d  valid precision %.4f  recall %.4f  F1 %.4f\n", result.best_epoch, best.valid_precision,
              best.valid_recall, best.valid_f1);
}

// ---------------------------------------------------------------------------

struct PredictOptions {
  std::string checkpoint, data, out = "predictions.jsonl", train;
  int beam_width = 0;
  int top_k = 0;
  int max_len = 10;
  int max_cmds = 30;
  bool length_normalize = false;
  bool show = false;
};

std::string show_list(const std::vector<std::string>& commands, const std::set<std::string>* seen) {
  std::string out;
  for (const auto& c : commands) {
    if (!out.empty()) out += "; ";
    out += seen != nullptr && seen->count(c) == 0 ? "*" + c + "*" : c;
  }
  return out.empty() ? "(none)" : out;
}

void run_predict(const CLI::App& sub, const PredictOptions& o) {
  auto model = runtime::load_checkpoint(o.checkpoint);
  const auto points = text::load_dataset(o.data);
  auto decode = decode_for(task_of(points), o.beam_width, o.top_k, o.max_len, o.max_cmds);
  decode.length_normalize = o.length_normalize;
  std::optional<std::set<std::string>> seen;
  if (!o.train.empty()) seen = text::seen_command_set(text::load_dataset(o.train));

  std::ofstream out(o.out, std::ios::trunc);
  if (!out) throw IoError("cannot write " + o.out);
  Json meta = artifact_meta(sub, model.net->hyper().seed);
  meta["architecture"] = models::to_string(model.arch);
  meta["checkpoint_epoch"] = model.epoch;
  out << Json{{"_meta", meta}}.dump() << '\n';
  std::size_t truncated = 0;
  for (const auto& p : points) {
    const auto pred = runtime::predict(model, p, decode);
    truncated += pred.truncated;
    Json line;
    line["state_id"] = p.state_id;
    if (p.task == text::Task::ACGE && !p.entities.empty()) line["entity"] = p.entities.front().name;
    line["predicted"] = pred.commands;
    line["truncated"] = pred.truncated;
    out << line.dump() << '\n';
    if (o.show) {
      std::cout << "== " << p.key() << "\n"
                << "context:   " << text::join(p.context) << "\n"
                << "predicted: " << show_list(pred.commands, seen ? &*seen : nullptr) << "\n"
                << "gold:      " << show_list(p.commands, seen ? &*seen : nullptr) << "\n";
    }
  }
  if (!out) throw IoError("failed writing " + o.out);
  if (o.show && seen) std::cout << "(*command* = not seen in training)\n";
  if (truncated > 0) std::cerr << "warning: " << truncated << " predictions hit a decode length limit\n";
}

// ---------------------------------------------------------------------------

struct EvalOptions {
  std::string predictions, gold, train;
  std::string out = "report";
  std::string name;
};

struct PredictionFile {
  Json meta;
  std::map<std::string, std::vector<std::string>> by_key;
};

PredictionFile load_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  PredictionFile f;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (j.contains("_meta")) {
        f.meta = j["_meta"];
        continue;
      }
      std::string key = j.at("state_id").get<std::string>();
      if (j.contains("entity")) key += "|" + j["entity"].get<std::string>();
      if (!f.by_key.emplace(key, j.at("predicted").get<std::vector<std::string>>()).second) {
        throw ParseError(path + ":" + std::to_string(n) + ": duplicate prediction for " + key);
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return f;
}

void run_eval(const CLI::App& sub, const EvalOptions& o) {
  const auto preds = load_predictions(o.predictions);
  const auto gold = text::load_dataset(o.gold);
  const auto train = load_optional(o.train);

  std::set<std::string> gold_keys;
  for (const auto& p : gold) gold_keys.insert(p.key());
  std::vector<std::string> unmatched;
  for (const auto& [key, _] : preds.by_key) {
    if (gold_keys.count(key) == 0) unmatched.push_back(key);
  }
  if (!unmatched.empty()) {
    std::string list;
    for (std::size_t i = 0; i < unmatched.size() && i < 20; ++i) list += (i ? ", " : "") + unmatched[i];
    if (unmatched.size() > 20) list += ", ...";
    throw ConsistencyError(std::to_string(unmatched.size()) + " prediction ids have no gold point: " + list);
  }
  std::vector<std::vector<std::string>> p_sets, g_sets;
  for (const auto& p : gold) {
    const auto it = preds.by_key.find(p.key());
    p_sets.push_back(it == preds.by_key.end() ? std::vector<std::string>{} : it->second);
    g_sets.push_back(p.commands);
  }
  const auto report = eval::evaluate(p_sets, g_sets, text::seen_command_set(train));
  std::string name = o.name;
  if (name.empty()) name = preds.meta.is_object() ? preds.meta.value("architecture", std::string("model")) : "model";

  const std::uint64_t seed = preds.meta.is_object() ? preds.meta.value("seed", std::uint64_t{0}) : 0;
  Json meta = artifact_meta(sub, seed);
  Json doc{{"_meta", meta}, {"model", name}, {"report", eval::to_json(report)}};
  std::filesystem::path base(o.out);
  if (base.has_parent_path()) std::filesystem::create_directories(base.parent_path());
  const std::string table = eval::format_table({{name, report}});
  write_text(o.out + ".json", doc.dump(2) + "\n");
  write_text(o.out + ".txt", meta_comment(meta) + table);
  write_text(o.out + "_missing.csv", meta_comment(meta) + eval::missing_csv(report));
  write_text(o.out + "_extra.csv", meta_comment(meta) + eval::extra_csv(report));
  std::cout << table;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const NumericError*>(&e) != nullptr) return 3;
  if (dynamic_cast<const IoError*>(&e) != nullptr) return 2;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Admissible command generation: corpus generation, training, prediction and evaluation"};
  app.set_config("--config", "", "key = value configuration file; [gen], [train], ... sections per subcommand");
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  GenOptions gen;
  auto* g = app.add_subcommand("gen", "Generate worlds and write ACG/ACGE splits");
  g->add_option("--games", gen.games, "Number of games")->capture_default_str()->check(CLI::NonNegativeNumber);
  g->add_option("--seed", gen.seed, "Corpus seed")->capture_default_str();
  g->add_option("--out", gen.out, "Output directory")->capture_default_str();
  g->add_option("--train-ratio", gen.ratios.train)->capture_default_str();
  g->add_option("--valid-ratio", gen.ratios.valid)->capture_default_str();
  g->add_option("--test-ratio", gen.ratios.test)->capture_default_str();
  g->add_option("--rooms-min", gen.world.rooms_min)->capture_default_str();
  g->add_option("--rooms-max", gen.world.rooms_max)->capture_default_str();
  g->add_option("--objects-min", gen.world.objects_min)->capture_default_str();
  g->add_option("--objects-max", gen.world.objects_max)->capture_default_str();
  g->add_option("--door-prob", gen.world.door_prob)->capture_default_str();
  g->add_option("--door-lock-prob", gen.world.door_lock_prob)->capture_default_str();
  g->add_option("--container-open-prob", gen.world.container_open_prob)->capture_default_str();
  g->add_option("--container-lock-prob", gen.world.container_lock_prob)->capture_default_str();
  g->add_option("--adjective-prob", gen.world.adjective_prob)->capture_default_str();
  g->add_option("--walk-length", gen.world.walkthrough_length, "States per game walkthrough")->capture_default_str();

  StatsOptions stats;
  auto* st = app.add_subcommand("stats", "Print corpus statistics");
  st->add_option("--train", stats.train)->required();
  st->add_option("--valid", stats.valid);
  st->add_option("--test", stats.test);
  st->add_option("--title", stats.title)->capture_default_str();

  TrainOptions tr;
  auto* t = app.add_subcommand("train", "Train one architecture");
  t->add_option("--arch", tr.arch, "ps_bs | hred_ps | ps_cat")->capture_default_str();
  t->add_option("--train", tr.train)->required();
  t->add_option("--valid", tr.valid);
  t->add_option("--out", tr.out, "Best checkpoint")->capture_default_str();
  t->add_option("--metrics", tr.metrics, "JSON-Lines metrics log");
  t->add_option("--resume", tr.resume, "Continue from a checkpoint");
  t->add_option("--embeddings", tr.embeddings, "Text embedding file");
  t->add_option("--epochs", tr.cfg.epochs)->capture_default_str();
  t->add_option("--lr", tr.cfg.lr)->capture_default_str();
  t->add_option("--optimizer", tr.optimizer, "adam | sgd")->capture_default_str();
  t->add_option("--clip", tr.cfg.clip, "Global gradient norm")->capture_default_str();
  t->add_option("--seed", tr.cfg.seed)->capture_default_str();
  t->add_option("--patience", tr.cfg.patience, "Epochs without improvement; 0 disables")->capture_default_str();
  t->add_option("--valid-limit", tr.cfg.valid_limit, "Validation points decoded per epoch; 0 = all")
      ->capture_default_str();
  t->add_option("--dropout", tr.hyper.dropout)->capture_default_str();
  t->add_option("--d-emb", tr.hyper.d_emb)->capture_default_str();
  t->add_option("--d-hid", tr.hyper.d_hid)->capture_default_str();
  t->add_option("--d-att", tr.hyper.d_att)->capture_default_str();
  t->add_option("--beam-width", tr.beam_width, "Default by task")->capture_default_str();
  t->add_option("--top-k", tr.top_k, "Default by task")->capture_default_str();
  t->add_option("--max-len", tr.cfg.decode.max_len)->capture_default_str();
  t->add_option("--max-cmds", tr.cfg.decode.max_cmds)->capture_default_str();

  PredictOptions pr;
  auto* p = app.add_subcommand("predict", "Predict command sets");
  p->add_option("--checkpoint", pr.checkpoint)->required();
  p->add_option("--data", pr.data)->required();
  p->add_option("--out", pr.out)->capture_default_str();
  p->add_option("--train", pr.train, "Training set, for flagging unseen commands with --show");
  p->add_option("--beam-width", pr.beam_width, "Default by task")->capture_default_str();
  p->add_option("--top-k", pr.top_k, "Default by task")->capture_default_str();
  p->add_option("--max-len", pr.max_len)->capture_default_str();
  p->add_option("--max-cmds", pr.max_cmds)->capture_default_str();
  p->add_flag("--length-normalize", pr.length_normalize);
  p->add_flag("--show", pr.show, "Print predictions next to gold");

  EvalOptions ev;
  auto* e = app.add_subcommand("eval", "Score predictions against gold");
  e->add_option("--predictions", ev.predictions)->required();
  e->add_option("--gold", ev.gold)->required();
  e->add_option("--train", ev.train, "Training set for seen/unseen recall");
  e->add_option("--out", ev.out, "Report path prefix")->capture_default_str();
  e->add_option("--name", ev.name, "Row label");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (g->parsed()) run_gen(*g, gen);
    if (st->parsed()) run_stats(stats);
    if (t->parsed()) run_train(*t, tr);
    if (p->parsed()) run_predict(*p, pr);
    if (e->parsed()) run_eval(*e, ev);
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return exit_code_for(err);
  }
  return 0;
}
