#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "acg/errors.hpp"
#include "acg/runtime.hpp"

using namespace acg;
using namespace acg::runtime;
using models::Architecture;
using text::Vocab;

namespace {

// A frozen toy model: the next-token distribution is a function of the
// prefix only. Token 0 is <eos>.
using Prefix = std::vector<int>;
using Table = std::function<Eigen::VectorXd(const Prefix&)>;

auto toy_step(const Table& table) {
  return [table](const Prefix& prefix, int prev) {
    Prefix next = prefix;
    if (prev >= 0) next.push_back(prev);
    StepResult<Prefix> r;
    r.log_probs = table(next).array().log().matrix();
    r.next = next;
    return r;
  };
}

struct Scored {
  std::vector<int> tokens;
  double score;
};

// Every sequence of at most `max_len` tokens: ended by <eos>, or cut at max_len.
std::vector<Scored> enumerate_all(const Table& table, int vocab, int max_len) {
  std::vector<Scored> out;
  std::function<void(Prefix, double)> rec = [&](Prefix prefix, double score) {
    const Eigen::VectorXd p = table(prefix);
    for (int y = 0; y < vocab; ++y) {
      Prefix next = prefix;
      next.push_back(y);
      const double s = score + std::log(p(y));
      if (y == 0 || static_cast<int>(next.size()) == max_len) {
        out.push_back({next, s});
      } else {
        rec(next, s);
      }
    }
  };
  rec({}, 0.0);
  std::stable_sort(out.begin(), out.end(), [](const Scored& a, const Scored& b) { return a.score > b.score; });
  return out;
}

Eigen::VectorXd dist(std::initializer_list<double> v) {
  Eigen::VectorXd d(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) d(i++) = x;
  return d;
}

Eigen::VectorXd hand_table(const Prefix& prefix) {
  if (prefix.empty()) return dist({0.1, 0.5, 0.3, 0.1});
  if (prefix.size() == 1) {
    switch (prefix[0]) {
      case 1: return dist({0.6, 0.2, 0.1, 0.1});
      case 2: return dist({0.7, 0.1, 0.1, 0.1});
      default: return dist({0.25, 0.25, 0.25, 0.25});
    }
  }
  return dist({0.9, 0.05, 0.03, 0.02});
}

Table random_table(std::uint64_t seed, int vocab) {
  return [seed, vocab](const Prefix& prefix) {
    std::uint64_t h = seed;
    for (int t : prefix) h = h * 1000003ull + static_cast<std::uint64_t>(t) + 1;
    Rng rng(h);
    Eigen::VectorXd d(vocab);
    for (int i = 0; i < vocab; ++i) d(i) = 0.05 + rng.uniform();
    return Eigen::VectorXd(d / d.sum());
  };
}

net::HyperParams tiny() {
  net::HyperParams hp;
  hp.d_emb = 6;
  hp.d_hid = 8;
  hp.d_att = 6;
  hp.dropout = 0.0;
  hp.seed = 11;
  return hp;
}

text::DataPoint point(const std::string& id, const std::string& context, std::vector<std::string> commands) {
  text::DataPoint p;
  p.state_id = id;
  p.context = text::tokenize(context);
  p.commands = std::move(commands);
  return p;
}

std::vector<text::DataPoint> toy_corpus() {
  return {point("a", "-= kitchen =- you see a closed box . there is an exit to the east .",
                {"go east", "open box"}),
          point("b", "-= attic =- there is a bug on the floor . there is an exit to the west .",
                {"go west", "take bug"}),
          point("c", "-= cellar =- you see an open box . the box is empty . there is an exit to the north .",
                {"close box", "go north"})};
}

Model toy_model(Architecture arch, const std::vector<text::DataPoint>& corpus) {
  return make_model(tiny(), text::build_vocab(corpus), arch);
}

TrainConfig quick_config(int epochs) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.lr = 0.01;
  cfg.patience = 0;
  cfg.decode.beam_width = 4;
  cfg.decode.top_k = 2;
  return cfg;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("acg_runtime_" + name);
}

}  // namespace

TEST_CASE("beam search equals exhaustive enumeration on the hand-built table") {
  const auto all = enumerate_all(hand_table, 4, 3);
  const auto beams = beam_search(Prefix{}, -1, 0, toy_step(hand_table), BeamOptions{4, 3, false});
  REQUIRE(beams.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CAPTURE(i);
    CHECK(beams[i].tokens == all[i].tokens);
    CHECK(beams[i].score == doctest::Approx(all[i].score).epsilon(1e-12));
  }
  CHECK(beams[0].tokens == std::vector<int>{1, 0});
  CHECK(std::exp(beams[0].score) == doctest::Approx(0.3));
}

TEST_CASE("a beam wide enough to hold every prefix is exhaustive") {
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    const auto table = random_table(seed, 4);
    const auto all = enumerate_all(table, 4, 3);
    REQUIRE(all.size() == 40);
    const auto beams = beam_search(Prefix{}, -1, 0, toy_step(table), BeamOptions{40, 3, false});
    REQUIRE(beams.size() == 40);
    for (std::size_t i = 0; i < 40; ++i) {
      CHECK(beams[i].tokens == all[i].tokens);
      CHECK(beams[i].finished == (beams[i].tokens.back() == 0));
    }
  }
}

TEST_CASE("beam invariants and width one") {
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    const auto table = random_table(100 + seed, 5);
    const auto beams = beam_search(Prefix{}, -1, 0, toy_step(table), BeamOptions{6, 5, false});
    for (std::size_t i = 1; i < beams.size(); ++i) CHECK(beams[i - 1].score >= beams[i].score);
    for (const auto& b : beams) {
      CHECK(b.finished == (b.tokens.back() == 0));
      CHECK(b.score <= 0.0);
    }
    const int stops[] = {0};
    const auto greedy = greedy_decode(Prefix{}, -1, stops, toy_step(table), 5);
    const auto one = beam_search(Prefix{}, -1, 0, toy_step(table), BeamOptions{1, 5, false});
    REQUIRE(one.size() == 1);
    CHECK(one[0].tokens == greedy.tokens);
    CHECK(one[0].finished == !greedy.truncated);
  }
  CHECK_THROWS_AS(beam_search(Prefix{}, -1, 0, toy_step(hand_table), BeamOptions{0, 3, false}), ContractError);
}

TEST_CASE("beam deduplicates by rendered key") {
  // Tokens 1 and 2 render identically.
  const auto key = [](const std::vector<int>& ids) {
    std::string s;
    for (int t : ids) s += t == 2 ? '1' : static_cast<char>('0' + t);
    return s;
  };
  const auto beams = beam_search(Prefix{}, -1, 0, toy_step(hand_table), BeamOptions{4, 3, false}, key);
  std::set<std::string> keys;
  for (const auto& b : beams) CHECK(keys.insert(key(b.tokens)).second);
  CHECK(beams.size() < 4);
}

TEST_CASE("length normalization reorders by mean log-probability") {
  const auto raw = beam_search(Prefix{}, -1, 0, toy_step(hand_table), BeamOptions{4, 3, false});
  const auto norm = beam_search(Prefix{}, -1, 0, toy_step(hand_table), BeamOptions{4, 3, true});
  for (std::size_t i = 1; i < norm.size(); ++i) {
    CHECK(norm[i - 1].score / norm[i - 1].tokens.size() >= norm[i].score / norm[i].tokens.size());
  }
  CHECK(raw.size() == norm.size());
}

TEST_CASE("command splitting") {
  Vocab v;
  for (const char* w : {"go", "east", "south"}) v.add(w);
  const auto src = net::make_source(v, {"go", "east"});
  const std::vector<int> ids = {v.id("go"), v.id("east"), Vocab::kSep, v.id("go"), v.id("south"), Vocab::kEos};
  CHECK(split_commands(v, src, ids) == std::vector<std::string>{"go east", "go south"});
  const std::vector<int> messy = {Vocab::kSep, v.id("go"), Vocab::kSep, Vocab::kSep, v.id("go"), Vocab::kEos};
  CHECK(split_commands(v, src, messy) == std::vector<std::string>{"go"});
  CHECK(split_commands(v, src, std::vector<int>{Vocab::kEos}).empty());
}

TEST_CASE("multi-command decoding termination") {
  const auto corpus = toy_corpus();
  auto model = toy_model(Architecture::HRED_PS, corpus);
  auto& net = *model.net;
  // Shortlist certain of <eocs> with the switch fully open.
  net.param(net.short_out_bias).value(Vocab::kEndOfSet) = 50.0;
  net.param(net.switch_out_bias).value(0) = 50.0;
  const auto p = predict_multi(model, corpus[0], 30, 10);
  CHECK(p.commands.empty());
  CHECK_FALSE(p.truncated);

  // Always "go": every session repeats it; dedup leaves one and the cap trips.
  net.param(net.short_out_bias).value(Vocab::kEndOfSet) = 0.0;
  net.param(net.short_out_bias).value(model.vocab.id("go")) = 50.0;
  const auto runaway = predict_multi(model, corpus[0], 5, 4);
  CHECK(runaway.commands == std::vector<std::string>{"go go go go"});
  CHECK(runaway.truncated);

  model.arch = Architecture::PS_CAT;
  const auto cat = predict_multi(model, corpus[0], 3, 4);
  CHECK(cat.truncated);
  CHECK(cat.commands.size() == 1);

  model.arch = Architecture::PS_BS;
  CHECK_THROWS_AS(predict_multi(model, corpus[0], 3, 4), ContractError);
  CHECK_THROWS_AS(predict_ps_bs(model, corpus[0], 4, 3, 4), ContractError);
  const auto one = predict_ps_bs(model, corpus[0], 1, 1, 4);
  CHECK(one.commands == std::vector<std::string>{"go go go go"});
}

TEST_CASE("beam width one matches greedy on a network") {
  const auto corpus = toy_corpus();
  auto model = toy_model(Architecture::PS_BS, corpus);
  for (int trial = 0; trial < 20; ++trial) {
    Rng rng(static_cast<std::uint64_t>(trial) + 1);
    for (auto& p : model.net->params()) {
      for (ad::Index i = 0; i < p.value.size(); ++i) p.value(i) = rng.uniform(-1.0, 1.0);
    }
    for (const auto& pt : corpus) {
      DecoderSession s(model, pt);
      const auto step = [&](const DecoderSession::State& h, int prev) { return s.step(h, prev); };
      const int stops[] = {Vocab::kEos};
      const auto greedy = greedy_decode(s.initial_state(), Vocab::kBos, stops, step, 10);
      const auto beam = beam_search(s.initial_state(), Vocab::kBos, Vocab::kEos, step, BeamOptions{1, 10, false});
      CHECK(beam.at(0).tokens == greedy.tokens);
      double total = 0.0;
      for (const auto& b : predict_ps_bs(model, pt, 3, 5, 10).commands) total += !b.empty();
      CHECK(total <= 3);
    }
  }
}

TEST_CASE("configuration contracts") {
  TrainConfig cfg;
  CHECK_NOTHROW(validate(cfg));
  cfg.clip = 0.0;
  CHECK_THROWS_AS(validate(cfg), ConfigError);
  cfg = TrainConfig{};
  cfg.lr = -1.0;
  CHECK_THROWS_AS(validate(cfg), ConfigError);
  cfg = TrainConfig{};
  cfg.epochs = 0;
  CHECK_THROWS_AS(validate(cfg), ConfigError);
  cfg = TrainConfig{};
  cfg.decode.top_k = 31;
  CHECK_THROWS_AS(validate(cfg), ConfigError);
  CHECK(default_decode(text::Task::ACG).top_k == 11);
  CHECK(default_decode(text::Task::ACG).beam_width == 30);
  CHECK(default_decode(text::Task::ACGE).top_k == 3);
  CHECK(default_decode(text::Task::ACGE).beam_width == 10);
  CHECK(parse_optimizer("sgd") == Optimizer::Sgd);
  CHECK_THROWS_AS(parse_optimizer("rmsprop"), ConfigError);
}

TEST_CASE("global norm clipping") {
  ad::ParameterSet<double> params;
  auto& a = params.add("a", ad::Matrix<double>::Zero(2, 1));
  auto& b = params.add("b", ad::Matrix<double>::Zero(1, 1));
  a.grad << 3.0, 0.0;
  b.grad << 4.0;
  a.touched = b.touched = true;
  CHECK(clip_global_norm(params, 10.0) == doctest::Approx(5.0));
  CHECK(a.grad(0) == 3.0);
  CHECK(clip_global_norm(params, 1.0) == doctest::Approx(5.0));
  CHECK(a.grad(0) == doctest::Approx(0.6));
  CHECK(b.grad(0) == doctest::Approx(0.8));
}

TEST_CASE("adam matches its closed form and skips untouched parameters") {
  ad::ParameterSet<double> params;
  auto& a = params.add("a", ad::Matrix<double>::Constant(1, 1, 1.0));
  auto& b = params.add("b", ad::Matrix<double>::Constant(1, 1, 1.0));
  TrainConfig cfg;
  cfg.lr = 0.1;
  Trainer opt(cfg, params);
  // Bias-corrected first step moves by lr * g / (|g| + eps).
  a.grad(0) = 0.5;
  a.touched = true;
  opt.step();
  CHECK(a.value(0) == doctest::Approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-12));
  CHECK(b.value(0) == 1.0);
  CHECK(a.grad(0) == 0.0);
  // b's first update is also a bias-corrected first step.
  b.grad(0) = -2.0;
  b.touched = true;
  opt.step();
  CHECK(b.value(0) == doctest::Approx(1.1).epsilon(1e-9));
  CHECK(a.value(0) == doctest::Approx(0.9).epsilon(1e-6));
}

TEST_CASE("training overfits a single instance") {
  // Two commands share one start state under PS_BS, so its floor there is
  // 2 ln 2; it gets a single-command instance.
  net::HyperParams hp = tiny();
  hp.d_emb = 16;
  hp.d_att = 16;
  hp.d_hid = 32;
  for (auto arch : {Architecture::PS_BS, Architecture::HRED_PS, Architecture::PS_CAT}) {
    CAPTURE(models::to_string(arch));
    auto p = toy_corpus()[0];
    if (arch == Architecture::PS_BS) p.commands = {"go east"};
    const std::vector<text::DataPoint> one = {p};
    auto model = make_model(hp, text::build_vocab(one), arch);
    const double start = mean_loss(model, one);
    const auto result = train(model, one, {}, quick_config(200));
    CHECK(result.history.size() == 200);
    CHECK(start > 1.0);
    CHECK(result.history.back().train_loss < 0.1);
    CHECK(mean_loss(model, one) < 0.1);
    CHECK(model.epoch == 200);
  }
}

TEST_CASE("training is deterministic and checkpoints round-trip") {
  const auto corpus = toy_corpus();
  const auto ckpt = temp_path("det.ckpt");
  const auto log = temp_path("det.jsonl");
  auto run = [&](std::uint64_t seed) {
    auto model = toy_model(Architecture::PS_CAT, corpus);
    auto cfg = quick_config(6);
    cfg.seed = seed;
    cfg.checkpoint_path = ckpt.string();
    cfg.metrics_path = log.string();
    cfg.meta = {{"seed", seed}};
    auto hp = model.net->hyper();
    hp.dropout = 0.3;
    model = make_model(hp, model.vocab, model.arch);
    const auto result = train(model, corpus, corpus, cfg);
    std::vector<double> losses;
    for (const auto& m : result.history) losses.push_back(m.train_loss);
    return std::make_pair(losses, checkpoint_bytes(model));
  };
  const auto a = run(5);
  const auto b = run(5);
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
  CHECK(run(6).first != a.first);

  // The saved best checkpoint equals the restored model.
  run(5);
  std::ifstream in(ckpt, std::ios::binary);
  const std::string saved((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(saved == a.second);
  auto loaded = load_checkpoint(ckpt.string());
  CHECK(checkpoint_bytes(loaded) == saved);
  CHECK(loaded.meta.at("seed") == 5);

  // Metrics log: meta line plus one line per epoch.
  std::ifstream logf(log);
  std::string line;
  int lines = 0;
  while (std::getline(logf, line)) ++lines;
  CHECK(lines == 7);

  // save -> load -> save is byte-identical; predictions agree.
  save_checkpoint(ckpt.string(), loaded);
  auto again = load_checkpoint(ckpt.string());
  CHECK(checkpoint_bytes(again) == checkpoint_bytes(loaded));
  const DecodeConfig dc = quick_config(1).decode;
  for (const auto& p : corpus) CHECK(predict(loaded, p, dc).commands == predict(again, p, dc).commands);
  std::filesystem::remove(ckpt);
  std::filesystem::remove(log);
}

TEST_CASE("resume continues epoch numbering") {
  const auto corpus = toy_corpus();
  auto model = toy_model(Architecture::HRED_PS, corpus);
  auto cfg = quick_config(3);
  train(model, corpus, {}, cfg);
  CHECK(model.epoch == 3);
  cfg.epochs = 5;
  const auto more = train(model, corpus, {}, cfg);
  REQUIRE(more.history.size() == 2);
  CHECK(more.history[0].epoch == 4);
  CHECK(model.epoch == 5);
}

TEST_CASE("corrupted checkpoints are rejected") {
  const auto corpus = toy_corpus();
  const auto model = toy_model(Architecture::PS_BS, corpus);
  const std::string bytes = checkpoint_bytes(model);
  CHECK_NOTHROW(parse_checkpoint(bytes, "mem"));
  CHECK_THROWS_AS(parse_checkpoint(bytes.substr(0, bytes.size() / 2), "mem"), ParseError);
  CHECK_THROWS_AS(parse_checkpoint("", "mem"), ParseError);
  for (std::size_t pos : {std::size_t{0}, std::size_t{9}, std::size_t{30}, bytes.size() / 2, bytes.size() - 1}) {
    std::string bad = bytes;
    bad[pos] = static_cast<char>(bad[pos] ^ 0x5a);
    CHECK_THROWS_AS(parse_checkpoint(bad, "mem"), ParseError);
  }
  CHECK_THROWS_AS(load_checkpoint(temp_path("missing.ckpt").string()), IoError);

  Vocab other = model.vocab;
  other.add("zebra");
  CHECK_NOTHROW(require_vocab(model, model.vocab));
  CHECK_THROWS_AS(require_vocab(model, other), ConsistencyError);
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
  const auto corpus = toy_corpus();
  auto model = toy_model(Architecture::PS_CAT, corpus);
  model.net->param(model.net->short_out_bias).value(0) = std::nan("");
  try {
    train(model, corpus, {}, quick_config(1));
    FAIL("expected a numeric abort");
  } catch (const NumericError& e) {
    const std::string what = e.what();
    CHECK(what.find("epoch 1") != std::string::npos);
    CHECK(what.find("step 1") != std::string::npos);
    CHECK(what.find("instance") != std::string::npos);
  }
}
