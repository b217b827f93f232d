#include <doctest.h>

#include <cmath>
#include <set>

#include "acg/errors.hpp"
#include "acg/models.hpp"

using namespace acg;
using namespace acg::models;
using L = long double;

namespace {

net::HyperParams tiny() {
  net::HyperParams hp;
  hp.d_emb = 3;
  hp.d_hid = 4;
  hp.d_att = 3;
  hp.dropout = 0.0;
  hp.seed = 5;
  return hp;
}

text::Vocab toy_vocab() {
  text::Vocab v;
  for (const char* w : {"go", "east", "south", "open", "box", "take", "bug", "from", "you", "see", "a", "."}) v.add(w);
  return v;
}

text::DataPoint toy_point(std::vector<std::string> commands) {
  text::DataPoint p;
  p.state_id = "s";
  p.context = text::tokenize("you see a box . you see a bug . go east");
  p.commands = std::move(commands);
  return p;
}

template <typename S>
void randomize(net::Network<S>& net, std::uint64_t seed, double scale = 0.5) {
  Rng rng(seed);
  for (auto& p : net.params()) {
    for (ad::Index i = 0; i < p.value.size(); ++i) p.value(i) = static_cast<S>(rng.uniform(-scale, scale));
  }
}

template <typename S>
S loss_value(net::Network<S>& net, const TrainingInstance& inst) {
  ad::Graph<S> g;
  net::Forward<S> f(net, g);
  return instance_loss(f, inst)->item();
}

using Seqs = std::vector<std::vector<std::string>>;

}  // namespace

TEST_CASE("architecture names") {
  CHECK(parse_architecture("PS+Cat") == Architecture::PS_CAT);
  CHECK(parse_architecture("hred") == Architecture::HRED_PS);
  CHECK(parse_architecture("PS_BS") == Architecture::PS_BS);
  CHECK(parse_architecture(to_string(Architecture::HRED_PS)) == Architecture::HRED_PS);
  CHECK_THROWS_AS(parse_architecture("lstm"), ConfigError);
}

TEST_CASE("target linearization") {
  CHECK(linearize_targets({"go south", "go east"}, Architecture::PS_CAT) ==
        Seqs{{"go", "east", "<sep>", "go", "south", "<eos>"}});
  CHECK(linearize_targets({}, Architecture::PS_CAT) == Seqs{{"<eos>"}});
  CHECK(linearize_targets({}, Architecture::HRED_PS) == Seqs{{"<eocs>"}});
  CHECK(linearize_targets({}, Architecture::PS_BS).empty());
  CHECK(linearize_targets({"b", "a"}, Architecture::PS_BS) == Seqs{{"a", "<eos>"}, {"b", "<eos>"}});
  CHECK(linearize_targets({"b", "a"}, Architecture::HRED_PS) == Seqs{{"a", "<eos>"}, {"b", "<eos>"}, {"<eocs>"}});
  CHECK(linearize_targets({"b", "a"}, Architecture::PS_CAT) == Seqs{{"a", "<sep>", "b", "<eos>"}});

  // Injective over random command sets, with exactly |S|-1 separators.
  const std::vector<std::string> pool = {"go east", "go west", "take bug", "open box", "take bug from box", "go"};
  std::set<Seqs> seen[3];
  for (int mask = 0; mask < 64; ++mask) {
    std::vector<std::string> set;
    for (int i = 0; i < 6; ++i) {
      if (mask & (1 << i)) set.push_back(pool[static_cast<std::size_t>(i)]);
    }
    int a = 0;
    for (auto arch : {Architecture::PS_BS, Architecture::HRED_PS, Architecture::PS_CAT}) {
      const auto lin = linearize_targets(set, arch);
      CHECK(seen[a++].insert(lin).second);
      if (arch == Architecture::PS_CAT) {
        CHECK(std::count(lin[0].begin(), lin[0].end(), "<sep>") == static_cast<long>(std::max<std::size_t>(set.size(), 1) - 1));
      }
    }
  }
}

TEST_CASE("training instances") {
  const auto vocab = toy_vocab();
  auto p = toy_point({"take bug", "go east", "take zebra"});
  auto inst = make_instance(p, vocab, Architecture::PS_CAT);
  REQUIRE(inst.targets.size() == 1);
  const std::vector<int> expected = {vocab.id("go"),   vocab.id("east"), text::Vocab::kSep, vocab.id("take"),
                                     vocab.id("bug"),  text::Vocab::kSep, vocab.id("take"), text::Vocab::kUnk,
                                     text::Vocab::kEos};
  CHECK(inst.targets[0] == expected);
  CHECK(inst.unknown_targets == 1);
  CHECK_FALSE(inst.entity.has_value());

  p.context.push_back("zebra");
  inst = make_instance(p, vocab, Architecture::HRED_PS);
  CHECK(inst.unknown_targets == 0);
  CHECK(inst.targets.size() == 4);
  CHECK(inst.targets[2] == std::vector<int>{vocab.id("take"), vocab.size(), text::Vocab::kEos});
  CHECK(inst.targets[3] == std::vector<int>{text::Vocab::kEndOfSet});
  CHECK(target_tokens(inst) == 3 + 3 + 3 + 1);

  p.task = text::Task::ACGE;
  p.entities = {{"bug", 8, 8}};
  CHECK(make_instance(p, vocab, Architecture::PS_BS).entity == std::make_pair(8, 8));
  p.entities.clear();
  CHECK_THROWS_AS(make_instance(p, vocab, Architecture::PS_BS), ConsistencyError);
}

TEST_CASE("closed-form loss at zero parameters") {
  // Every parameter zero: p_s uniform over |V|, s = 1/2, alpha uniform over
  // the N source positions.
  const auto vocab = toy_vocab();
  net::Network<double> net(tiny(), vocab.size());
  for (auto& p : net.params()) p.value.setZero();
  const auto point = toy_point({"go east", "take bug"});
  const auto inst = make_instance(point, vocab, Architecture::PS_CAT);
  const double V = vocab.size();
  const double N = static_cast<double>(point.context.size());
  double expected = 0.0;
  for (int y : inst.targets[0]) {
    const double copies = static_cast<double>(std::count(inst.source.pointer_ids.begin(), inst.source.pointer_ids.end(), y));
    expected += -std::log(0.5 / V + 0.5 * copies / N + 1e-12);
  }
  CHECK(loss_value(net, inst) == doctest::Approx(expected).epsilon(1e-12));

  // Without copies the closed form is T ln(2|V|).
  auto no_copy = toy_point({"take from"});
  no_copy.context = {"bug"};
  const auto flat = make_instance(no_copy, vocab, Architecture::PS_CAT);
  CHECK(loss_value(net, flat) == doctest::Approx(3 * std::log(2 * V)).epsilon(1e-9));
}

TEST_CASE("structural reductions between objectives") {
  const auto vocab = toy_vocab();
  net::Network<double> net(tiny(), vocab.size());
  randomize(net, 3);
  const auto point = toy_point({"open box"});
  const auto bs = make_instance(point, vocab, Architecture::PS_BS);
  const auto cat = make_instance(point, vocab, Architecture::PS_CAT);
  const auto hred = make_instance(point, vocab, Architecture::HRED_PS);
  CHECK(loss_value(net, bs) == loss_value(net, cat));

  ad::Graph<double> g;
  net::Forward<double> f(net, g);
  const auto enc = encode(f, hred);
  auto session = f.session_step(f.zeros(4), f.first_query(enc.context));
  ad::Tensor<double> q;
  const double command = sequence_loss(f, enc, session, hred.targets[0], &q).item();
  session = f.session_step(session, q);
  const double eocs = sequence_loss(f, enc, session, hred.targets[1]).item();
  CHECK(loss_value(net, hred) == doctest::Approx(command + eocs).epsilon(1e-14));

  const auto empty_cat = make_instance(toy_point({}), vocab, Architecture::PS_CAT);
  REQUIRE(empty_cat.targets == std::vector<std::vector<int>>{{text::Vocab::kEos}});
  CHECK(loss_value(net, empty_cat) > 0.0);
  ad::Graph<double> g2;
  net::Forward<double> f2(net, g2);
  CHECK_FALSE(instance_loss(f2, make_instance(toy_point({}), vocab, Architecture::PS_BS)).has_value());

  // PS_BS sums independent sequences that share one encoder pass.
  const auto two = make_instance(toy_point({"open box", "go east"}), vocab, Architecture::PS_BS);
  ad::Graph<double> g3;
  net::Forward<double> f3(net, g3);
  const auto enc3 = encode(f3, two);
  const double sum = loss_ps_bs(f3, enc3, two.targets[0]).item() + loss_ps_bs(f3, enc3, two.targets[1]).item();
  CHECK(loss_value(net, two) == doctest::Approx(sum).epsilon(1e-14));
}

TEST_CASE("HRED loss depends on target order") {
  const auto vocab = toy_vocab();
  net::Network<double> net(tiny(), vocab.size());
  randomize(net, 17);
  const auto inst = make_instance(toy_point({"go east", "take bug"}), vocab, Architecture::HRED_PS);
  auto swapped = inst.targets;
  std::swap(swapped[0], swapped[1]);
  ad::Graph<double> g;
  net::Forward<double> f(net, g);
  const auto enc = encode(f, inst);
  const double a = loss_hred(f, enc, inst.targets).item();
  const double b = loss_hred(f, enc, swapped).item();
  CHECK(a != doctest::Approx(b));
  CHECK_THROWS_AS(loss_hred(f, enc, {inst.targets[0]}), ContractError);
}

TEST_CASE("losses are finite and nonnegative") {
  const auto vocab = toy_vocab();
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    net::Network<double> net(tiny(), vocab.size());
    randomize(net, 100 + static_cast<std::uint64_t>(trial), 2.0);
    for (auto arch : {Architecture::PS_BS, Architecture::HRED_PS, Architecture::PS_CAT}) {
      const auto v = loss_value(net, make_instance(toy_point({"go east", "take bug from box"}), vocab, arch));
      CHECK(std::isfinite(v));
      CHECK(v >= 0.0);
    }
  }
}

TEST_CASE("objective gradients on a two-command instance") {
  const auto vocab = toy_vocab();
  auto point = toy_point({"take bug", "go east"});
  point.task = text::Task::ACGE;
  point.entities = {{"bug", 8, 8}};
  for (auto arch : {Architecture::PS_BS, Architecture::HRED_PS, Architecture::PS_CAT}) {
    CAPTURE(to_string(arch));
    net::Network<L> net(tiny(), vocab.size());
    randomize(net, 23);
    const auto inst = make_instance(point, vocab, arch);
    auto params = net.params().pointers();
    const auto report = ad::grad_check<L>(
        [&](ad::Graph<L>& g) {
          net::Forward<L> f(net, g);
          return *instance_loss(f, inst);
        },
        std::span<ad::Parameter<L>* const>(params), 1e-5L);
    INFO(report.reason << " worst " << report.worst_entry);
    CHECK_FALSE(report.rejected);
    CHECK(report.max_relative_error <= 1e-4L);
  }
}

TEST_CASE("gradient descent overfits one instance") {
  const auto vocab = toy_vocab();
  for (auto arch : {Architecture::PS_BS, Architecture::HRED_PS, Architecture::PS_CAT}) {
    net::Network<double> net(tiny(), vocab.size());
    const auto inst = make_instance(toy_point({"go east", "take bug"}), vocab, arch);
    const double start = loss_value(net, inst);
    double last = start;
    for (int step = 0; step < 50; ++step) {
      ad::Graph<double> g;
      net::Forward<double> f(net, g);
      const auto loss = *instance_loss(f, inst);
      last = loss.item();
      g.backward(loss);
      for (auto& p : net.params()) {
        p.value -= 0.1 * p.grad;
        p.zero_grad();
      }
    }
    CHECK(last < 0.5 * start);
  }
}
