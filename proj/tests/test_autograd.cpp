#include "doctest.h"

#include <cmath>
#include <vector>

#include "acg/autograd.hpp"

using namespace acg;
using ad::Graph;
using ad::Matrix;
using ad::Parameter;
using ad::ParameterSet;
using Mat = Matrix<double>;

namespace {

Mat random_matrix(Rng& rng, int rows, int cols) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.uniform(-2.0, 2.0);
  return m;
}

Mat from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  Mat m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index r = 0;
  for (const auto& row : rows) {
    Eigen::Index c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

Mat column(std::initializer_list<double> values) {
  Mat m(static_cast<Eigen::Index>(values.size()), 1);
  Eigen::Index i = 0;
  for (double v : values) m(i++, 0) = v;
  return m;
}

}  // namespace

TEST_CASE("matmul values and shape errors") {
  Graph<double> g;
  auto id = g.constant(Mat::Identity(2, 2));
  auto m = g.constant(from_rows({{1, 2}, {3, 4}}));
  CHECK(ad::matmul(id, m).value() == from_rows({{1, 2}, {3, 4}}));

  auto row = g.constant(from_rows({{1, 0}}));
  auto col = g.constant(column({2, 5}));
  CHECK(ad::matmul(row, col).item() == 2.0);

  auto bad = g.constant(Mat::Zero(3, 2));
  try {
    ad::matmul(m, bad);
    FAIL("expected a dimension error");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x2]") != std::string::npos);
    CHECK(msg.find("[3x2]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient matches finite differences") {
  Rng rng(11);
  ParameterSet<double> ps;
  auto& a = ps.add("a", random_matrix(rng, 3, 4));
  auto& b = ps.add("b", random_matrix(rng, 4, 2));
  const Mat weights = random_matrix(rng, 3, 2);
  auto loss = [&](Graph<double>& g) {
    auto c = ad::matmul(g.parameter(a), g.parameter(b));
    return ad::sum(ad::mul(c, g.constant(weights)));
  };
  auto params = ps.pointers();
  auto report = ad::grad_check<double>(loss, params, 1e-5);
  CHECK_FALSE(report.rejected);
  CHECK(report.entries_checked == 20);
  CHECK(report.max_relative_error <= 1e-4);
}

TEST_CASE("pointwise primitives") {
  Graph<double> g;
  auto zero = g.constant(Mat::Zero(1, 1));
  CHECK(ad::sigmoid(zero).item() == 0.5);
  CHECK(ad::tanh(zero).item() == 0.0);

  Rng rng(3);
  auto x = g.constant(random_matrix(rng, 4, 1));
  auto same = ad::dropout(x, 0.0, true, rng);
  CHECK(same.value() == x.value());
  CHECK_FALSE(g.has_stochastic_nodes());
  CHECK(ad::dropout(x, 0.5, false, rng).value() == x.value());
  CHECK_THROWS_AS(ad::dropout(x, 1.0, true, rng), ContractError);
  CHECK_THROWS_AS(ad::dropout(x, -0.1, true, rng), ContractError);
  CHECK_THROWS_AS(ad::add(x, g.constant(Mat::Zero(3, 1))), DimensionError);
}

TEST_CASE("inverted dropout keeps or rescales each entry") {
  Graph<double> g;
  Rng rng(5);
  auto x = g.constant(Mat::Ones(2000, 1));
  auto y = ad::dropout(x, 0.25, true, rng);
  CHECK(g.has_stochastic_nodes());
  int zeros = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double v = y.value()(i);
    CHECK((v == 0.0 || std::abs(v - 1.0 / 0.75) < 1e-15));
    zeros += v == 0.0;
  }
  CHECK(zeros > 400);
  CHECK(zeros < 600);
}

TEST_CASE("softmax closed forms and stability") {
  Graph<double> g;
  auto a = ad::softmax(g.constant(column({0, 0})));
  CHECK(a.value()(0) == doctest::Approx(0.5));
  CHECK(a.value()(1) == doctest::Approx(0.5));

  auto b = ad::softmax(g.constant(column({1000, 1000, 1000})));
  for (int i = 0; i < 3; ++i) CHECK(b.value()(i) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  auto c = ad::softmax(g.constant(column({std::log(1.0), std::log(2.0), std::log(3.0)})));
  CHECK(c.value()(0) == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
  CHECK(c.value()(1) == doctest::Approx(2.0 / 6.0).epsilon(1e-12));
  CHECK(c.value()(2) == doctest::Approx(3.0 / 6.0).epsilon(1e-12));

  CHECK_THROWS_AS(ad::softmax(g.constant(column({0, NAN}))), NumericError);
  CHECK_THROWS_AS(ad::softmax(g.constant(column({0, INFINITY}))), NumericError);
}

TEST_CASE("softmax output is a probability vector for random inputs") {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    Graph<double> g;
    const int n = 1 + static_cast<int>(rng.below(20));
    Mat x = random_matrix(rng, n, 1) * rng.uniform(0.0, 300.0);
    auto y = ad::softmax(g.constant(x));
    CHECK((y.value().array() >= 0).all());
    CHECK(std::abs(y.value().sum() - 1.0) <= 1e-9);
  }
}

TEST_CASE("concat and its gradient") {
  Graph<double> g;
  auto a = g.constant(column({1, 2}), true);
  auto b = g.constant(column({3}), true);
  auto c = ad::concat({a, b}, 0);
  CHECK(c.value() == column({1, 2, 3}));

  auto empty = g.constant(Mat(0, 1));
  CHECK(ad::concat({a, empty}, 0).value() == a.value());

  g.backward(ad::sum(c));
  CHECK(*a.grad() == Mat::Ones(2, 1));
  CHECK(*b.grad() == Mat::Ones(1, 1));

  CHECK_THROWS_AS(ad::concat({a, g.constant(Mat::Zero(1, 2))}, 0), DimensionError);
}

TEST_CASE("nll loss values, derivative and errors") {
  Graph<double> g;
  auto perfect = ad::nll_loss(g.constant(column({1.0, 0.0})), 0);
  CHECK(perfect.item() == doctest::Approx(0.0).epsilon(1e-11));

  auto uniform = ad::nll_loss(g.constant(column({0.25, 0.25, 0.25, 0.25})), 2);
  CHECK(uniform.item() == doctest::Approx(std::log(4.0)));

  auto dist = g.constant(column({0.25, 0.75}), true);
  auto loss = ad::nll_loss(dist, 1);
  g.backward(loss);
  CHECK((*dist.grad())(1) == doctest::Approx(-1.0 / 0.75));
  CHECK((*dist.grad())(0) == 0.0);

  CHECK_THROWS_AS(ad::nll_loss(dist, 2), ContractError);
  CHECK_THROWS_AS(ad::nll_loss(dist, -1), ContractError);
}

TEST_CASE("backward accumulates and is repeatable") {
  ParameterSet<double> ps;
  auto& w = ps.add("w", column({1, -2}));
  {
    Graph<double> g;
    g.backward(ad::sum(g.parameter(w)));
    CHECK(w.grad == Mat::Ones(2, 1));
  }
  ps.zero_grad();
  Graph<double> g;
  auto wt = g.parameter(w);
  auto loss = ad::sum(ad::mul(wt, wt));
  g.backward(loss);
  CHECK(w.grad == column({2, -4}));
  g.backward(loss);
  CHECK(w.grad == column({4, -8}));

  ps.zero_grad();
  g.backward(loss);
  const Mat first = w.grad;
  ps.zero_grad();
  g.backward(loss);
  CHECK(w.grad == first);

  CHECK_THROWS_AS(g.backward(wt), ContractError);
}

TEST_CASE("backward visits every primitive correctly") {
  Rng rng(23);
  ParameterSet<double> ps;
  auto& m = ps.add("m", random_matrix(rng, 3, 4));
  auto& v = ps.add("v", random_matrix(rng, 3, 1));
  auto& s = ps.add("s", random_matrix(rng, 1, 1));
  auto& table = ps.add("table", random_matrix(rng, 5, 3));
  const std::vector<int> ids = {4, 1, 4};
  const std::vector<int> scatter_to = {0, 2, 0};
  auto loss = [&](Graph<double>& g) {
    auto mt = g.parameter(m);
    auto vt = g.parameter(v);
    auto st = g.parameter(s);
    auto looked = ad::lookup(g.parameter(table), ids);              // 3x3
    auto wide = ad::concat({mt, looked}, 1);                         // 3x7
    auto shifted = ad::tanh(ad::broadcast_add(wide, vt));            // 3x7
    auto squeezed = ad::matmul(ad::transpose(shifted), ad::sigmoid(vt));  // 7x1
    auto top = ad::rows(squeezed, 1, 3);
    auto dist = ad::softmax(ad::scalar_mul(st, ad::affine(top, 0.5, 0.1)));
    auto spread = ad::scatter_add(dist, scatter_to, 4);
    auto mixed = ad::sub(spread, ad::mul(spread, spread));
    return ad::add(ad::nll_loss(dist, 2), ad::sum(mixed));
  };
  auto params = ps.pointers();
  auto report = ad::grad_check<double>(loss, params, 1e-5);
  CHECK_FALSE(report.rejected);
  CHECK(report.max_relative_error <= 1e-4);
}

TEST_CASE("grad check reports linear maps at machine precision and rejects dropout") {
  Rng rng(29);
  ParameterSet<double> ps;
  auto& w = ps.add("w", random_matrix(rng, 2, 3));
  const Mat x = random_matrix(rng, 3, 1);
  auto params = ps.pointers();
  auto linear = [&](Graph<double>& g) { return ad::sum(ad::matmul(g.parameter(w), g.constant(x))); };
  auto report = ad::grad_check<double>(linear, params, 1e-5);
  CHECK(report.max_relative_error < 1e-9);

  auto chain = [&](Graph<double>& g) {
    return ad::nll_loss(ad::softmax(ad::matmul(g.parameter(w), g.constant(x))), 1);
  };
  CHECK(ad::grad_check<double>(chain, params, 1e-5).max_relative_error <= 1e-4);

  Rng drop_rng(1);
  auto noisy = [&](Graph<double>& g) {
    return ad::sum(ad::dropout(ad::matmul(g.parameter(w), g.constant(x)), 0.5, true, drop_rng));
  };
  auto rejected = ad::grad_check<double>(noisy, params, 1e-5);
  CHECK(rejected.rejected);
}

TEST_CASE("graph replay is bit-identical") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    ParameterSet<double> ps;
    auto& w = ps.add("w", random_matrix(rng, 4, 4));
    Graph<double> g;
    Rng drop(seed + 1);
    auto h = ad::dropout(ad::tanh(ad::matmul(g.parameter(w), g.constant(Mat::Ones(4, 1)))), 0.3, true, drop);
    auto loss = ad::nll_loss(ad::softmax(h), 0);
    g.backward(loss);
    return std::make_pair(loss.item(), Mat(w.grad));
  };
  auto a = run(99);
  auto b = run(99);
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("graph nodes only reference earlier nodes") {
  Graph<double> g;
  auto a = g.constant(Mat::Ones(2, 1), true);
  auto b = ad::tanh(a);
  auto c = ad::add(a, b);
  auto d = ad::sum(c);
  for (std::size_t i = 0; i < g.size(); ++i) {
    for (auto in : g.inputs(i)) CHECK(in < i);
  }
  CHECK(d.node_id() == g.size() - 1);
}
