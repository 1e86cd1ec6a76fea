#include "gradcheck.hpp"

#include <doctest.h>

using namespace pcae;
using pcae::testing::grad_check;

namespace {

ParameterStore random_store(const std::vector<std::pair<std::string, std::pair<int, int>>>& shapes, std::uint64_t seed) {
  ParameterStore ps;
  Rng rng(seed);
  for (const auto& [name, shape] : shapes) ps.add(name, shape.first, shape.second, Init::kUniform, rng, 1.0);
  return ps;
}

}  // namespace

TEST_CASE("elementwise and matrix ops have correct gradients") {
  ParameterStore ps = random_store({{"a", {3, 4}}, {"b", {3, 4}}, {"w", {4, 2}}, {"r", {1, 2}}}, 7);
  auto loss = [&](ad::Graph& g) {
    ad::Var a = g.parameter(ps.at("a")), b = g.parameter(ps.at("b"));
    ad::Var w = g.parameter(ps.at("w")), r = g.parameter(ps.at("r"));
    ad::Var x = ad::add(ad::mul(ad::tanh(a), ad::sigmoid(b)), ad::scale(ad::sub(a, b), 0.3));
    ad::Var y = ad::add_row(ad::matmul(x, w), r);
    ad::Var z = ad::add(ad::softplus(y), ad::exp(ad::scale(y, 0.2)));
    return ad::add_scalar(ad::mean(z), 1.5);
  };
  auto res = grad_check(ps, loss, ps.names());
  CHECK_MESSAGE(res.max_rel_error < 1e-6, res.worst);
  CHECK(res.checked == 12 + 12 + 8 + 2);
}

TEST_CASE("shape ops route gradients to the right entries") {
  ParameterStore ps = random_store({{"a", {4, 3}}, {"b", {4, 2}}, {"t", {5, 3}}}, 11);
  auto loss = [&](ad::Graph& g) {
    ad::Var a = g.parameter(ps.at("a")), b = g.parameter(ps.at("b")), t = g.parameter(ps.at("t"));
    ad::Var c = ad::concat_cols({a, b});
    ad::Var s = ad::slice_cols(c, 1, 3);
    ad::Var rows = ad::concat_rows({s, ad::gather_rows(t, {4, 0, 4})});
    ad::Var sel = ad::select_rows(ad::tanh(a), ad::gather_rows(t, {1, 2, 3, 1}), {true, false, false, true});
    return ad::add(ad::sum(ad::mul(rows, rows)), ad::sum(ad::exp(sel)));
  };
  auto res = grad_check(ps, loss, ps.names());
  CHECK_MESSAGE(res.max_rel_error < 1e-6, res.worst);
}

TEST_CASE("lstm cell gradient") {
  ParameterStore ps = random_store({{"gates", {3, 8}}, {"c", {3, 2}}}, 3);
  auto loss = [&](ad::Graph& g) {
    ad::Var hc = ad::lstm_cell(g.parameter(ps.at("gates")), g.parameter(ps.at("c")));
    return ad::sum(ad::mul(hc, hc));
  };
  auto res = grad_check(ps, loss, ps.names());
  CHECK_MESSAGE(res.max_rel_error < 1e-6, res.worst);
}

TEST_CASE("lstm cell forward matches the gate equations") {
  Matrix gates(1, 4);
  gates << 0.5, -1.0, 0.3, 2.0;
  Matrix c(1, 1);
  c << 0.7;
  ad::Graph g;
  Matrix hc = ad::lstm_cell(g.constant(gates), g.constant(c)).value();
  auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  const double c_new = sig(-1.0) * 0.7 + sig(0.5) * std::tanh(0.3);
  CHECK(hc(0, 1) == doctest::Approx(c_new).epsilon(1e-14));
  CHECK(hc(0, 0) == doctest::Approx(sig(2.0) * std::tanh(c_new)).epsilon(1e-14));
}

TEST_CASE("softmax cross entropy skips ignored rows and has correct gradient") {
  ParameterStore ps = random_store({{"l", {4, 5}}}, 5);
  const std::vector<int> targets{2, 0, -1, 4};
  auto loss = [&](ad::Graph& g) { return ad::softmax_cross_entropy(g.parameter(ps.at("l")), targets, -1); };
  auto res = grad_check(ps, loss, ps.names());
  CHECK_MESSAGE(res.max_rel_error < 1e-6, res.worst);

  const Matrix& l = ps.at("l").value;
  double expect = 0.0;
  for (int r : {0, 1, 3}) {
    double lse = 0.0;
    for (int j = 0; j < 5; ++j) lse += std::exp(l(r, j));
    expect += std::log(lse) - l(r, targets[r]);
  }
  ad::Graph g;
  CHECK(loss(g).scalar() == doctest::Approx(expect / 3).epsilon(1e-12));
  ad::Graph g2;
  CHECK(ad::softmax_cross_entropy(g2.constant(l), {-1, -1, -1, -1}, -1).scalar() == 0.0);
}

TEST_CASE("pairwise squared distances") {
  ParameterStore ps = random_store({{"a", {3, 2}}, {"b", {4, 2}}}, 9);
  auto loss = [&](ad::Graph& g) {
    return ad::sum(ad::exp(ad::scale(ad::pairwise_sqdist(g.parameter(ps.at("a")), g.parameter(ps.at("b"))), -0.5)));
  };
  auto res = grad_check(ps, loss, ps.names());
  CHECK_MESSAGE(res.max_rel_error < 1e-6, res.worst);
  ad::Graph g;
  Matrix d = ad::pairwise_sqdist(g.constant(ps.at("a").value), g.constant(ps.at("b").value)).value();
  CHECK(d(1, 2) == doctest::Approx((ps.at("a").value.row(1) - ps.at("b").value.row(2)).squaredNorm()).epsilon(1e-14));
}

TEST_CASE("softplus is stable for large inputs") {
  Matrix x(1, 3);
  x << -800.0, 0.0, 800.0;
  ad::Graph g;
  Matrix y = ad::softplus(g.constant(x)).value();
  CHECK(y(0, 0) >= 0.0);
  CHECK(y(0, 0) < 1e-300);
  CHECK(y(0, 1) == doctest::Approx(std::log(2.0)));
  CHECK(y(0, 2) == doctest::Approx(800.0));
}

TEST_CASE("frozen parameters are bound as constants") {
  ParameterStore ps = random_store({{"a", {2, 2}}, {"b", {2, 2}}}, 1);
  ps.set_frozen("b", true);
  ad::Graph g;
  g.backward(ad::sum(ad::mul(g.parameter(ps.at("a")), g.parameter(ps.at("b")))));
  CHECK(ps.at("a").grad.size() == 4);
  CHECK(ps.at("b").grad.size() == 0);
}

TEST_CASE("gradients accumulate when a node is reused") {
  ParameterStore ps = random_store({{"a", {2, 3}}}, 2);
  ad::Graph g;
  ad::Var a = g.parameter(ps.at("a"));
  g.backward(ad::sum(ad::add(a, a)));
  CHECK(ps.at("a").grad.isApprox(Matrix::Constant(2, 3, 2.0)));
}

TEST_CASE("shape mismatches throw") {
  ad::Graph g;
  ad::Var a = g.constant(Matrix::Zero(2, 3));
  ad::Var b = g.constant(Matrix::Zero(3, 2));
  CHECK_THROWS(ad::add(a, b));
  CHECK_THROWS(ad::matmul(a, a));
  CHECK_THROWS(g.backward(a));
}

TEST_CASE("adam moves parameters against the gradient and clears it") {
  ParameterStore ps;
  ps.add("w", Matrix::Constant(1, 2, 1.0));
  Adam opt(0.1);
  ad::Graph g;
  g.backward(ad::sum(g.parameter(ps.at("w"))));
  opt.step(ps, {"w"});
  CHECK(ps.at("w").value(0, 0) == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(ps.at("w").grad.size() == 0);
}
