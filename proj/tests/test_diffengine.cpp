#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "dgsml/diffengine.hpp"
#include "dgsml/errors.hpp"
#include "dgsml/gradcheck.hpp"
#include "dgsml/rng.hpp"

using namespace dgsml;

TEST_CASE("forward op examples") {
  const Tensor a = matrix(1, 2, {1, 2});
  const Tensor b = matrix(2, 1, {3, 4});
  const Tensor c = matmul(a, b);
  CHECK(c.shape == std::vector<std::size_t>{1, 1});
  CHECK(c.item() == 11.0);

  const Tensor r = relu(row_vector({-1, 0, 2}));
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 0.0);
  CHECK(r[2] == 2.0);

  CHECK(squared_l2_norm(row_vector({3, 4})).item() == 25.0);
  CHECK(l2_norm(row_vector({3, 4})).item() == 5.0);
}

TEST_CASE("elementwise broadcasting") {
  const Tensor m = matrix(2, 3, {1, 2, 3, 4, 5, 6});
  const Tensor row = row_vector({10, 20, 30});
  const Tensor col = matrix(2, 1, {100, 200});

  const Tensor mr = add(m, row);
  CHECK(mr(0, 0) == 11.0);
  CHECK(mr(1, 2) == 36.0);

  const Tensor mc = add(m, col);
  CHECK(mc(0, 0) == 101.0);
  CHECK(mc(1, 0) == 204.0);

  const Tensor ms = mul(m, scalar(2.0));
  CHECK(ms(1, 1) == 10.0);

  CHECK_THROWS_AS(add(m, row_vector({1, 2})), DimensionError);
  CHECK_THROWS_AS(matmul(m, m), DimensionError);
}

TEST_CASE("softmax examples and stability") {
  const Tensor u = softmax(row_vector({0, 0}));
  CHECK(u[0] == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(u[1] == doctest::Approx(0.5).epsilon(1e-14));

  const Tensor big = softmax(row_vector({1000, 1000}));
  CHECK(big[0] == doctest::Approx(0.5).epsilon(1e-14));

  const Tensor p = softmax(row_vector({std::log(1.0), std::log(3.0)}));
  CHECK(p[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one for arbitrary finite logits") {
  Rng rng(4242);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = 1 + rng.uniform_index(5), n = 2 + rng.uniform_index(5);
    std::vector<double> z(m * n);
    const double scale = trial % 3 == 0 ? 1e4 : (trial % 3 == 1 ? 1.0 : 1e-3);
    for (double& v : z) v = rng.uniform(-scale, scale);
    const Tensor p = softmax(matrix(m, n, std::move(z)));
    for (std::size_t i = 0; i < m; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        row += p(i, j);
        CHECK(p(i, j) >= 0.0);
        CHECK(p(i, j) <= 1.0);
      }
      CHECK(std::abs(row - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("softmax along axis 0") {
  const Tensor m = matrix(2, 2, {0, 1000, 0, 1000});
  const Tensor p = softmax(m, 0);
  CHECK(p(0, 0) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(p(1, 1) == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("gradient of x squared") {
  Graph graph;
  const Tensor x = graph.leaf(scalar(3.0));
  const Tensor y = mul(x, x);
  const auto g = grad(y, {x});
  CHECK(g[0].item() == doctest::Approx(6.0).epsilon(1e-14));
}

TEST_CASE("second derivative of x cubed") {
  Graph graph;
  const Tensor x = graph.leaf(scalar(2.0));
  const Tensor y = mul(mul(x, x), x);
  const auto g1 = grad(y, {x}, /*create_graph=*/true);
  const auto g2 = grad(g1[0], {x});
  CHECK(g2[0].item() == doctest::Approx(12.0).epsilon(1e-12));
}

TEST_CASE("differentiating through a one-step SGD update on a quadratic") {
  // L(theta) = ||theta'||^2/2 with theta' = theta - alpha * 2 * theta:
  // dL/dtheta = (1 - 2 alpha)^2 theta = 0.64 at alpha = 0.1, theta = 1
  const CheckResult second = run_toy_quadratic_check();
  CHECK(second.pass);
  CHECK(second.max_rel_err < 1e-10);

  const CheckResult first = run_first_order_toy_check();
  CHECK(first.pass);
}

TEST_CASE("unreachable tensors get exact zero gradients") {
  Graph graph;
  const Tensor x = graph.leaf(scalar(1.5));
  const Tensor z = graph.leaf(row_vector({1, 2, 3}));
  const Tensor y = mul(x, x);
  const auto g = grad(y, {x, z});
  CHECK(g[1].shape == z.shape);
  for (std::size_t i = 0; i < 3; ++i) CHECK(g[1][i] == 0.0);
}

TEST_CASE("grad contract errors") {
  Graph graph;
  const Tensor x = graph.leaf(row_vector({1, 2}));
  const Tensor y = mul(x, x);  // not scalar
  CHECK_THROWS_AS(grad(y, {x}), ContractError);
  CHECK_THROWS_AS(grad(sum(y), {row_vector({1, 2})}), ContractError);

  Graph other;
  const Tensor w = other.leaf(scalar(1.0));
  CHECK_THROWS_AS(grad(sum(y), {w}), ContractError);
}

TEST_CASE("log and pow domain errors") {
  CHECK_THROWS_AS(log(row_vector({1.0, 0.0})), std::domain_error);
  CHECK_THROWS_AS(log(row_vector({-1.0})), std::domain_error);
  CHECK_THROWS_AS(pow_const(row_vector({-1.0}), 0.5), std::domain_error);
  CHECK(pow_const(row_vector({0.0}), -1.0)[0] == 0.0);  // guarded at zero
}

TEST_CASE("reused subexpression accumulates both paths") {
  Graph graph;
  const Tensor x = graph.leaf(scalar(3.0));
  const Tensor y = add(mul(x, x), mul(x, scalar(5.0)));  // x^2 + 5x
  const auto g = grad(y, {x});
  CHECK(g[0].item() == doctest::Approx(11.0).epsilon(1e-14));
}

TEST_CASE("select and scatter rows round trip gradients") {
  Graph graph;
  const Tensor x = graph.leaf(matrix(3, 2, {1, 2, 3, 4, 5, 6}));
  // duplicated index: gradient of that row doubles
  const Tensor sel = select_rows(x, {0, 0, 2});
  const auto g = grad(sum(sel), {x});
  CHECK(g[0](0, 0) == 2.0);
  CHECK(g[0](1, 0) == 0.0);
  CHECK(g[0](2, 1) == 1.0);
}

TEST_CASE("concat rows forward and gradient split") {
  Graph graph;
  const Tensor a = graph.leaf(matrix(1, 2, {1, 2}));
  const Tensor b = graph.leaf(matrix(2, 2, {3, 4, 5, 6}));
  const Tensor c = concat_rows({a, b});
  CHECK(c.shape == std::vector<std::size_t>{3, 2});
  CHECK(c(2, 1) == 6.0);
  const Tensor weights = matrix(3, 2, {1, 10, 100, 1000, 10000, 100000});
  const auto g = grad(sum(mul(c, weights)), {a, b});
  CHECK(g[0](0, 1) == 10.0);
  CHECK(g[1](1, 1) == 100000.0);
}

TEST_CASE("gradients with broadcast operands reduce correctly") {
  Graph graph;
  const Tensor m = graph.leaf(matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  const Tensor row = graph.leaf(row_vector({1, 2, 3}));
  const Tensor y = sum(mul(m, row));
  const auto g = grad(y, {m, row});
  CHECK(g[0](0, 0) == 1.0);
  CHECK(g[0](1, 2) == 3.0);
  CHECK(g[1].shape == row.shape);
  CHECK(g[1][0] == 5.0);   // column sums of m
  CHECK(g[1][2] == 9.0);
}

TEST_CASE("finite-difference check per forward op") {
  GradCheckOptions options;
  options.cases_per_op = 100;
  const auto results = run_op_checks(options);
  CHECK(results.size() >= 20);
  for (const CheckResult& r : results) {
    INFO(r.name, " max_rel_err=", r.max_rel_err);
    CHECK(r.cases >= 100);
    CHECK(r.max_rel_err < 1e-4);
    CHECK(r.pass);
  }
}

TEST_CASE("fault injection is detected") {
  GradCheckOptions options;
  options.cases_per_op = 2;
  options.inject_fault = true;
  const auto results = run_op_checks(options);
  bool any_fail = false;
  for (const CheckResult& r : results) any_fail = any_fail || !r.pass;
  CHECK(any_fail);
}

TEST_CASE("second-order meta-gradient matches finite differences") {
  GradCheckOptions options;
  const CheckResult r = run_meta_gradient_check(options);
  INFO("max_rel_err=", r.max_rel_err);
  CHECK(r.max_rel_err < 1e-3);
  CHECK(r.pass);
}

TEST_CASE("no-grad guard keeps results off the graph") {
  Graph graph;
  const Tensor x = graph.leaf(scalar(2.0));
  const std::size_t before = graph.size();
  {
    NoGradGuard guard;
    const Tensor y = mul(x, x);
    CHECK(!y.attached());
    CHECK(y.item() == 4.0);
  }
  CHECK(graph.size() == before);
}

TEST_CASE("tensor values stay finite through the documented domains") {
  Rng rng(777);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor a = matrix(2, 2, {rng.uniform(-2, 2), rng.uniform(-2, 2),
                                   rng.uniform(-2, 2), rng.uniform(-2, 2)});
    const Tensor out = softmax(add(mul(a, a), a));
    for (double v : out.values()) CHECK(std::isfinite(v));
  }
}
