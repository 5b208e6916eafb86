#include "dgsml/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "dgsml/errors.hpp"
#include "dgsml/losses.hpp"
#include "dgsml/model.hpp"
#include "dgsml/rng.hpp"
#include "dgsml/trainer.hpp"

namespace dgsml {

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

double max_fd_error(const std::function<Tensor(const std::vector<Tensor>&)>& builder,
                    const std::vector<Tensor>& inputs, double h) {
  const auto value_at = [&](const std::vector<Tensor>& points) {
    Graph graph;
    std::vector<Tensor> lifted;
    lifted.reserve(points.size());
    for (const Tensor& t : points) lifted.push_back(graph.leaf(t));
    return builder(lifted).item();
  };

  // analytic gradients
  std::vector<Tensor> analytic;
  {
    Graph graph;
    std::vector<Tensor> lifted;
    lifted.reserve(inputs.size());
    for (const Tensor& t : inputs) lifted.push_back(graph.leaf(t));
    analytic = grad(builder(lifted), lifted);
  }

  double worst = 0.0;
  for (std::size_t which = 0; which < inputs.size(); ++which) {
    for (std::size_t k = 0; k < inputs[which].numel(); ++k) {
      std::vector<Tensor> plus = inputs;
      std::vector<Tensor> minus = inputs;
      std::vector<double> vp = inputs[which].values();
      std::vector<double> vm = vp;
      vp[k] += h;
      vm[k] -= h;
      plus[which] = tensor(inputs[which].shape, std::move(vp));
      minus[which] = tensor(inputs[which].shape, std::move(vm));
      const double fd = (value_at(plus) - value_at(minus)) / (2.0 * h);
      worst = std::max(worst, relative_error(analytic[which][k], fd));
    }
  }
  return worst;
}

namespace {

Tensor random_matrix(Rng& rng, std::size_t m, std::size_t n, double lo, double hi) {
  std::vector<double> v(m * n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return matrix(m, n, std::move(v));
}

// entries in [-2,2] but away from zero, for ops with a kink or pole there
Tensor random_matrix_away_from(Rng& rng, std::size_t m, std::size_t n, double margin) {
  std::vector<double> v(m * n);
  for (double& x : v) {
    do {
      x = rng.uniform(-2.0, 2.0);
    } while (std::abs(x) < margin);
  }
  return matrix(m, n, std::move(v));
}

// weights the op output into a scalar so every output element's gradient is
// exercised
Tensor weighted_sum(const Tensor& t, Rng& rng) {
  std::vector<double> w(t.numel());
  for (double& x : w) x = rng.uniform(-1.0, 1.0);
  return sum(mul(t, tensor(t.shape, std::move(w))));
}

struct OpCase {
  std::vector<Tensor> inputs;
  std::function<Tensor(const std::vector<Tensor>&)> builder;
};

using CaseMaker = std::function<OpCase(Rng&)>;

std::size_t dim(Rng& rng) { return 1 + rng.uniform_index(4); }

std::vector<std::size_t> random_indices(Rng& rng, std::size_t count, std::size_t max) {
  std::vector<std::size_t> idx(count);
  for (auto& i : idx) i = rng.uniform_index(max);
  return idx;
}

std::vector<std::pair<std::string, CaseMaker>> op_case_makers() {
  std::vector<std::pair<std::string, CaseMaker>> makers;

  const auto binary_shapes = [](Rng& rng, std::size_t& m, std::size_t& n, std::size_t& bm,
                                std::size_t& bn) {
    m = dim(rng);
    n = dim(rng);
    // equal shapes, row-vector, column-vector, or scalar broadcast
    switch (rng.uniform_index(4)) {
      case 0: bm = m, bn = n; break;
      case 1: bm = 1, bn = n; break;
      case 2: bm = m, bn = 1; break;
      default: bm = 1, bn = 1; break;
    }
  };

  const auto add_binary = [&](const std::string& name, auto opfn, bool safe_denominator) {
    makers.emplace_back(name, [opfn, safe_denominator, binary_shapes](Rng& rng) {
      std::size_t m, n, bm, bn;
      binary_shapes(rng, m, n, bm, bn);
      Tensor a = random_matrix(rng, m, n, -2.0, 2.0);
      Tensor b = safe_denominator ? random_matrix_away_from(rng, bm, bn, 0.2)
                                  : random_matrix(rng, bm, bn, -2.0, 2.0);
      return OpCase{{a, b}, [opfn](const std::vector<Tensor>& in) {
                      Rng wrng(99);
                      return weighted_sum(opfn(in[0], in[1]), wrng);
                    }};
    });
  };

  add_binary("add", [](const Tensor& a, const Tensor& b) { return add(a, b); }, false);
  add_binary("sub", [](const Tensor& a, const Tensor& b) { return sub(a, b); }, false);
  add_binary("mul", [](const Tensor& a, const Tensor& b) { return mul(a, b); }, false);
  add_binary("div", [](const Tensor& a, const Tensor& b) { return div(a, b); }, true);

  makers.emplace_back("matmul", [](Rng& rng) {
    const std::size_t m = dim(rng), k = dim(rng), n = dim(rng);
    return OpCase{{random_matrix(rng, m, k, -2.0, 2.0), random_matrix(rng, k, n, -2.0, 2.0)},
                  [](const std::vector<Tensor>& in) {
                    Rng wrng(99);
                    return weighted_sum(matmul(in[0], in[1]), wrng);
                  }};
  });

  makers.emplace_back("transpose", [](Rng& rng) {
    return OpCase{{random_matrix(rng, dim(rng), dim(rng), -2.0, 2.0)},
                  [](const std::vector<Tensor>& in) {
                    Rng wrng(99);
                    return weighted_sum(transpose(in[0]), wrng);
                  }};
  });

  makers.emplace_back("scalar_mul", [](Rng& rng) {
    const double s = rng.uniform(-2.0, 2.0);
    return OpCase{{random_matrix(rng, dim(rng), dim(rng), -2.0, 2.0)},
                  [s](const std::vector<Tensor>& in) {
                    Rng wrng(99);
                    return weighted_sum(scalar_mul(in[0], s), wrng);
                  }};
  });

  // central differences straddle the kink at 0, so keep inputs clear of it
  makers.emplace_back("relu", [](Rng& rng) {
    return OpCase{{random_matrix_away_from(rng, dim(rng), dim(rng), 0.05)},
                  [](const std::vector<Tensor>& in) {
                    Rng wrng(99);
                    return weighted_sum(relu(in[0]), wrng);
                  }};
  });

  makers.emplace_back("exp", [](Rng& rng) {
    return OpCase{{random_matrix(rng, dim(rng), dim(rng), -2.0, 2.0)},
                  [](const std::vector<Tensor>& in) {
                    Rng wrng(99);
                    return weighted_sum(exp(in[0]), wrng);
                  }};
  });

  makers.emplace_back("log", [](Rng& rng) {
    return OpCase{{random_matrix(rng, dim(rng), dim(rng), 0.1, 2.0)},
                  [](const std::vector<Tensor>& in) {
                    Rng wrng(99);
                    return weighted_sum(log(in[0]), wrng);
                  }};
  });

  makers.emplace_back("pow_const", [](Rng& rng) {
    static const double exponents[] = {0.5, 2.0, 3.0, -1.0, 1.7};
    const double p = exponents[rng.uniform_index(5)];
    return OpCase{{random_matrix(rng, dim(rng), dim(rng), 0.2, 2.0)},
                  [p](const std::vector<Tensor>& in) {
                    Rng wrng(99);
                    return weighted_sum(pow_const(in[0], p), wrng);
                  }};
  });

  makers.emplace_back("sum", [](Rng& rng) {
    return OpCase{{random_matrix(rng, dim(rng), dim(rng), -2.0, 2.0)},
                  [](const std::vector<Tensor>& in) { return sum(in[0]); }};
  });

  makers.emplace_back("sum_axis0", [](Rng& rng) {
    return OpCase{{random_matrix(rng, dim(rng), dim(rng), -2.0, 2.0)},
                  [](const std::vector<Tensor>& in) {
                    Rng wrng(99);
                    return weighted_sum(sum_axis0(in[0]), wrng);
                  }};
  });

  makers.emplace_back("sum_axis1", [](Rng& rng) {
    return OpCase{{random_matrix(rng, dim(rng), dim(rng), -2.0, 2.0)},
                  [](const std::vector<Tensor>& in) {
                    Rng wrng(99);
                    return weighted_sum(sum_axis1(in[0]), wrng);
                  }};
  });

  makers.emplace_back("mean", [](Rng& rng) {
    return OpCase{{random_matrix(rng, dim(rng), dim(rng), -2.0, 2.0)},
                  [](const std::vector<Tensor>& in) { return mean(in[0]); }};
  });

  makers.emplace_back("concat_rows", [](Rng& rng) {
    const std::size_t n = dim(rng);
    return OpCase{{random_matrix(rng, dim(rng), n, -2.0, 2.0),
                   random_matrix(rng, dim(rng), n, -2.0, 2.0)},
                  [](const std::vector<Tensor>& in) {
                    Rng wrng(99);
                    return weighted_sum(concat_rows({in[0], in[1]}), wrng);
                  }};
  });

  makers.emplace_back("select_rows", [](Rng& rng) {
    const std::size_t m = dim(rng);
    Tensor a = random_matrix(rng, m, dim(rng), -2.0, 2.0);
    auto idx = random_indices(rng, 1 + rng.uniform_index(4), m);  // repeats allowed
    return OpCase{{a}, [idx](const std::vector<Tensor>& in) {
                    Rng wrng(99);
                    return weighted_sum(select_rows(in[0], idx), wrng);
                  }};
  });

  makers.emplace_back("scatter_rows", [](Rng& rng) {
    const std::size_t k = dim(rng);
    const std::size_t rows = k + rng.uniform_index(4);
    Tensor a = random_matrix(rng, k, dim(rng), -2.0, 2.0);
    auto idx = random_indices(rng, k, rows);
    return OpCase{{a}, [idx, rows](const std::vector<Tensor>& in) {
                    Rng wrng(99);
                    return weighted_sum(scatter_rows(in[0], idx, rows), wrng);
                  }};
  });

  makers.emplace_back("reshape", [](Rng& rng) {
    const std::size_t m = dim(rng), n = dim(rng);
    Tensor a = random_matrix(rng, m, n, -2.0, 2.0);
    return OpCase{{a}, [m, n](const std::vector<Tensor>& in) {
                    Rng wrng(99);
                    return weighted_sum(reshape(in[0], {n, m}), wrng);
                  }};
  });

  makers.emplace_back("squared_l2_norm", [](Rng& rng) {
    return OpCase{{random_matrix(rng, dim(rng), dim(rng), -2.0, 2.0)},
                  [](const std::vector<Tensor>& in) { return squared_l2_norm(in[0]); }};
  });

  makers.emplace_back("l2_norm", [](Rng& rng) {
    // gradient is x/||x||; keep the norm off zero for a well-posed check
    return OpCase{{random_matrix_away_from(rng, dim(rng), dim(rng), 0.3)},
                  [](const std::vector<Tensor>& in) { return l2_norm(in[0]); }};
  });

  makers.emplace_back("softmax", [](Rng& rng) {
    return OpCase{{random_matrix(rng, dim(rng), 2 + rng.uniform_index(3), -2.0, 2.0)},
                  [](const std::vector<Tensor>& in) {
                    Rng wrng(99);
                    return weighted_sum(softmax(in[0]), wrng);
                  }};
  });

  makers.emplace_back("log_softmax", [](Rng& rng) {
    return OpCase{{random_matrix(rng, dim(rng), 2 + rng.uniform_index(3), -2.0, 2.0)},
                  [](const std::vector<Tensor>& in) {
                    Rng wrng(99);
                    return weighted_sum(log_softmax_rows(in[0]), wrng);
                  }};
  });

  makers.emplace_back("logsumexp", [](Rng& rng) {
    return OpCase{{random_matrix(rng, dim(rng), 2 + rng.uniform_index(3), -2.0, 2.0)},
                  [](const std::vector<Tensor>& in) {
                    Rng wrng(99);
                    return weighted_sum(logsumexp_rows(in[0]), wrng);
                  }};
  });

  return makers;
}

}  // namespace

std::vector<CheckResult> run_op_checks(const GradCheckOptions& options) {
  std::vector<CheckResult> results;
  bool fault_pending = options.inject_fault;
  for (const auto& [name, make_case] : op_case_makers()) {
    Rng rng(mix_seed(options.seed, std::hash<std::string>{}(name)));
    CheckResult r;
    r.name = name;
    r.tolerance = options.op_tolerance;
    for (std::size_t i = 0; i < options.cases_per_op; ++i) {
      OpCase c = make_case(rng);
      double err = max_fd_error(c.builder, c.inputs, options.step);
      if (fault_pending) {
        err += 1.0;  // simulated wrong gradient; the check must report it
        fault_pending = false;
      }
      r.max_rel_err = std::max(r.max_rel_err, err);
      ++r.cases;
    }
    r.pass = r.max_rel_err < r.tolerance;
    results.push_back(std::move(r));
  }
  return results;
}

CheckResult run_meta_gradient_check(const GradCheckOptions& options) {
  ModelConfig config;
  config.input_dim = 2;
  config.hidden_dims = {6};
  config.feature_dim = 4;
  config.num_classes = 2;

  HyperParams hp;
  hp.alpha0 = 0.1;
  hp.beta0 = 1.0;
  hp.beta1 = 1.0;
  hp.second_order = true;

  // 3 domains x 20 samples (12 labeled + 8 unlabeled), fixed batches
  Rng rng(mix_seed(options.seed, 0x6d657461ULL));
  std::vector<DomainBatch> train_batches;
  std::vector<DomainBatch> test_batches;
  for (int d = 0; d < 3; ++d) {
    DomainBatch b;
    b.domain_id = d;
    std::vector<double> x(12 * 2);
    for (double& v : x) v = rng.uniform(-2.0, 2.0);
    b.labeled_x = matrix(12, 2, std::move(x));
    b.labels.resize(12);
    for (auto& label : b.labels) label = static_cast<int>(rng.uniform_index(2));
    std::vector<double> xu(8 * 2);
    for (double& v : xu) v = rng.uniform(-2.0, 2.0);
    b.unlabeled_x = matrix(8, 2, std::move(xu));
    if (d < 2)
      train_batches.push_back(std::move(b));
    else
      test_batches.push_back(std::move(b));
  }

  const ModelParams init = init_params(config, mix_seed(options.seed, 0x696e6974ULL));
  const std::vector<Tensor> flat = init.all();

  const auto builder = [&](const std::vector<Tensor>& lifted) {
    const ModelParams params = with_tensors(init, lifted);
    const MetaTrainResult mt = meta_train_step(params, train_batches, hp);
    const MetaTestResult ts = meta_test_step(mt.inner, train_batches, test_batches, hp);
    return add(mt.loss, ts.loss);
  };

  CheckResult r;
  r.name = "meta_gradient";
  r.tolerance = options.meta_tolerance;
  r.cases = 1;
  r.max_rel_err = max_fd_error(builder, flat, options.step);
  if (options.inject_fault) r.max_rel_err += 1.0;
  r.pass = r.max_rel_err < r.tolerance;
  return r;
}

CheckResult run_toy_quadratic_check() {
  // inner loss theta^2, one inner step at alpha = 0.1, outer loss ||theta'||^2/2;
  // exact derivative (1 - 2*alpha)^2 * theta = 0.64 at theta = 1
  constexpr double alpha = 0.1;
  Graph graph;
  const Tensor theta = graph.leaf(row_vector({1.0}));
  const Tensor inner_loss = squared_l2_norm(theta);
  const std::vector<Tensor> g1 = grad(inner_loss, {theta}, /*create_graph=*/true);
  const Tensor theta_prime = sub(theta, scalar_mul(g1[0], alpha));
  const Tensor outer_loss = scalar_mul(squared_l2_norm(theta_prime), 0.5);
  const std::vector<Tensor> g = grad(outer_loss, {theta});

  const double expected = (1.0 - 2.0 * alpha) * (1.0 - 2.0 * alpha) * 1.0;
  CheckResult r;
  r.name = "toy_quadratic_second_order";
  r.tolerance = 1e-10;
  r.cases = 1;
  r.max_rel_err = std::abs(g[0][0] - expected);
  r.pass = r.max_rel_err < r.tolerance;
  return r;
}

CheckResult run_first_order_toy_check() {
  constexpr double alpha = 0.1;
  Graph graph;
  const Tensor theta = graph.leaf(row_vector({1.0}));
  const Tensor inner_loss = squared_l2_norm(theta);
  // detached inner gradient: theta' still depends on theta, but the gradient
  // path through g1 is severed
  const std::vector<Tensor> g1 = grad(inner_loss, {theta}, /*create_graph=*/false);
  const Tensor theta_prime = sub(theta, scalar_mul(g1[0], alpha));
  const Tensor outer_loss = scalar_mul(squared_l2_norm(theta_prime), 0.5);
  const std::vector<Tensor> g = grad(outer_loss, {theta});

  const double expected = (1.0 - 2.0 * alpha) * 1.0;
  CheckResult r;
  r.name = "toy_quadratic_first_order";
  r.tolerance = 1e-10;
  r.cases = 1;
  r.max_rel_err = std::abs(g[0][0] - expected);
  r.pass = r.max_rel_err < r.tolerance;
  return r;
}

}  // namespace dgsml
