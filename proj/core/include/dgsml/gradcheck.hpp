#ifndef DGSML_GRADCHECK_HPP_
#define DGSML_GRADCHECK_HPP_

// Finite-difference verification of the engine's gradients: per-op checks
// against central differences and an end-to-end check of the second-order
// meta-gradient through the full episode pipeline.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dgsml/diffengine.hpp"

namespace dgsml {

struct CheckResult {
  std::string name;
  std::size_t cases = 0;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

struct GradCheckOptions {
  std::uint64_t seed = 12345;
  std::size_t cases_per_op = 100;
  double step = 1e-5;            // central-difference step
  double op_tolerance = 1e-4;
  double meta_tolerance = 1e-3;
  // Perturbs one analytic gradient before comparison; the checks must then
  // fail. Exists so the failure path of the detector itself is testable.
  bool inject_fault = false;
};

// |a - b| / max(1, |a|, |b|)
double relative_error(double a, double b);

// Max relative error between grad() and central finite differences of a
// scalar-valued builder over the given detached inputs. The builder is
// invoked on graph-attached copies and must return a scalar tensor.
double max_fd_error(const std::function<Tensor(const std::vector<Tensor>&)>& builder,
                    const std::vector<Tensor>& inputs, double h);

// One entry per forward op (and stability composite), >= cases_per_op random
// cases each, inputs drawn inside the op's documented domain.
std::vector<CheckResult> run_op_checks(const GradCheckOptions& options);

// Eq.-12-style total gradient on a small two-layer network over 3 domains,
// second order on, against central differences of the episode objective.
CheckResult run_meta_gradient_check(const GradCheckOptions& options);

// One-parameter quadratic with a one-step inner update; the exact outer
// derivative has the closed form (1 - 2*alpha)^2 * theta.
CheckResult run_toy_quadratic_check();

// Same toy problem with the inner gradient detached; the outer derivative
// loses one (1 - 2*alpha) factor.
CheckResult run_first_order_toy_check();

}  // namespace dgsml

#endif  // DGSML_GRADCHECK_HPP_
