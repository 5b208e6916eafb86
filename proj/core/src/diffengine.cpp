#include "dgsml/diffengine.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <utility>

#include "dgsml/errors.hpp"

namespace dgsml {

namespace {

thread_local int no_grad_depth = 0;

std::string shape_str(const std::vector<std::size_t>& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

std::size_t product(const std::vector<std::size_t>& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

void check_positive_dims(const std::vector<std::size_t>& shape) {
  if (shape.size() > 2)
    throw DimensionError("tensor rank > 2 not supported: " + shape_str(shape));
  for (std::size_t d : shape)
    if (d == 0) throw DimensionError("zero dimension in shape " + shape_str(shape));
}

// Effective (rows, cols) view of a tensor, aligning dimensions to the right.
struct Dims {
  std::size_t r, c;
};

Dims dims_of(const Tensor& t) {
  switch (t.rank()) {
    case 0: return {1, 1};
    case 1: return {1, t.shape[0]};
    default: return {t.shape[0], t.shape[1]};
  }
}

double bvalue(const Tensor& t, const Dims& d, std::size_t i, std::size_t j) {
  const std::size_t ii = d.r == 1 ? 0 : i;
  const std::size_t jj = d.c == 1 ? 0 : j;
  return (*t.data)[ii * d.c + jj];
}

}  // namespace

// ---- Tensor basics ----

std::size_t Tensor::numel() const { return product(shape); }

std::size_t Tensor::rows() const { return rank() == 2 ? shape[0] : 1; }

std::size_t Tensor::cols() const {
  if (rank() == 0) return 1;
  return shape[rank() - 1];
}

double Tensor::operator()(std::size_t i, std::size_t j) const {
  return (*data)[i * cols() + j];
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape));
  return (*data)[0];
}

Tensor tensor(std::vector<std::size_t> shape, std::vector<double> values) {
  check_positive_dims(shape);
  if (product(shape) != values.size())
    throw DimensionError("shape " + shape_str(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  Tensor t;
  t.shape = std::move(shape);
  t.data = std::make_shared<const std::vector<double>>(std::move(values));
  return t;
}

Tensor scalar(double v) { return tensor({}, {v}); }

Tensor row_vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return tensor({n}, std::move(values));
}

Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return tensor({rows, cols}, std::move(values));
}

Tensor full(std::vector<std::size_t> shape, double v) {
  const std::size_t n = product(shape);
  return tensor(std::move(shape), std::vector<double>(n, v));
}

Tensor zeros(std::vector<std::size_t> shape) { return full(std::move(shape), 0.0); }

Tensor ones(std::vector<std::size_t> shape) { return full(std::move(shape), 1.0); }

Tensor detach(const Tensor& t) {
  Tensor out = t;
  out.graph = nullptr;
  out.node = -1;
  return out;
}

// ---- Graph ----

int Graph::append(Node n) {
  const int id = static_cast<int>(nodes_.size());
  n.value.graph = this;
  n.value.node = id;
  nodes_.push_back(std::move(n));
  return id;
}

Tensor Graph::leaf(const Tensor& value) {
  Node n;
  n.op = Op::kConstant;
  n.value = detach(value);
  const int id = append(std::move(n));
  return nodes_[static_cast<std::size_t>(id)].value;
}

NoGradGuard::NoGradGuard() { ++no_grad_depth; }
NoGradGuard::~NoGradGuard() { --no_grad_depth; }
bool grad_enabled() { return no_grad_depth == 0; }

namespace {

// Resolves the graph shared by the attached operands (null when none is
// attached or gradients are disabled). Mixing graphs is a contract violation.
Graph* target_graph(std::initializer_list<const Tensor*> operands) {
  Graph* g = nullptr;
  for (const Tensor* t : operands) {
    if (!t->attached()) continue;
    if (g == nullptr) {
      g = t->graph;
    } else if (g != t->graph) {
      throw ContractError("operands belong to different graphs");
    }
  }
  return grad_enabled() ? g : nullptr;
}

int node_id_on(Graph& g, const Tensor& t) {
  if (t.attached()) return t.node;
  return g.leaf(t).node;
}

// Finalizes an op result: either appends a node or returns a plain constant.
Tensor finish(Graph* g, Op op, std::initializer_list<const Tensor*> operands,
              Tensor value, double attr = 0.0, std::vector<std::size_t> indices = {},
              std::size_t rows_attr = 0) {
  if (g == nullptr) return value;
  Node n;
  n.op = op;
  n.inputs.reserve(operands.size());
  for (const Tensor* t : operands) n.inputs.push_back(node_id_on(*g, *t));
  n.value = std::move(value);
  n.attr = attr;
  n.indices = std::move(indices);
  n.rows_attr = rows_attr;
  const int id = g->append(std::move(n));
  return g->node(id).value;
}

std::vector<std::size_t> broadcast_shape(const Tensor& a, const Tensor& b,
                                         const char* opname) {
  const std::size_t rank = std::max(a.rank(), b.rank());
  const Dims da = dims_of(a), db = dims_of(b);
  const auto combine = [&](std::size_t x, std::size_t y) -> std::size_t {
    if (x == y) return x;
    if (x == 1) return y;
    if (y == 1) return x;
    throw DimensionError(std::string(opname) + ": shapes " + shape_str(a.shape) +
                         " and " + shape_str(b.shape) + " do not broadcast");
  };
  const std::size_t r = combine(da.r, db.r);
  const std::size_t c = combine(da.c, db.c);
  if (rank == 0) return {};
  if (rank == 1) {
    if (r != 1)
      throw DimensionError(std::string(opname) + ": shapes " + shape_str(a.shape) +
                           " and " + shape_str(b.shape) + " do not broadcast");
    return {c};
  }
  return {r, c};
}

template <typename F>
Tensor elementwise_binary(const Tensor& a, const Tensor& b, const char* opname,
                          Op op, F&& f) {
  std::vector<std::size_t> out_shape = broadcast_shape(a, b, opname);
  const Dims da = dims_of(a), db = dims_of(b);
  const std::size_t r = std::max(da.r, db.r), c = std::max(da.c, db.c);
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j)
      out[i * c + j] = f(bvalue(a, da, i, j), bvalue(b, db, i, j));
  Graph* g = target_graph({&a, &b});
  return finish(g, op, {&a, &b}, tensor(std::move(out_shape), std::move(out)));
}

template <typename F>
Tensor elementwise_unary(const Tensor& a, Op op, F&& f, double attr = 0.0) {
  std::vector<double> out(a.numel());
  const std::vector<double>& in = *a.data;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  Graph* g = target_graph({&a});
  return finish(g, op, {&a}, tensor(a.shape, std::move(out)), attr);
}

}  // namespace

// ---- forward ops ----

Tensor add(const Tensor& a, const Tensor& b) {
  return elementwise_binary(a, b, "add", Op::kAdd, [](double x, double y) { return x + y; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return elementwise_binary(a, b, "sub", Op::kSub, [](double x, double y) { return x - y; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return elementwise_binary(a, b, "mul", Op::kMul, [](double x, double y) { return x * y; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return elementwise_binary(a, b, "div", Op::kDiv, [](double x, double y) { return x / y; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw DimensionError("matmul requires rank-2 operands, got " + shape_str(a.shape) +
                         " and " + shape_str(b.shape));
  if (a.shape[1] != b.shape[0])
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape) +
                         " vs " + shape_str(b.shape));
  const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
  std::vector<double> out(m * n, 0.0);
  const double* pa = a.data->data();
  const double* pb = b.data->data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t l = 0; l < k; ++l) {
      const double av = pa[i * k + l];
      const double* brow = pb + l * n;
      double* orow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  Graph* g = target_graph({&a, &b});
  return finish(g, Op::kMatmul, {&a, &b}, tensor({m, n}, std::move(out)));
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2)
    throw DimensionError("transpose requires rank-2, got " + shape_str(a.shape));
  const std::size_t m = a.shape[0], n = a.shape[1];
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = (*a.data)[i * n + j];
  Graph* g = target_graph({&a});
  return finish(g, Op::kTranspose, {&a}, tensor({n, m}, std::move(out)));
}

Tensor scalar_mul(const Tensor& a, double s) {
  return elementwise_unary(a, Op::kScalarMul, [s](double x) { return s * x; }, s);
}

Tensor neg(const Tensor& a) { return scalar_mul(a, -1.0); }

Tensor relu(const Tensor& a) {
  return elementwise_unary(a, Op::kRelu, [](double x) { return x > 0.0 ? x : 0.0; });
}

Tensor exp(const Tensor& a) {
  return elementwise_unary(a, Op::kExp, [](double x) { return std::exp(x); });
}

Tensor log(const Tensor& a) {
  for (double x : *a.data)
    if (!(x > 0.0)) throw std::domain_error("log of non-positive value");
  return elementwise_unary(a, Op::kLog, [](double x) { return std::log(x); });
}

Tensor pow_const(const Tensor& a, double p) {
  const bool integral = p == std::floor(p);
  for (double x : *a.data) {
    if (x < 0.0 && !integral)
      throw std::domain_error("pow_const of negative base with non-integer exponent");
  }
  return elementwise_unary(
      a, Op::kPowConst,
      [p](double x) { return x == 0.0 && p < 0.0 ? 0.0 : std::pow(x, p); }, p);
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double x : *a.data) s += x;
  Graph* g = target_graph({&a});
  return finish(g, Op::kSumAll, {&a}, scalar(s));
}

Tensor sum_axis0(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("sum_axis0 requires rank-2, got " + shape_str(a.shape));
  const std::size_t m = a.shape[0], n = a.shape[1];
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += (*a.data)[i * n + j];
  Graph* g = target_graph({&a});
  return finish(g, Op::kSumAxis0, {&a}, tensor({1, n}, std::move(out)));
}

Tensor sum_axis1(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("sum_axis1 requires rank-2, got " + shape_str(a.shape));
  const std::size_t m = a.shape[0], n = a.shape[1];
  std::vector<double> out(m, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i] += (*a.data)[i * n + j];
  Graph* g = target_graph({&a});
  return finish(g, Op::kSumAxis1, {&a}, tensor({m, 1}, std::move(out)));
}

Tensor mean(const Tensor& a) {
  return scalar_mul(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_rows of zero tensors");
  std::size_t total_rows = 0;
  const std::size_t n = parts.front().cols();
  for (const Tensor& p : parts) {
    if (p.cols() != n)
      throw DimensionError("concat_rows: column mismatch, expected " + std::to_string(n) +
                           ", got " + shape_str(p.shape));
    total_rows += p.rows();
  }
  std::vector<double> out;
  out.reserve(total_rows * n);
  for (const Tensor& p : parts) out.insert(out.end(), p.data->begin(), p.data->end());

  Graph* g = nullptr;
  for (const Tensor& p : parts) {
    if (!p.attached()) continue;
    if (g == nullptr)
      g = p.graph;
    else if (g != p.graph)
      throw ContractError("operands belong to different graphs");
  }
  if (!grad_enabled()) g = nullptr;
  Tensor value = tensor({total_rows, n}, std::move(out));
  if (g == nullptr) return value;
  Node node;
  node.op = Op::kConcatRows;
  for (const Tensor& p : parts) node.inputs.push_back(node_id_on(*g, p));
  node.value = std::move(value);
  const int id = g->append(std::move(node));
  return g->node(id).value;
}

Tensor select_rows(const Tensor& a, const std::vector<std::size_t>& indices) {
  if (a.rank() != 2) throw DimensionError("select_rows requires rank-2, got " + shape_str(a.shape));
  if (indices.empty()) throw ContractError("select_rows with empty index list");
  const std::size_t m = a.shape[0], n = a.shape[1];
  std::vector<double> out;
  out.reserve(indices.size() * n);
  for (std::size_t idx : indices) {
    if (idx >= m) throw ContractError("select_rows index " + std::to_string(idx) + " out of range");
    const double* row = a.data->data() + idx * n;
    out.insert(out.end(), row, row + n);
  }
  Graph* g = target_graph({&a});
  return finish(g, Op::kSelectRows, {&a}, tensor({indices.size(), n}, std::move(out)), 0.0,
                indices);
}

Tensor scatter_rows(const Tensor& a, const std::vector<std::size_t>& indices,
                    std::size_t num_rows) {
  if (a.rank() != 2) throw DimensionError("scatter_rows requires rank-2, got " + shape_str(a.shape));
  if (indices.size() != a.shape[0])
    throw DimensionError("scatter_rows: index count must equal row count");
  const std::size_t n = a.shape[1];
  std::vector<double> out(num_rows * n, 0.0);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= num_rows)
      throw ContractError("scatter_rows index " + std::to_string(indices[i]) + " out of range");
    for (std::size_t j = 0; j < n; ++j) out[indices[i] * n + j] += (*a.data)[i * n + j];
  }
  Graph* g = target_graph({&a});
  return finish(g, Op::kScatterRows, {&a}, tensor({num_rows, n}, std::move(out)), 0.0, indices,
                num_rows);
}

Tensor reshape(const Tensor& a, std::vector<std::size_t> shape) {
  check_positive_dims(shape);
  if (product(shape) != a.numel())
    throw DimensionError("reshape " + shape_str(a.shape) + " -> " + shape_str(shape) +
                         " changes element count");
  Graph* g = target_graph({&a});
  Tensor value;
  value.shape = std::move(shape);
  value.data = a.data;
  return finish(g, Op::kReshape, {&a}, std::move(value));
}

// ---- composites ----

Tensor squared_l2_norm(const Tensor& a) { return sum(mul(a, a)); }

Tensor l2_norm(const Tensor& a) { return pow_const(squared_l2_norm(a), 0.5); }

namespace {

Tensor row_max_constant(const Tensor& a) {
  const std::size_t m = a.shape[0], n = a.shape[1];
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    double mx = (*a.data)[i * n];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, (*a.data)[i * n + j]);
    out[i] = mx;
  }
  return tensor({m, 1}, std::move(out));
}

Tensor as_matrix(const Tensor& t) {
  if (t.rank() == 2) return t;
  if (t.rank() == 1) return reshape(t, {1, t.shape[0]});
  return reshape(t, {1, 1});
}

}  // namespace

Tensor softmax(const Tensor& logits) {
  if (logits.rank() > 2) throw DimensionError("softmax requires rank <= 2");
  const Tensor z = as_matrix(logits);
  // max-subtraction keeps exp in range for logits of any magnitude
  const Tensor shifted = sub(z, row_max_constant(z));
  const Tensor e = exp(shifted);
  const Tensor out = div(e, sum_axis1(e));
  return logits.rank() == 2 ? out : reshape(out, logits.shape);
}

Tensor softmax(const Tensor& logits, int axis) {
  if (logits.rank() != 2) throw DimensionError("softmax with axis requires rank-2");
  if (axis == 1) return softmax(logits);
  if (axis == 0) return transpose(softmax(transpose(logits)));
  throw ContractError("softmax axis must be 0 or 1");
}

Tensor logsumexp_rows(const Tensor& logits) {
  const Tensor z = as_matrix(logits);
  const Tensor mx = row_max_constant(z);
  const Tensor e = exp(sub(z, mx));
  return add(log(sum_axis1(e)), mx);
}

Tensor log_softmax_rows(const Tensor& logits) {
  const Tensor z = as_matrix(logits);
  return sub(z, logsumexp_rows(z));
}

// ---- reverse-mode differentiation ----

namespace {

// Sums g over broadcast dimensions so it matches the given operand shape.
Tensor reduce_to_shape(const Tensor& g, const std::vector<std::size_t>& shape) {
  if (g.shape == shape) return g;
  Tensor r = as_matrix(g);
  Dims target{shape.size() == 2 ? shape[0] : 1,
              shape.empty() ? 1 : shape[shape.size() - 1]};
  if (target.r == 1 && r.shape[0] > 1) r = sum_axis0(r);
  if (target.c == 1 && r.shape[1] > 1) r = sum_axis1(r);
  if (r.shape == shape) return r;
  return reshape(r, shape);
}

// Accumulates the vector-Jacobian product for one node into its inputs'
// adjoints. Adjoint math is expressed through the public ops, so with
// create_graph enabled the produced gradients are differentiable nodes.
void accumulate_vjp(const Graph& g, const Node& node, const Tensor& gout,
                    std::vector<std::optional<Tensor>>& adj) {
  const auto bump = [&](int input_id, const Tensor& contrib) {
    auto& slot = adj[static_cast<std::size_t>(input_id)];
    slot = slot ? add(*slot, contrib) : contrib;
  };
  const auto input = [&](std::size_t i) -> const Tensor& {
    return g.node(node.inputs[i]).value;
  };

  switch (node.op) {
    case Op::kConstant:
      break;
    case Op::kAdd:
      bump(node.inputs[0], reduce_to_shape(gout, input(0).shape));
      bump(node.inputs[1], reduce_to_shape(gout, input(1).shape));
      break;
    case Op::kSub:
      bump(node.inputs[0], reduce_to_shape(gout, input(0).shape));
      bump(node.inputs[1], reduce_to_shape(neg(gout), input(1).shape));
      break;
    case Op::kMul:
      bump(node.inputs[0], reduce_to_shape(mul(gout, input(1)), input(0).shape));
      bump(node.inputs[1], reduce_to_shape(mul(gout, input(0)), input(1).shape));
      break;
    case Op::kDiv: {
      const Tensor& a = input(0);
      const Tensor& b = input(1);
      bump(node.inputs[0], reduce_to_shape(div(gout, b), a.shape));
      bump(node.inputs[1], reduce_to_shape(neg(div(mul(gout, a), mul(b, b))), b.shape));
      break;
    }
    case Op::kMatmul:
      bump(node.inputs[0], matmul(gout, transpose(input(1))));
      bump(node.inputs[1], matmul(transpose(input(0)), gout));
      break;
    case Op::kTranspose:
      bump(node.inputs[0], transpose(gout));
      break;
    case Op::kScalarMul:
      bump(node.inputs[0], scalar_mul(gout, node.attr));
      break;
    case Op::kRelu: {
      const Tensor& a = input(0);
      std::vector<double> mask(a.numel());
      for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = (*a.data)[i] > 0.0 ? 1.0 : 0.0;
      bump(node.inputs[0], mul(gout, tensor(a.shape, std::move(mask))));
      break;
    }
    case Op::kExp:
      bump(node.inputs[0], mul(gout, node.value));
      break;
    case Op::kLog:
      bump(node.inputs[0], div(gout, input(0)));
      break;
    case Op::kPowConst: {
      // d/dx x^p = p x^(p-1); pow_const's zero-base guard supplies the
      // subgradient 0 at x == 0 for p < 1
      if (node.attr == 0.0) break;
      bump(node.inputs[0],
           mul(gout, scalar_mul(pow_const(input(0), node.attr - 1.0), node.attr)));
      break;
    }
    case Op::kSumAll:
      bump(node.inputs[0], mul(gout, ones(input(0).shape)));
      break;
    case Op::kSumAxis0:
    case Op::kSumAxis1:
      bump(node.inputs[0], mul(gout, ones(input(0).shape)));
      break;
    case Op::kConcatRows: {
      std::size_t row = 0;
      for (std::size_t i = 0; i < node.inputs.size(); ++i) {
        const Tensor& part = input(i);
        std::vector<std::size_t> idx(part.rows());
        for (std::size_t r = 0; r < idx.size(); ++r) idx[r] = row + r;
        row += part.rows();
        Tensor piece = select_rows(gout, idx);
        if (part.rank() != 2) piece = reshape(piece, part.shape);
        bump(node.inputs[i], piece);
      }
      break;
    }
    case Op::kSelectRows:
      bump(node.inputs[0], scatter_rows(gout, node.indices, input(0).shape[0]));
      break;
    case Op::kScatterRows:
      bump(node.inputs[0], select_rows(gout, node.indices));
      break;
    case Op::kReshape:
      bump(node.inputs[0], reshape(gout, input(0).shape));
      break;
  }
}

}  // namespace

std::vector<Tensor> grad(const Tensor& output, const std::vector<Tensor>& wrt,
                         bool create_graph) {
  if (!output.attached()) throw ContractError("grad: output is not on a graph");
  if (output.numel() != 1) throw ContractError("grad: output must be scalar");
  Graph& g = *output.graph;
  for (const Tensor& t : wrt) {
    if (!t.attached() || t.graph != &g)
      throw ContractError("grad: wrt tensor is not on the output's graph");
  }

  const int out_id = output.node;
  const std::size_t span = static_cast<std::size_t>(out_id) + 1;

  // mark the subgraph feeding the output; each node is visited once
  std::vector<char> needed(span, 0);
  needed[static_cast<std::size_t>(out_id)] = 1;
  for (int id = out_id; id >= 0; --id) {
    if (!needed[static_cast<std::size_t>(id)]) continue;
    for (int in : g.node(id).inputs) needed[static_cast<std::size_t>(in)] = 1;
  }

  std::vector<std::optional<Tensor>> adj(span);
  adj[static_cast<std::size_t>(out_id)] = full(output.shape, 1.0);

  {
    std::optional<NoGradGuard> guard;
    if (!create_graph) guard.emplace();
    for (int id = out_id; id >= 0; --id) {
      const std::size_t uid = static_cast<std::size_t>(id);
      if (!needed[uid] || !adj[uid]) continue;
      accumulate_vjp(g, g.node(id), *adj[uid], adj);
    }
  }

  std::vector<Tensor> result;
  result.reserve(wrt.size());
  for (const Tensor& t : wrt) {
    const std::size_t uid = static_cast<std::size_t>(t.node);
    if (uid < span && adj[uid]) {
      result.push_back(create_graph ? *adj[uid] : detach(*adj[uid]));
    } else {
      result.push_back(zeros(t.shape));  // unreachable from the output
    }
  }
  return result;
}

}  // namespace dgsml
