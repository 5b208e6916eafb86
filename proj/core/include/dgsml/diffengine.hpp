#ifndef DGSML_DIFFENGINE_HPP_
#define DGSML_DIFFENGINE_HPP_

// Dense double-precision tensors with reverse-mode automatic differentiation.
//
// Every operation on graph-attached tensors appends a node to the owning
// Graph. Backward passes build their adjoint computations out of the same
// operations, so gradients are themselves graph tensors and can be
// differentiated again (gradients of gradients through an SGD update).
//
// A Graph and its tensors are confined to a single thread. Independent graphs
// may run concurrently.

#include <cstddef>
#include <deque>
#include <initializer_list>
#include <memory>
#include <vector>

namespace dgsml {

class Graph;

struct Tensor {
  std::vector<std::size_t> shape;                    // rank 0 (scalar), 1, or 2
  std::shared_ptr<const std::vector<double>> data;   // row-major, never mutated
  Graph* graph = nullptr;                            // null for constants
  int node = -1;

  bool attached() const { return graph != nullptr; }
  std::size_t rank() const { return shape.size(); }
  std::size_t numel() const;
  std::size_t rows() const;  // 1 for rank < 2
  std::size_t cols() const;  // 1 for rank 0, last dim otherwise
  const std::vector<double>& values() const { return *data; }
  double operator()(std::size_t i, std::size_t j) const;
  double operator[](std::size_t i) const { return (*data)[i]; }
  double item() const;  // value of a single-element tensor
};

// ---- construction (detached constants) ----
Tensor tensor(std::vector<std::size_t> shape, std::vector<double> values);
Tensor scalar(double v);
Tensor row_vector(std::vector<double> values);                // shape [n]
Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
Tensor full(std::vector<std::size_t> shape, double v);
Tensor zeros(std::vector<std::size_t> shape);
Tensor ones(std::vector<std::size_t> shape);
Tensor detach(const Tensor& t);

enum class Op {
  kConstant,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kMatmul,
  kTranspose,
  kScalarMul,
  kRelu,
  kExp,
  kLog,
  kPowConst,
  kSumAll,
  kSumAxis0,
  kSumAxis1,
  kConcatRows,
  kSelectRows,
  kScatterRows,
  kReshape,
};

struct Node {
  Op op;
  std::vector<int> inputs;            // node ids; inputs always precede the node
  Tensor value;                       // saved forward result (attached handle)
  double attr = 0.0;                  // scale factor / exponent
  std::vector<std::size_t> indices;   // select/scatter row indices
  std::size_t rows_attr = 0;          // scatter output row count
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Lifts a constant onto the graph as a leaf node.
  Tensor leaf(const Tensor& value);

  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  std::size_t size() const { return nodes_.size(); }

  int append(Node n);  // used by the op implementations

 private:
  // deque: backward passes append adjoint nodes while holding references to
  // earlier nodes, so storage must not relocate
  std::deque<Node> nodes_;
};

// While alive, operations compute values eagerly and attach nothing to any
// graph. Used for first-order backward passes and for evaluation-only code.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};
bool grad_enabled();

// ---- forward operations ----
// Elementwise binary ops broadcast row vectors, column vectors, and scalars
// against matrices (dimensions aligned from the right; a dimension of 1
// stretches). Anything further is out of scope.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor matmul(const Tensor& a, const Tensor& b);  // strict rank-2
Tensor transpose(const Tensor& a);                // strict rank-2
Tensor scalar_mul(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);  // domain: strictly positive entries
// Elementwise x^p. Domain: x >= 0 for non-integer p. The derivative at x == 0
// with p < 1 is taken as 0 (subgradient convention), which keeps norms of
// coincident points differentiable.
Tensor pow_const(const Tensor& a, double p);
Tensor sum(const Tensor& a);                      // scalar
Tensor sum_axis0(const Tensor& a);                // (m,n) -> (1,n)
Tensor sum_axis1(const Tensor& a);                // (m,n) -> (m,1)
Tensor mean(const Tensor& a);                     // scalar
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor select_rows(const Tensor& a, const std::vector<std::size_t>& indices);
Tensor scatter_rows(const Tensor& a, const std::vector<std::size_t>& indices,
                    std::size_t num_rows);
Tensor reshape(const Tensor& a, std::vector<std::size_t> shape);

// ---- composites ----
Tensor squared_l2_norm(const Tensor& a);          // sum of squares, scalar
Tensor l2_norm(const Tensor& a);                  // sqrt of the above
// Row-wise stable softmax (max-subtraction). Rank-1 tensors are treated as a
// single row; for rank-2, axis selects the normalization direction
// (1 = across a row, 0 = down a column).
Tensor softmax(const Tensor& logits);
Tensor softmax(const Tensor& logits, int axis);
Tensor log_softmax_rows(const Tensor& logits);
Tensor logsumexp_rows(const Tensor& logits);      // (m,n) -> (m,1)

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator*(const Tensor& a, double s) { return scalar_mul(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scalar_mul(a, s); }

// Reverse-mode gradient of a scalar output with respect to each tensor in
// wrt. Tensors unreachable from the output get an exact zero gradient. With
// create_graph set, the returned gradients are graph tensors and expressions
// built from them can be differentiated again.
std::vector<Tensor> grad(const Tensor& output, const std::vector<Tensor>& wrt,
                         bool create_graph = false);

}  // namespace dgsml

#endif  // DGSML_DIFFENGINE_HPP_
