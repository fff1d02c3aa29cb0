#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace biembed {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Graph;

// Handle to a node owned by a Graph. Copying the handle does not copy data.
class Tensor {
 public:
  Tensor() = default;

  const Shape& shape() const;
  std::size_t numel() const;
  std::span<const double> values() const;
  // Gradient after Graph::backward. Throws if this node is not differentiable.
  std::span<const double> grad() const;
  bool requires_grad() const;
  // Value of a single-element tensor.
  double item() const;
  int id() const { return id_; }
  Graph* graph() const { return graph_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  friend class Graph;
  Tensor(Graph* g, int id) : graph_(g), id_(id) {}
  Graph* graph_ = nullptr;
  int id_ = -1;
};

// Define-by-run reverse-mode tape. One graph per forward/backward pass; nodes
// are appended in topological order and backward walks the op records once in
// reverse. Single-threaded; rebuild per batch rather than reuse.
class Graph {
 public:
  explicit Graph(std::uint64_t seed = 0) : seed_(seed) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Non-differentiable leaf.
  Tensor constant(Shape shape, std::vector<double> values);
  // Differentiable leaf (gradient storage allocated up front).
  Tensor parameter(Shape shape, std::vector<double> values);
  Tensor scalar_constant(double v) { return constant({1}, {v}); }

  // Seeds d(loss)/d(loss) = 1 and runs the tape in reverse, populating the
  // grad arrays of every differentiable node. loss must be a single-element
  // node of this graph.
  void backward(const Tensor& loss);

  std::span<const double> grad_of(const Tensor& t) const;

  std::uint64_t seed() const { return seed_; }
  std::size_t n_nodes() const { return nodes_.size(); }
  std::size_t n_records() const { return tape_.size(); }

  // --- low-level interface used by the op free functions ---
  Tensor make_node(Shape shape, bool requires_grad);
  void record(std::string op, std::vector<int> inputs, int output,
              std::function<void()> backward_fn);
  std::span<double> values_mut(const Tensor& t);
  std::span<double> grad_mut(const Tensor& t);
  void check_owns(const Tensor& t, const char* op) const;

 private:
  struct Node {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // sized only when requires_grad
    bool requires_grad = false;
  };
  struct OpRecord {
    std::string op;
    std::vector<int> inputs;
    int output = -1;
    std::function<void()> backward_fn;
  };

  Node& node(int id) { return *nodes_[static_cast<std::size_t>(id)]; }
  const Node& node(int id) const { return *nodes_[static_cast<std::size_t>(id)]; }

  std::vector<std::unique_ptr<Node>> nodes_;
  std::vector<OpRecord> tape_;
  std::uint64_t seed_ = 0;
  bool backward_done_ = false;

  friend class Tensor;
};

// --- ops -------------------------------------------------------------------
// All ops are explicit-copy (no views) and register their gradient rule on
// the owning graph when an input is differentiable.

// C[i,j] = sum_t A[i,t] * B[t,j], summation in ascending t order.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);  // 2-D
Tensor add(const Tensor& a, const Tensor& b);
// X[m,d] + b[d] broadcast over rows.
Tensor add_row_bias(const Tensor& x, const Tensor& bias);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& x, double c);
Tensor gelu(const Tensor& x);  // exact erf form
// Row-wise layer norm over the last dimension of a 2-D tensor.
Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias,
                       double eps = 1e-5);
// Row-wise softmax with max-subtraction stabilization.
Tensor softmax_rows(const Tensor& x);
// (1/B) * sum_i [logsumexp_j S[i,j] - S[i,targets[i]]] for square S[B,B].
Tensor softmax_cross_entropy_rows(const Tensor& s,
                                  const std::vector<std::size_t>& targets);
// out[b] = sum_t mask[b,t]*H[b,t,:] / sum_t mask[b,t]. mask entries are 0/1;
// an all-zero mask row is an error. Differentiable in H only.
Tensor mean_pool_masked(const Tensor& h, const Tensor& mask);
// Each row divided by max(||row||, 1e-12).
Tensor l2_normalize_rows(const Tensor& x);
// Gathers rows of table[V,d] into [B,T,d]; ids.size() must equal B*T.
Tensor embedding_lookup(const Tensor& table, const std::vector<std::size_t>& ids,
                        std::size_t batch, std::size_t time);
Tensor reshape(const Tensor& x, Shape shape);
Tensor slice_rows(const Tensor& x, std::size_t r0, std::size_t r1);
Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor sum_all(const Tensor& x);

}  // namespace biembed
