#include "biembed/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace biembed {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// --- Tensor ------------------------------------------------------------

namespace {
void require_valid(const Tensor& t, const char* what) {
  if (!t.valid()) throw std::invalid_argument(std::string(what) + ": empty tensor handle");
}
}  // namespace

const Shape& Tensor::shape() const {
  require_valid(*this, "Tensor::shape");
  return graph_->nodes_[static_cast<std::size_t>(id_)]->shape;
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::values() const {
  require_valid(*this, "Tensor::values");
  return graph_->nodes_[static_cast<std::size_t>(id_)]->values;
}

std::span<const double> Tensor::grad() const {
  require_valid(*this, "Tensor::grad");
  const auto& n = *graph_->nodes_[static_cast<std::size_t>(id_)];
  if (!n.requires_grad) {
    throw std::runtime_error("Tensor::grad: node " + std::to_string(id_) +
                             " is not differentiable");
  }
  return n.grad;
}

bool Tensor::requires_grad() const {
  require_valid(*this, "Tensor::requires_grad");
  return graph_->nodes_[static_cast<std::size_t>(id_)]->requires_grad;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw std::runtime_error("Tensor::item: tensor has shape " + shape_str(shape()) +
                             ", expected a single element");
  }
  return values()[0];
}

// --- Graph -------------------------------------------------------------

Tensor Graph::make_node(Shape shape, bool requires_grad) {
  auto n = std::make_unique<Node>();
  n->shape = std::move(shape);
  const std::size_t count = shape_numel(n->shape);
  n->values.assign(count, 0.0);
  n->requires_grad = requires_grad;
  if (requires_grad) n->grad.assign(count, 0.0);
  nodes_.push_back(std::move(n));
  return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

Tensor Graph::constant(Shape shape, std::vector<double> values) {
  if (shape_numel(shape) != values.size()) {
    throw std::invalid_argument("Graph::constant: shape " + shape_str(shape) +
                                " does not match " + std::to_string(values.size()) +
                                " values");
  }
  Tensor t = make_node(std::move(shape), false);
  node(t.id()).values = std::move(values);
  return t;
}

Tensor Graph::parameter(Shape shape, std::vector<double> values) {
  if (shape_numel(shape) != values.size()) {
    throw std::invalid_argument("Graph::parameter: shape " + shape_str(shape) +
                                " does not match " + std::to_string(values.size()) +
                                " values");
  }
  Tensor t = make_node(std::move(shape), true);
  node(t.id()).values = std::move(values);
  return t;
}

void Graph::record(std::string op, std::vector<int> inputs, int output,
                   std::function<void()> backward_fn) {
  for (int in : inputs) {
    if (in >= output) {
      throw std::logic_error("Graph::record: input node " + std::to_string(in) +
                             " does not precede output " + std::to_string(output) +
                             " in op " + op);
    }
  }
  tape_.push_back(OpRecord{std::move(op), std::move(inputs), output, std::move(backward_fn)});
}

std::span<double> Graph::values_mut(const Tensor& t) {
  check_owns(t, "Graph::values_mut");
  return node(t.id()).values;
}

std::span<double> Graph::grad_mut(const Tensor& t) {
  check_owns(t, "Graph::grad_mut");
  Node& n = node(t.id());
  if (!n.requires_grad) {
    throw std::runtime_error("Graph::grad_mut: node is not differentiable");
  }
  return n.grad;
}

void Graph::check_owns(const Tensor& t, const char* op) const {
  if (t.graph() != this) {
    throw std::invalid_argument(std::string(op) + ": tensor does not belong to this graph");
  }
  if (t.id() < 0 || static_cast<std::size_t>(t.id()) >= nodes_.size()) {
    throw std::invalid_argument(std::string(op) + ": invalid node id");
  }
}

std::span<const double> Graph::grad_of(const Tensor& t) const {
  check_owns(t, "Graph::grad_of");
  const Node& n = node(t.id());
  if (!n.requires_grad) {
    throw std::runtime_error("Graph::grad_of: node is not differentiable");
  }
  return n.grad;
}

void Graph::backward(const Tensor& loss) {
  check_owns(loss, "Graph::backward");
  if (loss.numel() != 1) {
    throw std::invalid_argument("Graph::backward: loss has shape " +
                                shape_str(loss.shape()) + ", expected a scalar");
  }
  if (!loss.requires_grad()) {
    throw std::runtime_error("Graph::backward: loss does not depend on any differentiable node");
  }
  if (backward_done_) {
    throw std::runtime_error("Graph::backward: backward already run on this graph");
  }
  backward_done_ = true;
  node(loss.id()).grad[0] = 1.0;
  for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
    if (it->backward_fn) it->backward_fn();
  }
}

// --- op helpers ----------------------------------------------------------

namespace {

Graph& same_graph(const Tensor& a, const Tensor& b, const char* op) {
  require_valid(a, op);
  require_valid(b, op);
  if (a.graph() != b.graph()) {
    throw std::invalid_argument(std::string(op) + ": operands belong to different graphs");
  }
  return *a.graph();
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.shape().size() != rank) {
    throw std::invalid_argument(std::string(op) + ": expected rank-" + std::to_string(rank) +
                                " tensor, got shape " + shape_str(t.shape()));
  }
}

// C(m,n) += A(m,k) * B(k,n); per-element accumulation in ascending t order.
void acc_ab(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
            std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t t = 0; t < k; ++t) {
      const double av = ai[t];
      const double* bt = b + t * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bt[j];
    }
  }
}

// dA(m,k) += dC(m,n) * B(k,n)^T
void acc_ab_t(const double* dc, const double* b, double* da, std::size_t m, std::size_t n,
              std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* dci = dc + i * n;
    double* dai = da + i * k;
    for (std::size_t t = 0; t < k; ++t) {
      const double* bt = b + t * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += dci[j] * bt[j];
      dai[t] += s;
    }
  }
}

// dB(k,n) += A(m,k)^T * dC(m,n)
void acc_a_t_b(const double* a, const double* dc, double* db, std::size_t m, std::size_t k,
               std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* dci = dc + i * n;
    for (std::size_t t = 0; t < k; ++t) {
      const double av = ai[t];
      double* dbt = db + t * n;
      for (std::size_t j = 0; j < n; ++j) dbt[j] += av * dci[j];
    }
  }
}

}  // namespace

// --- ops -----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  Graph& g = same_graph(a, b, "matmul");
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1];
  const std::size_t k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2) {
    throw std::invalid_argument("matmul: inner dimensions disagree: " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
  Tensor out = g.make_node({m, n}, a.requires_grad() || b.requires_grad());
  acc_ab(a.values().data(), b.values().data(), g.values_mut(out).data(), m, k, n);
  if (out.requires_grad()) {
    g.record("matmul", {a.id(), b.id()}, out.id(), [&g, a, b, out, m, k, n]() {
      const double* dc = g.grad_of(out).data();
      if (a.requires_grad()) acc_ab_t(dc, b.values().data(), g.grad_mut(a).data(), m, n, k);
      if (b.requires_grad()) acc_a_t_b(a.values().data(), dc, g.grad_mut(b).data(), m, k, n);
    });
  }
  return out;
}

Tensor transpose(const Tensor& x) {
  require_valid(x, "transpose");
  Graph& g = *x.graph();
  require_rank(x, 2, "transpose");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  Tensor out = g.make_node({n, m}, x.requires_grad());
  const double* src = x.values().data();
  double* dst = g.values_mut(out).data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) dst[j * m + i] = src[i * n + j];
  if (out.requires_grad()) {
    g.record("transpose", {x.id()}, out.id(), [&g, x, out, m, n]() {
      const double* dy = g.grad_of(out).data();
      double* dx = g.grad_mut(x).data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) dx[i * n + j] += dy[j * m + i];
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  Graph& g = same_graph(a, b, "add");
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("add: shape mismatch: " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  Tensor out = g.make_node(a.shape(), a.requires_grad() || b.requires_grad());
  const std::size_t n = out.numel();
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  double* po = g.values_mut(out).data();
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  if (out.requires_grad()) {
    g.record("add", {a.id(), b.id()}, out.id(), [&g, a, b, out, n]() {
      const double* dy = g.grad_of(out).data();
      if (a.requires_grad()) {
        double* da = g.grad_mut(a).data();
        for (std::size_t i = 0; i < n; ++i) da[i] += dy[i];
      }
      if (b.requires_grad()) {
        double* db = g.grad_mut(b).data();
        for (std::size_t i = 0; i < n; ++i) db[i] += dy[i];
      }
    });
  }
  return out;
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  Graph& g = same_graph(x, bias, "add_row_bias");
  require_rank(x, 2, "add_row_bias");
  require_rank(bias, 1, "add_row_bias");
  const std::size_t m = x.shape()[0], d = x.shape()[1];
  if (bias.shape()[0] != d) {
    throw std::invalid_argument("add_row_bias: bias shape " + shape_str(bias.shape()) +
                                " does not match row width of " + shape_str(x.shape()));
  }
  Tensor out = g.make_node({m, d}, x.requires_grad() || bias.requires_grad());
  const double* px = x.values().data();
  const double* pb = bias.values().data();
  double* po = g.values_mut(out).data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j) po[i * d + j] = px[i * d + j] + pb[j];
  if (out.requires_grad()) {
    g.record("add_row_bias", {x.id(), bias.id()}, out.id(), [&g, x, bias, out, m, d]() {
      const double* dy = g.grad_of(out).data();
      if (x.requires_grad()) {
        double* dx = g.grad_mut(x).data();
        for (std::size_t i = 0; i < m * d; ++i) dx[i] += dy[i];
      }
      if (bias.requires_grad()) {
        double* db = g.grad_mut(bias).data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < d; ++j) db[j] += dy[i * d + j];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Graph& g = same_graph(a, b, "mul");
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("mul: shape mismatch: " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  Tensor out = g.make_node(a.shape(), a.requires_grad() || b.requires_grad());
  const std::size_t n = out.numel();
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  double* po = g.values_mut(out).data();
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  if (out.requires_grad()) {
    g.record("mul", {a.id(), b.id()}, out.id(), [&g, a, b, out, n]() {
      const double* dy = g.grad_of(out).data();
      if (a.requires_grad()) {
        double* da = g.grad_mut(a).data();
        const double* pb2 = b.values().data();
        for (std::size_t i = 0; i < n; ++i) da[i] += dy[i] * pb2[i];
      }
      if (b.requires_grad()) {
        double* db = g.grad_mut(b).data();
        const double* pa2 = a.values().data();
        for (std::size_t i = 0; i < n; ++i) db[i] += dy[i] * pa2[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& x, double c) {
  require_valid(x, "scale");
  Graph& g = *x.graph();
  Tensor out = g.make_node(x.shape(), x.requires_grad());
  const std::size_t n = out.numel();
  const double* px = x.values().data();
  double* po = g.values_mut(out).data();
  for (std::size_t i = 0; i < n; ++i) po[i] = px[i] * c;
  if (out.requires_grad()) {
    g.record("scale", {x.id()}, out.id(), [&g, x, out, c, n]() {
      const double* dy = g.grad_of(out).data();
      double* dx = g.grad_mut(x).data();
      for (std::size_t i = 0; i < n; ++i) dx[i] += dy[i] * c;
    });
  }
  return out;
}

Tensor gelu(const Tensor& x) {
  require_valid(x, "gelu");
  Graph& g = *x.graph();
  Tensor out = g.make_node(x.shape(), x.requires_grad());
  const std::size_t n = out.numel();
  const double* px = x.values().data();
  double* po = g.values_mut(out).data();
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  for (std::size_t i = 0; i < n; ++i) {
    po[i] = 0.5 * px[i] * (1.0 + std::erf(px[i] * inv_sqrt2));
  }
  if (out.requires_grad()) {
    g.record("gelu", {x.id()}, out.id(), [&g, x, out, n]() {
      constexpr double inv_sqrt2pi = 0.3989422804014326779;
      const double* dy = g.grad_of(out).data();
      const double* px2 = x.values().data();
      double* dx = g.grad_mut(x).data();
      for (std::size_t i = 0; i < n; ++i) {
        const double v = px2[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * 0.7071067811865475244));
        const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
        dx[i] += dy[i] * (cdf + v * pdf);
      }
    });
  }
  return out;
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  Graph& g = same_graph(x, gain, "layer_norm_rows");
  same_graph(x, bias, "layer_norm_rows");
  require_rank(x, 2, "layer_norm_rows");
  require_rank(gain, 1, "layer_norm_rows");
  require_rank(bias, 1, "layer_norm_rows");
  const std::size_t m = x.shape()[0], d = x.shape()[1];
  if (gain.shape()[0] != d || bias.shape()[0] != d) {
    throw std::invalid_argument("layer_norm_rows: gain/bias width does not match " +
                                shape_str(x.shape()));
  }
  const bool diff = x.requires_grad() || gain.requires_grad() || bias.requires_grad();
  Tensor out = g.make_node({m, d}, diff);
  const double* px = x.values().data();
  const double* pg = gain.values().data();
  const double* pb = bias.values().data();
  double* po = g.values_mut(out).data();
  // Keep normalized values and 1/sigma per row for the backward pass.
  auto xhat = std::make_shared<std::vector<double>>(m * d);
  auto inv_sigma = std::make_shared<std::vector<double>>(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = px + i * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = row[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_sigma)[i] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const double xh = (row[j] - mean) * inv;
      (*xhat)[i * d + j] = xh;
      po[i * d + j] = pg[j] * xh + pb[j];
    }
  }
  if (diff) {
    g.record("layer_norm_rows", {x.id(), gain.id(), bias.id()}, out.id(),
             [&g, x, gain, bias, out, m, d, xhat, inv_sigma]() {
               const double* dy = g.grad_of(out).data();
               const double* pg2 = gain.values().data();
               if (gain.requires_grad()) {
                 double* dgain = g.grad_mut(gain).data();
                 for (std::size_t i = 0; i < m; ++i)
                   for (std::size_t j = 0; j < d; ++j)
                     dgain[j] += dy[i * d + j] * (*xhat)[i * d + j];
               }
               if (bias.requires_grad()) {
                 double* dbias = g.grad_mut(bias).data();
                 for (std::size_t i = 0; i < m; ++i)
                   for (std::size_t j = 0; j < d; ++j) dbias[j] += dy[i * d + j];
               }
               if (x.requires_grad()) {
                 double* dx = g.grad_mut(x).data();
                 std::vector<double> u(d);
                 for (std::size_t i = 0; i < m; ++i) {
                   double mu_u = 0.0, mu_ux = 0.0;
                   for (std::size_t j = 0; j < d; ++j) {
                     u[j] = dy[i * d + j] * pg2[j];
                     mu_u += u[j];
                     mu_ux += u[j] * (*xhat)[i * d + j];
                   }
                   mu_u /= static_cast<double>(d);
                   mu_ux /= static_cast<double>(d);
                   const double inv = (*inv_sigma)[i];
                   for (std::size_t j = 0; j < d; ++j) {
                     dx[i * d + j] += (u[j] - mu_u - (*xhat)[i * d + j] * mu_ux) * inv;
                   }
                 }
               }
             });
  }
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  require_valid(x, "softmax_rows");
  Graph& g = *x.graph();
  require_rank(x, 2, "softmax_rows");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  Tensor out = g.make_node({m, n}, x.requires_grad());
  const double* px = x.values().data();
  double* po = g.values_mut(out).data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = px + i * n;
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double e = std::exp(row[j] - mx);
      po[i * n + j] = e;
      sum += e;
    }
    for (std::size_t j = 0; j < n; ++j) po[i * n + j] /= sum;
  }
  if (out.requires_grad()) {
    g.record("softmax_rows", {x.id()}, out.id(), [&g, x, out, m, n]() {
      const double* dy = g.grad_of(out).data();
      const double* y = out.values().data();
      double* dx = g.grad_mut(x).data();
      for (std::size_t i = 0; i < m; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += dy[i * n + j] * y[i * n + j];
        for (std::size_t j = 0; j < n; ++j) {
          dx[i * n + j] += y[i * n + j] * (dy[i * n + j] - dot);
        }
      }
    });
  }
  return out;
}

Tensor softmax_cross_entropy_rows(const Tensor& s, const std::vector<std::size_t>& targets) {
  require_valid(s, "softmax_cross_entropy_rows");
  Graph& g = *s.graph();
  require_rank(s, 2, "softmax_cross_entropy_rows");
  const std::size_t rows = s.shape()[0], cols = s.shape()[1];
  if (targets.size() != rows) {
    throw std::invalid_argument("softmax_cross_entropy_rows: " + std::to_string(targets.size()) +
                                " targets for " + std::to_string(rows) + " rows");
  }
  for (std::size_t i = 0; i < rows; ++i) {
    if (targets[i] >= cols) {
      throw std::invalid_argument("softmax_cross_entropy_rows: target " +
                                  std::to_string(targets[i]) + " out of range for row " +
                                  std::to_string(i) + " with " + std::to_string(cols) +
                                  " columns");
    }
  }
  Tensor out = g.make_node({1}, s.requires_grad());
  const double* ps = s.values().data();
  // Softmax probabilities are kept for the backward pass.
  auto probs = std::make_shared<std::vector<double>>(rows * cols);
  double total = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    const double* row = ps + i * cols;
    double mx = row[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const double e = std::exp(row[j] - mx);
      (*probs)[i * cols + j] = e;
      sum += e;
    }
    for (std::size_t j = 0; j < cols; ++j) (*probs)[i * cols + j] /= sum;
    const double lse = mx + std::log(sum);
    total += lse - row[targets[i]];
  }
  g.values_mut(out)[0] = total / static_cast<double>(rows);
  if (out.requires_grad()) {
    g.record("softmax_cross_entropy_rows", {s.id()}, out.id(),
             [&g, s, out, rows, cols, probs, targets]() {
               const double dl = g.grad_of(out)[0];
               double* ds = g.grad_mut(s).data();
               const double inv_rows = 1.0 / static_cast<double>(rows);
               for (std::size_t i = 0; i < rows; ++i) {
                 for (std::size_t j = 0; j < cols; ++j) {
                   double p = (*probs)[i * cols + j];
                   if (j == targets[i]) p -= 1.0;
                   ds[i * cols + j] += dl * p * inv_rows;
                 }
               }
             });
  }
  return out;
}

Tensor mean_pool_masked(const Tensor& h, const Tensor& mask) {
  Graph& g = same_graph(h, mask, "mean_pool_masked");
  require_rank(h, 3, "mean_pool_masked");
  require_rank(mask, 2, "mean_pool_masked");
  const std::size_t b = h.shape()[0], t = h.shape()[1], d = h.shape()[2];
  if (mask.shape()[0] != b || mask.shape()[1] != t) {
    throw std::invalid_argument("mean_pool_masked: mask shape " + shape_str(mask.shape()) +
                                " does not match " + shape_str(h.shape()));
  }
  const double* pm = mask.values().data();
  for (std::size_t i = 0; i < b * t; ++i) {
    if (pm[i] != 0.0 && pm[i] != 1.0) {
      throw std::invalid_argument("mean_pool_masked: mask entries must be 0 or 1");
    }
  }
  auto denom = std::make_shared<std::vector<double>>(b, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < t; ++j) sum += pm[i * t + j];
    if (sum == 0.0) {
      throw std::invalid_argument("mean_pool_masked: mask row " + std::to_string(i) +
                                  " is all zeros");
    }
    (*denom)[i] = sum;
  }
  Tensor out = g.make_node({b, d}, h.requires_grad());
  const double* ph = h.values().data();
  double* po = g.values_mut(out).data();
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < t; ++j) {
      if (pm[i * t + j] == 0.0) continue;
      const double* src = ph + (i * t + j) * d;
      double* dst = po + i * d;
      for (std::size_t kx = 0; kx < d; ++kx) dst[kx] += src[kx];
    }
    double* dst = po + i * d;
    for (std::size_t kx = 0; kx < d; ++kx) dst[kx] /= (*denom)[i];
  }
  if (out.requires_grad()) {
    g.record("mean_pool_masked", {h.id(), mask.id()}, out.id(),
             [&g, h, mask, out, b, t, d, denom]() {
               const double* dy = g.grad_of(out).data();
               const double* pm2 = mask.values().data();
               double* dh = g.grad_mut(h).data();
               for (std::size_t i = 0; i < b; ++i) {
                 const double inv = 1.0 / (*denom)[i];
                 for (std::size_t j = 0; j < t; ++j) {
                   if (pm2[i * t + j] == 0.0) continue;
                   double* dst = dh + (i * t + j) * d;
                   const double* src = dy + i * d;
                   for (std::size_t kx = 0; kx < d; ++kx) dst[kx] += src[kx] * inv;
                 }
               }
             });
  }
  return out;
}

Tensor l2_normalize_rows(const Tensor& x) {
  require_valid(x, "l2_normalize_rows");
  Graph& g = *x.graph();
  require_rank(x, 2, "l2_normalize_rows");
  const std::size_t m = x.shape()[0], d = x.shape()[1];
  constexpr double kEps = 1e-12;
  Tensor out = g.make_node({m, d}, x.requires_grad());
  const double* px = x.values().data();
  double* po = g.values_mut(out).data();
  auto radius = std::make_shared<std::vector<double>>(m);
  auto clamped = std::make_shared<std::vector<bool>>(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = px + i * d;
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) sq += row[j] * row[j];
    const double norm = std::sqrt(sq);
    const double r = std::max(norm, kEps);
    (*radius)[i] = r;
    (*clamped)[i] = norm < kEps;
    for (std::size_t j = 0; j < d; ++j) po[i * d + j] = row[j] / r;
  }
  if (out.requires_grad()) {
    g.record("l2_normalize_rows", {x.id()}, out.id(), [&g, x, out, m, d, radius, clamped]() {
      const double* dy = g.grad_of(out).data();
      const double* y = out.values().data();
      double* dx = g.grad_mut(x).data();
      for (std::size_t i = 0; i < m; ++i) {
        const double inv_r = 1.0 / (*radius)[i];
        if ((*clamped)[i]) {
          // Below the epsilon guard the denominator is constant.
          for (std::size_t j = 0; j < d; ++j) dx[i * d + j] += dy[i * d + j] * inv_r;
          continue;
        }
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += dy[i * d + j] * y[i * d + j];
        for (std::size_t j = 0; j < d; ++j) {
          dx[i * d + j] += (dy[i * d + j] - y[i * d + j] * dot) * inv_r;
        }
      }
    });
  }
  return out;
}

Tensor embedding_lookup(const Tensor& table, const std::vector<std::size_t>& ids,
                        std::size_t batch, std::size_t time) {
  require_valid(table, "embedding_lookup");
  Graph& g = *table.graph();
  require_rank(table, 2, "embedding_lookup");
  const std::size_t v = table.shape()[0], d = table.shape()[1];
  if (ids.size() != batch * time) {
    throw std::invalid_argument("embedding_lookup: " + std::to_string(ids.size()) +
                                " ids for batch " + std::to_string(batch) + " x " +
                                std::to_string(time));
  }
  for (std::size_t id : ids) {
    if (id >= v) {
      throw std::invalid_argument("embedding_lookup: token id " + std::to_string(id) +
                                  " out of range for vocab of " + std::to_string(v));
    }
  }
  Tensor out = g.make_node({batch, time, d}, table.requires_grad());
  const double* pt = table.values().data();
  double* po = g.values_mut(out).data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(pt + ids[i] * d, d, po + i * d);
  }
  if (out.requires_grad()) {
    g.record("embedding_lookup", {table.id()}, out.id(), [&g, table, out, ids, d]() {
      const double* dy = g.grad_of(out).data();
      double* dt = g.grad_mut(table).data();
      for (std::size_t i = 0; i < ids.size(); ++i) {
        double* dst = dt + ids[i] * d;
        const double* src = dy + i * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  require_valid(x, "reshape");
  Graph& g = *x.graph();
  if (shape_numel(shape) != x.numel()) {
    throw std::invalid_argument("reshape: cannot reshape " + shape_str(x.shape()) + " to " +
                                shape_str(shape));
  }
  Tensor out = g.make_node(std::move(shape), x.requires_grad());
  auto vals = g.values_mut(out);
  std::copy(x.values().begin(), x.values().end(), vals.begin());
  if (out.requires_grad()) {
    const std::size_t n = x.numel();
    g.record("reshape", {x.id()}, out.id(), [&g, x, out, n]() {
      const double* dy = g.grad_of(out).data();
      double* dx = g.grad_mut(x).data();
      for (std::size_t i = 0; i < n; ++i) dx[i] += dy[i];
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& x, std::size_t r0, std::size_t r1) {
  require_valid(x, "slice_rows");
  Graph& g = *x.graph();
  require_rank(x, 2, "slice_rows");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  if (r0 >= r1 || r1 > m) {
    throw std::invalid_argument("slice_rows: range [" + std::to_string(r0) + "," +
                                std::to_string(r1) + ") invalid for " + shape_str(x.shape()));
  }
  const std::size_t rows = r1 - r0;
  Tensor out = g.make_node({rows, n}, x.requires_grad());
  std::copy_n(x.values().data() + r0 * n, rows * n, g.values_mut(out).data());
  if (out.requires_grad()) {
    g.record("slice_rows", {x.id()}, out.id(), [&g, x, out, r0, rows, n]() {
      const double* dy = g.grad_of(out).data();
      double* dx = g.grad_mut(x).data() + r0 * n;
      for (std::size_t i = 0; i < rows * n; ++i) dx[i] += dy[i];
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1) {
  require_valid(x, "slice_cols");
  Graph& g = *x.graph();
  require_rank(x, 2, "slice_cols");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  if (c0 >= c1 || c1 > n) {
    throw std::invalid_argument("slice_cols: range [" + std::to_string(c0) + "," +
                                std::to_string(c1) + ") invalid for " + shape_str(x.shape()));
  }
  const std::size_t cols = c1 - c0;
  Tensor out = g.make_node({m, cols}, x.requires_grad());
  const double* px = x.values().data();
  double* po = g.values_mut(out).data();
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(px + i * n + c0, cols, po + i * cols);
  }
  if (out.requires_grad()) {
    g.record("slice_cols", {x.id()}, out.id(), [&g, x, out, c0, cols, m, n]() {
      const double* dy = g.grad_of(out).data();
      double* dx = g.grad_mut(x).data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < cols; ++j) dx[i * n + c0 + j] += dy[i * cols + j];
    });
  }
  return out;
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no tensors given");
  Graph& g = *parts[0].graph();
  require_rank(parts[0], 2, "concat_rows");
  const std::size_t n = parts[0].shape()[1];
  std::size_t total = 0;
  bool diff = false;
  for (const Tensor& p : parts) {
    same_graph(parts[0], p, "concat_rows");
    require_rank(p, 2, "concat_rows");
    if (p.shape()[1] != n) {
      throw std::invalid_argument("concat_rows: column mismatch: " +
                                  shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    }
    total += p.shape()[0];
    diff = diff || p.requires_grad();
  }
  Tensor out = g.make_node({total, n}, diff);
  double* po = g.values_mut(out).data();
  std::size_t off = 0;
  std::vector<int> input_ids;
  std::vector<Tensor> held(parts.begin(), parts.end());
  for (const Tensor& p : parts) {
    std::copy(p.values().begin(), p.values().end(), po + off);
    off += p.numel();
    input_ids.push_back(p.id());
  }
  if (diff) {
    g.record("concat_rows", input_ids, out.id(), [&g, held, out]() {
      const double* dy = g.grad_of(out).data();
      std::size_t off2 = 0;
      for (const Tensor& p : held) {
        const std::size_t count = p.numel();
        if (p.requires_grad()) {
          double* dp = g.grad_mut(p).data();
          for (std::size_t i = 0; i < count; ++i) dp[i] += dy[off2 + i];
        }
        off2 += count;
      }
    });
  }
  return out;
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no tensors given");
  Graph& g = *parts[0].graph();
  require_rank(parts[0], 2, "concat_cols");
  const std::size_t m = parts[0].shape()[0];
  std::size_t total = 0;
  bool diff = false;
  for (const Tensor& p : parts) {
    same_graph(parts[0], p, "concat_cols");
    require_rank(p, 2, "concat_cols");
    if (p.shape()[0] != m) {
      throw std::invalid_argument("concat_cols: row mismatch: " + shape_str(parts[0].shape()) +
                                  " vs " + shape_str(p.shape()));
    }
    total += p.shape()[1];
    diff = diff || p.requires_grad();
  }
  Tensor out = g.make_node({m, total}, diff);
  double* po = g.values_mut(out).data();
  std::vector<int> input_ids;
  std::vector<Tensor> held(parts.begin(), parts.end());
  std::size_t col_off = 0;
  for (const Tensor& p : parts) {
    const std::size_t cols = p.shape()[1];
    const double* pp = p.values().data();
    for (std::size_t i = 0; i < m; ++i) {
      std::copy_n(pp + i * cols, cols, po + i * total + col_off);
    }
    col_off += cols;
    input_ids.push_back(p.id());
  }
  if (diff) {
    g.record("concat_cols", input_ids, out.id(), [&g, held, out, m, total]() {
      const double* dy = g.grad_of(out).data();
      std::size_t col_off2 = 0;
      for (const Tensor& p : held) {
        const std::size_t cols = p.shape()[1];
        if (p.requires_grad()) {
          double* dp = g.grad_mut(p).data();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < cols; ++j)
              dp[i * cols + j] += dy[i * total + col_off2 + j];
        }
        col_off2 += cols;
      }
    });
  }
  return out;
}

Tensor sum_all(const Tensor& x) {
  require_valid(x, "sum_all");
  Graph& g = *x.graph();
  Tensor out = g.make_node({1}, x.requires_grad());
  double total = 0.0;
  for (double v : x.values()) total += v;
  g.values_mut(out)[0] = total;
  if (out.requires_grad()) {
    const std::size_t n = x.numel();
    g.record("sum_all", {x.id()}, out.id(), [&g, x, out, n]() {
      const double dl = g.grad_of(out)[0];
      double* dx = g.grad_mut(x).data();
      for (std::size_t i = 0; i < n; ++i) dx[i] += dl;
    });
  }
  return out;
}

}  // namespace biembed
