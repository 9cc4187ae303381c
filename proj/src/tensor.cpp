#include "cretta/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>

#include "cretta/numerics.hpp"

namespace cretta {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " +
                              shape_str(a) + " and " + shape_str(b));
}

void require_matrix(const char* op, const Tensor& t) {
  if (t.rank() != 2)
    throw std::invalid_argument(std::string(op) + ": expected a matrix, got " +
                                shape_str(t.shape()));
}

void require_vector(const char* op, const Tensor& t) {
  if (t.rank() != 1)
    throw std::invalid_argument(std::string(op) + ": expected a vector, got " +
                                shape_str(t.shape()));
}

// Builds the output node; history is only recorded when some input needs it.
Tensor make_result(Shape shape, std::vector<double> value,
                   std::initializer_list<const Tensor*> inputs,
                   std::function<void(Node&)> backprop) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool any = false;
  for (const Tensor* t : inputs) any = any || t->requires_grad();
  if (any) {
    node->requires_grad = true;
    for (const Tensor* t : inputs) node->parents.push_back(t->node());
    node->backprop = std::move(backprop);
  }
  return Tensor(std::move(node));
}

// Accumulate into a parent only if it participates in differentiation.
inline std::vector<double>* grad_sink(const NodePtr& p) {
  if (!p->requires_grad) return nullptr;
  p->ensure_grad();
  return &p->grad;
}

template <typename Fwd, typename Dfdx>
Tensor unary(const Tensor& a, Fwd f, Dfdx df) {
  std::vector<double> out(a.size());
  auto in = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return make_result(a.shape(), std::move(out), {&a}, [df](Node& self) {
    auto* g = grad_sink(self.parents[0]);
    if (!g) return;
    const auto& x = self.parents[0]->value;
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      (*g)[i] += self.grad[i] * df(x[i], self.value[i]);
  });
}

}  // namespace

// ---------------------------------------------------------------------------

Tensor::Tensor() : node_(std::make_shared<Node>()) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = shape_size(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_size(shape) != data.size())
    throw std::invalid_argument("Tensor::from: data length " +
                                std::to_string(data.size()) +
                                " does not match shape " + shape_str(shape));
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::vector(std::vector<double> data, bool requires_grad) {
  Shape s{data.size()};
  return from(std::move(s), std::move(data), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from(Shape{}, {value}, requires_grad);
}

std::size_t Tensor::rows() const {
  if (rank() == 2) return shape()[0];
  if (rank() == 1) return shape()[0];
  return 1;
}

std::size_t Tensor::cols() const { return rank() == 2 ? shape()[1] : 1; }

double Tensor::at(std::size_t r, std::size_t c) const {
  return node_->value[r * cols() + c];
}

std::span<double> Tensor::mutable_data() {
  if (!node_->is_leaf())
    throw std::logic_error("Tensor::mutable_data: not a leaf tensor");
  return node_->value;
}

double Tensor::item() const {
  if (size() != 1)
    throw std::invalid_argument("Tensor::item: tensor has " +
                                std::to_string(size()) + " elements");
  return node_->value[0];
}

void Tensor::set_requires_grad(bool flag) {
  if (!node_->is_leaf())
    throw std::logic_error("Tensor::set_requires_grad: not a leaf tensor");
  node_->requires_grad = flag;
}

void Tensor::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::backward() const {
  if (size() != 1)
    throw std::invalid_argument(
        "backward: output must have exactly one element, got " +
        shape_str(shape()));
  std::vector<double> seed{1.0};
  Tensor self = *this;
  backward_from(std::span<const Tensor>(&self, 1),
                std::span<const std::vector<double>>(&seed, 1));
}

Tensor Tensor::detach() const {
  return from(shape(), node_->value, false);
}

Tensor Tensor::clone() const {
  return from(shape(), node_->value, node_->requires_grad);
}

void backward_from(std::span<const Tensor> outputs,
                   std::span<const std::vector<double>> seeds) {
  if (outputs.size() != seeds.size())
    throw std::invalid_argument("backward_from: outputs/seeds count mismatch");
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    if (seeds[i].size() != outputs[i].size())
      throw std::invalid_argument("backward_from: seed length mismatch");
    if (!outputs[i].requires_grad())
      throw std::invalid_argument(
          "backward_from: output has no recorded history");
  }

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  for (const Tensor& out : outputs) {
    std::vector<std::pair<Node*, std::size_t>> stack{{out.node().get(), 0}};
    if (!seen.insert(out.node().get()).second) continue;
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        Node* p = node->parents[next++].get();
        if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
  }

  for (Node* n : order) {
    if (n->is_leaf())
      n->ensure_grad();
    else
      n->grad.assign(n->value.size(), 0.0);
  }
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    auto& g = outputs[i].node()->grad;
    for (std::size_t k = 0; k < g.size(); ++k) g[k] += seeds[i][k];
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->is_leaf() && n->backprop) n->backprop(*n);
  }
}

// ---------------------------------------------------------------------------
// Elementwise binary ops (identical shapes).

namespace {

void require_same(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error(op, a.shape(), b.shape());
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same("add", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  return make_result(a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    for (int k = 0; k < 2; ++k)
      if (auto* g = grad_sink(self.parents[k]))
        for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same("sub", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
  return make_result(a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    if (auto* g = grad_sink(self.parents[0]))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
    if (auto* g = grad_sink(self.parents[1]))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] -= self.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same("mul", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  return make_result(a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    const auto& x = self.parents[0]->value;
    const auto& y = self.parents[1]->value;
    if (auto* g = grad_sink(self.parents[0]))
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        (*g)[i] += self.grad[i] * y[i];
    if (auto* g = grad_sink(self.parents[1]))
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        (*g)[i] += self.grad[i] * x[i];
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same("div", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) / b.at(i);
  return make_result(a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    const auto& y = self.parents[1]->value;
    if (auto* g = grad_sink(self.parents[0]))
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        (*g)[i] += self.grad[i] / y[i];
    if (auto* g = grad_sink(self.parents[1]))
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        (*g)[i] -= self.grad[i] * self.value[i] / y[i];
  });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor scale(const Tensor& a, double factor) {
  return unary(
      a, [factor](double x) { return factor * x; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double offset) {
  return unary(
      a, [offset](double x) { return x + offset; },
      [](double, double) { return 1.0; });
}

// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix("matmul", a);
  require_matrix("matmul", b);
  const std::size_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
  if (b.shape()[0] != k) shape_error("matmul", a.shape(), b.shape());
  std::vector<double> out(n * m, 0.0);
  auto x = a.data();
  auto w = b.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = x[i * k + p];
      for (std::size_t j = 0; j < m; ++j) out[i * m + j] += xv * w[p * m + j];
    }
  return make_result(Shape{n, m}, std::move(out), {&a, &b},
                     [n, k, m](Node& self) {
                       const auto& x = self.parents[0]->value;
                       const auto& w = self.parents[1]->value;
                       const auto& g = self.grad;
                       if (auto* gx = grad_sink(self.parents[0]))
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t p = 0; p < k; ++p) {
                             double acc = 0.0;
                             for (std::size_t j = 0; j < m; ++j)
                               acc += g[i * m + j] * w[p * m + j];
                             (*gx)[i * k + p] += acc;
                           }
                       if (auto* gw = grad_sink(self.parents[1]))
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t p = 0; p < k; ++p) {
                             const double xv = x[i * k + p];
                             for (std::size_t j = 0; j < m; ++j)
                               (*gw)[p * m + j] += xv * g[i * m + j];
                           }
                     });
}

namespace {

void require_row_broadcast(const char* op, const Tensor& x, const Tensor& v) {
  require_matrix(op, x);
  if (v.size() != x.shape()[1] || v.rank() > 2 ||
      (v.rank() == 2 && v.shape()[0] != 1))
    shape_error(op, x.shape(), v.shape());
}

}  // namespace

Tensor add_row(const Tensor& x, const Tensor& v) {
  require_row_broadcast("add_row", x, v);
  const std::size_t n = x.shape()[0], m = x.shape()[1];
  std::vector<double> out(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = x.at(i * m + j) + v.at(j);
  return make_result(x.shape(), std::move(out), {&x, &v}, [n, m](Node& self) {
    if (auto* g = grad_sink(self.parents[0]))
      for (std::size_t i = 0; i < n * m; ++i) (*g)[i] += self.grad[i];
    if (auto* g = grad_sink(self.parents[1]))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) (*g)[j] += self.grad[i * m + j];
  });
}

Tensor sub_row(const Tensor& x, const Tensor& v) {
  require_row_broadcast("sub_row", x, v);
  const std::size_t n = x.shape()[0], m = x.shape()[1];
  std::vector<double> out(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = x.at(i * m + j) - v.at(j);
  return make_result(x.shape(), std::move(out), {&x, &v}, [n, m](Node& self) {
    if (auto* g = grad_sink(self.parents[0]))
      for (std::size_t i = 0; i < n * m; ++i) (*g)[i] += self.grad[i];
    if (auto* g = grad_sink(self.parents[1]))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) (*g)[j] -= self.grad[i * m + j];
  });
}

Tensor mul_row(const Tensor& x, const Tensor& v) {
  require_row_broadcast("mul_row", x, v);
  const std::size_t n = x.shape()[0], m = x.shape()[1];
  std::vector<double> out(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = x.at(i * m + j) * v.at(j);
  return make_result(x.shape(), std::move(out), {&x, &v}, [n, m](Node& self) {
    const auto& xv = self.parents[0]->value;
    const auto& vv = self.parents[1]->value;
    if (auto* g = grad_sink(self.parents[0]))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j)
          (*g)[i * m + j] += self.grad[i * m + j] * vv[j];
    if (auto* g = grad_sink(self.parents[1]))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j)
          (*g)[j] += self.grad[i * m + j] * xv[i * m + j];
  });
}

Tensor sub_col(const Tensor& x, const Tensor& c) {
  require_matrix("sub_col", x);
  const std::size_t n = x.shape()[0], m = x.shape()[1];
  if (c.size() != n || c.rank() != 1) shape_error("sub_col", x.shape(), c.shape());
  std::vector<double> out(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = x.at(i * m + j) - c.at(i);
  return make_result(x.shape(), std::move(out), {&x, &c}, [n, m](Node& self) {
    if (auto* g = grad_sink(self.parents[0]))
      for (std::size_t i = 0; i < n * m; ++i) (*g)[i] += self.grad[i];
    if (auto* g = grad_sink(self.parents[1]))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) (*g)[i] -= self.grad[i * m + j];
  });
}

// ---------------------------------------------------------------------------

Tensor relu(const Tensor& a) {
  return unary(
      a, [](double x) { return x > 0.0 || std::isnan(x) ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : std::isnan(x) ? x : 0.0; });
}

Tensor exp(const Tensor& a) {
  return unary(
      a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(
      a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Tensor square(const Tensor& a) {
  return unary(
      a, [](double x) { return x * x; },
      [](double x, double) { return 2.0 * x; });
}

Tensor rsqrt(const Tensor& a) {
  return unary(
      a, [](double x) { return 1.0 / std::sqrt(x); },
      [](double x, double y) { return -0.5 * y / x; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a, [](double x) { return cretta::sigmoid(x); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor log_sigmoid(const Tensor& a) {
  // d/dx log sigma(x) = sigma(-x)
  return unary(
      a, [](double x) { return cretta::log_sigmoid(x); },
      [](double x, double) { return cretta::sigmoid(-x); });
}

// ---------------------------------------------------------------------------

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  return make_result(Shape{}, {acc}, {&a}, [](Node& self) {
    if (auto* g = grad_sink(self.parents[0]))
      for (double& v : *g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw std::invalid_argument("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor mean_rows(const Tensor& x) {
  require_matrix("mean_rows", x);
  const std::size_t n = x.shape()[0], m = x.shape()[1];
  if (n == 0) throw std::invalid_argument("mean_rows: no rows");
  std::vector<double> out(m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[j] += x.at(i * m + j);
  for (double& v : out) v /= static_cast<double>(n);
  return make_result(Shape{m}, std::move(out), {&x}, [n, m](Node& self) {
    if (auto* g = grad_sink(self.parents[0]))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j)
          (*g)[i * m + j] += self.grad[j] / static_cast<double>(n);
  });
}

Tensor row_sum(const Tensor& x) {
  require_matrix("row_sum", x);
  const std::size_t n = x.shape()[0], m = x.shape()[1];
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i] += x.at(i * m + j);
  return make_result(Shape{n}, std::move(out), {&x}, [n, m](Node& self) {
    if (auto* g = grad_sink(self.parents[0]))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) (*g)[i * m + j] += self.grad[i];
  });
}

Tensor row_logsumexp(const Tensor& x, double temperature) {
  require_matrix("row_logsumexp", x);
  const std::size_t n = x.shape()[0], m = x.shape()[1];
  std::vector<double> out(n);
  auto v = x.data();
  for (std::size_t i = 0; i < n; ++i)
    out[i] = log_sum_exp(v.subspan(i * m, m), temperature);
  return make_result(
      Shape{n}, std::move(out), {&x}, [n, m, temperature](Node& self) {
        auto* g = grad_sink(self.parents[0]);
        if (!g) return;
        const auto& xv = self.parents[0]->value;
        // d/dx_k [T log sum exp(x/T)] = softmax(x/T)_k
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j)
            (*g)[i * m + j] +=
                self.grad[i] *
                std::exp((xv[i * m + j] - self.value[i]) / temperature);
      });
}

Tensor pick(const Tensor& x, std::span<const std::size_t> cols) {
  require_matrix("pick", x);
  const std::size_t n = x.shape()[0], m = x.shape()[1];
  if (cols.size() != n)
    throw std::invalid_argument("pick: need one column index per row");
  std::vector<std::size_t> idx(cols.begin(), cols.end());
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (idx[i] >= m) throw std::out_of_range("pick: column index out of range");
    out[i] = x.at(i * m + idx[i]);
  }
  return make_result(Shape{n}, std::move(out), {&x},
                     [m, idx = std::move(idx)](Node& self) {
                       if (auto* g = grad_sink(self.parents[0]))
                         for (std::size_t i = 0; i < idx.size(); ++i)
                           (*g)[i * m + idx[i]] += self.grad[i];
                     });
}

Tensor gather(const Tensor& x, std::span<const std::size_t> index) {
  require_vector("gather", x);
  std::vector<std::size_t> idx(index.begin(), index.end());
  std::vector<double> out(idx.size());
  for (std::size_t j = 0; j < idx.size(); ++j) {
    if (idx[j] >= x.size()) throw std::out_of_range("gather: index out of range");
    out[j] = x.at(idx[j]);
  }
  const Shape shape{idx.size()};
  return make_result(shape, std::move(out), {&x},
                     [idx = std::move(idx)](Node& self) {
                       if (auto* g = grad_sink(self.parents[0]))
                         for (std::size_t j = 0; j < idx.size(); ++j)
                           (*g)[idx[j]] += self.grad[j];
                     });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> index) {
  require_matrix("gather_rows", x);
  const std::size_t n = x.shape()[0], m = x.shape()[1];
  std::vector<std::size_t> idx(index.begin(), index.end());
  std::vector<double> out(idx.size() * m);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= n) throw std::out_of_range("gather_rows: row out of range");
    std::copy_n(x.data().begin() + idx[r] * m, m, out.begin() + r * m);
  }
  const Shape shape{idx.size(), m};
  return make_result(shape, std::move(out), {&x},
                     [m, idx = std::move(idx)](Node& self) {
                       if (auto* g = grad_sink(self.parents[0]))
                         for (std::size_t r = 0; r < idx.size(); ++r)
                           for (std::size_t j = 0; j < m; ++j)
                             (*g)[idx[r] * m + j] += self.grad[r * m + j];
                     });
}

}  // namespace cretta
