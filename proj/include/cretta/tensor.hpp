#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace cretta {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);

namespace detail {

// One vertex of the define-by-run tape. Non-leaf nodes own a closure that
// reads this node's grad and accumulates into its parents' grads.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;

  bool is_leaf() const { return parents.empty(); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

/// Dense row-major float64 array that participates in reverse-mode
/// differentiation. Copies share storage; use clone() for a deep copy.
class Tensor {
 public:
  Tensor();

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data,
                     bool requires_grad = false);
  static Tensor vector(std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  std::size_t rows() const;
  std::size_t cols() const;
  bool empty() const { return node_->value.empty(); }

  std::span<const double> data() const { return node_->value; }
  /// Writes bypass the tape; only legal on leaves.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t i) const { return node_->value[i]; }
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag);
  bool is_leaf() const { return node_->is_leaf(); }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad();

  /// Reverse pass from a one-element tensor. Leaf grads accumulate across
  /// calls; intermediate grads are recomputed each call.
  void backward() const;

  /// New leaf holding a copy of the values, cut from the tape.
  Tensor detach() const;
  /// Deep copy that keeps requires_grad but drops history and grad.
  Tensor clone() const;

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  // Tape plumbing for op implementations.
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Reverse pass seeded with explicit cotangents for several outputs at once
/// (a vector-Jacobian product). seeds[i] must match outputs[i].size().
void backward_from(std::span<const Tensor> outputs,
                   std::span<const std::vector<double>> seeds);

// ---------------------------------------------------------------------------
// Differentiable ops. Shapes: scalars are {} , vectors {n}, matrices {n, m}.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);

Tensor matmul(const Tensor& a, const Tensor& b);
/// x[n,m] op v[m], broadcast over rows.
Tensor add_row(const Tensor& x, const Tensor& v);
Tensor sub_row(const Tensor& x, const Tensor& v);
Tensor mul_row(const Tensor& x, const Tensor& v);
/// x[n,m] - c[n], broadcast over columns.
Tensor sub_col(const Tensor& x, const Tensor& c);

Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor square(const Tensor& a);
Tensor rsqrt(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor log_sigmoid(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Column means of x[n,m] -> {m}.
Tensor mean_rows(const Tensor& x);
/// Row sums of x[n,m] -> {n}.
Tensor row_sum(const Tensor& x);
/// T * log sum_k exp(x[i,k] / T) per row -> {n}.
Tensor row_logsumexp(const Tensor& x, double temperature = 1.0);
/// out[i] = x[i, cols[i]] for x[n,m] -> {n}.
Tensor pick(const Tensor& x, std::span<const std::size_t> cols);
/// out[j] = x[index[j]] for a vector x.
Tensor gather(const Tensor& x, std::span<const std::size_t> index);
/// Selected rows of x[n,m] -> {index.size(), m}.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> index);

}  // namespace cretta
