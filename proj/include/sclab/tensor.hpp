#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "sclab/common.hpp"

namespace sclab {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense float64 tensor with reverse-mode autodiff. A Tensor is a cheap
// shared handle; the node behind it carries data, an optional gradient and
// the backward closure linking it to its parents. Graphs are independent
// values: separate graphs may be built and evaluated concurrently, a single
// graph is single-threaded.
class Tensor {
 public:
  struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until backprop touches it
    bool requires_grad = false;
    std::vector<Tensor> parents;
    std::function<void(Node&)> backward;  // nullptr on leaves

    double* grad_acc();  // lazily zero-initialized, same size as data
  };

  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> data);
  static Tensor scalar(double value);
  static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->data.size(); }
  std::size_t rank() const { return node_->shape.size(); }

  std::vector<double>& data() { return node_->data; }
  const std::vector<double>& data() const { return node_->data; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool v);

  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<double>& grad() const;
  void zero_grad();

  Node* node() const { return node_.get(); }

  // Internal: used by ops to assemble graph nodes.
  static Tensor make(Shape shape, std::vector<double> data,
                     std::vector<Tensor> parents,
                     std::function<void(Node&)> backward);

 private:
  std::shared_ptr<Node> node_;
};

// Runs reverse-mode accumulation from a scalar root. Every reachable leaf
// with requires_grad ends up holding d(root)/d(leaf); each node's backward
// fires exactly once.
void backprop(const Tensor& root);

// Disables graph recording for the enclosing scope (forward-only eval).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};
bool grad_enabled();

namespace op {

// A (..., k) x B (k, n) -> (..., n); leading axes of A are folded.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);  // rank-2 only

Tensor add(const Tensor& a, const Tensor& b);  // same shape
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double c);
Tensor scale_by(const Tensor& a, const Tensor& s);     // s scalar tensor
Tensor add_scalar(const Tensor& a, const Tensor& s);   // s scalar tensor
Tensor add_bias(const Tensor& x, const Tensor& b);     // b broadcast over rows

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor softplus(const Tensor& a);

// Rowwise ops act on the last axis.
Tensor softmax_rows(const Tensor& a);
Tensor logsumexp_rows(const Tensor& a);  // (..., n) -> (...)
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

Tensor mean_axis(const Tensor& a, std::size_t axis);
Tensor sum_axis(const Tensor& a, std::size_t axis);
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis = 0);
Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count);
Tensor reshape(const Tensor& a, Shape shape);

// table (V, d), ids any nesting -> ids.shape x d
Tensor embedding(const Tensor& table, const std::vector<std::size_t>& ids,
                 Shape ids_shape);
// x (B, s, d), positions (B) -> (B, d)
Tensor select_positions(const Tensor& x, const std::vector<std::size_t>& positions);

// Multi-head scaled dot-product self-attention core. q,k,v are (B, s, d);
// lens, when non-empty, restricts keys of sample b to [0, lens[b]).
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 std::size_t heads, const std::vector<std::size_t>& lens = {});

// Rows scaled to unit Euclidean norm; rank-1 treated as a single row.
// Rows with norm <= eps raise DomainError (degenerate embedding).
Tensor l2_normalize(const Tensor& x, double eps = 1e-12);

Tensor diag(const Tensor& s);  // (n, n) -> (n)

}  // namespace op

// Max relative error between analytic gradients of loss_fn and central
// finite differences over every coordinate of params. loss_fn must rebuild
// its graph from the current parameter values on each call.
double grad_check(const std::function<Tensor()>& loss_fn,
                  const std::vector<Tensor>& params, double h = 1e-5);

// Binary blob format: 16-byte header (magic "TNSR", version u8, rank u8,
// dtype u8 = 0 for float64, 9 pad bytes), rank LE u64 extents, row-major
// LE float64 payload.
void save_tensor(std::ostream& out, const Tensor& t);
Tensor load_tensor(std::istream& in);
void save_tensor_file(const std::string& path, const Tensor& t);
Tensor load_tensor_file(const std::string& path);

}  // namespace sclab
