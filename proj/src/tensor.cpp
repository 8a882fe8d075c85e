#include "sclab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "sclab/kernels.hpp"

namespace sclab {

namespace {

thread_local bool g_grad_enabled = true;

constexpr double kSqrt2 = 1.4142135623730951;
constexpr double kInvSqrt2Pi = 0.3989422804014327;

void require(bool cond, const std::string& what) {
  if (!cond) throw ShapeError(what);
}

}  // namespace

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

double* Tensor::Node::grad_acc() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad.data();
}

Tensor Tensor::zeros(Shape shape) {
  return from(std::move(shape), {});
}

Tensor Tensor::full(Shape shape, double value) {
  std::size_t n = shape_numel(shape);
  Tensor t = from(std::move(shape), std::vector<double>(n, value));
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> data) {
  std::size_t n = shape_numel(shape);
  if (data.empty()) data.assign(n, 0.0);
  if (data.size() != n)
    throw ShapeError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  Tensor t;
  t.node_ = std::make_shared<Node>();
  t.node_->shape = std::move(shape);
  t.node_->data = std::move(data);
  return t;
}

Tensor Tensor::scalar(double value) {
  return from(Shape{}, std::vector<double>{value});
}

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, double stddev) {
  std::size_t n = shape_numel(shape);
  std::vector<double> d(n);
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : d) v = dist(rng);
  return from(std::move(shape), std::move(d));
}

double Tensor::item() const {
  check(size() == 1, "item() requires a scalar tensor, got " + shape_str(shape()));
  return node_->data[0];
}

Tensor& Tensor::set_requires_grad(bool v) {
  node_->requires_grad = v;
  return *this;
}

const std::vector<double>& Tensor::grad() const {
  check(!node_->grad.empty(), "tensor has no gradient (backprop not run?)");
  return node_->grad;
}

void Tensor::zero_grad() {
  node_->grad.clear();
}

Tensor Tensor::make(Shape shape, std::vector<double> data,
                    std::vector<Tensor> parents,
                    std::function<void(Node&)> backward) {
  Tensor t = from(std::move(shape), std::move(data));
  bool track = false;
  if (g_grad_enabled) {
    for (const auto& p : parents)
      if (p.requires_grad()) track = true;
  }
  if (track) {
    t.node_->requires_grad = true;
    t.node_->parents = std::move(parents);
    t.node_->backward = std::move(backward);
  }
  return t;
}

void backprop(const Tensor& root) {
  check(root.size() == 1, "backprop root must be scalar, got " + shape_str(root.shape()));
  check(root.requires_grad(), "backprop root does not depend on any grad-tracked tensor");

  // Iterative post-order DFS; each node appears exactly once.
  std::vector<Tensor::Node*> order;
  std::unordered_set<Tensor::Node*> seen;
  std::vector<std::pair<Tensor::Node*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Tensor::Node* p = node->parents[next++].node();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_acc()[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Tensor::Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

namespace op {

namespace {

// Adds src into the parent's gradient buffer.
void axpy_into(Tensor::Node* n, const std::vector<double>& src) {
  double* g = n->grad_acc();
  for (std::size_t i = 0; i < src.size(); ++i) g[i] += src[i];
}

std::size_t last_dim(const Tensor& t) {
  require(t.rank() >= 1, "op requires rank >= 1");
  return t.shape().back();
}

std::size_t fold_rows(const Tensor& t) {
  return t.size() / last_dim(t);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() >= 2 && b.rank() == 2,
          "matmul: expected A rank>=2 and B rank 2, got " + shape_str(a.shape()) +
              " x " + shape_str(b.shape()));
  const std::size_t k = a.shape().back();
  require(b.shape()[0] == k,
          "matmul: inner extents differ, " + shape_str(a.shape()) + " x " +
              shape_str(b.shape()));
  const std::size_t n = b.shape()[1];
  const std::size_t m = a.size() / k;

  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(n);
  std::vector<double> out(m * n);
  kernels::matmul(a.data().data(), b.data().data(), out.data(), m, k, n);

  return Tensor::make(std::move(out_shape), std::move(out), {a, b},
                      [m, k, n](Tensor::Node& self) {
                        Tensor::Node* pa = self.parents[0].node();
                        Tensor::Node* pb = self.parents[1].node();
                        if (pa->requires_grad) {
                          std::vector<double> da(m * k);
                          kernels::matmul_bt(self.grad.data(), pb->data.data(),
                                             da.data(), m, n, k);
                          axpy_into(pa, da);
                        }
                        if (pb->requires_grad) {
                          kernels::matmul_at_acc(pa->data.data(), self.grad.data(),
                                                 pb->grad_acc(), m, k, n);
                        }
                      });
}

Tensor transpose(const Tensor& a) {
  require(a.rank() == 2, "transpose: rank-2 only, got " + shape_str(a.shape()));
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a.data()[i * c + j];
  return Tensor::make({c, r}, std::move(out), {a}, [r, c](Tensor::Node& self) {
    Tensor::Node* p = self.parents[0].node();
    double* g = p->grad_acc();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
  });
}

namespace {

Tensor binary_same_shape(const Tensor& a, const Tensor& b, const char* name,
                         const std::function<double(double, double)>& f,
                         const std::function<void(Tensor::Node&)>& bw) {
  require(a.shape() == b.shape(), std::string(name) + ": shape mismatch " +
                                      shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a.data()[i], b.data()[i]);
  return Tensor::make(a.shape(), std::move(out), {a, b}, bw);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_same_shape(a, b, "add", [](double x, double y) { return x + y; },
                           [](Tensor::Node& self) {
                             for (int s = 0; s < 2; ++s) {
                               Tensor::Node* p = self.parents[s].node();
                               if (p->requires_grad) axpy_into(p, self.grad);
                             }
                           });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_same_shape(a, b, "sub", [](double x, double y) { return x - y; },
                           [](Tensor::Node& self) {
                             Tensor::Node* pa = self.parents[0].node();
                             Tensor::Node* pb = self.parents[1].node();
                             if (pa->requires_grad) axpy_into(pa, self.grad);
                             if (pb->requires_grad) {
                               double* g = pb->grad_acc();
                               for (std::size_t i = 0; i < self.grad.size(); ++i)
                                 g[i] -= self.grad[i];
                             }
                           });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_same_shape(a, b, "mul", [](double x, double y) { return x * y; },
                           [](Tensor::Node& self) {
                             Tensor::Node* pa = self.parents[0].node();
                             Tensor::Node* pb = self.parents[1].node();
                             if (pa->requires_grad) {
                               double* g = pa->grad_acc();
                               for (std::size_t i = 0; i < self.grad.size(); ++i)
                                 g[i] += self.grad[i] * pb->data[i];
                             }
                             if (pb->requires_grad) {
                               double* g = pb->grad_acc();
                               for (std::size_t i = 0; i < self.grad.size(); ++i)
                                 g[i] += self.grad[i] * pa->data[i];
                             }
                           });
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
  return Tensor::make(a.shape(), std::move(out), {a}, [c](Tensor::Node& self) {
    Tensor::Node* p = self.parents[0].node();
    double* g = p->grad_acc();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * c;
  });
}

Tensor scale_by(const Tensor& a, const Tensor& s) {
  require(s.size() == 1, "scale_by: scalar expected, got " + shape_str(s.shape()));
  const double c = s.data()[0];
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
  return Tensor::make(a.shape(), std::move(out), {a, s}, [c](Tensor::Node& self) {
    Tensor::Node* pa = self.parents[0].node();
    Tensor::Node* ps = self.parents[1].node();
    if (pa->requires_grad) {
      double* g = pa->grad_acc();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * c;
    }
    if (ps->requires_grad) {
      double acc = 0.0;
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        acc += self.grad[i] * pa->data[i];
      ps->grad_acc()[0] += acc;
    }
  });
}

Tensor add_scalar(const Tensor& a, const Tensor& s) {
  require(s.size() == 1, "add_scalar: scalar expected");
  const double c = s.data()[0];
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + c;
  return Tensor::make(a.shape(), std::move(out), {a, s}, [](Tensor::Node& self) {
    Tensor::Node* pa = self.parents[0].node();
    Tensor::Node* ps = self.parents[1].node();
    if (pa->requires_grad) axpy_into(pa, self.grad);
    if (ps->requires_grad) {
      double acc = 0.0;
      for (double g : self.grad) acc += g;
      ps->grad_acc()[0] += acc;
    }
  });
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
  const std::size_t n = b.size();
  require(n >= 1 && x.size() % n == 0,
          "add_bias: bias size " + std::to_string(n) + " does not divide " +
              shape_str(x.shape()));
  const std::size_t rows = x.size() / n;
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j)
      out[r * n + j] = x.data()[r * n + j] + b.data()[j];
  return Tensor::make(x.shape(), std::move(out), {x, b},
                      [rows, n](Tensor::Node& self) {
                        Tensor::Node* px = self.parents[0].node();
                        Tensor::Node* pb = self.parents[1].node();
                        if (px->requires_grad) axpy_into(px, self.grad);
                        if (pb->requires_grad) {
                          double* g = pb->grad_acc();
                          for (std::size_t r = 0; r < rows; ++r)
                            for (std::size_t j = 0; j < n; ++j)
                              g[j] += self.grad[r * n + j];
                        }
                      });
}

Tensor exp(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.data()[i]);
  return Tensor::make(a.shape(), std::move(out), {a}, [](Tensor::Node& self) {
    Tensor::Node* p = self.parents[0].node();
    double* g = p->grad_acc();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      g[i] += self.grad[i] * self.data[i];
  });
}

Tensor log(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (a.data()[i] <= 0.0)
      throw DomainError("log: non-positive input " + std::to_string(a.data()[i]));
    out[i] = std::log(a.data()[i]);
  }
  return Tensor::make(a.shape(), std::move(out), {a}, [](Tensor::Node& self) {
    Tensor::Node* p = self.parents[0].node();
    double* g = p->grad_acc();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      g[i] += self.grad[i] / p->data[i];
  });
}

Tensor gelu(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a.data()[i];
    out[i] = 0.5 * x * (1.0 + std::erf(x / kSqrt2));
  }
  return Tensor::make(a.shape(), std::move(out), {a}, [](Tensor::Node& self) {
    Tensor::Node* p = self.parents[0].node();
    double* g = p->grad_acc();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double x = p->data[i];
      const double cdf = 0.5 * (1.0 + std::erf(x / kSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
      g[i] += self.grad[i] * (cdf + x * pdf);
    }
  });
}

Tensor softplus(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a.data()[i];
    out[i] = x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  }
  return Tensor::make(a.shape(), std::move(out), {a}, [](Tensor::Node& self) {
    Tensor::Node* p = self.parents[0].node();
    double* g = p->grad_acc();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double x = p->data[i];
      const double sig = x > 0 ? 1.0 / (1.0 + std::exp(-x))
                               : std::exp(x) / (1.0 + std::exp(x));
      g[i] += self.grad[i] * sig;
    }
  });
}

Tensor softmax_rows(const Tensor& a) {
  const std::size_t n = last_dim(a);
  const std::size_t rows = fold_rows(a);
  std::vector<double> out(a.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = a.data().data() + r * n;
    double* y = out.data() + r * n;
    double mx = x[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < n; ++j) y[j] /= z;
  }
  return Tensor::make(a.shape(), std::move(out), {a},
                      [rows, n](Tensor::Node& self) {
                        Tensor::Node* p = self.parents[0].node();
                        double* g = p->grad_acc();
                        for (std::size_t r = 0; r < rows; ++r) {
                          const double* y = self.data.data() + r * n;
                          const double* dy = self.grad.data() + r * n;
                          double dot = 0.0;
                          for (std::size_t j = 0; j < n; ++j) dot += y[j] * dy[j];
                          for (std::size_t j = 0; j < n; ++j)
                            g[r * n + j] += y[j] * (dy[j] - dot);
                        }
                      });
}

Tensor logsumexp_rows(const Tensor& a) {
  const std::size_t n = last_dim(a);
  const std::size_t rows = fold_rows(a);
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = a.data().data() + r * n;
    double mx = x[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(x[j] - mx);
    out[r] = mx + std::log(z);
  }
  return Tensor::make(std::move(out_shape), std::move(out), {a},
                      [rows, n](Tensor::Node& self) {
                        Tensor::Node* p = self.parents[0].node();
                        double* g = p->grad_acc();
                        for (std::size_t r = 0; r < rows; ++r) {
                          const double lse = self.data[r];
                          const double dy = self.grad[r];
                          for (std::size_t j = 0; j < n; ++j)
                            g[r * n + j] += dy * std::exp(p->data[r * n + j] - lse);
                        }
                      });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  const std::size_t n = last_dim(x);
  require(gain.size() == n && bias.size() == n,
          "layer_norm: gain/bias size must equal last extent " + std::to_string(n));
  const std::size_t rows = fold_rows(x);
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += xr[j];
    mu /= n;
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j)
      out[r * n + j] = (xr[j] - mu) * inv * gain.data()[j] + bias.data()[j];
  }
  return Tensor::make(
      x.shape(), std::move(out), {x, gain, bias},
      [rows, n, eps](Tensor::Node& self) {
        Tensor::Node* px = self.parents[0].node();
        Tensor::Node* pg = self.parents[1].node();
        Tensor::Node* pb = self.parents[2].node();
        for (std::size_t r = 0; r < rows; ++r) {
          const double* xr = px->data.data() + r * n;
          const double* dy = self.grad.data() + r * n;
          double mu = 0.0;
          for (std::size_t j = 0; j < n; ++j) mu += xr[j];
          mu /= n;
          double var = 0.0;
          for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
          var /= n;
          const double inv = 1.0 / std::sqrt(var + eps);
          if (pg->requires_grad || pb->requires_grad) {
            double* gg = pg->grad_acc();
            double* gb = pb->grad_acc();
            for (std::size_t j = 0; j < n; ++j) {
              gg[j] += dy[j] * (xr[j] - mu) * inv;
              gb[j] += dy[j];
            }
          }
          if (px->requires_grad) {
            double* gx = px->grad_acc() + r * n;
            // dx = inv * (gdy - mean(gdy) - xhat * mean(gdy * xhat))
            double m1 = 0.0, m2 = 0.0;
            std::vector<double> gdy(n);
            for (std::size_t j = 0; j < n; ++j) {
              gdy[j] = dy[j] * pg->data[j];
              const double xh = (xr[j] - mu) * inv;
              m1 += gdy[j];
              m2 += gdy[j] * xh;
            }
            m1 /= n;
            m2 /= n;
            for (std::size_t j = 0; j < n; ++j) {
              const double xh = (xr[j] - mu) * inv;
              gx[j] += inv * (gdy[j] - m1 - xh * m2);
            }
          }
        }
      });
}

namespace {

void axis_extents(const Tensor& a, std::size_t axis, std::size_t& outer,
                  std::size_t& len, std::size_t& inner) {
  require(axis < a.rank(), "axis " + std::to_string(axis) + " out of range for " +
                               shape_str(a.shape()));
  outer = 1;
  inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= a.shape()[i];
  len = a.shape()[axis];
  for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.shape()[i];
}

Tensor reduce_axis(const Tensor& a, std::size_t axis, bool mean) {
  std::size_t outer, len, inner;
  axis_extents(a, axis, outer, len, inner);
  Shape out_shape;
  for (std::size_t i = 0; i < a.rank(); ++i)
    if (i != axis) out_shape.push_back(a.shape()[i]);
  std::vector<double> out(outer * inner, 0.0);
  const double w = mean ? 1.0 / static_cast<double>(len) : 1.0;
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t t = 0; t < len; ++t)
      for (std::size_t i = 0; i < inner; ++i)
        out[o * inner + i] += a.data()[(o * len + t) * inner + i] * w;
  return Tensor::make(std::move(out_shape), std::move(out), {a},
                      [outer, len, inner, w](Tensor::Node& self) {
                        Tensor::Node* p = self.parents[0].node();
                        double* g = p->grad_acc();
                        for (std::size_t o = 0; o < outer; ++o)
                          for (std::size_t t = 0; t < len; ++t)
                            for (std::size_t i = 0; i < inner; ++i)
                              g[(o * len + t) * inner + i] +=
                                  self.grad[o * inner + i] * w;
                      });
}

}  // namespace

Tensor mean_axis(const Tensor& a, std::size_t axis) { return reduce_axis(a, axis, true); }
Tensor sum_axis(const Tensor& a, std::size_t axis) { return reduce_axis(a, axis, false); }

Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return Tensor::make(Shape{}, {s}, {a}, [](Tensor::Node& self) {
    Tensor::Node* p = self.parents[0].node();
    double* g = p->grad_acc();
    const double dy = self.grad[0];
    for (std::size_t i = 0; i < p->data.size(); ++i) g[i] += dy;
  });
}

Tensor mean_all(const Tensor& a) {
  return scale(sum_all(a), 1.0 / static_cast<double>(a.size()));
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  check(!parts.empty(), "concat: no inputs");
  const Shape& ref = parts[0].shape();
  std::size_t total = 0;
  for (const auto& p : parts) {
    require(p.rank() == ref.size(), "concat: rank mismatch");
    for (std::size_t i = 0; i < ref.size(); ++i)
      require(i == axis || p.shape()[i] == ref[i],
              "concat: extent mismatch off the concat axis");
    total += p.shape()[axis];
  }
  Shape out_shape = ref;
  out_shape[axis] = total;

  std::size_t outer, len0, inner;
  axis_extents(parts[0], axis, outer, len0, inner);
  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;  // start along axis per part
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t len = p.shape()[axis];
    for (std::size_t o = 0; o < outer; ++o)
      std::memcpy(out.data() + (o * total + off) * inner,
                  p.data().data() + o * len * inner,
                  len * inner * sizeof(double));
    off += len;
  }
  return Tensor::make(std::move(out_shape), std::move(out), parts,
                      [outer, inner, total, offsets](Tensor::Node& self) {
                        // Each part's axis extent is recovered from its size.
                        for (std::size_t s = 0; s < self.parents.size(); ++s) {
                          Tensor::Node* p = self.parents[s].node();
                          if (!p->requires_grad) continue;
                          const std::size_t len = p->data.size() / (outer * inner);
                          double* g = p->grad_acc();
                          for (std::size_t o = 0; o < outer; ++o)
                            for (std::size_t t = 0; t < len * inner; ++t)
                              g[o * len * inner + t] +=
                                  self.grad[(o * total + offsets[s]) * inner + t];
                        }
                      });
}

Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count) {
  require(a.rank() >= 1 && start + count <= a.shape()[0],
          "slice_rows: range [" + std::to_string(start) + "," +
              std::to_string(start + count) + ") exceeds extent " +
              std::to_string(a.shape()[0]));
  const std::size_t inner = a.size() / a.shape()[0];
  Shape out_shape = a.shape();
  out_shape[0] = count;
  std::vector<double> out(count * inner);
  std::memcpy(out.data(), a.data().data() + start * inner,
              count * inner * sizeof(double));
  return Tensor::make(std::move(out_shape), std::move(out), {a},
                      [start, count, inner](Tensor::Node& self) {
                        Tensor::Node* p = self.parents[0].node();
                        double* g = p->grad_acc();
                        for (std::size_t i = 0; i < count * inner; ++i)
                          g[start * inner + i] += self.grad[i];
                      });
}

Tensor reshape(const Tensor& a, Shape shape) {
  require(shape_numel(shape) == a.size(),
          "reshape: element count mismatch " + shape_str(a.shape()) + " -> " +
              shape_str(shape));
  std::vector<double> out = a.data();
  return Tensor::make(std::move(shape), std::move(out), {a},
                      [](Tensor::Node& self) {
                        axpy_into(self.parents[0].node(), self.grad);
                      });
}

Tensor embedding(const Tensor& table, const std::vector<std::size_t>& ids,
                 Shape ids_shape) {
  require(table.rank() == 2, "embedding: table must be rank 2");
  require(shape_numel(ids_shape) == ids.size(), "embedding: ids shape mismatch");
  const std::size_t v = table.shape()[0], d = table.shape()[1];
  for (std::size_t id : ids)
    require(id < v, "embedding: id " + std::to_string(id) + " out of range " +
                        std::to_string(v));
  Shape out_shape = std::move(ids_shape);
  out_shape.push_back(d);
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::memcpy(out.data() + i * d, table.data().data() + ids[i] * d,
                d * sizeof(double));
  return Tensor::make(std::move(out_shape), std::move(out), {table},
                      [ids, d](Tensor::Node& self) {
                        Tensor::Node* p = self.parents[0].node();
                        double* g = p->grad_acc();
                        for (std::size_t i = 0; i < ids.size(); ++i)
                          for (std::size_t j = 0; j < d; ++j)
                            g[ids[i] * d + j] += self.grad[i * d + j];
                      });
}

Tensor select_positions(const Tensor& x,
                        const std::vector<std::size_t>& positions) {
  require(x.rank() == 3, "select_positions: (B,s,d) expected");
  const std::size_t b = x.shape()[0], s = x.shape()[1], d = x.shape()[2];
  require(positions.size() == b, "select_positions: one position per sample");
  for (std::size_t p : positions)
    require(p < s, "select_positions: position out of range");
  std::vector<double> out(b * d);
  for (std::size_t i = 0; i < b; ++i)
    std::memcpy(out.data() + i * d,
                x.data().data() + (i * s + positions[i]) * d, d * sizeof(double));
  return Tensor::make({b, d}, std::move(out), {x},
                      [positions, s, d](Tensor::Node& self) {
                        Tensor::Node* p = self.parents[0].node();
                        double* g = p->grad_acc();
                        for (std::size_t i = 0; i < positions.size(); ++i)
                          for (std::size_t j = 0; j < d; ++j)
                            g[(i * s + positions[i]) * d + j] +=
                                self.grad[i * d + j];
                      });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 std::size_t heads, const std::vector<std::size_t>& lens) {
  require(q.rank() == 3 && q.shape() == k.shape() && q.shape() == v.shape(),
          "attention: q,k,v must share shape (B,s,d)");
  const std::size_t B = q.shape()[0], s = q.shape()[1], d = q.shape()[2];
  require(heads >= 1 && d % heads == 0, "attention: width not divisible by heads");
  require(lens.empty() || lens.size() == B, "attention: lens must have B entries");
  for (std::size_t l : lens)
    require(l >= 1 && l <= s, "attention: invalid key length");
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  // Attention probabilities are kept for the backward pass.
  auto probs = std::make_shared<std::vector<double>>(B * heads * s * s, 0.0);
  std::vector<double> out(B * s * d, 0.0);

#pragma omp parallel for schedule(static)
  for (long long bb = 0; bb < static_cast<long long>(B); ++bb) {
    const std::size_t b = static_cast<std::size_t>(bb);
    const std::size_t valid = lens.empty() ? s : lens[b];
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t c0 = h * dh;
      double* pr = probs->data() + ((b * heads) + h) * s * s;
      for (std::size_t i = 0; i < s; ++i) {
        double* row = pr + i * s;
        double mx = -1e300;
        for (std::size_t j = 0; j < valid; ++j) {
          double sc = 0.0;
          for (std::size_t c = 0; c < dh; ++c)
            sc += q.data()[(b * s + i) * d + c0 + c] *
                  k.data()[(b * s + j) * d + c0 + c];
          row[j] = sc * inv_sqrt;
          mx = std::max(mx, row[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < valid; ++j) z += (row[j] = std::exp(row[j] - mx));
        for (std::size_t j = 0; j < valid; ++j) row[j] /= z;
        for (std::size_t c = 0; c < dh; ++c) {
          double acc = 0.0;
          for (std::size_t j = 0; j < valid; ++j)
            acc += row[j] * v.data()[(b * s + j) * d + c0 + c];
          out[(b * s + i) * d + c0 + c] = acc;
        }
      }
    }
  }

  return Tensor::make(
      q.shape(), std::move(out), {q, k, v},
      [B, s, d, heads, dh, inv_sqrt, lens, probs](Tensor::Node& self) {
        Tensor::Node* pq = self.parents[0].node();
        Tensor::Node* pk = self.parents[1].node();
        Tensor::Node* pv = self.parents[2].node();
        double* gq = pq->requires_grad ? pq->grad_acc() : nullptr;
        double* gk = pk->requires_grad ? pk->grad_acc() : nullptr;
        double* gv = pv->requires_grad ? pv->grad_acc() : nullptr;
#pragma omp parallel for schedule(static)
        for (long long bb = 0; bb < static_cast<long long>(B); ++bb) {
          const std::size_t b = static_cast<std::size_t>(bb);
          const std::size_t valid = lens.empty() ? s : lens[b];
          std::vector<double> da(s), dz(s);
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t c0 = h * dh;
            const double* pr = probs->data() + ((b * heads) + h) * s * s;
            for (std::size_t i = 0; i < s; ++i) {
              const double* row = pr + i * s;
              // dA = dO V^T restricted to the head slice
              double dot = 0.0;
              for (std::size_t j = 0; j < valid; ++j) {
                double acc = 0.0;
                for (std::size_t c = 0; c < dh; ++c)
                  acc += self.grad[(b * s + i) * d + c0 + c] *
                         pv->data[(b * s + j) * d + c0 + c];
                da[j] = acc;
                dot += acc * row[j];
              }
              for (std::size_t j = 0; j < valid; ++j)
                dz[j] = row[j] * (da[j] - dot) * inv_sqrt;
              if (gv) {
                for (std::size_t j = 0; j < valid; ++j) {
                  const double a = row[j];
                  for (std::size_t c = 0; c < dh; ++c)
                    gv[(b * s + j) * d + c0 + c] +=
                        a * self.grad[(b * s + i) * d + c0 + c];
                }
              }
              if (gq) {
                for (std::size_t c = 0; c < dh; ++c) {
                  double acc = 0.0;
                  for (std::size_t j = 0; j < valid; ++j)
                    acc += dz[j] * pk->data[(b * s + j) * d + c0 + c];
                  gq[(b * s + i) * d + c0 + c] += acc;
                }
              }
              if (gk) {
                for (std::size_t j = 0; j < valid; ++j) {
                  const double z = dz[j];
                  for (std::size_t c = 0; c < dh; ++c)
                    gk[(b * s + j) * d + c0 + c] +=
                        z * pq->data[(b * s + i) * d + c0 + c];
                }
              }
            }
          }
        }
      });
}

Tensor l2_normalize(const Tensor& x, double eps) {
  require(x.rank() >= 1, "l2_normalize: rank >= 1 required");
  const std::size_t n = last_dim(x);
  const std::size_t rows = fold_rows(x);
  std::vector<double> out(x.size());
  std::vector<double> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * n;
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += xr[j] * xr[j];
    const double nrm = std::sqrt(s);
    if (nrm <= eps)
      throw DomainError("l2_normalize: degenerate row " + std::to_string(r) +
                        " with norm " + std::to_string(nrm));
    norms[r] = nrm;
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = xr[j] / nrm;
  }
  return Tensor::make(x.shape(), std::move(out), {x},
                      [rows, n, norms](Tensor::Node& self) {
                        Tensor::Node* p = self.parents[0].node();
                        double* g = p->grad_acc();
                        for (std::size_t r = 0; r < rows; ++r) {
                          const double* y = self.data.data() + r * n;
                          const double* dy = self.grad.data() + r * n;
                          double dot = 0.0;
                          for (std::size_t j = 0; j < n; ++j) dot += y[j] * dy[j];
                          for (std::size_t j = 0; j < n; ++j)
                            g[r * n + j] += (dy[j] - y[j] * dot) / norms[r];
                        }
                      });
}

Tensor diag(const Tensor& s) {
  require(s.rank() == 2 && s.shape()[0] == s.shape()[1],
          "diag: square matrix expected, got " + shape_str(s.shape()));
  const std::size_t n = s.shape()[0];
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = s.data()[i * n + i];
  return Tensor::make({n}, std::move(out), {s}, [n](Tensor::Node& self) {
    Tensor::Node* p = self.parents[0].node();
    double* g = p->grad_acc();
    for (std::size_t i = 0; i < n; ++i) g[i * n + i] += self.grad[i];
  });
}

}  // namespace op

double grad_check(const std::function<Tensor()>& loss_fn,
                  const std::vector<Tensor>& params, double h) {
  check(h >= 1e-6 && h <= 1e-4, "grad_check: h must lie in [1e-6, 1e-4]");

  for (const auto& p : params) const_cast<Tensor&>(p).zero_grad();
  Tensor loss = loss_fn();
  if (!std::isfinite(loss.item()))
    throw DomainError("grad_check: non-finite loss");
  backprop(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params)
    analytic.push_back(p.has_grad() ? p.grad()
                                    : std::vector<double>(p.size(), 0.0));

  double max_rel = 0.0;
  // Central differences carry roundoff ~ eps*|L|/h, so the relative-error
  // floor must scale with the loss magnitude or structurally-zero gradients
  // drown in noise.
  const double floor = 1e-6 * std::max(1.0, std::fabs(loss.item()));
  NoGradGuard no_grad;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor p = params[pi];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double x0 = p.data()[i];
      p.data()[i] = x0 + h;
      const double lp = loss_fn().item();
      p.data()[i] = x0 - h;
      const double lm = loss_fn().item();
      p.data()[i] = x0;
      if (!std::isfinite(lp) || !std::isfinite(lm))
        throw DomainError("grad_check: non-finite perturbed loss");
      const double fd = (lp - lm) / (2.0 * h);
      const double a = analytic[pi][i];
      const double denom = std::max({std::fabs(a), std::fabs(fd), floor});
      max_rel = std::max(max_rel, std::fabs(a - fd) / denom);
    }
  }
  return max_rel;
}

namespace {

template <typename T>
void write_raw(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("tensor blob: truncated read");
  return v;
}

}  // namespace

void save_tensor(std::ostream& out, const Tensor& t) {
  out.write("TNSR", 4);
  write_raw<std::uint8_t>(out, 1);                               // version
  write_raw<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
  write_raw<std::uint8_t>(out, 0);                               // dtype f64
  const char pad[9] = {};
  out.write(pad, 9);
  for (std::size_t e : t.shape()) write_raw<std::uint64_t>(out, e);
  out.write(reinterpret_cast<const char*>(t.data().data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!out) throw IoError("tensor blob: write failed");
}

Tensor load_tensor(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "TNSR", 4) != 0)
    throw IoError("tensor blob: bad magic");
  const auto version = read_raw<std::uint8_t>(in);
  if (version != 1) throw IoError("tensor blob: unsupported version");
  const auto rank = read_raw<std::uint8_t>(in);
  const auto dtype = read_raw<std::uint8_t>(in);
  if (dtype != 0) throw IoError("tensor blob: unsupported dtype");
  char pad[9];
  in.read(pad, 9);
  Shape shape(rank);
  for (auto& e : shape) e = read_raw<std::uint64_t>(in);
  std::vector<double> data(shape_numel(shape));
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (!in) throw IoError("tensor blob: truncated payload");
  return Tensor::from(std::move(shape), std::move(data));
}

void save_tensor_file(const std::string& path, const Tensor& t) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for write: " + path);
  save_tensor(f, t);
}

Tensor load_tensor_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for read: " + path);
  return load_tensor(f);
}

}  // namespace sclab
