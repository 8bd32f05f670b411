#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "ust/errors.hpp"
#include "ust/rng.hpp"

namespace ust {

using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {
inline uint64_t next_node_id() {
  static std::atomic<uint64_t> counter{0};
  return ++counter;
}
}  // namespace detail

// One recorded value in the computation graph. `backward` reads this node's
// grad and accumulates the vector-Jacobian product into its parents' grads.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  uint64_t id = 0;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

// Value-semantic handle onto a graph node. Copies share the node.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : n_(std::make_shared<Node>()) {
    n_->shape = std::move(shape);
    n_->value.assign(numel(n_->shape), fill);
    n_->id = detail::next_node_id();
  }

  Tensor(Shape shape, std::vector<double> data) : n_(std::make_shared<Node>()) {
    if (numel(shape) != static_cast<int64_t>(data.size()))
      throw DimensionError("tensor data size " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
    n_->shape = std::move(shape);
    n_->value = std::move(data);
    n_->id = detail::next_node_id();
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.n_->value) v = rng.normal(0.0, stddev);
    return t;
  }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int rank() const { return static_cast<int>(n_->shape.size()); }
  int64_t dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }
  int64_t size() const { return static_cast<int64_t>(n_->value.size()); }

  double* data() { return n_->value.data(); }
  const double* data() const { return n_->value.data(); }
  std::vector<double>& values() { return n_->value; }
  const std::vector<double>& values() const { return n_->value; }

  double& at(int64_t i) { return n_->value[static_cast<size_t>(i)]; }
  double at(int64_t i) const { return n_->value[static_cast<size_t>(i)]; }
  double& at(int64_t i, int64_t j) {
    return n_->value[static_cast<size_t>(i * dim(1) + j)];
  }
  double at(int64_t i, int64_t j) const {
    return n_->value[static_cast<size_t>(i * dim(1) + j)];
  }

  double item() const {
    if (size() != 1) throw ContractError("item() needs a scalar, got " + shape_str(shape()));
    return n_->value[0];
  }

  Tensor& set_requires_grad(bool flag = true) {
    n_->requires_grad = flag;
    if (flag) n_->ensure_grad();
    return *this;
  }
  bool requires_grad() const { return n_->requires_grad; }

  const std::vector<double>& grad() const {
    if (n_->grad.size() != n_->value.size())
      throw ContractError("tensor has no gradient buffer");
    return n_->grad;
  }
  std::vector<double>& grad_mut() {
    n_->ensure_grad();
    return n_->grad;
  }
  void zero_grad() {
    if (n_->requires_grad) {
      n_->ensure_grad();
      std::fill(n_->grad.begin(), n_->grad.end(), 0.0);
    }
  }

  // Same values, fresh leaf node with no history.
  Tensor detach() const { return Tensor(n_->shape, n_->value); }

  std::shared_ptr<Node> node() const { return n_; }

 private:
  std::shared_ptr<Node> n_;
};

namespace detail {

inline Tensor make_op(const char* op, Shape shape, std::vector<double> value,
                      std::vector<Tensor> inputs,
                      std::function<void(Node&)> backward) {
  Tensor out(std::move(shape), std::move(value));
  Node& n = *out.node();
  n.op = op;
  bool needs = false;
  for (const Tensor& t : inputs) needs = needs || t.node()->requires_grad;
  if (needs) {
    n.requires_grad = true;
    for (const Tensor& t : inputs) {
      t.node()->ensure_grad();
      n.parents.push_back(t.node());
    }
    n.backward = std::move(backward);
  }
  return out;
}

inline void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace detail

// The ordered record of one differentiable computation: every node of the
// reachable subgraph, inputs strictly before the nodes that consume them.
class Tape {
 public:
  static Tape from(const Tensor& root) {
    Tape tape;
    std::unordered_set<Node*> seen;
    std::vector<std::shared_ptr<Node>> stack{root.node()};
    while (!stack.empty()) {
      auto n = stack.back();
      stack.pop_back();
      if (!n->requires_grad || !seen.insert(n.get()).second) continue;
      tape.nodes_.push_back(n);
      for (auto& p : n->parents) stack.push_back(p);
    }
    std::sort(tape.nodes_.begin(), tape.nodes_.end(),
              [](const auto& a, const auto& b) { return a->id < b->id; });
    return tape;
  }

  const std::vector<std::shared_ptr<Node>>& nodes() const { return nodes_; }

 private:
  std::vector<std::shared_ptr<Node>> nodes_;
};

// Reverse sweep from a scalar loss. Leaf grads accumulate across repeated
// calls; intermediate grads are transient and reset per sweep.
inline void backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw ContractError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
  if (!loss.node()->requires_grad) return;
  Tape tape = Tape::from(loss);
  for (const auto& n : tape.nodes())
    if (n->backward) {
      n->ensure_grad();
      std::fill(n->grad.begin(), n->grad.end(), 0.0);
    }
  loss.node()->ensure_grad();
  loss.node()->grad[0] = 1.0;
  const auto& nodes = tape.nodes();
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    Node& n = **it;
    if (n.backward) n.backward(n);
  }
}

// ---------------------------------------------------------------------------
// Elementwise primitives
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape("add", a, b);
  std::vector<double> v(a.values());
  for (int64_t i = 0; i < a.size(); ++i) v[i] += b.at(i);
  return detail::make_op("add", a.shape(), std::move(v), {a, b}, [](Node& n) {
    Node& pa = *n.parents[0];
    Node& pb = *n.parents[1];
    for (size_t i = 0; i < n.grad.size(); ++i) {
      if (pa.requires_grad) pa.grad[i] += n.grad[i];
      if (pb.requires_grad) pb.grad[i] += n.grad[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape("sub", a, b);
  std::vector<double> v(a.values());
  for (int64_t i = 0; i < a.size(); ++i) v[i] -= b.at(i);
  return detail::make_op("sub", a.shape(), std::move(v), {a, b}, [](Node& n) {
    Node& pa = *n.parents[0];
    Node& pb = *n.parents[1];
    for (size_t i = 0; i < n.grad.size(); ++i) {
      if (pa.requires_grad) pa.grad[i] += n.grad[i];
      if (pb.requires_grad) pb.grad[i] -= n.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape("mul", a, b);
  std::vector<double> v(a.values());
  for (int64_t i = 0; i < a.size(); ++i) v[i] *= b.at(i);
  return detail::make_op("mul", a.shape(), std::move(v), {a, b}, [](Node& n) {
    Node& pa = *n.parents[0];
    Node& pb = *n.parents[1];
    for (size_t i = 0; i < n.grad.size(); ++i) {
      if (pa.requires_grad) pa.grad[i] += n.grad[i] * pb.value[i];
      if (pb.requires_grad) pb.grad[i] += n.grad[i] * pa.value[i];
    }
  });
}

inline Tensor neg(const Tensor& a) {
  std::vector<double> v(a.values());
  for (double& x : v) x = -x;
  return detail::make_op("neg", a.shape(), std::move(v), {a}, [](Node& n) {
    Node& pa = *n.parents[0];
    for (size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] -= n.grad[i];
  });
}

inline Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> v(a.values());
  for (double& x : v) x += c;
  return detail::make_op("add_scalar", a.shape(), std::move(v), {a}, [](Node& n) {
    Node& pa = *n.parents[0];
    for (size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i];
  });
}

inline Tensor mul_scalar(const Tensor& a, double c) {
  std::vector<double> v(a.values());
  for (double& x : v) x *= c;
  return detail::make_op("mul_scalar", a.shape(), std::move(v), {a}, [c](Node& n) {
    Node& pa = *n.parents[0];
    for (size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += c * n.grad[i];
  });
}

inline Tensor relu(const Tensor& a) {
  std::vector<double> v(a.values());
  for (double& x : v) x = x > 0.0 ? x : 0.0;
  // Subgradient 0 at the kink.
  return detail::make_op("relu", a.shape(), std::move(v), {a}, [](Node& n) {
    Node& pa = *n.parents[0];
    for (size_t i = 0; i < n.grad.size(); ++i)
      if (pa.value[i] > 0.0) pa.grad[i] += n.grad[i];
  });
}

inline Tensor gelu(const Tensor& a) {
  std::vector<double> v(a.values());
  for (double& x : v) x = 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
  return detail::make_op("gelu", a.shape(), std::move(v), {a}, [](Node& n) {
    Node& pa = *n.parents[0];
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    for (size_t i = 0; i < n.grad.size(); ++i) {
      double x = pa.value[i];
      double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
      double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
      pa.grad[i] += n.grad[i] * (cdf + x * pdf);
    }
  });
}

inline Tensor exp(const Tensor& a) {
  std::vector<double> v(a.values());
  for (double& x : v) x = std::exp(x);
  return detail::make_op("exp", a.shape(), std::move(v), {a}, [](Node& n) {
    Node& pa = *n.parents[0];
    for (size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i] * n.value[i];
  });
}

inline Tensor log(const Tensor& a) {
  std::vector<double> v(a.values());
  for (double& x : v) x = std::log(x);
  return detail::make_op("log", a.shape(), std::move(v), {a}, [](Node& n) {
    Node& pa = *n.parents[0];
    for (size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i] / pa.value[i];
  });
}

inline Tensor sigmoid(const Tensor& a) {
  std::vector<double> v(a.values());
  for (double& x : v) x = 1.0 / (1.0 + std::exp(-x));
  return detail::make_op("sigmoid", a.shape(), std::move(v), {a}, [](Node& n) {
    Node& pa = *n.parents[0];
    for (size_t i = 0; i < n.grad.size(); ++i) {
      double y = n.value[i];
      pa.grad[i] += n.grad[i] * y * (1.0 - y);
    }
  });
}

inline Tensor softplus(const Tensor& a) {
  std::vector<double> v(a.values());
  for (double& x : v) x = x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  return detail::make_op("softplus", a.shape(), std::move(v), {a}, [](Node& n) {
    Node& pa = *n.parents[0];
    for (size_t i = 0; i < n.grad.size(); ++i) {
      double x = pa.value[i];
      pa.grad[i] += n.grad[i] / (1.0 + std::exp(-x));
    }
  });
}

inline Tensor abs(const Tensor& a) {
  std::vector<double> v(a.values());
  for (double& x : v) x = std::fabs(x);
  // Subgradient 0 at the kink.
  return detail::make_op("abs", a.shape(), std::move(v), {a}, [](Node& n) {
    Node& pa = *n.parents[0];
    for (size_t i = 0; i < n.grad.size(); ++i) {
      double x = pa.value[i];
      if (x > 0.0)
        pa.grad[i] += n.grad[i];
      else if (x < 0.0)
        pa.grad[i] -= n.grad[i];
    }
  });
}

// p * ln(p) with the 0 * ln(0) := 0 convention.
inline Tensor xlogx(const Tensor& a) {
  std::vector<double> v(a.values());
  for (double& x : v) x = x == 0.0 ? 0.0 : x * std::log(x);
  return detail::make_op("xlogx", a.shape(), std::move(v), {a}, [](Node& n) {
    Node& pa = *n.parents[0];
    for (size_t i = 0; i < n.grad.size(); ++i) {
      double p = pa.value[i];
      if (p > 0.0) pa.grad[i] += n.grad[i] * (std::log(p) + 1.0);
    }
  });
}

// Elementwise log(exp(a) + exp(b)), stable, tolerant of -inf entries.
inline Tensor logaddexp(const Tensor& a, const Tensor& b) {
  detail::check_same_shape("logaddexp", a, b);
  std::vector<double> v(a.size());
  for (int64_t i = 0; i < a.size(); ++i) {
    double x = a.at(i), y = b.at(i);
    double m = std::max(x, y);
    v[i] = std::isinf(m) && m < 0 ? m : m + std::log(std::exp(x - m) + std::exp(y - m));
  }
  return detail::make_op("logaddexp", a.shape(), std::move(v), {a, b}, [](Node& n) {
    Node& pa = *n.parents[0];
    Node& pb = *n.parents[1];
    for (size_t i = 0; i < n.grad.size(); ++i) {
      double out = n.value[i];
      if (std::isinf(out) && out < 0) continue;
      if (pa.requires_grad) pa.grad[i] += n.grad[i] * std::exp(pa.value[i] - out);
      if (pb.requires_grad) pb.grad[i] += n.grad[i] * std::exp(pb.value[i] - out);
    }
  });
}

// ---------------------------------------------------------------------------
// Broadcast helpers for 2-D tensors
// ---------------------------------------------------------------------------

inline Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  if (x.rank() != 2 || v.rank() != 1 || x.dim(1) != v.dim(0))
    throw DimensionError("add_rowvec: " + shape_str(x.shape()) + " vs " + shape_str(v.shape()));
  int64_t rows = x.dim(0), cols = x.dim(1);
  std::vector<double> out(x.values());
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < cols; ++j) out[i * cols + j] += v.at(j);
  return detail::make_op("add_rowvec", x.shape(), std::move(out), {x, v},
                         [rows, cols](Node& n) {
                           Node& px = *n.parents[0];
                           Node& pv = *n.parents[1];
                           for (int64_t i = 0; i < rows; ++i)
                             for (int64_t j = 0; j < cols; ++j) {
                               double g = n.grad[i * cols + j];
                               if (px.requires_grad) px.grad[i * cols + j] += g;
                               if (pv.requires_grad) pv.grad[j] += g;
                             }
                         });
}

inline Tensor mul_rowvec(const Tensor& x, const Tensor& v) {
  if (x.rank() != 2 || v.rank() != 1 || x.dim(1) != v.dim(0))
    throw DimensionError("mul_rowvec: " + shape_str(x.shape()) + " vs " + shape_str(v.shape()));
  int64_t rows = x.dim(0), cols = x.dim(1);
  std::vector<double> out(x.values());
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < cols; ++j) out[i * cols + j] *= v.at(j);
  return detail::make_op("mul_rowvec", x.shape(), std::move(out), {x, v},
                         [rows, cols](Node& n) {
                           Node& px = *n.parents[0];
                           Node& pv = *n.parents[1];
                           for (int64_t i = 0; i < rows; ++i)
                             for (int64_t j = 0; j < cols; ++j) {
                               double g = n.grad[i * cols + j];
                               if (px.requires_grad)
                                 px.grad[i * cols + j] += g * pv.value[j];
                               if (pv.requires_grad)
                                 pv.grad[j] += g * px.value[i * cols + j];
                             }
                         });
}

inline Tensor add_colvec(const Tensor& x, const Tensor& v) {
  if (x.rank() != 2 || v.rank() != 1 || x.dim(0) != v.dim(0))
    throw DimensionError("add_colvec: " + shape_str(x.shape()) + " vs " + shape_str(v.shape()));
  int64_t rows = x.dim(0), cols = x.dim(1);
  std::vector<double> out(x.values());
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < cols; ++j) out[i * cols + j] += v.at(i);
  return detail::make_op("add_colvec", x.shape(), std::move(out), {x, v},
                         [rows, cols](Node& n) {
                           Node& px = *n.parents[0];
                           Node& pv = *n.parents[1];
                           for (int64_t i = 0; i < rows; ++i)
                             for (int64_t j = 0; j < cols; ++j) {
                               double g = n.grad[i * cols + j];
                               if (px.requires_grad) px.grad[i * cols + j] += g;
                               if (pv.requires_grad) pv.grad[i] += g;
                             }
                         });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
  int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(static_cast<size_t>(m * n), 0.0);
  for (int64_t i = 0; i < m; ++i)
    for (int64_t p = 0; p < k; ++p) {
      double av = a.at(i, p);
      if (av == 0.0) continue;
      const double* brow = b.data() + p * n;
      double* orow = out.data() + i * n;
      for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  return detail::make_op("matmul", {m, n}, std::move(out), {a, b},
                         [m, k, n](Node& nd) {
                           Node& pa = *nd.parents[0];
                           Node& pb = *nd.parents[1];
                           if (pa.requires_grad) {
                             // dA = dY * B^T
                             for (int64_t i = 0; i < m; ++i)
                               for (int64_t p = 0; p < k; ++p) {
                                 double acc = 0.0;
                                 const double* grow = nd.grad.data() + i * n;
                                 const double* brow = pb.value.data() + p * n;
                                 for (int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                                 pa.grad[i * k + p] += acc;
                               }
                           }
                           if (pb.requires_grad) {
                             // dB = A^T * dY
                             for (int64_t i = 0; i < m; ++i) {
                               const double* arow = pa.value.data() + i * k;
                               const double* grow = nd.grad.data() + i * n;
                               for (int64_t p = 0; p < k; ++p) {
                                 double av = arow[p];
                                 if (av == 0.0) continue;
                                 double* brow = pb.grad.data() + p * n;
                                 for (int64_t j = 0; j < n; ++j) brow[j] += av * grow[j];
                               }
                             }
                           }
                         });
}

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2)
    throw DimensionError("transpose: expected rank 2, got " + shape_str(a.shape()));
  int64_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(static_cast<size_t>(m * n));
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out[j * m + i] = a.at(i, j);
  return detail::make_op("transpose", {n, m}, std::move(out), {a}, [m, n](Node& nd) {
    Node& pa = *nd.parents[0];
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) pa.grad[i * n + j] += nd.grad[j * m + i];
  });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size())
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(shape));
  return detail::make_op("reshape", std::move(shape), a.values(), {a}, [](Node& nd) {
    Node& pa = *nd.parents[0];
    for (size_t i = 0; i < nd.grad.size(); ++i) pa.grad[i] += nd.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& a) {
  double s = std::accumulate(a.values().begin(), a.values().end(), 0.0);
  return detail::make_op("sum", {1}, {s}, {a}, [](Node& nd) {
    Node& pa = *nd.parents[0];
    for (double& g : pa.grad) g += nd.grad[0];
  });
}

inline Tensor mean(const Tensor& a) {
  double s = std::accumulate(a.values().begin(), a.values().end(), 0.0);
  double inv = 1.0 / static_cast<double>(a.size());
  return detail::make_op("mean", {1}, {s * inv}, {a}, [inv](Node& nd) {
    Node& pa = *nd.parents[0];
    for (double& g : pa.grad) g += nd.grad[0] * inv;
  });
}

inline Tensor sum_axis(const Tensor& a, int axis) {
  if (a.rank() != 2 || (axis != 0 && axis != 1))
    throw DimensionError("sum_axis: expected rank 2 and axis 0/1 for " + shape_str(a.shape()));
  int64_t rows = a.dim(0), cols = a.dim(1);
  if (axis == 0) {
    std::vector<double> out(static_cast<size_t>(cols), 0.0);
    for (int64_t i = 0; i < rows; ++i)
      for (int64_t j = 0; j < cols; ++j) out[j] += a.at(i, j);
    return detail::make_op("sum_axis0", {cols}, std::move(out), {a}, [rows, cols](Node& nd) {
      Node& pa = *nd.parents[0];
      for (int64_t i = 0; i < rows; ++i)
        for (int64_t j = 0; j < cols; ++j) pa.grad[i * cols + j] += nd.grad[j];
    });
  }
  std::vector<double> out(static_cast<size_t>(rows), 0.0);
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < cols; ++j) out[i] += a.at(i, j);
  return detail::make_op("sum_axis1", {rows}, std::move(out), {a}, [rows, cols](Node& nd) {
    Node& pa = *nd.parents[0];
    for (int64_t i = 0; i < rows; ++i)
      for (int64_t j = 0; j < cols; ++j) pa.grad[i * cols + j] += nd.grad[i];
  });
}

inline Tensor mean_axis(const Tensor& a, int axis) {
  int64_t denom = axis == 0 ? a.dim(0) : a.dim(1);
  return mul_scalar(sum_axis(a, axis), 1.0 / static_cast<double>(denom));
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

namespace detail {
inline void check_axis_last(const char* op, const Tensor& a, int axis) {
  if (!((a.rank() == 1 && axis == 0) || (a.rank() == 2 && axis == 1)))
    throw DimensionError(std::string(op) + ": unsupported axis " + std::to_string(axis) +
                         " for shape " + shape_str(a.shape()));
}
}  // namespace detail

inline Tensor softmax(const Tensor& a, int axis) {
  detail::check_axis_last("softmax", a, axis);
  int64_t rows = a.rank() == 1 ? 1 : a.dim(0);
  int64_t cols = a.rank() == 1 ? a.dim(0) : a.dim(1);
  std::vector<double> out(a.values());
  for (int64_t i = 0; i < rows; ++i) {
    double* row = out.data() + i * cols;
    double mx = *std::max_element(row, row + cols);
    double z = 0.0;
    for (int64_t j = 0; j < cols; ++j) {
      row[j] = std::exp(row[j] - mx);
      z += row[j];
    }
    for (int64_t j = 0; j < cols; ++j) row[j] /= z;
  }
  return detail::make_op("softmax", a.shape(), std::move(out), {a}, [rows, cols](Node& nd) {
    Node& pa = *nd.parents[0];
    for (int64_t i = 0; i < rows; ++i) {
      const double* y = nd.value.data() + i * cols;
      const double* g = nd.grad.data() + i * cols;
      double dot = 0.0;
      for (int64_t j = 0; j < cols; ++j) dot += g[j] * y[j];
      double* dst = pa.grad.data() + i * cols;
      for (int64_t j = 0; j < cols; ++j) dst[j] += y[j] * (g[j] - dot);
    }
  });
}

inline Tensor log_softmax(const Tensor& a, int axis) {
  detail::check_axis_last("log_softmax", a, axis);
  int64_t rows = a.rank() == 1 ? 1 : a.dim(0);
  int64_t cols = a.rank() == 1 ? a.dim(0) : a.dim(1);
  std::vector<double> out(a.values());
  for (int64_t i = 0; i < rows; ++i) {
    double* row = out.data() + i * cols;
    double mx = *std::max_element(row, row + cols);
    double z = 0.0;
    for (int64_t j = 0; j < cols; ++j) z += std::exp(row[j] - mx);
    double lz = mx + std::log(z);
    for (int64_t j = 0; j < cols; ++j) row[j] -= lz;
  }
  return detail::make_op("log_softmax", a.shape(), std::move(out), {a},
                         [rows, cols](Node& nd) {
                           Node& pa = *nd.parents[0];
                           for (int64_t i = 0; i < rows; ++i) {
                             const double* y = nd.value.data() + i * cols;
                             const double* g = nd.grad.data() + i * cols;
                             double gs = 0.0;
                             for (int64_t j = 0; j < cols; ++j) gs += g[j];
                             double* dst = pa.grad.data() + i * cols;
                             for (int64_t j = 0; j < cols; ++j)
                               dst[j] += g[j] - std::exp(y[j]) * gs;
                           }
                         });
}

// Pure normalization (no affine part); constant rows normalize to zero.
inline Tensor layer_norm(const Tensor& a, int axis, double eps = 1e-5) {
  detail::check_axis_last("layer_norm", a, axis);
  int64_t rows = a.rank() == 1 ? 1 : a.dim(0);
  int64_t cols = a.rank() == 1 ? a.dim(0) : a.dim(1);
  std::vector<double> out(a.values());
  for (int64_t i = 0; i < rows; ++i) {
    double* row = out.data() + i * cols;
    double mu = 0.0;
    for (int64_t j = 0; j < cols; ++j) mu += row[j];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (int64_t j = 0; j < cols; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(cols);
    double inv = 1.0 / std::sqrt(var + eps);
    for (int64_t j = 0; j < cols; ++j) row[j] = (row[j] - mu) * inv;
  }
  return detail::make_op(
      "layer_norm", a.shape(), std::move(out), {a}, [rows, cols, eps](Node& nd) {
        Node& pa = *nd.parents[0];
        for (int64_t i = 0; i < rows; ++i) {
          const double* x = pa.value.data() + i * cols;
          const double* xhat = nd.value.data() + i * cols;
          const double* g = nd.grad.data() + i * cols;
          double mu = 0.0;
          for (int64_t j = 0; j < cols; ++j) mu += x[j];
          mu /= static_cast<double>(cols);
          double var = 0.0;
          for (int64_t j = 0; j < cols; ++j) var += (x[j] - mu) * (x[j] - mu);
          var /= static_cast<double>(cols);
          double inv = 1.0 / std::sqrt(var + eps);
          double gmean = 0.0, gxhat = 0.0;
          for (int64_t j = 0; j < cols; ++j) {
            gmean += g[j];
            gxhat += g[j] * xhat[j];
          }
          gmean /= static_cast<double>(cols);
          gxhat /= static_cast<double>(cols);
          double* dst = pa.grad.data() + i * cols;
          for (int64_t j = 0; j < cols; ++j)
            dst[j] += inv * (g[j] - gmean - xhat[j] * gxhat);
        }
      });
}

// ---------------------------------------------------------------------------
// Lookup / selection
// ---------------------------------------------------------------------------

inline Tensor embedding_lookup(const Tensor& table, const std::vector<int64_t>& ids) {
  if (table.rank() != 2)
    throw DimensionError("embedding_lookup: table must be rank 2, got " +
                         shape_str(table.shape()));
  int64_t vocab = table.dim(0), dim = table.dim(1);
  for (int64_t id : ids)
    if (id < 0 || id >= vocab)
      throw LookupError("embedding_lookup: id " + std::to_string(id) +
                        " outside table of " + std::to_string(vocab) + " rows");
  int64_t n = static_cast<int64_t>(ids.size());
  std::vector<double> out(static_cast<size_t>(n * dim));
  for (int64_t i = 0; i < n; ++i)
    std::copy_n(table.data() + ids[i] * dim, dim, out.data() + i * dim);
  return detail::make_op("embedding_lookup", {n, dim}, std::move(out), {table},
                         [ids, dim](Node& nd) {
                           Node& pt = *nd.parents[0];
                           for (size_t i = 0; i < ids.size(); ++i)
                             for (int64_t j = 0; j < dim; ++j)
                               pt.grad[ids[i] * dim + j] += nd.grad[i * dim + j];
                         });
}

inline Tensor pick(const Tensor& a, int64_t flat_index) {
  if (flat_index < 0 || flat_index >= a.size())
    throw DimensionError("pick: index " + std::to_string(flat_index) +
                         " out of range for " + shape_str(a.shape()));
  return detail::make_op("pick", {1}, {a.at(flat_index)}, {a}, [flat_index](Node& nd) {
    nd.parents[0]->grad[flat_index] += nd.grad[0];
  });
}

// out[i] = a[rows[i], cols[i]]
inline Tensor take_rc(const Tensor& a, const std::vector<int64_t>& rows,
                      const std::vector<int64_t>& cols) {
  if (a.rank() != 2) throw DimensionError("take_rc: need rank 2, got " + shape_str(a.shape()));
  if (rows.size() != cols.size()) throw DimensionError("take_rc: rows/cols length mismatch");
  int64_t nr = a.dim(0), nc = a.dim(1);
  std::vector<double> out(rows.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= nr || cols[i] < 0 || cols[i] >= nc)
      throw DimensionError("take_rc: index (" + std::to_string(rows[i]) + "," +
                           std::to_string(cols[i]) + ") outside " + shape_str(a.shape()));
    out[i] = a.at(rows[i], cols[i]);
  }
  return detail::make_op("take_rc", {static_cast<int64_t>(rows.size())}, std::move(out),
                         {a}, [rows, cols, nc](Node& nd) {
                           Node& pa = *nd.parents[0];
                           for (size_t i = 0; i < rows.size(); ++i)
                             pa.grad[rows[i] * nc + cols[i]] += nd.grad[i];
                         });
}

// ---------------------------------------------------------------------------
// Structure: concat / slice
// ---------------------------------------------------------------------------

inline Tensor concat(const Tensor& a, const Tensor& b, int axis) {
  if (a.rank() != b.rank()) throw DimensionError("concat: rank mismatch");
  if (a.rank() == 1 && axis == 0) {
    std::vector<double> out(a.values());
    out.insert(out.end(), b.values().begin(), b.values().end());
    int64_t na = a.size();
    return detail::make_op("concat", {a.size() + b.size()}, std::move(out), {a, b},
                           [na](Node& nd) {
                             Node& pa = *nd.parents[0];
                             Node& pb = *nd.parents[1];
                             for (int64_t i = 0; i < na; ++i)
                               if (pa.requires_grad) pa.grad[i] += nd.grad[i];
                             for (size_t i = na; i < nd.grad.size(); ++i)
                               if (pb.requires_grad) pb.grad[i - na] += nd.grad[i];
                           });
  }
  if (a.rank() != 2 || (axis != 0 && axis != 1))
    throw DimensionError("concat: unsupported axis " + std::to_string(axis));
  if (axis == 0) {
    if (a.dim(1) != b.dim(1))
      throw DimensionError("concat axis 0: " + shape_str(a.shape()) + " vs " +
                           shape_str(b.shape()));
    std::vector<double> out(a.values());
    out.insert(out.end(), b.values().begin(), b.values().end());
    int64_t na = a.size();
    return detail::make_op("concat", {a.dim(0) + b.dim(0), a.dim(1)}, std::move(out),
                           {a, b}, [na](Node& nd) {
                             Node& pa = *nd.parents[0];
                             Node& pb = *nd.parents[1];
                             for (int64_t i = 0; i < na; ++i)
                               if (pa.requires_grad) pa.grad[i] += nd.grad[i];
                             for (size_t i = na; i < nd.grad.size(); ++i)
                               if (pb.requires_grad) pb.grad[i - na] += nd.grad[i];
                           });
  }
  if (a.dim(0) != b.dim(0))
    throw DimensionError("concat axis 1: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  int64_t rows = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  std::vector<double> out(static_cast<size_t>(rows * (ca + cb)));
  for (int64_t i = 0; i < rows; ++i) {
    std::copy_n(a.data() + i * ca, ca, out.data() + i * (ca + cb));
    std::copy_n(b.data() + i * cb, cb, out.data() + i * (ca + cb) + ca);
  }
  return detail::make_op("concat", {rows, ca + cb}, std::move(out), {a, b},
                         [rows, ca, cb](Node& nd) {
                           Node& pa = *nd.parents[0];
                           Node& pb = *nd.parents[1];
                           for (int64_t i = 0; i < rows; ++i) {
                             const double* g = nd.grad.data() + i * (ca + cb);
                             if (pa.requires_grad)
                               for (int64_t j = 0; j < ca; ++j) pa.grad[i * ca + j] += g[j];
                             if (pb.requires_grad)
                               for (int64_t j = 0; j < cb; ++j) pb.grad[i * cb + j] += g[ca + j];
                           }
                         });
}

inline Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len) {
  if (a.rank() == 1 && axis == 0) {
    if (start < 0 || len < 0 || start + len > a.dim(0))
      throw DimensionError("slice: range [" + std::to_string(start) + "," +
                           std::to_string(start + len) + ") outside " + shape_str(a.shape()));
    std::vector<double> out(a.values().begin() + start, a.values().begin() + start + len);
    return detail::make_op("slice", {len}, std::move(out), {a}, [start, len](Node& nd) {
      Node& pa = *nd.parents[0];
      for (int64_t i = 0; i < len; ++i) pa.grad[start + i] += nd.grad[i];
    });
  }
  if (a.rank() != 2 || (axis != 0 && axis != 1))
    throw DimensionError("slice: unsupported axis " + std::to_string(axis) + " for " +
                         shape_str(a.shape()));
  int64_t rows = a.dim(0), cols = a.dim(1);
  int64_t bound = axis == 0 ? rows : cols;
  if (start < 0 || len < 0 || start + len > bound)
    throw DimensionError("slice: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") outside " + shape_str(a.shape()));
  if (axis == 0) {
    std::vector<double> out(a.values().begin() + start * cols,
                            a.values().begin() + (start + len) * cols);
    return detail::make_op("slice", {len, cols}, std::move(out), {a},
                           [start, len, cols](Node& nd) {
                             Node& pa = *nd.parents[0];
                             for (int64_t i = 0; i < len * cols; ++i)
                               pa.grad[start * cols + i] += nd.grad[i];
                           });
  }
  std::vector<double> out(static_cast<size_t>(rows * len));
  for (int64_t i = 0; i < rows; ++i)
    std::copy_n(a.data() + i * cols + start, len, out.data() + i * len);
  return detail::make_op("slice", {rows, len}, std::move(out), {a},
                         [rows, cols, start, len](Node& nd) {
                           Node& pa = *nd.parents[0];
                           for (int64_t i = 0; i < rows; ++i)
                             for (int64_t j = 0; j < len; ++j)
                               pa.grad[i * cols + start + j] += nd.grad[i * len + j];
                         });
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

inline int64_t conv1d_out_len(int64_t in_len, int64_t kernel, int64_t stride,
                              int64_t pad = 0) {
  return (in_len + 2 * pad - kernel) / stride + 1;
}

// x: [L, C_in], w: [C_out, C_in, K] -> [L_out, C_out], zero padding on both ends.
inline Tensor conv1d(const Tensor& x, const Tensor& w, int64_t stride, int64_t pad = 0) {
  if (x.rank() != 2 || w.rank() != 3 || x.dim(1) != w.dim(1))
    throw DimensionError("conv1d: incompatible shapes " + shape_str(x.shape()) + " and " +
                         shape_str(w.shape()));
  if (stride < 1) throw DimensionError("conv1d: stride must be >= 1");
  int64_t L = x.dim(0), cin = x.dim(1), cout = w.dim(0), K = w.dim(2);
  int64_t lout = conv1d_out_len(L, K, stride, pad);
  if (lout < 1)
    throw DimensionError("conv1d: input length " + std::to_string(L) +
                         " shorter than kernel " + std::to_string(K));
  std::vector<double> out(static_cast<size_t>(lout * cout), 0.0);
  for (int64_t t = 0; t < lout; ++t)
    for (int64_t o = 0; o < cout; ++o) {
      double acc = 0.0;
      for (int64_t k = 0; k < K; ++k) {
        int64_t ti = t * stride + k - pad;
        if (ti < 0 || ti >= L) continue;
        const double* xrow = x.data() + ti * cin;
        const double* wrow = w.data() + (o * cin) * K + k;
        for (int64_t c = 0; c < cin; ++c) acc += xrow[c] * wrow[c * K];
      }
      out[t * cout + o] = acc;
    }
  return detail::make_op(
      "conv1d", {lout, cout}, std::move(out), {x, w},
      [L, cin, cout, K, stride, pad, lout](Node& nd) {
        Node& px = *nd.parents[0];
        Node& pw = *nd.parents[1];
        for (int64_t t = 0; t < lout; ++t)
          for (int64_t o = 0; o < cout; ++o) {
            double g = nd.grad[t * cout + o];
            if (g == 0.0) continue;
            for (int64_t k = 0; k < K; ++k) {
              int64_t ti = t * stride + k - pad;
              if (ti < 0 || ti >= L) continue;
              for (int64_t c = 0; c < cin; ++c) {
                if (px.requires_grad)
                  px.grad[ti * cin + c] += g * pw.value[(o * cin + c) * K + k];
                if (pw.requires_grad)
                  pw.grad[(o * cin + c) * K + k] += g * px.value[ti * cin + c];
              }
            }
          }
      });
}

// ---------------------------------------------------------------------------
// Row replacement (masking / mix-up)
// ---------------------------------------------------------------------------

// Rows listed in `rows` are overwritten with the learned vector `fill`.
// Gradient on replaced rows flows to `fill`; elsewhere to `x`.
inline Tensor replace_rows(const Tensor& x, const Tensor& fill,
                           const std::vector<int64_t>& rows) {
  if (x.rank() != 2 || fill.rank() != 1 || fill.dim(0) != x.dim(1))
    throw DimensionError("replace_rows: " + shape_str(x.shape()) + " vs " +
                         shape_str(fill.shape()));
  int64_t cols = x.dim(1);
  std::vector<double> out(x.values());
  std::vector<char> replaced(static_cast<size_t>(x.dim(0)), 0);
  for (int64_t r : rows) {
    if (r < 0 || r >= x.dim(0))
      throw DimensionError("replace_rows: row " + std::to_string(r) + " outside " +
                           shape_str(x.shape()));
    replaced[static_cast<size_t>(r)] = 1;
    std::copy_n(fill.data(), cols, out.data() + r * cols);
  }
  return detail::make_op("replace_rows", x.shape(), std::move(out), {x, fill},
                         [replaced, cols](Node& nd) {
                           Node& px = *nd.parents[0];
                           Node& pf = *nd.parents[1];
                           int64_t rows_n = static_cast<int64_t>(replaced.size());
                           for (int64_t i = 0; i < rows_n; ++i) {
                             const double* g = nd.grad.data() + i * cols;
                             if (replaced[static_cast<size_t>(i)]) {
                               if (pf.requires_grad)
                                 for (int64_t j = 0; j < cols; ++j) pf.grad[j] += g[j];
                             } else if (px.requires_grad) {
                               for (int64_t j = 0; j < cols; ++j)
                                 px.grad[i * cols + j] += g[j];
                             }
                           }
                         });
}

// Straight-through row mix: rows listed take values from `replacement`
// (treated as constant), but their gradient passes through to `x` unchanged.
inline Tensor mixup_rows(const Tensor& x, const Tensor& replacement,
                         const std::vector<int64_t>& rows) {
  detail::check_same_shape("mixup_rows", x, replacement);
  int64_t cols = x.rank() == 2 ? x.dim(1) : 1;
  std::vector<double> out(x.values());
  for (int64_t r : rows) {
    if (r < 0 || r >= x.dim(0))
      throw DimensionError("mixup_rows: row " + std::to_string(r) + " outside " +
                           shape_str(x.shape()));
    std::copy_n(replacement.data() + r * cols, cols, out.data() + r * cols);
  }
  return detail::make_op("mixup_rows", x.shape(), std::move(out), {x}, [](Node& nd) {
    Node& px = *nd.parents[0];
    for (size_t i = 0; i < nd.grad.size(); ++i) px.grad[i] += nd.grad[i];
  });
}

// Test hook: build a unary op from explicit forward/vjp callables.
inline Tensor unary_custom(const Tensor& x, const char* name,
                           const std::function<double(double)>& fwd,
                           const std::function<double(double)>& dfdx) {
  std::vector<double> v(x.values());
  for (double& e : v) e = fwd(e);
  return detail::make_op(name, x.shape(), std::move(v), {x}, [dfdx](Node& nd) {
    Node& px = *nd.parents[0];
    for (size_t i = 0; i < nd.grad.size(); ++i)
      px.grad[i] += nd.grad[i] * dfdx(px.value[i]);
  });
}

// ---------------------------------------------------------------------------
// Finite-difference gradient oracle
// ---------------------------------------------------------------------------

// Max over elements of |analytic - numeric| / max(|analytic|, |numeric|, 1e-12)
// with numeric = (f(x + eps e_i) - f(x - eps e_i)) / (2 eps).
inline double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                         double eps = 1e-5) {
  if (eps <= 0.0) throw ContractError("grad_check: eps must be positive");
  Tensor probe = x.detach();
  probe.set_requires_grad(true);
  Tensor y = f(probe);
  if (y.size() != 1)
    throw ContractError("grad_check: f must return a scalar, got " + shape_str(y.shape()));
  backward(y);
  std::vector<double> analytic = probe.grad();

  double worst = 0.0;
  for (int64_t i = 0; i < x.size(); ++i) {
    Tensor xp = x.detach();
    xp.at(i) += eps;
    double fp = f(xp).item();
    Tensor xm = x.detach();
    xm.at(i) -= eps;
    double fm = f(xm).item();
    double numeric = (fp - fm) / (2.0 * eps);
    double denom = std::max({std::fabs(analytic[static_cast<size_t>(i)]),
                             std::fabs(numeric), 1e-12});
    worst = std::max(worst, std::fabs(analytic[static_cast<size_t>(i)] - numeric) / denom);
  }
  return worst;
}

}  // namespace ust
