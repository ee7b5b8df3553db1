#include "fseg/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace fseg {

namespace {
bool g_finite_checks = true;
thread_local int g_no_grad_depth = 0;
}  // namespace

void set_finite_checks(bool on) { g_finite_checks = on; }
bool finite_checks_enabled() { return g_finite_checks; }

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }
bool grad_recording_enabled() { return g_no_grad_depth == 0; }

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) {
    if (d <= 0) throw std::invalid_argument("tensor shape has extent " + std::to_string(d));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::string r = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) r += ",";
    r += std::to_string(s[i]);
  }
  return r + "]";
}

void check_finite(const std::vector<double>& v, const char* what) {
  if (!g_finite_checks) return;
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw std::runtime_error(std::string("non-finite value in ") + what);
    }
  }
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  const std::int64_t n = shape_numel(shape);
  if (n != std::int64_t(values.size())) {
    throw std::invalid_argument("tensor data size " + std::to_string(values.size()) +
                                " does not match shape " + shape_str(shape));
  }
  node_ = std::make_shared<TensorNode>();
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  const std::int64_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(std::size_t(n), v), requires_grad);
}

Tensor Tensor::uniform(Shape shape, double lo, double hi, Rng& rng, bool requires_grad) {
  const std::int64_t n = shape_numel(shape);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

static const std::shared_ptr<TensorNode>& require_node(const std::shared_ptr<TensorNode>& n) {
  if (!n) throw std::logic_error("operation on an empty tensor");
  return n;
}

const Shape& Tensor::shape() const { return require_node(node_)->shape; }
int Tensor::dim(int i) const { return require_node(node_)->shape.at(std::size_t(i)); }
int Tensor::rank() const { return int(require_node(node_)->shape.size()); }
std::int64_t Tensor::numel() const { return std::int64_t(require_node(node_)->value.size()); }

std::vector<double>& Tensor::data() { return require_node(node_)->value; }
const std::vector<double>& Tensor::data() const { return require_node(node_)->value; }

double Tensor::scalar() const {
  if (numel() != 1) {
    throw std::logic_error("scalar() called on tensor of shape " + shape_str(shape()));
  }
  return node_->value[0];
}

bool Tensor::requires_grad() const { return require_node(node_)->requires_grad; }
void Tensor::set_requires_grad(bool on) { require_node(node_)->requires_grad = on; }

std::vector<double>& Tensor::grad() {
  require_node(node_)->ensure_grad();
  return node_->grad;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

void Tensor::zero_grad() {
  if (node_ && !node_->grad.empty()) {
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }
}

void Tensor::backward() const {
  require_node(node_);
  if (!node_->requires_grad) {
    throw std::logic_error("backward() on a tensor that does not require grad");
  }
  if (node_->value.size() != 1) {
    throw std::logic_error("backward() requires a single-element root, got shape " +
                           shape_str(node_->shape));
  }

  // Depth-first topological order over the requires_grad subgraph.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> seen;
  std::vector<std::pair<TensorNode*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [cur, idx] = stack.back();
    if (idx < cur->parents.size()) {
      TensorNode* p = cur->parents[idx++].get();
      if (p->requires_grad && seen.insert(p).second) {
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(cur);
      stack.pop_back();
    }
  }

  node_->ensure_grad();
  node_->grad[0] += 1.0;

  // `order` is children-after-parents due to DFS post-order; walk it
  // backwards so each node's grad is complete before its backward_fn runs.
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->grad.empty()) continue;  // unreachable from the root
    check_finite(n->grad, n->op);
    if (n->backward_fn) n->backward_fn(*n);
  }
}

Tensor make_op(Shape shape, std::vector<double> value, const std::vector<Tensor>& inputs,
               const char* opname, std::function<void(TensorNode&)> backward) {
  check_finite(value, opname);
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = opname;
  if (grad_recording_enabled()) {
    for (const auto& in : inputs) {
      if (in.requires_grad()) {
        node->requires_grad = true;
        break;
      }
    }
  }
  if (node->requires_grad) {
    node->parents.reserve(inputs.size());
    for (const auto& in : inputs) node->parents.push_back(in.node());
    node->backward_fn = std::move(backward);
  }
  return Tensor(std::move(node));
}

static void check_same_shape(const Tensor& a, const Tensor& b, const char* opname) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(opname) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  const auto& av = a.data();
  const auto& bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_op(a.shape(), std::move(out), {a, b}, "add",
                 [an = a.node(), bn = b.node()](TensorNode& self) {
                   if (an->requires_grad) {
                     an->ensure_grad();
                     for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
                   }
                   if (bn->requires_grad) {
                     bn->ensure_grad();
                     for (std::size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i];
                   }
                 });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  const auto& av = a.data();
  const auto& bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_op(a.shape(), std::move(out), {a, b}, "sub",
                 [an = a.node(), bn = b.node()](TensorNode& self) {
                   if (an->requires_grad) {
                     an->ensure_grad();
                     for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
                   }
                   if (bn->requires_grad) {
                     bn->ensure_grad();
                     for (std::size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] -= self.grad[i];
                   }
                 });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  const auto& av = a.data();
  const auto& bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_op(a.shape(), std::move(out), {a, b}, "mul",
                 [an = a.node(), bn = b.node()](TensorNode& self) {
                   if (an->requires_grad) {
                     an->ensure_grad();
                     for (std::size_t i = 0; i < self.grad.size(); ++i)
                       an->grad[i] += self.grad[i] * bn->value[i];
                   }
                   if (bn->requires_grad) {
                     bn->ensure_grad();
                     for (std::size_t i = 0; i < self.grad.size(); ++i)
                       bn->grad[i] += self.grad[i] * an->value[i];
                   }
                 });
}

Tensor scale(const Tensor& a, double k) {
  const auto& av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * k;
  return make_op(a.shape(), std::move(out), {a}, "scale",
                 [an = a.node(), k](TensorNode& self) {
                   an->ensure_grad();
                   for (std::size_t i = 0; i < self.grad.size(); ++i)
                     an->grad[i] += self.grad[i] * k;
                 });
}

Tensor add_scalar(const Tensor& a, double k) {
  const auto& av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + k;
  return make_op(a.shape(), std::move(out), {a}, "add_scalar",
                 [an = a.node()](TensorNode& self) {
                   an->ensure_grad();
                   for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
                 });
}

Tensor exp(const Tensor& a) {
  const auto& av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(av[i]);
  return make_op(a.shape(), std::move(out), {a}, "exp",
                 [an = a.node()](TensorNode& self) {
                   an->ensure_grad();
                   for (std::size_t i = 0; i < self.grad.size(); ++i)
                     an->grad[i] += self.grad[i] * self.value[i];
                 });
}

Tensor log_clamped(const Tensor& a, double floor) {
  const auto& av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(av[i] < floor ? floor : av[i]);
  return make_op(a.shape(), std::move(out), {a}, "log_clamped",
                 [an = a.node(), floor](TensorNode& self) {
                   an->ensure_grad();
                   for (std::size_t i = 0; i < self.grad.size(); ++i) {
                     const double x = an->value[i];
                     if (x >= floor) an->grad[i] += self.grad[i] / x;
                   }
                 });
}

Tensor relu(const Tensor& a) {
  const auto& av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
  return make_op(a.shape(), std::move(out), {a}, "relu",
                 [an = a.node()](TensorNode& self) {
                   an->ensure_grad();
                   for (std::size_t i = 0; i < self.grad.size(); ++i)
                     if (an->value[i] > 0.0) an->grad[i] += self.grad[i];
                 });
}

Tensor sum(const Tensor& a) {
  const auto& av = a.data();
  double s = 0.0;
  for (double x : av) s += x;
  return make_op({1}, {s}, {a}, "sum",
                 [an = a.node()](TensorNode& self) {
                   an->ensure_grad();
                   const double g = self.grad[0];
                   for (auto& x : an->grad) x += g;
                 });
}

Tensor mean(const Tensor& a) {
  const double inv = 1.0 / double(a.numel());
  const auto& av = a.data();
  double s = 0.0;
  for (double x : av) s += x;
  return make_op({1}, {s * inv}, {a}, "mean",
                 [an = a.node(), inv](TensorNode& self) {
                   an->ensure_grad();
                   const double g = self.grad[0] * inv;
                   for (auto& x : an->grad) x += g;
                 });
}

}  // namespace fseg
