#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "fseg/rng.hpp"

namespace fseg {

using Shape = std::vector<int>;

std::int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Every op scans its freshly computed values (and, during backward, each
// node's accumulated gradient) for NaN/Inf and throws on the first hit.
// On by default; costs a few percent next to the convolutions.
void set_finite_checks(bool on);
bool finite_checks_enabled();

// While a NoGradGuard is alive, newly created ops record no graph even if
// their inputs require gradients. Used by inference paths.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};
bool grad_recording_enabled();

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first touched
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
};

// Shared handle to a node in a dynamically built computation graph.
// Values and gradients are stored as doubles in row-major order.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor uniform(Shape shape, double lo, double hi, Rng& rng,
                        bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int dim(int i) const;
  int rank() const;
  std::int64_t numel() const;

  std::vector<double>& data();
  const std::vector<double>& data() const;
  double scalar() const;  // value of a single-element tensor

  bool requires_grad() const;
  void set_requires_grad(bool on);
  std::vector<double>& grad();  // allocates zeros on first use
  bool has_grad() const;
  void zero_grad();

  // Reverse sweep from a single-element root. Accumulates into leaf grads.
  void backward() const;

  const std::shared_ptr<TensorNode>& node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

// Builds an op node. requires_grad is inherited from the inputs unless
// grad recording is suspended; `backward` may be empty for that case.
Tensor make_op(Shape shape, std::vector<double> value,
               const std::vector<Tensor>& inputs, const char* opname,
               std::function<void(TensorNode&)> backward);

void check_finite(const std::vector<double>& v, const char* what);

// Elementwise and reduction ops.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double k);
Tensor add_scalar(const Tensor& a, double k);
Tensor exp(const Tensor& a);
Tensor log_clamped(const Tensor& a, double floor = 1e-12);
Tensor relu(const Tensor& a);
Tensor sum(const Tensor& a);   // -> shape {1}
Tensor mean(const Tensor& a);  // -> shape {1}

}  // namespace fseg
