#pragma once

// Dense f64 tensors with tape-based reverse-mode differentiation.
//
// Every operation result records its inputs and a backward closure when
// gradient recording is enabled and at least one input requires a gradient.
// Nodes carry a process-wide monotonically increasing id, so reverse id order
// is a valid reverse topological order of any graph built by one thread.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mim {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Receives the gradient of the result and accumulates (+=) into the
/// gradient buffers of the inputs. Spans of inputs that do not require a
/// gradient are empty.
using BackwardFn = std::function<void(std::span<const double> grad_out,
                                      std::span<const std::span<double>> grad_in)>;

namespace detail {
struct Node {
  std::uint64_t id = 0;
  const char* op = "leaf";
  Shape shape;
  std::vector<double> value;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
};
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return data().size(); }

  std::span<const double> data() const;
  std::vector<double> to_vector() const;
  /// Writable storage. Only leaves may be mutated (optimizer updates, tests).
  std::vector<double>& mutable_values();

  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  /// Fresh leaf holding a copy of the value.
  Tensor detach() const;

  std::uint64_t id() const;
  const char* op_name() const;
  bool is_leaf() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend Tensor make_result(const char*, Shape, std::vector<double>, std::vector<Tensor>,
                            BackwardFn);
  std::shared_ptr<detail::Node> node_;
};

/// Builds an operation result. Throws NumericError when `value` holds a
/// non-finite entry. Inputs and backward are only retained when recording.
Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                   std::vector<Tensor> inputs, BackwardFn backward);

/// Disables gradient recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// d(loss)/d(param) for each param. `loss` must hold exactly one element.
/// A param that no path connects to the loss receives an all-zero gradient.
std::vector<Tensor> grad(const Tensor& loss, std::span<const Tensor> params);

/// Deterministic mode (default on): reductions across threads happen in a
/// fixed order. Read by the trainer.
bool deterministic_mode();
void set_deterministic_mode(bool on);

}  // namespace mim
