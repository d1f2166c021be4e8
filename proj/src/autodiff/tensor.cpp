#include "mim/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_map>
#include <utility>

#include "mim/error.hpp"

namespace mim {

namespace {

std::atomic<std::uint64_t> g_next_id{1};
std::atomic<bool> g_deterministic{true};
thread_local bool t_grad_enabled = true;

std::shared_ptr<detail::Node> new_node(Shape shape, std::vector<double> value) {
  if (shape_numel(shape) != value.size()) {
    throw ShapeError("tensor data length " + std::to_string(value.size()) +
                     " does not match shape " + shape_str(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  node->shape = std::move(shape);
  node->value = std::move(value);
  return node;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from_data(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  Tensor t(new_node(std::move(shape), std::move(data)));
  t.node_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
  if (!node_) throw Error("use of undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  return s[axis];
}

std::span<const double> Tensor::data() const {
  if (!node_) throw Error("use of undefined tensor");
  return node_->value;
}

std::vector<double> Tensor::to_vector() const {
  auto d = data();
  return {d.begin(), d.end()};
}

std::vector<double>& Tensor::mutable_values() {
  if (!node_) throw Error("use of undefined tensor");
  if (!node_->inputs.empty() || node_->backward) {
    throw Error("only leaf tensors may be mutated in place");
  }
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  }
  return data()[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw ShapeError("index rank mismatch for " + shape_str(s));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= s[axis]) throw ShapeError("index out of range for " + shape_str(s));
    flat = flat * s[axis] + i;
    ++axis;
  }
  return data()[flat];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  if (!node_) throw Error("use of undefined tensor");
  node_->requires_grad = flag;
  return *this;
}

Tensor Tensor::detach() const { return from_data(shape(), to_vector()); }

std::uint64_t Tensor::id() const { return node_ ? node_->id : 0; }

const char* Tensor::op_name() const { return node_ ? node_->op : "undefined"; }

bool Tensor::is_leaf() const { return node_ && node_->inputs.empty() && !node_->backward; }

Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                   std::vector<Tensor> inputs, BackwardFn backward) {
  for (double v : value) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value produced by ") + op);
    }
  }
  auto node = new_node(std::move(shape), std::move(value));
  node->op = op;
  if (t_grad_enabled && backward) {
    const bool any = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      node->inputs.reserve(inputs.size());
      for (auto& in : inputs) node->inputs.push_back(in.node());
      node->backward = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() { return t_grad_enabled; }

bool deterministic_mode() { return g_deterministic.load(); }
void set_deterministic_mode(bool on) { g_deterministic.store(on); }

std::vector<Tensor> grad(const Tensor& loss, std::span<const Tensor> params) {
  if (loss.numel() != 1) {
    throw ShapeError("grad() needs a scalar loss, got " + shape_str(loss.shape()));
  }
  for (const auto& p : params) {
    if (!p.requires_grad()) throw Error("grad() parameter does not require a gradient");
  }

  // Collect every recorded node reachable from the loss.
  std::vector<detail::Node*> order;
  {
    std::vector<detail::Node*> stack;
    std::unordered_map<const detail::Node*, bool> seen;
    if (loss.requires_grad()) stack.push_back(loss.node().get());
    while (!stack.empty()) {
      auto* n = stack.back();
      stack.pop_back();
      if (seen[n]) continue;
      seen[n] = true;
      order.push_back(n);
      for (auto& in : n->inputs) {
        if (in->requires_grad && !seen[in.get()]) stack.push_back(in.get());
      }
    }
  }
  std::sort(order.begin(), order.end(),
            [](const detail::Node* a, const detail::Node* b) { return a->id > b->id; });

  std::unordered_map<const detail::Node*, std::vector<double>> grads;
  grads.reserve(order.size());
  if (!order.empty()) grads[order.front()] = {1.0};

  std::vector<std::span<double>> slots;
  for (auto* n : order) {
    if (!n->backward) continue;
    auto it = grads.find(n);
    if (it == grads.end()) continue;
    slots.assign(n->inputs.size(), std::span<double>{});
    for (std::size_t i = 0; i < n->inputs.size(); ++i) {
      auto* in = n->inputs[i].get();
      if (!in->requires_grad) continue;
      auto& buf = grads[in];
      if (buf.empty()) buf.assign(in->value.size(), 0.0);
      slots[i] = buf;
    }
    // `grads` may rehash while slots are filled, so re-resolve the output span after.
    const auto& gout = grads.find(n)->second;
    n->backward(gout, slots);
    // Interior gradients are not needed once propagated.
    if (!n->inputs.empty()) grads.erase(n);
  }

  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) {
    auto it = grads.find(p.node().get());
    if (it == grads.end()) {
      out.push_back(Tensor::zeros(p.shape()));
    } else {
      out.push_back(Tensor::from_data(p.shape(), it->second));
    }
  }
  return out;
}

}  // namespace mim
