#include "patchlab/numerics/tensor.hpp"

#include <malloc.h>

#include <numeric>
#include <sstream>

#include "patchlab/errors.hpp"

namespace plab {
namespace {

// Activation buffers are tens of MB and short-lived; keep glibc from handing
// each one back to the OS so repeated forward/backward passes reuse pages.
[[maybe_unused]] const bool g_allocator_tuned = [] {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
  return true;
}();

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor() : Tensor(Shape{}, Buffer{0.0}) {}

Tensor::Tensor(Shape shape, Buffer data, bool requires_grad)
    : node_(std::make_shared<detail::Node>()) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeMismatch("shape " + shape_str(shape) + " does not hold " +
                        std::to_string(data.size()) + " values");
  }
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, const std::vector<double>& data, bool requires_grad)
    : Tensor(std::move(shape), Buffer(data.begin(), data.end()), requires_grad) {}

Tensor::Tensor(Shape shape, std::initializer_list<double> data, bool requires_grad)
    : Tensor(std::move(shape), Buffer(data), requires_grad) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), Buffer(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{}, Buffer{value}, requires_grad);
}

double Tensor::item() const {
  if (numel() != 1) throw NotScalar("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw IndexOutOfRange("index rank mismatch");
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= node_->shape[axis]) throw IndexOutOfRange("index out of range");
    flat = flat * node_->shape[axis] + i;
    ++axis;
  }
  return node_->data[flat];
}

std::span<const double> Tensor::grad() const {
  return node_->grad_buffer();
}

Tensor Tensor::detach() const {
  return Tensor(node_->shape, node_->data, false);
}

// --- tape -------------------------------------------------------------------

namespace {
thread_local GradTape* g_active_tape = nullptr;
}

GradTape* active_tape() { return g_active_tape; }

TapeScope::TapeScope(GradTape& tape) : previous_(g_active_tape) {
  g_active_tape = &tape;
}

TapeScope::~TapeScope() { g_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(g_active_tape) { g_active_tape = nullptr; }

NoGradScope::~NoGradScope() { g_active_tape = previous_; }

void GradTape::record(const Tensor& output, BackwardFn fn) {
  auto& node = output.node();
  node.requires_grad = true;
  node.tape = this;
  node.tape_index = entries_.size();
  entries_.push_back(Entry{output.node_ptr(), std::move(fn)});
}

void GradTape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw NotScalar("backward() needs a scalar loss, got " + shape_str(loss.shape()));
  }
  auto& node = loss.node();
  if (node.tape != this || node.tape_index >= entries_.size() ||
      entries_[node.tape_index].output.get() != &node) {
    throw NotScalar("loss was not produced on this tape");
  }
  node.grad_buffer()[0] += 1.0;
  for (std::size_t i = node.tape_index + 1; i-- > 0;) {
    Entry& e = entries_[i];
    if (!e.output->grad.empty()) e.fn(*e.output);
  }
  for (auto& e : entries_) e.output->tape = nullptr;
  entries_.clear();
}

void backward(const Tensor& loss) {
  GradTape* tape = loss.node().tape;
  if (tape == nullptr) throw NotScalar("loss is not on any tape");
  tape->backward(loss);
}

}  // namespace plab
