#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace plab {

using Shape = std::vector<std::size_t>;
using TokenId = std::int32_t;

/// Allocator giving every buffer the same 64-byte alignment. Vectorized
/// kernels choose their summation order from the address, so uniform
/// alignment is what makes identical inputs give bit-identical outputs.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), kAlign));
  }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class GradTape;

namespace detail {

struct Node {
  Shape shape;
  Buffer data;
  Buffer grad;  // empty until first accumulation
  bool requires_grad = false;
  GradTape* tape = nullptr;  // set when produced by a recorded op
  std::size_t tape_index = 0;

  Buffer& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

/// Dense row-major float64 array. Copies share storage; values are treated
/// as immutable once an op has consumed them, except for parameter updates
/// done by the optimizer through `mutable_data()`.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, Buffer data, bool requires_grad = false);
  Tensor(Shape shape, const std::vector<double>& data, bool requires_grad = false);
  Tensor(Shape shape, std::initializer_list<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  std::span<double> mutable_data() { return node_->data; }
  double item() const;
  /// Element access by full multi-index.
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool value) { node_->requires_grad = value; }
  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient buffer; all zeros if nothing has been accumulated yet.
  std::span<const double> grad() const;
  std::span<double> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }

  /// Copy of the values with no gradient history.
  Tensor detach() const;
  bool shares_storage(const Tensor& other) const { return node_ == other.node_; }

  detail::Node& node() const { return *node_; }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Dynamic reverse-mode tape. Ops append an entry when a tape is active on
/// the current thread and at least one input requires a gradient. Entries
/// are appended in execution order, which is a topological order.
class GradTape {
 public:
  using BackwardFn = std::function<void(detail::Node& out)>;

  void record(const Tensor& output, BackwardFn fn);
  /// Seeds d(loss)/d(loss) = 1 and runs every entry up to and including the
  /// loss's producer in reverse order, exactly once each, then frees the tape.
  void backward(const Tensor& loss);

  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

 private:
  struct Entry {
    std::shared_ptr<detail::Node> output;
    BackwardFn fn;
  };
  std::vector<Entry> entries_;
};

/// Makes `tape` the recording target for ops on this thread while in scope.
class TapeScope {
 public:
  explicit TapeScope(GradTape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  GradTape* previous_;
};

/// Suspends recording on this thread while in scope.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  GradTape* previous_;
};

GradTape* active_tape();

/// Runs backward on the tape that recorded `loss`.
void backward(const Tensor& loss);

}  // namespace plab
