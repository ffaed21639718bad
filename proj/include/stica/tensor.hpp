#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "stica/error.hpp"

namespace stica {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {
struct Node;
}

// Dense row-major array of doubles with an optional gradient buffer.
//
// A Tensor is a shared handle: copies refer to the same node. Values are
// immutable after construction except through mutable_values(), which is
// reserved for parameter updates, data construction and finite-difference
// probing. Operations on tensors that require gradients record themselves
// so that backward() can propagate through them.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor arange(std::size_t n);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  std::span<double> mutable_values();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Reverse-mode sweep from this scalar. Leaf gradients accumulate across
  // calls until zero_grad().
  void backward() const;

  // Same values, no history.
  Tensor detach() const;

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

// Disables graph recording on this thread for its lifetime.
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

// What log/div/pow do with operands outside their domain.
enum class NonFinitePolicy { Reject, Flag };
void set_nonfinite_policy(NonFinitePolicy policy);
NonFinitePolicy nonfinite_policy();
// Under NonFinitePolicy::Flag: whether a non-finite value was produced on
// this thread since the last clear.
bool nonfinite_flagged();
void clear_nonfinite_flag();

// One executed primitive in the order it ran.
struct RecordEntry {
  std::uint64_t id;
  std::string op;
  std::vector<std::uint64_t> operands;  // ids of recorded operands (leaves excluded)
};
using ComputationRecord = std::vector<RecordEntry>;

// Primitives reachable from `output`, in execution order.
ComputationRecord computation_record(const Tensor& output);

struct MemoryStats {
  std::int64_t live_bytes = 0;
  std::int64_t peak_bytes = 0;
};
MemoryStats tensor_memory();
void reset_peak_tensor_memory();

}  // namespace stica
