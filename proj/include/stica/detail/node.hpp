#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "stica/tensor.hpp"

namespace stica::detail {

using NodePtr = std::shared_ptr<Node>;

// Receives the gradient of the node's output.
using BackwardFn = std::function<void(std::span<const double> out_grad)>;

struct Node {
  Node(Shape s, std::vector<double> v);
  ~Node();
  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;

  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool is_leaf = true;
  std::uint64_t id = 0;
  const char* op = "leaf";
  std::vector<NodePtr> parents;
  BackwardFn backward;

  // Zero-initialised gradient buffer, allocated on first use.
  std::span<double> grad_buffer();
};

// Builds the output of a primitive. The backward function is kept only when
// grad mode is on and some parent requires a gradient.
Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                   std::vector<NodePtr> parents, BackwardFn backward);

// Whether a primitive applied to these parents will record itself.
bool will_record(const std::vector<NodePtr>& parents);

void note_nonfinite(const char* op);

}  // namespace stica::detail
