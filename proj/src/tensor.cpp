#include "stica/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

#include "stica/detail/node.hpp"

namespace stica {

namespace {

std::atomic<std::uint64_t> g_next_id{1};
std::atomic<std::int64_t> g_live_bytes{0};
std::atomic<std::int64_t> g_peak_bytes{0};
thread_local bool t_grad_enabled = true;
thread_local bool t_nonfinite_flag = false;
std::atomic<NonFinitePolicy> g_policy{NonFinitePolicy::Reject};

void track_alloc(std::int64_t bytes) {
  const std::int64_t now = g_live_bytes.fetch_add(bytes) + bytes;
  std::int64_t peak = g_peak_bytes.load();
  while (now > peak && !g_peak_bytes.compare_exchange_weak(peak, now)) {
  }
}

const detail::Node& require(const std::shared_ptr<detail::Node>& node) {
  if (!node) throw ShapeError("use of an undefined tensor");
  return *node;
}

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
  out << ')';
  return out.str();
}

namespace detail {

Node::Node(Shape s, std::vector<double> v) : shape(std::move(s)), value(std::move(v)) {
  id = g_next_id.fetch_add(1);
  track_alloc(static_cast<std::int64_t>(value.size() * sizeof(double)));
}

Node::~Node() {
  g_live_bytes.fetch_sub(static_cast<std::int64_t>((value.size() + grad.size()) * sizeof(double)));
}

std::span<double> Node::grad_buffer() {
  if (grad.empty() && !value.empty()) {
    grad.assign(value.size(), 0.0);
    track_alloc(static_cast<std::int64_t>(grad.size() * sizeof(double)));
  }
  return grad;
}

bool will_record(const std::vector<NodePtr>& parents) {
  if (!t_grad_enabled) return false;
  return std::any_of(parents.begin(), parents.end(), [](const NodePtr& p) { return p->requires_grad; });
}

Tensor make_result(const char* op, Shape shape, std::vector<double> value, std::vector<NodePtr> parents,
                   BackwardFn backward) {
  if (numel(shape) != value.size())
    throw ShapeError(std::string(op) + ": produced " + std::to_string(value.size()) + " values for shape " +
                     to_string(shape));
  auto node = std::make_shared<Node>(std::move(shape), std::move(value));
  node->op = op;
  node->is_leaf = false;
  if (will_record(parents)) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

void note_nonfinite(const char* op) {
  if (g_policy.load() == NonFinitePolicy::Reject)
    throw NumericError(std::string(op) + ": operand outside the domain (non-finite result)");
  t_nonfinite_flag = true;
}

}  // namespace detail

Tensor::Tensor(Shape shape, double fill, bool requires_grad) {
  const std::size_t n = stica::numel(shape);
  node_ = std::make_shared<detail::Node>(std::move(shape), std::vector<double>(n, fill));
  node_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  if (stica::numel(shape) != values.size())
    throw ShapeError("tensor of shape " + to_string(shape) + " given " + std::to_string(values.size()) + " values");
  node_ = std::make_shared<detail::Node>(std::move(shape), std::move(values));
  node_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor(Shape{}, std::vector<double>{value}, requires_grad); }

Tensor Tensor::arange(std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<double>(i);
  return Tensor(Shape{n}, std::move(v));
}

const Shape& Tensor::shape() const { return require(node_).shape; }

std::size_t Tensor::size(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + to_string(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return require(node_).value.size(); }
std::span<const double> Tensor::values() const { return require(node_).value; }
std::span<double> Tensor::mutable_values() {
  require(node_);
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return node_->value[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw ShapeError("index rank mismatch for shape " + to_string(s));
  std::size_t flat = 0, axis = 0;
  for (auto i : index) {
    if (i >= s[axis]) throw ShapeError("index out of range for shape " + to_string(s));
    flat = flat * s[axis++] + i;
  }
  return node_->value[flat];
}

bool Tensor::requires_grad() const { return require(node_).requires_grad; }
void Tensor::set_requires_grad(bool flag) {
  require(node_);
  if (!node_->is_leaf) throw ShapeError("requires_grad can only be set on leaf tensors");
  node_->requires_grad = flag;
}
bool Tensor::has_grad() const { return !require(node_).grad.empty(); }
std::span<const double> Tensor::grad() const { return require(node_).grad; }
std::span<double> Tensor::mutable_grad() {
  require(node_);
  return node_->grad_buffer();
}
void Tensor::zero_grad() {
  require(node_);
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return Tensor(shape(), std::vector<double>(values().begin(), values().end())); }

namespace {

// Recorded nodes reachable from `root`, sorted by id (= execution order).
std::vector<detail::Node*> reachable(detail::Node* root) {
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<detail::Node*> stack{root};
  while (!stack.empty()) {
    auto* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    order.push_back(n);
    for (auto& p : n->parents)
      if (p->requires_grad) stack.push_back(p.get());
  }
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->id < b->id; });
  return order;
}

}  // namespace

void Tensor::backward() const {
  const auto& root = require(node_);
  if (root.value.size() != 1)
    throw ShapeError("backward() needs a scalar loss, got shape " + to_string(root.shape));
  if (!root.requires_grad) return;
  auto order = reachable(node_.get());
  for (auto* n : order)
    if (!n->is_leaf) std::fill(n->grad.begin(), n->grad.end(), 0.0);
  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* n = *it;
    if (n->is_leaf || !n->backward || n->grad.empty()) continue;
    n->backward(n->grad);
  }
  // Interior gradients are scratch; release them.
  for (auto* n : order)
    if (!n->is_leaf && n != node_.get()) {
      g_live_bytes.fetch_sub(static_cast<std::int64_t>(n->grad.size() * sizeof(double)));
      std::vector<double>().swap(n->grad);
    }
}

ComputationRecord computation_record(const Tensor& output) {
  ComputationRecord record;
  if (!output.defined() || !output.requires_grad()) return record;
  for (auto* n : reachable(output.node().get())) {
    if (n->is_leaf) continue;
    RecordEntry entry{n->id, n->op, {}};
    for (auto& p : n->parents)
      if (!p->is_leaf) entry.operands.push_back(p->id);
    record.push_back(std::move(entry));
  }
  return record;
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

void set_nonfinite_policy(NonFinitePolicy policy) { g_policy.store(policy); }
NonFinitePolicy nonfinite_policy() { return g_policy.load(); }
bool nonfinite_flagged() { return t_nonfinite_flag; }
void clear_nonfinite_flag() { t_nonfinite_flag = false; }

MemoryStats tensor_memory() { return {g_live_bytes.load(), g_peak_bytes.load()}; }
void reset_peak_tensor_memory() { g_peak_bytes.store(g_live_bytes.load()); }

}  // namespace stica
