#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace grn {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

// input/file problems (exit code 2 at the CLI)
struct DataError : Error {
  using Error::Error;
};
[[noreturn]] inline void fail_data(const std::string& msg) { throw DataError(msg); }

// non-finite values during optimization (exit code 3 at the CLI)
struct NumericError : Error {
  using Error::Error;
};
[[noreturn]] inline void fail_numeric(const std::string& msg) { throw NumericError(msg); }

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) {
    if (d <= 0) fail("tensor: non-positive dimension in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first touched
  bool requires_grad = false;
  bool consumed = false;  // set once backward has run through this node
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backfn;  // accumulates self.grad into parents

  double* grad_data() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad.data();
  }
};

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

// Disables graph recording for its scope (inference / in-place bookkeeping).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_mode(); }

// Shared handle to an n-d row-major double array with optional grad tracking.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, bool requires_grad = false)
      : n_(std::make_shared<detail::Node>()) {
    n_->data.assign(static_cast<std::size_t>(shape_numel(shape)), 0.0);
    n_->shape = std::move(shape);
    n_->requires_grad = requires_grad && detail::grad_mode();
  }

  static Tensor full(Shape shape, double v, bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    for (double& x : t.n_->data) x = v;
    return t;
  }

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    if (values.size() != t.n_->data.size())
      fail("tensor: value count " + std::to_string(values.size()) + " does not fill shape " +
           shape_str(t.shape()));
    t.n_->data = std::move(values);
    return t;
  }

  bool defined() const { return static_cast<bool>(n_); }
  const Shape& shape() const { return node().shape; }
  int ndim() const { return static_cast<int>(node().shape.size()); }
  int dim(int i) const { return node().shape.at(static_cast<std::size_t>(i)); }
  std::int64_t numel() const { return static_cast<std::int64_t>(node().data.size()); }

  // Handle semantics: a const Tensor still exposes mutable storage, like a
  // shared_ptr to a non-const node.
  double* data() const { return node().data.data(); }
  std::vector<double>& values() const { return node().data; }

  double item() const {
    if (numel() != 1) fail("tensor: item() on non-scalar of shape " + shape_str(shape()));
    return node().data[0];
  }

  bool requires_grad() const { return node().requires_grad; }

  bool has_grad() const { return !node().grad.empty(); }
  double* grad_data() const { return node().grad_data(); }
  const std::vector<double>& grad() const {
    if (node().grad.empty()) fail("tensor: gradient not populated");
    return node().grad;
  }

  void ensure_grad() const { node().grad_data(); }

  void zero_grad() const {
    auto& g = node().grad;
    g.assign(node().data.size(), 0.0);
  }

  // Reverse-mode sweep from a scalar root. Accumulates additively into every
  // grad-enabled ancestor. Interior nodes are single-use: a second sweep
  // touching them (same root or a sibling loss on the same forward) errors.
  void backward() const {
    detail::Node* root = &node();
    if (root->data.size() != 1) fail("backward: loss must be scalar, got " + shape_str(root->shape));
    if (!root->requires_grad) fail("backward: loss does not require grad");

    // Iterative DFS post-order over grad-requiring ancestors. The order list
    // holds owning pointers: clearing a consumer's parent links must not free
    // a producer that is still queued for its own backward step.
    std::vector<std::shared_ptr<detail::Node>> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<std::shared_ptr<detail::Node>, std::size_t>> stack;
    stack.emplace_back(n_, 0);
    seen.insert(root);
    while (!stack.empty()) {
      auto& [cur, idx] = stack.back();
      if (idx < cur->parents.size()) {
        std::shared_ptr<detail::Node> p = cur->parents[idx++];
        if (p->requires_grad && seen.insert(p.get()).second) stack.emplace_back(std::move(p), 0);
      } else {
        order.push_back(cur);
        stack.pop_back();
      }
    }

    for (const auto& n : order)
      if (n->consumed) fail("backward: already ran through this graph; rebuild the graph first");

    root->grad_data()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      detail::Node* n = it->get();
      if (n->backfn) {
        n->consumed = true;  // leaves stay reusable across graphs
        n->grad_data();      // guarantee allocated before the rule runs
        n->backfn(*n);
        n->backfn = nullptr;  // release captured tensors eagerly
      }
      n->parents.clear();
    }
  }

  detail::Node& node() const {
    if (!n_) fail("tensor: undefined handle");
    return *n_;
  }
  std::shared_ptr<detail::Node> impl() const { return n_; }

 private:
  std::shared_ptr<detail::Node> n_;
};

// Builds an op output node: allocates `shape`, wires `parents`, installs the
// backward rule iff grad mode is on and some parent requires grad.
inline Tensor make_op(Shape shape, const std::vector<Tensor>& parents,
                      std::function<void(detail::Node&)> backfn) {
  Tensor out(std::move(shape), false);
  bool track = detail::grad_mode();
  if (track) {
    bool any = false;
    for (const Tensor& p : parents) any = any || p.requires_grad();
    track = any;
  }
  if (track) {
    auto& n = out.node();
    n.requires_grad = true;
    n.parents.reserve(parents.size());
    for (const Tensor& p : parents) n.parents.push_back(p.impl());
    n.backfn = std::move(backfn);
  }
  return out;
}

}  // namespace grn
