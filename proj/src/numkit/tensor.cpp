#include "numkit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace numkit {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

static std::shared_ptr<Tensor::Node> make_node(const Shape& shape, bool requires_grad) {
  auto n = std::make_shared<Tensor::Node>();
  n->shape = shape;
  n->data.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
  n->requires_grad = requires_grad;
  return n;
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return Tensor(make_node(shape, requires_grad));
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  auto n = make_node(shape, requires_grad);
  std::fill(n->data.begin(), n->data.end(), value);
  return Tensor(n);
}

Tensor Tensor::from_vector(const Shape& shape, std::vector<double> values, bool requires_grad) {
  if (static_cast<int64_t>(values.size()) != shape_numel(shape))
    throw ShapeError("from_vector: " + std::to_string(values.size()) +
                     " values for shape " + shape_str(shape));
  auto n = std::make_shared<Node>();
  n->shape = shape;
  n->data = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(n);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_vector({1}, {value}, requires_grad);
}

Tensor Tensor::randn(const Shape& shape, std::mt19937_64& rng, double stddev, bool requires_grad) {
  auto n = make_node(shape, requires_grad);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (auto& v : n->data) v = dist(rng) * stddev;
  return Tensor(n);
}

const Shape& Tensor::shape() const { return node_->shape; }
int Tensor::ndim() const { return static_cast<int>(node_->shape.size()); }
int Tensor::dim(int i) const { return node_->shape.at(static_cast<size_t>(i)); }
int64_t Tensor::size() const { return node_->size(); }

std::vector<double>& Tensor::data() { return node_->data; }
const std::vector<double>& Tensor::data() const { return node_->data; }

double Tensor::value() const {
  if (size() != 1) throw UsageError("value(): tensor is not scalar, shape " + shape_str(shape()));
  return node_->data[0];
}

double& Tensor::at(int i) { return node_->data.at(static_cast<size_t>(i)); }
double Tensor::at(int i) const { return node_->data.at(static_cast<size_t>(i)); }
double& Tensor::at(int i, int j) {
  return node_->data.at(static_cast<size_t>(i) * dim(1) + j);
}
double Tensor::at(int i, int j) const {
  return node_->data.at(static_cast<size_t>(i) * dim(1) + j);
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
void Tensor::set_requires_grad(bool v) { node_->requires_grad = v; }

bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->data.size(); }
std::vector<double>& Tensor::grad() {
  node_->ensure_grad();
  return node_->grad;
}
const std::vector<double>& Tensor::grad() const {
  if (!has_grad()) throw UsageError("grad(): no gradient buffer present");
  return node_->grad;
}
void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

Tensor Tensor::detach() const {
  auto n = std::make_shared<Node>();
  n->shape = node_->shape;
  n->data = node_->data;
  n->requires_grad = false;
  return Tensor(n);
}

bool Tensor::all_finite() const {
  for (double v : node_->data)
    if (!std::isfinite(v)) return false;
  return true;
}

void Tensor::backward() {
  if (!defined()) throw UsageError("backward(): undefined tensor");
  if (size() != 1) throw UsageError("backward(): root must be scalar, shape " + shape_str(shape()));

  // Iterative post-order DFS over parents.
  std::vector<Node*> topo;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node* p = n->parents[idx++].get();
      if (!visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      topo.push_back(n);
      stack.pop_back();
    }
  }

  node_->ensure_grad();
  node_->grad[0] = 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->requires_grad) n->backward_fn(*n);
  }
}

}  // namespace numkit
