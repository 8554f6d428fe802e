#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace numkit {

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};
struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Thread-local tape switch. While disabled, ops produce plain values and
// record no parents; inference loops use this to avoid growing a graph.
bool grad_enabled();
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Dense double tensor with an optional reverse-mode tape. Ops in ops.hpp
// record parents and a backward closure on the produced node; backward()
// walks the graph once in reverse topological order. Graphs are not reused
// across steps.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor from_vector(const Shape& shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  // N(0, stddev) entries drawn in row-major order from rng.
  static Tensor randn(const Shape& shape, std::mt19937_64& rng, double stddev,
                      bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }

  const Shape& shape() const;
  int ndim() const;
  int dim(int i) const;
  int64_t size() const;
  int rows() const { return dim(0); }
  int cols() const { return dim(1); }

  std::vector<double>& data();
  const std::vector<double>& data() const;
  double value() const;  // scalar tensors only

  double& at(int i);
  double at(int i) const;
  double& at(int i, int j);
  double at(int i, int j) const;

  bool requires_grad() const;
  void set_requires_grad(bool v);

  bool has_grad() const;
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  void zero_grad();

  // Deep value copy with no tape history.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  bool all_finite() const;

  // Reverse-mode sweep from a scalar root. Populates grad on every
  // requires_grad node reachable through the tape.
  void backward();

  struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    int64_t size() const { return static_cast<int64_t>(data.size()); }
    void ensure_grad() {
      if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
  };

  std::shared_ptr<Node> node() const { return node_; }
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node> node_;
};

}  // namespace numkit
