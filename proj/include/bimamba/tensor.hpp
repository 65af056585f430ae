#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace bimamba {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Seeded generator shared by initializers, dropout and data synthesis.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}
  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  // Empty until a backward pass writes into it.
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads `self.grad` and accumulates into the parents' grads.
  std::function<void(Node& self)> backward_fn;
  const char* op = "leaf";

  bool is_leaf() const { return !backward_fn; }
  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

// Dense row-major float64 array that records the operations applied to it
// whenever gradient tracking is enabled and some input requires grad.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor ones(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false);
  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Mutating data of a tensor that is already part of a recorded graph
  // invalidates that graph; use on leaves (parameters, inputs) only.
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Copy of the values with no graph attached.
  Tensor detach() const;
  bool is_leaf() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  static Tensor from_node(std::shared_ptr<detail::Node> node);

 private:
  std::shared_ptr<detail::Node> node_;
};

// Disables graph recording on the current thread for the guard's lifetime.
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

// Builds the output node of an op. The node records `inputs` as parents and
// the backward rule only when grad mode is on and some input requires grad.
Tensor make_result(Shape shape, std::vector<double> data, const char* op,
                   std::vector<Tensor> inputs,
                   std::function<void(detail::Node& self)> backward_fn);

// Topologically ordered view of the graph that produced a root tensor.
// Every node appears after all of its parents.
class Tape {
 public:
  static Tape record(const Tensor& root);

  std::size_t size() const { return nodes_.size(); }
  const std::vector<std::shared_ptr<detail::Node>>& nodes() const { return nodes_; }

 private:
  std::vector<std::shared_ptr<detail::Node>> nodes_;
};

enum class GraphMode {
  kRelease,  // backward rules and parent links are dropped after use
  kRetain,   // the graph can be differentiated again
};

// Accumulates d(loss)/d(t) into the grad of every requires-grad leaf that
// reaches `loss`. Gradients add up across repeated calls until zero_grad.
void backward(const Tensor& loss, GraphMode mode = GraphMode::kRelease);

struct GradCheckOptions {
  double eps = 1e-5;
  // Coordinates checked per tensor; 0 means all of them.
  std::size_t max_coords = 0;
  std::uint64_t seed = 1234;
};

// Max over coordinates of |analytic - central difference| /
// max(1, |analytic|, |numeric|). Non-scalar outputs are contracted with a
// fixed random cotangent first.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                  double eps = 1e-5);

// Same measure for a scalar loss over several parameter tensors, perturbed
// in place and restored afterwards.
double grad_check_params(const std::function<Tensor()>& loss_fn, std::vector<Tensor> params,
                         const GradCheckOptions& options = {});

}  // namespace bimamba
