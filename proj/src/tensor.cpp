#include "bimamba/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "bimamba/errors.hpp"

namespace bimamba {

namespace {
thread_local bool g_grad_enabled = true;
}

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

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " holds " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(data.size()));
  }
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }
Tensor Tensor::ones(Shape shape, bool requires_grad) { return full(std::move(shape), 1.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.normal(0.0, stddev);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

static const detail::Node& checked(const std::shared_ptr<detail::Node>& n) {
  if (!n) throw ContractError("use of an undefined tensor");
  return *n;
}

const Shape& Tensor::shape() const { return checked(node_).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return checked(node_).data.size(); }
std::span<const double> Tensor::data() const { return checked(node_).data; }

std::span<double> Tensor::mutable_data() {
  checked(node_);
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw DimensionError("index rank does not match " + shape_str(s));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= s[axis]) throw IndexError("index " + std::to_string(i) + " out of range on axis " + std::to_string(axis));
    flat = flat * s[axis] + i;
    ++axis;
  }
  return node_->data[flat];
}

bool Tensor::requires_grad() const { return checked(node_).requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
  checked(node_);
  node_->requires_grad = value;
  return *this;
}

bool Tensor::has_grad() const { return !checked(node_).grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw ContractError("tensor has no gradient; run backward first");
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  checked(node_);
  return node_->ensure_grad();
}

void Tensor::zero_grad() {
  checked(node_);
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return Tensor(shape(), std::vector<double>(data().begin(), data().end())); }

bool Tensor::is_leaf() const { return checked(node_).is_leaf(); }

Tensor Tensor::from_node(std::shared_ptr<detail::Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Tensor make_result(Shape shape, std::vector<double> data, const char* op, std::vector<Tensor> inputs,
                   std::function<void(detail::Node& self)> backward_fn) {
  for (auto v : data) {
    if (!std::isfinite(v)) {
      bool inputs_finite = true;
      for (const auto& in : inputs) {
        for (auto x : in.data()) {
          if (!std::isfinite(x)) {
            inputs_finite = false;
            break;
          }
        }
      }
      if (inputs_finite) throw NumericError(std::string("op ") + op + " produced a non-finite value from finite inputs");
      break;
    }
  }
  Tensor out(std::move(shape), std::move(data));
  auto& node = *out.node();
  node.op = op;
  if (!g_grad_enabled) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  node.requires_grad = true;
  node.parents.reserve(inputs.size());
  for (auto& in : inputs) node.parents.push_back(in.node());
  node.backward_fn = std::move(backward_fn);
  return out;
}

Tape Tape::record(const Tensor& root) {
  Tape tape;
  if (!root.defined()) return tape;
  // Iterative post-order DFS; a node is emitted once all parents are.
  std::unordered_set<const detail::Node*> visited;
  std::vector<std::pair<std::shared_ptr<detail::Node>, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      auto parent = node->parents[next++];
      if (parent->requires_grad && visited.insert(parent.get()).second) stack.emplace_back(parent, 0);
    } else {
      tape.nodes_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

void backward(const Tensor& loss, GraphMode mode) {
  if (!loss.defined()) throw ContractError("backward on an undefined tensor");
  if (loss.numel() != 1) throw ContractError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  if (!loss.requires_grad()) throw ContractError("backward: loss is not on the tape (no input requires grad)");
  Tape tape = Tape::record(loss);
  const auto& nodes = tape.nodes();
  nodes.back()->ensure_grad()[0] += 1.0;
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    auto& node = **it;
    if (node.is_leaf()) continue;
    if (!node.grad.empty()) node.backward_fn(node);
    if (mode == GraphMode::kRelease) {
      node.backward_fn = nullptr;
      node.parents.clear();
      node.grad.clear();
      node.grad.shrink_to_fit();
      node.requires_grad = false;
    } else {
      std::fill(node.grad.begin(), node.grad.end(), 0.0);
    }
  }
}

namespace {

double rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

std::vector<std::size_t> pick_coords(std::size_t n, std::size_t max_coords, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  if (max_coords == 0 || max_coords >= n) return idx;
  std::shuffle(idx.begin(), idx.end(), rng.engine());
  idx.resize(max_coords);
  std::sort(idx.begin(), idx.end());
  return idx;
}

void check_eps(double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) throw ContractError("grad_check eps must lie in [1e-7, 1e-3]");
}

}  // namespace

double grad_check_params(const std::function<Tensor()>& loss_fn, std::vector<Tensor> params,
                         const GradCheckOptions& options) {
  check_eps(options.eps);
  auto eval = [&](std::size_t tensor_index, std::size_t coord) {
    NoGradGuard guard;
    Tensor out = loss_fn();
    double v = out.item();
    if (!std::isfinite(v)) {
      throw NumericError("grad_check: non-finite loss at tensor " + std::to_string(tensor_index) + " coordinate " +
                         std::to_string(coord));
    }
    return v;
  };
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  Tensor loss = loss_fn();
  if (!std::isfinite(loss.item())) throw NumericError("grad_check: non-finite loss at the base point");
  backward(loss);

  Rng rng(options.seed);
  double worst = 0.0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& p = params[t];
    std::vector<double> analytic = p.has_grad() ? std::vector<double>(p.grad().begin(), p.grad().end())
                                                : std::vector<double>(p.numel(), 0.0);
    auto data = p.mutable_data();
    for (auto i : pick_coords(p.numel(), options.max_coords, rng)) {
      const double saved = data[i];
      data[i] = saved + options.eps;
      const double up = eval(t, i);
      data[i] = saved - options.eps;
      const double down = eval(t, i);
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * options.eps);
      if (!std::isfinite(analytic[i])) {
        throw NumericError("grad_check: non-finite analytic gradient at tensor " + std::to_string(t) +
                           " coordinate " + std::to_string(i));
      }
      worst = std::max(worst, rel_error(analytic[i], numeric));
    }
  }
  return worst;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
  check_eps(eps);
  Tensor input = x.detach();
  input.set_requires_grad(true);
  Tensor probe;
  {
    NoGradGuard guard;
    probe = f(input);
  }
  Tensor cotangent;
  if (probe.numel() != 1) {
    Rng rng(97);
    cotangent = Tensor::uniform(probe.shape(), rng, -1.0, 1.0);
  }
  auto contracted = [&]() -> Tensor {
    Tensor y = f(input);
    if (!cotangent.defined()) return y;
    // Local dot product so grad_check does not depend on the op library.
    const auto yv = y.data();
    const auto cv = cotangent.data();
    double s = 0.0;
    for (std::size_t i = 0; i < yv.size(); ++i) s += yv[i] * cv[i];
    std::vector<double> cvec(cv.begin(), cv.end());
    return make_result({}, {s}, "dot", {y}, [cvec](detail::Node& self) {
      auto& parent = *self.parents[0];
      if (!parent.requires_grad) return;
      auto& g = parent.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * cvec[i];
    });
  };
  GradCheckOptions options;
  options.eps = eps;
  return grad_check_params(contracted, {input}, options);
}

}  // namespace bimamba
