#include "bimamba/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "bimamba/errors.hpp"

namespace bimamba::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;

bool wants_grad(const detail::Node& n) { return n.requires_grad; }

// Output shape and per-input strides for numpy-style broadcasting.
struct Broadcast {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
};

std::vector<std::size_t> natural_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

Broadcast broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
  const std::size_t rank = std::max(a.size(), b.size());
  Broadcast bc;
  bc.out.assign(rank, 1);
  bc.stride_a.assign(rank, 0);
  bc.stride_b.assign(rank, 0);
  const auto sa = natural_strides(a);
  const auto sb = natural_strides(b);
  for (std::size_t d = 0; d < rank; ++d) {
    const std::size_t off_a = rank - a.size();
    const std::size_t off_b = rank - b.size();
    const std::size_t da = d >= off_a ? a[d - off_a] : 1;
    const std::size_t db = d >= off_b ? b[d - off_b] : 1;
    if (da != db && da != 1 && db != 1) {
      throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b) +
                           " (axis " + std::to_string(d) + ": " + std::to_string(da) + " vs " +
                           std::to_string(db) + ")");
    }
    bc.out[d] = std::max(da, db);
    if (d >= off_a && da != 1) bc.stride_a[d] = sa[d - off_a];
    if (d >= off_b && db != 1) bc.stride_b[d] = sb[d - off_b];
  }
  return bc;
}

// Calls fn(out_index, a_offset, b_offset) for every output element in order.
template <typename Fn>
void for_each_broadcast(const Broadcast& bc, Fn&& fn) {
  const std::size_t rank = bc.out.size();
  const std::size_t n = shape_numel(bc.out);
  if (rank == 0) {
    fn(0, 0, 0);
    return;
  }
  std::vector<std::size_t> counter(rank, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t i = 0; i < n; ++i) {
    fn(i, oa, ob);
    for (std::size_t d = rank; d-- > 0;) {
      ++counter[d];
      oa += bc.stride_a[d];
      ob += bc.stride_b[d];
      if (counter[d] < bc.out[d]) break;
      oa -= bc.stride_a[d] * counter[d];
      ob -= bc.stride_b[d] * counter[d];
      counter[d] = 0;
    }
  }
}

enum class BinaryKind { kAdd, kSub, kMul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind, const char* name) {
  const auto av = a.data();
  const auto bv = b.data();
  if (a.shape() == b.shape()) {
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = kind == BinaryKind::kAdd ? av[i] + bv[i] : kind == BinaryKind::kSub ? av[i] - bv[i] : av[i] * bv[i];
    }
    return make_result(a.shape(), std::move(out), name, {a, b}, [kind](detail::Node& self) {
      auto& pa = *self.parents[0];
      auto& pb = *self.parents[1];
      const auto& g = self.grad;
      if (wants_grad(pa)) {
        auto& ga = pa.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += kind == BinaryKind::kMul ? g[i] * pb.data[i] : g[i];
      }
      if (wants_grad(pb)) {
        auto& gb = pb.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
          gb[i] += kind == BinaryKind::kMul ? g[i] * pa.data[i] : kind == BinaryKind::kSub ? -g[i] : g[i];
        }
      }
    });
  }
  Broadcast bc = broadcast_shapes(a.shape(), b.shape(), name);
  std::vector<double> out(shape_numel(bc.out));
  for_each_broadcast(bc, [&](std::size_t i, std::size_t ia, std::size_t ib) {
    out[i] = kind == BinaryKind::kAdd   ? av[ia] + bv[ib]
             : kind == BinaryKind::kSub ? av[ia] - bv[ib]
                                        : av[ia] * bv[ib];
  });
  Shape out_shape = bc.out;
  return make_result(std::move(out_shape), std::move(out), name, {a, b}, [kind, bc](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const auto& g = self.grad;
    if (wants_grad(pa)) {
      auto& ga = pa.ensure_grad();
      for_each_broadcast(bc, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        ga[ia] += kind == BinaryKind::kMul ? g[i] * pb.data[ib] : g[i];
      });
    }
    if (wants_grad(pb)) {
      auto& gb = pb.ensure_grad();
      for_each_broadcast(bc, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        gb[ib] += kind == BinaryKind::kMul ? g[i] * pa.data[ia] : kind == BinaryKind::kSub ? -g[i] : g[i];
      });
    }
  });
}

// Elementwise unary op whose derivative is a function of (input, output).
template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, const char* name, Fwd fwd, Deriv deriv) {
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  return make_result(x.shape(), std::move(out), name, {x}, [deriv](detail::Node& self) {
    auto& p = *self.parents[0];
    if (!wants_grad(p)) return;
    auto& gp = p.ensure_grad();
    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += self.grad[i] * deriv(p.data[i], self.data[i]);
  });
}

double stable_sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

double stable_softplus(double v) { return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); }

// Decomposes a shape around `axis` into (outer, axis length, inner).
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(s));
  }
  AxisSplit r;
  for (std::size_t d = 0; d < axis; ++d) r.outer *= s[d];
  r.len = s[axis];
  for (std::size_t d = axis + 1; d < s.size(); ++d) r.inner *= s[d];
  return r;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kAdd, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kSub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kMul, "mul"); }

Tensor scale(const Tensor& x, double factor) {
  return unary(x, "scale", [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary(x, "add_scalar", [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor exp(const Tensor& x) {
  return unary(x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, "sigmoid", stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& x) {
  return unary(x, "relu", [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor silu(const Tensor& x) {
  return unary(
      x, "silu", [](double v) { return v * stable_sigmoid(v); },
      [](double v, double) {
        const double s = stable_sigmoid(v);
        return s * (1.0 + v * (1.0 - s));
      });
}

Tensor softplus(const Tensor& x) {
  return unary(x, "softplus", stable_softplus, [](double v, double) { return stable_sigmoid(v); });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() != 2) {
    throw DimensionError("matmul expects [..., M, K] x [K, N], got " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const std::size_t k = a.shape().back();
  if (k != b.dim(0)) {
    throw DimensionError("matmul: inner axes differ (a axis " + std::to_string(a.rank() - 1) + " = " +
                         std::to_string(k) + ", b axis 0 = " + std::to_string(b.dim(0)) + ")");
  }
  const std::size_t m = a.numel() / k;
  const std::size_t n = b.dim(1);
  std::vector<double> out(m * n);
  MapMat(out.data(), m, n).noalias() = MapConstMat(a.data().data(), m, k) * MapConstMat(b.data().data(), k, n);
  Shape shape = a.shape();
  shape.back() = n;
  return make_result(std::move(shape), std::move(out), "matmul", {a, b}, [m, k, n](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    MapConstMat g(self.grad.data(), m, n);
    if (wants_grad(pa)) {
      MapMat(pa.ensure_grad().data(), m, k).noalias() += g * MapConstMat(pb.data.data(), k, n).transpose();
    }
    if (wants_grad(pb)) {
      MapMat(pb.ensure_grad().data(), k, n).noalias() += MapConstMat(pa.data.data(), m, k).transpose() * g;
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 2 || x.rank() < 1) {
    throw DimensionError("linear expects x [..., in] and weight [out, in], got " + shape_str(x.shape()) + " and " +
                         shape_str(weight.shape()));
  }
  const std::size_t in = weight.dim(1);
  const std::size_t out_dim = weight.dim(0);
  if (x.shape().back() != in) {
    throw DimensionError("linear: x last axis " + std::to_string(x.shape().back()) + " != weight axis 1 " +
                         std::to_string(in));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_dim)) {
    throw DimensionError("linear: bias shape " + shape_str(bias.shape()) + " does not match weight axis 0 " +
                         std::to_string(out_dim));
  }
  const std::size_t m = x.numel() / in;
  std::vector<double> out(m * out_dim);
  MapMat y(out.data(), m, out_dim);
  y.noalias() = MapConstMat(x.data().data(), m, in) * MapConstMat(weight.data().data(), out_dim, in).transpose();
  if (bias.defined()) {
    y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(), out_dim);
  }
  Shape shape = x.shape();
  shape.back() = out_dim;
  std::vector<Tensor> inputs{x, weight};
  const bool has_bias = bias.defined();
  if (has_bias) inputs.push_back(bias);
  return make_result(std::move(shape), std::move(out), "linear", std::move(inputs),
                     [m, in, out_dim, has_bias](detail::Node& self) {
                       auto& px = *self.parents[0];
                       auto& pw = *self.parents[1];
                       MapConstMat g(self.grad.data(), m, out_dim);
                       if (wants_grad(px)) {
                         MapMat(px.ensure_grad().data(), m, in).noalias() +=
                             g * MapConstMat(pw.data.data(), out_dim, in);
                       }
                       if (wants_grad(pw)) {
                         MapMat(pw.ensure_grad().data(), out_dim, in).noalias() +=
                             g.transpose() * MapConstMat(px.data.data(), m, in);
                       }
                       if (has_bias && wants_grad(*self.parents[2])) {
                         auto& gb = self.parents[2]->ensure_grad();
                         for (std::size_t r = 0; r < m; ++r) {
                           for (std::size_t c = 0; c < out_dim; ++c) gb[c] += g(r, c);
                         }
                       }
                     });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (auto v : x.data()) s += v;
  return make_result({}, {s}, "sum", {x}, [](detail::Node& self) {
    auto& p = *self.parents[0];
    if (!wants_grad(p)) return;
    for (auto& g : p.ensure_grad()) g += self.grad[0];
  });
}

Tensor sum(const Tensor& x, std::size_t axis, bool keepdim) {
  const auto sp = split_axis(x.shape(), axis, "sum");
  const auto xv = x.data();
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t a = 0; a < sp.len; ++a) {
      const double* row = xv.data() + (o * sp.len + a) * sp.inner;
      double* dst = out.data() + o * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += row[i];
    }
  }
  Shape shape = x.shape();
  if (keepdim) {
    shape[axis] = 1;
  } else {
    shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  return make_result(std::move(shape), std::move(out), "sum_axis", {x}, [sp](detail::Node& self) {
    auto& p = *self.parents[0];
    if (!wants_grad(p)) return;
    auto& gp = p.ensure_grad();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t a = 0; a < sp.len; ++a) {
        double* dst = gp.data() + (o * sp.len + a) * sp.inner;
        const double* g = self.grad.data() + o * sp.inner;
        for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += g[i];
      }
    }
  });
}

Tensor mean(const Tensor& x, std::size_t axis, bool keepdim) {
  const auto len = x.dim(axis);
  if (len == 0) throw DomainError("mean over an empty axis " + std::to_string(axis));
  return scale(sum(x, axis, keepdim), 1.0 / static_cast<double>(len));
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape) + " changes element count");
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), "reshape", {x}, [](detail::Node& self) {
    auto& p = *self.parents[0];
    if (!wants_grad(p)) return;
    auto& gp = p.ensure_grad();
    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += self.grad[i];
  });
}

Tensor transpose(const Tensor& x, std::size_t axis_a, std::size_t axis_b) {
  const Shape& in_shape = x.shape();
  if (axis_a >= in_shape.size() || axis_b >= in_shape.size()) {
    throw DimensionError("transpose axes (" + std::to_string(axis_a) + ", " + std::to_string(axis_b) +
                         ") out of range for shape " + shape_str(in_shape));
  }
  Shape out_shape = in_shape;
  std::swap(out_shape[axis_a], out_shape[axis_b]);
  // Source offset for each destination index, walked with strided counters.
  auto src_strides = natural_strides(in_shape);
  std::swap(src_strides[axis_a], src_strides[axis_b]);
  const std::size_t n = x.numel();
  std::vector<std::size_t> src_index(n);
  {
    Broadcast walk;
    walk.out = out_shape;
    walk.stride_a = src_strides;
    walk.stride_b.assign(out_shape.size(), 0);
    for_each_broadcast(walk, [&](std::size_t i, std::size_t ia, std::size_t) { src_index[i] = ia; });
  }
  const auto xv = x.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = xv[src_index[i]];
  return make_result(std::move(out_shape), std::move(out), "transpose", {x},
                     [src_index = std::move(src_index)](detail::Node& self) {
                       auto& p = *self.parents[0];
                       if (!wants_grad(p)) return;
                       auto& gp = p.ensure_grad();
                       for (std::size_t i = 0; i < src_index.size(); ++i) gp[src_index[i]] += self.grad[i];
                     });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  const auto sp = split_axis(x.shape(), axis, "slice");
  if (start + length > sp.len) {
    throw DimensionError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") exceeds axis " + std::to_string(axis) + " of length " + std::to_string(sp.len));
  }
  const auto xv = x.data();
  std::vector<double> out(sp.outer * length * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(xv.data() + (o * sp.len + start) * sp.inner, length * sp.inner,
                out.data() + o * length * sp.inner);
  }
  Shape shape = x.shape();
  shape[axis] = length;
  return make_result(std::move(shape), std::move(out), "slice", {x}, [sp, start, length](detail::Node& self) {
    auto& p = *self.parents[0];
    if (!wants_grad(p)) return;
    auto& gp = p.ensure_grad();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      double* dst = gp.data() + (o * sp.len + start) * sp.inner;
      const double* g = self.grad.data() + o * length * sp.inner;
      for (std::size_t i = 0; i < length * sp.inner; ++i) dst[i] += g[i];
    }
  });
}

namespace {

struct ConvGeometry {
  std::size_t batch, c_in, length, c_out, k, stride, padding, out_len;
};

// col[(ci*k + j), t] = x[ci, t*stride + j - padding], zero outside the signal.
void im2col(const double* x, const ConvGeometry& g, double* col) {
  for (std::size_t ci = 0; ci < g.c_in; ++ci) {
    for (std::size_t j = 0; j < g.k; ++j) {
      double* row = col + (ci * g.k + j) * g.out_len;
      for (std::size_t t = 0; t < g.out_len; ++t) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * g.stride + j) - static_cast<std::ptrdiff_t>(g.padding);
        row[t] = (src >= 0 && src < static_cast<std::ptrdiff_t>(g.length)) ? x[ci * g.length + src] : 0.0;
      }
    }
  }
}

void col2im_add(const double* col, const ConvGeometry& g, double* dx) {
  for (std::size_t ci = 0; ci < g.c_in; ++ci) {
    for (std::size_t j = 0; j < g.k; ++j) {
      const double* row = col + (ci * g.k + j) * g.out_len;
      for (std::size_t t = 0; t < g.out_len; ++t) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * g.stride + j) - static_cast<std::ptrdiff_t>(g.padding);
        if (src >= 0 && src < static_cast<std::ptrdiff_t>(g.length)) dx[ci * g.length + src] += row[t];
      }
    }
  }
}

}  // namespace

Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride, std::size_t padding) {
  if (x.rank() != 2 && x.rank() != 3) {
    throw DimensionError("conv1d input must be [C_in, L] or [B, C_in, L], got " + shape_str(x.shape()));
  }
  if (weight.rank() != 3) throw DimensionError("conv1d weight must be [C_out, C_in, k], got " + shape_str(weight.shape()));
  if (stride < 1) throw ContractError("conv1d stride must be >= 1");
  const bool batched = x.rank() == 3;
  ConvGeometry g{};
  g.batch = batched ? x.dim(0) : 1;
  g.c_in = x.dim(batched ? 1 : 0);
  g.length = x.dim(batched ? 2 : 1);
  g.c_out = weight.dim(0);
  g.k = weight.dim(2);
  g.stride = stride;
  g.padding = padding;
  if (weight.dim(1) != g.c_in) {
    throw DimensionError("conv1d: input channel axis " + std::to_string(batched ? 1 : 0) + " = " +
                         std::to_string(g.c_in) + " but weight axis 1 = " + std::to_string(weight.dim(1)));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.c_out)) {
    throw DimensionError("conv1d: bias shape " + shape_str(bias.shape()) + " does not match weight axis 0 = " +
                         std::to_string(g.c_out));
  }
  if (g.k == 0 || g.k > g.length + 2 * padding) {
    throw DimensionError("conv1d: kernel axis 2 = " + std::to_string(g.k) + " exceeds padded length axis " +
                         std::to_string(batched ? 2 : 1) + " = " + std::to_string(g.length + 2 * padding));
  }
  g.out_len = (g.length + 2 * padding - g.k) / stride + 1;

  const std::size_t patch = g.c_in * g.k;
  std::vector<double> out(g.batch * g.c_out * g.out_len);
  std::vector<double> col(patch * g.out_len);
  MapConstMat w(weight.data().data(), g.c_out, patch);
  for (std::size_t b = 0; b < g.batch; ++b) {
    im2col(x.data().data() + b * g.c_in * g.length, g, col.data());
    MapMat y(out.data() + b * g.c_out * g.out_len, g.c_out, g.out_len);
    y.noalias() = w * MapConstMat(col.data(), patch, g.out_len);
    if (bias.defined()) {
      for (std::size_t c = 0; c < g.c_out; ++c) y.row(static_cast<Eigen::Index>(c)).array() += bias.data()[c];
    }
  }
  Shape shape = batched ? Shape{g.batch, g.c_out, g.out_len} : Shape{g.c_out, g.out_len};
  std::vector<Tensor> inputs{x, weight};
  const bool has_bias = bias.defined();
  if (has_bias) inputs.push_back(bias);
  return make_result(std::move(shape), std::move(out), "conv1d", std::move(inputs), [g, has_bias](detail::Node& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    const std::size_t patch = g.c_in * g.k;
    std::vector<double> col(patch * g.out_len);
    std::vector<double> dcol(patch * g.out_len);
    MapConstMat w(pw.data.data(), g.c_out, patch);
    for (std::size_t b = 0; b < g.batch; ++b) {
      MapConstMat dy(self.grad.data() + b * g.c_out * g.out_len, g.c_out, g.out_len);
      if (wants_grad(pw)) {
        im2col(px.data.data() + b * g.c_in * g.length, g, col.data());
        MapMat(pw.ensure_grad().data(), g.c_out, patch).noalias() +=
            dy * MapConstMat(col.data(), patch, g.out_len).transpose();
      }
      if (wants_grad(px)) {
        MapMat(dcol.data(), patch, g.out_len).noalias() = w.transpose() * dy;
        col2im_add(dcol.data(), g, px.ensure_grad().data() + b * g.c_in * g.length);
      }
      if (has_bias && wants_grad(*self.parents[2])) {
        auto& gb = self.parents[2]->ensure_grad();
        for (std::size_t c = 0; c < g.c_out; ++c) {
          for (std::size_t t = 0; t < g.out_len; ++t) gb[c] += dy(c, t);
        }
      }
    }
  });
}

Tensor depthwise_causal_conv(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 3) throw DimensionError("depthwise_causal_conv expects x [B, T, E], got " + shape_str(x.shape()));
  const std::size_t batch = x.dim(0), steps = x.dim(1), ch = x.dim(2);
  if (weight.rank() != 2 || weight.dim(0) != ch) {
    throw DimensionError("depthwise_causal_conv: weight " + shape_str(weight.shape()) + " must be [E=" +
                         std::to_string(ch) + ", k]");
  }
  if (bias.rank() != 1 || bias.dim(0) != ch) {
    throw DimensionError("depthwise_causal_conv: bias " + shape_str(bias.shape()) + " must be [E=" +
                         std::to_string(ch) + "]");
  }
  const std::size_t k = weight.dim(1);
  const auto xv = x.data();
  const auto wv = weight.data();
  const auto bv = bias.data();
  std::vector<double> out(xv.size());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < steps; ++t) {
      double* dst = out.data() + (b * steps + t) * ch;
      for (std::size_t e = 0; e < ch; ++e) dst[e] = bv[e];
      for (std::size_t j = 0; j < k; ++j) {
        const std::size_t lag = k - 1 - j;
        if (lag > t) continue;
        const double* src = xv.data() + (b * steps + t - lag) * ch;
        for (std::size_t e = 0; e < ch; ++e) dst[e] += wv[e * k + j] * src[e];
      }
    }
  }
  return make_result(x.shape(), std::move(out), "depthwise_causal_conv", {x, weight, bias},
                     [batch, steps, ch, k](detail::Node& self) {
                       auto& px = *self.parents[0];
                       auto& pw = *self.parents[1];
                       auto& pb = *self.parents[2];
                       const auto& g = self.grad;
                       if (wants_grad(pb)) {
                         auto& gb = pb.ensure_grad();
                         for (std::size_t r = 0; r < batch * steps; ++r) {
                           for (std::size_t e = 0; e < ch; ++e) gb[e] += g[r * ch + e];
                         }
                       }
                       for (std::size_t b = 0; b < batch; ++b) {
                         for (std::size_t t = 0; t < steps; ++t) {
                           const double* gt = g.data() + (b * steps + t) * ch;
                           for (std::size_t j = 0; j < k; ++j) {
                             const std::size_t lag = k - 1 - j;
                             if (lag > t) continue;
                             const std::size_t src = (b * steps + t - lag) * ch;
                             if (wants_grad(pw)) {
                               auto& gw = pw.ensure_grad();
                               for (std::size_t e = 0; e < ch; ++e) gw[e * k + j] += gt[e] * px.data[src + e];
                             }
                             if (wants_grad(px)) {
                               auto& gx = px.ensure_grad();
                               for (std::size_t e = 0; e < ch; ++e) gx[src + e] += gt[e] * pw.data[e * k + j];
                             }
                           }
                         }
                       }
                     });
}

Tensor max_pool1d(const Tensor& x, std::size_t kernel, std::size_t stride) {
  if (x.rank() != 2 && x.rank() != 3) throw DimensionError("max_pool1d expects [C, L] or [B, C, L], got " + shape_str(x.shape()));
  if (kernel < 1 || stride < 1) throw ContractError("max_pool1d kernel and stride must be >= 1");
  const std::size_t len = x.shape().back();
  if (kernel > len) {
    throw DimensionError("max_pool1d: kernel " + std::to_string(kernel) + " exceeds length axis " +
                         std::to_string(x.rank() - 1) + " = " + std::to_string(len));
  }
  const std::size_t rows = x.numel() / len;
  const std::size_t out_len = (len - kernel) / stride + 1;
  const auto xv = x.data();
  std::vector<double> out(rows * out_len);
  std::vector<std::size_t> argmax(rows * out_len);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t t = 0; t < out_len; ++t) {
      std::size_t best = r * len + t * stride;
      for (std::size_t j = 1; j < kernel; ++j) {
        const std::size_t idx = r * len + t * stride + j;
        if (xv[idx] > xv[best]) best = idx;
      }
      out[r * out_len + t] = xv[best];
      argmax[r * out_len + t] = best;
    }
  }
  Shape shape = x.shape();
  shape.back() = out_len;
  return make_result(std::move(shape), std::move(out), "max_pool1d", {x},
                     [argmax = std::move(argmax)](detail::Node& self) {
                       auto& p = *self.parents[0];
                       if (!wants_grad(p)) return;
                       auto& gp = p.ensure_grad();
                       for (std::size_t i = 0; i < argmax.size(); ++i) gp[argmax[i]] += self.grad[i];
                     });
}

Tensor dropout(const Tensor& x, double p, bool train, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw DomainError("dropout probability must lie in [0, 1)");
  if (!train || p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(x.numel());
  for (auto& m : mask) m = rng.uniform() >= p ? keep_scale : 0.0;
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * mask[i];
  return make_result(x.shape(), std::move(out), "dropout", {x}, [mask = std::move(mask)](detail::Node& self) {
    auto& px = *self.parents[0];
    if (!wants_grad(px)) return;
    auto& gp = px.ensure_grad();
    for (std::size_t i = 0; i < mask.size(); ++i) gp[i] += self.grad[i] * mask[i];
  });
}

Tensor reverse(const Tensor& x, std::size_t axis, std::span<const std::size_t> lengths) {
  const auto sp = split_axis(x.shape(), axis, "reverse");
  if (!lengths.empty()) {
    if (axis == 0 || lengths.size() != x.dim(0)) {
      throw DimensionError("reverse: lengths need a batch axis 0 of size " + std::to_string(lengths.size()) +
                           " and a time axis > 0");
    }
  }
  // Elements per batch entry along the outer block.
  const std::size_t per_batch_outer = lengths.empty() ? sp.outer : sp.outer / x.dim(0);
  std::vector<std::size_t> src(x.numel());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::size_t valid = sp.len;
    if (!lengths.empty()) {
      valid = lengths[o / per_batch_outer];
      if (valid > sp.len) throw DimensionError("reverse: length " + std::to_string(valid) + " exceeds axis size");
    }
    for (std::size_t a = 0; a < sp.len; ++a) {
      const std::size_t from = a < valid ? valid - 1 - a : a;
      for (std::size_t i = 0; i < sp.inner; ++i) {
        src[(o * sp.len + a) * sp.inner + i] = (o * sp.len + from) * sp.inner + i;
      }
    }
  }
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[src[i]];
  return make_result(x.shape(), std::move(out), "reverse", {x}, [src = std::move(src)](detail::Node& self) {
    auto& p = *self.parents[0];
    if (!wants_grad(p)) return;
    auto& gp = p.ensure_grad();
    for (std::size_t i = 0; i < src.size(); ++i) gp[src[i]] += self.grad[i];
  });
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw DimensionError("softmax_cross_entropy expects logits [B, K], got " + shape_str(logits.shape()));
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != batch) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch axis 0 = " +
                         std::to_string(batch));
  }
  if (batch == 0) throw DimensionError("softmax_cross_entropy: empty batch");
  const auto lv = logits.data();
  std::vector<double> probs(lv.size());
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const int label = labels[b];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw IndexError("softmax_cross_entropy: label " + std::to_string(label) + " at batch index " +
                       std::to_string(b) + " outside [0, " + std::to_string(classes) + ")");
    }
    const double* row = lv.data() + b * classes;
    const double mx = *std::max_element(row, row + classes);
    double z = 0.0;
    for (std::size_t c = 0; c < classes; ++c) z += std::exp(row[c] - mx);
    const double log_z = std::log(z) + mx;
    for (std::size_t c = 0; c < classes; ++c) probs[b * classes + c] = std::exp(row[c] - log_z);
    total += log_z - row[label];
  }
  std::vector<int> saved(labels.begin(), labels.end());
  return make_result({}, {total / static_cast<double>(batch)}, "softmax_cross_entropy", {logits},
                     [probs = std::move(probs), saved = std::move(saved), batch, classes](detail::Node& self) {
                       auto& p = *self.parents[0];
                       if (!wants_grad(p)) return;
                       auto& gp = p.ensure_grad();
                       const double s = self.grad[0] / static_cast<double>(batch);
                       for (std::size_t b = 0; b < batch; ++b) {
                         for (std::size_t c = 0; c < classes; ++c) {
                           const double target = static_cast<int>(c) == saved[b] ? 1.0 : 0.0;
                           gp[b * classes + c] += s * (probs[b * classes + c] - target);
                         }
                       }
                     });
}

}  // namespace bimamba::ops
