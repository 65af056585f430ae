#include "bimamba/ssm.hpp"

#include <cmath>

#include "bimamba/errors.hpp"
#include "bimamba/ops.hpp"

namespace bimamba::ssm {

double zoh_phi(double z) {
  if (std::abs(z) < 1e-4) return 1.0 + z * (0.5 + z * (1.0 / 6.0 + z * (1.0 / 24.0 + z / 120.0)));
  return std::expm1(z) / z;
}

double zoh_phi_derivative(double z) {
  if (std::abs(z) < 0.05) {
    // sum_{m>=2} (m-1)/m! z^(m-2)
    return 0.5 + z * (1.0 / 3.0 + z * (1.0 / 8.0 + z * (1.0 / 30.0 + z * (1.0 / 144.0 + z * (1.0 / 840.0)))));
  }
  const double e = std::exp(z);
  return (z * e - std::expm1(z)) / (z * z);
}

DiscreteSsm zoh_discretize(const SsmParams& p) {
  if (!(p.delta > 0.0) || !std::isfinite(p.delta)) throw DomainError("zoh_discretize: delta must be finite and > 0");
  const std::size_t n = p.state_dim();
  if (p.B.size() != n || p.C.size() != n) {
    throw DimensionError("zoh_discretize: A, B, C must share state dimension " + std::to_string(n));
  }
  DiscreteSsm d;
  d.A_bar.resize(n);
  d.B_bar.resize(n);
  d.C = p.C;
  d.D = p.D;
  d.selective = p.selective;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(p.A[i])) throw DomainError("zoh_discretize: A[" + std::to_string(i) + "] is not finite");
    const double z = p.delta * p.A[i];
    d.A_bar[i] = std::exp(z);
    d.B_bar[i] = p.B[i] * p.delta * zoh_phi(z);
  }
  return d;
}

namespace {

void check_discrete(const DiscreteSsm& d) {
  const auto n = d.state_dim();
  if (d.B_bar.size() != n || d.C.size() != n) {
    throw DimensionError("discrete SSM: A_bar, B_bar, C lengths differ");
  }
}

}  // namespace

Tensor ssm_scan(const DiscreteSsm& d, const Tensor& x) {
  check_discrete(d);
  if (x.rank() != 1) throw DimensionError("ssm_scan expects x [L], got " + shape_str(x.shape()));
  const std::size_t len = x.numel(), n = d.state_dim();
  const auto xv = x.data();
  std::vector<double> h(n, 0.0);
  std::vector<double> y(len);
  for (std::size_t t = 0; t < len; ++t) {
    double acc = d.D * xv[t];
    for (std::size_t i = 0; i < n; ++i) {
      h[i] = d.A_bar[i] * h[i] + d.B_bar[i] * xv[t];
      acc += d.C[i] * h[i];
    }
    y[t] = acc;
  }
  return make_result({len}, std::move(y), "ssm_scan", {x}, [d, len, n](detail::Node& self) {
    auto& px = *self.parents[0];
    if (!px.requires_grad) return;
    auto& gx = px.ensure_grad();
    std::vector<double> lambda(n, 0.0);
    for (std::size_t t = len; t-- > 0;) {
      const double gy = self.grad[t];
      double acc = d.D * gy;
      for (std::size_t i = 0; i < n; ++i) {
        lambda[i] = d.C[i] * gy + (t + 1 < len ? d.A_bar[i] * lambda[i] : 0.0);
        acc += d.B_bar[i] * lambda[i];
      }
      gx[t] += acc;
    }
  });
}

SsmKernel ssm_conv_kernel(const DiscreteSsm& d, std::size_t length) {
  check_discrete(d);
  if (d.selective) throw ModeError("convolutional form requires time-invariant parameters");
  if (length < 1) throw DomainError("ssm_conv_kernel: length must be >= 1");
  SsmKernel k;
  k.values.assign(length, 0.0);
  for (std::size_t i = 0; i < d.state_dim(); ++i) {
    double power = 1.0;
    for (std::size_t j = 0; j < length; ++j) {
      k.values[j] += d.C[i] * power * d.B_bar[i];
      power *= d.A_bar[i];
    }
  }
  return k;
}

Tensor ssm_conv_apply(const SsmKernel& kernel, const DiscreteSsm& d, const Tensor& x) {
  if (x.rank() != 1) throw DimensionError("ssm_conv_apply expects x [L], got " + shape_str(x.shape()));
  const std::size_t len = x.numel();
  if (kernel.length() != len) {
    throw DimensionError("ssm_conv_apply: kernel length " + std::to_string(kernel.length()) +
                         " != input axis 0 length " + std::to_string(len));
  }
  const auto xv = x.data();
  const auto& k = kernel.values;
  std::vector<double> y(len);
  for (std::size_t t = 0; t < len; ++t) {
    double acc = d.D * xv[t];
    for (std::size_t j = 0; j <= t; ++j) acc += k[j] * xv[t - j];
    y[t] = acc;
  }
  const double dd = d.D;
  return make_result({len}, std::move(y), "ssm_conv_apply", {x}, [k, dd, len](detail::Node& self) {
    auto& px = *self.parents[0];
    if (!px.requires_grad) return;
    auto& gx = px.ensure_grad();
    for (std::size_t s = 0; s < len; ++s) {
      double acc = dd * self.grad[s];
      for (std::size_t t = s; t < len; ++t) acc += k[t - s] * self.grad[t];
      gx[s] += acc;
    }
  });
}

Tensor selective_scan(const Tensor& u, const Tensor& delta, const Tensor& A, const Tensor& b, const Tensor& c,
                      const Tensor& D) {
  if (u.rank() != 3) throw DimensionError("selective_scan: u must be [B, T, E], got " + shape_str(u.shape()));
  const std::size_t batch = u.dim(0), steps = u.dim(1), ch = u.dim(2);
  if (delta.shape() != u.shape()) {
    throw DimensionError("selective_scan: delta " + shape_str(delta.shape()) + " must match u " + shape_str(u.shape()));
  }
  if (A.rank() != 2 || A.dim(0) != ch) throw DimensionError("selective_scan: A must be [E, N], got " + shape_str(A.shape()));
  const std::size_t n = A.dim(1);
  const Shape bc_shape{batch, steps, n};
  if (b.shape() != bc_shape || c.shape() != bc_shape) {
    throw DimensionError("selective_scan: b and c must be " + shape_str(bc_shape) + ", got " + shape_str(b.shape()) +
                         " and " + shape_str(c.shape()));
  }
  if (D.rank() != 1 || D.dim(0) != ch) throw DimensionError("selective_scan: D must be [E], got " + shape_str(D.shape()));
  for (auto v : delta.data()) {
    if (!(v > 0.0)) throw DomainError("selective_scan: delta must be > 0");
  }

  const auto uv = u.data(), dv = delta.data(), av = A.data(), bv = b.data(), cv = c.data(), Dv = D.data();
  // Per [B, T, E, N] entry, kept for backward: hidden state, exp(z), the
  // input gain delta * phi(z) and phi'(z), with z = delta * a.
  const std::size_t total = batch * steps * ch * n;
  std::vector<double> states(total), decay(total), gain(total), dphi(total);
  std::vector<double> y(batch * steps * ch);
  for (std::size_t bi = 0; bi < batch; ++bi) {
    for (std::size_t t = 0; t < steps; ++t) {
      const std::size_t row = bi * steps + t;
      const double* bt = bv.data() + row * n;
      const double* ct = cv.data() + row * n;
      for (std::size_t e = 0; e < ch; ++e) {
        const double ut = uv[row * ch + e];
        const double dl = dv[row * ch + e];
        const std::size_t base = (row * ch + e) * n;
        double* h = states.data() + base;
        const double* h_prev = t > 0 ? states.data() + ((row - 1) * ch + e) * n : nullptr;
        double acc = Dv[e] * ut;
        for (std::size_t i = 0; i < n; ++i) {
          const double z = dl * av[e * n + i];
          const double em1 = std::expm1(z);
          const double ez = em1 + 1.0;
          const double az = std::abs(z);
          const double phi = az < 1e-4 ? zoh_phi(z) : em1 / z;
          decay[base + i] = ez;
          gain[base + i] = dl * phi;
          dphi[base + i] = az < 0.05 ? zoh_phi_derivative(z) : (z * ez - em1) / (z * z);
          h[i] = (h_prev ? ez * h_prev[i] : 0.0) + dl * phi * bt[i] * ut;
          acc += ct[i] * h[i];
        }
        y[row * ch + e] = acc;
      }
    }
  }

  return make_result(
      u.shape(), std::move(y), "selective_scan", {u, delta, A, b, c, D},
      [states = std::move(states), decay = std::move(decay), gain = std::move(gain), dphi = std::move(dphi), batch,
       steps, ch, n](detail::Node& self) {
        auto& pu = *self.parents[0];
        auto& pd = *self.parents[1];
        auto& pa = *self.parents[2];
        auto& pb = *self.parents[3];
        auto& pc = *self.parents[4];
        auto& pD = *self.parents[5];
        const auto& g = self.grad;
        // Scratch buffers so unused branches need no special casing.
        std::vector<double> gu(pu.data.size(), 0.0), gd(pd.data.size(), 0.0), ga(pa.data.size(), 0.0),
            gb(pb.data.size(), 0.0), gc(pc.data.size(), 0.0), gD(pD.data.size(), 0.0);
        std::vector<double> adj(n);
        for (std::size_t bi = 0; bi < batch; ++bi) {
          for (std::size_t e = 0; e < ch; ++e) {
            std::fill(adj.begin(), adj.end(), 0.0);
            const double* a_row = pa.data.data() + e * n;
            double* ga_row = ga.data() + e * n;
            for (std::size_t t = steps; t-- > 0;) {
              const std::size_t row = bi * steps + t;
              const std::size_t idx = row * ch + e;
              const std::size_t base = idx * n;
              const double gy = g[idx];
              const double ut = pu.data[idx];
              const double dl = pd.data[idx];
              const double* bt = pb.data.data() + row * n;
              const double* ct = pc.data.data() + row * n;
              const double* h = states.data() + base;
              const double* h_prev = t > 0 ? states.data() + ((row - 1) * ch + e) * n : nullptr;
              double* gb_row = gb.data() + row * n;
              double* gc_row = gc.data() + row * n;
              double du = gy * pD.data[e];
              double ddl = 0.0;
              gD[e] += gy * ut;
              for (std::size_t i = 0; i < n; ++i) {
                const double a = a_row[i];
                const double dec = decay[base + i];
                const double gn = gain[base + i];
                gc_row[i] += gy * h[i];
                const double dh = adj[i] + gy * ct[i];
                const double hp = h_prev ? h_prev[i] : 0.0;
                const double d_decay = dh * hp;
                const double d_gain = dh * bt[i] * ut;
                gb_row[i] += dh * gn * ut;
                du += dh * gn * bt[i];
                ddl += d_decay * dec * a + d_gain * dec;
                ga_row[i] += d_decay * dec * dl + d_gain * dl * dl * dphi[base + i];
                adj[i] = dh * dec;
              }
              gu[idx] += du;
              gd[idx] += ddl;
            }
          }
        }
        auto flush = [](detail::Node& p, const std::vector<double>& src) {
          if (!p.requires_grad) return;
          auto& dst = p.ensure_grad();
          for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
        };
        flush(pu, gu);
        flush(pd, gd);
        flush(pa, ga);
        flush(pb, gb);
        flush(pc, gc);
        flush(pD, gD);
      });
}

MambaBranch::MambaBranch(const BranchConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.d_model < 1 || cfg.state_dim < 1 || cfg.expand < 1 || cfg.conv_width < 1) {
    throw ConfigError("branch dimensions must all be >= 1");
  }
  if (!(cfg.dt_min > 0.0 && cfg.dt_max >= cfg.dt_min)) throw ConfigError("need 0 < dt_min <= dt_max");
  const std::size_t dm = cfg.d_model, e = cfg.inner(), n = cfg.state_dim, r = cfg.rank(), k = cfg.conv_width;
  auto bound = [](std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); };
  in_proj_w = Tensor::uniform({2 * e, dm}, rng, -bound(dm), bound(dm), true);
  conv_w = Tensor::uniform({e, k}, rng, -bound(k), bound(k), true);
  conv_b = Tensor::uniform({e}, rng, -bound(k), bound(k), true);
  x_proj_w = Tensor::uniform({r + 2 * n, e}, rng, -bound(e), bound(e), true);
  dt_proj_w = Tensor::uniform({e, r}, rng, -bound(r), bound(r), true);
  std::vector<double> dtb(e);
  for (auto& v : dtb) {
    // dt log-uniform in [dt_min, dt_max]; bias is its softplus inverse.
    const double dt = std::exp(rng.uniform(std::log(cfg.dt_min), std::log(cfg.dt_max)));
    v = dt + std::log(-std::expm1(-dt));
  }
  dt_bias = Tensor({e}, std::move(dtb), true);
  std::vector<double> alog(e * n);
  for (std::size_t c = 0; c < e; ++c) {
    for (std::size_t i = 0; i < n; ++i) alog[c * n + i] = std::log(static_cast<double>(i + 1));
  }
  A_log = Tensor({e, n}, std::move(alog), true);
  D = Tensor::ones({e}, true);
  out_proj_w = Tensor::uniform({dm, e}, rng, -bound(e), bound(e), true);
}

SelectiveParams MambaBranch::selective_project(const Tensor& x) const {
  const std::size_t n = cfg_.state_dim, r = cfg_.rank();
  Tensor proj = ops::linear(x, x_proj_w);
  Tensor dt_low = ops::slice(proj, 2, 0, r);
  SelectiveParams sp;
  sp.b = ops::slice(proj, 2, r, n);
  sp.c = ops::slice(proj, 2, r + n, n);
  sp.delta = ops::softplus(ops::linear(dt_low, dt_proj_w, dt_bias));
  return sp;
}

Tensor MambaBranch::forward(const Tensor& u) const {
  if (u.rank() != 3 || u.dim(2) != cfg_.d_model) {
    throw DimensionError("mamba branch expects [B, T, " + std::to_string(cfg_.d_model) + "], got " +
                         shape_str(u.shape()));
  }
  const std::size_t e = cfg_.inner();
  Tensor xz = ops::linear(u, in_proj_w);
  Tensor x = ops::slice(xz, 2, 0, e);
  Tensor z = ops::slice(xz, 2, e, e);
  Tensor xc = ops::silu(ops::depthwise_causal_conv(x, conv_w, conv_b));
  SelectiveParams sp = selective_project(xc);
  Tensor a = ops::scale(ops::exp(A_log), -1.0);
  Tensor y = selective_scan(xc, sp.delta, a, sp.b, sp.c, D);
  y = ops::mul(y, ops::silu(z));
  return ops::linear(y, out_proj_w);
}

void MambaBranch::collect(const std::string& prefix, NamedTensors& out) const {
  out.emplace_back(prefix + "in_proj_w", in_proj_w);
  out.emplace_back(prefix + "conv_w", conv_w);
  out.emplace_back(prefix + "conv_b", conv_b);
  out.emplace_back(prefix + "x_proj_w", x_proj_w);
  out.emplace_back(prefix + "dt_proj_w", dt_proj_w);
  out.emplace_back(prefix + "dt_bias", dt_bias);
  out.emplace_back(prefix + "A_log", A_log);
  out.emplace_back(prefix + "D", D);
  out.emplace_back(prefix + "out_proj_w", out_proj_w);
}

BiMambaBlock::BiMambaBlock(const BranchConfig& cfg, Rng& rng) : fwd(cfg, rng), bwd(cfg, rng) {}

Tensor BiMambaBlock::forward(const Tensor& x, std::span<const std::size_t> lengths) const {
  if (x.rank() == 2) {
    Tensor y = forward(ops::reshape(x, {1, x.dim(0), x.dim(1)}), lengths);
    return ops::reshape(y, x.shape());
  }
  if (x.rank() != 3) throw DimensionError("bimamba block expects [C, L] or [B, C, L], got " + shape_str(x.shape()));
  Tensor u = ops::transpose(x, 1, 2);
  Tensor forward_out = fwd.forward(u);
  Tensor backward_out = ops::reverse(bwd.forward(ops::reverse(u, 1, lengths)), 1, lengths);
  Tensor y = ops::add(ops::scale(ops::add(forward_out, backward_out), 0.5), u);
  return ops::transpose(y, 1, 2);
}

void BiMambaBlock::collect(const std::string& prefix, NamedTensors& out) const {
  fwd.collect(prefix + "fwd.", out);
  bwd.collect(prefix + "bwd.", out);
}

}  // namespace bimamba::ssm
