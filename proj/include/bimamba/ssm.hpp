#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "bimamba/serialize.hpp"
#include "bimamba/tensor.hpp"

namespace bimamba::ssm {

// Continuous single-channel SSM h' = A h + B x, y = C h + D x with diagonal A.
struct SsmParams {
  std::vector<double> A;  // length N, entries <= 0
  std::vector<double> B;  // length N
  std::vector<double> C;  // length N
  double D = 0.0;
  double delta = 1.0;     // time scale, > 0
  bool selective = false; // true when delta/B/C vary per timestep

  std::size_t state_dim() const { return A.size(); }
};

// Zero-order-hold discretization of SsmParams.
struct DiscreteSsm {
  std::vector<double> A_bar;
  std::vector<double> B_bar;
  std::vector<double> C;
  double D = 0.0;
  bool selective = false;

  std::size_t state_dim() const { return A_bar.size(); }
};

// Impulse response K[j] = sum_n C_n A_bar_n^j B_bar_n, j = 0..M-1.
struct SsmKernel {
  std::vector<double> values;
  std::size_t length() const { return values.size(); }
};

// (e^z - 1)/z with the removable singularity filled in (phi(0) = 1).
double zoh_phi(double z);
// phi'(z) = (z e^z - e^z + 1)/z^2, with phi'(0) = 1/2.
double zoh_phi_derivative(double z);

// A_bar = exp(delta A), B_bar = B delta phi(delta A), elementwise.
DiscreteSsm zoh_discretize(const SsmParams& p);

// Sequential recurrence h_t = A_bar h_{t-1} + B_bar x_t, y_t = C h_t + D x_t,
// h_{-1} = 0. x is [L]; differentiable with respect to x.
Tensor ssm_scan(const DiscreteSsm& d, const Tensor& x);

SsmKernel ssm_conv_kernel(const DiscreteSsm& d, std::size_t length);

// Causal convolution y_t = sum_{j<=t} K[j] x_{t-j} + D x_t. x is [L] with
// L == kernel length; differentiable with respect to x.
Tensor ssm_conv_apply(const SsmKernel& kernel, const DiscreteSsm& d, const Tensor& x);

// Input-dependent scan over a batch, fused into one recorded op.
//   u, delta: [B, T, E]   A: [E, N]   b, c: [B, T, N]   D: [E]
// For each channel e and state n:
//   h_t = exp(delta_t A) h_{t-1} + delta_t phi(delta_t A) b_t u_t
//   y_t = sum_n c_t h_t + D u_t
// Gradients flow to all six inputs.
Tensor selective_scan(const Tensor& u, const Tensor& delta, const Tensor& A, const Tensor& b, const Tensor& c,
                      const Tensor& D);

struct BranchConfig {
  std::size_t d_model = 64;
  std::size_t state_dim = 16;
  std::size_t expand = 2;
  std::size_t conv_width = 4;
  std::size_t dt_rank = 0;  // 0 picks ceil(d_model / 16)
  double dt_min = 1e-3;
  double dt_max = 1e-1;

  std::size_t inner() const { return expand * d_model; }
  std::size_t rank() const { return dt_rank ? dt_rank : (d_model + 15) / 16; }
};

// Per-timestep selective parameters: delta [B,T,E], b and c [B,T,N].
struct SelectiveParams {
  Tensor delta;
  Tensor b;
  Tensor c;
};

// One scan direction: input projection to (x, z), causal depthwise conv and
// SiLU on x, selective scan, SiLU(z) gate, output projection.
class MambaBranch {
 public:
  MambaBranch() = default;
  MambaBranch(const BranchConfig& cfg, Rng& rng);

  // u: [B, T, d_model] -> [B, T, d_model]
  Tensor forward(const Tensor& u) const;
  // x: [B, T, E] -> delta = softplus(dt_proj(x_proj(x)) + dt_bias), b, c.
  SelectiveParams selective_project(const Tensor& x) const;

  void collect(const std::string& prefix, NamedTensors& out) const;
  const BranchConfig& config() const { return cfg_; }

  Tensor in_proj_w;   // [2E, d_model]
  Tensor conv_w;      // [E, conv_width]
  Tensor conv_b;      // [E]
  Tensor x_proj_w;    // [rank + 2N, E]
  Tensor dt_proj_w;   // [E, rank]
  Tensor dt_bias;     // [E]
  Tensor A_log;       // [E, N]; A = -exp(A_log)
  Tensor D;           // [E]
  Tensor out_proj_w;  // [d_model, E]

 private:
  BranchConfig cfg_;
};

// Bidirectional block: y = (F(x) + rev(G(rev(x)))) / 2 + x over time.
class BiMambaBlock {
 public:
  BiMambaBlock() = default;
  BiMambaBlock(const BranchConfig& cfg, Rng& rng);

  // x: [C, L] or [B, C, L] with C == d_model. `lengths` (one per batch entry)
  // limits the reverse scan to each sample's valid prefix.
  Tensor forward(const Tensor& x, std::span<const std::size_t> lengths = {}) const;

  void collect(const std::string& prefix, NamedTensors& out) const;

  MambaBranch fwd;
  MambaBranch bwd;
};

}  // namespace bimamba::ssm
