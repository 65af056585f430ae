#include "bimamba/gradcheck.hpp"

#include <cmath>

#include "bimamba/eca.hpp"
#include "bimamba/model.hpp"
#include "bimamba/ops.hpp"
#include "bimamba/ssm.hpp"

namespace bimamba {

namespace {

// Values bounded away from zero so kinks (relu, max-pool ties) stay out of
// the finite-difference stencil.
Tensor away_from_zero(Shape shape, Rng& rng) {
  Tensor t = Tensor::randn(std::move(shape), rng);
  for (auto& v : t.mutable_data()) v = v >= 0.0 ? v + 0.1 : v - 0.1;
  return t;
}

}  // namespace

constexpr double kPrimTol = 1e-5;
constexpr double kModelTol = 1e-4;

std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<GradCheckResult> out;
  auto unary = [&](const std::string& name, const std::function<Tensor(const Tensor&)>& f, const Tensor& x) {
    out.push_back({name, grad_check(f, x), kPrimTol});
  };
  auto params = [&](const std::string& name, const std::function<Tensor()>& loss, std::vector<Tensor> ps,
                    double tol = kPrimTol) {
    for (auto& p : ps) p.set_requires_grad(true);
    out.push_back({name, grad_check_params(loss, ps), tol});
  };

  const Tensor x = Tensor::randn({3, 4}, rng);
  const Tensor y = Tensor::randn({3, 4}, rng);
  const Tensor row = Tensor::randn({4}, rng);
  unary("add", [&](const Tensor& a) { return ops::add(a, y); }, x);
  unary("add_broadcast", [&](const Tensor& r) { return ops::add(x, r); }, row);
  unary("sub", [&](const Tensor& a) { return ops::sub(y, a); }, x);
  unary("mul", [&](const Tensor& a) { return ops::mul(a, y); }, x);
  unary("mul_broadcast", [&](const Tensor& r) { return ops::mul(x, r); }, row);
  unary("scale", [](const Tensor& a) { return ops::scale(a, -1.7); }, x);
  unary("add_scalar", [](const Tensor& a) { return ops::add_scalar(a, 0.3); }, x);
  unary("exp", [](const Tensor& a) { return ops::exp(a); }, x);
  unary("sigmoid", [](const Tensor& a) { return ops::sigmoid(a); }, x);
  unary("relu", [](const Tensor& a) { return ops::relu(a); }, away_from_zero({3, 4}, rng));
  unary("silu", [](const Tensor& a) { return ops::silu(a); }, x);
  unary("softplus", [](const Tensor& a) { return ops::softplus(a); }, x);

  const Tensor w = Tensor::randn({4, 5}, rng);
  unary("matmul", [&](const Tensor& a) { return ops::matmul(a, w); }, x);
  unary("matmul_rhs", [&](const Tensor& b) { return ops::matmul(x, b); }, w);
  const Tensor lw = Tensor::randn({2, 4}, rng);
  const Tensor lb = Tensor::randn({2}, rng);
  params("linear", [&] { return ops::sum(ops::mul(ops::linear(x, lw, lb), ops::linear(x, lw, lb))); },
         {x, lw, lb});
  unary("sum", [](const Tensor& a) { return ops::sum(a); }, x);
  unary("sum_axis", [](const Tensor& a) { return ops::sum(a, 1); }, x);
  unary("mean_axis", [](const Tensor& a) { return ops::mean(a, 0, true); }, x);
  unary("reshape", [](const Tensor& a) { return ops::reshape(a, {2, 6}); }, x);
  const Tensor cube = Tensor::randn({2, 3, 4}, rng);
  unary("transpose", [](const Tensor& a) { return ops::transpose(a, 0, 2); }, cube);
  unary("slice", [](const Tensor& a) { return ops::slice(a, 2, 1, 2); }, cube);

  const Tensor cx = Tensor::randn({2, 3, 11}, rng);
  const Tensor cw = Tensor::randn({4, 3, 3}, rng);
  const Tensor cb = Tensor::randn({4}, rng);
  const Tensor cot = Tensor::randn({2, 4, 6}, rng);
  params("conv1d", [&] { return ops::sum(ops::mul(ops::conv1d(cx, cw, cb, 2, 1), cot)); }, {cx, cw, cb});
  const Tensor dx = Tensor::randn({2, 6, 3}, rng);
  const Tensor dw = Tensor::randn({3, 4}, rng);
  const Tensor db = Tensor::randn({3}, rng);
  const Tensor dcot = Tensor::randn({2, 6, 3}, rng);
  params("depthwise_causal_conv",
         [&] { return ops::sum(ops::mul(ops::depthwise_causal_conv(dx, dw, db), dcot)); }, {dx, dw, db});
  {
    // Distinct, well-separated values so each window's maximum is unique.
    std::vector<double> v(2 * 3 * 8);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.37 * static_cast<double>((i * 7) % v.size());
    unary("max_pool1d", [](const Tensor& a) { return ops::max_pool1d(a, 2, 2); }, Tensor({2, 3, 8}, v));
  }
  unary(
      "dropout",
      [](const Tensor& a) {
        Rng r(5);
        return ops::dropout(a, 0.3, true, r);
      },
      x);
  const std::vector<std::size_t> lengths = {4, 2};
  unary("reverse", [&](const Tensor& a) { return ops::reverse(a, 1, lengths); }, Tensor::randn({2, 4, 3}, rng));
  const std::vector<int> labels = {0, 3, 1};
  unary("softmax_cross_entropy", [&](const Tensor& a) { return ops::softmax_cross_entropy(a, labels); }, x);

  {
    const std::size_t B = 2, T = 5, E = 3, N = 4;
    const Tensor u = Tensor::randn({B, T, E}, rng);
    Tensor delta = Tensor::uniform({B, T, E}, rng, 0.05, 0.8);
    Tensor a = Tensor::uniform({E, N}, rng, -2.0, -0.1);
    const Tensor b = Tensor::randn({B, T, N}, rng);
    const Tensor c = Tensor::randn({B, T, N}, rng);
    const Tensor d = Tensor::randn({E}, rng);
    const Tensor scot = Tensor::randn({B, T, E}, rng);
    params("selective_scan", [&] { return ops::sum(ops::mul(ssm::selective_scan(u, delta, a, b, c, d), scot)); },
           {u, delta, a, b, c, d});
  }
  {
    ssm::SsmParams p;
    p.A = {-0.5, -1.5, -3.0};
    p.B = {0.4, -1.0, 0.7};
    p.C = {1.0, 0.3, -0.8};
    p.D = 0.25;
    p.delta = 0.1;
    const auto d = ssm::zoh_discretize(p);
    unary("ssm_scan", [&](const Tensor& v) { return ssm::ssm_scan(d, v); }, Tensor::randn({9}, rng));
    const auto k = ssm::ssm_conv_kernel(d, 9);
    unary("ssm_conv_apply", [&](const Tensor& v) { return ssm::ssm_conv_apply(k, d, v); }, Tensor::randn({9}, rng));
  }
  {
    eca::EcaAttention att(6, 3, rng);
    const Tensor ex = Tensor::randn({2, 6, 7}, rng);
    const Tensor ecot = Tensor::randn({2, 6, 7}, rng);
    params("eca", [&] { return ops::sum(ops::mul(att.forward(ex), ecot)); }, {ex, att.conv_w});
  }
  {
    model::StageModelConfig cfg;
    cfg.channels = 3;
    cfg.epoch_samples = 64;
    cfg.state_dim = 3;
    cfg.cnn = {{4, 5, 2, 1}, {6, 3, 2, 2}};
    model::StageModel m(cfg, seed + 1);
    const Tensor mx = Tensor::randn({2, 3, 64}, rng);
    const std::vector<int> ml = {1, 4};
    std::vector<Tensor> ps;
    for (auto& [name, t] : m.parameters()) ps.push_back(t);
    out.push_back({"stage_model",
                   grad_check_params([&] { return ops::softmax_cross_entropy(m.forward_eval(mx), ml); }, ps),
                   kModelTol});
  }
  {
    model::HealthModelConfig cfg;
    cfg.max_cycles = 12;
    cfg.state_dim = 3;
    model::HealthModel m(cfg, seed + 2);
    std::vector<double> v(2 * 6 * 12, 0.0);
    Rng lr(seed + 3);
    const std::size_t lens[2] = {12, 7};
    for (std::size_t bi = 0; bi < 2; ++bi) {
      for (std::size_t t = 0; t < lens[bi]; ++t) {
        v[(bi * 6 + lr.index(5)) * 12 + t] = 1.0;
        v[(bi * 6 + 5) * 12 + t] = 1.0;
      }
    }
    const Tensor hx({2, 6, 12}, v);
    const std::vector<int> hl = {0, 1};
    std::vector<Tensor> ps;
    for (auto& [name, t] : m.parameters()) ps.push_back(t);
    out.push_back({"health_model",
                   grad_check_params([&] { return ops::softmax_cross_entropy(m.forward_eval(hx), hl); }, ps),
                   kModelTol});
  }
  return out;
}

}  // namespace bimamba
