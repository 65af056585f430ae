#include "bimamba/resample.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "bimamba/errors.hpp"

namespace bimamba::data {

namespace {

constexpr double kBeta = 8.0;
constexpr std::size_t kHalfLengthFactor = 10;

std::vector<double> kaiser_sinc(std::size_t half, double cutoff) {
  // cutoff is a fraction of the upsampled Nyquist rate.
  std::vector<double> h(2 * half + 1);
  const double norm = std::cyl_bessel_i(0.0, kBeta);
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double n = static_cast<double>(i) - static_cast<double>(half);
    const double arg = std::numbers::pi * cutoff * n;
    const double sinc = n == 0.0 ? 1.0 : std::sin(arg) / arg;
    const double r = n / static_cast<double>(half);
    const double w = std::cyl_bessel_i(0.0, kBeta * std::sqrt(std::max(0.0, 1.0 - r * r))) / norm;
    h[i] = cutoff * sinc * w;
  }
  return h;
}

std::pair<std::size_t, std::size_t> rationalize(double ratio) {
  // Continued-fraction convergents until the error is negligible.
  constexpr std::size_t kMaxDen = 10000;
  long long p0 = 0, q0 = 1, p1 = 1, q1 = 0;
  double x = ratio;
  for (int iter = 0; iter < 64; ++iter) {
    const double a = std::floor(x);
    const long long ai = static_cast<long long>(a);
    const long long p2 = ai * p1 + p0;
    const long long q2 = ai * q1 + q0;
    if (q2 > static_cast<long long>(kMaxDen) || p2 > static_cast<long long>(kMaxDen) * 1000) break;
    p0 = p1;
    q0 = q1;
    p1 = p2;
    q1 = q2;
    const double err = std::abs(static_cast<double>(p1) / static_cast<double>(q1) - ratio);
    if (err <= 1e-12 * ratio || x - a < 1e-12) break;
    x = 1.0 / (x - a);
  }
  if (p1 <= 0 || q1 <= 0) throw DomainError("resample: rate ratio " + std::to_string(ratio) + " is not representable");
  return {static_cast<std::size_t>(p1), static_cast<std::size_t>(q1)};
}

long long floor_div(long long a, long long b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

}  // namespace

std::vector<double> resample_rational(std::span<const double> x, std::size_t up, std::size_t down) {
  if (up == 0 || down == 0) throw DomainError("resample: up and down factors must be positive");
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i])) throw NumericError("resample: non-finite input at sample " + std::to_string(i));
  }
  const std::size_t g = std::gcd(up, down);
  up /= g;
  down /= g;
  const auto out_len = static_cast<std::size_t>(
      std::llround(static_cast<double>(x.size()) * static_cast<double>(up) / static_cast<double>(down)));
  if (up == 1 && down == 1) return {x.begin(), x.end()};
  std::vector<double> y(out_len, 0.0);
  if (x.empty()) return y;

  const std::size_t factor = std::max(up, down);
  const std::size_t half = kHalfLengthFactor * factor;
  const auto h = kaiser_sinc(half, 1.0 / static_cast<double>(factor));
  const auto n = static_cast<long long>(x.size());
  const auto L = static_cast<long long>(up);
  const auto H = static_cast<long long>(half);
  for (std::size_t m = 0; m < out_len; ++m) {
    // Output m sits at upsampled index c; input k sits at k * up.
    const long long c = static_cast<long long>(m) * static_cast<long long>(down);
    const long long k_lo = floor_div(c - H, L);
    const long long k_hi = floor_div(c + H, L);
    double acc = 0.0;
    double wsum = 0.0;
    for (long long k = k_lo; k <= k_hi; ++k) {
      const long long tap = c - k * L + H;
      if (tap < 0 || tap > 2 * H) continue;
      const double w = h[static_cast<std::size_t>(tap)];
      const long long idx = std::clamp<long long>(k, 0, n - 1);
      acc += w * x[static_cast<std::size_t>(idx)];
      wsum += w;
    }
    y[m] = acc / wsum;
  }
  return y;
}

std::vector<double> resample(std::span<const double> x, double from_hz, double to_hz) {
  if (!(from_hz > 0.0) || !(to_hz > 0.0) || !std::isfinite(from_hz) || !std::isfinite(to_hz)) {
    throw DomainError("resample: sample rates must be positive and finite");
  }
  if (from_hz == to_hz) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!std::isfinite(x[i])) throw NumericError("resample: non-finite input at sample " + std::to_string(i));
    }
    return {x.begin(), x.end()};
  }
  const auto [up, down] = rationalize(to_hz / from_hz);
  return resample_rational(x, up, down);
}

}  // namespace bimamba::data
