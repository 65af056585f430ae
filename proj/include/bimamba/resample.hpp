#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace bimamba::data {

// Polyphase resampling by up/down with a Kaiser-windowed (beta 8) sinc
// low-pass cut at min(input, output) Nyquist. Each output sample is
// normalized to unit DC gain; edges use the nearest input sample.
// Output length is round(len * up / down).
std::vector<double> resample_rational(std::span<const double> x, std::size_t up, std::size_t down);

// Rational approximation of to_hz / from_hz (denominators up to 10000),
// then resample_rational.
std::vector<double> resample(std::span<const double> x, double from_hz, double to_hz);

}  // namespace bimamba::data
