#include "bimamba/eca.hpp"

#include <cmath>

#include "bimamba/errors.hpp"
#include "bimamba/ops.hpp"

namespace bimamba::eca {

ChannelDescriptor channel_descriptor(const Tensor& x) {
  if (x.rank() != 2 && x.rank() != 3) {
    throw DimensionError("channel_descriptor expects [C, L] or [B, C, L], got " + shape_str(x.shape()));
  }
  if (x.shape().back() == 0) throw DomainError("channel_descriptor: sequence length L must be >= 1");
  return {ops::mean(x, x.rank() - 1)};
}

std::size_t adaptive_kernel_size(std::size_t channels, double gamma, double b) {
  if (channels < 1) throw ConfigError("adaptive_kernel_size: need at least one channel");
  const double t = std::abs(std::log2(static_cast<double>(channels)) / gamma + b / gamma);
  auto k = static_cast<std::size_t>(std::ceil(t));
  if (k % 2 == 0) ++k;
  return std::max<std::size_t>(k, 3);
}

ChannelWeights channel_weights(const ChannelDescriptor& s, const Tensor& kernel) {
  if (kernel.rank() != 1) throw DimensionError("channel_weights: kernel must be [k], got " + shape_str(kernel.shape()));
  const std::size_t k = kernel.dim(0);
  if (k % 2 == 0) throw ContractError("channel_weights: kernel size must be odd, got " + std::to_string(k));
  const Tensor& desc = s.s;
  if (desc.rank() != 1 && desc.rank() != 2) {
    throw DimensionError("channel_weights: descriptor must be [C] or [B, C], got " + shape_str(desc.shape()));
  }
  const std::size_t batch = desc.rank() == 2 ? desc.dim(0) : 1;
  const std::size_t channels = desc.shape().back();
  Tensor seq = ops::reshape(desc, {batch, 1, channels});
  Tensor w3 = ops::reshape(kernel, {1, 1, k});
  Tensor conv = ops::conv1d(seq, w3, Tensor{}, 1, (k - 1) / 2);
  return {ops::reshape(ops::sigmoid(conv), desc.shape())};
}

Tensor apply_attention(const Tensor& x, const ChannelWeights& w) {
  const Tensor& gates = w.w;
  if (x.rank() != gates.rank() + 1) {
    throw DimensionError("apply_attention: weights " + shape_str(gates.shape()) + " do not fit input " +
                         shape_str(x.shape()));
  }
  for (std::size_t d = 0; d < gates.rank(); ++d) {
    if (gates.dim(d) != x.dim(d)) {
      throw DimensionError("apply_attention: axis " + std::to_string(d) + " differs (input " +
                           std::to_string(x.dim(d)) + ", weights " + std::to_string(gates.dim(d)) + ")");
    }
  }
  Shape col = gates.shape();
  col.push_back(1);
  return ops::mul(x, ops::reshape(gates, col));
}

EcaAttention::EcaAttention(std::size_t channels, std::size_t kernel_size, Rng& rng) : channels_(channels) {
  if (kernel_size % 2 == 0) throw ConfigError("ECA kernel size must be odd");
  const double bound = 1.0 / std::sqrt(static_cast<double>(kernel_size));
  conv_w = Tensor::uniform({kernel_size}, rng, -bound, bound, true);
}

Tensor EcaAttention::forward(const Tensor& x) const {
  const std::size_t channel_axis = x.rank() == 3 ? 1 : 0;
  if (x.rank() < 2 || x.dim(channel_axis) != channels_) {
    throw DimensionError("ECA expects " + std::to_string(channels_) + " channels on axis " +
                         std::to_string(channel_axis) + ", got " + shape_str(x.shape()));
  }
  return apply_attention(x, channel_weights(channel_descriptor(x), conv_w));
}

void EcaAttention::collect(const std::string& prefix, NamedTensors& out) const {
  out.emplace_back(prefix + "conv_w", conv_w);
}

}  // namespace bimamba::eca
