#pragma once

#include <cstddef>
#include <string>

#include "bimamba/serialize.hpp"
#include "bimamba/tensor.hpp"

namespace bimamba::eca {

// Per-channel time average: [C] for input [C, L], [B, C] for [B, C, L].
struct ChannelDescriptor {
  Tensor s;
};

// Sigmoid channel gates, same shape as the descriptor; each entry in (0, 1).
struct ChannelWeights {
  Tensor w;
};

ChannelDescriptor channel_descriptor(const Tensor& x);

// Nearest odd integer >= |log2(C)/gamma + b/gamma|, never below 3.
std::size_t adaptive_kernel_size(std::size_t channels, double gamma = 2.0, double b = 1.0);

// sigmoid(conv1d over the channel axis), zero padding (k-1)/2, no bias.
// `kernel` is [k] with k odd.
ChannelWeights channel_weights(const ChannelDescriptor& s, const Tensor& kernel);

// Row c of the output is W_c times row c of x.
Tensor apply_attention(const Tensor& x, const ChannelWeights& w);

// Descriptor -> weights -> rescale. Channel order matters: the 1-D kernel
// only mixes neighbouring channels.
class EcaAttention {
 public:
  EcaAttention() = default;
  EcaAttention(std::size_t channels, std::size_t kernel_size, Rng& rng);

  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, NamedTensors& out) const;

  std::size_t channels() const { return channels_; }
  Tensor conv_w;  // [k]

 private:
  std::size_t channels_ = 0;
};

}  // namespace bimamba::eca
