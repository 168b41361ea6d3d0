#ifndef FLUNET_REFERENCE_HPP_
#define FLUNET_REFERENCE_HPP_

#include <array>

#include "flunet/tensor.hpp"

// Serial reference implementations: straight-line loops, no parallelism, no
// shared code with flunet::ops beyond the Tensor type. Kept in the library so
// tests can check the parallel kernels against them and the benchmark target
// can compare throughput.
namespace flunet::ref {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor bmm(const Tensor& a, const Tensor& b);
Tensor softmax_lastdim(const Tensor& x);

// Naive sliding-window convolution, stride equal to the kernel extents,
// trailing-edge zero padding. kernel is [kt*kh*kw*Cin x Cout] flattened
// row-major over (dt, dh, dw, cin).
Tensor conv3d(const Tensor& x, const Tensor& kernel, const Tensor& bias,
              const std::array<std::size_t, 3>& kernel_tHW);

}  // namespace flunet::ref

#endif  // FLUNET_REFERENCE_HPP_
