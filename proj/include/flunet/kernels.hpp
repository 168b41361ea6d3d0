#ifndef FLUNET_KERNELS_HPP_
#define FLUNET_KERNELS_HPP_

#include <array>
#include <cstddef>
#include <vector>

#include "flunet/tensor.hpp"

// Eager tensor ops. Every op is a pure function of its inputs, checks its
// output for non-finite values, and is bit-exact repeatable: parallel loops
// own whole output elements, so the summation order inside each element is
// fixed (ascending contraction index) regardless of thread count.
namespace flunet::ops {

// --- low-level cores (no shape or finiteness checks; used by autodiff too) ---
namespace detail {

// c[m x n] (+)= a[m x k] * b[k x n], row-major, k accumulated left to right.
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
             double* c, bool accumulate);

// Batched variant: a[batch x m x k] * b[batch x k x n].
void gemm_nn_batched(std::size_t batch, std::size_t m, std::size_t k, std::size_t n,
                     const double* a, const double* b, double* c, bool accumulate);

void transpose2d(std::size_t rows, std::size_t cols, const double* src, double* dst);

void softmax_rows(std::size_t rows, std::size_t n, const double* x, double* y);
// dx (+)= y ⊙ (dy − <y, dy>_row)
void softmax_backward_rows(std::size_t rows, std::size_t n, const double* y, const double* dy,
                           double* dx, bool accumulate);

void axpy(std::size_t n, double alpha, const double* x, double* y);  // y += alpha * x

}  // namespace detail

// --- shape-checked public ops ---

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);

// x[..., n] + v[n], broadcast over leading axes.
Tensor add_rowvec(const Tensor& x, const Tensor& v);

Tensor matmul(const Tensor& a, const Tensor& b);          // [m,k] x [k,n]
Tensor bmm(const Tensor& a, const Tensor& b);             // [B,m,k] x [B,k,n]

Tensor softmax_lastdim(const Tensor& x);

struct LayerNormResult {
  Tensor y;
  std::vector<double> mean;  // per row
  std::vector<double> rstd;  // per row
};
LayerNormResult layernorm_lastdim(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                                  double eps);

Tensor gelu(const Tensor& x);
Tensor gelu_grad(const Tensor& x);  // elementwise dy/dx
Tensor relu(const Tensor& x);
Tensor abs(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
std::vector<std::size_t> inverse_permutation(const std::vector<std::size_t>& axes);

// Zero padding appended at the trailing edge of each axis.
Tensor pad_trailing(const Tensor& x, const std::vector<std::size_t>& pad_hi);
// Keep the leading [0, extent) block of each axis.
Tensor crop_to(const Tensor& x, const Shape& extents);
// Cyclic shift: element at index i moves to (i + shift) mod extent.
Tensor roll(const Tensor& x, const std::vector<std::ptrdiff_t>& shifts);

Tensor sum_all(const Tensor& x);   // rank-0
Tensor mean_all(const Tensor& x);  // rank-0

// n copies of the whole tensor along a new-merged leading axis:
// [d0, ...] -> [n*d0, ...].
Tensor tile_leading(const Tensor& x, std::size_t n);
// [d0, ...] -> [d0*r, ...] with out[i*r + j] = x[i].
Tensor repeat_interleave_leading(const Tensor& x, std::size_t r);

// out[a, i] = table[a, idx[i]] for table[rows x entries]; out shape [rows, idx.size()].
Tensor gather_columns(const Tensor& table, const std::vector<std::size_t>& idx);
// dtable[a, idx[i]] += dout[a, i]
void scatter_columns_acc(Tensor& dtable, const Tensor& dout, const std::vector<std::size_t>& idx);

// Patch-extraction convolution: stride equals the kernel extents, so this is
// unfold-into-patches followed by one matmul.
//   x:      [T, H, W, Cin], zero-padded at the trailing edge to multiples of the kernel
//   kernel: [kt*kh*kw*Cin, Cout] (patch values flattened row-major)
//   bias:   [Cout]
// result:   [ceil(T/kt), ceil(H/kh), ceil(W/kw), Cout]
Tensor conv3d_as_patches(const Tensor& x, const Tensor& kernel, const Tensor& bias,
                         const std::array<std::size_t, 3>& kernel_tHW);

}  // namespace flunet::ops

#endif  // FLUNET_KERNELS_HPP_
