#include "flunet/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace flunet::ops {

namespace detail {

namespace {
constexpr std::size_t kParallelFlops = 1u << 15;

inline void gemm_row(std::size_t k, std::size_t n, const double* a_row, const double* b,
                     double* c_row, bool accumulate) {
  if (!accumulate) std::memset(c_row, 0, n * sizeof(double));
  for (std::size_t p = 0; p < k; ++p) {
    const double a_ip = a_row[p];
    const double* __restrict b_row = b + p * n;
    double* __restrict c = c_row;
    for (std::size_t j = 0; j < n; ++j) c[j] += a_ip * b_row[j];
  }
}
}  // namespace

void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
             double* c, bool accumulate) {
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelFlops && m > 1)
  for (std::size_t i = 0; i < m; ++i) {
    gemm_row(k, n, a + i * k, b, c + i * n, accumulate);
  }
}

void gemm_nn_batched(std::size_t batch, std::size_t m, std::size_t k, std::size_t n,
                     const double* a, const double* b, double* c, bool accumulate) {
  const std::size_t rows = batch * m;
#pragma omp parallel for schedule(static) if (rows * k * n >= kParallelFlops && rows > 1)
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t bi = r / m;
    const std::size_t i = r % m;
    gemm_row(k, n, a + (bi * m + i) * k, b + bi * k * n, c + (bi * m + i) * n, accumulate);
  }
}

void transpose2d(std::size_t rows, std::size_t cols, const double* src, double* dst) {
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) dst[j * rows + i] = src[i * cols + j];
  }
}

void softmax_rows(std::size_t rows, std::size_t n, const double* x, double* y) {
#pragma omp parallel for schedule(static) if (rows * n >= kParallelFlops && rows > 1)
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x + r * n;
    double* yr = y + r * n;
    double m = xr[0];
    for (std::size_t j = 1; j < n; ++j) m = std::max(m, xr[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      yr[j] = std::exp(xr[j] - m);
      sum += yr[j];
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < n; ++j) yr[j] *= inv;
  }
}

void softmax_backward_rows(std::size_t rows, std::size_t n, const double* y, const double* dy,
                           double* dx, bool accumulate) {
#pragma omp parallel for schedule(static) if (rows * n >= kParallelFlops && rows > 1)
  for (std::size_t r = 0; r < rows; ++r) {
    const double* yr = y + r * n;
    const double* dyr = dy + r * n;
    double* dxr = dx + r * n;
    double dot = 0.0;
    for (std::size_t j = 0; j < n; ++j) dot += yr[j] * dyr[j];
    for (std::size_t j = 0; j < n; ++j) {
      const double g = yr[j] * (dyr[j] - dot);
      dxr[j] = accumulate ? dxr[j] + g : g;
    }
  }
}

void axpy(std::size_t n, double alpha, const double* x, double* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace detail

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DimError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                   shape_str(b.shape()));
  }
}

template <typename F>
Tensor elementwise(const Tensor& a, const char* op, F f) {
  Tensor out(a.shape());
  const double* x = a.data();
  double* y = out.data();
  const std::size_t n = a.size();
#pragma omp parallel for schedule(static) if (n >= (1u << 16))
  for (std::size_t i = 0; i < n; ++i) y[i] = f(x[i]);
  ensure_finite(out, op);
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  ensure_finite(out, "add");
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  ensure_finite(out, "sub");
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  ensure_finite(out, "mul");
  return out;
}

Tensor scale(const Tensor& a, double s) {
  return elementwise(a, "scale", [s](double v) { return v * s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return elementwise(a, "add_scalar", [s](double v) { return v + s; });
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  if (x.rank() < 1 || v.rank() != 1 || x.shape().back() != v.extent(0)) {
    throw DimError("add_rowvec: expected x[..., n] and v[n], got " + shape_str(x.shape()) +
                   " and " + shape_str(v.shape()));
  }
  const std::size_t n = v.extent(0);
  const std::size_t rows = x.size() / n;
  Tensor out(x.shape());
  const double* xd = x.data();
  const double* vd = v.data();
  double* od = out.data();
#pragma omp parallel for schedule(static) if (rows * n >= (1u << 16) && rows > 1)
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < n; ++j) od[r * n + j] = xd[r * n + j] + vd[j];
  }
  ensure_finite(out, "add_rowvec");
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw DimError("matmul: expected rank-2 operands, got " + shape_str(a.shape()) + " and " +
                   shape_str(b.shape()));
  }
  if (a.extent(1) != b.extent(0)) {
    throw DimError("matmul: inner extents differ, " + shape_str(a.shape()) + " vs " +
                   shape_str(b.shape()));
  }
  Tensor out(Shape{a.extent(0), b.extent(1)});
  detail::gemm_nn(a.extent(0), a.extent(1), b.extent(1), a.data(), b.data(), out.data(), false);
  ensure_finite(out, "matmul");
  return out;
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.extent(0) != b.extent(0) ||
      a.extent(2) != b.extent(1)) {
    throw DimError("bmm: expected [B,m,k] x [B,k,n], got " + shape_str(a.shape()) + " and " +
                   shape_str(b.shape()));
  }
  Tensor out(Shape{a.extent(0), a.extent(1), b.extent(2)});
  detail::gemm_nn_batched(a.extent(0), a.extent(1), a.extent(2), b.extent(2), a.data(), b.data(),
                          out.data(), false);
  ensure_finite(out, "bmm");
  return out;
}

Tensor softmax_lastdim(const Tensor& x) {
  if (x.rank() < 1 || x.shape().back() == 0) {
    throw DimError("softmax_lastdim: last extent must be >= 1, shape is " + shape_str(x.shape()));
  }
  const std::size_t n = x.shape().back();
  Tensor out(x.shape());
  detail::softmax_rows(x.size() / n, n, x.data(), out.data());
  ensure_finite(out, "softmax_lastdim");
  return out;
}

LayerNormResult layernorm_lastdim(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                                  double eps) {
  if (x.rank() < 1 || gamma.rank() != 1 || beta.rank() != 1 ||
      gamma.extent(0) != x.shape().back() || beta.extent(0) != x.shape().back()) {
    throw DimError("layernorm_lastdim: gamma/beta must match last extent of x");
  }
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.size() / n;
  LayerNormResult res{Tensor(x.shape()), std::vector<double>(rows), std::vector<double>(rows)};
  const double* xd = x.data();
  const double* g = gamma.data();
  const double* b = beta.data();
  double* yd = res.y.data();
#pragma omp parallel for schedule(static) if (rows * n >= (1u << 15) && rows > 1)
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xd + r * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += xr[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = xr[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double rstd = 1.0 / std::sqrt(var + eps);
    res.mean[r] = mean;
    res.rstd[r] = rstd;
    for (std::size_t j = 0; j < n; ++j) yd[r * n + j] = (xr[j] - mean) * rstd * g[j] + b[j];
  }
  ensure_finite(res.y, "layernorm_lastdim");
  return res;
}

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace

Tensor gelu(const Tensor& x) {
  return elementwise(x, "gelu",
                     [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); });
}

Tensor gelu_grad(const Tensor& x) {
  return elementwise(x, "gelu_grad", [](double v) {
    return 0.5 * (1.0 + std::erf(v * kInvSqrt2)) + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
  });
}

Tensor relu(const Tensor& x) {
  return elementwise(x, "relu", [](double v) { return v > 0.0 ? v : 0.0; });
}

Tensor abs(const Tensor& x) {
  return elementwise(x, "abs", [](double v) { return std::fabs(v); });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.size()) {
    throw DimError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape) +
                   " changes the element count");
  }
  return Tensor(std::move(shape), std::vector<double>(x.data(), x.data() + x.size()));
}

std::vector<std::size_t> inverse_permutation(const std::vector<std::size_t>& axes) {
  std::vector<std::size_t> inv(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) inv[axes[i]] = i;
  return inv;
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const std::size_t rank = x.rank();
  if (axes.size() != rank) {
    throw ArgError("permute: axes length " + std::to_string(axes.size()) + " != rank " +
                   std::to_string(rank));
  }
  std::vector<bool> seen(rank, false);
  for (std::size_t a : axes) {
    if (a >= rank || seen[a]) throw ArgError("permute: invalid permutation");
    seen[a] = true;
  }
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = x.shape()[axes[i]];
  Tensor out(out_shape);
  if (x.size() == 0) return out;
  const auto in_strides = row_major_strides(x.shape());
  // stride in the input for a unit step along output axis i
  std::vector<std::size_t> step(rank);
  for (std::size_t i = 0; i < rank; ++i) step[i] = in_strides[axes[i]];
  const double* src = x.data();
  double* dst = out.data();
  const std::size_t n = out.size();
#pragma omp parallel for schedule(static) if (n >= (1u << 16))
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t rem = flat;
    std::size_t src_idx = 0;
    for (std::size_t i = rank; i-- > 0;) {
      const std::size_t coord = rem % out_shape[i];
      rem /= out_shape[i];
      src_idx += coord * step[i];
    }
    dst[flat] = src[src_idx];
  }
  return out;
}

Tensor pad_trailing(const Tensor& x, const std::vector<std::size_t>& pad_hi) {
  if (pad_hi.size() != x.rank()) throw ArgError("pad_trailing: pad list must match rank");
  Shape out_shape = x.shape();
  bool any = false;
  for (std::size_t i = 0; i < pad_hi.size(); ++i) {
    out_shape[i] += pad_hi[i];
    any = any || pad_hi[i] != 0;
  }
  if (!any) return x;
  Tensor out(out_shape);
  if (x.size() == 0) return out;
  const auto out_strides = row_major_strides(out_shape);
  const Shape& in_shape = x.shape();
  const std::size_t rank = x.rank();
  const std::size_t n = x.size();
  const double* src = x.data();
  double* dst = out.data();
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t rem = flat;
    std::size_t dst_idx = 0;
    for (std::size_t i = rank; i-- > 0;) {
      dst_idx += (rem % in_shape[i]) * out_strides[i];
      rem /= in_shape[i];
    }
    dst[dst_idx] = src[flat];
  }
  return out;
}

Tensor crop_to(const Tensor& x, const Shape& extents) {
  if (extents.size() != x.rank()) throw ArgError("crop_to: extents must match rank");
  for (std::size_t i = 0; i < extents.size(); ++i) {
    if (extents[i] > x.shape()[i]) {
      throw DimError("crop_to: extent " + std::to_string(extents[i]) + " exceeds axis " +
                     std::to_string(i));
    }
  }
  if (extents == x.shape()) return x;
  Tensor out(extents);
  if (out.size() == 0) return out;
  const auto in_strides = row_major_strides(x.shape());
  const std::size_t rank = x.rank();
  const std::size_t n = out.size();
  const double* src = x.data();
  double* dst = out.data();
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t rem = flat;
    std::size_t src_idx = 0;
    for (std::size_t i = rank; i-- > 0;) {
      src_idx += (rem % extents[i]) * in_strides[i];
      rem /= extents[i];
    }
    dst[flat] = src[src_idx];
  }
  return out;
}

Tensor roll(const Tensor& x, const std::vector<std::ptrdiff_t>& shifts) {
  if (shifts.size() != x.rank()) throw ArgError("roll: shifts must match rank");
  bool any = false;
  for (std::ptrdiff_t s : shifts) any = any || s != 0;
  if (!any || x.size() == 0) return x;
  const Shape& shape = x.shape();
  const std::size_t rank = x.rank();
  std::vector<std::size_t> norm(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const auto e = static_cast<std::ptrdiff_t>(shape[i]);
    norm[i] = static_cast<std::size_t>(((shifts[i] % e) + e) % e);
  }
  const auto strides = row_major_strides(shape);
  Tensor out(shape);
  const double* src = x.data();
  double* dst = out.data();
  const std::size_t n = x.size();
#pragma omp parallel for schedule(static) if (n >= (1u << 16))
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t rem = flat;
    std::size_t dst_idx = 0;
    for (std::size_t i = rank; i-- > 0;) {
      const std::size_t coord = rem % shape[i];
      rem /= shape[i];
      dst_idx += ((coord + norm[i]) % shape[i]) * strides[i];
    }
    dst[dst_idx] = src[flat];
  }
  return out;
}

Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i];
  Tensor out = Tensor::scalar(s);
  ensure_finite(out, "sum_all");
  return out;
}

Tensor mean_all(const Tensor& x) {
  if (x.size() == 0) throw DimError("mean_all: empty tensor");
  Tensor out = Tensor::scalar(sum_all(x).item() / static_cast<double>(x.size()));
  ensure_finite(out, "mean_all");
  return out;
}

Tensor tile_leading(const Tensor& x, std::size_t n) {
  if (x.rank() == 0 || n == 0) throw ArgError("tile_leading: need rank >= 1 and n >= 1");
  Shape out_shape = x.shape();
  out_shape[0] *= n;
  Tensor out(out_shape);
  const std::size_t block = x.size();
  for (std::size_t c = 0; c < n; ++c) {
    std::memcpy(out.data() + c * block, x.data(), block * sizeof(double));
  }
  return out;
}

Tensor repeat_interleave_leading(const Tensor& x, std::size_t r) {
  if (x.rank() == 0 || r == 0) throw ArgError("repeat_interleave_leading: need rank >= 1, r >= 1");
  Shape out_shape = x.shape();
  out_shape[0] *= r;
  Tensor out(out_shape);
  const std::size_t d0 = x.extent(0);
  const std::size_t block = x.size() / std::max<std::size_t>(d0, 1);
  for (std::size_t i = 0; i < d0; ++i) {
    for (std::size_t j = 0; j < r; ++j) {
      std::memcpy(out.data() + (i * r + j) * block, x.data() + i * block,
                  block * sizeof(double));
    }
  }
  return out;
}

Tensor gather_columns(const Tensor& table, const std::vector<std::size_t>& idx) {
  if (table.rank() != 2) throw DimError("gather_columns: table must be [rows x entries]");
  const std::size_t rows = table.extent(0);
  const std::size_t entries = table.extent(1);
  for (std::size_t i : idx) {
    if (i >= entries) throw ArgError("gather_columns: index out of range");
  }
  Tensor out(Shape{rows, idx.size()});
  for (std::size_t a = 0; a < rows; ++a) {
    const double* row = table.data() + a * entries;
    double* orow = out.data() + a * idx.size();
    for (std::size_t i = 0; i < idx.size(); ++i) orow[i] = row[idx[i]];
  }
  return out;
}

void scatter_columns_acc(Tensor& dtable, const Tensor& dout, const std::vector<std::size_t>& idx) {
  const std::size_t rows = dtable.extent(0);
  const std::size_t entries = dtable.extent(1);
  if (dout.rank() != 2 || dout.extent(0) != rows || dout.extent(1) != idx.size()) {
    throw DimError("scatter_columns_acc: gradient shape mismatch");
  }
  for (std::size_t a = 0; a < rows; ++a) {
    double* row = dtable.data() + a * entries;
    const double* grow = dout.data() + a * idx.size();
    for (std::size_t i = 0; i < idx.size(); ++i) row[idx[i]] += grow[i];
  }
}

Tensor conv3d_as_patches(const Tensor& x, const Tensor& kernel, const Tensor& bias,
                         const std::array<std::size_t, 3>& kernel_tHW) {
  if (x.rank() != 4) throw DimError("conv3d_as_patches: input must be [T,H,W,C]");
  if (x.size() == 0) throw ArgError("conv3d_as_patches: empty input");
  const auto [kt, kh, kw] = kernel_tHW;
  if (kt == 0 || kh == 0 || kw == 0) throw ArgError("conv3d_as_patches: zero kernel extent");
  const std::size_t cin = x.extent(3);
  const std::size_t patch = kt * kh * kw * cin;
  if (kernel.rank() != 2 || kernel.extent(0) != patch) {
    throw DimError("conv3d_as_patches: kernel must be [" + std::to_string(patch) + " x Cout]");
  }
  const std::size_t cout = kernel.extent(1);
  if (bias.rank() != 1 || bias.extent(0) != cout) {
    throw DimError("conv3d_as_patches: bias must be [Cout]");
  }
  auto round_up = [](std::size_t v, std::size_t m) { return (v + m - 1) / m * m; };
  Tensor padded = pad_trailing(x, {round_up(x.extent(0), kt) - x.extent(0),
                                   round_up(x.extent(1), kh) - x.extent(1),
                                   round_up(x.extent(2), kw) - x.extent(2), 0});
  const std::size_t ot = padded.extent(0) / kt;
  const std::size_t oh = padded.extent(1) / kh;
  const std::size_t ow = padded.extent(2) / kw;
  // unfold as reshape + permute: [ot,kt,oh,kh,ow,kw,C] -> [ot,oh,ow,kt,kh,kw,C]
  Tensor grouped = reshape(padded, Shape{ot, kt, oh, kh, ow, kw, cin});
  Tensor patches = permute(grouped, {0, 2, 4, 1, 3, 5, 6});
  Tensor flat = reshape(patches, Shape{ot * oh * ow, patch});
  Tensor projected = add_rowvec(matmul(flat, kernel), bias);
  return reshape(projected, Shape{ot, oh, ow, cout});
}

}  // namespace flunet::ops
