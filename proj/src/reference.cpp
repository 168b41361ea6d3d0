#include "flunet/reference.hpp"

#include <cmath>

#include "flunet/error.hpp"

namespace flunet::ref {

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0)) {
    throw DimError("ref::matmul: bad shapes");
  }
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  Tensor c(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  }
  return c;
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.extent(0) != b.extent(0) ||
      a.extent(2) != b.extent(1)) {
    throw DimError("ref::bmm: bad shapes");
  }
  const std::size_t bt = a.extent(0), m = a.extent(1), k = a.extent(2), n = b.extent(2);
  Tensor c(Shape{bt, m, n});
  for (std::size_t q = 0; q < bt; ++q) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += a[(q * m + i) * k + p] * b[(q * k + p) * n + j];
        c[(q * m + i) * n + j] = s;
      }
    }
  }
  return c;
}

Tensor softmax_lastdim(const Tensor& x) {
  if (x.rank() < 1 || x.shape().back() == 0) throw DimError("ref::softmax_lastdim: bad shape");
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.size() / n;
  Tensor y(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    double m = x[r * n];
    for (std::size_t j = 1; j < n; ++j) m = std::max(m, x[r * n + j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      y[r * n + j] = std::exp(x[r * n + j] - m);
      sum += y[r * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) y[r * n + j] /= sum;
  }
  return y;
}

Tensor conv3d(const Tensor& x, const Tensor& kernel, const Tensor& bias,
              const std::array<std::size_t, 3>& kernel_tHW) {
  if (x.rank() != 4) throw DimError("ref::conv3d: input must be [T,H,W,C]");
  const auto [kt, kh, kw] = kernel_tHW;
  const std::size_t t = x.extent(0), h = x.extent(1), w = x.extent(2), cin = x.extent(3);
  const std::size_t cout = kernel.extent(1);
  const std::size_t ot = (t + kt - 1) / kt, oh = (h + kh - 1) / kh, ow = (w + kw - 1) / kw;
  Tensor out(Shape{ot, oh, ow, cout});
  for (std::size_t it = 0; it < ot; ++it) {
    for (std::size_t ih = 0; ih < oh; ++ih) {
      for (std::size_t iw = 0; iw < ow; ++iw) {
        for (std::size_t co = 0; co < cout; ++co) {
          double s = bias[co];
          for (std::size_t dt = 0; dt < kt; ++dt) {
            for (std::size_t dh = 0; dh < kh; ++dh) {
              for (std::size_t dw = 0; dw < kw; ++dw) {
                const std::size_t st = it * kt + dt, sh = ih * kh + dh, sw = iw * kw + dw;
                if (st >= t || sh >= h || sw >= w) continue;  // zero pad
                for (std::size_t ci = 0; ci < cin; ++ci) {
                  const std::size_t krow = ((dt * kh + dh) * kw + dw) * cin + ci;
                  s += x[((st * h + sh) * w + sw) * cin + ci] * kernel[krow * cout + co];
                }
              }
            }
          }
          out[((it * oh + ih) * ow + iw) * cout + co] = s;
        }
      }
    }
  }
  return out;
}

}  // namespace flunet::ref
