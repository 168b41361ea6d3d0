#include "flunet/wsa_reference.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "flunet/error.hpp"

namespace flunet::ref {

namespace {
constexpr double kMask = -1e9;

std::size_t ceil_mult(std::size_t v, std::size_t m) { return (v + m - 1) / m * m; }
}  // namespace

Tensor window_self_attention(const Tensor& x, const tpsa::TPSAParams& p,
                             const tpsa::TPSAConfig& cfg, bool shifted) {
  if (cfg.gamma != 1) throw ConfigError("ref wsa: requires gamma == 1");
  cfg.validate();
  p.validate(cfg);
  if (x.rank() != 4 || x.extent(3) != cfg.channels) throw DimError("ref wsa: bad input shape");

  const std::size_t tv = x.extent(0), hv = x.extent(1), wv = x.extent(2);
  const std::size_t c = cfg.channels;
  const std::size_t heads = cfg.heads;
  const std::size_t hd = c / heads;

  const std::size_t d = tv >= cfg.temporal_window ? cfg.temporal_window : tv;
  const std::size_t sh = std::min(cfg.spatial_window, hv);
  const std::size_t sw = std::min(cfg.spatial_window, wv);
  const std::size_t tp = ceil_mult(tv, d), hp = ceil_mult(hv, sh), wp = ceil_mult(wv, sw);
  const std::size_t st = (shifted && tp > d) ? d / 2 : 0;
  const std::size_t sy = (shifted && hp > sh) ? sh / 2 : 0;
  const std::size_t sx = (shifted && wp > sw) ? sw / 2 : 0;

  // padded + rolled copy; position q holds source (q + shift) mod extent
  std::vector<double> grid(tp * hp * wp * c, 0.0);
  std::vector<bool> vmask(tp * hp * wp, false);
  std::vector<int> reg(tp * hp * wp, 0);
  auto axis_region = [](std::size_t orig, std::size_t e, std::size_t w, std::size_t s) -> int {
    if (s == 0) return 0;
    if (orig < e - w) return 0;
    return orig < e - s ? 1 : 2;
  };
  for (std::size_t t = 0; t < tp; ++t) {
    const std::size_t ot = (t + st) % tp;
    for (std::size_t y = 0; y < hp; ++y) {
      const std::size_t oy = (y + sy) % hp;
      for (std::size_t z = 0; z < wp; ++z) {
        const std::size_t ox = (z + sx) % wp;
        const std::size_t cell = (t * hp + y) * wp + z;
        const bool valid = ot < tv && oy < hv && ox < wv;
        vmask[cell] = valid;
        reg[cell] = axis_region(ot, tp, d, st) * 9 + axis_region(oy, hp, sh, sy) * 3 +
                    axis_region(ox, wp, sw, sx);
        if (valid) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            grid[cell * c + ch] = x[((ot * hv + oy) * wv + ox) * c + ch];
          }
        }
      }
    }
  }

  const std::size_t l = d * sh * sw;
  const std::size_t span_s = 2 * cfg.spatial_window - 1;
  const auto off_t = static_cast<std::ptrdiff_t>(cfg.temporal_window - 1);
  const auto off_s = static_cast<std::ptrdiff_t>(cfg.spatial_window - 1);
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  std::vector<double> out_grid(tp * hp * wp * c, 0.0);
  std::vector<double> q(l * c), k(l * c), v(l * c), attn_out(l * c, 0.0);
  std::vector<double> scores(l);

  for (std::size_t wt = 0; wt < tp / d; ++wt) {
    for (std::size_t wy = 0; wy < hp / sh; ++wy) {
      for (std::size_t wx = 0; wx < wp / sw; ++wx) {
        // gather window tokens in (t, y, x) raster order
        std::vector<std::size_t> cells(l);
        {
          std::size_t i = 0;
          for (std::size_t t = 0; t < d; ++t) {
            for (std::size_t y = 0; y < sh; ++y) {
              for (std::size_t z = 0; z < sw; ++z, ++i) {
                cells[i] = ((wt * d + t) * hp + wy * sh + y) * wp + wx * sw + z;
              }
            }
          }
        }
        for (std::size_t i = 0; i < l; ++i) {
          const double* src = grid.data() + cells[i] * c;
          for (std::size_t j = 0; j < c; ++j) {
            double sq = p.b_q[j], sk = p.b_k[j], sv = p.b_v[j];
            for (std::size_t ch = 0; ch < c; ++ch) {
              sq += src[ch] * p.w_q[ch * c + j];
              sk += src[ch] * p.w_k[ch * c + j];
              sv += src[ch] * p.w_v[ch * c + j];
            }
            q[i * c + j] = sq;
            k[i * c + j] = sk;
            v[i * c + j] = sv;
          }
        }
        std::fill(attn_out.begin(), attn_out.end(), 0.0);
        for (std::size_t h = 0; h < heads; ++h) {
          const std::size_t brow = cfg.per_head_bias ? h : 0;
          for (std::size_t i = 0; i < l; ++i) {
            const std::size_t ti = i / (sh * sw);
            const std::size_t yi = (i / sw) % sh;
            const std::size_t xi = i % sw;
            for (std::size_t jj = 0; jj < l; ++jj) {
              double s = 0.0;
              for (std::size_t ch = 0; ch < hd; ++ch) {
                s += q[i * c + h * hd + ch] * k[jj * c + h * hd + ch];
              }
              s *= scale;
              const std::size_t tj = jj / (sh * sw);
              const std::size_t yj = (jj / sw) % sh;
              const std::size_t xj = jj % sw;
              const auto dt = static_cast<std::size_t>(
                  static_cast<std::ptrdiff_t>(ti) - static_cast<std::ptrdiff_t>(tj) + off_t);
              const auto dy = static_cast<std::size_t>(
                  static_cast<std::ptrdiff_t>(yi) - static_cast<std::ptrdiff_t>(yj) + off_s);
              const auto dx = static_cast<std::size_t>(
                  static_cast<std::ptrdiff_t>(xi) - static_cast<std::ptrdiff_t>(xj) + off_s);
              s += p.bias_table[brow * cfg.bias_entries() + (dt * span_s + dy) * span_s + dx];
              if (!vmask[cells[jj]] || reg[cells[jj]] != reg[cells[i]]) s += kMask;
              scores[jj] = s;
            }
            double m = scores[0];
            for (std::size_t jj = 1; jj < l; ++jj) m = std::max(m, scores[jj]);
            double sum = 0.0;
            for (std::size_t jj = 0; jj < l; ++jj) {
              scores[jj] = std::exp(scores[jj] - m);
              sum += scores[jj];
            }
            for (std::size_t jj = 0; jj < l; ++jj) scores[jj] /= sum;
            for (std::size_t ch = 0; ch < hd; ++ch) {
              double acc = 0.0;
              for (std::size_t jj = 0; jj < l; ++jj) acc += scores[jj] * v[jj * c + h * hd + ch];
              attn_out[i * c + h * hd + ch] = acc;
            }
          }
        }
        for (std::size_t i = 0; i < l; ++i) {
          double* dst = out_grid.data() + cells[i] * c;
          for (std::size_t j = 0; j < c; ++j) {
            double s = p.b_out[j];
            for (std::size_t ch = 0; ch < c; ++ch) s += attn_out[i * c + ch] * p.w_out[ch * c + j];
            dst[j] = s;
          }
        }
      }
    }
  }

  // unroll and crop back to the valid extents
  Tensor out(Shape{tv, hv, wv, c});
  for (std::size_t t = 0; t < tp; ++t) {
    const std::size_t ot = (t + st) % tp;
    if (ot >= tv) continue;
    for (std::size_t y = 0; y < hp; ++y) {
      const std::size_t oy = (y + sy) % hp;
      if (oy >= hv) continue;
      for (std::size_t z = 0; z < wp; ++z) {
        const std::size_t ox = (z + sx) % wp;
        if (ox >= wv) continue;
        const double* src = out_grid.data() + ((t * hp + y) * wp + z) * c;
        for (std::size_t ch = 0; ch < c; ++ch) {
          out[((ot * hv + oy) * wv + ox) * c + ch] = src[ch];
        }
      }
    }
  }
  return out;
}

}  // namespace flunet::ref
