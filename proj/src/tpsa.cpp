#include "flunet/tpsa.hpp"

#include <cmath>

#include "flunet/error.hpp"

namespace flunet::tpsa {

namespace {

std::size_t round_up(std::size_t v, std::size_t m) { return (v + m - 1) / m * m; }

Tensor init_weight(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.trunc_normal(0.02, 0.04);
  return t;
}

}  // namespace

void TPSAConfig::validate() const {
  if (channels == 0 || heads == 0 || gamma == 0 || temporal_window == 0 || spatial_window == 0) {
    throw ConfigError("tpsa: config fields must all be positive");
  }
  if (temporal_window % gamma != 0) {
    throw ConfigError("tpsa: temporal window must be divisible by gamma");
  }
  if (channels % gamma != 0) throw ConfigError("tpsa: channels must be divisible by gamma");
  if (channels % heads != 0) throw ConfigError("tpsa: channels must be divisible by heads");
}

std::size_t TPSAConfig::bias_entries() const {
  const std::size_t span_t = 2 * temporal_window - gamma;
  const std::size_t span_s = 2 * spatial_window - 1;
  return span_t * span_s * span_s;
}

TPSAParams TPSAParams::init(const TPSAConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t c = cfg.channels;
  const std::size_t cg = cfg.compressed_channels();
  TPSAParams p;
  p.w_q = init_weight({c, c}, rng);
  p.b_q = Tensor(Shape{c});
  p.w_k = init_weight({c, cg}, rng);
  p.b_k = Tensor(Shape{cg});
  p.w_v = init_weight({c, cg}, rng);
  p.b_v = Tensor(Shape{cg});
  p.w_out = init_weight({c, c}, rng);
  p.b_out = Tensor(Shape{c});
  p.bias_table = init_weight({cfg.bias_rows(), cfg.bias_entries()}, rng);
  return p;
}

void TPSAParams::validate(const TPSAConfig& cfg) const {
  const std::size_t c = cfg.channels;
  const std::size_t cg = cfg.compressed_channels();
  auto expect = [](const Tensor& t, const Shape& s, const char* name) {
    if (t.shape() != s) {
      throw DimError(std::string("tpsa params: ") + name + " must be " + shape_str(s) +
                     ", got " + shape_str(t.shape()));
    }
  };
  expect(w_q, {c, c}, "w_q");
  expect(b_q, {c}, "b_q");
  expect(w_k, {c, cg}, "w_k");
  expect(b_k, {cg}, "b_k");
  expect(w_v, {c, cg}, "w_v");
  expect(b_v, {cg}, "b_v");
  expect(w_out, {c, c}, "w_out");
  expect(b_out, {c}, "b_out");
  expect(bias_table, {cfg.bias_rows(), cfg.bias_entries()}, "bias_table");
}

std::size_t TPSAParams::count() const {
  return w_q.size() + b_q.size() + w_k.size() + b_k.size() + w_v.size() + b_v.size() +
         w_out.size() + b_out.size() + bias_table.size();
}

bool WindowGeom::padding_present() const {
  return padded[0] != valid[0] || padded[1] != valid[1] || padded[2] != valid[2];
}

bool WindowGeom::shift_present() const {
  return shift[0] != 0 || shift[1] != 0 || shift[2] != 0;
}

WindowGeom compute_geometry(const std::array<std::size_t, 3>& extents, std::size_t channels,
                            const TPSAConfig& cfg, bool shifted) {
  cfg.validate();
  if (extents[0] == 0 || extents[1] == 0 || extents[2] == 0) {
    throw ConfigError("tpsa: empty feature map");
  }
  WindowGeom g;
  g.valid = extents;
  g.channels = channels;
  // cap the window at the feature extents; the temporal cap stays a gamma multiple
  const std::size_t d =
      extents[0] >= cfg.temporal_window ? cfg.temporal_window : round_up(extents[0], cfg.gamma);
  g.window = {d, std::min(cfg.spatial_window, extents[1]),
              std::min(cfg.spatial_window, extents[2])};
  for (int a = 0; a < 3; ++a) {
    g.padded[a] = round_up(extents[a], g.window[a]);
    g.counts[a] = g.padded[a] / g.window[a];
    // no shift along an axis fully covered by one window
    g.shift[a] = (shifted && g.counts[a] > 1)
                     ? static_cast<std::ptrdiff_t>(g.window[a] / 2)
                     : 0;
  }
  return g;
}

ad::Var partition_windows_graph(ad::Graph& g, ad::Var x, const WindowGeom& geom) {
  const auto& v = g.value(x).shape();
  if (v.size() != 4 || v[0] != geom.valid[0] || v[1] != geom.valid[1] || v[2] != geom.valid[2] ||
      v[3] != geom.channels) {
    throw DimError("partition_windows: input does not match geometry");
  }
  if (geom.padding_present()) {
    x = g.pad_trailing(x, {geom.padded[0] - geom.valid[0], geom.padded[1] - geom.valid[1],
                           geom.padded[2] - geom.valid[2], 0});
  }
  if (geom.shift_present()) {
    x = g.roll(x, {-geom.shift[0], -geom.shift[1], -geom.shift[2], 0});
  }
  const auto [d, sh, sw] = geom.window;
  const auto [nt, nh, nw] = geom.counts;
  x = g.reshape(x, {nt, d, nh, sh, nw, sw, geom.channels});
  x = g.permute(x, {0, 2, 4, 1, 3, 5, 6});
  return g.reshape(x, {geom.window_count(), geom.window_len(), geom.channels});
}

ad::Var merge_windows_graph(ad::Graph& g, ad::Var win, const WindowGeom& geom) {
  const auto [d, sh, sw] = geom.window;
  const auto [nt, nh, nw] = geom.counts;
  ad::Var x = g.reshape(win, {nt, nh, nw, d, sh, sw, geom.channels});
  x = g.permute(x, {0, 3, 1, 4, 2, 5, 6});
  x = g.reshape(x, {geom.padded[0], geom.padded[1], geom.padded[2], geom.channels});
  if (geom.shift_present()) {
    x = g.roll(x, {geom.shift[0], geom.shift[1], geom.shift[2], 0});
  }
  if (geom.padding_present()) {
    x = g.crop_to(x, {geom.valid[0], geom.valid[1], geom.valid[2], geom.channels});
  }
  return x;
}

WindowSet partition_windows(const Tensor& x, const TPSAConfig& cfg, bool shifted) {
  if (x.rank() != 4) throw DimError("partition_windows: input must be [T,H,W,C]");
  WindowGeom geom =
      compute_geometry({x.extent(0), x.extent(1), x.extent(2)}, x.extent(3), cfg, shifted);
  ad::Graph g;
  ad::Var out = partition_windows_graph(g, g.input(x), geom);
  return WindowSet{g.value(out), geom};
}

Tensor merge_windows(const WindowSet& ws) {
  ad::Graph g;
  return g.value(merge_windows_graph(g, g.input(ws.windows), ws.geom));
}

std::tuple<Tensor, Tensor, Tensor> project_qkv(const WindowSet& ws, const TPSAParams& p,
                                               const TPSAConfig& cfg) {
  p.validate(cfg);
  if (ws.geom.channels != cfg.channels) {
    throw DimError("project_qkv: window channels do not match config");
  }
  const std::size_t n = ws.geom.window_count();
  const std::size_t l = ws.geom.window_len();
  const Tensor flat = ops::reshape(ws.windows, {n * l, cfg.channels});
  auto proj = [&](const Tensor& w, const Tensor& b) {
    Tensor y = ops::add_rowvec(ops::matmul(flat, w), b);
    return ops::reshape(y, {n, l, w.extent(1)});
  };
  return {proj(p.w_q, p.b_q), proj(p.w_k, p.b_k), proj(p.w_v, p.b_v)};
}

Tensor permute_temporal(const Tensor& kv, const WindowGeom& geom, std::size_t gamma) {
  const std::size_t d = geom.window[0];
  if (d % gamma != 0) throw ConfigError("permute_temporal: window not divisible by gamma");
  const std::size_t n = kv.extent(0);
  const std::size_t s2 = geom.window[1] * geom.window[2];
  const std::size_t cg = kv.extent(2);
  if (kv.extent(1) != d * s2) throw DimError("permute_temporal: token count mismatch");
  Tensor x = ops::reshape(kv, {n, d / gamma, gamma, s2, cg});
  x = ops::permute(x, {0, 1, 3, 2, 4});
  return ops::reshape(x, {n, (d / gamma) * s2, gamma * cg});
}

Tensor unpermute_temporal(const Tensor& kvp, const WindowGeom& geom, std::size_t gamma) {
  const std::size_t d = geom.window[0];
  const std::size_t n = kvp.extent(0);
  const std::size_t s2 = geom.window[1] * geom.window[2];
  const std::size_t c = kvp.extent(2);
  if (c % gamma != 0 || kvp.extent(1) != (d / gamma) * s2) {
    throw DimError("unpermute_temporal: shape mismatch");
  }
  Tensor x = ops::reshape(kvp, {n, d / gamma, s2, gamma, c / gamma});
  x = ops::permute(x, {0, 1, 3, 2, 4});
  return ops::reshape(x, {n, d * s2, c / gamma});
}

std::optional<Tensor> attention_mask(const WindowGeom& geom, std::size_t gamma) {
  const bool pad = geom.padding_present();
  const bool sh = geom.shift_present();
  if (!pad && !sh) return std::nullopt;
  const auto [d, shh, sww] = geom.window;
  const std::size_t l = geom.window_len();
  const std::size_t lk = l / gamma;

  // per-axis original coordinate -> (region id, validity)
  std::array<std::vector<int>, 3> region;
  std::array<std::vector<bool>, 3> valid;
  for (int a = 0; a < 3; ++a) {
    const std::size_t e = geom.padded[a];
    const std::size_t w = geom.window[a];
    const auto s = static_cast<std::size_t>(geom.shift[a]);
    region[a].resize(e);
    valid[a].resize(e);
    for (std::size_t p = 0; p < e; ++p) {
      const std::size_t orig = (p + s) % e;
      valid[a][p] = orig < geom.valid[a];
      if (s == 0) {
        region[a][p] = 0;
      } else {
        region[a][p] = orig < e - w ? 0 : (orig < e - s ? 1 : 2);
      }
    }
  }

  const auto [nt, nh, nw] = geom.counts;
  Tensor mask(Shape{geom.window_count(), l, lk});
  std::size_t n = 0;
  for (std::size_t wt = 0; wt < nt; ++wt) {
    for (std::size_t wy = 0; wy < nh; ++wy) {
      for (std::size_t wx = 0; wx < nw; ++wx, ++n) {
        double* mwin = mask.data() + n * l * lk;
        for (std::size_t t = 0; t < d; ++t) {
          const int rq_t = region[0][wt * d + t];
          for (std::size_t y = 0; y < shh; ++y) {
            const int rq_y = region[1][wy * shh + y];
            for (std::size_t x = 0; x < sww; ++x) {
              const int rq_x = region[2][wx * sww + x];
              const std::size_t lq = (t * shh + y) * sww + x;
              for (std::size_t gt = 0; gt < d / gamma; ++gt) {
                for (std::size_t ky = 0; ky < shh; ++ky) {
                  const int rk_y = region[1][wy * shh + ky];
                  const bool vy = valid[1][wy * shh + ky];
                  for (std::size_t kx = 0; kx < sww; ++kx) {
                    const int rk_x = region[2][wx * sww + kx];
                    const bool vx = valid[2][wx * sww + kx];
                    // a key group is usable only if every constituent frame is
                    // in-bounds and shares the query's region
                    bool ok = vy && vx && rk_y == rq_y && rk_x == rq_x;
                    for (std::size_t dg = 0; ok && dg < gamma; ++dg) {
                      const std::size_t kt = wt * d + gt * gamma + dg;
                      ok = valid[0][kt] && region[0][kt] == rq_t;
                    }
                    const std::size_t lkid = (gt * shh + ky) * sww + kx;
                    mwin[lq * lk + lkid] = ok ? 0.0 : kMaskValue;
                  }
                }
              }
            }
          }
        }
      }
    }
  }
  return mask;
}

std::vector<std::size_t> bias_index_map(const TPSAConfig& cfg, const WindowGeom& geom) {
  const auto [d, shh, sww] = geom.window;
  const std::size_t gamma = cfg.gamma;
  const std::size_t l = geom.window_len();
  const std::size_t lk = l / gamma;
  const std::size_t span_s = 2 * cfg.spatial_window - 1;
  const auto off_t = static_cast<std::ptrdiff_t>(cfg.temporal_window - gamma);
  const auto off_s = static_cast<std::ptrdiff_t>(cfg.spatial_window - 1);
  std::vector<std::size_t> idx(l * lk);
  for (std::size_t t = 0; t < d; ++t) {
    for (std::size_t y = 0; y < shh; ++y) {
      for (std::size_t x = 0; x < sww; ++x) {
        const std::size_t lq = (t * shh + y) * sww + x;
        for (std::size_t gt = 0; gt < d / gamma; ++gt) {
          const auto dt = static_cast<std::ptrdiff_t>(t) -
                          static_cast<std::ptrdiff_t>(gt * gamma) + off_t;
          for (std::size_t ky = 0; ky < shh; ++ky) {
            const auto dy = static_cast<std::ptrdiff_t>(y) - static_cast<std::ptrdiff_t>(ky) +
                            off_s;
            for (std::size_t kx = 0; kx < sww; ++kx) {
              const auto dx = static_cast<std::ptrdiff_t>(x) - static_cast<std::ptrdiff_t>(kx) +
                              off_s;
              const std::size_t lkid = (gt * shh + ky) * sww + kx;
              idx[lq * lk + lkid] = (static_cast<std::size_t>(dt) * span_s +
                                     static_cast<std::size_t>(dy)) *
                                        span_s +
                                    static_cast<std::size_t>(dx);
            }
          }
        }
      }
    }
  }
  return idx;
}

ParamVars bind_params(ad::Graph& g, const TPSAParams& p, bool trainable) {
  auto bind = [&](const Tensor& t) { return trainable ? g.param(t) : g.input(t); };
  return ParamVars{bind(p.w_q),   bind(p.b_q),   bind(p.w_k), bind(p.b_k), bind(p.w_v),
                   bind(p.b_v),   bind(p.w_out), bind(p.b_out), bind(p.bias_table)};
}

ad::Var forward_graph(ad::Graph& g, ad::Var x, const ParamVars& p, const TPSAConfig& cfg,
                      bool shifted) {
  const Shape& xs = g.value(x).shape();
  if (xs.size() != 4 || xs[3] != cfg.channels) {
    throw DimError("tpsa forward: input must be [T,H,W,C] with C matching the config");
  }
  const WindowGeom geom = compute_geometry({xs[0], xs[1], xs[2]}, cfg.channels, cfg, shifted);
  const std::size_t n = geom.window_count();
  const std::size_t l = geom.window_len();
  const std::size_t lk = geom.key_len(cfg.gamma);
  const std::size_t c = cfg.channels;
  const std::size_t heads = cfg.heads;
  const std::size_t hd = cfg.head_dim();
  const std::size_t d = geom.window[0];
  const std::size_t s2 = geom.window[1] * geom.window[2];

  ad::Var win = partition_windows_graph(g, x, geom);
  ad::Var flat = g.reshape(win, {n * l, c});

  ad::Var q = g.reshape(g.add_rowvec(g.matmul(flat, p.w_q), p.b_q), {n, l, c});
  ad::Var k = g.reshape(g.add_rowvec(g.matmul(flat, p.w_k), p.b_k), {n, l, c / cfg.gamma});
  ad::Var v = g.reshape(g.add_rowvec(g.matmul(flat, p.w_v), p.b_v), {n, l, c / cfg.gamma});

  // fold gamma temporal tokens into channels, t-major
  auto fold = [&](ad::Var kv) {
    kv = g.reshape(kv, {n, d / cfg.gamma, cfg.gamma, s2, c / cfg.gamma});
    kv = g.permute(kv, {0, 1, 3, 2, 4});
    return g.reshape(kv, {n, lk, c});
  };
  ad::Var kp = fold(k);
  ad::Var vp = fold(v);

  auto split_heads = [&](ad::Var t, std::size_t len) {
    t = g.reshape(t, {n, len, heads, hd});
    t = g.permute(t, {0, 2, 1, 3});
    return g.reshape(t, {n * heads, len, hd});
  };
  ad::Var qh = split_heads(q, l);
  ad::Var kph = split_heads(kp, lk);
  ad::Var vph = split_heads(vp, lk);

  ad::Var scores = g.bmm(qh, g.permute(kph, {0, 2, 1}));
  scores = g.scale(scores, 1.0 / std::sqrt(static_cast<double>(hd)));

  ad::Var bias = g.gather_columns(p.bias_table, bias_index_map(cfg, geom));
  bias = g.reshape(bias, {cfg.bias_rows(), l, lk});
  scores = g.add(scores, g.tile_leading(bias, n * heads / cfg.bias_rows()));

  if (auto mask = attention_mask(geom, cfg.gamma)) {
    scores = g.add(scores, g.repeat_interleave_leading(g.input(std::move(*mask)), heads));
  }

  ad::Var attn = g.softmax_lastdim(scores);
  ad::Var out = g.bmm(attn, vph);  // [n*heads, l, hd]

  out = g.reshape(out, {n, heads, l, hd});
  out = g.permute(out, {0, 2, 1, 3});
  out = g.reshape(out, {n * l, c});
  out = g.add_rowvec(g.matmul(out, p.w_out), p.b_out);
  out = g.reshape(out, {n, l, c});
  return merge_windows_graph(g, out, geom);
}

Tensor forward(const Tensor& x, const TPSAParams& p, const TPSAConfig& cfg, bool shifted) {
  p.validate(cfg);
  ad::Graph g;
  return g.value(forward_graph(g, g.input(x), bind_params(g, p, false), cfg, shifted));
}

Cost count_cost(const TPSAConfig& cfg, const std::array<std::size_t, 3>& extents, bool shifted) {
  const WindowGeom geom = compute_geometry(extents, cfg.channels, cfg, shifted);
  const auto n = static_cast<double>(geom.window_count());
  const auto l = static_cast<double>(geom.window_len());
  const auto lk = static_cast<double>(geom.key_len(cfg.gamma));
  const auto c = static_cast<double>(cfg.channels);
  const auto cg = static_cast<double>(cfg.compressed_channels());
  const auto h = static_cast<double>(cfg.heads);
  const double tokens = n * l;

  Cost cost;
  cost.matmul_flops = tokens * c * c          // Q projection
                      + 2.0 * tokens * c * cg  // K, V projections
                      + tokens * lk * c        // scores Q Kp^T (all heads)
                      + tokens * lk * c        // attn Vp
                      + tokens * c * c;        // output projection
  const double score_entries = n * h * l * lk;
  cost.other_flops = tokens * c + 2.0 * tokens * cg + tokens * c  // projection biases
                     + score_entries                              // 1/sqrt(dk) scaling
                     + score_entries                              // relative-bias add
                     + 4.0 * score_entries;                       // softmax (max, exp, sum, div)
  const bool masked = geom.padding_present() || geom.shift_present();
  if (masked) cost.other_flops += score_entries;
  cost.params = static_cast<std::size_t>(c * c) + cfg.channels                   // w_q, b_q
                + 2 * (cfg.channels * cfg.compressed_channels() +
                       cfg.compressed_channels())                                 // w_k/b_k, w_v/b_v
                + static_cast<std::size_t>(c * c) + cfg.channels                  // w_out, b_out
                + cfg.bias_rows() * cfg.bias_entries();
  return cost;
}

}  // namespace flunet::tpsa
