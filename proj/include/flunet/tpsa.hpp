#ifndef FLUNET_TPSA_HPP_
#define FLUNET_TPSA_HPP_

#include <array>
#include <cstddef>
#include <optional>
#include <tuple>
#include <vector>

#include "flunet/graph.hpp"
#include "flunet/rng.hpp"
#include "flunet/tensor.hpp"

// Temporal permuted self-attention: window attention whose K/V projections are
// compressed to C/gamma channels and whose temporal tokens are folded into the
// channel dimension, shrinking the key set per query by a factor of gamma.
namespace flunet::tpsa {

struct TPSAConfig {
  std::size_t temporal_window = 4;  // D, in feature-map frames
  std::size_t spatial_window = 7;   // S
  std::size_t gamma = 1;            // channel compression / temporal grouping factor
  std::size_t heads = 1;
  std::size_t channels = 8;         // C
  bool per_head_bias = true;

  void validate() const;  // throws ConfigError
  std::size_t head_dim() const { return channels / heads; }
  std::size_t compressed_channels() const { return channels / gamma; }
  // one relative-bias table row: (2D - gamma) * (2S - 1)^2 entries
  std::size_t bias_entries() const;
  std::size_t bias_rows() const { return per_head_bias ? heads : 1; }
};

struct TPSAParams {
  Tensor w_q, b_q;      // [C, C], [C]
  Tensor w_k, b_k;      // [C, C/gamma], [C/gamma]
  Tensor w_v, b_v;      // [C, C/gamma], [C/gamma]
  Tensor w_out, b_out;  // [C, C], [C]
  Tensor bias_table;    // [bias_rows, bias_entries]

  static TPSAParams init(const TPSAConfig& cfg, Rng& rng);
  void validate(const TPSAConfig& cfg) const;  // throws DimError on any mismatch
  std::size_t count() const;
};

// Resolved window geometry for one feature map. Windows never exceed the
// (padded) feature extents: the configured window is capped per axis, and the
// temporal cap is kept divisible by gamma.
struct WindowGeom {
  std::array<std::size_t, 3> valid{};    // original (T', H', W')
  std::array<std::size_t, 3> window{};   // effective (D, Sh, Sw)
  std::array<std::size_t, 3> padded{};   // after trailing-edge zero padding
  std::array<std::size_t, 3> counts{};   // windows per axis
  std::array<std::ptrdiff_t, 3> shift{}; // cyclic shift applied before partition
  std::size_t channels = 0;

  std::size_t window_count() const { return counts[0] * counts[1] * counts[2]; }
  std::size_t window_len() const { return window[0] * window[1] * window[2]; }  // L
  std::size_t key_len(std::size_t gamma) const { return window_len() / gamma; } // L'
  bool padding_present() const;
  bool shift_present() const;
};

WindowGeom compute_geometry(const std::array<std::size_t, 3>& extents, std::size_t channels,
                            const TPSAConfig& cfg, bool shifted);

// Eager window set (spec surface; the graph path uses the *_graph builders).
struct WindowSet {
  Tensor windows;  // [N, L, C]
  WindowGeom geom;
};

WindowSet partition_windows(const Tensor& x, const TPSAConfig& cfg, bool shifted);
Tensor merge_windows(const WindowSet& ws);

// (Q [N,L,C], K [N,L,C/g], V [N,L,C/g])
std::tuple<Tensor, Tensor, Tensor> project_qkv(const WindowSet& ws, const TPSAParams& p,
                                               const TPSAConfig& cfg);

// Fold groups of gamma consecutive temporal tokens into channels, t-major:
// [N, D*S2, C/g] -> [N, (D/g)*S2, C]. Group g owns source frames [g*gamma, (g+1)*gamma).
Tensor permute_temporal(const Tensor& kv, const WindowGeom& geom, std::size_t gamma);
Tensor unpermute_temporal(const Tensor& kvp, const WindowGeom& geom, std::size_t gamma);

// Additive attention mask, 0 for allowed pairs and kMaskValue for pairs that
// cross a shift boundary or hit padded keys. Empty optional when nothing is
// masked. Shape [N, L, L'].
inline constexpr double kMaskValue = -1e9;
std::optional<Tensor> attention_mask(const WindowGeom& geom, std::size_t gamma);

// Relative-position index into the bias table for every (query, key-group)
// pair; key group g sits at temporal coordinate g*gamma. Length L * L'.
std::vector<std::size_t> bias_index_map(const TPSAConfig& cfg, const WindowGeom& geom);

// Full operator, output shape == input shape.
Tensor forward(const Tensor& x, const TPSAParams& p, const TPSAConfig& cfg, bool shifted);

// Graph builders (the training path).
struct ParamVars {
  ad::Var w_q, b_q, w_k, b_k, w_v, b_v, w_out, b_out, bias_table;
};
ParamVars bind_params(ad::Graph& g, const TPSAParams& p, bool trainable);

ad::Var partition_windows_graph(ad::Graph& g, ad::Var x, const WindowGeom& geom);
ad::Var merge_windows_graph(ad::Graph& g, ad::Var win, const WindowGeom& geom);
ad::Var forward_graph(ad::Graph& g, ad::Var x, const ParamVars& p, const TPSAConfig& cfg,
                      bool shifted);

// Closed-form cost of one attention application on a feature map, matching the
// kernels actually run (padded tokens included). 1 multiply-add = 1 FLOP;
// bias/softmax/scale terms are counted linearly under the same convention as
// model_cost (see model.hpp).
struct Cost {
  double matmul_flops = 0.0;  // multiply-adds inside matmuls
  double other_flops = 0.0;   // bias adds, scaling, softmax, masking
  std::size_t params = 0;
  double total() const { return matmul_flops + other_flops; }
};
Cost count_cost(const TPSAConfig& cfg, const std::array<std::size_t, 3>& extents, bool shifted);

}  // namespace flunet::tpsa

#endif  // FLUNET_TPSA_HPP_
