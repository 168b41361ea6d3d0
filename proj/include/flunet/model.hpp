#ifndef FLUNET_MODEL_HPP_
#define FLUNET_MODEL_HPP_

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "flunet/graph.hpp"
#include "flunet/tensor.hpp"
#include "flunet/tpsa.hpp"

// FluNet: patch embedding, four encoder stages of (T-PSA or vanilla window
// attention) transformer blocks with spatial patch merging in between, and a
// two-layer point-wise head whose 1-channel map is averaged into the score.
namespace flunet::model {

struct ModelConfig {
  std::size_t channels = 24;                       // stage s uses channels * 2^s
  std::array<std::size_t, 4> depths{1, 1, 2, 1};
  std::size_t frames = 16, height = 56, width = 56;
  std::array<std::size_t, 3> window{4, 7, 7};      // (D, S, S) on the feature grid
  std::size_t gamma = 2;                           // compression in T-PSA stages
  std::array<std::size_t, 4> heads{3, 6, 12, 24};  // capped at stage channels / 8
  std::array<bool, 4> tpsa_stages{true, true, true, true};
  bool shifted_windows = true;  // alternate blocks get a half-window cyclic shift
  std::size_t mlp_ratio = 4;
  std::size_t head_hidden = 64;
  bool per_head_bias = true;
  std::string activation = "gelu";

  // Desk-scale default; runs every check in minutes on a CPU.
  static ModelConfig toy();
  // Full-scale geometry: 128 frames at 224x224, C=96, depths (2,2,6,2),
  // window (32,7,7), gamma 2.
  static ModelConfig paper();

  void validate() const;
  std::size_t stage_channels(std::size_t s) const;
  std::size_t stage_heads(std::size_t s) const;
  tpsa::TPSAConfig stage_attention(std::size_t s) const;
  // feature extents entering stage s (before any window padding)
  std::array<std::size_t, 3> stage_extents(std::size_t s) const;
  std::array<std::size_t, 3> encoder_output_extents() const;
};

struct BlockParams {
  Tensor norm1_g, norm1_b;
  tpsa::TPSAParams attn;
  Tensor norm2_g, norm2_b;
  Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

struct MergeParams {
  Tensor norm_g, norm_b;  // over 4C concatenated channels
  Tensor w;               // [4C, 2C], no bias
};

struct FluNetParams {
  Tensor embed_w, embed_b;  // [2*4*4*3, C], [C]
  std::vector<std::vector<BlockParams>> stages;
  std::vector<MergeParams> merges;  // between consecutive stages
  Tensor final_norm_g, final_norm_b;
  Tensor head_w1, head_b1;  // [8C, hidden]
  Tensor head_w2, head_b2;  // [hidden, 1]

  static FluNetParams init(const ModelConfig& cfg, std::uint64_t seed);
  std::size_t count() const;
  bool all_finite() const;

  // Stable-order traversal (checkpointing, the optimizer, gradient plumbing).
  void visit(const std::function<void(const std::string&, Tensor&)>& f);
  void visit(const std::function<void(const std::string&, const Tensor&)>& f) const;
};

// Graph-bound mirror of FluNetParams; Vars appear in visit() order.
struct FluNetVars {
  std::vector<ad::Var> ordered;                          // aligned with visit()
  static FluNetVars bind(ad::Graph& g, const FluNetParams& p, bool trainable);
  ad::Var at(std::size_t i) const { return ordered[i]; }
};

// One video [T,H,W,3] -> scalar score node. `vars` must be bound to `g`.
ad::Var build_score(ad::Graph& g, ad::Var video, const ModelConfig& cfg, const FluNetVars& vars);

// Eager stage-by-stage surfaces.
Tensor patch_embed(const Tensor& video, const FluNetParams& p, const ModelConfig& cfg);
Tensor encode(const Tensor& x_embedded, const FluNetParams& p, const ModelConfig& cfg);
double head_score(const Tensor& x_encoded, const FluNetParams& p, const ModelConfig& cfg);
double forward(const Tensor& video, const FluNetParams& p, const ModelConfig& cfg);

// Closed-form cost: 1 multiply-add = 1 FLOP, elementwise terms counted
// linearly (layernorm 8/elem, gelu 8/elem, softmax 4/entry, adds 1/elem).
struct ModelCost {
  double matmul_flops = 0.0;
  double other_flops = 0.0;
  std::size_t params = 0;
  double total_flops() const { return matmul_flops + other_flops; }
  double gflops() const { return total_flops() / 1e9; }
};
ModelCost model_cost(const ModelConfig& cfg);

}  // namespace flunet::model

#endif  // FLUNET_MODEL_HPP_
