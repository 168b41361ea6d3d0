#ifndef FLUNET_WSA_REFERENCE_HPP_
#define FLUNET_WSA_REFERENCE_HPP_

#include "flunet/tensor.hpp"
#include "flunet/tpsa.hpp"

namespace flunet::ref {

// Vanilla window self-attention, written as independent serial loops (its own
// padding, cyclic shift, masking, bias lookup and softmax). Requires
// cfg.gamma == 1 so the parameter shapes coincide with the compressed
// operator; used as the equivalence oracle for tpsa::forward.
Tensor window_self_attention(const Tensor& x, const tpsa::TPSAParams& p,
                             const tpsa::TPSAConfig& cfg, bool shifted);

}  // namespace flunet::ref

#endif  // FLUNET_WSA_REFERENCE_HPP_
