#ifndef FLUNET_GRAPH_HPP_
#define FLUNET_GRAPH_HPP_

#include <functional>
#include <vector>

#include "flunet/kernels.hpp"
#include "flunet/tensor.hpp"

namespace flunet::ad {

class Graph;

// Handle to a node in a Graph. Cheap to copy; valid for the graph's lifetime.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;
};

// Reverse-mode tape. Nodes are appended in topological order by construction
// (an op can only reference existing nodes), so backward() is a single reverse
// sweep that touches each node reachable from the loss exactly once.
// Single-writer: build and run backward from one thread; parallelism lives
// inside the kernels and across independent graphs.
class Graph {
 public:
  Var input(Tensor value);  // constant leaf
  Var param(Tensor value);  // trainable leaf

  const Tensor& value(Var v) const;
  const Tensor& grad(Var v) const;  // valid after backward(); zeros if unreached
  bool trainable(Var v) const;
  std::size_t node_count() const { return nodes_.size(); }
  std::size_t backward_visit_count() const { return backward_visits_; }

  // Gradient of a scalar loss with respect to every reachable node.
  void backward(Var loss);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double s);
  Var add_scalar(Var a, double s);
  Var add_rowvec(Var x, Var v);
  Var matmul(Var a, Var b);
  Var bmm(Var a, Var b);
  Var softmax_lastdim(Var x);
  Var layernorm_lastdim(Var x, Var gamma, Var beta, double eps);
  Var gelu(Var x);
  Var relu(Var x);
  Var abs(Var x);
  Var reshape(Var x, Shape shape);
  Var permute(Var x, std::vector<std::size_t> axes);
  Var pad_trailing(Var x, std::vector<std::size_t> pad_hi);
  Var crop_to(Var x, Shape extents);
  Var roll(Var x, std::vector<std::ptrdiff_t> shifts);
  Var sum_all(Var x);
  Var mean_all(Var x);
  Var tile_leading(Var x, std::size_t n);
  Var repeat_interleave_leading(Var x, std::size_t r);
  // out[a, i] = table[a, idx[i]]; adjoint scatter-adds into the table.
  Var gather_columns(Var table, std::vector<std::size_t> idx);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool grad_live = false;
    bool is_trainable = false;
    std::vector<std::size_t> inputs;
    std::function<void(Graph&, std::size_t)> backprop;
  };

  Var emplace(Tensor value, std::vector<std::size_t> inputs,
              std::function<void(Graph&, std::size_t)> backprop);
  const Node& node(Var v) const;
  Tensor& grad_buffer(std::size_t id);
  void acc_grad(std::size_t id, const Tensor& g);

  std::vector<Node> nodes_;
  std::size_t backward_visits_ = 0;
};

}  // namespace flunet::ad

#endif  // FLUNET_GRAPH_HPP_
