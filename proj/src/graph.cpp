#include "flunet/graph.hpp"

#include <cmath>
#include <utility>

#include "flunet/error.hpp"

namespace flunet::ad {

namespace {

void check_graph(Var a, Var b, const char* op) {
  if (a.graph == nullptr || a.graph != b.graph) {
    throw ArgError(std::string(op) + ": operands belong to different graphs");
  }
}

}  // namespace

Var Graph::emplace(Tensor value, std::vector<std::size_t> inputs,
                   std::function<void(Graph&, std::size_t)> backprop) {
  nodes_.push_back(Node{std::move(value), Tensor{}, false, false, std::move(inputs),
                        std::move(backprop)});
  return Var{this, nodes_.size() - 1};
}

const Graph::Node& Graph::node(Var v) const {
  if (v.graph != this || v.id >= nodes_.size()) throw ArgError("graph: stale node handle");
  return nodes_[v.id];
}

Var Graph::input(Tensor value) {
  ensure_finite(value, "graph input");
  return emplace(std::move(value), {}, nullptr);
}

Var Graph::param(Tensor value) {
  ensure_finite(value, "graph param");
  Var v = emplace(std::move(value), {}, nullptr);
  nodes_[v.id].is_trainable = true;
  return v;
}

const Tensor& Graph::value(Var v) const { return node(v).value; }

bool Graph::trainable(Var v) const { return node(v).is_trainable; }

const Tensor& Graph::grad(Var v) const {
  const Node& n = node(v);
  if (!n.grad_live) {
    static thread_local Tensor zero;
    zero = Tensor(n.value.shape());
    return zero;
  }
  return n.grad;
}

Tensor& Graph::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.grad_live) {
    n.grad = Tensor(n.value.shape());
    n.grad_live = true;
  }
  return n.grad;
}

void Graph::acc_grad(std::size_t id, const Tensor& g) {
  Tensor& dst = grad_buffer(id);
  if (!dst.same_shape(g)) throw DimError("graph: gradient shape mismatch");
  ops::detail::axpy(g.size(), 1.0, g.data(), dst.data());
}

void Graph::backward(Var loss) {
  if (loss.graph != this || loss.id >= nodes_.size()) throw ArgError("backward: bad loss handle");
  if (nodes_[loss.id].value.size() != 1) {
    throw ArgError("backward: loss must be a scalar, shape is " +
                   shape_str(nodes_[loss.id].value.shape()));
  }
  for (Node& n : nodes_) {
    n.grad = Tensor{};
    n.grad_live = false;
  }
  // reachability sweep so unrelated nodes are never touched
  std::vector<bool> reachable(nodes_.size(), false);
  reachable[loss.id] = true;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    if (!reachable[id]) continue;
    for (std::size_t in : nodes_[id].inputs) reachable[in] = true;
  }
  grad_buffer(loss.id).fill(1.0);
  backward_visits_ = 0;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    if (!reachable[id]) continue;
    ++backward_visits_;
    if (nodes_[id].backprop) nodes_[id].backprop(*this, id);
  }
  // every trainable leaf gets a buffer (zeros when unreached) and a finite check
  for (std::size_t id = 0; id <= loss.id; ++id) {
    if (nodes_[id].is_trainable) {
      ensure_finite(grad_buffer(id), "backward gradient");
    }
  }
}

Var Graph::add(Var a, Var b) {
  check_graph(a, b, "add");
  return emplace(ops::add(value(a), value(b)), {a.id, b.id},
                 [a = a.id, b = b.id](Graph& g, std::size_t self) {
                   g.acc_grad(a, g.nodes_[self].grad);
                   g.acc_grad(b, g.nodes_[self].grad);
                 });
}

Var Graph::sub(Var a, Var b) {
  check_graph(a, b, "sub");
  return emplace(ops::sub(value(a), value(b)), {a.id, b.id},
                 [a = a.id, b = b.id](Graph& g, std::size_t self) {
                   const Tensor& dy = g.nodes_[self].grad;
                   g.acc_grad(a, dy);
                   Tensor& db = g.grad_buffer(b);
                   ops::detail::axpy(dy.size(), -1.0, dy.data(), db.data());
                 });
}

Var Graph::mul(Var a, Var b) {
  check_graph(a, b, "mul");
  return emplace(ops::mul(value(a), value(b)), {a.id, b.id},
                 [a = a.id, b = b.id](Graph& g, std::size_t self) {
                   const Tensor& dy = g.nodes_[self].grad;
                   const Tensor& av = g.nodes_[a].value;
                   const Tensor& bv = g.nodes_[b].value;
                   Tensor& da = g.grad_buffer(a);
                   Tensor& db = g.grad_buffer(b);
                   for (std::size_t i = 0; i < dy.size(); ++i) {
                     da[i] += dy[i] * bv[i];
                     db[i] += dy[i] * av[i];
                   }
                 });
}

Var Graph::scale(Var a, double s) {
  return emplace(ops::scale(value(a), s), {a.id}, [a = a.id, s](Graph& g, std::size_t self) {
    const Tensor& dy = g.nodes_[self].grad;
    ops::detail::axpy(dy.size(), s, dy.data(), g.grad_buffer(a).data());
  });
}

Var Graph::add_scalar(Var a, double s) {
  return emplace(ops::add_scalar(value(a), s), {a.id}, [a = a.id](Graph& g, std::size_t self) {
    g.acc_grad(a, g.nodes_[self].grad);
  });
}

Var Graph::add_rowvec(Var x, Var v) {
  check_graph(x, v, "add_rowvec");
  return emplace(ops::add_rowvec(value(x), value(v)), {x.id, v.id},
                 [x = x.id, v = v.id](Graph& g, std::size_t self) {
                   const Tensor& dy = g.nodes_[self].grad;
                   g.acc_grad(x, dy);
                   Tensor& dv = g.grad_buffer(v);
                   const std::size_t n = dv.size();
                   const std::size_t rows = dy.size() / n;
                   for (std::size_t r = 0; r < rows; ++r) {
                     for (std::size_t j = 0; j < n; ++j) dv[j] += dy[r * n + j];
                   }
                 });
}

Var Graph::matmul(Var a, Var b) {
  check_graph(a, b, "matmul");
  return emplace(
      ops::matmul(value(a), value(b)), {a.id, b.id},
      [a = a.id, b = b.id](Graph& g, std::size_t self) {
        const Tensor& dy = g.nodes_[self].grad;
        const Tensor& av = g.nodes_[a].value;
        const Tensor& bv = g.nodes_[b].value;
        const std::size_t m = av.extent(0), k = av.extent(1), n = bv.extent(1);
        std::vector<double> bt(k * n);
        ops::detail::transpose2d(k, n, bv.data(), bt.data());
        ops::detail::gemm_nn(m, n, k, dy.data(), bt.data(), g.grad_buffer(a).data(), true);
        std::vector<double> at(m * k);
        ops::detail::transpose2d(m, k, av.data(), at.data());
        ops::detail::gemm_nn(k, m, n, at.data(), dy.data(), g.grad_buffer(b).data(), true);
      });
}

Var Graph::bmm(Var a, Var b) {
  check_graph(a, b, "bmm");
  return emplace(
      ops::bmm(value(a), value(b)), {a.id, b.id},
      [a = a.id, b = b.id](Graph& g, std::size_t self) {
        const Tensor& dy = g.nodes_[self].grad;
        const Tensor& av = g.nodes_[a].value;
        const Tensor& bv = g.nodes_[b].value;
        const std::size_t bt = av.extent(0), m = av.extent(1), k = av.extent(2),
                          n = bv.extent(2);
        Tensor& da = g.grad_buffer(a);
        Tensor& db = g.grad_buffer(b);
        std::vector<double> scratch_bt(k * n), scratch_at(m * k);
        for (std::size_t q = 0; q < bt; ++q) {
          const double* aq = av.data() + q * m * k;
          const double* bq = bv.data() + q * k * n;
          const double* dq = dy.data() + q * m * n;
          ops::detail::transpose2d(k, n, bq, scratch_bt.data());
          ops::detail::gemm_nn(m, n, k, dq, scratch_bt.data(), da.data() + q * m * k, true);
          ops::detail::transpose2d(m, k, aq, scratch_at.data());
          ops::detail::gemm_nn(k, m, n, scratch_at.data(), dq, db.data() + q * k * n, true);
        }
      });
}

Var Graph::softmax_lastdim(Var x) {
  return emplace(ops::softmax_lastdim(value(x)), {x.id},
                 [x = x.id](Graph& g, std::size_t self) {
                   const Tensor& y = g.nodes_[self].value;
                   const Tensor& dy = g.nodes_[self].grad;
                   const std::size_t n = y.shape().back();
                   ops::detail::softmax_backward_rows(y.size() / n, n, y.data(), dy.data(),
                                                      g.grad_buffer(x).data(), true);
                 });
}

Var Graph::layernorm_lastdim(Var x, Var gamma, Var beta, double eps) {
  check_graph(x, gamma, "layernorm_lastdim");
  check_graph(x, beta, "layernorm_lastdim");
  auto res = ops::layernorm_lastdim(value(x), value(gamma), value(beta), eps);
  return emplace(
      std::move(res.y), {x.id, gamma.id, beta.id},
      [x = x.id, ga = gamma.id, be = beta.id, mean = std::move(res.mean),
       rstd = std::move(res.rstd)](Graph& g, std::size_t self) {
        const Tensor& dy = g.nodes_[self].grad;
        const Tensor& xv = g.nodes_[x].value;
        const Tensor& gv = g.nodes_[ga].value;
        const std::size_t n = gv.size();
        const std::size_t rows = xv.size() / n;
        Tensor& dx = g.grad_buffer(x);
        Tensor& dg = g.grad_buffer(ga);
        Tensor& db = g.grad_buffer(be);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* xr = xv.data() + r * n;
          const double* dyr = dy.data() + r * n;
          double* dxr = dx.data() + r * n;
          const double mu = mean[r], rs = rstd[r];
          double s1 = 0.0, s2 = 0.0;  // mean(dxhat), mean(dxhat * xhat)
          for (std::size_t j = 0; j < n; ++j) {
            const double xhat = (xr[j] - mu) * rs;
            const double dxhat = dyr[j] * gv[j];
            s1 += dxhat;
            s2 += dxhat * xhat;
            dg[j] += dyr[j] * xhat;
            db[j] += dyr[j];
          }
          s1 /= static_cast<double>(n);
          s2 /= static_cast<double>(n);
          for (std::size_t j = 0; j < n; ++j) {
            const double xhat = (xr[j] - mu) * rs;
            dxr[j] += rs * (dyr[j] * gv[j] - s1 - xhat * s2);
          }
        }
      });
}

Var Graph::gelu(Var x) {
  return emplace(ops::gelu(value(x)), {x.id}, [x = x.id](Graph& g, std::size_t self) {
    const Tensor& dy = g.nodes_[self].grad;
    const Tensor dgrad = ops::gelu_grad(g.nodes_[x].value);
    Tensor& dx = g.grad_buffer(x);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * dgrad[i];
  });
}

Var Graph::relu(Var x) {
  // subgradient 0 at the kink
  return emplace(ops::relu(value(x)), {x.id}, [x = x.id](Graph& g, std::size_t self) {
    const Tensor& dy = g.nodes_[self].grad;
    const Tensor& xv = g.nodes_[x].value;
    Tensor& dx = g.grad_buffer(x);
    for (std::size_t i = 0; i < dy.size(); ++i) {
      if (xv[i] > 0.0) dx[i] += dy[i];
    }
  });
}

Var Graph::abs(Var x) {
  return emplace(ops::abs(value(x)), {x.id}, [x = x.id](Graph& g, std::size_t self) {
    const Tensor& dy = g.nodes_[self].grad;
    const Tensor& xv = g.nodes_[x].value;
    Tensor& dx = g.grad_buffer(x);
    for (std::size_t i = 0; i < dy.size(); ++i) {
      if (xv[i] > 0.0) dx[i] += dy[i];
      else if (xv[i] < 0.0) dx[i] -= dy[i];
    }
  });
}

Var Graph::reshape(Var x, Shape shape) {
  return emplace(ops::reshape(value(x), shape), {x.id},
                 [x = x.id](Graph& g, std::size_t self) {
                   const Tensor& dy = g.nodes_[self].grad;
                   Tensor& dx = g.grad_buffer(x);
                   ops::detail::axpy(dy.size(), 1.0, dy.data(), dx.data());
                 });
}

Var Graph::permute(Var x, std::vector<std::size_t> axes) {
  Tensor fwd = ops::permute(value(x), axes);
  return emplace(std::move(fwd), {x.id},
                 [x = x.id, axes = std::move(axes)](Graph& g, std::size_t self) {
                   g.acc_grad(x, ops::permute(g.nodes_[self].grad,
                                              ops::inverse_permutation(axes)));
                 });
}

Var Graph::pad_trailing(Var x, std::vector<std::size_t> pad_hi) {
  Tensor fwd = ops::pad_trailing(value(x), pad_hi);
  Shape orig = value(x).shape();
  return emplace(std::move(fwd), {x.id},
                 [x = x.id, orig = std::move(orig)](Graph& g, std::size_t self) {
                   g.acc_grad(x, ops::crop_to(g.nodes_[self].grad, orig));
                 });
}

Var Graph::crop_to(Var x, Shape extents) {
  Tensor fwd = ops::crop_to(value(x), extents);
  std::vector<std::size_t> pads(extents.size());
  for (std::size_t i = 0; i < extents.size(); ++i) pads[i] = value(x).shape()[i] - extents[i];
  return emplace(std::move(fwd), {x.id},
                 [x = x.id, pads = std::move(pads)](Graph& g, std::size_t self) {
                   g.acc_grad(x, ops::pad_trailing(g.nodes_[self].grad, pads));
                 });
}

Var Graph::roll(Var x, std::vector<std::ptrdiff_t> shifts) {
  Tensor fwd = ops::roll(value(x), shifts);
  return emplace(std::move(fwd), {x.id},
                 [x = x.id, shifts = std::move(shifts)](Graph& g, std::size_t self) {
                   std::vector<std::ptrdiff_t> inv(shifts.size());
                   for (std::size_t i = 0; i < shifts.size(); ++i) inv[i] = -shifts[i];
                   g.acc_grad(x, ops::roll(g.nodes_[self].grad, inv));
                 });
}

Var Graph::sum_all(Var x) {
  return emplace(ops::sum_all(value(x)), {x.id}, [x = x.id](Graph& g, std::size_t self) {
    const double dy = g.nodes_[self].grad.item();
    Tensor& dx = g.grad_buffer(x);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy;
  });
}

Var Graph::mean_all(Var x) {
  return emplace(ops::mean_all(value(x)), {x.id}, [x = x.id](Graph& g, std::size_t self) {
    const double dy = g.nodes_[self].grad.item() / static_cast<double>(g.nodes_[x].value.size());
    Tensor& dx = g.grad_buffer(x);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy;
  });
}

Var Graph::tile_leading(Var x, std::size_t n) {
  return emplace(ops::tile_leading(value(x), n), {x.id},
                 [x = x.id, n](Graph& g, std::size_t self) {
                   const Tensor& dy = g.nodes_[self].grad;
                   Tensor& dx = g.grad_buffer(x);
                   const std::size_t block = dx.size();
                   for (std::size_t c = 0; c < n; ++c) {
                     ops::detail::axpy(block, 1.0, dy.data() + c * block, dx.data());
                   }
                 });
}

Var Graph::repeat_interleave_leading(Var x, std::size_t r) {
  return emplace(ops::repeat_interleave_leading(value(x), r), {x.id},
                 [x = x.id, r](Graph& g, std::size_t self) {
                   const Tensor& dy = g.nodes_[self].grad;
                   Tensor& dx = g.grad_buffer(x);
                   const std::size_t d0 = dx.extent(0);
                   const std::size_t block = dx.size() / d0;
                   for (std::size_t i = 0; i < d0; ++i) {
                     for (std::size_t j = 0; j < r; ++j) {
                       ops::detail::axpy(block, 1.0, dy.data() + (i * r + j) * block,
                                         dx.data() + i * block);
                     }
                   }
                 });
}

Var Graph::gather_columns(Var table, std::vector<std::size_t> idx) {
  Tensor fwd = ops::gather_columns(value(table), idx);
  return emplace(std::move(fwd), {table.id},
                 [t = table.id, idx = std::move(idx)](Graph& g, std::size_t self) {
                   ops::scatter_columns_acc(g.grad_buffer(t), g.nodes_[self].grad, idx);
                 });
}

}  // namespace flunet::ad
