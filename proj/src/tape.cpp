#include "alnmt/tape.hpp"

#include <algorithm>
#include <cmath>

namespace alnmt {

namespace {

template <typename T>
Tensor<T> zeros_like(const Tensor<T>& t) {
  return Tensor<T>(t.shape(), std::vector<T>(t.size(), T(0)));
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ContractError(what);
}

}  // namespace

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::parameter(Parameter<T>& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return {this, it->second};
  Node n;
  n.value = p.value;
  n.param = &p;
  n.needs_grad = record_;
  nodes_.push_back(std::move(n));
  param_nodes_.emplace(&p, nodes_.size() - 1);
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::push(Tensor<T> value, std::span<const Var<T>> parents,
                     std::function<void(Tape&, std::size_t)> backward_fn) {
  Node n;
  n.value = std::move(value);
  if (record_) {
    for (const auto& p : parents) n.needs_grad = n.needs_grad || nodes_[p.id].needs_grad;
    if (n.needs_grad) n.backward = std::move(backward_fn);
  }
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <typename T>
Tensor<T>& Tape<T>::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.shape().empty()) n.grad = zeros_like(n.value);
  return n.grad;
}

template <typename T>
Tensor<T> Tape<T>::grad(Var<T> v) const {
  const Node& n = nodes_[v.id];
  return n.grad.shape().empty() ? zeros_like(n.value) : n.grad;
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  require(record_, "backward on a tape that does not record");
  const Tensor<T>& lv = nodes_[loss.id].value;
  require(lv.rows() == 1 && lv.cols() == 1,
          "backward requires a scalar loss, got " + shape_string(lv.shape()));
  for (auto& n : nodes_) n.grad = Tensor<T>();
  grad_buffer(loss.id)[0] = T(1);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.shape().empty()) continue;
    if (n.backward) n.backward(*this, i);
    if (n.param) kernels::accumulate(n.param->grad, n.grad);
  }
}

namespace ops {

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tape<T>& t = *a.tape;
  return t.push(kernels::matmul(a.value(), b.value()), {a, b},
                [a, b](Tape<T>& tp, std::size_t self) {
                  const Tensor<T>& g = tp.node_grad(self);
                  if (tp.needs_grad(a.id))
                    kernels::accumulate(tp.grad_buffer(a.id), kernels::matmul_nt(g, tp.value(b)));
                  if (tp.needs_grad(b.id))
                    kernels::accumulate(tp.grad_buffer(b.id), kernels::matmul_tn(tp.value(a), g));
                });
}

template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  Tape<T>& t = *a.tape;
  return t.push(kernels::matmul_nt(a.value(), b.value()), {a, b},
                [a, b](Tape<T>& tp, std::size_t self) {
                  const Tensor<T>& g = tp.node_grad(self);
                  if (tp.needs_grad(a.id))
                    kernels::accumulate(tp.grad_buffer(a.id), kernels::matmul(g, tp.value(b)));
                  if (tp.needs_grad(b.id))
                    kernels::accumulate(tp.grad_buffer(b.id), kernels::matmul_tn(g, tp.value(a)));
                });
}

template <typename T>
Var<T> transpose(Var<T> a) {
  return a.tape->push(kernels::transpose(a.value()), {a}, [a](Tape<T>& tp, std::size_t self) {
    kernels::accumulate(tp.grad_buffer(a.id), kernels::transpose(tp.node_grad(self)));
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require(a.value().same_shape(b.value()), "add shape mismatch: " +
                                               shape_string(a.value().shape()) + " vs " +
                                               shape_string(b.value().shape()));
  Tensor<T> out = a.value();
  kernels::accumulate(out, b.value());
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape<T>& tp, std::size_t self) {
    const Tensor<T>& g = tp.node_grad(self);
    if (tp.needs_grad(a.id)) kernels::accumulate(tp.grad_buffer(a.id), g);
    if (tp.needs_grad(b.id)) kernels::accumulate(tp.grad_buffer(b.id), g);
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require(a.value().same_shape(b.value()), "mul shape mismatch");
  Tensor<T> out = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape<T>& tp, std::size_t self) {
    const Tensor<T>& g = tp.node_grad(self);
    if (tp.needs_grad(a.id)) {
      Tensor<T>& ga = tp.grad_buffer(a.id);
      const Tensor<T>& bv = tp.value(b);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (tp.needs_grad(b.id)) {
      Tensor<T>& gb = tp.grad_buffer(b.id);
      const Tensor<T>& av = tp.value(a);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v *= factor;
  return a.tape->push(std::move(out), {a}, [a, factor](Tape<T>& tp, std::size_t self) {
    const Tensor<T>& g = tp.node_grad(self);
    Tensor<T>& ga = tp.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
}

template <typename T>
Var<T> add_row(Var<T> a, Var<T> row) {
  const Tensor<T>& rv = row.value();
  require(rv.rows() == 1 && rv.cols() == a.value().cols(), "add_row shape mismatch");
  Tensor<T> out = a.value();
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += rv[c];
  return a.tape->push(std::move(out), {a, row}, [a, row](Tape<T>& tp, std::size_t self) {
    const Tensor<T>& g = tp.node_grad(self);
    if (tp.needs_grad(a.id)) kernels::accumulate(tp.grad_buffer(a.id), g);
    if (tp.needs_grad(row.id)) {
      Tensor<T>& gr = tp.grad_buffer(row.id);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gr[c] += g(r, c);
    }
  });
}

template <typename T>
Var<T> rowwise_softmax(Var<T> a) {
  Tensor<T> out = a.value();
  kernels::softmax_rows(out);
  return a.tape->push(std::move(out), {a}, [a](Tape<T>& tp, std::size_t self) {
    const Tensor<T>& g = tp.node_grad(self);
    const Tensor<T>& y = tp.value({&tp, self});
    Tensor<T>& ga = tp.grad_buffer(a.id);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      T dot = 0;
      for (std::size_t c = 0; c < y.cols(); ++c) dot += g(r, c) * y(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) ga(r, c) += y(r, c) * (g(r, c) - dot);
    }
  });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps) {
  const std::size_t n = x.value().cols();
  require(gain.value().size() == n && bias.value().size() == n, "layer_norm affine shape mismatch");
  std::vector<T> inv_std;
  Tensor<T> xhat = kernels::normalize_rows(x.value(), eps, &inv_std);
  Tensor<T> out = xhat;
  const Tensor<T>& gv = gain.value();
  const Tensor<T>& bv = bias.value();
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < n; ++c) out(r, c) = xhat(r, c) * gv[c] + bv[c];
  return x.tape->push(
      std::move(out), {x, gain, bias},
      [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<T>& tp,
                                                                             std::size_t self) {
        const Tensor<T>& g = tp.node_grad(self);
        const Tensor<T>& gv = tp.value(gain);
        const std::size_t rows = g.rows();
        const std::size_t cols = g.cols();
        if (tp.needs_grad(gain.id)) {
          Tensor<T>& gg = tp.grad_buffer(gain.id);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) gg[c] += g(r, c) * xhat(r, c);
        }
        if (tp.needs_grad(bias.id)) {
          Tensor<T>& gb = tp.grad_buffer(bias.id);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) gb[c] += g(r, c);
        }
        if (tp.needs_grad(x.id)) {
          Tensor<T>& gx = tp.grad_buffer(x.id);
          const T nc = static_cast<T>(cols);
          std::vector<T> dxhat(cols);
          for (std::size_t r = 0; r < rows; ++r) {
            T sum_d = 0;
            T sum_dx = 0;
            for (std::size_t c = 0; c < cols; ++c) {
              dxhat[c] = g(r, c) * gv[c];
              sum_d += dxhat[c];
              sum_dx += dxhat[c] * xhat(r, c);
            }
            for (std::size_t c = 0; c < cols; ++c)
              gx(r, c) += inv_std[r] / nc * (nc * dxhat[c] - sum_d - xhat(r, c) * sum_dx);
          }
        }
      });
}

template <typename T>
Var<T> relu(Var<T> a) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = v > T(0) ? v : T(0);
  return a.tape->push(std::move(out), {a}, [a](Tape<T>& tp, std::size_t self) {
    const Tensor<T>& g = tp.node_grad(self);
    const Tensor<T>& av = tp.value(a);
    Tensor<T>& ga = tp.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (av[i] > T(0)) ga[i] += g[i];
  });
}

template <typename T>
Var<T> embedding_lookup(Var<T> table, std::span<const int> ids) {
  const Tensor<T>& tv = table.value();
  const std::size_t d = tv.cols();
  Tensor<T> out(ids.size(), d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < tv.rows(),
            "embedding id " + std::to_string(ids[i]) + " out of range");
    auto src = tv.row(static_cast<std::size_t>(ids[i]));
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  std::vector<int> keep(ids.begin(), ids.end());
  return table.tape->push(std::move(out), {table},
                          [table, keep = std::move(keep)](Tape<T>& tp, std::size_t self) {
                            const Tensor<T>& g = tp.node_grad(self);
                            Tensor<T>& gt = tp.grad_buffer(table.id);
                            for (std::size_t i = 0; i < keep.size(); ++i) {
                              auto dst = gt.row(static_cast<std::size_t>(keep[i]));
                              auto src = g.row(i);
                              for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
                            }
                          });
}

template <typename T>
Var<T> concat(std::span<const Var<T>> parts) {
  require(!parts.empty(), "concat of zero tensors");
  Tape<T>& tp = *parts[0].tape;
  const std::size_t rows = parts[0].value().rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    require(p.value().rows() == rows, "concat row mismatch");
    cols += p.value().cols();
  }
  Tensor<T> out(rows, cols);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const Tensor<T>& v = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < v.cols(); ++c) out(r, off + c) = v(r, c);
    off += v.cols();
  }
  std::vector<Var<T>> keep(parts.begin(), parts.end());
  Var<T> result = tp.push(std::move(out), parts, [keep](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.node_grad(self);
    std::size_t o = 0;
    for (const auto& p : keep) {
      const std::size_t pc = t.value(p).cols();
      if (t.needs_grad(p.id)) {
        Tensor<T>& gp = t.grad_buffer(p.id);
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < pc; ++c) gp(r, c) += g(r, o + c);
      }
      o += pc;
    }
  });
  return result;
}

template <typename T>
Var<T> masked_fill(Var<T> a, const std::vector<bool>& mask) {
  require(mask.size() == a.value().size(), "masked_fill mask size mismatch");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i)
    if (mask[i]) out[i] = masked_logit<T>();
  return a.tape->push(std::move(out), {a}, [a, mask](Tape<T>& tp, std::size_t self) {
    const Tensor<T>& g = tp.node_grad(self);
    Tensor<T>& ga = tp.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!mask[i]) ga[i] += g[i];
  });
}

template <typename T>
Var<T> apply_mask(Var<T> a, Tensor<T> mask) {
  require(mask.size() == a.value().size(), "apply_mask size mismatch");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return a.tape->push(std::move(out), {a},
                      [a, mask = std::move(mask)](Tape<T>& tp, std::size_t self) {
                        const Tensor<T>& g = tp.node_grad(self);
                        Tensor<T>& ga = tp.grad_buffer(a.id);
                        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mask[i];
                      });
}

template <typename T>
Var<T> sum(Var<T> a) {
  T s = 0;
  for (auto v : a.value().values()) s += v;
  return a.tape->push(Tensor<T>::scalar(s), {a}, [a](Tape<T>& tp, std::size_t self) {
    const T g = tp.node_grad(self)[0];
    for (auto& v : tp.grad_buffer(a.id).values()) v += g;
  });
}

template <typename T>
Var<T> smoothed_cross_entropy(Var<T> logits, std::span<const int> targets, T smoothing,
                              T normalizer) {
  const Tensor<T>& lv = logits.value();
  require(lv.rows() == targets.size(), "cross entropy target count mismatch");
  require(normalizer > T(0), "cross entropy normalizer must be positive");
  Tensor<T> logp = lv;
  kernels::log_softmax_rows(logp);
  const std::size_t vocab = lv.cols();
  const T uniform = smoothing / static_cast<T>(vocab);
  T loss = 0;
  for (std::size_t r = 0; r < logp.rows(); ++r) {
    const auto row = logp.row(r);
    const auto gold = static_cast<std::size_t>(targets[r]);
    require(gold < vocab, "cross entropy target out of range");
    T row_sum = 0;
    for (auto v : row) row_sum += v;
    loss -= (T(1) - smoothing) * row[gold] + uniform * row_sum;
  }
  loss /= normalizer;
  std::vector<int> keep(targets.begin(), targets.end());
  return logits.tape->push(
      Tensor<T>::scalar(loss), {logits},
      [logits, keep = std::move(keep), logp = std::move(logp), smoothing, uniform,
       normalizer](Tape<T>& tp, std::size_t self) {
        const T g = tp.node_grad(self)[0] / normalizer;
        Tensor<T>& gl = tp.grad_buffer(logits.id);
        for (std::size_t r = 0; r < logp.rows(); ++r) {
          for (std::size_t c = 0; c < logp.cols(); ++c) {
            T target = uniform;
            if (c == static_cast<std::size_t>(keep[r])) target += T(1) - smoothing;
            gl(r, c) += g * (std::exp(logp(r, c)) - target);
          }
        }
      });
}

#define ALNMT_INSTANTIATE_OPS(T)                                                         \
  template Var<T> matmul(Var<T>, Var<T>);                                                \
  template Var<T> matmul_nt(Var<T>, Var<T>);                                             \
  template Var<T> transpose(Var<T>);                                                     \
  template Var<T> add(Var<T>, Var<T>);                                                   \
  template Var<T> mul(Var<T>, Var<T>);                                                   \
  template Var<T> scale(Var<T>, T);                                                      \
  template Var<T> add_row(Var<T>, Var<T>);                                               \
  template Var<T> rowwise_softmax(Var<T>);                                               \
  template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, T);                                 \
  template Var<T> relu(Var<T>);                                                          \
  template Var<T> embedding_lookup(Var<T>, std::span<const int>);                        \
  template Var<T> concat(std::span<const Var<T>>);                                       \
  template Var<T> masked_fill(Var<T>, const std::vector<bool>&);                         \
  template Var<T> apply_mask(Var<T>, Tensor<T>);                                         \
  template Var<T> sum(Var<T>);                                                           \
  template Var<T> smoothed_cross_entropy(Var<T>, std::span<const int>, T, T);

ALNMT_INSTANTIATE_OPS(float)
ALNMT_INSTANTIATE_OPS(double)
#undef ALNMT_INSTANTIATE_OPS

}  // namespace ops

template class Tape<float>;
template class Tape<double>;

}  // namespace alnmt
