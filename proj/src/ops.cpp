// SPDX-License-Identifier: Apache-2.0
#include "tdae/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace tdae {

namespace {

template <typename S>
Shape binary_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (a.shape() == b.shape() || b.size() == 1) return a.shape();
  if (a.size() == 1) return b.shape();
  throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                       shape_string(b.shape()));
}

// Applies f to (a, b) with single-element broadcast, producing n values.
template <typename S, typename F>
VectorX<S> zip(const VectorX<S>& a, const VectorX<S>& b, Index n, F f) {
  VectorX<S> out(n);
  if (a.size() == n && b.size() == n) {
    out.array() = f(a.array(), b.array());
  } else if (a.size() == n) {
    out.array() = f(a.array(), b[0]);
  } else {
    out.array() = f(a[0], b.array());
  }
  return out;
}

// Adds an output-shaped gradient into an operand that may have been broadcast.
template <typename S>
void accumulate_broadcast(Graph<S>& g, Index id, const VectorX<S>& grad) {
  if (auto* slot = g.grad_slot(id)) {
    if (slot->size() == grad.size()) {
      slot->data() += grad;
    } else {
      slot->data()[0] += grad.sum();
    }
  }
}

template <typename S, typename Fwd, typename Deriv>
Var<S> unary(const char* op, Var<S> a, Fwd fwd, Deriv deriv) {
  auto& g = a.graph();
  Tensor<S> out(a.shape());
  out.data().array() = fwd(a.value().data().array());
  const Index ia = a.id();
  return g.push(op, std::move(out), {a}, [ia, deriv](Graph<S>& gr, Index self, const Tensor<S>& gout) {
    if (auto* slot = gr.grad_slot(ia)) {
      slot->data().array() +=
          gout.data().array() * deriv(gr.value(ia).data().array(), gr.value(self).data().array());
    }
  });
}

struct Split3 {
  Index outer, dim, inner;
};

Split3 split_axis(const Shape& shape, Index axis, const char* op) {
  if (axis < 0 || axis >= static_cast<Index>(shape.size())) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
                         shape_string(shape));
  }
  Split3 s{1, shape[static_cast<std::size_t>(axis)], 1};
  for (Index i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <typename S>
Var<S> reduce(const char* op, Var<S> a, std::optional<Index> axis, bool average) {
  auto& g = a.graph();
  const auto& av = a.value();
  const Index ia = a.id();
  if (!axis) {
    const S factor = average ? S(1) / static_cast<S>(av.size()) : S(1);
    auto out = Tensor<S>::scalar(av.data().sum() * factor);
    return g.push(op, std::move(out), {a}, [ia, factor](Graph<S>& gr, Index, const Tensor<S>& gout) {
      if (auto* slot = gr.grad_slot(ia)) slot->data().array() += gout[0] * factor;
    });
  }
  const Split3 s = split_axis(av.shape(), *axis, op);
  Shape out_shape = av.shape();
  out_shape.erase(out_shape.begin() + *axis);
  Tensor<S> out(out_shape);
  const S factor = average ? S(1) / static_cast<S>(s.dim) : S(1);
  for (Index o = 0; o < s.outer; ++o) {
    for (Index j = 0; j < s.dim; ++j) {
      out.data().segment(o * s.inner, s.inner) += av.data().segment((o * s.dim + j) * s.inner, s.inner);
    }
  }
  out.data() *= factor;
  return g.push(op, std::move(out), {a}, [ia, s, factor](Graph<S>& gr, Index, const Tensor<S>& gout) {
    if (auto* slot = gr.grad_slot(ia)) {
      for (Index o = 0; o < s.outer; ++o) {
        for (Index j = 0; j < s.dim; ++j) {
          slot->data().segment((o * s.dim + j) * s.inner, s.inner) += factor * gout.data().segment(o * s.inner, s.inner);
        }
      }
    }
  });
}

}  // namespace

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  Shape shape = binary_shape(av, bv, "add");
  const Index n = shape_size(shape);
  Tensor<S> out(shape, zip<S>(av.data(), bv.data(), n, [](auto x, auto y) { return x + y; }));
  const Index ia = a.id(), ib = b.id();
  return a.graph().push("add", std::move(out), {a, b}, [ia, ib](Graph<S>& g, Index, const Tensor<S>& gout) {
    accumulate_broadcast(g, ia, gout.data());
    accumulate_broadcast(g, ib, gout.data());
  });
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  Shape shape = binary_shape(av, bv, "sub");
  const Index n = shape_size(shape);
  Tensor<S> out(shape, zip<S>(av.data(), bv.data(), n, [](auto x, auto y) { return x - y; }));
  const Index ia = a.id(), ib = b.id();
  return a.graph().push("sub", std::move(out), {a, b}, [ia, ib](Graph<S>& g, Index, const Tensor<S>& gout) {
    accumulate_broadcast(g, ia, gout.data());
    accumulate_broadcast<S>(g, ib, -gout.data());
  });
}

template <typename S>
Var<S> mul(Var<S> a, Var<S> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  Shape shape = binary_shape(av, bv, "mul");
  const Index n = shape_size(shape);
  Tensor<S> out(shape, zip<S>(av.data(), bv.data(), n, [](auto x, auto y) { return x * y; }));
  const Index ia = a.id(), ib = b.id();
  return a.graph().push("mul", std::move(out), {a, b}, [ia, ib, n](Graph<S>& g, Index, const Tensor<S>& gout) {
    auto times = [](auto x, auto y) { return x * y; };
    if (g.requires_grad(ia)) accumulate_broadcast(g, ia, zip<S>(gout.data(), g.value(ib).data(), n, times));
    if (g.requires_grad(ib)) accumulate_broadcast(g, ib, zip<S>(gout.data(), g.value(ia).data(), n, times));
  });
}

template <typename S>
Var<S> scale(Var<S> a, S factor) {
  Tensor<S> out(a.shape(), a.value().data() * factor);
  const Index ia = a.id();
  return a.graph().push("scale", std::move(out), {a}, [ia, factor](Graph<S>& g, Index, const Tensor<S>& gout) {
    if (auto* slot = g.grad_slot(ia)) slot->data() += factor * gout.data();
  });
}

template <typename S>
Var<S> neg(Var<S> a) {
  return scale(a, S(-1));
}

template <typename S>
Var<S> relu(Var<S> a) {
  return unary<S>(
      "relu", a, [](const auto& x) { return x.max(S(0)); },
      [](const auto& x, const auto&) { return (x > S(0)).template cast<S>(); });
}

template <typename S>
Var<S> sigmoid(Var<S> a) {
  return unary<S>(
      "sigmoid", a, [](const auto& x) { return S(1) / (S(1) + (-x).exp()); },
      [](const auto&, const auto& y) { return y * (S(1) - y); });
}

template <typename S>
Var<S> tanh(Var<S> a) {
  return unary<S>(
      "tanh", a, [](const auto& x) { return x.tanh(); },
      [](const auto&, const auto& y) { return S(1) - y.square(); });
}

template <typename S>
Var<S> square(Var<S> a) {
  return unary<S>(
      "square", a, [](const auto& x) { return x.square(); },
      [](const auto& x, const auto&) { return S(2) * x; });
}

template <typename S>
Var<S> exp(Var<S> a) {
  return unary<S>(
      "exp", a, [](const auto& x) { return x.exp(); }, [](const auto&, const auto& y) { return y; });
}

template <typename S>
Var<S> log(Var<S> a) {
  if ((a.value().data().array() <= S(0)).any()) throw DomainError("log: non-positive input");
  return unary<S>(
      "log", a, [](const auto& x) { return x.log(); }, [](const auto& x, const auto&) { return x.inverse(); });
}

template <typename S>
Var<S> clamp(Var<S> a, S lo, S hi) {
  if (!(lo <= hi)) throw DomainError("clamp: lower bound exceeds upper bound");
  return unary<S>(
      "clamp", a, [lo, hi](const auto& x) { return x.max(lo).min(hi); },
      [lo, hi](const auto& x, const auto&) { return ((x > lo) && (x < hi)).template cast<S>(); });
}

template <typename S>
Var<S> sum(Var<S> a, std::optional<Index> axis) {
  return reduce("sum", a, axis, false);
}

template <typename S>
Var<S> mean(Var<S> a, std::optional<Index> axis) {
  return reduce("mean", a, axis, true);
}

template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0]) {
    throw DimensionError("matmul: incompatible shapes " + shape_string(av.shape()) + " and " +
                         shape_string(bv.shape()));
  }
  Tensor<S> out({av.shape()[0], bv.shape()[1]});
  out.matrix().noalias() = av.matrix() * bv.matrix();
  const Index ia = a.id(), ib = b.id();
  return a.graph().push("matmul", std::move(out), {a, b}, [ia, ib](Graph<S>& g, Index, const Tensor<S>& gout) {
    if (auto* slot = g.grad_slot(ia)) slot->matrix().noalias() += gout.matrix() * g.value(ib).matrix().transpose();
    if (auto* slot = g.grad_slot(ib)) slot->matrix().noalias() += g.value(ia).matrix().transpose() * gout.matrix();
  });
}

template <typename S>
Var<S> add_bias(Var<S> x, Var<S> bias) {
  const auto& xv = x.value();
  const auto& bv = bias.value();
  if (xv.rank() < 2 || bv.rank() != 1 || bv.size() != xv.shape()[1]) {
    throw DimensionError("add_bias: bias " + shape_string(bv.shape()) + " does not match axis 1 of " +
                         shape_string(xv.shape()));
  }
  const Index outer = xv.shape()[0];
  const Index channels = bv.size();
  const Index inner = xv.size() / (outer * channels);
  Tensor<S> out = xv;
  for (Index o = 0; o < outer; ++o) {
    Eigen::Map<RowMatrixX<S>> block(out.data().data() + o * channels * inner, channels, inner);
    block.colwise() += bv.data();
  }
  const Index ix = x.id(), ib = bias.id();
  return x.graph().push("add_bias", std::move(out), {x, bias},
                        [ix, ib, outer, channels, inner](Graph<S>& g, Index, const Tensor<S>& gout) {
                          if (auto* slot = g.grad_slot(ix)) slot->data() += gout.data();
                          if (auto* slot = g.grad_slot(ib)) {
                            for (Index o = 0; o < outer; ++o) {
                              Eigen::Map<const RowMatrixX<S>> block(gout.data().data() + o * channels * inner,
                                                                    channels, inner);
                              slot->data() += block.rowwise().sum();
                            }
                          }
                        });
}

template <typename S>
Var<S> conv2d(Var<S> input, Var<S> kernels, Index stride) {
  const auto& xv = input.value();
  const auto& kv = kernels.value();
  if (stride <= 0) throw DimensionError("conv2d: stride must be positive");
  if (xv.rank() != 3 && xv.rank() != 4) {
    throw DimensionError("conv2d: input must be [C x H x W] or [N x C x H x W], got " + shape_string(xv.shape()));
  }
  const bool batched = xv.rank() == 4;
  const Index n = batched ? xv.shape()[0] : 1;
  const Index off = batched ? 1 : 0;
  const Index c_in = xv.shape()[static_cast<std::size_t>(off)];
  const Index h = xv.shape()[static_cast<std::size_t>(off + 1)];
  const Index w = xv.shape()[static_cast<std::size_t>(off + 2)];
  if (kv.rank() != 4 || kv.shape()[1] != c_in) {
    throw DimensionError("conv2d: kernels " + shape_string(kv.shape()) + " do not match input " +
                         shape_string(xv.shape()));
  }
  const Index c_out = kv.shape()[0], kh = kv.shape()[2], kw = kv.shape()[3];
  if (kh > h || kw > w) {
    throw DimensionError("conv2d: kernel " + shape_string(kv.shape()) + " larger than input " +
                         shape_string(xv.shape()));
  }
  const Index ho = (h - kh) / stride + 1;
  const Index wo = (w - kw) / stride + 1;
  const Index patch = c_in * kh * kw;
  const Index pixels = ho * wo;

  // im2col: one column per (sample, output pixel)
  RowMatrixX<S> cols(patch, n * pixels);
  const S* x = xv.data().data();
  for (Index s = 0; s < n; ++s) {
    for (Index c = 0; c < c_in; ++c) {
      for (Index ky = 0; ky < kh; ++ky) {
        for (Index kx = 0; kx < kw; ++kx) {
          const Index row = (c * kh + ky) * kw + kx;
          for (Index oy = 0; oy < ho; ++oy) {
            const S* src = x + ((s * c_in + c) * h + oy * stride + ky) * w + kx;
            S* dst = cols.data() + row * n * pixels + s * pixels + oy * wo;
            for (Index ox = 0; ox < wo; ++ox) dst[ox] = src[ox * stride];
          }
        }
      }
    }
  }
  Eigen::Map<const RowMatrixX<S>> kmat(kv.data().data(), c_out, patch);
  RowMatrixX<S> result = kmat * cols;  // [c_out x n*pixels]

  Shape out_shape = batched ? Shape{n, c_out, ho, wo} : Shape{c_out, ho, wo};
  Tensor<S> out(out_shape);
  for (Index s = 0; s < n; ++s) {
    for (Index co = 0; co < c_out; ++co) {
      out.data().segment((s * c_out + co) * pixels, pixels) = result.row(co).segment(s * pixels, pixels).transpose();
    }
  }

  const Index ix = input.id(), ik = kernels.id();
  return input.graph().push(
      "conv2d", std::move(out), {input, kernels},
      [=, cols = std::move(cols)](Graph<S>& g, Index, const Tensor<S>& gout) {
        RowMatrixX<S> gmat(c_out, n * pixels);
        for (Index s = 0; s < n; ++s) {
          for (Index co = 0; co < c_out; ++co) {
            gmat.row(co).segment(s * pixels, pixels) = gout.data().segment((s * c_out + co) * pixels, pixels).transpose();
          }
        }
        if (auto* slot = g.grad_slot(ik)) {
          Eigen::Map<RowMatrixX<S>> kgrad(slot->data().data(), c_out, patch);
          kgrad.noalias() += gmat * cols.transpose();
        }
        if (auto* slot = g.grad_slot(ix)) {
          Eigen::Map<const RowMatrixX<S>> kmat_b(g.value(ik).data().data(), c_out, patch);
          RowMatrixX<S> gcols = kmat_b.transpose() * gmat;
          S* dx = slot->data().data();
          for (Index s = 0; s < n; ++s) {
            for (Index c = 0; c < c_in; ++c) {
              for (Index ky = 0; ky < kh; ++ky) {
                for (Index kx = 0; kx < kw; ++kx) {
                  const Index row = (c * kh + ky) * kw + kx;
                  for (Index oy = 0; oy < ho; ++oy) {
                    S* dst = dx + ((s * c_in + c) * h + oy * stride + ky) * w + kx;
                    const S* src = gcols.data() + row * n * pixels + s * pixels + oy * wo;
                    for (Index ox = 0; ox < wo; ++ox) dst[ox * stride] += src[ox];
                  }
                }
              }
            }
          }
        }
      });
}

template <typename S>
Var<S> reshape(Var<S> a, Shape shape) {
  Tensor<S> out = a.value().reshaped(std::move(shape));
  const Index ia = a.id();
  return a.graph().push("reshape", std::move(out), {a}, [ia](Graph<S>& g, Index, const Tensor<S>& gout) {
    if (auto* slot = g.grad_slot(ia)) slot->data() += gout.data();
  });
}

template <typename S>
Var<S> log_softmax(Var<S> logits) {
  const auto& lv = logits.value();
  if (lv.rank() != 1 && lv.rank() != 2) {
    throw DimensionError("log_softmax: logits must be [A] or [N x A], got " + shape_string(lv.shape()));
  }
  Tensor<S> out(lv.shape());
  auto x = lv.matrix();
  auto y = out.matrix();
  for (Index r = 0; r < x.rows(); ++r) {
    const S m = x.row(r).maxCoeff();
    // The max-subtracted sum is >= 1; the floor only guards degenerate input.
    const S z = std::max<S>((x.row(r).array() - m).exp().sum(), S(1e-12));
    y.row(r).array() = x.row(r).array() - m - std::log(z);
  }
  const Index il = logits.id();
  return logits.graph().push("log_softmax", std::move(out), {logits},
                             [il](Graph<S>& g, Index self, const Tensor<S>& gout) {
                               if (auto* slot = g.grad_slot(il)) {
                                 auto gy = gout.matrix();
                                 const RowMatrixX<S> p = g.value(self).matrix().array().exp().matrix();
                                 auto gx = slot->matrix();
                                 for (Index r = 0; r < gy.rows(); ++r) {
                                   gx.row(r).array() += gy.row(r).array() - p.row(r).array() * gy.row(r).sum();
                                 }
                               }
                             });
}

template <typename S>
Var<S> softmax(Var<S> logits) {
  return exp(log_softmax(logits));
}

template <typename S>
Var<S> pick(Var<S> x, std::span<const Index> index) {
  const auto& xv = x.value();
  if (xv.rank() != 2 || xv.shape()[0] != static_cast<Index>(index.size())) {
    throw DimensionError("pick: expected [N x A] with N = " + std::to_string(index.size()) + ", got " +
                         shape_string(xv.shape()));
  }
  const Index cols = xv.shape()[1];
  std::vector<Index> idx(index.begin(), index.end());
  Tensor<S> out({static_cast<Index>(idx.size())});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= cols) {
      throw DomainError("pick: index " + std::to_string(idx[i]) + " out of range [0, " + std::to_string(cols) + ")");
    }
    out[static_cast<Index>(i)] = xv[static_cast<Index>(i) * cols + idx[i]];
  }
  const Index ix = x.id();
  return x.graph().push("pick", std::move(out), {x}, [ix, cols, idx](Graph<S>& g, Index, const Tensor<S>& gout) {
    if (auto* slot = g.grad_slot(ix)) {
      for (std::size_t i = 0; i < idx.size(); ++i) (*slot)[static_cast<Index>(i) * cols + idx[i]] += gout[static_cast<Index>(i)];
    }
  });
}

template <typename S>
Var<S> softmax_logprob(Var<S> logits, Index action) {
  const auto& lv = logits.value();
  if (lv.rank() != 1 || lv.size() < 2) {
    throw DimensionError("softmax_logprob: logits must be [A] with A >= 2, got " + shape_string(lv.shape()));
  }
  if (action < 0 || action >= lv.size()) {
    throw DomainError("softmax_logprob: action " + std::to_string(action) + " out of range [0, " +
                      std::to_string(lv.size()) + ")");
  }
  const Index one[1] = {action};
  return reshape(pick(log_softmax(reshape(logits, {1, lv.size()})), std::span<const Index>(one)), Shape{});
}

template <typename S>
Var<S> rows(Var<S> x, Index begin, Index count) {
  const auto& xv = x.value();
  if (xv.rank() < 1 || begin < 0 || count <= 0 || begin + count > xv.shape()[0]) {
    throw DimensionError("rows: range [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") invalid for shape " + shape_string(xv.shape()));
  }
  const Index stride = xv.size() / xv.shape()[0];
  Shape shape = xv.shape();
  shape[0] = count;
  Tensor<S> out(shape, xv.data().segment(begin * stride, count * stride));
  const Index ix = x.id();
  return x.graph().push("rows", std::move(out), {x}, [ix, begin, stride](Graph<S>& g, Index, const Tensor<S>& gout) {
    if (auto* slot = g.grad_slot(ix)) slot->data().segment(begin * stride, gout.size()) += gout.data();
  });
}

template <typename S>
Var<S> concat_rows(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const Shape& first = parts.front().shape();
  if (first.empty()) throw DimensionError("concat_rows: scalar inputs");
  Shape shape = first;
  shape[0] = 0;
  std::vector<Index> offsets;
  Index total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size() || !std::equal(s.begin() + 1, s.end(), first.begin() + 1)) {
      throw DimensionError("concat_rows: trailing shape mismatch " + shape_string(first) + " vs " + shape_string(s));
    }
    shape[0] += s[0];
    offsets.push_back(total);
    total += p.size();
  }
  Tensor<S> out(shape);
  std::vector<Index> ids;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    out.data().segment(offsets[i], parts[i].size()) = parts[i].value().data();
    ids.push_back(parts[i].id());
  }
  return parts.front().graph().push("concat_rows", std::move(out), parts,
                                    [ids, offsets](Graph<S>& g, Index, const Tensor<S>& gout) {
                                      for (std::size_t i = 0; i < ids.size(); ++i) {
                                        if (auto* slot = g.grad_slot(ids[i])) {
                                          slot->data() += gout.data().segment(offsets[i], slot->size());
                                        }
                                      }
                                    });
}

template <typename S>
Var<S> detach(Var<S> a) {
  return a.graph().constant(a.value());
}

#define TDAE_INSTANTIATE_OPS(S)                                               \
  template Var<S> add(Var<S>, Var<S>);                                        \
  template Var<S> sub(Var<S>, Var<S>);                                        \
  template Var<S> mul(Var<S>, Var<S>);                                        \
  template Var<S> scale(Var<S>, S);                                           \
  template Var<S> neg(Var<S>);                                                \
  template Var<S> relu(Var<S>);                                               \
  template Var<S> sigmoid(Var<S>);                                            \
  template Var<S> tanh(Var<S>);                                               \
  template Var<S> square(Var<S>);                                             \
  template Var<S> exp(Var<S>);                                                \
  template Var<S> log(Var<S>);                                                \
  template Var<S> clamp(Var<S>, S, S);                                        \
  template Var<S> sum(Var<S>, std::optional<Index>);                          \
  template Var<S> mean(Var<S>, std::optional<Index>);                         \
  template Var<S> matmul(Var<S>, Var<S>);                                     \
  template Var<S> add_bias(Var<S>, Var<S>);                                   \
  template Var<S> conv2d(Var<S>, Var<S>, Index);                              \
  template Var<S> reshape(Var<S>, Shape);                                     \
  template Var<S> log_softmax(Var<S>);                                        \
  template Var<S> softmax(Var<S>);                                            \
  template Var<S> pick(Var<S>, std::span<const Index>);                       \
  template Var<S> softmax_logprob(Var<S>, Index);                             \
  template Var<S> rows(Var<S>, Index, Index);                                 \
  template Var<S> concat_rows(const std::vector<Var<S>>&);                    \
  template Var<S> detach(Var<S>);

TDAE_INSTANTIATE_OPS(double)
TDAE_INSTANTIATE_OPS(float)

}  // namespace tdae
