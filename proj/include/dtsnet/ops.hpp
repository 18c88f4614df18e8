#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "dtsnet/graph.hpp"

// Differentiable operators over channels-last tensors. Every op records an exact adjoint.
// Broadcasting is limited to bias-add and per-channel affine; `expand` makes any other
// replication explicit.

namespace dtsnet {

namespace detail {

template <typename Scalar>
void require_same_shape(const Var<Scalar>& a, const Var<Scalar>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                     b.shape().str());
  }
}

template <typename Scalar>
Graph<Scalar>& graph_of(const Var<Scalar>& a) {
  return a.graph();
}

template <typename Scalar>
void require_channels(const Var<Scalar>& v, Index expected, const char* op, const char* what) {
  if (v.value().size() != expected) {
    throw ShapeError(std::string(op) + ": " + what + " has " + std::to_string(v.value().size()) +
                     " elements, expected " + std::to_string(expected));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------------------------
// Elementwise arithmetic

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape(a, b, "add");
  Tensor<Scalar> out(a.shape(), a.value().vec() + b.value().vec());
  return a.graph().record(
      std::move(out), {a, b},
      [](const Tensor<Scalar>& g, std::span<Tensor<Scalar>* const> gs) {
        if (gs[0]) gs[0]->vec() += g.vec();
        if (gs[1]) gs[1]->vec() += g.vec();
      },
      "add");
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor<Scalar> out(a.shape(), a.value().vec() - b.value().vec());
  return a.graph().record(
      std::move(out), {a, b},
      [](const Tensor<Scalar>& g, std::span<Tensor<Scalar>* const> gs) {
        if (gs[0]) gs[0]->vec() += g.vec();
        if (gs[1]) gs[1]->vec() -= g.vec();
      },
      "sub");
}

template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor<Scalar> out(a.shape(), a.value().vec().cwiseProduct(b.value().vec()));
  return a.graph().record(
      std::move(out), {a, b},
      [a, b](const Tensor<Scalar>& g, std::span<Tensor<Scalar>* const> gs) {
        if (gs[0]) gs[0]->vec() += g.vec().cwiseProduct(b.value().vec());
        if (gs[1]) gs[1]->vec() += g.vec().cwiseProduct(a.value().vec());
      },
      "mul");
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& x, Scalar s) {
  Tensor<Scalar> out(x.shape(), x.value().vec() * s);
  return x.graph().record(
      std::move(out), {x},
      [s](const Tensor<Scalar>& g, std::span<Tensor<Scalar>* const> gs) {
        if (gs[0]) gs[0]->vec() += g.vec() * s;
      },
      "scale");
}

template <typename Scalar>
Var<Scalar> add_scalar(const Var<Scalar>& x, Scalar s) {
  Tensor<Scalar> out(x.shape(), (x.value().vec().array() + s).matrix());
  return x.graph().record(
      std::move(out), {x},
      [](const Tensor<Scalar>& g, std::span<Tensor<Scalar>* const> gs) {
        if (gs[0]) gs[0]->vec() += g.vec();
      },
      "add_scalar");
}

template <typename Scalar>
Var<Scalar> square(const Var<Scalar>& x) {
  Tensor<Scalar> out(x.shape(), x.value().vec().array().square().matrix());
  return x.graph().record(
      std::move(out), {x},
      [x](const Tensor<Scalar>& g, std::span<Tensor<Scalar>* const> gs) {
        if (gs[0]) gs[0]->vec() += Scalar(2) * g.vec().cwiseProduct(x.value().vec());
      },
      "square");
}

/// x^p for x >= 0. The derivative at x = 0 is taken as 0.
template <typename Scalar>
Var<Scalar> power(const Var<Scalar>& x, Scalar p) {
  if ((x.value().vec().array() < Scalar(0)).any()) throw ShapeError("power: negative input");
  Tensor<Scalar> out(x.shape(), x.value().vec().array().pow(p).matrix());
  return x.graph().record(
      std::move(out), {x},
      [x, p](const Tensor<Scalar>& g, std::span<Tensor<Scalar>* const> gs) {
        if (!gs[0]) return;
        const auto& xv = x.value().vec();
        for (Index i = 0; i < xv.size(); ++i) {
          if (xv[i] > Scalar(0)) gs[0]->vec()[i] += g.vec()[i] * p * std::pow(xv[i], p - 1);
        }
      },
      "power");
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& x) {
  auto out = Tensor<Scalar>::full(Shape{1}, x.value().vec().sum());
  return x.graph().record(
      std::move(out), {x},
      [](const Tensor<Scalar>& g, std::span<Tensor<Scalar>* const> gs) {
        if (gs[0]) gs[0]->vec().array() += g[0];
      },
      "sum");
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& x) {
  const Scalar n = static_cast<Scalar>(x.value().size());
  auto out = Tensor<Scalar>::full(Shape{1}, x.value().vec().sum() / n);
  return x.graph().record(
      std::move(out), {x},
      [n](const Tensor<Scalar>& g, std::span<Tensor<Scalar>* const> gs) {
        if (gs[0]) gs[0]->vec().array() += g[0] / n;
      },
      "mean");
}

/// Mean of squared differences.
template <typename Scalar>
Var<Scalar> mse(const Var<Scalar>& a, const Var<Scalar>& b) {
  return mean(square(sub(a, b)));
}

// ---------------------------------------------------------------------------------------------
// Activations

template <typename Scalar>
Scalar sigmoid_scalar(Scalar x) {
  return x >= Scalar(0) ? Scalar(1) / (Scalar(1) + std::exp(-x))
                        : std::exp(x) / (Scalar(1) + std::exp(x));
}

template <typename Scalar>
Var<Scalar> sigmoid(const Var<Scalar>& x) {
  auto out = Tensor<Scalar>::uninitialized(x.shape());
  for (Index i = 0; i < out.size(); ++i) out[i] = sigmoid_scalar(x.value()[i]);
  auto saved = std::make_shared<Tensor<Scalar>>(out);
  return x.graph().record(
      std::move(out), {x},
      [saved](const Tensor<Scalar>& g, std::span<Tensor<Scalar>* const> gs) {
        if (!gs[0]) return;
        const auto& s = saved->vec().array();
        gs[0]->vec().array() += g.vec().array() * s * (Scalar(1) - s);
      },
      "sigmoid");
}

/// x * clamp(x + 3, 0, 6) / 6.
template <typename Scalar>
Var<Scalar> hardswish(const Var<Scalar>& x) {
  auto out = Tensor<Scalar>::uninitialized(x.shape());
  const auto& xv = x.value();
  for (Index i = 0; i < out.size(); ++i) {
    const Scalar v = xv[i];
    out[i] = v * std::clamp(v + Scalar(3), Scalar(0), Scalar(6)) / Scalar(6);
  }
  return x.graph().record(
      std::move(out), {x},
      [x](const Tensor<Scalar>& g, std::span<Tensor<Scalar>* const> gs) {
        if (!gs[0]) return;
        const auto& xv = x.value();
        for (Index i = 0; i < xv.size(); ++i) {
          const Scalar v = xv[i];
          Scalar d = v <= Scalar(-3) ? Scalar(0)
                     : v >= Scalar(3) ? Scalar(1)
                                      : (Scalar(2) * v + Scalar(3)) / Scalar(6);
          (*gs[0])[i] += g[i] * d;
        }
      },
      "hardswish");
}

/// Splits the last dim into halves (h1, h2) and returns h1 * h2.
template <typename Scalar>
Var<Scalar> simple_gate(const Var<Scalar>& x) {
  const Index c2 = x.shape().back();
  if (c2 % 2 != 0) {
    throw ShapeError("simple_gate: last dim must be even, got " + std::to_string(c2));
  }
  const Index c = c2 / 2;
  const Index rows = x.value().size() / c2;
  auto out = Tensor<Scalar>::uninitialized(x.shape().with(x.rank() - 1, c));
  auto xm = x.value().matrix();
  out.matrix() = xm.leftCols(c).cwiseProduct(xm.rightCols(c));
  (void)rows;
  return x.graph().record(
      std::move(out), {x},
      [x, c](const Tensor<Scalar>& g, std::span<Tensor<Scalar>* const> gs) {
        if (!gs[0]) return;
        auto xm = x.value().matrix();
        auto gm = g.matrix();
        auto gx = gs[0]->matrix();
        gx.leftCols(c) += gm.cwiseProduct(xm.rightCols(c));
        gx.rightCols(c) += gm.cwiseProduct(xm.leftCols(c));
      },
      "simple_gate");
}

/// beta * sigmoid(alpha_c * x) with alpha per entry of the last dim.
template <typename Scalar>
Var<Scalar> learnable_sigmoid(const Var<Scalar>& x, const Var<Scalar>& alpha, Scalar beta) {
  const Index c = x.shape().back();
  detail::require_channels(alpha, c, "learnable_sigmoid", "alpha");
  const Index rows = x.value().size() / c;
  auto s = Tensor<Scalar>::uninitialized(x.shape());
  const Scalar* xv = x.value().data();
  const Scalar* a = alpha.value().data();
  for (Index r = 0; r < rows; ++r) {
    for (Index j = 0; j < c; ++j) s[r * c + j] = sigmoid_scalar(a[j] * xv[r * c + j]);
  }
  auto saved = std::make_shared<Tensor<Scalar>>(s);
  Tensor<Scalar> out(x.shape(), s.vec() * beta);
  return x.graph().record(
      std::move(out), {x, alpha},
      [x, alpha, saved, beta, rows, c](const Tensor<Scalar>& g,
                                       std::span<Tensor<Scalar>* const> gs) {
        const Scalar* xv = x.value().data();
        const Scalar* a = alpha.value().data();
        const Scalar* sv = saved->data();
        for (Index r = 0; r < rows; ++r) {
          for (Index j = 0; j < c; ++j) {
            const Index i = r * c + j;
            const Scalar d = g[i] * beta * sv[i] * (Scalar(1) - sv[i]);
            if (gs[0]) (*gs[0])[i] += d * a[j];
            if (gs[1]) (*gs[1])[j] += d * xv[i];
          }
        }
      },
      "learnable_sigmoid");
}

// ---------------------------------------------------------------------------------------------
// Structural ops

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& x, Shape shape) {
  auto out = x.value().reshaped(shape);
  return x.graph().record(
      std::move(out), {x},
      [](const Tensor<Scalar>& g, std::span<Tensor<Scalar>* const> gs) {
        if (gs[0]) gs[0]->vec() += g.vec();
      },
      "reshape");
}

namespace detail {

/// out[perm-permuted index] = in[index]; out dim i = in dim perm[i].
template <typename Scalar>
void permute_into(const Tensor<Scalar>& in, const std::vector<int>& perm, Tensor<Scalar>& out,
                  bool accumulate) {
  const int r = in.rank();
  std::vector<Index> in_strides(static_cast<std::size_t>(r), 1);
  for (int i = r - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * in.dim(i + 1);
  std::vector<Index> out_dims(static_cast<std::size_t>(r));
  std::vector<Index> src_strides(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    out_dims[i] = in.dim(perm[i]);
    src_strides[i] = in_strides[perm[i]];
  }
  std::vector<Index> idx(static_cast<std::size_t>(r), 0);
  const Index n = in.size();
  const Index last = out_dims[r - 1];
  const Index last_stride = src_strides[r - 1];
  Index src = 0;
  for (Index o = 0; o < n; o += last) {
    Scalar* dst = out.data() + o;
    const Scalar* s = in.data() + src;
    if (accumulate) {
      for (Index k = 0; k < last; ++k) dst[k] += s[k * last_stride];
    } else {
      for (Index k = 0; k < last; ++k) dst[k] = s[k * last_stride];
    }
    for (int ax = r - 2; ax >= 0; --ax) {
      if (++idx[ax] < out_dims[ax]) {
        src += src_strides[ax];
        break;
      }
      src -= src_strides[ax] * (out_dims[ax] - 1);
      idx[ax] = 0;
    }
  }
}

}  // namespace detail

/// General axis permutation; output dim i is input dim perm[i].
template <typename Scalar>
Var<Scalar> permute(const Var<Scalar>& x, std::vector<int> perm) {
  const int r = x.rank();
  if (static_cast<int>(perm.size()) != r) throw ShapeError("permute: rank mismatch");
  std::vector<int> inverse(static_cast<std::size_t>(r), -1);
  std::vector<Index> dims(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    if (perm[i] < 0 || perm[i] >= r || inverse[perm[i]] != -1) {
      throw ShapeError("permute: invalid axis permutation");
    }
    inverse[perm[i]] = i;
    dims[i] = x.dim(perm[i]);
  }
  auto out = Tensor<Scalar>::uninitialized(Shape(dims));
  detail::permute_into(x.value(), perm, out, false);
  return x.graph().record(
      std::move(out), {x},
      [inverse](const Tensor<Scalar>& g, std::span<Tensor<Scalar>* const> gs) {
        if (gs[0]) detail::permute_into(g, inverse, *gs[0], true);
      },
      "permute");
}

template <typename Scalar>
Var<Scalar> swap_axes(const Var<Scalar>& x, int a, int b) {
  std::vector<int> perm(static_cast<std::size_t>(x.rank()));
  for (int i = 0; i < x.rank(); ++i) perm[i] = i;
  std::swap(perm.at(a), perm.at(b));
  return permute(x, perm);
}

/// Concatenation along the last dim.
template <typename Scalar>
Var<Scalar> concat(const std::vector<Var<Scalar>>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Index rows = parts[0].value().size() / parts[0].shape().back();
  Index total = 0;
  std::vector<Index> widths;
  for (const auto& p : parts) {
    if (p.rank() != parts[0].rank()) throw ShapeError("concat: rank mismatch");
    for (int ax = 0; ax + 1 < p.rank(); ++ax) {
      if (p.dim(ax) != parts[0].dim(ax)) {
        throw ShapeError("concat: dim " + std::to_string(ax) + " mismatch (" +
                         std::to_string(p.dim(ax)) + " vs " + std::to_string(parts[0].dim(ax)) +
                         ")");
      }
    }
    widths.push_back(p.shape().back());
    total += p.shape().back();
  }
  auto out = Tensor<Scalar>::uninitialized(parts[0].shape().with(parts[0].rank() - 1, total));
  auto om = out.matrix();
  Index col = 0;
  for (const auto& p : parts) {
    om.middleCols(col, p.shape().back()) = p.value().matrix();
    col += p.shape().back();
  }
  (void)rows;
  return parts[0].graph().record(
      std::move(out), std::span<const Var<Scalar>>(parts.data(), parts.size()),
      [widths](const Tensor<Scalar>& g, std::span<Tensor<Scalar>* const> gs) {
        auto gm = g.matrix();
        Index col = 0;
        for (std::size_t j = 0; j < widths.size(); ++j) {
          if (gs[j]) gs[j]->matrix() += gm.middleCols(col, widths[j]);
          col += widths[j];
        }
      },
      "concat");
}

/// Splits the last dim into consecutive pieces of the given widths.
template <typename Scalar>
std::vector<Var<Scalar>> split(const Var<Scalar>& x, const std::vector<Index>& widths) {
  Index total = 0;
  for (Index w : widths) total += w;
  if (total != x.shape().back()) {
    throw ShapeError("split: widths sum to " + std::to_string(total) + " but last dim is " +
                     std::to_string(x.shape().back()));
  }
  std::vector<Var<Scalar>> out;
  Index col = 0;
  for (Index w : widths) {
    auto piece = Tensor<Scalar>::uninitialized(x.shape().with(x.rank() - 1, w));
    piece.matrix() = x.value().matrix().middleCols(col, w);
    out.push_back(x.graph().record(
        std::move(piece), {x},
        [col, w](const Tensor<Scalar>& g, std::span<Tensor<Scalar>* const> gs) {
          if (gs[0]) gs[0]->matrix().middleCols(col, w) += g.matrix();
        },
        "split"));
    col += w;
  }
  return out;
}

/// Mean over one axis, keeping it with size 1.
template <typename Scalar>
Var<Scalar> mean_axis(const Var<Scalar>& x, int axis) {
  const Index outer = x.shape().outer(axis);
  const Index n = x.dim(axis);
  const Index inner = x.shape().inner(axis);
  Tensor<Scalar> out(x.shape().with(axis, 1));
  const Scalar* xv = x.value().data();
  for (Index o = 0; o < outer; ++o) {
    for (Index k = 0; k < n; ++k) {
      const Scalar* src = xv + (o * n + k) * inner;
      Scalar* dst = out.data() + o * inner;
      for (Index i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  out.vec() /= static_cast<Scalar>(n);
  return x.graph().record(
      std::move(out), {x},
      [outer, n, inner](const Tensor<Scalar>& g, std::span<Tensor<Scalar>* const> gs) {
        if (!gs[0]) return;
        const Scalar inv = Scalar(1) / static_cast<Scalar>(n);
        for (Index o = 0; o < outer; ++o) {
          for (Index k = 0; k < n; ++k) {
            Scalar* dst = gs[0]->data() + (o * n + k) * inner;
            const Scalar* src = g.data() + o * inner;
            for (Index i = 0; i < inner; ++i) dst[i] += src[i] * inv;
          }
        }
      },
      "mean_axis");
}

/// Replicates a size-1 axis n times.
template <typename Scalar>
Var<Scalar> expand(const Var<Scalar>& x, int axis, Index n) {
  if (x.dim(axis) != 1) {
    throw ShapeError("expand: dim " + std::to_string(axis) + " must be 1, got " +
                     std::to_string(x.dim(axis)));
  }
  const Index outer = x.shape().outer(axis);
  const Index inner = x.shape().inner(axis);
  auto out = Tensor<Scalar>::uninitialized(x.shape().with(axis, n));
  for (Index o = 0; o < outer; ++o) {
    for (Index k = 0; k < n; ++k) {
      std::copy_n(x.value().data() + o * inner, inner, out.data() + (o * n + k) * inner);
    }
  }
  return x.graph().record(
      std::move(out), {x},
      [outer, n, inner](const Tensor<Scalar>& g, std::span<Tensor<Scalar>* const> gs) {
        if (!gs[0]) return;
        for (Index o = 0; o < outer; ++o) {
          for (Index k = 0; k < n; ++k) {
            const Scalar* src = g.data() + (o * n + k) * inner;
            Scalar* dst = gs[0]->data() + o * inner;
            for (Index i = 0; i < inner; ++i) dst[i] += src[i];
          }
        }
      },
      "expand");
}

// ---------------------------------------------------------------------------------------------
// Normalization

/// Per-(instance, channel) normalization over the middle axis of [N, L, C] with biased
/// variance, followed by a per-channel affine.
template <typename Scalar>
Var<Scalar> instance_norm(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                          Scalar eps = Scalar(1e-5)) {
  if (x.rank() != 3) throw ShapeError("instance_norm: expected [N,L,C], got " + x.shape().str());
  const Index N = x.dim(0), L = x.dim(1), C = x.dim(2);
  if (L < 2) throw ShapeError("instance_norm: dim 1 (length) must be >= 2, got 1");
  if (eps <= Scalar(0)) throw ShapeError("instance_norm: eps must be positive");
  detail::require_channels(gamma, C, "instance_norm", "gamma");
  detail::require_channels(beta, C, "instance_norm", "beta");

  auto xhat = std::make_shared<Tensor<Scalar>>(Tensor<Scalar>::uninitialized(x.shape()));
  auto inv_std = std::make_shared<Tensor<Scalar>>(Shape{N, C});
  auto out = Tensor<Scalar>::uninitialized(x.shape());
  const Scalar* g = gamma.value().data();
  const Scalar* b = beta.value().data();
  std::vector<Scalar> mu(static_cast<std::size_t>(C));
  std::vector<Scalar> var(static_cast<std::size_t>(C));
  for (Index n = 0; n < N; ++n) {
    const Scalar* xs = x.value().data() + n * L * C;
    std::fill(mu.begin(), mu.end(), Scalar(0));
    std::fill(var.begin(), var.end(), Scalar(0));
    for (Index l = 0; l < L; ++l)
      for (Index c = 0; c < C; ++c) mu[c] += xs[l * C + c];
    for (Index c = 0; c < C; ++c) mu[c] /= static_cast<Scalar>(L);
    for (Index l = 0; l < L; ++l)
      for (Index c = 0; c < C; ++c) {
        const Scalar d = xs[l * C + c] - mu[c];
        var[c] += d * d;
      }
    for (Index c = 0; c < C; ++c) {
      (*inv_std)[n * C + c] = Scalar(1) / std::sqrt(var[c] / static_cast<Scalar>(L) + eps);
    }
    Scalar* xh = xhat->data() + n * L * C;
    Scalar* ys = out.data() + n * L * C;
    for (Index l = 0; l < L; ++l)
      for (Index c = 0; c < C; ++c) {
        const Scalar h = (xs[l * C + c] - mu[c]) * (*inv_std)[n * C + c];
        xh[l * C + c] = h;
        ys[l * C + c] = g[c] * h + b[c];
      }
  }
  return x.graph().record(
      std::move(out), {x, gamma, beta},
      [gamma, xhat, inv_std, N, L, C](const Tensor<Scalar>& gy,
                                      std::span<Tensor<Scalar>* const> gs) {
        const Scalar* gm = gamma.value().data();
        std::vector<Scalar> sum_g(static_cast<std::size_t>(C));
        std::vector<Scalar> sum_gh(static_cast<std::size_t>(C));
        for (Index n = 0; n < N; ++n) {
          const Scalar* gys = gy.data() + n * L * C;
          const Scalar* xh = xhat->data() + n * L * C;
          std::fill(sum_g.begin(), sum_g.end(), Scalar(0));
          std::fill(sum_gh.begin(), sum_gh.end(), Scalar(0));
          for (Index l = 0; l < L; ++l)
            for (Index c = 0; c < C; ++c) {
              sum_g[c] += gys[l * C + c];
              sum_gh[c] += gys[l * C + c] * xh[l * C + c];
            }
          if (gs[1])
            for (Index c = 0; c < C; ++c) (*gs[1])[c] += sum_gh[c];
          if (gs[2])
            for (Index c = 0; c < C; ++c) (*gs[2])[c] += sum_g[c];
          if (gs[0]) {
            Scalar* gx = gs[0]->data() + n * L * C;
            const Scalar invL = Scalar(1) / static_cast<Scalar>(L);
            for (Index l = 0; l < L; ++l)
              for (Index c = 0; c < C; ++c) {
                const Scalar k = gm[c] * (*inv_std)[n * C + c];
                gx[l * C + c] +=
                    k * (gys[l * C + c] - invL * sum_g[c] - xh[l * C + c] * invL * sum_gh[c]);
              }
          }
        }
      },
      "instance_norm");
}

// ---------------------------------------------------------------------------------------------
// Convolutions (channels-last)

/// Options for 2-D convolution over [B, H, W, C]. Same padding is symmetric; for even
/// effective kernels the extra zero goes on the bottom/right.
struct Conv2dOptions {
  Index stride_h = 1;
  Index stride_w = 1;
  Index dilation_h = 1;
  Index dilation_w = 1;
  Index groups = 1;
};

struct Conv1dOptions {
  Index groups = 1;
  Index dilation = 1;
};

namespace detail {

struct ConvGeometry {
  Index B, H, W, Cin, Cout, KH, KW, sh, sw, dh, dw, groups, pad_top, pad_left, Ho, Wo;

  Index cin_per_group() const { return Cin / groups; }
  Index cout_per_group() const { return Cout / groups; }
  bool pointwise() const {
    return KH == 1 && KW == 1 && sh == 1 && sw == 1 && groups == 1;
  }
  bool depthwise() const { return groups == Cin && Cout == Cin && groups > 1; }
};

inline Index same_pad_before(Index k, Index dilation) { return dilation * (k - 1) / 2; }

/// Taps [k0, k1) whose input index start + k * dilation falls inside [0, extent).
inline std::pair<Index, Index> tap_range(Index start, Index dilation, Index taps, Index extent) {
  Index k0 = start >= 0 ? 0 : (-start + dilation - 1) / dilation;
  Index k1 = start >= extent ? 0 : (extent - 1 - start) / dilation + 1;
  k1 = std::min(k1, taps);
  return {k0, std::max(k0, k1)};
}

inline ConvGeometry make_geometry(const Shape& x, const Shape& w, const Conv2dOptions& o,
                                  const char* op) {
  if (x.rank() != 4) throw ShapeError(std::string(op) + ": input must be rank 4, got " + x.str());
  if (w.rank() != 4) {
    throw ShapeError(std::string(op) + ": weight must be [Cout,KH,KW,Cin/groups], got " + w.str());
  }
  ConvGeometry g{};
  g.B = x[0];
  g.H = x[1];
  g.W = x[2];
  g.Cin = x[3];
  g.Cout = w[0];
  g.KH = w[1];
  g.KW = w[2];
  g.sh = o.stride_h;
  g.sw = o.stride_w;
  g.dh = o.dilation_h;
  g.dw = o.dilation_w;
  g.groups = o.groups;
  if (g.groups < 1 || g.Cin % g.groups != 0) {
    throw ShapeError(std::string(op) + ": input channels (dim 3) = " + std::to_string(g.Cin) +
                     " not divisible by groups = " + std::to_string(g.groups));
  }
  if (g.Cout % g.groups != 0) {
    throw ShapeError(std::string(op) + ": output channels (weight dim 0) = " +
                     std::to_string(g.Cout) + " not divisible by groups");
  }
  if (w[3] != g.Cin / g.groups) {
    throw ShapeError(std::string(op) + ": weight dim 3 = " + std::to_string(w[3]) +
                     ", expected Cin/groups = " + std::to_string(g.Cin / g.groups));
  }
  g.pad_top = same_pad_before(g.KH, g.dh);
  g.pad_left = same_pad_before(g.KW, g.dw);
  const Index pad_h = g.dh * (g.KH - 1);
  const Index pad_w = g.dw * (g.KW - 1);
  g.Ho = (g.H + pad_h - g.dh * (g.KH - 1) - 1) / g.sh + 1;
  g.Wo = (g.W + pad_w - g.dw * (g.KW - 1) - 1) / g.sw + 1;
  return g;
}

template <typename Scalar>
using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Gathers receptive fields of one batch item into rows of (KH*KW*Cin).
template <typename Scalar>
void im2col(const ConvGeometry& g, const Scalar* x, RowMat<Scalar>& cols) {
  cols.setZero(g.Ho * g.Wo, g.KH * g.KW * g.Cin);
  for (Index oh = 0; oh < g.Ho; ++oh)
    for (Index ow = 0; ow < g.Wo; ++ow) {
      Scalar* row = cols.data() + (oh * g.Wo + ow) * cols.cols();
      for (Index kh = 0; kh < g.KH; ++kh) {
        const Index ih = oh * g.sh - g.pad_top + kh * g.dh;
        if (ih < 0 || ih >= g.H) continue;
        for (Index kw = 0; kw < g.KW; ++kw) {
          const Index iw = ow * g.sw - g.pad_left + kw * g.dw;
          if (iw < 0 || iw >= g.W) continue;
          std::copy_n(x + (ih * g.W + iw) * g.Cin, g.Cin, row + (kh * g.KW + kw) * g.Cin);
        }
      }
    }
}

template <typename Scalar>
void col2im_add(const ConvGeometry& g, const RowMat<Scalar>& cols, Scalar* gx) {
  for (Index oh = 0; oh < g.Ho; ++oh)
    for (Index ow = 0; ow < g.Wo; ++ow) {
      const Scalar* row = cols.data() + (oh * g.Wo + ow) * cols.cols();
      for (Index kh = 0; kh < g.KH; ++kh) {
        const Index ih = oh * g.sh - g.pad_top + kh * g.dh;
        if (ih < 0 || ih >= g.H) continue;
        for (Index kw = 0; kw < g.KW; ++kw) {
          const Index iw = ow * g.sw - g.pad_left + kw * g.dw;
          if (iw < 0 || iw >= g.W) continue;
          Scalar* dst = gx + (ih * g.W + iw) * g.Cin;
          const Scalar* src = row + (kh * g.KW + kw) * g.Cin;
          for (Index c = 0; c < g.Cin; ++c) dst[c] += src[c];
        }
      }
    }
}

/// Stride-1 depthwise convolution along W only (KH == 1), run channel-major so the inner loop
/// is a contiguous axpy over positions.
inline bool row_depthwise(const ConvGeometry& g) {
  return g.depthwise() && g.KH == 1 && g.sh == 1 && g.sw == 1 && g.Wo == g.W;
}

template <typename Scalar>
void row_depthwise_forward(const ConvGeometry& g, const Scalar* x, const Scalar* w,
                           const Scalar* b, Scalar* y) {
  const Index C = g.Cin, W = g.W, K = g.KW;
  RowMat<Scalar> xt(C, W), yt(C, W);
  for (Index r = 0; r < g.B * g.H; ++r) {
    xt = Eigen::Map<const RowMat<Scalar>>(x + r * W * C, W, C).transpose();
    for (Index c = 0; c < C; ++c) {
      Scalar* yr = yt.data() + c * W;
      const Scalar* xr = xt.data() + c * W;
      std::fill(yr, yr + W, b ? b[c] : Scalar(0));
      for (Index k = 0; k < K; ++k) {
        const Index off = k * g.dw - g.pad_left;
        const Index lo = std::max<Index>(0, -off), hi = std::min(W, W - off);
        const Scalar wk = w[c * K + k];
        for (Index l = lo; l < hi; ++l) yr[l] += wk * xr[l + off];
      }
    }
    Eigen::Map<RowMat<Scalar>>(y + r * W * C, W, C) = yt.transpose();
  }
}

template <typename Scalar>
void row_depthwise_backward(const ConvGeometry& g, const Scalar* x, const Scalar* w,
                            const Scalar* gy, Scalar* gx, Scalar* gw) {
  const Index C = g.Cin, W = g.W, K = g.KW;
  RowMat<Scalar> xt(C, W), gyt(C, W), gxt(C, W);
  for (Index r = 0; r < g.B * g.H; ++r) {
    gyt = Eigen::Map<const RowMat<Scalar>>(gy + r * W * C, W, C).transpose();
    if (gw) xt = Eigen::Map<const RowMat<Scalar>>(x + r * W * C, W, C).transpose();
    if (gx) gxt.setZero();
    for (Index c = 0; c < C; ++c) {
      const Scalar* gr = gyt.data() + c * W;
      for (Index k = 0; k < K; ++k) {
        const Index off = k * g.dw - g.pad_left;
        const Index lo = std::max<Index>(0, -off), hi = std::min(W, W - off);
        if (gx) {
          Scalar* dst = gxt.data() + c * W;
          const Scalar wk = w[c * K + k];
          for (Index l = lo; l < hi; ++l) dst[l + off] += wk * gr[l];
        }
        if (gw) {
          const Scalar* xr = xt.data() + c * W;
          Scalar acc = 0;
          for (Index l = lo; l < hi; ++l) acc += gr[l] * xr[l + off];
          gw[c * K + k] += acc;
        }
      }
    }
    if (gx) Eigen::Map<RowMat<Scalar>>(gx + r * W * C, W, C) += gxt.transpose();
  }
}

template <typename Scalar>
void conv_forward(const ConvGeometry& g, const Scalar* x, const Scalar* w, const Scalar* b,
                  Scalar* y) {
  const Index out_rows = g.B * g.Ho * g.Wo;
  if (g.pointwise()) {
    Eigen::Map<const RowMat<Scalar>> X(x, out_rows, g.Cin);
    Eigen::Map<const RowMat<Scalar>> Wm(w, g.Cout, g.Cin);
    Eigen::Map<RowMat<Scalar>> Y(y, out_rows, g.Cout);
    Y.noalias() = X * Wm.transpose();
    if (b) Y.rowwise() += Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(b, g.Cout);
    return;
  }
  if (row_depthwise(g)) {
    row_depthwise_forward(g, x, w, b, y);
    return;
  }
  if (g.depthwise()) {
    const Index C = g.Cin;
    std::vector<Scalar> wt(static_cast<std::size_t>(g.KH * g.KW * C));
    for (Index c = 0; c < C; ++c)
      for (Index k = 0; k < g.KH * g.KW; ++k) wt[k * C + c] = w[c * g.KH * g.KW + k];
    for (Index bi = 0; bi < g.B; ++bi)
      for (Index oh = 0; oh < g.Ho; ++oh) {
        const auto [kh0, kh1] = tap_range(oh * g.sh - g.pad_top, g.dh, g.KH, g.H);
        for (Index ow = 0; ow < g.Wo; ++ow) {
          const auto [kw0, kw1] = tap_range(ow * g.sw - g.pad_left, g.dw, g.KW, g.W);
          Scalar* yr = y + ((bi * g.Ho + oh) * g.Wo + ow) * C;
          for (Index c = 0; c < C; ++c) yr[c] = b ? b[c] : Scalar(0);
          for (Index kh = kh0; kh < kh1; ++kh) {
            const Index ih = oh * g.sh - g.pad_top + kh * g.dh;
            const Scalar* xrow = x + ((bi * g.H + ih) * g.W) * C;
            for (Index kw = kw0; kw < kw1; ++kw) {
              const Scalar* xr = xrow + (ow * g.sw - g.pad_left + kw * g.dw) * C;
              const Scalar* wr = wt.data() + (kh * g.KW + kw) * C;
              for (Index c = 0; c < C; ++c) yr[c] += wr[c] * xr[c];
            }
          }
        }
      }
    return;
  }
  if (g.groups == 1) {
    Eigen::Map<const RowMat<Scalar>> Wm(w, g.Cout, g.KH * g.KW * g.Cin);
    RowMat<Scalar> cols;
    for (Index bi = 0; bi < g.B; ++bi) {
      im2col(g, x + bi * g.H * g.W * g.Cin, cols);
      Eigen::Map<RowMat<Scalar>> Y(y + bi * g.Ho * g.Wo * g.Cout, g.Ho * g.Wo, g.Cout);
      Y.noalias() = cols * Wm.transpose();
      if (b) Y.rowwise() += Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(b, g.Cout);
    }
    return;
  }
  // Grouped convolution, direct loops.
  const Index cig = g.cin_per_group(), cog = g.cout_per_group();
  for (Index bi = 0; bi < g.B; ++bi)
    for (Index oh = 0; oh < g.Ho; ++oh)
      for (Index ow = 0; ow < g.Wo; ++ow) {
        Scalar* yr = y + ((bi * g.Ho + oh) * g.Wo + ow) * g.Cout;
        for (Index co = 0; co < g.Cout; ++co) {
          const Index grp = co / cog;
          Scalar acc = b ? b[co] : Scalar(0);
          for (Index kh = 0; kh < g.KH; ++kh) {
            const Index ih = oh * g.sh - g.pad_top + kh * g.dh;
            if (ih < 0 || ih >= g.H) continue;
            for (Index kw = 0; kw < g.KW; ++kw) {
              const Index iw = ow * g.sw - g.pad_left + kw * g.dw;
              if (iw < 0 || iw >= g.W) continue;
              const Scalar* xr = x + ((bi * g.H + ih) * g.W + iw) * g.Cin + grp * cig;
              const Scalar* wr = w + ((co * g.KH + kh) * g.KW + kw) * cig;
              for (Index ci = 0; ci < cig; ++ci) acc += wr[ci] * xr[ci];
            }
          }
          yr[co] = acc;
        }
      }
}

template <typename Scalar>
void conv_backward(const ConvGeometry& g, const Scalar* x, const Scalar* w, const Scalar* gy,
                   Scalar* gx, Scalar* gw, Scalar* gb) {
  const Index out_rows = g.B * g.Ho * g.Wo;
  if (gb) {
    Eigen::Map<const RowMat<Scalar>> GY(gy, out_rows, g.Cout);
    Eigen::Map<Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(gb, g.Cout) += GY.colwise().sum();
  }
  if (g.pointwise()) {
    Eigen::Map<const RowMat<Scalar>> X(x, out_rows, g.Cin);
    Eigen::Map<const RowMat<Scalar>> Wm(w, g.Cout, g.Cin);
    Eigen::Map<const RowMat<Scalar>> GY(gy, out_rows, g.Cout);
    if (gx) Eigen::Map<RowMat<Scalar>>(gx, out_rows, g.Cin).noalias() += GY * Wm;
    if (gw) Eigen::Map<RowMat<Scalar>>(gw, g.Cout, g.Cin).noalias() += GY.transpose() * X;
    return;
  }
  if (row_depthwise(g)) {
    row_depthwise_backward(g, x, w, gy, gx, gw);
    return;
  }
  if (g.depthwise()) {
    const Index C = g.Cin;
    const Index K = g.KH * g.KW;
    std::vector<Scalar> wt(static_cast<std::size_t>(K * C));
    std::vector<Scalar> gwt(static_cast<std::size_t>(K * C), Scalar(0));
    for (Index c = 0; c < C; ++c)
      for (Index k = 0; k < K; ++k) wt[k * C + c] = w[c * K + k];
    for (Index bi = 0; bi < g.B; ++bi)
      for (Index oh = 0; oh < g.Ho; ++oh) {
        const auto [kh0, kh1] = tap_range(oh * g.sh - g.pad_top, g.dh, g.KH, g.H);
        for (Index ow = 0; ow < g.Wo; ++ow) {
          const auto [kw0, kw1] = tap_range(ow * g.sw - g.pad_left, g.dw, g.KW, g.W);
          const Scalar* gr = gy + ((bi * g.Ho + oh) * g.Wo + ow) * C;
          for (Index kh = kh0; kh < kh1; ++kh) {
            const Index ih = oh * g.sh - g.pad_top + kh * g.dh;
            for (Index kw = kw0; kw < kw1; ++kw) {
              const Index iw = ow * g.sw - g.pad_left + kw * g.dw;
              const Index off = ((bi * g.H + ih) * g.W + iw) * C;
              const Index k = kh * g.KW + kw;
              if (gx) {
                const Scalar* wr = wt.data() + k * C;
                Scalar* gxr = gx + off;
                for (Index c = 0; c < C; ++c) gxr[c] += wr[c] * gr[c];
              }
              if (gw) {
                const Scalar* xr = x + off;
                Scalar* gwr = gwt.data() + k * C;
                for (Index c = 0; c < C; ++c) gwr[c] += xr[c] * gr[c];
              }
            }
          }
        }
      }
    if (gw)
      for (Index c = 0; c < C; ++c)
        for (Index k = 0; k < K; ++k) gw[c * K + k] += gwt[k * C + c];
    return;
  }
  if (g.groups == 1) {
    const Index kcols = g.KH * g.KW * g.Cin;
    Eigen::Map<const RowMat<Scalar>> Wm(w, g.Cout, kcols);
    RowMat<Scalar> cols;
    RowMat<Scalar> gcols;
    for (Index bi = 0; bi < g.B; ++bi) {
      Eigen::Map<const RowMat<Scalar>> GY(gy + bi * g.Ho * g.Wo * g.Cout, g.Ho * g.Wo, g.Cout);
      if (gw) {
        im2col(g, x + bi * g.H * g.W * g.Cin, cols);
        Eigen::Map<RowMat<Scalar>>(gw, g.Cout, kcols).noalias() += GY.transpose() * cols;
      }
      if (gx) {
        gcols.noalias() = GY * Wm;
        col2im_add(g, gcols, gx + bi * g.H * g.W * g.Cin);
      }
    }
    return;
  }
  const Index cig = g.cin_per_group(), cog = g.cout_per_group();
  for (Index bi = 0; bi < g.B; ++bi)
    for (Index oh = 0; oh < g.Ho; ++oh)
      for (Index ow = 0; ow < g.Wo; ++ow) {
        const Scalar* gr = gy + ((bi * g.Ho + oh) * g.Wo + ow) * g.Cout;
        for (Index co = 0; co < g.Cout; ++co) {
          const Index grp = co / cog;
          for (Index kh = 0; kh < g.KH; ++kh) {
            const Index ih = oh * g.sh - g.pad_top + kh * g.dh;
            if (ih < 0 || ih >= g.H) continue;
            for (Index kw = 0; kw < g.KW; ++kw) {
              const Index iw = ow * g.sw - g.pad_left + kw * g.dw;
              if (iw < 0 || iw >= g.W) continue;
              const Index xo = ((bi * g.H + ih) * g.W + iw) * g.Cin + grp * cig;
              const Index wo = ((co * g.KH + kh) * g.KW + kw) * cig;
              for (Index ci = 0; ci < cig; ++ci) {
                if (gx) gx[xo + ci] += w[wo + ci] * gr[co];
                if (gw) gw[wo + ci] += x[xo + ci] * gr[co];
              }
            }
          }
        }
      }
}

template <typename Scalar>
Var<Scalar> conv_record(const Var<Scalar>& x, const Var<Scalar>& w, const Var<Scalar>* b,
                        const ConvGeometry& g, Shape out_shape, const char* op) {
  if (b) require_channels(*b, g.Cout, op, "bias");
  auto out = Tensor<Scalar>::uninitialized(std::move(out_shape));
  conv_forward(g, x.value().data(), w.value().data(), b ? b->value().data() : nullptr,
               out.data());
  auto fn = [x, w, g](const Tensor<Scalar>& gy, std::span<Tensor<Scalar>* const> gs) {
    conv_backward(g, x.value().data(), w.value().data(), gy.data(),
                  gs[0] ? gs[0]->data() : nullptr, gs[1] ? gs[1]->data() : nullptr,
                  gs.size() > 2 && gs[2] ? gs[2]->data() : nullptr);
  };
  if (b) return x.graph().record(std::move(out), {x, w, *b}, fn, op);
  return x.graph().record(std::move(out), {x, w}, fn, op);
}

}  // namespace detail

/// 2-D cross-correlation, x: [B,H,W,Cin], w: [Cout,KH,KW,Cin/groups], b: [Cout].
template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& w, const Var<Scalar>& b,
                   const Conv2dOptions& o = {}) {
  auto g = detail::make_geometry(x.shape(), w.shape(), o, "conv2d");
  return detail::conv_record(x, w, &b, g, Shape{g.B, g.Ho, g.Wo, g.Cout}, "conv2d");
}

template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& w, const Conv2dOptions& o = {}) {
  auto g = detail::make_geometry(x.shape(), w.shape(), o, "conv2d");
  return detail::conv_record<Scalar>(x, w, nullptr, g, Shape{g.B, g.Ho, g.Wo, g.Cout}, "conv2d");
}

/// 1-D cross-correlation with same-length padding, x: [N,L,Cin], w: [Cout,K,Cin/groups].
/// groups == Cin gives a depthwise convolution.
template <typename Scalar>
Var<Scalar> conv1d(const Var<Scalar>& x, const Var<Scalar>& w, const Var<Scalar>& b,
                   const Conv1dOptions& o = {}) {
  if (x.rank() != 3) throw ShapeError("conv1d: input must be [N,L,C], got " + x.shape().str());
  if (w.rank() != 3) throw ShapeError("conv1d: weight must be [Cout,K,Cin/groups]");
  Conv2dOptions o2;
  o2.groups = o.groups;
  o2.dilation_w = o.dilation;
  auto g = detail::make_geometry(Shape{x.dim(0), 1, x.dim(1), x.dim(2)},
                                 Shape{w.dim(0), 1, w.dim(1), w.dim(2)}, o2, "conv1d");
  return detail::conv_record(x, w, &b, g, Shape{g.B, g.Wo, g.Cout}, "conv1d");
}

/// Linear map over the last dim: y = x W^T + b with W: [Cout, Cin] (any trailing layout whose
/// element count is Cout*Cin).
template <typename Scalar>
Var<Scalar> pointwise(const Var<Scalar>& x, const Var<Scalar>& w, const Var<Scalar>* b) {
  const Index cin = x.shape().back();
  const Index cout = w.dim(0);
  if (w.value().size() != cout * cin) {
    throw ShapeError("pointwise: weight " + w.shape().str() + " does not map " +
                     std::to_string(cin) + " input channels (last dim)");
  }
  detail::ConvGeometry g{};
  g.B = x.value().size() / cin;
  g.H = 1;
  g.W = 1;
  g.Cin = cin;
  g.Cout = cout;
  g.KH = g.KW = g.sh = g.sw = g.dh = g.dw = g.groups = 1;
  g.Ho = g.Wo = 1;
  return detail::conv_record(x, w, b, g, x.shape().with(x.rank() - 1, cout), "pointwise");
}

template <typename Scalar>
Var<Scalar> pointwise(const Var<Scalar>& x, const Var<Scalar>& w, const Var<Scalar>& b) {
  return pointwise(x, w, &b);
}

}  // namespace dtsnet
