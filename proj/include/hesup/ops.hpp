#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "hesup/tensor.hpp"

namespace hesup {

namespace detail {

template <typename T>
inline Tensor<T> make_output(const Tape<T>& tape, std::vector<size_t> shape, bool any_input_grad) {
  return Tensor<T>(std::move(shape), tape.recording() && any_input_grad);
}

// Valid output range [lo, hi) for which in = out*stride + k - pad lands in [0, extent).
inline void conv_range(size_t out_extent, size_t in_extent, size_t k, size_t stride, size_t pad,
                       size_t& lo, size_t& hi) {
  ptrdiff_t off = static_cast<ptrdiff_t>(k) - static_cast<ptrdiff_t>(pad);
  ptrdiff_t l = off < 0 ? (-off + static_cast<ptrdiff_t>(stride) - 1) / static_cast<ptrdiff_t>(stride) : 0;
  ptrdiff_t h = (static_cast<ptrdiff_t>(in_extent) - 1 - off) / static_cast<ptrdiff_t>(stride) + 1;
  lo = static_cast<size_t>(std::clamp<ptrdiff_t>(l, 0, static_cast<ptrdiff_t>(out_extent)));
  hi = static_cast<size_t>(std::clamp<ptrdiff_t>(h, 0, static_cast<ptrdiff_t>(out_extent)));
}

}  // namespace detail

// Cross-correlation with zero padding. input N x Cin x H x W,
// weight Cout x Cin x Kh x Kw, bias Cout.
template <typename T>
Tensor<T> conv2d(Tape<T>& tape, Tensor<T> input, Tensor<T> weight, Tensor<T> bias,
                 size_t stride = 1, size_t pad = 0) {
  if (input.rank() != 4 || weight.rank() != 4)
    throw ShapeError("conv2d expects 4-d input and weight, got " + shape_str(input.shape()) +
                     " and " + shape_str(weight.shape()));
  if (stride == 0) throw Error("conv2d stride must be positive");
  const size_t n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const size_t cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != cin)
    throw ShapeError("conv2d channel mismatch: input " + shape_str(input.shape()) +
                     " vs weight " + shape_str(weight.shape()));
  if (bias.rank() != 1 || bias.dim(0) != cout)
    throw ShapeError("conv2d bias shape " + shape_str(bias.shape()) + " must be [" +
                     std::to_string(cout) + "]");
  if (kh > h + 2 * pad || kw > w + 2 * pad)
    throw ShapeError("conv2d kernel larger than padded input");

  const size_t oh = (h + 2 * pad - kh) / stride + 1;
  const size_t ow = (w + 2 * pad - kw) / stride + 1;
  const bool needs_grad = input.requires_grad() || weight.requires_grad() || bias.requires_grad();
  Tensor<T> out = detail::make_output(tape, {n, cout, oh, ow}, needs_grad);

  const T* in = input.data().data();
  const T* wt = weight.data().data();
  const T* bs = bias.data().data();
  T* o = out.data().data();

  for (size_t ni = 0; ni < n; ++ni) {
    for (size_t co = 0; co < cout; ++co) {
      T* oplane = o + (ni * cout + co) * oh * ow;
      std::fill(oplane, oplane + oh * ow, bs[co]);
      for (size_t ci = 0; ci < cin; ++ci) {
        const T* iplane = in + (ni * cin + ci) * h * w;
        const T* wplane = wt + (co * cin + ci) * kh * kw;
        for (size_t ky = 0; ky < kh; ++ky) {
          size_t ylo, yhi;
          detail::conv_range(oh, h, ky, stride, pad, ylo, yhi);
          for (size_t kx = 0; kx < kw; ++kx) {
            size_t xlo, xhi;
            detail::conv_range(ow, w, kx, stride, pad, xlo, xhi);
            const T wv = wplane[ky * kw + kx];
            const ptrdiff_t dy = static_cast<ptrdiff_t>(ky) - static_cast<ptrdiff_t>(pad);
            const ptrdiff_t dx = static_cast<ptrdiff_t>(kx) - static_cast<ptrdiff_t>(pad);
            for (size_t y = ylo; y < yhi; ++y) {
              const T* __restrict irow =
                  iplane + (static_cast<ptrdiff_t>(y * stride) + dy) * static_cast<ptrdiff_t>(w) + dx;
              T* __restrict orow = oplane + y * ow;
              if (stride == 1) {
                for (size_t x = xlo; x < xhi; ++x) orow[x] += wv * irow[x];
              } else {
                for (size_t x = xlo; x < xhi; ++x) orow[x] += wv * irow[x * stride];
              }
            }
          }
        }
      }
    }
  }

  if (out.requires_grad()) {
    tape.record([input, weight, bias, out, stride, pad, n, cin, cout, h, w, kh, kw, oh, ow]() mutable {
      const T* go = out.grad().data();
      const T* in = input.data().data();
      const T* wt = weight.data().data();
      T* gi = input.requires_grad() ? input.grad().data() : nullptr;
      T* gw = weight.requires_grad() ? weight.grad().data() : nullptr;
      T* gb = bias.requires_grad() ? bias.grad().data() : nullptr;

      if (gb) {
        for (size_t ni = 0; ni < n; ++ni)
          for (size_t co = 0; co < cout; ++co) {
            const T* gp = go + (ni * cout + co) * oh * ow;
            T acc = 0;
            for (size_t i = 0; i < oh * ow; ++i) acc += gp[i];
            gb[co] += acc;
          }
      }
      if (!gi && !gw) return;
      // Input and weight gradients run as separate passes; each inner loop is
      // then a plain stride-1 axpy or dot product the compiler can vectorize.
      for (size_t ni = 0; ni < n; ++ni) {
        for (size_t co = 0; co < cout; ++co) {
          const T* gplane = go + (ni * cout + co) * oh * ow;
          for (size_t ci = 0; ci < cin; ++ci) {
            const T* iplane = in + (ni * cin + ci) * h * w;
            const T* wplane = wt + (co * cin + ci) * kh * kw;
            T* giplane = gi ? gi + (ni * cin + ci) * h * w : nullptr;
            T* gwplane = gw ? gw + (co * cin + ci) * kh * kw : nullptr;
            for (size_t ky = 0; ky < kh; ++ky) {
              size_t ylo, yhi;
              detail::conv_range(oh, h, ky, stride, pad, ylo, yhi);
              for (size_t kx = 0; kx < kw; ++kx) {
                size_t xlo, xhi;
                detail::conv_range(ow, w, kx, stride, pad, xlo, xhi);
                const ptrdiff_t dy = static_cast<ptrdiff_t>(ky) - static_cast<ptrdiff_t>(pad);
                const ptrdiff_t dx = static_cast<ptrdiff_t>(kx) - static_cast<ptrdiff_t>(pad);
                if (giplane) {
                  const T wv = wplane[ky * kw + kx];
                  for (size_t y = ylo; y < yhi; ++y) {
                    const T* __restrict grow = gplane + y * ow;
                    T* __restrict girow =
                        giplane + (static_cast<ptrdiff_t>(y * stride) + dy) * static_cast<ptrdiff_t>(w) + dx;
                    if (stride == 1) {
                      for (size_t x = xlo; x < xhi; ++x) girow[x] += wv * grow[x];
                    } else {
                      for (size_t x = xlo; x < xhi; ++x) girow[x * stride] += wv * grow[x];
                    }
                  }
                }
                if (gwplane) {
                  T wacc = 0;
                  for (size_t y = ylo; y < yhi; ++y) {
                    const T* __restrict grow = gplane + y * ow;
                    const T* __restrict irow =
                        iplane + (static_cast<ptrdiff_t>(y * stride) + dy) * static_cast<ptrdiff_t>(w) + dx;
                    T racc = 0;
                    if (stride == 1) {
#pragma omp simd reduction(+ : racc)
                      for (size_t x = xlo; x < xhi; ++x) racc += grow[x] * irow[x];
                    } else {
                      for (size_t x = xlo; x < xhi; ++x) racc += grow[x] * irow[x * stride];
                    }
                    wacc += racc;
                  }
                  gwplane[ky * kw + kx] += wacc;
                }
              }
            }
          }
        }
      }
    });
  }
  return out;
}

// Elementwise max(x, 0); the subgradient at 0 is 0.
template <typename T>
Tensor<T> relu(Tape<T>& tape, Tensor<T> x) {
  Tensor<T> out = detail::make_output(tape, x.shape(), x.requires_grad());
  const T* xi = x.data().data();
  T* o = out.data().data();
  const size_t m = x.size();
  for (size_t i = 0; i < m; ++i) o[i] = xi[i] > T(0) ? xi[i] : T(0);
  if (out.requires_grad()) {
    tape.record([x, out]() mutable {
      const T* xi = x.data().data();
      const T* go = out.grad().data();
      T* gx = x.grad().data();
      for (size_t i = 0; i < x.size(); ++i)
        if (xi[i] > T(0)) gx[i] += go[i];
    });
  }
  return out;
}

// Window maxima; backward routes each window's gradient to the first
// row-major position attaining the maximum.
template <typename T>
Tensor<T> maxpool2d(Tape<T>& tape, Tensor<T> x, size_t k, size_t stride) {
  if (k == 0 || stride == 0) throw Error("maxpool2d window and stride must be positive");
  if (x.rank() != 4) throw ShapeError("maxpool2d expects 4-d input, got " + shape_str(x.shape()));
  const size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (k > h || k > w)
    throw ShapeError("maxpool2d window " + std::to_string(k) + " exceeds input " + shape_str(x.shape()));
  const size_t oh = (h - k) / stride + 1;
  const size_t ow = (w - k) / stride + 1;

  Tensor<T> out = detail::make_output(tape, {n, c, oh, ow}, x.requires_grad());
  std::vector<uint32_t> argmax(out.size());
  const T* xi = x.data().data();
  T* o = out.data().data();
  size_t oi = 0;
  for (size_t p = 0; p < n * c; ++p) {
    const T* plane = xi + p * h * w;
    for (size_t y = 0; y < oh; ++y) {
      for (size_t x2 = 0; x2 < ow; ++x2, ++oi) {
        size_t best = y * stride * w + x2 * stride;
        T bv = plane[best];
        for (size_t ky = 0; ky < k; ++ky)
          for (size_t kx = 0; kx < k; ++kx) {
            size_t idx = (y * stride + ky) * w + x2 * stride + kx;
            if (plane[idx] > bv) {
              bv = plane[idx];
              best = idx;
            }
          }
        o[oi] = bv;
        argmax[oi] = static_cast<uint32_t>(p * h * w + best);
      }
    }
  }
  if (out.requires_grad()) {
    tape.record([x, out, argmax = std::move(argmax)]() mutable {
      const T* go = out.grad().data();
      T* gx = x.grad().data();
      for (size_t i = 0; i < out.size(); ++i) gx[argmax[i]] += go[i];
    });
  }
  return out;
}

// N x C x H x W -> N x C spatial mean per channel.
template <typename T>
Tensor<T> global_avgpool(Tape<T>& tape, Tensor<T> x) {
  if (x.rank() != 4) throw ShapeError("global_avgpool expects 4-d input, got " + shape_str(x.shape()));
  const size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor<T> out = detail::make_output(tape, {n, c}, x.requires_grad());
  const T* xi = x.data().data();
  T* o = out.data().data();
  const T inv = T(1) / static_cast<T>(hw);
  for (size_t p = 0; p < n * c; ++p) {
    T acc = 0;
    for (size_t i = 0; i < hw; ++i) acc += xi[p * hw + i];
    o[p] = acc * inv;
  }
  if (out.requires_grad()) {
    tape.record([x, out, hw, inv]() mutable {
      const T* go = out.grad().data();
      T* gx = x.grad().data();
      for (size_t p = 0; p < out.size(); ++p) {
        const T g = go[p] * inv;
        for (size_t i = 0; i < hw; ++i) gx[p * hw + i] += g;
      }
    });
  }
  return out;
}

// Elementwise sum of two same-shape tensors.
template <typename T>
Tensor<T> add(Tape<T>& tape, Tensor<T> a, Tensor<T> b) {
  if (a.shape() != b.shape())
    throw ShapeError("add shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out = detail::make_output(tape, a.shape(), a.requires_grad() || b.requires_grad());
  const T* ai = a.data().data();
  const T* bi = b.data().data();
  T* o = out.data().data();
  for (size_t i = 0; i < a.size(); ++i) o[i] = ai[i] + bi[i];
  if (out.requires_grad()) {
    tape.record([a, b, out]() mutable {
      const T* go = out.grad().data();
      if (a.requires_grad()) {
        T* ga = a.grad().data();
        for (size_t i = 0; i < a.size(); ++i) ga[i] += go[i];
      }
      if (b.requires_grad()) {
        T* gb = b.grad().data();
        for (size_t i = 0; i < b.size(); ++i) gb[i] += go[i];
      }
    });
  }
  return out;
}

// Elementwise product of two same-shape tensors.
template <typename T>
Tensor<T> mul(Tape<T>& tape, Tensor<T> a, Tensor<T> b) {
  if (a.shape() != b.shape())
    throw ShapeError("mul shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out = detail::make_output(tape, a.shape(), a.requires_grad() || b.requires_grad());
  const T* ai = a.data().data();
  const T* bi = b.data().data();
  T* o = out.data().data();
  for (size_t i = 0; i < a.size(); ++i) o[i] = ai[i] * bi[i];
  if (out.requires_grad()) {
    tape.record([a, b, out]() mutable {
      const T* go = out.grad().data();
      const T* ai = a.data().data();
      const T* bi = b.data().data();
      if (a.requires_grad()) {
        T* ga = a.grad().data();
        for (size_t i = 0; i < a.size(); ++i) ga[i] += go[i] * bi[i];
      }
      if (b.requires_grad()) {
        T* gb = b.grad().data();
        for (size_t i = 0; i < b.size(); ++i) gb[i] += go[i] * ai[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(Tape<T>& tape, Tensor<T> x) {
  Tensor<T> out = detail::make_output(tape, std::vector<size_t>{1}, x.requires_grad());
  T acc = 0;
  for (T v : x.data()) acc += v;
  out.data()[0] = acc;
  if (out.requires_grad()) {
    tape.record([x, out]() mutable {
      const T g = out.grad()[0];
      T* gx = x.grad().data();
      for (size_t i = 0; i < x.size(); ++i) gx[i] += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(Tape<T>& tape, Tensor<T> x) {
  Tensor<T> out = detail::make_output(tape, std::vector<size_t>{1}, x.requires_grad());
  T acc = 0;
  for (T v : x.data()) acc += v;
  const T inv = T(1) / static_cast<T>(x.size());
  out.data()[0] = acc * inv;
  if (out.requires_grad()) {
    tape.record([x, out, inv]() mutable {
      const T g = out.grad()[0] * inv;
      T* gx = x.grad().data();
      for (size_t i = 0; i < x.size(); ++i) gx[i] += g;
    });
  }
  return out;
}

// Mean over the batch of -log softmax(scores)[label], stabilized by the
// per-row max. Backward is (softmax - onehot) / N.
template <typename T>
Tensor<T> softmax_cross_entropy(Tape<T>& tape, Tensor<T> scores, const std::vector<size_t>& labels) {
  if (scores.rank() != 2)
    throw ShapeError("softmax_cross_entropy expects N x C scores, got " + shape_str(scores.shape()));
  const size_t n = scores.dim(0), c = scores.dim(1);
  if (labels.size() != n)
    throw ShapeError("label count " + std::to_string(labels.size()) + " does not match batch " +
                     std::to_string(n));
  for (size_t i = 0; i < n; ++i)
    if (labels[i] >= c)
      throw Error("label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                  " out of range [0, " + std::to_string(c) + ")");

  std::vector<T> probs(n * c);
  const T* s = scores.data().data();
  T loss = 0;
  for (size_t i = 0; i < n; ++i) {
    const T* row = s + i * c;
    T mx = row[0];
    for (size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    T z = 0;
    for (size_t j = 0; j < c; ++j) {
      probs[i * c + j] = std::exp(row[j] - mx);
      z += probs[i * c + j];
    }
    for (size_t j = 0; j < c; ++j) probs[i * c + j] /= z;
    loss -= std::log(probs[i * c + labels[i]]);
  }
  Tensor<T> out = detail::make_output(tape, std::vector<size_t>{1}, scores.requires_grad());
  out.data()[0] = loss / static_cast<T>(n);

  if (out.requires_grad()) {
    tape.record([scores, out, labels, probs = std::move(probs), n, c]() mutable {
      const T g = out.grad()[0] / static_cast<T>(n);
      T* gs = scores.grad().data();
      for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < c; ++j)
          gs[i * c + j] += g * (probs[i * c + j] - (labels[i] == j ? T(1) : T(0)));
    });
  }
  return out;
}

// Row-wise softmax of N x C scores, no tape involvement (evaluation helper).
template <typename T>
std::vector<T> softmax_rows(const Tensor<T>& scores) {
  const size_t n = scores.dim(0), c = scores.dim(1);
  std::vector<T> p(scores.data().begin(), scores.data().end());
  for (size_t i = 0; i < n; ++i) {
    T* row = p.data() + i * c;
    T mx = *std::max_element(row, row + c);
    T z = 0;
    for (size_t j = 0; j < c; ++j) z += (row[j] = std::exp(row[j] - mx));
    for (size_t j = 0; j < c; ++j) row[j] /= z;
  }
  return p;
}

}  // namespace hesup
