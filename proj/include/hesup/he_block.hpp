#pragma once

#include "hesup/ops.hpp"
#include "hesup/rng.hpp"
#include "hesup/tensor.hpp"

namespace hesup {

enum class Mode { Train, Eval };

struct HEConfig {
  float beta = 0.5f;        // weight applied at masked positions
  float apply_prob = 1.0f;  // per (sample, channel) Bernoulli gate
  bool enabled = true;

  void validate() const {
    if (beta < 0.f || beta > 1.f) throw Error("beta must lie in [0,1]");
    if (apply_prob < 0.f || apply_prob > 1.f) throw Error("apply_prob must lie in [0,1]");
  }
};

// Binary mask marking, per gated channel, every position attaining the
// channel maximum (exact float equality, all ties). An ungated channel is
// all-zero. Consumes exactly one uniform draw per (n, c), n-major.
template <typename T>
Tensor<T> build_mask(const Tensor<T>& f, float apply_prob, Rng& rng) {
  if (f.rank() != 4) throw ShapeError("build_mask expects N x C x H x W, got " + shape_str(f.shape()));
  const size_t nc = f.dim(0) * f.dim(1), hw = f.dim(2) * f.dim(3);
  Tensor<T> mask(f.shape());
  const T* fi = f.data().data();
  T* m = mask.data().data();
  for (size_t p = 0; p < nc; ++p) {
    const double u = rng.uniform();
    if (u >= apply_prob) continue;
    const T* plane = fi + p * hw;
    T mx = plane[0];
    for (size_t i = 1; i < hw; ++i) mx = std::max(mx, plane[i]);
    for (size_t i = 0; i < hw; ++i)
      if (plane[i] == mx) m[p * hw + i] = T(1);
  }
  return mask;
}

// F' = F where M=0, beta*F where M=1. The mask is a constant of the step:
// gradient passes unchanged at unmasked positions and scaled by beta at
// masked ones, and never flows into the mask itself.
template <typename T>
Tensor<T> apply_mask(Tape<T>& tape, Tensor<T> f, const Tensor<T>& mask, T beta) {
  if (f.shape() != mask.shape())
    throw ShapeError("apply_mask shape mismatch: " + shape_str(f.shape()) + " vs " +
                     shape_str(mask.shape()));
  Tensor<T> out = detail::make_output(tape, f.shape(), f.requires_grad());
  const T* fi = f.data().data();
  const T* mi = mask.data().data();
  T* o = out.data().data();
  for (size_t i = 0; i < f.size(); ++i) o[i] = mi[i] != T(0) ? beta * fi[i] : fi[i];
  if (out.requires_grad()) {
    tape.record([f, mask, out, beta]() mutable {
      const T* go = out.grad().data();
      const T* mi = mask.data().data();
      T* gf = f.grad().data();
      for (size_t i = 0; i < f.size(); ++i) gf[i] += mi[i] != T(0) ? beta * go[i] : go[i];
    });
  }
  return out;
}

// Training-time suppression of channel maxima; a pass-through in Eval mode
// or when disabled.
template <typename T>
Tensor<T> he_forward(Tape<T>& tape, Tensor<T> f, const HEConfig& cfg, Mode mode, Rng& rng) {
  if (mode == Mode::Eval || !cfg.enabled) return f;
  Tensor<T> mask = build_mask(f, cfg.apply_prob, rng);
  return apply_mask(tape, f, mask, static_cast<T>(cfg.beta));
}

// Per-class confidence score: spatial mean of each (suppressed) channel.
template <typename T>
Tensor<T> score(Tape<T>& tape, Tensor<T> f_prime) {
  return global_avgpool(tape, f_prime);
}

}  // namespace hesup
