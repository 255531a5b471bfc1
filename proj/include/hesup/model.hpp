#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "hesup/he_block.hpp"
#include "hesup/ops.hpp"
#include "hesup/rng.hpp"
#include "hesup/tensor.hpp"

namespace hesup {

struct BackboneConfig {
  std::vector<size_t> stage_channels{16, 32};
  bool residual = false;
  size_t num_classes = 2;
  size_t input_channels = 1;

  void validate() const {
    if (stage_channels.empty()) throw Error("backbone needs at least one stage");
    for (size_t c : stage_channels)
      if (c == 0) throw Error("stage widths must be >= 1");
    if (num_classes < 2) throw Error("num_classes must be >= 2");
    if (input_channels == 0) throw Error("input_channels must be >= 1");
  }

  // Spatial halving per stage; inputs below this cannot reach a 1x1 map.
  size_t min_input_size() const { return size_t{1} << stage_channels.size(); }
};

// Backbone of [conv3x3, relu, maxpool2] stages, a 1x1-conv head producing
// one activation map per class, and the HE block between head and pooling.
template <typename T>
struct ModelT {
  BackboneConfig cfg;
  HEConfig he;
  std::vector<std::pair<std::string, Tensor<T>>> params;

  Tensor<T>& param(const std::string& name) {
    for (auto& [n, t] : params)
      if (n == name) return t;
    throw Error("unknown parameter: " + name);
  }
  const Tensor<T>& param(const std::string& name) const {
    return const_cast<ModelT*>(this)->param(name);
  }

  void zero_grads() {
    for (auto& [n, t] : params) t.zero_grad();
  }

  template <typename U>
  ModelT<U> cast() const {
    ModelT<U> m;
    m.cfg = cfg;
    m.he = he;
    for (const auto& [n, t] : params) m.params.emplace_back(n, t.template cast<U>());
    return m;
  }

  // Backbone + 1x1 head: N x 1 x H x W -> N x C x H' x W' activation maps.
  Tensor<T> activation_maps(Tape<T>& tape, Tensor<T> x) const {
    if (x.rank() != 4 || x.dim(1) != cfg.input_channels)
      throw ShapeError("model expects N x " + std::to_string(cfg.input_channels) +
                       " x H x W input, got " + shape_str(x.shape()));
    const size_t min_sz = cfg.min_input_size();
    if (x.dim(2) < min_sz || x.dim(3) < min_sz)
      throw ShapeError("input " + shape_str(x.shape()) + " smaller than minimum " +
                       std::to_string(min_sz) + "x" + std::to_string(min_sz));
    size_t cin = cfg.input_channels;
    for (size_t s = 0; s < cfg.stage_channels.size(); ++s) {
      const std::string p = "stage" + std::to_string(s);
      Tensor<T> y = conv2d(tape, x, param(p + ".conv.weight"), param(p + ".conv.bias"), 1, 1);
      if (cfg.residual) {
        Tensor<T> skip = cin == cfg.stage_channels[s]
                             ? x
                             : conv2d(tape, x, param(p + ".proj.weight"), param(p + ".proj.bias"));
        y = add(tape, y, skip);
      }
      x = maxpool2d(tape, relu(tape, y), 2, 2);
      cin = cfg.stage_channels[s];
    }
    return conv2d(tape, x, param("head.weight"), param("head.bias"));
  }

  Tensor<T> forward(Tape<T>& tape, Tensor<T> batch, Mode mode, Rng& rng) const {
    Tensor<T> f = activation_maps(tape, batch);
    Tensor<T> fp = he_forward(tape, f, he, mode, rng);
    return score(tape, fp);
  }
};

using Model = ModelT<float>;

namespace detail {

template <typename T>
Tensor<T> init_conv_weight(std::vector<size_t> shape, Rng& rng) {
  const size_t fan_in = shape[1] * shape[2] * shape[3];
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  Tensor<T> w(std::move(shape), true);
  for (T& v : w.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return w;
}

}  // namespace detail

template <typename T = float>
ModelT<T> build_model(const BackboneConfig& cfg, uint64_t seed, HEConfig he = {}) {
  cfg.validate();
  he.validate();
  ModelT<T> m;
  m.cfg = cfg;
  m.he = he;
  Rng rng(seed);
  size_t cin = cfg.input_channels;
  for (size_t s = 0; s < cfg.stage_channels.size(); ++s) {
    const size_t cout = cfg.stage_channels[s];
    const std::string p = "stage" + std::to_string(s);
    m.params.emplace_back(p + ".conv.weight", detail::init_conv_weight<T>({cout, cin, 3, 3}, rng));
    m.params.emplace_back(p + ".conv.bias", Tensor<T>({cout}, true));
    if (cfg.residual && cin != cout) {
      m.params.emplace_back(p + ".proj.weight", detail::init_conv_weight<T>({cout, cin, 1, 1}, rng));
      m.params.emplace_back(p + ".proj.bias", Tensor<T>({cout}, true));
    }
    cin = cout;
  }
  m.params.emplace_back("head.weight", detail::init_conv_weight<T>({cfg.num_classes, cin, 1, 1}, rng));
  m.params.emplace_back("head.bias", Tensor<T>({cfg.num_classes}, true));
  return m;
}

struct Prediction {
  size_t cls;
  float score;
};

// Eval-mode forward of a single image; classes ranked by descending score,
// ties broken by ascending class index.
template <typename T>
std::vector<Prediction> predict(const ModelT<T>& model, Tensor<T> image, size_t topk) {
  Tape<T> tape(false);
  Rng rng(0);
  Tensor<T> scores = model.forward(tape, image, Mode::Eval, rng);
  const size_t c = scores.dim(1);
  std::vector<size_t> order(c);
  for (size_t i = 0; i < c; ++i) order[i] = i;
  const T* s = scores.data().data();
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return s[a] > s[b]; });
  std::vector<Prediction> out;
  for (size_t i = 0; i < std::min(topk, c); ++i)
    out.push_back({order[i], static_cast<float>(s[order[i]])});
  return out;
}

}  // namespace hesup
