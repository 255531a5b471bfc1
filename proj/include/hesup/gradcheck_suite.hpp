#pragma once

#include <map>
#include <string>

#include "hesup/gradcheck.hpp"
#include "hesup/model.hpp"
#include "hesup/ops.hpp"
#include "hesup/rng.hpp"

namespace hesup {

// Gradient oracle suite: every differentiable op plus the full tiny model
// with a frozen HE mask, in 64-bit precision.
inline std::map<std::string, double> gradcheck_suite() {
  std::map<std::string, double> report;

  Rng rng(2024);
  auto rand_t = [&](std::vector<size_t> shape, bool rg = true) {
    Tensor<double> t(std::move(shape), rg);
    for (double& v : t.data()) v = rng.uniform(-1.0, 1.0);
    return t;
  };

  {
    auto x = rand_t({1, 2, 6, 6});
    auto w = rand_t({3, 2, 3, 3});
    auto b = rand_t({3});
    auto f = [x, w, b](Tape<double>& t) mutable { return mean(t, conv2d(t, x, w, b, 1, 1)); };
    double e = gradcheck(f, x).max_rel_error;
    e = std::max(e, gradcheck(f, w).max_rel_error);
    e = std::max(e, gradcheck(f, b).max_rel_error);
    report["conv2d"] = e;
  }
  {
    Tensor<double> x({3, 4}, true);
    for (double& v : x.data()) {
      v = rng.uniform(0.05, 1.0);
      if (rng.uniform() < 0.5) v = -v;
    }
    auto f = [x](Tape<double>& t) mutable { return mean(t, relu(t, x)); };
    report["relu"] = gradcheck(f, x).max_rel_error;
  }
  {
    auto x = rand_t({1, 2, 6, 6});
    auto f = [x](Tape<double>& t) mutable { return mean(t, maxpool2d(t, x, 2, 2)); };
    report["maxpool2d"] = gradcheck(f, x).max_rel_error;
  }
  {
    auto x = rand_t({2, 3, 4, 4});
    auto f = [x](Tape<double>& t) mutable { return sum(t, global_avgpool(t, x)); };
    report["global_avgpool"] = gradcheck(f, x).max_rel_error;
  }
  {
    auto s = rand_t({3, 5});
    std::vector<size_t> labels{1, 4, 0};
    auto f = [s, labels](Tape<double>& t) mutable { return softmax_cross_entropy(t, s, labels); };
    report["softmax_cross_entropy"] = gradcheck(f, s).max_rel_error;
  }
  {
    auto x = rand_t({1, 2, 3, 3});
    Rng mr(5);
    auto m = build_mask(x, 1.0, mr);
    auto f = [x, m](Tape<double>& t) mutable { return mean(t, apply_mask(t, x, m, 0.5)); };
    report["apply_mask"] = gradcheck(f, x).max_rel_error;
  }
  {
    BackboneConfig cfg;
    cfg.stage_channels = {4};
    cfg.num_classes = 3;
    auto model = build_model(cfg, 17).cast<double>();
    auto x = rand_t({1, 1, 8, 8});
    Tape<double> probe(false);
    auto f0 = model.activation_maps(probe, x);
    Rng mr(3);
    auto mask = build_mask(f0, 1.0, mr);
    std::vector<size_t> labels{1};
    auto fn = [model, x, mask, labels](Tape<double>& t) {
      auto f = model.activation_maps(t, x);
      return softmax_cross_entropy(t, score(t, apply_mask(t, f, mask, 0.5)), labels);
    };
    double e = gradcheck(fn, x).max_rel_error;
    auto w = model.param("stage0.conv.weight");
    e = std::max(e, gradcheck(fn, w).max_rel_error);
    auto hw = model.param("head.weight");
    e = std::max(e, gradcheck(fn, hw).max_rel_error);
    auto hb = model.param("head.bias");
    e = std::max(e, gradcheck(fn, hb).max_rel_error);
    report["full_model_frozen_mask"] = e;
  }
  return report;
}


}  // namespace hesup
