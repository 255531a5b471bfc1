#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "hesup/glyph.hpp"
#include "hesup/model.hpp"

namespace hesup {

struct TrainConfig {
  double lr0 = 0.001;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double decay_factor = 0.8;
  size_t decay_every = 5;
  size_t epochs = 30;
  size_t batch_size = 64;
  HEConfig he;
  BackboneConfig backbone;
  uint64_t seed = 0;

  void validate() const {
    if (lr0 <= 0) throw Error("lr0 must be positive");
    if (decay_factor <= 0 || decay_factor > 1) throw Error("decay_factor must lie in (0,1]");
    if (batch_size < 1) throw Error("batch_size must be >= 1");
    he.validate();
  }
};

struct EpochMetrics {
  size_t epoch = 0;
  double train_loss = 0;
  double test_top1 = 0;
  double test_top5 = 0;
};

struct NamedTensor {
  std::string name;
  std::vector<uint32_t> dims;
  std::vector<float> data;
};

struct Checkpoint {
  std::vector<NamedTensor> params;
  std::vector<NamedTensor> velocities;
  size_t epoch = 0;
  TrainConfig config;
  std::vector<EpochMetrics> metrics;
};

struct CheckpointError : Error {
  using Error::Error;
};

double lr_schedule(size_t epoch, const TrainConfig& cfg);

// g' = grad + weight_decay * param; v <- momentum * v + g'; param -= lr * v.
// `decay` selects which tensors get weight decay (conv weights, not biases).
void sgd_step(std::vector<std::pair<std::string, Tensor<float>>>& params,
              std::vector<Tensor<float>>& velocities, double lr, double momentum,
              double weight_decay);

struct EvalResult {
  double top1 = 0;
  double top5 = 0;
};

EvalResult evaluate(const Model& model, const DatasetManifest& manifest,
                    const std::filesystem::path& data_dir, const std::string& split,
                    size_t batch_size = 64);

using EpochCallback = std::function<void(const EpochMetrics&)>;
using StepCallback = std::function<void()>;

Checkpoint train_loop(Model& model, const DatasetManifest& manifest,
                      const std::filesystem::path& data_dir, const TrainConfig& cfg,
                      const EpochCallback& on_epoch = nullptr,
                      const StepCallback& on_step = nullptr);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Rebuild a model (architecture + weights) from a checkpoint.
Model model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace hesup
