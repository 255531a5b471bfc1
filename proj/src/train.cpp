#include "hesup/train.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "hesup/rng.hpp"

namespace hesup {

double lr_schedule(size_t epoch, const TrainConfig& cfg) {
  return cfg.lr0 * std::pow(cfg.decay_factor, static_cast<double>(epoch / cfg.decay_every));
}

void sgd_step(std::vector<std::pair<std::string, Tensor<float>>>& params,
              std::vector<Tensor<float>>& velocities, double lr, double momentum,
              double weight_decay) {
  if (velocities.size() != params.size())
    throw ShapeError("velocity count " + std::to_string(velocities.size()) +
                     " does not match parameter count " + std::to_string(params.size()));
  for (size_t i = 0; i < params.size(); ++i) {
    auto& [name, p] = params[i];
    Tensor<float>& v = velocities[i];
    if (v.shape() != p.shape())
      throw ShapeError("velocity shape " + shape_str(v.shape()) + " does not match parameter " +
                       name + " " + shape_str(p.shape()));
    const bool decay = weight_decay != 0.0 && !name.ends_with(".bias");
    const float wd = static_cast<float>(weight_decay);
    const float mu = static_cast<float>(momentum);
    const float step = static_cast<float>(lr);
    float* pd = p.data().data();
    const float* gd = p.grad().data();
    float* vd = v.data().data();
    for (size_t j = 0; j < p.size(); ++j) {
      const float g = decay ? gd[j] + wd * pd[j] : gd[j];
      vd[j] = mu * vd[j] + g;
      pd[j] -= step * vd[j];
    }
  }
}

namespace {

// Hits among the k best-scoring classes, ranking ties by ascending index.
bool topk_hit(const float* row, size_t c, size_t label, size_t k) {
  size_t better = 0;
  for (size_t j = 0; j < c; ++j) {
    if (row[j] > row[label] || (row[j] == row[label] && j < label)) ++better;
  }
  return better < k;
}

}  // namespace

EvalResult evaluate(const Model& model, const DatasetManifest& manifest,
                    const std::filesystem::path& data_dir, const std::string& split,
                    size_t batch_size) {
  const std::vector<size_t> idx = manifest.indices_for(split);
  if (idx.empty()) throw Error("split '" + split + "' is empty");
  size_t hit1 = 0, hit5 = 0;
  Rng rng(0);
  for (size_t off = 0; off < idx.size(); off += batch_size) {
    std::vector<size_t> chunk(idx.begin() + static_cast<ptrdiff_t>(off),
                              idx.begin() + static_cast<ptrdiff_t>(std::min(off + batch_size, idx.size())));
    auto [batch, labels] = load_batch(manifest, data_dir, chunk, manifest.image_size);
    Tape<float> tape(false);
    Tensor<float> scores = model.forward(tape, batch, Mode::Eval, rng);
    const size_t c = scores.dim(1);
    for (size_t b = 0; b < chunk.size(); ++b) {
      const float* row = scores.data().data() + b * c;
      if (topk_hit(row, c, labels[b], 1)) ++hit1;
      if (topk_hit(row, c, labels[b], 5)) ++hit5;
    }
  }
  return {static_cast<double>(hit1) / static_cast<double>(idx.size()),
          static_cast<double>(hit5) / static_cast<double>(idx.size())};
}

Checkpoint train_loop(Model& model, const DatasetManifest& manifest,
                      const std::filesystem::path& data_dir, const TrainConfig& cfg,
                      const EpochCallback& on_epoch, const StepCallback& on_step) {
  cfg.validate();
  const std::vector<size_t> train_idx = manifest.indices_for("train");
  if (train_idx.empty()) throw Error("train split is empty; run split_dataset first");

  const size_t sz = manifest.image_size;
  auto [all, all_labels] = load_batch(manifest, data_dir, train_idx, sz);
  const size_t n = train_idx.size();
  const size_t plane = sz * sz;

  std::vector<Tensor<float>> velocities;
  for (auto& [name, p] : model.params) velocities.emplace_back(p.shape());

  Rng he_rng(hash_combine(cfg.seed, 0x4e65));
  std::vector<EpochMetrics> metrics;

  for (size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_schedule(epoch, cfg);
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    Rng shuf(hash_combine(cfg.seed, epoch + 1));
    shuf.shuffle(order);

    double loss_sum = 0;
    for (size_t off = 0; off < n; off += cfg.batch_size) {
      const size_t bs = std::min(cfg.batch_size, n - off);
      Tensor<float> batch({bs, 1, sz, sz});
      std::vector<size_t> labels(bs);
      for (size_t b = 0; b < bs; ++b) {
        const size_t src = order[off + b];
        std::memcpy(batch.data().data() + b * plane, all.data().data() + src * plane,
                    plane * sizeof(float));
        labels[b] = all_labels[src];
      }
      model.zero_grads();
      Tape<float> tape;
      Tensor<float> scores = model.forward(tape, batch, Mode::Train, he_rng);
      Tensor<float> loss = softmax_cross_entropy(tape, scores, labels);
      backward(loss, tape);
      sgd_step(model.params, velocities, lr, cfg.momentum, cfg.weight_decay);
      if (on_step) on_step();
      loss_sum += static_cast<double>(loss.item()) * static_cast<double>(bs);
    }

    EpochMetrics em;
    em.epoch = epoch;
    em.train_loss = loss_sum / static_cast<double>(n);
    const EvalResult ev = evaluate(model, manifest, data_dir, "test", cfg.batch_size);
    em.test_top1 = ev.top1;
    em.test_top5 = ev.top5;
    metrics.push_back(em);
    if (on_epoch) on_epoch(em);
  }

  Checkpoint ckpt;
  ckpt.epoch = cfg.epochs;
  ckpt.config = cfg;
  ckpt.config.backbone = model.cfg;
  ckpt.config.he = model.he;
  ckpt.metrics = std::move(metrics);
  for (size_t i = 0; i < model.params.size(); ++i) {
    const auto& [name, p] = model.params[i];
    std::vector<uint32_t> dims(p.shape().begin(), p.shape().end());
    ckpt.params.push_back({name, dims, {p.data().begin(), p.data().end()}});
    ckpt.velocities.push_back(
        {"opt.vel." + name, dims, {velocities[i].data().begin(), velocities[i].data().end()}});
  }
  return ckpt;
}

namespace {

void to_json(nlohmann::json& j, const TrainConfig& c) {
  std::vector<size_t> stages = c.backbone.stage_channels;
  j = nlohmann::json{
      {"lr0", c.lr0},
      {"momentum", c.momentum},
      {"weight_decay", c.weight_decay},
      {"decay_factor", c.decay_factor},
      {"decay_every", c.decay_every},
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"seed", c.seed},
      {"he", {{"beta", c.he.beta}, {"apply_prob", c.he.apply_prob}, {"enabled", c.he.enabled}}},
      {"backbone",
       {{"stage_channels", stages},
        {"residual", c.backbone.residual},
        {"num_classes", c.backbone.num_classes},
        {"input_channels", c.backbone.input_channels}}}};
}

TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.lr0 = j.at("lr0").get<double>();
  c.momentum = j.at("momentum").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.decay_factor = j.at("decay_factor").get<double>();
  c.decay_every = j.at("decay_every").get<size_t>();
  c.epochs = j.at("epochs").get<size_t>();
  c.batch_size = j.at("batch_size").get<size_t>();
  c.seed = j.at("seed").get<uint64_t>();
  c.he.beta = j.at("he").at("beta").get<float>();
  c.he.apply_prob = j.at("he").at("apply_prob").get<float>();
  c.he.enabled = j.at("he").at("enabled").get<bool>();
  c.backbone.stage_channels = j.at("backbone").at("stage_channels").get<std::vector<size_t>>();
  c.backbone.residual = j.at("backbone").at("residual").get<bool>();
  c.backbone.num_classes = j.at("backbone").at("num_classes").get<size_t>();
  c.backbone.input_channels = j.at("backbone").at("input_channels").get<size_t>();
  return c;
}

template <typename T>
void write_le(std::ostream& os, T v) {
  // host is little-endian; format is little-endian throughout
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw CheckpointError("truncated checkpoint payload");
  return v;
}

void write_tensor(std::ostream& os, const NamedTensor& t) {
  if (t.name.size() > 0xffff) throw CheckpointError("tensor name too long: " + t.name);
  write_le<uint16_t>(os, static_cast<uint16_t>(t.name.size()));
  os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
  write_le<uint8_t>(os, 0);  // dtype 0 = float32
  write_le<uint8_t>(os, static_cast<uint8_t>(t.dims.size()));
  for (uint32_t d : t.dims) write_le<uint32_t>(os, d);
  os.write(reinterpret_cast<const char*>(t.data.data()),
           static_cast<std::streamsize>(t.data.size() * sizeof(float)));
}

NamedTensor read_tensor(std::istream& is) {
  NamedTensor t;
  const uint16_t name_len = read_le<uint16_t>(is);
  t.name.resize(name_len);
  is.read(t.name.data(), name_len);
  if (!is) throw CheckpointError("truncated checkpoint payload");
  const uint8_t dtype = read_le<uint8_t>(is);
  if (dtype != 0) throw CheckpointError("unsupported dtype " + std::to_string(dtype));
  const uint8_t ndim = read_le<uint8_t>(is);
  uint64_t numel = 1;
  for (uint8_t i = 0; i < ndim; ++i) {
    t.dims.push_back(read_le<uint32_t>(is));
    numel *= t.dims.back();
  }
  t.data.resize(numel);
  is.read(reinterpret_cast<char*>(t.data.data()),
          static_cast<std::streamsize>(numel * sizeof(float)));
  if (!is) throw CheckpointError("truncated checkpoint payload");
  return t;
}

nlohmann::json metrics_to_json(const std::vector<EpochMetrics>& ms) {
  nlohmann::json arr = nlohmann::json::array();
  for (const EpochMetrics& m : ms)
    arr.push_back({{"epoch", m.epoch},
                   {"train_loss", m.train_loss},
                   {"test_top1", m.test_top1},
                   {"test_top5", m.test_top5}});
  return arr;
}

constexpr char kMagic[4] = {'H', 'E', 'N', 'C'};
constexpr uint32_t kVersion = 1;

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot open checkpoint for writing: " + path.string());
  os.write(kMagic, 4);
  write_le<uint32_t>(os, kVersion);
  write_le<uint32_t>(os, static_cast<uint32_t>(ckpt.params.size() + ckpt.velocities.size()));
  for (const NamedTensor& t : ckpt.params) write_tensor(os, t);
  for (const NamedTensor& t : ckpt.velocities) write_tensor(os, t);

  nlohmann::json meta;
  meta["epoch"] = ckpt.epoch;
  to_json(meta["config"], ckpt.config);
  meta["metrics"] = metrics_to_json(ckpt.metrics);
  const std::string s = meta.dump();
  write_le<uint32_t>(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
  if (!os) throw CheckpointError("checkpoint write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint: " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw CheckpointError("bad magic in checkpoint: " + path.string());
  const uint32_t version = read_le<uint32_t>(is);
  if (version != kVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const uint32_t count = read_le<uint32_t>(is);

  Checkpoint ckpt;
  for (uint32_t i = 0; i < count; ++i) {
    NamedTensor t = read_tensor(is);
    if (t.name.starts_with("opt.vel."))
      ckpt.velocities.push_back(std::move(t));
    else
      ckpt.params.push_back(std::move(t));
  }
  const uint32_t meta_len = read_le<uint32_t>(is);
  std::string s(meta_len, '\0');
  is.read(s.data(), meta_len);
  if (!is) throw CheckpointError("truncated checkpoint payload");
  nlohmann::json meta = nlohmann::json::parse(s);
  ckpt.epoch = meta.at("epoch").get<size_t>();
  ckpt.config = config_from_json(meta.at("config"));
  for (const auto& jm : meta.at("metrics"))
    ckpt.metrics.push_back({jm.at("epoch").get<size_t>(), jm.at("train_loss").get<double>(),
                            jm.at("test_top1").get<double>(), jm.at("test_top5").get<double>()});
  return ckpt;
}

Model model_from_checkpoint(const Checkpoint& ckpt) {
  Model m = build_model(ckpt.config.backbone, ckpt.config.seed, ckpt.config.he);
  if (ckpt.params.size() != m.params.size())
    throw CheckpointError("checkpoint parameter count does not match architecture");
  for (const NamedTensor& t : ckpt.params) {
    Tensor<float>& p = m.param(t.name);
    if (t.data.size() != p.size())
      throw CheckpointError("shape mismatch for parameter " + t.name);
    std::copy(t.data.begin(), t.data.end(), p.data().begin());
  }
  return m;
}

}  // namespace hesup
