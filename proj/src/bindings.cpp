#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "hesup/glyph.hpp"
#include "hesup/gradcheck_suite.hpp"
#include "hesup/he_block.hpp"
#include "hesup/model.hpp"
#include "hesup/train.hpp"

namespace py = pybind11;
using namespace hesup;

namespace {

Tensor<float> tensor_from_array(py::array_t<float, py::array::c_style | py::array::forcecast> a) {
  if (a.ndim() != 4) throw ShapeError("expected an N x C x H x W array");
  std::vector<size_t> shape(a.shape(), a.shape() + 4);
  std::vector<float> data(a.data(), a.data() + a.size());
  return Tensor<float>::from_data(std::move(shape), std::move(data));
}

py::array_t<float> array_from_tensor(const Tensor<float>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<float> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::dict metrics_dict(const EpochMetrics& m) {
  py::dict d;
  d["epoch"] = m.epoch;
  d["train_loss"] = m.train_loss;
  d["test_top1"] = m.test_top1;
  d["test_top5"] = m.test_top5;
  return d;
}

}  // namespace

PYBIND11_MODULE(_hesup, m) {
  m.doc() = "CPU font-classifier training stack with max-response suppression";

  m.def(
      "generate_dataset",
      [](const std::filesystem::path& out_dir, size_t fonts, size_t size, size_t holdout,
         uint64_t seed, size_t threads) {
        DatasetManifest manifest =
            generate_dataset(fonts, builtin_glyph_ids(), size, seed, out_dir, threads);
        split_dataset(manifest, holdout, seed);
        save_manifest(manifest, out_dir);
        py::dict d;
        d["fonts"] = manifest.fonts.size();
        d["samples"] = manifest.samples.size();
        d["train"] = manifest.indices_for("train").size();
        d["test"] = manifest.indices_for("test").size();
        return d;
      },
      py::arg("out_dir"), py::arg("fonts") = 20, py::arg("size") = 64, py::arg("holdout") = 6,
      py::arg("seed") = 0, py::arg("threads") = 1,
      "Render a synthetic glyph dataset and write images plus manifest.json.");

  m.def(
      "train",
      [](const std::filesystem::path& data_dir, const std::filesystem::path& out_ckpt,
         double beta, double apply_prob, bool he_enabled, size_t epochs, double lr, size_t batch,
         uint64_t seed, std::vector<size_t> stages, bool residual) {
        DatasetManifest manifest = load_manifest(data_dir);
        TrainConfig cfg;
        cfg.lr0 = lr;
        cfg.epochs = epochs;
        cfg.batch_size = batch;
        cfg.seed = seed;
        cfg.he.beta = static_cast<float>(beta);
        cfg.he.apply_prob = static_cast<float>(apply_prob);
        cfg.he.enabled = he_enabled;
        cfg.backbone.stage_channels = std::move(stages);
        cfg.backbone.residual = residual;
        cfg.backbone.num_classes = manifest.fonts.size();
        cfg.validate();
        Model model = build_model(cfg.backbone, cfg.seed, cfg.he);
        Checkpoint ckpt = train_loop(model, manifest, data_dir, cfg);
        if (!out_ckpt.empty()) save_checkpoint(ckpt, out_ckpt);
        py::list history;
        for (const auto& em : ckpt.metrics) history.append(metrics_dict(em));
        py::dict d;
        d["history"] = history;
        d["final"] = metrics_dict(ckpt.metrics.back());
        return d;
      },
      py::arg("data_dir"), py::arg("out_ckpt") = std::filesystem::path(), py::arg("beta") = 0.5,
      py::arg("apply_prob") = 1.0, py::arg("he_enabled") = true, py::arg("epochs") = 30,
      py::arg("lr") = 0.001, py::arg("batch") = 64, py::arg("seed") = 0,
      py::arg("stages") = std::vector<size_t>{8, 16, 32}, py::arg("residual") = false,
      "Train a model on a generated dataset; returns per-epoch metrics.");

  m.def(
      "evaluate",
      [](const std::filesystem::path& data_dir, const std::filesystem::path& ckpt_path,
         const std::string& split) {
        DatasetManifest manifest = load_manifest(data_dir);
        Model model = model_from_checkpoint(load_checkpoint(ckpt_path));
        EvalResult r = evaluate(model, manifest, data_dir, split);
        py::dict d;
        d["top1"] = r.top1;
        d["top5"] = r.top5;
        return d;
      },
      py::arg("data_dir"), py::arg("ckpt"), py::arg("split") = "test");

  m.def(
      "predict",
      [](const std::filesystem::path& ckpt_path, const std::filesystem::path& image_path,
         size_t topk) {
        Model model = model_from_checkpoint(load_checkpoint(ckpt_path));
        Image img = read_pgm(image_path);
        Tensor<float> x({1, 1, img.size, img.size});
        for (size_t i = 0; i < img.pixels.size(); ++i)
          x.data()[i] = static_cast<float>(img.pixels[i]) / 255.0f - 0.5f;
        auto preds = predict(model, x, topk);
        py::list out;
        for (const auto& p : preds) out.append(py::make_tuple(p.cls, p.score));
        return out;
      },
      py::arg("ckpt"), py::arg("image"), py::arg("topk") = 5);

  m.def(
      "suppress",
      [](py::array_t<float, py::array::c_style | py::array::forcecast> f, double beta,
         double apply_prob, uint64_t seed) {
        Tensor<float> t = tensor_from_array(f);
        Rng rng(seed);
        Tensor<float> mask = build_mask(t, static_cast<float>(apply_prob), rng);
        Tape<float> tape(false);
        Tensor<float> out = apply_mask(tape, t, mask, static_cast<float>(beta));
        return py::make_tuple(array_from_tensor(out), array_from_tensor(mask));
      },
      py::arg("f"), py::arg("beta") = 0.5, py::arg("apply_prob") = 1.0, py::arg("seed") = 0,
      "Suppress each channel's maximal activations by beta; returns (output, mask).");

  m.def(
      "score",
      [](py::array_t<float, py::array::c_style | py::array::forcecast> f) {
        Tensor<float> t = tensor_from_array(f);
        Tape<float> tape(false);
        return array_from_tensor(score(tape, t));
      },
      py::arg("f"), "Spatial mean of each class channel: N x C x H x W -> N x C x 1 x 1.");

  m.def("gradcheck_suite", []() { return gradcheck_suite(); },
        "Finite-difference check of every op in 64-bit; returns max relative error per op.");
}
