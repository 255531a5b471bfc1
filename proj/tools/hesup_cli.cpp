#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "hesup/gradcheck.hpp"
#include "hesup/gradcheck_suite.hpp"
#include "hesup/glyph.hpp"
#include "hesup/model.hpp"
#include "hesup/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

size_t env_threads() {
  const char* v = std::getenv("HESUP_THREADS");
  if (!v) return 1;
  const long n = std::strtol(v, nullptr, 10);
  return n > 0 ? static_cast<size_t>(n) : 1;
}

std::vector<size_t> parse_stages(const std::string& s) {
  std::vector<size_t> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stoul(tok));
  return out;
}

struct TrainArgs {
  std::string data, out = "model.ckpt", stages = "8,16,32";
  double beta = 0.5, apply_prob = 1.0, lr = 0.001, momentum = 0.9, weight_decay = 1e-4;
  size_t epochs = 30, batch = 64;
  uint64_t seed = 0;
  bool no_he = false;
  bool residual = false;
};

hesup::Checkpoint run_training(const TrainArgs& a, bool quiet, std::ostream& log) {
  hesup::DatasetManifest manifest = hesup::load_manifest(a.data);
  hesup::TrainConfig cfg;
  cfg.lr0 = a.lr;
  cfg.momentum = a.momentum;
  cfg.weight_decay = a.weight_decay;
  cfg.epochs = a.epochs;
  cfg.batch_size = a.batch;
  cfg.seed = a.seed;
  cfg.he.beta = static_cast<float>(a.beta);
  cfg.he.apply_prob = static_cast<float>(a.apply_prob);
  cfg.he.enabled = !a.no_he;
  cfg.backbone.stage_channels = parse_stages(a.stages);
  cfg.backbone.residual = a.residual;
  cfg.backbone.num_classes = manifest.fonts.size();
  hesup::Model model = hesup::build_model(cfg.backbone, cfg.seed, cfg.he);
  return hesup::train_loop(model, manifest, a.data, cfg, [&](const hesup::EpochMetrics& m) {
    if (!quiet)
      log << "epoch " << m.epoch << "  loss " << m.train_loss << "  top1 " << m.test_top1
          << "  top5 " << m.test_top5 << "\n";
  });
}


}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Font-recognition training stack with max-response suppression"};
  app.require_subcommand(1);
  bool as_json = false;
  app.add_flag("--json", as_json, "emit a single JSON object on stdout");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic glyph dataset");
  std::string gen_out;
  size_t gen_fonts = 20, gen_size = 64, gen_holdout = 6;
  uint64_t gen_seed = 0;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--fonts", gen_fonts, "number of font classes");
  gen->add_option("--size", gen_size, "image size in pixels");
  gen->add_option("--holdout", gen_holdout, "held-out glyphs per class (test split)");
  gen->add_option("--seed", gen_seed, "random seed");

  // train
  auto* tr = app.add_subcommand("train", "train a model");
  TrainArgs ta;
  tr->add_option("--data", ta.data, "dataset directory")->required();
  tr->add_option("--out", ta.out, "checkpoint output path");
  tr->add_option("--beta", ta.beta, "suppression weight at masked positions");
  tr->add_option("--apply-prob", ta.apply_prob, "per-channel masking probability");
  tr->add_option("--epochs", ta.epochs, "training epochs");
  tr->add_option("--lr", ta.lr, "initial learning rate");
  tr->add_option("--batch", ta.batch, "batch size");
  tr->add_option("--seed", ta.seed, "random seed");
  tr->add_option("--stages", ta.stages, "backbone stage widths, comma-separated");
  tr->add_flag("--residual", ta.residual, "add identity skips within stages");
  tr->add_flag("--no-he", ta.no_he, "disable the suppression block");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ev_data, ev_ckpt, ev_split = "test";
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
  ev->add_option("--split", ev_split, "split to evaluate");

  // predict
  auto* pr = app.add_subcommand("predict", "rank classes for one image");
  std::string pr_ckpt, pr_image;
  size_t pr_topk = 5;
  pr->add_option("--ckpt", pr_ckpt, "checkpoint path")->required();
  pr->add_option("--image", pr_image, "PGM image path")->required();
  pr->add_option("--topk", pr_topk, "number of classes to report");

  // ablate-beta
  auto* ab = app.add_subcommand("ablate-beta", "sweep the suppression weight");
  std::string ab_data, ab_betas = "1.0,0.9,0.8,0.7,0.6,0.5,0.4,0.3", ab_stages = "8,16,32";
  size_t ab_seeds = 3, ab_epochs = 30, ab_batch = 64;
  double ab_lr = 0.001;
  ab->add_option("--data", ab_data, "dataset directory")->required();
  ab->add_option("--betas", ab_betas, "comma-separated weights");
  ab->add_option("--seeds", ab_seeds, "seeds per weight");
  ab->add_option("--epochs", ab_epochs, "training epochs");
  ab->add_option("--batch", ab_batch, "batch size");
  ab->add_option("--lr", ab_lr, "initial learning rate");
  ab->add_option("--stages", ab_stages, "backbone stage widths");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "run the gradient oracle suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) {
      hesup::DatasetManifest m = hesup::generate_dataset(gen_fonts, hesup::builtin_glyph_ids(),
                                                         gen_size, gen_seed, gen_out, env_threads());
      hesup::split_dataset(m, gen_holdout, gen_seed);
      hesup::save_manifest(m, gen_out);
      if (as_json) {
        json j{{"out", gen_out},
               {"fonts", gen_fonts},
               {"samples", m.samples.size()},
               {"train", m.indices_for("train").size()},
               {"test", m.indices_for("test").size()}};
        std::cout << j.dump() << "\n";
      } else {
        std::cout << "wrote " << m.samples.size() << " samples to " << gen_out << "\n";
      }
    } else if (tr->parsed()) {
      hesup::Checkpoint ckpt = run_training(ta, as_json, std::cout);
      hesup::save_checkpoint(ckpt, ta.out);
      const auto& last = ckpt.metrics.back();
      if (as_json) {
        json j{{"ckpt", ta.out},
               {"epochs", ckpt.epoch},
               {"final_train_loss", last.train_loss},
               {"test_top1", last.test_top1},
               {"test_top5", last.test_top5}};
        std::cout << j.dump() << "\n";
      } else {
        std::cout << "saved " << ta.out << "\n";
      }
    } else if (ev->parsed()) {
      hesup::DatasetManifest m = hesup::load_manifest(ev_data);
      hesup::Model model = hesup::model_from_checkpoint(hesup::load_checkpoint(ev_ckpt));
      hesup::EvalResult r = hesup::evaluate(model, m, ev_data, ev_split);
      if (as_json) {
        json j{{"split", ev_split}, {"top1", r.top1}, {"top5", r.top5}};
        std::cout << j.dump() << "\n";
      } else {
        std::cout.setf(std::ios::fixed);
        std::cout.precision(2);
        std::cout << "top1 " << r.top1 << "\ntop5 " << r.top5 << "\n";
      }
    } else if (pr->parsed()) {
      hesup::Model model = hesup::model_from_checkpoint(hesup::load_checkpoint(pr_ckpt));
      hesup::Image img = hesup::read_pgm(pr_image);
      hesup::Tensor<float> x({1, 1, img.size, img.size});
      for (size_t i = 0; i < img.pixels.size(); ++i)
        x.data()[i] = static_cast<float>(img.pixels[i]) / 255.0f - 0.5f;
      auto ranked = hesup::predict(model, x, pr_topk);
      if (as_json) {
        json arr = json::array();
        for (const auto& p : ranked) arr.push_back({{"class", p.cls}, {"score", p.score}});
        std::cout << json{{"predictions", arr}}.dump() << "\n";
      } else {
        for (const auto& p : ranked) std::cout << p.cls << " " << p.score << "\n";
      }
    } else if (ab->parsed()) {
      std::vector<double> betas;
      {
        std::stringstream ss(ab_betas);
        std::string tok;
        while (std::getline(ss, tok, ',')) betas.push_back(std::stod(tok));
      }
      json rows = json::array();
      for (double beta : betas) {
        double t1 = 0, t5 = 0;
        for (size_t s = 0; s < ab_seeds; ++s) {
          TrainArgs a;
          a.data = ab_data;
          a.beta = beta;
          a.epochs = ab_epochs;
          a.batch = ab_batch;
          a.lr = ab_lr;
          a.stages = ab_stages;
          a.seed = s;
          hesup::Checkpoint ckpt = run_training(a, true, std::cout);
          t1 += ckpt.metrics.back().test_top1;
          t5 += ckpt.metrics.back().test_top5;
        }
        rows.push_back({{"beta", beta},
                        {"mean_top1", t1 / static_cast<double>(ab_seeds)},
                        {"mean_top5", t5 / static_cast<double>(ab_seeds)}});
        if (!as_json) {
          std::cerr.setf(std::ios::fixed);
          std::cerr.precision(4);
          std::cerr << "beta " << beta << "  top1 " << t1 / ab_seeds << "  top5 " << t5 / ab_seeds
                    << "\n";
        }
      }
      if (as_json) {
        std::cout << json{{"seeds", ab_seeds}, {"results", rows}}.dump() << "\n";
      } else {
        std::cout << "beta    top1    top5\n";
        std::cout.setf(std::ios::fixed);
        std::cout.precision(4);
        for (const auto& r : rows)
          std::cout << r["beta"].get<double>() << "  " << r["mean_top1"].get<double>() << "  "
                    << r["mean_top5"].get<double>() << "\n";
      }
    } else if (gc->parsed()) {
      std::map<std::string, double> report = hesup::gradcheck_suite();
      double worst = 0;
      for (const auto& [k, v] : report) worst = std::max(worst, v);
      if (as_json) {
        std::cout << json{{"errors", report}, {"max", worst}, {"pass", worst < 1e-5}}.dump()
                  << "\n";
      } else {
        for (const auto& [k, v] : report)
          std::cout << k << "  " << v << "\n";
        std::cout << "max " << worst << (worst < 1e-5 ? "  PASS" : "  FAIL") << "\n";
      }
      return worst < 1e-5 ? kExitOk : kExitRuntime;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}
