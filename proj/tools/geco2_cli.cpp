// geco2 command line: gen | train | eval | infer | ablate

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <opencv2/imgcodecs.hpp>

#include "geco2/checkpoint.hpp"
#include "geco2/config.hpp"
#include "geco2/harness.hpp"

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<uint64_t> seed;
  std::string variant;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "TOML config with [model], [train], [data]");
  cmd->add_option("--set", c.overrides, "override, e.g. --set train.epochs=5");
  cmd->add_option("--seed", c.seed, "seed for data generation and training");
  cmd->add_option("--variant", c.variant, "full, fp, q1_only, q2_only, q3_only");
}

geco2::RunConfig resolve(const Common& c) {
  geco2::RunConfig config = c.config_path.empty() ? geco2::RunConfig{} : geco2::load_config(c.config_path);
  for (const auto& o : c.overrides) geco2::apply_override(config, o);
  if (c.seed) {
    config.data.seed = *c.seed;
    config.data.generator.seed = *c.seed;
    config.train.seed = *c.seed;
  }
  if (!c.variant.empty()) config.model.variant = geco2::parse_variant(c.variant);
  return config;
}

std::vector<geco2::Box> parse_boxes(const std::string& text) {
  std::vector<geco2::Box> boxes;
  std::stringstream all(text);
  std::string item;
  while (std::getline(all, item, ';')) {
    if (item.empty()) continue;
    std::stringstream one(item);
    std::string v;
    std::vector<double> xs;
    while (std::getline(one, v, ',')) xs.push_back(std::stod(v));
    if (xs.size() != 4) throw std::invalid_argument("box '" + item + "' must be x1,y1,x2,y2");
    geco2::Box b{xs[0], xs[1], xs[2], xs[3], std::nullopt};
    if (!b.valid() || b.area() <= 0.0) throw std::invalid_argument("box '" + item + "' is empty or inverted");
    boxes.push_back(b);
  }
  if (boxes.empty()) throw std::invalid_argument("--boxes needs at least one exemplar");
  return boxes;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot counting by detection"};
  app.require_subcommand(1);

  Common gen_opts;
  std::string gen_out;
  std::string gen_preset;
  bool force = false;
  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset (train/val/test)");
  add_common(gen, gen_opts);
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--preset", gen_preset, "uniform, multiscale, dense or multiclass");
  gen->add_flag("--force", force, "overwrite an existing dataset");

  Common train_opts;
  std::string train_data;
  std::string train_out;
  std::string resume;
  auto* train = app.add_subcommand("train", "train and calibrate the threshold");
  add_common(train, train_opts);
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--out", train_out, "run directory")->required();
  train->add_option("--resume", resume, "checkpoint to continue from (last.pt)");

  std::string eval_data;
  std::string eval_ckpt;
  std::string eval_split = "test";
  std::string eval_out;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  eval->add_option("--data", eval_data, "dataset directory")->required();
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--split", eval_split, "train, val or test");
  eval->add_option("--out", eval_out, "report directory")->required();

  std::string infer_image;
  std::string infer_ckpt;
  std::string infer_boxes;
  std::string infer_out;
  auto* infer = app.add_subcommand("infer", "count objects in one image");
  infer->add_option("--image", infer_image, "input image")->required();
  infer->add_option("--checkpoint", infer_ckpt, "checkpoint file")->required();
  infer->add_option("--boxes", infer_boxes, "exemplars x1,y1,x2,y2[;...]")->required();
  infer->add_option("--out", infer_out, "output prefix; writes <out>.png and <out>.json")->required();

  Common ablate_opts;
  std::string ablate_data;
  std::string ablate_out;
  std::string ablate_split = "val";
  std::vector<std::string> variants{"full", "fp", "q1_only", "q2_only", "q3_only"};
  std::vector<uint64_t> seeds{0};
  auto* ablate = app.add_subcommand("ablate", "train and compare variants");
  add_common(ablate, ablate_opts);
  ablate->add_option("--data", ablate_data, "dataset directory")->required();
  ablate->add_option("--out", ablate_out, "output directory")->required();
  ablate->add_option("--split", ablate_split, "evaluation split");
  ablate->add_option("--variants", variants, "variants (also alpha0, nda1, nca2)")->delimiter(',');
  ablate->add_option("--seeds", seeds, "training seeds")->delimiter(',');

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      geco2::RunConfig config = resolve(gen_opts);
      if (!gen_preset.empty()) {
        geco2::apply_override(config, "data.preset=\"" + gen_preset + "\"");
        if (gen_opts.seed) config.data.generator.seed = *gen_opts.seed;
      }
      geco2::generate_dataset(config.data, gen_out, force);
      std::cout << "wrote " << config.data.train_images << "/" << config.data.val_images << "/"
                << config.data.test_images << " images to " << gen_out << "\n";
    } else if (*train) {
      const geco2::RunConfig config = resolve(train_opts);
      geco2::TrainOptions opts;
      opts.out_dir = train_out;
      if (!resume.empty()) opts.resume = resume;
      const auto summary = geco2::train(config, train_data, opts);
      std::cout << "best val MAE " << summary.best_val_mae << ", tau " << summary.tau << ", "
                << summary.steps << " steps -> " << summary.best_checkpoint.string() << "\n";
    } else if (*eval) {
      geco2::Checkpoint ck = geco2::load_checkpoint(eval_ckpt);
      const auto scenes = geco2::load_split(eval_data, eval_split);
      const auto report = geco2::evaluate(ck.model, ck.tau, scenes, eval_split);
      geco2::write_eval_outputs(report, eval_out, ck.step);
      std::cout << geco2::report_json(report).dump(1) << "\n";
    } else if (*infer) {
      const cv::Mat image = cv::imread(infer_image, cv::IMREAD_COLOR);
      if (image.empty()) throw std::runtime_error("cannot read image " + infer_image);
      const auto exemplars = parse_boxes(infer_boxes);
      geco2::Checkpoint ck = geco2::load_checkpoint(infer_ckpt);
      const std::string id = fs::path(infer_image).stem().string();
      const auto dets = geco2::infer_image(ck.model, ck.tau, image, exemplars, id);
      const cv::Mat overlay = geco2::render_overlay(image, exemplars, dets);
      std::vector<uchar> png;
      cv::imencode(".png", overlay, png);
      geco2::write_file_atomic(infer_out + ".png", std::string(png.begin(), png.end()));
      geco2::write_file_atomic(infer_out + ".json", geco2::predictions_json(dets).dump(1) + "\n");
      std::cout << "N = " << dets.count() << "\n";
    } else if (*ablate) {
      const geco2::RunConfig config = resolve(ablate_opts);
      const auto rows = geco2::run_ablation(config, ablate_data, variants, seeds, ablate_out, ablate_split);
      geco2::write_ablation_table(rows, ablate_out);
      std::cout << "wrote " << (fs::path(ablate_out) / "ablation.md").string() << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return EXIT_FAILURE;
  }
  return EXIT_SUCCESS;
}
