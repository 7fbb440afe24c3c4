#include "geco2/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "geco2/checkpoint.hpp"
#include "geco2/loss.hpp"
#include "geco2/metrics.hpp"

namespace geco2 {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr uint64_t kSeedStride = 1'000'000;
constexpr int kMaxSplitImages = 300'000;
constexpr int kDenseObjectCount = 300;

uint64_t split_offset(const std::string& split) {
  if (split == "train") return 0;
  if (split == "val") return 400'000;
  if (split == "test") return 700'000;
  throw std::invalid_argument("unknown split '" + split + "' (expected train, val or test)");
}

int split_size(const DataConfig& data, const std::string& split) {
  if (split == "train") return data.train_images;
  if (split == "val") return data.val_images;
  return data.test_images;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// Undo the input rescale and clip to the original image; padding-only boxes are dropped.
void to_image_frame(DetectionSet& dets, double scale, int width, int height) {
  std::vector<Box> kept;
  kept.reserve(dets.boxes.size());
  for (Box b : dets.boxes) {
    b.x1 = std::clamp(b.x1 / scale, 0.0, static_cast<double>(width));
    b.y1 = std::clamp(b.y1 / scale, 0.0, static_cast<double>(height));
    b.x2 = std::clamp(b.x2 / scale, 0.0, static_cast<double>(width));
    b.y2 = std::clamp(b.y2 / scale, 0.0, static_cast<double>(height));
    if (b.x2 > b.x1 && b.y2 > b.y1) kept.push_back(b);
  }
  dets.boxes = std::move(kept);
}

/// k exemplar rows, cycling when the scene has fewer.
torch::Tensor exemplar_rows(const std::vector<Box>& exemplars, int k) {
  if (exemplars.empty()) throw std::invalid_argument("scene has no exemplars");
  std::vector<Box> rows;
  for (int i = 0; i < k; ++i) rows.push_back(exemplars[static_cast<std::size_t>(i) % exemplars.size()]);
  return boxes_to_tensor(rows);
}

struct CachedOutputs {
  torch::Tensor objectness;  // (H, W) float CPU
  torch::Tensor boxes;       // (H, W, 4)
  std::vector<Box> targets;
};

std::vector<CachedOutputs> dense_outputs(GeCo2& model, const std::vector<SceneAnnotation>& scenes) {
  torch::NoGradGuard guard;
  model->eval();
  std::vector<CachedOutputs> out;
  out.reserve(scenes.size());
  const int s = model->config().input_size;
  for (const auto& scene : scenes) {
    const PreparedInput in = prepare_input(scene, s);
    auto trace = model->forward(in.image.unsqueeze(0), in.exemplars.unsqueeze(0), false);
    out.push_back({trace.outputs.objectness[0].contiguous(), trace.outputs.boxes[0].contiguous(),
                   in.targets});
  }
  return out;
}

DetectionSet extract_cached(const CachedOutputs& c, ImageSize image, double tau, double nms_iou) {
  const ScoreMapView view{static_cast<int>(c.objectness.size(0)), static_cast<int>(c.objectness.size(1)),
                          {c.objectness.data_ptr<float>(), static_cast<std::size_t>(c.objectness.numel())}};
  return extract_detections(view, {c.boxes.data_ptr<float>(), static_cast<std::size_t>(c.boxes.numel())},
                            image, {tau, nms_iou});
}

Calibration calibrate_cached(const std::vector<CachedOutputs>& cached, ImageSize image, double nms_iou) {
  double max_score = 0.0;
  for (const auto& c : cached) max_score = std::max(max_score, c.objectness.max().item<double>());
  std::vector<std::vector<Box>> gts;
  for (const auto& c : cached) gts.push_back(c.targets);

  Calibration cal;
  cal.f1 = -1.0;
  for (int i = 1; i <= 19; ++i) {
    const double tau = 0.05 * i * max_score;
    std::vector<DetectionSet> preds;
    for (const auto& c : cached) preds.push_back(extract_cached(c, image, tau, nms_iou));
    const double f1 = f1_at_threshold(preds, gts, tau, 0.5);
    cal.sweep.emplace_back(tau, f1);
    if (f1 > cal.f1) {
      cal.f1 = f1;
      cal.tau = tau;
    }
  }
  return cal;
}

double count_mae(const std::vector<CachedOutputs>& cached, ImageSize image, double tau, double nms_iou) {
  std::vector<int> gt;
  std::vector<int> pred;
  for (const auto& c : cached) {
    gt.push_back(static_cast<int>(c.targets.size()));
    pred.push_back(static_cast<int>(extract_cached(c, image, tau, nms_iou).count()));
  }
  return mae_rmse(gt, pred).mae;
}

struct TrainBatch {
  torch::Tensor images;
  torch::Tensor exemplars;
  std::vector<TrainingTargets> targets;
  std::vector<double> object_sizes;
};

TrainBatch make_batch(const std::vector<SceneAnnotation>& scenes, std::span<const std::size_t> ids,
                      const RunConfig& config, std::mt19937_64& rng) {
  const int s = config.model.input_size;
  const GridSize grid{s / 2, s / 2};
  std::vector<torch::Tensor> images;
  std::vector<torch::Tensor> exemplars;
  TrainBatch batch;
  for (std::size_t id : ids) {
    const auto& scene = scenes[id];
    const RescaledInput r = rescale_and_pad(scene.image, scene.exemplar_boxes(), s);
    Sample sample{r.image, scale_boxes(scene.target_boxes(), r.scale), r.exemplars};
    if (config.train.scale_augment) sample = scale_augment(sample, s, rng);
    images.push_back(image_to_tensor(sample.image));
    exemplars.push_back(exemplar_rows(sample.exemplars, config.model.exemplars));
    batch.targets.push_back(build_targets(sample.targets, grid, {s, s}, config.model.sigma_scale));
    batch.object_sizes.push_back(average_object_size(sample.targets));
  }
  batch.images = torch::stack(images);
  batch.exemplars = torch::stack(exemplars);
  return batch;
}

void dump_nan_batch(const fs::path& out_dir, int64_t step, const std::vector<std::string>& ids,
                    const LossTerms& main) {
  json dump{{"step", step},
            {"images", ids},
            {"objectness_loss", main.objectness.item<double>()},
            {"box_loss", main.box.item<double>()}};
  write_file_atomic(out_dir / "nan_batch.json", dump.dump(1) + "\n");
}

}  // namespace

std::vector<uint64_t> split_seeds(const DataConfig& data, const std::string& split) {
  const int n = split_size(data, split);
  if (n < 0 || n > kMaxSplitImages) {
    throw std::invalid_argument(split + " split size must lie in 0.." + std::to_string(kMaxSplitImages));
  }
  const uint64_t base = data.seed * kSeedStride + split_offset(split);
  std::vector<uint64_t> seeds(static_cast<std::size_t>(n));
  std::iota(seeds.begin(), seeds.end(), base);
  return seeds;
}

void generate_dataset(const DataConfig& data, const fs::path& out, bool force) {
  validate(data.generator);
  if (fs::exists(out) && !fs::is_empty(out)) {
    if (!force) throw std::runtime_error(out.string() + " already exists (use --force to overwrite)");
    for (const auto& split : kSplits) fs::remove(out / (split + ".json"));
    fs::remove_all(out / "images");
  }
  fs::create_directories(out / "images");
  for (const auto& split : kSplits) {
    std::vector<SceneAnnotation> scenes;
    for (uint64_t seed : split_seeds(data, split)) {
      SceneAnnotation scene = generate_scene(data.generator, seed);
      std::vector<uchar> png;
      if (!cv::imencode(".png", scene.image, png)) throw std::runtime_error("PNG encoding failed");
      write_file_atomic(out / scene.file, std::string(png.begin(), png.end()));
      scenes.push_back(std::move(scene));
    }
    save_annotations(scenes, out / (split + ".json"));
  }
  write_file_atomic(out / "generator.json", to_json(RunConfig{{}, {}, data})["data"].dump(1) + "\n");
}

std::vector<SceneAnnotation> load_split(const fs::path& root, const std::string& split) {
  const fs::path path = root / (split + ".json");
  if (!fs::exists(path)) throw std::runtime_error("split '" + split + "' not found: " + path.string());
  auto scenes = load_annotations(path);
  for (auto& s : scenes) load_image(s, root);
  return scenes;
}

PreparedInput prepare_input(const SceneAnnotation& scene, int input_size) {
  const RescaledInput r = rescale_and_pad(scene.image, scene.exemplar_boxes(), input_size);
  PreparedInput in;
  in.image = image_to_tensor(r.image);
  in.exemplars = boxes_to_tensor(r.exemplars);
  in.targets = scale_boxes(scene.target_boxes(), r.scale);
  in.scale = r.scale;
  return in;
}

Calibration calibrate_threshold(GeCo2& model, const std::vector<SceneAnnotation>& scenes) {
  const int s = model->config().input_size;
  return calibrate_cached(dense_outputs(model, scenes), {s, s}, model->config().nms_iou);
}

TrainSummary train(const RunConfig& config, const fs::path& dataset, const TrainOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  if (config.train.threads > 0) torch::set_num_threads(config.train.threads);
  torch::manual_seed(config.train.seed);

  const auto train_scenes = load_split(dataset, "train");
  const auto val_scenes = load_split(dataset, "val");
  if (train_scenes.empty()) throw std::runtime_error("training split is empty");

  GeCo2 model(config.model);
  torch::optim::AdamW optimizer(model->parameters(),
                                torch::optim::AdamWOptions(config.train.lr).weight_decay(config.train.weight_decay));

  const fs::path& out = options.out_dir;
  fs::create_directories(out);
  const fs::path state_path = out / "train_state.json";
  TrainSummary summary;
  summary.best_checkpoint = out / "best.pt";
  summary.best_val_mae = std::numeric_limits<double>::infinity();
  int64_t step = 0;
  if (options.resume) {
    Checkpoint ck = load_checkpoint(*options.resume);
    if (!(ck.model->config() == config.model)) {
      throw std::runtime_error("resume checkpoint was trained with a different model config");
    }
    torch::NoGradGuard guard;
    auto src = ck.model->named_parameters(true);
    for (auto& p : model->named_parameters(true)) p.value().copy_(*src.find(p.key()));
    load_optimizer_state(*options.resume, optimizer);
    step = ck.step;
    if (fs::exists(state_path)) {
      std::ifstream f(state_path);
      const json st = json::parse(f);
      summary.best_val_mae = st.at("best_val_mae").get<double>();
      summary.tau = st.at("tau").get<double>();
    }
  }

  MetricsCsv csv(out / "metrics.csv", options.resume.has_value());
  const auto batch_size = static_cast<std::size_t>(config.train.batch_size);
  const auto steps_per_epoch = static_cast<int64_t>((train_scenes.size() + batch_size - 1) / batch_size);
  const int start_epoch = static_cast<int>(step / steps_per_epoch);
  const int s = config.model.input_size;
  const LossOptions loss_opts = config.model.loss_options();

  for (int epoch = start_epoch; epoch < config.train.epochs; ++epoch) {
    std::mt19937_64 rng(config.train.seed * 1'000'003ULL + static_cast<uint64_t>(epoch));
    std::vector<std::size_t> order(train_scenes.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    model->train();
    double epoch_loss = 0.0;
    double data_seconds = 0.0;
    for (std::size_t b = 0; b < order.size(); b += batch_size) {
      const std::span<const std::size_t> ids(order.data() + b, std::min(batch_size, order.size() - b));
      const auto data_t0 = std::chrono::steady_clock::now();
      TrainBatch batch = make_batch(train_scenes, ids, config, rng);
      data_seconds += seconds_since(data_t0);

      int gates_open = 0;
      for (double size : batch.object_sizes) gates_open += aux_gate_open(size, config.model.theta_size) ? 1 : 0;
      const bool with_aux = config.model.alpha > 0.0 && gates_open > 0;
      // The box loss only reads positive cells, so the box head runs only there.
      auto trace = model->forward(batch.images, batch.exemplars, with_aux, false);
      std::vector<torch::Tensor> cell_lists;
      for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto& t = batch.targets[i];
        const int64_t hw = t.positive.numel();
        cell_lists.push_back(t.positive.flatten().nonzero().flatten() + static_cast<int64_t>(i) * hw);
      }
      const auto cells = torch::cat(cell_lists);
      const auto boxes = model->decoder->box_head_at(trace.queries, cells);
      const auto aux_boxes = with_aux ? model->aux_decoder->box_head_at(trace.aux_queries, cells) : torch::Tensor();

      std::vector<torch::Tensor> per_image;
      double main_sum = 0.0;
      double aux_sum = 0.0;
      LossTerms first_main;
      for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto idx = static_cast<int64_t>(i);
        const LossTerms main =
            detection_loss(trace.outputs.objectness[idx], boxes[idx], batch.targets[i], loss_opts);
        if (i == 0) first_main = main;
        main_sum += main.total.item<double>();
        torch::Tensor aux = torch::zeros({});
        if (with_aux && aux_gate_open(batch.object_sizes[i], config.model.theta_size)) {
          aux = detection_loss(trace.aux_outputs->objectness[idx], aux_boxes[idx], batch.targets[i], loss_opts)
                    .total;
          aux_sum += aux.item<double>();
        }
        per_image.push_back(total_loss(main.total, aux, batch.object_sizes[i], config.model.alpha,
                                       config.model.theta_size));
      }
      const torch::Tensor loss = torch::stack(per_image).mean();
      const double value = loss.item<double>();
      if (!std::isfinite(value)) {
        std::vector<std::string> names;
        for (std::size_t id : ids) names.push_back(train_scenes[id].id);
        dump_nan_batch(out, step, names, first_main);
        summary.all_finite = false;
        throw std::runtime_error("non-finite loss at step " + std::to_string(step) + " (batch written to " +
                                 (out / "nan_batch.json").string() + ")");
      }
      optimizer.zero_grad();
      loss.backward();
      optimizer.step();

      const double n = static_cast<double>(ids.size());
      csv.write("train", "loss", value, step);
      csv.write("train", "loss_main", main_sum / n, step);
      csv.write("train", "loss_aux", aux_sum / n, step);
      csv.write("train", "gate_rate", gates_open / n, step);
      epoch_loss += value;
      ++step;
    }
    epoch_loss /= static_cast<double>(steps_per_epoch);
    if (epoch == start_epoch) summary.first_epoch_loss = epoch_loss;
    summary.last_epoch_loss = epoch_loss;
    ++summary.epochs_run;

    const auto val_t0 = std::chrono::steady_clock::now();
    const auto cached = dense_outputs(model, val_scenes);
    double val_mae = std::numeric_limits<double>::infinity();
    double tau = summary.tau;
    if (!cached.empty()) {
      const Calibration cal = calibrate_cached(cached, {s, s}, config.model.nms_iou);
      tau = cal.tau;
      val_mae = count_mae(cached, {s, s}, tau, config.model.nms_iou);
      csv.write("val", "f1", cal.f1, step);
    }
    const double val_seconds = seconds_since(val_t0);
    csv.write("train", "epoch_loss", epoch_loss, step);
    csv.write("val", "mae", val_mae, step);
    csv.write("val", "tau", tau, step);
    csv.flush();

    if (val_mae < summary.best_val_mae || !fs::exists(summary.best_checkpoint)) {
      summary.best_val_mae = val_mae;
      summary.tau = tau;
      save_checkpoint(summary.best_checkpoint, model, tau, step);
    }
    save_checkpoint(out / "last.pt", model, tau, step, &optimizer);
    write_file_atomic(state_path,
                      json{{"best_val_mae", summary.best_val_mae}, {"tau", summary.tau}, {"step", step}}.dump() + "\n");
    if (options.verbose) {
      std::ostringstream line;
      line << "epoch " << epoch + 1 << "/" << config.train.epochs << "  loss " << std::setprecision(4)
           << epoch_loss << "  val_mae " << val_mae << "  tau " << tau << "  " << std::setprecision(1)
           << std::fixed << seconds_since(t0) << "s  (data " << data_seconds << "s, val " << val_seconds << "s)";
      std::cout << line.str() << std::endl;
    }
  }
  summary.steps = step;
  summary.seconds = seconds_since(t0);
  return summary;
}

EvalReport evaluate(GeCo2& model, double tau, const std::vector<SceneAnnotation>& scenes,
                    const std::string& split) {
  torch::NoGradGuard guard;
  model->eval();
  const int s = model->config().input_size;
  EvalReport report;
  report.split = split;
  report.tau = tau;
  const int64_t calls_before = model->forward_calls();

  std::vector<int> gt_counts;
  std::vector<int> pred_counts;
  std::vector<int> dense_gt;
  std::vector<int> dense_pred;
  std::vector<DetectionSet> preds;
  std::vector<std::vector<Box>> gts;
  std::vector<double> relative;
  double total_seconds = 0.0;
  for (const auto& scene : scenes) {
    const PreparedInput in = prepare_input(scene, s);
    const auto t0 = std::chrono::steady_clock::now();
    CountResult r = model->count(in.image, in.exemplars, tau, scene.id);
    const double secs = seconds_since(t0);

    ImageResult img;
    img.id = scene.id;
    img.gt_count = scene.target_count();
    img.scale = in.scale;
    img.seconds = secs;
    img.input_shape = {1, in.image.size(0), in.image.size(1), in.image.size(2)};
    img.detections = r.detections;
    to_image_frame(img.detections, in.scale, scene.image.cols, scene.image.rows);
    r.count = static_cast<int>(img.detections.count());
    total_seconds += secs;
    report.max_scale = std::max(report.max_scale, in.scale);

    gt_counts.push_back(img.gt_count);
    pred_counts.push_back(r.count);
    if (img.gt_count > kDenseObjectCount) {
      dense_gt.push_back(img.gt_count);
      dense_pred.push_back(r.count);
    }
    if (img.gt_count > 0) relative.push_back(std::abs(r.count - img.gt_count) / static_cast<double>(img.gt_count));
    preds.push_back(img.detections);
    gts.push_back(scene.target_boxes());
    report.images.push_back(std::move(img));
  }
  report.forward_calls = model->forward_calls() - calls_before;
  if (scenes.empty()) return report;

  const CountErrors err = mae_rmse(gt_counts, pred_counts);
  report.mae = err.mae;
  report.rmse = err.rmse;
  const bool any_gt = std::any_of(gts.begin(), gts.end(), [](const auto& g) { return !g.empty(); });
  if (any_gt) {
    const ApResult ap = average_precision(preds, gts);
    report.ap = ap.ap;
    report.ap50 = ap.ap50;
  }
  report.mean_seconds = total_seconds / static_cast<double>(scenes.size());
  if (!dense_gt.empty()) {
    report.mae_dense = mae_rmse(dense_gt, dense_pred).mae;
    report.dense_images = static_cast<int>(dense_gt.size());
  }
  if (!relative.empty()) {
    std::sort(relative.begin(), relative.end());
    const std::size_t m = relative.size() / 2;
    report.median_relative_error =
        relative.size() % 2 == 1 ? relative[m] : 0.5 * (relative[m - 1] + relative[m]);
  }
  return report;
}

json predictions_json(const DetectionSet& dets) {
  json boxes = json::array();
  for (const Box& b : dets.boxes) boxes.push_back({b.x1, b.y1, b.x2, b.y2, b.score.value_or(0.0)});
  return {{"image_id", dets.image_id}, {"count", dets.count()}, {"boxes", boxes}};
}

json report_json(const EvalReport& r) {
  json j{{"split", r.split},
         {"images", r.images.size()},
         {"tau", r.tau},
         {"mae", r.mae},
         {"rmse", r.rmse},
         {"ap", r.ap},
         {"ap50", r.ap50},
         {"mean_inference_seconds", r.mean_seconds},
         {"median_relative_error", r.median_relative_error},
         {"max_rescale", r.max_scale},
         {"forward_calls", r.forward_calls}};
  if (r.mae_dense) {
    j["mae_over_300"] = *r.mae_dense;
    j["images_over_300"] = r.dense_images;
  }
  return j;
}

void write_eval_outputs(const EvalReport& report, const fs::path& out_dir, int64_t step) {
  fs::create_directories(out_dir);
  {
    MetricsCsv csv(out_dir / "metrics.csv");
    csv.write(report.split, "mae", report.mae, step);
    csv.write(report.split, "rmse", report.rmse, step);
    csv.write(report.split, "ap", report.ap, step);
    csv.write(report.split, "ap50", report.ap50, step);
    csv.write(report.split, "mean_inference_seconds", report.mean_seconds, step);
    if (report.mae_dense) csv.write(report.split, "mae_over_300", *report.mae_dense, step);
  }
  write_file_atomic(out_dir / "report.json", report_json(report).dump(1) + "\n");
  json preds = json::array();
  for (const auto& img : report.images) preds.push_back(predictions_json(img.detections));
  write_file_atomic(out_dir / "predictions.json", preds.dump(1) + "\n");
}

DetectionSet infer_image(GeCo2& model, double tau, const cv::Mat& image,
                         const std::vector<Box>& exemplars, const std::string& image_id) {
  const int s = model->config().input_size;
  const RescaledInput r = rescale_and_pad(image, exemplars, s);
  CountResult result = model->count(image_to_tensor(r.image), boxes_to_tensor(r.exemplars), tau, image_id);
  to_image_frame(result.detections, r.scale, image.cols, image.rows);
  return result.detections;
}

cv::Mat render_overlay(const cv::Mat& image, const std::vector<Box>& exemplars, const DetectionSet& dets) {
  cv::Mat canvas = image.clone();
  auto rect = [](const Box& b) {
    return cv::Rect(cv::Point(static_cast<int>(std::lround(b.x1)), static_cast<int>(std::lround(b.y1))),
                    cv::Point(static_cast<int>(std::lround(b.x2)), static_cast<int>(std::lround(b.y2))));
  };
  for (const Box& b : dets.boxes) cv::rectangle(canvas, rect(b), cv::Scalar(0, 220, 0), 1);
  for (const Box& b : exemplars) cv::rectangle(canvas, rect(b), cv::Scalar(255, 0, 255), 2);
  const std::string label = "N = " + std::to_string(dets.count());
  cv::putText(canvas, label, {5, 18}, cv::FONT_HERSHEY_SIMPLEX, 0.5, cv::Scalar(0, 0, 0), 3);
  cv::putText(canvas, label, {5, 18}, cv::FONT_HERSHEY_SIMPLEX, 0.5, cv::Scalar(255, 255, 255), 1);
  return canvas;
}

void apply_ablation(RunConfig& config, const std::string& name) {
  if (name == "alpha0") {
    config.model.alpha = 0.0;
  } else if (name == "nda1") {
    config.model.deformable_layers = 1;
  } else if (name == "nca2") {
    config.model.cross_attention_layers = 2;
  } else {
    config.model.variant = parse_variant(name);
  }
}

std::vector<AblationRow> run_ablation(const RunConfig& base, const fs::path& dataset,
                                      const std::vector<std::string>& variants,
                                      const std::vector<uint64_t>& seeds, const fs::path& out_dir,
                                      const std::string& split) {
  const auto eval_scenes = load_split(dataset, split);
  std::vector<AblationRow> rows;
  for (const auto& name : variants) {
    for (uint64_t seed : seeds) {
      if (name == "q1_only") {
        // Same network as fp: encoders only at the coarsest level, raw C2/C3.
        auto same = std::find_if(rows.begin(), rows.end(),
                                 [&](const AblationRow& r) { return r.variant == "fp" && r.seed == seed; });
        if (same != rows.end()) {
          AblationRow copy = *same;
          copy.variant = name;
          rows.push_back(copy);
          continue;
        }
      }
      RunConfig config = base;
      apply_ablation(config, name);
      config.train.seed = seed;
      const fs::path run_dir = out_dir / (name + "_seed" + std::to_string(seed));
      TrainOptions opts;
      opts.out_dir = run_dir;
      opts.verbose = false;
      const TrainSummary summary = train(config, dataset, opts);
      Checkpoint ck = load_checkpoint(summary.best_checkpoint);
      const EvalReport report = evaluate(ck.model, ck.tau, eval_scenes, split);
      write_eval_outputs(report, run_dir / "eval", ck.step);
      rows.push_back({name, seed, report.mae, report.rmse, report.ap, report.ap50,
                      report.median_relative_error, report.mae_dense});
      std::ostringstream line;
      line << name << " seed " << seed << ": MAE " << report.mae << " RMSE " << report.rmse << " AP " << report.ap
           << " AP50 " << report.ap50 << " (" << std::fixed << std::setprecision(0) << summary.seconds << "s)";
      std::cout << line.str() << std::endl;
    }
  }
  return rows;
}

void write_ablation_table(const std::vector<AblationRow>& rows, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  std::ostringstream csv;
  csv << "variant,seed,mae,rmse,ap,ap50,median_relative_error\n";
  for (const auto& r : rows) {
    csv << r.variant << ',' << r.seed << ',' << r.mae << ',' << r.rmse << ',' << r.ap << ',' << r.ap50 << ','
        << r.median_relative_error << '\n';
  }
  write_file_atomic(out_dir / "ablation.csv", csv.str());

  std::vector<std::string> order;
  for (const auto& r : rows) {
    if (std::find(order.begin(), order.end(), r.variant) == order.end()) order.push_back(r.variant);
  }
  std::ostringstream md;
  md << "| variant | MAE | RMSE | AP | AP50 |\n|---|---|---|---|---|\n" << std::fixed << std::setprecision(3);
  for (const auto& name : order) {
    double mae = 0, rmse = 0, ap = 0, ap50 = 0;
    int n = 0;
    for (const auto& r : rows) {
      if (r.variant != name) continue;
      mae += r.mae;
      rmse += r.rmse;
      ap += r.ap;
      ap50 += r.ap50;
      ++n;
    }
    md << "| " << name << " | " << mae / n << " | " << rmse / n << " | " << ap / n << " | " << ap50 / n << " |\n";
  }
  write_file_atomic(out_dir / "ablation.md", md.str());
}

}  // namespace geco2
