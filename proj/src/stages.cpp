#include "ganorcon/stages.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>

#include "ganorcon/contrastive.hpp"
#include "ganorcon/crossval.hpp"
#include "ganorcon/distill.hpp"
#include "ganorcon/toy.hpp"

namespace ganorcon::cli {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path default_output_root() {
  if (const char* env = std::getenv("GANORCON_OUT")) return fs::path(env);
  return fs::path("runs");
}

std::vector<std::string> known_stages() {
  return {"pretrain", "train-projector", "infer",      "distill",
          "eval",     "remap",           "robustness", "toy-e2e"};
}

json stage_defaults(const std::string& stage) {
  if (stage == "pretrain") {
    return json{{"method", "moco"},     {"data", ""},
                {"resolution", 512},    {"epochs", -1},
                {"batch", -1},          {"seed", 0},
                {"out", "backbone.ckpt"}, {"backbone", "resnet50"},
                {"queue_capacity", 65536}, {"lr", -1.0},
                {"weight_decay", 1e-4}, {"temperature", 0.2},
                {"momentum_coeff", 0.999}, {"embed_dim", 128},
                {"proj_hidden", -1}};
  }
  if (stage == "train-projector") {
    return json{{"backbone", ""},       {"head", "conv"},
                {"fewshot", ""},        {"classes", -1},
                {"resolution", 512},    {"seed", 0},
                {"out", "segmenter.ckpt"}, {"epochs", -1},
                {"lr", -1.0},           {"weight_decay", 5e-4},
                {"batch", 2},           {"snapshot_every", 0},
                {"conv_width", 1.0},    {"mlp_hidden", json::array({1024, 256})},
                {"stride1", true},      {"augment", true},
                {"schema", ""}};
  }
  if (stage == "infer") {
    return json{{"model", ""}, {"images", ""}, {"out", "masks"}};
  }
  if (stage == "distill") {
    return json{{"teacher", ""}, {"pool", ""},   {"student", "full"},
                {"epochs", 2},   {"lr", 1e-3},   {"batch", 8},
                {"seed", 0},     {"out", "student.ckpt"}, {"track_agreement", false}};
  }
  if (stage == "eval") {
    return json{{"models", json::array()}, {"test", ""},  {"metric", "miou"},
                {"folds", 5},              {"seed", 0},   {"report", "report.json"}};
  }
  if (stage == "remap") {
    return json{{"input", ""}, {"map", ""}, {"out", "remapped"}};
  }
  if (stage == "robustness") {
    return json{{"model", ""},   {"images", ""}, {"shift", "8,0"},
                {"fill", "edge"}, {"report", "robustness.json"}};
  }
  if (stage == "toy-e2e") {
    return json{{"seed", 0},
                {"resolution", 64},
                {"pool", 200},
                {"fewshot", 8},
                {"test", 40},
                {"pretrain_method", "moco"},
                {"pretrain_epochs", 3},
                {"pretrain_batch", 16},
                {"queue_capacity", 256},
                {"embed_dim", 64},
                {"conv_epochs", 48},
                {"conv_width", 0.125},
                {"conv_lr", 2e-3},
                {"mlp_epochs", 40},
                {"mlp_hidden", json::array({256, 64})},
                {"mlp_lr", 1e-3},
                {"snapshot_every", 8},
                {"distill_epochs", 2},
                {"distill_batch", 8}};
  }
  throw Error(ErrorKind::config, "unknown stage: " + stage);
}

json effective_stage_config(const std::string& stage, const json& params) {
  json cfg = stage_defaults(stage);
  std::vector<std::string> unknown;
  for (auto it = params.begin(); it != params.end(); ++it) {
    if (!cfg.contains(it.key())) {
      unknown.push_back(it.key());
    } else {
      cfg[it.key()] = it.value();
    }
  }
  if (!unknown.empty()) {
    std::string msg = "invalid config fields for stage '" + stage + "':";
    for (const auto& k : unknown) msg += " " + k;
    throw Error(ErrorKind::config, msg);
  }
  return cfg;
}

namespace {

fs::path resolve(const fs::path& out_dir, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : out_dir / path;
}

data::LabelSchema resolve_schema(const json& cfg, const fs::path& fewshot_dir) {
  std::string schema_arg = cfg.value("schema", "");
  if (!schema_arg.empty()) {
    if (const data::LabelSchema* builtin = data::find_builtin_schema(schema_arg)) {
      return *builtin;
    }
    return data::load_schema(schema_arg);
  }
  fs::path schema_file = fewshot_dir / "schema.json";
  if (fs::exists(schema_file)) return data::load_schema(schema_file);
  int classes = cfg.value("classes", -1);
  if (classes < 2) {
    throw Error(ErrorKind::config,
                "no schema.json found; pass schema (name or file) or classes");
  }
  data::LabelSchema schema;
  schema.name = "classes" + std::to_string(classes);
  schema.classes.push_back("background");
  for (int i = 1; i < classes; ++i) schema.classes.push_back("class_" + std::to_string(i));
  return schema;
}

projector::HeadKind resolve_head(const std::string& head, int resolution) {
  if (head == "conv") {
    return resolution >= 512 ? projector::HeadKind::conv_a : projector::HeadKind::conv_b;
  }
  return projector::head_kind_from_name(head);
}

const data::LabelRemap* builtin_remap(const std::string& name) {
  if (name == "face19_to_face10") return &data::face19_to_face10();
  if (name == "face10_to_face8") return &data::face10_to_face8();
  if (name == "face34_to_face8") return &data::face34_to_face8();
  return nullptr;
}

void run_pretrain(const json& cfg, const fs::path& out_dir, RunManifest& manifest) {
  contrastive::ContrastiveConfig ccfg;
  ccfg.method = cfg.at("method") == "simsiam" ? "simsiam" : cfg.at("method").get<std::string>();
  ccfg.resolution = cfg.at("resolution");
  ccfg.epochs = cfg.at("epochs");
  ccfg.batch = cfg.at("batch");
  ccfg.lr = cfg.at("lr");
  ccfg.weight_decay = cfg.at("weight_decay");
  ccfg.temperature = cfg.at("temperature");
  ccfg.momentum_coeff = cfg.at("momentum_coeff");
  ccfg.queue_capacity = cfg.at("queue_capacity");
  ccfg.backbone_arch = cfg.at("backbone");
  ccfg.embed_dim = cfg.at("embed_dim");
  ccfg.proj_hidden = cfg.at("proj_hidden");
  ccfg = ccfg.with_defaults();
  ccfg.validate();

  fs::path data_dir(cfg.at("data").get<std::string>());
  manifest.doc()["config"]["epochs"] = ccfg.epochs;
  manifest.doc()["config"]["batch"] = ccfg.batch;
  manifest.doc()["config"]["lr"] = ccfg.lr;
  manifest.add_input(data_dir);

  uint64_t seed = cfg.at("seed").get<uint64_t>();
  contrastive::PretrainReport report;
  Checkpoint ckpt = contrastive::pretrain(data_dir, ccfg, seed, out_dir, &report);
  fs::path out = resolve(out_dir, cfg.at("out"));
  ckpt.save(out);

  manifest.add_artifact(out);
  manifest.add_artifact(out_dir / "pretrain_losses.jsonl");
  manifest.set_metric("steps", report.steps);
  manifest.set_metric("epochs_completed", report.epochs_completed);
  manifest.set_metric("diverged", report.diverged);
  if (!report.losses.empty()) {
    manifest.set_metric("first_loss", report.losses.front());
    manifest.set_metric("final_loss", report.losses.back());
  }
}

void run_train_projector(const json& cfg, const fs::path& out_dir, RunManifest& manifest) {
  fs::path backbone_path(cfg.at("backbone").get<std::string>());
  fs::path fewshot_dir(cfg.at("fewshot").get<std::string>());
  int resolution = cfg.at("resolution");

  data::LabelSchema schema = resolve_schema(cfg, fewshot_dir);
  int classes = cfg.value("classes", -1);
  if (classes > 0 && classes != schema.num_classes()) {
    throw Error(ErrorKind::config, "classes=" + std::to_string(classes) +
                                       " disagrees with schema '" + schema.name + "' (" +
                                       std::to_string(schema.num_classes()) + ")");
  }

  Checkpoint backbone_ckpt = Checkpoint::load(backbone_path);
  data::FewShotDataset dataset = data::load_dataset(fewshot_dir, schema, resolution);

  projector::ProjectorSpec spec;
  spec.head = resolve_head(cfg.at("head"), resolution);
  spec.classes = schema.num_classes();
  spec.conv_width = cfg.at("conv_width");
  spec.mlp_hidden = cfg.at("mlp_hidden").get<std::vector<int>>();
  spec.in_channels = backbone_ckpt.meta().value("sum_tap_channels", 3840);

  projector::ProjectorTrainConfig tcfg;
  tcfg.epochs = cfg.at("epochs");
  tcfg.lr = cfg.at("lr");
  tcfg.weight_decay = cfg.at("weight_decay");
  tcfg.batch = cfg.at("batch");
  tcfg.snapshot_every = cfg.at("snapshot_every");
  tcfg.stride1_backbone = cfg.at("stride1");
  tcfg.augment = cfg.at("augment");
  tcfg = tcfg.with_defaults(spec.head);

  manifest.doc()["config"]["epochs"] = tcfg.epochs;
  manifest.doc()["config"]["lr"] = tcfg.lr;
  manifest.doc()["config"]["head"] = projector::head_kind_name(spec.head);
  manifest.doc()["config"]["classes"] = spec.classes;
  manifest.add_input(backbone_path);
  manifest.add_input(fewshot_dir);

  uint64_t seed = cfg.at("seed").get<uint64_t>();
  projector::TrainProjectorResult result =
      projector::train_projector(dataset, backbone_ckpt, spec, tcfg, seed, out_dir);

  fs::path out = resolve(out_dir, cfg.at("out"));
  result.segmenter.save(out);
  manifest.add_artifact(out);
  for (const auto& snap : result.snapshots) manifest.add_artifact(snap);
  manifest.set_metric("diverged", result.diverged);
  if (!result.epoch_losses.empty()) {
    manifest.set_metric("first_epoch_loss", result.epoch_losses.front());
    manifest.set_metric("final_epoch_loss", result.epoch_losses.back());
  }
  manifest.set_metric("snapshots", result.snapshots.size());
}

void run_infer(const json& cfg, const fs::path& out_dir, RunManifest& manifest) {
  fs::path model_path(cfg.at("model").get<std::string>());
  fs::path images(cfg.at("images").get<std::string>());
  fs::path out = resolve(out_dir, cfg.at("out"));
  fs::create_directories(out);

  projector::Segmenter segmenter = projector::Segmenter::load(model_path);
  manifest.add_input(model_path);
  manifest.add_input(images);

  int count = 0;
  for (const fs::path& file : contrastive::list_image_files(images)) {
    LabelMask mask = segmenter.infer(load_image(file));
    save_mask_png(out / (file.stem().string() + ".png"), mask);
    ++count;
  }
  manifest.add_artifact(out);
  manifest.set_metric("images", count);
}

void run_distill(const json& cfg, const fs::path& out_dir, RunManifest& manifest) {
  fs::path teacher_path(cfg.at("teacher").get<std::string>());
  fs::path pool(cfg.at("pool").get<std::string>());
  projector::Segmenter segmenter = projector::Segmenter::load(teacher_path);
  distill::SegmenterTeacher teacher(segmenter);
  manifest.add_input(teacher_path);
  manifest.add_input(pool);

  fs::path pseudo_dir = out_dir / "pseudo";
  distill::generate_pseudo_labels(teacher, pool, pseudo_dir, segmenter.schema(),
                                  segmenter.resolution());
  manifest.add_artifact(pseudo_dir);

  data::FewShotDataset pseudo =
      data::load_dataset(pseudo_dir, segmenter.schema(), segmenter.resolution());

  distill::StudentSpec spec;
  std::string student = cfg.at("student");
  spec.architecture = student == "full" ? "deeplab-resnet101"
                      : student == "small" ? "small"
                                           : student;
  spec.classes = segmenter.schema().num_classes();
  spec.resolution = segmenter.resolution();

  distill::DistillConfig dcfg;
  dcfg.epochs = cfg.at("epochs");
  dcfg.lr = cfg.at("lr");
  dcfg.batch = cfg.at("batch");
  dcfg.track_agreement = cfg.at("track_agreement");

  uint64_t seed = cfg.at("seed").get<uint64_t>();
  distill::DistillReport report;
  Checkpoint student_ckpt = distill::distill_train(pseudo, spec, dcfg, seed, out_dir, &report);
  fs::path out = resolve(out_dir, cfg.at("out"));
  student_ckpt.save(out);

  manifest.add_artifact(out);
  manifest.set_metric("diverged", report.diverged);
  manifest.set_metric("epoch_losses", report.epoch_losses);
  if (!report.epoch_agreements.empty()) {
    manifest.set_metric("pool_agreements", report.epoch_agreements);
  }
}

void run_eval(const json& cfg, const fs::path& out_dir, RunManifest& manifest) {
  std::vector<std::string> model_paths = cfg.at("models").get<std::vector<std::string>>();
  if (model_paths.empty()) {
    throw Error(ErrorKind::config, "eval requires at least one model");
  }
  std::vector<projector::Segmenter> models;
  models.reserve(model_paths.size());
  for (const auto& p : model_paths) {
    models.push_back(projector::Segmenter::load(p));
    manifest.add_input(fs::path(p));
  }
  const data::LabelSchema& schema = models.front().schema();
  int resolution = models.front().resolution();
  for (const auto& m : models) {
    if (m.schema().name != schema.name || m.resolution() != resolution) {
      throw Error(ErrorKind::config, "eval models must share schema and resolution");
    }
  }

  fs::path test_dir(cfg.at("test").get<std::string>());
  manifest.add_input(test_dir);
  data::FewShotDataset test = data::load_dataset(test_dir, schema, resolution);

  eval::Metric metric = eval::metric_from_name(cfg.at("metric"));
  uint64_t seed = cfg.at("seed").get<uint64_t>();
  int folds = cfg.at("folds");
  eval::FoldPlan plan = eval::cross_validate(models, test, metric, seed, folds);

  // Whole-test-set per-class report for each model, for the record.
  json per_model = json::array();
  for (auto& m : models) {
    eval::ClassCounts agg(schema.num_classes());
    for (const auto& [image, mask] : test.pairs) {
      agg.add(eval::count_pair(m.infer(image), mask, schema.num_classes()));
    }
    per_model.push_back(eval::iou_report_to_json(eval::report_from_counts(agg)));
  }

  json report{{"fold_plan", eval::fold_plan_to_json(plan)},
              {"final_score", plan.final_score},
              {"metric", plan.metric},
              {"models", model_paths},
              {"whole_test_reports", per_model}};
  fs::path report_path = resolve(out_dir, cfg.at("report"));
  {
    std::ofstream out(report_path, std::ios::trunc);
    out << report.dump(2) << "\n";
  }
  manifest.add_artifact(report_path);
  manifest.set_metric("final_score", plan.final_score);
  manifest.set_metric("fold_scores", plan.fold_scores);
  manifest.set_metric("chosen_checkpoints", plan.chosen);
}

void run_remap(const json& cfg, const fs::path& out_dir, RunManifest& manifest) {
  std::string map_arg = cfg.at("map");
  data::LabelRemap remap;
  if (const data::LabelRemap* builtin = builtin_remap(map_arg)) {
    remap = *builtin;
  } else {
    remap = data::load_remap(map_arg);
  }

  fs::path input(cfg.at("input").get<std::string>());
  fs::path out = resolve(out_dir, cfg.at("out"));
  manifest.add_input(input);

  auto remap_file = [&](const fs::path& src, const fs::path& dst) {
    LabelMask mask = load_mask(src);
    mask.schema_id = remap.source;
    save_mask_png(dst, data::remap_labels(mask, remap));
  };

  int count = 0;
  if (fs::is_directory(input)) {
    fs::create_directories(out);
    for (const auto& entry : fs::directory_iterator(input)) {
      if (entry.is_regular_file() && entry.path().extension() == ".png") {
        remap_file(entry.path(), out / entry.path().filename());
        ++count;
      }
    }
  } else {
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    remap_file(input, out);
    count = 1;
  }
  manifest.add_artifact(out);
  manifest.set_metric("masks_remapped", count);
  manifest.set_metric("map", remap.source + "->" + remap.target);
}

void run_robustness(const json& cfg, const fs::path& out_dir, RunManifest& manifest) {
  fs::path model_path(cfg.at("model").get<std::string>());
  fs::path images(cfg.at("images").get<std::string>());
  projector::Segmenter segmenter = projector::Segmenter::load(model_path);
  distill::SegmenterTeacher teacher(segmenter);
  manifest.add_input(model_path);
  manifest.add_input(images);

  std::string shift = cfg.at("shift");
  size_t comma = shift.find(',');
  if (comma == std::string::npos) {
    throw Error(ErrorKind::config, "shift must be DX,DY");
  }
  eval::ShiftProbe probe;
  probe.dx = std::stoi(shift.substr(0, comma));
  probe.dy = std::stoi(shift.substr(comma + 1));
  probe.fill = cfg.at("fill") == "zero" ? BorderFill::zero : BorderFill::edge;

  json per_image = json::array();
  double sum = 0.0;
  int count = 0;
  for (const fs::path& file : contrastive::list_image_files(images)) {
    ImageTensor img = resize_image(load_image(file), segmenter.resolution(),
                                   segmenter.resolution());
    double agreement = eval::shift_equivariance_check(teacher, img, probe);
    per_image.push_back({{"image", file.filename().string()}, {"agreement", agreement}});
    sum += agreement;
    ++count;
  }
  if (count == 0) throw Error(ErrorKind::io, "no images under " + images.string());

  json report{{"shift", {probe.dx, probe.dy}},
              {"fill", cfg.at("fill")},
              {"mean_agreement", sum / count},
              {"per_image", per_image}};
  fs::path report_path = resolve(out_dir, cfg.at("report"));
  {
    std::ofstream out(report_path, std::ios::trunc);
    out << report.dump(2) << "\n";
  }
  manifest.add_artifact(report_path);
  manifest.set_metric("mean_agreement", sum / count);
}

void run_toy_e2e(const json& cfg, const fs::path& out_dir, RunManifest& manifest);

}  // namespace

RunManifest dispatch(const RunConfig& config) {
  json cfg = effective_stage_config(config.stage, config.params);
  fs::path out_dir = config.out_dir.empty() ? default_output_root() / config.stage
                                            : config.out_dir;
  fs::create_directories(out_dir);

  RunManifest manifest(config.stage, cfg);
  StageTimer timer;
  try {
    if (config.stage == "pretrain") {
      run_pretrain(cfg, out_dir, manifest);
    } else if (config.stage == "train-projector") {
      run_train_projector(cfg, out_dir, manifest);
    } else if (config.stage == "infer") {
      run_infer(cfg, out_dir, manifest);
    } else if (config.stage == "distill") {
      run_distill(cfg, out_dir, manifest);
    } else if (config.stage == "eval") {
      run_eval(cfg, out_dir, manifest);
    } else if (config.stage == "remap") {
      run_remap(cfg, out_dir, manifest);
    } else if (config.stage == "robustness") {
      run_robustness(cfg, out_dir, manifest);
    } else if (config.stage == "toy-e2e") {
      run_toy_e2e(cfg, out_dir, manifest);
    } else {
      throw Error(ErrorKind::config, "unknown stage: " + config.stage);
    }
  } catch (const Error& e) {
    manifest.set_timing("total_seconds", timer.seconds());
    manifest.set_failure(e.kind_name(), e.what());
    manifest.save(out_dir / "manifest.json");
    throw;
  } catch (const std::exception& e) {
    manifest.set_timing("total_seconds", timer.seconds());
    manifest.set_failure("internal", e.what());
    manifest.save(out_dir / "manifest.json");
    throw;
  }
  manifest.set_timing("total_seconds", timer.seconds());
  manifest.set_success();
  manifest.save(out_dir / "manifest.json");
  return manifest;
}

namespace {

void run_toy_e2e(const json& cfg, const fs::path& out_dir, RunManifest& manifest) {
  const uint64_t seed = cfg.at("seed").get<uint64_t>();
  const int resolution = cfg.at("resolution");

  toy::ToySpec tspec;
  tspec.resolution = resolution;
  tspec.pool_images = cfg.at("pool");
  tspec.fewshot_pairs = cfg.at("fewshot");
  tspec.test_pairs = cfg.at("test");

  StageTimer total;

  // Synthetic shapes dataset.
  fs::path toyset = out_dir / "toyset";
  toy::generate_toy_dataset(tspec, seed, toyset);
  manifest.add_artifact(toyset);

  // Stage I: short self-supervised pretraining of the desk-scale backbone.
  StageTimer t_pre;
  contrastive::ContrastiveConfig ccfg;
  ccfg.method = cfg.at("pretrain_method");
  ccfg.backbone_arch = "micro";
  ccfg.resolution = resolution;
  ccfg.epochs = cfg.at("pretrain_epochs");
  ccfg.batch = cfg.at("pretrain_batch");
  ccfg.queue_capacity = cfg.at("queue_capacity");
  ccfg.embed_dim = cfg.at("embed_dim");
  ccfg = ccfg.with_defaults();
  fs::path pretrain_dir = out_dir / "pretrain";
  contrastive::PretrainReport pre_report;
  Checkpoint backbone_ckpt =
      contrastive::pretrain(toyset / "pool", ccfg, seed, pretrain_dir, &pre_report);
  fs::path backbone_path = pretrain_dir / "backbone.ckpt";
  backbone_ckpt.save(backbone_path);
  manifest.add_artifact(backbone_path);
  manifest.set_metric("pretrain", json{{"steps", pre_report.steps},
                                       {"final_loss", pre_report.losses.empty()
                                                          ? 0.0
                                                          : pre_report.losses.back()},
                                       {"diverged", pre_report.diverged}});
  manifest.set_timing("pretrain_seconds", t_pre.seconds());

  // Stage II: projector training over frozen hypercolumns, both heads.
  data::FewShotDataset fewshot =
      data::load_dataset(toyset / "fewshot", toy::toy_schema(), resolution);
  data::FewShotDataset test =
      data::load_dataset(toyset / "test", toy::toy_schema(), resolution);

  auto train_head = [&](projector::HeadKind head, const std::string& tag,
                        fs::path& final_path) {
    StageTimer t;
    projector::ProjectorSpec spec;
    spec.head = head;
    spec.classes = toy::ToySpec::kClasses;
    spec.in_channels = backbone_ckpt.meta().value("sum_tap_channels", 240);
    spec.conv_width = cfg.at("conv_width");
    spec.mlp_hidden = cfg.at("mlp_hidden").get<std::vector<int>>();

    projector::ProjectorTrainConfig tcfg;
    tcfg.epochs = head == projector::HeadKind::mlp ? cfg.at("mlp_epochs").get<int>()
                                                   : cfg.at("conv_epochs").get<int>();
    tcfg.lr = head == projector::HeadKind::mlp ? cfg.at("mlp_lr").get<double>()
                                               : cfg.at("conv_lr").get<double>();
    tcfg.snapshot_every = cfg.at("snapshot_every");

    fs::path dir = out_dir / ("projector_" + tag);
    projector::TrainProjectorResult result =
        projector::train_projector(fewshot, backbone_ckpt, spec, tcfg, seed, dir);
    final_path = dir / ("segmenter_" + tag + ".ckpt");
    result.segmenter.save(final_path);
    manifest.add_artifact(final_path);

    // Cross-validate over the epoch snapshots plus the final weights.
    std::vector<projector::Segmenter> ckpts;
    for (const auto& snap : result.snapshots) {
      ckpts.push_back(projector::Segmenter::load(snap));
    }
    ckpts.push_back(projector::Segmenter::from_checkpoint(result.segmenter));
    eval::FoldPlan plan = eval::cross_validate(ckpts, test, eval::Metric::miou, seed);

    manifest.set_metric(tag, json{{"final_epoch_loss", result.epoch_losses.empty()
                                                           ? 0.0
                                                           : result.epoch_losses.back()},
                                  {"crossval_miou", plan.final_score},
                                  {"fold_scores", plan.fold_scores},
                                  {"chosen_checkpoints", plan.chosen},
                                  {"snapshots", result.snapshots.size() + 1},
                                  {"diverged", result.diverged}});
    manifest.set_timing(tag + "_seconds", t.seconds());
    return plan.final_score;
  };

  fs::path conv_path, mlp_path;
  double conv_score = train_head(resolution >= 512 ? projector::HeadKind::conv_a
                                                   : projector::HeadKind::conv_b,
                                 "conv", conv_path);
  double mlp_score = train_head(projector::HeadKind::mlp, "mlp", mlp_path);
  manifest.set_metric("conv_crossval_miou", conv_score);
  manifest.set_metric("mlp_crossval_miou", mlp_score);
  // Soft ordering check, logged not asserted.
  manifest.set_metric("conv_ge_mlp", conv_score >= mlp_score);

  // Stage III: distill the CONV segmenter into the small student.
  StageTimer t_distill;
  projector::Segmenter conv_segmenter = projector::Segmenter::load(conv_path);
  distill::SegmenterTeacher teacher(conv_segmenter);
  fs::path distill_dir = out_dir / "distill";
  distill::generate_pseudo_labels(teacher, toyset / "pool", distill_dir / "pseudo",
                                  toy::toy_schema(), resolution);
  data::FewShotDataset pseudo =
      data::load_dataset(distill_dir / "pseudo", toy::toy_schema(), resolution);

  distill::StudentSpec sspec;
  sspec.architecture = "small";
  sspec.classes = toy::ToySpec::kClasses;
  sspec.resolution = resolution;
  distill::DistillConfig dcfg;
  dcfg.epochs = cfg.at("distill_epochs");
  dcfg.batch = cfg.at("distill_batch");
  dcfg.track_agreement = true;
  distill::DistillReport distill_report;
  Checkpoint student_ckpt =
      distill::distill_train(pseudo, sspec, dcfg, seed, distill_dir, &distill_report);
  fs::path student_path = distill_dir / "student.ckpt";
  student_ckpt.save(student_path);
  manifest.add_artifact(student_path);

  // Held-out student/teacher agreement.
  distill::Student student = distill::Student::from_checkpoint(student_ckpt);
  double agreement = 0.0;
  for (const auto& [image, mask] : test.pairs) {
    LabelMask s = student.infer(image, toy::toy_schema().name);
    LabelMask t = teacher.label(image);
    agreement += distill::pixel_agreement(s, t);
  }
  agreement /= static_cast<double>(test.pairs.size());
  manifest.set_metric("distill", json{{"epoch_losses", distill_report.epoch_losses},
                                      {"pool_agreements", distill_report.epoch_agreements},
                                      {"test_teacher_agreement", agreement},
                                      {"diverged", distill_report.diverged}});
  manifest.set_timing("distill_seconds", t_distill.seconds());

  // Robustness probes: the trained model is reported; the per-pixel dummy
  // teacher must sit at exactly 1.0.
  eval::ShiftProbe probe{resolution / 8, 0, BorderFill::edge};
  double model_agreement =
      eval::shift_equivariance_check(teacher, test.pairs.front().first, probe);
  toy::ColorRuleTeacher dummy;
  double dummy_agreement =
      eval::shift_equivariance_check(dummy, test.pairs.front().first, probe);
  manifest.set_metric("robustness", json{{"shift", {probe.dx, probe.dy}},
                                         {"model_agreement", model_agreement},
                                         {"dummy_agreement", dummy_agreement}});

  manifest.set_timing("toy_total_seconds", total.seconds());
}

}  // namespace

RunManifest toy_e2e(uint64_t seed, const fs::path& out_dir, const json& overrides) {
  RunConfig config;
  config.stage = "toy-e2e";
  config.params = overrides;
  config.params["seed"] = seed;
  config.out_dir = out_dir;
  return dispatch(config);
}

}  // namespace ganorcon::cli
