// ganorcon — few-shot part segmentation via contrastive pretraining.
// One subcommand per pipeline stage; every run writes a manifest with the
// effective config, input checksums, artifacts and metric summaries.

#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ganorcon/error.hpp"
#include "ganorcon/stages.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct StageArgs {
  json flags = json::object();
  std::string config_file;
  std::string run_dir;
};

void add_common(CLI::App* sub, StageArgs& args) {
  sub->add_option("--config", args.config_file, "JSON config file (flags override it)");
  sub->add_option("--run-dir", args.run_dir,
                  "run directory for manifest and artifacts (default: $GANORCON_OUT/<stage>)");
}

template <typename T>
void opt(CLI::App* sub, StageArgs& args, const std::string& flag, const std::string& key,
         const std::string& help) {
  sub->add_option_function<T>(
      flag, [&args, key](const T& v) { args.flags[key] = v; }, help);
}

json merged_params(const StageArgs& args) {
  json params = json::object();
  if (!args.config_file.empty()) {
    std::ifstream in(args.config_file);
    if (!in) {
      throw ganorcon::Error(ganorcon::ErrorKind::io,
                            "cannot read config file: " + args.config_file);
    }
    params = json::parse(in, nullptr, false);
    if (params.is_discarded() || !params.is_object()) {
      throw ganorcon::Error(ganorcon::ErrorKind::config,
                            "config file is not a JSON object: " + args.config_file);
    }
  }
  for (auto it = args.flags.begin(); it != args.flags.end(); ++it) {
    params[it.key()] = it.value();
  }
  return params;
}

int run_stage(const std::string& stage, const StageArgs& args) {
  ganorcon::cli::RunConfig config;
  config.stage = stage;
  config.params = merged_params(args);
  if (!args.run_dir.empty()) config.out_dir = args.run_dir;
  ganorcon::cli::RunManifest manifest = ganorcon::cli::dispatch(config);
  json summary{{"stage", stage},
               {"status", manifest.doc().value("status", "")},
               {"metrics", manifest.metrics()}};
  std::cout << summary.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ganorcon: few-shot part segmentation pipeline"};
  app.require_subcommand(1);

  std::map<std::string, StageArgs> stage_args;
  std::vector<std::string> eval_models;
  std::string rerun_manifest, rerun_out;

  {
    auto& a = stage_args["pretrain"];
    CLI::App* sub = app.add_subcommand("pretrain", "self-supervised backbone pretraining");
    add_common(sub, a);
    opt<std::string>(sub, a, "--method", "method", "moco | simsiam");
    opt<std::string>(sub, a, "--data", "data", "directory of unlabeled images");
    opt<int>(sub, a, "--resolution", "resolution", "training resolution (e.g. 256 or 512)");
    opt<int>(sub, a, "--epochs", "epochs", "training epochs");
    opt<int>(sub, a, "--batch", "batch", "batch size");
    opt<uint64_t>(sub, a, "--seed", "seed", "master seed");
    opt<std::string>(sub, a, "--out", "out", "output backbone checkpoint");
    opt<std::string>(sub, a, "--backbone", "backbone", "resnet50 | resnet18 | micro");
    opt<int>(sub, a, "--queue", "queue_capacity", "negative queue capacity");
    opt<double>(sub, a, "--lr", "lr", "initial learning rate");
    opt<double>(sub, a, "--temperature", "temperature", "InfoNCE temperature");
    opt<int>(sub, a, "--embed-dim", "embed_dim", "embedding dimension");
  }
  {
    auto& a = stage_args["train-projector"];
    CLI::App* sub = app.add_subcommand("train-projector", "few-shot projector over hypercolumns");
    add_common(sub, a);
    opt<std::string>(sub, a, "--backbone", "backbone", "backbone checkpoint");
    opt<std::string>(sub, a, "--head", "head", "mlp | conv | conv-a | conv-b");
    opt<std::string>(sub, a, "--fewshot", "fewshot", "few-shot dataset directory");
    opt<int>(sub, a, "--classes", "classes", "number of classes");
    opt<int>(sub, a, "--resolution", "resolution", "training resolution");
    opt<uint64_t>(sub, a, "--seed", "seed", "master seed");
    opt<std::string>(sub, a, "--out", "out", "output segmenter checkpoint");
    opt<int>(sub, a, "--epochs", "epochs", "training epochs");
    opt<double>(sub, a, "--lr", "lr", "initial learning rate");
    opt<int>(sub, a, "--snapshot-every", "snapshot_every", "checkpoint every k epochs");
    opt<std::string>(sub, a, "--schema", "schema", "schema name or JSON file");
    opt<double>(sub, a, "--conv-width", "conv_width", "conv head width multiplier");
  }
  {
    auto& a = stage_args["infer"];
    CLI::App* sub = app.add_subcommand("infer", "run a segmenter over a directory of images");
    add_common(sub, a);
    opt<std::string>(sub, a, "--model", "model", "segmenter checkpoint");
    opt<std::string>(sub, a, "--images", "images", "input image directory");
    opt<std::string>(sub, a, "--out", "out", "output mask directory");
  }
  {
    auto& a = stage_args["distill"];
    CLI::App* sub = app.add_subcommand("distill", "distill a teacher into a student segmenter");
    add_common(sub, a);
    opt<std::string>(sub, a, "--teacher", "teacher", "teacher segmenter checkpoint");
    opt<std::string>(sub, a, "--pool", "pool", "unlabeled image pool");
    opt<std::string>(sub, a, "--student", "student", "full | small");
    opt<int>(sub, a, "--epochs", "epochs", "training epochs");
    opt<double>(sub, a, "--lr", "lr", "initial learning rate");
    opt<int>(sub, a, "--batch", "batch", "batch size");
    opt<uint64_t>(sub, a, "--seed", "seed", "master seed");
    opt<std::string>(sub, a, "--out", "out", "output student checkpoint");
  }
  {
    auto& a = stage_args["eval"];
    CLI::App* sub = app.add_subcommand("eval", "five-fold cross-validated evaluation");
    add_common(sub, a);
    sub->add_option("--model", eval_models, "segmenter checkpoint (repeat for a pool)");
    opt<std::string>(sub, a, "--test", "test", "test dataset directory");
    opt<std::string>(sub, a, "--metric", "metric", "miou | weighted");
    opt<int>(sub, a, "--folds", "folds", "number of folds");
    opt<uint64_t>(sub, a, "--seed", "seed", "fold shuffle seed");
    opt<std::string>(sub, a, "--report", "report", "output report JSON");
  }
  {
    auto& a = stage_args["remap"];
    CLI::App* sub = app.add_subcommand("remap", "apply a label merge table to masks");
    add_common(sub, a);
    opt<std::string>(sub, a, "--input", "input", "mask file or directory");
    opt<std::string>(sub, a, "--map", "map",
                     "remap JSON file or builtin (face19_to_face10, face10_to_face8, "
                     "face34_to_face8)");
    opt<std::string>(sub, a, "--out", "out", "output file or directory");
  }
  {
    auto& a = stage_args["robustness"];
    CLI::App* sub = app.add_subcommand("robustness", "translation equivariance probe");
    add_common(sub, a);
    opt<std::string>(sub, a, "--model", "model", "segmenter checkpoint");
    opt<std::string>(sub, a, "--images", "images", "probe image directory");
    opt<std::string>(sub, a, "--shift", "shift", "DX,DY in pixels");
    opt<std::string>(sub, a, "--fill", "fill", "edge | zero");
    opt<std::string>(sub, a, "--report", "report", "output report JSON");
  }
  {
    auto& a = stage_args["toy-e2e"];
    CLI::App* sub = app.add_subcommand("toy-e2e", "synthetic end-to-end pipeline run");
    add_common(sub, a);
    opt<uint64_t>(sub, a, "--seed", "seed", "master seed");
    opt<int>(sub, a, "--pool", "pool", "unlabeled pool size");
    opt<int>(sub, a, "--fewshot", "fewshot", "few-shot pair count");
    opt<int>(sub, a, "--test", "test", "test pair count");
    opt<int>(sub, a, "--conv-epochs", "conv_epochs", "conv head epochs");
    opt<int>(sub, a, "--mlp-epochs", "mlp_epochs", "mlp head epochs");
  }
  {
    CLI::App* sub = app.add_subcommand("rerun", "re-run a stage from its manifest");
    sub->add_option("--manifest", rerun_manifest, "manifest.json of a previous run")
        ->required();
    sub->add_option("--out", rerun_out, "run directory for the re-run")->required();
  }

  CLI11_PARSE(app, argc, argv);

  try {
    CLI::App* sub = app.get_subcommands().front();
    std::string stage = sub->get_name();
    if (stage == "rerun") {
      ganorcon::cli::RunManifest prev = ganorcon::cli::RunManifest::load(rerun_manifest);
      ganorcon::cli::RunConfig config;
      config.stage = prev.stage();
      config.params = prev.config();
      config.out_dir = rerun_out;
      ganorcon::cli::RunManifest manifest = ganorcon::cli::dispatch(config);
      json summary{{"stage", config.stage},
                   {"status", manifest.doc().value("status", "")},
                   {"metrics", manifest.metrics()}};
      std::cout << summary.dump(2) << "\n";
      return 0;
    }
    StageArgs& args = stage_args[stage];
    if (stage == "eval" && !eval_models.empty()) {
      args.flags["models"] = eval_models;
    }
    return run_stage(stage, args);
  } catch (const ganorcon::Error& e) {
    json err{{"error", {{"kind", e.kind_name()}, {"message", e.what()}}}};
    std::cerr << err.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    json err{{"error", {{"kind", "internal"}, {"message", e.what()}}}};
    std::cerr << err.dump() << "\n";
    return 1;
  }
}
