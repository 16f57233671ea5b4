#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "ganorcon/contrastive.hpp"
#include "ganorcon/stages.hpp"
#include "ganorcon/toy.hpp"

using namespace ganorcon;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  fs::path dir = fs::temp_directory_path() / ("ganorcon_pipe_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("config defaulting is a fixed point") {
  for (const std::string& stage : cli::known_stages()) {
    json defaults = cli::stage_defaults(stage);
    json effective = cli::effective_stage_config(stage, defaults);
    CHECK(effective == defaults);
    // Serialize, re-parse, re-default: still the same object.
    json reparsed = json::parse(effective.dump());
    CHECK(cli::effective_stage_config(stage, reparsed) == effective);
  }
}

TEST_CASE("unknown stages and unknown fields are validation errors") {
  CHECK_THROWS_AS(cli::stage_defaults("frobnicate"), Error);

  cli::RunConfig config;
  config.stage = "not-a-stage";
  config.out_dir = temp_dir("badstage");
  CHECK_THROWS_AS(cli::dispatch(config), Error);

  try {
    cli::effective_stage_config("eval", json{{"modelz", "x"}, {"foldz", 3}});
    FAIL("expected config error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::config);
    std::string msg = e.what();
    CHECK(msg.find("modelz") != std::string::npos);
    CHECK(msg.find("foldz") != std::string::npos);
  }
}

TEST_CASE("failed stages still write a manifest with the failure recorded") {
  fs::path out = temp_dir("fail");
  cli::RunConfig config;
  config.stage = "pretrain";
  config.params = json{{"data", (out / "nonexistent").string()}, {"backbone", "micro"},
                       {"resolution", 32}, {"epochs", 1}};
  config.out_dir = out;
  CHECK_THROWS_AS(cli::dispatch(config), Error);
  cli::RunManifest manifest = cli::RunManifest::load(out / "manifest.json");
  CHECK(manifest.doc().at("status") == "failure");
  CHECK(manifest.doc().at("error").at("kind") == "io");
}

TEST_CASE("eval stage dispatch embeds the fold plan and is rerun-reproducible") {
  // Small real pipeline: tiny pretrain, short projector fit, then eval.
  fs::path root = temp_dir("evalstage");
  toy::ToySpec tspec;
  tspec.resolution = 32;
  tspec.pool_images = 6;
  tspec.fewshot_pairs = 4;
  tspec.test_pairs = 6;
  toy::generate_toy_dataset(tspec, 5, root / "toyset");

  contrastive::ContrastiveConfig ccfg;
  ccfg.method = "moco";
  ccfg.backbone_arch = "micro";
  ccfg.resolution = 32;
  ccfg.epochs = 1;
  ccfg.batch = 4;
  ccfg.queue_capacity = 16;
  ccfg.embed_dim = 16;
  Checkpoint backbone_ckpt = contrastive::pretrain(root / "toyset" / "pool", ccfg, 3);
  backbone_ckpt.save(root / "backbone.ckpt");

  cli::RunConfig train;
  train.stage = "train-projector";
  train.params = json{{"backbone", (root / "backbone.ckpt").string()},
                      {"fewshot", (root / "toyset" / "fewshot").string()},
                      {"head", "mlp"},
                      {"mlp_hidden", json::array({32, 16})},
                      {"resolution", 32},
                      {"epochs", 6},
                      {"seed", 7},
                      {"out", "segmenter.ckpt"}};
  train.out_dir = root / "train";
  cli::RunManifest train_manifest = cli::dispatch(train);
  CHECK(train_manifest.doc().at("status") == "success");
  // Effective config was resolved before execution.
  CHECK(train_manifest.config().at("lr") == doctest::Approx(1e-3));
  CHECK(train_manifest.config().at("head") == "mlp");

  cli::RunConfig eval_cfg;
  eval_cfg.stage = "eval";
  eval_cfg.params = json{
      {"models", json::array({(root / "train" / "segmenter.ckpt").string()})},
      {"test", (root / "toyset" / "test").string()},
      {"metric", "miou"},
      {"seed", 11}};
  eval_cfg.out_dir = root / "eval1";
  cli::RunManifest m1 = cli::dispatch(eval_cfg);
  CHECK(m1.doc().at("status") == "success");
  CHECK(m1.metrics().contains("final_score"));
  CHECK(m1.metrics().at("fold_scores").size() == 5);

  // The report artifact exists and embeds the fold plan.
  json report;
  {
    std::ifstream in(root / "eval1" / "report.json");
    REQUIRE(in.good());
    in >> report;
  }
  CHECK(report.at("fold_plan").at("folds").size() == 5);
  CHECK(report.at("fold_plan").at("convention") == "out_of_fold");
  CHECK(report.at("whole_test_reports").size() == 1);

  // Re-running from the manifest reproduces the metric summaries bit-exactly.
  eval_cfg.params = m1.config();
  eval_cfg.out_dir = root / "eval2";
  cli::RunManifest m2 = cli::dispatch(eval_cfg);
  CHECK(m1.metrics() == m2.metrics());

  // Same config + seed, run again at a third location: identical summaries.
  eval_cfg.out_dir = root / "eval3";
  cli::RunManifest m3 = cli::dispatch(eval_cfg);
  CHECK(m1.metrics() == m3.metrics());
}

TEST_CASE("train-projector stage re-run from its manifest is bit-identical") {
  fs::path root = temp_dir("rerun");
  toy::ToySpec tspec;
  tspec.resolution = 32;
  tspec.pool_images = 4;
  tspec.fewshot_pairs = 3;
  tspec.test_pairs = 5;
  toy::generate_toy_dataset(tspec, 9, root / "toyset");

  backbone::BackboneSpec bspec;
  bspec.architecture = "micro";
  backbone::Backbone bb(bspec, 2);
  bb.to_checkpoint().save(root / "backbone.ckpt");

  cli::RunConfig train;
  train.stage = "train-projector";
  train.params = json{{"backbone", (root / "backbone.ckpt").string()},
                      {"fewshot", (root / "toyset" / "fewshot").string()},
                      {"head", "mlp"},
                      {"mlp_hidden", json::array({16, 8})},
                      {"resolution", 32},
                      {"epochs", 4},
                      {"seed", 21},
                      {"out", "segmenter.ckpt"}};
  train.out_dir = root / "runA";
  cli::RunManifest a = cli::dispatch(train);

  cli::RunManifest loaded = cli::RunManifest::load(root / "runA" / "manifest.json");
  cli::RunConfig again;
  again.stage = loaded.stage();
  again.params = loaded.config();
  again.out_dir = root / "runB";
  cli::RunManifest b = cli::dispatch(again);

  CHECK(a.metrics() == b.metrics());
  // The artifacts themselves are byte-identical.
  CHECK(file_checksum(root / "runA" / "segmenter.ckpt") ==
        file_checksum(root / "runB" / "segmenter.ckpt"));
}

TEST_CASE("remap stage applies builtin merge tables") {
  fs::path root = temp_dir("remapstage");
  LabelMask mask(2, 2, 0, "face19");
  mask.at(0, 0) = 14;  // hat -> background
  mask.at(0, 1) = 17;  // neck -> 8
  mask.at(1, 0) = 4;   // l_eye -> 3
  save_mask_png(root / "in.png", mask);

  cli::RunConfig config;
  config.stage = "remap";
  config.params = json{{"input", (root / "in.png").string()},
                       {"map", "face19_to_face10"},
                       {"out", "out.png"}};
  config.out_dir = root;
  cli::RunManifest manifest = cli::dispatch(config);
  CHECK(manifest.doc().at("status") == "success");

  LabelMask out = load_mask(root / "out.png");
  CHECK(out.at(0, 0) == 0);
  CHECK(out.at(0, 1) == 8);
  CHECK(out.at(1, 0) == 3);
}

TEST_CASE("manifests record inputs, artifacts and are loadable") {
  fs::path root = temp_dir("manifest");
  cli::RunManifest m("demo", json{{"k", 1}});
  std::ofstream(root / "input.bin") << "payload";
  m.add_input(root / "input.bin");
  m.add_artifact(root / "artifact.bin");
  m.set_metric("score", 0.5);
  m.set_timing("total_seconds", 1.25);
  m.set_success();
  m.save(root / "manifest.json");

  cli::RunManifest back = cli::RunManifest::load(root / "manifest.json");
  CHECK(back.stage() == "demo");
  CHECK(back.metrics().at("score") == 0.5);
  CHECK(back.doc().at("inputs").size() == 1);
  // The checksum pins the input contents.
  CHECK(back.doc().at("inputs").begin().value() == file_checksum(root / "input.bin"));
}
