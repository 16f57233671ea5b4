#include "ganorcon/distill.hpp"

#include <cstdio>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "ganorcon/contrastive.hpp"
#include "ganorcon/optim.hpp"

namespace ganorcon::distill {

namespace fs = std::filesystem;
using nlohmann::json;
using nn::BatchNorm2d;
using nn::Conv2d;
using nn::MaxPool2d;
using nn::Mode;
using nn::ReLU;
using nn::Residual;
using nn::Sequential;

void StudentSpec::validate() const {
  if (architecture != "deeplab-resnet101" && architecture != "deeplab-resnet50" &&
      architecture != "small") {
    throw Error(ErrorKind::config, "unknown student architecture: " + architecture);
  }
  if (classes < 2) throw Error(ErrorKind::config, "student: classes must be >= 2");
  if (resolution < 1) throw Error(ErrorKind::config, "student: resolution must be set");
  int os = architecture == "small" ? 4 : 16;
  if (resolution % os != 0) {
    throw Error(ErrorKind::config, "student resolution must be divisible by " +
                                       std::to_string(os));
  }
}

json student_spec_to_json(const StudentSpec& spec) {
  return json{{"architecture", spec.architecture},
              {"classes", spec.classes},
              {"resolution", spec.resolution}};
}

StudentSpec student_spec_from_json(const json& j) {
  StudentSpec spec;
  spec.architecture = j.value("architecture", spec.architecture);
  spec.classes = j.value("classes", spec.classes);
  spec.resolution = j.value("resolution", spec.resolution);
  spec.validate();
  return spec;
}

namespace {

void add_bottleneck(Sequential& seq, const std::string& name, int in, int mid, int out,
                    int stride, int dilation) {
  auto& block = seq.emplace<Residual>();
  auto& main = block.main();
  main.emplace<Conv2d>(name + ".conv1", in, mid, 1, 1, 0, 1, false);
  main.emplace<BatchNorm2d>(name + ".bn1", mid);
  main.emplace<ReLU>();
  main.emplace<Conv2d>(name + ".conv2", mid, mid, 3, stride, dilation, dilation, false);
  main.emplace<BatchNorm2d>(name + ".bn2", mid);
  main.emplace<ReLU>();
  main.emplace<Conv2d>(name + ".conv3", mid, out, 1, 1, 0, 1, false);
  main.emplace<BatchNorm2d>(name + ".bn3", out);
  if (stride != 1 || in != out) {
    block.mark_projection_skip();
    block.skip().emplace<Conv2d>(name + ".down.conv", in, out, 1, stride, 0, 1, false);
    block.skip().emplace<BatchNorm2d>(name + ".down.bn", out);
  }
}

void add_basic(Sequential& seq, const std::string& name, int in, int out, int stride,
               int dilation) {
  auto& block = seq.emplace<Residual>();
  auto& main = block.main();
  main.emplace<Conv2d>(name + ".conv1", in, out, 3, stride, dilation, dilation, false);
  main.emplace<BatchNorm2d>(name + ".bn1", out);
  main.emplace<ReLU>();
  main.emplace<Conv2d>(name + ".conv2", out, out, 3, 1, dilation, dilation, false);
  main.emplace<BatchNorm2d>(name + ".bn2", out);
  if (stride != 1 || in != out) {
    block.mark_projection_skip();
    block.skip().emplace<Conv2d>(name + ".down.conv", in, out, 1, stride, 0, 1, false);
    block.skip().emplace<BatchNorm2d>(name + ".down.bn", out);
  }
}

void add_cbr(Sequential& seq, const std::string& name, int in, int out, int k, int pad,
             int dilation) {
  seq.emplace<Conv2d>(name + ".conv", in, out, k, 1, pad, dilation, false);
  seq.emplace<BatchNorm2d>(name + ".bn", out);
  seq.emplace<ReLU>();
}

}  // namespace

Student::Student(StudentSpec spec, uint64_t seed) : spec_(std::move(spec)) {
  spec_.validate();
  build(seed);
}

void Student::build(uint64_t seed) {
  if (spec_.architecture == "small") {
    use_skip_ = true;
    stem_.emplace<Conv2d>("stem.conv", 3, 24, 3, 2, 1, 1, false);
    stem_.emplace<BatchNorm2d>("stem.bn", 24);
    stem_.emplace<ReLU>();
    add_basic(trunk_, "block1", 24, 32, 2, 1);
    add_basic(trunk_, "block2", 32, 48, 1, 2);
    add_basic(trunk_, "block3", 48, 64, 1, 4);
    branch_out_ = {32, 32};
    branches_.resize(2);
    add_cbr(branches_[0], "aspp.b0", 64, 32, 1, 0, 1);
    add_cbr(branches_[1], "aspp.b1", 64, 32, 3, 4, 4);
    add_cbr(head1_, "head.fuse", 64, 48, 3, 1, 1);
    head1_out_ = 48;
    add_cbr(head2_, "head.refine", 48 + 24, 32, 3, 1, 1);
    head2_.emplace<Conv2d>("head.cls", 32, spec_.classes, 1, 1, 0, 1, true);
    final_ups_.resize(1);  // OS2 -> full
  } else {
    use_skip_ = false;
    const bool deep = spec_.architecture == "deeplab-resnet101";
    const std::vector<int> blocks = deep ? std::vector<int>{3, 4, 23, 3}
                                         : std::vector<int>{3, 4, 6, 3};
    stem_.emplace<Conv2d>("stem.conv", 3, 64, 7, 2, 3, 1, false);
    stem_.emplace<BatchNorm2d>("stem.bn", 64);
    stem_.emplace<ReLU>();
    stem_.emplace<MaxPool2d>(3, 2, 1);

    struct S { int mid, out, stride, dilation; };
    const std::vector<S> defs = {{64, 256, 1, 1},
                                 {128, 512, 2, 1},
                                 {256, 1024, 2, 1},
                                 {512, 2048, 1, 2}};  // conv5_x dilated: output stride 16
    int in = 64;
    const char* names[] = {"conv2_x", "conv3_x", "conv4_x", "conv5_x"};
    for (size_t s = 0; s < defs.size(); ++s) {
      for (int b = 0; b < blocks[s]; ++b) {
        std::string name = std::string(names[s]) + ".b" + std::to_string(b);
        add_bottleneck(trunk_, name, in, defs[s].mid, defs[s].out,
                       b == 0 ? defs[s].stride : 1, defs[s].dilation);
        in = defs[s].out;
      }
    }

    branch_out_ = {256, 256, 256, 256};
    branches_.resize(4);
    add_cbr(branches_[0], "aspp.b0", 2048, 256, 1, 0, 1);
    add_cbr(branches_[1], "aspp.b1", 2048, 256, 3, 6, 6);
    add_cbr(branches_[2], "aspp.b2", 2048, 256, 3, 12, 12);
    add_cbr(branches_[3], "aspp.b3", 2048, 256, 3, 18, 18);
    add_cbr(head1_, "head.fuse", 1024, 256, 1, 0, 1);
    head1_.emplace<Conv2d>("head.cls", 256, spec_.classes, 1, 1, 0, 1, true);
    head1_out_ = spec_.classes;
    final_ups_.resize(4);  // OS16 -> full
  }

  Rng rng = Rng::derive(seed, 0x57D);
  stem_.init(rng);
  trunk_.init(rng);
  for (auto& b : branches_) b.init(rng);
  head1_.init(rng);
  head2_.init(rng);
}

Tensor Student::forward(const Tensor& batch, Mode mode) {
  Tensor s = stem_.forward(batch, mode);
  if (use_skip_) stem_out_ = s;
  Tensor t = trunk_.forward(s, mode);
  Tensor cat = branches_[0].forward(t, mode);
  for (size_t i = 1; i < branches_.size(); ++i) {
    cat = nn::concat_channels(cat, branches_[i].forward(t, mode));
  }
  Tensor h = head1_.forward(cat, mode);
  if (use_skip_) {
    h = skip_up_.forward(h, mode);
    h = nn::concat_channels(h, stem_out_);
    h = head2_.forward(h, mode);
  }
  for (auto& up : final_ups_) h = up.forward(h, mode);
  return h;
}

Tensor Student::backward(const Tensor& gy) {
  Tensor g = gy;
  for (auto it = final_ups_.rbegin(); it != final_ups_.rend(); ++it) g = it->backward(g);
  Tensor g_stem_extra;
  if (use_skip_) {
    g = head2_.backward(g);
    Tensor g_up, g_skip;
    nn::split_channels(g, head1_out_, g_up, g_skip);
    g_stem_extra = std::move(g_skip);
    g = skip_up_.backward(g_up);
  }
  g = head1_.backward(g);
  Tensor g_trunk;
  int offset = 0;
  for (size_t i = 0; i < branches_.size(); ++i) {
    Tensor g_branch, g_rest;
    if (i + 1 < branches_.size()) {
      nn::split_channels(g, branch_out_[i], g_branch, g_rest);
    } else {
      g_branch = std::move(g);
    }
    Tensor gt = branches_[i].backward(g_branch);
    if (i == 0) {
      g_trunk = std::move(gt);
    } else {
      nn::axpy(g_trunk, 1.f, gt);
    }
    if (i + 1 < branches_.size()) g = std::move(g_rest);
    offset += branch_out_[i];
  }
  Tensor g_stem = trunk_.backward(g_trunk);
  if (use_skip_) nn::axpy(g_stem, 1.f, g_stem_extra);
  return stem_.backward(g_stem);
}

std::vector<nn::Param*> Student::params() {
  std::vector<nn::Param*> out;
  stem_.collect_params(out);
  trunk_.collect_params(out);
  for (auto& b : branches_) b.collect_params(out);
  head1_.collect_params(out);
  head2_.collect_params(out);
  return out;
}

LabelMask Student::infer(const ImageTensor& image, const std::string& schema_id) {
  ImageTensor sized = resize_image(image, spec_.resolution, spec_.resolution);
  Tensor logits = forward(image_to_tensor(sized), Mode::eval);
  projector::ConfidenceMap map;
  map.height = logits.dim(1);
  map.width = logits.dim(2);
  map.classes = logits.dim(3);
  map.values = std::move(logits.data);
  return projector::argmax_mask(map, schema_id);
}

Checkpoint Student::to_checkpoint() const {
  Checkpoint ckpt("student");
  ckpt.meta()["spec"] = student_spec_to_json(spec_);
  auto* self = const_cast<Student*>(this);
  for (nn::Param* p : self->params()) ckpt.add(p->name, p->value);
  return ckpt;
}

Student Student::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind() != "student") {
    throw Error(ErrorKind::checkpoint, "expected student checkpoint, got '" + ckpt.kind() + "'");
  }
  Student st(student_spec_from_json(ckpt.meta().at("spec")), 0);
  std::map<std::string, const Tensor*> provided;
  for (const auto& [name, t] : ckpt.tensors()) provided[name] = &t;
  std::vector<std::string> problems;
  for (nn::Param* p : st.params()) {
    auto it = provided.find(p->name);
    if (it == provided.end() || it->second->shape != p->value.shape) {
      problems.push_back(p->name);
    } else {
      p->value = *it->second;
    }
  }
  if (!problems.empty()) {
    std::string msg = "student checkpoint mismatch:";
    for (const auto& n : problems) msg += " " + n;
    throw Error(ErrorKind::checkpoint, msg);
  }
  return st;
}

// ---------------------------------------------------------------------------

fs::path generate_pseudo_labels(const Teacher& teacher, const fs::path& pool,
                                const fs::path& out_root, const data::LabelSchema& schema,
                                int resolution) {
  std::vector<fs::path> files = contrastive::list_image_files(pool);
  fs::create_directories(out_root / "images");
  fs::create_directories(out_root / "masks");

  int written = 0;
  for (const fs::path& file : files) {
    ImageTensor img;
    try {
      img = load_image(file);
    } catch (const Error& e) {
      std::fprintf(stderr, "[generate_pseudo_labels] skipping unreadable image %s: %s\n",
                   file.string().c_str(), e.what());
      continue;
    }
    ImageTensor sized = resize_image(img, resolution, resolution);
    LabelMask mask = teacher.label(sized);
    std::string stem = file.stem().string();
    save_image_png(out_root / "images" / (stem + ".png"), sized);
    save_mask_png(out_root / "masks" / (stem + ".png"), mask);
    ++written;
  }
  if (written == 0) {
    throw Error(ErrorKind::pairing, "pseudo-labeling produced no pairs from " + pool.string());
  }
  data::save_schema(out_root / "schema.json", schema);
  return out_root;
}

void DistillConfig::validate() const {
  if (epochs < 0) throw Error(ErrorKind::config, "distill: epochs must be >= 0");
  if (batch < 1) throw Error(ErrorKind::config, "distill: batch must be >= 1");
  if (lr <= 0) throw Error(ErrorKind::config, "distill: lr must be > 0");
}

json distill_config_to_json(const DistillConfig& cfg) {
  return json{{"epochs", cfg.epochs},
              {"lr", cfg.lr},
              {"batch", cfg.batch},
              {"weight_decay", cfg.weight_decay},
              {"track_agreement", cfg.track_agreement}};
}

DistillConfig distill_config_from_json(const json& j) {
  DistillConfig cfg;
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.lr = j.value("lr", cfg.lr);
  cfg.batch = j.value("batch", cfg.batch);
  cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
  cfg.track_agreement = j.value("track_agreement", cfg.track_agreement);
  return cfg;
}

double pixel_agreement(const LabelMask& a, const LabelMask& b) {
  if (a.height != b.height || a.width != b.width) {
    throw Error(ErrorKind::metric, "pixel_agreement: shape mismatch");
  }
  int64_t agree = 0;
  for (size_t i = 0; i < a.values.size(); ++i) {
    if (a.values[i] == b.values[i]) ++agree;
  }
  return static_cast<double>(agree) / static_cast<double>(a.pixels());
}

Checkpoint distill_train(const data::FewShotDataset& pseudo, const StudentSpec& spec,
                         const DistillConfig& config, uint64_t seed, const fs::path& out_dir,
                         DistillReport* report) {
  config.validate();
  spec.validate();
  if (pseudo.pairs.empty()) {
    throw Error(ErrorKind::contract, "distill_train: pseudo dataset is empty");
  }
  if (pseudo.schema.num_classes() != spec.classes) {
    throw Error(ErrorKind::config, "distill_train: dataset classes do not match student spec");
  }
  if (pseudo.resolution != spec.resolution) {
    throw Error(ErrorKind::config, "distill_train: dataset resolution does not match student");
  }

  Student student(spec, seed);
  nn::Adam adam(nn::learnable(student.params()), config.lr, 0.9, 0.999, 1e-8,
                config.weight_decay);

  const int n = static_cast<int>(pseudo.pairs.size());
  const int res = spec.resolution;
  const int batch = std::max(1, std::min(config.batch, n));
  Rng order_rng = Rng::derive(seed, 0xD157);

  std::ofstream loss_log;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    loss_log.open(out_dir / "distill_losses.jsonl", std::ios::trunc);
  }

  DistillReport local;
  DistillReport& rep = report != nullptr ? *report : local;
  auto snapshot = [&] {
    Checkpoint ckpt = student.to_checkpoint();
    ckpt.meta()["schema_id"] = pseudo.schema.name;
    return ckpt;
  };
  Checkpoint last_good = snapshot();

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<int> order = order_rng.permutation(n);
    double epoch_loss = 0.0;
    int batches = 0;
    for (int s0 = 0; s0 < n; s0 += batch) {
      int bs = std::min(batch, n - s0);
      Tensor images({bs, res, res, 3});
      std::vector<uint8_t> targets(static_cast<size_t>(bs) * res * res);
      for (int i = 0; i < bs; ++i) {
        const auto& [img, mask] = pseudo.pairs[static_cast<size_t>(order[s0 + i])];
        image_into_batch(img, images, i);
        std::copy(mask.values.begin(), mask.values.end(),
                  targets.begin() + static_cast<int64_t>(i) * res * res);
      }
      adam.zero_grad();
      Tensor logits = student.forward(images, Mode::train);
      Tensor grad;
      double loss = nn::softmax_cross_entropy(logits, targets, &grad);
      if (!std::isfinite(loss)) {
        rep.diverged = true;
        return last_good;
      }
      student.backward(grad);
      adam.step();
      epoch_loss += loss;
      ++batches;
    }
    epoch_loss /= std::max(batches, 1);
    rep.epoch_losses.push_back(epoch_loss);

    double agreement = -1.0;
    if (config.track_agreement) {
      int64_t agree = 0, total = 0;
      for (const auto& [img, mask] : pseudo.pairs) {
        LabelMask pred = student.infer(img, pseudo.schema.name);
        for (size_t i = 0; i < mask.values.size(); ++i) {
          if (pred.values[i] == mask.values[i]) ++agree;
        }
        total += mask.pixels();
      }
      agreement = static_cast<double>(agree) / static_cast<double>(total);
      rep.epoch_agreements.push_back(agreement);
    }
    if (loss_log.is_open()) {
      json line{{"epoch", epoch}, {"loss", epoch_loss}};
      if (agreement >= 0) line["pool_agreement"] = agreement;
      loss_log << line.dump() << "\n";
    }
    last_good = snapshot();
  }
  return snapshot();
}

LabelMask student_infer(const ImageTensor& image, const Checkpoint& student_ckpt) {
  Student student = Student::from_checkpoint(student_ckpt);
  std::string schema = student_ckpt.meta().value("schema_id", "");
  return student.infer(image, schema);
}

}  // namespace ganorcon::distill
