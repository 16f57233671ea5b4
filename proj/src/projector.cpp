#include "ganorcon/projector.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "ganorcon/augment.hpp"
#include "ganorcon/optim.hpp"

namespace ganorcon::projector {

namespace fs = std::filesystem;
using nlohmann::json;

const char* head_kind_name(HeadKind kind) {
  switch (kind) {
    case HeadKind::mlp: return "mlp";
    case HeadKind::conv_a: return "conv-a";
    case HeadKind::conv_b: return "conv-b";
  }
  return "?";
}

HeadKind head_kind_from_name(const std::string& name) {
  if (name == "mlp") return HeadKind::mlp;
  if (name == "conv-a" || name == "conv_a" || name == "conva") return HeadKind::conv_a;
  if (name == "conv-b" || name == "conv_b" || name == "convb") return HeadKind::conv_b;
  throw Error(ErrorKind::config, "unknown projector head: " + name);
}

void ProjectorSpec::validate() const {
  if (in_channels < 1) throw Error(ErrorKind::config, "projector: in_channels must be >= 1");
  if (classes < 2) throw Error(ErrorKind::config, "projector: classes must be >= 2");
  if (head == HeadKind::mlp) {
    if (mlp_hidden.empty()) throw Error(ErrorKind::config, "projector: mlp_hidden is empty");
    for (int h : mlp_hidden) {
      if (h < 1) throw Error(ErrorKind::config, "projector: mlp hidden dims must be >= 1");
    }
  } else if (conv_width <= 0.0) {
    throw Error(ErrorKind::config, "projector: conv_width must be > 0");
  }
}

int ProjectorSpec::pool_levels() const {
  switch (head) {
    case HeadKind::conv_a: return 5;
    case HeadKind::conv_b: return 4;
    default: return 0;
  }
}

json projector_spec_to_json(const ProjectorSpec& spec) {
  return json{{"head", head_kind_name(spec.head)},
              {"in_channels", spec.in_channels},
              {"classes", spec.classes},
              {"mlp_hidden", spec.mlp_hidden},
              {"conv_width", spec.conv_width}};
}

ProjectorSpec projector_spec_from_json(const json& j) {
  ProjectorSpec spec;
  spec.head = head_kind_from_name(j.value("head", "mlp"));
  spec.in_channels = j.value("in_channels", spec.in_channels);
  spec.classes = j.value("classes", spec.classes);
  spec.mlp_hidden = j.value("mlp_hidden", spec.mlp_hidden);
  spec.conv_width = j.value("conv_width", spec.conv_width);
  spec.validate();
  return spec;
}

// ---------------------------------------------------------------------------
// MLP head: per-pixel fully connected stack.

template <typename T>
class MlpHeadT : public HeadT<T> {
 public:
  MlpHeadT(const ProjectorSpec& spec, uint64_t seed) : spec_(spec) {
    std::vector<int> dims;
    dims.push_back(spec.in_channels);
    for (int h : spec.mlp_hidden) dims.push_back(h);
    dims.push_back(spec.classes);
    Rng rng = Rng::derive(seed, 0x333);
    for (size_t i = 0; i + 1 < dims.size(); ++i) {
      fcs_.emplace_back("mlp.fc" + std::to_string(i + 1), dims[i], dims[i + 1]);
      fcs_.back().init(rng);
    }
    relus_.resize(fcs_.size() - 1);
  }

  TensorT<T> forward(const TensorT<T>& stack, nn::Mode mode) override {
    shape_ = stack.shape;
    TensorT<T> rows;
    rows.shape = {static_cast<int>(stack.numel() / stack.dim(3)), stack.dim(3)};
    rows.data = stack.data;
    for (size_t i = 0; i < fcs_.size(); ++i) {
      rows = fcs_[i].forward(rows, mode);
      if (i + 1 < fcs_.size()) rows = relus_[i].forward(rows, mode);
    }
    TensorT<T> out;
    out.shape = {shape_[0], shape_[1], shape_[2], spec_.classes};
    out.data = std::move(rows.data);
    return out;
  }

  TensorT<T> backward(const TensorT<T>& gy) override {
    TensorT<T> rows;
    rows.shape = {static_cast<int>(gy.numel() / gy.dim(3)), gy.dim(3)};
    rows.data = gy.data;
    for (size_t i = fcs_.size(); i-- > 0;) {
      if (i + 1 < fcs_.size()) rows = relus_[i].backward(rows);
      rows = fcs_[i].backward(rows);
    }
    TensorT<T> out;
    out.shape = shape_;
    out.data = std::move(rows.data);
    return out;
  }

  void collect_params(std::vector<nn::ParamT<T>*>& out) override {
    for (auto& fc : fcs_) fc.collect_params(out);
  }

  std::vector<TraceRow> shape_trace(int h, int w) const override {
    std::vector<TraceRow> rows;
    int c = spec_.in_channels;
    for (size_t i = 0; i < fcs_.size(); ++i) {
      rows.push_back({"FC" + std::to_string(i + 1), h, w, c, "Linear"});
      c = fcs_[i].out_dim();
    }
    rows.push_back({"", h, w, spec_.classes, "-"});
    return rows;
  }

 private:
  ProjectorSpec spec_;
  std::vector<nn::LinearT<T>> fcs_;
  std::vector<nn::ReLUT<T>> relus_;
  std::vector<int> shape_;
};

// ---------------------------------------------------------------------------
// CONV heads: encoder-decoder with skip concatenations.
//
// Interior widths follow the reference layer tables at conv_width == 1:
//   conv-a encoder 1024/256/256/256/512/512, decoder 256/256/128/256/256
//   conv-b encoder 1024/256/256/256/512,     decoder 256/128/256/256
// Each conv's output width is read off the next row's input; Conv6 of conv-a
// keeps 512 channels (the Up1 row repeats its input width).

template <typename T>
class ConvHeadT : public HeadT<T> {
 public:
  ConvHeadT(const ProjectorSpec& spec, uint64_t seed) : spec_(spec) {
    if (spec.head == HeadKind::conv_a) {
      enc_out_ = {1024, 256, 256, 256, 512, 512};
      dec_out_ = {256, 256, 128, 256, 256};
    } else {
      enc_out_ = {1024, 256, 256, 256, 512};
      dec_out_ = {256, 128, 256, 256};
    }
    for (auto& c : enc_out_) c = scaled(c);
    for (auto& c : dec_out_) c = scaled(c);

    const int n = static_cast<int>(enc_out_.size());
    int in = spec.in_channels;
    for (int k = 0; k < n; ++k) {
      enc_convs_.push_back(make_cbr("conv" + std::to_string(k + 1), in, enc_out_[k]));
      in = enc_out_[static_cast<size_t>(k)];
      if (k + 1 < n) pools_.emplace_back(2, 2, 0);
    }
    for (int j = 0; j + 1 < n; ++j) {
      ups_.emplace_back();
      int c_up = j == 0 ? enc_out_.back() : dec_out_[static_cast<size_t>(j - 1)];
      int c_skip = enc_out_[static_cast<size_t>(n - 2 - j)];
      dec_convs_.push_back(make_cbr("conv" + std::to_string(n + 1 + j), c_up + c_skip,
                                    dec_out_[static_cast<size_t>(j)]));
    }
    fc_ = std::make_unique<nn::Conv2dT<T>>("fc", dec_out_.back(), spec.classes, 1, 1, 0, 1, true);

    Rng rng = Rng::derive(seed, 0xC04);
    for (auto& c : enc_convs_) c.init(rng);
    for (auto& c : dec_convs_) c.init(rng);
    fc_->init(rng);
  }

  TensorT<T> forward(const TensorT<T>& stack, nn::Mode mode) override {
    const int levels = static_cast<int>(pools_.size());
    const int div = 1 << levels;
    if (stack.dim(1) % div != 0 || stack.dim(2) % div != 0) {
      throw Error(ErrorKind::shape,
                  "conv head requires spatial size divisible by " + std::to_string(div) +
                      ", got " + shape_str(stack.shape));
    }
    const int n = static_cast<int>(enc_convs_.size());
    enc_saved_.assign(static_cast<size_t>(n - 1), {});
    TensorT<T> cur = stack;
    for (int k = 0; k < n; ++k) {
      cur = enc_convs_[static_cast<size_t>(k)].forward(cur, mode);
      if (k + 1 < n) {
        enc_saved_[static_cast<size_t>(k)] = cur;
        cur = pools_[static_cast<size_t>(k)].forward(cur, mode);
      }
    }
    for (int j = 0; j + 1 < n; ++j) {
      cur = ups_[static_cast<size_t>(j)].forward(cur, mode);
      cur = nn::concat_channels(cur, enc_saved_[static_cast<size_t>(n - 2 - j)]);
      cur = dec_convs_[static_cast<size_t>(j)].forward(cur, mode);
    }
    return fc_->forward(cur, mode);
  }

  TensorT<T> backward(const TensorT<T>& gy) override {
    const int n = static_cast<int>(enc_convs_.size());
    TensorT<T> g = fc_->backward(gy);
    std::vector<TensorT<T>> gskip(static_cast<size_t>(n - 1));
    for (int j = n - 2; j >= 0; --j) {
      g = dec_convs_[static_cast<size_t>(j)].backward(g);
      int c_up = j == 0 ? enc_out_.back() : dec_out_[static_cast<size_t>(j - 1)];
      TensorT<T> g_up, g_skip;
      nn::split_channels(g, c_up, g_up, g_skip);
      gskip[static_cast<size_t>(n - 2 - j)] = std::move(g_skip);
      g = ups_[static_cast<size_t>(j)].backward(g_up);
    }
    g = enc_convs_[static_cast<size_t>(n - 1)].backward(g);
    for (int k = n - 2; k >= 0; --k) {
      g = pools_[static_cast<size_t>(k)].backward(g);
      nn::axpy(g, T(1), gskip[static_cast<size_t>(k)]);
      g = enc_convs_[static_cast<size_t>(k)].backward(g);
    }
    return g;
  }

  void collect_params(std::vector<nn::ParamT<T>*>& out) override {
    for (auto& c : enc_convs_) c.collect_params(out);
    for (auto& c : dec_convs_) c.collect_params(out);
    fc_->collect_params(out);
  }

  std::vector<TraceRow> shape_trace(int h, int w) const override {
    std::vector<TraceRow> rows;
    const int n = static_cast<int>(enc_convs_.size());
    int ch = h, cw = w, c = spec_.in_channels;
    for (int k = 0; k < n; ++k) {
      rows.push_back({"Conv" + std::to_string(k + 1), ch, cw, c, "ConvBNReLU"});
      c = enc_out_[static_cast<size_t>(k)];
      if (k + 1 < n) {
        rows.push_back({"MP" + std::to_string(k + 1), ch, cw, c, "MaxPool"});
        ch /= 2;
        cw /= 2;
      }
    }
    for (int j = 0; j + 1 < n; ++j) {
      rows.push_back({"Up" + std::to_string(j + 1), ch, cw, c,
                      "Upsample+Concat(Conv" + std::to_string(n - 1 - j) + ")"});
      ch *= 2;
      cw *= 2;
      c = c + enc_out_[static_cast<size_t>(n - 2 - j)];
      rows.push_back({"Conv" + std::to_string(n + 1 + j), ch, cw, c, "ConvBNReLU"});
      c = dec_out_[static_cast<size_t>(j)];
    }
    rows.push_back({"FC", ch, cw, c, "Linear"});
    rows.push_back({"", ch, cw, spec_.classes, "-"});
    return rows;
  }

 private:
  int scaled(int c) const {
    return std::max(8, static_cast<int>(std::lround(c * spec_.conv_width)));
  }

  nn::SequentialT<T> make_cbr(const std::string& name, int in, int out) {
    nn::SequentialT<T> seq;
    seq.template emplace<nn::Conv2dT<T>>(name + ".conv", in, out, 3, 1, 1, 1, false);
    seq.template emplace<nn::BatchNorm2dT<T>>(name + ".bn", out);
    seq.template emplace<nn::ReLUT<T>>();
    return seq;
  }

  ProjectorSpec spec_;
  std::vector<int> enc_out_, dec_out_;
  std::vector<nn::SequentialT<T>> enc_convs_;
  std::vector<nn::MaxPool2dT<T>> pools_;
  std::vector<nn::UpsampleBilinear2xT<T>> ups_;
  std::vector<nn::SequentialT<T>> dec_convs_;
  std::unique_ptr<nn::Conv2dT<T>> fc_;
  std::vector<TensorT<T>> enc_saved_;
};

template <typename T>
std::unique_ptr<HeadT<T>> build_head(const ProjectorSpec& spec, uint64_t seed) {
  spec.validate();
  if (spec.head == HeadKind::mlp) return std::make_unique<MlpHeadT<T>>(spec, seed);
  return std::make_unique<ConvHeadT<T>>(spec, seed);
}

template std::unique_ptr<HeadT<float>> build_head<float>(const ProjectorSpec&, uint64_t);
template std::unique_ptr<HeadT<double>> build_head<double>(const ProjectorSpec&, uint64_t);

// ---------------------------------------------------------------------------
// Projector

Projector::Projector(ProjectorSpec spec, uint64_t seed) : spec_(std::move(spec)) {
  head_ = build_head<float>(spec_, seed);
}

std::vector<nn::Param*> Projector::params() {
  std::vector<nn::Param*> out;
  head_->collect_params(out);
  return out;
}

int64_t Projector::parameter_count() {
  int64_t n = 0;
  for (nn::Param* p : params()) n += p->value.numel();
  return n;
}

Checkpoint Projector::to_checkpoint() const {
  Checkpoint ckpt("projector");
  ckpt.meta()["spec"] = projector_spec_to_json(spec_);
  auto* self = const_cast<Projector*>(this);
  for (nn::Param* p : self->params()) ckpt.add(p->name, p->value);
  return ckpt;
}

Projector Projector::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind() != "projector") {
    throw Error(ErrorKind::checkpoint, "expected projector checkpoint, got '" + ckpt.kind() + "'");
  }
  Projector proj(projector_spec_from_json(ckpt.meta().at("spec")), 0);
  proj.load_weights(ckpt);
  return proj;
}

void Projector::load_weights(const Checkpoint& ckpt) {
  std::map<std::string, const Tensor*> provided;
  for (const auto& [name, t] : ckpt.tensors()) provided[name] = &t;
  std::vector<std::string> problems;
  for (nn::Param* p : params()) {
    auto it = provided.find(p->name);
    if (it == provided.end()) {
      problems.push_back("missing " + p->name);
    } else if (it->second->shape != p->value.shape) {
      problems.push_back("shape mismatch " + p->name);
    } else {
      p->value = *it->second;
    }
  }
  if (!problems.empty()) {
    std::string msg = "projector checkpoint mismatch:";
    for (const auto& s : problems) msg += " " + s + ";";
    throw Error(ErrorKind::checkpoint, msg);
  }
}

// ---------------------------------------------------------------------------
// Confidence maps and the segmenter bundle

LabelMask argmax_mask(const ConfidenceMap& map, const std::string& schema_id) {
  LabelMask mask(map.height, map.width, 0, schema_id);
  for (int y = 0; y < map.height; ++y) {
    for (int x = 0; x < map.width; ++x) {
      const float* row = map.values.data() +
                         (static_cast<size_t>(y) * map.width + x) * map.classes;
      int best = 0;
      for (int c = 1; c < map.classes; ++c) {
        if (row[c] > row[best]) best = c;  // ties keep the lowest index
      }
      mask.at(y, x) = static_cast<uint8_t>(best);
    }
  }
  return mask;
}

ConfidenceMap project(const backbone::HypercolumnStack& stack, Projector& projector) {
  if (stack.channels != projector.spec().in_channels) {
    throw Error(ErrorKind::shape,
                "project: stack has " + std::to_string(stack.channels) +
                    " channels, projector expects " +
                    std::to_string(projector.spec().in_channels));
  }
  Tensor batch({1, stack.height, stack.width, stack.channels});
  backbone::stack_into_batch(stack, batch, 0);
  Tensor logits = projector.forward(batch, nn::Mode::eval);
  ConfidenceMap map;
  map.height = stack.height;
  map.width = stack.width;
  map.classes = projector.spec().classes;
  map.values = std::move(logits.data);
  return map;
}

Segmenter::Segmenter(backbone::Backbone bb, Projector proj, data::LabelSchema schema,
                     int resolution)
    : bb_(std::move(bb)), proj_(std::move(proj)), schema_(std::move(schema)),
      resolution_(resolution) {}

Checkpoint Segmenter::combine(const Checkpoint& backbone_ckpt, const Projector& projector,
                              const data::LabelSchema& schema, int resolution,
                              backbone::StrideMode stride_mode) {
  Checkpoint out("segmenter");
  out.meta()["backbone"] = backbone_ckpt.meta();
  out.meta()["backbone"]["kind"] = backbone_ckpt.kind();
  out.meta()["projector"] = projector_spec_to_json(projector.spec());
  out.meta()["schema"] = data::schema_to_json(schema);
  out.meta()["resolution"] = resolution;
  out.meta()["stride_mode"] = backbone::stride_mode_name(stride_mode);
  for (const auto& [name, t] : backbone_ckpt.tensors()) out.add("backbone/" + name, t);
  Checkpoint proj_ckpt = projector.to_checkpoint();
  for (const auto& [name, t] : proj_ckpt.tensors()) out.add("projector/" + name, t);
  return out;
}

Segmenter Segmenter::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind() != "segmenter") {
    throw Error(ErrorKind::checkpoint, "expected segmenter checkpoint, got '" + ckpt.kind() + "'");
  }
  Checkpoint bb_ckpt("backbone");
  bb_ckpt.meta() = ckpt.meta().at("backbone");
  Checkpoint proj_ckpt("projector");
  proj_ckpt.meta()["spec"] = ckpt.meta().at("projector");
  for (const auto& [name, t] : ckpt.tensors()) {
    if (name.rfind("backbone/", 0) == 0) {
      bb_ckpt.add(name.substr(9), t);
    } else if (name.rfind("projector/", 0) == 0) {
      proj_ckpt.add(name.substr(10), t);
    }
  }
  backbone::StrideMode mode =
      backbone::stride_mode_from_name(ckpt.meta().value("stride_mode", "stride1-first-conv"));
  backbone::Backbone bb = backbone::Backbone::from_checkpoint(bb_ckpt, mode);
  Projector proj = Projector::from_checkpoint(proj_ckpt);
  data::LabelSchema schema = data::schema_from_json(ckpt.meta().at("schema"));
  return Segmenter(std::move(bb), std::move(proj), std::move(schema),
                   ckpt.meta().value("resolution", 0));
}

Segmenter Segmenter::load(const fs::path& path) {
  return from_checkpoint(Checkpoint::load(path));
}

ConfidenceMap Segmenter::confidences(const ImageTensor& image) {
  ImageTensor sized = resize_image(image, resolution_, resolution_);
  backbone::StageFeatures stages = bb_.forward_stages(sized);
  backbone::HypercolumnStack stack = backbone::extract_hypercolumns(stages, resolution_);
  return project(stack, proj_);
}

LabelMask Segmenter::infer(const ImageTensor& image) {
  return argmax_mask(confidences(image), schema_.name);
}

LabelMask infer_mask(const ImageTensor& image, Segmenter& segmenter) {
  return segmenter.infer(image);
}

// ---------------------------------------------------------------------------
// Training

ProjectorTrainConfig ProjectorTrainConfig::with_defaults(HeadKind head) const {
  ProjectorTrainConfig c = *this;
  if (c.epochs < 0) c.epochs = head == HeadKind::mlp ? 800 : 200;
  if (c.lr < 0) c.lr = head == HeadKind::mlp ? 1e-3 : 5e-4;
  return c;
}

json projector_train_config_to_json(const ProjectorTrainConfig& cfg) {
  return json{{"epochs", cfg.epochs},
              {"lr", cfg.lr},
              {"weight_decay", cfg.weight_decay},
              {"batch", cfg.batch},
              {"stride1_backbone", cfg.stride1_backbone},
              {"cosine", cfg.cosine},
              {"augment", cfg.augment},
              {"snapshot_every", cfg.snapshot_every}};
}

ProjectorTrainConfig projector_train_config_from_json(const json& j) {
  ProjectorTrainConfig cfg;
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.lr = j.value("lr", cfg.lr);
  cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
  cfg.batch = j.value("batch", cfg.batch);
  cfg.stride1_backbone = j.value("stride1_backbone", cfg.stride1_backbone);
  cfg.cosine = j.value("cosine", cfg.cosine);
  cfg.augment = j.value("augment", cfg.augment);
  cfg.snapshot_every = j.value("snapshot_every", cfg.snapshot_every);
  return cfg;
}

TrainProjectorResult train_projector(const data::FewShotDataset& data,
                                     const Checkpoint& backbone_ckpt, const ProjectorSpec& spec,
                                     const ProjectorTrainConfig& config, uint64_t seed,
                                     const fs::path& out_dir) {
  spec.validate();
  if (data.pairs.empty()) {
    throw Error(ErrorKind::contract, "train_projector: dataset is empty");
  }
  if (data.schema.num_classes() != spec.classes) {
    throw Error(ErrorKind::config,
                "train_projector: dataset has " + std::to_string(data.schema.num_classes()) +
                    " classes but the projector spec expects " + std::to_string(spec.classes));
  }
  ProjectorTrainConfig cfg = config.with_defaults(spec.head);

  backbone::StrideMode mode = cfg.stride1_backbone ? backbone::StrideMode::stride1_first_conv
                                                   : backbone::StrideMode::standard;
  backbone::Backbone bb = backbone::Backbone::from_checkpoint(backbone_ckpt, mode);
  if (bb.sum_tap_channels() != spec.in_channels) {
    throw Error(ErrorKind::config,
                "train_projector: backbone taps provide " +
                    std::to_string(bb.sum_tap_channels()) + " channels, spec expects " +
                    std::to_string(spec.in_channels));
  }

  Projector proj(spec, seed);
  nn::Adam adam(nn::learnable(proj.params()), cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay);

  const int n = static_cast<int>(data.pairs.size());
  const int res = data.resolution;
  const int batch = std::max(1, std::min(cfg.batch, n));
  const int steps_per_epoch = (n + batch - 1) / batch;
  const int64_t total_steps = static_cast<int64_t>(steps_per_epoch) * std::max(cfg.epochs, 1);

  data::AugmentationPolicy policy = data::AugmentationPolicy::fewshot_default(seed);
  Rng order_rng = Rng::derive(seed, 0x98D);

  std::ofstream loss_log;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    loss_log.open(out_dir / "projector_losses.jsonl", std::ios::trunc);
  }

  TrainProjectorResult result;
  Checkpoint last_good =
      Segmenter::combine(backbone_ckpt, proj, data.schema, res, mode);

  int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order = order_rng.permutation(n);
    double epoch_loss = 0.0;
    int epoch_batches = 0;
    for (int s0 = 0; s0 < n; s0 += batch) {
      int bs = std::min(batch, n - s0);
      Tensor stacks({bs, res, res, spec.in_channels});
      std::vector<uint8_t> targets(static_cast<size_t>(bs) * res * res);
      for (int i = 0; i < bs; ++i) {
        int idx = order[static_cast<size_t>(s0 + i)];
        const auto& [image, mask] = data.pairs[static_cast<size_t>(idx)];
        ImageTensor aug_img = image;
        LabelMask aug_mask = mask;
        if (cfg.augment) {
          Rng aug = Rng::derive(seed, 0xA9A,
                                static_cast<uint64_t>(epoch) * static_cast<uint64_t>(n) +
                                    static_cast<uint64_t>(idx));
          auto [ai, am] = data::augment_pair(image, mask, policy, aug);
          aug_img = std::move(ai);
          aug_mask = std::move(*am);
        }
        backbone::StageFeatures stages = bb.forward_stages(aug_img);
        backbone::HypercolumnStack stack = backbone::extract_hypercolumns(stages, res);
        backbone::stack_into_batch(stack, stacks, i);
        std::copy(aug_mask.values.begin(), aug_mask.values.end(),
                  targets.begin() + static_cast<int64_t>(i) * res * res);
      }

      double lr = cfg.cosine ? nn::cosine_lr(cfg.lr, step, total_steps) : cfg.lr;
      adam.set_lr(lr);
      adam.zero_grad();
      Tensor logits = proj.forward(stacks, nn::Mode::train);
      Tensor grad;
      double loss = nn::softmax_cross_entropy(logits, targets, &grad);
      if (!std::isfinite(loss)) {
        result.diverged = true;
        result.segmenter = std::move(last_good);
        return result;
      }
      proj.backward(grad);
      adam.step();
      epoch_loss += loss;
      ++epoch_batches;
      ++step;
    }
    epoch_loss /= std::max(epoch_batches, 1);
    result.epoch_losses.push_back(epoch_loss);
    if (loss_log.is_open()) {
      loss_log << json{{"epoch", epoch}, {"loss", epoch_loss}}.dump() << "\n";
    }
    last_good = Segmenter::combine(backbone_ckpt, proj, data.schema, res, mode);
    if (cfg.snapshot_every > 0 && (epoch + 1) % cfg.snapshot_every == 0 && !out_dir.empty()) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "projector_snapshot_epoch%04d.ckpt", epoch + 1);
      fs::path snap = out_dir / buf;
      last_good.save(snap);
      result.snapshots.push_back(snap);
    }
  }

  result.segmenter = Segmenter::combine(backbone_ckpt, proj, data.schema, res, mode);
  return result;
}

}  // namespace ganorcon::projector
