#include "ganorcon/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "ganorcon/augment.hpp"
#include "ganorcon/optim.hpp"

namespace ganorcon::contrastive {

namespace fs = std::filesystem;
using nlohmann::json;

void require_normalized(std::span<const float> v, const std::string& what) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  // Slack above the 1e-6 guarantee of the encoders so finite-difference
  // probes of the loss stay inside the contract.
  if (std::abs(std::sqrt(s) - 1.0) > 1e-4) {
    throw Error(ErrorKind::contract, what + ": embedding is not L2-normalized");
  }
}

// ---------------------------------------------------------------------------
// NegativeQueue

NegativeQueue::NegativeQueue(int capacity) : capacity_(capacity) {
  if (capacity_ < 1) throw Error(ErrorKind::config, "queue capacity must be >= 1");
}

int NegativeQueue::size() const {
  return static_cast<int>(std::min<int64_t>(total_, capacity_));
}

const std::vector<float>& NegativeQueue::entry(int i) const {
  if (i < 0 || i >= size()) throw Error(ErrorKind::contract, "queue index out of range");
  int64_t oldest = total_ <= capacity_ ? 0 : total_ % capacity_;
  return ring_[static_cast<size_t>((oldest + i) % capacity_)];
}

void NegativeQueue::enqueue(const std::vector<std::vector<float>>& batch) {
  if (static_cast<int>(batch.size()) > capacity_) {
    throw Error(ErrorKind::config, "enqueue batch of " + std::to_string(batch.size()) +
                                       " exceeds queue capacity " + std::to_string(capacity_));
  }
  for (const auto& v : batch) require_normalized(v, "enqueue");
  if (ring_.size() < static_cast<size_t>(capacity_)) {
    ring_.resize(static_cast<size_t>(capacity_));
  }
  for (const auto& v : batch) {
    ring_[static_cast<size_t>(total_ % capacity_)] = v;
    ++total_;
  }
}

// ---------------------------------------------------------------------------
// InfoNCE

double info_nce_loss(std::span<const float> anchor, std::span<const float> positive,
                     const NegativeQueue& negatives, double tau, InfoNCEGrads* grads) {
  if (tau <= 0.0) throw Error(ErrorKind::contract, "info_nce_loss: tau must be > 0");
  if (anchor.size() != positive.size()) {
    throw Error(ErrorKind::shape, "info_nce_loss: anchor/positive dimension mismatch");
  }
  require_normalized(anchor, "info_nce_loss anchor");
  require_normalized(positive, "info_nce_loss positive");

  const int d = static_cast<int>(anchor.size());
  const int n_neg = negatives.size();

  auto dot = [&](std::span<const float> a, const float* b) {
    double s = 0.0;
    for (int i = 0; i < d; ++i) s += static_cast<double>(a[static_cast<size_t>(i)]) * b[i];
    return s;
  };

  std::vector<double> scores(static_cast<size_t>(n_neg) + 1);
  scores[0] = dot(anchor, positive.data()) / tau;
  for (int i = 0; i < n_neg; ++i) {
    const auto& q = negatives.entry(i);
    if (static_cast<int>(q.size()) != d) {
      throw Error(ErrorKind::shape, "info_nce_loss: queue entry dimension mismatch");
    }
    scores[static_cast<size_t>(i) + 1] = dot(anchor, q.data()) / tau;
  }

  double mx = *std::max_element(scores.begin(), scores.end());
  double sum = 0.0;
  for (double s : scores) sum += std::exp(s - mx);
  double lse = mx + std::log(sum);
  double loss = lse - scores[0];

  if (grads != nullptr) {
    std::vector<double> pi(scores.size());
    for (size_t i = 0; i < scores.size(); ++i) pi[i] = std::exp(scores[i] - lse);

    grads->anchor.assign(static_cast<size_t>(d), 0.0);
    for (int j = 0; j < d; ++j) {
      double g = (pi[0] - 1.0) * positive[static_cast<size_t>(j)];
      for (int i = 0; i < n_neg; ++i) {
        g += pi[static_cast<size_t>(i) + 1] * negatives.entry(i)[static_cast<size_t>(j)];
      }
      grads->anchor[static_cast<size_t>(j)] = g / tau;
    }
    grads->positive.assign(static_cast<size_t>(d), 0.0);
    for (int j = 0; j < d; ++j) {
      grads->positive[static_cast<size_t>(j)] =
          (pi[0] - 1.0) * anchor[static_cast<size_t>(j)] / tau;
    }
    if (grads->want_negatives) {
      grads->negatives.assign(static_cast<size_t>(n_neg), {});
      for (int i = 0; i < n_neg; ++i) {
        auto& gn = grads->negatives[static_cast<size_t>(i)];
        gn.assign(static_cast<size_t>(d), 0.0);
        for (int j = 0; j < d; ++j) {
          gn[static_cast<size_t>(j)] =
              pi[static_cast<size_t>(i) + 1] * anchor[static_cast<size_t>(j)] / tau;
        }
      }
    } else {
      grads->negatives.clear();
    }
  }
  return loss;
}

// ---------------------------------------------------------------------------
// PredictorHead

PredictorHead::PredictorHead(int dim, int hidden, uint64_t seed) : dim_(dim), hidden_(hidden) {
  int h = hidden_ > 0 ? hidden_ : dim_;
  w1_.name = "predictor.w1";
  w1_.value = Tensor({dim_, hidden_ > 0 ? hidden_ : dim_});
  b1_.name = "predictor.b1";
  b1_.value = Tensor({hidden_ > 0 ? hidden_ : dim_});
  if (hidden_ > 0) {
    w2_.name = "predictor.w2";
    w2_.value = Tensor({hidden_, dim_});
    b2_.name = "predictor.b2";
    b2_.value = Tensor({dim_});
  }
  Rng rng = Rng::derive(seed, 0x9EAD);
  double bound1 = std::sqrt(6.0 / (dim_ + h));
  for (auto& v : w1_.value.data) v = static_cast<float>(rng.uniform(-bound1, bound1));
  if (hidden_ > 0) {
    double bound2 = std::sqrt(6.0 / (h + dim_));
    for (auto& v : w2_.value.data) v = static_cast<float>(rng.uniform(-bound2, bound2));
  }
}

PredictorHead PredictorHead::identity(int dim) {
  PredictorHead p(dim, 0, 0);
  p.w1_.value.fill(0.f);
  for (int i = 0; i < dim; ++i) p.w1_.value.at2(i, i) = 1.f;
  p.b1_.value.fill(0.f);
  return p;
}

std::vector<double> PredictorHead::forward(std::span<const float> x) const {
  if (static_cast<int>(x.size()) != dim_) {
    throw Error(ErrorKind::shape, "predictor: input dimension mismatch");
  }
  int h = hidden_ > 0 ? hidden_ : dim_;
  std::vector<double> a1(static_cast<size_t>(h), 0.0);
  for (int j = 0; j < h; ++j) {
    double s = b1_.value.data[static_cast<size_t>(j)];
    for (int i = 0; i < dim_; ++i) {
      s += static_cast<double>(x[static_cast<size_t>(i)]) * w1_.value.at2(i, j);
    }
    a1[static_cast<size_t>(j)] = s;
  }
  if (hidden_ == 0) return a1;
  std::vector<double> out(static_cast<size_t>(dim_), 0.0);
  for (int j = 0; j < dim_; ++j) {
    double s = b2_.value.data[static_cast<size_t>(j)];
    for (int i = 0; i < hidden_; ++i) {
      double hi = std::max(a1[static_cast<size_t>(i)], 0.0);
      s += hi * w2_.value.at2(i, j);
    }
    out[static_cast<size_t>(j)] = s;
  }
  return out;
}

std::vector<double> PredictorHead::backward(std::span<const float> x,
                                            std::span<const double> gout) {
  int h = hidden_ > 0 ? hidden_ : dim_;
  w1_.ensure_grad();
  b1_.ensure_grad();
  if (hidden_ > 0) {
    w2_.ensure_grad();
    b2_.ensure_grad();
  }

  // Recompute the hidden pre-activation (stateless layer, small sizes).
  std::vector<double> a1(static_cast<size_t>(h), 0.0);
  for (int j = 0; j < h; ++j) {
    double s = b1_.value.data[static_cast<size_t>(j)];
    for (int i = 0; i < dim_; ++i) {
      s += static_cast<double>(x[static_cast<size_t>(i)]) * w1_.value.at2(i, j);
    }
    a1[static_cast<size_t>(j)] = s;
  }

  std::vector<double> ga1(static_cast<size_t>(h), 0.0);
  if (hidden_ == 0) {
    ga1.assign(gout.begin(), gout.end());
  } else {
    for (int j = 0; j < dim_; ++j) {
      double g = gout[static_cast<size_t>(j)];
      b2_.grad.data[static_cast<size_t>(j)] += static_cast<float>(g);
      for (int i = 0; i < hidden_; ++i) {
        double hi = std::max(a1[static_cast<size_t>(i)], 0.0);
        w2_.grad.at2(i, j) += static_cast<float>(hi * g);
        if (a1[static_cast<size_t>(i)] > 0.0) {
          ga1[static_cast<size_t>(i)] += w2_.value.at2(i, j) * g;
        }
      }
    }
  }

  std::vector<double> gx(static_cast<size_t>(dim_), 0.0);
  for (int j = 0; j < h; ++j) {
    double g = ga1[static_cast<size_t>(j)];
    if (g == 0.0) continue;
    b1_.grad.data[static_cast<size_t>(j)] += static_cast<float>(g);
    for (int i = 0; i < dim_; ++i) {
      w1_.grad.at2(i, j) += static_cast<float>(x[static_cast<size_t>(i)] * g);
      gx[static_cast<size_t>(i)] += w1_.value.at2(i, j) * g;
    }
  }
  return gx;
}

std::vector<nn::Param*> PredictorHead::params() {
  std::vector<nn::Param*> out{&w1_, &b1_};
  if (hidden_ > 0) {
    out.push_back(&w2_);
    out.push_back(&b2_);
  }
  return out;
}

// ---------------------------------------------------------------------------
// SimSiam loss

double simsiam_loss(std::span<const float> online, PredictorHead& predictor,
                    std::span<const float> target, SimsiamGrads* grads) {
  if (online.size() != target.size() ||
      static_cast<int>(online.size()) != predictor.dim()) {
    throw Error(ErrorKind::shape, "simsiam_loss: dimension mismatch");
  }
  const int d = static_cast<int>(online.size());
  std::vector<double> h = predictor.forward(online);

  double hn = 0.0, tn = 0.0, dot = 0.0;
  for (int i = 0; i < d; ++i) {
    hn += h[static_cast<size_t>(i)] * h[static_cast<size_t>(i)];
    tn += static_cast<double>(target[static_cast<size_t>(i)]) * target[static_cast<size_t>(i)];
    dot += h[static_cast<size_t>(i)] * target[static_cast<size_t>(i)];
  }
  hn = std::sqrt(hn);
  tn = std::sqrt(tn);
  if (hn < 1e-12 || tn < 1e-12) {
    throw Error(ErrorKind::contract, "simsiam_loss: zero-norm vector");
  }
  double loss = -dot / (hn * tn);

  if (grads != nullptr) {
    // d(-cos)/dh = -(t/(|h||t|) - h * <h,t>/(|h|^3 |t|))
    grads->prediction.assign(static_cast<size_t>(d), 0.0);
    for (int i = 0; i < d; ++i) {
      grads->prediction[static_cast<size_t>(i)] =
          -(target[static_cast<size_t>(i)] / (hn * tn) -
            h[static_cast<size_t>(i)] * dot / (hn * hn * hn * tn));
    }
    grads->online = predictor.backward(online, grads->prediction);
    grads->target.assign(static_cast<size_t>(d), 0.0);  // stop-gradient
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Momentum update

void momentum_update(MomentumPair& pair) {
  if (pair.m < 0.0 || pair.m >= 1.0) {
    throw Error(ErrorKind::contract, "momentum coefficient must lie in [0,1)");
  }
  if (pair.online.size() != pair.momentum.size()) {
    throw Error(ErrorKind::shape, "momentum_update: weight list size mismatch");
  }
  for (size_t i = 0; i < pair.online.size(); ++i) {
    if (pair.online[i].shape != pair.momentum[i].shape) {
      throw Error(ErrorKind::shape, "momentum_update: shape mismatch at index " +
                                        std::to_string(i));
    }
    float m = static_cast<float>(pair.m);
    for (int64_t j = 0; j < pair.online[i].numel(); ++j) {
      pair.momentum[i].data[static_cast<size_t>(j)] =
          m * pair.momentum[i].data[static_cast<size_t>(j)] +
          (1.f - m) * pair.online[i].data[static_cast<size_t>(j)];
    }
  }
}

void momentum_update(const std::vector<nn::Param*>& online,
                     const std::vector<nn::Param*>& momentum, double m) {
  if (m < 0.0 || m >= 1.0) {
    throw Error(ErrorKind::contract, "momentum coefficient must lie in [0,1)");
  }
  if (online.size() != momentum.size()) {
    throw Error(ErrorKind::shape, "momentum_update: parameter list size mismatch");
  }
  float mf = static_cast<float>(m);
  for (size_t i = 0; i < online.size(); ++i) {
    if (online[i]->value.shape != momentum[i]->value.shape) {
      throw Error(ErrorKind::shape, "momentum_update: shape mismatch for " + online[i]->name);
    }
    float* dst = momentum[i]->value.ptr();
    const float* src = online[i]->value.ptr();
    for (int64_t j = 0; j < online[i]->value.numel(); ++j) {
      dst[j] = mf * dst[j] + (1.f - mf) * src[j];
    }
  }
}

// ---------------------------------------------------------------------------
// Config

ContrastiveConfig ContrastiveConfig::with_defaults() const {
  ContrastiveConfig c = *this;
  if (c.epochs < 0) c.epochs = c.method == "simsiam" ? 400 : 800;
  if (c.lr < 0) c.lr = c.method == "simsiam" ? 0.05 : 0.03;
  if (c.batch < 0) c.batch = c.resolution >= 512 ? 32 : 128;
  return c;
}

void ContrastiveConfig::validate() const {
  if (method != "moco" && method != "simsiam") {
    throw Error(ErrorKind::config, "contrastive method must be moco or simsiam, got '" +
                                       method + "'");
  }
  if (temperature <= 0.0) throw Error(ErrorKind::config, "temperature must be > 0");
  if (epochs == 0 || batch == 0) {
    throw Error(ErrorKind::config, "epochs and batch must be positive");
  }
  if (queue_capacity < 1) throw Error(ErrorKind::config, "queue capacity must be >= 1");
  if (momentum_coeff < 0.0 || momentum_coeff >= 1.0) {
    throw Error(ErrorKind::config, "momentum coefficient must lie in [0,1)");
  }
}

json contrastive_config_to_json(const ContrastiveConfig& cfg) {
  return json{{"method", cfg.method},
              {"temperature", cfg.temperature},
              {"epochs", cfg.epochs},
              {"batch", cfg.batch},
              {"lr", cfg.lr},
              {"weight_decay", cfg.weight_decay},
              {"sgd_momentum", cfg.sgd_momentum},
              {"momentum_coeff", cfg.momentum_coeff},
              {"queue_capacity", cfg.queue_capacity},
              {"resolution", cfg.resolution},
              {"backbone", cfg.backbone_arch},
              {"embed_dim", cfg.embed_dim},
              {"proj_hidden", cfg.proj_hidden}};
}

ContrastiveConfig contrastive_config_from_json(const json& j) {
  ContrastiveConfig cfg;
  cfg.method = j.value("method", cfg.method);
  cfg.temperature = j.value("temperature", cfg.temperature);
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.batch = j.value("batch", cfg.batch);
  cfg.lr = j.value("lr", cfg.lr);
  cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
  cfg.sgd_momentum = j.value("sgd_momentum", cfg.sgd_momentum);
  cfg.momentum_coeff = j.value("momentum_coeff", cfg.momentum_coeff);
  cfg.queue_capacity = j.value("queue_capacity", cfg.queue_capacity);
  cfg.resolution = j.value("resolution", cfg.resolution);
  cfg.backbone_arch = j.value("backbone", cfg.backbone_arch);
  cfg.embed_dim = j.value("embed_dim", cfg.embed_dim);
  cfg.proj_hidden = j.value("proj_hidden", cfg.proj_hidden);
  return cfg;
}

// ---------------------------------------------------------------------------
// Pretraining

std::vector<fs::path> list_image_files(const fs::path& dir) {
  std::vector<fs::path> files;
  if (!fs::is_directory(dir)) {
    throw Error(ErrorKind::io, "not a directory: " + dir.string());
  }
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

namespace {

struct Encoder {
  backbone::Backbone bb;
  nn::Sequential head;  // gap -> fc1 -> relu -> fc2

  Encoder(const backbone::BackboneSpec& spec, int hidden, int embed_dim, uint64_t seed)
      : bb(spec, seed) {
    head.emplace<nn::GlobalAvgPool>();
    head.emplace<nn::Linear>("proj.fc1", bb.final_channels(), hidden);
    head.emplace<nn::ReLU>();
    head.emplace<nn::Linear>("proj.fc2", hidden, embed_dim);
    Rng rng = Rng::derive(seed, 0x4EAD);
    head.init(rng);
  }

  Tensor forward(const Tensor& batch, nn::Mode mode) {
    return head.forward(bb.forward(batch, mode), mode);
  }
  Tensor backward(const Tensor& gy) { return bb.backward(head.backward(gy)); }

  std::vector<nn::Param*> params() {
    std::vector<nn::Param*> out = bb.params();
    head.collect_params(out);
    return out;
  }
};

std::vector<float> normalized_row(const Tensor& t, int row) {
  const int d = t.dim(1);
  std::vector<float> v(static_cast<size_t>(d));
  double s = 0.0;
  for (int j = 0; j < d; ++j) {
    float x = t.at2(row, j);
    v[static_cast<size_t>(j)] = x;
    s += static_cast<double>(x) * x;
  }
  double r = std::sqrt(s);
  if (r < 1e-12) throw Error(ErrorKind::contract, "zero-norm embedding");
  for (auto& x : v) x = static_cast<float>(x / r);
  return v;
}

}  // namespace

Checkpoint pretrain(const fs::path& pool, const ContrastiveConfig& config, uint64_t seed,
                    const fs::path& out_dir, PretrainReport* report) {
  ContrastiveConfig cfg = config.with_defaults();
  cfg.validate();

  std::vector<fs::path> files = list_image_files(pool);
  if (files.empty()) {
    throw Error(ErrorKind::pairing, "unlabeled pool is empty: " + pool.string());
  }

  backbone::BackboneSpec bspec;
  bspec.architecture = cfg.backbone_arch;
  bspec.stride_mode = backbone::StrideMode::standard;

  int hidden = cfg.proj_hidden > 0 ? cfg.proj_hidden
                                   : backbone::architecture_final_channels(cfg.backbone_arch);
  Encoder online(bspec, hidden, cfg.embed_dim, seed);

  const bool moco = cfg.method == "moco";
  std::optional<Encoder> momentum;
  NegativeQueue queue(cfg.queue_capacity);
  std::optional<PredictorHead> predictor;
  if (moco) {
    momentum.emplace(bspec, hidden, cfg.embed_dim, seed);  // same seed: starts as a copy
    momentum->bb.set_bn_stat_updates(false);
    momentum->head.set_bn_stat_updates(false);
  } else {
    predictor.emplace(cfg.embed_dim, std::max(cfg.embed_dim / 4, 4), seed);
  }

  std::vector<nn::Param*> online_params = online.params();
  std::vector<nn::Param*> trainable = online_params;
  if (predictor) {
    for (nn::Param* p : predictor->params()) trainable.push_back(p);
  }
  std::vector<nn::Param*> momentum_params;
  if (momentum) momentum_params = momentum->params();

  nn::SGD sgd(trainable, cfg.lr, cfg.sgd_momentum, cfg.weight_decay);
  nn::L2NormalizeRows l2_query;

  const int n = static_cast<int>(files.size());
  const int batch = std::min(cfg.batch, n);
  const int steps_per_epoch = (n + batch - 1) / batch;
  const int64_t total_steps = static_cast<int64_t>(steps_per_epoch) * cfg.epochs;

  data::AugmentationPolicy policy = data::AugmentationPolicy::contrastive_default(seed);

  std::ofstream loss_log;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    loss_log.open(out_dir / "pretrain_losses.jsonl", std::ios::trunc);
  }

  Checkpoint last_good = online.bb.to_checkpoint();
  PretrainReport local_report;
  PretrainReport& rep = report != nullptr ? *report : local_report;
  Rng order_rng = Rng::derive(seed, 0x07DE);

  int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order = order_rng.permutation(n);
    for (int s0 = 0; s0 < n; s0 += batch) {
      int bs = std::min(batch, n - s0);
      Tensor v1({bs, cfg.resolution, cfg.resolution, 3});
      Tensor v2({bs, cfg.resolution, cfg.resolution, 3});
      for (int i = 0; i < bs; ++i) {
        int idx = order[static_cast<size_t>(s0 + i)];
        ImageTensor img = resize_image(load_image(files[static_cast<size_t>(idx)]),
                                       cfg.resolution, cfg.resolution);
        Rng aug = Rng::derive(seed, 0xA06,
                              static_cast<uint64_t>(epoch) * static_cast<uint64_t>(n) +
                                  static_cast<uint64_t>(idx));
        auto [a, b] = data::two_views(img, policy, aug);
        image_into_batch(a, v1, i);
        image_into_batch(b, v2, i);
      }

      double lr = nn::cosine_lr(cfg.lr, step, total_steps);
      sgd.set_lr(lr);
      sgd.zero_grad();
      double loss = 0.0;

      if (moco) {
        Tensor q_raw = online.forward(v1, nn::Mode::train);
        Tensor q = l2_query.forward(q_raw, nn::Mode::train);
        Tensor k_raw = momentum->forward(v2, nn::Mode::train);

        std::vector<std::vector<float>> keys;
        keys.reserve(static_cast<size_t>(bs));
        for (int i = 0; i < bs; ++i) keys.push_back(normalized_row(k_raw, i));

        Tensor dq({bs, cfg.embed_dim});
        InfoNCEGrads grads;
        grads.want_negatives = false;
        for (int i = 0; i < bs; ++i) {
          std::span<const float> qi{q.ptr() + static_cast<int64_t>(i) * cfg.embed_dim,
                                    static_cast<size_t>(cfg.embed_dim)};
          loss += info_nce_loss(qi, keys[static_cast<size_t>(i)], queue, cfg.temperature,
                                &grads);
          for (int j = 0; j < cfg.embed_dim; ++j) {
            dq.at2(i, j) = static_cast<float>(grads.anchor[static_cast<size_t>(j)] / bs);
          }
        }
        loss /= bs;

        if (std::isfinite(loss)) {
          online.backward(l2_query.backward(dq));
          sgd.step();
          momentum_update(online_params, momentum_params, cfg.momentum_coeff);
          queue.enqueue(keys);
        }
      } else {
        // One forward over both views so each branch keeps its caches.
        Tensor vcat({2 * bs, cfg.resolution, cfg.resolution, 3});
        std::copy(v1.data.begin(), v1.data.end(), vcat.data.begin());
        std::copy(v2.data.begin(), v2.data.end(), vcat.data.begin() + v1.numel());
        Tensor z = online.forward(vcat, nn::Mode::train);

        Tensor dz({2 * bs, cfg.embed_dim});
        const double scale = 0.5 / bs;  // symmetrized average over the batch
        SimsiamGrads grads;
        for (int i = 0; i < bs; ++i) {
          std::span<const float> z1{z.ptr() + static_cast<int64_t>(i) * cfg.embed_dim,
                                    static_cast<size_t>(cfg.embed_dim)};
          std::span<const float> z2{z.ptr() + static_cast<int64_t>(bs + i) * cfg.embed_dim,
                                    static_cast<size_t>(cfg.embed_dim)};
          loss += 0.5 * simsiam_loss(z1, *predictor, z2, &grads);
          for (int j = 0; j < cfg.embed_dim; ++j) {
            dz.at2(i, j) += static_cast<float>(scale * grads.online[static_cast<size_t>(j)]);
          }
          loss += 0.5 * simsiam_loss(z2, *predictor, z1, &grads);
          for (int j = 0; j < cfg.embed_dim; ++j) {
            dz.at2(bs + i, j) +=
                static_cast<float>(scale * grads.online[static_cast<size_t>(j)]);
          }
        }
        loss /= bs;
        // Predictor gradients accumulated unweighted above; apply the same scale.
        if (predictor) {
          for (nn::Param* p : predictor->params()) {
            for (auto& g : p->grad.data) g = static_cast<float>(g * scale);
          }
        }

        if (std::isfinite(loss)) {
          online.backward(dz);
          sgd.step();
        }
      }

      rep.losses.push_back(loss);
      rep.steps = static_cast<int>(step) + 1;
      if (loss_log.is_open()) {
        loss_log << json{{"step", step}, {"epoch", epoch}, {"loss", loss}, {"lr", lr}}.dump()
                 << "\n";
      }
      if (!std::isfinite(loss)) {
        rep.diverged = true;
        return last_good;
      }
      ++step;
    }
    last_good = online.bb.to_checkpoint();
    rep.epochs_completed = epoch + 1;
  }

  Checkpoint ckpt = online.bb.to_checkpoint();
  ckpt.meta()["pretrain_method"] = cfg.method;
  ckpt.meta()["pretrain_epochs"] = rep.epochs_completed;
  return ckpt;
}

}  // namespace ganorcon::contrastive
