#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ganorcon/backbone.hpp"
#include "ganorcon/checkpoint.hpp"
#include "ganorcon/nn.hpp"

namespace ganorcon::contrastive {

// Checks |l2norm(v) - 1| <= 1e-4; throws a contract error otherwise.
void require_normalized(std::span<const float> v, const std::string& what);

// FIFO ring of normalized embeddings with eviction beyond capacity.
class NegativeQueue {
 public:
  explicit NegativeQueue(int capacity);

  int capacity() const { return capacity_; }
  int size() const;
  // Write position: total insertions mod capacity.
  int64_t cursor() const { return total_ % capacity_; }
  // FIFO access: index 0 is the oldest retained entry.
  const std::vector<float>& entry(int i) const;

  void enqueue(const std::vector<std::vector<float>>& batch);

 private:
  int capacity_;
  std::vector<std::vector<float>> ring_;
  int64_t total_ = 0;
};

struct InfoNCEGrads {
  bool want_negatives = true;
  std::vector<double> anchor;
  std::vector<double> positive;
  std::vector<std::vector<double>> negatives;
};

// -log( exp(<a,p>/tau) / (exp(<a,p>/tau) + sum_i exp(<a,n_i>/tau)) ),
// computed in double with log-sum-exp stabilization. All inputs must be
// L2-normalized; tau > 0. With an empty queue the loss is exactly 0.
double info_nce_loss(std::span<const float> anchor, std::span<const float> positive,
                     const NegativeQueue& negatives, double tau,
                     InfoNCEGrads* grads = nullptr);

// Small prediction network h: dim -> hidden -> dim (hidden == 0 collapses to
// a single linear map). Weights are stored as float parameters; forward and
// backward run in double.
class PredictorHead {
 public:
  PredictorHead(int dim, int hidden, uint64_t seed);
  static PredictorHead identity(int dim);

  int dim() const { return dim_; }
  std::vector<double> forward(std::span<const float> x) const;
  // dL/d(output) -> dL/d(input); accumulates parameter gradients.
  std::vector<double> backward(std::span<const float> x, std::span<const double> gout);
  std::vector<nn::Param*> params();

 private:
  int dim_, hidden_;
  nn::Param w1_, b1_, w2_, b2_;  // w2/b2 unused when hidden_ == 0
};

struct SimsiamGrads {
  std::vector<double> online;      // through the predictor
  std::vector<double> prediction;  // d(loss)/d(h(online)), for inspection
  std::vector<double> target;      // identically zero: the stop-gradient contract
};

// Negative cosine similarity -<h/||h||, t/||t||> with h = predictor(online).
// The target is treated as a constant: no gradient is ever produced for it.
double simsiam_loss(std::span<const float> online, PredictorHead& predictor,
                    std::span<const float> target, SimsiamGrads* grads = nullptr);

struct MomentumPair {
  std::vector<Tensor> online;
  std::vector<Tensor> momentum;
  double m = 0.999;
};

// momentum <- m * momentum + (1 - m) * online, elementwise.
void momentum_update(MomentumPair& pair);
void momentum_update(const std::vector<nn::Param*>& online,
                     const std::vector<nn::Param*>& momentum, double m);

struct ContrastiveConfig {
  std::string method = "moco";  // moco | simsiam
  double temperature = 0.2;
  int epochs = -1;       // -1: 800 for moco, 400 for simsiam
  int batch = -1;        // -1: 32 at >=512 px, 128 below
  double lr = -1.0;      // -1: 0.03 for moco, 0.05 for simsiam
  double weight_decay = 1e-4;
  double sgd_momentum = 0.9;
  double momentum_coeff = 0.999;  // key-encoder EMA coefficient
  int queue_capacity = 65536;
  int resolution = 512;
  std::string backbone_arch = "resnet50";
  int embed_dim = 128;
  int proj_hidden = -1;  // -1: encoder output width

  ContrastiveConfig with_defaults() const;
  void validate() const;
};

nlohmann::json contrastive_config_to_json(const ContrastiveConfig& cfg);
ContrastiveConfig contrastive_config_from_json(const nlohmann::json& j);

struct PretrainReport {
  std::vector<double> losses;  // one entry per optimizer step
  int steps = 0;
  int epochs_completed = 0;
  bool diverged = false;
};

// Self-supervised pretraining over a directory of unlabeled images. Returns
// the backbone checkpoint; projection heads are training scaffolding and are
// not part of the artifact. When out_dir is set, a JSON-lines loss log is
// written there. On divergence the last epoch-end snapshot is returned.
Checkpoint pretrain(const std::filesystem::path& pool, const ContrastiveConfig& config,
                    uint64_t seed, const std::filesystem::path& out_dir = {},
                    PretrainReport* report = nullptr);

// Sorted image files directly under a directory.
std::vector<std::filesystem::path> list_image_files(const std::filesystem::path& dir);

}  // namespace ganorcon::contrastive
