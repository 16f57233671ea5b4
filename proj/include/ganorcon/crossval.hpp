#pragma once

#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ganorcon/data.hpp"
#include "ganorcon/metrics.hpp"
#include "ganorcon/projector.hpp"

namespace ganorcon::eval {

// Five-fold checkpoint-selection protocol: the test set is shuffled once
// (seeded), split into five contiguous folds, each fold in turn acts as the
// validation set that picks the best checkpoint, and that checkpoint is
// scored on the remaining four folds (out-of-fold convention). The reported
// score is the mean of the five fold scores.
struct FoldPlan {
  uint64_t seed = 0;
  std::string metric;
  std::string convention = "out_of_fold";
  std::vector<std::vector<int>> folds;  // disjoint test indices
  std::vector<int> chosen;              // checkpoint index per fold
  std::vector<double> fold_scores;
  double final_score = 0.0;
};

nlohmann::json fold_plan_to_json(const FoldPlan& plan);

// Core protocol over precomputed per-image confusion counts
// (counts[checkpoint][image]). Drives both the real evaluation path and the
// synthetic-oracle tests.
FoldPlan cross_validate_counts(const std::vector<std::vector<ClassCounts>>& counts,
                               Metric metric, uint64_t seed, int num_folds = 5);

// Evaluates each segmenter checkpoint on the test set, then runs the fold
// protocol. Requires at least one checkpoint and >= num_folds test items.
FoldPlan cross_validate(std::vector<projector::Segmenter>& checkpoints,
                        const data::FewShotDataset& test, Metric metric, uint64_t seed,
                        int num_folds = 5);

}  // namespace ganorcon::eval
