#include "ganorcon/crossval.hpp"

#include <nlohmann/json.hpp>

#include "ganorcon/rng.hpp"

namespace ganorcon::eval {

using nlohmann::json;

json fold_plan_to_json(const FoldPlan& plan) {
  return json{{"seed", plan.seed},          {"metric", plan.metric},
              {"convention", plan.convention}, {"folds", plan.folds},
              {"chosen_checkpoints", plan.chosen}, {"fold_scores", plan.fold_scores},
              {"final_score", plan.final_score}};
}

namespace {

double score_subset(const std::vector<ClassCounts>& per_image, const std::vector<int>& subset,
                    Metric metric) {
  ClassCounts agg(per_image.front().classes());
  for (int idx : subset) agg.add(per_image[static_cast<size_t>(idx)]);
  return metric_value(report_from_counts(agg), metric);
}

}  // namespace

FoldPlan cross_validate_counts(const std::vector<std::vector<ClassCounts>>& counts,
                               Metric metric, uint64_t seed, int num_folds) {
  if (counts.empty()) {
    throw Error(ErrorKind::protocol, "cross_validate: no checkpoints given");
  }
  const int num_images = static_cast<int>(counts.front().size());
  for (const auto& per_image : counts) {
    if (static_cast<int>(per_image.size()) != num_images) {
      throw Error(ErrorKind::protocol, "cross_validate: ragged counts");
    }
  }
  if (num_images < num_folds) {
    throw Error(ErrorKind::protocol,
                "cross_validate: need at least " + std::to_string(num_folds) +
                    " test items, got " + std::to_string(num_images));
  }

  FoldPlan plan;
  plan.seed = seed;
  plan.metric = metric_name(metric);

  // Deterministic contiguous folds over a seeded shuffle of test indices.
  Rng rng = Rng::derive(seed, 0xF07D);
  std::vector<int> order(static_cast<size_t>(num_images));
  for (int i = 0; i < num_images; ++i) order[static_cast<size_t>(i)] = i;
  rng.shuffle(order);
  plan.folds.resize(static_cast<size_t>(num_folds));
  for (int f = 0; f < num_folds; ++f) {
    int b = num_images * f / num_folds;
    int e = num_images * (f + 1) / num_folds;
    plan.folds[static_cast<size_t>(f)].assign(order.begin() + b, order.begin() + e);
  }

  double sum = 0.0;
  for (int f = 0; f < num_folds; ++f) {
    const std::vector<int>& val = plan.folds[static_cast<size_t>(f)];
    std::vector<int> rest;
    for (int g = 0; g < num_folds; ++g) {
      if (g == f) continue;
      rest.insert(rest.end(), plan.folds[static_cast<size_t>(g)].begin(),
                  plan.folds[static_cast<size_t>(g)].end());
    }
    int best = 0;
    double best_score = -1.0;
    for (size_t k = 0; k < counts.size(); ++k) {
      double s = score_subset(counts[k], val, metric);
      if (s > best_score) {  // ties keep the lowest checkpoint index
        best_score = s;
        best = static_cast<int>(k);
      }
    }
    double fold_score = score_subset(counts[static_cast<size_t>(best)], rest, metric);
    plan.chosen.push_back(best);
    plan.fold_scores.push_back(fold_score);
    sum += fold_score;
  }
  plan.final_score = sum / num_folds;
  return plan;
}

FoldPlan cross_validate(std::vector<projector::Segmenter>& checkpoints,
                        const data::FewShotDataset& test, Metric metric, uint64_t seed,
                        int num_folds) {
  if (checkpoints.empty()) {
    throw Error(ErrorKind::protocol, "cross_validate: no checkpoints given");
  }
  const int classes = test.schema.num_classes();
  std::vector<std::vector<ClassCounts>> counts(checkpoints.size());
  for (size_t k = 0; k < checkpoints.size(); ++k) {
    counts[k].reserve(test.pairs.size());
    for (const auto& [image, mask] : test.pairs) {
      LabelMask pred = checkpoints[k].infer(image);
      counts[k].push_back(count_pair(pred, mask, classes));
    }
  }
  return cross_validate_counts(counts, metric, seed, num_folds);
}

}  // namespace ganorcon::eval
