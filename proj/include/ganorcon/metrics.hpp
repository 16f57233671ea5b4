#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ganorcon/image.hpp"

namespace ganorcon::eval {

// Per-class confusion counters; additive across images.
struct ClassCounts {
  std::vector<int64_t> intersection;
  std::vector<int64_t> pred;
  std::vector<int64_t> gt;

  explicit ClassCounts(int classes = 0)
      : intersection(static_cast<size_t>(classes)), pred(static_cast<size_t>(classes)),
        gt(static_cast<size_t>(classes)) {}

  int classes() const { return static_cast<int>(gt.size()); }
  int64_t total_gt() const;
  void add(const ClassCounts& other);
};

ClassCounts count_pair(const LabelMask& pred, const LabelMask& gt, int classes);

struct IoUReport {
  int classes = 0;
  std::vector<std::optional<double>> per_class;  // empty-union classes are undefined
  std::vector<double> weights;                   // gt share per class (0 when absent)
  double miou = 0.0;
  double weighted_miou = 0.0;
};

nlohmann::json iou_report_to_json(const IoUReport& report);

IoUReport report_from_counts(const ClassCounts& counts);

// Per-class IoU = |pred ∩ gt| / |pred ∪ gt|; classes with an empty union are
// undefined and excluded from the mean.
IoUReport iou(const LabelMask& pred, const LabelMask& gt, int classes);

// Sum over classes of w_c * IoU_c, with w_c the class's share of ground-truth
// pixels (0 for classes absent from gt).
double weighted_miou(const LabelMask& pred, const LabelMask& gt, int classes);

enum class Metric { miou, weighted };
const char* metric_name(Metric metric);
Metric metric_from_name(const std::string& name);
double metric_value(const IoUReport& report, Metric metric);

}  // namespace ganorcon::eval
