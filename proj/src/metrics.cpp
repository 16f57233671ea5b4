#include "ganorcon/metrics.hpp"

#include <nlohmann/json.hpp>

namespace ganorcon::eval {

using nlohmann::json;

int64_t ClassCounts::total_gt() const {
  int64_t n = 0;
  for (int64_t v : gt) n += v;
  return n;
}

void ClassCounts::add(const ClassCounts& other) {
  if (other.classes() != classes()) {
    throw Error(ErrorKind::metric, "ClassCounts::add: class count mismatch");
  }
  for (size_t c = 0; c < gt.size(); ++c) {
    intersection[c] += other.intersection[c];
    pred[c] += other.pred[c];
    gt[c] += other.gt[c];
  }
}

ClassCounts count_pair(const LabelMask& pred, const LabelMask& gt, int classes) {
  if (pred.height != gt.height || pred.width != gt.width) {
    throw Error(ErrorKind::metric, "iou: prediction and ground truth differ in shape");
  }
  if (!pred.schema_id.empty() && !gt.schema_id.empty() && pred.schema_id != gt.schema_id) {
    throw Error(ErrorKind::metric, "iou: schema mismatch ('" + pred.schema_id + "' vs '" +
                                       gt.schema_id + "')");
  }
  ClassCounts counts(classes);
  for (size_t i = 0; i < gt.values.size(); ++i) {
    uint8_t p = pred.values[i];
    uint8_t g = gt.values[i];
    if (p >= classes || g >= classes) {
      throw Error(ErrorKind::metric, "iou: mask value outside the class range");
    }
    ++counts.pred[p];
    ++counts.gt[g];
    if (p == g) ++counts.intersection[p];
  }
  return counts;
}

IoUReport report_from_counts(const ClassCounts& counts) {
  IoUReport report;
  report.classes = counts.classes();
  report.per_class.resize(counts.gt.size());
  report.weights.assign(counts.gt.size(), 0.0);

  const int64_t total = counts.total_gt();
  double miou_sum = 0.0;
  int defined = 0;
  double weighted = 0.0;
  for (size_t c = 0; c < counts.gt.size(); ++c) {
    int64_t uni = counts.pred[c] + counts.gt[c] - counts.intersection[c];
    if (uni > 0) {
      double v = static_cast<double>(counts.intersection[c]) / static_cast<double>(uni);
      report.per_class[c] = v;
      miou_sum += v;
      ++defined;
    }
    if (total > 0 && counts.gt[c] > 0) {
      report.weights[c] = static_cast<double>(counts.gt[c]) / static_cast<double>(total);
      weighted += report.weights[c] * *report.per_class[c];
    }
  }
  report.miou = defined > 0 ? miou_sum / defined : 0.0;
  report.weighted_miou = weighted;
  return report;
}

IoUReport iou(const LabelMask& pred, const LabelMask& gt, int classes) {
  return report_from_counts(count_pair(pred, gt, classes));
}

double weighted_miou(const LabelMask& pred, const LabelMask& gt, int classes) {
  return iou(pred, gt, classes).weighted_miou;
}

json iou_report_to_json(const IoUReport& report) {
  json per_class = json::array();
  for (const auto& v : report.per_class) {
    if (v.has_value()) {
      per_class.push_back(*v);
    } else {
      per_class.push_back(nullptr);  // undefined: empty union
    }
  }
  return json{{"classes", report.classes},
              {"per_class_iou", per_class},
              {"class_weights", report.weights},
              {"miou", report.miou},
              {"weighted_miou", report.weighted_miou}};
}

const char* metric_name(Metric metric) {
  return metric == Metric::miou ? "miou" : "weighted";
}

Metric metric_from_name(const std::string& name) {
  if (name == "miou") return Metric::miou;
  if (name == "weighted" || name == "weighted_miou") return Metric::weighted;
  throw Error(ErrorKind::config, "unknown metric: " + name);
}

double metric_value(const IoUReport& report, Metric metric) {
  return metric == Metric::miou ? report.miou : report.weighted_miou;
}

}  // namespace ganorcon::eval
