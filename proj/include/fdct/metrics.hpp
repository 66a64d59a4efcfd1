#pragma once

#include <string>
#include <vector>

#include "fdct/tensor.hpp"

namespace fdct {

struct MetricsReport {
  int classes = 0;
  double accuracy = 0.0;
  std::vector<std::int64_t> confusion;  // [classes*classes], row = true, col = predicted
  std::vector<double> precision, recall;

  std::int64_t confusion_at(int t, int p) const { return confusion[static_cast<std::size_t>(t * classes + p)]; }
};

MetricsReport compute_metrics(const std::vector<int>& y_true, const std::vector<int>& y_pred, int classes);

struct PrPoint {
  int cls = 0;
  double threshold = 0, precision = 0, recall = 0;
};

// One-vs-rest precision/recall sweep per class over softmax scores [n*classes].
std::vector<PrPoint> pr_table(const std::vector<int>& y_true, const std::vector<double>& scores, int classes);

void write_metrics_csv(const std::string& path, const MetricsReport& r,
                       const std::vector<std::pair<std::string, double>>& extra = {});
void write_confusion_csv(const std::string& path, const MetricsReport& r);
void write_pr_csv(const std::string& path, const std::vector<PrPoint>& points);

}  // namespace fdct
