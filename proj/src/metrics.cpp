#include "fdct/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

namespace fdct {

MetricsReport compute_metrics(const std::vector<int>& y_true, const std::vector<int>& y_pred, int classes) {
  if (y_true.size() != y_pred.size()) throw ValueError("metrics: label/prediction size mismatch");
  if (y_true.empty()) throw ValueError("metrics: empty evaluation set");
  MetricsReport r;
  r.classes = classes;
  r.confusion.assign(static_cast<std::size_t>(classes) * static_cast<std::size_t>(classes), 0);
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    if (y_true[i] < 0 || y_true[i] >= classes || y_pred[i] < 0 || y_pred[i] >= classes)
      throw ValueError("metrics: label out of range");
    r.confusion[static_cast<std::size_t>(y_true[i] * classes + y_pred[i])]++;
  }
  std::int64_t trace = 0;
  for (int c = 0; c < classes; ++c) trace += r.confusion_at(c, c);
  r.accuracy = double(trace) / double(y_true.size());
  r.precision.resize(static_cast<std::size_t>(classes));
  r.recall.resize(static_cast<std::size_t>(classes));
  for (int c = 0; c < classes; ++c) {
    std::int64_t col = 0, row = 0;
    for (int k = 0; k < classes; ++k) {
      col += r.confusion_at(k, c);
      row += r.confusion_at(c, k);
    }
    r.precision[static_cast<std::size_t>(c)] = col ? double(r.confusion_at(c, c)) / double(col) : 0.0;
    r.recall[static_cast<std::size_t>(c)] = row ? double(r.confusion_at(c, c)) / double(row) : 0.0;
  }
  return r;
}

std::vector<PrPoint> pr_table(const std::vector<int>& y_true, const std::vector<double>& scores, int classes) {
  const std::size_t n = y_true.size();
  if (scores.size() != n * static_cast<std::size_t>(classes)) throw ValueError("pr_table: score matrix shape mismatch");
  std::vector<PrPoint> out;
  for (int c = 0; c < classes; ++c) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return scores[a * static_cast<std::size_t>(classes) + static_cast<std::size_t>(c)] >
             scores[b * static_cast<std::size_t>(classes) + static_cast<std::size_t>(c)];
    });
    std::int64_t positives = 0;
    for (int y : y_true) positives += y == c;
    if (positives == 0) continue;
    std::int64_t tp = 0;
    for (std::size_t k = 0; k < n; ++k) {
      tp += y_true[order[k]] == c;
      PrPoint p;
      p.cls = c;
      p.threshold = scores[order[k] * static_cast<std::size_t>(classes) + static_cast<std::size_t>(c)];
      p.precision = double(tp) / double(k + 1);
      p.recall = double(tp) / double(positives);
      out.push_back(p);
    }
  }
  return out;
}

void write_metrics_csv(const std::string& path, const MetricsReport& r,
                       const std::vector<std::pair<std::string, double>>& extra) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path);
  os << "metric,class,value\n";
  os << "accuracy,," << r.accuracy << "\n";
  for (int c = 0; c < r.classes; ++c) {
    os << "precision," << c << "," << r.precision[static_cast<std::size_t>(c)] << "\n";
    os << "recall," << c << "," << r.recall[static_cast<std::size_t>(c)] << "\n";
  }
  for (const auto& [k, v] : extra) os << k << ",," << v << "\n";
}

void write_confusion_csv(const std::string& path, const MetricsReport& r) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path);
  for (int t = 0; t < r.classes; ++t) {
    for (int p = 0; p < r.classes; ++p) os << (p ? "," : "") << r.confusion_at(t, p);
    os << "\n";
  }
}

void write_pr_csv(const std::string& path, const std::vector<PrPoint>& points) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path);
  os << "class,threshold,precision,recall\n";
  for (const auto& p : points)
    os << p.cls << "," << p.threshold << "," << p.precision << "," << p.recall << "\n";
}

}  // namespace fdct
