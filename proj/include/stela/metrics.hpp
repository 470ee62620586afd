#pragma once

#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "stela/error.hpp"
#include "stela/losses.hpp"

namespace stela {

// C x C counts, rows = ground truth, columns = prediction. Ignore-labelled
// points are never counted.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int num_classes)
      : counts_(static_cast<std::size_t>(num_classes) * num_classes, 0),
        num_classes_(num_classes) {}

  int num_classes() const { return num_classes_; }

  std::uint64_t& at(int truth, int pred) {
    return counts_[static_cast<std::size_t>(truth) * num_classes_ + pred];
  }
  std::uint64_t at(int truth, int pred) const {
    return counts_[static_cast<std::size_t>(truth) * num_classes_ + pred];
  }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (std::uint64_t c : counts_) t += c;
    return t;
  }

  // Merge is elementwise addition, so accumulation is associative across
  // batches and workers.
  ConfusionMatrix& operator+=(const ConfusionMatrix& other) {
    if (other.num_classes_ != num_classes_) throw ConfigError("confusion: class counts differ");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    return *this;
  }

 private:
  std::vector<std::uint64_t> counts_;
  int num_classes_ = 0;
};

inline void accumulate_confusion(const std::vector<std::uint16_t>& pred,
                                 const std::vector<std::uint16_t>& truth,
                                 const ClassTable& table, ConfusionMatrix& acc) {
  if (pred.size() != truth.size())
    throw ConfigError("accumulate_confusion: pred/truth length mismatch");
  if (acc.num_classes() != table.num_classes)
    throw ConfigError("accumulate_confusion: matrix size != class count");
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (truth[i] == table.ignore_id) continue;
    if (truth[i] >= table.num_classes)
      throw DataError("accumulate_confusion: truth id " + std::to_string(truth[i]) +
                      " out of range");
    if (pred[i] >= table.num_classes)
      throw DataError("accumulate_confusion: prediction id " + std::to_string(pred[i]) +
                      " out of range");
    acc.at(truth[i], pred[i]) += 1;
  }
}

struct MiouResult {
  std::vector<double> per_class;  // NaN where TP+FP+FN == 0
  double mean = 0.0;
};

// IoU_c = TP_c / (TP_c + FP_c + FN_c); classes with an empty denominator are
// excluded from the mean.
inline MiouResult miou(const ConfusionMatrix& cm) {
  const int c = cm.num_classes();
  MiouResult res;
  res.per_class.assign(static_cast<std::size_t>(c), std::nan(""));
  double sum = 0.0;
  int defined = 0;
  for (int i = 0; i < c; ++i) {
    const std::uint64_t tp = cm.at(i, i);
    std::uint64_t row = 0, col = 0;
    for (int j = 0; j < c; ++j) {
      row += cm.at(i, j);
      col += cm.at(j, i);
    }
    const std::uint64_t denom = row + col - tp;  // TP + FP + FN
    if (denom == 0) continue;
    const double iou = static_cast<double>(tp) / static_cast<double>(denom);
    res.per_class[static_cast<std::size_t>(i)] = iou;
    sum += iou;
    ++defined;
  }
  if (defined == 0) throw UsageError("miou: every class denominator is zero");
  res.mean = sum / defined;
  return res;
}

// One row per class (name, IoU; blank IoU when undefined) plus a mean row.
inline void write_metrics_csv(std::ostream& os, const MiouResult& result,
                              const std::vector<std::string>& class_names) {
  os << "class,iou\n";
  for (std::size_t c = 0; c < result.per_class.size(); ++c) {
    const std::string name =
        c < class_names.size() ? class_names[c] : "class_" + std::to_string(c);
    os << name << ',';
    if (std::isnan(result.per_class[c]))
      os << '\n';
    else
      os << result.per_class[c] << '\n';
  }
  os << "mean," << result.mean << '\n';
}

}  // namespace stela
