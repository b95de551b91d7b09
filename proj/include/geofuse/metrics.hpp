#pragma once

#include <cstdint>
#include <set>
#include <vector>

#include "geofuse/errors.hpp"

namespace geofuse::metrics {

// K x K confusion counts with unknown-pixel masking. Accumulators merge
// associatively, so evaluation can run sharded and sum.
class ConfusionAccumulator {
  public:
    explicit ConfusionAccumulator(int num_classes)
        : k_(num_classes), counts_(static_cast<size_t>(num_classes) * num_classes, 0) {}

    void accumulate(const std::vector<int32_t>& pred, const std::vector<int32_t>& truth,
                    const std::set<int32_t>& ignore_labels);
    void accumulate(const std::vector<int32_t>& pred, const std::vector<int32_t>& truth,
                    int32_t ignore_label) {
        accumulate(pred, truth, std::set<int32_t>{ignore_label});
    }

    void merge(const ConfusionAccumulator& other);

    int64_t count(int truth, int pred) const {
        return counts_[static_cast<size_t>(truth) * k_ + static_cast<size_t>(pred)];
    }
    int64_t total_counted() const;
    int64_t ignored() const { return ignored_; }
    int num_classes() const { return k_; }

  private:
    int k_;
    std::vector<int64_t> counts_;  // [truth][pred]
    int64_t ignored_ = 0;
};

struct ClassificationMetrics {
    double miou = 0.0;
    double acc = 0.0;
};

// acc = trace/total; per-class IOU = tp/(tp+fp+fn); classes with zero union
// are excluded from the mean.
ClassificationMetrics miou_acc(const ConfusionAccumulator& acc);

struct RegressionMetrics {
    double rmse = 0.0;
    double rmse_log = 0.0;
};

// rmse over masked pixels; the log variant uses log1p with predictions
// clamped at zero.
RegressionMetrics rmse_rmselog(const std::vector<float>& pred, const std::vector<float>& target,
                               const std::vector<uint8_t>& mask);

}  // namespace geofuse::metrics
