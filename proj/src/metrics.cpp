#include "geofuse/metrics.hpp"

#include <cmath>

namespace geofuse::metrics {

void ConfusionAccumulator::accumulate(const std::vector<int32_t>& pred,
                                      const std::vector<int32_t>& truth,
                                      const std::set<int32_t>& ignore_labels) {
    require(pred.size() == truth.size(), "prediction has ", pred.size(), " pixels, truth has ",
            truth.size());
    for (size_t i = 0; i < pred.size(); ++i) {
        int32_t t = truth[i];
        if (ignore_labels.count(t)) {
            ++ignored_;
            continue;
        }
        int32_t p = pred[i];
        require(t >= 0 && t < k_, "truth label ", t, " out of range [0,", k_, ")");
        require(p >= 0 && p < k_, "predicted label ", p, " out of range [0,", k_, ")");
        ++counts_[static_cast<size_t>(t) * k_ + static_cast<size_t>(p)];
    }
}

void ConfusionAccumulator::merge(const ConfusionAccumulator& other) {
    require(other.k_ == k_, "cannot merge accumulators with ", other.k_, " vs ", k_, " classes");
    for (size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    ignored_ += other.ignored_;
}

int64_t ConfusionAccumulator::total_counted() const {
    int64_t t = 0;
    for (int64_t c : counts_) t += c;
    return t;
}

ClassificationMetrics miou_acc(const ConfusionAccumulator& acc) {
    int64_t total = acc.total_counted();
    require(total > 0, "no counted pixels, metrics undefined");
    int k = acc.num_classes();
    int64_t trace = 0;
    for (int c = 0; c < k; ++c) trace += acc.count(c, c);
    double iou_sum = 0.0;
    int iou_classes = 0;
    for (int c = 0; c < k; ++c) {
        int64_t tp = acc.count(c, c);
        int64_t fn = 0, fp = 0;
        for (int o = 0; o < k; ++o) {
            if (o == c) continue;
            fn += acc.count(c, o);
            fp += acc.count(o, c);
        }
        int64_t uni = tp + fp + fn;
        if (uni == 0) continue;  // class absent from both truth and prediction
        iou_sum += static_cast<double>(tp) / static_cast<double>(uni);
        ++iou_classes;
    }
    ClassificationMetrics m;
    m.acc = static_cast<double>(trace) / static_cast<double>(total);
    m.miou = iou_classes > 0 ? iou_sum / iou_classes : 0.0;
    return m;
}

RegressionMetrics rmse_rmselog(const std::vector<float>& pred, const std::vector<float>& target,
                               const std::vector<uint8_t>& mask) {
    require(pred.size() == target.size() && pred.size() == mask.size(),
            "rmse inputs disagree: ", pred.size(), " predictions, ", target.size(), " targets, ",
            mask.size(), " mask entries");
    int64_t n = 0;
    double se = 0.0, sle = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        if (!mask[i]) continue;
        require(target[i] >= 0.0f, "rmse_log target must be non-negative, got ", target[i]);
        ++n;
        double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
        se += d * d;
        double lp = std::log1p(static_cast<double>(std::max(pred[i], 0.0f)));
        double lt = std::log1p(static_cast<double>(target[i]));
        sle += (lp - lt) * (lp - lt);
    }
    require(n > 0, "rmse over empty mask");
    RegressionMetrics m;
    m.rmse = std::sqrt(se / static_cast<double>(n));
    m.rmse_log = std::sqrt(sle / static_cast<double>(n));
    return m;
}

}  // namespace geofuse::metrics
