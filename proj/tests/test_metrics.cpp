#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "geofuse/metrics.hpp"
#include "geofuse/rng.hpp"

using namespace geofuse;
using metrics::ConfusionAccumulator;

TEST_CASE("accumulate ignores masked pixels and tallies the rest") {
    ConfusionAccumulator acc(3);
    acc.accumulate({0, 1, 2, 0}, {255, 255, 255, 255}, 255);
    CHECK(acc.total_counted() == 0);
    CHECK(acc.ignored() == 4);

    acc.accumulate({0, 1, 2}, {0, 1, 2}, 255);
    CHECK(acc.total_counted() == 3);
    for (int c = 0; c < 3; ++c) CHECK(acc.count(c, c) == 1);

    CHECK_THROWS_AS(acc.accumulate({7}, {0}, 255), ContractViolation);
    CHECK_THROWS_AS(acc.accumulate({0}, {9}, 255), ContractViolation);
}

TEST_CASE("random accumulation equals a brute-force tally") {
    Rng rng(61);
    std::vector<int32_t> pred(16 * 16), truth(16 * 16);
    for (auto& p : pred) p = static_cast<int32_t>(rng.uniform_index(4));
    for (auto& t : truth) {
        uint64_t r = rng.uniform_index(5);
        t = r == 4 ? 255 : static_cast<int32_t>(r);
    }
    ConfusionAccumulator acc(4);
    acc.accumulate(pred, truth, 255);
    int64_t tally[4][4] = {};
    int64_t ignored = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        if (truth[i] == 255) {
            ++ignored;
            continue;
        }
        ++tally[truth[i]][pred[i]];
    }
    for (int t = 0; t < 4; ++t)
        for (int p = 0; p < 4; ++p) CHECK(acc.count(t, p) == tally[t][p]);
    CHECK(acc.ignored() == ignored);
}

TEST_CASE("miou and accuracy analytic cases") {
    {
        ConfusionAccumulator acc(2);
        acc.accumulate({0, 0, 1, 1}, {0, 0, 1, 1}, 255);
        auto m = metrics::miou_acc(acc);
        CHECK(m.miou == doctest::Approx(1.0));
        CHECK(m.acc == doctest::Approx(1.0));
    }
    {
        // class 1 fully confused with class 0: IOU_1 = 0
        ConfusionAccumulator acc(2);
        acc.accumulate({0, 0, 0, 0}, {0, 0, 1, 1}, 255);
        auto m = metrics::miou_acc(acc);
        CHECK(m.acc == doctest::Approx(0.5));
        // IOU_0 = 2/(2+2) = 0.5, IOU_1 = 0
        CHECK(m.miou == doctest::Approx(0.25));
    }
    {
        ConfusionAccumulator acc(2);
        CHECK_THROWS_AS(metrics::miou_acc(acc), ContractViolation);
    }
}

TEST_CASE("random miou matches an independent per-class oracle exactly") {
    Rng rng(62);
    int K = 5;
    std::vector<int32_t> pred(500), truth(500);
    for (auto& p : pred) p = static_cast<int32_t>(rng.uniform_index(static_cast<uint64_t>(K)));
    for (auto& t : truth) t = static_cast<int32_t>(rng.uniform_index(static_cast<uint64_t>(K)));
    ConfusionAccumulator acc(K);
    acc.accumulate(pred, truth, 255);
    auto m = metrics::miou_acc(acc);

    double iou_sum = 0;
    int classes = 0;
    int64_t correct = 0;
    for (int c = 0; c < K; ++c) {
        int64_t tp = 0, fp = 0, fn = 0;
        for (size_t i = 0; i < pred.size(); ++i) {
            if (truth[i] == c && pred[i] == c) ++tp;
            if (truth[i] != c && pred[i] == c) ++fp;
            if (truth[i] == c && pred[i] != c) ++fn;
        }
        if (tp + fp + fn > 0) {
            iou_sum += static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
            ++classes;
        }
        correct += tp;
    }
    CHECK(m.miou == iou_sum / classes);
    CHECK(m.acc == static_cast<double>(correct) / 500.0);
}

TEST_CASE("accumulators merge associatively and order-independently") {
    Rng rng(63);
    std::vector<int32_t> pred(300), truth(300);
    for (auto& p : pred) p = static_cast<int32_t>(rng.uniform_index(3));
    for (auto& t : truth) t = static_cast<int32_t>(rng.uniform_index(3));
    ConfusionAccumulator whole(3);
    whole.accumulate(pred, truth, 255);
    ConfusionAccumulator left(3), right(3);
    left.accumulate({pred.begin(), pred.begin() + 100}, {truth.begin(), truth.begin() + 100}, 255);
    right.accumulate({pred.begin() + 100, pred.end()}, {truth.begin() + 100, truth.end()}, 255);
    right.merge(left);  // reversed order on purpose
    for (int t = 0; t < 3; ++t)
        for (int p = 0; p < 3; ++p) CHECK(right.count(t, p) == whole.count(t, p));
}

TEST_CASE("ignored pixels affect no metric (toggle test)") {
    std::vector<int32_t> truth{0, 1, 255, 1};
    std::vector<int32_t> pred_a{0, 1, 0, 1};
    std::vector<int32_t> pred_b{0, 1, 1, 1};  // only the ignored pixel differs
    ConfusionAccumulator a(2), b(2);
    a.accumulate(pred_a, truth, 255);
    b.accumulate(pred_b, truth, 255);
    auto ma = metrics::miou_acc(a);
    auto mb = metrics::miou_acc(b);
    CHECK(ma.miou == mb.miou);
    CHECK(ma.acc == mb.acc);
}

TEST_CASE("rmse analytic cases") {
    {
        std::vector<float> p{1, 2, 3}, t{1, 2, 3};
        auto m = metrics::rmse_rmselog(p, t, {1, 1, 1});
        CHECK(m.rmse == 0.0);
        CHECK(m.rmse_log == 0.0);
    }
    {
        std::vector<float> p{3, 4, 5}, t{1, 2, 3};
        auto m = metrics::rmse_rmselog(p, t, {1, 1, 1});
        CHECK(m.rmse == doctest::Approx(2.0));
    }
    {
        std::vector<float> p{1}, t{1};
        CHECK_THROWS_AS(metrics::rmse_rmselog(p, t, {0}), ContractViolation);
    }
}

TEST_CASE("rmse matches a direct fp64 oracle") {
    Rng rng(64);
    int n = 256;
    std::vector<float> pred(static_cast<size_t>(n)), target(static_cast<size_t>(n));
    std::vector<uint8_t> mask(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        pred[static_cast<size_t>(i)] = static_cast<float>(rng.uniform(-2.0, 10.0));
        target[static_cast<size_t>(i)] = static_cast<float>(rng.uniform(0.0, 10.0));
        mask[static_cast<size_t>(i)] = rng.uniform() < 0.8 ? 1 : 0;
    }
    mask[0] = 1;
    auto m = metrics::rmse_rmselog(pred, target, mask);
    double se = 0, sle = 0;
    int64_t cnt = 0;
    for (int i = 0; i < n; ++i) {
        if (!mask[static_cast<size_t>(i)]) continue;
        ++cnt;
        double d = static_cast<double>(pred[static_cast<size_t>(i)]) - target[static_cast<size_t>(i)];
        se += d * d;
        double lp = std::log1p(std::max(0.0, static_cast<double>(pred[static_cast<size_t>(i)])));
        double lt = std::log1p(static_cast<double>(target[static_cast<size_t>(i)]));
        sle += (lp - lt) * (lp - lt);
    }
    CHECK(std::abs(m.rmse - std::sqrt(se / cnt)) / std::sqrt(se / cnt) < 1e-7);
    CHECK(std::abs(m.rmse_log - std::sqrt(sle / cnt)) / std::sqrt(sle / cnt) < 1e-7);
}

TEST_CASE("metric values stay within [0,1] for classification") {
    Rng rng(65);
    for (int round = 0; round < 10; ++round) {
        std::vector<int32_t> pred(100), truth(100);
        for (auto& p : pred) p = static_cast<int32_t>(rng.uniform_index(4));
        for (auto& t : truth) t = static_cast<int32_t>(rng.uniform_index(4));
        ConfusionAccumulator acc(4);
        acc.accumulate(pred, truth, 255);
        auto m = metrics::miou_acc(acc);
        CHECK(m.miou >= 0.0);
        CHECK(m.miou <= 1.0);
        CHECK(m.acc >= 0.0);
        CHECK(m.acc <= 1.0);
    }
}
