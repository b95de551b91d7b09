#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "geofuse/rng.hpp"
#include "geofuse/tape.hpp"

// The OpenMP kernels keep the per-element accumulation order of the serial
// reference, so the two modes must agree bit for bit.

using namespace geofuse;

namespace {

Tensor rand_tensor(Shape s, Rng& rng) {
    Tensor t(std::move(s));
    for (auto& v : t.v) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    return t;
}

struct GraphRun {
    std::vector<std::vector<float>> values;
    std::vector<std::vector<float>> grads;
};

// Build the graph twice under both execution modes and capture outputs and
// input gradients.
template <typename BuildFn>
void check_modes_bitwise(BuildFn build) {
    GraphRun runs[2];
    kernels::Exec modes[2] = {kernels::Exec::serial, kernels::Exec::parallel};
    for (int m = 0; m < 2; ++m) {
        kernels::exec_mode() = modes[m];
        Tape tape;
        std::vector<Tape::Id> inputs;
        Tape::Id root = build(tape, inputs);
        tape.backward(root);
        runs[m].values.push_back(tape.val(root));
        for (Tape::Id id : inputs) {
            runs[m].values.push_back(tape.val(id));
            runs[m].grads.push_back(tape.has_grad(id) ? tape.grad(id) : std::vector<float>());
        }
    }
    kernels::exec_mode() = kernels::Exec::parallel;
    REQUIRE(runs[0].values.size() == runs[1].values.size());
    for (size_t i = 0; i < runs[0].values.size(); ++i) {
        REQUIRE(runs[0].values[i].size() == runs[1].values[i].size());
        for (size_t j = 0; j < runs[0].values[i].size(); ++j)
            CHECK(runs[0].values[i][j] == runs[1].values[i][j]);
    }
    for (size_t i = 0; i < runs[0].grads.size(); ++i) {
        REQUIRE(runs[0].grads[i].size() == runs[1].grads[i].size());
        for (size_t j = 0; j < runs[0].grads[i].size(); ++j)
            CHECK(runs[0].grads[i][j] == runs[1].grads[i][j]);
    }
}

}  // namespace

TEST_CASE("conv2d serial and parallel agree bitwise, stride 1 and 2") {
    for (uint64_t seed : {1ull, 2ull, 3ull}) {
        for (int stride : {1, 2}) {
            for (Padding pad : {Padding::same, Padding::valid}) {
                check_modes_bitwise([&](Tape& t, std::vector<Tape::Id>& in) {
                    Rng rng = Rng::substream(seed, "conv");
                    Tape::Id x = t.input(rand_tensor({2, 5, 9, 11}, rng), true);
                    Tape::Id w = t.input(rand_tensor({4, 5, 3, 3}, rng), true);
                    Tape::Id b = t.input(rand_tensor({4}, rng), true);
                    in = {x, w, b};
                    return t.reduce_sum_all(t.sigmoid(t.conv2d(x, w, b, stride, pad)));
                });
            }
        }
    }
}

TEST_CASE("pooling and upsampling kernels agree bitwise") {
    for (uint64_t seed : {4ull, 5ull}) {
        check_modes_bitwise([&](Tape& t, std::vector<Tape::Id>& in) {
            Rng rng = Rng::substream(seed, "pool");
            Tape::Id x = t.input(rand_tensor({3, 6, 8, 10}, rng), true);
            in = {x};
            Tape::Id mx = t.channel_pool(x, kernels::PoolMode::max);
            Tape::Id av = t.channel_pool(x, kernels::PoolMode::avg);
            Tape::Id mp = t.maxpool2(x);
            Tape::Id up = t.upsample_nearest2(mp);
            Tape::Id s1 = t.reduce_sum_all(t.concat_ch({mx, av}));
            Tape::Id s2 = t.reduce_sum_all(up);
            return t.reduce_sum_all(t.add(s1, s2));
        });
    }
}

TEST_CASE("normalization kernels agree bitwise") {
    for (uint64_t seed : {6ull, 7ull}) {
        check_modes_bitwise([&](Tape& t, std::vector<Tape::Id>& in) {
            Rng rng = Rng::substream(seed, "norm");
            Tape::Id x = t.input(rand_tensor({3, 5, 4, 6}, rng), true);
            Tape::Id g1 = t.input(rand_tensor({5}, rng), true);
            Tape::Id b1 = t.input(rand_tensor({5}, rng), true);
            Tape::Id g2 = t.input(rand_tensor({5, 4, 6}, rng), true);
            Tape::Id b2 = t.input(rand_tensor({5, 4, 6}, rng), true);
            in = {x, g1, b1, g2, b2};
            BnRunning run(5);
            Tape::Id bn = t.batchnorm2d(x, g1, b1, run, true);
            Tape::Id ln = t.layer_norm(x, g2, b2);
            return t.reduce_sum_all(t.add(t.relu(bn), ln));
        });
    }
}

TEST_CASE("fusion kernels agree bitwise") {
    for (uint64_t seed : {8ull, 9ull}) {
        check_modes_bitwise([&](Tape& t, std::vector<Tape::Id>& in) {
            Rng rng = Rng::substream(seed, "fuse");
            Tape::Id f = t.input(rand_tensor({3, 4, 5, 6}, rng), true);   // K=3,C=4
            Tape::Id p = t.input(rand_tensor({12, 1, 5, 6}, rng), true);  // T=4
            in = {f, p};
            Tape::Id kmat = t.frob_reduce_batch(f, p);  // [12,4]
            Tape::Id totals = t.reshape(t.sum_hw(p), {3, 4});
            Tape::Id wgt = t.softmax(totals, 0);
            Tape::Id grid = t.weighted_fuse(kmat, wgt, 2);  // [4,2,2]
            return t.reduce_sum_all(grid);
        });
    }
}

TEST_CASE("cross entropy and batch expansion kernels agree bitwise") {
    for (uint64_t seed : {10ull, 11ull}) {
        check_modes_bitwise([&](Tape& t, std::vector<Tape::Id>& in) {
            Rng rng = Rng::substream(seed, "ce");
            Tape::Id logits = t.input(rand_tensor({2, 4, 4, 6}, rng), true);
            in = {logits};
            std::vector<int32_t> labels(2 * 4 * 6);
            Rng lr = Rng::substream(seed, "ce.lab");
            for (auto& l : labels) {
                uint64_t r = lr.uniform_index(5);
                l = r == 4 ? 255 : static_cast<int32_t>(r);
            }
            labels[1] = 1;
            return t.cross_entropy(logits, labels, 255);
        });
        check_modes_bitwise([&](Tape& t, std::vector<Tape::Id>& in) {
            Rng rng = Rng::substream(seed, "tile");
            Tape::Id x = t.input(rand_tensor({2, 3, 4, 5}, rng), true);
            Tape::Id cells = t.input(rand_tensor({3, 2, 2}, rng), true);
            in = {x, cells};
            Tape::Id rep = t.repeat_batch(x, 4);               // [8,3,4,5]
            Tape::Id tc = t.tile_cells(cells, 2, 4, 5);        // [8,3,4,5]
            return t.reduce_sum_all(t.mul(rep, tc));
        });
    }
}
