#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "geofuse/checkpoint.hpp"
#include "geofuse/gradcheck.hpp"
#include "geofuse/optim.hpp"
#include "geofuse/rng.hpp"
#include "geofuse/tape.hpp"

using namespace geofuse;

namespace {

Tensor rand_tensor(Shape s, Rng& rng) {
    Tensor t(std::move(s));
    for (auto& v : t.v) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    return t;
}

}  // namespace

TEST_CASE("conv2d identity kernel reproduces the input") {
    Tape tape;
    Tensor x(Shape{1, 1, 3, 3});
    for (int i = 0; i < 9; ++i) x.v[static_cast<size_t>(i)] = static_cast<float>(i + 1);
    Tape::Id xi = tape.input(x);
    Tape::Id w = tape.input(Shape{1, 1, 1, 1}, {1.0f});
    Tape::Id y = tape.conv2d(xi, w, -1, 1, Padding::same);
    CHECK(tape.shape(y) == Shape{1, 1, 3, 3});
    for (int i = 0; i < 9; ++i) CHECK(tape.val(y)[static_cast<size_t>(i)] == x.v[static_cast<size_t>(i)]);
}

TEST_CASE("conv2d 8-channel same padding keeps the spatial dims") {
    Rng rng(7);
    Tape tape;
    Tape::Id x = tape.input(rand_tensor({1, 8, 8, 32}, rng));
    Tape::Id w = tape.input(rand_tensor({1, 8, 3, 3}, rng));
    Tape::Id y = tape.conv2d(x, w, -1, 1, Padding::same);
    CHECK(tape.shape(y) == Shape{1, 1, 8, 32});
}

TEST_CASE("conv2d rejects mismatched channel counts with the offending dims") {
    Rng rng(8);
    Tape tape;
    Tape::Id x = tape.input(rand_tensor({1, 4, 5, 5}, rng));
    Tape::Id w = tape.input(rand_tensor({2, 8, 3, 3}, rng));
    CHECK_THROWS_WITH_AS(tape.conv2d(x, w, -1, 1, Padding::same),
                         doctest::Contains("input has 4 channels"), ContractViolation);
}

TEST_CASE("channel_pool single channel is the identity in both modes") {
    Rng rng(9);
    Tensor x = rand_tensor({2, 1, 3, 4}, rng);
    for (auto mode : {kernels::PoolMode::max, kernels::PoolMode::avg}) {
        Tape tape;
        Tape::Id xi = tape.input(x);
        Tape::Id y = tape.channel_pool(xi, mode);
        CHECK(tape.shape(y) == Shape{2, 1, 3, 4});
        for (size_t i = 0; i < x.v.size(); ++i) CHECK(tape.val(y)[i] == doctest::Approx(x.v[i]));
    }
}

TEST_CASE("channel_pool max and avg over channels [1,2,3]") {
    Tape tape;
    Tape::Id x = tape.input(Shape{1, 3, 1, 1}, {1.0f, 2.0f, 3.0f});
    CHECK(tape.val(tape.channel_pool(x, kernels::PoolMode::max))[0] == 3.0f);
    CHECK(tape.val(tape.channel_pool(x, kernels::PoolMode::avg))[0] == doctest::Approx(2.0f));
}

TEST_CASE("frobenius_reduce analytic cases") {
    Tape tape;
    Tape::Id f = tape.input(Shape{1, 2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
    Tape::Id eye = tape.input(Shape{2, 2}, {1.0f, 0.0f, 0.0f, 1.0f});
    CHECK(tape.val(tape.frobenius_reduce(f, eye))[0] == 5.0f);
    Tape::Id ones = tape.input(Shape{2, 2}, {1.0f, 1.0f, 1.0f, 1.0f});
    CHECK(tape.val(tape.frobenius_reduce(f, ones))[0] == 10.0f);
}

TEST_CASE("frobenius_reduce matches the double-loop oracle bit-for-bit in fp64") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng = Rng::substream(seed, "frobex");
        int C = 4, H = 8, W = 32;
        TensorD f(Shape{C, H, W});
        TensorD p(Shape{H, W});
        for (auto& v : f.v) v = rng.uniform(-1.0, 1.0);
        for (auto& v : p.v) v = rng.uniform(0.0, 1.0);
        TapeD tape;
        TapeD::Id fi = tape.input(f);
        TapeD::Id pi = tape.input(p);
        const auto& got = tape.val(tape.frobenius_reduce(fi, pi));
        for (int c = 0; c < C; ++c) {
            double acc = 0.0;  // naive two-loop oracle
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w)
                    acc += f.v[static_cast<size_t>((c * H + h) * W + w)] *
                           p.v[static_cast<size_t>(h * W + w)];
            CHECK(got[static_cast<size_t>(c)] == acc);
        }
    }
}

TEST_CASE("softmax symmetry, singleton, oracle, and shift invariance") {
    {
        Tape tape;
        Tape::Id x = tape.input(Shape{2}, {3.7f, 3.7f});
        const auto& y = tape.val(tape.softmax(x, 0));
        CHECK(y[0] == doctest::Approx(0.5).epsilon(1e-7));
        CHECK(y[1] == doctest::Approx(0.5).epsilon(1e-7));
    }
    {
        Tape tape;
        Tape::Id x = tape.input(Shape{1}, {-2.0f});
        CHECK(tape.val(tape.softmax(x, 0))[0] == doctest::Approx(1.0));
    }
    Rng rng(11);
    TensorD x(Shape{20});
    for (auto& v : x.v) v = rng.uniform(-4.0, 4.0);
    TapeD tape;
    const auto& y = tape.val(tape.softmax(tape.input(x), 0));
    double denom = 0.0;
    for (double v : x.v) denom += std::exp(v);
    double sum = 0.0;
    for (int i = 0; i < 20; ++i) {
        double oracle = std::exp(x.v[static_cast<size_t>(i)]) / denom;
        CHECK(std::abs(y[static_cast<size_t>(i)] - oracle) / oracle < 1e-7);
        sum += y[static_cast<size_t>(i)];
    }
    CHECK(std::abs(sum - 1.0) < 1e-6);
    // shift invariance
    TensorD xs = x;
    for (auto& v : xs.v) v += 123.25;
    TapeD tape2;
    const auto& y2 = tape2.val(tape2.softmax(tape2.input(xs), 0));
    for (int i = 0; i < 20; ++i)
        CHECK(std::abs(y2[static_cast<size_t>(i)] - y[static_cast<size_t>(i)]) < 1e-7);
}

TEST_CASE("softmax with every entry masked reports no available panoramas") {
    Tape tape;
    Tape::Id x = tape.input(Shape{3}, {1.0f, 2.0f, 3.0f});
    std::vector<uint8_t> mask{0, 0, 0};
    CHECK_THROWS_WITH_AS(tape.softmax(x, 0, &mask), doctest::Contains("no available panoramas"),
                         ContractViolation);
}

TEST_CASE("batchnorm2d constant zero input yields the learned shift") {
    Tape tape;
    Tensor x(Shape{2, 3, 2, 2}, 0.0f);
    Tape::Id xi = tape.input(x);
    Tape::Id gamma = tape.input(Shape{3}, {1.0f, 2.0f, 3.0f});
    Tape::Id beta = tape.input(Shape{3}, {0.5f, -0.5f, 0.25f});
    BnRunning run(3);
    Tape::Id y = tape.batchnorm2d(xi, gamma, beta, run, true);
    const auto& v = tape.val(y);
    for (int b = 0; b < 2; ++b)
        for (int c = 0; c < 3; ++c)
            for (int i = 0; i < 4; ++i)
                CHECK(v[static_cast<size_t>((b * 3 + c) * 4 + i)] ==
                      tape.val(beta)[static_cast<size_t>(c)]);
}

TEST_CASE("batchnorm2d eval with unit running stats is the identity") {
    Rng rng(12);
    Tensor x = rand_tensor({1, 2, 3, 3}, rng);
    Tape tape;
    Tape::Id xi = tape.input(x);
    Tape::Id gamma = tape.input(Shape{2}, {1.0f, 1.0f});
    Tape::Id beta = tape.input(Shape{2}, {0.0f, 0.0f});
    BnRunning run(2);  // mean 0, var 1
    Tape::Id y = tape.batchnorm2d(xi, gamma, beta, run, false);
    for (size_t i = 0; i < x.v.size(); ++i)
        CHECK(tape.val(y)[i] == doctest::Approx(x.v[i]).epsilon(1e-4));
}

TEST_CASE("batchnorm2d train mode rejects single-element channels") {
    Tape tape;
    Tape::Id x = tape.input(Shape{1, 2, 1, 1}, {1.0f, 2.0f});
    Tape::Id gamma = tape.input(Shape{2}, {1.0f, 1.0f});
    Tape::Id beta = tape.input(Shape{2}, {0.0f, 0.0f});
    BnRunning run(2);
    CHECK_THROWS_WITH_AS(tape.batchnorm2d(x, gamma, beta, run, true),
                         doctest::Contains("variance undefined"), ContractViolation);
}

TEST_CASE("elementwise basics") {
    Tape tape;
    Tape::Id z = tape.input(Shape{1}, {0.0f});
    CHECK(tape.val(tape.sigmoid(z))[0] == doctest::Approx(0.5));
    Tape::Id m = tape.input(Shape{2}, {-3.0f, 3.0f});
    const auto& r = tape.val(tape.relu(m));
    CHECK(r[0] == 0.0f);
    CHECK(r[1] == 3.0f);
    Tape::Id a = tape.input(Shape{2}, {1.0f, 2.0f});
    Tape::Id s = tape.scale(a, 2.5f);
    CHECK(tape.val(s)[0] == 2.5f);
    CHECK(tape.val(s)[1] == 5.0f);
}

TEST_CASE("broadcast add/mul reject incompatible shapes") {
    Rng rng(13);
    Tape tape;
    Tape::Id a = tape.input(rand_tensor({3, 4}, rng));
    Tape::Id b = tape.input(rand_tensor({5}, rng));
    CHECK_THROWS_AS(tape.add(a, b), ContractViolation);
    CHECK_THROWS_AS(tape.mul(a, b), ContractViolation);
}

TEST_CASE("pool and upsample analytic cases") {
    {
        Tape tape;
        Tape::Id x = tape.input(Shape{1, 1, 1, 1}, {1.0f});
        Tape::Id y = tape.upsample_nearest2(x);
        CHECK(tape.shape(y) == Shape{1, 1, 2, 2});
        for (int i = 0; i < 4; ++i) CHECK(tape.val(y)[static_cast<size_t>(i)] == 1.0f);
    }
    {
        Tape tape;
        Tape::Id x = tape.input(Shape{1, 1, 2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
        Tape::Id y = tape.maxpool2(x);
        CHECK(tape.shape(y) == Shape{1, 1, 1, 1});
        CHECK(tape.val(y)[0] == 4.0f);
    }
    {
        // round-trip shape: G x G -> pool -> upsample -> G x G
        Rng rng(14);
        Tape tape;
        Tape::Id x = tape.input(rand_tensor({1, 3, 8, 8}, rng));
        Tape::Id y = tape.upsample_nearest2(tape.maxpool2(x));
        CHECK(tape.shape(y) == Shape{1, 3, 8, 8});
    }
    {
        Tape tape;
        Tape::Id x = tape.input(Shape{1, 1, 3, 3}, std::vector<float>(9, 0.0f));
        CHECK_THROWS_AS(tape.maxpool2(x), ContractViolation);
    }
}

TEST_CASE("cross_entropy analytic cases") {
    {
        // uniform logits over K=4: loss is ln 4 per pixel
        Tape tape;
        Tape::Id logits = tape.input(Shape{1, 4, 2, 2}, std::vector<float>(16, 0.7f));
        std::vector<int32_t> labels{0, 1, 2, 3};
        Tape::Id loss = tape.cross_entropy(logits, labels, 255);
        CHECK(tape.val(loss)[0] == doctest::Approx(std::log(4.0)).epsilon(1e-6));
    }
    {
        // a huge logit on the correct class drives the loss to zero
        Tape tape;
        Tensor l(Shape{1, 3, 1, 1}, 0.0f);
        l.v[1] = 50.0f;
        Tape::Id logits = tape.input(l);
        Tape::Id loss = tape.cross_entropy(logits, {1}, 255);
        CHECK(tape.val(loss)[0] < 1e-6);
    }
    {
        Tape tape;
        Tape::Id logits = tape.input(Shape{1, 2, 1, 2}, std::vector<float>(4, 0.0f));
        CHECK_THROWS_WITH_AS(tape.cross_entropy(logits, {255, 255}, 255),
                             doctest::Contains("all pixels ignored"), ContractViolation);
    }
    {
        Tape tape;
        Tape::Id logits = tape.input(Shape{1, 2, 1, 2}, std::vector<float>(4, 0.0f));
        CHECK_THROWS_AS(tape.cross_entropy(logits, {5, 0}, 255), ContractViolation);
    }
}

TEST_CASE("uncertainty loss analytic cases and 1-d scan oracle") {
    {
        Tape tape;
        Tape::Id mean = tape.input(Shape{2}, {1.0f, 2.0f});
        Tape::Id logvar = tape.input(Shape{2}, {0.0f, 0.0f});
        Tensor target(Shape{2});
        target.v = {1.0f, 2.0f};
        Tape::Id loss = tape.uncertainty_loss(mean, logvar, target, {1, 1});
        CHECK(tape.val(loss)[0] == doctest::Approx(0.0));
    }
    {
        Tape tape;
        Tape::Id mean = tape.input(Shape{1}, {0.0f});
        Tape::Id logvar = tape.input(Shape{1}, {0.0f});
        Tensor target(Shape{1});
        target.v = {3.0f};  // residual 3 at s=0: loss = 9/2
        Tape::Id loss = tape.uncertainty_loss(mean, logvar, target, {1});
        CHECK(tape.val(loss)[0] == doctest::Approx(4.5));
    }
    {
        // grid scan over s with residual 1: minimum sits at s = 0
        double best_s = -10.0, best_loss = 1e9;
        for (double s = -3.0; s <= 3.0; s += 0.01) {
            Tape tape;
            Tape::Id mean = tape.input(Shape{1}, {0.0f});
            Tape::Id logvar = tape.input(Shape{1}, {static_cast<float>(s)});
            Tensor target(Shape{1});
            target.v = {1.0f};
            double l = tape.val(tape.uncertainty_loss(mean, logvar, target, {1}))[0];
            if (l < best_loss) {
                best_loss = l;
                best_s = s;
            }
        }
        CHECK(std::abs(best_s) < 0.011);
    }
    {
        Tape tape;
        Tape::Id mean = tape.input(Shape{1}, {0.0f});
        Tape::Id logvar = tape.input(Shape{1}, {0.0f});
        Tensor target(Shape{1});
        target.v = {1.0f};
        CHECK_THROWS_WITH_AS(tape.uncertainty_loss(mean, logvar, target, {0}),
                             doctest::Contains("empty mask"), ContractViolation);
    }
}

TEST_CASE("fan-out accumulates: d(x+x)/dx == 2 exactly") {
    Tape tape;
    Tape::Id x = tape.input(Shape{1}, {1.25f}, true);
    Tape::Id y = tape.add(x, x);
    tape.backward(y);
    CHECK(tape.grad(x)[0] == 2.0f);
}

TEST_CASE("one backward pass per tape") {
    Tape tape;
    Tape::Id x = tape.input(Shape{1}, {1.0f}, true);
    Tape::Id y = tape.scale(x, 2.0f);
    tape.backward(y);
    CHECK_THROWS_AS(tape.backward(y), ContractViolation);
}

TEST_CASE("adam analytic behavior") {
    {
        // zero gradient leaves parameters untouched
        Param p("p", Tensor(Shape{3}, 1.5f));
        Adam opt({&p}, {});
        opt.step();
        for (float v : p.value.v) CHECK(v == 1.5f);
    }
    {
        // first bias-corrected step with constant gradient 1 moves by ~lr
        Param p("p", Tensor(Shape{1}, 2.0f));
        AdamConfig cfg;
        cfg.lr = 1e-4;
        Adam opt({&p}, cfg);
        p.grad.v[0] = 1.0f;
        opt.step();
        double delta = 2.0 - static_cast<double>(p.value.v[0]);
        CHECK(delta == doctest::Approx(1e-4).epsilon(1e-6));
    }
    {
        // lr decay applies per epoch hook: 1e-4 * 0.96^25 after 25 epochs
        Param p("p", Tensor(Shape{1}, 0.0f));
        Adam opt({&p}, {});
        for (int e = 0; e < 25; ++e) opt.epoch_end();
        CHECK(opt.lr() == doctest::Approx(1e-4 * std::pow(0.96, 25)).epsilon(1e-12));
    }
    {
        Param p("enc.w", Tensor(Shape{1}, 0.0f));
        Adam opt({&p}, {});
        p.grad.v[0] = std::nanf("");
        CHECK_THROWS_WITH_AS(opt.step(), doctest::Contains("enc.w"), NumericalError);
    }
}

TEST_CASE("gradient suite passes every differentiable op across 5 seeds") {
    auto results = run_gradient_suite(42, 5);
    CHECK(results.size() >= 25);  // every op reported exactly once
    std::set<std::string> names;
    for (const auto& r : results) {
        INFO(r.op, " max rel err ", r.max_rel_err);
        CHECK(r.passed);
        CHECK(names.insert(r.op).second);  // no duplicates
    }
}

TEST_CASE("gradient suite catches a sabotaged backward") {
    auto results = run_gradient_suite(42, 1, "conv2d");
    bool conv_failed = false;
    for (const auto& r : results)
        if (r.op == "conv2d") conv_failed = !r.passed;
    CHECK(conv_failed);
}

TEST_CASE("finite guard flags non-finite forward values") {
    Tape tape;
    tape.set_check_finite(true);
    Tape::Id x = tape.input(Shape{1}, {1e30f});
    CHECK_THROWS_AS(tape.mul(x, x), NumericalError);
}

TEST_CASE("checkpoint round trip is bit exact") {
    Rng rng(21);
    Param a("enc.conv0.w", rand_tensor({4, 3, 3, 3}, rng));
    Param b("attn.conv1.w", rand_tensor({1, 2, 1, 1}, rng));
    auto dir = std::filesystem::temp_directory_path() / "geofuse_ckpt_test";
    std::filesystem::remove_all(dir);
    save_checkpoint(dir, {&a, &b}, 17, 2.5e-4);
    Checkpoint ck = load_checkpoint(dir);
    CHECK(ck.iteration == 17);
    CHECK(ck.lr == doctest::Approx(2.5e-4).epsilon(1e-15));
    REQUIRE(ck.tensors.count("enc.conv0.w") == 1);
    REQUIRE(ck.tensors.count("attn.conv1.w") == 1);
    CHECK(ck.tensors["enc.conv0.w"].shape == a.value.shape);
    for (size_t i = 0; i < a.value.v.size(); ++i)
        CHECK(ck.tensors["enc.conv0.w"].v[i] == a.value.v[i]);
    std::filesystem::remove_all(dir);
}
