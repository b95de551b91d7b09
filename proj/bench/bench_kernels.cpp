// Timing comparison of the serial reference kernels against the OpenMP
// variants on model-sized workloads. Build target: geofuse_bench.

#include <chrono>
#include <cstdio>
#include <functional>
#include <vector>

#include "geofuse/kernels.hpp"
#include "geofuse/rng.hpp"

using namespace geofuse;
using Clock = std::chrono::steady_clock;

namespace {

std::vector<float> rand_vec(size_t n, uint64_t seed) {
    Rng rng(seed);
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
    return v;
}

double time_ms(const std::function<void()>& fn, int iters) {
    fn();  // warm up
    auto t0 = Clock::now();
    for (int i = 0; i < iters; ++i) fn();
    auto t1 = Clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / iters;
}

void report(const char* name, double serial_ms, double par_ms) {
    std::printf("%-28s serial %8.3f ms   openmp %8.3f ms   speedup %.2fx\n", name, serial_ms,
                par_ms, serial_ms / par_ms);
}

}  // namespace

int main() {
    std::printf("threads: %d\n", kernels::thread_count());

    {  // conv2d forward, attention-net shaped batch
        int B = 256, Ci = 8, H = 4, W = 16, Co = 1, k = 5;
        auto in = rand_vec(static_cast<size_t>(B) * Ci * H * W, 1);
        auto w = rand_vec(static_cast<size_t>(Co) * Ci * k * k, 2);
        std::vector<float> out(static_cast<size_t>(B) * Co * H * W);
        double s = time_ms([&] {
            kernels::serial::conv2d_fwd(in.data(), B, Ci, H, W, w.data(), Co, k, k, static_cast<const float*>(nullptr), 1,
                                        2, 2, out.data());
        }, 20);
        double p = time_ms([&] {
            kernels::par::conv2d_fwd(in.data(), B, Ci, H, W, w.data(), Co, k, k, static_cast<const float*>(nullptr), 1, 2,
                                     2, out.data());
        }, 20);
        report("conv2d 5x5 attention batch", s, p);
    }
    {  // conv2d forward, decoder shaped
        int B = 1, Ci = 16, H = 64, W = 64, Co = 16, k = 3;
        auto in = rand_vec(static_cast<size_t>(B) * Ci * H * W, 3);
        auto w = rand_vec(static_cast<size_t>(Co) * Ci * k * k, 4);
        std::vector<float> out(static_cast<size_t>(B) * Co * H * W);
        double s = time_ms([&] {
            kernels::serial::conv2d_fwd(in.data(), B, Ci, H, W, w.data(), Co, k, k, static_cast<const float*>(nullptr), 1,
                                        1, 1, out.data());
        }, 10);
        double p = time_ms([&] {
            kernels::par::conv2d_fwd(in.data(), B, Ci, H, W, w.data(), Co, k, k, static_cast<const float*>(nullptr), 1, 1,
                                     1, out.data());
        }, 10);
        report("conv2d 3x3 decoder 64x64", s, p);
    }
    {  // conv2d input gradient
        int B = 1, Ci = 16, H = 64, W = 64, Co = 16, k = 3;
        auto w = rand_vec(static_cast<size_t>(Co) * Ci * k * k, 5);
        auto gout = rand_vec(static_cast<size_t>(B) * Co * H * W, 6);
        std::vector<float> gin(static_cast<size_t>(B) * Ci * H * W);
        double s = time_ms([&] {
            kernels::serial::conv2d_bwd_input(w.data(), Co, Ci, k, k, gout.data(), B, H, W, 1, 1,
                                              1, gin.data(), H, W);
        }, 10);
        double p = time_ms([&] {
            kernels::par::conv2d_bwd_input(w.data(), Co, Ci, k, k, gout.data(), B, H, W, 1, 1, 1,
                                           gin.data(), H, W);
        }, 10);
        report("conv2d bwd-input 64x64", s, p);
    }
    {  // frobenius reduction over a full scene batch
        int K = 4, C = 32, H = 4, W = 16, T = 64;
        auto F = rand_vec(static_cast<size_t>(K) * C * H * W, 7);
        auto P = rand_vec(static_cast<size_t>(K) * T * H * W, 8);
        std::vector<float> out(static_cast<size_t>(K) * T * C);
        double s = time_ms([&] {
            kernels::serial::frob_batch_fwd(F.data(), K, C, H, W, P.data(), T, out.data());
        }, 50);
        double p = time_ms([&] {
            kernels::par::frob_batch_fwd(F.data(), K, C, H, W, P.data(), T, out.data());
        }, 50);
        report("frobenius batch fwd", s, p);
    }
    {  // batchnorm training pass
        int B = 4, C = 32, H = 32, W = 32;
        auto in = rand_vec(static_cast<size_t>(B) * C * H * W, 9);
        std::vector<float> mean(static_cast<size_t>(C)), var(static_cast<size_t>(C));
        std::vector<float> gamma(static_cast<size_t>(C), 1.0f), beta(static_cast<size_t>(C), 0.0f);
        std::vector<float> out(in.size()), xhat(in.size());
        double s = time_ms([&] {
            kernels::serial::bn2d_stats(in.data(), B, C, H, W, mean.data(), var.data());
            kernels::serial::bn2d_fwd(in.data(), B, C, H, W, mean.data(), var.data(), gamma.data(),
                                      beta.data(), 1e-5f, out.data(), xhat.data());
        }, 30);
        double p = time_ms([&] {
            kernels::par::bn2d_stats(in.data(), B, C, H, W, mean.data(), var.data());
            kernels::par::bn2d_fwd(in.data(), B, C, H, W, mean.data(), var.data(), gamma.data(),
                                   beta.data(), 1e-5f, out.data(), xhat.data());
        }, 30);
        report("batchnorm train fwd", s, p);
    }
    return 0;
}
