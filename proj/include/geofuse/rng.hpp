#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace geofuse {

// Deterministic RNG with named substreams. mt19937_64 is bit-exact across
// platforms; the uniform/normal mappings below are hand-rolled because the
// std distributions are implementation-defined.
class Rng {
  public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    // Derive a child stream from (seed, name[, index]). Identical derivations
    // give identical streams, so e.g. every parameter named "attn.conv3.w"
    // is initialized the same way across model variants.
    static uint64_t derive(uint64_t seed, std::string_view name, uint64_t index = 0) {
        uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a offset
        for (char c : name) {
            h ^= static_cast<uint8_t>(c);
            h *= 0x100000001b3ull;
        }
        return mix(mix(seed ^ h) + index);
    }

    static Rng substream(uint64_t seed, std::string_view name, uint64_t index = 0) {
        return Rng(derive(seed, name, index));
    }

    uint64_t next_u64() { return gen_(); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    uint64_t uniform_index(uint64_t n) {
        // Rejection sampling to avoid modulo bias.
        uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    double normal() {
        // Box-Muller; draw u1 from (0,1] so log is finite.
        double u1 = 1.0 - uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

  private:
    static uint64_t mix(uint64_t x) {
        // splitmix64 finalizer
        x += 0x9e3779b97f4a7c15ull;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }

    std::mt19937_64 gen_;
};

}  // namespace geofuse
