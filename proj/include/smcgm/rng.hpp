#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace smcgm {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Deterministic sub-stream seed from a master seed and a tag path,
// e.g. (master, purpose, layer, particle). Streams are never shared:
// one stream per logical draw site, so results do not depend on the
// worker-thread count.
inline std::uint64_t stream_seed(std::uint64_t master,
                                 std::initializer_list<std::uint64_t> tags) {
    std::uint64_t s = master ^ 0xd1b54a32d192ed03ULL;
    for (std::uint64_t t : tags) {
        s ^= splitmix64(s) + t;
        (void)splitmix64(s);
    }
    return splitmix64(s);
}

class RngStream {
  public:
    explicit RngStream(std::uint64_t seed) : engine_(seed) {}

    RngStream(std::uint64_t master, std::initializer_list<std::uint64_t> tags)
        : engine_(stream_seed(master, tags)) {}

    double normal() { return normal_(engine_); }
    double uniform01() { return uniform_(engine_); }

    // Index drawn from normalized weights by inverse-CDF scan.
    std::size_t categorical(std::span<const double> weights) {
        if (weights.empty()) throw std::invalid_argument("categorical: empty weights");
        const double u = uniform01();
        double cum = 0.0;
        for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
            cum += weights[i];
            if (u < cum) return i;
        }
        return weights.size() - 1;
    }

    std::mt19937_64& engine() { return engine_; }

  private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

} // namespace smcgm
