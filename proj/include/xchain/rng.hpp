#pragma once

// Deterministic random source. All sampling in the library goes through an
// explicit Rng; nothing reads ambient entropy. The distributions are
// hand-rolled on top of std::mt19937_64 so that a seed produces the same
// stream on every platform (std::*_distribution is not portable).

#include <bit>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "xchain/errors.hpp"

namespace xchain {

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}
} // namespace detail

class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), gen_(seed) {}

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() { return gen_(); }

    // Uniform double in [0, 1) built from 53 random bits.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Box-Muller with a cached spare.
    double gauss(double mu = 0.0, double sigma = 1.0) {
        if (has_spare_) {
            has_spare_ = false;
            return mu + spare_ * sigma;
        }
        double u1 = 1.0 - uniform(); // (0, 1], keeps log finite
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return mu + r * std::cos(theta) * sigma;
    }

    // Uniform integer in [0, n). Rejection sampling keeps it unbiased.
    std::size_t below(std::size_t n) {
        if (n == 0) throw UsageError("Rng::below: n must be positive");
        std::uint64_t range = static_cast<std::uint64_t>(n);
        int bits = std::bit_width(range - 1);
        std::uint64_t mask = bits >= 64 ? ~0ULL : ((1ULL << bits) - 1);
        std::uint64_t r;
        do {
            r = next_u64() & mask;
        } while (r >= range);
        return static_cast<std::size_t>(r);
    }

    bool bernoulli(double p) { return uniform() < p; }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = below(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    // Independent, reconstructible substream. Derivation depends only on the
    // original seed and the tags, not on how much this stream was consumed.
    Rng derive(std::uint64_t tag, std::uint64_t index = 0) const {
        std::uint64_t s = detail::splitmix64(seed_ ^ detail::splitmix64(tag));
        return Rng(detail::splitmix64(s ^ detail::splitmix64(index + 1)));
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Substream tags used across the training pipeline.
namespace rng_stream {
inline constexpr std::uint64_t kInit = 1;     // parameter initialization
inline constexpr std::uint64_t kSplit = 2;    // train/validation splits
inline constexpr std::uint64_t kTrain = 3;    // batch order, dropout, masking
inline constexpr std::uint64_t kPretrain = 4; // MLM pretraining
inline constexpr std::uint64_t kSynth = 5;    // synthetic data generation
} // namespace rng_stream

} // namespace xchain
