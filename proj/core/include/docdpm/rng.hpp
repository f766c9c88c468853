#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <sstream>
#include <string>

#include "docdpm/tensor.hpp"

namespace docdpm {

// Deterministic random source. Gaussian draws use an explicit Box-Muller
// transform with no cached spare, so the full generator state is exactly the
// mt19937_64 state and serializes losslessly through text.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    // Uniform in [0, 1).
    double uniform() {
        // 53-bit mantissa construction, independent of std::uniform_real_distribution.
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Inclusive integer range.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        // Rejection sampling for an unbiased draw.
        std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % span;
        std::uint64_t r;
        do {
            r = engine_();
        } while (r >= limit);
        return lo + static_cast<std::int64_t>(r % span);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Standard normal via Box-Muller (cosine branch only).
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    template <typename T>
    Tensor<T> normal_tensor(std::vector<int> shape) {
        Tensor<T> t(std::move(shape));
        for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(normal());
        return t;
    }

    template <typename T>
    Tensor<T> uniform_tensor(std::vector<int> shape, double lo, double hi) {
        Tensor<T> t(std::move(shape));
        for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(uniform(lo, hi));
        return t;
    }

    // Derive an independent stream; used to give init/train/sample their own seeds.
    Rng fork(std::uint64_t stream) {
        std::uint64_t s = engine_();
        return Rng(s ^ (0x9e3779b97f4a7c15ULL * (stream + 1)));
    }

    std::string serialize() const {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }

    void deserialize(const std::string& text) {
        std::istringstream is(text);
        is >> engine_;
        if (!is) throw std::runtime_error("Rng::deserialize: malformed state");
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

}  // namespace docdpm
