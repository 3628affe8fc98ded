#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <variant>

#include "mstim/tensor.hpp"

namespace mstim {

/// Seeded generator with platform-independent real and integer draws.
///
/// std::mt19937_64's output sequence is fixed by the standard; the
/// distributions in <random> are not, so conversions are done here.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, bound).
    std::uint64_t below(std::uint64_t bound) {
        // Rejection sampling removes modulo bias.
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t v;
        do {
            v = engine_();
        } while (v >= limit);
        return v % bound;
    }

    /// Standard normal via Box-Muller.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

private:
    std::mt19937_64 engine_;
};

struct XavierUniform {
    std::size_t fan_in = 1;
    std::size_t fan_out = 1;

    double bound() const { return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)); }
};

struct Constant {
    double value = 0.0;
};

using InitScheme = std::variant<XavierUniform, Constant>;

/// Fresh trainable leaf initialised by `scheme`.
inline Tensor init_params(const Shape& shape, Rng& rng, const InitScheme& scheme) {
    std::vector<double> values(shape_numel(shape));
    if (const auto* xavier = std::get_if<XavierUniform>(&scheme)) {
        const double a = xavier->bound();
        for (auto& v : values) v = rng.uniform(-a, a);
    } else {
        const double c = std::get<Constant>(scheme).value;
        for (auto& v : values) v = c;
    }
    return Tensor::from(shape, std::move(values), true);
}

} // namespace mstim
