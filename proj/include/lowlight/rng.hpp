#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace lowlight {

// Deterministic random source. All randomness in the toolkit flows from one
// of these, seeded from a single root seed, so runs are reproducible across
// processes on the same platform. Distributions are implemented by hand on
// top of mt19937_64 because the std::*_distribution adapters are
// implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // [0, 1)
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Inclusive range. Modulo bias is negligible for the small ranges used.
    int uniform_int(int lo, int hi) {
        return lo + static_cast<int>(gen_() % static_cast<std::uint64_t>(hi - lo + 1));
    }

    // Box-Muller, cacheless so the stream state is exactly the mt19937_64 state.
    double normal() {
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Derives an independent child stream; advances this stream by one draw.
    Rng fork(std::uint64_t salt) {
        const std::uint64_t s = gen_() ^ (salt * 0x9E3779B97F4A7C15ull + 0xD1B54A32D192ED03ull);
        return Rng(s);
    }

    std::string serialize() const {
        std::ostringstream os;
        os << gen_;
        return os.str();
    }

    void deserialize(const std::string& state) {
        std::istringstream is(state);
        is >> gen_;
    }

private:
    std::mt19937_64 gen_;
};

}  // namespace lowlight
