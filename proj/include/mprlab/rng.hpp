#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace mprlab {

// Deterministic random source. Deliberately avoids std:: distributions,
// whose output is implementation-defined; every draw here is a fixed
// function of the mt19937_64 stream, so seeded runs are byte-reproducible
// across platforms.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : gen_(seed) {}

    // uniform in [0, 1) with 53 random bits
    double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // standard normal via Box-Muller (no cached spare, to keep the stream
    // position a simple function of the call count)
    double normal() {
        double u1 = uniform01();
        double u2 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
    }

    std::uint64_t next_u64() { return gen_(); }

    int uniform_int(int lo, int hi) { // inclusive bounds
        return lo + static_cast<int>(gen_() % static_cast<std::uint64_t>(hi - lo + 1));
    }

    // uniform point in the box [-radius, radius]^dim
    std::vector<double> box_point(int dim, double radius) {
        std::vector<double> p(dim);
        for (auto& v : p) v = uniform(-radius, radius);
        return p;
    }

    // uniform direction on the unit sphere in R^dim
    std::vector<double> unit_vector(int dim) {
        std::vector<double> p(dim);
        double norm2 = 0.0;
        do {
            norm2 = 0.0;
            for (auto& v : p) {
                v = normal();
                norm2 += v * v;
            }
        } while (norm2 < 1e-12);
        const double inv = 1.0 / std::sqrt(norm2);
        for (auto& v : p) v *= inv;
        return p;
    }

private:
    std::mt19937_64 gen_;
};

} // namespace mprlab
