#pragma once

#include "mberil/common.hpp"

#include <random>
#include <sstream>
#include <string>

namespace mberil {

/// splitmix64 step; used to derive independent stream seeds from a base seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Seeded generator with explicitly pinned sampling algorithms, so identical
/// seeds give identical streams independent of the standard library's
/// distribution implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n).
    int uniform_int(int n) {
        if (n <= 0) throw std::invalid_argument("uniform_int: n must be positive");
        const std::uint64_t un = static_cast<std::uint64_t>(n);
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
        std::uint64_t r;
        do {
            r = next_u64();
        } while (r >= limit);
        return static_cast<int>(r % un);
    }

    /// Standard normal via Box-Muller (cosine branch only, no cached spare).
    double normal() {
        double u1;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    Vec normal_vec(int n) {
        Vec v(n);
        for (int i = 0; i < n; ++i) v[i] = normal();
        return v;
    }

    /// Draw an index from an (approximately normalized) probability vector.
    int categorical(const Vec& probs) {
        const double u = uniform() * probs.sum();
        double acc = 0.0;
        int last_positive = -1;
        for (Eigen::Index i = 0; i < probs.size(); ++i) {
            if (probs[i] <= 0.0) continue;
            last_positive = static_cast<int>(i);
            acc += probs[i];
            if (u < acc) return last_positive;
        }
        if (last_positive < 0) throw std::invalid_argument("categorical: no positive mass");
        return last_positive;
    }

    std::string save_state() const {
        std::ostringstream os;
        os << gen_;
        return os.str();
    }

    void load_state(const std::string& s) {
        std::istringstream is(s);
        is >> gen_;
        if (is.fail()) throw std::runtime_error("Rng::load_state: malformed state string");
    }

private:
    std::mt19937_64 gen_;
};

}  // namespace mberil
