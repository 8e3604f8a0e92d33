#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace crib::rng {

// splitmix64 finalizer. Used both as the generator step and to mix labels
// into derived stream keys.
inline constexpr std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline constexpr std::uint64_t hash_label(std::string_view label) {
    std::uint64_t h = 0xcbf29ce484222325ULL; // FNV-1a
    for (char c : label) {
        h ^= static_cast<std::uint8_t>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Deterministic counter-based stream. Every consumer of randomness derives
// its own stream from (seed, label, indices), so results do not depend on
// scheduling or on how many draws other consumers made.
class Stream {
public:
    explicit Stream(std::uint64_t key) : state_(mix64(key ^ 0x6a09e667f3bcc908ULL)) {}

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [0, n), unbiased
    std::uint64_t uniform_int(std::uint64_t n) {
        if (n == 0) return 0;
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t v;
        do {
            v = next_u64();
        } while (v >= limit);
        return v % n;
    }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform(); // (0, 1]
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    bool bernoulli(double p) { return uniform() < p; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// Key derivation: fold a label plus integer indices into a fresh stream key.
inline std::uint64_t derive_key(std::uint64_t seed, std::string_view label) {
    return mix64(seed ^ mix64(hash_label(label)));
}

template <typename... Ix>
std::uint64_t derive_key(std::uint64_t seed, std::string_view label, Ix... ix) {
    std::uint64_t k = derive_key(seed, label);
    ((k = mix64(k ^ mix64(static_cast<std::uint64_t>(ix)))), ...);
    return k;
}

inline std::uint64_t derive_key(std::uint64_t seed, std::string_view label, std::string_view s) {
    return mix64(derive_key(seed, label) ^ mix64(hash_label(s)));
}

template <typename... Ix>
std::uint64_t derive_key(std::uint64_t seed, std::string_view label, std::string_view s, Ix... ix) {
    std::uint64_t k = derive_key(seed, label, s);
    ((k = mix64(k ^ mix64(static_cast<std::uint64_t>(ix)))), ...);
    return k;
}

template <typename... Args>
Stream stream(std::uint64_t seed, std::string_view label, Args... args) {
    return Stream(derive_key(seed, label, args...));
}

} // namespace crib::rng
