#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "biofact/core/matrix.hpp"

namespace biofact {

/// Deterministic pseudo-random source.
///
/// Bits come from std::mt19937_64, whose output sequence is fixed by the C++
/// standard. All derived distributions are implemented here rather than with
/// <random> distributions, whose algorithms are implementation-defined:
///   uniform()      53 high bits scaled to [0, 1)
///   normal()       Box-Muller on two uniforms, second variate cached
///   exponential()  inverse transform -log(1 - u) / rate
///   below(n)       rejection sampling on the top bits
/// so a seed reproduces bit-identical streams on every conforming platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }
    double uniform();
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }
    double exponential(double rate);
    std::uint64_t below(std::uint64_t n);

    template <typename T>
    void shuffle(std::vector<T>& items)
    {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

    Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev);

private:
    std::mt19937_64 engine_;
    double cached_normal_ = 0.0;
    bool has_cached_ = false;
};

/// SplitMix64 finalizer; mixes a value into a well-distributed 64-bit word.
std::uint64_t mix64(std::uint64_t x);

/// Derives an independent sub-stream seed from a master seed and a tag.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag);
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

/// 64-bit FNV-1a over bytes, used for content hashes of configs and tensors.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a_doubles(const double* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

} // namespace biofact
