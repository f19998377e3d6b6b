#include "biofact/core/rng.hpp"

#include <cmath>
#include <cstring>
#include <numbers>

namespace biofact {

double Rng::uniform()
{
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal()
{
    if (has_cached_) {
        has_cached_ = false;
        return cached_normal_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    cached_normal_ = radius * std::sin(angle);
    has_cached_ = true;
    return radius * std::cos(angle);
}

double Rng::exponential(double rate)
{
    return -std::log1p(-uniform()) / rate;
}

std::uint64_t Rng::below(std::uint64_t n)
{
    if (n <= 1) return 0;
    int shift = 0;
    while ((n - 1) >> shift) ++shift;
    for (;;) {
        const std::uint64_t candidate = engine_() >> (64 - shift);
        if (candidate < n) return candidate;
    }
}

Matrix Rng::normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev)
{
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = stddev * normal();
    return m;
}

std::uint64_t mix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag)
{
    return mix64(seed ^ fnv1a(tag));
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index)
{
    return mix64(seed ^ mix64(index + 0x632be59bd9b4e019ULL));
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h)
{
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t fnv1a_doubles(const double* data, std::size_t n, std::uint64_t h)
{
    for (std::size_t i = 0; i < n; ++i) {
        std::uint64_t bits;
        std::memcpy(&bits, data + i, sizeof bits);
        for (int b = 0; b < 8; ++b) {
            h ^= (bits >> (8 * b)) & 0xffU;
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

std::string hex64(std::uint64_t v)
{
    static constexpr char digits[] = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    return s;
}

} // namespace biofact
