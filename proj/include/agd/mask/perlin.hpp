#pragma once

// Classic 2-D gradient ("Perlin") noise: a seeded 256-entry permutation
// table hashes each integer lattice corner to one of eight unit gradients,
// corner contributions are dot products with the offset vector, and the
// quintic fade 6t^5 - 15t^4 + 10t^3 smooths the bilinear blend. Values lie
// in [-sqrt(2)/2, sqrt(2)/2]; every integer lattice point maps to exactly 0.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>

namespace agd {

class PerlinNoise {
public:
    explicit PerlinNoise(uint64_t seed) {
        std::iota(perm_.begin(), perm_.begin() + 256, 0);
        std::mt19937_64 rng(seed);
        std::shuffle(perm_.begin(), perm_.begin() + 256, rng);
        std::copy_n(perm_.begin(), 256, perm_.begin() + 256);
    }

    static double fade(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

    double at(double x, double y) const {
        const double fx = std::floor(x), fy = std::floor(y);
        const int xi = int(fx) & 255, yi = int(fy) & 255;
        const double dx = x - fx, dy = y - fy;
        const double u = fade(dx), v = fade(dy);

        const double n00 = grad(hash(xi, yi), dx, dy);
        const double n10 = grad(hash(xi + 1, yi), dx - 1.0, dy);
        const double n01 = grad(hash(xi, yi + 1), dx, dy - 1.0);
        const double n11 = grad(hash(xi + 1, yi + 1), dx - 1.0, dy - 1.0);
        return lerp(lerp(n00, n10, u), lerp(n01, n11, u), v);
    }

private:
    static double lerp(double a, double b, double t) { return a + t * (b - a); }

    int hash(int x, int y) const { return perm_[size_t(perm_[size_t(x)] + y)]; }

    static double grad(int h, double dx, double dy) {
        // eight unit gradients at 45-degree steps
        static constexpr double s = 0.70710678118654752;
        static constexpr double gx[8] = {1, s, 0, -s, -1, -s, 0, s};
        static constexpr double gy[8] = {0, s, 1, s, 0, -s, -1, -s};
        const int i = h & 7;
        return gx[i] * dx + gy[i] * dy;
    }

    std::array<int, 512> perm_{};
};

// One-shot sampling helper for callers that don't hold a table.
inline double perlin2(double x, double y, uint64_t seed) {
    return PerlinNoise(seed).at(x, y);
}

}  // namespace agd
