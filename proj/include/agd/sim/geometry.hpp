#pragma once

// Small 2-D vector + segment helpers for the road-network world.

#include <cmath>

namespace agd {

struct Vec2 {
    double x = 0.0, y = 0.0;

    Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    double dot(const Vec2& o) const { return x * o.x + y * o.y; }
    double cross(const Vec2& o) const { return x * o.y - y * o.x; }
    double norm() const { return std::hypot(x, y); }
    Vec2 normalized() const {
        const double n = norm();
        return n > 0 ? Vec2{x / n, y / n} : Vec2{1.0, 0.0};
    }
    double angle() const { return std::atan2(y, x); }
};

inline Vec2 from_angle(double th) { return {std::cos(th), std::sin(th)}; }

// wrap into (-pi, pi]
inline double wrap_angle(double a) {
    while (a > M_PI) a -= 2.0 * M_PI;
    while (a <= -M_PI) a += 2.0 * M_PI;
    return a;
}

// Distance from p to segment ab; t_out in [0,1] parametrizes the closest point.
inline double seg_distance(const Vec2& p, const Vec2& a, const Vec2& b, double* t_out = nullptr) {
    const Vec2 ab = b - a;
    const double len2 = ab.dot(ab);
    double t = len2 > 0 ? (p - a).dot(ab) / len2 : 0.0;
    t = t < 0.0 ? 0.0 : (t > 1.0 ? 1.0 : t);
    if (t_out) *t_out = t;
    return (p - (a + ab * t)).norm();
}

}  // namespace agd
