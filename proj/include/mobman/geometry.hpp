#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <limits>

namespace mobman {

inline constexpr double kPi = std::numbers::pi;

constexpr double deg2rad(double deg) { return deg * kPi / 180.0; }
constexpr double rad2deg(double rad) { return rad * 180.0 / kPi; }

/// Wraps an angle into (-pi, pi].
inline double wrap_angle(double a) {
  double r = std::remainder(a, 2.0 * kPi);
  if (r <= -kPi) r += 2.0 * kPi;
  return r;
}

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  constexpr Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  constexpr Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  constexpr Vec2 operator*(double s) const { return {x * s, y * s}; }
  constexpr Vec2 operator-() const { return {-x, -y}; }
  constexpr bool operator==(const Vec2&) const = default;
  double norm() const { return std::hypot(x, y); }
  constexpr double squared_norm() const { return x * x + y * y; }
};

constexpr double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
constexpr double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline Vec2 rotate(Vec2 p, double a) {
  const double c = std::cos(a), s = std::sin(a);
  return {c * p.x - s * p.y, s * p.x + c * p.y};
}
inline Vec2 unit(double a) { return {std::cos(a), std::sin(a)}; }

/// Planar pose; theta is kept in (-pi, pi] by every operation here.
struct Pose2 {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;

  Pose2() = default;
  Pose2(double x_, double y_, double theta_) : x(x_), y(y_), theta(wrap_angle(theta_)) {}

  Vec2 position() const { return {x, y}; }
  bool operator==(const Pose2&) const = default;

  /// Maps a point from this pose's frame into the parent frame.
  Vec2 transform(Vec2 p) const {
    const double c = std::cos(theta), s = std::sin(theta);
    return {x + c * p.x - s * p.y, y + s * p.x + c * p.y};
  }
  /// Maps a parent-frame point into this pose's frame.
  Vec2 inverse_transform(Vec2 p) const {
    const double c = std::cos(theta), s = std::sin(theta);
    const double dx = p.x - x, dy = p.y - y;
    return {c * dx + s * dy, -s * dx + c * dy};
  }
  Pose2 compose(const Pose2& b) const {
    const Vec2 t = transform(b.position());
    return {t.x, t.y, theta + b.theta};
  }
  Pose2 inverse() const {
    const double c = std::cos(theta), s = std::sin(theta);
    return {-c * x - s * y, s * x - c * y, -theta};
  }
  /// Relative pose taking this frame to `b`: this.compose(result) == b.
  Pose2 between(const Pose2& b) const { return inverse().compose(b); }
  bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(theta); }
};

struct Segment {
  Vec2 a;
  Vec2 b;
  double length() const { return (b - a).norm(); }
  Vec2 midpoint() const { return (a + b) * 0.5; }
};

/// Distance from the ray origin to the first intersection with `s`, if any.
inline std::optional<double> ray_segment(Vec2 origin, Vec2 dir, const Segment& s) {
  const Vec2 e = s.b - s.a;
  const double denom = cross(dir, e);
  if (std::abs(denom) < 1e-15) return std::nullopt;
  const Vec2 w = s.a - origin;
  const double t = cross(w, e) / denom;
  const double u = cross(w, dir) / denom;
  if (t < 0.0 || u < 0.0 || u > 1.0) return std::nullopt;
  return t;
}

/// Entry distance into a disc; a ray starting inside the disc reports 0.
inline std::optional<double> ray_disc(Vec2 origin, Vec2 dir, Vec2 center, double radius) {
  const Vec2 oc = origin - center;
  const double b = dot(dir, oc);
  const double c = oc.squared_norm() - radius * radius;
  if (c <= 0.0) return 0.0;
  const double disc = b * b - c;
  if (disc < 0.0) return std::nullopt;
  const double t = -b - std::sqrt(disc);
  if (t < 0.0) return std::nullopt;
  return t;
}

inline double point_segment_distance(Vec2 p, const Segment& s) {
  const Vec2 e = s.b - s.a;
  const double len2 = e.squared_norm();
  double u = len2 > 0.0 ? dot(p - s.a, e) / len2 : 0.0;
  u = std::clamp(u, 0.0, 1.0);
  return (p - (s.a + e * u)).norm();
}

inline bool segments_intersect(const Segment& p, const Segment& q) {
  const Vec2 r = p.b - p.a, s = q.b - q.a;
  const double denom = cross(r, s);
  const Vec2 w = q.a - p.a;
  if (std::abs(denom) < 1e-15) {
    // Collinear overlap counts as contact.
    if (std::abs(cross(w, r)) > 1e-12) return false;
    const double rr = dot(r, r);
    if (rr == 0.0) return false;
    const double t0 = dot(w, r) / rr, t1 = t0 + dot(s, r) / rr;
    return std::max(t0, t1) >= 0.0 && std::min(t0, t1) <= 1.0;
  }
  const double t = cross(w, s) / denom;
  const double u = cross(w, r) / denom;
  return t >= 0.0 && t <= 1.0 && u >= 0.0 && u <= 1.0;
}

inline double segment_distance(const Segment& p, const Segment& q) {
  if (segments_intersect(p, q)) return 0.0;
  return std::min({point_segment_distance(p.a, q), point_segment_distance(p.b, q),
                   point_segment_distance(q.a, p), point_segment_distance(q.b, p)});
}

/// Corners of an axis-aligned rectangle (half extents) placed at `pose`, CCW.
inline std::array<Vec2, 4> rectangle_corners(const Pose2& pose, Vec2 half) {
  return {pose.transform({half.x, half.y}), pose.transform({-half.x, half.y}),
          pose.transform({-half.x, -half.y}), pose.transform({half.x, -half.y})};
}

/// Clearance between a posed rectangle and a segment; 0 on contact or containment.
inline double rectangle_segment_clearance(const Pose2& pose, Vec2 half, const Segment& s) {
  const Vec2 la = pose.inverse_transform(s.a), lb = pose.inverse_transform(s.b);
  auto inside = [&](Vec2 p) { return std::abs(p.x) <= half.x && std::abs(p.y) <= half.y; };
  if (inside(la) || inside(lb)) return 0.0;
  const auto c = rectangle_corners(Pose2{}, half);
  const Segment local{la, lb};
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < 4; ++i) {
    best = std::min(best, segment_distance(Segment{c[i], c[(i + 1) % 4]}, local));
  }
  return best;
}

}  // namespace mobman
