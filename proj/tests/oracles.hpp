#pragma once

// Independent reference computations used to check the library. Nothing here
// calls the routines under test.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <utility>
#include <vector>

#include "mobman/geometry.hpp"

namespace oracle {

using mobman::Vec2;

/// Brute-force quasi-static tipping check. Each link is split into `pieces`
/// equal point masses; the base mass sits at the footprint centre and the
/// payload at the tip. The CoM must lie inside the support rectangle with
/// at least `margin` to every edge.
struct ArmModel {
  std::array<double, 3> links{0.30, 0.30, 0.291};
  double mass_arm = 7.0, mass_base = 17.0, payload = 0.0;
  Vec2 mount{0.0, 0.0};
  Vec2 half{0.254, 0.215};
};

inline Vec2 brute_force_com(const ArmModel& m, double yaw, const std::array<double, 3>& pitch, int pieces = 64) {
  const double total = m.links[0] + m.links[1] + m.links[2];
  double reach = 0.0, angle = 0.0;
  double moment = 0.0;
  for (int k = 0; k < 3; ++k) {
    angle += pitch[k];
    const double dm = m.mass_arm * (m.links[k] / total) / pieces;
    for (int j = 0; j < pieces; ++j) {
      const double s = (j + 0.5) / pieces * m.links[k];
      moment += dm * (reach + s * std::cos(angle));
    }
    reach += m.links[k] * std::cos(angle);
  }
  moment += m.payload * reach;
  const double M = m.mass_base + m.mass_arm + m.payload;
  const double h = moment / M;
  const Vec2 dir{std::cos(yaw), std::sin(yaw)};
  // Offsets of the arm and payload act from the mount point.
  const double arm_share = (m.mass_arm + m.payload) / M;
  return {m.mount.x * arm_share + dir.x * h, m.mount.y * arm_share + dir.y * h};
}

/// Signed distance from p to the boundary of the convex polygon (positive inside).
inline double polygon_margin(const std::vector<Vec2>& poly, Vec2 p) {
  double best = std::numeric_limits<double>::infinity();
  bool inside = true;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Vec2 a = poly[i], b = poly[(i + 1) % poly.size()];
    const Vec2 e = b - a;
    const double side = mobman::cross(e, p - a) / e.norm();  // counter-clockwise polygon
    if (side < 0.0) inside = false;
    best = std::min(best, std::abs(side));
  }
  return inside ? best : -best;
}

inline bool brute_force_stable(const ArmModel& m, double yaw, const std::array<double, 3>& pitch, double margin) {
  const std::vector<Vec2> rect{{-m.half.x, -m.half.y}, {m.half.x, -m.half.y}, {m.half.x, m.half.y}, {-m.half.x, m.half.y}};
  return polygon_margin(rect, brute_force_com(m, yaw, pitch)) >= margin;
}

/// Payload p with zero margin at horizontal full extension along the long
/// axis, from the moment balance m_arm*L/2 + p*L = hx*(m_base + m_arm + p).
inline double tipping_payload(const ArmModel& m) {
  const double L = m.links[0] + m.links[1] + m.links[2];
  // Arm mass is proportional to length, so its CoM sits at L/2.
  return (m.half.x * (m.mass_base + m.mass_arm) - m.mass_arm * L / 2.0) / (L - m.half.x);
}

/// Nearest-neighbour lookup on a hashed grid of map points.
class PointGrid {
 public:
  PointGrid(const std::vector<Vec2>& pts, double cell) : cell_(cell) {
    for (const auto& p : pts) cells_[key(p)].push_back(p);
  }

  /// Distance to the nearest point, or `cap` if none lies within it.
  double nearest(Vec2 p, double cap) const {
    const auto [cx, cy] = key(p);
    double best = cap;
    const int reach = static_cast<int>(std::ceil(cap / cell_));
    for (int r = 0; r <= reach; ++r) {
      if ((r - 1) * cell_ > best) break;
      for (int dx = -r; dx <= r; ++dx)
        for (int dy = -r; dy <= r; ++dy) {
          if (std::max(std::abs(dx), std::abs(dy)) != r) continue;
          auto it = cells_.find({cx + dx, cy + dy});
          if (it == cells_.end()) continue;
          for (const auto& q : it->second) best = std::min(best, (q - p).norm());
        }
    }
    return best;
  }

 private:
  std::pair<long, long> key(Vec2 p) const {
    return {static_cast<long>(std::floor(p.x / cell_)), static_cast<long>(std::floor(p.y / cell_))};
  }
  double cell_;
  std::map<std::pair<long, long>, std::vector<Vec2>> cells_;
};

/// RMS of the K = floor((1 - trim) * n) smallest capped residuals at pose (x, y, th).
inline double trimmed_cost(const std::vector<Vec2>& body, const PointGrid& grid, double x, double y, double th,
                           double trim, double gate) {
  const double c = std::cos(th), s = std::sin(th);
  std::vector<double> d(body.size());
  for (std::size_t i = 0; i < body.size(); ++i) {
    const Vec2 w{x + c * body[i].x - s * body[i].y, y + s * body[i].x + c * body[i].y};
    d[i] = grid.nearest(w, gate);
  }
  const auto k = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor((1.0 - trim) * d.size())));
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k - 1), d.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) sum += d[i] * d[i];
  return std::sqrt(sum / static_cast<double>(k));
}

struct GridMin {
  double x, y, th, cost;
};

/// Exhaustive search over a (2n+1)^3 lattice; each further level searches a
/// lattice spanning two steps of the previous one around its best node.
inline GridMin grid_search(const std::vector<Vec2>& body, const PointGrid& grid, GridMin centre, double half_xy,
                           double half_th, int n, int levels, double trim, double gate) {
  GridMin best = centre;
  best.cost = std::numeric_limits<double>::infinity();
  for (int level = 0; level < levels; ++level) {
    const double sxy = half_xy / n, sth = half_th / n;
    const GridMin c = level == 0 ? centre : best;
    for (int i = -n; i <= n; ++i)
      for (int j = -n; j <= n; ++j)
        for (int k = -n; k <= n; ++k) {
          const double x = c.x + i * sxy, y = c.y + j * sxy, th = c.th + k * sth;
          const double v = trimmed_cost(body, grid, x, y, th, trim, gate);
          if (v < best.cost) best = {x, y, th, v};
        }
    half_xy = 2.0 * sxy;
    half_th = 2.0 * sth;
  }
  return best;
}

}  // namespace oracle
