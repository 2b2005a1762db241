#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mobman/errors.hpp"
#include "mobman/geometry.hpp"
#include "mobman/world.hpp"

namespace mobman {

/// Immutable global point cloud with a uniform-cell spatial index.
class ReferenceMap {
 public:
  static constexpr double kDedupRadius = 0.01;

  ReferenceMap() = default;

  /// Points closer than kDedupRadius to an already accepted point are dropped,
  /// in input order.
  explicit ReferenceMap(const std::vector<Vec2>& raw, double cell_size = 0.25)
      : cell_(cell_size) {
    if (!(cell_size > 0.0)) throw ValidationError("map cell size must be positive");
    std::unordered_map<std::int64_t, std::vector<std::uint32_t>> voxels;
    auto key = [](std::int64_t ix, std::int64_t iy) { return (ix << 32) ^ (iy & 0xffffffff); };
    const double r2 = kDedupRadius * kDedupRadius;
    for (const Vec2& p : raw) {
      if (!std::isfinite(p.x) || !std::isfinite(p.y)) continue;
      const auto ix = static_cast<std::int64_t>(std::floor(p.x / kDedupRadius));
      const auto iy = static_cast<std::int64_t>(std::floor(p.y / kDedupRadius));
      bool dup = false;
      for (std::int64_t dx = -1; dx <= 1 && !dup; ++dx) {
        for (std::int64_t dy = -1; dy <= 1 && !dup; ++dy) {
          auto it = voxels.find(key(ix + dx, iy + dy));
          if (it == voxels.end()) continue;
          for (auto idx : it->second)
            if ((points_[idx] - p).squared_norm() < r2) {
              dup = true;
              break;
            }
        }
      }
      if (dup) continue;
      voxels[key(ix, iy)].push_back(static_cast<std::uint32_t>(points_.size()));
      points_.push_back(p);
    }
    build_index();
  }

  const std::vector<Vec2>& points() const { return points_; }
  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }
  double cell_size() const { return cell_; }

  /// Nearest map point within `radius`: (index, distance).
  std::optional<std::pair<std::size_t, double>> nearest(Vec2 p, double radius) const {
    if (points_.empty()) return std::nullopt;
    const auto [cx0, cy0] = cell_of({p.x - radius, p.y - radius});
    const auto [cx1, cy1] = cell_of({p.x + radius, p.y + radius});
    double best = radius * radius;
    std::size_t best_idx = points_.size();
    for (std::int64_t cy = std::max<std::int64_t>(cy0, 0); cy <= std::min<std::int64_t>(cy1, ny_ - 1); ++cy) {
      for (std::int64_t cx = std::max<std::int64_t>(cx0, 0); cx <= std::min<std::int64_t>(cx1, nx_ - 1); ++cx) {
        const std::size_t c = static_cast<std::size_t>(cy * nx_ + cx);
        for (std::uint32_t k = start_[c]; k < start_[c + 1]; ++k) {
          const double d2 = (sorted_[k] - p).squared_norm();
          if (d2 < best || (d2 == best && order_[k] < best_idx)) {
            best = d2;
            best_idx = order_[k];
          }
        }
      }
    }
    if (best_idx == points_.size()) return std::nullopt;
    return std::make_pair(best_idx, std::sqrt(best));
  }

  bool covers_all_points() const { return start_.empty() ? points_.empty() : start_.back() == points_.size(); }

 private:
  std::pair<std::int64_t, std::int64_t> cell_of(Vec2 p) const {
    return {static_cast<std::int64_t>(std::floor((p.x - origin_.x) / cell_)),
            static_cast<std::int64_t>(std::floor((p.y - origin_.y) / cell_))};
  }

  void build_index() {
    if (points_.empty()) return;
    Vec2 lo = points_.front(), hi = points_.front();
    for (const auto& p : points_) {
      lo = {std::min(lo.x, p.x), std::min(lo.y, p.y)};
      hi = {std::max(hi.x, p.x), std::max(hi.y, p.y)};
    }
    origin_ = lo;
    nx_ = static_cast<std::int64_t>(std::floor((hi.x - lo.x) / cell_)) + 1;
    ny_ = static_cast<std::int64_t>(std::floor((hi.y - lo.y) / cell_)) + 1;
    const std::size_t ncell = static_cast<std::size_t>(nx_ * ny_);
    start_.assign(ncell + 1, 0);
    std::vector<std::size_t> cell_index(points_.size());
    for (std::size_t i = 0; i < points_.size(); ++i) {
      const auto [cx, cy] = cell_of(points_[i]);
      cell_index[i] = static_cast<std::size_t>(cy * nx_ + cx);
      ++start_[cell_index[i] + 1];
    }
    for (std::size_t c = 0; c < ncell; ++c) start_[c + 1] += start_[c];
    sorted_.resize(points_.size());
    order_.resize(points_.size());
    std::vector<std::uint32_t> fill(start_.begin(), start_.end() - 1);
    for (std::size_t i = 0; i < points_.size(); ++i) {
      const auto k = fill[cell_index[i]]++;
      sorted_[k] = points_[i];
      order_[k] = static_cast<std::uint32_t>(i);
    }
  }

  std::vector<Vec2> points_;
  double cell_ = 0.25;
  Vec2 origin_;
  std::int64_t nx_ = 0, ny_ = 0;
  std::vector<std::uint32_t> start_;
  std::vector<Vec2> sorted_;
  std::vector<std::uint32_t> order_;
};

struct PosedScan {
  Scan scan;
  Pose2 pose;
};

/// Global-frame endpoints of every valid beam, deduplicated and indexed.
inline ReferenceMap build_reference_map(const std::vector<PosedScan>& scans,
                                        double cell_size = 0.25) {
  if (scans.empty()) throw ValidationError("build_reference_map: no scans");
  std::vector<Vec2> pts;
  for (const auto& ps : scans)
    for (std::size_t i = 0; i < ps.scan.size(); ++i)
      if (ps.scan.valid[i]) pts.push_back(ps.pose.transform(ps.scan.endpoint(i)));
  if (pts.empty()) throw ValidationError("build_reference_map: no valid beams");
  return ReferenceMap(pts, cell_size);
}

/// Least-squares rigid transform T minimising sum |T*src_i - dst_i|^2, in
/// closed form from the centroids and the 2x2 cross-covariance.
inline Pose2 solve_rigid_2d(const std::vector<Vec2>& src, const std::vector<Vec2>& dst) {
  if (src.size() != dst.size() || src.empty())
    throw ValidationError("solve_rigid_2d: need matching non-empty point sets");
  Vec2 cs, cd;
  for (std::size_t i = 0; i < src.size(); ++i) {
    cs = cs + src[i];
    cd = cd + dst[i];
  }
  const double inv = 1.0 / static_cast<double>(src.size());
  cs = cs * inv;
  cd = cd * inv;
  double sdot = 0.0, scross = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const Vec2 a = src[i] - cs, b = dst[i] - cd;
    sdot += dot(a, b);
    scross += cross(a, b);
  }
  const double th = std::atan2(scross, sdot);
  const Vec2 t = cd - rotate(cs, th);
  return {t.x, t.y, th};
}

struct IcpConfig {
  std::size_t max_iter = 100;
  double trim_fraction = 0.2;
  double tol_xy = 1e-5;
  double tol_theta = 1e-5;
  double gate_radius = 0.5;
  double inlier_threshold = 0.1;
  double rms_accept = 0.05;
  double min_inlier_fraction = 0.5;
  double min_match_fraction = 0.3;
  std::size_t min_valid_beams = 30;
  bool keep_diagnostics = false;
};

struct MatchResult {
  Pose2 pose;
  double rms = 0.0;
  double inlier_fraction = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  std::size_t valid_beams = 0;
  std::vector<double> cost_history;           // trimmed RMS, initial then per iteration
  std::vector<std::size_t> matched_beams;     // beam indices of the final kept set
};

/// Trimmed cost of placing body-frame points at `pose`: every point
/// contributes min(nearest distance, gate); the K = floor((1-trim)*n)
/// smallest contributions are kept.
struct TrimmedEvaluation {
  double rms = 0.0;
  std::size_t matched = 0;  // points with a neighbour inside the gate
  std::size_t inliers = 0;  // points within inlier_threshold
  std::vector<std::size_t> kept;  // indices (into the point list) of kept matched points
  std::vector<std::size_t> partner;
};

inline std::size_t trimmed_count(std::size_t n, double trim) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor((1.0 - trim) * static_cast<double>(n))));
}

inline TrimmedEvaluation evaluate_trimmed(const std::vector<Vec2>& body, const ReferenceMap& map,
                                          const Pose2& pose, const IcpConfig& cfg) {
  struct Item {
    double d;
    std::size_t i;
    std::size_t j;
    bool matched;
  };
  std::vector<Item> items(body.size());
  TrimmedEvaluation ev;
  for (std::size_t i = 0; i < body.size(); ++i) {
    const auto nn = map.nearest(pose.transform(body[i]), cfg.gate_radius);
    if (nn && nn->second < cfg.gate_radius) {
      items[i] = {nn->second, i, nn->first, true};
      ++ev.matched;
      if (nn->second <= cfg.inlier_threshold) ++ev.inliers;
    } else {
      items[i] = {cfg.gate_radius, i, 0, false};
    }
  }
  const std::size_t k = std::min(trimmed_count(body.size(), cfg.trim_fraction), items.size());
  std::nth_element(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(k - 1), items.end(),
                   [](const Item& a, const Item& b) { return a.d < b.d || (a.d == b.d && a.i < b.i); });
  double sum = 0.0;
  for (std::size_t n = 0; n < k; ++n) {
    sum += items[n].d * items[n].d;
    if (items[n].matched) {
      ev.kept.push_back(items[n].i);
      ev.partner.push_back(items[n].j);
    }
  }
  ev.rms = std::sqrt(sum / static_cast<double>(k));
  return ev;
}

/// Body-frame endpoints of valid beams and their beam indices.
inline std::pair<std::vector<Vec2>, std::vector<std::size_t>> valid_endpoints(const Scan& scan) {
  std::pair<std::vector<Vec2>, std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < scan.size(); ++i) {
    if (!scan.valid[i]) continue;
    out.first.push_back(scan.endpoint(i));
    out.second.push_back(i);
  }
  return out;
}

/// Trimmed point-to-point ICP of the valid beams of `scan` against `map`.
inline MatchResult icp_match(const Scan& scan, const ReferenceMap& map, const Pose2& initial,
                             const IcpConfig& cfg = {}) {
  if (!initial.finite()) throw ValidationError("icp_match: non-finite initial pose");
  const auto [body, beam_ids] = valid_endpoints(scan);
  if (body.size() < cfg.min_valid_beams)
    throw DegenerateScanError("icp_match: only " + std::to_string(body.size()) + " valid beams");
  if (map.empty()) throw LostError("icp_match: empty reference map");

  const double n = static_cast<double>(body.size());
  auto check_support = [&](const TrimmedEvaluation& ev) {
    if (static_cast<double>(ev.matched) < cfg.min_match_fraction * n || ev.kept.size() < 3)
      throw LostError("icp_match: " + std::to_string(ev.matched) + " of " + std::to_string(body.size()) +
                      " points inside the gating radius");
  };

  MatchResult res;
  res.valid_beams = body.size();
  Pose2 pose = initial;
  TrimmedEvaluation ev = evaluate_trimmed(body, map, pose, cfg);
  check_support(ev);
  res.cost_history.push_back(ev.rms);

  bool settled = false;
  std::vector<Vec2> src, dst;
  for (std::size_t it = 0; it < cfg.max_iter; ++it) {
    src.clear();
    dst.clear();
    for (std::size_t k = 0; k < ev.kept.size(); ++k) {
      src.push_back(body[ev.kept[k]]);
      dst.push_back(map.points()[ev.partner[k]]);
    }
    const Pose2 next = solve_rigid_2d(src, dst);
    const TrimmedEvaluation nev = evaluate_trimmed(body, map, next, cfg);
    check_support(nev);
    const double dxy = std::hypot(next.x - pose.x, next.y - pose.y);
    const double dth = std::abs(wrap_angle(next.theta - pose.theta));
    res.iterations = it + 1;
    if (nev.rms > ev.rms) {
      // Ties in the nearest-neighbour choice can leave the new pose no better;
      // keep the previous optimum.
      settled = true;
      break;
    }
    pose = next;
    ev = nev;
    res.cost_history.push_back(ev.rms);
    if (dxy < cfg.tol_xy && dth < cfg.tol_theta) {
      settled = true;
      break;
    }
  }

  res.pose = pose;
  res.rms = ev.rms;
  res.inlier_fraction = static_cast<double>(ev.inliers) / n;
  res.converged = settled && res.rms <= cfg.rms_accept && res.inlier_fraction >= cfg.min_inlier_fraction;
  if (cfg.keep_diagnostics)
    for (auto k : ev.kept) res.matched_beams.push_back(beam_ids[k]);
  return res;
}

/// Odometry-seeded match: the initial guess is prev.pose composed with odom_delta.
inline MatchResult track(const MatchResult& prev, const Pose2& odom_delta, const Scan& scan,
                         const ReferenceMap& map, const IcpConfig& cfg = {}) {
  if (!prev.converged) throw ValidationError("track: previous result did not converge");
  return icp_match(scan, map, prev.pose.compose(odom_delta), cfg);
}

/// Sequential localizer. A non-converged match or a degenerate scan keeps
/// the odometry prediction for that tick; two consecutive lost results
/// (gating failures) put the tracker into the lost state.
class Tracker {
 public:
  Tracker() = default;
  Tracker(const ReferenceMap* map, const Pose2& initial, IcpConfig cfg = {})
      : map_(map), cfg_(cfg) {
    last_.pose = initial;
    last_.converged = true;
  }

  const MatchResult& estimate() const { return last_; }
  bool lost() const { return lost_; }
  std::size_t lost_events() const { return lost_events_; }
  std::size_t consecutive_failures() const { return failures_; }
  std::size_t coasted_updates() const { return coasted_; }
  bool matched_last_update() const { return matched_; }
  const std::string& last_error() const { return last_error_; }

  const MatchResult& update(const Pose2& odom_delta, const Scan& scan) {
    const Pose2 predicted = last_.pose.compose(odom_delta);
    matched_ = false;
    if (lost_) {
      last_.pose = predicted;
      return last_;
    }
    try {
      MatchResult m = icp_match(scan, *map_, predicted, cfg_);
      failures_ = 0;
      if (m.converged) {
        last_ = std::move(m);
        matched_ = true;
        return last_;
      }
      last_error_ = "match did not converge";
    } catch (const LostError& e) {
      last_error_ = e.what();
      if (++failures_ >= 2) {
        lost_ = true;
        ++lost_events_;
        last_.pose = predicted;
        last_.converged = false;
        return last_;
      }
    } catch (const DegenerateScanError& e) {
      last_error_ = e.what();
    }
    ++coasted_;
    last_.pose = predicted;
    last_.converged = true;  // the prediction seeds the next match
    return last_;
  }

 private:
  const ReferenceMap* map_ = nullptr;
  IcpConfig cfg_;
  MatchResult last_;
  std::size_t failures_ = 0;
  std::size_t lost_events_ = 0;
  std::size_t coasted_ = 0;
  bool matched_ = false;
  bool lost_ = false;
  std::string last_error_;
};

// Map files: CSV text ("x,y" per line after a "# mobman-map" header) or a
// little-endian binary blob starting with the bytes "MMAP".
struct MapFile {
  std::vector<Vec2> points;
  std::uint64_t scenario_hash = 0;
};

inline void write_map_csv(const std::string& path, const ReferenceMap& map, std::uint64_t hash) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write map file: " + path);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
  out << "# mobman-map v1 scenario_hash=" << buf << " points=" << map.size() << "\n";
  for (const auto& p : map.points()) {
    std::snprintf(buf, sizeof buf, "%.6f,%.6f\n", p.x, p.y);
    out << buf;
  }
  if (!out) throw IoError("failed writing map file: " + path);
}

inline void write_map_binary(const std::string& path, const ReferenceMap& map, std::uint64_t hash) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write map file: " + path);
  const char magic[4] = {'M', 'M', 'A', 'P'};
  const std::uint32_t version = 1;
  const std::uint64_t count = map.size();
  out.write(magic, 4);
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  out.write(reinterpret_cast<const char*>(&hash), sizeof hash);
  out.write(reinterpret_cast<const char*>(&count), sizeof count);
  for (const auto& p : map.points()) {
    out.write(reinterpret_cast<const char*>(&p.x), sizeof p.x);
    out.write(reinterpret_cast<const char*>(&p.y), sizeof p.y);
  }
  if (!out) throw IoError("failed writing map file: " + path);
}

inline void write_map(const std::string& path, const ReferenceMap& map, std::uint64_t hash) {
  if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".bin") == 0)
    write_map_binary(path, map, hash);
  else
    write_map_csv(path, map, hash);
}

inline MapFile read_map(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open map file: " + path);
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  MapFile mf;
  if (content.size() >= 4 && content.compare(0, 4, "MMAP") == 0) {
    constexpr std::size_t header = 4 + 4 + 8 + 8;
    if (content.size() < header) throw ValidationError("map file truncated: " + path);
    std::uint64_t count = 0;
    std::memcpy(&mf.scenario_hash, content.data() + 8, 8);
    std::memcpy(&count, content.data() + 16, 8);
    if (content.size() != header + count * 16) throw ValidationError("map file size mismatch: " + path);
    mf.points.resize(count);
    for (std::uint64_t i = 0; i < count; ++i) {
      std::memcpy(&mf.points[i].x, content.data() + header + i * 16, 8);
      std::memcpy(&mf.points[i].y, content.data() + header + i * 16 + 8, 8);
    }
    return mf;
  }
  std::istringstream ss(content);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto pos = line.find("scenario_hash=");
      if (pos != std::string::npos) mf.scenario_hash = std::stoull(line.substr(pos + 14, 16), nullptr, 16);
      continue;
    }
    Vec2 p;
    if (std::sscanf(line.c_str(), "%lf,%lf", &p.x, &p.y) != 2)
      throw ValidationError("bad map line " + std::to_string(lineno) + " in " + path);
    mf.points.push_back(p);
  }
  return mf;
}

}  // namespace mobman
