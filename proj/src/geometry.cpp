#include "tprl/geometry.hpp"

#include <algorithm>
#include <limits>

namespace tprl {

double wrap_angle(double a) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  a = std::fmod(a, kTwoPi);
  if (a <= -std::numbers::pi) a += kTwoPi;
  if (a > std::numbers::pi) a -= kTwoPi;
  return a;
}

ReferencePath build_reference_path(std::span<const Vec2> waypoints,
                                   bool closed) {
  std::vector<Vec2> wp(waypoints.begin(), waypoints.end());
  // A closed loop may repeat its first point at the end.
  if (closed && wp.size() > 1 && wp.front() == wp.back()) wp.pop_back();
  if (wp.size() < 3) {
    throw GeometryError("reference path needs at least 3 distinct waypoints");
  }
  const std::size_t n_seg = closed ? wp.size() : wp.size() - 1;
  for (std::size_t i = 0; i < n_seg; ++i) {
    const Vec2 a = wp[i];
    const Vec2 b = wp[(i + 1) % wp.size()];
    if (norm(b - a) <= 1e-12) {
      throw GeometryError("duplicate consecutive waypoints at index " +
                          std::to_string(i));
    }
  }

  ReferencePath path;
  path.closed_ = closed;
  for (std::size_t i = 0; i < n_seg; ++i) {
    const Vec2 a = wp[i];
    const Vec2 b = wp[(i + 1) % wp.size()];
    const double len = norm(b - a);
    const auto pieces = static_cast<std::size_t>(
        std::max(1.0, std::ceil(len / ReferencePath::kMaxSpacing - 1e-9)));
    for (std::size_t k = 0; k < pieces; ++k) {
      const double u = static_cast<double>(k) / static_cast<double>(pieces);
      path.points_.push_back(a + u * (b - a));
    }
  }
  if (!closed) path.points_.push_back(wp.back());

  const std::size_t n = path.points_.size();
  path.arc_.assign(n, 0.0);
  for (std::size_t i = 1; i < n; ++i) {
    path.arc_[i] =
        path.arc_[i - 1] + norm(path.points_[i] - path.points_[i - 1]);
  }
  path.total_length_ =
      closed ? path.arc_.back() + norm(path.points_.front() - path.points_.back())
             : path.arc_.back();

  path.headings_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    Vec2 prev, nxt;
    if (closed) {
      prev = path.points_[(i + n - 1) % n];
      nxt = path.points_[(i + 1) % n];
    } else {
      prev = path.points_[i == 0 ? 0 : i - 1];
      nxt = path.points_[i + 1 == n ? n - 1 : i + 1];
    }
    const Vec2 t = nxt - prev;
    path.headings_[i] = std::atan2(t.y, t.x);
  }
  path.build_index();
  return path;
}

void ReferencePath::build_index() {
  double min_x = std::numeric_limits<double>::infinity(), min_y = min_x;
  double max_x = -min_x, max_y = -min_x;
  for (const Vec2& p : points_) {
    min_x = std::min(min_x, p.x);
    min_y = std::min(min_y, p.y);
    max_x = std::max(max_x, p.x);
    max_y = std::max(max_y, p.y);
  }
  const double extent = std::max(max_x - min_x, max_y - min_y);
  cell_ = std::max(0.25, extent / 64.0);
  grid_origin_ = {min_x - cell_, min_y - cell_};
  grid_nx_ = static_cast<int>((max_x - min_x) / cell_) + 3;
  grid_ny_ = static_cast<int>((max_y - min_y) / cell_) + 3;
  buckets_.assign(static_cast<std::size_t>(grid_nx_) * grid_ny_, {});
  for (std::size_t i = 0; i < points_.size(); ++i) {
    const int cx = static_cast<int>((points_[i].x - grid_origin_.x) / cell_);
    const int cy = static_cast<int>((points_[i].y - grid_origin_.y) / cell_);
    buckets_[static_cast<std::size_t>(cy) * grid_nx_ + cx].push_back(i);
  }
}

double ReferencePath::normalize_s(double s) const {
  if (closed_) {
    s = std::fmod(s, total_length_);
    if (s < 0.0) s += total_length_;
    if (s >= total_length_) s = 0.0;
    return s;
  }
  return std::clamp(s, 0.0, total_length_);
}

double ReferencePath::s_difference(double a, double b) const {
  double diff = a - b;
  if (!closed_) return diff;
  const double half = 0.5 * total_length_;
  diff = std::fmod(diff, total_length_);
  if (diff > half) diff -= total_length_;
  if (diff <= -half) diff += total_length_;
  return diff;
}

std::size_t ReferencePath::segment_index(double s) const {
  const auto it = std::upper_bound(arc_.begin(), arc_.end(), s);
  std::size_t idx = it == arc_.begin()
                        ? 0
                        : static_cast<std::size_t>(it - arc_.begin()) - 1;
  return std::min(idx, segment_count() - 1);
}

double ReferencePath::segment_length(std::size_t seg) const {
  return (seg + 1 == points_.size()) ? total_length_ - arc_[seg]
                                     : arc_[seg + 1] - arc_[seg];
}

double ReferencePath::segment_heading_delta(std::size_t seg) const {
  return wrap_angle(headings_[next(seg)] - headings_[seg]);
}

Pose2 ReferencePath::segment_pose(std::size_t seg, double u) const {
  const Vec2 a = points_[seg];
  const Vec2 b = points_[next(seg)];
  return {a + u * (b - a), headings_[seg] + u * segment_heading_delta(seg)};
}

Pose2 ReferencePath::pose_at(double s) const {
  s = normalize_s(s);
  const std::size_t seg = segment_index(s);
  const double u = (s - arc_[seg]) / segment_length(seg);
  Pose2 pose = segment_pose(seg, u);
  pose.heading = wrap_angle(pose.heading);
  return pose;
}

double ReferencePath::curvature_at(double s) const {
  const std::size_t seg = segment_index(normalize_s(s));
  return segment_heading_delta(seg) / segment_length(seg);
}

Pose2 ReferencePath::to_cartesian(FrenetCoord fc) const {
  const double s = normalize_s(fc.s);
  const std::size_t seg = segment_index(s);
  const double len = segment_length(seg);
  const double kappa = segment_heading_delta(seg) / len;
  if (std::abs(fc.d * kappa) >= 1.0) {
    throw GeometryError("lateral offset exceeds local radius of curvature");
  }
  const Pose2 base = segment_pose(seg, (s - arc_[seg]) / len);
  const Vec2 normal{-std::sin(base.heading), std::cos(base.heading)};
  return {base.position + fc.d * normal, wrap_angle(base.heading)};
}

namespace {

struct SegmentEval {
  double f;
  double df;
  Vec2 offset;
  Vec2 normal;
};

}  // namespace

FrenetCoord ReferencePath::project_from_vertex(Vec2 p,
                                               std::size_t nearest) const {
  // f(seg, u) = (p - P(u)) . T(u) vanishes at the foot point and decreases
  // along the path.
  auto eval = [&](std::size_t seg, double u) {
    const Vec2 a = points_[seg];
    const Vec2 delta = points_[next(seg)] - a;
    const double dtheta = segment_heading_delta(seg);
    const double theta = headings_[seg] + u * dtheta;
    const Vec2 t{std::cos(theta), std::sin(theta)};
    const Vec2 nrm{-t.y, t.x};
    const Vec2 off = p - (a + u * delta);
    return SegmentEval{dot(off, t), -dot(delta, t) + dot(off, nrm) * dtheta,
                       off, nrm};
  };
  auto finish = [&](std::size_t seg, double u) {
    const SegmentEval e = eval(seg, u);
    const double s = arc_[seg] + u * segment_length(seg);
    return FrenetCoord{closed_ ? normalize_s(s) : s, dot(e.offset, e.normal)};
  };
  auto solve = [&](std::size_t seg) {
    double lo = 0.0, hi = 1.0;
    double u = 0.5;
    for (int it = 0; it < 100; ++it) {
      const SegmentEval e = eval(seg, u);
      if (e.f > 0.0) {
        lo = u;
      } else {
        hi = u;
      }
      double cand = (e.df != 0.0) ? u - e.f / e.df : 0.5 * (lo + hi);
      if (!(cand > lo && cand < hi)) cand = 0.5 * (lo + hi);
      if (std::abs(cand - u) < 1e-15 || hi - lo < 1e-15) {
        u = cand;
        break;
      }
      u = cand;
    }
    return finish(seg, u);
  };

  const std::size_t nseg = segment_count();
  constexpr int kMaxWalk = 6;
  if (eval(nearest, 0.0).f >= 0.0 || (!closed_ && nearest == 0)) {
    std::size_t seg = nearest;
    for (int k = 0; k < kMaxWalk; ++k) {
      if (!closed_ && seg >= nseg) return finish(nseg - 1, 1.0);
      if (eval(seg, 0.0).f < 0.0) return finish(seg, 0.0);
      if (eval(seg, 1.0).f <= 0.0) return solve(seg);
      seg = closed_ ? next(seg) : seg + 1;
    }
  } else {
    std::size_t seg = nearest;
    for (int k = 0; k < kMaxWalk; ++k) {
      if (seg == 0 && !closed_) return finish(0, 0.0);
      seg = (seg == 0) ? nseg - 1 : seg - 1;
      if (eval(seg, 0.0).f >= 0.0) return solve(seg);
    }
  }
  return finish(std::min(nearest, nseg - 1), 0.0);
}

FrenetCoord ReferencePath::project(Vec2 p) const {
  std::size_t best = 0;
  double best_d2 = std::numeric_limits<double>::infinity();
  auto consider = [&](std::size_t i) {
    const Vec2 diff = points_[i] - p;
    const double d2 = dot(diff, diff);
    if (d2 < best_d2 || (d2 == best_d2 && i < best)) {
      best_d2 = d2;
      best = i;
    }
  };

  const double gx = (p.x - grid_origin_.x) / cell_;
  const double gy = (p.y - grid_origin_.y) / cell_;
  if (gx < 0.0 || gy < 0.0 || gx >= grid_nx_ || gy >= grid_ny_) {
    for (std::size_t i = 0; i < points_.size(); ++i) consider(i);
    return project_from_vertex(p, best);
  }
  const int cx = static_cast<int>(gx);
  const int cy = static_cast<int>(gy);
  const int max_ring = std::max(grid_nx_, grid_ny_);
  for (int r = 0; r <= max_ring; ++r) {
    for (int y = cy - r; y <= cy + r; ++y) {
      if (y < 0 || y >= grid_ny_) continue;
      const bool edge_row = (y == cy - r || y == cy + r);
      for (int x = cx - r; x <= cx + r; x += edge_row ? 1 : 2 * r) {
        if (x >= 0 && x < grid_nx_) {
          for (std::size_t i : buckets_[static_cast<std::size_t>(y) * grid_nx_ + x]) {
            consider(i);
          }
        }
        if (r == 0) break;
      }
    }
    // Every unvisited cell is at least r cells away from p's cell.
    const double bound = static_cast<double>(r) * cell_;
    if (best_d2 < std::numeric_limits<double>::infinity() &&
        bound * bound > best_d2) {
      break;
    }
  }
  return project_from_vertex(p, best);
}

FrenetCoord ReferencePath::project_near(Vec2 p, double s_hint,
                                        double window) const {
  if (window * 2.0 >= total_length_) return project(p);
  const double start = closed_ ? normalize_s(s_hint - window)
                               : std::max(0.0, s_hint - window);
  std::size_t i = segment_index(start);
  std::size_t best = i;
  double best_d2 = std::numeric_limits<double>::infinity();
  double travelled = 0.0;
  for (std::size_t k = 0; k < points_.size(); ++k) {
    const Vec2 diff = points_[i] - p;
    const double d2 = dot(diff, diff);
    if (d2 < best_d2) {
      best_d2 = d2;
      best = i;
    }
    if (travelled > 2.0 * window) break;
    if (!closed_ && i + 1 == points_.size()) break;
    travelled += segment_length(i);
    i = next(i);
  }
  return project_from_vertex(p, best);
}

const ReferencePath& TrackMap::lane(int index) const {
  if (index < 0 || index >= static_cast<int>(centerlines.size())) {
    throw GeometryError("lane index out of range: " + std::to_string(index));
  }
  return centerlines[static_cast<std::size_t>(index)];
}

std::pair<int, FrenetCoord> TrackMap::nearest_lane(Vec2 p) const {
  int best = 0;
  FrenetCoord best_fc;
  double best_abs = std::numeric_limits<double>::infinity();
  for (int k = 0; k < static_cast<int>(centerlines.size()); ++k) {
    const FrenetCoord fc = centerlines[static_cast<std::size_t>(k)].project(p);
    if (std::abs(fc.d) < best_abs) {
      best_abs = std::abs(fc.d);
      best = k;
      best_fc = fc;
    }
  }
  return {best, best_fc};
}

LaneDistances lane_boundary_distances(const TrackMap& map, FrenetCoord ego_fc,
                                      int lane) {
  if (lane < 0 || lane >= map.lane_count) {
    throw GeometryError("lane index out of range: " + std::to_string(lane));
  }
  const double half = 0.5 * map.lane_width;
  return {std::max(0.0, half - ego_fc.d), std::max(0.0, half + ego_fc.d)};
}

std::vector<RouteSegment> default_cross_route() {
  constexpr double kPi = std::numbers::pi;
  constexpr double kChicane = kPi / 6.0;
  const RouteSegment chicane[] = {
      RouteSegment::arc(2.0, -kChicane), RouteSegment::arc(2.0, 2 * kChicane),
      RouteSegment::arc(2.0, -kChicane)};
  std::vector<RouteSegment> route;
  for (int side = 0; side < 2; ++side) {
    route.push_back(RouteSegment::straight(2.0));
    route.insert(route.end(), std::begin(chicane), std::end(chicane));
    route.push_back(RouteSegment::straight(2.0));
    route.push_back(RouteSegment::arc(2.0, kPi));
  }
  return route;
}

TrackMap build_route_map(std::string name,
                         std::span<const RouteSegment> segments,
                         double lane_width, int lane_count) {
  if (!(lane_width > 0.0)) throw GeometryError("lane_width must be positive");
  if (lane_count < 2) throw GeometryError("lane_count must be at least 2");
  if (segments.empty()) throw GeometryError("route has no segments");
  constexpr double kSpacing = 0.04;

  TrackMap map;
  map.name = std::move(name);
  map.lane_width = lane_width;
  map.lane_count = lane_count;
  map.rightmost_lane_index = 0;

  for (int lane = 0; lane < lane_count; ++lane) {
    const double offset = lane * lane_width;
    Vec2 pos{0.0, offset};
    double heading = 0.0;
    std::vector<Vec2> pts;
    for (const RouteSegment& seg : segments) {
      if (seg.kind == RouteSegment::Kind::kStraight) {
        if (!(seg.length > 0.0)) {
          throw GeometryError("straight segment length must be positive");
        }
        const int pieces = static_cast<int>(std::ceil(seg.length / kSpacing));
        const Vec2 dir = unit_from_angle(heading);
        for (int k = 0; k < pieces; ++k) {
          pts.push_back(pos + (seg.length * k / pieces) * dir);
        }
        pos = pos + seg.length * dir;
      } else {
        if (!(seg.radius > 0.0) || seg.angle == 0.0) {
          throw GeometryError("arc segment needs positive radius and angle");
        }
        const double sign = seg.angle > 0.0 ? 1.0 : -1.0;
        const double radius = seg.radius - sign * offset;
        if (!(radius > 0.0)) {
          throw GeometryError("inner lane radius is not positive");
        }
        const Vec2 center =
            pos + (sign * radius) * Vec2{-std::sin(heading), std::cos(heading)};
        const double arc_len = radius * std::abs(seg.angle);
        const int pieces = static_cast<int>(std::ceil(arc_len / kSpacing));
        for (int k = 0; k < pieces; ++k) {
          const double th = heading + seg.angle * k / pieces;
          pts.push_back(center + (sign * radius) *
                                     Vec2{std::sin(th), -std::cos(th)});
        }
        heading += seg.angle;
        pos = center + (sign * radius) *
                           Vec2{std::sin(heading), -std::cos(heading)};
      }
    }
    const Vec2 start{0.0, offset};
    if (norm(pos - start) > 1e-6 || std::abs(wrap_angle(heading)) > 1e-9) {
      throw GeometryError("route does not close on itself");
    }
    map.centerlines.push_back(build_reference_path(pts, true));
  }
  return map;
}

TrackMap build_oval_map(const OvalParams& params) {
  if (!(params.straight_length > 0.0) || !(params.curve_radius > 0.0)) {
    throw GeometryError("oval dimensions must be positive");
  }
  const RouteSegment route[] = {
      RouteSegment::straight(params.straight_length),
      RouteSegment::arc(params.curve_radius, std::numbers::pi),
      RouteSegment::straight(params.straight_length),
      RouteSegment::arc(params.curve_radius, std::numbers::pi)};
  return build_route_map("oval", route, params.lane_width, params.lane_count);
}

TrackMap build_cross_map(const CrossParams& params) {
  const std::vector<RouteSegment> route =
      params.segments.empty() ? default_cross_route() : params.segments;
  return build_route_map("cross", route, params.lane_width, params.lane_count);
}

TrackMap build_waypoint_map(std::string name, std::span<const Vec2> waypoints,
                            bool closed, double lane_width, int lane_count) {
  if (!(lane_width > 0.0)) throw GeometryError("lane_width must be positive");
  if (lane_count < 2) throw GeometryError("lane_count must be at least 2");
  TrackMap map;
  map.name = std::move(name);
  map.lane_width = lane_width;
  map.lane_count = lane_count;
  ReferencePath ref = build_reference_path(waypoints, closed);
  for (int lane = 1; lane < lane_count; ++lane) {
    std::vector<Vec2> pts;
    pts.reserve(ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) {
      const double h = ref.headings()[i];
      pts.push_back(ref.points()[i] +
                    (lane * lane_width) * Vec2{-std::sin(h), std::cos(h)});
    }
    map.centerlines.push_back(build_reference_path(pts, closed));
  }
  map.centerlines.insert(map.centerlines.begin(), std::move(ref));
  return map;
}

}  // namespace tprl
