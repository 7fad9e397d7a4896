#ifndef TPRL_GEOMETRY_HPP_
#define TPRL_GEOMETRY_HPP_

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace tprl {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double k, Vec2 a) { return {k * a.x, k * a.y}; }
  friend bool operator==(Vec2 a, Vec2 b) = default;
};

inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }
inline Vec2 unit_from_angle(double theta) {
  return {std::cos(theta), std::sin(theta)};
}

// Wraps an angle into (-pi, pi].
double wrap_angle(double a);

struct Pose2 {
  Vec2 position;
  double heading = 0.0;
};

class GeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// s: arc length along the path; d: signed lateral offset, positive to the
// left of the direction of travel.
struct FrenetCoord {
  double s = 0.0;
  double d = 0.0;
};

// Densely resampled polyline with arc-length parameterization. Position is
// linear between samples and heading is linearly interpolated, which gives a
// continuous normal field so that projection and reconstruction are exact
// inverses away from the curvature centre.
class ReferencePath {
 public:
  static constexpr double kMaxSpacing = 0.05;

  ReferencePath() = default;

  const std::vector<Vec2>& points() const { return points_; }
  const std::vector<double>& arc_lengths() const { return arc_; }
  const std::vector<double>& headings() const { return headings_; }
  bool closed() const { return closed_; }
  double total_length() const { return total_length_; }
  std::size_t size() const { return points_.size(); }

  // Closed paths wrap s into [0, L); open paths clamp into [0, L].
  double normalize_s(double s) const;
  // Signed difference a - b, wrapped into (-L/2, L/2] on closed paths.
  double s_difference(double a, double b) const;

  Pose2 pose_at(double s) const;
  double curvature_at(double s) const;

  FrenetCoord project(Vec2 p) const;
  // Projection restricted to samples within `window` metres of `s_hint`.
  FrenetCoord project_near(Vec2 p, double s_hint, double window) const;
  Pose2 to_cartesian(FrenetCoord fc) const;

 private:
  friend ReferencePath build_reference_path(std::span<const Vec2> waypoints,
                                            bool closed);

  std::size_t segment_count() const {
    return closed_ ? points_.size() : points_.size() - 1;
  }
  std::size_t next(std::size_t i) const {
    return (i + 1 == points_.size()) ? 0 : i + 1;
  }
  std::size_t segment_index(double s) const;
  double segment_length(std::size_t seg) const;
  double segment_heading_delta(std::size_t seg) const;
  Pose2 segment_pose(std::size_t seg, double u) const;
  FrenetCoord project_from_vertex(Vec2 p, std::size_t nearest) const;
  void build_index();

  std::vector<Vec2> points_;
  std::vector<double> arc_;
  std::vector<double> headings_;
  bool closed_ = false;
  double total_length_ = 0.0;

  // Uniform bucket grid over the samples for nearest-vertex queries.
  double cell_ = 0.5;
  Vec2 grid_origin_;
  int grid_nx_ = 0;
  int grid_ny_ = 0;
  std::vector<std::vector<std::size_t>> buckets_;
};

ReferencePath build_reference_path(std::span<const Vec2> waypoints,
                                   bool closed);

inline FrenetCoord frenet_project(const ReferencePath& path, Vec2 p) {
  return path.project(p);
}
inline Pose2 frenet_to_cartesian(const ReferencePath& path, FrenetCoord fc) {
  return path.to_cartesian(fc);
}

struct TrackMap {
  std::string name;
  std::vector<ReferencePath> centerlines;
  double lane_width = 0.8;
  int lane_count = 2;
  // Lane indices grow to the left; lane 0 is the rightmost lane.
  int rightmost_lane_index = 0;

  const ReferencePath& lane(int index) const;
  const ReferencePath& reference() const { return centerlines.front(); }

  // Lane whose centerline is laterally nearest to p, and p's coordinates on it.
  std::pair<int, FrenetCoord> nearest_lane(Vec2 p) const;
};

struct LaneDistances {
  double left = 0.0;
  double right = 0.0;
};

// `ego_fc` is measured against the centerline of `lane`.
LaneDistances lane_boundary_distances(const TrackMap& map, FrenetCoord ego_fc,
                                      int lane);

// One piece of a turtle-drawn route. Arcs with positive angle turn left.
struct RouteSegment {
  enum class Kind { kStraight, kArc };
  Kind kind = Kind::kStraight;
  double length = 0.0;  // straights
  double radius = 0.0;  // arcs, measured on the rightmost lane centerline
  double angle = 0.0;   // arcs, signed radians

  static RouteSegment straight(double length) {
    return {Kind::kStraight, length, 0.0, 0.0};
  }
  static RouteSegment arc(double radius, double angle) {
    return {Kind::kArc, 0.0, radius, angle};
  }
};

struct OvalParams {
  double straight_length = 4.0;
  double curve_radius = 2.0;
  double lane_width = 0.8;
  int lane_count = 2;
};

struct CrossParams {
  std::vector<RouteSegment> segments;  // empty selects default_cross_route()
  double lane_width = 0.8;
  int lane_count = 2;
};

std::vector<RouteSegment> default_cross_route();

// Builds a closed multi-lane map from a route that must return to its start.
TrackMap build_route_map(std::string name,
                         std::span<const RouteSegment> segments,
                         double lane_width, int lane_count);
TrackMap build_oval_map(const OvalParams& params);
TrackMap build_cross_map(const CrossParams& params);
// Lanes are the reference waypoints offset leftwards by multiples of
// lane_width; the waypoints describe the rightmost lane.
TrackMap build_waypoint_map(std::string name, std::span<const Vec2> waypoints,
                            bool closed, double lane_width, int lane_count);

}  // namespace tprl

#endif  // TPRL_GEOMETRY_HPP_
