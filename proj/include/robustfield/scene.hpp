#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "robustfield/camera.hpp"
#include "robustfield/common.hpp"

namespace robustfield {

enum class ShapeKind { Sphere, Box };
enum class Difficulty { Easy, Medium, Hard, Custom };

inline std::string_view difficulty_name(Difficulty d) {
  switch (d) {
    case Difficulty::Easy: return "easy";
    case Difficulty::Medium: return "medium";
    case Difficulty::Hard: return "hard";
    case Difficulty::Custom: return "custom";
  }
  return "?";
}

inline Difficulty parse_difficulty(std::string_view name) {
  for (Difficulty d : {Difficulty::Easy, Difficulty::Medium, Difficulty::Hard, Difficulty::Custom})
    if (difficulty_name(d) == name) return d;
  throw InvalidArgument("unknown difficulty '" + std::string(name) + "'");
}

struct Primitive {
  ShapeKind shape = ShapeKind::Sphere;
  Vec3d center;
  /// Sphere: x holds the radius. Box: per-axis half extents.
  Vec3d size{0.1, 0.1, 0.1};
  Rgb albedo{0.5, 0.5, 0.5};
  bool is_distractor = false;

  [[nodiscard]] Vec3d half_extents() const {
    return shape == ShapeKind::Sphere ? Vec3d{size.x, size.x, size.x} : size;
  }
  [[nodiscard]] Aabb bounding_box() const {
    return {center - half_extents(), center + half_extents()};
  }
  [[nodiscard]] bool valid_size() const {
    return shape == ShapeKind::Sphere ? size.x > 0 : (size.x > 0 && size.y > 0 && size.z > 0);
  }

  bool operator==(const Primitive&) const = default;
};

struct SceneSpec {
  Aabb bounds{{-1.5, -1.5, -1.5}, {1.5, 1.5, 1.5}};
  std::vector<Primitive> statics;
  /// Templates; per frame only the size, shape and albedo are kept and the
  /// center is re-sampled.
  std::vector<Primitive> distractor_pool;
  Difficulty difficulty = Difficulty::Easy;
  Vec3d light_position{2.0, -1.5, 3.5};
  double ambient = 0.3;
  Rgb background{0.85, 0.88, 0.92};
  double clutter_fraction = 1.0;
  bool shadows = false;
  std::uint64_t seed = 0;
  /// Distance from the static centroid to every camera center.
  double camera_distance = 3.0;
  /// Distractor bounding boxes are placed inside this box.
  Aabb placement_region{{-1.5, -1.5, -1.5}, {1.5, 1.5, 1.5}};

  [[nodiscard]] Vec3d static_centroid() const {
    Vec3d c;
    for (const auto& p : statics) c += p.center;
    return statics.empty() ? c : c / static_cast<double>(statics.size());
  }

  void validate() const {
    require(bounds.valid(), "scene: degenerate bounds");
    require(!statics.empty(), "scene: at least one static primitive is required");
    require(clutter_fraction >= 0.0 && clutter_fraction <= 1.0,
            "scene: clutter_fraction must be in [0,1]");
    require(ambient >= 0.0 && ambient <= 1.0, "scene: ambient must be in [0,1]");
    for (const auto& p : statics) {
      require(p.valid_size(), "scene: static primitive with non-positive size");
      const Aabb b = p.bounding_box();
      require(bounds.contains(b.lo) && bounds.contains(b.hi), "scene: static outside bounds");
    }
    for (const auto& p : distractor_pool)
      require(p.valid_size(), "scene: distractor with non-positive size");
    require(camera_distance > 0.0, "scene: camera_distance must be > 0");
    require(placement_region.valid() && bounds.contains(placement_region.lo) &&
                bounds.contains(placement_region.hi),
            "scene: placement region must be a box inside the bounds");
  }

  bool operator==(const SceneSpec&) const = default;
};

/// Explicit distractor counts for Difficulty::Custom.
struct CustomDistractors {
  int count = 0;
  double size = 0.2;
};

namespace detail {

inline Primitive make_box(Vec3d c, Vec3d half, Rgb albedo) {
  return {ShapeKind::Box, c, half, albedo, false};
}
inline Primitive make_sphere(Vec3d c, double r, Rgb albedo) {
  return {ShapeKind::Sphere, c, {r, r, r}, albedo, false};
}

inline Rgb saturated_color(Rng& rng) {
  // Hue wheel sample with high saturation, kept clear of the static palette.
  const double h = rng.uniform() * 6.0;
  const double f = h - std::floor(h);
  const double lo = 0.1, hi = 0.95, mid_up = lo + (hi - lo) * f, mid_down = hi - (hi - lo) * f;
  switch (static_cast<int>(h)) {
    case 0: return {hi, mid_up, lo};
    case 1: return {mid_down, hi, lo};
    case 2: return {lo, hi, mid_up};
    case 3: return {lo, mid_down, hi};
    case 4: return {mid_up, lo, hi};
    default: return {hi, lo, mid_down};
  }
}

}  // namespace detail

/// Scene preset. Statics are fixed; the distractor pool grows in count and
/// size with difficulty (Easy 1 small, Medium 3 medium, Hard 6 large).
inline SceneSpec build_scene(Difficulty difficulty, std::uint64_t seed,
                             CustomDistractors custom = {}) {
  SceneSpec spec;
  spec.difficulty = difficulty;
  spec.seed = seed;
  // Floor slab (top at z = -0.55) carrying sofa, lamp, and bookshelf stand-ins.
  spec.statics = {
      detail::make_box({0.0, 0.0, -0.6}, {1.45, 1.45, 0.05}, {0.62, 0.6, 0.56}),
      detail::make_box({-0.45, 0.2, -0.35}, {0.5, 0.25, 0.2}, {0.75, 0.25, 0.2}),
      detail::make_sphere({0.55, -0.35, -0.23}, 0.32, {0.95, 0.85, 0.3}),
      detail::make_box({0.3, 0.6, 0.0}, {0.2, 0.15, 0.55}, {0.25, 0.45, 0.75}),
  };
  spec.placement_region = {{-1.2, -1.2, -0.53}, {1.2, 1.2, 1.3}};

  int count = 0;
  double size = 0.0;
  switch (difficulty) {
    case Difficulty::Easy: count = 1, size = 0.22; break;
    case Difficulty::Medium: count = 3, size = 0.21; break;
    case Difficulty::Hard: count = 6, size = 0.26; break;
    case Difficulty::Custom:
      require(custom.count >= 0 && custom.size > 0, "build_scene: invalid custom distractors");
      count = custom.count, size = custom.size;
      break;
  }
  spec.shadows = difficulty == Difficulty::Medium || difficulty == Difficulty::Hard;

  Rng rng = Rng(seed).fork(0x5CE7E);
  for (int i = 0; i < count; ++i) {
    Primitive p;
    p.shape = rng.uniform() < 0.5 ? ShapeKind::Sphere : ShapeKind::Box;
    const double s = size * rng.uniform(0.85, 1.15);
    p.size = p.shape == ShapeKind::Sphere
                 ? Vec3d{s, s, s}
                 : Vec3d{s * rng.uniform(0.7, 1.0), s * rng.uniform(0.7, 1.0), s * rng.uniform(0.7, 1.0)};
    p.albedo = detail::saturated_color(rng);
    p.is_distractor = true;
    spec.distractor_pool.push_back(p);
  }
  return spec;
}

// ---------------------------------------------------------------------------
// Reference ray tracing

struct SurfaceHit {
  double t = std::numeric_limits<double>::infinity();
  Vec3d normal;
  const Primitive* primitive = nullptr;
};

/// Nearest positive intersection with `p` beyond t_min.
inline std::optional<SurfaceHit> intersect(const Primitive& p, const Vec3d& o, const Vec3d& d,
                                           double t_min = 1e-9) {
  if (p.shape == ShapeKind::Sphere) {
    const Vec3d oc = o - p.center;
    const double b = dot(oc, d);
    const double c = dot(oc, oc) - p.size.x * p.size.x;
    const double disc = b * b - c * dot(d, d);
    if (disc < 0) return std::nullopt;
    const double sq = std::sqrt(disc);
    const double dd = dot(d, d);
    double t = (-b - sq) / dd;
    if (t <= t_min) t = (-b + sq) / dd;
    if (t <= t_min) return std::nullopt;
    return SurfaceHit{t, normalized(o + d * t - p.center), &p};
  }
  const Aabb box = p.bounding_box();
  double t0 = -std::numeric_limits<double>::infinity(), t1 = std::numeric_limits<double>::infinity();
  int axis0 = 0, axis1 = 0;
  for (int a = 0; a < 3; ++a) {
    const auto ua = static_cast<std::size_t>(a);
    if (std::abs(d[ua]) < 1e-15) {
      if (o[ua] < box.lo[ua] || o[ua] > box.hi[ua]) return std::nullopt;
      continue;
    }
    double ta = (box.lo[ua] - o[ua]) / d[ua], tb = (box.hi[ua] - o[ua]) / d[ua];
    if (ta > tb) std::swap(ta, tb);
    if (ta > t0) t0 = ta, axis0 = a;
    if (tb < t1) t1 = tb, axis1 = a;
  }
  if (t1 < t0) return std::nullopt;
  double t = t0;
  int axis = axis0;
  if (t <= t_min) t = t1, axis = axis1;
  if (t <= t_min) return std::nullopt;
  Vec3d n;
  const auto ua = static_cast<std::size_t>(axis);
  n[ua] = (o + d * t)[ua] > p.center[ua] ? 1.0 : -1.0;
  return SurfaceHit{t, n, &p};
}

/// A scene with one frame's distractor placement.
struct PlacedScene {
  const SceneSpec* spec = nullptr;
  std::vector<Primitive> distractors;
};

struct TraceResult {
  Rgb color;
  bool distractor = false;
};

inline std::optional<SurfaceHit> nearest_hit(const PlacedScene& scene, const Vec3d& o,
                                             const Vec3d& d) {
  std::optional<SurfaceHit> best;
  auto visit = [&](const Primitive& p) {
    if (auto h = intersect(p, o, d); h && (!best || h->t < best->t)) best = h;
  };
  for (const auto& p : scene.spec->statics) visit(p);
  for (const auto& p : scene.distractors) visit(p);
  return best;
}

/// Shades the first surface along a world ray. The distractor flag is set when
/// that surface is a distractor, or when its direct light is blocked only by
/// distractors (a transient shadow).
inline TraceResult trace_ray(const PlacedScene& scene, const Vec3d& origin, const Vec3d& dir) {
  const SceneSpec& spec = *scene.spec;
  const auto hit = nearest_hit(scene, origin, dir);
  if (!hit) return {spec.background, false};

  const Vec3d p = origin + dir * hit->t;
  const Vec3d to_light = spec.light_position - p;
  const double light_dist = norm(to_light);
  const Vec3d l = to_light / light_dist;
  const double lambert = std::max(0.0, dot(hit->normal, l));

  bool blocked_static = false, blocked_distractor = false;
  if (lambert > 0.0 && spec.ambient < 1.0) {
    const Vec3d so = p + hit->normal * 1e-7;
    for (const auto& q : spec.statics)
      if (auto h = intersect(q, so, l, 1e-9); h && h->t < light_dist) blocked_static = true;
    if (spec.shadows)
      for (const auto& q : scene.distractors)
        if (auto h = intersect(q, so, l, 1e-9); h && h->t < light_dist) blocked_distractor = true;
  }
  const double shadow = (blocked_static || blocked_distractor) ? 0.0 : 1.0;
  const double shade = spec.ambient + (1.0 - spec.ambient) * lambert * shadow;
  TraceResult out;
  out.color = hit->primitive->albedo * shade;
  out.distractor = hit->primitive->is_distractor || (blocked_distractor && !blocked_static);
  return out;
}

/// Ground-truth color and distractor flag at continuous pixel coordinates.
inline TraceResult trace_reference_pixel(const PlacedScene& scene, const CameraModel& camera,
                                         double u, double v) {
  camera.validate();
  require(u >= 0 && u <= camera.width && v >= 0 && v <= camera.height,
          "trace_reference_pixel: pixel outside the image");
  const Vec3d local{(u - camera.cx) / camera.fx, -(v - camera.cy) / camera.fy, -1.0};
  return trace_ray(scene, camera.position(), normalized(camera.rotate(normalized(local))));
}

struct ReferenceFrame {
  Image image;
  BinaryMask distractor_mask;  // 1 = distractor pixel
};

/// Supersampled (ss x ss per pixel) reference render. A pixel is flagged when
/// any of its subsamples is.
inline ReferenceFrame render_reference_frame(const PlacedScene& scene, const CameraModel& camera,
                                             int supersample = 2) {
  camera.validate();
  require(supersample >= 1, "render_reference_frame: supersample must be >= 1");
  ReferenceFrame out{Image(camera.height, camera.width), BinaryMask(camera.height, camera.width, 0)};
  const double inv = 1.0 / supersample;
  for (int y = 0; y < camera.height; ++y)
    for (int x = 0; x < camera.width; ++x) {
      Rgb acc;
      bool flag = false;
      for (int sy = 0; sy < supersample; ++sy)
        for (int sx = 0; sx < supersample; ++sx) {
          const auto r = trace_reference_pixel(scene, camera, x + (sx + 0.5) * inv,
                                               y + (sy + 0.5) * inv);
          acc += r.color;
          flag = flag || r.distractor;
        }
      out.image(y, x) = acc * (inv * inv);
      out.distractor_mask(y, x) = flag ? 1 : 0;
    }
  return out;
}

inline constexpr int kMaxPlacementAttempts = 10000;

namespace detail {

inline bool boxes_overlap(const Aabb& a, const Aabb& b, double margin) {
  return a.lo.x - margin < b.hi.x && b.lo.x - margin < a.hi.x && a.lo.y - margin < b.hi.y &&
         b.lo.y - margin < a.hi.y && a.lo.z - margin < b.hi.z && b.lo.z - margin < a.hi.z;
}

}  // namespace detail

/// Re-places every distractor template by rejection sampling inside the
/// placement region, avoiding statics and previously placed distractors. A
/// template that fails kPlacementRetries times restarts the whole layout; the
/// total number of candidate draws per frame is capped at kMaxPlacementAttempts.
inline constexpr int kPlacementRetries = 200;

inline std::vector<Primitive> place_distractors(const SceneSpec& spec, Rng& rng) {
  const double margin = 0.02;
  for (const Primitive& tmpl : spec.distractor_pool) {
    const Vec3d half = tmpl.half_extents();
    const Vec3d lo = spec.placement_region.lo + half + Vec3d{margin, margin, margin};
    const Vec3d hi = spec.placement_region.hi - half - Vec3d{margin, margin, margin};
    require(lo.x < hi.x && lo.y < hi.y && lo.z < hi.z, "place_distractors: distractor too large");
  }
  std::vector<Primitive> placed;
  int attempts = 0;
  while (placed.size() < spec.distractor_pool.size()) {
    const Primitive& tmpl = spec.distractor_pool[placed.size()];
    const Vec3d half = tmpl.half_extents();
    const Vec3d lo = spec.placement_region.lo + half + Vec3d{margin, margin, margin};
    const Vec3d hi = spec.placement_region.hi - half - Vec3d{margin, margin, margin};
    bool ok = false;
    for (int retry = 0; retry < kPlacementRetries && !ok; ++retry) {
      if (++attempts > kMaxPlacementAttempts)
        throw RuntimeFailure("distractor placement exceeded " + std::to_string(kMaxPlacementAttempts) +
                             " attempts");
      Primitive p = tmpl;
      p.center = {rng.uniform(lo.x, hi.x), rng.uniform(lo.y, hi.y), rng.uniform(lo.z, hi.z)};
      const Aabb box = p.bounding_box();
      ok = true;
      for (const auto& s : spec.statics) ok = ok && !detail::boxes_overlap(box, s.bounding_box(), margin);
      for (const auto& q : placed) ok = ok && !detail::boxes_overlap(box, q.bounding_box(), margin);
      if (ok) placed.push_back(p);
    }
    if (!ok) placed.clear();
  }
  return placed;
}

/// Camera on the upper hemisphere (world +z up) around the static centroid.
inline CameraModel sample_hemisphere_camera(const SceneSpec& spec, Rng& rng, int image_size) {
  const Vec3d target = spec.static_centroid();
  const double radius = spec.camera_distance;
  const double azimuth = rng.uniform(0.0, 2.0 * M_PI);
  const double elevation = rng.uniform(30.0, 70.0) * M_PI / 180.0;
  const Vec3d eye = target + Vec3d{std::cos(elevation) * std::cos(azimuth),
                                   std::cos(elevation) * std::sin(azimuth), std::sin(elevation)} *
                                 radius;
  const double fov = 40.0 * M_PI / 180.0;
  const double focal = 0.5 * image_size / std::tan(0.5 * fov);
  return look_at(eye, target, {0, 0, 1}, focal, image_size, image_size);
}

}  // namespace robustfield
