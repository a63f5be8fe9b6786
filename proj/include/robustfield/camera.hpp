#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <utility>

#include "robustfield/common.hpp"

namespace robustfield {

/// Pinhole camera. Camera space looks down -z with +y up; pixel (u, v) has v
/// growing downward and pixel centers at half-integer coordinates.
struct CameraModel {
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
  int width = 1, height = 1;
  /// Camera-to-world, row-major 3x4: [R | t].
  std::array<double, 12> pose{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0};

  [[nodiscard]] Vec3d position() const { return {pose[3], pose[7], pose[11]}; }
  [[nodiscard]] Vec3d rotate(const Vec3d& v) const {
    return {pose[0] * v.x + pose[1] * v.y + pose[2] * v.z,
            pose[4] * v.x + pose[5] * v.y + pose[6] * v.z,
            pose[8] * v.x + pose[9] * v.y + pose[10] * v.z};
  }
  /// World-space optical axis (camera -z).
  [[nodiscard]] Vec3d forward() const { return rotate({0, 0, -1}); }

  /// Max |R^T R - I| entry.
  [[nodiscard]] double orthonormality_error() const {
    double err = 0.0;
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) {
        double s = 0.0;
        for (int k = 0; k < 3; ++k) s += pose[4 * k + a] * pose[4 * k + b];
        err = std::max(err, std::abs(s - (a == b ? 1.0 : 0.0)));
      }
    return err;
  }

  void validate() const {
    require(fx > 0 && fy > 0 && std::isfinite(fx) && std::isfinite(fy),
            "camera: focal lengths must be positive");
    require(width > 0 && height > 0, "camera: image dimensions must be positive");
    for (double p : pose) require(std::isfinite(p), "camera: non-finite pose entry");
    require(orthonormality_error() <= 1e-6, "camera: rotation is not orthonormal");
  }

  bool operator==(const CameraModel&) const = default;
};

/// Camera at `eye` looking at `target`, with `up` as the world up hint.
inline CameraModel look_at(const Vec3d& eye, const Vec3d& target, const Vec3d& up, double focal,
                           int width, int height) {
  const Vec3d fwd = normalized(target - eye);
  Vec3d right = cross(fwd, up);
  if (norm(right) < 1e-9) right = cross(fwd, Vec3d{1, 0, 0});
  right = normalized(right);
  const Vec3d cam_up = cross(right, fwd);
  const Vec3d back = -fwd;
  CameraModel cam;
  cam.fx = cam.fy = focal;
  cam.width = width;
  cam.height = height;
  cam.cx = 0.5 * width;
  cam.cy = 0.5 * height;
  cam.pose = {right.x, cam_up.x, back.x, eye.x, right.y, cam_up.y, back.y, eye.y,
              right.z, cam_up.z, back.z, eye.z};
  return cam;
}

struct Ray {
  Vec3d origin;
  Vec3d direction;
  double t_near = 0.0;
  double t_far = 0.0;

  [[nodiscard]] Vec3d at(double t) const { return origin + direction * t; }
  /// A ray that misses the volume carries an empty interval.
  [[nodiscard]] bool empty() const { return !(t_far > t_near); }
};

/// Slab test. Returns the parametric interval of the ray inside the box.
inline std::optional<std::pair<double, double>> intersect_box(const Vec3d& o, const Vec3d& d,
                                                              const Aabb& box) {
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-15) {
      if (o[a] < box.lo[a] || o[a] > box.hi[a]) return std::nullopt;
      continue;
    }
    double ta = (box.lo[a] - o[a]) / d[a];
    double tb = (box.hi[a] - o[a]) / d[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (t1 < t0) return std::nullopt;
  return std::make_pair(t0, t1);
}

inline constexpr double kDefaultMinNear = 0.05;

/// World-space ray through continuous pixel coordinates (u, v). The sampling
/// interval is the ray's overlap with `bounds`, starting no closer than
/// `min_near`; a ray that misses `bounds` gets an empty interval.
inline Ray generate_ray(const CameraModel& camera, double u, double v, const Aabb& bounds,
                        double min_near = kDefaultMinNear) {
  camera.validate();
  require(u >= 0 && u <= camera.width && v >= 0 && v <= camera.height,
          "generate_ray: pixel outside the image");
  const Vec3d local{(u - camera.cx) / camera.fx, -(v - camera.cy) / camera.fy, -1.0};
  Ray ray;
  ray.origin = camera.position();
  ray.direction = normalized(camera.rotate(normalized(local)));
  if (auto hit = intersect_box(ray.origin, ray.direction, bounds)) {
    ray.t_near = std::max(hit->first, min_near);
    ray.t_far = hit->second;
    if (ray.t_far <= ray.t_near) ray.t_near = ray.t_far = 0.0;
  }
  return ray;
}

}  // namespace robustfield
