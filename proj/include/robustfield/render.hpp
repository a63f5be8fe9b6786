#pragma once

#include <cmath>
#include <vector>

#include "robustfield/camera.hpp"
#include "robustfield/common.hpp"
#include "robustfield/field.hpp"

namespace robustfield {

/// Samples stop once transmittance falls below this; the adjoint replays the
/// same truncated sample set.
inline constexpr double kTransmittanceCutoff = 1e-6;

/// Per-ray compositing record. Arrays hold only the samples that were
/// evaluated before the transmittance cutoff.
template <typename Real>
struct RenderSample {
  Vec3<Real> origin;
  Vec3<Real> direction;
  std::vector<Real> t;
  std::vector<Real> delta;
  std::vector<Real> sigma;
  std::vector<Vec3<Real>> rgb;
  std::vector<Real> alpha;
  std::vector<Real> transmittance;  // T_k before sample k
  Vec3<Real> background;
  Vec3<Real> color;
  Real final_transmittance = 1;

  [[nodiscard]] std::size_t size() const { return t.size(); }

  void clear() {
    t.clear();
    delta.clear();
    sigma.clear();
    rgb.clear();
    alpha.clear();
    transmittance.clear();
    color = {};
    final_transmittance = 1;
  }
};

/// Emission-absorption compositing along a ray. Samples sit at bin midpoints
/// of n_samples equal bins over [t_near, t_far], or at a uniform jitter
/// within each bin when `jitter` is given.
template <typename Real>
void render_pixel(const VoxelField<Real>& field, const Ray& ray, int n_samples, Rng* jitter,
                  const Vec3<Real>& background, RenderSample<Real>& out) {
  require(n_samples >= 1, "render_pixel: n_samples must be >= 1");
  out.clear();
  out.origin = Vec3<Real>(ray.origin);
  out.direction = Vec3<Real>(ray.direction);
  out.background = background;
  const auto basis = sh_basis(out.direction);

  Real trans = 1;
  Vec3<Real> color{};
  if (!ray.empty()) {
    const double bin = (ray.t_far - ray.t_near) / n_samples;
    const Real delta = static_cast<Real>(bin);
    for (int k = 0; k < n_samples; ++k) {
      const double offset = jitter ? jitter->uniform() : 0.5;
      const double tk = ray.t_near + (k + offset) * bin;
      const Vec3<Real> x(ray.at(tk));
      const FieldSample<Real> s = query_field_unchecked(field, x, basis);
      const Real alpha = Real(1) - std::exp(-s.sigma * delta);
      const Real weight = trans * alpha;
      out.t.push_back(static_cast<Real>(tk));
      out.delta.push_back(delta);
      out.sigma.push_back(s.sigma);
      out.rgb.push_back(s.rgb);
      out.alpha.push_back(alpha);
      out.transmittance.push_back(trans);
      color += s.rgb * weight;
      trans *= Real(1) - alpha;
      if (trans < static_cast<Real>(kTransmittanceCutoff)) break;
    }
  }
  out.final_transmittance = trans;
  out.color = color + background * trans;
}

template <typename Real>
RenderSample<Real> render_pixel(const VoxelField<Real>& field, const Ray& ray, int n_samples,
                                Rng* jitter, const Vec3<Real>& background) {
  RenderSample<Real> out;
  render_pixel(field, ray, n_samples, jitter, background, out);
  return out;
}

/// Reverse-mode pass for render_pixel: accumulates d(loss)/d(field) given
/// d(loss)/dC. The field must not change between the forward and this call.
template <typename Real>
void render_pixel_adjoint(const VoxelField<Real>& field, const RenderSample<Real>& rs,
                          const Vec3<Real>& d_color, FieldGradient<Real>& accum) {
  require(accum.matches(field), "render_pixel_adjoint: accumulator shape mismatch");
  if (d_color == Vec3<Real>{}) return;
  const auto basis = sh_basis(rs.direction);
  // suffix = sum_{j>k} w_j (c_j . dC) + T_final (bg . dC)
  Real suffix = rs.final_transmittance * dot(rs.background, d_color);
  for (std::size_t k = rs.size(); k-- > 0;) {
    const Real weight = rs.transmittance[k] * rs.alpha[k];
    const Real g = dot(rs.rgb[k], d_color);
    const Real trans_after = rs.transmittance[k] * (Real(1) - rs.alpha[k]);
    const Real d_sigma = rs.delta[k] * (trans_after * g - suffix);
    suffix += weight * g;
    const Vec3<Real> x = rs.origin + rs.direction * rs.t[k];
    query_field_adjoint_unchecked(field, x, basis, d_sigma, d_color * weight, accum);
  }
}

/// Full-frame deterministic (midpoint) render.
template <typename Real>
Image render_image(const VoxelField<Real>& field, const CameraModel& camera, int n_samples,
                   const Rgb& background, double min_near = kDefaultMinNear,
                   int workers = worker_count()) {
  camera.validate();
  Image img(camera.height, camera.width);
  parallel_chunks(static_cast<std::size_t>(camera.height), workers,
                  [&](int, std::size_t begin, std::size_t end) {
                    RenderSample<Real> rs;
                    for (std::size_t y = begin; y < end; ++y)
                      for (int x = 0; x < camera.width; ++x) {
                        const Ray ray = generate_ray(camera, x + 0.5, static_cast<double>(y) + 0.5,
                                                     field.bounds, min_near);
                        render_pixel(field, ray, n_samples, nullptr, Vec3<Real>(background), rs);
                        img(static_cast<int>(y), x) = Rgb(rs.color);
                      }
                  });
  return img;
}

}  // namespace robustfield
