#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include "robustfield/common.hpp"
#include "robustfield/json_io.hpp"

namespace robustfield {

// Real spherical-harmonic constants for degrees 0 and 1.
inline constexpr double kShY0 = 0.28209479177387814;
inline constexpr double kShY1 = 0.4886025119029199;

template <typename Real>
Real softplus(Real x) {
  return x > Real(20) ? x : std::log1p(std::exp(x));
}

template <typename Real>
Real sigmoid(Real x) {
  return Real(1) / (Real(1) + std::exp(-x));
}

/// Inverse of softplus, for choosing raw values that yield a target density.
inline double softplus_inverse(double y) { return y > 20.0 ? y : std::log(std::expm1(y)); }

/// Density grid plus a spherical-harmonic color grid on the vertices of a
/// regular lattice spanning `bounds`. Voxel (ix, iy, iz) sits at linear index
/// (iz * ny + iy) * nx + ix; color coefficients are stored voxel-major as
/// [voxel][channel][sh].
template <typename Real>
struct VoxelField {
  std::array<int, 3> resolution{2, 2, 2};
  Aabb bounds{{-1, -1, -1}, {1, 1, 1}};
  int sh_degree = 1;
  std::vector<Real> density_raw;
  std::vector<Real> color_coeffs;

  [[nodiscard]] int n_sh() const { return (sh_degree + 1) * (sh_degree + 1); }
  [[nodiscard]] std::size_t voxel_count() const {
    return static_cast<std::size_t>(resolution[0]) * resolution[1] * resolution[2];
  }
  [[nodiscard]] std::size_t coeffs_per_voxel() const { return 3 * static_cast<std::size_t>(n_sh()); }
  [[nodiscard]] std::size_t index(int ix, int iy, int iz) const {
    return (static_cast<std::size_t>(iz) * resolution[1] + iy) * resolution[0] + ix;
  }
  [[nodiscard]] std::size_t parameter_count() const {
    return density_raw.size() + color_coeffs.size();
  }

  void validate() const {
    for (int r : resolution) require(r >= 2, "field: resolution must be >= 2 per axis");
    require(bounds.valid(), "field: degenerate bounds");
    require(sh_degree == 0 || sh_degree == 1, "field: sh_degree must be 0 or 1");
    require(density_raw.size() == voxel_count(), "field: density size mismatch");
    require(color_coeffs.size() == voxel_count() * coeffs_per_voxel(), "field: color size mismatch");
  }

  [[nodiscard]] bool all_finite() const {
    for (Real v : density_raw)
      if (!std::isfinite(v)) return false;
    for (Real v : color_coeffs)
      if (!std::isfinite(v)) return false;
    return true;
  }

  template <typename Other>
  [[nodiscard]] VoxelField<Other> cast() const {
    VoxelField<Other> out;
    out.resolution = resolution;
    out.bounds = bounds;
    out.sh_degree = sh_degree;
    out.density_raw.assign(density_raw.begin(), density_raw.end());
    out.color_coeffs.assign(color_coeffs.begin(), color_coeffs.end());
    return out;
  }

  bool operator==(const VoxelField&) const = default;
};

/// Additive accumulator shaped like a VoxelField.
template <typename Real>
struct FieldGradient {
  std::vector<Real> density_raw;
  std::vector<Real> color_coeffs;

  FieldGradient() = default;
  explicit FieldGradient(const VoxelField<Real>& f)
      : density_raw(f.density_raw.size(), Real(0)), color_coeffs(f.color_coeffs.size(), Real(0)) {}

  [[nodiscard]] bool matches(const VoxelField<Real>& f) const {
    return density_raw.size() == f.density_raw.size() && color_coeffs.size() == f.color_coeffs.size();
  }
  void zero() {
    std::fill(density_raw.begin(), density_raw.end(), Real(0));
    std::fill(color_coeffs.begin(), color_coeffs.end(), Real(0));
  }
  FieldGradient& operator+=(const FieldGradient& o) {
    require(o.density_raw.size() == density_raw.size() && o.color_coeffs.size() == color_coeffs.size(),
            "FieldGradient: shape mismatch");
    for (std::size_t i = 0; i < density_raw.size(); ++i) density_raw[i] += o.density_raw[i];
    for (std::size_t i = 0; i < color_coeffs.size(); ++i) color_coeffs[i] += o.color_coeffs[i];
    return *this;
  }
};

struct FieldInit {
  double density_raw = softplus_inverse(0.1);  // sigma = 0.1 per world unit
  double color = 0.0;                          // sigmoid(0) = 0.5
};

template <typename Real>
VoxelField<Real> create_field(std::array<int, 3> resolution, const Aabb& bounds, int sh_degree,
                              FieldInit init = {}) {
  for (int r : resolution) require(r >= 2, "create_field: resolution must be >= 2 per axis");
  require(bounds.valid(), "create_field: degenerate bounds");
  require(sh_degree == 0 || sh_degree == 1, "create_field: sh_degree must be 0 or 1");
  VoxelField<Real> f;
  f.resolution = resolution;
  f.bounds = bounds;
  f.sh_degree = sh_degree;
  f.density_raw.assign(f.voxel_count(), static_cast<Real>(init.density_raw));
  f.color_coeffs.assign(f.voxel_count() * f.coeffs_per_voxel(), static_cast<Real>(init.color));
  return f;
}

/// Corner indices and trilinear weights of the cell containing a point.
template <typename Real>
struct TrilinearCell {
  bool inside = false;
  std::array<std::size_t, 8> index{};
  std::array<Real, 8> weight{};
};

template <typename Real>
TrilinearCell<Real> locate(const VoxelField<Real>& f, const Vec3<Real>& x) {
  TrilinearCell<Real> cell;
  std::array<int, 3> i0{};
  std::array<Real, 3> frac{};
  for (std::size_t a = 0; a < 3; ++a) {
    const Real lo = static_cast<Real>(f.bounds.lo[a]);
    const Real hi = static_cast<Real>(f.bounds.hi[a]);
    const int n = f.resolution[a];
    const Real g = (x[a] - lo) / (hi - lo) * static_cast<Real>(n - 1);
    if (!(g >= Real(0) && g <= static_cast<Real>(n - 1))) return cell;
    const int i = std::min(static_cast<int>(g), n - 2);
    i0[a] = i;
    frac[a] = g - static_cast<Real>(i);
  }
  cell.inside = true;
  for (int c = 0; c < 8; ++c) {
    const int dx = c & 1, dy = (c >> 1) & 1, dz = (c >> 2) & 1;
    cell.index[static_cast<std::size_t>(c)] = f.index(i0[0] + dx, i0[1] + dy, i0[2] + dz);
    cell.weight[static_cast<std::size_t>(c)] = (dx ? frac[0] : Real(1) - frac[0]) *
                                               (dy ? frac[1] : Real(1) - frac[1]) *
                                               (dz ? frac[2] : Real(1) - frac[2]);
  }
  return cell;
}

/// SH basis values for a unit direction; entries past n_sh are unused.
template <typename Real>
std::array<Real, 4> sh_basis(const Vec3<Real>& d) {
  const auto y1 = static_cast<Real>(kShY1);
  return {static_cast<Real>(kShY0), y1 * d.y, y1 * d.z, y1 * d.x};
}

template <typename Real>
struct FieldSample {
  Real sigma = 0;
  Vec3<Real> rgb{Real(0.5), Real(0.5), Real(0.5)};
};

namespace detail {

template <typename Real>
void check_direction(const Vec3<Real>& d) {
  const double tol = sizeof(Real) < 8 ? 1e-5 : 1e-6;
  const double n2 = static_cast<double>(dot(d, d));
  require(std::abs(std::sqrt(n2) - 1.0) <= tol, "query_field: direction must be unit length");
}

}  // namespace detail

/// Density and color at a point; without direction validation (hot path).
template <typename Real>
FieldSample<Real> query_field_unchecked(const VoxelField<Real>& f, const Vec3<Real>& x,
                                        const std::array<Real, 4>& basis) {
  FieldSample<Real> out;
  const TrilinearCell<Real> cell = locate(f, x);
  if (!cell.inside) return out;
  const int nsh = f.n_sh();
  const std::size_t stride = f.coeffs_per_voxel();
  Real raw = 0;
  std::array<Real, 3> logit{0, 0, 0};
  for (std::size_t c = 0; c < 8; ++c) {
    const Real w = cell.weight[c];
    raw += w * f.density_raw[cell.index[c]];
    const Real* coeff = &f.color_coeffs[cell.index[c] * stride];
    for (int k = 0; k < 3; ++k) {
      Real s = 0;
      for (int j = 0; j < nsh; ++j) s += coeff[k * nsh + j] * basis[static_cast<std::size_t>(j)];
      logit[static_cast<std::size_t>(k)] += w * s;
    }
  }
  out.sigma = softplus(raw);
  out.rgb = {sigmoid(logit[0]), sigmoid(logit[1]), sigmoid(logit[2])};
  return out;
}

/// sigma(x) = softplus(trilinear raw density); c_k(x, d) = sigmoid(sum_j coeff_kj Y_j(d)).
/// Points outside the bounds have sigma = 0 and c = 0.5.
template <typename Real>
FieldSample<Real> query_field(const VoxelField<Real>& f, const Vec3<Real>& x, const Vec3<Real>& d) {
  detail::check_direction(d);
  return query_field_unchecked(f, x, sh_basis(d));
}

template <typename Real>
void query_field_adjoint_unchecked(const VoxelField<Real>& f, const Vec3<Real>& x,
                                   const std::array<Real, 4>& basis, Real d_sigma,
                                   const Vec3<Real>& d_rgb, FieldGradient<Real>& accum) {
  if (d_sigma == Real(0) && d_rgb == Vec3<Real>{}) return;
  const TrilinearCell<Real> cell = locate(f, x);
  if (!cell.inside) return;
  const int nsh = f.n_sh();
  const std::size_t stride = f.coeffs_per_voxel();
  Real raw = 0;
  std::array<Real, 3> logit{0, 0, 0};
  for (std::size_t c = 0; c < 8; ++c) {
    const Real w = cell.weight[c];
    raw += w * f.density_raw[cell.index[c]];
    const Real* coeff = &f.color_coeffs[cell.index[c] * stride];
    for (int k = 0; k < 3; ++k) {
      Real s = 0;
      for (int j = 0; j < nsh; ++j) s += coeff[k * nsh + j] * basis[static_cast<std::size_t>(j)];
      logit[static_cast<std::size_t>(k)] += w * s;
    }
  }
  const Real d_raw = d_sigma * sigmoid(raw);  // softplus' = sigmoid
  std::array<Real, 3> d_logit{};
  for (std::size_t k = 0; k < 3; ++k) {
    const Real c = sigmoid(logit[k]);
    d_logit[k] = d_rgb[k] * c * (Real(1) - c);
  }
  for (std::size_t c = 0; c < 8; ++c) {
    const Real w = cell.weight[c];
    accum.density_raw[cell.index[c]] += w * d_raw;
    Real* g = &accum.color_coeffs[cell.index[c] * stride];
    for (int k = 0; k < 3; ++k)
      for (int j = 0; j < nsh; ++j)
        g[k * nsh + j] += w * d_logit[static_cast<std::size_t>(k)] * basis[static_cast<std::size_t>(j)];
  }
}

/// Accumulates d(loss)/d(raw parameters) given upstream gradients on the
/// outputs of query_field at (x, d).
template <typename Real>
void query_field_adjoint(const VoxelField<Real>& f, const Vec3<Real>& x, const Vec3<Real>& d,
                         Real d_sigma, const Vec3<Real>& d_rgb, FieldGradient<Real>& accum) {
  detail::check_direction(d);
  require(accum.matches(f), "query_field_adjoint: accumulator shape mismatch");
  query_field_adjoint_unchecked(f, x, sh_basis(d), d_sigma, d_rgb, accum);
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr char kCheckpointMagic[8] = {'R', 'F', 'L', 'D', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void put_le(std::ostream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  in.read(reinterpret_cast<char*>(bytes), sizeof(T));
  if (in.gcount() != static_cast<std::streamsize>(sizeof(T))) throw LoadError("checkpoint truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace detail

inline std::filesystem::path checkpoint_sidecar(const std::filesystem::path& path) {
  auto p = path;
  p += ".json";
  return p;
}

/// Binary checkpoint: magic, version, resolution (3 x u32), bounds (6 x f64:
/// lo then hi), sh_degree (u32), then little-endian f32 density_raw followed
/// by color_coeffs. Metadata goes to a JSON sidecar at `<path>.json`.
template <typename Real>
void save_checkpoint(const VoxelField<Real>& f, const std::filesystem::path& path,
                     const Json& metadata = Json::object()) {
  f.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot open '" + path.string() + "' for writing");
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  for (int r : f.resolution) detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(r));
  for (std::size_t a = 0; a < 3; ++a) detail::put_le<double>(out, f.bounds.lo[a]);
  for (std::size_t a = 0; a < 3; ++a) detail::put_le<double>(out, f.bounds.hi[a]);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(f.sh_degree));
  for (Real v : f.density_raw) detail::put_le<float>(out, static_cast<float>(v));
  for (Real v : f.color_coeffs) detail::put_le<float>(out, static_cast<float>(v));
  if (!out) throw RuntimeFailure("write failed for '" + path.string() + "'");
  write_json_file(checkpoint_sidecar(path), metadata);
}

inline VoxelField<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("missing checkpoint '" + path.string() + "'");
  char magic[8];
  in.read(magic, sizeof magic);
  if (in.gcount() != 8 || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw LoadError("'" + path.string() + "' is not a field checkpoint");
  if (detail::get_le<std::uint32_t>(in) != kCheckpointVersion)
    throw LoadError("unsupported checkpoint version in '" + path.string() + "'");
  VoxelField<float> f;
  for (int& r : f.resolution) r = static_cast<int>(detail::get_le<std::uint32_t>(in));
  for (std::size_t a = 0; a < 3; ++a) f.bounds.lo[a] = detail::get_le<double>(in);
  for (std::size_t a = 0; a < 3; ++a) f.bounds.hi[a] = detail::get_le<double>(in);
  f.sh_degree = static_cast<int>(detail::get_le<std::uint32_t>(in));
  for (int r : f.resolution)
    if (r < 2 || r > 4096) throw LoadError("checkpoint: invalid resolution");
  if (f.sh_degree != 0 && f.sh_degree != 1) throw LoadError("checkpoint: invalid sh_degree");
  f.density_raw.resize(f.voxel_count());
  f.color_coeffs.resize(f.voxel_count() * f.coeffs_per_voxel());
  for (float& v : f.density_raw) v = detail::get_le<float>(in);
  for (float& v : f.color_coeffs) v = detail::get_le<float>(in);
  if (in.peek() != std::char_traits<char>::eof())
    throw LoadError("checkpoint: trailing bytes in '" + path.string() + "'");
  try {
    f.validate();
  } catch (const InvalidArgument& e) {
    throw LoadError(std::string("checkpoint: ") + e.what());
  }
  return f;
}

inline Json load_checkpoint_metadata(const std::filesystem::path& path) {
  const auto sidecar = checkpoint_sidecar(path);
  if (!std::filesystem::exists(sidecar)) return Json::object();
  return read_json_file(sidecar);
}

}  // namespace robustfield
