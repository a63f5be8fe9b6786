#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <string_view>

#include "robustfield/common.hpp"

namespace robustfield {

/// Robust kernel family. The named smooth kinds are members of the general
/// adaptive (alpha) family: L2 at alpha=2, Charbonnier at 1, Cauchy at 0 and
/// Geman-McClure at -2. L1 is the non-smooth absolute value.
enum class KernelKind { L2, L1, Charbonnier, Cauchy, GemanMcClure, BarronGeneral };

struct KernelSpec {
  KernelKind kind = KernelKind::L2;
  double alpha = 2.0;  // BarronGeneral only
  double scale = 1.0;

  static KernelSpec named(KernelKind kind, double scale = 1.0) { return {kind, 2.0, scale}; }
  static KernelSpec barron(double alpha, double scale = 1.0) {
    return {KernelKind::BarronGeneral, alpha, scale};
  }
};

inline constexpr double kDefaultWeightFloor = 1e-8;

inline std::string_view kernel_name(KernelKind kind) {
  switch (kind) {
    case KernelKind::L2: return "l2";
    case KernelKind::L1: return "l1";
    case KernelKind::Charbonnier: return "charbonnier";
    case KernelKind::Cauchy: return "cauchy";
    case KernelKind::GemanMcClure: return "gemanmcclure";
    case KernelKind::BarronGeneral: return "barron";
  }
  return "?";
}

inline KernelKind parse_kernel_kind(std::string_view name) {
  for (KernelKind k : {KernelKind::L2, KernelKind::L1, KernelKind::Charbonnier, KernelKind::Cauchy,
                       KernelKind::GemanMcClure, KernelKind::BarronGeneral}) {
    if (kernel_name(k) == name) return k;
  }
  throw InvalidArgument("unknown kernel kind '" + std::string(name) + "'");
}

namespace detail {

inline void validate_kernel(double x, const KernelSpec& spec) {
  require(std::isfinite(x), "kernel: residual must be finite");
  require(x >= 0.0, "kernel: residual magnitude must be >= 0");
  require(std::isfinite(spec.scale) && spec.scale > 0.0, "kernel: scale must be > 0");
  if (spec.kind == KernelKind::BarronGeneral) {
    require(!std::isnan(spec.alpha), "kernel: alpha is NaN");
    require(spec.alpha != 2.0 && spec.alpha != 0.0,
            "kernel: alpha at a removable singularity (2 or 0); use the named L2/Cauchy kind");
    require(spec.alpha != std::numeric_limits<double>::infinity(), "kernel: alpha = +inf");
  }
}

}  // namespace detail

/// kappa(x): cost of a residual magnitude x >= 0.
inline double kernel_value(double x, const KernelSpec& spec) {
  detail::validate_kernel(x, spec);
  const double z = x / spec.scale;
  const double z2 = z * z;
  switch (spec.kind) {
    case KernelKind::L2: return 0.5 * z2;
    case KernelKind::L1: return z;
    case KernelKind::Charbonnier: return std::sqrt(z2 + 1.0) - 1.0;
    case KernelKind::Cauchy: return std::log1p(0.5 * z2);
    case KernelKind::GemanMcClure: return 2.0 * z2 / (z2 + 4.0);
    case KernelKind::BarronGeneral: {
      const double a = spec.alpha;
      if (std::isinf(a)) return -std::expm1(-0.5 * z2);  // Welsch limit
      const double b = std::abs(a - 2.0);
      return (b / a) * std::expm1(0.5 * a * std::log1p(z2 / b));
    }
  }
  return 0.0;
}

/// IRLS weight omega(x) = psi(x) / x. Smooth kinds use the closed form of the
/// quotient, which is finite at x = 0; L1 divides by max(x, floor).
inline double irls_weight(double x, const KernelSpec& spec, double floor = kDefaultWeightFloor) {
  detail::validate_kernel(x, spec);
  require(floor > 0.0, "irls_weight: floor must be > 0");
  const double c2 = spec.scale * spec.scale;
  const double z = x / spec.scale;
  const double z2 = z * z;
  switch (spec.kind) {
    case KernelKind::L2: return 1.0 / c2;
    case KernelKind::L1: return 1.0 / (spec.scale * std::max(x, floor));
    case KernelKind::Charbonnier: return 1.0 / (c2 * std::sqrt(z2 + 1.0));
    case KernelKind::Cauchy: return 1.0 / (c2 * (0.5 * z2 + 1.0));
    case KernelKind::GemanMcClure: {
      const double d = z2 + 4.0;
      return 16.0 / (c2 * d * d);
    }
    case KernelKind::BarronGeneral: {
      const double a = spec.alpha;
      if (std::isinf(a)) return std::exp(-0.5 * z2) / c2;
      const double b = std::abs(a - 2.0);
      return std::exp((0.5 * a - 1.0) * std::log1p(z2 / b)) / c2;
    }
  }
  return 0.0;
}

/// psi(x) = d kappa / dx, computed as x * irls_weight(x) so the IRLS identity
/// holds bit-for-bit for x >= floor. L1 below the floor returns its one-sided
/// slope 1/c.
inline double kernel_influence(double x, const KernelSpec& spec,
                               double floor = kDefaultWeightFloor) {
  const double w = irls_weight(x, spec, floor);
  if (spec.kind == KernelKind::L1 && x < floor) return 1.0 / spec.scale;
  return x * w;
}

}  // namespace robustfield
