#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "robustfield/common.hpp"

namespace robustfield {

/// Per-pixel residual magnitudes, row-major.
using ResidualMap = Grid2<double>;

enum class MaskMode { TrimOnly, TrimDiffuse, Full };

inline std::string_view mask_mode_name(MaskMode m) {
  switch (m) {
    case MaskMode::TrimOnly: return "trim_only";
    case MaskMode::TrimDiffuse: return "trim_diffuse";
    case MaskMode::Full: return "full";
  }
  return "?";
}

inline MaskMode parse_mask_mode(std::string_view name) {
  for (MaskMode m : {MaskMode::TrimOnly, MaskMode::TrimDiffuse, MaskMode::Full})
    if (mask_mode_name(m) == name) return m;
  throw InvalidArgument("unknown mask mode '" + std::string(name) + "'");
}

struct MaskConfig {
  double trim_quantile = 0.5;
  double diffuse_threshold = 0.5;
  double patch_threshold = 0.6;
  int neighborhood = 16;
  int inner_patch = 8;
  MaskMode mode = MaskMode::Full;
  // Inner block becomes all-outlier (not just un-promoted) when the
  // neighborhood inlier mean is below patch_threshold.
  bool hard_patch_labeling = false;

  void validate() const {
    require(trim_quantile > 0.0 && trim_quantile <= 1.0, "mask: trim_quantile must be in (0,1]");
    require(diffuse_threshold >= 0.0 && diffuse_threshold <= 1.0,
            "mask: diffuse_threshold must be in [0,1]");
    require(patch_threshold >= 0.0 && patch_threshold <= 1.0,
            "mask: patch_threshold must be in [0,1]");
    require(neighborhood > 0 && inner_patch > 0, "mask: neighborhood and inner_patch must be > 0");
    require(inner_patch <= neighborhood, "mask: inner_patch must not exceed neighborhood");
    require((neighborhood - inner_patch) % 2 == 0,
            "mask: inner_patch must be centerable in the neighborhood");
  }

  /// First row/column of the centered inner block.
  [[nodiscard]] int inner_offset() const { return (neighborhood - inner_patch) / 2; }
};

/// Binary labels per stage; 1 = inlier.
struct InlierMask {
  BinaryMask trimmed;
  BinaryMask diffused;
  BinaryMask final;
  double threshold_used = 0.0;
};

/// Euclidean norm of the RGB difference at each pixel.
inline ResidualMap compute_residual_map(const Image& predicted, const Image& observed) {
  require(predicted.same_shape(observed), "compute_residual_map: dimension mismatch");
  ResidualMap out(predicted.height(), predicted.width());
  for (std::size_t i = 0; i < predicted.size(); ++i)
    out.values()[i] = norm(predicted.values()[i] - observed.values()[i]);
  return out;
}

/// 1-based nearest rank ceil(q * n), clamped to [1, n].
inline std::size_t nearest_rank(double quantile, std::size_t n) {
  // Shave a relative 1e-12 so products like 0.7 * 10 = 7.0000000000000009
  // land on the intended rank.
  const double scaled = quantile * static_cast<double>(n) * (1.0 - 1e-12);
  const auto rank = static_cast<std::size_t>(std::ceil(scaled));
  return std::clamp<std::size_t>(rank, 1, n);
}

/// Nearest-rank quantile of the residual population.
inline double trim_threshold(std::span<const double> residuals, double quantile) {
  require(!residuals.empty(), "trim_threshold: empty residual collection");
  require(quantile > 0.0 && quantile <= 1.0, "trim_threshold: quantile must be in (0,1]");
  std::vector<double> sorted(residuals.begin(), residuals.end());
  const std::size_t k = nearest_rank(quantile, sorted.size()) - 1;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k), sorted.end());
  return sorted[k];
}

namespace detail {

inline void validate_residuals(const ResidualMap& map) {
  require(map.height() > 0 && map.width() > 0, "residual map: dimensions must be > 0");
  for (double v : map.values())
    require(std::isfinite(v) && v >= 0.0, "residual map: values must be finite and >= 0");
}

/// Count of ones in each zero-padded 3x3 window (separable running sums).
inline Grid2<int> box3_counts(const BinaryMask& m) {
  const int h = m.height(), w = m.width();
  Grid2<int> rows(h, w, 0);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      int s = m(r, c);
      if (c > 0) s += m(r, c - 1);
      if (c + 1 < w) s += m(r, c + 1);
      rows(r, c) = s;
    }
  Grid2<int> out(h, w, 0);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      int s = rows(r, c);
      if (r > 0) s += rows(r - 1, c);
      if (r + 1 < h) s += rows(r + 1, c);
      out(r, c) = s;
    }
  return out;
}

}  // namespace detail

/// Runs the trim / diffuse / patch stages on one neighborhood map with a
/// precomputed residual threshold.
inline InlierMask robust_mask_with_threshold(const ResidualMap& residuals, double threshold,
                                             const MaskConfig& config) {
  config.validate();
  detail::validate_residuals(residuals);
  require(residuals.height() == config.neighborhood && residuals.width() == config.neighborhood,
          "compute_robust_mask: residual map must be neighborhood x neighborhood (" +
              std::to_string(config.neighborhood) + ")");
  const int n = config.neighborhood;

  InlierMask out;
  out.threshold_used = threshold;
  out.trimmed = BinaryMask(n, n, 0);
  for (std::size_t i = 0; i < residuals.size(); ++i)
    out.trimmed.values()[i] = residuals.values()[i] <= threshold ? 1 : 0;

  if (config.mode == MaskMode::TrimOnly) {
    out.diffused = out.trimmed;
    out.final = out.trimmed;
    return out;
  }

  const Grid2<int> counts = detail::box3_counts(out.trimmed);
  out.diffused = BinaryMask(n, n, 0);
  for (std::size_t i = 0; i < out.trimmed.size(); ++i) {
    const bool promote = static_cast<double>(counts.values()[i]) / 9.0 >= config.diffuse_threshold;
    out.diffused.values()[i] = (out.trimmed.values()[i] != 0 || promote) ? 1 : 0;
  }

  out.final = out.diffused;
  if (config.mode == MaskMode::TrimDiffuse) return out;

  int inliers = 0;
  for (std::uint8_t v : out.diffused.values()) inliers += v;
  const bool promote =
      static_cast<double>(inliers) / static_cast<double>(n * n) >= config.patch_threshold;
  const int off = config.inner_offset();
  for (int r = off; r < off + config.inner_patch; ++r)
    for (int c = off; c < off + config.inner_patch; ++c) {
      if (config.hard_patch_labeling)
        out.final(r, c) = promote ? 1 : 0;
      else
        out.final(r, c) = (out.diffused(r, c) != 0 || promote) ? 1 : 0;
    }
  return out;
}

/// Batch mask computation. The residual threshold is one quantile over every
/// pixel of every neighborhood in the batch.
inline std::vector<InlierMask> compute_robust_mask(std::span<const ResidualMap> batch,
                                                   const MaskConfig& config) {
  config.validate();
  require(!batch.empty(), "compute_robust_mask: empty batch");
  std::vector<double> all;
  for (const ResidualMap& m : batch) {
    detail::validate_residuals(m);
    require(m.height() == config.neighborhood && m.width() == config.neighborhood,
            "compute_robust_mask: residual map must be neighborhood x neighborhood (" +
                std::to_string(config.neighborhood) + ")");
    all.insert(all.end(), m.values().begin(), m.values().end());
  }
  const double threshold = trim_threshold(all, config.trim_quantile);
  std::vector<InlierMask> out;
  out.reserve(batch.size());
  for (const ResidualMap& m : batch) out.push_back(robust_mask_with_threshold(m, threshold, config));
  return out;
}

/// Whole-image labeling for visualization and mask-quality metrics: the
/// threshold is the quantile over the frame, and each inner_patch tile is
/// labeled from the neighborhood centered on it (edge pixels replicated).
inline BinaryMask robust_mask_for_frame(const ResidualMap& residuals, const MaskConfig& config) {
  config.validate();
  detail::validate_residuals(residuals);
  const double threshold = trim_threshold(residuals.values(), config.trim_quantile);
  const int h = residuals.height(), w = residuals.width();
  const int n = config.neighborhood, p = config.inner_patch, off = config.inner_offset();
  BinaryMask out(h, w, 0);
  ResidualMap crop(n, n);
  for (int tr = 0; tr < h; tr += p)
    for (int tc = 0; tc < w; tc += p) {
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c)
          crop(r, c) = residuals(std::clamp(tr - off + r, 0, h - 1), std::clamp(tc - off + c, 0, w - 1));
      const InlierMask m = robust_mask_with_threshold(crop, threshold, config);
      for (int r = 0; r < p && tr + r < h; ++r)
        for (int c = 0; c < p && tc + c < w; ++c) out(tr + r, tc + c) = m.final(off + r, off + c);
    }
  return out;
}

}  // namespace robustfield
