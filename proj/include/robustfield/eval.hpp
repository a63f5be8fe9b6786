#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "robustfield/common.hpp"
#include "robustfield/dataset.hpp"
#include "robustfield/field.hpp"
#include "robustfield/mask.hpp"
#include "robustfield/render.hpp"

namespace robustfield {

/// 10 log10(1 / MSE) over all channels; +inf for identical images.
inline double compute_psnr(const Image& a, const Image& b) {
  require(a.same_shape(b), "compute_psnr: shape mismatch");
  require(!a.empty(), "compute_psnr: empty images");
  double sse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Rgb d = a.values()[i] - b.values()[i];
    sse += dot(d, d);
  }
  const double mse = sse / (3.0 * static_cast<double>(a.size()));
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

inline Grid2<double> to_gray(const Image& img) {
  Grid2<double> g(img.height(), img.width());
  for (std::size_t i = 0; i < img.size(); ++i) {
    const Rgb& c = img.values()[i];
    g.values()[i] = (c.x + c.y + c.z) / 3.0;
  }
  return g;
}

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

/// Structural similarity on channel-mean grayscale: 11x11 Gaussian window
/// (sigma 1.5), K1 = 0.01, K2 = 0.03, dynamic range 1, averaged over every
/// window position that lies fully inside the image.
inline double compute_ssim(const Image& a, const Image& b) {
  require(a.same_shape(b), "compute_ssim: shape mismatch");
  require(a.height() >= kSsimWindow && a.width() >= kSsimWindow,
          "compute_ssim: images smaller than the 11x11 window");
  const Grid2<double> x = to_gray(a), y = to_gray(b);
  std::array<double, kSsimWindow> g{};
  double gsum = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double d = i - kSsimWindow / 2;
    g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
    gsum += g[static_cast<std::size_t>(i)];
  }
  for (double& v : g) v /= gsum;

  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0.0;
  std::size_t count = 0;
  for (int r = 0; r + kSsimWindow <= a.height(); ++r)
    for (int c = 0; c + kSsimWindow <= a.width(); ++c) {
      double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
      for (int i = 0; i < kSsimWindow; ++i)
        for (int j = 0; j < kSsimWindow; ++j) {
          const double w = g[static_cast<std::size_t>(i)] * g[static_cast<std::size_t>(j)];
          const double vx = x(r + i, c + j), vy = y(r + i, c + j);
          mx += w * vx;
          my += w * vy;
          sxx += w * vx * vx;
          syy += w * vy * vy;
          sxy += w * vx * vy;
        }
      const double vx = sxx - mx * mx, vy = syy - my * my, cov = sxy - mx * my;
      total += ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  return total / static_cast<double>(count);
}

struct MaskMetrics {
  double precision = 1.0;
  double recall = 1.0;
  double iou = 1.0;
};

/// Set metrics of the outlier class: predicted outliers are the zeros of the
/// inlier mask, true outliers the ones of the oracle distractor mask.
inline MaskMetrics compute_mask_metrics(const BinaryMask& predicted_inliers,
                                        const BinaryMask& oracle_distractors) {
  require(predicted_inliers.same_shape(oracle_distractors), "compute_mask_metrics: shape mismatch");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < predicted_inliers.size(); ++i) {
    const bool pred = predicted_inliers.values()[i] == 0;
    const bool truth = oracle_distractors.values()[i] != 0;
    tp += pred && truth;
    fp += pred && !truth;
    fn += !pred && truth;
  }
  MaskMetrics m;
  if (tp + fp > 0) m.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  if (tp + fn > 0) m.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  if (tp + fp + fn > 0) m.iou = static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
  return m;
}

// ---------------------------------------------------------------------------
// Checkpoint evaluation

struct MetricsRow {
  std::string frame;  // frame id, or "mean" for the aggregate
  std::string split;
  double psnr = 0.0;
  double ssim = 0.0;
  std::optional<MaskMetrics> mask;
};

struct EvalOptions {
  int n_samples = 64;
  bool include_train = false;  // adds train rows with mask metrics vs oracle
  MaskConfig mask;
  int workers = worker_count();
};

template <typename Real>
Image render_frame(const VoxelField<Real>& field, const FrameRecord& frame, int n_samples,
                   const Rgb& background, int workers = worker_count()) {
  return render_image(field, frame.camera, n_samples, background, kDefaultMinNear, workers);
}

/// Full-frame predicted inlier mask for a training frame.
template <typename Real>
BinaryMask frame_inlier_mask(const VoxelField<Real>& field, const FrameRecord& frame,
                             const MaskConfig& mask, int n_samples, const Rgb& background,
                             int workers = worker_count()) {
  const Image pred = render_frame(field, frame, n_samples, background, workers);
  return robust_mask_for_frame(compute_residual_map(pred, frame.image), mask);
}

namespace detail {

inline std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace detail

/// Per-frame metrics for the eval split (plus train frames when requested),
/// followed by one aggregate "mean" row per split.
template <typename Real>
std::vector<MetricsRow> evaluate_field(const VoxelField<Real>& field, const Dataset& ds,
                                       const EvalOptions& opt) {
  std::vector<MetricsRow> rows;
  auto run_split = [&](Split split) {
    const auto frames = ds.split(split);
    std::vector<MetricsRow> part(frames.size());
    for (std::size_t i = 0; i < frames.size(); ++i) {
      const FrameRecord& f = *frames[i];
      const Image pred = render_frame(field, f, opt.n_samples, ds.scene.background, opt.workers);
      MetricsRow row;
      row.frame = std::to_string(f.id);
      row.split = std::string(split_name(split));
      row.psnr = compute_psnr(pred, f.image);
      row.ssim = compute_ssim(pred, f.image);
      if (split == Split::Train && f.oracle_mask) {
        const BinaryMask inliers =
            robust_mask_for_frame(compute_residual_map(pred, f.image), opt.mask);
        row.mask = compute_mask_metrics(inliers, *f.oracle_mask);
      }
      part[i] = row;
    }
    MetricsRow mean;
    mean.frame = "mean";
    mean.split = std::string(split_name(split));
    MaskMetrics mm{0, 0, 0};
    for (const auto& r : part) {
      mean.psnr += r.psnr;
      mean.ssim += r.ssim;
      if (r.mask) {
        mm.precision += r.mask->precision;
        mm.recall += r.mask->recall;
        mm.iou += r.mask->iou;
      }
    }
    const auto n = static_cast<double>(part.size());
    mean.psnr /= n;
    mean.ssim /= n;
    if (split == Split::Train) mean.mask = MaskMetrics{mm.precision / n, mm.recall / n, mm.iou / n};
    rows.insert(rows.end(), part.begin(), part.end());
    rows.push_back(mean);
  };
  run_split(Split::Eval);
  if (opt.include_train) run_split(Split::Train);
  return rows;
}

inline constexpr const char* kEvalCsvHeader = "frame,split,psnr,ssim,mask_precision,mask_recall,mask_iou";

inline void write_eval_csv(const std::vector<MetricsRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot open '" + path.string() + "' for writing");
  out << kEvalCsvHeader << '\n';
  for (const auto& r : rows) {
    out << r.frame << ',' << r.split << ',' << detail::format_double(r.psnr) << ','
        << detail::format_double(r.ssim) << ',';
    if (r.mask)
      out << detail::format_double(r.mask->precision) << ',' << detail::format_double(r.mask->recall)
          << ',' << detail::format_double(r.mask->iou);
    else
      out << ",,";
    out << '\n';
  }
  if (!out) throw RuntimeFailure("write failed for '" + path.string() + "'");
}

/// Mean eval-split PSNR, the headline number of a run.
template <typename Real>
double mean_eval_psnr(const VoxelField<Real>& field, const Dataset& ds, int n_samples,
                      int workers = worker_count()) {
  double total = 0.0;
  const auto frames = ds.split(Split::Eval);
  for (const FrameRecord* f : frames)
    total += compute_psnr(render_frame(field, *f, n_samples, ds.scene.background, workers), f->image);
  return total / static_cast<double>(frames.size());
}

// ---------------------------------------------------------------------------
// Residual histograms

struct Histogram {
  std::vector<double> edges;  // bins + 1
  std::vector<std::size_t> counts;

  [[nodiscard]] std::size_t total() const {
    std::size_t n = 0;
    for (auto c : counts) n += c;
    return n;
  }
  [[nodiscard]] double median() const {
    const std::size_t n = total();
    if (n == 0) return 0.0;
    std::size_t acc = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
      acc += counts[i];
      if (2 * acc >= n) return 0.5 * (edges[i] + edges[i + 1]);
    }
    return edges.back();
  }
};

struct ResidualHistograms {
  Histogram distractor;
  Histogram clean;
};

inline Histogram make_histogram(int bins, double max_value) {
  require(bins >= 1, "histogram: bins must be >= 1");
  Histogram h;
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  for (int i = 0; i <= bins; ++i) h.edges.push_back(max_value * i / bins);
  return h;
}

inline void histogram_add(Histogram& h, double v) {
  const auto bins = h.counts.size();
  auto idx = static_cast<std::size_t>(std::max(0.0, v / h.edges.back() * static_cast<double>(bins)));
  h.counts[std::min(idx, bins - 1)] += 1;
}

/// Residual magnitudes over the split's frames, split by oracle label. Bins
/// span [0, sqrt(3)], the largest possible RGB residual norm.
template <typename Real>
ResidualHistograms residual_histogram(const VoxelField<Real>& field, const Dataset& ds, Split split,
                                      int bins, int n_samples, int workers = worker_count()) {
  ResidualHistograms out{make_histogram(bins, std::sqrt(3.0)), make_histogram(bins, std::sqrt(3.0))};
  for (const FrameRecord* f : ds.split(split)) {
    if (!f->oracle_mask) throw InvalidArgument("residual_histogram: frame " + std::to_string(f->id) +
                                               " has no oracle mask");
    const Image pred = render_frame(field, *f, n_samples, ds.scene.background, workers);
    const ResidualMap eps = compute_residual_map(pred, f->image);
    for (std::size_t i = 0; i < eps.size(); ++i)
      histogram_add(f->oracle_mask->values()[i] ? out.distractor : out.clean, eps.values()[i]);
  }
  return out;
}

inline void write_histogram_csv(const Histogram& h, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot open '" + path.string() + "' for writing");
  out << "edges,counts\n";
  for (std::size_t i = 0; i < h.counts.size(); ++i)
    out << detail::format_double(h.edges[i]) << ',' << h.counts[i] << '\n';
  out << detail::format_double(h.edges.back()) << ",\n";
}

}  // namespace robustfield
