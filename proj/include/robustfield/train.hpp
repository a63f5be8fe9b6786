#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "robustfield/camera.hpp"
#include "robustfield/common.hpp"
#include "robustfield/dataset.hpp"
#include "robustfield/eval.hpp"
#include "robustfield/field.hpp"
#include "robustfield/image_io.hpp"
#include "robustfield/json_io.hpp"
#include "robustfield/kernels.hpp"
#include "robustfield/mask.hpp"
#include "robustfield/render.hpp"

namespace robustfield {

enum class LossMode { L2, L1, Charbonnier, Oracle, Robust, Kernel };

inline std::string_view loss_mode_name(LossMode m) {
  switch (m) {
    case LossMode::L2: return "l2";
    case LossMode::L1: return "l1";
    case LossMode::Charbonnier: return "charbonnier";
    case LossMode::Oracle: return "oracle";
    case LossMode::Robust: return "robust";
    case LossMode::Kernel: return "kernel";
  }
  return "?";
}

inline LossMode parse_loss_mode(std::string_view name) {
  for (LossMode m : {LossMode::L2, LossMode::L1, LossMode::Charbonnier, LossMode::Oracle,
                     LossMode::Robust, LossMode::Kernel})
    if (loss_mode_name(m) == name) return m;
  throw InvalidArgument("unknown loss mode '" + std::string(name) + "'");
}

struct LossConfig {
  LossMode mode = LossMode::Robust;
  MaskConfig mask;
  double charbonnier_scale = 0.001;
  /// Robust mode: restrict the loss to the centered inner block instead of
  /// every final-inlier pixel of the neighborhood.
  bool inner_block_only = false;
  KernelSpec kernel = KernelSpec::named(KernelKind::GemanMcClure, 0.1);  // LossMode::Kernel
};

struct TrainConfig {
  LossConfig loss;
  int patches_per_batch = 16;
  int steps = 15000;
  double lr_init = 0.1;  // scaled for raw voxel parameters, not MLP weights
  double lr_final = 0.001;
  int warmup_steps = 512;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int n_samples = 64;
  int grid_resolution = 64;
  int sh_degree = 1;
  std::uint64_t seed = 0;
  int log_interval = 100;
  int eval_interval = 0;        // 0 disables periodic eval PSNR
  int mask_interval = 0;        // 0 disables mask dumps / IoU logging
  int mask_frames = 4;          // training frames tracked for mask IoU
  bool write_mask_images = true;
  int eval_samples = 64;
  int workers = 0;              // 0 = ROBUSTFIELD_THREADS / hardware

  [[nodiscard]] int neighborhood() const { return loss.mask.neighborhood; }

  void validate() const {
    loss.mask.validate();
    require(patches_per_batch > 0, "train: patches_per_batch must be > 0");
    require(steps > 0, "train: steps must be > 0");
    require(lr_init > 0 && lr_final > 0 && lr_final <= lr_init,
            "train: need 0 < lr_final <= lr_init");
    require(warmup_steps >= 0, "train: warmup_steps must be >= 0");
    require(n_samples >= 1 && eval_samples >= 1, "train: sample counts must be >= 1");
    require(grid_resolution >= 2, "train: grid_resolution must be >= 2");
    require(sh_degree == 0 || sh_degree == 1, "train: sh_degree must be 0 or 1");
    require(log_interval > 0, "train: log_interval must be > 0");
    require(eval_interval >= 0 && mask_interval >= 0 && mask_frames >= 0,
            "train: intervals must be >= 0");
    require(loss.charbonnier_scale > 0, "train: charbonnier scale must be > 0");
  }

  [[nodiscard]] int resolved_workers() const { return workers > 0 ? workers : worker_count(); }
};

// ---------------------------------------------------------------------------
// Config file

inline Json kernel_to_json(const KernelSpec& k) {
  Json j = {{"kind", kernel_name(k.kind)}, {"scale", k.scale}};
  if (k.kind == KernelKind::BarronGeneral) j["alpha"] = k.alpha;
  return j;
}

inline KernelSpec kernel_from_json(const Json& j) {
  KernelSpec k;
  k.kind = parse_kernel_kind(j.at("kind").get<std::string>());
  k.scale = j.at("scale").get<double>();
  if (j.contains("alpha")) k.alpha = j.at("alpha").get<double>();
  return k;
}

inline Json train_config_to_json(const TrainConfig& c) {
  const MaskConfig& m = c.loss.mask;
  return {{"loss", loss_mode_name(c.loss.mode)},
          {"mask",
           {{"mode", mask_mode_name(m.mode)},
            {"trim_quantile", m.trim_quantile},
            {"diffuse_threshold", m.diffuse_threshold},
            {"patch_threshold", m.patch_threshold},
            {"neighborhood", m.neighborhood},
            {"inner_patch", m.inner_patch},
            {"hard_patch_labeling", m.hard_patch_labeling}}},
          {"inner_block_only", c.loss.inner_block_only},
          {"charbonnier_scale", c.loss.charbonnier_scale},
          {"kernel", kernel_to_json(c.loss.kernel)},
          {"patches_per_batch", c.patches_per_batch},
          {"steps", c.steps},
          {"lr_init", c.lr_init},
          {"lr_final", c.lr_final},
          {"warmup_steps", c.warmup_steps},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_eps", c.adam_eps},
          {"n_samples", c.n_samples},
          {"grid_resolution", c.grid_resolution},
          {"sh_degree", c.sh_degree},
          {"seed", c.seed},
          {"log_interval", c.log_interval},
          {"eval_interval", c.eval_interval},
          {"mask_interval", c.mask_interval},
          {"mask_frames", c.mask_frames},
          {"eval_samples", c.eval_samples}};
}

/// Reads a config; keys that are absent keep their defaults.
inline TrainConfig train_config_from_json(const Json& j, TrainConfig c = {}) {
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    if (j.contains("loss")) c.loss.mode = parse_loss_mode(j.at("loss").get<std::string>());
    if (j.contains("mask")) {
      const Json& m = j.at("mask");
      MaskConfig& mc = c.loss.mask;
      if (m.contains("mode")) mc.mode = parse_mask_mode(m.at("mode").get<std::string>());
      auto mget = [&](const char* key, auto& field) {
        if (m.contains(key)) field = m.at(key).get<std::decay_t<decltype(field)>>();
      };
      mget("trim_quantile", mc.trim_quantile);
      mget("diffuse_threshold", mc.diffuse_threshold);
      mget("patch_threshold", mc.patch_threshold);
      mget("neighborhood", mc.neighborhood);
      mget("inner_patch", mc.inner_patch);
      mget("hard_patch_labeling", mc.hard_patch_labeling);
    }
    get("charbonnier_scale", c.loss.charbonnier_scale);
    get("inner_block_only", c.loss.inner_block_only);
    if (j.contains("kernel")) c.loss.kernel = kernel_from_json(j.at("kernel"));
    get("patches_per_batch", c.patches_per_batch);
    get("steps", c.steps);
    get("lr_init", c.lr_init);
    get("lr_final", c.lr_final);
    get("warmup_steps", c.warmup_steps);
    get("adam_beta1", c.adam_beta1);
    get("adam_beta2", c.adam_beta2);
    get("adam_eps", c.adam_eps);
    get("n_samples", c.n_samples);
    get("grid_resolution", c.grid_resolution);
    get("sh_degree", c.sh_degree);
    get("seed", c.seed);
    get("log_interval", c.log_interval);
    get("eval_interval", c.eval_interval);
    get("mask_interval", c.mask_interval);
    get("mask_frames", c.mask_frames);
    get("eval_samples", c.eval_samples);
  } catch (const Json::exception& e) {
    throw InvalidArgument(std::string("train config: ") + e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------
// Losses

/// Per-pixel dL/dC for one patch.
using ColorGradient = Grid2<Rgb>;

struct LossResult {
  double loss = 0.0;
  std::vector<ColorGradient> gradient;
  std::vector<InlierMask> masks;  // Robust mode only
  double inlier_fraction = 1.0;
  std::size_t contributing_pixels = 0;
  bool degenerate = false;
};

/// Batch loss and its gradient with respect to the predicted colors.
///
///   L2 / Oracle / Robust: mean over contributing pixels of ||C - C_obs||^2.
///     Oracle drops pixels flagged by the oracle distractor mask; Robust keeps
///     final-inlier pixels (of the centered inner block only, when
///     inner_block_only is set). The robust mask is built from the current
///     residuals and treated as a constant.
///   L1: mean over pixels of sum_ch |r_ch|.
///   Charbonnier: mean over pixels of sum_ch kappa(|r_ch|) with alpha = 1.
///   Kernel: mean over pixels of kappa(||r||); its gradient is the IRLS form
///     omega(||r||) * r.
inline LossResult compute_loss(std::span<const Image> predicted, std::span<const Image> observed,
                               std::span<const BinaryMask> oracle, const LossConfig& cfg) {
  require(predicted.size() == observed.size(), "compute_loss: batch size mismatch");
  require(!predicted.empty(), "compute_loss: empty batch");
  for (std::size_t p = 0; p < predicted.size(); ++p)
    require(predicted[p].same_shape(observed[p]), "compute_loss: patch shape mismatch");
  if (cfg.mode == LossMode::Oracle) {
    require(oracle.size() == predicted.size(), "compute_loss: oracle mode requires oracle masks");
    for (std::size_t p = 0; p < predicted.size(); ++p)
      require(oracle[p].same_shape(predicted[p]), "compute_loss: oracle mask shape mismatch");
  }

  LossResult out;
  for (const Image& img : predicted) out.gradient.emplace_back(img.height(), img.width());

  std::size_t total_pixels = 0;
  for (const Image& img : predicted) total_pixels += img.size();

  // Inclusion weights per pixel (0 or 1).
  std::vector<BinaryMask> include;
  include.reserve(predicted.size());
  if (cfg.mode == LossMode::Robust) {
    std::vector<ResidualMap> residuals;
    for (std::size_t p = 0; p < predicted.size(); ++p)
      residuals.push_back(compute_residual_map(predicted[p], observed[p]));
    out.masks = compute_robust_mask(residuals, cfg.mask);
    const int off = cfg.mask.inner_offset(), ip = cfg.mask.inner_patch;
    std::size_t inliers = 0;
    for (const InlierMask& m : out.masks) {
      for (auto v : m.final.values()) inliers += v;
      if (!cfg.inner_block_only) {
        include.push_back(m.final);
        continue;
      }
      BinaryMask inc(m.final.height(), m.final.width(), 0);
      for (int r = off; r < off + ip; ++r)
        for (int c = off; c < off + ip; ++c) inc(r, c) = m.final(r, c);
      include.push_back(std::move(inc));
    }
    out.inlier_fraction = static_cast<double>(inliers) / static_cast<double>(total_pixels);
  } else if (cfg.mode == LossMode::Oracle) {
    std::size_t clean = 0;
    for (const BinaryMask& m : oracle) {
      BinaryMask inc(m.height(), m.width(), 0);
      for (std::size_t i = 0; i < m.size(); ++i) inc.values()[i] = m.values()[i] ? 0 : 1;
      for (auto v : inc.values()) clean += v;
      include.push_back(std::move(inc));
    }
    out.inlier_fraction = static_cast<double>(clean) / static_cast<double>(total_pixels);
  } else {
    for (const Image& img : predicted) include.emplace_back(img.height(), img.width(), 1);
  }

  std::size_t n = 0;
  for (const BinaryMask& m : include)
    for (auto v : m.values()) n += v;
  out.contributing_pixels = n;
  if (n == 0) {
    out.degenerate = true;
    return out;
  }
  const double inv_n = 1.0 / static_cast<double>(n);

  double loss = 0.0;
  const KernelSpec charb = KernelSpec::named(KernelKind::Charbonnier, cfg.charbonnier_scale);
  for (std::size_t p = 0; p < predicted.size(); ++p) {
    for (std::size_t i = 0; i < predicted[p].size(); ++i) {
      if (!include[p].values()[i]) continue;
      const Rgb r = predicted[p].values()[i] - observed[p].values()[i];
      Rgb& g = out.gradient[p].values()[i];
      switch (cfg.mode) {
        case LossMode::L2:
        case LossMode::Oracle:
        case LossMode::Robust:
          loss += dot(r, r);
          g = r * (2.0 * inv_n);
          break;
        case LossMode::L1:
          for (std::size_t ch = 0; ch < 3; ++ch) {
            loss += std::abs(r[ch]);
            g[ch] = (r[ch] > 0 ? 1.0 : (r[ch] < 0 ? -1.0 : 0.0)) * inv_n;
          }
          break;
        case LossMode::Charbonnier:
          for (std::size_t ch = 0; ch < 3; ++ch) {
            const double a = std::abs(r[ch]);
            loss += kernel_value(a, charb);
            g[ch] = irls_weight(a, charb) * r[ch] * inv_n;
          }
          break;
        case LossMode::Kernel: {
          const double e = norm(r);
          loss += kernel_value(e, cfg.kernel);
          g = r * (irls_weight(e, cfg.kernel) * inv_n);
          break;
        }
      }
    }
  }
  out.loss = loss * inv_n;
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer

/// Linear warmup to lr_init over warmup_steps, then exponential interpolation
/// from lr_init to lr_final over the full run.
inline double learning_rate(const TrainConfig& c, int step) {
  if (step < c.warmup_steps)
    return c.lr_init * static_cast<double>(step + 1) / static_cast<double>(c.warmup_steps);
  const double t = static_cast<double>(step) / static_cast<double>(c.steps);
  return c.lr_init * std::pow(c.lr_final / c.lr_init, t);
}

template <typename Real>
struct AdamState {
  std::vector<Real> m_density, v_density, m_color, v_color;
  int t = 0;

  AdamState() = default;
  explicit AdamState(const VoxelField<Real>& f)
      : m_density(f.density_raw.size(), 0),
        v_density(f.density_raw.size(), 0),
        m_color(f.color_coeffs.size(), 0),
        v_color(f.color_coeffs.size(), 0) {}
};

namespace detail {

template <typename Real>
void adam_update(std::vector<Real>& param, const std::vector<Real>& grad, std::vector<Real>& m,
                 std::vector<Real>& v, double lr, double b1, double b2, double eps, int t,
                 int workers) {
  const Real bc1 = static_cast<Real>(1.0 - std::pow(b1, t));
  const Real bc2 = static_cast<Real>(1.0 - std::pow(b2, t));
  const Real rb1 = static_cast<Real>(b1), rb2 = static_cast<Real>(b2);
  const Real rlr = static_cast<Real>(lr), reps = static_cast<Real>(eps);
  parallel_chunks(param.size(), workers, [&](int, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const Real g = grad[i];
      m[i] = rb1 * m[i] + (Real(1) - rb1) * g;
      v[i] = rb2 * v[i] + (Real(1) - rb2) * g * g;
      const Real mhat = m[i] / bc1;
      const Real vhat = v[i] / bc2;
      param[i] -= rlr * mhat / (std::sqrt(vhat) + reps);
    }
  });
}

}  // namespace detail

template <typename Real>
void adam_step(VoxelField<Real>& field, const FieldGradient<Real>& grad, AdamState<Real>& state,
               const TrainConfig& c, double lr, int workers) {
  state.t += 1;
  detail::adam_update(field.density_raw, grad.density_raw, state.m_density, state.v_density, lr,
                      c.adam_beta1, c.adam_beta2, c.adam_eps, state.t, workers);
  detail::adam_update(field.color_coeffs, grad.color_coeffs, state.m_color, state.v_color, lr,
                      c.adam_beta1, c.adam_beta2, c.adam_eps, state.t, workers);
}

// ---------------------------------------------------------------------------
// Training loop

template <typename Real>
struct TrainState {
  VoxelField<Real> field;
  AdamState<Real> adam;
  int step = 0;
  Rng rng;
};

struct StepStats {
  int step = 0;
  double loss = 0.0;
  double inlier_fraction = 1.0;
  double lr = 0.0;
  bool degenerate = false;
};

template <typename Real>
TrainState<Real> init_train_state(const TrainConfig& c, const Dataset& ds) {
  TrainState<Real> s;
  const int r = c.grid_resolution;
  s.field = create_field<Real>({r, r, r}, ds.scene.bounds, c.sh_degree);
  s.adam = AdamState<Real>(s.field);
  s.rng = Rng(c.seed).fork(0x7A1A);
  return s;
}

/// A sampled training neighborhood.
struct PatchRef {
  const FrameRecord* frame = nullptr;
  int row = 0;
  int col = 0;
};

/// Reusable per-step buffers.
template <typename Real>
struct StepWorkspace {
  std::vector<FieldGradient<Real>> worker_grads;
  std::vector<RenderSample<Real>> samples;
};

/// Renders the patches (stratified when `jitter_base` is given, midpoint
/// otherwise), computes the loss with the mask held fixed, and backpropagates
/// through the renderer. The summed gradient is left in ws.worker_grads[0];
/// it is zero for a degenerate batch.
template <typename Real>
LossResult evaluate_batch(const VoxelField<Real>& field, std::span<const PatchRef> patches,
                          const Rgb& background, const TrainConfig& c, const Rng* jitter_base,
                          StepWorkspace<Real>& ws) {
  const int n = c.neighborhood();
  const int workers = c.resolved_workers();
  const Vec3<Real> bg(background);
  const std::size_t per_patch = static_cast<std::size_t>(n) * n;
  ws.samples.resize(patches.size() * per_patch);
  std::vector<Image> predicted(patches.size(), Image(n, n));
  std::vector<Image> observed(patches.size(), Image(n, n));
  std::vector<BinaryMask> oracle;
  if (c.loss.mode == LossMode::Oracle) oracle.assign(patches.size(), BinaryMask(n, n, 0));

  parallel_for(patches.size(), workers, [&](std::size_t p) {
    const PatchRef& ref = patches[p];
    require(ref.row >= 0 && ref.col >= 0 && ref.row + n <= ref.frame->image.height() &&
                ref.col + n <= ref.frame->image.width(),
            "evaluate_batch: neighborhood outside the frame");
    std::optional<Rng> jitter;
    if (jitter_base) jitter = jitter_base->fork(p);
    for (int r = 0; r < n; ++r)
      for (int col = 0; col < n; ++col) {
        const int y = ref.row + r, x = ref.col + col;
        const Ray ray = generate_ray(ref.frame->camera, x + 0.5, y + 0.5, field.bounds);
        RenderSample<Real>& rs = ws.samples[p * per_patch + static_cast<std::size_t>(r * n + col)];
        render_pixel(field, ray, c.n_samples, jitter ? &*jitter : nullptr, bg, rs);
        predicted[p](r, col) = Rgb(rs.color);
        observed[p](r, col) = ref.frame->image(y, x);
        if (!oracle.empty()) oracle[p](r, col) = (*ref.frame->oracle_mask)(y, x);
      }
  });

  LossResult lr = compute_loss(predicted, observed, oracle, c.loss);

  const int used_workers = std::max(1, std::min<int>(workers, static_cast<int>(patches.size())));
  if (static_cast<int>(ws.worker_grads.size()) != used_workers ||
      !ws.worker_grads.front().matches(field))
    ws.worker_grads.assign(static_cast<std::size_t>(used_workers), FieldGradient<Real>(field));
  else
    for (auto& g : ws.worker_grads) g.zero();

  if (!lr.degenerate && std::isfinite(lr.loss)) {
    parallel_chunks(patches.size(), used_workers, [&](int w, std::size_t begin, std::size_t end) {
      FieldGradient<Real>& g = ws.worker_grads[static_cast<std::size_t>(w)];
      for (std::size_t p = begin; p < end; ++p)
        for (std::size_t i = 0; i < per_patch; ++i) {
          const Vec3<Real> dc(lr.gradient[p].values()[i]);
          render_pixel_adjoint(field, ws.samples[p * per_patch + i], dc, g);
        }
    });
    for (std::size_t w = 1; w < ws.worker_grads.size(); ++w) ws.worker_grads[0] += ws.worker_grads[w];
  }
  return lr;
}

/// One IRLS iteration: sample neighborhoods, evaluate the batch with
/// stratified sampling, and take an Adam step. A degenerate batch leaves the
/// parameters and optimizer state untouched.
template <typename Real>
StepStats train_step(TrainState<Real>& state, const Dataset& ds, const TrainConfig& c,
                     StepWorkspace<Real>& ws, std::vector<InlierMask>* masks_out = nullptr) {
  const auto train = ds.split(Split::Train);
  require(!train.empty(), "train_step: dataset has no training frames");
  const int n = c.neighborhood();

  std::vector<PatchRef> patches(static_cast<std::size_t>(c.patches_per_batch));
  for (auto& p : patches) {
    p.frame = train[state.rng.below(train.size())];
    require(p.frame->image.height() >= n && p.frame->image.width() >= n,
            "train_step: frame smaller than the neighborhood");
    p.row = static_cast<int>(state.rng.below(static_cast<std::uint64_t>(p.frame->image.height() - n + 1)));
    p.col = static_cast<int>(state.rng.below(static_cast<std::uint64_t>(p.frame->image.width() - n + 1)));
  }
  const Rng jitter_base = state.rng.fork(static_cast<std::uint64_t>(state.step));
  state.rng.next();

  LossResult lr = evaluate_batch(state.field, std::span<const PatchRef>(patches), ds.scene.background, c,
                                 &jitter_base, ws);
  StepStats stats;
  stats.step = state.step;
  stats.loss = lr.loss;
  stats.inlier_fraction = lr.inlier_fraction;
  stats.lr = learning_rate(c, state.step);
  stats.degenerate = lr.degenerate;
  if (!std::isfinite(lr.loss))
    throw RuntimeFailure("non-finite loss at step " + std::to_string(state.step));
  if (lr.degenerate)
    std::cerr << "warning: step " << state.step << " has no contributing pixels; skipping update\n";
  else
    adam_step(state.field, ws.worker_grads[0], state.adam, c, stats.lr, c.resolved_workers());
  if (masks_out) *masks_out = std::move(lr.masks);
  state.step += 1;
  return stats;
}

// ---------------------------------------------------------------------------
// Full runs

inline constexpr const char* kMetricsCsvHeader = "step,loss,inlier_fraction,lr,eval_psnr,mask_iou";

struct MetricsLogRow {
  int step = 0;
  double loss = 0.0;
  double inlier_fraction = 1.0;
  double lr = 0.0;
  std::optional<double> eval_psnr;
  std::optional<double> mask_iou;
};

template <typename Real>
struct TrainResult {
  VoxelField<Real> field;
  std::vector<MetricsLogRow> log;
  double seconds = 0.0;
};

struct RunOptions {
  std::optional<std::filesystem::path> out_dir;  // nothing is written when empty
  bool verbose = false;
};

/// Mean outlier-class IoU of full-frame masks against oracle masks over the
/// first `count` training frames.
template <typename Real>
double tracked_mask_iou(const VoxelField<Real>& field, const Dataset& ds, const TrainConfig& c,
                        int count, const std::filesystem::path* dump_dir, int step) {
  const auto train = ds.split(Split::Train);
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(count), train.size());
  double iou = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const FrameRecord& f = *train[i];
    const BinaryMask inliers = frame_inlier_mask(field, f, c.loss.mask, c.eval_samples,
                                                 ds.scene.background, c.resolved_workers());
    iou += compute_mask_metrics(inliers, *f.oracle_mask).iou;
    if (dump_dir) {
      char name[64];
      std::snprintf(name, sizeof name, "mask_%06d_frame_%04d.ppm", step, f.id);
      write_mask_ppm(*dump_dir / name, inliers);
    }
  }
  return k ? iou / static_cast<double>(k) : 1.0;
}

inline void write_metrics_csv(const std::vector<MetricsLogRow>& rows,
                              const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot open '" + path.string() + "' for writing");
  out << kMetricsCsvHeader << '\n';
  for (const auto& r : rows) {
    out << r.step << ',' << detail::format_double(r.loss) << ','
        << detail::format_double(r.inlier_fraction) << ',' << detail::format_double(r.lr) << ',';
    if (r.eval_psnr) out << detail::format_double(*r.eval_psnr);
    out << ',';
    if (r.mask_iou) out << detail::format_double(*r.mask_iou);
    out << '\n';
  }
}

/// Trains from scratch. With an output directory, writes metrics.csv,
/// checkpoint.bin (+ .json sidecar) and, when mask_interval > 0, mask dumps
/// under masks/.
template <typename Real = float>
TrainResult<Real> run_training(const TrainConfig& c, const Dataset& ds, const RunOptions& opt = {}) {
  c.validate();
  if (c.loss.mode == LossMode::Oracle)
    for (const FrameRecord* f : ds.split(Split::Train))
      require(f->oracle_mask.has_value(), "oracle loss needs oracle masks on every training frame");
  namespace fs = std::filesystem;
  std::optional<fs::path> mask_dir;
  if (opt.out_dir) {
    fs::create_directories(*opt.out_dir);
    if (c.mask_interval > 0 && c.write_mask_images) {
      mask_dir = *opt.out_dir / "masks";
      fs::create_directories(*mask_dir);
    }
  }

  const auto t0 = std::chrono::steady_clock::now();
  TrainState<Real> state = init_train_state<Real>(c, ds);
  StepWorkspace<Real> ws;
  TrainResult<Real> result;
  double loss_acc = 0.0, inlier_acc = 0.0;
  int acc_n = 0;

  auto scheduled = [](int interval, int step_done, int total) {
    return interval > 0 && (step_done % interval == 0 || step_done == total);
  };

  for (int s = 0; s < c.steps; ++s) {
    const StepStats st = train_step(state, ds, c, ws);
    loss_acc += st.loss;
    inlier_acc += st.inlier_fraction;
    ++acc_n;
    const int done = s + 1;
    const bool log_now = done % c.log_interval == 0 || done == c.steps;
    const bool eval_now = scheduled(c.eval_interval, done, c.steps);
    const bool mask_now = scheduled(c.mask_interval, done, c.steps);
    if (!(log_now || eval_now || mask_now)) continue;

    MetricsLogRow row;
    row.step = done;
    row.loss = loss_acc / acc_n;
    row.inlier_fraction = inlier_acc / acc_n;
    row.lr = st.lr;
    loss_acc = inlier_acc = 0.0;
    acc_n = 0;
    if (eval_now)
      row.eval_psnr = mean_eval_psnr(state.field, ds, c.eval_samples, c.resolved_workers());
    if (mask_now)
      row.mask_iou = tracked_mask_iou(state.field, ds, c, c.mask_frames,
                                      mask_dir ? &*mask_dir : nullptr, done);
    if (opt.verbose) {
      std::cerr << "step " << done << " loss " << row.loss << " inliers " << row.inlier_fraction
                << " lr " << row.lr;
      if (row.eval_psnr) std::cerr << " eval_psnr " << *row.eval_psnr;
      if (row.mask_iou) std::cerr << " mask_iou " << *row.mask_iou;
      std::cerr << '\n';
    }
    result.log.push_back(row);
  }
  if (!state.field.all_finite()) throw RuntimeFailure("training produced non-finite parameters");

  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  result.field = std::move(state.field);
  if (opt.out_dir) {
    write_metrics_csv(result.log, *opt.out_dir / "metrics.csv");
    Json meta = {{"config", train_config_to_json(c)},
                 {"steps", c.steps},
                 {"scene", scene_to_json(ds.scene)}};
    save_checkpoint(result.field, *opt.out_dir / "checkpoint.bin", meta);
  }
  return result;
}

}  // namespace robustfield
