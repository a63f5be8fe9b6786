#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "robustfield/dataset.hpp"
#include "robustfield/eval.hpp"
#include "robustfield/train.hpp"

namespace robustfield {

enum class SweepAxis { TrimQuantile, ClutterFraction, Neighborhood, LossMode, MaskMode };

inline std::string_view sweep_axis_name(SweepAxis a) {
  switch (a) {
    case SweepAxis::TrimQuantile: return "trim_quantile";
    case SweepAxis::ClutterFraction: return "clutter_fraction";
    case SweepAxis::Neighborhood: return "neighborhood";
    case SweepAxis::LossMode: return "loss_mode";
    case SweepAxis::MaskMode: return "mask_mode";
  }
  return "?";
}

inline SweepAxis parse_sweep_axis(std::string_view name) {
  for (SweepAxis a : {SweepAxis::TrimQuantile, SweepAxis::ClutterFraction, SweepAxis::Neighborhood,
                      SweepAxis::LossMode, SweepAxis::MaskMode})
    if (sweep_axis_name(a) == name) return a;
  throw InvalidArgument("unknown sweep axis '" + std::string(name) + "'");
}

inline std::vector<std::string> split_csv(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = std::min(text.find(',', start), text.size());
    std::string item(text.substr(start, end - start));
    require(!item.empty(), "empty entry in value list '" + std::string(text) + "'");
    out.push_back(std::move(item));
    start = end + 1;
  }
  return out;
}

/// Everything needed to regenerate data and train one run.
struct Experiment {
  SceneSpec scene;
  DatasetOptions data;
  TrainConfig train;
};

namespace detail {

inline double parse_fraction(const std::string& v) {
  std::size_t used = 0;
  double x = 0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  require(used == v.size(), "not a number: '" + v + "'");
  return x;
}

inline int parse_count(const std::string& v) {
  const double x = parse_fraction(v);
  require(x == std::floor(x) && x > 0 && x < 1e6, "not a positive integer: '" + v + "'");
  return static_cast<int>(x);
}

}  // namespace detail

/// Applies one sweep value. Neighborhood values are "N" (inner patch N/2) or
/// "N/M".
inline void apply_sweep_value(Experiment& e, SweepAxis axis, const std::string& value) {
  switch (axis) {
    case SweepAxis::TrimQuantile: e.train.loss.mask.trim_quantile = detail::parse_fraction(value); break;
    case SweepAxis::ClutterFraction: e.scene.clutter_fraction = detail::parse_fraction(value); break;
    case SweepAxis::Neighborhood: {
      const auto slash = value.find('/');
      const int n = detail::parse_count(value.substr(0, slash));
      e.train.loss.mask.neighborhood = n;
      e.train.loss.mask.inner_patch =
          slash == std::string::npos ? std::max(1, n / 2) : detail::parse_count(value.substr(slash + 1));
      break;
    }
    case SweepAxis::LossMode: e.train.loss.mode = parse_loss_mode(value); break;
    case SweepAxis::MaskMode: e.train.loss.mask.mode = parse_mask_mode(value); break;
  }
}

struct SweepRow {
  std::string axis;
  std::string value;
  double eval_psnr = 0.0;
  double eval_ssim = 0.0;
  double final_loss = 0.0;
  double inlier_fraction = 0.0;
  double seconds = 0.0;
};

inline constexpr const char* kSweepCsvHeader =
    "axis,value,eval_psnr,eval_ssim,final_loss,inlier_fraction,seconds";

inline void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot open '" + path.string() + "' for writing");
  out << kSweepCsvHeader << '\n';
  for (const auto& r : rows)
    out << r.axis << ',' << r.value << ',' << detail::format_double(r.eval_psnr) << ','
        << detail::format_double(r.eval_ssim) << ',' << detail::format_double(r.final_loss) << ','
        << detail::format_double(r.inlier_fraction) << ',' << detail::format_double(r.seconds) << '\n';
}

/// Trains and evaluates one run per value. Data is generated once unless the
/// axis changes it. With an output directory each point gets its own run
/// directory (point_NN/) and sweep.csv is written at the end. jobs > 1 runs
/// that many points concurrently, each on a single worker; rows keep value
/// order either way.
inline std::vector<SweepRow> run_sweep(const Experiment& base, SweepAxis axis,
                                       const std::vector<std::string>& values,
                                       const std::optional<std::filesystem::path>& out_dir = {},
                                       bool verbose = false, int jobs = 1) {
  require(!values.empty(), "sweep: no values");
  require(jobs >= 1, "sweep: jobs must be >= 1");
  std::vector<Experiment> points;
  for (const auto& v : values) {
    Experiment e = base;
    apply_sweep_value(e, axis, v);
    e.scene.validate();
    e.train.validate();
    if (jobs > 1) e.train.workers = 1;
    points.push_back(std::move(e));
  }

  std::optional<Dataset> shared;
  if (axis != SweepAxis::ClutterFraction) shared = make_dataset(base.scene, base.data);

  std::vector<SweepRow> rows(points.size());
  parallel_for(points.size(), jobs, [&](std::size_t i) {
    const Experiment& e = points[i];
    const Dataset ds = shared ? *shared : make_dataset(e.scene, e.data);
    RunOptions opt;
    opt.verbose = verbose;
    if (out_dir) {
      char name[32];
      std::snprintf(name, sizeof name, "point_%02zu", i);
      opt.out_dir = *out_dir / name;
    }
    if (verbose) std::cerr << sweep_axis_name(axis) << " = " << values[i] << '\n';
    const TrainResult<float> result = run_training<float>(e.train, ds, opt);
    EvalOptions eo;
    eo.n_samples = e.train.eval_samples;
    eo.workers = e.train.resolved_workers();
    const auto metrics = evaluate_field(result.field, ds, eo);
    SweepRow row;
    row.axis = std::string(sweep_axis_name(axis));
    row.value = values[i];
    for (const auto& m : metrics)
      if (m.frame == "mean" && m.split == "eval") {
        row.eval_psnr = m.psnr;
        row.eval_ssim = m.ssim;
      }
    if (!result.log.empty()) {
      row.final_loss = result.log.back().loss;
      row.inlier_fraction = result.log.back().inlier_fraction;
    }
    row.seconds = result.seconds;
    if (opt.out_dir) write_eval_csv(metrics, *opt.out_dir / "eval.csv");
    rows[i] = row;
  });
  if (out_dir) write_sweep_csv(rows, *out_dir / "sweep.csv");
  return rows;
}

}  // namespace robustfield
