#pragma once

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "robustfield/dataset.hpp"
#include "robustfield/eval.hpp"
#include "robustfield/field.hpp"
#include "robustfield/render.hpp"
#include "robustfield/sweep.hpp"
#include "robustfield/train.hpp"

namespace robustfield {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

namespace cli {

namespace fs = std::filesystem;

/// Options shared by gen and sweep.
struct GenFlags {
  std::string difficulty = "hard";
  double clutter_fraction = 1.0;
  int image_size = 96;
  int n_train = 60;
  int n_eval = 20;
  std::uint64_t seed = 0;

  void add(CLI::App& app) {
    app.add_option("--difficulty", difficulty, "Scene preset")
        ->check(CLI::IsMember({"easy", "medium", "hard"}))
        ->capture_default_str();
    app.add_option("--clutter-fraction", clutter_fraction, "Share of training frames with distractors")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    app.add_option("--image-size", image_size, "Square image side in pixels")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    app.add_option("--n-train", n_train, "Training frames")->check(CLI::PositiveNumber)->capture_default_str();
    app.add_option("--n-eval", n_eval, "Evaluation frames")->check(CLI::PositiveNumber)->capture_default_str();
    app.add_option("--seed", seed, "Scene and camera seed")->capture_default_str();
  }

  [[nodiscard]] SceneSpec scene() const {
    SceneSpec s = build_scene(parse_difficulty(difficulty), seed);
    s.clutter_fraction = clutter_fraction;
    return s;
  }
  [[nodiscard]] DatasetOptions data() const {
    DatasetOptions o;
    o.n_train = n_train;
    o.n_eval = n_eval;
    o.image_size = image_size;
    return o;
  }
};

/// Options shared by train and sweep; unset flags keep config-file values.
struct TrainFlags {
  std::string config_path;
  std::optional<std::string> loss, mask_mode;
  std::optional<double> trim_quantile, lr_init, lr_final;
  std::optional<int> neighborhood, inner_patch, steps, dump_masks, eval_interval, grid_resolution,
      n_samples, patches, warmup;
  std::optional<std::uint64_t> seed;
  bool inner_block_only = false;

  void add(CLI::App& app, bool with_seed) {
    app.add_option("--config", config_path, "Training config JSON")->check(CLI::ExistingFile);
    app.add_option("--loss", loss, "Loss mode")
        ->check(CLI::IsMember({"l2", "l1", "charbonnier", "oracle", "robust", "kernel"}));
    app.add_option("--mask-mode", mask_mode, "Robust mask stages")
        ->check(CLI::IsMember({"trim_only", "trim_diffuse", "full"}));
    app.add_option("--trim-quantile", trim_quantile, "Trimming quantile")->check(CLI::Range(0.0, 1.0));
    app.add_option("--neighborhood", neighborhood, "Neighborhood side")->check(CLI::PositiveNumber);
    app.add_option("--inner-patch", inner_patch, "Inner patch side")->check(CLI::PositiveNumber);
    app.add_option("--steps", steps, "Optimizer steps")->check(CLI::PositiveNumber);
    app.add_option("--dump-masks", dump_masks, "Mask dump / IoU interval in steps (0 = off)")
        ->check(CLI::NonNegativeNumber);
    app.add_option("--eval-interval", eval_interval, "Eval PSNR interval in steps (0 = off)")
        ->check(CLI::NonNegativeNumber);
    app.add_option("--grid-resolution", grid_resolution, "Voxels per axis")->check(CLI::Range(2, 1024));
    app.add_option("--n-samples", n_samples, "Samples per ray")->check(CLI::PositiveNumber);
    app.add_option("--patches", patches, "Neighborhoods per batch")->check(CLI::PositiveNumber);
    app.add_option("--lr-init", lr_init, "Initial learning rate")->check(CLI::PositiveNumber);
    app.add_option("--lr-final", lr_final, "Final learning rate")->check(CLI::PositiveNumber);
    app.add_option("--warmup", warmup, "Warmup steps")->check(CLI::NonNegativeNumber);
    app.add_flag("--inner-block-only", inner_block_only, "Robust loss on the inner block only");
    if (with_seed) app.add_option("--seed", seed, "Training seed");
  }

  [[nodiscard]] TrainConfig config() const {
    TrainConfig c;
    if (!config_path.empty()) c = train_config_from_json(read_json_file(config_path));
    if (loss) c.loss.mode = parse_loss_mode(*loss);
    if (mask_mode) c.loss.mask.mode = parse_mask_mode(*mask_mode);
    if (trim_quantile) c.loss.mask.trim_quantile = *trim_quantile;
    if (neighborhood) c.loss.mask.neighborhood = *neighborhood;
    if (inner_patch) c.loss.mask.inner_patch = *inner_patch;
    if (steps) c.steps = *steps;
    if (dump_masks) c.mask_interval = *dump_masks;
    if (eval_interval) c.eval_interval = *eval_interval;
    if (grid_resolution) c.grid_resolution = *grid_resolution;
    if (n_samples) c.n_samples = c.eval_samples = *n_samples;
    if (patches) c.patches_per_batch = *patches;
    if (lr_init) c.lr_init = *lr_init;
    if (lr_final) c.lr_final = *lr_final;
    if (warmup) c.warmup_steps = *warmup;
    if (seed) c.seed = *seed;
    if (inner_block_only) c.loss.inner_block_only = true;
    c.validate();
    return c;
  }
};

inline SceneSpec scene_for_checkpoint(const fs::path& checkpoint, const std::string& data_dir) {
  if (!data_dir.empty()) return load_dataset(data_dir).scene;
  const Json meta = load_checkpoint_metadata(checkpoint);
  if (!meta.contains("scene"))
    throw LoadError("checkpoint sidecar has no scene; pass --data");
  try {
    return scene_from_json(meta.at("scene"));
  } catch (const Json::exception& e) {
    throw LoadError(std::string("checkpoint sidecar: ") + e.what());
  }
}

/// Orbit camera around the static centroid; azimuth in radians, elevation in degrees.
inline CameraModel orbit_camera(const SceneSpec& s, double azimuth, double elevation_deg,
                                double distance, int image_size) {
  const double el = elevation_deg * M_PI / 180.0;
  const Vec3d target = s.static_centroid();
  const Vec3d eye =
      target + Vec3d{std::cos(el) * std::cos(azimuth), std::cos(el) * std::sin(azimuth), std::sin(el)} * distance;
  const double focal = 0.5 * image_size / std::tan(0.5 * 40.0 * M_PI / 180.0);
  return look_at(eye, target, {0, 0, 1}, focal, image_size, image_size);
}

}  // namespace cli

/// Entry point of the robustfield tool. Returns the process exit code.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  namespace fs = std::filesystem;
  CLI::App app{"robustfield: robust radiance-field toolkit"};
  app.require_subcommand(1, 1);
  app.set_help_all_flag("--help-all");

  // gen
  cli::GenFlags gen_flags;
  std::string gen_out;
  CLI::App* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
  gen_flags.add(*gen);
  gen->add_option("--out", gen_out, "Output dataset directory")->required();

  // train
  cli::TrainFlags train_flags;
  std::string train_data, train_out;
  CLI::App* train = app.add_subcommand("train", "Train a field on a dataset");
  train->add_option("--data", train_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--out", train_out, "Run output directory")->required();
  train_flags.add(*train, true);

  // eval
  std::string eval_ckpt, eval_data, eval_out;
  int eval_samples = 64;
  bool eval_train = false;
  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", eval_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--out", eval_out, "Output directory for eval.csv")->required();
  eval->add_option("--n-samples", eval_samples, "Samples per ray")->check(CLI::PositiveNumber)->capture_default_str();
  eval->add_flag("--include-train", eval_train, "Also report training frames with mask metrics");

  // render
  std::string render_ckpt, render_data, render_out;
  int render_frames = 8, render_size = 96, render_samples = 64;
  double render_elevation = 40.0;
  std::optional<double> render_distance;
  std::optional<int> render_step;
  CLI::App* render = app.add_subcommand("render", "Render frames along an orbit");
  render->add_option("--checkpoint", render_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  render->add_option("--data", render_data, "Dataset directory (scene source when the sidecar lacks one)")
      ->check(CLI::ExistingDirectory);
  render->add_option("--out", render_out, "Output directory")->required();
  render->add_option("--frames", render_frames, "Frames along the orbit")->check(CLI::PositiveNumber)->capture_default_str();
  render->add_option("--elevation", render_elevation, "Orbit elevation in degrees")
      ->check(CLI::Range(-89.0, 89.0))
      ->capture_default_str();
  render->add_option("--distance", render_distance, "Orbit radius (default: scene camera distance)")
      ->check(CLI::PositiveNumber);
  render->add_option("--image-size", render_size, "Square image side")->check(CLI::PositiveNumber)->capture_default_str();
  render->add_option("--n-samples", render_samples, "Samples per ray")->check(CLI::PositiveNumber)->capture_default_str();
  render->add_option("--step", render_step, "Step label for file names (default: from checkpoint)")
      ->check(CLI::NonNegativeNumber);

  // hist
  std::string hist_ckpt, hist_data, hist_out, hist_split = "train";
  int hist_bins = 64, hist_samples = 64;
  CLI::App* hist = app.add_subcommand("hist", "Residual histograms split by oracle label");
  hist->add_option("--checkpoint", hist_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  hist->add_option("--data", hist_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  hist->add_option("--out", hist_out, "Output directory")->required();
  hist->add_option("--split", hist_split, "Split")->check(CLI::IsMember({"train"}))->capture_default_str();
  hist->add_option("--bins", hist_bins, "Histogram bins")->check(CLI::PositiveNumber)->capture_default_str();
  hist->add_option("--n-samples", hist_samples, "Samples per ray")->check(CLI::PositiveNumber)->capture_default_str();

  // sweep
  cli::GenFlags sweep_gen;
  cli::TrainFlags sweep_train;
  std::string sweep_axis, sweep_values, sweep_out;
  CLI::App* sweep = app.add_subcommand("sweep", "Train and evaluate over one axis");
  sweep_gen.add(*sweep);
  sweep_train.add(*sweep, false);
  sweep->add_option("--axis", sweep_axis, "Swept parameter")
      ->required()
      ->check(CLI::IsMember({"trim_quantile", "clutter_fraction", "neighborhood", "loss_mode", "mask_mode"}));
  sweep->add_option("--values", sweep_values, "Comma-separated values")->required();
  sweep->add_option("--out", sweep_out, "Output directory for sweep.csv")->required();
  int sweep_jobs = 1;
  sweep->add_option("--parallel", sweep_jobs, "Sweep points run concurrently, one worker each")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Progress on stderr");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << "run with --help for usage\n";
    return kExitUsage;
  }

  try {
    if (gen->parsed()) {
      const SceneSpec spec = gen_flags.scene();
      const Dataset ds = generate_dataset(spec, gen_flags.data(), gen_out);
      out << "wrote " << ds.frames.size() << " frames to " << gen_out << " (distractor occupancy "
          << ds.distractor_occupancy << ")\n";
    } else if (train->parsed()) {
      TrainConfig c;
      try {
        c = train_flags.config();
      } catch (const InvalidArgument& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
      }
      const Dataset ds = load_dataset(train_data);
      RunOptions opt;
      opt.out_dir = fs::path(train_out);
      opt.verbose = verbose;
      const auto result = run_training<float>(c, ds, opt);
      write_json_file(fs::path(train_out) / "config.json", train_config_to_json(c));
      out << "trained " << c.steps << " steps in " << result.seconds << " s; checkpoint "
          << (fs::path(train_out) / "checkpoint.bin").string() << '\n';
    } else if (eval->parsed()) {
      const auto field = load_checkpoint(eval_ckpt);
      const Dataset ds = load_dataset(eval_data);
      EvalOptions opt;
      opt.n_samples = eval_samples;
      opt.include_train = eval_train;
      const Json meta = load_checkpoint_metadata(eval_ckpt);
      if (meta.contains("config")) opt.mask = train_config_from_json(meta.at("config")).loss.mask;
      const auto rows = evaluate_field(field, ds, opt);
      fs::create_directories(eval_out);
      write_eval_csv(rows, fs::path(eval_out) / "eval.csv");
      for (const auto& r : rows)
        if (r.frame == "mean") out << r.split << " mean psnr " << detail::format_double(r.psnr) << " ssim "
                                   << detail::format_double(r.ssim) << '\n';
    } else if (render->parsed()) {
      const auto field = load_checkpoint(render_ckpt);
      const SceneSpec scene = cli::scene_for_checkpoint(render_ckpt, render_data);
      int step = 0;
      if (render_step) {
        step = *render_step;
      } else {
        const Json meta = load_checkpoint_metadata(render_ckpt);
        if (meta.contains("steps")) step = meta.at("steps").get<int>();
      }
      fs::create_directories(render_out);
      const double distance = render_distance.value_or(scene.camera_distance);
      for (int i = 0; i < render_frames; ++i) {
        const double az = 2.0 * M_PI * i / render_frames;
        const CameraModel cam = cli::orbit_camera(scene, az, render_elevation, distance, render_size);
        const Image img = render_image(field, cam, render_samples, scene.background);
        char name[64];
        std::snprintf(name, sizeof name, "render_%d_%d.ppm", i, step);
        write_ppm(fs::path(render_out) / name, img);
      }
      out << "wrote " << render_frames << " frames to " << render_out << '\n';
    } else if (hist->parsed()) {
      const auto field = load_checkpoint(hist_ckpt);
      const Dataset ds = load_dataset(hist_data);
      const auto h = residual_histogram(field, ds, Split::Train, hist_bins, hist_samples);
      fs::create_directories(hist_out);
      write_histogram_csv(h.distractor, fs::path(hist_out) / "hist_distractor.csv");
      write_histogram_csv(h.clean, fs::path(hist_out) / "hist_clean.csv");
      out << "median residual: distractor " << h.distractor.median() << ", clean " << h.clean.median()
          << '\n';
    } else if (sweep->parsed()) {
      Experiment base;
      std::vector<std::string> values;
      SweepAxis axis{};
      try {
        base.scene = sweep_gen.scene();
        base.data = sweep_gen.data();
        base.train = sweep_train.config();
        base.train.seed = sweep_gen.seed;
        axis = parse_sweep_axis(sweep_axis);
        values = split_csv(sweep_values);
        for (const auto& v : values) {
          Experiment probe = base;
          apply_sweep_value(probe, axis, v);
          probe.scene.validate();
          probe.train.validate();
        }
      } catch (const InvalidArgument& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
      }
      fs::create_directories(sweep_out);
      const auto rows = run_sweep(base, axis, values, fs::path(sweep_out), verbose, sweep_jobs);
      for (const auto& r : rows)
        out << r.axis << '=' << r.value << " eval_psnr " << detail::format_double(r.eval_psnr) << '\n';
    }
  } catch (const LoadError& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace robustfield
