#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "robustfield/camera.hpp"
#include "robustfield/common.hpp"
#include "robustfield/image_io.hpp"
#include "robustfield/json_io.hpp"
#include "robustfield/scene.hpp"

namespace robustfield {

enum class Split { Train, Eval };

inline std::string_view split_name(Split s) { return s == Split::Train ? "train" : "eval"; }

struct FrameRecord {
  int id = 0;
  Split split = Split::Train;
  CameraModel camera;
  Image image;
  std::optional<BinaryMask> oracle_mask;  // 1 = distractor pixel; training frames only

  void validate() const {
    camera.validate();
    require(image.height() == camera.height && image.width() == camera.width,
            "frame: image size does not match the camera");
    if (oracle_mask) require(oracle_mask->same_shape(image), "frame: image/mask size mismatch");
  }
};

struct DatasetOptions {
  int n_train = 60;
  int n_eval = 20;
  int image_size = 96;
  int supersample = 2;
};

struct Dataset {
  SceneSpec scene;
  DatasetOptions options;
  /// Mean share of distractor pixels over cluttered training frames.
  double distractor_occupancy = 0.0;
  std::vector<FrameRecord> frames;

  [[nodiscard]] std::vector<const FrameRecord*> split(Split s) const {
    std::vector<const FrameRecord*> out;
    for (const auto& f : frames)
      if (f.split == s) out.push_back(&f);
    return out;
  }
};

// ---------------------------------------------------------------------------
// JSON mapping

namespace detail {

inline Json vec_json(const Vec3d& v) { return Json::array({v.x, v.y, v.z}); }

inline Vec3d json_vec(const Json& j) {
  if (!j.is_array() || j.size() != 3) throw LoadError("expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline Json primitive_json(const Primitive& p) {
  return {{"shape", p.shape == ShapeKind::Sphere ? "sphere" : "box"},
          {"center", vec_json(p.center)},
          {"size", vec_json(p.size)},
          {"albedo", vec_json(p.albedo)},
          {"is_distractor", p.is_distractor}};
}

inline Primitive json_primitive(const Json& j) {
  Primitive p;
  const auto shape = j.at("shape").get<std::string>();
  if (shape != "sphere" && shape != "box") throw LoadError("unknown primitive shape '" + shape + "'");
  p.shape = shape == "sphere" ? ShapeKind::Sphere : ShapeKind::Box;
  p.center = json_vec(j.at("center"));
  p.size = json_vec(j.at("size"));
  p.albedo = json_vec(j.at("albedo"));
  p.is_distractor = j.at("is_distractor").get<bool>();
  return p;
}

inline std::string frame_file(int id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%04d.ppm", id);
  return buf;
}

}  // namespace detail

inline Json scene_to_json(const SceneSpec& s) {
  Json statics = Json::array(), pool = Json::array();
  for (const auto& p : s.statics) statics.push_back(detail::primitive_json(p));
  for (const auto& p : s.distractor_pool) pool.push_back(detail::primitive_json(p));
  return {{"bounds", {{"lo", detail::vec_json(s.bounds.lo)}, {"hi", detail::vec_json(s.bounds.hi)}}},
          {"statics", statics},
          {"distractor_pool", pool},
          {"difficulty", difficulty_name(s.difficulty)},
          {"light_position", detail::vec_json(s.light_position)},
          {"ambient", s.ambient},
          {"background", detail::vec_json(s.background)},
          {"clutter_fraction", s.clutter_fraction},
          {"shadows", s.shadows},
          {"seed", s.seed},
          {"camera_distance", s.camera_distance},
          {"placement_region",
           {{"lo", detail::vec_json(s.placement_region.lo)}, {"hi", detail::vec_json(s.placement_region.hi)}}}};
}

inline SceneSpec scene_from_json(const Json& j) {
  SceneSpec s;
  s.bounds = {detail::json_vec(j.at("bounds").at("lo")), detail::json_vec(j.at("bounds").at("hi"))};
  s.statics.clear();
  for (const auto& p : j.at("statics")) s.statics.push_back(detail::json_primitive(p));
  for (const auto& p : j.at("distractor_pool")) s.distractor_pool.push_back(detail::json_primitive(p));
  s.difficulty = parse_difficulty(j.at("difficulty").get<std::string>());
  s.light_position = detail::json_vec(j.at("light_position"));
  s.ambient = j.at("ambient").get<double>();
  s.background = detail::json_vec(j.at("background"));
  s.clutter_fraction = j.at("clutter_fraction").get<double>();
  s.shadows = j.at("shadows").get<bool>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.camera_distance = j.at("camera_distance").get<double>();
  s.placement_region = {detail::json_vec(j.at("placement_region").at("lo")),
                        detail::json_vec(j.at("placement_region").at("hi"))};
  return s;
}

// ---------------------------------------------------------------------------
// Generation

/// Indices of the training frames that receive distractors: the first
/// round(clutter_fraction * n_train) entries of a seeded permutation, so the
/// cluttered sets are nested across clutter fractions.
inline std::vector<bool> cluttered_frames(const SceneSpec& spec, int n_train) {
  std::vector<int> order(static_cast<std::size_t>(n_train));
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng(spec.seed).fork(0xC1A77E2);
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[rng.below(i)]);
  const auto count = static_cast<std::size_t>(std::lround(spec.clutter_fraction * n_train));
  std::vector<bool> out(static_cast<std::size_t>(n_train), false);
  for (std::size_t i = 0; i < count; ++i) out[static_cast<std::size_t>(order[i])] = true;
  return out;
}

/// Builds all frames in memory. Cameras, clutter selection, and per-frame
/// placements draw from independent streams of the scene seed, so scenes
/// differing only in clutter_fraction or distractor pool share their views.
inline Dataset make_dataset(const SceneSpec& spec, const DatasetOptions& opt) {
  spec.validate();
  require(opt.n_train > 0 && opt.n_eval > 0, "generate_dataset: frame counts must be > 0");
  require(opt.image_size > 0, "generate_dataset: image size must be > 0");

  Dataset ds;
  ds.scene = spec;
  ds.options = opt;
  const int total = opt.n_train + opt.n_eval;
  Rng camera_rng = Rng(spec.seed).fork(0xCA3E8A);
  std::vector<CameraModel> cameras;
  for (int i = 0; i < total; ++i)
    cameras.push_back(sample_hemisphere_camera(spec, camera_rng, opt.image_size));
  const std::vector<bool> cluttered = cluttered_frames(spec, opt.n_train);

  // Placement runs serially so failures and streams stay deterministic.
  std::vector<PlacedScene> placed(static_cast<std::size_t>(total));
  for (int i = 0; i < total; ++i) {
    auto& ps = placed[static_cast<std::size_t>(i)];
    ps.spec = &ds.scene;
    if (i < opt.n_train && cluttered[static_cast<std::size_t>(i)]) {
      Rng rng = Rng(spec.seed).fork(0x91ACE).fork(static_cast<std::uint64_t>(i));
      ps.distractors = place_distractors(spec, rng);
    }
  }

  ds.frames.resize(static_cast<std::size_t>(total));
  parallel_for(static_cast<std::size_t>(total), worker_count(), [&](std::size_t i) {
    FrameRecord& f = ds.frames[i];
    f.id = static_cast<int>(i);
    f.split = static_cast<int>(i) < opt.n_train ? Split::Train : Split::Eval;
    f.camera = cameras[i];
    const ReferenceFrame ref = render_reference_frame(placed[i], f.camera, opt.supersample);
    f.image = quantize(ref.image);
    if (f.split == Split::Train) f.oracle_mask = ref.distractor_mask;
  });

  double occ = 0.0;
  int n_cluttered = 0;
  for (int i = 0; i < opt.n_train; ++i) {
    if (!cluttered[static_cast<std::size_t>(i)]) continue;
    const auto& m = *ds.frames[static_cast<std::size_t>(i)].oracle_mask;
    occ += static_cast<double>(std::count(m.values().begin(), m.values().end(), 1)) /
           static_cast<double>(m.size());
    ++n_cluttered;
  }
  ds.distractor_occupancy = n_cluttered ? occ / n_cluttered : 0.0;
  return ds;
}

// ---------------------------------------------------------------------------
// Serialization

inline Json camera_json(const FrameRecord& f) {
  const auto& c = f.camera;
  return {{"frame", f.id}, {"split", split_name(f.split)}, {"fx", c.fx},       {"fy", c.fy},
          {"cx", c.cx},    {"cy", c.cy},                   {"width", c.width}, {"height", c.height},
          {"camera_to_world", c.pose}};
}

/// Writes manifest.json, cameras.json, images/ and masks/.
inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  Json train = Json::array(), eval = Json::array(), cams = Json::array();
  for (const auto& f : ds.frames) {
    (f.split == Split::Train ? train : eval).push_back(f.id);
    cams.push_back(camera_json(f));
    write_ppm(dir / "images" / detail::frame_file(f.id), f.image);
    if (f.oracle_mask) write_mask_ppm(dir / "masks" / detail::frame_file(f.id), *f.oracle_mask);
  }
  const Json manifest = {{"format", "robustfield-dataset"},
                         {"version", 1},
                         {"scene", scene_to_json(ds.scene)},
                         {"n_train", ds.options.n_train},
                         {"n_eval", ds.options.n_eval},
                         {"image_size", ds.options.image_size},
                         {"supersample", ds.options.supersample},
                         {"distractor_occupancy", ds.distractor_occupancy},
                         {"splits", {{"train", train}, {"eval", eval}}}};
  write_json_file(dir / "manifest.json", manifest);
  write_json_file(dir / "cameras.json", cams);
}

inline Dataset generate_dataset(const SceneSpec& spec, const DatasetOptions& opt,
                                const std::filesystem::path& out_dir) {
  Dataset ds = make_dataset(spec, opt);
  save_dataset(ds, out_dir);
  return ds;
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw LoadError("dataset directory '" + dir.string() + "' not found");
  const Json manifest = read_json_file(dir / "manifest.json");
  const Json cams = read_json_file(dir / "cameras.json");

  Dataset ds;
  try {
    if (manifest.at("format").get<std::string>() != "robustfield-dataset")
      throw LoadError("manifest.json: unexpected format tag");
    ds.scene = scene_from_json(manifest.at("scene"));
    ds.options.n_train = manifest.at("n_train").get<int>();
    ds.options.n_eval = manifest.at("n_eval").get<int>();
    ds.options.image_size = manifest.at("image_size").get<int>();
    ds.options.supersample = manifest.at("supersample").get<int>();
    ds.distractor_occupancy = manifest.at("distractor_occupancy").get<double>();
  } catch (const Json::exception& e) {
    throw LoadError(std::string("manifest.json: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw LoadError(std::string("manifest.json: ") + e.what());
  }
  if (!cams.is_array()) throw LoadError("cameras.json: expected an array");

  for (const Json& c : cams) {
    FrameRecord f;
    std::string split;
    try {
      f.id = c.at("frame").get<int>();
      split = c.at("split").get<std::string>();
      f.camera.fx = c.at("fx").get<double>();
      f.camera.fy = c.at("fy").get<double>();
      f.camera.cx = c.at("cx").get<double>();
      f.camera.cy = c.at("cy").get<double>();
      f.camera.width = c.at("width").get<int>();
      f.camera.height = c.at("height").get<int>();
      const auto pose = c.at("camera_to_world").get<std::vector<double>>();
      if (pose.size() != 12) throw LoadError("camera_to_world must have 12 entries");
      std::copy(pose.begin(), pose.end(), f.camera.pose.begin());
    } catch (const Json::exception& e) {
      throw LoadError("cameras.json: malformed entry: " + std::string(e.what()));
    }
    const std::string tag = "frame " + std::to_string(f.id);
    if (split != "train" && split != "eval") throw LoadError(tag + ": unknown split '" + split + "'");
    f.split = split == "train" ? Split::Train : Split::Eval;
    f.image = read_ppm(dir / "images" / detail::frame_file(f.id));
    const fs::path mask_path = dir / "masks" / detail::frame_file(f.id);
    if (f.split == Split::Train) {
      if (!fs::exists(mask_path)) throw LoadError(tag + ": missing oracle mask");
      f.oracle_mask = read_mask_ppm(mask_path);
    }
    try {
      f.validate();
    } catch (const InvalidArgument& e) {
      throw LoadError(tag + ": " + e.what());
    }
    ds.frames.push_back(std::move(f));
  }
  if (ds.split(Split::Train).empty()) throw LoadError("empty train split");
  if (ds.split(Split::Eval).empty()) throw LoadError("empty eval split");
  return ds;
}

}  // namespace robustfield
