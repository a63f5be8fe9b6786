#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "robustfield/dataset.hpp"
#include "robustfield/train.hpp"

using namespace robustfield;
namespace fs = std::filesystem;

namespace {

LossConfig loss_config(LossMode mode) {
  LossConfig c;
  c.mode = mode;
  return c;
}

Image filled(int n, Rgb v) { return Image(n, n, v); }

std::vector<Image> random_patches(Rng& rng, int count, int n = 16) {
  std::vector<Image> out;
  for (int p = 0; p < count; ++p) {
    Image img(n, n);
    for (auto& v : img.values()) v = {rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1)};
    out.push_back(std::move(img));
  }
  return out;
}

const Dataset& small_dataset() {
  static const Dataset ds = [] {
    DatasetOptions o;
    o.n_train = 4;
    o.n_eval = 2;
    o.image_size = 24;
    return make_dataset(build_scene(Difficulty::Medium, 3), o);
  }();
  return ds;
}

TrainConfig tiny_config(LossMode mode) {
  TrainConfig c;
  c.loss.mode = mode;
  c.patches_per_batch = 2;
  c.steps = 6;
  c.warmup_steps = 2;
  c.grid_resolution = 6;
  c.n_samples = 8;
  c.eval_samples = 8;
  c.log_interval = 3;
  c.workers = 1;
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::path(ROBUSTFIELD_TEST_TMP) / "train" / name;
  fs::remove_all(p);
  fs::create_directories(p.parent_path());
  return p;
}

std::vector<double> params(const VoxelField<float>& f) {
  std::vector<double> out(f.density_raw.begin(), f.density_raw.end());
  out.insert(out.end(), f.color_coeffs.begin(), f.color_coeffs.end());
  return out;
}

}  // namespace

TEST(ComputeLoss, IdenticalPatchesGiveZero) {
  Rng rng(1);
  const auto a = random_patches(rng, 3);
  for (LossMode m : {LossMode::L2, LossMode::L1, LossMode::Robust, LossMode::Kernel}) {
    const auto r = compute_loss(a, a, {}, loss_config(m));
    EXPECT_EQ(r.loss, 0.0) << loss_mode_name(m);
    for (const auto& g : r.gradient)
      for (const auto& v : g.values()) EXPECT_EQ(v, (Rgb{0, 0, 0}));
  }
}

TEST(ComputeLoss, SinglePixelL2) {
  const std::vector<Image> pred{filled(1, {0.6, 0.5, 0.5})};
  const std::vector<Image> obs{filled(1, {0.5, 0.5, 0.5})};
  const auto r = compute_loss(pred, obs, {}, loss_config(LossMode::L2));
  EXPECT_NEAR(r.loss, 0.01, 1e-15);
  EXPECT_NEAR(r.gradient[0](0, 0).x, 0.2, 1e-15);
  EXPECT_EQ(r.gradient[0](0, 0).y, 0.0);
}

TEST(ComputeLoss, RobustDropsTheCorruptedHalfOfTheBatch) {
  const std::vector<Image> obs{filled(16, {0.2, 0.2, 0.2}), filled(16, {0.2, 0.2, 0.2})};
  const std::vector<Image> pred{filled(16, {0.3, 0.3, 0.3}), filled(16, {0.9, 0.9, 0.9})};
  const auto robust = compute_loss(pred, obs, {}, loss_config(LossMode::Robust));
  const auto clean = compute_loss(std::span(pred).first(1), std::span(obs).first(1), {},
                                  loss_config(LossMode::L2));
  EXPECT_NEAR(robust.loss, clean.loss, 1e-15);
  EXPECT_NEAR(robust.loss, 0.03, 1e-15);
  EXPECT_EQ(robust.contributing_pixels, 256u);
  EXPECT_EQ(robust.inlier_fraction, 0.5);
  for (const auto& v : robust.gradient[1].values()) EXPECT_EQ(v, (Rgb{0, 0, 0}));
}

TEST(ComputeLoss, RobustEqualsL2WhenResidualsAreEqual) {
  const std::vector<Image> obs{filled(16, {0.2, 0.4, 0.6})};
  const std::vector<Image> pred{filled(16, {0.25, 0.35, 0.6})};
  const auto robust = compute_loss(pred, obs, {}, loss_config(LossMode::Robust));
  const auto l2 = compute_loss(pred, obs, {}, loss_config(LossMode::L2));
  EXPECT_EQ(robust.loss, l2.loss);
  EXPECT_EQ(robust.gradient[0], l2.gradient[0]);
  EXPECT_EQ(robust.inlier_fraction, 1.0);
}

TEST(ComputeLoss, InnerBlockOnlyCountsCenteredPixels) {
  const std::vector<Image> obs{filled(16, {0.2, 0.2, 0.2})};
  const std::vector<Image> pred{filled(16, {0.3, 0.2, 0.2})};
  LossConfig c = loss_config(LossMode::Robust);
  c.inner_block_only = true;
  const auto r = compute_loss(pred, obs, {}, c);
  EXPECT_EQ(r.contributing_pixels, 64u);
  EXPECT_EQ(r.gradient[0](0, 0), (Rgb{0, 0, 0}));
  EXPECT_NEAR(r.gradient[0](8, 8).x, 2 * 0.1 / 64, 1e-15);
}

TEST(ComputeLoss, OracleSkipsFlaggedPixels) {
  const std::vector<Image> obs{filled(2, {0, 0, 0})};
  std::vector<Image> pred{filled(2, {0.1, 0, 0})};
  pred[0](0, 0) = {1, 1, 1};
  std::vector<BinaryMask> oracle{BinaryMask(2, 2, 0)};
  oracle[0](0, 0) = 1;
  const auto r = compute_loss(pred, obs, oracle, loss_config(LossMode::Oracle));
  EXPECT_NEAR(r.loss, 0.01, 1e-15);
  EXPECT_EQ(r.contributing_pixels, 3u);
  EXPECT_THROW(compute_loss(pred, obs, {}, loss_config(LossMode::Oracle)), InvalidArgument);
}

TEST(ComputeLoss, L1CharbonnierAndKernelHandValues) {
  const std::vector<Image> pred{filled(1, {0.5, 0.2, 0.2})};
  const std::vector<Image> obs{filled(1, {0.2, 0.6, 0.2})};
  EXPECT_NEAR(compute_loss(pred, obs, {}, loss_config(LossMode::L1)).loss, 0.7, 1e-15);

  LossConfig ch = loss_config(LossMode::Charbonnier);
  ch.charbonnier_scale = 0.5;
  // sqrt((x/c)^2 + 1) - 1 per channel.
  const double want = (std::sqrt(0.36 + 1) - 1) + (std::sqrt(0.64 + 1) - 1);
  EXPECT_NEAR(compute_loss(pred, obs, {}, ch).loss, want, 1e-12);

  LossConfig k = loss_config(LossMode::Kernel);
  k.kernel = KernelSpec::named(KernelKind::Cauchy, 0.5);
  EXPECT_NEAR(compute_loss(pred, obs, {}, k).loss, std::log(1.5), 1e-12);
}

TEST(ComputeLoss, GradientMatchesCentralDifferences) {
  Rng rng(2);
  for (LossMode m : {LossMode::L2, LossMode::L1, LossMode::Charbonnier, LossMode::Kernel}) {
    LossConfig c = loss_config(m);
    c.charbonnier_scale = 0.1;
    const auto obs = random_patches(rng, 2, 4);
    auto pred = random_patches(rng, 2, 4);
    const auto r = compute_loss(pred, obs, {}, c);
    for (int trial = 0; trial < 10; ++trial) {
      const std::size_t p = rng.below(2), i = rng.below(16), ch = rng.below(3);
      const double x0 = pred[p].values()[i][ch];
      const double fd = oracle::central_difference(
          [&](double x) {
            pred[p].values()[i][ch] = x;
            return compute_loss(pred, obs, {}, c).loss;
          },
          x0, 1e-6);
      pred[p].values()[i][ch] = x0;
      EXPECT_NEAR(r.gradient[p].values()[i][ch], fd, 1e-8) << loss_mode_name(m);
    }
  }
}

TEST(ComputeLoss, AllOutlierBatchIsDegenerate) {
  const std::vector<Image> obs{filled(2, {0, 0, 0})};
  const std::vector<Image> pred{filled(2, {1, 0, 0})};
  const std::vector<BinaryMask> oracle{BinaryMask(2, 2, 1)};
  const auto r = compute_loss(pred, obs, oracle, loss_config(LossMode::Oracle));
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.loss, 0.0);
  EXPECT_EQ(r.contributing_pixels, 0u);
}

TEST(ComputeLossProperty, RobustInlierFractionAtLeastHalf) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto pred = random_patches(rng, 4), obs = random_patches(rng, 4);
    const auto r = compute_loss(pred, obs, {}, loss_config(LossMode::Robust));
    EXPECT_GE(r.inlier_fraction, 0.5);
    EXPECT_LE(r.inlier_fraction, 1.0);
  }
}

TEST(LearningRate, WarmupThenExponentialDecay) {
  TrainConfig c;
  c.steps = 1000;
  c.warmup_steps = 10;
  c.lr_init = 0.1;
  c.lr_final = 0.001;
  EXPECT_NEAR(learning_rate(c, 0), 0.01, 1e-15);
  EXPECT_NEAR(learning_rate(c, 9), 0.1, 1e-15);
  EXPECT_NEAR(learning_rate(c, 500), 0.01, 1e-12);
  EXPECT_NEAR(learning_rate(c, 1000), 0.001, 1e-15);
  for (int s = 10; s < 1000; ++s) EXPECT_LT(learning_rate(c, s + 1), learning_rate(c, s));
  c.warmup_steps = 0;
  EXPECT_EQ(learning_rate(c, 0), 0.1);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Rng rng(4);
  auto f = oracle::random_field({4, 4, 4}, 1, rng).cast<float>();
  const auto before = params(f);
  AdamState<float> st(f);
  adam_step(f, FieldGradient<float>(f), st, TrainConfig{}, 0.1, 1);
  EXPECT_EQ(params(f), before);
}

TEST(Adam, FirstStepMovesEachParameterByLr) {
  Rng rng(5);
  auto f = oracle::random_field({3, 3, 3}, 0, rng);
  const auto before = f;
  FieldGradient<double> g(f);
  for (auto& v : g.density_raw) v = rng.uniform(-2, 2);
  AdamState<double> st(f);
  adam_step(f, g, st, TrainConfig{}, 0.05, 1);
  for (std::size_t i = 0; i < f.density_raw.size(); ++i)
    EXPECT_NEAR(before.density_raw[i] - f.density_raw[i], 0.05 * (g.density_raw[i] > 0 ? 1 : -1), 1e-7);
}

TEST(TrainStep, DegenerateBatchSkipsTheUpdate) {
  Dataset ds = small_dataset();
  for (auto& f : ds.frames)
    if (f.oracle_mask) *f.oracle_mask = BinaryMask(f.image.height(), f.image.width(), 1);
  const TrainConfig c = tiny_config(LossMode::Oracle);
  auto state = init_train_state<float>(c, ds);
  const auto before = params(state.field);
  StepWorkspace<float> ws;
  const auto st = train_step(state, ds, c, ws);
  EXPECT_TRUE(st.degenerate);
  EXPECT_EQ(params(state.field), before);
  EXPECT_EQ(state.adam.t, 0);
  EXPECT_EQ(state.step, 1);
}

TEST(TrainStep, NonFiniteLossAborts) {
  const Dataset& ds = small_dataset();
  const TrainConfig c = tiny_config(LossMode::L2);
  auto state = init_train_state<float>(c, ds);
  for (auto& v : state.field.density_raw) v = std::numeric_limits<float>::quiet_NaN();
  StepWorkspace<float> ws;
  EXPECT_THROW(train_step(state, ds, c, ws), RuntimeFailure);
}

TEST(EvaluateBatch, GradientMatchesCentralDifferencesEndToEnd) {
  DatasetOptions o;
  o.n_train = 1;
  o.n_eval = 1;
  o.image_size = 20;
  const Dataset ds = make_dataset(build_scene(Difficulty::Easy, 8), o);
  const FrameRecord* frame = ds.split(Split::Train).front();
  Rng rng(6);
  for (LossMode m : {LossMode::L2, LossMode::Robust, LossMode::Kernel}) {
    TrainConfig c = tiny_config(m);
    c.loss.kernel = KernelSpec::named(KernelKind::Cauchy, 0.3);
    const auto field = oracle::random_field({4, 4, 4}, 1, rng, ds.scene.bounds);
    const std::vector<PatchRef> patches{{frame, 2, 3}};
    StepWorkspace<double> ws;
    const LossResult lr = evaluate_batch(field, std::span<const PatchRef>(patches), ds.scene.background, c,
                                         nullptr, ws);
    ASSERT_FALSE(lr.degenerate);
    const auto analytic = oracle::flatten(ws.worker_grads[0]);
    auto loss = [&](const VoxelField<double>& g) {
      StepWorkspace<double> tmp;
      return evaluate_batch(g, std::span<const PatchRef>(patches), ds.scene.background, c, nullptr, tmp).loss;
    };
    const auto fd = oracle::field_fd_gradient(field, loss);
    EXPECT_LE(oracle::max_relative_error(analytic, fd), 1e-5) << loss_mode_name(m);
  }
}

TEST(EvaluateBatch, MaskIsHeldConstantDuringBackprop) {
  // One huge-residual pixel is an outlier; its color gets no gradient even
  // though moving it would reduce the residual.
  const std::vector<Image> obs{filled(16, {0.2, 0.2, 0.2})};
  std::vector<Image> pred{filled(16, {0.21, 0.2, 0.2})};
  for (int r = 0; r < 16; ++r)
    for (int col = 0; col < 16; ++col)
      if ((r * 16 + col) % 2) pred[0](r, col) = {0.22, 0.2, 0.2};
  pred[0](0, 0) = {0.95, 0.2, 0.2};
  const auto res = compute_loss(pred, obs, {}, loss_config(LossMode::Robust));
  ASSERT_EQ(res.masks[0].final(0, 0), 0);
  EXPECT_EQ(res.gradient[0](0, 0), (Rgb{0, 0, 0}));
}

TEST(RunTraining, DeterministicForFixedSeed) {
  const TrainConfig c = tiny_config(LossMode::Robust);
  const auto a = run_training<float>(c, small_dataset());
  const auto b = run_training<float>(c, small_dataset());
  ASSERT_EQ(a.field.density_raw.size(), b.field.density_raw.size());
  EXPECT_EQ(std::memcmp(a.field.density_raw.data(), b.field.density_raw.data(),
                        a.field.density_raw.size() * sizeof(float)), 0);
  EXPECT_EQ(std::memcmp(a.field.color_coeffs.data(), b.field.color_coeffs.data(),
                        a.field.color_coeffs.size() * sizeof(float)), 0);
  TrainConfig other = c;
  other.seed = 1;
  EXPECT_NE(params(run_training<float>(other, small_dataset()).field), params(a.field));
}

TEST(RunTraining, WritesArtifacts) {
  TrainConfig c = tiny_config(LossMode::Robust);
  c.mask_interval = 3;
  c.mask_frames = 2;
  c.eval_interval = 3;
  const auto dir = scratch("artifacts");
  const auto r = run_training<float>(c, small_dataset(), {dir, false});
  ASSERT_EQ(r.log.size(), 2u);
  EXPECT_EQ(r.log[1].step, 6);
  EXPECT_TRUE(r.log[1].eval_psnr.has_value());
  ASSERT_TRUE(r.log[1].mask_iou.has_value());
  EXPECT_GE(*r.log[1].mask_iou, 0.0);
  EXPECT_LE(*r.log[1].mask_iou, 1.0);
  std::ifstream m(dir / "metrics.csv");
  std::string header;
  std::getline(m, header);
  EXPECT_EQ(header, kMetricsCsvHeader);
  EXPECT_TRUE(fs::exists(dir / "masks" / "mask_000003_frame_0000.ppm"));
  const auto loaded = load_checkpoint(dir / "checkpoint.bin");
  EXPECT_EQ(params(loaded), params(r.field));
  EXPECT_EQ(load_checkpoint_metadata(dir / "checkpoint.bin").at("steps"), 6);
}

TEST(TrainConfigJson, RoundTrip) {
  TrainConfig c;
  c.loss.mode = LossMode::Kernel;
  c.loss.mask.mode = MaskMode::TrimDiffuse;
  c.loss.mask.trim_quantile = 0.7;
  c.loss.kernel = KernelSpec{KernelKind::BarronGeneral, 0.2, -3.0};
  c.loss.inner_block_only = true;
  c.steps = 77;
  c.seed = 1234567890123ULL;
  const Json j = train_config_to_json(c);
  EXPECT_EQ(train_config_to_json(train_config_from_json(j)), j);
  EXPECT_EQ(train_config_from_json(Json::parse(j.dump())).seed, c.seed);
  EXPECT_THROW(train_config_from_json(Json{{"loss", "fancy"}}), InvalidArgument);
  EXPECT_THROW(train_config_from_json(Json{{"steps", "many"}}), InvalidArgument);
}

TEST(TrainConfig, ValidateRejectsBadValues) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.lr_final = 1.0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = {};
  c.sh_degree = 2;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = {};
  c.loss.mask.trim_quantile = 0.0;
  EXPECT_THROW(c.validate(), InvalidArgument);
}
