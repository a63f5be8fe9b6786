#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "robustfield/dataset.hpp"
#include "robustfield/eval.hpp"

using namespace robustfield;
namespace fs = std::filesystem;

namespace {

Image noise_image(Rng& rng, int n) {
  Image img(n, n);
  for (auto& v : img.values()) v = {rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1)};
  return img;
}

BinaryMask mask_from(std::initializer_list<int> bits) {
  BinaryMask m(1, static_cast<int>(bits.size()));
  int i = 0;
  for (int b : bits) m(0, i++) = static_cast<std::uint8_t>(b);
  return m;
}

const Dataset& small_dataset() {
  static const Dataset ds = [] {
    DatasetOptions o;
    o.n_train = 3;
    o.n_eval = 2;
    o.image_size = 24;
    return make_dataset(build_scene(Difficulty::Hard, 5), o);
  }();
  return ds;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::path(ROBUSTFIELD_TEST_TMP) / "eval";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(Psnr, HandValues) {
  const Image a(4, 4, Rgb{0.5, 0.5, 0.5});
  EXPECT_TRUE(std::isinf(compute_psnr(a, a)));
  EXPECT_NEAR(compute_psnr(a, Image(4, 4, Rgb{0.6, 0.6, 0.6})), 20.0, 1e-9);
  EXPECT_NEAR(compute_psnr(Image(2, 2, Rgb{0, 0, 0}), Image(2, 2, Rgb{1, 1, 1})), 0.0, 1e-12);
  // One channel off by 0.3 out of three: MSE = 0.03.
  EXPECT_NEAR(compute_psnr(Image(1, 1, Rgb{0, 0, 0}), Image(1, 1, Rgb{0.3, 0, 0})),
              -10 * std::log10(0.03), 1e-9);
  EXPECT_THROW(compute_psnr(a, Image(3, 4)), InvalidArgument);
}

TEST(Psnr, Symmetric) {
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    const Image a = noise_image(rng, 8), b = noise_image(rng, 8);
    EXPECT_EQ(compute_psnr(a, b), compute_psnr(b, a));
  }
}

TEST(Ssim, IdenticalIsOne) {
  Rng rng(2);
  const Image a = noise_image(rng, 16);
  EXPECT_NEAR(compute_ssim(a, a), 1.0, 1e-12);
}

TEST(Ssim, ConstantImagesReduceToLuminanceTerm) {
  const double c1 = 1e-4;
  const double want = (2 * 0.5 * 0.7 + c1) / (0.25 + 0.49 + c1);
  EXPECT_NEAR(compute_ssim(Image(12, 12, Rgb{0.5, 0.5, 0.5}), Image(12, 12, Rgb{0.7, 0.7, 0.7})), want,
              1e-12);
}

TEST(Ssim, UncorrelatedNoiseIsLowAndBounded) {
  Rng rng(3);
  for (int i = 0; i < 5; ++i) {
    const Image a = noise_image(rng, 24), b = noise_image(rng, 24);
    const double s = compute_ssim(a, b);
    EXPECT_LT(s, 0.2);
    EXPECT_GE(s, -1.0);
    EXPECT_NEAR(s, compute_ssim(b, a), 1e-12);
  }
}

TEST(Ssim, RejectsSmallImages) {
  EXPECT_THROW(compute_ssim(Image(10, 20), Image(10, 20)), InvalidArgument);
}

TEST(MaskMetrics, HandValues) {
  // Inlier mask zeros are predicted outliers.
  auto m = compute_mask_metrics(mask_from({0, 0, 1, 1}), mask_from({1, 1, 0, 0}));
  EXPECT_EQ(m.precision, 1.0);
  EXPECT_EQ(m.iou, 1.0);
  m = compute_mask_metrics(mask_from({1, 1, 0, 0}), mask_from({1, 1, 0, 0}));
  EXPECT_EQ(m.precision, 0.0);
  EXPECT_EQ(m.recall, 0.0);
  EXPECT_EQ(m.iou, 0.0);
  m = compute_mask_metrics(mask_from({0, 0, 1, 1}), mask_from({1, 0, 0, 0}));
  EXPECT_EQ(m.precision, 0.5);
  EXPECT_EQ(m.recall, 1.0);
  EXPECT_EQ(m.iou, 0.5);
  m = compute_mask_metrics(mask_from({1, 1, 1}), mask_from({0, 0, 0}));
  EXPECT_EQ(m.iou, 1.0);
  EXPECT_THROW(compute_mask_metrics(mask_from({1}), mask_from({1, 0})), InvalidArgument);
}

TEST(MaskMetricsProperty, MatchesSetArithmeticAndIgnoresPixelOrder) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 30;
    BinaryMask pred(1, n), truth(1, n);
    for (int i = 0; i < n; ++i) {
      pred(0, i) = rng.uniform(0, 1) < 0.5;
      truth(0, i) = rng.uniform(0, 1) < 0.3;
    }
    int inter = 0, uni = 0;
    for (int i = 0; i < n; ++i) {
      const bool p = !pred(0, i), t = truth(0, i);
      inter += p && t;
      uni += p || t;
    }
    const auto m = compute_mask_metrics(pred, truth);
    EXPECT_DOUBLE_EQ(m.iou, uni ? static_cast<double>(inter) / uni : 1.0);
    EXPECT_LE(m.iou, std::min(m.precision, m.recall) + 1e-15);

    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = (i * 7) % n;
    BinaryMask pp(1, n), tp(1, n);
    for (int i = 0; i < n; ++i) {
      pp(0, i) = pred(0, perm[static_cast<std::size_t>(i)]);
      tp(0, i) = truth(0, perm[static_cast<std::size_t>(i)]);
    }
    const auto q = compute_mask_metrics(pp, tp);
    EXPECT_EQ(q.iou, m.iou);
    EXPECT_EQ(q.precision, m.precision);
  }
}

TEST(Histogram, ConservesPixelsAndSeparatesLabels) {
  const Dataset& ds = small_dataset();
  const auto field = create_field<float>({4, 4, 4}, ds.scene.bounds, 0);
  const auto h = residual_histogram(field, ds, Split::Train, 32, 8);
  std::size_t pixels = 0, distractor = 0;
  for (const auto* f : ds.split(Split::Train)) {
    pixels += f->image.size();
    for (auto v : f->oracle_mask->values()) distractor += v;
  }
  EXPECT_EQ(h.distractor.total() + h.clean.total(), pixels);
  EXPECT_EQ(h.distractor.total(), distractor);
  EXPECT_EQ(h.clean.edges.size(), 33u);
  EXPECT_NEAR(h.clean.edges.back(), std::sqrt(3.0), 1e-15);
  EXPECT_THROW(residual_histogram(field, ds, Split::Eval, 32, 8), InvalidArgument);
}

TEST(Histogram, BinningAndMedian) {
  Histogram h = make_histogram(4, 1.0);
  for (double v : {0.0, 0.1, 0.3, 0.6, 1.0, 5.0}) histogram_add(h, v);
  EXPECT_EQ(h.counts, (std::vector<std::size_t>{2, 1, 1, 2}));
  EXPECT_EQ(h.median(), 0.375);
  const auto path = scratch("hist.csv");
  write_histogram_csv(h, path);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "edges,counts");
  std::getline(in, line);
  EXPECT_EQ(line, "0,2");
}

TEST(EvaluateField, EmptyFieldScoresTheBackground) {
  const Dataset& ds = small_dataset();
  const auto field = create_field<float>({4, 4, 4}, ds.scene.bounds, 0);
  EvalOptions opt;
  opt.n_samples = 8;
  opt.include_train = true;
  auto empty = field;
  for (auto& v : empty.density_raw) v = -100.0f;
  const auto rows = evaluate_field(empty, ds, opt);
  ASSERT_EQ(rows.size(), 2u + 1u + 3u + 1u);
  const Image bg(24, 24, ds.scene.background);
  EXPECT_NEAR(rows[0].psnr, compute_psnr(bg, ds.split(Split::Eval)[0]->image), 1e-4);
  EXPECT_EQ(rows[2].frame, "mean");
  EXPECT_NEAR(rows[2].psnr, 0.5 * (rows[0].psnr + rows[1].psnr), 1e-12);
  EXPECT_FALSE(rows[0].mask.has_value());
  EXPECT_TRUE(rows[3].mask.has_value());
  EXPECT_EQ(rows[6].split, "train");

  const auto again = evaluate_field(empty, ds, opt);
  for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_EQ(rows[i].psnr, again[i].psnr);

  const auto path = scratch("eval.csv");
  write_eval_csv(rows, path);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, kEvalCsvHeader);
  std::getline(in, line);
  EXPECT_EQ(std::count(line.begin(), line.end(), ','), 6);
}

TEST(EvaluateField, MeanEvalPsnrMatchesRows) {
  const Dataset& ds = small_dataset();
  Rng rng(9);
  const auto field = oracle::random_field({4, 4, 4}, 1, rng, ds.scene.bounds).cast<float>();
  EvalOptions opt;
  opt.n_samples = 8;
  const auto rows = evaluate_field(field, ds, opt);
  EXPECT_NEAR(mean_eval_psnr(field, ds, 8), rows.back().psnr, 1e-12);
}
