#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "oracles.hpp"
#include "robustfield/kernels.hpp"

using namespace robustfield;

namespace {

const KernelKind kNamed[] = {KernelKind::L2, KernelKind::L1, KernelKind::Charbonnier, KernelKind::Cauchy,
                             KernelKind::GemanMcClure};

std::vector<KernelSpec> all_specs() {
  std::vector<KernelSpec> s;
  for (KernelKind k : kNamed)
    for (double c : {0.3, 1.0, 2.5}) s.push_back(KernelSpec::named(k, c));
  for (double a : {-std::numeric_limits<double>::infinity(), -8.0, -2.0, -0.5, 0.5, 1.0, 1.5, 3.0})
    for (double c : {0.3, 1.0}) s.push_back(KernelSpec::barron(a, c));
  return s;
}

}  // namespace

TEST(KernelValue, ZeroAtOriginForEveryKind) {
  for (const auto& s : all_specs()) EXPECT_EQ(kernel_value(0.0, s), 0.0) << kernel_name(s.kind);
}

TEST(KernelValue, HandEvaluatedPoints) {
  EXPECT_NEAR(kernel_value(1.0, KernelSpec::named(KernelKind::GemanMcClure, 1.0)), 0.4, 1e-15);
  EXPECT_NEAR(kernel_value(2.0, KernelSpec::named(KernelKind::L2, 1.0)), 2.0, 1e-15);
}

TEST(KernelValue, MonotoneNonDecreasing) {
  for (const auto& s : all_specs()) {
    double prev = 0.0;
    for (double x : oracle::log_grid(1e-4, 100.0, 400)) {
      const double v = kernel_value(x, s);
      EXPECT_GE(v, prev) << kernel_name(s.kind) << " alpha " << s.alpha << " x " << x;
      prev = v;
    }
  }
}

TEST(KernelValue, RejectsInvalidInput) {
  const auto l2 = KernelSpec::named(KernelKind::L2);
  EXPECT_THROW(kernel_value(std::nan(""), l2), InvalidArgument);
  EXPECT_THROW(kernel_value(std::numeric_limits<double>::infinity(), l2), InvalidArgument);
  EXPECT_THROW(kernel_value(-0.1, l2), InvalidArgument);
  EXPECT_THROW(kernel_value(1.0, KernelSpec::named(KernelKind::L2, 0.0)), InvalidArgument);
  EXPECT_THROW(kernel_value(1.0, KernelSpec::named(KernelKind::Cauchy, -1.0)), InvalidArgument);
  EXPECT_THROW(kernel_value(1.0, KernelSpec::barron(2.0)), InvalidArgument);
  EXPECT_THROW(kernel_value(1.0, KernelSpec::barron(0.0)), InvalidArgument);
  EXPECT_THROW(irls_weight(1.0, KernelSpec::barron(0.0)), InvalidArgument);
  EXPECT_THROW(irls_weight(-1.0, l2), InvalidArgument);
}

TEST(IrlsWeight, HandEvaluatedPoints) {
  for (double x : {0.0, 0.3, 7.0}) EXPECT_EQ(irls_weight(x, KernelSpec::named(KernelKind::L2)), 1.0);
  EXPECT_NEAR(irls_weight(0.0, KernelSpec::named(KernelKind::GemanMcClure)), 1.0, 1e-15);
  EXPECT_NEAR(irls_weight(2.0, KernelSpec::named(KernelKind::L1), 1e-8), 0.5, 1e-15);
}

TEST(IrlsWeight, FloorBoundsL1Weight) {
  const auto l1 = KernelSpec::named(KernelKind::L1);
  EXPECT_EQ(irls_weight(0.0, l1, 1e-8), 1e8);
  EXPECT_EQ(irls_weight(1e-12, l1, 1e-4), 1e4);
}

TEST(IrlsWeight, NonNegative) {
  for (const auto& s : all_specs())
    for (double x : oracle::log_grid(1e-6, 1e3, 200)) EXPECT_GE(irls_weight(x, s), 0.0);
}

TEST(IrlsWeight, TimesResidualIsInfluenceExactly) {
  for (const auto& s : all_specs())
    for (double x : oracle::log_grid(1e-8, 50.0, 300))
      EXPECT_EQ(x * irls_weight(x, s, 1e-8), kernel_influence(x, s, 1e-8)) << kernel_name(s.kind);
}

TEST(KernelInfluence, MatchesCentralDifferencesForNamedKinds) {
  for (KernelKind k : kNamed)
    for (double c : {0.3, 1.0, 2.5})
      for (double x : oracle::log_grid(0.011, 9.9, 60)) {
        const auto s = KernelSpec::named(k, c);
        const double fd =
            oracle::central_difference([&](double t) { return kernel_value(t, s); }, x, 1e-5 * x);
        EXPECT_LE(oracle::relative_error(kernel_influence(x, s), fd), 1e-6)
            << kernel_name(k) << " c " << c << " x " << x;
      }
}

// Deep in a redescending tail psi is far below the difference quotient's
// roundoff, so the general shapes are checked with an absolute floor.
TEST(KernelInfluence, MatchesCentralDifferencesForGeneralShapes) {
  for (const auto& s : all_specs()) {
    if (s.kind != KernelKind::BarronGeneral) continue;
    for (double x : oracle::log_grid(0.011, 9.9, 60)) {
      const double fd =
          oracle::central_difference([&](double t) { return kernel_value(t, s); }, x, 1e-5 * x);
      EXPECT_LE(oracle::relative_error(kernel_influence(x, s), fd, 1e-5), 1e-6)
          << "alpha " << s.alpha << " c " << s.scale << " x " << x;
    }
  }
}

TEST(KernelInfluence, RedescendingOrderingAtTenScales) {
  for (double c : {0.5, 1.0, 3.0}) {
    const double x = 10.0 * c;
    const double l2 = kernel_influence(x, KernelSpec::named(KernelKind::L2, c));
    const double ch = kernel_influence(x, KernelSpec::named(KernelKind::Charbonnier, c));
    const double gm = kernel_influence(x, KernelSpec::named(KernelKind::GemanMcClure, c));
    EXPECT_GT(l2, ch);
    EXPECT_GT(ch, gm);
  }
}

// Near alpha = 2 the exact gap to L2 grows like (eps/4) z^2 ln(z^2/eps), so
// the 1e-3 bound only holds for x up to about 2c; the Cauchy side holds on
// the whole grid.
TEST(BarronGeneral, ContinuousAtRemovableSingularities) {
  for (double x : oracle::log_grid(0.011, 9.9, 80))
    for (double eps : {-1e-4, 1e-4}) {
      if (x <= 2.0) {
        EXPECT_LE(std::abs(kernel_value(x, KernelSpec::barron(2.0 + eps)) -
                           kernel_value(x, KernelSpec::named(KernelKind::L2))),
                  1e-3)
            << x;
      }
      EXPECT_LE(std::abs(kernel_value(x, KernelSpec::barron(eps)) -
                         kernel_value(x, KernelSpec::named(KernelKind::Cauchy))),
                1e-3)
          << x;
    }
}

TEST(BarronGeneral, StableNearSingularitiesAgainstLongDouble) {
  auto reference = [](long double x, long double a) {
    const long double b = std::fabs(a - 2.0L);
    return (b / a) * (std::pow(x * x / b + 1.0L, a / 2.0L) - 1.0L);
  };
  for (double a : {2.0 + 1e-4, 2.0 - 1e-4, 1e-4, -1e-4, 2.0 + 1e-7, 1e-7})
    for (double x : oracle::log_grid(0.011, 9.9, 40)) {
      const double want = static_cast<double>(reference(x, a));
      EXPECT_LE(oracle::relative_error(kernel_value(x, KernelSpec::barron(a)), want), 1e-8)
          << "alpha " << a << " x " << x;
    }
}

TEST(BarronGeneral, NamedShapesCoincide) {
  for (double x : oracle::log_grid(0.01, 10.0, 50)) {
    EXPECT_NEAR(kernel_value(x, KernelSpec::barron(1.0)),
                kernel_value(x, KernelSpec::named(KernelKind::Charbonnier)), 1e-12);
    EXPECT_NEAR(kernel_value(x, KernelSpec::barron(-2.0)),
                kernel_value(x, KernelSpec::named(KernelKind::GemanMcClure)), 1e-12);
    EXPECT_NEAR(kernel_value(x, KernelSpec::barron(-1e9)),
                kernel_value(x, KernelSpec::barron(-std::numeric_limits<double>::infinity())), 1e-6);
  }
}

TEST(KernelNames, RoundTrip) {
  for (KernelKind k : {KernelKind::L2, KernelKind::L1, KernelKind::Charbonnier, KernelKind::Cauchy,
                       KernelKind::GemanMcClure, KernelKind::BarronGeneral})
    EXPECT_EQ(parse_kernel_kind(kernel_name(k)), k);
  EXPECT_THROW(parse_kernel_kind("huber"), InvalidArgument);
}
