#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "nconv/error.hpp"
#include "nconv/loss_metrics.hpp"
#include "test_util.hpp"

using namespace nconv;
using nconv::testing::random_tensor;

namespace {

double single_pixel_loss(double E_as_z, double C, int p) {
  // With target 0 and |z| < 1 the Huber term is z^2 / 2, so pick z = sqrt(2E).
  const Tensor Z({1}, std::sqrt(2.0 * E_as_z)), Cm({1}, C), T({1}, 0.0), M({1}, 1.0);
  return confidence_loss(Z, Cm, T, M, p, LossMode::HuberConf).report.total;
}

}  // namespace

TEST(Huber, Values) {
  EXPECT_EQ(huber(3.0, 3.0), 0.0);
  EXPECT_DOUBLE_EQ(huber(1.5, 1.0), 0.125);
  EXPECT_DOUBLE_EQ(huber(-1.0, 1.0), 1.5);
}

TEST(Huber, SmoothAtDelta) {
  for (double delta : {0.5, 1.0, 2.0}) {
    const double h = 1e-9;
    EXPECT_NEAR(huber(delta - h, 0, delta), huber(delta + h, 0, delta), 1e-8);
    EXPECT_NEAR(huber_grad(delta - h, 0, delta), delta, 1e-8);
    EXPECT_EQ(huber_grad(delta + h, 0, delta), delta);
    EXPECT_EQ(huber_grad(-delta - h, 0, delta), -delta);
  }
}

TEST(ConfidenceLoss, Substitutions) {
  EXPECT_NEAR(single_pixel_loss(0.0, 1.0, 1), -1.0, 1e-15);
  EXPECT_NEAR(single_pixel_loss(0.5, 0.5, 2), 0.375, 1e-15);
  // E = 1 needs the linear Huber branch: |z| = 1.5 gives 1.5 - 0.5 = 1.
  const LossResult r =
      confidence_loss(Tensor({1}, 1.5), Tensor({1}, 1.0), Tensor({1}, 0.0), Tensor({1}, 1.0), 1, LossMode::HuberConf);
  EXPECT_NEAR(r.report.total, 1.0, 1e-15);
}

TEST(ConfidenceLoss, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(50);
  for (LossMode mode : {LossMode::HuberConf, LossMode::HuberOnly, LossMode::L2Conf}) {
    const Tensor Z = random_tensor({4, 5}, rng, 0, 3), C = random_tensor({4, 5}, rng, 0, 1);
    const Tensor T = random_tensor({4, 5}, rng, 0, 3), M = nconv::testing::random_binary({4, 5}, rng, 0.7);
    const LossResult r = confidence_loss(Z, C, T, M, 3, mode);
    for (std::size_t i = 0; i < Z.size(); ++i) {
      const double h = 1e-6;
      Tensor zp = Z, zm = Z, cp = C, cm = C;
      zp[i] += h;
      zm[i] -= h;
      cp[i] += h;
      cm[i] -= h;
      const double dz = (confidence_loss(zp, C, T, M, 3, mode).report.total -
                         confidence_loss(zm, C, T, M, 3, mode).report.total) / (2 * h);
      const double dc = (confidence_loss(Z, cp, T, M, 3, mode).report.total -
                         confidence_loss(Z, cm, T, M, 3, mode).report.total) / (2 * h);
      EXPECT_NEAR(r.grad_z[i], dz, 1e-8);
      EXPECT_NEAR(r.grad_c[i], dc, 1e-8);
    }
  }
}

TEST(ConfidenceLoss, ConfidenceGradientSign) {
  for (double z : {0.1, 0.5, 1.2, 1.6, 3.0}) {
    const LossResult r =
        confidence_loss(Tensor({1}, z), Tensor({1}, 0.5), Tensor({1}, 0.0), Tensor({1}, 1.0), 2, LossMode::HuberConf);
    const double E = huber(z, 0.0);
    if (E < 1.0) {
      EXPECT_LT(r.grad_c[0], 0.0);
    } else if (E > 1.0) {
      EXPECT_GT(r.grad_c[0], 0.0);
    }
  }
}

TEST(ConfidenceLoss, DecaysToDataTerm) {
  std::mt19937_64 rng(51);
  const Tensor Z = random_tensor({3, 3}, rng, 0, 3), C = random_tensor({3, 3}, rng, 0, 1);
  const Tensor T = random_tensor({3, 3}, rng, 0, 3), M({3, 3}, 1.0);
  const LossReport r = confidence_loss(Z, C, T, M, 1000000000, LossMode::HuberConf).report;
  EXPECT_NEAR(r.total, r.data_term, 1e-8);
}

TEST(ConfidenceLoss, HuberOnlyHasNoConfidenceTerm) {
  const LossResult r = confidence_loss(Tensor({2}, 1.0), Tensor({2}, 0.3), Tensor({2}, 0.0), Tensor({2}, 1.0), 1,
                                       LossMode::HuberOnly);
  EXPECT_EQ(r.report.conf_term, 0.0);
  EXPECT_EQ(r.report.total, r.report.data_term);
  for (double v : r.grad_c.data()) EXPECT_EQ(v, 0.0);
}

TEST(ConfidenceLoss, RejectsEpochZero) {
  EXPECT_THROW(confidence_loss(Tensor({1}), Tensor({1}), Tensor({1}), Tensor({1}, 1.0), 0, LossMode::HuberConf),
               RangeError);
}

TEST(Metrics, ZeroError) {
  const Tensor T({2, 3}, 12.0);
  const MetricsReport m = depth_metrics(T, T, Tensor({2, 3}, 1.0));
  EXPECT_EQ(m.csv(), "0,0,0,0,6");
}

TEST(Metrics, ConstantError) {
  const MetricsReport m = depth_metrics(Tensor({4}, 12.0), Tensor({4}, 10.0), Tensor({4}, 1.0));
  EXPECT_DOUBLE_EQ(m.mae, 2.0);
  EXPECT_DOUBLE_EQ(m.rmse, 2.0);
  // Inverse depth in 1/km.
  EXPECT_NEAR(m.imae, 1000.0 / 10.0 - 1000.0 / 12.0, 1e-12);
}

TEST(Metrics, TwoPoints) {
  const MetricsReport m = depth_metrics(Tensor({2}, {11.0, 13.0}), Tensor({2}, 10.0), Tensor({2}, 1.0));
  EXPECT_DOUBLE_EQ(m.mae, 2.0);
  EXPECT_NEAR(m.rmse, std::sqrt(5.0), 1e-15);
}

TEST(Metrics, RmseAtLeastMae) {
  std::mt19937_64 rng(52);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor Z = random_tensor({20}, rng, 0.5, 50), T = random_tensor({20}, rng, 0.5, 50);
    const MetricsReport m = depth_metrics(Z, T, Tensor({20}, 1.0));
    EXPECT_GE(m.rmse, m.mae);
    EXPECT_GE(m.irmse, m.imae);
  }
}

TEST(Metrics, MaskAndUnits) {
  const Tensor Z({3}, {1000.0, 5.0, 3000.0}), T({3}, {2000.0, 0.0, 3000.0}), M({3}, {1, 0, 1});
  const MetricsReport m = depth_metrics(Z, T, M, 1e-3);  // millimetres in, metres internally
  EXPECT_EQ(m.n, 2u);
  EXPECT_DOUBLE_EQ(m.mae, 500.0);
}

TEST(Equalize, Midranks) {
  const std::vector<double> v{3.0, 1.0, 3.0, 2.0};
  EXPECT_EQ(equalize(v), (std::vector<double>{2.5 / 3.0, 0.0, 2.5 / 3.0, 1.0 / 3.0}));
}

TEST(Pearson, MonotoneDecreasingConfidence) {
  std::vector<double> err, conf;
  for (int i = 1; i <= 50; ++i) {
    err.push_back(0.1 * i * i);
    conf.push_back(std::exp(-0.3 * i));
  }
  EXPECT_NEAR(pearson(equalize(err), equalize(conf)), -1.0, 1e-12);
  EXPECT_NEAR(conf_error_pearson(err, conf), 1.0, 1e-12);
}

TEST(Pearson, IndependentPairsNearZero) {
  std::mt19937_64 rng(53);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> err(10000), conf(10000);
  for (std::size_t i = 0; i < err.size(); ++i) {
    err[i] = u(rng);
    conf[i] = u(rng);
  }
  std::shuffle(conf.begin(), conf.end(), rng);
  EXPECT_LT(std::abs(conf_error_pearson(err, conf)), 0.05);
}

TEST(Pearson, ConstantConfidenceThrows) {
  EXPECT_THROW(conf_error_pearson(std::vector<double>{1, 2, 3}, std::vector<double>{0.5, 0.5, 0.5}), ZeroVariance);
}
