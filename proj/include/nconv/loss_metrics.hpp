#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nconv/tensor.hpp"

namespace nconv {

double huber(double z, double t, double delta = 1.0);
/// d huber / dz
double huber_grad(double z, double t, double delta = 1.0);

enum class LossMode {
  HuberConf,  // Huber data term with the epoch-decayed confidence term
  HuberOnly,  // data term only
  L2Conf,     // squared error data term with the confidence term
};

std::string_view to_string(LossMode mode);
LossMode parse_loss_mode(std::string_view name);

struct LossReport {
  double data_term = 0.0;  // mean per-pixel data error E
  double conf_term = 0.0;  // mean of (C - E*C) / p
  double total = 0.0;      // data_term - conf_term
  int epoch = 1;
  std::size_t pixels = 0;
};

struct LossResult {
  LossReport report;
  Tensor grad_z;  // d total / d Z, zero outside the valid mask
  Tensor grad_c;  // d total / d C
};

/// Per pixel: E~ = E - (C - E*C) / p, averaged over pixels with mask > 0.
/// Shapes of Z, C, T and mask must agree.
LossResult confidence_loss(const Tensor& Z, const Tensor& C, const Tensor& T, const Tensor& valid_mask, int epoch,
                           LossMode mode = LossMode::HuberConf, double delta = 1.0);

struct MetricsReport {
  double mae = 0.0;
  double rmse = 0.0;
  double imae = 0.0;   // 1/km
  double irmse = 0.0;  // 1/km
  std::size_t n = 0;

  /// "mae,rmse,imae,irmse,n"
  std::string csv() const;
};

/// MAE/RMSE in the units of Z and T; the i-variants on inverse depth in 1/km,
/// where `meters_per_unit` converts Z and T to meters. Predicted depths are
/// floored at 1 mm before inversion.
MetricsReport depth_metrics(const Tensor& Z, const Tensor& T, const Tensor& valid_mask, double meters_per_unit = 1.0);

/// Rank transform to [0, 1] with midranks for ties.
std::vector<double> equalize(std::span<const double> values);
double pearson(std::span<const double> x, std::span<const double> y);

/// Pearson correlation between the equalized |error| and the equalized
/// -log(confidence). Positive when low confidence goes with large error.
double conf_error_pearson(std::span<const double> errors, std::span<const double> confidences);

}  // namespace nconv
