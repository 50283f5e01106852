#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "nconv/loss_metrics.hpp"
#include "nconv/multiscale_net.hpp"
#include "nconv/nconv_layer.hpp"
#include "nconv/tensor.hpp"

namespace nconv::gradcheck {

constexpr double kDefaultStep = 1e-6;
constexpr double kTolSingleOp = 1e-6;
constexpr double kTolEndToEnd = 1e-4;

struct TensorReport {
  std::string name;
  double max_rel = 0.0;
  double max_abs = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

struct GradReport {
  std::vector<TensorReport> tensors;
  double tol = kTolSingleOp;
  bool pass = true;

  double max_rel() const;
  /// One aligned row per tensor plus a verdict line.
  std::string format() const;
};

/// Reads the current values of the parameter pack; must be pure. Extended
/// precision is kept through the difference quotient.
using Objective = std::function<long double()>;

/// Central differences with step h * max(1, |x_i|) on every coordinate of
/// every tensor in `params`, compared with `analytic` (same shapes).
/// Parameters are perturbed in place and restored. Throws Error on a
/// non-finite objective value.
GradReport check(const Objective& fn, const std::vector<Tensor*>& params, const std::vector<Tensor>& analytic,
                 double h = kDefaultStep, double tol = kTolSingleOp, const std::vector<std::string>& names = {});

double relative_error(double analytic, double numeric);

/// Direct per-pixel evaluation of one layer in extended precision, rounded
/// to double. Independent of the production kernels.
ConfSignal reference_layer_forward(const NConvLayer& layer, const ConfSignal& in);
/// The whole unguided network evaluated the same way.
ConfSignal reference_network_forward(const NetSpec& spec, const NetState& state, const ConfSignal& in);

/// Single layer on a random [in, H, W] signal. The objective is a fixed
/// random projection of both outputs, evaluated by the reference forward;
/// checked tensors are W, b, in.z, in.c.
GradReport layer_check(const NConvLayer& layer, std::size_t H, std::size_t W, std::uint64_t seed,
                       double h = kDefaultStep, double tol = kTolSingleOp);

struct NetCheckOptions {
  std::size_t height = 8;
  std::size_t width = 8;
  int epoch = 1;
  LossMode loss = LossMode::HuberConf;
  double h = kDefaultStep;
  double tol = kTolEndToEnd;
  // Raw weights are redrawn uniformly from [weight_lo, weight_hi] so the
  // applicability slope stays away from zero; set equal to keep the init.
  double weight_lo = -0.2;
  double weight_hi = 0.3;
};

/// Redraws every raw weight uniformly from [lo, hi]; Identity layers use
/// [max(lo, 0.05), hi] so their kernel mass stays positive.
void condition_weights(NetState& state, double lo, double hi, std::uint64_t seed);

/// Seeded network on a random input and target; the objective is the
/// training loss, evaluated through the reference network. Checks every
/// weight and bias tensor.
GradReport network_check(const NetSpec& spec, std::uint64_t seed, const NetCheckOptions& opt = {});

}  // namespace nconv::gradcheck
