#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "nconv/tensor.hpp"

namespace nconv {

/// Differentiable map applied to raw weights so the effective filter is a
/// valid (non-negative) applicability. Identity exists for the unconstrained
/// ablation only.
struct NonNegFn {
  enum class Kind { SoftPlus, Exponential, Sigmoid, Identity };

  Kind kind = Kind::SoftPlus;
  double beta = 10.0;  // SoftPlus sharpness; ignored by the other kinds

  double operator()(double x) const;
  double derivative(double x) const;
  Tensor apply(const Tensor& x) const;

  static NonNegFn softplus(double beta) { return {Kind::SoftPlus, beta}; }
  static NonNegFn identity() { return {Kind::Identity, 1.0}; }
};

std::string_view to_string(NonNegFn::Kind kind);
NonNegFn::Kind parse_nonneg_kind(std::string_view name);

/// Paired data/confidence maps of shape [channels, H, W].
struct ConfSignal {
  Tensor z;
  Tensor c;

  std::size_t channels() const { return z.dim(0); }
  std::size_t height() const { return z.dim(1); }
  std::size_t width() const { return z.dim(2); }

  /// Throws ShapeError / RangeError when the pair is inconsistent.
  void validate() const;
};

/// How a layer produces its output confidence.
enum class ConfPropagation {
  Normalized,  // (D + eps) / sum(Gamma(W))
  MaxPool,     // window max of input confidence; used with Identity Gamma
};

/// One trainable normalized-convolution unit (stride 1, same-size output).
struct NConvLayer {
  Tensor weight;  // raw weights [out, in, kh, kw]
  Tensor bias;    // [out]
  NonNegFn gamma;
  double epsilon = 1e-8;
  ConfPropagation propagation = ConfPropagation::Normalized;

  std::size_t out_channels() const { return weight.dim(0); }
  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t kernel_h() const { return weight.dim(2); }
  std::size_t kernel_w() const { return weight.dim(3); }
  std::size_t parameter_count() const { return weight.size() + bias.size(); }

  /// Effective applicability Gamma(W).
  Tensor applicability() const { return gamma.apply(weight); }

  void validate() const;

  /// Raw weights uniform in [-1, 1], then shifted per output channel so the
  /// applicability of each output channel sums to ~1. Bias starts at zero.
  static NConvLayer make(std::size_t out_ch, std::size_t in_ch, std::size_t kh, std::size_t kw, NonNegFn gamma,
                         double epsilon, std::mt19937_64& rng);
};

/// Intermediate values retained by the forward pass.
struct ForwardCache {
  ConfSignal input;
  Tensor applicability;           // Gamma(W)
  std::vector<double> kernel_sum;  // per output channel, guarded
  Tensor numerator;               // [out, H, W]
  Tensor denominator;             // [out, H, W], without epsilon
  std::vector<std::uint32_t> argmax;  // MaxPool propagation only: flat index into input.c
};

struct LayerOutput {
  ConfSignal out;
  ForwardCache cache;
};

struct LayerGradients {
  Tensor input_z;
  Tensor input_c;
  Tensor weight;
  Tensor bias;
};

/// Normalized-convolution forward pass. Numerator and denominator are summed
/// over all input channels before the division (one joint normalization per
/// output channel). Both maps are zero padded at the border.
LayerOutput nconv_forward(const NConvLayer& layer, const ConfSignal& in);

/// Reverse pass through both the data and confidence paths.
LayerGradients nconv_backward(const NConvLayer& layer, const ForwardCache& cache, const Tensor& grad_out_z,
                              const Tensor& grad_out_c);

// Plane-level kernels shared with the network code. All use zero padding and
// accumulate into `dst` in a fixed order.
namespace kernels {

/// dst[y,x] += sum_{m,n} k[m,n] * src[y+m-ph, x+n-pw]
void correlate_add(const double* src, std::size_t H, std::size_t W, const double* k, std::size_t kh, std::size_t kw,
                   double* dst);
/// dst[q] += sum_{m,n} k[m,n] * g[q-(m-ph), q-(n-pw)]  (adjoint of correlate_add in src)
void correlate_adjoint_add(const double* g, std::size_t H, std::size_t W, const double* k, std::size_t kh,
                           std::size_t kw, double* dst);
/// gk[m,n] += sum_{y,x} g[y,x] * src[y+m-ph, x+n-pw]  (adjoint of correlate_add in k)
void kernel_grad_add(const double* src, const double* g, std::size_t H, std::size_t W, std::size_t kh, std::size_t kw,
                     double* gk);

}  // namespace kernels

}  // namespace nconv
