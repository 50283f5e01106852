#include "nconv/nconv_layer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace nconv {

namespace {

constexpr double kKernelSumGuard = 1e-12;
constexpr std::uint32_t kPadded = std::numeric_limits<std::uint32_t>::max();

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

double NonNegFn::operator()(double x) const {
  switch (kind) {
    case Kind::SoftPlus: {
      const double bx = beta * x;
      if (bx > 30.0) return x + std::exp(-bx) / beta;
      return std::log1p(std::exp(bx)) / beta;
    }
    case Kind::Exponential:
      return std::exp(x);
    case Kind::Sigmoid:
      return stable_sigmoid(x);
    case Kind::Identity:
      return x;
  }
  return x;
}

double NonNegFn::derivative(double x) const {
  switch (kind) {
    case Kind::SoftPlus:
      return stable_sigmoid(beta * x);
    case Kind::Exponential:
      return std::exp(x);
    case Kind::Sigmoid: {
      const double s = stable_sigmoid(x);
      return s * (1.0 - s);
    }
    case Kind::Identity:
      return 1.0;
  }
  return 1.0;
}

Tensor NonNegFn::apply(const Tensor& x) const {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (*this)(x[i]);
  return out;
}

std::string_view to_string(NonNegFn::Kind kind) {
  switch (kind) {
    case NonNegFn::Kind::SoftPlus:
      return "softplus";
    case NonNegFn::Kind::Exponential:
      return "exp";
    case NonNegFn::Kind::Sigmoid:
      return "sigmoid";
    case NonNegFn::Kind::Identity:
      return "identity";
  }
  return "?";
}

NonNegFn::Kind parse_nonneg_kind(std::string_view name) {
  if (name == "softplus") return NonNegFn::Kind::SoftPlus;
  if (name == "exp" || name == "exponential") return NonNegFn::Kind::Exponential;
  if (name == "sigmoid") return NonNegFn::Kind::Sigmoid;
  if (name == "identity" || name == "none") return NonNegFn::Kind::Identity;
  throw FormatError("unknown non-negativity function '" + std::string(name) + "'");
}

void ConfSignal::validate() const {
  if (z.rank() != 3) throw ShapeError("ConfSignal expects [channels, H, W], got " + shape_to_string(z.shape()));
  require_same_shape(z, c, "ConfSignal");
  for (double v : c.data())
    if (v < 0.0) throw RangeError("ConfSignal: confidence must be non-negative");
}

void NConvLayer::validate() const {
  if (weight.rank() != 4) throw ShapeError("NConvLayer: weight must be [out, in, kh, kw]");
  if (kernel_h() % 2 == 0 || kernel_w() % 2 == 0) throw ShapeError("NConvLayer: kernel extents must be odd");
  if (bias.shape() != Shape{out_channels()}) throw ShapeError("NConvLayer: bias must be [out]");
  if (!(epsilon >= 0.0)) throw RangeError("NConvLayer: epsilon must be non-negative");
  if (gamma.kind == NonNegFn::Kind::SoftPlus && !(gamma.beta > 0.0)) {
    throw RangeError("NConvLayer: SoftPlus beta must be positive");
  }
}

NConvLayer NConvLayer::make(std::size_t out_ch, std::size_t in_ch, std::size_t kh, std::size_t kw, NonNegFn gamma,
                            double epsilon, std::mt19937_64& rng) {
  NConvLayer layer{Tensor({out_ch, in_ch, kh, kw}), Tensor({out_ch}), gamma, epsilon,
                   gamma.kind == NonNegFn::Kind::Identity ? ConfPropagation::MaxPool : ConfPropagation::Normalized};
  layer.validate();
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  const std::size_t per_out = in_ch * kh * kw;
  for (std::size_t o = 0; o < out_ch; ++o) {
    double* w = layer.weight.ptr() + o * per_out;
    for (std::size_t k = 0; k < per_out; ++k) w[k] = uni(rng);
    auto mass = [&](double shift) {
      double s = 0.0;
      for (std::size_t k = 0; k < per_out; ++k) s += gamma(w[k] + shift);
      return s;
    };
    double shift = 0.0;
    if (gamma.kind == NonNegFn::Kind::Identity) {
      shift = (1.0 - mass(0.0)) / static_cast<double>(per_out);
    } else {
      double lo = -60.0, hi = 60.0;
      for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (mass(mid) < 1.0 ? lo : hi) = mid;
      }
      shift = 0.5 * (lo + hi);
    }
    for (std::size_t k = 0; k < per_out; ++k) w[k] += shift;
  }
  return layer;
}

namespace kernels {

namespace {

struct Span1 {
  std::size_t lo, hi;  // valid output range [lo, hi) for a given offset
};

inline Span1 valid_range(std::ptrdiff_t offset, std::size_t extent) {
  const auto n = static_cast<std::ptrdiff_t>(extent);
  const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -offset);
  const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(n, n - offset);
  if (hi <= lo) return {0, 0};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

}  // namespace

void correlate_add(const double* src, std::size_t H, std::size_t W, const double* k, std::size_t kh, std::size_t kw,
                   double* dst) {
  const auto ph = static_cast<std::ptrdiff_t>(kh / 2), pw = static_cast<std::ptrdiff_t>(kw / 2);
  for (std::size_t m = 0; m < kh; ++m) {
    const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(m) - ph;
    const Span1 ys = valid_range(dy, H);
    for (std::size_t n = 0; n < kw; ++n) {
      const double kv = k[m * kw + n];
      const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(n) - pw;
      const Span1 xs = valid_range(dx, W);
      for (std::size_t y = ys.lo; y < ys.hi; ++y) {
        double* d = dst + y * W;
        const double* s = src + static_cast<std::size_t>(static_cast<std::ptrdiff_t>(y) + dy) * W + dx;
        for (std::size_t x = xs.lo; x < xs.hi; ++x) d[x] += kv * s[x];
      }
    }
  }
}

void correlate_adjoint_add(const double* g, std::size_t H, std::size_t W, const double* k, std::size_t kh,
                           std::size_t kw, double* dst) {
  const auto ph = static_cast<std::ptrdiff_t>(kh / 2), pw = static_cast<std::ptrdiff_t>(kw / 2);
  for (std::size_t m = 0; m < kh; ++m) {
    const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(m) - ph;
    const Span1 ys = valid_range(dy, H);
    for (std::size_t n = 0; n < kw; ++n) {
      const double kv = k[m * kw + n];
      const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(n) - pw;
      const Span1 xs = valid_range(dx, W);
      for (std::size_t y = ys.lo; y < ys.hi; ++y) {
        const double* gy = g + y * W;
        double* d = dst + static_cast<std::size_t>(static_cast<std::ptrdiff_t>(y) + dy) * W + dx;
        for (std::size_t x = xs.lo; x < xs.hi; ++x) d[x] += kv * gy[x];
      }
    }
  }
}

void kernel_grad_add(const double* src, const double* g, std::size_t H, std::size_t W, std::size_t kh, std::size_t kw,
                     double* gk) {
  const auto ph = static_cast<std::ptrdiff_t>(kh / 2), pw = static_cast<std::ptrdiff_t>(kw / 2);
  for (std::size_t m = 0; m < kh; ++m) {
    const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(m) - ph;
    const Span1 ys = valid_range(dy, H);
    for (std::size_t n = 0; n < kw; ++n) {
      const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(n) - pw;
      const Span1 xs = valid_range(dx, W);
      double acc = 0.0;
      for (std::size_t y = ys.lo; y < ys.hi; ++y) {
        const double* gy = g + y * W;
        const double* s = src + static_cast<std::size_t>(static_cast<std::ptrdiff_t>(y) + dy) * W + dx;
        for (std::size_t x = xs.lo; x < xs.hi; ++x) acc += gy[x] * s[x];
      }
      gk[m * kw + n] += acc;
    }
  }
}

}  // namespace kernels

namespace {

double guarded_sum(double s) {
  if (std::abs(s) < kKernelSumGuard) return s < 0.0 ? -kKernelSumGuard : kKernelSumGuard;
  return s;
}

}  // namespace

LayerOutput nconv_forward(const NConvLayer& layer, const ConfSignal& in) {
  layer.validate();
  in.validate();
  if (in.channels() != layer.in_channels()) {
    throw ShapeError("nconv_forward: input has " + std::to_string(in.channels()) + " channels, layer expects " +
                     std::to_string(layer.in_channels()));
  }
  const std::size_t O = layer.out_channels(), I = layer.in_channels();
  const std::size_t H = in.height(), W = in.width(), plane = H * W;
  const std::size_t kh = layer.kernel_h(), kw = layer.kernel_w(), ksz = kh * kw;

  LayerOutput res;
  ForwardCache& cache = res.cache;
  cache.input = in;
  cache.applicability = layer.applicability();
  cache.kernel_sum.assign(O, 0.0);
  for (std::size_t o = 0; o < O; ++o) {
    double s = 0.0;
    for (std::size_t k = 0; k < I * ksz; ++k) s += cache.applicability[o * I * ksz + k];
    cache.kernel_sum[o] = guarded_sum(s);
  }

  const Tensor zc = in.z * in.c;
  cache.numerator = Tensor({O, H, W});
  cache.denominator = Tensor({O, H, W});
  for (std::size_t o = 0; o < O; ++o) {
    for (std::size_t i = 0; i < I; ++i) {
      const double* a = cache.applicability.ptr() + (o * I + i) * ksz;
      kernels::correlate_add(zc.ptr() + i * plane, H, W, a, kh, kw, cache.numerator.ptr() + o * plane);
      kernels::correlate_add(in.c.ptr() + i * plane, H, W, a, kh, kw, cache.denominator.ptr() + o * plane);
    }
  }

  res.out.z = Tensor({O, H, W});
  res.out.c = Tensor({O, H, W});
  for (std::size_t o = 0; o < O; ++o) {
    const double b = layer.bias[o];
    const double ks = cache.kernel_sum[o];
    for (std::size_t p = 0; p < plane; ++p) {
      const std::size_t idx = o * plane + p;
      const double q = cache.denominator[idx] + layer.epsilon;
      res.out.z[idx] = cache.numerator[idx] / q + b;
      if (layer.propagation == ConfPropagation::Normalized) res.out.c[idx] = q / ks;
    }
  }

  if (layer.propagation == ConfPropagation::MaxPool) {
    // Window max over every input channel; padded samples count as zero.
    const auto ph = static_cast<std::ptrdiff_t>(kh / 2), pw = static_cast<std::ptrdiff_t>(kw / 2);
    cache.argmax.assign(plane, kPadded);
    std::vector<double> best(plane, 0.0);
    for (std::size_t i = 0; i < I; ++i)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          const std::size_t p = y * W + x;
          for (std::size_t m = 0; m < kh; ++m) {
            const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + m) - ph;
            if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t n = 0; n < kw; ++n) {
              const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + n) - pw;
              if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(W)) continue;
              const std::size_t src = i * plane + static_cast<std::size_t>(sy) * W + static_cast<std::size_t>(sx);
              if (in.c[src] > best[p] || (cache.argmax[p] == kPadded && in.c[src] >= best[p])) {
                best[p] = in.c[src];
                cache.argmax[p] = static_cast<std::uint32_t>(src);
              }
            }
          }
        }
    for (std::size_t o = 0; o < O; ++o) std::copy(best.begin(), best.end(), res.out.c.ptr() + o * plane);
  }
  return res;
}

LayerGradients nconv_backward(const NConvLayer& layer, const ForwardCache& cache, const Tensor& grad_out_z,
                              const Tensor& grad_out_c) {
  const std::size_t O = layer.out_channels(), I = layer.in_channels();
  const ConfSignal& in = cache.input;
  const std::size_t H = in.height(), W = in.width(), plane = H * W;
  const std::size_t kh = layer.kernel_h(), kw = layer.kernel_w(), ksz = kh * kw;
  const Shape out_shape{O, H, W};
  if (grad_out_z.shape() != out_shape || grad_out_c.shape() != out_shape ||
      cache.numerator.shape() != out_shape || cache.applicability.shape() != layer.weight.shape()) {
    throw ShapeError("nconv_backward: cache/gradient shape mismatch, expected " + shape_to_string(out_shape));
  }
  const bool normalized = layer.propagation == ConfPropagation::Normalized;

  Tensor g_num({O, H, W});
  Tensor g_den({O, H, W});
  std::vector<double> g_ksum(O, 0.0);
  LayerGradients grads{Tensor(in.z.shape()), Tensor(in.c.shape()), Tensor(layer.weight.shape()),
                       Tensor(layer.bias.shape())};

  for (std::size_t o = 0; o < O; ++o) {
    const double ks = cache.kernel_sum[o];
    double gb = 0.0, gks = 0.0;
    for (std::size_t p = 0; p < plane; ++p) {
      const std::size_t idx = o * plane + p;
      const double q = cache.denominator[idx] + layer.epsilon;
      const double gz = grad_out_z[idx];
      gb += gz;
      g_num[idx] = gz / q;
      double gd = -gz * cache.numerator[idx] / (q * q);
      if (normalized) {
        gd += grad_out_c[idx] / ks;
        gks -= grad_out_c[idx] * q / (ks * ks);
      }
      g_den[idx] = gd;
    }
    grads.bias[o] = gb;
    // The guard makes the normalizer locally constant.
    g_ksum[o] = std::abs(ks) > kKernelSumGuard ? gks : 0.0;
  }

  const Tensor zc = in.z * in.c;
  Tensor g_zc(in.z.shape());
  Tensor g_applic(layer.weight.shape());
  for (std::size_t o = 0; o < O; ++o) {
    for (std::size_t i = 0; i < I; ++i) {
      const double* a = cache.applicability.ptr() + (o * I + i) * ksz;
      double* ga = g_applic.ptr() + (o * I + i) * ksz;
      kernels::kernel_grad_add(zc.ptr() + i * plane, g_num.ptr() + o * plane, H, W, kh, kw, ga);
      kernels::kernel_grad_add(in.c.ptr() + i * plane, g_den.ptr() + o * plane, H, W, kh, kw, ga);
      for (std::size_t k = 0; k < ksz; ++k) ga[k] += g_ksum[o];
      kernels::correlate_adjoint_add(g_num.ptr() + o * plane, H, W, a, kh, kw, g_zc.ptr() + i * plane);
      kernels::correlate_adjoint_add(g_den.ptr() + o * plane, H, W, a, kh, kw, grads.input_c.ptr() + i * plane);
    }
  }

  if (!normalized) {
    for (std::size_t p = 0; p < plane; ++p) {
      if (cache.argmax[p] == kPadded) continue;
      double g = 0.0;
      for (std::size_t o = 0; o < O; ++o) g += grad_out_c[o * plane + p];
      grads.input_c[cache.argmax[p]] += g;
    }
  }

  for (std::size_t k = 0; k < in.z.size(); ++k) {
    grads.input_z[k] = g_zc[k] * in.c[k];
    grads.input_c[k] += g_zc[k] * in.z[k];
  }
  for (std::size_t k = 0; k < layer.weight.size(); ++k) {
    grads.weight[k] = g_applic[k] * layer.gamma.derivative(layer.weight[k]);
  }
  return grads;
}

}  // namespace nconv
