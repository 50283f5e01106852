#include "nconv/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

#include "nconv/error.hpp"

namespace nconv::gradcheck {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-12});
  return std::abs(analytic - numeric) / denom;
}

double GradReport::max_rel() const {
  double m = 0.0;
  for (const auto& t : tensors) m = std::max(m, t.max_rel);
  return m;
}

std::string GradReport::format() const {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-16s %12s %12s %8s %14s %14s\n", "tensor", "max_rel", "max_abs", "worst",
                "analytic", "numeric");
  os << line;
  for (const auto& t : tensors) {
    std::snprintf(line, sizeof line, "%-16s %12.3e %12.3e %8zu %14.6e %14.6e\n", t.name.c_str(), t.max_rel, t.max_abs,
                  t.worst_index, t.analytic_at_worst, t.numeric_at_worst);
    os << line;
  }
  std::snprintf(line, sizeof line, "%s (max_rel %.3e, tol %.1e)\n", pass ? "PASS" : "FAIL", max_rel(), tol);
  os << line;
  return os.str();
}

GradReport check(const Objective& fn, const std::vector<Tensor*>& params, const std::vector<Tensor>& analytic,
                 double h, double tol, const std::vector<std::string>& names) {
  if (params.size() != analytic.size()) throw ShapeError("gradcheck: parameter and gradient counts differ");
  if (!(h > 0.0)) throw RangeError("gradcheck: step must be positive");
  auto eval = [&](std::size_t t, std::size_t i) {
    const long double v = fn();
    if (!std::isfinite(v)) {
      throw Error("gradcheck: non-finite objective at tensor " + std::to_string(t) + " index " + std::to_string(i));
    }
    return v;
  };

  GradReport report;
  report.tol = tol;
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor& p = *params[t];
    require_same_shape(p, analytic[t], "gradcheck");
    TensorReport tr;
    tr.name = t < names.size() ? names[t] : "param" + std::to_string(t);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double x = p[i];
      const double step = h * std::max(1.0, std::abs(x));
      const double xp = x + step, xm = x - step;
      p[i] = xp;
      const long double fp = eval(t, i);
      p[i] = xm;
      const long double fm = eval(t, i);
      p[i] = x;
      const double numeric = static_cast<double>((fp - fm) / (static_cast<long double>(xp) - xm));
      const double rel = relative_error(analytic[t][i], numeric);
      tr.max_abs = std::max(tr.max_abs, std::abs(analytic[t][i] - numeric));
      if (rel > tr.max_rel || i == 0) {
        tr.max_rel = std::max(rel, tr.max_rel);
        if (rel >= tr.max_rel) {
          tr.worst_index = i;
          tr.analytic_at_worst = analytic[t][i];
          tr.numeric_at_worst = numeric;
        }
      }
    }
    if (!(tr.max_rel < tol)) report.pass = false;
    report.tensors.push_back(tr);
  }
  return report;
}

}  // namespace nconv::gradcheck

namespace nconv::gradcheck {
namespace {

Tensor uniform(const Shape& shape, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(shape);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace

namespace {

long double gamma_ld(const NonNegFn& g, long double x) {
  switch (g.kind) {
    case NonNegFn::Kind::SoftPlus: {
      const long double bx = g.beta * x;
      if (bx > 30.0L) return x + std::exp(-bx) / g.beta;
      return std::log1p(std::exp(bx)) / g.beta;
    }
    case NonNegFn::Kind::Exponential:
      return std::exp(x);
    case NonNegFn::Kind::Sigmoid:
      return 1.0L / (1.0L + std::exp(-x));
    case NonNegFn::Kind::Identity:
      return x;
  }
  return x;
}

struct RefSignal {
  std::size_t C = 0, H = 0, W = 0;
  std::vector<long double> z, c;

  std::size_t at(std::size_t ch, std::size_t y, std::size_t x) const { return (ch * H + y) * W + x; }
};

RefSignal to_ref(const ConfSignal& s) {
  RefSignal r{s.channels(), s.height(), s.width(), {}, {}};
  r.z.assign(s.z.data().begin(), s.z.data().end());
  r.c.assign(s.c.data().begin(), s.c.data().end());
  return r;
}

// Direct per-pixel evaluation of one layer in extended precision.
RefSignal ref_layer(const NConvLayer& layer, const RefSignal& in) {
  const std::size_t O = layer.out_channels(), I = layer.in_channels();
  const std::size_t kh = layer.kernel_h(), kw = layer.kernel_w();
  const std::size_t H = in.H, W = in.W;
  const auto ph = static_cast<std::ptrdiff_t>(kh / 2), pw = static_cast<std::ptrdiff_t>(kw / 2);
  RefSignal r{O, H, W, std::vector<long double>(O * H * W), std::vector<long double>(O * H * W)};
  std::vector<long double> A(layer.weight.size());
  for (std::size_t k = 0; k < A.size(); ++k) A[k] = gamma_ld(layer.gamma, layer.weight[k]);
  for (std::size_t o = 0; o < O; ++o) {
    long double mass = 0.0L;
    for (std::size_t k = 0; k < I * kh * kw; ++k) mass += A[o * I * kh * kw + k];
    if (std::abs(mass) < 1e-12L) mass = mass < 0.0L ? -1e-12L : 1e-12L;
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        long double num = 0.0L, den = 0.0L, cmax = 0.0L;
        for (std::size_t i = 0; i < I; ++i)
          for (std::size_t m = 0; m < kh; ++m)
            for (std::size_t n = 0; n < kw; ++n) {
              const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + m) - ph;
              const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + n) - pw;
              if (sy < 0 || sx < 0 || sy >= static_cast<std::ptrdiff_t>(H) || sx >= static_cast<std::ptrdiff_t>(W))
                continue;
              const std::size_t q = in.at(i, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
              const long double a = A[((o * I + i) * kh + m) * kw + n];
              num += a * in.z[q] * in.c[q];
              den += a * in.c[q];
              cmax = std::max(cmax, in.c[q]);
            }
        const std::size_t p = r.at(o, y, x);
        const long double q = den + layer.epsilon;
        r.z[p] = num / q + layer.bias[o];
        r.c[p] = layer.propagation == ConfPropagation::MaxPool ? cmax : q / mass;
      }
  }
  return r;
}

// 2x2 max pooling by confidence (first maximum in row-major order wins),
// then confidence divided by 4.
RefSignal ref_pool(const RefSignal& in) {
  RefSignal r{in.C, in.H / 2, in.W / 2, {}, {}};
  r.z.resize(r.C * r.H * r.W);
  r.c.resize(r.z.size());
  for (std::size_t ch = 0; ch < r.C; ++ch)
    for (std::size_t y = 0; y < r.H; ++y)
      for (std::size_t x = 0; x < r.W; ++x) {
        std::size_t best = in.at(ch, 2 * y, 2 * x);
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t q = in.at(ch, 2 * y + dy, 2 * x + dx);
            if (in.c[q] > in.c[best]) best = q;
          }
        r.z[r.at(ch, y, x)] = in.z[best];
        r.c[r.at(ch, y, x)] = in.c[best] / 4.0L;
      }
  return r;
}

RefSignal ref_upsample(const RefSignal& in) {
  RefSignal r{in.C, in.H * 2, in.W * 2, {}, {}};
  r.z.resize(r.C * r.H * r.W);
  r.c.resize(r.z.size());
  for (std::size_t ch = 0; ch < r.C; ++ch)
    for (std::size_t y = 0; y < r.H; ++y)
      for (std::size_t x = 0; x < r.W; ++x) {
        r.z[r.at(ch, y, x)] = in.z[in.at(ch, y / 2, x / 2)];
        r.c[r.at(ch, y, x)] = in.c[in.at(ch, y / 2, x / 2)];
      }
  return r;
}

RefSignal ref_concat(const RefSignal& a, const RefSignal& b) {
  RefSignal r{a.C + b.C, a.H, a.W, a.z, a.c};
  r.z.insert(r.z.end(), b.z.begin(), b.z.end());
  r.c.insert(r.c.end(), b.c.begin(), b.c.end());
  return r;
}

RefSignal ref_network(const NetSpec& spec, const NetState& state, const RefSignal& in) {
  const std::size_t S = spec.scales;
  std::vector<RefSignal> level(S);
  RefSignal x = ref_layer(state.layers[spec.input_layer()], in);
  for (std::size_t s = 0; s < S; ++s) {
    if (s > 0) x = ref_pool(level[s - 1]);
    for (std::size_t k = 0; k < spec.stack_depth; ++k) x = ref_layer(state.layers[spec.stack_layer(s, k)], x);
    level[s] = x;
  }
  RefSignal up = level[S - 1];
  for (std::size_t s = S - 1; s-- > 0;) {
    up = ref_layer(state.layers[spec.fuse_layer(s)], ref_concat(level[s], ref_upsample(up)));
  }
  return ref_layer(state.layers[spec.final_layer()], up);
}

ConfSignal from_ref(const RefSignal& r) {
  ConfSignal out{Tensor({r.C, r.H, r.W}), Tensor({r.C, r.H, r.W})};
  for (std::size_t p = 0; p < r.z.size(); ++p) {
    out.z[p] = static_cast<double>(r.z[p]);
    out.c[p] = static_cast<double>(r.c[p]);
  }
  return out;
}

long double ref_loss(const RefSignal& out, const Tensor& target, const Tensor& mask, int epoch, LossMode mode,
                     double delta) {
  long double data = 0.0L, conf = 0.0L;
  std::size_t n = 0;
  for (std::size_t p = 0; p < target.size(); ++p) {
    if (!(mask[p] > 0.0)) continue;
    ++n;
    const long double d = out.z[p] - target[p];
    long double e;
    if (mode == LossMode::L2Conf) {
      e = d * d;
    } else {
      const long double ad = std::abs(d);
      e = ad < delta ? 0.5L * ad * ad : delta * ad - 0.5L * delta * delta;
    }
    data += e;
    conf += (out.c[p] - e * out.c[p]) / epoch;
  }
  if (n == 0) return 0.0L;
  if (mode == LossMode::HuberOnly) conf = 0.0L;
  return (data - conf) / static_cast<long double>(n);
}

}  // namespace

ConfSignal reference_layer_forward(const NConvLayer& layer, const ConfSignal& in) {
  layer.validate();
  in.validate();
  if (in.channels() != layer.in_channels()) throw ShapeError("reference_layer_forward: channel mismatch");
  return from_ref(ref_layer(layer, to_ref(in)));
}

ConfSignal reference_network_forward(const NetSpec& spec, const NetState& state, const ConfSignal& in) {
  spec.validate();
  check_state_matches(spec, state);
  in.validate();
  if (in.channels() != 1 || in.height() % spec.size_multiple() != 0 || in.width() % spec.size_multiple() != 0) {
    throw ShapeError("reference_network_forward: bad input shape " + shape_to_string(in.z.shape()));
  }
  return from_ref(ref_network(spec, state, to_ref(in)));
}

GradReport layer_check(const NConvLayer& layer_in, std::size_t H, std::size_t W, std::uint64_t seed, double h,
                       double tol) {
  std::mt19937_64 rng(seed);
  NConvLayer layer = layer_in;
  const std::size_t I = layer.in_channels(), O = layer.out_channels();
  ConfSignal in{uniform({I, H, W}, 0.5, 1.5, rng), uniform({I, H, W}, 0.5, 1.0, rng)};
  const Tensor rz = uniform({O, H, W}, -1.0, 1.0, rng);
  const Tensor rc = uniform({O, H, W}, -1.0, 1.0, rng);

  const LayerOutput fwd = nconv_forward(layer, in);
  const LayerGradients g = nconv_backward(layer, fwd.cache, rz, rc);

  // Numeric side uses the independent extended-precision evaluation.
  auto objective = [&] {
    const RefSignal o = ref_layer(layer, to_ref(in));
    long double s = 0.0L;
    for (std::size_t p = 0; p < o.z.size(); ++p) s += o.z[p] * rz[p] + o.c[p] * rc[p];
    return s;
  };
  return check(objective, {&layer.weight, &layer.bias, &in.z, &in.c}, {g.weight, g.bias, g.input_z, g.input_c}, h,
               tol, {"weight", "bias", "in.z", "in.c"});
}

void condition_weights(NetState& state, double lo, double hi, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x2545F4914F6CDD1DULL);
  for (auto& layer : state.layers) {
    const double l = layer.gamma.kind == NonNegFn::Kind::Identity ? std::max(lo, 0.05) : lo;
    layer.weight = uniform(layer.weight.shape(), l, hi, rng);
  }
}

GradReport network_check(const NetSpec& spec, std::uint64_t seed, const NetCheckOptions& opt) {
  spec.validate();
  NetState state = init_net_state(spec, seed);
  std::mt19937_64 rng(seed ^ 0x5DEECE66DULL);
  if (opt.weight_lo < opt.weight_hi) condition_weights(state, opt.weight_lo, opt.weight_hi, seed);
  const std::size_t H = opt.height, W = opt.width;
  ConfSignal in{uniform({1, H, W}, 1.0, 3.0, rng), uniform({1, H, W}, 0.2, 1.0, rng)};
  const Tensor target = uniform({H, W}, 1.0, 3.0, rng);
  Tensor mask({H, W}, 1.0);
  std::bernoulli_distribution keep(0.7);
  for (double& v : mask.data()) v = keep(rng) ? 1.0 : 0.0;
  mask[0] = 1.0;

  auto loss_of = [&](const ConfSignal& out) {
    return confidence_loss(out.z.reshaped({H, W}), out.c.reshaped({H, W}), target, mask, opt.epoch, opt.loss);
  };
  const NetForward fwd = unguided_forward_tape(spec, state, in);
  const LossResult lr = loss_of(fwd.out);
  const NetGradients g =
      unguided_backward(spec, state, fwd.tape, lr.grad_z.reshaped({1, H, W}), lr.grad_c.reshaped({1, H, W}));

  std::vector<std::string> names;
  for (std::size_t l = 0; l < state.layers.size(); ++l) {
    names.push_back("layer" + std::to_string(l) + ".weight");
    names.push_back("layer" + std::to_string(l) + ".bias");
  }
  const RefSignal ref_in = to_ref(in);
  auto objective = [&] { return ref_loss(ref_network(spec, state, ref_in), target, mask, opt.epoch, opt.loss, 1.0); };
  return check(objective, state.parameters(), g.flat(), opt.h, opt.tol, names);
}

}  // namespace nconv::gradcheck
