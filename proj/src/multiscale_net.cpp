#include "nconv/multiscale_net.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace nconv {

// ---------------------------------------------------------------------------
// NetSpec

void NetSpec::validate() const {
  if (scales < 1) throw ShapeError("NetSpec: scales must be >= 1");
  if (scales > 16) throw ShapeError("NetSpec: scales must be <= 16");
  if (channels < 1) throw ShapeError("NetSpec: channels must be >= 1");
  for (std::size_t k : {input_kernel, stack_kernel, fuse_kernel}) {
    if (k % 2 == 0) throw ShapeError("NetSpec: kernel sizes must be odd, got " + std::to_string(k));
  }
  if (!(epsilon > 0.0)) throw RangeError("NetSpec: epsilon must be positive");
  if (gamma.kind == NonNegFn::Kind::SoftPlus && !(gamma.beta > 0.0)) throw RangeError("NetSpec: beta must be positive");
}

bool operator==(const NetSpec& a, const NetSpec& b) {
  return a.scales == b.scales && a.channels == b.channels && a.input_kernel == b.input_kernel &&
         a.stack_kernel == b.stack_kernel && a.stack_depth == b.stack_depth && a.fuse_kernel == b.fuse_kernel &&
         a.epsilon == b.epsilon && a.gamma.kind == b.gamma.kind && a.gamma.beta == b.gamma.beta &&
         a.share_weights == b.share_weights;
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::size_t parse_count(const std::string& key, const std::string& value) {
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw FormatError("spec: '" + key + "' expects a non-negative integer, got '" + value + "'");
  }
  return out;
}

double parse_real(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double out = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return out;
  } catch (const std::exception&) {
    throw FormatError("spec: '" + key + "' expects a number, got '" + value + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "on" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "off" || value == "no") return false;
  throw FormatError("spec: '" + key + "' expects true/false, got '" + value + "'");
}

}  // namespace

NetSpec parse_net_spec(std::string_view text) {
  NetSpec spec;
  std::istringstream is{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw FormatError("spec line " + std::to_string(line_no) + ": expected key = value, got '" + body + "'");
    }
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    if (key == "scales") spec.scales = parse_count(key, value);
    else if (key == "channels") spec.channels = parse_count(key, value);
    else if (key == "input_kernel") spec.input_kernel = parse_count(key, value);
    else if (key == "stack_kernel") spec.stack_kernel = parse_count(key, value);
    else if (key == "stack_depth") spec.stack_depth = parse_count(key, value);
    else if (key == "fuse_kernel") spec.fuse_kernel = parse_count(key, value);
    else if (key == "epsilon") spec.epsilon = parse_real(key, value);
    else if (key == "beta") spec.gamma.beta = parse_real(key, value);
    else if (key == "gamma_kind") spec.gamma.kind = parse_nonneg_kind(value);
    else if (key == "share_weights") spec.share_weights = parse_bool(key, value);
    else throw FormatError("spec line " + std::to_string(line_no) + ": unknown key '" + key + "'");
  }
  spec.validate();
  return spec;
}

std::string format_net_spec(const NetSpec& spec) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  os << "scales = " << spec.scales << '\n'
     << "channels = " << spec.channels << '\n'
     << "input_kernel = " << spec.input_kernel << '\n'
     << "stack_kernel = " << spec.stack_kernel << '\n'
     << "stack_depth = " << spec.stack_depth << '\n'
     << "fuse_kernel = " << spec.fuse_kernel << '\n'
     << "epsilon = " << spec.epsilon << '\n'
     << "gamma_kind = " << to_string(spec.gamma.kind) << '\n'
     << "beta = " << spec.gamma.beta << '\n'
     << "share_weights = " << (spec.share_weights ? "true" : "false") << '\n';
  return os.str();
}

NetSpec read_net_spec(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open spec file " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_net_spec(ss.str());
}

void write_net_spec(const std::filesystem::path& path, const NetSpec& spec) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write spec file " + path.string());
  os << format_net_spec(spec);
}

// ---------------------------------------------------------------------------
// NetState

std::vector<Tensor*> NetState::parameters() {
  std::vector<Tensor*> out;
  out.reserve(2 * layers.size());
  for (auto& layer : layers) {
    out.push_back(&layer.weight);
    out.push_back(&layer.bias);
  }
  return out;
}

namespace {

struct LayerShape {
  std::size_t out, in, k;
};

std::vector<LayerShape> layer_shapes(const NetSpec& spec) {
  std::vector<LayerShape> shapes(spec.layer_count());
  const std::size_t C = spec.channels;
  shapes[spec.input_layer()] = {C, 1, spec.input_kernel};
  for (std::size_t s = 0; s < (spec.share_weights ? 1 : spec.scales); ++s)
    for (std::size_t k = 0; k < spec.stack_depth; ++k) shapes[spec.stack_layer(s, k)] = {C, C, spec.stack_kernel};
  for (std::size_t level = 0; level + 1 < spec.scales; ++level) shapes[spec.fuse_layer(level)] = {C, 2 * C, spec.fuse_kernel};
  shapes[spec.final_layer()] = {1, C, 1};
  return shapes;
}

}  // namespace

NetState init_net_state(const NetSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  NetState state;
  for (const auto& s : layer_shapes(spec)) {
    state.layers.push_back(NConvLayer::make(s.out, s.in, s.k, s.k, spec.gamma, spec.epsilon, rng));
  }
  return state;
}

void check_state_matches(const NetSpec& spec, const NetState& state) {
  const auto shapes = layer_shapes(spec);
  if (shapes.size() != state.layers.size()) {
    throw ShapeError("checkpoint has " + std::to_string(state.layers.size()) + " layers, spec needs " +
                     std::to_string(shapes.size()));
  }
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    const Shape want{shapes[l].out, shapes[l].in, shapes[l].k, shapes[l].k};
    if (state.layers[l].weight.shape() != want || state.layers[l].bias.shape() != Shape{shapes[l].out}) {
      throw ShapeError("layer " + std::to_string(l) + " has weight " +
                       shape_to_string(state.layers[l].weight.shape()) + ", spec needs " + shape_to_string(want));
    }
  }
}

std::size_t count_params(const NetSpec& spec) {
  std::size_t n = 0;
  for (const auto& s : layer_shapes(spec)) n += s.out * s.in * s.k * s.k + s.out;
  return n;
}

std::size_t count_params(const NetState& state) {
  std::size_t n = 0;
  for (const auto& layer : state.layers) n += layer.parameter_count();
  return n;
}

// ---------------------------------------------------------------------------
// Scale changes

PoolResult conf_maxpool_down(const ConfSignal& in, std::size_t stride) {
  in.validate();
  if (stride < 1) throw ShapeError("conf_maxpool_down: stride must be >= 1");
  const std::size_t C = in.channels(), H = in.height(), W = in.width();
  if (H % stride != 0 || W % stride != 0) {
    throw ShapeError("conf_maxpool_down: " + std::to_string(H) + "x" + std::to_string(W) +
                     " is not divisible by stride " + std::to_string(stride));
  }
  const std::size_t h = H / stride, w = W / stride;
  PoolResult res{{Tensor({C, h, w}), Tensor({C, h, w})}, {C, H, W, h, w, stride, {}}};
  res.idx.index.resize(C * h * w);
  for (std::size_t ch = 0; ch < C; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        std::size_t best = (y * stride) * W + x * stride;
        for (std::size_t dy = 0; dy < stride; ++dy)
          for (std::size_t dx = 0; dx < stride; ++dx) {
            const std::size_t p = (y * stride + dy) * W + x * stride + dx;
            if (in.c[ch * H * W + p] > in.c[ch * H * W + best]) best = p;
          }
        const std::size_t dst = (ch * h + y) * w + x;
        res.idx.index[dst] = static_cast<std::uint32_t>(best);
        res.out.c[dst] = in.c[ch * H * W + best];
        res.out.z[dst] = in.z[ch * H * W + best];
      }
  return res;
}

Tensor jacobian_rescale(const Tensor& c, std::size_t stride) {
  if (stride < 1) throw ShapeError("jacobian_rescale: stride must be >= 1");
  const double inv = 1.0 / static_cast<double>(stride * stride);
  Tensor out(c.shape());
  for (std::size_t i = 0; i < c.size(); ++i) out[i] = c[i] * inv;
  return out;
}

ConfSignal pool_backward(const PoolIndexMap& idx, const Tensor& grad_z, const Tensor& grad_c) {
  const Shape coarse{idx.channels, idx.coarse_h, idx.coarse_w};
  if (grad_z.shape() != coarse || grad_c.shape() != coarse) throw ShapeError("pool_backward: gradient shape mismatch");
  const std::size_t fine_plane = idx.fine_h * idx.fine_w, coarse_plane = idx.coarse_h * idx.coarse_w;
  ConfSignal g{Tensor({idx.channels, idx.fine_h, idx.fine_w}), Tensor({idx.channels, idx.fine_h, idx.fine_w})};
  for (std::size_t ch = 0; ch < idx.channels; ++ch)
    for (std::size_t p = 0; p < coarse_plane; ++p) {
      const std::size_t src = ch * coarse_plane + p;
      const std::size_t dst = ch * fine_plane + idx.index[src];
      g.z[dst] += grad_z[src];
      g.c[dst] += grad_c[src];
    }
  return g;
}

namespace {

Tensor upsample_plane_stack(const Tensor& t, std::size_t f) {
  const std::size_t C = t.dim(0), h = t.dim(1), w = t.dim(2);
  Tensor out({C, h * f, w * f});
  for (std::size_t ch = 0; ch < C; ++ch)
    for (std::size_t y = 0; y < h * f; ++y)
      for (std::size_t x = 0; x < w * f; ++x) out(ch, y, x) = t(ch, y / f, x / f);
  return out;
}

}  // namespace

ConfSignal upsample_nearest(const ConfSignal& in, std::size_t factor) {
  in.validate();
  if (factor < 1) throw ShapeError("upsample_nearest: factor must be >= 1");
  return {upsample_plane_stack(in.z, factor), upsample_plane_stack(in.c, factor)};
}

Tensor upsample_nearest_backward(const Tensor& grad, std::size_t factor) {
  const std::size_t C = grad.dim(0), H = grad.dim(1), W = grad.dim(2);
  if (H % factor != 0 || W % factor != 0) throw ShapeError("upsample_nearest_backward: indivisible gradient");
  Tensor out({C, H / factor, W / factor});
  for (std::size_t ch = 0; ch < C; ++ch)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) out(ch, y / factor, x / factor) += grad(ch, y, x);
  return out;
}

namespace {

Tensor concat_tensors(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2)) {
    throw ShapeError("concat_channels: spatial shapes differ " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
  std::vector<double> data(a.values());
  data.insert(data.end(), b.values().begin(), b.values().end());
  return Tensor({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)}, std::move(data));
}

std::pair<Tensor, Tensor> split_channels(const Tensor& t, std::size_t first) {
  const std::size_t plane = t.dim(1) * t.dim(2);
  const auto mid = t.values().begin() + static_cast<std::ptrdiff_t>(first * plane);
  return {Tensor({first, t.dim(1), t.dim(2)}, std::vector<double>(t.values().begin(), mid)),
          Tensor({t.dim(0) - first, t.dim(1), t.dim(2)}, std::vector<double>(mid, t.values().end()))};
}

}  // namespace

ConfSignal concat_channels(const ConfSignal& first, const ConfSignal& second) {
  return {concat_tensors(first.z, second.z), concat_tensors(first.c, second.c)};
}

ConfSignal upsample_concat_fuse(const ConfSignal& coarse, const ConfSignal& fine, const NConvLayer& fuse_layer) {
  if (coarse.height() * 2 != fine.height() || coarse.width() * 2 != fine.width()) {
    throw ShapeError("upsample_concat_fuse: coarse " + shape_to_string(coarse.z.shape()) + " is not half of fine " +
                     shape_to_string(fine.z.shape()));
  }
  return nconv_forward(fuse_layer, concat_channels(fine, upsample_nearest(coarse, 2))).out;
}

// ---------------------------------------------------------------------------
// Network

namespace {

void check_input(const NetSpec& spec, const NetState& state, const ConfSignal& in) {
  spec.validate();
  check_state_matches(spec, state);
  in.validate();
  if (in.channels() != 1) throw ShapeError("unguided_forward: input must be single-channel");
  const std::size_t mult = spec.size_multiple();
  if (in.height() % mult != 0 || in.width() % mult != 0) {
    throw ShapeError("unguided_forward: input " + std::to_string(in.height()) + "x" + std::to_string(in.width()) +
                     " not divisible by " + std::to_string(mult));
  }
}

ConfSignal call(const NConvLayer& layer, const ConfSignal& in, ForwardCache& slot) {
  LayerOutput r = nconv_forward(layer, in);
  slot = std::move(r.cache);
  return std::move(r.out);
}

}  // namespace

NetForward unguided_forward_tape(const NetSpec& spec, const NetState& state, const ConfSignal& in) {
  check_input(spec, state, in);
  const std::size_t S = spec.scales;
  NetForward res;
  NetTape& tape = res.tape;
  tape.stack_calls.assign(S, std::vector<ForwardCache>(spec.stack_depth));
  tape.pools.resize(S);
  tape.fuse_calls.resize(S - 1);

  std::vector<ConfSignal> level(S);
  ConfSignal x = call(state.layers[spec.input_layer()], in, tape.input_call);
  for (std::size_t s = 0; s < S; ++s) {
    if (s > 0) {
      PoolResult pooled = conf_maxpool_down(level[s - 1], 2);
      tape.pools[s] = std::move(pooled.idx);
      x = {std::move(pooled.out.z), jacobian_rescale(pooled.out.c, 2)};
    }
    for (std::size_t k = 0; k < spec.stack_depth; ++k) {
      x = call(state.layers[spec.stack_layer(s, k)], x, tape.stack_calls[s][k]);
    }
    level[s] = std::move(x);
  }

  ConfSignal up = level[S - 1];
  for (std::size_t s = S - 1; s-- > 0;) {
    up = call(state.layers[spec.fuse_layer(s)], concat_channels(level[s], upsample_nearest(up, 2)),
              tape.fuse_calls[s]);
  }
  res.out = call(state.layers[spec.final_layer()], up, tape.final_call);
  return res;
}

ConfSignal unguided_forward(const NetSpec& spec, const NetState& state, const ConfSignal& in) {
  return unguided_forward_tape(spec, state, in).out;
}

std::vector<Tensor> NetGradients::flat() const {
  std::vector<Tensor> out;
  out.reserve(2 * weight.size());
  for (std::size_t l = 0; l < weight.size(); ++l) {
    out.push_back(weight[l]);
    out.push_back(bias[l]);
  }
  return out;
}

NetGradients unguided_backward(const NetSpec& spec, const NetState& state, const NetTape& tape,
                               const Tensor& grad_out_z, const Tensor& grad_out_c) {
  const std::size_t S = spec.scales;
  NetGradients g;
  for (const auto& layer : state.layers) {
    g.weight.emplace_back(layer.weight.shape());
    g.bias.emplace_back(layer.bias.shape());
  }
  auto back = [&](std::size_t l, const ForwardCache& cache, const Tensor& gz, const Tensor& gc) {
    LayerGradients lg = nconv_backward(state.layers[l], cache, gz, gc);
    g.weight[l] += lg.weight;
    g.bias[l] += lg.bias;
    return ConfSignal{std::move(lg.input_z), std::move(lg.input_c)};
  };

  // Gradients w.r.t. the output of each scale's stack.
  std::vector<ConfSignal> g_level(S);
  ConfSignal g_up = back(spec.final_layer(), tape.final_call, grad_out_z, grad_out_c);

  if (S == 1) {
    g_level[0] = std::move(g_up);
  } else {
    for (std::size_t s = 0; s + 1 < S; ++s) {
      const ConfSignal g_cat = back(spec.fuse_layer(s), tape.fuse_calls[s], g_up.z, g_up.c);
      const std::size_t C = spec.channels;
      auto [gz_fine, gz_up] = split_channels(g_cat.z, C);
      auto [gc_fine, gc_up] = split_channels(g_cat.c, C);
      g_level[s] = {std::move(gz_fine), std::move(gc_fine)};
      g_up = {upsample_nearest_backward(gz_up, 2), upsample_nearest_backward(gc_up, 2)};
    }
    g_level[S - 1] = std::move(g_up);
  }

  for (std::size_t s = S; s-- > 0;) {
    ConfSignal gx = std::move(g_level[s]);
    for (std::size_t k = spec.stack_depth; k-- > 0;) {
      gx = back(spec.stack_layer(s, k), tape.stack_calls[s][k], gx.z, gx.c);
    }
    if (s > 0) {
      // The rescale is linear in the pooled confidence.
      ConfSignal gp = pool_backward(tape.pools[s], gx.z, jacobian_rescale(gx.c, 2));
      g_level[s - 1].z += gp.z;
      g_level[s - 1].c += gp.c;
    } else {
      g.input = back(spec.input_layer(), tape.input_call, gx.z, gx.c);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

std::filesystem::path tensor_path(const std::filesystem::path& dir, const char* what, std::size_t l) {
  char name[64];
  std::snprintf(name, sizeof name, "layer_%02zu_%s.nct", l, what);
  return dir / name;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const NetSpec& spec, const NetState& state) {
  check_state_matches(spec, state);
  std::filesystem::create_directories(dir);
  write_net_spec(dir / "spec.cfg", spec);
  std::ofstream header(dir / "layers.txt");
  if (!header) throw Error("cannot write " + (dir / "layers.txt").string());
  header << std::setprecision(std::numeric_limits<double>::max_digits10);
  header << "# layer out in kh kw gamma beta epsilon\n";
  for (std::size_t l = 0; l < state.layers.size(); ++l) {
    const auto& layer = state.layers[l];
    header << l << ' ' << layer.out_channels() << ' ' << layer.in_channels() << ' ' << layer.kernel_h() << ' '
           << layer.kernel_w() << ' ' << to_string(layer.gamma.kind) << ' ' << layer.gamma.beta << ' '
           << layer.epsilon << '\n';
    write_nct(tensor_path(dir, "weight", l), layer.weight);
    write_nct(tensor_path(dir, "bias", l), layer.bias);
  }
  const AdamState& opt = state.optimizer;
  std::ofstream adam(dir / "adam.txt");
  adam << std::setprecision(std::numeric_limits<double>::max_digits10);
  adam << "lr = " << opt.lr << "\nbeta1 = " << opt.beta1 << "\nbeta2 = " << opt.beta2 << "\neps = " << opt.eps
       << "\nstep = " << opt.step << '\n';
  for (std::size_t i = 0; i < opt.m.size(); ++i) {
    write_nct(tensor_path(dir, "adam_m", i), opt.m[i]);
    write_nct(tensor_path(dir, "adam_v", i), opt.v[i]);
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error("checkpoint directory not found: " + dir.string());
  Checkpoint ck{read_net_spec(dir / "spec.cfg"), {}};
  for (std::size_t l = 0; l < ck.spec.layer_count(); ++l) {
    if (!std::filesystem::exists(tensor_path(dir, "weight", l))) {
      throw ShapeError("checkpoint is missing " + tensor_path(dir, "weight", l).filename().string() +
                       " required by its spec");
    }
    NConvLayer layer{read_nct(tensor_path(dir, "weight", l)), read_nct(tensor_path(dir, "bias", l)), ck.spec.gamma,
                     ck.spec.epsilon,
                     ck.spec.gamma.kind == NonNegFn::Kind::Identity ? ConfPropagation::MaxPool
                                                                     : ConfPropagation::Normalized};
    ck.state.layers.push_back(std::move(layer));
  }
  if (std::filesystem::exists(tensor_path(dir, "weight", ck.spec.layer_count()))) {
    throw ShapeError("checkpoint holds more layers than its spec describes");
  }
  check_state_matches(ck.spec, ck.state);

  if (std::ifstream adam(dir / "adam.txt"); adam) {
    std::string key, eq;
    AdamState& opt = ck.state.optimizer;
    while (adam >> key >> eq) {
      if (key == "lr") adam >> opt.lr;
      else if (key == "beta1") adam >> opt.beta1;
      else if (key == "beta2") adam >> opt.beta2;
      else if (key == "eps") adam >> opt.eps;
      else if (key == "step") adam >> opt.step;
      else throw FormatError("adam.txt: unknown key '" + key + "'");
    }
    for (std::size_t i = 0; std::filesystem::exists(tensor_path(dir, "adam_m", i)); ++i) {
      opt.m.push_back(read_nct(tensor_path(dir, "adam_m", i)));
      opt.v.push_back(read_nct(tensor_path(dir, "adam_v", i)));
    }
  }
  return ck;
}

}  // namespace nconv
