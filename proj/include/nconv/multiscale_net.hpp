#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "nconv/adam.hpp"
#include "nconv/nconv_layer.hpp"

namespace nconv {

/// Architecture of the unguided multi-scale network.
///
/// Scale 0 runs an input layer (1 -> channels) followed by `stack_depth`
/// layers (channels -> channels). Every coarser scale max-pools the previous
/// scale by confidence and runs the same stack again (shared weights unless
/// `share_weights` is off). Scales are fused coarse-to-fine by nearest
/// upsampling, channel concatenation and a fuse layer, and a final 1x1 layer
/// merges the channels into one.
struct NetSpec {
  std::size_t scales = 3;
  std::size_t channels = 2;
  std::size_t input_kernel = 5;
  std::size_t stack_kernel = 5;
  std::size_t stack_depth = 2;
  std::size_t fuse_kernel = 3;
  double epsilon = 1e-8;
  NonNegFn gamma = NonNegFn::softplus(10.0);
  bool share_weights = true;

  void validate() const;

  std::size_t stack_layer_count() const { return share_weights ? stack_depth : stack_depth * scales; }
  std::size_t layer_count() const { return 1 + stack_layer_count() + (scales - 1) + 1; }

  std::size_t input_layer() const { return 0; }
  std::size_t stack_layer(std::size_t scale, std::size_t k) const {
    return 1 + (share_weights ? k : scale * stack_depth + k);
  }
  /// Fuse layer merging scale `level` with the upsampled result of level+1.
  std::size_t fuse_layer(std::size_t level) const { return 1 + stack_layer_count() + level; }
  std::size_t final_layer() const { return layer_count() - 1; }

  /// Input height and width must be multiples of this.
  std::size_t size_multiple() const { return std::size_t{1} << (scales - 1); }

  friend bool operator==(const NetSpec& a, const NetSpec& b);
};

/// Flat `key = value` text, '#' starts a comment.
NetSpec parse_net_spec(std::string_view text);
std::string format_net_spec(const NetSpec& spec);
NetSpec read_net_spec(const std::filesystem::path& path);
void write_net_spec(const std::filesystem::path& path, const NetSpec& spec);

struct NetState {
  std::vector<NConvLayer> layers;
  AdamState optimizer;

  /// Parameter tensors in the fixed order [W0, b0, W1, b1, ...].
  std::vector<Tensor*> parameters();
};

NetState init_net_state(const NetSpec& spec, std::uint64_t seed);
/// Throws ShapeError describing the first layer that disagrees with the spec.
void check_state_matches(const NetSpec& spec, const NetState& state);
std::size_t count_params(const NetSpec& spec);
std::size_t count_params(const NetState& state);

/// For every coarse pixel of every channel, the flat in-plane index of the
/// selected fine pixel.
struct PoolIndexMap {
  std::size_t channels = 0;
  std::size_t fine_h = 0, fine_w = 0;
  std::size_t coarse_h = 0, coarse_w = 0;
  std::size_t stride = 2;
  std::vector<std::uint32_t> index;  // [channels * coarse_h * coarse_w]
};

struct PoolResult {
  ConfSignal out;  // confidence not yet rescaled
  PoolIndexMap idx;
};

/// Per-channel max pooling over stride x stride blocks of the confidence;
/// data is gathered at the argmax. Ties go to the first pixel in row-major
/// order within the block.
PoolResult conf_maxpool_down(const ConfSignal& in, std::size_t stride = 2);
/// Divides every confidence by stride^2, the area Jacobian of the scaling.
Tensor jacobian_rescale(const Tensor& c, std::size_t stride = 2);
/// Scatters coarse gradients back to the selected fine pixels.
ConfSignal pool_backward(const PoolIndexMap& idx, const Tensor& grad_z, const Tensor& grad_c);

ConfSignal upsample_nearest(const ConfSignal& in, std::size_t factor = 2);
/// Adjoint of nearest upsampling: sums each factor x factor block.
Tensor upsample_nearest_backward(const Tensor& grad, std::size_t factor = 2);
ConfSignal concat_channels(const ConfSignal& first, const ConfSignal& second);

/// Nearest-upsample `coarse`, concatenate as [fine, coarse] and apply the fuse layer.
ConfSignal upsample_concat_fuse(const ConfSignal& coarse, const ConfSignal& fine, const NConvLayer& fuse_layer);

/// Everything the reverse pass needs from one forward evaluation.
struct NetTape {
  ForwardCache input_call;
  std::vector<std::vector<ForwardCache>> stack_calls;  // [scale][k]
  std::vector<PoolIndexMap> pools;                     // pools[s] feeds scale s (s >= 1)
  std::vector<ForwardCache> fuse_calls;                // [level]
  ForwardCache final_call;
};

struct NetForward {
  ConfSignal out;
  NetTape tape;
};

struct NetGradients {
  std::vector<Tensor> weight;  // per layer
  std::vector<Tensor> bias;
  ConfSignal input;            // gradient w.r.t. the network input

  /// Interleaved [dW0, db0, dW1, db1, ...] matching NetState::parameters().
  std::vector<Tensor> flat() const;
};

/// Dense single-channel prediction and confidence for a single-channel input.
ConfSignal unguided_forward(const NetSpec& spec, const NetState& state, const ConfSignal& in);
NetForward unguided_forward_tape(const NetSpec& spec, const NetState& state, const ConfSignal& in);
NetGradients unguided_backward(const NetSpec& spec, const NetState& state, const NetTape& tape,
                               const Tensor& grad_out_z, const Tensor& grad_out_c);

/// Checkpoint directory: spec.cfg, layers.txt (text header per layer) and
/// NCT1 tensors for weights, biases and optimizer moments.
void save_checkpoint(const std::filesystem::path& dir, const NetSpec& spec, const NetState& state);
struct Checkpoint {
  NetSpec spec;
  NetState state;
};
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace nconv
