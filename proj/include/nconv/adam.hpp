#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nconv/tensor.hpp"

namespace nconv {

struct AdamState {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<Tensor> m;  // first moments, one per parameter tensor
  std::vector<Tensor> v;  // second moments
};

/// One bias-corrected ADAM update. Moments are lazily sized on the first call;
/// afterwards every parameter/gradient/moment shape must agree.
void adam_step(AdamState& state, std::span<Tensor> params, std::span<const Tensor> grads);

}  // namespace nconv
