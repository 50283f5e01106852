#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include "nconv/tensor.hpp"

namespace nconv {

enum class SceneKind { Planes, SlantedSteps, Sinusoid };

std::string_view to_string(SceneKind kind);
SceneKind parse_scene_kind(std::string_view name);

/// Piecewise-smooth positive depth [H, W] in meters, clamped to [1, 80].
/// Planes and SlantedSteps contain step edges of at least 5 m; Sinusoid is
/// smooth (max neighbour difference below 1 m).
Tensor synth_scene(std::uint64_t seed, std::size_t H, std::size_t W, SceneKind kind);

struct Sparsified {
  Tensor sparse;      // dense * confidence
  Tensor confidence;  // Bernoulli(density) mask in {0, 1}
};

Sparsified sparsify(const Tensor& dense, double density, std::uint64_t seed);

/// One synthetic sample: dense ground truth plus its sparsified input.
struct Scene {
  Tensor gt;          // [H, W], meters
  Tensor sparse;      // [H, W]
  Tensor confidence;  // [H, W]
  Tensor gt_mask;     // [H, W], 1 where gt is valid
};

/// Cycles through the three scene kinds; scene i uses seed + i.
std::vector<Scene> make_synthetic_set(std::size_t count, std::size_t H, std::size_t W, double density,
                                      std::uint64_t seed);

constexpr double kDepthScale = 1.0 / 256.0;       // meters per count
constexpr double kConfidenceScale = 1.0 / 65535.0;

/// Binary "P5" PGM, maxval 65535, big-endian samples. Stored count is
/// round(value / scale) and must fit in [0, 65535].
void write_pgm16(const std::filesystem::path& path, const Tensor& t, double scale = kDepthScale);
/// Returns [H, W] with value = count * scale. Accepts 8-bit files (maxval < 256).
Tensor read_pgm16(const std::filesystem::path& path, double scale = kDepthScale);

/// DIR/scene_%04d/{gt,sparse,conf}.pgm
void write_dataset(const std::filesystem::path& dir, const std::vector<Scene>& scenes);
std::vector<Scene> read_dataset(const std::filesystem::path& dir);

}  // namespace nconv
