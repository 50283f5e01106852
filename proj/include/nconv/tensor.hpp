#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nconv/error.hpp"

namespace nconv {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Dense row-major array of doubles. No views, no strides, no broadcasting.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double* ptr() noexcept { return data_.data(); }
  const double* ptr() const noexcept { return data_.data(); }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  // Rank-specific accessors; no bounds checking beyond what std::vector gives.
  double& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double& operator()(std::size_t c, std::size_t i, std::size_t j) {
    return data_[(c * shape_[1] + i) * shape_[2] + j];
  }
  double operator()(std::size_t c, std::size_t i, std::size_t j) const {
    return data_[(c * shape_[1] + i) * shape_[2] + j];
  }
  double& operator()(std::size_t o, std::size_t c, std::size_t i, std::size_t j) {
    return data_[((o * shape_[1] + c) * shape_[2] + i) * shape_[3] + j];
  }
  double operator()(std::size_t o, std::size_t c, std::size_t i, std::size_t j) const {
    return data_[((o * shape_[1] + c) * shape_[2] + i) * shape_[3] + j];
  }

  /// Same data, new shape with equal element count.
  Tensor reshaped(Shape shape) const;

  void fill(double value);

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

enum class PadMode { Zero, Replicate };

using Margins = std::vector<std::pair<std::size_t, std::size_t>>;

Tensor pad(const Tensor& t, const Margins& margins, PadMode mode);
Tensor crop(const Tensor& t, const Margins& margins);

/// Same-size 2D correlation: out[i,j] = sum_{m,n} t_pad[i+m, j+n] * k[m,n].
/// Kernel extents must be odd; the input is padded by half the kernel size.
Tensor correlate2d(const Tensor& t, const Tensor& k, PadMode mode = PadMode::Zero);

// Elementwise arithmetic; shapes must match exactly.
Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator*(double s, const Tensor& a);
Tensor& operator+=(Tensor& a, const Tensor& b);

double sum(const Tensor& t);
double max_value(const Tensor& t);
double min_value(const Tensor& t);
double max_abs_diff(const Tensor& a, const Tensor& b);
bool all_finite(const Tensor& t);

void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

// NCT1 container: "NCT1", u32 rank, rank x u64 extents, little-endian f64
// payload in row-major order.
void write_nct(const std::filesystem::path& path, const Tensor& t);
Tensor read_nct(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_nct(const Tensor& t);
Tensor decode_nct(std::span<const std::uint8_t> bytes);

}  // namespace nconv
