#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "nconv/tensor.hpp"

namespace nconv::classic {

/// Small dense row-major matrix for Grammians and basis matrices.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> v;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), v(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> values);

  double& operator()(std::size_t i, std::size_t j) { return v[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return v[i * cols + j]; }

  static Matrix identity(std::size_t n);
};

Matrix transpose(const Matrix& a);
Matrix multiply(const Matrix& a, const Matrix& b);

/// LU factorisation with partial pivoting. Throws SingularGrammian when a
/// pivot falls below 1e-12 times the largest diagonal magnitude of the input.
class LuDecomposition {
 public:
  explicit LuDecomposition(const Matrix& a);

  std::vector<double> solve(std::span<const double> rhs) const;
  Matrix inverse() const;
  double determinant() const;

 private:
  Matrix lu_;
  std::vector<std::size_t> perm_;
  int sign_ = 1;
};

/// Largest singular value by power iteration on A^T A.
double spectral_norm(const Matrix& a, int max_iterations = 50, double rel_tol = 1e-12);

/// Columns of `matrix` (n x m) are basis functions sampled on the neighbourhood.
class Basis {
 public:
  explicit Basis(Matrix matrix);

  /// The single constant basis function over n samples.
  static Basis naive(std::size_t n);
  /// {1, x, ..., x^degree} sampled at the given coordinates.
  static Basis polynomial(std::span<const double> coords, std::size_t degree);

  const Matrix& matrix() const noexcept { return b_; }
  std::size_t samples() const noexcept { return b_.rows; }
  std::size_t functions() const noexcept { return b_.cols; }
  bool is_naive() const noexcept { return naive_; }

 private:
  Matrix b_;
  bool naive_ = false;
};

struct Neighborhood {
  std::vector<double> f;  // samples
  std::vector<double> c;  // confidence, >= 0
  std::vector<double> a;  // applicability, >= 0
};

/// B^T diag(a) diag(c) B.
Matrix grammian(const Basis& basis, std::span<const double> a, std::span<const double> c);
/// B^T diag(a) B, the full-confidence Grammian.
Matrix full_grammian(const Basis& basis, std::span<const double> a);

/// Weighted least-squares coefficients r = G^-1 B^T D_a D_c f.
std::vector<double> nc_solve(const Basis& basis, const Neighborhood& nb);

struct NormalizedAverage {
  Tensor value;     // (a * (F.C)) / (a * C), zero where undefined
  Tensor denom;     // a * C
  Tensor valid;     // 1 where denom > 0, else 0
};

/// Normalized averaging over a whole 2D map with correlation semantics and
/// zero padding of both data and confidence. No epsilon is injected.
NormalizedAverage normalized_average_map(const Tensor& F, const Tensor& C, const Tensor& applicability);

/// (det G / det G0)^(1/m).
double confidence_westelius(const Matrix& G, const Matrix& G0);
/// 1 / (||G^-1||_2 ||G0||_2) with spectral norms.
double confidence_karlholm(const Matrix& G, const Matrix& G0);

/// Normalised (unit-sum) isotropic Gaussian kernel of odd size.
Tensor gaussian_kernel(std::size_t size, double sigma);

}  // namespace nconv::classic
