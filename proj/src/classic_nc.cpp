#include "nconv/classic_nc.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace nconv::classic {

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<double> values) : rows(r), cols(c), v(std::move(values)) {
  if (v.size() != r * c) throw ShapeError("matrix: value count does not match dimensions");
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
  return t;
}

Matrix multiply(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) throw ShapeError("matrix multiply: inner dimensions differ");
  Matrix out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = a(i, k);
      for (std::size_t j = 0; j < b.cols; ++j) out(i, j) += aik * b(k, j);
    }
  return out;
}

namespace {

// Plain elimination determinant; returns 0 for exactly singular input instead
// of throwing, since a vanishing Grammian is a legitimate zero-confidence case.
double determinant_of(Matrix m) {
  if (m.rows != m.cols) throw ShapeError("determinant of non-square matrix");
  const std::size_t n = m.rows;
  double det = 1.0;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(m(r, col)) > std::abs(m(pivot, col))) pivot = r;
    if (m(pivot, col) == 0.0) return 0.0;
    if (pivot != col) {
      for (std::size_t j = 0; j < n; ++j) std::swap(m(pivot, j), m(col, j));
      det = -det;
    }
    det *= m(col, col);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = m(r, col) / m(col, col);
      for (std::size_t j = col; j < n; ++j) m(r, j) -= f * m(col, j);
    }
  }
  return det;
}

}  // namespace

LuDecomposition::LuDecomposition(const Matrix& a) : lu_(a), perm_(a.rows) {
  if (a.rows != a.cols || a.rows == 0) throw ShapeError("LU of non-square or empty matrix");
  const std::size_t n = a.rows;
  double scale = 0.0;
  for (std::size_t i = 0; i < n; ++i) scale = std::max(scale, std::abs(a(i, i)));
  const double threshold = 1e-12 * scale;
  for (std::size_t i = 0; i < n; ++i) perm_[i] = i;

  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(lu_(r, col)) > std::abs(lu_(pivot, col))) pivot = r;
    if (!(std::abs(lu_(pivot, col)) > threshold)) {
      throw SingularGrammian("Grammian is singular (pivot " + std::to_string(lu_(pivot, col)) + " at column " +
                             std::to_string(col) + "): not enough confident samples for the basis");
    }
    if (pivot != col) {
      for (std::size_t j = 0; j < n; ++j) std::swap(lu_(pivot, j), lu_(col, j));
      std::swap(perm_[pivot], perm_[col]);
      sign_ = -sign_;
    }
    for (std::size_t r = col + 1; r < n; ++r) {
      lu_(r, col) /= lu_(col, col);
      const double f = lu_(r, col);
      for (std::size_t j = col + 1; j < n; ++j) lu_(r, j) -= f * lu_(col, j);
    }
  }
}

std::vector<double> LuDecomposition::solve(std::span<const double> rhs) const {
  const std::size_t n = lu_.rows;
  if (rhs.size() != n) throw ShapeError("LU solve: rhs length mismatch");
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = rhs[perm_[i]];
    for (std::size_t j = 0; j < i; ++j) acc -= lu_(i, j) * x[j];
    x[i] = acc;
  }
  for (std::size_t i = n; i-- > 0;) {
    double acc = x[i];
    for (std::size_t j = i + 1; j < n; ++j) acc -= lu_(i, j) * x[j];
    x[i] = acc / lu_(i, i);
  }
  return x;
}

Matrix LuDecomposition::inverse() const {
  const std::size_t n = lu_.rows;
  Matrix inv(n, n);
  std::vector<double> e(n);
  for (std::size_t j = 0; j < n; ++j) {
    std::fill(e.begin(), e.end(), 0.0);
    e[j] = 1.0;
    const auto col = solve(e);
    for (std::size_t i = 0; i < n; ++i) inv(i, j) = col[i];
  }
  return inv;
}

double LuDecomposition::determinant() const {
  double det = sign_;
  for (std::size_t i = 0; i < lu_.rows; ++i) det *= lu_(i, i);
  return det;
}

double spectral_norm(const Matrix& a, int max_iterations, double rel_tol) {
  const Matrix ata = multiply(transpose(a), a);
  const std::size_t n = ata.rows;
  // Slightly asymmetric start so it is not orthogonal to the dominant vector
  // of the symmetric test matrices we care about.
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = 1.0 + 0.1 * static_cast<double>(i);
  double lambda = 0.0;
  for (int it = 0; it < max_iterations; ++it) {
    double norm = 0.0;
    for (double xi : x) norm += xi * xi;
    norm = std::sqrt(norm);
    if (norm == 0.0) return 0.0;
    for (double& xi : x) xi /= norm;
    std::vector<double> y(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) y[i] += ata(i, j) * x[j];
    double rayleigh = 0.0;
    for (std::size_t i = 0; i < n; ++i) rayleigh += x[i] * y[i];
    const bool converged = it > 0 && std::abs(rayleigh - lambda) <= rel_tol * std::abs(rayleigh);
    lambda = rayleigh;
    x = std::move(y);
    if (converged) break;
  }
  return std::sqrt(std::max(lambda, 0.0));
}

Basis::Basis(Matrix matrix) : b_(std::move(matrix)) {
  if (b_.cols == 0 || b_.rows < b_.cols) {
    throw DegenerateBasis("basis needs n >= m >= 1, got n=" + std::to_string(b_.rows) +
                          " m=" + std::to_string(b_.cols));
  }
  try {
    LuDecomposition lu(multiply(transpose(b_), b_));
  } catch (const SingularGrammian&) {
    throw DegenerateBasis("basis functions are linearly dependent");
  }
  naive_ = b_.cols == 1 && std::all_of(b_.v.begin(), b_.v.end(), [](double x) { return x == 1.0; });
}

Basis Basis::naive(std::size_t n) { return Basis(Matrix(n, 1, 1.0)); }

Basis Basis::polynomial(std::span<const double> coords, std::size_t degree) {
  Matrix b(coords.size(), degree + 1);
  for (std::size_t i = 0; i < coords.size(); ++i) {
    double p = 1.0;
    for (std::size_t d = 0; d <= degree; ++d) {
      b(i, d) = p;
      p *= coords[i];
    }
  }
  return Basis(std::move(b));
}

namespace {

Matrix weighted_grammian(const Basis& basis, std::span<const double> w) {
  const Matrix& B = basis.matrix();
  Matrix G(B.cols, B.cols);
  for (std::size_t k = 0; k < B.rows; ++k) {
    if (w[k] == 0.0) continue;
    for (std::size_t i = 0; i < B.cols; ++i)
      for (std::size_t j = 0; j < B.cols; ++j) G(i, j) += B(k, i) * w[k] * B(k, j);
  }
  return G;
}

void check_neighbourhood(const Basis& basis, std::span<const double> a, std::span<const double> c) {
  if (a.size() != basis.samples() || c.size() != basis.samples()) {
    throw ShapeError("neighbourhood length differs from basis sample count");
  }
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a[k] < 0.0 || c[k] < 0.0) throw RangeError("applicability and confidence must be non-negative");
  }
}

}  // namespace

Matrix grammian(const Basis& basis, std::span<const double> a, std::span<const double> c) {
  check_neighbourhood(basis, a, c);
  std::vector<double> w(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) w[k] = a[k] * c[k];
  return weighted_grammian(basis, w);
}

Matrix full_grammian(const Basis& basis, std::span<const double> a) {
  const std::vector<double> ones(a.size(), 1.0);
  return grammian(basis, a, ones);
}

std::vector<double> nc_solve(const Basis& basis, const Neighborhood& nb) {
  if (nb.f.size() != basis.samples()) throw ShapeError("nc_solve: sample vector length mismatch");
  const Matrix G = grammian(basis, nb.a, nb.c);
  const Matrix& B = basis.matrix();
  std::vector<double> rhs(B.cols, 0.0);
  for (std::size_t k = 0; k < B.rows; ++k) {
    const double w = nb.a[k] * nb.c[k] * nb.f[k];
    for (std::size_t i = 0; i < B.cols; ++i) rhs[i] += B(k, i) * w;
  }
  return LuDecomposition(G).solve(rhs);
}

NormalizedAverage normalized_average_map(const Tensor& F, const Tensor& C, const Tensor& applicability) {
  require_same_shape(F, C, "normalized_average_map");
  for (double v : applicability.data())
    if (v < 0.0) throw RangeError("normalized_average_map: applicability must be non-negative");
  const Tensor num = correlate2d(F * C, applicability, PadMode::Zero);
  NormalizedAverage out{Tensor(F.shape()), correlate2d(C, applicability, PadMode::Zero), Tensor(F.shape())};
  for (std::size_t i = 0; i < F.size(); ++i) {
    if (out.denom[i] > 0.0) {
      out.value[i] = num[i] / out.denom[i];
      out.valid[i] = 1.0;
    }
  }
  return out;
}

double confidence_westelius(const Matrix& G, const Matrix& G0) {
  if (G.rows != G.cols || G0.rows != G0.cols || G.rows != G0.rows || G.rows == 0) {
    throw ShapeError("confidence_westelius: Grammians must be square and of equal size");
  }
  const double det0 = determinant_of(G0);
  if (!(det0 > 0.0)) throw DegenerateBasis("full-confidence Grammian has non-positive determinant");
  const double ratio = std::max(determinant_of(G), 0.0) / det0;
  return std::pow(ratio, 1.0 / static_cast<double>(G.rows));
}

double confidence_karlholm(const Matrix& G, const Matrix& G0) {
  if (G.rows != G.cols || G0.rows != G0.cols || G.rows != G0.rows || G.rows == 0) {
    throw ShapeError("confidence_karlholm: Grammians must be square and of equal size");
  }
  const Matrix g_inv = LuDecomposition(G).inverse();
  return 1.0 / (spectral_norm(g_inv) * spectral_norm(G0));
}

Tensor gaussian_kernel(std::size_t size, double sigma) {
  if (size % 2 == 0) throw ShapeError("gaussian_kernel: size must be odd");
  if (!(sigma > 0.0)) throw RangeError("gaussian_kernel: sigma must be positive");
  Tensor k({size, size});
  const double c = static_cast<double>(size / 2);
  double total = 0.0;
  for (std::size_t i = 0; i < size; ++i)
    for (std::size_t j = 0; j < size; ++j) {
      const double dy = static_cast<double>(i) - c, dx = static_cast<double>(j) - c;
      k(i, j) = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      total += k(i, j);
    }
  for (double& v : k.data()) v /= total;
  return k;
}

}  // namespace nconv::classic
