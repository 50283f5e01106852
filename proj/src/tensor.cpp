#include "nconv/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>
#include <sstream>

namespace nconv {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw ShapeError("tensor shape " + shape_to_string(shape_) + " does not match " +
                     std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

namespace {

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t axis = shape.size(); axis-- > 1;) strides[axis - 1] = strides[axis] * shape[axis];
  return strides;
}

}  // namespace

Tensor pad(const Tensor& t, const Margins& margins, PadMode mode) {
  if (margins.size() != t.rank()) {
    throw ShapeError("pad: " + std::to_string(margins.size()) + " margins for rank " + std::to_string(t.rank()));
  }
  Shape out_shape(t.rank());
  for (std::size_t a = 0; a < t.rank(); ++a) out_shape[a] = t.dim(a) + margins[a].first + margins[a].second;
  Tensor out(out_shape);
  if (out.empty()) return out;
  if (t.empty()) {
    if (mode == PadMode::Replicate) throw ShapeError("pad: cannot replicate an empty tensor");
    return out;
  }

  const auto in_strides = strides_of(t.shape());
  const auto out_strides = strides_of(out_shape);
  std::vector<std::size_t> idx(t.rank(), 0);
  for (std::size_t flat = 0; flat < out.size(); ++flat) {
    std::size_t rem = flat;
    std::size_t src = 0;
    bool inside = true;
    for (std::size_t a = 0; a < t.rank(); ++a) {
      const auto coord = static_cast<std::ptrdiff_t>(rem / out_strides[a]) -
                         static_cast<std::ptrdiff_t>(margins[a].first);
      rem %= out_strides[a];
      const auto extent = static_cast<std::ptrdiff_t>(t.dim(a));
      std::ptrdiff_t c = coord;
      if (c < 0 || c >= extent) {
        inside = false;
        c = std::clamp<std::ptrdiff_t>(c, 0, extent - 1);
      }
      src += static_cast<std::size_t>(c) * in_strides[a];
    }
    out[flat] = (inside || mode == PadMode::Replicate) ? t[src] : 0.0;
  }
  return out;
}

Tensor crop(const Tensor& t, const Margins& margins) {
  if (margins.size() != t.rank()) {
    throw ShapeError("crop: " + std::to_string(margins.size()) + " margins for rank " + std::to_string(t.rank()));
  }
  Shape out_shape(t.rank());
  for (std::size_t a = 0; a < t.rank(); ++a) {
    if (margins[a].first + margins[a].second > t.dim(a)) throw ShapeError("crop: margins exceed extent");
    out_shape[a] = t.dim(a) - margins[a].first - margins[a].second;
  }
  Tensor out(out_shape);
  const auto in_strides = strides_of(t.shape());
  const auto out_strides = strides_of(out_shape);
  for (std::size_t flat = 0; flat < out.size(); ++flat) {
    std::size_t rem = flat;
    std::size_t src = 0;
    for (std::size_t a = 0; a < t.rank(); ++a) {
      src += (rem / out_strides[a] + margins[a].first) * in_strides[a];
      rem %= out_strides[a];
    }
    out[flat] = t[src];
  }
  return out;
}

Tensor correlate2d(const Tensor& t, const Tensor& k, PadMode mode) {
  if (t.rank() != 2 || k.rank() != 2) throw ShapeError("correlate2d: expects rank-2 signal and kernel");
  const std::size_t kh = k.dim(0), kw = k.dim(1);
  if (kh % 2 == 0 || kw % 2 == 0) {
    throw ShapeError("correlate2d: kernel extents must be odd, got " + shape_to_string(k.shape()));
  }
  const std::size_t ph = kh / 2, pw = kw / 2;
  const Tensor padded = pad(t, {{ph, ph}, {pw, pw}}, mode);
  const std::size_t H = t.dim(0), W = t.dim(1), PW = padded.dim(1);
  Tensor out({H, W});
  for (std::size_t i = 0; i < H; ++i) {
    for (std::size_t j = 0; j < W; ++j) {
      double acc = 0.0;
      for (std::size_t m = 0; m < kh; ++m) {
        const double* row = padded.ptr() + (i + m) * PW + j;
        const double* krow = k.ptr() + m * kw;
        for (std::size_t n = 0; n < kw; ++n) acc += row[n] * krow[n];
      }
      out(i, j) = acc;
    }
  }
  return out;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
}

namespace {

template <class Op>
Tensor zip(const Tensor& a, const Tensor& b, const char* what, Op op) {
  require_same_shape(a, b, what);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = op(a[i], b[i]);
  return out;
}

}  // namespace

Tensor operator+(const Tensor& a, const Tensor& b) { return zip(a, b, "add", std::plus<>()); }
Tensor operator-(const Tensor& a, const Tensor& b) { return zip(a, b, "sub", std::minus<>()); }
Tensor operator*(const Tensor& a, const Tensor& b) { return zip(a, b, "mul", std::multiplies<>()); }

Tensor operator*(double s, const Tensor& a) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = s * a[i];
  return out;
}

Tensor& operator+=(Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

double sum(const Tensor& t) {
  double acc = 0.0;
  for (double v : t.data()) acc += v;
  return acc;
}

double max_value(const Tensor& t) {
  if (t.empty()) throw ShapeError("max_value of empty tensor");
  return *std::max_element(t.data().begin(), t.data().end());
}

double min_value(const Tensor& t) {
  if (t.empty()) throw ShapeError("min_value of empty tensor");
  return *std::min_element(t.data().begin(), t.data().end());
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

bool all_finite(const Tensor& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](double v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------------------
// NCT1

namespace {

constexpr char kMagic[4] = {'N', 'C', 'T', '1'};

template <class T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  const U bits = std::bit_cast<U>(value);
  for (std::size_t b = 0; b < sizeof(U); ++b) out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
}

template <class U>
U get_le(std::span<const std::uint8_t> bytes, std::size_t& pos) {
  if (pos + sizeof(U) > bytes.size()) throw FormatError("NCT1: truncated data");
  U value = 0;
  for (std::size_t b = 0; b < sizeof(U); ++b) value |= static_cast<U>(bytes[pos + b]) << (8 * b);
  pos += sizeof(U);
  return value;
}

}  // namespace

std::vector<std::uint8_t> encode_nct(const Tensor& t) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  out.reserve(8 + 8 * t.rank() + 8 * t.size());
  put_le(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t extent : t.shape()) put_le(out, static_cast<std::uint64_t>(extent));
  for (double v : t.data()) put_le(out, v);
  return out;
}

Tensor decode_nct(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("NCT1: bad magic");
  std::size_t pos = 4;
  const auto rank = get_le<std::uint32_t>(bytes, pos);
  if (rank > 16) throw FormatError("NCT1: implausible rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& extent : shape) extent = static_cast<std::size_t>(get_le<std::uint64_t>(bytes, pos));
  const std::size_t n = shape_numel(shape);
  if (bytes.size() - pos != 8 * n) {
    throw FormatError("NCT1: payload holds " + std::to_string(bytes.size() - pos) + " bytes, expected " +
                      std::to_string(8 * n));
  }
  std::vector<double> data(n);
  for (auto& v : data) v = std::bit_cast<double>(get_le<std::uint64_t>(bytes, pos));
  return Tensor(std::move(shape), std::move(data));
}

void write_nct(const std::filesystem::path& path, const Tensor& t) {
  const auto bytes = encode_nct(t);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw Error("write failed: " + path.string());
}

Tensor read_nct(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_nct(bytes);
}

}  // namespace nconv
