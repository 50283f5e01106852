#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "nconv/error.hpp"
#include "nconv/tensor.hpp"
#include "test_util.hpp"

using namespace nconv;
using nconv::testing::random_tensor;

namespace {

// Independent reference: explicit bounds checks instead of a padded copy.
Tensor naive_correlate(const Tensor& t, const Tensor& k) {
  const std::ptrdiff_t H = t.dim(0), W = t.dim(1), kh = k.dim(0), kw = k.dim(1);
  Tensor out({t.dim(0), t.dim(1)});
  for (std::ptrdiff_t i = 0; i < H; ++i)
    for (std::ptrdiff_t j = 0; j < W; ++j) {
      double s = 0.0;
      for (std::ptrdiff_t m = 0; m < kh; ++m)
        for (std::ptrdiff_t n = 0; n < kw; ++n) {
          const std::ptrdiff_t y = i + m - kh / 2, x = j + n - kw / 2;
          if (y >= 0 && y < H && x >= 0 && x < W) s += t(y, x) * k(m, n);
        }
      out(i, j) = s;
    }
  return out;
}

}  // namespace

TEST(Tensor, ConstructorRejectsSizeMismatch) {
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  EXPECT_EQ(Tensor({2, 3}).size(), 6u);
}

TEST(Tensor, PadZero) {
  const Tensor t({3}, {1, 2, 3});
  EXPECT_EQ(pad(t, {{1, 1}}, PadMode::Zero).values(), (std::vector<double>{0, 1, 2, 3, 0}));
}

TEST(Tensor, PadReplicate) {
  const Tensor t({3}, {1, 2, 3});
  EXPECT_EQ(pad(t, {{1, 1}}, PadMode::Replicate).values(), (std::vector<double>{1, 1, 2, 3, 3}));
}

TEST(Tensor, PadZeroMarginsIsIdentity) {
  std::mt19937_64 rng(1);
  const Tensor t = random_tensor({3, 4, 5}, rng);
  EXPECT_EQ(pad(t, {{0, 0}, {0, 0}, {0, 0}}, PadMode::Replicate), t);
}

TEST(Tensor, PadRejectsWrongMarginCount) {
  EXPECT_THROW(pad(Tensor({2, 2}), {{1, 1}}, PadMode::Zero), ShapeError);
}

TEST(Tensor, PadThenCropIsIdentity) {
  std::mt19937_64 rng(2);
  const Tensor t = random_tensor({4, 6}, rng);
  const Margins m{{2, 1}, {0, 3}};
  for (PadMode mode : {PadMode::Zero, PadMode::Replicate}) {
    const Tensor p = pad(t, m, mode);
    EXPECT_EQ(p.shape(), (Shape{7, 9}));
    EXPECT_EQ(crop(p, m), t);
  }
}

TEST(Tensor, CorrelateOnesCenterIsNine) {
  const Tensor r = correlate2d(Tensor({3, 3}, 1.0), Tensor({3, 3}, 1.0));
  EXPECT_EQ(r(1, 1), 9.0);
  EXPECT_EQ(r(0, 0), 4.0);
}

TEST(Tensor, CorrelateIdentityKernel) {
  std::mt19937_64 rng(3);
  const Tensor t = random_tensor({5, 7}, rng);
  EXPECT_EQ(correlate2d(t, Tensor({1, 1}, 1.0)), t);
}

TEST(Tensor, CorrelateMatchesNestedLoopReference) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor t = random_tensor({5, 5}, rng);
    const Tensor k = random_tensor({3, 3}, rng);
    EXPECT_LT(max_abs_diff(correlate2d(t, k), naive_correlate(t, k)), 1e-14);
  }
  const Tensor t = random_tensor({6, 9}, rng);
  const Tensor k = random_tensor({5, 3}, rng);
  EXPECT_LT(max_abs_diff(correlate2d(t, k), naive_correlate(t, k)), 1e-14);
}

TEST(Tensor, CorrelateRejectsEvenKernel) {
  EXPECT_THROW(correlate2d(Tensor({4, 4}), Tensor({2, 3})), ShapeError);
}

TEST(Tensor, CorrelateIsLinear) {
  std::mt19937_64 rng(5);
  const Tensor t1 = random_tensor({6, 6}, rng), t2 = random_tensor({6, 6}, rng), k = random_tensor({3, 3}, rng);
  const double a = 0.7, b = -2.3;
  const Tensor lhs = correlate2d(a * t1 + b * t2, k, PadMode::Replicate);
  const Tensor rhs = a * correlate2d(t1, k, PadMode::Replicate) + b * correlate2d(t2, k, PadMode::Replicate);
  EXPECT_LT(max_abs_diff(lhs, rhs), 1e-12);
}

TEST(Tensor, NctRoundTrip) {
  std::mt19937_64 rng(6);
  const Tensor t = random_tensor({2, 3, 4}, rng, -1e6, 1e6);
  EXPECT_EQ(decode_nct(encode_nct(t)), t);
  const auto path = std::filesystem::temp_directory_path() / "nconv_test_roundtrip.nct";
  write_nct(path, t);
  EXPECT_EQ(read_nct(path), t);
  std::filesystem::remove(path);
}

TEST(Tensor, NctLayoutIsLittleEndian) {
  const auto bytes = encode_nct(Tensor({1}, {1.0}));
  ASSERT_EQ(bytes.size(), 4u + 4u + 8u + 8u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "NCT1");
  EXPECT_EQ(bytes[4], 1);   // rank
  EXPECT_EQ(bytes[8], 1);   // extent
  EXPECT_EQ(bytes[23], 0x3F);  // high byte of 1.0
  EXPECT_EQ(bytes[22], 0xF0);
}

TEST(Tensor, NctRejectsCorruption) {
  auto bytes = encode_nct(Tensor({2, 2}, 1.0));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_nct(bad_magic), FormatError);
  bytes.pop_back();
  EXPECT_THROW(decode_nct(bytes), FormatError);
}
