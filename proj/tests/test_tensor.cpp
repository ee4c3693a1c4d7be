#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "oracles.hpp"
#include "segxai/common.hpp"
#include "segxai/tensor.hpp"
#include "segxai/tensor_io.hpp"

using namespace segxai;

namespace {
Tensor random_tensor(Rng& rng, std::vector<std::size_t> shape, double lo = -1,
                     double hi = 1) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}
}  // namespace

TEST_CASE("conv2d sums a box of ones") {
  const Tensor in = Tensor::full({1, 3, 3}, 1.0);
  const Tensor ker = Tensor::full({1, 1, 3, 3}, 1.0);
  const Tensor bias({1});
  const Tensor out = conv2d(in, ker, bias, 1, 0);
  REQUIRE(out.shape() == std::vector<std::size_t>{1, 1, 1});
  REQUIRE(out[0] == 9.0);
}

TEST_CASE("conv2d with a centered Dirac kernel reproduces the channel sum") {
  Rng rng(11);
  const Tensor in = random_tensor(rng, {2, 5, 5});
  Tensor ker({1, 2, 3, 3});
  ker.at(0, 0, std::size_t(1), std::size_t(1)) = 1.0;
  ker.at(0, 1, std::size_t(1), std::size_t(1)) = 1.0;
  const Tensor out = conv2d(in, ker, Tensor({1}), 1, 1);
  REQUIRE(out.shape() == std::vector<std::size_t>{1, 5, 5});
  for (std::size_t y = 0; y < 5; ++y)
    for (std::size_t x = 0; x < 5; ++x)
      REQUIRE(out.at(0, y, x) == Catch::Approx(in.at(0, y, x) + in.at(1, y, x))
                                     .margin(1e-15));
}

TEST_CASE("conv2d matches the naive loop oracle exactly") {
  Rng rng(42);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t C = rng.uniform_int(1, 3), K = rng.uniform_int(1, 3);
    const std::size_t kh = rng.uniform_int(1, 3), kw = rng.uniform_int(1, 3);
    const std::size_t H = rng.uniform_int(kh, kh + 4);
    const std::size_t W = rng.uniform_int(kw, kw + 4);
    const int stride = static_cast<int>(rng.uniform_int(1, 2));
    const int pad = static_cast<int>(rng.uniform_int(0, 1));
    const Tensor in = random_tensor(rng, {C, H, W});
    const Tensor ker = random_tensor(rng, {K, C, kh, kw});
    const Tensor bias = random_tensor(rng, {K});
    const Tensor got = conv2d(in, ker, bias, stride, pad);
    const Tensor want = oracle::conv2d_naive(in, ker, bias, stride, pad);
    REQUIRE(got.shape() == want.shape());
    for (std::size_t i = 0; i < got.size(); ++i) REQUIRE(got[i] == want[i]);
  }
}

TEST_CASE("conv2d names the offending dimension") {
  const Tensor in({3, 4, 4});
  const Tensor ker({2, 4, 3, 3});  // wrong input channel count
  REQUIRE_THROWS_WITH(conv2d(in, ker, Tensor({2}), 1, 1),
                      Catch::Matchers::ContainsSubstring("input channels"));
  const Tensor big_ker({1, 3, 9, 3});
  REQUIRE_THROWS_WITH(conv2d(in, big_ker, Tensor({1}), 1, 0),
                      Catch::Matchers::ContainsSubstring("height"));
}

TEST_CASE("softmax over equal logits is uniform") {
  const Tensor logits = Tensor::full({4, 2, 2}, 0.7);
  const Tensor p = softmax_channels(logits);
  for (std::size_t i = 0; i < p.size(); ++i)
    REQUIRE(p[i] == Catch::Approx(0.25).margin(1e-15));
}

TEST_CASE("softmax survives huge logit gaps") {
  Tensor logits({2, 1, 1});
  logits.at(0, 0, std::size_t(0)) = 1000.0;
  logits.at(1, 0, std::size_t(0)) = 0.0;
  const Tensor p = softmax_channels(logits);
  REQUIRE(p[0] == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(p[1] >= 0.0);
  REQUIRE(p[1] <= 1e-12);
}

TEST_CASE("softmax matches the direct formula") {
  Tensor logits({3, 1, 1}, {1.0, 2.0, 3.0});
  const Tensor p = softmax_channels(logits);
  REQUIRE(p[0] == Catch::Approx(0.09003).margin(1e-5));
  REQUIRE(p[1] == Catch::Approx(0.24473).margin(1e-5));
  REQUIRE(p[2] == Catch::Approx(0.66524).margin(1e-5));
}

TEST_CASE("softmax properties: sums to one, shift invariant") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t L = rng.uniform_int(2, 5);
    const Tensor logits = random_tensor(rng, {L, 3, 3}, -4, 4);
    const Tensor p = softmax_channels(logits);
    Tensor shifted = logits;
    const double c = rng.uniform(-10, 10);
    for (std::size_t y = 0; y < 3; ++y)
      for (std::size_t x = 0; x < 3; ++x)
        for (std::size_t l = 0; l < L; ++l) shifted.at(l, y, x) += c;
    const Tensor q = softmax_channels(shifted);
    for (std::size_t y = 0; y < 3; ++y)
      for (std::size_t x = 0; x < 3; ++x) {
        double total = 0.0;
        for (std::size_t l = 0; l < L; ++l) total += p.at(l, y, x);
        REQUIRE(std::abs(total - 1.0) < 1e-12);
        for (std::size_t l = 0; l < L; ++l)
          REQUIRE(p.at(l, y, x) == Catch::Approx(q.at(l, y, x)).margin(1e-12));
      }
  }
}

TEST_CASE("bilinear upsample of a constant is constant") {
  const Tensor m = Tensor::full({3, 2}, 0.37);
  const Tensor up = bilinear_upsample(m, 7, 9);
  for (std::size_t i = 0; i < up.size(); ++i) REQUIRE(up[i] == 0.37);
}

TEST_CASE("bilinear upsample of a 1x1 map broadcasts") {
  Tensor m({1, 1}, {2.5});
  const Tensor up = bilinear_upsample(m, 4, 6);
  for (std::size_t i = 0; i < up.size(); ++i) REQUIRE(up[i] == 2.5);
}

TEST_CASE("bilinear upsample is corner aligned") {
  Tensor m({2, 2}, {0, 1, 0, 1});
  const Tensor up = bilinear_upsample(m, 2, 4);
  const double want[4] = {0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0};
  for (std::size_t y = 0; y < 2; ++y)
    for (std::size_t x = 0; x < 4; ++x)
      REQUIRE(up.at(y, x) == Catch::Approx(want[x]).margin(1e-12));
}

TEST_CASE("bilinear upsample stays within the source range") {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t h = rng.uniform_int(1, 5), w = rng.uniform_int(1, 5);
    const Tensor m = random_tensor(rng, {h, w});
    const Tensor up =
        bilinear_upsample(m, rng.uniform_int(h, 12), rng.uniform_int(w, 12));
    REQUIRE(min_value(up) >= min_value(m) - 1e-12);
    REQUIRE(max_value(up) <= max_value(m) + 1e-12);
  }
}

TEST_CASE("bilinear upsample rejects shrinking") {
  REQUIRE_THROWS_AS(bilinear_upsample(Tensor({4, 4}), 3, 4), Error);
}

TEST_CASE("elementwise ops") {
  Tensor a({3}, {-3, 0, 5});
  const Tensor r = relu(a);
  REQUIRE(r[0] == 0.0);
  REQUIRE(r[1] == 0.0);
  REQUIRE(r[2] == 5.0);

  const Tensor z = mul(a, Tensor({3}));
  for (std::size_t i = 0; i < 3; ++i) REQUIRE(z[i] == 0.0);

  Tensor s({2}, {1, 2});
  const Tensor sc = scale(s, 0.5);
  REQUIRE(sc[0] == 0.5);
  REQUIRE(sc[1] == 1.0);

  REQUIRE_THROWS_WITH(add(Tensor({2, 3}), Tensor({2, 4})),
                      Catch::Matchers::ContainsSubstring("dim 1"));
}

TEST_CASE("non-finite values are rejected, never silent") {
  REQUIRE_THROWS_AS(Tensor({2}, {1.0, std::nan("")}), Error);
  Tensor big = Tensor::full({2}, 1e308);
  REQUIRE_THROWS_AS(add(big, big), Error);
}

TEST_CASE("tensor blobs round-trip bit-exactly") {
  Rng rng(77);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t r = rng.uniform_int(1, 4);
    std::vector<std::size_t> shape;
    for (std::size_t d = 0; d < r; ++d) shape.push_back(rng.uniform_int(1, 5));
    const Tensor t = random_tensor(rng, shape, -1e6, 1e6);
    std::stringstream ss;
    write_tensor(ss, t);
    const Tensor back = read_tensor(ss);
    REQUIRE(back.shape() == t.shape());
    for (std::size_t i = 0; i < t.size(); ++i) {
      REQUIRE(std::bit_cast<std::uint64_t>(back[i]) ==
              std::bit_cast<std::uint64_t>(t[i]));
    }
    // the byte stream itself is reproducible
    std::stringstream ss2;
    write_tensor(ss2, back);
    REQUIRE(ss2.str() == ss.str());
  }
}

TEST_CASE("tensor reader rejects bad magic and truncation") {
  std::stringstream ss;
  ss << "NOTMAGIC";
  REQUIRE_THROWS_WITH(read_tensor(ss),
                      Catch::Matchers::ContainsSubstring("magic"));
  std::stringstream ss2;
  write_tensor(ss2, Tensor::full({4}, 1.0));
  std::string bytes = ss2.str();
  bytes.resize(bytes.size() - 7);
  std::stringstream ss3(bytes);
  REQUIRE_THROWS_WITH(read_tensor(ss3),
                      Catch::Matchers::ContainsSubstring("truncated"));
}
