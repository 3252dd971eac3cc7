#include "doctest.h"

#include <cmath>
#include <numeric>

#include "dsrdm/channel.hpp"
#include "dsrdm/errors.hpp"
#include "dsrdm/rng.hpp"

using namespace dsrdm;

TEST_CASE("complex packing is real lanes then imaginary lanes") {
  const std::vector<double> z{1, 2, 3, 4, 5, 6};
  const auto x = pack_complex(z);
  REQUIRE(x.size() == 3);
  CHECK(x[0] == Complex(1, 4));
  CHECK(x[2] == Complex(3, 6));
  CHECK(unpack_complex(x) == z);
  CHECK_THROWS_AS(pack_complex(std::vector<double>{1, 2, 3}), InvalidArgument);
}

TEST_CASE("SNR to per-dimension noise variance") {
  CHECK(snr_to_sigma(0.0) == doctest::Approx(0.5));
  CHECK(snr_to_sigma(10.0) == doctest::Approx(0.05));
  CHECK(snr_to_sigma(std::numeric_limits<double>::infinity()) == 0.0);
}

TEST_CASE("AWGN channel has unit gain") {
  const ChannelState ch = draw_channel(64, kAwgnRicianK, 0.1, 5);
  CHECK(ch.is_awgn());
  for (const auto& h : ch.h) CHECK(h == Complex(1.0, 0.0));
  for (double n : effective_noise(ch)) CHECK(n == doctest::Approx(0.1));
}

TEST_CASE("Rician gain has unit mean power") {
  for (double k : {0.0, 3.0, kAwgnRicianK}) {
    CAPTURE(k);
    const ChannelState ch = draw_channel(200000, k, 0.0, 17);
    double p = 0.0;
    for (const auto& h : ch.h) p += std::norm(h);
    CHECK(p / ch.h.size() == doctest::Approx(1.0).epsilon(0.02));
  }
}

TEST_CASE("Rician line-of-sight mean") {
  const double k = 3.0;
  const ChannelState ch = draw_channel(200000, k, 0.0, 23);
  Complex mean = std::accumulate(ch.h.begin(), ch.h.end(), Complex(0.0)) / static_cast<double>(ch.h.size());
  CHECK(mean.real() == doctest::Approx(std::sqrt(k / (k + 1))).epsilon(0.01));
  CHECK(std::abs(mean.imag()) < 0.01);
}

TEST_CASE("zero-forcing inverts a noise-free channel") {
  Rng rng(3);
  TransmitFrame f;
  for (int i = 0; i < 1000; ++i) f.x.push_back(rng.complex_normal());
  const ChannelState ch = draw_channel(1000, 0.0, 0.0, 9);
  if (!is_invertible(ch)) return;
  const auto y = transmit(f, ch, 1);
  const auto xhat = zf_equalize(y, ch);
  double worst = 0.0;
  for (std::size_t i = 0; i < xhat.size(); ++i) worst = std::max(worst, std::abs(xhat[i] - f.x[i]));
  CHECK(worst < 1e-12);
}

TEST_CASE("equalized noise variance is sigma^2 / |h|^2") {
  const double sigma2 = 0.05;
  const std::size_t m = 8;
  ChannelState ch = draw_channel(m, 0.0, sigma2, 31);
  TransmitFrame f;
  f.x.assign(m, Complex(0.0));
  std::vector<double> acc(2 * m, 0.0);
  const int trials = 40000;
  for (int t = 0; t < trials; ++t) {
    const auto lanes = unpack_complex(zf_equalize(transmit(f, ch, derive_seed(2, t)), ch));
    for (std::size_t i = 0; i < lanes.size(); ++i) acc[i] += lanes[i] * lanes[i];
  }
  const auto expected = effective_noise(ch);
  for (std::size_t i = 0; i < 2 * m; ++i) {
    CHECK(expected[i] == doctest::Approx(sigma2 / std::norm(ch.h[i % m])));
    CHECK(acc[i] / trials == doctest::Approx(expected[i]).epsilon(0.03));
  }
}

TEST_CASE("singular gain is rejected") {
  ChannelState ch = draw_channel(4, 0.0, 0.0, 1);
  ch.h[2] = Complex(1e-8, 0.0);
  CHECK_FALSE(is_invertible(ch));
  const std::vector<Complex> y(4, Complex(1.0));
  CHECK_THROWS_AS(zf_equalize(y, ch), SingularChannel);
}

TEST_CASE("channel draws are deterministic per seed") {
  const auto a = draw_channel(16, 3.0, 0.1, 77);
  const auto b = draw_channel(16, 3.0, 0.1, 77);
  const auto c = draw_channel(16, 3.0, 0.1, 78);
  CHECK(a.h == b.h);
  CHECK(a.h != c.h);
}
