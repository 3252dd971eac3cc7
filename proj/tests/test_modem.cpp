#include "doctest.h"

#include <bit>
#include <cmath>
#include <set>

#include "dsrdm/errors.hpp"
#include "dsrdm/modem.hpp"
#include "dsrdm/rng.hpp"

using namespace dsrdm;

namespace {

constexpr int kOrders[] = {4, 16, 64, 256};

BitBlock pattern_bits(std::uint32_t p, int k) {
  BitBlock b(k);
  for (int j = 0; j < k; ++j) b[j] = static_cast<Bit>((p >> (k - 1 - j)) & 1u);
  return b;
}

}  // namespace

TEST_CASE("gray code is a bijection whose neighbours differ in one bit") {
  for (std::uint32_t i = 0; i < 1024; ++i) {
    CHECK(gray_decode(gray_encode(i)) == i);
    if (i > 0) CHECK(std::popcount(gray_encode(i) ^ gray_encode(i - 1)) == 1);
  }
}

TEST_CASE("constellation: bijection, unit power and Gray adjacency") {
  for (int m : kOrders) {
    CAPTURE(m);
    const Constellation& c = Constellation::get(m);
    const int k = c.bits_per_symbol();
    CHECK((1 << k) == m);

    std::set<std::pair<double, double>> seen;
    double power = 0.0;
    for (std::uint32_t p = 0; p < static_cast<std::uint32_t>(m); ++p) {
      seen.insert({c.point(p).real(), c.point(p).imag()});
      power += std::norm(c.point(p));
      const SymbolBlock s = modulate(pattern_bits(p, k), m);
      REQUIRE(s.symbols.size() == 1);
      CHECK(demodulate(s) == pattern_bits(p, k));
    }
    CHECK(seen.size() == static_cast<std::size_t>(m));
    CHECK(power / m == doctest::Approx(1.0).epsilon(1e-14));

    // Horizontally or vertically adjacent points differ in exactly one bit.
    const double d = 2.0 * c.scale();
    int adjacent_pairs = 0;
    for (std::uint32_t a = 0; a < static_cast<std::uint32_t>(m); ++a) {
      for (std::uint32_t b = a + 1; b < static_cast<std::uint32_t>(m); ++b) {
        if (std::abs(std::abs(c.point(a) - c.point(b)) - d) < 1e-12) {
          ++adjacent_pairs;
          CHECK(std::popcount(a ^ b) == 1);
        }
      }
    }
    const int p = c.levels_per_axis();
    CHECK(adjacent_pairs == 2 * p * (p - 1));
  }
}

TEST_CASE("16-QAM lattice matches the unscaled +-1, +-3 grid") {
  const Constellation& c = Constellation::get(16);
  CHECK(c.scale() == doctest::Approx(1.0 / std::sqrt(10.0)));
  // All-zero bits land on the (+, +) corner.
  CHECK(c.point(0).real() == doctest::Approx(3.0 / std::sqrt(10.0)));
  CHECK(c.point(0).imag() == doctest::Approx(3.0 / std::sqrt(10.0)));
}

TEST_CASE("unsupported orders are rejected") {
  CHECK_FALSE(is_supported_order(8));
  CHECK_FALSE(is_supported_order(32));
  CHECK_THROWS_AS(Constellation::get(8), InvalidArgument);
  CHECK_THROWS_AS(modulate(BitBlock(6, 0), 32), InvalidArgument);
}

TEST_CASE("demodulation ties go to the smallest bit pattern") {
  SymbolBlock origin{{Complex(0.0, 0.0)}, 16};
  const BitBlock bits = demodulate(origin);
  // Nearest points of the origin are the four inner points; the smallest
  // label among them wins.
  const Constellation& c = Constellation::get(16);
  std::uint32_t best = 0;
  double best_d = 1e9;
  for (std::uint32_t p = 0; p < 16; ++p) {
    const double dist = std::abs(c.point(p));
    if (dist < best_d - 1e-12) {
      best_d = dist;
      best = p;
    }
  }
  CHECK(bits == pattern_bits(best, 4));
}

TEST_CASE("padding appends zeros to a symbol boundary") {
  const BitBlock bits{1, 0, 1, 1, 1};
  const BitBlock padded = pad_bits(bits, 16);
  CHECK(padded.size() == 8);
  CHECK(padded == BitBlock{1, 0, 1, 1, 1, 0, 0, 0});
}

TEST_CASE("signal block round trip and padding mask") {
  Rng rng(11);
  BitBlock bits(16 * 40);
  for (auto& b : bits) b = static_cast<Bit>(rng.bits() & 1u);
  const SymbolBlock sym = modulate(bits, 16);
  const SignalBlock sig = symbols_to_signal(sym, {8, 8, 6}, 3);
  CHECK(sig.values.size() == 384);
  CHECK(sig.length() == 320);
  CHECK(sig.sigma == doctest::Approx(1.0 / std::sqrt(2.0)));
  CHECK(sig.mu == doctest::Approx(0.0));
  std::size_t filler = 0;
  for (auto f : sig.padding) filler += f;
  CHECK(filler == 384 - sig.length());
  const SymbolBlock back = signal_to_symbols(sig);
  REQUIRE(back.symbols.size() == sym.symbols.size());
  for (std::size_t i = 0; i < sym.symbols.size(); ++i)
    CHECK(std::abs(back.symbols[i] - sym.symbols[i]) < 1e-12);
  CHECK_THROWS_AS(symbols_to_signal(sym, {2, 2, 3}, 3), InvalidArgument);
}

TEST_CASE("lane moments by enumeration") {
  for (int m : kOrders) {
    const auto [mu, sd] = lane_moments(m);
    CHECK(mu == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(sd == doctest::Approx(1.0 / std::sqrt(2.0)));
  }
}

TEST_CASE("Q function against tabulated values") {
  CHECK(q_function(0.0) == doctest::Approx(0.5));
  CHECK(q_function(1.0) == doctest::Approx(0.15865525393145707).epsilon(1e-12));
  CHECK(q_function(3.0) == doctest::Approx(0.0013498980316300933).epsilon(1e-12));
}

TEST_CASE("QPSK bit error probability is Q(sqrt(snr))") {
  for (double snr : {0.5, 1.0, 10.0, 100.0}) {
    const double expected = q_function(std::sqrt(snr));
    CHECK(exact_qam_ber(4, snr) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(analytic_qam_ber(4, snr) == doctest::Approx(expected).epsilon(1e-12));
  }
  CHECK(exact_qam_ber(4, 10.0) == doctest::Approx(0.000782701129001274).epsilon(1e-10));
}

TEST_CASE("exact BER approaches the nearest-neighbour form at high SNR") {
  for (int m : {16, 64, 256}) {
    const double snr = std::pow(10.0, 3.0);
    CHECK(exact_qam_ber(m, snr) == doctest::Approx(analytic_qam_ber(m, snr)).epsilon(0.02));
  }
}
