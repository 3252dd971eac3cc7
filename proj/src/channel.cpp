#include "dsrdm/channel.hpp"

#include <cmath>

#include "dsrdm/errors.hpp"
#include "dsrdm/rng.hpp"

namespace dsrdm {

std::vector<Complex> pack_complex(std::span<const double> z) {
  if (z.size() % 2 != 0)
    throw InvalidArgument("cannot pack an odd-length real vector (" + std::to_string(z.size()) + ")");
  const std::size_t m = z.size() / 2;
  std::vector<Complex> x(m);
  for (std::size_t i = 0; i < m; ++i) x[i] = {z[i], z[i + m]};
  return x;
}

std::vector<double> unpack_complex(std::span<const Complex> x) {
  const std::size_t m = x.size();
  std::vector<double> z(2 * m);
  for (std::size_t i = 0; i < m; ++i) {
    z[i] = x[i].real();
    z[i + m] = x[i].imag();
  }
  return z;
}

ChannelState draw_channel(std::size_t m, double k, double sigma_n2, std::uint64_t seed) {
  if (!(k >= 0.0)) throw InvalidArgument("Rician factor must be non-negative");
  if (!(sigma_n2 >= 0.0) || !std::isfinite(sigma_n2))
    throw InvalidArgument("noise variance must be finite and non-negative");

  ChannelState ch{m, k, sigma_n2, std::vector<Complex>(m, Complex(1.0, 0.0))};
  if (ch.is_awgn()) return ch;

  const double los = std::sqrt(k / (k + 1.0));
  const double nlos = std::sqrt(1.0 / (k + 1.0));
  Rng rng(seed);
  for (auto& h : ch.h) h = los + nlos * rng.complex_normal(1.0);
  return ch;
}

std::vector<Complex> transmit(const TransmitFrame& frame, const ChannelState& ch,
                              std::uint64_t seed) {
  if (frame.x.size() != ch.m) {
    throw InvalidArgument("frame has " + std::to_string(frame.x.size()) +
                          " channel uses, channel state has " + std::to_string(ch.m));
  }
  std::vector<Complex> y(ch.m);
  if (ch.sigma_n2 == 0.0) {
    for (std::size_t i = 0; i < ch.m; ++i) y[i] = ch.h[i] * frame.x[i];
    return y;
  }
  Rng rng(seed);
  const double complex_variance = 2.0 * ch.sigma_n2;
  for (std::size_t i = 0; i < ch.m; ++i) y[i] = ch.h[i] * frame.x[i] + rng.complex_normal(complex_variance);
  return y;
}

bool is_invertible(const ChannelState& ch) {
  for (const auto& h : ch.h)
    if (!(std::abs(h) >= kSingularGain)) return false;
  return true;
}

namespace {
void require_invertible(const ChannelState& ch) {
  for (std::size_t i = 0; i < ch.h.size(); ++i) {
    if (!(std::abs(ch.h[i]) >= kSingularGain)) {
      throw SingularChannel("fading gain " + std::to_string(i) + " has magnitude " +
                            std::to_string(std::abs(ch.h[i])));
    }
  }
}
}  // namespace

std::vector<Complex> zf_equalize(std::span<const Complex> y, const ChannelState& ch) {
  if (y.size() != ch.m) throw InvalidArgument("received vector length does not match channel");
  require_invertible(ch);
  std::vector<Complex> x(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) x[i] = y[i] / ch.h[i];
  return x;
}

std::vector<double> effective_noise(const ChannelState& ch) {
  require_invertible(ch);
  std::vector<double> out(2 * ch.m);
  for (std::size_t i = 0; i < ch.m; ++i) {
    const double v = ch.sigma_n2 / std::norm(ch.h[i]);
    out[i] = v;
    out[i + ch.m] = v;
  }
  return out;
}

double snr_to_sigma(double snr_db, double signal_power) {
  if (!(signal_power > 0.0)) throw InvalidArgument("signal power must be positive");
  if (std::isinf(snr_db) && snr_db > 0) return 0.0;
  return signal_power / (2.0 * std::pow(10.0, snr_db / 10.0));
}

}  // namespace dsrdm
