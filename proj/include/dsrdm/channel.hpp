#pragma once

// Block-fading Rician channel with AWGN and zero-forcing equalization.
//
// SNR convention: SNR = E|x_i|^2 / E|n_i|^2 per complex channel use, where
// n_i ~ CN(0, 2 sigma_n^2). The harness uses the unit-power constellation
// (E|x|^2 = 1) as the reference signal power, so sigma_n^2 = 1 / (2 snr).

#include <complex>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace dsrdm {

using Complex = std::complex<double>;

inline constexpr double kAwgnRicianK = std::numeric_limits<double>::infinity();

/// Gains below this magnitude are treated as singular.
inline constexpr double kSingularGain = 1e-6;

struct ChannelState {
  std::size_t m = 0;
  double k = kAwgnRicianK;
  double sigma_n2 = 0.0;  // per real dimension
  std::vector<Complex> h;

  bool is_awgn() const noexcept { return k == kAwgnRicianK; }
};

enum class FrameMode { single, multi };

struct TransmitFrame {
  std::vector<Complex> x;
  int step = 0;
  FrameMode mode = FrameMode::single;
  std::string carrier_id;
};

/// x_i = z_i + j z_{i+m}.
std::vector<Complex> pack_complex(std::span<const double> z);
/// [Re(x), Im(x)].
std::vector<double> unpack_complex(std::span<const Complex> x);

ChannelState draw_channel(std::size_t m, double k, double sigma_n2, std::uint64_t seed);

/// y = h ⊙ x + n, n_i ~ CN(0, 2 sigma_n^2).
std::vector<Complex> transmit(const TransmitFrame& frame, const ChannelState& ch,
                              std::uint64_t seed);

/// x̂_i = y_i / h_i. Throws SingularChannel when any |h_i| < kSingularGain.
std::vector<Complex> zf_equalize(std::span<const Complex> y, const ChannelState& ch);

/// Post-equalization noise variance per real element (sigma_n^2 / |h_i|^2),
/// laid out like unpack_complex: real lanes first, then imaginary lanes.
std::vector<double> effective_noise(const ChannelState& ch);

double snr_to_sigma(double snr_db, double signal_power = 1.0);

/// True when the realization has no gain below kSingularGain.
bool is_invertible(const ChannelState& ch);

}  // namespace dsrdm
