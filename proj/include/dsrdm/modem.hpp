#pragma once

// Square M-QAM with independent reflected-Gray labelling on I and Q.
//
// A symbol's log2(M) bits are read MSB first. The leading half selects the
// in-phase level, the trailing half the quadrature level. Within an axis of
// P = sqrt(M) levels, the bit group g (as an unsigned integer) is the Gray
// code of level index i = gray_decode(g), and the level amplitude is
// (P - 1 - 2i). All-zero bits therefore land on the (+, +) corner point.
// The lattice is scaled by 1/sqrt(2(M-1)/3) so the alphabet has unit
// average power.
//
// Signal blocks pack a symbol sequence into a carrier-shaped real tensor:
// all real parts, then all imaginary parts, each divided by the per-lane
// standard deviation of the alphabet (1/sqrt(2)), then standard-normal
// padding up to the carrier element count.

#include <complex>
#include <cstdint>
#include <span>
#include <vector>

#include "dsrdm/tensor.hpp"

namespace dsrdm {

using Bit = std::uint8_t;
using BitBlock = std::vector<Bit>;
using Complex = std::complex<double>;

struct SymbolBlock {
  std::vector<Complex> symbols;
  int order = 0;
};

struct SignalBlock {
  Tensor values;
  double mu = 0.0;     // alphabet mean per real lane
  double sigma = 1.0;  // alphabet std-dev per real lane
  std::size_t symbol_count = 0;
  int order = 0;
  std::vector<Bit> padding;  // 1 where the value is filler, not payload

  /// Number of payload-bearing real values (2 per symbol).
  std::size_t length() const noexcept { return 2 * symbol_count; }
};

bool is_supported_order(int order);
int bits_per_symbol(int order);

class Constellation {
 public:
  /// Shared immutable table for a supported order.
  static const Constellation& get(int order);

  int order() const noexcept { return order_; }
  int bits_per_symbol() const noexcept { return bits_; }
  int levels_per_axis() const noexcept { return levels_; }
  double scale() const noexcept { return scale_; }
  /// Point for bit pattern `pattern` (MSB-first integer).
  Complex point(std::uint32_t pattern) const { return points_[pattern]; }
  const std::vector<Complex>& points() const noexcept { return points_; }
  /// Axis amplitude (before scaling) for a level index.
  int level_amplitude(int level) const noexcept { return levels_ - 1 - 2 * level; }
  /// Half of the minimum distance between points.
  double half_min_distance() const noexcept { return scale_; }

 private:
  explicit Constellation(int order);

  int order_;
  int bits_;
  int levels_;
  double scale_;
  std::vector<Complex> points_;
};

std::uint32_t gray_encode(std::uint32_t i);
std::uint32_t gray_decode(std::uint32_t g);

/// Appends zero bits until the length is a multiple of log2(M).
BitBlock pad_bits(std::span<const Bit> bits, int order);

SymbolBlock modulate(std::span<const Bit> bits, int order);

/// Minimum-distance hard decision over all M points; ties go to the
/// lexicographically smallest bit pattern.
BitBlock demodulate(const SymbolBlock& symbols);

/// Analytic per-lane alphabet moments (mean, std-dev) by enumeration.
std::pair<double, double> lane_moments(int order);

SignalBlock symbols_to_signal(const SymbolBlock& symbols, const Shape& carrier_shape,
                              std::uint64_t padding_seed);

SymbolBlock signal_to_symbols(const SignalBlock& signal);

/// Nearest-neighbour approximation of Gray square-QAM bit error probability,
/// P_b = (4/log2 M)(1 - 1/sqrt M) Q(sqrt(3 snr/(M-1))), clipped to 0.5.
/// `snr_linear` is Es/N0 per complex symbol.
double analytic_qam_ber(int order, double snr_linear);

/// Exact Gray square-QAM bit error probability over complex AWGN, by
/// enumerating every (sent level, decided level) pair on one axis.
double exact_qam_ber(int order, double snr_linear);

/// Gaussian tail probability Q(x).
double q_function(double x);

}  // namespace dsrdm
