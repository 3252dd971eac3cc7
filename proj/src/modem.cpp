#include "dsrdm/modem.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <limits>
#include <memory>
#include <algorithm>

#include "dsrdm/errors.hpp"
#include "dsrdm/rng.hpp"

namespace dsrdm {

bool is_supported_order(int order) {
  return order == 4 || order == 16 || order == 64 || order == 256;
}

int bits_per_symbol(int order) {
  if (!is_supported_order(order)) {
    throw InvalidArgument("unsupported modulation order " + std::to_string(order) +
                          " (expected 4, 16, 64 or 256)");
  }
  return std::countr_zero(static_cast<unsigned>(order));
}

std::uint32_t gray_encode(std::uint32_t i) { return i ^ (i >> 1); }

std::uint32_t gray_decode(std::uint32_t g) {
  std::uint32_t i = g;
  for (std::uint32_t shift = 1; shift < 32; shift <<= 1) i ^= i >> shift;
  return i;
}

Constellation::Constellation(int order)
    : order_(order),
      bits_(dsrdm::bits_per_symbol(order)),
      levels_(1 << (bits_ / 2)),
      scale_(1.0 / std::sqrt(2.0 * (order - 1) / 3.0)),
      points_(static_cast<std::size_t>(order)) {
  const int half = bits_ / 2;
  const std::uint32_t mask = (1u << half) - 1u;
  for (std::uint32_t pattern = 0; pattern < static_cast<std::uint32_t>(order); ++pattern) {
    const auto i_level = static_cast<int>(gray_decode(pattern >> half));
    const auto q_level = static_cast<int>(gray_decode(pattern & mask));
    points_[pattern] = Complex(level_amplitude(i_level) * scale_, level_amplitude(q_level) * scale_);
  }
}

const Constellation& Constellation::get(int order) {
  static const std::array<std::unique_ptr<Constellation>, 4> tables = [] {
    std::array<std::unique_ptr<Constellation>, 4> t;
    const std::array<int, 4> orders{4, 16, 64, 256};
    for (std::size_t i = 0; i < orders.size(); ++i)
      t[i].reset(new Constellation(orders[i]));
    return t;
  }();
  switch (order) {
    case 4: return *tables[0];
    case 16: return *tables[1];
    case 64: return *tables[2];
    case 256: return *tables[3];
    default: break;
  }
  throw InvalidArgument("unsupported modulation order " + std::to_string(order) +
                        " (expected 4, 16, 64 or 256)");
}

BitBlock pad_bits(std::span<const Bit> bits, int order) {
  const auto k = static_cast<std::size_t>(bits_per_symbol(order));
  BitBlock out(bits.begin(), bits.end());
  out.resize((bits.size() + k - 1) / k * k, 0);
  return out;
}

SymbolBlock modulate(std::span<const Bit> bits, int order) {
  const auto& table = Constellation::get(order);
  const auto k = static_cast<std::size_t>(table.bits_per_symbol());
  if (bits.size() % k != 0) {
    throw InvalidArgument("bit count " + std::to_string(bits.size()) +
                          " is not a multiple of log2(M) = " + std::to_string(k));
  }
  SymbolBlock out{{}, order};
  out.symbols.reserve(bits.size() / k);
  for (std::size_t s = 0; s < bits.size(); s += k) {
    std::uint32_t pattern = 0;
    for (std::size_t b = 0; b < k; ++b) pattern = (pattern << 1) | (bits[s + b] & 1u);
    out.symbols.push_back(table.point(pattern));
  }
  return out;
}

BitBlock demodulate(const SymbolBlock& symbols) {
  const auto& table = Constellation::get(symbols.order);
  const auto k = table.bits_per_symbol();
  const auto& points = table.points();
  BitBlock out;
  out.reserve(symbols.symbols.size() * static_cast<std::size_t>(k));
  for (const Complex& y : symbols.symbols) {
    std::uint32_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    // Patterns are scanned in increasing order, so a strict comparison keeps
    // the smallest pattern among equidistant points.
    for (std::uint32_t p = 0; p < points.size(); ++p) {
      const double d = std::norm(y - points[p]);
      if (d < best_d) {
        best_d = d;
        best = p;
      }
    }
    for (int b = k - 1; b >= 0; --b) out.push_back(static_cast<Bit>((best >> b) & 1u));
  }
  return out;
}

std::pair<double, double> lane_moments(int order) {
  const auto& points = Constellation::get(order).points();
  double mean = 0.0;
  for (const auto& p : points) mean += p.real();
  mean /= static_cast<double>(points.size());
  double var = 0.0;
  for (const auto& p : points) var += (p.real() - mean) * (p.real() - mean);
  var /= static_cast<double>(points.size());
  return {mean, std::sqrt(var)};
}

SignalBlock symbols_to_signal(const SymbolBlock& symbols, const Shape& carrier_shape,
                              std::uint64_t padding_seed) {
  const std::size_t capacity = element_count(carrier_shape);
  const std::size_t n = symbols.symbols.size();
  if (2 * n > capacity) {
    throw InvalidArgument(std::to_string(n) + " symbols need " + std::to_string(2 * n) +
                          " real values, carrier " + shape_string(carrier_shape) + " holds " +
                          std::to_string(capacity));
  }
  const auto [mu, sigma] = lane_moments(symbols.order);

  SignalBlock out;
  out.values = Tensor(carrier_shape);
  out.mu = mu;
  out.sigma = sigma;
  out.symbol_count = n;
  out.order = symbols.order;
  out.padding.assign(capacity, 0);

  auto v = out.values.values();
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = (symbols.symbols[i].real() - mu) / sigma;
    v[n + i] = (symbols.symbols[i].imag() - mu) / sigma;
  }
  Rng rng(padding_seed);
  for (std::size_t i = 2 * n; i < capacity; ++i) {
    v[i] = rng.normal();
    out.padding[i] = 1;
  }
  return out;
}

SymbolBlock signal_to_symbols(const SignalBlock& signal) {
  const std::size_t n = signal.symbol_count;
  const std::size_t total = signal.values.size();
  if (!is_supported_order(signal.order))
    throw InvalidArgument("signal block carries no valid modulation order");
  if (signal.padding.size() != total)
    throw InvalidArgument("signal block padding mask does not match its values");
  if (2 * n > total)
    throw InvalidArgument("signal block payload length exceeds its values");
  if (!(signal.sigma > 0.0) || !std::isfinite(signal.mu))
    throw InvalidArgument("signal block standardization parameters are invalid");
  for (std::size_t i = 0; i < total; ++i) {
    if ((signal.padding[i] != 0) != (i >= 2 * n))
      throw InvalidArgument("signal block padding mask is inconsistent with its payload length");
  }

  SymbolBlock out{{}, signal.order};
  out.symbols.reserve(n);
  const auto v = signal.values.values();
  for (std::size_t i = 0; i < n; ++i) {
    out.symbols.emplace_back(signal.sigma * v[i] + signal.mu, signal.sigma * v[n + i] + signal.mu);
  }
  return out;
}

double q_function(double x) { return 0.5 * std::erfc(x / std::sqrt(2.0)); }

double analytic_qam_ber(int order, double snr_linear) {
  const int k = bits_per_symbol(order);
  if (!(snr_linear > 0.0)) throw InvalidArgument("SNR must be positive");
  const double m = static_cast<double>(order);
  const double pb = (4.0 / k) * (1.0 - 1.0 / std::sqrt(m)) *
                    q_function(std::sqrt(3.0 * snr_linear / (m - 1.0)));
  return std::clamp(pb, 0.0, 0.5);
}

double exact_qam_ber(int order, double snr_linear) {
  const auto& table = Constellation::get(order);
  if (!(snr_linear > 0.0)) throw InvalidArgument("SNR must be positive");
  if (std::isinf(snr_linear)) return 0.0;
  const int levels = table.levels_per_axis();
  const int lane_bits = table.bits_per_symbol() / 2;
  const double c = table.scale();
  // Es = 1 and N0 = 1/snr split evenly over the two lanes.
  const double sigma = std::sqrt(1.0 / (2.0 * snr_linear));
  const double inf = std::numeric_limits<double>::infinity();

  double errors = 0.0;
  for (int sent = 0; sent < levels; ++sent) {
    const double a = table.level_amplitude(sent) * c;
    for (int decided = 0; decided < levels; ++decided) {
      if (decided == sent) continue;
      const double hi = decided == 0 ? inf : (levels - 2 * decided) * c;
      const double lo = decided == levels - 1 ? -inf : (levels - 2 * decided - 2) * c;
      const double p = q_function((lo - a) / sigma) - q_function((hi - a) / sigma);
      const auto diff = gray_encode(static_cast<std::uint32_t>(sent)) ^
                        gray_encode(static_cast<std::uint32_t>(decided));
      errors += p * std::popcount(diff);
    }
  }
  return errors / (levels * lane_bits);
}

}  // namespace dsrdm
