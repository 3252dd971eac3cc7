#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dsrdm/tensor.hpp"

namespace dsrdm {

/// Variance-preserving diffusion schedule. Steps are 1-based; alpha_bar(0)
/// is defined as 1 (the clean carrier).
class NoiseSchedule {
 public:
  NoiseSchedule() = default;

  static NoiseSchedule linear(int steps, double beta_start, double beta_end);

  int steps() const noexcept { return static_cast<int>(alpha_.size()); }
  double alpha(int t) const;
  double alpha_bar(int t) const;
  double beta_start() const noexcept { return beta_start_; }
  double beta_end() const noexcept { return beta_end_; }

  /// FNV-1a over (u32 T, f64 beta_start, f64 beta_end), little-endian.
  std::uint64_t fingerprint() const noexcept;

 private:
  std::vector<double> alpha_;
  std::vector<double> alpha_bar_;
  double beta_start_ = 0.0;
  double beta_end_ = 0.0;
};

inline NoiseSchedule linear_schedule(int steps, double beta_start, double beta_end) {
  return NoiseSchedule::linear(steps, beta_start, beta_end);
}

/// sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps.
Tensor forward_sample(const Tensor& x0, const Tensor& eps, int t, const NoiseSchedule& sched);

enum class MatchPolicy {
  strict,  // any infeasible element raises MatchInfeasible
  clamp,   // infeasible elements keep a floor alpha_bar and are flagged
};

/// How the carrier is rescaled so the received mean equals
/// sqrt(alpha_bar_p) * scaled carrier.
enum class CarrierScaleRule {
  consistent,  // sqrt(alpha_bar_i / alpha_bar_p): satisfies the mean match
  inverted,    // sqrt(alpha_bar_p / alpha_bar_i): kept as a negative control
  identity,    // 1: no rescale
};

struct MatchOptions {
  MatchPolicy policy = MatchPolicy::strict;
  CarrierScaleRule scale_rule = CarrierScaleRule::consistent;
  /// Clamped elements keep 1 - alpha_bar_i = clamp_floor * (1 - alpha_bar_p).
  double clamp_floor = 1e-3;
};

/// Per-element embedding schedule at one step, matched so that
/// (1 - alpha_bar_i) + noise_i = 1 - alpha_bar_p, i.e.
/// alpha_bar_i = alpha_bar_p + noise_i. Feasible while noise_i < 1 - alpha_bar_p.
struct MatchedSchedule {
  int step = 0;
  double alpha_bar_p = 1.0;
  std::vector<double> noise;          // post-equalization channel variance per element
  std::vector<double> alpha_bar;      // alpha_bar_{i,t}
  std::vector<double> carrier_scale;  // multiplies x0 to give the apparent carrier
  std::vector<double> w;              // 1 - alpha_bar_i + noise_i
  std::vector<double> w_prime;        // w_i / sqrt(1 - alpha_bar_i)
  std::vector<std::uint8_t> clamped;
  std::size_t clamped_count = 0;

  std::size_t size() const noexcept { return alpha_bar.size(); }
  double target_variance() const noexcept { return 1.0 - alpha_bar_p; }
  /// carrier_scale ⊙ x0.
  Tensor scaled_carrier(const Tensor& x0) const;
};

MatchedSchedule match_to_channel(const NoiseSchedule& sched, int step,
                                 std::span<const double> noise, const MatchOptions& opts = {});

/// Largest step whose noise budget 1 - alpha_bar_t exceeds
/// reference_noise + margin. The budget grows with t, so this is T whenever
/// any step qualifies. The reference is max(noise) under the strict policy
/// and the `quantile` of noise under clamp (which falls back to T). Throws
/// MatchInfeasible when strict and no step qualifies.
int designated_step(const NoiseSchedule& sched, std::span<const double> noise,
                    MatchPolicy policy = MatchPolicy::strict, double margin = 0.01,
                    double quantile = 0.95);

/// Matched schedules for steps first_step..last_step sharing one noise
/// vector. Per element, alpha_bar_{i,t} is strictly decreasing in t, so the
/// single-step ratios alpha_{i,t} stay inside (0, 1).
class MatchedTrajectory {
 public:
  MatchedTrajectory() = default;
  MatchedTrajectory(const NoiseSchedule& sched, int first_step, int last_step,
                    std::span<const double> noise, const MatchOptions& opts = {});

  int first_step() const noexcept { return first_; }
  int last_step() const noexcept { return first_ + static_cast<int>(steps_.size()) - 1; }
  const MatchedSchedule& at(int t) const;
  /// alpha_bar_{i,t}; t = 0 gives 1.
  double alpha_bar(int t, std::size_t i) const;
  /// alpha_bar_{i,t} / alpha_bar_{i,t-1}, for first_step < t <= last_step
  /// (or t = 1).
  double alpha(int t, std::size_t i) const;
  /// Elements clamped at any step of the trajectory.
  std::size_t clamped_count() const noexcept;

 private:
  int first_ = 1;
  std::size_t clamped_ = 0;
  std::vector<MatchedSchedule> steps_;
};

struct MatchingReport {
  std::size_t trials = 0;
  double target_variance = 0.0;
  double mean_variance_deviation = 0.0;  // mean_i |var_i / target - 1|
  double max_variance_deviation = 0.0;
  double pooled_variance_deviation = 0.0;
  double aligned_mean_residual = 0.0;    // |sum_i m_i sign(x0_i)| / n
  double rms_mean_residual = 0.0;
  double rms_mean_floor = 0.0;           // expected RMS under the null
  double ks_statistic = 0.0;
  double ks_critical = 0.0;              // two-sample, alpha = 0.01

  bool variance_ok(double tol = 0.02) const { return mean_variance_deviation < tol; }
  bool mean_ok(double tol = 0.01) const { return aligned_mean_residual < tol; }
  bool ks_ok() const { return ks_statistic < ks_critical; }
};

/// Monte-Carlo check that embedded-plus-channel samples follow the
/// pre-trained forward law around the scaled carrier.
MatchingReport verify_matching(const MatchedSchedule& ms, const Tensor& x0, std::size_t trials,
                               std::uint64_t seed);

/// Two-sample Kolmogorov–Smirnov statistic.
double ks_two_sample(std::vector<double> a, std::vector<double> b);

}  // namespace dsrdm
