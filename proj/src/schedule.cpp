#include "dsrdm/schedule.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <string>

#include "dsrdm/errors.hpp"
#include "dsrdm/rng.hpp"

namespace dsrdm {

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw InvalidArgument("schedule needs at least one step");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
    throw InvalidArgument("schedule requires 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.beta_start_ = beta_start;
  s.beta_end_ = beta_end;
  s.alpha_.resize(static_cast<std::size_t>(steps));
  s.alpha_bar_.resize(static_cast<std::size_t>(steps));
  double prod = 1.0;
  for (int t = 0; t < steps; ++t) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(t) / (steps - 1);
    const double beta = beta_start + (beta_end - beta_start) * frac;
    s.alpha_[t] = 1.0 - beta;
    prod *= s.alpha_[t];
    s.alpha_bar_[t] = prod;
  }
  if (!(s.alpha_bar_.back() > 0.0)) throw InvalidArgument("schedule underflows to alpha_bar = 0");
  return s;
}

double NoiseSchedule::alpha(int t) const {
  if (t < 1 || t > steps()) throw InvalidArgument("step " + std::to_string(t) + " out of range");
  return alpha_[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t == 0) return 1.0;
  if (t < 1 || t > steps()) throw InvalidArgument("step " + std::to_string(t) + " out of range");
  return alpha_bar_[static_cast<std::size_t>(t - 1)];
}

std::uint64_t NoiseSchedule::fingerprint() const noexcept {
  static_assert(std::endian::native == std::endian::little);
  char buf[20];
  const auto t = static_cast<std::uint32_t>(steps());
  std::memcpy(buf, &t, 4);
  std::memcpy(buf + 4, &beta_start_, 8);
  std::memcpy(buf + 12, &beta_end_, 8);
  return fnv1a64(std::string_view(buf, sizeof buf));
}

Tensor forward_sample(const Tensor& x0, const Tensor& eps, int t, const NoiseSchedule& sched) {
  require_same_shape(x0, eps, "forward_sample");
  const double ab = sched.alpha_bar(t);
  if (t < 1) throw InvalidArgument("forward_sample needs t >= 1");
  const double a = std::sqrt(ab);
  const double b = std::sqrt(1.0 - ab);
  Tensor out(x0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

Tensor MatchedSchedule::scaled_carrier(const Tensor& x0) const {
  if (x0.size() != carrier_scale.size())
    throw InvalidArgument("carrier size does not match matched schedule");
  Tensor out(x0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = carrier_scale[i] * x0[i];
  return out;
}

MatchedSchedule match_to_channel(const NoiseSchedule& sched, int step,
                                 std::span<const double> noise, const MatchOptions& opts) {
  if (step < 1 || step > sched.steps())
    throw InvalidArgument("signal step " + std::to_string(step) + " out of range");
  MatchedSchedule ms;
  ms.step = step;
  ms.alpha_bar_p = sched.alpha_bar(step);
  const std::size_t n = noise.size();
  ms.noise.assign(noise.begin(), noise.end());
  ms.alpha_bar.resize(n);
  ms.carrier_scale.resize(n);
  ms.w.resize(n);
  ms.w_prime.resize(n);
  ms.clamped.assign(n, 0);

  const double budget = 1.0 - ms.alpha_bar_p;
  const double floor_value = opts.clamp_floor * budget;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(noise[i] >= 0.0)) throw InvalidArgument("noise variances must be non-negative");
    double ab = ms.alpha_bar_p + noise[i];
    const double room = budget - noise[i];
    if (!(room > 0.0) || (opts.policy == MatchPolicy::clamp && room < floor_value)) {
      if (opts.policy == MatchPolicy::strict) {
        throw MatchInfeasible("channel noise " + std::to_string(noise[i]) + " at element " +
                              std::to_string(i) + " exceeds the noise budget " +
                              std::to_string(budget) + " at step " + std::to_string(step));
      }
      ab = 1.0 - floor_value;
      ms.clamped[i] = 1;
      ++ms.clamped_count;
    }
    ms.alpha_bar[i] = ab;
    switch (opts.scale_rule) {
      case CarrierScaleRule::consistent: ms.carrier_scale[i] = std::sqrt(ab / ms.alpha_bar_p); break;
      case CarrierScaleRule::inverted: ms.carrier_scale[i] = std::sqrt(ms.alpha_bar_p / ab); break;
      case CarrierScaleRule::identity: ms.carrier_scale[i] = 1.0; break;
    }
    ms.w[i] = 1.0 - ab + noise[i];
    ms.w_prime[i] = ms.w[i] / std::sqrt(1.0 - ab);
  }
  return ms;
}

int designated_step(const NoiseSchedule& sched, std::span<const double> noise, MatchPolicy policy,
                    double margin, double quantile) {
  double reference = 0.0;
  if (!noise.empty()) {
    if (policy == MatchPolicy::strict) {
      reference = *std::max_element(noise.begin(), noise.end());
    } else {
      std::vector<double> sorted(noise.begin(), noise.end());
      const auto idx = static_cast<std::size_t>(
          std::clamp(quantile, 0.0, 1.0) * static_cast<double>(sorted.size() - 1));
      std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(idx), sorted.end());
      reference = sorted[idx];
    }
  }
  for (int t = sched.steps(); t >= 1; --t) {
    if (1.0 - sched.alpha_bar(t) > reference + margin) return t;
  }
  if (policy == MatchPolicy::clamp) return sched.steps();
  throw MatchInfeasible("no diffusion step can absorb channel noise " + std::to_string(reference));
}

MatchedTrajectory::MatchedTrajectory(const NoiseSchedule& sched, int first_step, int last_step,
                                     std::span<const double> noise, const MatchOptions& opts)
    : first_(first_step) {
  if (first_step < 1 || last_step < first_step || last_step > sched.steps())
    throw InvalidArgument("trajectory steps out of range");
  steps_.reserve(static_cast<std::size_t>(last_step - first_step + 1));
  // Both branches of the clamp are decreasing in t, so alpha_bar_{i,t} is too.
  for (int t = first_step; t <= last_step; ++t) steps_.push_back(match_to_channel(sched, t, noise, opts));
  std::vector<std::uint8_t> any(noise.size(), 0);
  for (const auto& ms : steps_)
    for (std::size_t i = 0; i < any.size(); ++i) any[i] |= ms.clamped[i];
  for (auto c : any) clamped_ += c;
}

const MatchedSchedule& MatchedTrajectory::at(int t) const {
  if (t < first_ || t > last_step()) throw InvalidArgument("trajectory step out of range");
  return steps_[static_cast<std::size_t>(t - first_)];
}

double MatchedTrajectory::alpha_bar(int t, std::size_t i) const {
  return t == 0 ? 1.0 : at(t).alpha_bar[i];
}

double MatchedTrajectory::alpha(int t, std::size_t i) const {
  return alpha_bar(t, i) / alpha_bar(t - 1, i);
}

std::size_t MatchedTrajectory::clamped_count() const noexcept { return clamped_; }

double ks_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw InvalidArgument("KS test needs non-empty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return d;
}

MatchingReport verify_matching(const MatchedSchedule& ms, const Tensor& x0, std::size_t trials,
                               std::uint64_t seed) {
  if (trials < 100) throw InvalidArgument("verify_matching needs at least 100 trials");
  const std::size_t n = ms.size();
  if (x0.size() != n) throw InvalidArgument("carrier size does not match matched schedule");

  const double sp = std::sqrt(ms.alpha_bar_p);
  const double sq = std::sqrt(1.0 - ms.alpha_bar_p);
  const double target = ms.target_variance();
  std::vector<double> center(n), embed_a(n), embed_b(n), noise_sd(n);
  for (std::size_t i = 0; i < n; ++i) {
    center[i] = sp * ms.carrier_scale[i] * x0[i];
    embed_a[i] = std::sqrt(ms.alpha_bar[i]);
    embed_b[i] = std::sqrt(1.0 - ms.alpha_bar[i]);
    noise_sd[i] = std::sqrt(ms.noise[i]);
  }

  // Residuals are accumulated around the center to keep the sums small.
  std::vector<double> sum(n, 0.0), sumsq(n, 0.0);
  constexpr std::size_t kKsSamples = 20000;
  std::vector<double> ks_embedded, ks_reference;
  ks_embedded.reserve(kKsSamples);
  ks_reference.reserve(kKsSamples);

  Rng rng(seed);
  for (std::size_t trial = 0; trial < trials; ++trial) {
    for (std::size_t i = 0; i < n; ++i) {
      const double signal = rng.normal();
      const double channel = noise_sd[i] * rng.normal();
      const double z = embed_a[i] * x0[i] + embed_b[i] * signal + channel;
      const double r = z - center[i];
      sum[i] += r;
      sumsq[i] += r * r;
      if (ks_embedded.size() < kKsSamples) ks_embedded.push_back(r / sq);
    }
    for (std::size_t i = 0; i < n && ks_reference.size() < kKsSamples; ++i) {
      const double ref = center[i] + sq * rng.normal();
      ks_reference.push_back((ref - center[i]) / sq);
    }
  }

  MatchingReport rep;
  rep.trials = trials;
  rep.target_variance = target;
  const double nt = static_cast<double>(trials);
  double aligned = 0.0, rms = 0.0, pooled = 0.0, dev_sum = 0.0, dev_max = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double mean = sum[i] / nt;
    const double var = (sumsq[i] - nt * mean * mean) / (nt - 1.0);
    const double sign = x0[i] > 0.0 ? 1.0 : (x0[i] < 0.0 ? -1.0 : 0.0);
    aligned += mean * sign;
    rms += mean * mean;
    pooled += var;
    const double dev = target > 0.0 ? std::abs(var / target - 1.0) : std::abs(var);
    dev_sum += dev;
    dev_max = std::max(dev_max, dev);
  }
  const double nn = static_cast<double>(n);
  rep.aligned_mean_residual = std::abs(aligned) / nn;
  rep.rms_mean_residual = std::sqrt(rms / nn);
  rep.rms_mean_floor = std::sqrt(target / nt);
  rep.pooled_variance_deviation =
      target > 0.0 ? std::abs(pooled / nn / target - 1.0) : std::abs(pooled / nn);
  rep.mean_variance_deviation = dev_sum / nn;
  rep.max_variance_deviation = dev_max;
  if (sq > 0.0) {
    rep.ks_statistic = ks_two_sample(ks_embedded, ks_reference);
    const double a = static_cast<double>(ks_embedded.size());
    const double b = static_cast<double>(ks_reference.size());
    rep.ks_critical = 1.628 * std::sqrt((a + b) / (a * b));
  } else {
    rep.ks_statistic = 0.0;
    rep.ks_critical = 1.0;
  }
  return rep;
}

}  // namespace dsrdm
