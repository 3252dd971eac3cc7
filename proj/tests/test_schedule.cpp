#include "doctest.h"

#include <cmath>

#include "dsrdm/carrier.hpp"
#include "dsrdm/errors.hpp"
#include "dsrdm/schedule.hpp"

using namespace dsrdm;

TEST_CASE("linear schedule cumulative products") {
  const NoiseSchedule s = linear_schedule(1000, 1e-4, 0.02);
  CHECK(s.steps() == 1000);
  CHECK(s.alpha(1) == doctest::Approx(1.0 - 1e-4));
  CHECK(s.alpha(1000) == doctest::Approx(0.98));
  CHECK(s.alpha_bar(0) == 1.0);
  CHECK(s.alpha_bar(1000) == doctest::Approx(4.035829765375676e-05).epsilon(1e-9));

  const NoiseSchedule small = linear_schedule(32, 1e-3, 0.2);
  CHECK(small.alpha_bar(32) == doctest::Approx(0.031459268940740526).epsilon(1e-12));
  CHECK(small.alpha_bar(16) == doctest::Approx(0.4430569900823047).epsilon(1e-12));
  for (int t = 1; t <= 32; ++t) CHECK(small.alpha_bar(t) < small.alpha_bar(t - 1));
  CHECK_THROWS_AS(small.alpha_bar(33), InvalidArgument);
}

TEST_CASE("schedule fingerprint separates configurations") {
  CHECK(linear_schedule(32, 1e-3, 0.2).fingerprint() == linear_schedule(32, 1e-3, 0.2).fingerprint());
  CHECK(linear_schedule(32, 1e-3, 0.2).fingerprint() != linear_schedule(33, 1e-3, 0.2).fingerprint());
  CHECK(linear_schedule(32, 1e-3, 0.2).fingerprint() != linear_schedule(32, 1e-3, 0.21).fingerprint());
}

TEST_CASE("forward sample is the closed-form mixture") {
  const NoiseSchedule s = linear_schedule(10, 0.01, 0.1);
  const Tensor x0({2}, {0.5, -0.25});
  const Tensor eps({2}, {1.0, 2.0});
  const Tensor xt = forward_sample(x0, eps, 4, s);
  const double ab = s.alpha_bar(4);
  CHECK(xt[0] == doctest::Approx(std::sqrt(ab) * 0.5 + std::sqrt(1 - ab) * 1.0));
  CHECK(xt[1] == doctest::Approx(std::sqrt(ab) * -0.25 + std::sqrt(1 - ab) * 2.0));
}

TEST_CASE("matching keeps embedded plus channel variance at the reference level") {
  const NoiseSchedule s = linear_schedule(100, 1e-4, 0.02);
  const int t = 100;
  const double abp = s.alpha_bar(t);
  const std::vector<double> noise{0.0, 0.01, 0.2, 0.5};
  const MatchedSchedule m = match_to_channel(s, t, noise);
  REQUIRE(m.size() == 4);
  CHECK(m.clamped_count == 0);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK((1.0 - m.alpha_bar[i]) + noise[i] == doctest::Approx(1.0 - abp).epsilon(1e-14));
    CHECK(m.alpha_bar[i] == doctest::Approx(abp + noise[i]));
    CHECK(m.carrier_scale[i] == doctest::Approx(std::sqrt(m.alpha_bar[i] / abp)));
    CHECK(m.w[i] == doctest::Approx(1.0 - abp));
  }
}

TEST_CASE("matching at reference 0.5 with channel noise 0.1") {
  // Budget 1 - 0.5 = 0.5; embedding takes 0.4 of it, the channel the rest.
  const NoiseSchedule s = linear_schedule(1, 0.5, 0.5);
  const std::vector<double> ok{0.1};
  const MatchedSchedule m = match_to_channel(s, 1, ok);
  CHECK(m.alpha_bar[0] == doctest::Approx(0.6));
  const std::vector<double> bad{0.6};
  CHECK_THROWS_AS(match_to_channel(s, 1, bad), MatchInfeasible);
}

TEST_CASE("embedding scale shrinks as channel noise grows at fixed total variance") {
  const NoiseSchedule s = linear_schedule(100, 1e-4, 0.02);
  const std::vector<double> noise{0.0, 0.05, 0.1, 0.3, 0.6};
  const MatchedSchedule m = match_to_channel(s, 100, noise);
  for (std::size_t i = 1; i < noise.size(); ++i) {
    CHECK(m.alpha_bar[i] > m.alpha_bar[i - 1]);
    CHECK(std::sqrt(1.0 - m.alpha_bar[i]) < std::sqrt(1.0 - m.alpha_bar[i - 1]));
  }
}

TEST_CASE("clamp keeps a floor on the embedding variance") {
  const NoiseSchedule s = linear_schedule(1, 0.5, 0.5);
  const std::vector<double> noise{0.1, 0.7};
  MatchOptions opts;
  opts.policy = MatchPolicy::clamp;
  const MatchedSchedule m = match_to_channel(s, 1, noise, opts);
  CHECK(m.clamped_count == 1);
  CHECK(m.clamped[0] == 0);
  CHECK(m.clamped[1] == 1);
  CHECK(1.0 - m.alpha_bar[1] == doctest::Approx(opts.clamp_floor * 0.5));
}

TEST_CASE("inverted carrier scale is the reciprocal ratio") {
  const NoiseSchedule s = linear_schedule(1, 0.5, 0.5);
  const std::vector<double> noise{0.2};
  MatchOptions opts;
  opts.scale_rule = CarrierScaleRule::inverted;
  const MatchedSchedule m = match_to_channel(s, 1, noise, opts);
  CHECK(m.carrier_scale[0] == doctest::Approx(std::sqrt(0.5 / 0.7)));
  opts.scale_rule = CarrierScaleRule::identity;
  CHECK(match_to_channel(s, 1, noise, opts).carrier_scale[0] == 1.0);
}

TEST_CASE("designated step is the largest qualifying step") {
  const NoiseSchedule s = linear_schedule(1000, 1e-4, 0.02);
  const std::vector<double> noise{0.05, 0.1};
  CHECK(designated_step(s, noise) == 1000);
  const std::vector<double> hopeless{1.5};
  CHECK_THROWS_AS(designated_step(s, hopeless), MatchInfeasible);
  CHECK(designated_step(s, hopeless, MatchPolicy::clamp) == 1000);
}

TEST_CASE("trajectory alphas stay inside (0, 1)") {
  const NoiseSchedule s = linear_schedule(32, 1e-3, 0.2);
  const std::vector<double> noise{0.0, 0.05, 0.3};
  const MatchedTrajectory tr(s, 17, 32, noise);
  CHECK(tr.first_step() == 17);
  CHECK(tr.last_step() == 32);
  for (std::size_t i = 0; i < noise.size(); ++i) {
    for (int t = 18; t <= 32; ++t) {
      CHECK(tr.alpha(t, i) > 0.0);
      CHECK(tr.alpha(t, i) < 1.0);
      CHECK(tr.alpha(t, i) == doctest::Approx(tr.alpha_bar(t, i) / tr.alpha_bar(t - 1, i)));
    }
  }
  CHECK(tr.alpha_bar(0, 0) == 1.0);
  CHECK_THROWS(tr.at(16));
}

TEST_CASE("Monte-Carlo matching check passes and the inverted scale fails the mean") {
  const Carrier c = synth_carrier(8, Pattern::gaussian_blob, 4);
  const NoiseSchedule s = linear_schedule(1000, 1e-4, 0.02);
  std::vector<double> noise(c.size());
  for (std::size_t i = 0; i < noise.size(); ++i) noise[i] = 0.02 + 0.3 * static_cast<double>(i % 7) / 7.0;
  const int t = designated_step(s, noise);

  const MatchedSchedule good = match_to_channel(s, t, noise);
  const MatchingReport r = verify_matching(good, c.data, 10000, 5);
  CHECK(r.variance_ok());
  CHECK(r.mean_ok());
  CHECK(r.ks_ok());

  MatchOptions inverted;
  inverted.scale_rule = CarrierScaleRule::inverted;
  const MatchingReport bad = verify_matching(match_to_channel(s, t, noise, inverted), c.data, 10000, 5);
  CHECK_FALSE(bad.mean_ok());
}

TEST_CASE("two-sample KS statistic") {
  CHECK(ks_two_sample({1, 2, 3}, {1, 2, 3}) == doctest::Approx(0.0));
  CHECK(ks_two_sample({1, 2, 3}, {4, 5, 6}) == doctest::Approx(1.0));
}
