#include "dsrdm/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <limits>

#include "dsrdm/errors.hpp"
#include "dsrdm/rng.hpp"

namespace dsrdm {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

constexpr double kInf = std::numeric_limits<double>::infinity();

Tensor checked_predict(const Predictor& pred, const Tensor& x, int t, double* ms) {
  const auto start = Clock::now();
  Tensor eps = pred.predict(x, t);
  if (ms) *ms += elapsed_ms(start);
  if (!eps.same_shape(x))
    throw Error("predictor changed the tensor shape at step " + std::to_string(t));
  for (double v : eps.values())
    if (!std::isfinite(v)) throw Error("predictor returned a non-finite value at step " + std::to_string(t));
  return eps;
}

double mean_finite(const std::vector<double>& v) {
  double sum = 0.0;
  std::size_t n = 0;
  for (double x : v)
    if (std::isfinite(x)) {
      sum += x;
      ++n;
    }
  return n ? sum / static_cast<double>(n) : kInf;
}

SignalBlock with_values(const SignalBlock& layout, Tensor values) {
  SignalBlock out = layout;
  out.values = std::move(values);
  return out;
}

template <typename Fn>
auto stage(const char* name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

}  // namespace

StepWindow default_window(const NoiseSchedule& sched) {
  const int t = sched.steps();
  return t == 1 ? StepWindow{1, 1} : StepWindow{t / 2 + 1, t};
}

EmbeddedFrame embed_single(const Carrier& carrier, const SignalBlock& signal,
                           const MatchedSchedule& ms) {
  require_same_shape(carrier.data, signal.values, "embed_single");
  if (ms.size() != carrier.size()) throw InvalidArgument("matched schedule does not cover the carrier");
  EmbeddedFrame f;
  f.mode = FrameMode::single;
  f.window = {ms.step, ms.step};
  f.carrier_id = carrier.id;
  Tensor x(carrier.data.shape());
  for (std::size_t i = 0; i < x.size(); ++i)
    x[i] = std::sqrt(ms.alpha_bar[i]) * carrier.data[i] +
           std::sqrt(1.0 - ms.alpha_bar[i]) * signal.values[i];
  f.samples.emplace(ms.step, std::move(x));
  f.payload.emplace(ms.step, signal);
  return f;
}

EmbeddedFrame embed_multi(const Carrier& carrier, const std::map<int, SignalBlock>& payloads,
                          const MatchedTrajectory& traj) {
  const StepWindow w{traj.first_step(), traj.last_step()};
  if (payloads.size() != static_cast<std::size_t>(w.size()) || payloads.begin()->first != w.lo ||
      payloads.rbegin()->first != w.hi)
    throw InvalidArgument("payload steps must form the contiguous window [" + std::to_string(w.lo) +
                          ", " + std::to_string(w.hi) + "]");
  EmbeddedFrame f = embed_single(carrier, payloads.at(w.lo), traj.at(w.lo));
  f.mode = FrameMode::multi;
  f.window = w;
  for (int t = w.lo + 1; t <= w.hi; ++t) {
    const SignalBlock& s = payloads.at(t);
    require_same_shape(carrier.data, s.values, "embed_multi");
    const Tensor& prev = f.samples.at(t - 1);
    Tensor x(prev.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double a = traj.alpha(t, i);
      x[i] = std::sqrt(a) * prev[i] + std::sqrt(1.0 - a) * s.values[i];
    }
    f.samples.emplace(t, std::move(x));
    f.payload.emplace(t, s);
  }
  return f;
}

OraclePredictor matched_oracle(const Tensor& x0, const NoiseSchedule& sched,
                               const MatchedTrajectory& traj) {
  std::map<int, Tensor> carriers;
  for (int t = traj.first_step(); t <= traj.last_step(); ++t)
    carriers.emplace(t, traj.at(t).scaled_carrier(x0));
  return OraclePredictor(std::move(carriers), sched);
}

namespace {

// The merged-form block at one step, from its own predictor output.
Tensor extract_merged(const Tensor& eps_hat, const MatchedSchedule& ms, Extraction mode,
                      std::vector<double>& eff_snr) {
  const double sp = std::sqrt(1.0 - ms.alpha_bar_p);
  Tensor s(eps_hat.shape());
  eff_snr.resize(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double signal_var = 1.0 - ms.alpha_bar[i];
    double v = sp * eps_hat[i] / std::sqrt(signal_var);
    if (mode == Extraction::mmse) v *= signal_var / (signal_var + ms.noise[i]);
    s[i] = v;
    eff_snr[i] = ms.noise[i] > 0.0 ? signal_var / ms.noise[i] : kInf;
  }
  return s;
}

}  // namespace

std::pair<SignalBlock, ExtractionDiagnostics> recover_single(
    const Tensor& received, const Predictor& pred, const NoiseSchedule& sched,
    const MatchedSchedule& ms, const SignalBlock& layout, Extraction mode) {
  if (received.size() != ms.size()) throw InvalidArgument("received tensor does not match the schedule");
  if (ms.step < 1 || ms.step > sched.steps()) throw InvalidArgument("matched step outside the schedule");
  ExtractionDiagnostics d;
  d.step = ms.step;
  d.clamped = ms.clamped_count;
  const Tensor eps = checked_predict(pred, received, ms.step, &d.predict_ms);
  Tensor s = extract_merged(eps, ms, mode, d.effective_snr);
  d.mean_effective_snr = mean_finite(d.effective_snr);
  return {with_values(layout, std::move(s)), std::move(d)};
}

MultiRecovery recover_multi(const EmbeddedFrame& received, const Predictor& pred,
                            const NoiseSchedule& sched, const MatchedTrajectory& traj,
                            const std::map<int, SignalBlock>& layouts, Extraction mode) {
  const StepWindow w = received.window;
  if (w.lo != traj.first_step() || w.hi != traj.last_step() || w.hi > sched.steps())
    throw InvalidArgument("received window does not match the matched trajectory");
  for (int t = w.lo; t <= w.hi; ++t) {
    if (!received.samples.count(t)) throw InvalidArgument("missing snapshot for step " + std::to_string(t));
    if (!layouts.count(t)) throw InvalidArgument("missing block layout for step " + std::to_string(t));
  }
  if (received.samples.size() != static_cast<std::size_t>(w.size()))
    throw InvalidArgument("snapshots outside the window");

  MultiRecovery out;
  // Reverse pass: one predictor call per step, highest step first.
  std::map<int, Tensor> denoised;
  for (int t = w.hi; t >= w.lo; --t) {
    const MatchedSchedule& ms = traj.at(t);
    const Tensor& x = received.samples.at(t);
    ExtractionDiagnostics& d = out.diagnostics[t];
    d.step = t;
    d.clamped = ms.clamped_count;
    const Tensor eps = checked_predict(pred, x, t, &d.predict_ms);
    if (t == w.lo) {
      Tensor s = extract_merged(eps, ms, mode, d.effective_snr);
      out.blocks.emplace(t, with_values(layouts.at(t), std::move(s)));
      d.mean_effective_snr = mean_finite(d.effective_snr);
    }
    Tensor xh = x;
    if (mode == Extraction::mmse) {
      const double sp = std::sqrt(1.0 - ms.alpha_bar_p);
      for (std::size_t i = 0; i < xh.size(); ++i) {
        const double signal_var = 1.0 - ms.alpha_bar[i];
        const double residual = sp * eps[i];
        xh[i] = x[i] - residual + residual * signal_var / (signal_var + ms.noise[i]);
      }
    }
    denoised.emplace(t, std::move(xh));
  }
  for (int t = w.hi; t > w.lo; --t) {
    const Tensor& cur = denoised.at(t);
    const Tensor& prev = denoised.at(t - 1);
    const MatchedSchedule& ms = traj.at(t);
    ExtractionDiagnostics& d = out.diagnostics[t];
    Tensor s(cur.shape());
    d.effective_snr.resize(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
      const double a = traj.alpha(t, i);
      s[i] = (cur[i] - std::sqrt(a) * prev[i]) / std::sqrt(1.0 - a);
      d.effective_snr[i] = ms.noise[i] > 0.0 ? (1.0 - a) / (ms.noise[i] * (1.0 + a)) : kInf;
    }
    d.mean_effective_snr = mean_finite(d.effective_snr);
    out.blocks.emplace(t, with_values(layouts.at(t), std::move(s)));
  }
  return out;
}

std::size_t frame_capacity_bits(const LinkConfig& cfg) {
  const std::size_t per_block =
      cfg.carrier.size() / 2 * static_cast<std::size_t>(bits_per_symbol(cfg.order));
  if (cfg.mode == FrameMode::single) return per_block;
  const StepWindow w = cfg.window.value_or(default_window(cfg.schedule));
  return per_block * static_cast<std::size_t>(w.size());
}

namespace {

void validate_link(const LinkConfig& cfg) {
  if (!is_supported_order(cfg.order))
    throw InvalidArgument("unsupported modulation order " + std::to_string(cfg.order));
  validate(cfg.carrier);
  if (cfg.schedule.steps() < 1) throw InvalidArgument("link has no noise schedule");
  if (cfg.mode == FrameMode::multi) {
    const StepWindow w = cfg.window.value_or(default_window(cfg.schedule));
    if (w.lo < 1 || w.hi < w.lo || w.hi > cfg.schedule.steps())
      throw InvalidArgument("window [" + std::to_string(w.lo) + ", " + std::to_string(w.hi) +
                            "] outside the schedule");
  } else if (cfg.t_star && (*cfg.t_star < 1 || *cfg.t_star > cfg.schedule.steps())) {
    throw InvalidArgument("t_star " + std::to_string(*cfg.t_star) + " outside the schedule");
  }
  if (std::isnan(cfg.snr_db)) throw InvalidArgument("SNR is NaN");
  if (!(cfg.rician_k >= 0.0)) throw InvalidArgument("Rician k must be non-negative");
}

struct FrameChannel {
  ChannelState ch;
  MatchedTrajectory traj;
};

FrameChannel draw_matched_channel(const LinkConfig& cfg, std::size_t frame, double sigma_n2,
                                  std::size_t& discarded) {
  const std::size_t m = cfg.carrier.size() / 2;
  std::string last_error;
  for (int attempt = 0; attempt < cfg.max_redraws; ++attempt) {
    FrameChannel fc;
    fc.ch = draw_channel(m, cfg.rician_k, sigma_n2,
                         derive_seed(cfg.seed, frame, stream::fading + 16u * attempt));
    try {
      const std::vector<double> noise = effective_noise(fc.ch);
      StepWindow w;
      if (cfg.mode == FrameMode::multi) {
        w = cfg.window.value_or(default_window(cfg.schedule));
      } else {
        const int t = cfg.t_star ? *cfg.t_star
                                 : designated_step(cfg.schedule, noise, cfg.match.policy, 0.01,
                                                   cfg.step_quantile);
        w = {t, t};
      }
      fc.traj = MatchedTrajectory(cfg.schedule, w.lo, w.hi, noise, cfg.match);
      return fc;
    } catch (const SingularChannel& e) {
      last_error = e.what();
    } catch (const MatchInfeasible& e) {
      last_error = e.what();
    }
    ++discarded;
    // A deterministic channel fails the same way on every draw.
    if (fc.ch.is_awgn()) break;
  }
  throw MatchInfeasible(last_error);
}

}  // namespace

RecoveryReport end_to_end(std::span<const Bit> bits, const LinkConfig& cfg) {
  stage("config", [&] {
    validate_link(cfg);
    if (bits.empty()) throw InvalidArgument("no payload bits");
    return 0;
  });
  const auto start = Clock::now();
  const Shape& shape = cfg.carrier.data.shape();
  const std::size_t per_block =
      cfg.carrier.size() / 2 * static_cast<std::size_t>(bits_per_symbol(cfg.order));
  const std::size_t per_frame = frame_capacity_bits(cfg);
  const std::size_t frames = (bits.size() + per_frame - 1) / per_frame;
  const int k = bits_per_symbol(cfg.order);
  const double sigma_n2 = snr_to_sigma(cfg.snr_db);

  RecoveryReport rep;
  rep.frames = frames;
  rep.recovered.reserve(bits.size());
  std::map<int, StepReport> steps;
  std::map<int, double> analytic_weighted;
  std::map<int, std::size_t> snr_frames;

  for (std::size_t f = 0; f < frames; ++f) {
    FrameChannel fc = stage("channel", [&] { return draw_matched_channel(cfg, f, sigma_n2, rep.discarded); });
    const StepWindow w{fc.traj.first_step(), fc.traj.last_step()};
    rep.clamped += fc.traj.clamped_count();

    // Payload: window steps in ascending order take consecutive bit slices.
    std::map<int, SignalBlock> payload;
    std::map<int, std::size_t> real_bits;
    std::map<int, BitBlock> sent;
    stage("modulate", [&] {
      for (int t = w.lo; t <= w.hi; ++t) {
        const std::size_t b = static_cast<std::size_t>(t - w.lo);
        const std::size_t begin = std::min(bits.size(), f * per_frame + b * per_block);
        const std::size_t end = std::min(bits.size(), begin + per_block);
        BitBlock block(bits.begin() + static_cast<std::ptrdiff_t>(begin),
                       bits.begin() + static_cast<std::ptrdiff_t>(end));
        real_bits[t] = block.size();
        block.resize(per_block, 0);
        const SymbolBlock symbols = modulate(block, cfg.order);
        payload.emplace(t, symbols_to_signal(symbols, shape,
                                             derive_seed(cfg.seed, f, stream::padding + 16u * b)));
        sent.emplace(t, std::move(block));
      }
      return 0;
    });

    EmbeddedFrame frame = stage("embed", [&] { return embed_multi(cfg.carrier, payload, fc.traj); });
    frame.mode = cfg.mode;

    stage("transmit", [&] {
      for (auto& [t, x] : frame.samples) {
        const std::size_t b = static_cast<std::size_t>(t - w.lo);
        TransmitFrame tx{pack_complex(x.values()), t, cfg.mode, cfg.carrier.id};
        const auto y = transmit(tx, fc.ch, derive_seed(cfg.seed, f, stream::noise + 16u * b));
        const auto eq = zf_equalize(y, fc.ch);
        x = Tensor(shape, unpack_complex(eq));
      }
      return 0;
    });

    std::optional<OraclePredictor> oracle;
    if (!cfg.predictor) oracle.emplace(matched_oracle(cfg.carrier.data, cfg.schedule, fc.traj));
    const Predictor& pred = cfg.predictor ? *cfg.predictor : static_cast<const Predictor&>(*oracle);

    MultiRecovery rec = stage("recover", [&] {
      return recover_multi(frame, pred, cfg.schedule, fc.traj, payload, cfg.extraction);
    });

    stage("demodulate", [&] {
      for (int t = w.lo; t <= w.hi; ++t) {
        const BitBlock got = demodulate(signal_to_symbols(rec.blocks.at(t)));
        const BitBlock& ref = sent.at(t);
        const std::size_t nreal = real_bits.at(t);
        StepReport& sr = steps[t];
        sr.step = t;
        for (std::size_t i = 0; i < nreal; ++i) sr.errors += got[i] != ref[i];
        sr.bits += nreal;
        rep.recovered.insert(rep.recovered.end(), got.begin(),
                             got.begin() + static_cast<std::ptrdiff_t>(nreal));

        const Tensor& truth = payload.at(t).values;
        const Tensor& est = rec.blocks.at(t).values;
        double se = 0.0;
        for (std::size_t i = 0; i < truth.size(); ++i) se += (est[i] - truth[i]) * (est[i] - truth[i]);
        sr.mse += se / static_cast<double>(truth.size());

        const ExtractionDiagnostics& d = rec.diagnostics.at(t);
        sr.ms += d.predict_ms;
        if (std::isfinite(d.mean_effective_snr)) {
          sr.eff_snr += d.mean_effective_snr;
          ++snr_frames[t];
        }
        // Lanes of every symbol that holds at least one real bit.
        const std::size_t nsym = (nreal + static_cast<std::size_t>(k) - 1) / static_cast<std::size_t>(k);
        const std::size_t q_lane = payload.at(t).symbol_count;
        double lane_sum = 0.0;
        for (std::size_t j = 0; j < nsym; ++j)
          lane_sum += exact_qam_ber(cfg.order, d.effective_snr[j]) +
                      exact_qam_ber(cfg.order, d.effective_snr[q_lane + j]);
        if (nsym > 0) analytic_weighted[t] += lane_sum / (2.0 * static_cast<double>(nsym)) * static_cast<double>(nreal);
      }
      return 0;
    });
  }

  double mse_sum = 0.0, snr_sum = 0.0, analytic_sum = 0.0;
  std::size_t snr_count = 0;
  for (auto it = steps.rbegin(); it != steps.rend(); ++it) {
    StepReport sr = it->second;
    const double nf = static_cast<double>(frames);
    sr.ber = sr.bits ? static_cast<double>(sr.errors) / static_cast<double>(sr.bits) : 0.0;
    sr.mse /= nf;
    sr.ms /= nf;
    const std::size_t sf = snr_frames[sr.step];
    sr.eff_snr = sf ? sr.eff_snr / static_cast<double>(sf) : kInf;
    sr.analytic_ber = sr.bits ? analytic_weighted[sr.step] / static_cast<double>(sr.bits) : 0.0;
    rep.bits += sr.bits;
    rep.errors += sr.errors;
    mse_sum += sr.mse;
    analytic_sum += analytic_weighted[sr.step];
    if (std::isfinite(sr.eff_snr)) {
      snr_sum += sr.eff_snr;
      ++snr_count;
    }
    rep.steps.push_back(sr);
  }
  rep.ber = rep.bits ? static_cast<double>(rep.errors) / static_cast<double>(rep.bits) : 0.0;
  rep.mse = rep.steps.empty() ? 0.0 : mse_sum / static_cast<double>(rep.steps.size());
  rep.eff_snr = snr_count ? snr_sum / static_cast<double>(snr_count) : kInf;
  rep.analytic_ber = rep.bits ? analytic_sum / static_cast<double>(rep.bits) : 0.0;
  rep.total_ms = elapsed_ms(start);
  return rep;
}

}  // namespace dsrdm
