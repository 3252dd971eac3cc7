#pragma once
// End-to-end link: bits -> QAM -> signal block -> diffusion embedding ->
// Rician/AWGN channel -> zero-forcing -> predictor-driven extraction -> bits.
//
// Both modes share one embedding rule. The lowest step of the window holds
// the merged forward form
//   x_lo = sqrt(ab_{i,lo}) x0 + sqrt(1 - ab_{i,lo}) s_lo,
// and each higher step continues the per-element matched recursion
//   x_t = sqrt(a_{i,t}) x_{t-1} + sqrt(1 - a_{i,t}) s_t.
// Every step in the window is transmitted as its own tensor, so single mode
// is the window {t*}.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "dsrdm/carrier.hpp"
#include "dsrdm/channel.hpp"
#include "dsrdm/denoiser.hpp"
#include "dsrdm/modem.hpp"
#include "dsrdm/schedule.hpp"

namespace dsrdm {

struct StepWindow {
  int lo = 1;
  int hi = 1;

  int size() const noexcept { return hi - lo + 1; }
  bool contains(int t) const noexcept { return t >= lo && t <= hi; }
};

/// Default signal-bearing window: the upper half of the forward steps,
/// [T/2 + 1, T]. Low steps have too little noise budget to absorb channel
/// noise under matching.
StepWindow default_window(const NoiseSchedule& sched);

enum class Extraction {
  zf,    // divide by the embedding scale; unbiased
  mmse,  // additionally shrink by (1 - ab_i) / (1 - ab_i + noise_i)
};

struct EmbeddedFrame {
  FrameMode mode = FrameMode::single;
  StepWindow window;
  std::map<int, SignalBlock> payload;  // ground truth per step
  std::map<int, Tensor> samples;       // transmitted (or received) tensor per step
  std::string carrier_id;
};

/// One signal block at step ms.step on a carrier.
EmbeddedFrame embed_single(const Carrier& carrier, const SignalBlock& signal,
                           const MatchedSchedule& ms);

/// One block per window step; the window is taken from `traj`.
EmbeddedFrame embed_multi(const Carrier& carrier, const std::map<int, SignalBlock>& payloads,
                          const MatchedTrajectory& traj);

struct ExtractionDiagnostics {
  int step = 0;
  std::vector<double> effective_snr;  // per element; +inf without channel noise
  double mean_effective_snr = 0.0;    // over finite entries, +inf if none
  std::size_t clamped = 0;
  double predict_ms = 0.0;
};

/// Extracts the block at step ms.step from a received tensor:
/// s_hat = sqrt(1 - ab_p) eps_hat / sqrt(1 - ab_i). `layout` supplies the
/// block metadata (its values are ignored).
std::pair<SignalBlock, ExtractionDiagnostics> recover_single(
    const Tensor& received, const Predictor& pred, const NoiseSchedule& sched,
    const MatchedSchedule& ms, const SignalBlock& layout, Extraction mode = Extraction::zf);

struct MultiRecovery {
  std::map<int, SignalBlock> blocks;
  std::map<int, ExtractionDiagnostics> diagnostics;
};

/// Reverse pass over the window, highest step first. The lowest step is
/// extracted as in recover_single; each higher step t is recovered from
/// consecutive snapshots, s_t = (x_t - sqrt(a_t) x_{t-1}) / sqrt(1 - a_t).
MultiRecovery recover_multi(const EmbeddedFrame& received, const Predictor& pred,
                            const NoiseSchedule& sched, const MatchedTrajectory& traj,
                            const std::map<int, SignalBlock>& layouts,
                            Extraction mode = Extraction::zf);

/// Oracle keyed by step, each step seeing its own rescaled carrier.
OraclePredictor matched_oracle(const Tensor& x0, const NoiseSchedule& sched,
                               const MatchedTrajectory& traj);

struct LinkConfig {
  int order = 16;
  Carrier carrier;
  NoiseSchedule schedule;
  FrameMode mode = FrameMode::single;
  std::optional<StepWindow> window;  // multi mode; default_window() if unset
  std::optional<int> t_star;         // single mode; designated_step() if unset
  double snr_db = 10.0;              // +inf for a noise-free channel
  double rician_k = kAwgnRicianK;
  MatchOptions match;
  double step_quantile = 0.95;
  Extraction extraction = Extraction::zf;
  const Predictor* predictor = nullptr;  // nullptr: per-frame matched oracle
  std::uint64_t seed = 1;
  int max_redraws = 64;
};

struct StepReport {
  int step = 0;
  std::size_t bits = 0;
  std::size_t errors = 0;
  double ber = 0.0;
  double mse = 0.0;
  double eff_snr = 0.0;
  double analytic_ber = 0.0;  // mean exact QAM BER at the per-lane effective SNR
  double ms = 0.0;            // mean predictor time per frame at this step
};

struct RecoveryReport {
  std::vector<StepReport> steps;  // descending step order
  std::size_t bits = 0;
  std::size_t errors = 0;
  double ber = 0.0;
  double mse = 0.0;
  double eff_snr = 0.0;
  double analytic_ber = 0.0;
  std::size_t frames = 0;
  std::size_t discarded = 0;  // channel draws rejected as singular or infeasible
  std::size_t clamped = 0;
  double total_ms = 0.0;
  BitBlock recovered;
};

/// Payload bits carried by one frame (all window steps).
std::size_t frame_capacity_bits(const LinkConfig& cfg);

/// Full chain over as many frames as `bits` needs; the last frame is padded
/// and the padding is excluded from every count. Deterministic given
/// cfg.seed. Stage failures are rethrown as StageError.
RecoveryReport end_to_end(std::span<const Bit> bits, const LinkConfig& cfg);

}  // namespace dsrdm
