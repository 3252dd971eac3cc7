#pragma once
// Experiment driver behind the command-line tool: configuration, sweeps,
// benchmarks, training and the verification report.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dsrdm/pipeline.hpp"

namespace dsrdm {

struct RunConfig {
  FrameMode mode = FrameMode::single;
  std::vector<int> orders{16};
  std::vector<double> snr_db{0.0, 5.0, 10.0, 15.0, 20.0};
  std::vector<double> rician_k{kAwgnRicianK};

  std::string carrier = "synth";  // synth | ppm
  std::string pattern = "gaussian-blob";
  int carrier_size = 32;
  std::string carrier_path;
  std::uint64_t carrier_seed = 7;
  bool latent = false;
  std::size_t latent_channels = 6;

  int schedule_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  std::optional<StepWindow> window;
  std::optional<int> t_star;

  std::string predictor = "oracle";  // oracle | checkpoint path
  bool allow_fingerprint_mismatch = false;

  int trials = 10;
  std::size_t bits_per_trial = 100000;
  std::uint64_t seed = 1;
  std::string out = "results.csv";

  Extraction extraction = Extraction::zf;
  MatchPolicy match_policy = MatchPolicy::strict;
  CarrierScaleRule carrier_scale = CarrierScaleRule::consistent;
  double clamp_floor = 1e-3;
  double step_quantile = 0.95;

  TrainConfig train;
  int train_carriers = 64;

  int bench_reps = 20;
  std::size_t verify_trials = 10000;

  bool timing = false;  // fill the ms column; off keeps CSVs byte-reproducible
};

/// Applies one key=value setting. Throws ConfigError on unknown keys or
/// malformed values.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);

/// Flat key=value file; '#' starts a comment, blank lines are ignored.
RunConfig load_config(const std::filesystem::path& path);
void apply_config_file(RunConfig& cfg, const std::filesystem::path& path);

/// Throws ConfigError when the configuration cannot run.
void validate(const RunConfig& cfg);

/// Sorted key=value lines of every setting that affects results.
std::string canonical(const RunConfig& cfg);
std::uint64_t fingerprint(const RunConfig& cfg);

/// "lo:hi:step" (inclusive) or a comma list; "inf" means noise-free.
std::vector<double> parse_snr_grid(const std::string& text);

/// Wilson score interval for a binomial proportion.
std::pair<double, double> wilson_interval(std::size_t errors, std::size_t trials,
                                          double z = 1.959963984540054);

struct ResultRow {
  std::uint64_t fingerprint = 0;
  double snr_db = 0.0;
  int step = 0;
  double ber = 0.0;
  double ber_lo = 0.0;
  double ber_hi = 0.0;
  double mse = 0.0;
  double eff_snr = 0.0;
  double ms = 0.0;
  std::uint64_t seed = 0;

  friend bool operator==(const ResultRow&, const ResultRow&) = default;
};

inline constexpr const char* kCsvHeader = "fingerprint,snr_db,step,ber,ber_lo,ber_hi,mse,eff_snr,ms,seed";
inline constexpr const char* kTruncatedRow = "TRUNCATED,,,,,,,,,";

std::string format_row(const ResultRow& row);
ResultRow parse_row(const std::string& line);
/// Shortest round-trip decimal; "inf"/"-inf"/"nan" for non-finite values.
std::string format_double(double v);

/// Worker threads: hardware concurrency, capped by DSRDM_THREADS.
int worker_count();

Carrier build_carrier(const RunConfig& cfg);
NoiseSchedule build_schedule(const RunConfig& cfg);
/// nullptr for the oracle; otherwise the checkpoint, fingerprint-checked.
std::unique_ptr<MlpPredictor> load_predictor(const RunConfig& cfg, const NoiseSchedule& sched);
/// Link settings for one (M, k, SNR) point.
LinkConfig link_for(const RunConfig& cfg, int order, double k, double snr_db, const Carrier& carrier,
                    const NoiseSchedule& sched, const Predictor* pred);

/// Sum of `trials` end_to_end runs with per-trial seeds derived from
/// cfg.seed, executed on the worker pool and merged in trial order.
RecoveryReport run_point(const RunConfig& cfg, const LinkConfig& link);

// Commands. Each returns the process exit code: 0 success, 1 verification
// failure, 2 configuration error, 3 stage failure (partial CSV kept).
int cmd_sweep_snr(const RunConfig& cfg, std::ostream& log);
int cmd_sweep_steps(const RunConfig& cfg, std::ostream& log);
int cmd_bench(const RunConfig& cfg, std::ostream& log);
int cmd_train(const RunConfig& cfg, std::ostream& log);
int cmd_verify(const RunConfig& cfg, std::ostream& log);

}  // namespace dsrdm
