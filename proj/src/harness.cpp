#include "dsrdm/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iomanip>
#include <limits>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "dsrdm/errors.hpp"
#include "dsrdm/rng.hpp"

namespace dsrdm {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(trim(item));
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

double parse_number(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  if (t == "inf" || t == "+inf" || t == "infinite") return std::numeric_limits<double>::infinity();
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  if (t.empty() || end != t.c_str() + t.size() || std::isnan(v))
    throw ConfigError("'" + key + "' expects a number, got '" + text + "'");
  return v;
}

long long parse_integer(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  long long v = 0;
  const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || p != t.data() + t.size())
    throw ConfigError("'" + key + "' expects an integer, got '" + text + "'");
  return v;
}

std::uint64_t parse_unsigned(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || p != t.data() + t.size())
    throw ConfigError("'" + key + "' expects a non-negative integer, got '" + text + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  if (t == "1" || t == "true" || t == "yes" || t == "on") return true;
  if (t == "0" || t == "false" || t == "no" || t == "off") return false;
  throw ConfigError("'" + key + "' expects a boolean, got '" + text + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& text) {
  std::vector<int> out;
  for (const auto& item : split(text, ',')) out.push_back(static_cast<int>(parse_integer(key, item)));
  if (out.empty()) throw ConfigError("'" + key + "' must not be empty");
  return out;
}

std::vector<double> parse_double_list(const std::string& key, const std::string& text) {
  std::vector<double> out;
  for (const auto& item : split(text, ',')) out.push_back(parse_number(key, item));
  if (out.empty()) throw ConfigError("'" + key + "' must not be empty");
  return out;
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_floating_point_v<T>)
      out += format_double(v[i]);
    else
      out += std::to_string(v[i]);
  }
  return out;
}

const char* to_string(FrameMode m) { return m == FrameMode::single ? "single" : "multi"; }
const char* to_string(Extraction e) { return e == Extraction::zf ? "zf" : "mmse"; }
const char* to_string(MatchPolicy p) { return p == MatchPolicy::strict ? "strict" : "clamp"; }
const char* to_string(CarrierScaleRule r) {
  switch (r) {
    case CarrierScaleRule::consistent: return "consistent";
    case CarrierScaleRule::inverted: return "inverted";
    case CarrierScaleRule::identity: return "identity";
  }
  return "?";
}

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::vector<double> parse_snr_grid(const std::string& text) {
  const std::string t = trim(text);
  if (t.find(':') != std::string::npos) {
    const auto parts = split(t, ':');
    if (parts.size() != 3) throw ConfigError("SNR range must be lo:hi:step, got '" + text + "'");
    const double lo = parse_number("snr", parts[0]);
    const double hi = parse_number("snr", parts[1]);
    const double step = parse_number("snr", parts[2]);
    if (!std::isfinite(lo) || !std::isfinite(hi) || !(step > 0.0) || hi < lo)
      throw ConfigError("SNR range needs finite lo <= hi and step > 0, got '" + text + "'");
    std::vector<double> out;
    const auto n = static_cast<long long>(std::floor((hi - lo) / step + 1e-9));
    for (long long i = 0; i <= n; ++i) out.push_back(lo + static_cast<double>(i) * step);
    return out;
  }
  return parse_double_list("snr", t);
}

void apply_setting(RunConfig& c, const std::string& raw_key, const std::string& raw_value) {
  std::string key = trim(raw_key);
  std::replace(key.begin(), key.end(), '-', '_');
  const std::string v = trim(raw_value);
  if (key == "mode") {
    if (v == "single") c.mode = FrameMode::single;
    else if (v == "multi") c.mode = FrameMode::multi;
    else throw ConfigError("mode must be single or multi, got '" + v + "'");
  } else if (key == "mod" || key == "order") {
    c.orders = parse_int_list(key, v);
  } else if (key == "snr" || key == "snr_db") {
    c.snr_db = parse_snr_grid(v);
  } else if (key == "rician_k") {
    c.rician_k = parse_double_list(key, v);
  } else if (key == "carrier") {
    c.carrier = v;
  } else if (key == "pattern") {
    c.pattern = v;
  } else if (key == "carrier_size") {
    c.carrier_size = static_cast<int>(parse_integer(key, v));
  } else if (key == "carrier_path") {
    c.carrier_path = v;
  } else if (key == "carrier_seed") {
    c.carrier_seed = parse_unsigned(key, v);
  } else if (key == "latent") {
    c.latent = parse_bool(key, v);
  } else if (key == "latent_channels") {
    c.latent_channels = parse_unsigned(key, v);
  } else if (key == "schedule_T" || key == "schedule_t" || key == "steps_T") {
    c.schedule_steps = static_cast<int>(parse_integer(key, v));
  } else if (key == "beta_start") {
    c.beta_start = parse_number(key, v);
  } else if (key == "beta_end") {
    c.beta_end = parse_number(key, v);
  } else if (key == "window") {
    if (v.empty() || v == "default") {
      c.window.reset();
    } else {
      const auto parts = split(v, ':');
      if (parts.size() != 2) throw ConfigError("window must be lo:hi, got '" + v + "'");
      c.window = StepWindow{static_cast<int>(parse_integer(key, parts[0])),
                            static_cast<int>(parse_integer(key, parts[1]))};
    }
  } else if (key == "t_star") {
    if (v.empty() || v == "auto") c.t_star.reset();
    else c.t_star = static_cast<int>(parse_integer(key, v));
  } else if (key == "predictor") {
    c.predictor = v;
  } else if (key == "allow_fingerprint_mismatch") {
    c.allow_fingerprint_mismatch = parse_bool(key, v);
  } else if (key == "trials") {
    c.trials = static_cast<int>(parse_integer(key, v));
  } else if (key == "bits_per_trial") {
    c.bits_per_trial = parse_unsigned(key, v);
  } else if (key == "seed") {
    c.seed = parse_unsigned(key, v);
  } else if (key == "out") {
    c.out = v;
  } else if (key == "extraction") {
    if (v == "zf") c.extraction = Extraction::zf;
    else if (v == "mmse") c.extraction = Extraction::mmse;
    else throw ConfigError("extraction must be zf or mmse, got '" + v + "'");
  } else if (key == "match_policy") {
    if (v == "strict") c.match_policy = MatchPolicy::strict;
    else if (v == "clamp") c.match_policy = MatchPolicy::clamp;
    else throw ConfigError("match_policy must be strict or clamp, got '" + v + "'");
  } else if (key == "carrier_scale") {
    if (v == "consistent") c.carrier_scale = CarrierScaleRule::consistent;
    else if (v == "inverted") c.carrier_scale = CarrierScaleRule::inverted;
    else if (v == "identity") c.carrier_scale = CarrierScaleRule::identity;
    else throw ConfigError("carrier_scale must be consistent, inverted or identity, got '" + v + "'");
  } else if (key == "clamp_floor") {
    c.clamp_floor = parse_number(key, v);
  } else if (key == "step_quantile") {
    c.step_quantile = parse_number(key, v);
  } else if (key == "train_hidden") {
    c.train.hidden = parse_int_list(key, v);
  } else if (key == "train_embed_dim") {
    c.train.embed_dim = static_cast<int>(parse_integer(key, v));
  } else if (key == "train_lr") {
    c.train.learning_rate = parse_number(key, v);
  } else if (key == "train_momentum") {
    c.train.momentum = parse_number(key, v);
  } else if (key == "train_grad_clip") {
    c.train.grad_clip = parse_number(key, v);
  } else if (key == "train_batch") {
    c.train.batch_size = static_cast<int>(parse_integer(key, v));
  } else if (key == "train_steps") {
    c.train.steps = static_cast<int>(parse_integer(key, v));
  } else if (key == "train_seed") {
    c.train.seed = parse_unsigned(key, v);
  } else if (key == "train_carriers") {
    c.train_carriers = static_cast<int>(parse_integer(key, v));
  } else if (key == "bench_reps") {
    c.bench_reps = static_cast<int>(parse_integer(key, v));
  } else if (key == "verify_trials") {
    c.verify_trials = parse_unsigned(key, v);
  } else if (key == "timing") {
    c.timing = parse_bool(key, v);
  } else {
    throw ConfigError("unknown config key '" + raw_key + "'");
  }
}

void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    try {
      apply_setting(cfg, line.substr(0, eq), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

RunConfig load_config(const std::filesystem::path& path) {
  RunConfig cfg;
  apply_config_file(cfg, path);
  return cfg;
}

void validate(const RunConfig& c) {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (c.orders.empty()) fail("no modulation order configured");
  for (int m : c.orders)
    if (!is_supported_order(m)) fail("unsupported modulation order " + std::to_string(m));
  if (c.snr_db.empty()) fail("SNR grid is empty");
  for (double s : c.snr_db)
    if (std::isnan(s) || s == -std::numeric_limits<double>::infinity()) fail("invalid SNR value");
  if (c.rician_k.empty()) fail("Rician k list is empty");
  for (double k : c.rician_k)
    if (!(k >= 0.0)) fail("Rician k must be >= 0");
  if (c.carrier == "synth") {
    if (!is_supported_carrier_size(c.carrier_size))
      fail("carrier_size must be 8, 16, 32 or 64");
    try {
      parse_pattern(c.pattern);
    } catch (const InvalidArgument& e) {
      fail(e.what());
    }
  } else if (c.carrier == "ppm") {
    if (c.carrier_path.empty() || !std::filesystem::exists(c.carrier_path))
      fail("carrier_path '" + c.carrier_path + "' does not exist");
  } else {
    fail("carrier must be synth or ppm, got '" + c.carrier + "'");
  }
  if (c.latent && c.latent_channels == 0) fail("latent_channels must be positive");
  if (c.schedule_steps < 1) fail("schedule_T must be >= 1");
  if (!(c.beta_start > 0.0) || !(c.beta_start <= c.beta_end) || !(c.beta_end < 1.0))
    fail("schedule requires 0 < beta_start <= beta_end < 1");
  if (c.window && (c.window->lo < 1 || c.window->hi < c.window->lo || c.window->hi > c.schedule_steps))
    fail("window must satisfy 1 <= lo <= hi <= schedule_T");
  if (c.t_star && (*c.t_star < 1 || *c.t_star > c.schedule_steps))
    fail("t_star must lie in [1, schedule_T]");
  if (c.predictor != "oracle" && !std::filesystem::exists(c.predictor))
    fail("predictor checkpoint '" + c.predictor + "' does not exist");
  if (c.trials < 1) fail("trials must be >= 1");
  if (c.bits_per_trial < 1) fail("bits_per_trial must be >= 1");
  if (c.out.empty()) fail("out path is empty");
  if (!(c.clamp_floor > 0.0 && c.clamp_floor < 1.0)) fail("clamp_floor must lie in (0, 1)");
  if (!(c.step_quantile >= 0.0 && c.step_quantile <= 1.0)) fail("step_quantile must lie in [0, 1]");
  if (c.train.steps < 1 || c.train.batch_size < 1 || !(c.train.learning_rate > 0.0))
    fail("training needs positive steps, batch and learning rate");
  if (c.train.embed_dim < 0 || c.train.embed_dim % 2) fail("train_embed_dim must be even");
  for (int h : c.train.hidden)
    if (h < 1) fail("train_hidden widths must be positive");
  if (c.train_carriers < 1) fail("train_carriers must be >= 1");
  if (c.bench_reps < 1) fail("bench_reps must be >= 1");
  if (c.verify_trials < 100) fail("verify_trials must be >= 100");
}

std::string canonical(const RunConfig& c) {
  std::map<std::string, std::string> kv;
  kv["mode"] = to_string(c.mode);
  kv["mod"] = join(c.orders);
  kv["snr"] = join(c.snr_db);
  kv["rician_k"] = join(c.rician_k);
  kv["carrier"] = c.carrier;
  if (c.carrier == "synth") {
    kv["pattern"] = c.pattern;
    kv["carrier_size"] = std::to_string(c.carrier_size);
    kv["carrier_seed"] = std::to_string(c.carrier_seed);
  } else {
    kv["carrier_path"] = c.carrier_path;
  }
  kv["latent"] = c.latent ? "1" : "0";
  if (c.latent) kv["latent_channels"] = std::to_string(c.latent_channels);
  kv["schedule_T"] = std::to_string(c.schedule_steps);
  kv["beta_start"] = format_double(c.beta_start);
  kv["beta_end"] = format_double(c.beta_end);
  kv["window"] = c.window ? std::to_string(c.window->lo) + ":" + std::to_string(c.window->hi) : "default";
  kv["t_star"] = c.t_star ? std::to_string(*c.t_star) : "auto";
  kv["predictor"] = c.predictor;
  kv["trials"] = std::to_string(c.trials);
  kv["bits_per_trial"] = std::to_string(c.bits_per_trial);
  kv["seed"] = std::to_string(c.seed);
  kv["extraction"] = to_string(c.extraction);
  kv["match_policy"] = to_string(c.match_policy);
  kv["carrier_scale"] = to_string(c.carrier_scale);
  kv["clamp_floor"] = format_double(c.clamp_floor);
  kv["step_quantile"] = format_double(c.step_quantile);
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

std::uint64_t fingerprint(const RunConfig& c) { return fnv1a64(canonical(c)); }

std::pair<double, double> wilson_interval(std::size_t errors, std::size_t trials, double z) {
  if (trials == 0) return {0.0, 1.0};
  const double n = static_cast<double>(trials);
  const double p = static_cast<double>(errors) / n;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / n;
  const double centre = (p + z2 / (2.0 * n)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

std::string format_row(const ResultRow& r) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << r.fingerprint << std::dec << ','
     << format_double(r.snr_db) << ',' << r.step << ',' << format_double(r.ber) << ','
     << format_double(r.ber_lo) << ',' << format_double(r.ber_hi) << ',' << format_double(r.mse)
     << ',' << format_double(r.eff_snr) << ',' << format_double(r.ms) << ',' << r.seed;
  return os.str();
}

ResultRow parse_row(const std::string& line) {
  const auto f = split(line, ',');
  if (f.size() != 10) throw InvalidArgument("result row needs 10 fields: " + line);
  ResultRow r;
  std::uint64_t fp = 0;
  const auto [p, ec] = std::from_chars(f[0].data(), f[0].data() + f[0].size(), fp, 16);
  if (ec != std::errc() || p != f[0].data() + f[0].size())
    throw InvalidArgument("bad fingerprint field: " + f[0]);
  r.fingerprint = fp;
  try {
    r.snr_db = parse_number("snr_db", f[1]);
    r.step = static_cast<int>(parse_integer("step", f[2]));
    r.ber = parse_number("ber", f[3]);
    r.ber_lo = parse_number("ber_lo", f[4]);
    r.ber_hi = parse_number("ber_hi", f[5]);
    r.mse = parse_number("mse", f[6]);
    r.eff_snr = parse_number("eff_snr", f[7]);
    r.ms = parse_number("ms", f[8]);
    r.seed = parse_unsigned("seed", f[9]);
  } catch (const ConfigError& e) {
    throw InvalidArgument(std::string("bad result row: ") + e.what());
  }
  return r;
}

int worker_count() {
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (n < 1) n = 1;
  if (const char* env = std::getenv("DSRDM_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1) n = std::min(n, cap);
  }
  return n;
}

Carrier build_carrier(const RunConfig& c) {
  Carrier image = c.carrier == "ppm" ? load_ppm(c.carrier_path)
                                     : synth_carrier(c.carrier_size, parse_pattern(c.pattern), c.carrier_seed);
  if (!c.latent) return image;
  const Shape latent_shape = default_latent_shape(image.data.shape(), c.latent_channels);
  const LatentCodec codec = build_codec(image.data.shape(), latent_shape, derive_seed(c.carrier_seed, 0, 99));
  return encode_latent(image, codec);
}

NoiseSchedule build_schedule(const RunConfig& c) {
  return linear_schedule(c.schedule_steps, c.beta_start, c.beta_end);
}

std::unique_ptr<MlpPredictor> load_predictor(const RunConfig& c, const NoiseSchedule& sched) {
  if (c.predictor == "oracle") return nullptr;
  return std::make_unique<MlpPredictor>(
      load_checkpoint(c.predictor, sched.fingerprint(), c.allow_fingerprint_mismatch));
}

LinkConfig link_for(const RunConfig& c, int order, double k, double snr_db, const Carrier& carrier,
                    const NoiseSchedule& sched, const Predictor* pred) {
  LinkConfig l;
  l.order = order;
  l.carrier = carrier;
  l.schedule = sched;
  l.mode = c.mode;
  l.window = c.window;
  l.t_star = c.t_star;
  l.snr_db = snr_db;
  l.rician_k = k;
  l.match.policy = c.match_policy;
  l.match.scale_rule = c.carrier_scale;
  l.match.clamp_floor = c.clamp_floor;
  l.step_quantile = c.step_quantile;
  l.extraction = c.extraction;
  l.predictor = pred;
  l.seed = c.seed;
  return l;
}

namespace {

// Runs fn(i) for i in [0, n) on the worker pool; the first exception wins.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(worker_count()), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

BitBlock trial_bits(std::uint64_t master, std::size_t trial, std::size_t count) {
  Rng rng(derive_seed(master, trial, stream::payload));
  BitBlock bits(count);
  for (std::size_t i = 0; i < count; i += 64) {
    const std::uint64_t word = rng.bits();
    for (std::size_t j = 0; j < 64 && i + j < count; ++j) bits[i + j] = static_cast<Bit>((word >> j) & 1u);
  }
  return bits;
}

void merge(RecoveryReport& into, const RecoveryReport& r, std::size_t merged) {
  // Per-step means are combined with equal weight per trial.
  if (into.steps.empty()) {
    into = r;
    into.recovered.clear();
    return;
  }
  const double w = static_cast<double>(merged);
  auto blend = [w](double a, double b) {
    if (std::isinf(a) || std::isinf(b)) return std::isinf(a) && std::isinf(b) ? a : (std::isinf(a) ? b : a);
    return (a * w + b) / (w + 1.0);
  };
  for (std::size_t i = 0; i < into.steps.size() && i < r.steps.size(); ++i) {
    StepReport& a = into.steps[i];
    const StepReport& b = r.steps[i];
    a.analytic_ber = (a.analytic_ber * static_cast<double>(a.bits) + b.analytic_ber * static_cast<double>(b.bits)) /
                     static_cast<double>(a.bits + b.bits);
    a.bits += b.bits;
    a.errors += b.errors;
    a.ber = static_cast<double>(a.errors) / static_cast<double>(a.bits);
    a.mse = blend(a.mse, b.mse);
    a.eff_snr = blend(a.eff_snr, b.eff_snr);
    a.ms = blend(a.ms, b.ms);
  }
  into.analytic_ber = (into.analytic_ber * static_cast<double>(into.bits) +
                       r.analytic_ber * static_cast<double>(r.bits)) /
                      static_cast<double>(into.bits + r.bits);
  into.bits += r.bits;
  into.errors += r.errors;
  into.ber = static_cast<double>(into.errors) / static_cast<double>(into.bits);
  into.mse = blend(into.mse, r.mse);
  into.eff_snr = blend(into.eff_snr, r.eff_snr);
  into.total_ms = blend(into.total_ms, r.total_ms);
  into.frames += r.frames;
  into.discarded += r.discarded;
  into.clamped += r.clamped;
}

}  // namespace

RecoveryReport run_point(const RunConfig& cfg, const LinkConfig& link) {
  const auto n = static_cast<std::size_t>(cfg.trials);
  std::vector<RecoveryReport> reports(n);
  parallel_for(n, [&](std::size_t i) {
    LinkConfig l = link;
    l.seed = derive_seed(cfg.seed, i);
    reports[i] = end_to_end(trial_bits(cfg.seed, i, cfg.bits_per_trial), l);
  });
  RecoveryReport total;
  for (std::size_t i = 0; i < n; ++i) merge(total, reports[i], i);
  return total;
}

namespace {

struct Point {
  int order;
  double k;
  double snr_db;
};

std::vector<Point> grid(const RunConfig& c) {
  std::vector<Point> pts;
  for (int m : c.orders)
    for (double k : c.rician_k)
      for (double s : c.snr_db) pts.push_back({m, k, s});
  return pts;
}

std::uint64_t point_fingerprint(const RunConfig& c, const Point& p) {
  RunConfig one = c;
  one.orders = {p.order};
  one.rician_k = {p.k};
  return fingerprint(one);
}

ResultRow row_for(const RunConfig& c, const Point& p, int step, std::size_t errors, std::size_t bits,
                  double mse, double eff_snr, double ms) {
  ResultRow r;
  r.fingerprint = point_fingerprint(c, p);
  r.snr_db = p.snr_db;
  r.step = step;
  r.ber = bits ? static_cast<double>(errors) / static_cast<double>(bits) : 0.0;
  std::tie(r.ber_lo, r.ber_hi) = wilson_interval(errors, bits);
  r.mse = mse;
  r.eff_snr = eff_snr;
  r.ms = c.timing ? ms : 0.0;
  r.seed = c.seed;
  return r;
}

std::ofstream open_csv(const std::filesystem::path& path, const char* header) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << header << '\n';
  return out;
}

std::string sidecar(const std::string& out, const char* suffix) { return out + suffix; }

struct Setup {
  Carrier carrier;
  NoiseSchedule sched;
  std::unique_ptr<MlpPredictor> pred;
};

Setup setup(const RunConfig& cfg) {
  validate(cfg);
  Setup s;
  try {
    s.carrier = build_carrier(cfg);
    s.sched = build_schedule(cfg);
    s.pred = load_predictor(cfg, s.sched);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  if (s.pred && s.pred->input_size() != s.carrier.size())
    throw ConfigError("checkpoint expects " + std::to_string(s.pred->input_size()) +
                      " inputs, carrier has " + std::to_string(s.carrier.size()));
  return s;
}

template <typename Body>
int guarded(std::ostream& log, const std::string& out_path, Body&& body) {
  std::ofstream* csv = nullptr;
  try {
    return body(csv);
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    log << "stage error: " << e.what() << '\n';
    if (csv && *csv) {
      *csv << kTruncatedRow << '\n';
      csv->flush();
      log << "partial results kept in " << out_path << '\n';
    }
    return 3;
  }
}

}  // namespace

int cmd_sweep_snr(const RunConfig& cfg, std::ostream& log) {
  std::ofstream csv_file, meta;
  return guarded(log, cfg.out, [&](std::ofstream*& csv) {
    Setup s = setup(cfg);
    csv_file = open_csv(cfg.out, kCsvHeader);
    meta = open_csv(sidecar(cfg.out, ".meta.csv"),
                    "fingerprint,snr_db,mod,rician_k,mode,ber_analytic,clamped,discarded");
    csv = &csv_file;
    for (const Point& p : grid(cfg)) {
      const LinkConfig link = link_for(cfg, p.order, p.k, p.snr_db, s.carrier, s.sched, s.pred.get());
      const RecoveryReport r = run_point(cfg, link);
      const int step = cfg.mode == FrameMode::single && !r.steps.empty() ? r.steps.front().step : 0;
      const ResultRow row = row_for(cfg, p, step, r.errors, r.bits, r.mse, r.eff_snr,
                                    r.total_ms / std::max<std::size_t>(r.frames, 1));
      csv_file << format_row(row) << '\n';
      std::ostringstream fp;
      fp << std::hex << std::setw(16) << std::setfill('0') << row.fingerprint;
      meta << fp.str() << ',' << format_double(p.snr_db) << ',' << p.order << ',' << format_double(p.k)
           << ',' << (cfg.mode == FrameMode::single ? "single" : "multi") << ','
           << (s.pred ? std::string() : format_double(r.analytic_ber)) << ',' << r.clamped << ','
           << r.discarded << '\n';
      log << "M=" << p.order << " k=" << format_double(p.k) << " snr=" << format_double(p.snr_db)
          << " dB  ber=" << format_double(row.ber) << " (" << r.errors << "/" << r.bits << ")\n";
    }
    return 0;
  });
}

int cmd_sweep_steps(const RunConfig& cfg, std::ostream& log) {
  std::ofstream csv_file;
  return guarded(log, cfg.out, [&](std::ofstream*& csv) {
    if (cfg.mode != FrameMode::multi) throw ConfigError("sweep-steps needs mode = multi");
    Setup s = setup(cfg);
    csv_file = open_csv(cfg.out, kCsvHeader);
    csv = &csv_file;
    for (const Point& p : grid(cfg)) {
      const LinkConfig link = link_for(cfg, p.order, p.k, p.snr_db, s.carrier, s.sched, s.pred.get());
      const RecoveryReport r = run_point(cfg, link);
      for (const StepReport& st : r.steps)
        csv_file << format_row(row_for(cfg, p, st.step, st.errors, st.bits, st.mse, st.eff_snr, st.ms)) << '\n';
      log << "M=" << p.order << " snr=" << format_double(p.snr_db) << " dB: " << r.steps.size()
          << " steps, first " << format_double(r.steps.front().mse) << " last "
          << format_double(r.steps.back().mse) << " MSE\n";
    }
    return 0;
  });
}

int cmd_bench(const RunConfig& cfg, std::ostream& log) {
  std::ofstream csv_file, reps;
  return guarded(log, cfg.out, [&](std::ofstream*& csv) {
    validate(cfg);
    if (cfg.bench_reps < 20) throw ConfigError("bench needs at least 20 repetitions");
    RunConfig image_cfg = cfg, latent_cfg = cfg;
    image_cfg.latent = false;
    latent_cfg.latent = true;
    struct Variant {
      const char* name;
      RunConfig cfg;
      Carrier carrier;
    };
    std::vector<Variant> variants{{"image", image_cfg, {}}, {"latent", latent_cfg, {}}};
    for (auto& v : variants) {
      try {
        v.carrier = build_carrier(v.cfg);
      } catch (const Error& e) {
        throw ConfigError(e.what());
      }
    }
    const NoiseSchedule sched = build_schedule(cfg);
    const int order = cfg.orders.front();
    const double snr = cfg.snr_db.front();
    const double k = cfg.rician_k.front();
    // Equal payload: what one image frame carries.
    RunConfig probe = image_cfg;
    const std::size_t payload_bits =
        frame_capacity_bits(link_for(probe, order, k, snr, variants[0].carrier, sched, nullptr));
    const BitBlock bits = trial_bits(cfg.seed, 0, payload_bits);

    csv_file = open_csv(cfg.out, kCsvHeader);
    reps = open_csv(sidecar(cfg.out, ".reps.csv"), "variant,rep,elements,per_step_ms,total_ms");
    csv = &csv_file;
    for (auto& v : variants) {
      const std::size_t n = v.carrier.size();
      const int width = static_cast<int>(std::max<std::size_t>(32, n / 4));
      const MlpPredictor pred(n, {width, width}, cfg.train.embed_dim, sched.fingerprint(), cfg.seed);
      const LinkConfig link = link_for(v.cfg, order, k, snr, v.carrier, sched, &pred);
      std::vector<double> per_step;
      RecoveryReport last;
      for (int rep = 0; rep < cfg.bench_reps; ++rep) {
        last = end_to_end(bits, link);
        double predict_ms = 0.0;
        for (const auto& st : last.steps) predict_ms += st.ms * static_cast<double>(last.frames);
        const double calls = static_cast<double>(last.frames * last.steps.size());
        per_step.push_back(predict_ms / calls);
        reps << v.name << ',' << rep << ',' << n << ',' << format_double(per_step.back()) << ','
             << format_double(last.total_ms) << '\n';
      }
      std::vector<double> sorted = per_step;
      std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2), sorted.end());
      double median = sorted[sorted.size() / 2];
      if (sorted.size() % 2 == 0) {
        const double lower = *std::max_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2));
        median = 0.5 * (median + lower);
      }
      RunConfig timed = v.cfg;
      timed.timing = true;
      const ResultRow row = row_for(timed, {order, k, snr}, 0, last.errors, last.bits, last.mse,
                                    last.eff_snr, median);
      csv_file << format_row(row) << '\n';
      log << v.name << ": " << n << " elements, median " << format_double(median)
          << " ms per reverse step over " << cfg.bench_reps << " repetitions\n";
    }
    return 0;
  });
}

int cmd_train(const RunConfig& cfg, std::ostream& log) {
  return guarded(log, cfg.out, [&](std::ofstream*&) {
    validate(cfg);
    const NoiseSchedule sched = build_schedule(cfg);
    std::vector<Carrier> dataset;
    static const Pattern patterns[] = {Pattern::gradient, Pattern::checker, Pattern::gaussian_blob};
    for (int i = 0; i < cfg.train_carriers; ++i) {
      RunConfig one = cfg;
      one.carrier = "synth";
      one.pattern = to_string(patterns[i % 3]);
      one.carrier_seed = cfg.carrier_seed + static_cast<std::uint64_t>(i);
      dataset.push_back(build_carrier(one));
    }
    const auto start = std::chrono::steady_clock::now();
    const TrainResult result = train_mlp(dataset, cfg.train, sched);
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    save_checkpoint(result.predictor, cfg.out);

    std::ofstream loss = open_csv(sidecar(cfg.out, ".loss.csv"), "step,loss");
    const auto& trace = result.loss_trace;
    for (std::size_t end = 100; end <= trace.size(); end += 100) {
      double sum = 0.0;
      for (std::size_t i = end - 100; i < end; ++i) sum += trace[i];
      loss << end << ',' << format_double(sum / 100.0) << '\n';
    }
    std::vector<int> steps;
    for (int t = 1; t <= sched.steps(); t += std::max(1, sched.steps() / 8)) steps.push_back(t);
    const double mse = heldout_mse(result.predictor, dataset, sched, steps, 16, derive_seed(cfg.seed, 0, 77));
    log << "trained " << cfg.train.steps << " steps in " << std::fixed << std::setprecision(1) << seconds
        << " s; held-out MSE " << std::defaultfloat << mse << "; checkpoint " << cfg.out << '\n';
    return 0;
  });
}

int cmd_verify(const RunConfig& cfg, std::ostream& log) {
  return guarded(log, cfg.out, [&](std::ofstream*&) {
    Setup s = setup(cfg);
    nlohmann::json report = nlohmann::json::array();
    bool all_pass = true;
    auto add = [&](const std::string& check, bool pass, double measured, double threshold) {
      report.push_back({{"check", check},
                        {"status", pass ? "PASS" : "FAIL"},
                        {"measured", std::isfinite(measured) ? nlohmann::json(measured) : nlohmann::json(format_double(measured))},
                        {"threshold", threshold}});
      all_pass = all_pass && pass;
      log << (pass ? "PASS " : "FAIL ") << check << "  measured " << format_double(measured)
          << "  threshold " << format_double(threshold) << '\n';
    };

    for (double k : cfg.rician_k) {
      for (double snr : cfg.snr_db) {
        const std::string tag = "k=" + format_double(k) + " snr=" + format_double(snr);
        const ChannelState ch = draw_channel(s.carrier.size() / 2, k, snr_to_sigma(snr),
                                             derive_seed(cfg.seed, 0, stream::fading));
        const std::vector<double> noise = effective_noise(ch);
        MatchOptions opts{cfg.match_policy, cfg.carrier_scale, cfg.clamp_floor};
        const int t = cfg.t_star ? *cfg.t_star
                                 : designated_step(s.sched, noise, cfg.match_policy, 0.01, cfg.step_quantile);
        const MatchedSchedule ms = match_to_channel(s.sched, t, noise, opts);
        const MatchingReport r = verify_matching(ms, s.carrier.data, cfg.verify_trials, cfg.seed);
        add("variance " + tag, r.variance_ok(), r.mean_variance_deviation, 0.02);
        add("mean " + tag, r.mean_ok(), r.aligned_mean_residual, 0.01);
        add("ks " + tag, r.ks_ok(), r.ks_statistic, r.ks_critical);
      }
    }

    // Composition of exact inverses: oracle, noise-free channel.
    for (int order : cfg.orders) {
      LinkConfig link = link_for(cfg, order, kAwgnRicianK, std::numeric_limits<double>::infinity(),
                                 s.carrier, s.sched, nullptr);
      const BitBlock bits = trial_bits(cfg.seed, 0, frame_capacity_bits(link) * 2);
      const RecoveryReport r = end_to_end(bits, link);
      add("exact inversion M=" + std::to_string(order), r.errors == 0, r.ber, 0.0);
    }

    const std::string json_path = cfg.out;
    if (std::filesystem::path(json_path).has_parent_path())
      std::filesystem::create_directories(std::filesystem::path(json_path).parent_path());
    std::ofstream js(json_path, std::ios::trunc);
    if (!js) throw ConfigError("cannot write " + json_path);
    js << report.dump(2) << '\n';
    log << (all_pass ? "verify: all checks passed" : "verify: FAILED") << " (" << report.size()
        << " checks, report " << json_path << ")\n";
    return all_pass ? 0 : 1;
  });
}

}  // namespace dsrdm
