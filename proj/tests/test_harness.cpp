#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "dsrdm/errors.hpp"
#include "dsrdm/harness.hpp"

using namespace dsrdm;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const char* name) {
  const fs::path dir = fs::temp_directory_path() / "dsrdm_harness_test";
  fs::create_directories(dir);
  return dir / name;
}

RunConfig quick() {
  RunConfig c;
  c.carrier_size = 8;
  c.schedule_steps = 32;
  c.beta_start = 1e-3;
  c.beta_end = 0.2;
  c.snr_db = {0.0, 10.0};
  c.trials = 3;
  c.bits_per_trial = 3000;
  return c;
}

}  // namespace

TEST_CASE("Wilson interval against reference values") {
  auto [lo, hi] = wilson_interval(0, 10);
  CHECK(lo == 0.0);
  CHECK(hi == doctest::Approx(0.27753279986288926).epsilon(1e-12));
  std::tie(lo, hi) = wilson_interval(5, 100);
  CHECK(lo == doctest::Approx(0.021543679154367966).epsilon(1e-12));
  CHECK(hi == doctest::Approx(0.11175046923191914).epsilon(1e-12));
  std::tie(lo, hi) = wilson_interval(50, 100);
  CHECK(lo == doctest::Approx(0.4038315303659956).epsilon(1e-12));
  std::tie(lo, hi) = wilson_interval(1, 1000000);
  CHECK(lo == doctest::Approx(1.7652457674537176e-07).epsilon(1e-9));
  CHECK(hi == doctest::Approx(5.664911804311445e-06).epsilon(1e-9));
}

TEST_CASE("doubles format as shortest round-trip text") {
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(10.0) == "10");
  CHECK(format_double(kAwgnRicianK) == "inf");
  const double v = 0.1 + 0.2;
  CHECK(std::stod(format_double(v)) == v);
}

TEST_CASE("result rows round trip through CSV text") {
  ResultRow r;
  r.fingerprint = 0x00ab00cd00ef0012ULL;
  r.snr_db = 12.5;
  r.step = 17;
  r.ber = 1.0 / 3.0;
  r.ber_lo = 0.3;
  r.ber_hi = 0.37;
  r.mse = 1e-30;
  r.eff_snr = std::numeric_limits<double>::infinity();
  r.ms = 0.0;
  r.seed = 42;
  const std::string line = format_row(r);
  CHECK(line.rfind("00ab00cd00ef0012,", 0) == 0);
  CHECK(parse_row(line) == r);
  CHECK_THROWS_AS(parse_row("1,2,3"), InvalidArgument);
  const std::string header = kCsvHeader, truncated = kTruncatedRow;
  CHECK(std::count(header.begin(), header.end(), ',') == std::count(truncated.begin(), truncated.end(), ','));
}

TEST_CASE("SNR grids") {
  CHECK(parse_snr_grid("0:20:5") == std::vector<double>{0, 5, 10, 15, 20});
  CHECK(parse_snr_grid("3, 7") == std::vector<double>{3, 7});
  CHECK(parse_snr_grid("inf").front() == kAwgnRicianK);
  CHECK_THROWS_AS(parse_snr_grid("0:20"), ConfigError);
  CHECK_THROWS_AS(parse_snr_grid("0:20:0"), ConfigError);
}

TEST_CASE("config files and overrides") {
  const fs::path p = scratch("cfg.txt");
  {
    std::ofstream out(p);
    out << "# sweep\nmode = multi\nmod = 4,16\nsnr = 0:10:5\nrician_k = inf, 3\n"
           "schedule_T = 32   # short\nwindow = 20:32\n";
  }
  RunConfig c = load_config(p);
  CHECK(c.mode == FrameMode::multi);
  CHECK(c.orders == std::vector<int>{4, 16});
  CHECK(c.snr_db == std::vector<double>{0, 5, 10});
  CHECK(c.rician_k.size() == 2);
  REQUIRE(c.window.has_value());
  CHECK(c.window->lo == 20);
  apply_setting(c, "seed", "77");
  CHECK(c.seed == 77);
  CHECK_THROWS_AS(apply_setting(c, "colour", "red"), ConfigError);
  CHECK_THROWS_AS(apply_setting(c, "trials", "many"), ConfigError);
  {
    std::ofstream out(p);
    out << "mode = multi\nbogus line\n";
  }
  try {
    load_config(p);
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }
}

TEST_CASE("validation rejects impossible settings") {
  RunConfig c = quick();
  CHECK_NOTHROW(validate(c));
  c.orders = {32};
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = quick();
  c.window = StepWindow{10, 40};
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = quick();
  c.predictor = "/nonexistent/checkpoint.bin";
  CHECK_THROWS_AS(validate(c), ConfigError);
}

TEST_CASE("fingerprint follows result-affecting settings only") {
  RunConfig a = quick();
  RunConfig b = a;
  b.out = "elsewhere.csv";
  b.timing = true;
  CHECK(fingerprint(a) == fingerprint(b));
  b.seed = 2;
  CHECK(fingerprint(a) != fingerprint(b));
  b = a;
  b.snr_db = {0.0, 10.5};
  CHECK(fingerprint(a) != fingerprint(b));
}

TEST_CASE("identical seeds give byte-identical sweep CSVs") {
  RunConfig c = quick();
  c.orders = {4, 16};
  c.out = scratch("a.csv").string();
  std::ostringstream log;
  REQUIRE(cmd_sweep_snr(c, log) == 0);
  c.out = scratch("b.csv").string();
  REQUIRE(cmd_sweep_snr(c, log) == 0);
  const std::string a = slurp(scratch("a.csv"));
  CHECK(a == slurp(scratch("b.csv")));
  CHECK(slurp(scratch("a.csv.meta.csv")) == slurp(scratch("b.csv.meta.csv")));
  // Header plus one row per (M, SNR).
  CHECK(std::count(a.begin(), a.end(), '\n') == 5);

  c.seed = 9;
  c.out = scratch("c.csv").string();
  REQUIRE(cmd_sweep_snr(c, log) == 0);
  CHECK(a != slurp(scratch("c.csv")));
}

TEST_CASE("thread count does not change results") {
  RunConfig c = quick();
  c.out = scratch("t1.csv").string();
  std::ostringstream log;
  setenv("DSRDM_THREADS", "1", 1);
  REQUIRE(cmd_sweep_snr(c, log) == 0);
  setenv("DSRDM_THREADS", "4", 1);
  c.out = scratch("t4.csv").string();
  REQUIRE(cmd_sweep_snr(c, log) == 0);
  unsetenv("DSRDM_THREADS");
  CHECK(slurp(scratch("t1.csv")) == slurp(scratch("t4.csv")));
}

TEST_CASE("step sweep lists the window in descending order") {
  RunConfig c = quick();
  c.mode = FrameMode::multi;
  c.snr_db = {10.0};
  c.out = scratch("steps.csv").string();
  std::ostringstream log;
  REQUIRE(cmd_sweep_steps(c, log) == 0);
  std::ifstream in(c.out);
  std::string line;
  std::getline(in, line);
  CHECK(line == kCsvHeader);
  int expected = 32, rows = 0;
  while (std::getline(in, line)) {
    CHECK(parse_row(line).step == expected--);
    ++rows;
  }
  CHECK(rows == 16);
  c.mode = FrameMode::single;
  CHECK(cmd_sweep_steps(c, log) == 2);
}

TEST_CASE("a failing stage keeps partial rows and marks truncation") {
  RunConfig c = quick();
  const NoiseSchedule sched = build_schedule(c);
  MlpPredictor broken(192, {4}, 4, sched.fingerprint(), 1);
  Eigen::VectorXd p = broken.parameters();
  p.setConstant(std::numeric_limits<double>::quiet_NaN());
  broken.set_parameters(p);
  const fs::path ck = scratch("nan.bin");
  save_checkpoint(broken, ck);
  c.predictor = ck.string();
  c.out = scratch("trunc.csv").string();
  std::ostringstream log;
  CHECK(cmd_sweep_snr(c, log) == 3);
  const std::string text = slurp(c.out);
  CHECK(text.find(kTruncatedRow) != std::string::npos);
  CHECK(log.str().find("recover") != std::string::npos);
}

TEST_CASE("configuration errors exit with code 2") {
  RunConfig c = quick();
  c.carrier_size = 12;
  std::ostringstream log;
  CHECK(cmd_sweep_snr(c, log) == 2);
  CHECK(cmd_verify(c, log) == 2);
}

TEST_CASE("verify passes on an AWGN grid") {
  RunConfig c = quick();
  c.verify_trials = 10000;
  c.out = scratch("verify.json").string();
  std::ostringstream log;
  CHECK(cmd_verify(c, log) == 0);
  const std::string js = slurp(c.out);
  CHECK(js.find("\"check\"") != std::string::npos);
  CHECK(js.find("\"threshold\"") != std::string::npos);
  CHECK(js.find("FAIL") == std::string::npos);
}
