#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "dsrdm/denoiser.hpp"
#include "dsrdm/errors.hpp"
#include "dsrdm/rng.hpp"

using namespace dsrdm;

namespace {

std::vector<char> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::filesystem::path temp_file(const char* name) { return std::filesystem::temp_directory_path() / name; }

}  // namespace

TEST_CASE("timestep embedding layout") {
  const Eigen::VectorXd e = timestep_embedding(7, 8);
  REQUIRE(e.size() == 8);
  CHECK(e(0) == doctest::Approx(std::sin(7.0)));
  CHECK(e(4) == doctest::Approx(std::cos(7.0)));
  CHECK(e(1) == doctest::Approx(std::sin(7.0 * std::pow(10000.0, -0.25))));
}

TEST_CASE("oracle predictor recovers the injected noise exactly") {
  const NoiseSchedule s = linear_schedule(50, 1e-3, 0.05);
  Rng rng(2);
  Tensor x0({32}), eps({32});
  for (std::size_t i = 0; i < 32; ++i) {
    x0[i] = rng.uniform() * 2 - 1;
    eps[i] = rng.normal();
  }
  const OraclePredictor oracle(x0, s);
  for (int t : {1, 25, 50}) {
    const Tensor got = oracle.predict(forward_sample(x0, eps, t, s), t);
    for (std::size_t i = 0; i < 32; ++i) CHECK(got[i] == doctest::Approx(eps[i]).epsilon(1e-9));
  }
  CHECK_THROWS(oracle.predict(x0, 0));
  CHECK_THROWS(oracle.predict(x0, 51));
}

TEST_CASE("MLP gradient matches central differences on a micro network") {
  // 3 inputs + 2 embedding -> 2 hidden -> 3 outputs: 10 + 2 + 6 + 3 = 21 parameters.
  const NoiseSchedule s = linear_schedule(10, 1e-3, 0.1);
  const MlpPredictor net(3, {2}, 2, s.fingerprint(), 13);
  CHECK(net.parameter_count() == 21);

  Rng rng(4);
  Eigen::MatrixXd x(3, 4), eps(3, 4);
  for (int i = 0; i < x.size(); ++i) {
    x(i) = rng.normal();
    eps(i) = rng.normal();
  }
  const std::vector<int> steps{1, 3, 7, 10};
  Eigen::VectorXd grad;
  net.loss_and_gradient(x, steps, eps, &grad);
  const Eigen::VectorXd p0 = net.parameters();
  REQUIRE(grad.size() == p0.size());

  MlpPredictor probe = net;
  const double h = 1e-6;
  for (Eigen::Index k = 0; k < p0.size(); ++k) {
    Eigen::VectorXd p = p0;
    p(k) += h;
    probe.set_parameters(p);
    const double up = probe.loss_and_gradient(x, steps, eps, nullptr);
    p(k) -= 2 * h;
    probe.set_parameters(p);
    const double down = probe.loss_and_gradient(x, steps, eps, nullptr);
    const double fd = (up - down) / (2 * h);
    CAPTURE(k);
    CHECK(std::abs(fd - grad(k)) <= 1e-4 * std::max(std::abs(fd), std::abs(grad(k))) + 1e-9);
  }
}

TEST_CASE("training lowers the loss on a tiny problem") {
  const NoiseSchedule s = linear_schedule(8, 1e-2, 0.3);
  std::vector<Carrier> data{synth_carrier(8, Pattern::gradient, 0), synth_carrier(8, Pattern::checker, 1)};
  TrainConfig cfg;
  cfg.hidden = {64};
  cfg.embed_dim = 8;
  cfg.steps = 400;
  const TrainResult r = train_mlp(data, cfg, s);
  REQUIRE(r.loss_trace.size() == 400);
  double head = 0, tail = 0;
  for (int i = 0; i < 50; ++i) {
    head += r.loss_trace[i];
    tail += r.loss_trace[399 - i];
  }
  CHECK(tail < head);
}

TEST_CASE("non-finite training loss is reported") {
  const NoiseSchedule s = linear_schedule(8, 1e-2, 0.3);
  std::vector<Carrier> data{synth_carrier(8, Pattern::gradient, 0)};
  TrainConfig cfg;
  cfg.hidden = {16};
  cfg.embed_dim = 4;
  cfg.steps = 50;
  cfg.learning_rate = 1e300;
  cfg.grad_clip = 1e300;
  CHECK_THROWS_AS(train_mlp(data, cfg, s), Error);
}

TEST_CASE("checkpoint save and load is bitwise") {
  const NoiseSchedule s = linear_schedule(16, 1e-3, 0.1);
  const MlpPredictor net(12, {8, 5}, 4, s.fingerprint(), 21);
  const auto a = temp_file("dsrdm_ck_a.bin");
  const auto b = temp_file("dsrdm_ck_b.bin");
  save_checkpoint(net, a);
  const MlpPredictor back = load_checkpoint(a, s.fingerprint());
  CHECK(back.parameters() == net.parameters());
  CHECK(back.embed_dim() == net.embed_dim());
  CHECK(back.input_size() == net.input_size());
  save_checkpoint(back, b);
  CHECK(read_bytes(a) == read_bytes(b));

  CHECK_THROWS_AS(load_checkpoint(a, s.fingerprint() + 1), FingerprintMismatch);
  CHECK_NOTHROW(load_checkpoint(a, s.fingerprint() + 1, true));

  // Truncation and trailing garbage are both rejected.
  auto bytes = read_bytes(a);
  {
    std::ofstream out(b, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 5));
  }
  CHECK_THROWS_AS(load_checkpoint(b), CheckpointError);
  {
    std::ofstream out(b, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.put('x');
  }
  CHECK_THROWS_AS(load_checkpoint(b), CheckpointError);
  bytes[0] = 'X';
  {
    std::ofstream out(b, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  CHECK_THROWS_AS(load_checkpoint(b), CheckpointError);
  std::filesystem::remove(a);
  std::filesystem::remove(b);
}

TEST_CASE("predictor rejects mismatched input size") {
  const NoiseSchedule s = linear_schedule(4, 1e-3, 0.1);
  const MlpPredictor net(6, {4}, 2, s.fingerprint(), 1);
  CHECK_THROWS(net.predict(Tensor({5}), 1));
  const Tensor out = net.predict(Tensor({6}, 0.5), 2);
  CHECK(out.size() == 6);
}
