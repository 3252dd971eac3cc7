#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "dsrdm/errors.hpp"
#include "dsrdm/harness.hpp"

namespace {

struct Overrides {
  std::string config;
  std::string seed, out, mod, snr, rician_k, mode, predictor;
  bool timing = false;
  bool allow_mismatch = false;
  std::vector<std::string> sets;
};

void add_common(CLI::App* sub, Overrides& o) {
  sub->add_option("--config", o.config, "key = value configuration file");
  sub->add_option("--seed", o.seed, "master seed");
  sub->add_option("--out", o.out, "output path");
  sub->add_option("--mod", o.mod, "modulation orders, e.g. 16 or 4,16,256");
  sub->add_option("--snr", o.snr, "SNR grid in dB: lo:hi:step or a comma list");
  sub->add_option("--rician-k", o.rician_k, "Rician K factors; inf for AWGN");
  sub->add_option("--mode", o.mode, "single or multi");
  sub->add_option("--predictor", o.predictor, "oracle or a checkpoint path");
  sub->add_flag("--timing", o.timing, "record wall-clock ms (CSV no longer reproducible)");
  sub->add_flag("--allow-fingerprint-mismatch", o.allow_mismatch,
                "accept a checkpoint trained on a different schedule");
  sub->add_option("--set", o.sets, "extra key=value override (repeatable)");
}

dsrdm::RunConfig resolve(const Overrides& o) {
  dsrdm::RunConfig cfg;
  if (!o.config.empty()) dsrdm::apply_config_file(cfg, o.config);
  // Flags override the file.
  const std::pair<const char*, const std::string*> flags[] = {
      {"seed", &o.seed}, {"out", &o.out},   {"mod", &o.mod},   {"snr", &o.snr},
      {"rician_k", &o.rician_k}, {"mode", &o.mode}, {"predictor", &o.predictor}};
  for (const auto& [key, value] : flags)
    if (!value->empty()) dsrdm::apply_setting(cfg, key, *value);
  for (const auto& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw dsrdm::ConfigError("--set expects key=value, got '" + kv + "'");
    dsrdm::apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.timing) cfg.timing = true;
  if (o.allow_mismatch) cfg.allow_fingerprint_mismatch = true;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diffusion-shaped signal embedding over fading channels"};
  app.require_subcommand(1);
  Overrides o;
  using Command = int (*)(const dsrdm::RunConfig&, std::ostream&);
  const std::pair<const char*, std::pair<const char*, Command>> commands[] = {
      {"sweep-snr", {"BER against SNR for every (M, K, SNR) grid point", dsrdm::cmd_sweep_snr}},
      {"sweep-steps", {"per-step BER and MSE across the multi-step window", dsrdm::cmd_sweep_steps}},
      {"bench", {"reverse-step latency, image against latent carrier", dsrdm::cmd_bench}},
      {"train", {"train the MLP noise predictor and write a checkpoint", dsrdm::cmd_train}},
      {"verify", {"statistical checks of channel matching plus exact inversion", dsrdm::cmd_verify}},
  };
  std::vector<std::pair<CLI::App*, Command>> subs;
  for (const auto& [name, info] : commands) {
    CLI::App* sub = app.add_subcommand(name, info.first);
    add_common(sub, o);
    subs.emplace_back(sub, info.second);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  dsrdm::RunConfig cfg;
  try {
    cfg = resolve(o);
  } catch (const dsrdm::Error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  }
  for (const auto& [sub, run] : subs)
    if (sub->parsed()) return run(cfg, std::cerr);
  return 2;
}
