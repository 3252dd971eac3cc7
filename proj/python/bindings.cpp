#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "dsrdm/errors.hpp"
#include "dsrdm/harness.hpp"

namespace py = pybind11;
using namespace dsrdm;

namespace {

BitBlock to_bits(const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& a) {
  const auto* p = a.data();
  BitBlock b(p, p + a.size());
  for (Bit v : b)
    if (v > 1) throw InvalidArgument("bits must be 0 or 1");
  return b;
}

py::array_t<std::uint8_t> from_bits(const BitBlock& b) {
  return py::array_t<std::uint8_t>(static_cast<py::ssize_t>(b.size()), b.data());
}

py::array_t<double> from_tensor(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  return py::array_t<double>(shape, t.values().data());
}

RunConfig config_from(const py::dict& settings) {
  RunConfig cfg;
  for (const auto& [k, v] : settings) apply_setting(cfg, py::str(k), py::str(v));
  return cfg;
}

py::dict report_dict(const RecoveryReport& r) {
  py::list steps;
  for (const StepReport& s : r.steps) {
    py::dict d;
    d["step"] = s.step;
    d["bits"] = s.bits;
    d["errors"] = s.errors;
    d["ber"] = s.ber;
    d["mse"] = s.mse;
    d["eff_snr"] = s.eff_snr;
    d["analytic_ber"] = s.analytic_ber;
    steps.append(d);
  }
  py::dict d;
  d["bits"] = r.bits;
  d["errors"] = r.errors;
  d["ber"] = r.ber;
  d["mse"] = r.mse;
  d["eff_snr"] = r.eff_snr;
  d["analytic_ber"] = r.analytic_ber;
  d["frames"] = r.frames;
  d["discarded"] = r.discarded;
  d["clamped"] = r.clamped;
  d["steps"] = steps;
  return d;
}

// Commands write through std::ostream; the log is returned with the code.
template <int (*Cmd)(const RunConfig&, std::ostream&)>
py::tuple run_command(const py::dict& settings) {
  std::ostringstream log;
  int rc;
  try {
    const RunConfig cfg = config_from(settings);
    py::gil_scoped_release release;
    rc = Cmd(cfg, log);
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << '\n';
    rc = 2;
  }
  return py::make_tuple(rc, log.str());
}

}  // namespace

PYBIND11_MODULE(_dsrdm, m) {
  m.doc() = "Diffusion-shaped signal embedding: modem, channel, schedule matching and link runs";

  // Translators are tried newest first, so the base class goes first.
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<MatchInfeasible>(m, "MatchInfeasible", PyExc_ValueError);
  py::register_exception<StageError>(m, "StageError", PyExc_RuntimeError);

  m.def("modulate", [](const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& bits, int order) {
    const SymbolBlock s = modulate(to_bits(bits), order);
    return s.symbols;
  }, py::arg("bits"), py::arg("order"));

  m.def("demodulate", [](const std::vector<Complex>& symbols, int order) {
    return from_bits(demodulate(SymbolBlock{symbols, order}));
  }, py::arg("symbols"), py::arg("order"));

  m.def("exact_qam_ber", &exact_qam_ber, py::arg("order"), py::arg("snr_linear"));
  m.def("analytic_qam_ber", &analytic_qam_ber, py::arg("order"), py::arg("snr_linear"));

  m.def("alpha_bar", [](int steps, double beta_start, double beta_end) {
    const NoiseSchedule s = linear_schedule(steps, beta_start, beta_end);
    std::vector<double> out;
    for (int t = 0; t <= steps; ++t) out.push_back(s.alpha_bar(t));
    return out;
  }, py::arg("steps"), py::arg("beta_start"), py::arg("beta_end"),
     "alpha_bar for t = 0..steps (index 0 is 1).");

  m.def("match_to_channel", [](int steps, double beta_start, double beta_end, int step,
                               const std::vector<double>& noise, bool clamp) {
    MatchOptions opts;
    opts.policy = clamp ? MatchPolicy::clamp : MatchPolicy::strict;
    const MatchedSchedule ms = match_to_channel(linear_schedule(steps, beta_start, beta_end), step, noise, opts);
    py::dict d;
    d["alpha_bar_p"] = ms.alpha_bar_p;
    d["alpha_bar"] = ms.alpha_bar;
    d["carrier_scale"] = ms.carrier_scale;
    d["clamped"] = ms.clamped_count;
    return d;
  }, py::arg("steps"), py::arg("beta_start"), py::arg("beta_end"), py::arg("step"), py::arg("noise"),
     py::arg("clamp") = false);

  m.def("synth_carrier", [](int size, const std::string& pattern, std::uint64_t seed) {
    return from_tensor(synth_carrier(size, parse_pattern(pattern), seed).data);
  }, py::arg("size"), py::arg("pattern") = "gaussian-blob", py::arg("seed") = 7);

  m.def("run_link", [](const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& bits,
                       const py::dict& settings) {
    const RunConfig cfg = config_from(settings);
    validate(cfg);
    const Carrier carrier = build_carrier(cfg);
    const NoiseSchedule sched = build_schedule(cfg);
    const auto pred = load_predictor(cfg, sched);
    const LinkConfig link = link_for(cfg, cfg.orders.front(), cfg.rician_k.front(), cfg.snr_db.front(),
                                     carrier, sched, pred.get());
    const BitBlock b = to_bits(bits);
    RecoveryReport r;
    {
      py::gil_scoped_release release;
      r = end_to_end(b, link);
    }
    py::dict d = report_dict(r);
    d["recovered"] = from_bits(r.recovered);
    return d;
  }, py::arg("bits"), py::arg("settings") = py::dict(),
     "One end-to-end run. Settings use the config-file keys; the first "
     "modulation order, Rician K and SNR are used.");

  m.def("sweep_snr", &run_command<cmd_sweep_snr>, py::arg("settings"));
  m.def("sweep_steps", &run_command<cmd_sweep_steps>, py::arg("settings"));
  m.def("bench", &run_command<cmd_bench>, py::arg("settings"));
  m.def("train", &run_command<cmd_train>, py::arg("settings"));
  m.def("verify", &run_command<cmd_verify>, py::arg("settings"));
}
