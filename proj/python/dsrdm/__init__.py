"""Python access to the diffusion-shaped signal embedding library.

Commands take a dict of config-file settings and return (exit_code, log).
"""

from ._dsrdm import (
    ConfigError,
    Error,
    MatchInfeasible,
    StageError,
    alpha_bar,
    analytic_qam_ber,
    bench,
    demodulate,
    exact_qam_ber,
    match_to_channel,
    modulate,
    run_link,
    sweep_snr,
    sweep_steps,
    synth_carrier,
    train,
    verify,
)

__all__ = [
    "ConfigError",
    "Error",
    "MatchInfeasible",
    "StageError",
    "alpha_bar",
    "analytic_qam_ber",
    "bench",
    "demodulate",
    "exact_qam_ber",
    "match_to_channel",
    "modulate",
    "run_link",
    "sweep_snr",
    "sweep_steps",
    "synth_carrier",
    "train",
    "verify",
]
