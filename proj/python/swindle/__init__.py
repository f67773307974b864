"""Coupled-chain variance reduction for Hamiltonian Monte Carlo."""

from ._swindle import (
    ChainTrace,
    ConfigError,
    CoupledTraces,
    Gaussian,
    LogisticRegression,
    NumericalError,
    Target,
    control_variate_chain,
    ess,
    predict_vr_ess,
    python_target,
    rhat,
    run_chain,
    run_command,
    run_cva,
)

__all__ = [
    "ChainTrace",
    "ConfigError",
    "CoupledTraces",
    "Gaussian",
    "LogisticRegression",
    "NumericalError",
    "Target",
    "control_variate_chain",
    "ess",
    "predict_vr_ess",
    "python_target",
    "rhat",
    "run_chain",
    "run_command",
    "run_cva",
]
