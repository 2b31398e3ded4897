"""Analytic Ramsey likelihood with a Gaussian dephasing envelope."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .quantum import PulseSettings, ReadoutCalibration, click_probability, ramsey_phase


@dataclass(frozen=True)
class WhiteboxConfig:
    """``t2_star`` in us; ``math.inf`` switches the decay off."""

    t2_star: float = math.inf

    def __post_init__(self):
        if not self.t2_star > 0:
            raise InvalidArgumentError("t2_star must be positive (or inf)")

    def envelope(self, tau):
        if math.isinf(self.t2_star):
            return np.ones_like(np.asarray(tau, dtype=float))
        return np.exp(-((np.asarray(tau, dtype=float) / self.t2_star) ** 2))


def wb_likelihood(d: int, settings: PulseSettings, cfg: WhiteboxConfig) -> float:
    """Probability of outcome ``d`` after the sequence."""
    if d not in (0, 1):
        raise InvalidArgumentError("d must be 0 or 1")
    sign = 1 if d == 0 else -1
    return 0.5 * (1 - sign * float(cfg.envelope(settings.tau)) * math.cos(ramsey_phase(settings)))


def _z(tau, theta, cfg):
    return -cfg.envelope(tau) * np.cos(theta)


def wb_click_probability(settings: PulseSettings, cfg: WhiteboxConfig, calib: ReadoutCalibration) -> float:
    p0 = wb_likelihood(0, settings, cfg)
    return calib.pi0 * p0 + calib.pi1 * (1 - p0)


def wb_predict_grid(tau, phi, calib: ReadoutCalibration, cfg: WhiteboxConfig, f_grid) -> np.ndarray:
    f_grid = np.asarray(f_grid, dtype=float)
    if f_grid.ndim != 1 or len(f_grid) == 0:
        raise InvalidArgumentError("f_grid must be a non-empty vector")
    z = _z(tau, 2 * math.pi * f_grid * tau + phi, cfg)
    return click_probability(np.broadcast_to(z, f_grid.shape), calib)


class WhiteboxProvider:
    def __init__(self, cfg: WhiteboxConfig):
        self.cfg = cfg

    def predict_grid(self, tau, phi, calib, chi, f_grid):
        return wb_predict_grid(tau, phi, calib, self.cfg, f_grid)
