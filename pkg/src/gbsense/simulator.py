"""Noisy Ramsey simulator standing in for the NV experiment.

The simulator integrates the sequence Hamiltonian piecewise-constantly with an
exact 2x2 exponential per step. Conventions:

* Free evolution is ``pi * f * sigma_z`` (angular frequency ``2 pi f``), so the
  accumulated relative phase after a delay ``tau`` is exactly ``2 pi f tau``.
* Drive is ``(Omega/2)(Re y X + Im y Y)`` where ``y`` is the (optionally
  low-pass filtered) complex envelope and ``Omega`` makes each nominal pulse
  an ``(1 + amp_error) * pi/2`` rotation.
* The phase ``phi`` of the second pulse is a frame change: the pulse is driven
  about the axis at angle ``-phi`` and the final ``R_Z(phi)`` brings the result
  back to the frame of :func:`gbsense.quantum.u_ramsey`. With no imperfections
  the sequence unitary equals ``u_ramsey`` exactly. The frame change commutes
  with ``Z`` and does not affect populations.
* Preparation error comes from a white ``beta(t) sigma_x`` kick: per shot the
  accumulated ``X = int beta`` has variance ``A_p T_p`` and the kick is
  ``exp(-i X sigma_x)``. The resulting bit-flip probability is
  ``eps = (1 - exp(-2 A_p T_p)) / 2``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .errors import DataFormatError, InvalidArgumentError, ResolutionError
from .quantum import (
    PROJ0,
    SZ,
    NoiseOperator,
    PulseSettings,
    QubitState,
    ReadoutCalibration,
    click_probability,
    dagger,
    ramsey_phase,
    rz_batch,
    u_ramsey,
)

log = logging.getLogger(__name__)

TAIL_TIME_CONSTANTS = 30.0
EXACT_R = 2**53
MIN_PULSE_WIDTH = 1e-9  # us; finer pulses would underflow the integration step


@dataclass(frozen=True)
class NoiseConfig:
    """Classical imperfections of the simulated sensor.

    Frequencies in MHz, times in us. ``pulse_width == 0`` means impulse pulses;
    distortion only acts on finite pulses.
    """

    prep_epsilon: float = 0.0
    sigma_f: float = 0.0
    ou_amplitude: float = 0.0
    ou_tau_c: float = 1.0
    pulse_width: float = 0.0
    distortion_tau: float = 0.0
    amp_error: float = 0.0
    calib_jitter: float = 0.0

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not (math.isfinite(value) and value >= 0):
                raise InvalidArgumentError(f"{name} must be finite and non-negative, got {value}")
        if 0 < self.pulse_width < MIN_PULSE_WIDTH:
            raise InvalidArgumentError(
                f"pulse_width must be 0 (impulse) or >= {MIN_PULSE_WIDTH} us, got {self.pulse_width}"
            )
        if self.prep_epsilon >= 0.5:
            raise InvalidArgumentError("prep_epsilon must be < 1/2")
        if self.ou_amplitude > 0 and self.ou_tau_c <= 0:
            raise InvalidArgumentError("ou_tau_c must be positive when OU noise is on")

    @classmethod
    def from_prep_power(cls, a_p_t_p: float, **kwargs) -> "NoiseConfig":
        """Build a config whose preparation error comes from noise power ``A_p T_p``."""
        return cls(prep_epsilon=0.5 * (1 - math.exp(-2 * a_p_t_p)), **kwargs)

    @property
    def prep_noise_power(self) -> float:
        """``A_p T_p`` that produces ``prep_epsilon``."""
        return -0.5 * math.log1p(-2 * self.prep_epsilon)

    @property
    def t2_star(self) -> float:
        """Gaussian dephasing time implied by ``sigma_f`` (inf when zero)."""
        if self.sigma_f == 0:
            return math.inf
        return math.sqrt(2) / (2 * math.pi * self.sigma_f)

    @classmethod
    def for_t2_star(cls, t2_star: float, **kwargs) -> "NoiseConfig":
        return cls(sigma_f=math.sqrt(2) / (2 * math.pi * t2_star), **kwargs)


@dataclass(frozen=True)
class TimeGrid:
    """Piecewise-constant integration steps for one sequence.

    ``widths`` of zero mark impulse kicks. ``dt`` is the resolution used inside
    driven segments.
    """

    dt: float
    t_mid: np.ndarray
    widths: np.ndarray
    kick_x: np.ndarray = field(repr=False)
    kick_y: np.ndarray = field(repr=False)

    @property
    def n_steps(self) -> int:
        return len(self.widths)


@dataclass(frozen=True)
class NoiseRealization:
    """A batch of classical noise draws (leading axis = shot)."""

    static_detuning: np.ndarray
    dephasing_trace: np.ndarray
    prep_phase: np.ndarray

    @property
    def n_shots(self) -> int:
        return len(self.static_detuning)


@dataclass(frozen=True)
class DatasetRecord:
    settings: PulseSettings
    calib: ReadoutCalibration
    R: int
    r: int
    set_id: int = 0
    truth_fB: float = math.nan

    def __post_init__(self):
        if self.R < 1 or not (0 <= self.r <= self.R):
            raise InvalidArgumentError(f"need 0 <= r <= R and R >= 1, got r={self.r}, R={self.R}")

    @property
    def p_cl(self) -> float:
        return self.r / self.R


def _rabi_angular(config: NoiseConfig) -> float:
    """Angular Rabi frequency (rad/us) of the finite nominal pi/2 pulse."""
    return 0.5 * math.pi * (1 + config.amp_error) / config.pulse_width


def default_dt(settings: PulseSettings, config: NoiseConfig) -> float:
    if config.pulse_width == 0:
        return math.inf
    f_max = abs(settings.f_B) + 5 * config.sigma_f + 5 * config.ou_amplitude
    f_max = max(f_max, _rabi_angular(config) / (2 * math.pi), 1e-12)
    return min(config.pulse_width / 20, 1 / (50 * f_max))


def _segment(t0: float, t1: float, dt: float) -> tuple[np.ndarray, np.ndarray]:
    n = max(1, math.ceil((t1 - t0) / dt - 1e-9))
    h = (t1 - t0) / n
    return t0 + h * (np.arange(n) + 0.5), np.full(n, h)


def _lowpass_pulse(t: np.ndarray, start: float, stop: float, tau_d: float) -> np.ndarray:
    if tau_d == 0:
        return ((t >= start) & (t < stop)).astype(float)
    y = np.zeros_like(t)
    on = (t >= start) & (t <= stop)
    y[on] = -np.expm1(-(t[on] - start) / tau_d)
    after = t > stop
    y[after] = -np.expm1(-(stop - start) / tau_d) * np.exp(-(t[after] - stop) / tau_d)
    return y


def build_time_grid(settings: PulseSettings, config: NoiseConfig, dt: float | None = None) -> TimeGrid:
    """Lay out integration steps for the whole sequence.

    Driven segments are stepped at ``dt``. Undriven free evolution without
    OU noise is diagonal, so it collapses to one exact step.
    """
    w, tau = config.pulse_width, settings.tau
    if dt is None:
        dt = default_dt(settings, config)
    if w > 0:
        if not dt > 0:
            raise InvalidArgumentError("dt must be positive")
        if dt > w / 10 * (1 + 1e-12):
            raise ResolutionError(f"dt={dt} too coarse for pulse_width={w}; need dt <= {w / 10}")
    tail = TAIL_TIME_CONSTANTS * config.distortion_tau if w > 0 else 0.0
    ou_on = config.ou_amplitude > 0
    mids: list[np.ndarray] = []
    widths: list[np.ndarray] = []
    kicks: list[tuple[int, float]] = []  # (step index, pulse phase)

    def add(seg):
        mids.append(seg[0])
        widths.append(seg[1])

    def add_kick(t, phase):
        kicks.append((sum(len(m) for m in mids), phase))
        add((np.array([t]), np.array([0.0])))

    def add_free(t0, t1):
        if t1 <= t0:
            return
        fine = min(t1 - t0, tail)
        if fine > 0:
            add(_segment(t0, t0 + fine, dt))
        rest0 = t0 + fine
        if t1 - rest0 <= 1e-15:
            return
        if ou_on:
            step = min(config.ou_tau_c / 20, (t1 - rest0) / 100)
            add(_segment(rest0, t1, step))
        else:
            add((np.array([0.5 * (rest0 + t1)]), np.array([t1 - rest0])))

    if w > 0:
        add(_segment(0.0, w, dt))
        add_free(w, w + tau)
        add(_segment(w + tau, 2 * w + tau, dt))
        if tail > 0:
            add(_segment(2 * w + tau, 2 * w + tau + tail, dt))
    else:
        add_kick(0.0, 0.0)
        add_free(0.0, tau)
        add_kick(tau, -settings.phi)

    t_mid = np.concatenate(mids)
    width = np.concatenate(widths)
    kick_x = np.zeros_like(width)
    kick_y = np.zeros_like(width)
    half = 0.25 * math.pi * (1 + config.amp_error)
    for idx, phase in kicks:
        kick_x[idx] = half * math.cos(phase)
        kick_y[idx] = half * math.sin(phase)
    return TimeGrid(dt=dt, t_mid=t_mid, widths=width, kick_x=kick_x, kick_y=kick_y)


def drive_angles(settings: PulseSettings, config: NoiseConfig, grid: TimeGrid) -> tuple[np.ndarray, np.ndarray]:
    """Per-step ``(a_x, a_y)`` rotation-vector components of the drive."""
    w = config.pulse_width
    if w == 0:
        return grid.kick_x.copy(), grid.kick_y.copy()
    tau_d = config.distortion_tau
    env = _lowpass_pulse(grid.t_mid, 0.0, w, tau_d) + np.exp(-1j * settings.phi) * _lowpass_pulse(
        grid.t_mid, w + settings.tau, 2 * w + settings.tau, tau_d
    )
    half_rabi = 0.5 * _rabi_angular(config)
    return half_rabi * env.real * grid.widths, half_rabi * env.imag * grid.widths


def sample_noise_realization(
    config: NoiseConfig, grid: TimeGrid, rng: np.random.Generator, n_shots: int = 1
) -> NoiseRealization:
    """Draw ``n_shots`` independent classical noise histories on ``grid``."""
    static = config.sigma_f * rng.standard_normal(n_shots) if config.sigma_f > 0 else np.zeros(n_shots)
    trace = np.zeros((n_shots, grid.n_steps))
    if config.ou_amplitude > 0:
        s, tc = config.ou_amplitude, config.ou_tau_c
        x = s * rng.standard_normal(n_shots)
        trace[:, 0] = x
        gaps = np.diff(grid.t_mid)
        decay = np.exp(-gaps / tc)
        kick = s * np.sqrt(-np.expm1(-2 * gaps / tc))
        xi = rng.standard_normal((n_shots, len(gaps)))
        for k in range(len(gaps)):
            x = x * decay[k] + kick[k] * xi[:, k]
            trace[:, k + 1] = x
    if config.prep_epsilon > 0:
        prep = math.sqrt(config.prep_noise_power) * rng.standard_normal(n_shots)
    else:
        prep = np.zeros(n_shots)
    return NoiseRealization(static, trace, prep)


def sample_ou_path(amplitude: float, tau_c: float, dt: float, n_steps: int, rng: np.random.Generator) -> np.ndarray:
    """Stationary OU path on a uniform grid (exact transition density)."""
    grid = TimeGrid(dt, dt * np.arange(n_steps), np.full(n_steps, dt), np.zeros(n_steps), np.zeros(n_steps))
    cfg = NoiseConfig(ou_amplitude=amplitude, ou_tau_c=tau_c)
    return sample_noise_realization(cfg, grid, rng).dephasing_trace[0]


def _prep_kicks(phase: np.ndarray) -> np.ndarray:
    c, s = np.cos(phase), np.sin(phase)
    out = np.empty(phase.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = c
    out[..., 0, 1] = -1j * s
    out[..., 1, 0] = -1j * s
    out[..., 1, 1] = c
    return out


def propagate_batch(
    settings: PulseSettings, config: NoiseConfig, realization: NoiseRealization, grid: TimeGrid
) -> np.ndarray:
    """Sequence unitaries for every shot in ``realization``, shape ``(n, 2, 2)``."""
    if realization.dephasing_trace.shape[1] != grid.n_steps:
        raise InvalidArgumentError("noise trace does not match the time grid")
    ax, ay = drive_angles(settings, config, grid)
    detuning = settings.f_B + realization.static_detuning[:, None] + realization.dephasing_trace
    az = math.pi * detuning * grid.widths[None, :]
    chain = kernels.su2_chain(ax, ay, np.ascontiguousarray(az))
    frame = rz_batch(np.array(settings.phi))
    return frame @ chain @ _prep_kicks(realization.prep_phase)


def propagate(
    settings: PulseSettings, config: NoiseConfig, realization: NoiseRealization, grid: TimeGrid
) -> np.ndarray:
    """Total-sequence unitary for a single-shot realization."""
    if realization.n_shots != 1:
        raise InvalidArgumentError("propagate takes one realization; use propagate_batch")
    return propagate_batch(settings, config, realization, grid)[0]


def _shot_unitaries(settings, config, n_shots, rng, dt=None, chunk=4096):
    grid = build_time_grid(settings, config, dt)
    parts = []
    done = 0
    while done < n_shots:
        n = min(chunk, n_shots - done)
        parts.append(propagate_batch(settings, config, sample_noise_realization(config, grid, rng, n), grid))
        done += n
    return np.concatenate(parts)


def mc_expectation_z(
    settings: PulseSettings, config: NoiseConfig, n_shots: int, rng: np.random.Generator, dt: float | None = None
) -> tuple[float, float]:
    """Monte-Carlo ``<Z>`` from ``|0><0|``; returns ``(mean, standard error)``."""
    if n_shots < 100:
        raise InvalidArgumentError("n_shots must be >= 100")
    u = _shot_unitaries(settings, config, n_shots, rng, dt)
    z = np.abs(u[:, 0, 0]) ** 2 - np.abs(u[:, 1, 0]) ** 2
    return float(z.mean()), float(z.std(ddof=1) / math.sqrt(n_shots))


def analytic_expectation_z(settings: PulseSettings | None, config: NoiseConfig, *, tau=None, theta=None):
    """Closed-form ``<Z>`` for impulse pulses.

    Covers preparation error, amplitude error, quasi-static and OU dephasing.
    Array arguments ``tau``/``theta`` broadcast; otherwise taken from ``settings``.
    """
    if config.pulse_width > 0:
        raise InvalidArgumentError("closed form only exists for impulse pulses")
    if tau is None:
        tau = settings.tau
    if theta is None:
        theta = ramsey_phase(settings)
    tau = np.asarray(tau, dtype=float)
    a = 0.5 * math.pi * (1 + config.amp_error)
    var_phase = (2 * math.pi * config.sigma_f * tau) ** 2
    if config.ou_amplitude > 0:
        tc = config.ou_tau_c
        x = tau / tc
        var_phase = var_phase + (2 * math.pi * config.ou_amplitude * tc) ** 2 * 2 * (x + np.expm1(-x))
    contrast = np.exp(-0.5 * var_phase)
    z = (1 - 2 * config.prep_epsilon) * (math.cos(a) ** 2 - math.sin(a) ** 2 * contrast * np.cos(theta))
    return float(z) if np.ndim(z) == 0 else z


@dataclass(frozen=True)
class NoiseOperatorEstimate(NoiseOperator):
    """Monte-Carlo noise operator with the per-shot operators kept for error bars.

    ``shot_conjugates[k] = Ut_k^dag Z Ut_k`` with ``Ut_k = U_total,k U_Ramsey^dag``.
    """

    shot_conjugates: np.ndarray = field(default=None, repr=False, compare=False)

    def expectation(self, rho_tilde: np.ndarray) -> tuple[float, float]:
        """``Re tr(V rho_tilde Z)`` and its standard error over shots."""
        rho_tilde = rho_tilde.rho if isinstance(rho_tilde, QubitState) else np.asarray(rho_tilde)
        per_shot = np.trace(SZ @ self.shot_conjugates @ rho_tilde @ SZ, axis1=1, axis2=2).real
        n = len(per_shot)
        return float(per_shot.mean()), float(per_shot.std(ddof=1) / math.sqrt(n))


def noise_operator_oracle(
    settings: PulseSettings, config: NoiseConfig, n_shots: int, rng: np.random.Generator, dt: float | None = None
) -> NoiseOperatorEstimate:
    """Brute-force ``V_Z = Z^-1 <Ut^dag Z Ut>_c`` with ``Ut = U_total U_Ramsey^dag``.

    With this frame, ``tr(V_Z rho_tilde Z)`` equals the sequence expectation
    for every initial state.
    """
    if n_shots < 1000:
        raise InvalidArgumentError("n_shots must be >= 1000")
    ur = u_ramsey(settings)
    ut = _shot_unitaries(settings, config, n_shots, rng, dt) @ dagger(ur)
    conj = dagger(ut) @ SZ @ ut
    v = SZ @ conj.mean(axis=0)
    return NoiseOperatorEstimate(matrix=v, shot_conjugates=conj)


def mc_expectation_z_from(
    rho0: np.ndarray, settings: PulseSettings, config: NoiseConfig, n_shots: int, rng: np.random.Generator
) -> tuple[float, float]:
    """Monte-Carlo ``<Z>`` for an arbitrary initial density matrix."""
    u = _shot_unitaries(settings, config, n_shots, rng)
    z = np.einsum("kij,kji->k", u @ rho0 @ dagger(u), np.broadcast_to(SZ, u.shape)).real
    return float(z.mean()), float(z.std(ddof=1) / math.sqrt(n_shots))


def jittered_calibration(calib: ReadoutCalibration, jitter: float, rng: np.random.Generator) -> ReadoutCalibration:
    if jitter == 0:
        return calib
    raw = np.array([calib.pi0, calib.pi1]) * (1 + jitter * rng.standard_normal(2))
    clipped = np.clip(raw, 0.0, 1.0)
    if np.any(clipped != raw):
        log.warning("calibration jitter pushed (pi0, pi1)=%s outside [0, 1]; clamped", raw)
    return ReadoutCalibration(float(clipped[0]), float(clipped[1]))


def simulate_batch(
    settings: PulseSettings,
    config: NoiseConfig,
    calib: ReadoutCalibration,
    R: int | None,
    rng: np.random.Generator,
    n_shots: int = 2000,
    set_id: int = 0,
) -> DatasetRecord:
    """Simulate one batch of ``R`` repetitions and count clicks.

    ``calib`` is what gets recorded; the batch itself runs with a drifted copy
    when ``config.calib_jitter > 0``. ``R=None`` stores the click probability
    exactly (to 2**-53) instead of sampling.
    """
    z, _ = mc_expectation_z(settings, config, n_shots, rng)
    actual = jittered_calibration(calib, config.calib_jitter, rng)
    p = float(click_probability(z, actual))
    if not 0.0 <= p <= 1.0:
        log.warning("click probability %r outside [0, 1]; clamped", p)
        p = min(max(p, 0.0), 1.0)
    if R is None:
        R_eff, r = EXACT_R, int(round(p * EXACT_R))
    else:
        if R < 1:
            raise InvalidArgumentError("R must be >= 1")
        R_eff, r = int(R), int(rng.binomial(int(R), p))
    return DatasetRecord(settings, calib, R_eff, r, set_id=set_id, truth_fB=settings.f_B)


@dataclass(frozen=True)
class DatasetPlan:
    n_frequency_sets: int
    taus_per_set: int = 32
    f_range: tuple[float, float] = (0.5, 3.0)
    tau_range: tuple[float, float] = (0.05, 5.0)
    phi_range: tuple[float, float] = (0.0, 2 * math.pi)
    R: int | None = 5_000_000
    pi0: float = 0.03
    pi1: float = 0.02
    calib_spread: float = 0.0
    n_shots: int = 2000

    def __post_init__(self):
        for name in ("f_range", "tau_range", "phi_range"):
            lo, hi = getattr(self, name)
            if not (math.isfinite(lo) and math.isfinite(hi) and hi > lo):
                raise InvalidArgumentError(f"{name} must be a non-empty interval, got {(lo, hi)}")
        if self.tau_range[0] < 0:
            raise InvalidArgumentError("tau_range must be non-negative")
        if self.n_frequency_sets < 1 or self.taus_per_set < 1:
            raise InvalidArgumentError("plan must contain at least one set and one delay")


def _set_records(plan: DatasetPlan, config: NoiseConfig, seed_seq: np.random.SeedSequence, set_id: int):
    rng = np.random.default_rng(seed_seq)
    f_B = float(rng.uniform(*plan.f_range))
    phi = float(rng.uniform(*plan.phi_range))
    taus = np.sort(rng.uniform(*plan.tau_range, size=plan.taus_per_set))
    order = rng.permutation(plan.taus_per_set)
    out = []
    for k in order:
        calib = ReadoutCalibration(plan.pi0, plan.pi1)
        if plan.calib_spread > 0:
            calib = jittered_calibration(calib, plan.calib_spread, rng)
        settings = PulseSettings(float(taus[k]), phi, f_B)
        out.append(simulate_batch(settings, config, calib, plan.R, rng, plan.n_shots, set_id))
    return out


def generate_dataset(plan: DatasetPlan, config: NoiseConfig, seed: int | np.random.SeedSequence) -> list[DatasetRecord]:
    """Synthesize ``n_frequency_sets`` groups of ``taus_per_set`` batches.

    Each set draws one frequency and phase; delays are acquired in random
    order. Set ``i`` uses its own stream spawned from ``seed``, so any subset
    of sets can be regenerated independently.
    """
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    records: list[DatasetRecord] = []
    for set_id, child in enumerate(root.spawn(plan.n_frequency_sets)):
        records.extend(_set_records(plan, config, child, set_id))
    return records


@dataclass(frozen=True)
class PrepChannelEstimate:
    epsilon: float
    gamma: float
    epsilon_stderr: float
    gamma_stderr: float

    def __iter__(self):
        return iter((self.epsilon, self.gamma))


def prep_channel_check(a_p_t_p: float, n_shots: int, rng: np.random.Generator, n_slices: int = 64) -> PrepChannelEstimate:
    """Monte-Carlo the white-noise ``sigma_x`` preparation segment.

    ``beta`` is sampled as independent Gaussian slices of total variance
    ``A_p T_p``; returns the |1> population ``eps`` and ``Gamma = <cos 2 int beta>``.
    """
    if not (a_p_t_p >= 0 and math.isfinite(a_p_t_p)):
        raise InvalidArgumentError("A_p T_p must be finite and non-negative")
    slices = math.sqrt(a_p_t_p / n_slices) * rng.standard_normal((n_shots, n_slices))
    phase = slices.sum(axis=1)
    u = _prep_kicks(phase)
    pop1 = np.abs(u[:, 1, 0]) ** 2
    gam = np.cos(2 * phase)
    root_n = math.sqrt(n_shots)
    return PrepChannelEstimate(
        float(pop1.mean()), float(gam.mean()), float(pop1.std(ddof=1) / root_n), float(gam.std(ddof=1) / root_n)
    )


def epsilon_from_gamma(gamma):
    """Bit-flip probability of the preparation channel: ``eps = (1 - Gamma) / 2``."""
    return 0.5 * (1 - np.asarray(gamma))


class AnalyticProvider:
    """Likelihood provider with the simulator's exact closed-form physics (impulse pulses only)."""

    def __init__(self, config: NoiseConfig):
        if config.pulse_width > 0:
            raise InvalidArgumentError("AnalyticProvider needs impulse pulses")
        self.config = config

    def predict_grid(self, tau, phi, calib, chi, f_grid):
        f_grid = np.asarray(f_grid, dtype=float)
        theta = 2 * math.pi * f_grid * tau + phi
        z = analytic_expectation_z(None, self.config, tau=tau, theta=theta)
        return click_probability(np.broadcast_to(z, f_grid.shape), calib)


# --- JSON-Lines dataset format -------------------------------------------------

DATASET_KEYS = ("tau_us", "phi_rad", "fB_MHz", "chi", "pi0", "pi1", "R", "r", "p_cl", "set_id", "truth_fB_MHz")


def record_to_dict(rec: DatasetRecord) -> dict:
    s = rec.settings
    return {
        "tau_us": s.tau,
        "phi_rad": s.phi,
        "fB_MHz": s.f_B,
        "chi": list(s.chi),
        "pi0": rec.calib.pi0,
        "pi1": rec.calib.pi1,
        "R": rec.R,
        "r": rec.r,
        "p_cl": rec.p_cl,
        "set_id": rec.set_id,
        "truth_fB_MHz": rec.truth_fB,
    }


def record_from_dict(d: dict) -> DatasetRecord:
    missing = [k for k in DATASET_KEYS if k not in d]
    if missing:
        raise InvalidArgumentError(f"dataset record missing keys {missing}")
    rec = DatasetRecord(
        PulseSettings(float(d["tau_us"]), float(d["phi_rad"]), float(d["fB_MHz"]), tuple(d["chi"])),
        ReadoutCalibration(float(d["pi0"]), float(d["pi1"])),
        int(d["R"]),
        int(d["r"]),
        set_id=int(d["set_id"]),
        truth_fB=float(d["truth_fB_MHz"]),
    )
    if abs(rec.p_cl - float(d["p_cl"])) > 1e-15:
        raise InvalidArgumentError("p_cl inconsistent with r/R")
    return rec


def write_dataset(records: Iterable[DatasetRecord], path) -> None:
    from .jsonfmt import dumps

    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(dumps(record_to_dict(rec)))
            fh.write("\n")


def read_dataset(path) -> list[DatasetRecord]:
    import json

    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(record_from_dict(json.loads(line)))
            except (ValueError, TypeError) as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
    return out


def group_by_set(records: Sequence[DatasetRecord]) -> dict[int, list[DatasetRecord]]:
    groups: dict[int, list[DatasetRecord]] = {}
    for rec in records:
        groups.setdefault(rec.set_id, []).append(rec)
    return dict(sorted(groups.items()))
